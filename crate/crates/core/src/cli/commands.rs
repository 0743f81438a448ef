use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EvaluateArgs, PredictArgs, PrepareArgs, RunManifest, TrainArgs};
use crate::corpus::{
    annotate_all, clean_records, ingest_records, read_labeled_csv, split_dataset, split_dataset_stratified,
    write_labeled_csv, LabeledRecord, OperatorClass, OperatorMapping, SplitDataset,
};
use crate::evaluation::{evaluate_model, export_reports};
use crate::models::ModelConfig;
use crate::textprep::{cleanse_text, fit_vocabulary, word_count_stats, Preprocessor, StopwordList, Truncation, Vocabulary};
use crate::training::{
    load_checkpoint, read_history_csv, save_checkpoint, write_history_csv, TrainConfig, Trainer,
};

/// Preprocessing settings stored next to the prepared data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PreprocessSettings {
    max_len: usize,
    truncation: Truncation,
    max_vocab: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOutcome {
    pub records: usize,
    pub unmapped: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn class_counts(records: &[LabeledRecord]) -> BTreeMap<&'static str, usize> {
    let mut m: BTreeMap<&'static str, usize> = OperatorClass::ALL.iter().map(|c| (c.name(), 0)).collect();
    for r in records {
        *m.get_mut(r.class.name()).expect("all classes present") += 1;
    }
    m
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<PrepareOutcome> {
    if args.max_len == 0 {
        bail!("--max-len must be at least 1");
    }
    if args.max_vocab == 0 {
        bail!("--max-vocab must be at least 1");
    }
    let input = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let raw = ingest_records(input.as_slice(), &args.operator_column, &args.summary_column)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let read = raw.len();
    let cleaned = clean_records(raw);

    let mut manifest = RunManifest::new(
        "prepare",
        args.seed,
        json!({
            "input": args.input,
            "mapping": args.mapping,
            "stopwords": args.stopwords,
            "operator_column": args.operator_column,
            "summary_column": args.summary_column,
            "max_len": args.max_len,
            "max_vocab": args.max_vocab,
            "truncate": args.truncate,
            "stratify": args.stratify,
        }),
    )?;
    manifest.add_input_bytes(&args.input.display().to_string(), &input);

    let mapping = if args.mapping.as_os_str() == "builtin" {
        OperatorMapping::starter()
    } else {
        manifest.add_input(&args.mapping)?;
        OperatorMapping::parse_tsv(&read_text(&args.mapping)?)
            .with_context(|| format!("parsing {}", args.mapping.display()))?
    };
    let stopwords = match &args.stopwords {
        Some(p) => {
            manifest.add_input(p)?;
            StopwordList::parse(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => StopwordList::default(),
    };

    let (labeled, audit) = annotate_all(&cleaned.records, &mapping);
    let split = if args.stratify {
        split_dataset_stratified(&labeled, args.seed)?
    } else {
        split_dataset(&labeled, args.seed)?
    };
    let cleansed_train: Vec<String> = split.train().iter().map(|r| cleanse_text(&r.summary, &stopwords)).collect();
    let vocabulary = fit_vocabulary(&cleansed_train, args.max_vocab)?;
    let cleansed_all: Vec<String> = labeled.iter().map(|r| cleanse_text(&r.summary, &stopwords)).collect();
    let stats = word_count_stats(&cleansed_all)?;

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    manifest.outputs = [
        "train.csv",
        "validation.csv",
        "test.csv",
        "split.json",
        "vocab.tsv",
        "stopwords.txt",
        "preprocess.json",
        "stats.json",
        "unmapped.csv",
        "manifest.json",
    ]
    .map(String::from)
    .to_vec();
    manifest.write(out)?;

    let (train, validation) = (split.train(), split.validation());
    let test = split.test();
    for (name, part) in [("train.csv", train), ("validation.csv", validation), ("test.csv", test)] {
        write_with(&out.join(name), |w| write_labeled_csv(w, part))?;
    }
    write_json(
        &out.join("split.json"),
        &json!({
            "seed": args.seed,
            "stratified": args.stratify,
            "records_read": read,
            "dropped_blank": cleaned.dropped_blank,
            "dropped_duplicate": cleaned.dropped_duplicate,
            "unmapped_records": audit.total(),
            "labeled": labeled.len(),
            "sizes": {"train": train.len(), "validation": validation.len(), "test": test.len()},
            "classes": {
                "train": class_counts(train),
                "validation": class_counts(validation),
                "test": class_counts(test),
            },
        }),
    )?;
    write_with(&out.join("vocab.tsv"), |w| vocabulary.write_tsv(w))?;
    write_with(&out.join("stopwords.txt"), |w| w.write_all(stopwords.to_text().as_bytes()))?;
    write_json(
        &out.join("preprocess.json"),
        &PreprocessSettings {
            max_len: args.max_len,
            truncation: args.truncate,
            max_vocab: args.max_vocab,
        },
    )?;
    write_json(&out.join("stats.json"), &stats)?;
    write_with(&out.join("unmapped.csv"), |w| audit.write_csv(w))?;

    eprintln!(
        "prepared {} records ({} train / {} validation / {} test), {} unmapped, vocabulary {}",
        labeled.len(),
        train.len(),
        validation.len(),
        test.len(),
        audit.total(),
        vocabulary.len()
    );
    if !audit.is_empty() {
        eprintln!(
            "warning: {} distinct operators matched no mapping pattern; see {}",
            audit.len(),
            out.join("unmapped.csv").display()
        );
    }
    Ok(PrepareOutcome {
        records: labeled.len(),
        unmapped: audit.total(),
    })
}

fn load_preprocessor(data: &Path, manifest: &mut RunManifest) -> Result<Preprocessor> {
    let settings_path = data.join("preprocess.json");
    let settings: PreprocessSettings = serde_json::from_str(&read_text(&settings_path)?)
        .with_context(|| format!("parsing {}", settings_path.display()))?;
    let vocab_path = data.join("vocab.tsv");
    let vocabulary = Vocabulary::parse_tsv(&read_text(&vocab_path)?, settings.max_vocab)
        .with_context(|| format!("parsing {}", vocab_path.display()))?;
    let stop_path = data.join("stopwords.txt");
    let stopwords =
        StopwordList::parse(&read_text(&stop_path)?).with_context(|| format!("parsing {}", stop_path.display()))?;
    for p in [&settings_path, &vocab_path, &stop_path] {
        manifest.add_input(p)?;
    }
    Ok(Preprocessor {
        stopwords,
        vocabulary,
        max_len: settings.max_len,
        truncation: settings.truncation,
    })
}

fn load_split(data: &Path, name: &str, manifest: &mut RunManifest) -> Result<Vec<LabeledRecord>> {
    let path = data.join(format!("{name}.csv"));
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    manifest.add_input_bytes(&path.display().to_string(), &bytes);
    read_labeled_csv(bytes.as_slice()).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let train_config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        optimizer: args.optimizer,
        seed: args.seed,
        select_best_by: args.select_best_by,
        ..TrainConfig::default()
    };
    train_config.validate()?;

    let mut manifest = RunManifest::new("train", args.seed, json!({}))?;
    let preprocessor = load_preprocessor(&args.data, &mut manifest)?;
    let train = load_split(&args.data, "train", &mut manifest)?;
    let validation = load_split(&args.data, "validation", &mut manifest)?;
    let model_config = ModelConfig {
        embedding_dim: args.embedding_dim,
        hidden_units: args.hidden_units,
        head_units: args.head_units,
        max_len: preprocessor.max_len,
        conv_filters: args.filters,
        conv_kernel: args.kernel,
        dropout_rate: args.dropout,
        ..ModelConfig::new(args.arch, preprocessor.vocabulary.len())
    };
    model_config.validate()?;
    manifest.config = json!({"data": args.data, "model": model_config, "training": train_config});
    manifest.outputs = ["model.ckpt", "history.csv", "manifest.json"].map(String::from).to_vec();

    // The test part is never loaded here.
    let split = SplitDataset::from_parts(train, validation, Vec::new(), args.seed);
    let mut trainer = Trainer::new(model_config, train_config, &split, preprocessor)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    manifest.write(&args.out)?;

    for _ in 0..args.epochs {
        let r = trainer.run_epoch()?;
        if !args.quiet {
            eprintln!(
                "epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
                r.epoch, r.train_loss, r.train_accuracy, r.validation_loss, r.validation_accuracy
            );
        }
    }
    let (best, history) = trainer.finish();
    write_with(&args.out.join("model.ckpt"), |w| save_checkpoint(&best, w))?;
    write_with(&args.out.join("history.csv"), |w| write_history_csv(&history, w))?;

    let last = history.last().expect("at least one epoch");
    println!(
        "{}",
        json!({
            "arch": args.arch,
            "epochs": history.len(),
            "best_epoch": best.epoch,
            "train_loss": last.train_loss,
            "train_acc": last.train_accuracy,
            "val_loss": last.validation_loss,
            "val_acc": last.validation_accuracy,
        })
    );
    Ok(())
}

fn open_checkpoint(path: &Path) -> Result<crate::training::ModelCheckpoint> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_checkpoint(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let split = args.split.name();
    let mut manifest = RunManifest::new(
        "evaluate",
        0,
        json!({"checkpoint": args.checkpoint, "data": args.data, "split": split}),
    )?;
    manifest.add_input(&args.checkpoint)?;
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let records = load_split(&args.data, split, &mut manifest)?;
    if records.is_empty() {
        bail!("{split} split in {} is empty", args.data.display());
    }
    let history_path = args.checkpoint.with_file_name("history.csv");
    let history = if history_path.is_file() {
        manifest.add_input(&history_path)?;
        let file = File::open(&history_path).with_context(|| format!("opening {}", history_path.display()))?;
        read_history_csv(BufReader::new(file)).with_context(|| format!("parsing {}", history_path.display()))?
    } else {
        Vec::new()
    };

    let (cm, report) = evaluate_model(&ckpt, &records)?;
    let model = ckpt.config().arch.name();
    manifest.outputs = [
        "report.json",
        "history.csv",
        "per_class_metrics.csv",
        "macro_summary.csv",
        "manifest.json",
    ]
    .map(String::from)
    .to_vec();
    export_reports(&report, &cm, &history, &args.out, model, split)?;
    manifest.write(&args.out)?;

    eprintln!("{cm}");
    println!(
        "{}",
        json!({
            "model": model,
            "split": split,
            "accuracy": report.accuracy,
            "macro_f1": report.macro_avg.f1,
            "weighted_f1": report.weighted.f1,
            "total": report.total,
        })
    );
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let text = match &args.text {
        Some(t) => t.clone(),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("reading standard input")?;
            s
        }
    };
    if ckpt.preprocessor.cleanse(&text).is_empty() {
        eprintln!("warning: nothing left after cleansing; predicting from an all-padding sequence");
    }
    let seq = ckpt.preprocessor.encode(&text);
    let (class, probs) = ckpt.model.predict(&seq)?;
    println!("{}", json!({"class": class.name(), "probs": probs}));
    Ok(())
}
