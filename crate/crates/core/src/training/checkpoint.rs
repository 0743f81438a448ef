use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Model, ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::textprep::{Preprocessor, StopwordList, Truncation, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATXC";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_BLOCK: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {0} is not supported (expected {CHECKPOINT_VERSION})")]
    VersionUnsupported(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::UnexpectedEof => CheckpointError::CorruptCheckpoint("truncated file".into()),
            io::ErrorKind::InvalidData => CheckpointError::CorruptCheckpoint(e.to_string()),
            _ => CheckpointError::Io(e),
        }
    }
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptCheckpoint(msg.into())
}

/// A trained model together with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub preprocessor: Preprocessor,
    /// Epoch the parameters were captured after; 0 means untrained.
    pub epoch: usize,
}

impl ModelCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        save_checkpoint(self, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        load_checkpoint(bytes)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessHeader {
    max_len: usize,
    truncation: Truncation,
    max_vocab: usize,
    stopwords: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    epoch: usize,
    model: ModelConfig,
    preprocess: PreprocessHeader,
}

fn write_block<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block<R: Read>(r: &mut R, what: &str) -> Result<String, CheckpointError> {
    let len = read_u64(r)?;
    if len > MAX_BLOCK {
        return Err(corrupt(format!("{what} block length {len} is implausible")));
    }
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf)?;
    if buf.len() as u64 != len {
        return Err(corrupt("truncated file"));
    }
    String::from_utf8(buf).map_err(|_| corrupt(format!("{what} block is not UTF-8")))
}

/// Layout, little-endian throughout: magic `ATXC`, u32 version, u64-length
/// JSON header, u64-length vocabulary TSV, u64 tensor count, tensors.
pub fn save_checkpoint<W: Write>(ckpt: &ModelCheckpoint, mut w: W) -> io::Result<()> {
    let pre = &ckpt.preprocessor;
    let header = Header {
        epoch: ckpt.epoch,
        model: ckpt.model.config().clone(),
        preprocess: PreprocessHeader {
            max_len: pre.max_len,
            truncation: pre.truncation,
            max_vocab: pre.vocabulary.max_size(),
            stopwords: pre.stopwords.iter().map(str::to_string).collect(),
        },
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_block(&mut w, &json)?;
    write_block(&mut w, pre.vocabulary.to_tsv().as_bytes())?;
    let tensors = ckpt.model.params().flatten();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        t.write_to(&mut w)?;
    }
    w.flush()
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<ModelCheckpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }
    let header: Header = serde_json::from_str(&read_block(&mut r, "header")?)
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let p = header.preprocess;
    let vocabulary = Vocabulary::parse_tsv(&read_block(&mut r, "vocabulary")?, p.max_vocab)
        .map_err(|e| corrupt(format!("vocabulary: {e}")))?;
    let stopwords = StopwordList::from_words(&p.stopwords).map_err(|e| corrupt(format!("stopwords: {e}")))?;
    if header.model.vocab_size != vocabulary.len() {
        return Err(corrupt(format!(
            "config declares {} vocabulary tokens, file has {}",
            header.model.vocab_size,
            vocabulary.len()
        )));
    }
    if header.model.max_len != p.max_len {
        return Err(corrupt("model and preprocessing disagree on max_len"));
    }
    header.model.validate().map_err(|e| corrupt(e.to_string()))?;

    let expected = ModelParams::expected_shapes(&header.model);
    let count = read_u64(&mut r)?;
    if count != expected.len() as u64 {
        return Err(corrupt(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let t = Tensor::read_from(&mut r)?;
        if t.shape() != shape.as_slice() {
            return Err(corrupt(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
        }
        tensors.push(t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt("trailing bytes after tensors"));
    }
    let params = ModelParams::from_tensors(&header.model, tensors).map_err(|e| corrupt(e.to_string()))?;
    let model = Model::new(header.model, params).map_err(|e| corrupt(e.to_string()))?;
    Ok(ModelCheckpoint {
        model,
        preprocessor: Preprocessor {
            stopwords,
            vocabulary,
            max_len: p.max_len,
            truncation: p.truncation,
        },
        epoch: header.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::textprep::fit_vocabulary;

    fn sample(arch: Architecture) -> ModelCheckpoint {
        let vocabulary = fit_vocabulary(&["engine failure landing", "engine fire"], 50).unwrap();
        let config = ModelConfig {
            embedding_dim: 3,
            hidden_units: 2,
            head_units: 4,
            conv_filters: 2,
            conv_kernel: 2,
            max_len: 5,
            ..ModelConfig::new(arch, vocabulary.len())
        };
        ModelCheckpoint {
            model: Model::init(config, 11).unwrap(),
            preprocessor: Preprocessor {
                stopwords: StopwordList::default(),
                vocabulary,
                max_len: 5,
                truncation: Truncation::Tail,
            },
            epoch: 4,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in Architecture::ALL {
            let ck = sample(arch);
            let bytes = ck.to_bytes();
            assert_eq!(&bytes[..4], b"ATXC");
            let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            for (a, b) in back.model.params().flatten().iter().zip(ck.model.params().flatten()) {
                let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample(Architecture::Lstm).to_bytes();
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = ModelCheckpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::CorruptCheckpoint(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn version_and_magic() {
        let mut bytes = sample(Architecture::Cnn).to_bytes();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes),
            Err(CheckpointError::VersionUnsupported(9))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes),
            Err(CheckpointError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn mismatched_shape_is_corrupt() {
        // Re-save a CNN with a different kernel under the original header.
        let ck = sample(Architecture::Cnn);
        let mut other = ck.clone();
        let mut cfg = ck.config().clone();
        cfg.conv_kernel = 3;
        other.model = Model::init(cfg, 1).unwrap();
        let good = ck.to_bytes();
        let bad = other.to_bytes();
        let header_end = 8 + 8 + u64::from_le_bytes(good[8..16].try_into().unwrap()) as usize;
        let bad_header_end = 8 + 8 + u64::from_le_bytes(bad[8..16].try_into().unwrap()) as usize;
        let mut spliced = good[..header_end].to_vec();
        spliced.extend_from_slice(&bad[bad_header_end..]);
        let err = ModelCheckpoint::from_bytes(&spliced).unwrap_err();
        assert!(err.to_string().contains("cnn.filters"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample(Architecture::Srnn).to_bytes();
        bytes.push(0);
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes),
            Err(CheckpointError::CorruptCheckpoint(_))
        ));
    }
}
