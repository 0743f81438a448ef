use std::io::{self, BufRead, Write};

use super::EpochRecord;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

/// Floats use the shortest representation that round-trips.
pub fn write_history_csv<W: Write>(records: &[EpochRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_accuracy, r.validation_loss, r.validation_accuracy
        )?;
    }
    Ok(())
}

pub fn read_history_csv<R: BufRead>(r: R) -> io::Result<Vec<EpochRecord>> {
    let bad = |line: usize, msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"));
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == HISTORY_HEADER => {}
        _ => return Err(bad(1, "missing history header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 5 {
            return Err(bad(i + 2, "expected 5 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(i + 2, "bad epoch"))?,
            train_loss: num(f[1])?,
            train_accuracy: num(f[2])?,
            validation_loss: num(f[3])?,
            validation_accuracy: num(f[4])?,
        });
    }
    Ok(out)
}
