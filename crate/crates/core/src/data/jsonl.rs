use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::record::VqaRecord;
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn save_dataset(records: &[VqaRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(records, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(records: &[VqaRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSONL dataset; blank lines are skipped, anything else that fails
/// to parse is reported with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<VqaRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let record: VqaRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate(None, None).map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}
