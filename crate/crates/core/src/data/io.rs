use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::record::Record;
use crate::error::{Error, Result};

/// One JSON value per line, each line terminated by `\n`.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::contract(format!("cannot encode record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSON Lines; errors carry `path` and the 1-based line number.
pub fn from_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    fs::write(path, to_jsonl(items)?).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text, path)
}

pub fn save_corpus(records: &[Record], path: &Path) -> Result<()> {
    write_jsonl(path, records)
}

/// Loads and validates a corpus; an invalid record is reported at its line.
pub fn load_corpus(path: &Path) -> Result<Vec<Record>> {
    let records: Vec<Record> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate(None, None).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
    }
    Ok(records)
}
