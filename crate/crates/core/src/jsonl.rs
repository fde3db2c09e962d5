//! JSONL reading and writing with line-numbered errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Line {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonlError::Line {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize, JsonlError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    let mut count = 0;
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| JsonlError::Line {
            path: path.display().to_string(),
            line: count + 1,
            source,
        })?;
        writer.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        writer.write_all(b"\n").map_err(|e| io_err(path, e))?;
        count += 1;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: u32,
    }

    #[test]
    fn round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![Row { id: 1 }, Row { id: 2 }];
        assert_eq!(write_jsonl(&path, &rows).unwrap(), 2);
        let back: Vec<Row> = read_jsonl(&path).unwrap();
        assert_eq!(back, rows);

        std::fs::write(&path, "{\"id\":1}\nnot json\n").unwrap();
        match read_jsonl::<Row>(&path) {
            Err(JsonlError::Line { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }
    }
}
