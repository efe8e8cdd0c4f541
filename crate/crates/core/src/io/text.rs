use std::path::Path;

use crate::data::{DataKind, Dataset};
use crate::error::{Error, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{}:{line}", path.display()),
        message: message.into(),
    }
}

/// Binary rows, one comma-separated sample per line.
pub fn parse_debd(text: &str, path: &Path) -> Result<Dataset> {
    let mut cols = None;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let n = i + 1;
        let mut count = 0;
        for (j, tok) in line.split(',').enumerate() {
            match tok.trim() {
                "0" => values.push(0),
                "1" => values.push(1),
                other => {
                    return Err(parse_error(
                        path,
                        n,
                        format!("column {}: expected 0 or 1, found '{other}'", j + 1),
                    ))
                }
            }
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => return Err(parse_error(path, n, format!("expected {c} values, found {count}"))),
            _ => {}
        }
    }
    let cols = cols.ok_or_else(|| parse_error(path, 0, "no samples"))?;
    Dataset::new(DataKind::BinaryTabular, cols, values, None)
}

pub fn load_debd(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_debd(&text, path)
}

/// One non-negative integer label per line.
pub fn load_labels(path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse::<u32>()
                .map_err(|_| parse_error(path, i + 1, format!("'{line}' is not a label")))?,
        );
    }
    if out.is_empty() {
        return Err(parse_error(path, 0, "no labels"));
    }
    Ok(out)
}

pub fn debd_text(data: &Dataset) -> String {
    let mut s = String::with_capacity(data.values().len() * 2);
    for i in 0..data.rows() {
        let row: Vec<&str> = data.row(i).iter().map(|&v| if v == 0 { "0" } else { "1" }).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn labels_text(labels: &[u32]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}
