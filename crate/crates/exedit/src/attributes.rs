//! CelebA annotation files.
//!
//! The attribute file optionally starts with an image count, followed by a
//! header of attribute names and one row per image: `id v1 … vK` with each
//! value `1` or `-1`. The partition file has rows `id k` with `k` in
//! `0` (train), `1` (val), `2` (test).

use std::collections::HashMap;
use std::path::Path;

use exedit_core::data::{AttributeVector, SplitSpec};

use crate::error::{Error, Result};

/// Labels for a configured attribute subset, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub labels: Vec<AttributeVector>,
}

impl AttributeTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_map(&self) -> HashMap<String, AttributeVector> {
        self.ids.iter().cloned().zip(self.labels.iter().cloned()).collect()
    }
}

pub fn parse_attribute_file(path: &Path, selected: Option<&[String]>) -> Result<AttributeTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attribute_text(&text, selected, path)
}

/// Parses annotation text; `origin` only labels error messages. With
/// `selected`, keeps those columns in the given order.
pub fn parse_attribute_text(text: &str, selected: Option<&[String]>, origin: &Path) -> Result<AttributeTable> {
    let parse_err = |row: usize, message: String| Error::Parse { path: origin.to_path_buf(), row, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (mut row, mut first) = lines.next().ok_or_else(|| parse_err(1, "empty attribute file".into()))?;
    let declared_count = first.trim().parse::<usize>().ok();
    if declared_count.is_some() {
        (row, first) = lines.next().ok_or_else(|| parse_err(row + 2, "missing attribute header".into()))?;
    }
    let header: Vec<String> = first.split_whitespace().map(str::to_string).collect();
    if header.is_empty() {
        return Err(parse_err(row + 1, "empty attribute header".into()));
    }
    let columns: Vec<usize> = match selected {
        None => (0..header.len()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                header.iter().position(|h| h == n).ok_or_else(|| {
                    Error::Config(format!("attribute `{n}` is not declared in {}", origin.display()))
                })
            })
            .collect::<Result<_>>()?,
    };
    let names = columns.iter().map(|&c| header[c].clone()).collect();
    let mut table = AttributeTable { names, ids: Vec::new(), labels: Vec::new() };
    for (i, line) in lines {
        let row = i + 1;
        let mut fields = line.split_whitespace();
        let id = fields.next().expect("nonblank line").to_string();
        let raw: Vec<&str> = fields.collect();
        if raw.len() != header.len() {
            return Err(parse_err(row, format!("`{id}` has {} values, header declares {}", raw.len(), header.len())));
        }
        let mut values = Vec::with_capacity(columns.len());
        for &c in &columns {
            values.push(match raw[c] {
                "1" | "+1" => 1,
                "-1" => 0,
                other => return Err(parse_err(row, format!("value `{other}` for `{}` is not +1 or -1", header[c]))),
            });
        }
        table.ids.push(id);
        table.labels.push(AttributeVector::new(values)?);
    }
    if let Some(n) = declared_count {
        if n != table.len() {
            return Err(parse_err(1, format!("declares {n} images but lists {}", table.len())));
        }
    }
    Ok(table)
}

/// Reads the official partition file into a split, preserving file order.
pub fn parse_partition_file(path: &Path) -> Result<SplitSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut split = SplitSpec::default();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[..] {
            [] => continue,
            [id, "0"] => split.train.push(id.to_string()),
            [id, "1"] => split.val.push(id.to_string()),
            [id, "2"] => split.test.push(id.to_string()),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message: format!("expected `id 0|1|2`, got `{}`", line.trim()),
                })
            }
        }
    }
    Ok(split)
}
