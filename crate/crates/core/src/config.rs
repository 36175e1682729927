//! Plain `key = value` configuration text.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value
//! key     := [A-Za-z0-9_.-]+
//! value   := any* (surrounding whitespace trimmed, may be empty)
//! ```
//!
//! Keys are unique. Rendering emits entries in insertion order, so a parsed
//! file renders back to the same entries.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{bail, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Format, "line {}: expected `key = value`, got {:?}", lineno + 1, line);
            };
            let key = key.trim();
            if !valid_key(key) {
                bail!(Format, "line {}: invalid key {:?}", lineno + 1, key);
            }
            if kv.get(key).is_some() {
                bail!(Format, "line {}: duplicate key {:?}", lineno + 1, key);
            }
            kv.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces. Values are single-line; newlines are rejected.
    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        let value = value.to_string();
        if !valid_key(key) {
            bail!(Format, "invalid key {:?}", key);
        }
        if value.contains('\n') || value.contains('\r') || value.trim() != value {
            bail!(Format, "value for {key:?} must be a single trimmed line");
        }
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries of `other` override entries of `self`.
    pub fn merge(&mut self, other: &KeyValues) -> Result<()> {
        for (k, v) in other.iter() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Format(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match self.parsed(key)? {
            Some(v) => Ok(v),
            None => bail!(Format, "missing key {key:?}"),
        }
    }

    /// Comma-separated list; the empty string is the empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse::<T>()
                    .map_err(|e| Error::Format(format!("{key} = {v:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

/// Comma-joined list value.
pub fn join_list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
