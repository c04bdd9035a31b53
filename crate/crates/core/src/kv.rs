//! Plain-text `key = value` configuration, optionally grouped under `[kind name]` headers.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config line {line}: {message}")]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Section {
    /// Header words, e.g. `["node", "visualizer"]`; empty for the leading unnamed section.
    pub header: Vec<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

pub fn parse(text: &str) -> Result<Vec<Section>, KvError> {
    let mut sections = vec![Section::default()];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.split('#').next().unwrap_or_default().trim();
        if s.is_empty() {
            continue;
        }
        if let Some(inner) = s.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| KvError { line, message: "unterminated section header".into() })?;
            let header: Vec<String> = inner.split_whitespace().map(str::to_string).collect();
            if header.is_empty() {
                return Err(KvError { line, message: "empty section header".into() });
            }
            sections.push(Section { header, line, entries: Vec::new() });
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| KvError { line, message: format!("expected `key = value`, got `{s}`") })?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(KvError { line, message: "empty key".into() });
        }
        let section = sections.last_mut().expect("non-empty");
        if section.get(&key).is_some() {
            return Err(KvError { line, message: format!("duplicate key `{key}`") });
        }
        section.entries.push(Entry { line, key, value: v.trim().to_string() });
    }
    Ok(sections)
}

/// Parses an entry value, attributing failures to its line.
pub fn value<T: std::str::FromStr>(e: &Entry) -> Result<T, KvError> {
    e.value.parse().map_err(|_| KvError { line: e.line, message: format!("invalid value `{}` for `{}`", e.value, e.key) })
}

/// Splits a comma-separated list, dropping empty items.
pub fn list(e: &Entry) -> Vec<String> {
    e.value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}
