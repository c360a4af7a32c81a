//! Plain `key = value` configuration text with optional `[section]`
//! headers. Blank lines and lines starting with `#` are ignored. Keys
//! before the first header belong to the root section, named `""`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    Value {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed configuration, keyed by section then key; both sorted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut doc = ConfigDoc::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: &str| ConfigError::Syntax {
                line: i + 1,
                message: message.to_string(),
            };
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header"))?
                    .trim();
                if name.is_empty() || name.contains(['.', '=']) {
                    return Err(syntax("bad section name"));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected key = value"))?;
            let k = k.trim();
            if k.is_empty() || k.contains('.') {
                return Err(syntax("bad key"));
            }
            let entries = doc.sections.entry(section.clone()).or_default();
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(syntax(&format!("duplicate key {k:?}")));
            }
        }
        Ok(doc)
    }

    /// Applies an override of the form `section.key=value` or `key=value`.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            ConfigError::Invalid(format!("override {assignment:?} is not key=value"))
        })?;
        let (section, key) = path.trim().rsplit_once('.').unwrap_or(("", path.trim()));
        if key.is_empty() {
            return Err(ConfigError::Invalid(format!(
                "override {assignment:?} has no key"
            )));
        }
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn section(&self, section: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Parses `section.key` if present.
    pub fn value<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.get(section, key) else {
            return Ok(None);
        };
        raw.parse()
            .map(Some)
            .map_err(|e: T::Err| ConfigError::Value {
                key: qualified(section, key),
                value: raw.to_string(),
                message: e.to_string(),
            })
    }

    /// Fails on any key of `section` not in `known`.
    pub fn check_keys(&self, section: &str, known: &[&str]) -> Result<(), ConfigError> {
        if let Some(entries) = self.sections.get(section) {
            if let Some(k) = entries.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(ConfigError::UnknownKey(qualified(section, k)));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal document.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(root) = self.sections.get("") {
            for (k, v) in root {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        for (name, entries) in self.sections.iter().filter(|(n, _)| !n.is_empty()) {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}
