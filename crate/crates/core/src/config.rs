//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored; a trailing `# ...`
//! after a value is a comment. Keys are case-sensitive and may appear once.
//! Command-line flags override file values through [`KvConfig::set`].

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{ReclError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ReclError::Parse {
                    line: i + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ReclError::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ReclError::Parse {
                    line: i + 1,
                    message: format!("duplicate key {key}"),
                });
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Sets `key` when `value` is present, for flag overrides.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| ReclError::invalid(format!("config key {key}: {e}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &'static str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or(ReclError::MissingInput(key))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ReclError::invalid(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
