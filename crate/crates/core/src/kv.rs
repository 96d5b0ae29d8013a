//! Flat `key = value` text documents with `#` comments.
//!
//! Used for network/training configs, scene specs and the checkpoint preamble.
//! Keys are unique; order is preserved for writing.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
            doc.entries.push((k.to_string(), v.to_string()));
        }
        Ok(doc)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parse `key` if present.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::config(format!("bad value for `{key}` ({v:?}): {e}")))
            })
            .transpose()
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parse_opt(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    /// Error on any key not accepted by `known`.
    pub fn reject_unknown(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        match self.keys().find(|k| !known(k)) {
            Some(k) => Err(Error::config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

pub(crate) fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| Error::config(format!("bad list entry for `{key}` ({p:?}): {e}")))
        })
        .collect()
}
