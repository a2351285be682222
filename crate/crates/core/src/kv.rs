//! Plain-text `key=value` files: one pair per line, `#` comments, blank
//! lines ignored, whitespace around keys and values trimmed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
    what: &'static str,
}

impl KvMap {
    pub fn parse(what: &'static str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(what, format!("line {}: expected key=value", n + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::format(what, format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(Self { entries, what })
    }

    /// Removes and parses `key`, keeping `default` when absent.
    pub fn take<V: FromStr>(&mut self, key: &str, default: V) -> Result<V>
    where
        V::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::format(self.what, format!("{key}={v}: {e}"))),
        }
    }

    /// Comma-separated list.
    pub fn take_list<V: FromStr>(&mut self, key: &str, default: Vec<V>) -> Result<Vec<V>>
    where
        V::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|e| Error::format(self.what, format!("{key}={v}: {e}")))
                })
                .collect(),
        }
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Errors on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::format(self.what, format!("unknown key {k}"))),
        }
    }
}

pub fn join<V: Display>(items: &[V]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
