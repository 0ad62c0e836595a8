//! Flat `key = value` text used for configs, scene specs and manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value, or `default` when the key is absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    /// Entries whose key starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> KvMap {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        KvMap { entries }
    }

    /// Adds every entry of `other`, failing on a key present in both.
    pub fn merge(&mut self, other: &KvMap) -> Result<()> {
        for (k, v) in &other.entries {
            if self.entries.insert(k.clone(), v.clone()).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "# comment\nrun.method = swiva\n\n  run.seed=7  \n";
        let kv = KvMap::parse(text).unwrap();
        assert_eq!(kv.get_str("run.method"), Some("swiva"));
        assert_eq!(kv.get_or("run.seed", 0u64).unwrap(), 7);
        assert_eq!(kv.get_or("run.k", 5usize).unwrap(), 5);
        assert_eq!(KvMap::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn errors() {
        assert!(KvMap::parse("novalue").is_err());
        assert!(KvMap::parse("a=1\na=2").is_err());
        assert!(KvMap::parse(" = 3").is_err());
        let kv = KvMap::parse("a = x").unwrap();
        assert!(kv.get_or("a", 1u32).is_err());
        assert!(kv.reject_unknown(&["b"]).is_err());
        assert!(kv.reject_unknown(&["a"]).is_ok());
    }

    #[test]
    fn subset_and_merge() {
        let kv = KvMap::parse("scene.seed = 1\nrun.seed = 2\nscene.rt60 = 0.5").unwrap();
        let scene = kv.subset("scene.");
        assert_eq!(scene.len(), 2);
        assert_eq!(scene.get_str("run.seed"), None);
        let mut run = kv.subset("run.");
        run.merge(&scene).unwrap();
        assert_eq!(run, kv);
        assert!(run.merge(&scene).is_err());
    }
}
