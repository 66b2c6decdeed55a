//! Line-oriented `key=value` configuration.
//!
//! ```text
//! # comment
//! seed = 7
//! exp2.rho_grid = 0.9, 0.95, 0.99
//! ```
//!
//! Keys are namespaced by experiment. Values are parsed lazily by the
//! experiment that owns the namespace; keys nobody read are reported so
//! typos do not silently fall back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key=value, found {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "line {}: invalid key {key:?}",
                    lineno + 1
                )));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(Config {
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect()
            })
            .transpose()
    }

    /// Overwrites `slot` when `key` is present.
    pub fn read_into<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn read_list_into<T: FromStr>(&self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get_list(key)? {
            if v.is_empty() {
                return Err(Error::Config(format!("{key}: empty list")));
            }
            *slot = v;
        }
        Ok(())
    }

    /// Fails on any key under `prefix` that was never read.
    pub fn reject_unused(&self, prefix: &str) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix) && !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("{key}={v}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_namespaced_keys_lists_and_comments() {
        let cfg = Config::parse(
            "# header\nseed = 7\n\nexp2.rho_grid=0.9,0.95, 0.99  # trailing\nexp1.flag=true\n",
        )
        .unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(
            cfg.get_list::<f64>("exp2.rho_grid").unwrap(),
            Some(vec![0.9, 0.95, 0.99])
        );
        assert_eq!(cfg.get::<bool>("exp1.flag").unwrap(), Some(true));
        assert_eq!(cfg.get::<u64>("missing").unwrap(), None);
        cfg.reject_unused("exp").unwrap();
    }

    #[test]
    fn errors_are_reported() {
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("a=1\na=2").is_err());
        assert!(Config::parse("bad key=1").is_err());
        let cfg = Config::parse("exp1.n=abc\nexp1.typo=1").unwrap();
        assert!(cfg.get::<usize>("exp1.n").is_err());
        assert!(cfg.reject_unused("exp1.").is_err());
        cfg.reject_unused("exp2.").unwrap();
    }

    #[test]
    fn read_into_keeps_defaults() {
        let cfg = Config::parse("x.a=3").unwrap();
        let (mut a, mut b) = (1usize, 2usize);
        cfg.read_into("x.a", &mut a).unwrap();
        cfg.read_into("x.b", &mut b).unwrap();
        assert_eq!((a, b), (3, 2));
    }
}
