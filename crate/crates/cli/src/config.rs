//! Flat `key = value` run configuration, merged from an optional file and
//! command-line flags (flags win).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::UsageError;

pub const KEYS: [&str; 11] = [
    "mechanism",
    "n",
    "d",
    "d_p",
    "d_in",
    "heads",
    "seed",
    "reps",
    "epochs",
    "task",
    "out-path",
];

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "DBA_SEED";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("config line {}: expected key = value, got {raw:?}", i + 1)));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| UsageError(format!("config line {}: {}", i + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        if !KEYS.contains(&key) {
            return Err(UsageError(format!("unknown config key {key:?} (known: {})", KEYS.join(", "))));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a flag value if the flag was given.
    pub fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), UsageError> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| UsageError(format!("bad value {v:?} for {key}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list value.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    /// Explicit `seed`, else `DBA_SEED`, else `default`.
    pub fn seed(&self, default: u64) -> Result<u64, UsageError> {
        if let Some(s) = self.get("seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| UsageError(format!("bad {SEED_ENV}={v:?}: {e}"))),
            Err(_) => Ok(default),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

pub fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, UsageError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| UsageError(format!("bad {key} entry {s:?}: {e}"))))
        .collect()
}

/// `"3"` or an inclusive range `"1..10"`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, UsageError> {
    let bad = |e: std::num::ParseIntError| UsageError(format!("bad seed spec {v:?}: {e}"));
    match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().trim_start_matches('=').parse().map_err(bad)?);
            if a > b {
                return Err(UsageError(format!("empty seed range {v:?}")));
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![v.trim().parse().map_err(bad)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::parse("# sweep\nn = 256,512\n d=64 # width\n\nmechanism = dba\n").unwrap();
        assert_eq!(cfg.list::<usize>("n").unwrap(), Some(vec![256, 512]));
        cfg.flag("d", Some(32)).unwrap();
        cfg.flag::<usize>("heads", None).unwrap();
        assert_eq!(cfg.get::<usize>("d").unwrap(), Some(32));
        assert_eq!(cfg.get::<usize>("heads").unwrap(), None);
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_lines_rejected() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("d = wide").unwrap().get::<usize>("d").is_err());
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("1..10").unwrap().len(), 10);
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
