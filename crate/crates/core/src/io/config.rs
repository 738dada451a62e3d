//! `key = value` run-configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys are
//! checked against the set the consumer understands, so a typo is an error
//! rather than a silently ignored setting.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    entries: Vec<(String, String, usize)>,
}

impl RunConfig {
    /// Parses `text`, accepting only keys listed in `allowed`.
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            if !allowed.contains(&k) {
                return Err(Error::Config(format!("line {lineno}: unknown key `{k}`")));
            }
            if entries.iter().any(|(e, _, _)| e == k) {
                return Err(Error::Config(format!("line {lineno}: duplicate key `{k}`")));
            }
            entries.push((k.to_string(), v.to_string(), lineno));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>, allowed: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, allowed).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    /// Parsed value of `key`, if present.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((_, v, line)) = self.entries.iter().find(|(k, _, _)| k == key) else {
            return Ok(None);
        };
        v.parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("line {line}: invalid value `{v}` for `{key}`")))
    }

    /// `(key, value)` pairs in file order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses `a,b` into an ordered pair.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("invalid range `{s}` (expected `a,b` with a <= b)"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(bad());
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[&str] = &["lr", "seed", "ablation"];

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nlr = 0.5  # trailing\n seed=3\n", KEYS).unwrap();
        assert_eq!(c.get("lr"), Some("0.5"));
        assert_eq!(c.get_parsed::<u64>("seed").unwrap(), Some(3));
        assert_eq!(c.get_parsed::<u64>("ablation").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(RunConfig::parse("lrr = 1", KEYS).is_err());
        assert!(RunConfig::parse("lr = 1\nlr = 2", KEYS).is_err());
        assert!(RunConfig::parse("lr 1", KEYS).is_err());
        let c = RunConfig::parse("seed = x", KEYS).unwrap();
        assert!(c.get_parsed::<u64>("seed").is_err());
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("-45, 45").unwrap(), (-45.0, 45.0));
        assert!(parse_range("3,1").is_err());
        assert!(parse_range("3").is_err());
    }
}
