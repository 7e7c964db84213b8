//! `key = value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Values from an optional config file, restricted to the keys a command
/// accepts. Lookups prefer an explicit flag, then the file, then a default.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a `#` after a value starts a trailing comment.
pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got {raw:?}", n + 1))?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim().to_string());
        if !allowed.contains(&k.as_str()) {
            bail!(
                "config line {}: unknown key {k:?}; accepted keys: {}",
                n + 1,
                allowed.join(", ")
            );
        }
        if out.insert(k.clone(), v).is_some() {
            bail!("config line {}: duplicate key {k:?}", n + 1);
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file = parse_config(&text, allowed).with_context(|| format!("{}", path.display()))?;
        Ok(Self { file })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: invalid value {v:?}: {e}")))
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.from_file(key),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| anyhow!("missing required option --{key} (flag or config key)"))
    }
}
