//! Flat `section.key = value` config files.
//!
//! Lines are `dotted.key = value`; `#` starts a comment; blank lines are
//! ignored. Values stay strings until a typed getter pulls them out, so
//! unknown keys are permitted (and preserved by the renderer for
//! checkpoint sidecars).

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
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
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1)));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError(format!("line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Config { entries })
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| ConfigError(format!("missing key '{key}'")))
    }

    pub fn get_str(&self, key: &str) -> Result<String> {
        Ok(self.require(key)?.to_string())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.require(key)?
            .parse()
            .map_err(|e| ConfigError(format!("key '{key}': {e}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.require(key)?
            .parse()
            .map_err(|e| ConfigError(format!("key '{key}': {e}")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.require(key)?
            .parse()
            .map_err(|e| ConfigError(format!("key '{key}': {e}")))
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            Some(_) => self.get_f64(key),
            None => Ok(default),
        }
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            Some(_) => self.get_usize(key),
            None => Ok(default),
        }
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            Some(_) => self.get_u64(key),
            None => Ok(default),
        }
    }

    pub fn get_str_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Comma-separated list of parseable items.
    pub fn get_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|e| ConfigError(format!("key '{key}': bad item '{}': {e}", s.trim())))
            })
            .collect()
    }

    pub fn get_list_or<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            Some(_) => self.get_list(key),
            None => Ok(default),
        }
    }
}
