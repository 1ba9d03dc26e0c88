//! Flat `key = value` config files and flag > config > default resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use elfs_core::data::Metric;
use elfs_core::harness::Method;

use crate::CliError;

/// Parses `key = value` lines. `#` starts a comment; dashes in keys are read
/// as underscores so keys can be copied from flag names.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `key = value`, found {line:?}",
                origin.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().replace('-', "_");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!(
                "{}:{}: empty key",
                origin.display(),
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Usage(format!(
                "{}:{}: duplicate key `{key}`",
                origin.display(),
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// A value that can come from a flag or a config file and be echoed into the
/// run manifest.
pub trait ConfigValue: Sized {
    fn parse_config(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_config(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(usize, u64, f64, bool, String, Metric, Method);

impl ConfigValue for PathBuf {
    fn parse_config(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl<T: FromStr + fmt::Display> ConfigValue for List<T>
where
    T::Err: fmt::Display,
{
    fn parse_config(s: &str) -> Result<Self, String> {
        s.parse()
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

pub struct Resolver {
    config: BTreeMap<String, String>,
    consulted: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: BTreeMap<String, String>) -> Self {
        Resolver {
            config,
            consulted: BTreeSet::new(),
            resolved: BTreeMap::new(),
        }
    }

    fn lookup<T: ConfigValue>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        self.consulted.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.config.get(key) {
            Some(raw) => T::parse_config(raw).map(Some).map_err(|e| {
                CliError::Usage(format!("invalid value {raw:?} for `{key}` in config: {e}"))
            }),
            None => Ok(None),
        }
    }

    pub fn value<T: ConfigValue>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError> {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.show());
        Ok(v)
    }

    pub fn optional<T: ConfigValue>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.show());
        }
        Ok(v)
    }

    pub fn required<T: ConfigValue>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.optional(key, flag)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required flag --{} (or `{key}` in the config file)",
                key.replace('_', "-")
            ))
        })
    }

    /// Boolean switch: a set flag wins, otherwise the config value, otherwise false.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.value(key, flag.then_some(true), false)
    }

    /// Config keys that no resolution step asked for.
    pub fn unused_keys(&self) -> Vec<String> {
        self.config
            .keys()
            .filter(|k| !self.consulted.contains(*k))
            .cloned()
            .collect()
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
