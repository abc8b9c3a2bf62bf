//! `key = value` run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then a config
//! file, then command-line flags. Keys use the flag spelling without the
//! leading dashes (`log-interval`, `deriv-source`); underscores are accepted
//! in files and folded to dashes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{FormatError, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(FormatError::Parse {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('_', "-")
}

/// Resolved settings for one command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

impl Settings {
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Settings {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            explicit: BTreeSet::new(),
        }
    }

    /// Overrides known keys; unknown keys are an error.
    pub fn apply<I, K, V>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (k, v) in pairs {
            let key = normalize_key(k.as_ref());
            match self.values.get_mut(&key) {
                Some(slot) => {
                    *slot = v.into();
                    self.explicit.insert(key);
                }
                None => {
                    return Err(FormatError::Setting {
                        key,
                        message: format!(
                            "unknown key; expected one of {}",
                            self.keys().collect::<Vec<_>>().join(", ")
                        ),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        self.apply(parse_kv(&text)?)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// True when the key was set by a file or flag rather than a default.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| FormatError::Setting {
                key: key.into(),
                message: "not available for this command".into(),
            })
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e: T::Err| FormatError::Setting {
            key: key.into(),
            message: format!("cannot parse `{raw}`: {e}"),
        })
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key)?.to_ascii_lowercase().as_str() {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(FormatError::Setting {
                key: key.into(),
                message: format!("expected true or false, got `{other}`"),
            }),
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}
