//! Flat `key=value` configuration with flag overrides.
//!
//! Every value a command reads goes through [`Config::get`], which applies
//! `defaults < config file < flags` and remembers the effective value so the
//! output header can reproduce the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display};
use std::str::FromStr;

use crate::error::CliError;

pub const BUILD_ID: &str = concat!("logsum-amp-cli/", env!("CARGO_PKG_VERSION"));

/// Keys are compared after mapping `-` to `_`, so `delta-epsilon` and
/// `delta_epsilon` name the same parameter.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// One pair per line; blank lines and lines starting with `#` are skipped.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key=value, got {line:?}", i + 1)));
        };
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Config {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    echo: Vec<(String, String)>,
}

impl Config {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            ..Self::default()
        }
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: cannot parse {s:?}: {e}"))),
            None => Ok(None),
        }
    }

    /// Effective value of `key`, recorded for the header.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.echo.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Like [`Config::get`] without a default; an unset key is echoed empty.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        self.echo
            .push((key.to_string(), v.as_ref().map(|x| x.to_string()).unwrap_or_default()));
        Ok(v)
    }

    /// Resolved but kept out of the header: settings that do not change the
    /// data, such as where it is written.
    pub fn get_silent<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.lookup(key, flag)
    }

    /// Rejects config-file keys that no parameter consumed.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.echo
    }

    /// `# key=value` lines: command, build, then every effective parameter.
    pub fn header(&self, command: &str) -> String {
        let mut s = format!("# command={command}\n# build={BUILD_ID}\n");
        for (k, v) in &self.echo {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

impl Display for FloatList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated list of names.
#[derive(Debug, Clone, PartialEq)]
pub struct NameList(pub Vec<String>);

impl FromStr for NameList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let names: Vec<String> = s.split(',').map(|t| t.trim().to_string()).collect();
        if names.iter().any(String::is_empty) {
            return Err("empty entry in list".into());
        }
        Ok(NameList(names))
    }
}

impl Display for NameList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(","))
    }
}
