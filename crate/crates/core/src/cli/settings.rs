//! Merging defaults, a `key=value` file and command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

/// Keys accepted by every subcommand.
pub const GLOBAL_KEYS: &[(&str, &str)] = &[("seed", "1"), ("threads", "0")];

/// Resolved settings of one run: every key has a value.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

/// Reads `key=value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got `{line}`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Defaults, overridden by the config file, overridden by flags.
    /// Keys outside `defaults` and [`GLOBAL_KEYS`] are rejected.
    pub fn resolve(
        command: &str,
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = GLOBAL_KEYS
            .iter()
            .chain(defaults)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text)? {
                match values.get_mut(&k) {
                    Some(slot) => *slot = v,
                    None => return Err(CliError::Usage(format!("unknown key `{k}` for `{command}`"))),
                }
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                let slot = values
                    .get_mut(*k)
                    .unwrap_or_else(|| panic!("flag `{k}` missing from the defaults of `{command}`"));
                *slot = v.clone();
            }
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` is not defined for `{}`", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::Usage(format!("bad value `{raw}` for `{key}`: {e}")))
    }

    /// Comma-separated reals; each entry may also be a fraction `a/b`.
    pub fn reals(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| parse_real(s.trim()).ok_or_else(|| CliError::Usage(format!("bad number `{s}` in `{key}`"))))
            .collect()
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// The settings as a config file, sorted by key.
    pub fn to_text(&self) -> String {
        let mut s = format!("# cgvae {}\n", self.command);
        for (k, v) in &self.values {
            s += &format!("{k}={v}\n");
        }
        s
    }
}

fn parse_real(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}
