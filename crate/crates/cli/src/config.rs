//! Resolved run configuration: flags over config file over defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Every recognised key with its default, if any.
const KEYS: &[(&str, Option<&str>)] = &[
    ("alpha", Some("0.05")),
    ("data", None),
    ("fraction", Some("0.4")),
    ("graph", None),
    ("kind", Some("confounded-rebound")),
    ("out", Some("out")),
    ("parents", Some("district")),
    ("plan", None),
    ("preset", Some("ehs-fp")),
    ("project", Some("true")),
    ("repetitions", Some("200")),
    ("rows", Some("200000")),
    ("scm", None),
    ("seed", Some("0")),
    ("smoothing", Some("1")),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn key(name: &str) -> Result<&'static str> {
    KEYS.iter()
        .map(|(k, _)| *k)
        .find(|k| *k == name)
        .ok_or_else(|| anyhow!("unknown configuration key `{name}`"))
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|(k, d)| d.map(|d| (*k, d.to_string())))
            .collect();
        RunConfig { values }
    }

    /// Sets `name`. The graph source keys are exclusive: setting one clears the other.
    pub fn set(&mut self, name: &str, value: impl Into<String>) -> Result<()> {
        let k = key(name)?;
        match k {
            "graph" => {
                self.values.remove("preset");
            }
            "preset" => {
                self.values.remove("graph");
            }
            _ => {}
        }
        self.values.insert(k, value.into());
        Ok(())
    }

    pub fn set_opt<T: ToString>(&mut self, name: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(name, v.to_string()),
            None => Ok(()),
        }
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn parse<T>(&self, name: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let raw = self.get(name).ok_or_else(|| anyhow!("missing configuration value `{name}`"))?;
        raw.parse().map_err(|e| anyhow!("invalid value `{raw}` for `{name}`: {e}"))
    }

    /// An existing file named by `name`.
    pub fn path(&self, name: &str) -> Result<Option<PathBuf>> {
        match self.get(name) {
            None => Ok(None),
            Some(p) => {
                let p = PathBuf::from(p);
                if !p.exists() {
                    bail!("`{name}` path {} does not exist", p.display());
                }
                Ok(Some(p))
            }
        }
    }

    pub fn required_path(&self, name: &str) -> Result<PathBuf> {
        self.path(name)?.ok_or_else(|| anyhow!("`--{name}` is required"))
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.values {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_exclusive_graph_keys() {
        let mut c = RunConfig::defaults();
        c.apply_text("# comment\nseed = 7\ngraph = g.txt # trailing\n").unwrap();
        assert_eq!(c.get("seed"), Some("7"));
        assert_eq!(c.get("preset"), None);
        c.set("seed", "9").unwrap();
        c.set("preset", "ehs-fp").unwrap();
        assert_eq!(c.parse::<u64>("seed").unwrap(), 9);
        assert_eq!(c.get("graph"), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let mut c = RunConfig::defaults();
        assert!(c.apply_text("colour = red\n").is_err());
        assert!(c.apply_text("seed 4\n").is_err());
        c.set("seed", "-1").unwrap();
        assert!(c.parse::<u64>("seed").is_err());
    }

    #[test]
    fn printed_config_reads_back() {
        let mut c = RunConfig::defaults();
        c.set("data", "d.csv").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_string()).unwrap();
        assert_eq!(c, d);
    }
}
