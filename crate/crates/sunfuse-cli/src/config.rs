//! Run configuration: config-file parsing, flag resolution, and the
//! metadata header stamped into every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Key-value config file mirroring the command-line flags. One `key = value`
/// pair per line; `#` starts a comment; keys use the flag spelling without
/// the leading dashes (e.g. `out-dir`, `comparators`).
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ConfigMap> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got `{raw}`", i + 1);
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// CLI value if present, else config-file value parsed from its string
    /// form, else `None`.
    pub fn resolve<T: std::str::FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.get(key) {
            None => Ok(None),
            Some(s) => match s.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(_) => bail!("config key `{key}`: cannot parse `{s}`"),
            },
        }
    }

    pub fn resolve_flag(&self, cli: bool, key: &str) -> Result<bool> {
        if cli {
            return Ok(true);
        }
        match self.get(key) {
            None => Ok(false),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => bail!("config key `{key}`: expected true/false, got `{other}`"),
        }
    }
}

/// Fully resolved run settings. The hash covers the command name, seed, and
/// command settings; parallelism degree and output directory are excluded
/// so they cannot change artifact contents.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub settings: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, jobs: usize, out_dir: PathBuf) -> RunConfig {
        RunConfig {
            command: command.to_string(),
            seed,
            jobs,
            out_dir,
            settings: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn config_hash(&self) -> String {
        let mut canon = format!("command={}\nseed={}\n", self.command, self.seed);
        for (k, v) in &self.settings {
            canon.push_str(&format!("{k}={v}\n"));
        }
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }

    /// Comment header stamped at the top of CSV artifacts.
    pub fn header(&self) -> String {
        let mut h = format!(
            "# command: {}\n# seed: {}\n# config_hash: {}\n",
            self.command,
            self.seed,
            self.config_hash()
        );
        for (k, v) in &self.settings {
            h.push_str(&format!("# {k}: {v}\n"));
        }
        h
    }

    /// Metadata object embedded in JSON artifacts.
    pub fn meta_json(&self) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash(),
            "settings": self.settings,
        })
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
