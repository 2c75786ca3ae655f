//! Resolution of flags, the optional key=value file, and defaults into one
//! flat, hashable settings map.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use crate::CommonArgs;

pub struct Settings {
    file: BTreeMap<String, String>,
    /// Every value actually used, for the output header hash.
    used: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "corpus", "out", "checkpoint", "vocab", "layers", "heads", "hidden", "seed", "mode",
    "embedding", "vocab_size", "max_len", "epochs", "lr", "batch_size", "pairs", "size", "ffn",
];

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), n + 1);
        };
        let key = key.trim().replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key {key:?}", path.display(), n + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn new(command: &str, args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => parse_file(p)?,
            None => BTreeMap::new(),
        };
        let mut used = BTreeMap::new();
        used.insert("command".to_string(), command.to_string());
        Ok(Settings { file, used })
    }

    /// Flag value, else file value, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {raw:?}: {e}"))?,
            (None, None) => default,
        };
        self.used.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn opt_path(&mut self, key: &str, flag: Option<&PathBuf>) -> Option<PathBuf> {
        let value = flag.cloned().or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &value {
            self.used.insert(key.to_string(), p.display().to_string());
        }
        value
    }

    /// Like `opt_path`, but not part of the hash: where outputs go does not
    /// change what they contain.
    pub fn location(&self, key: &str, flag: Option<&PathBuf>) -> Option<PathBuf> {
        flag.cloned().or_else(|| self.file.get(key).map(PathBuf::from))
    }

    pub fn path(&mut self, key: &str, flag: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
        self.opt_path(key, flag)
            .with_context(|| format!("missing --{key} ({what})"))
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.used.insert(key.to_string(), value.to_string());
    }

    pub fn seed(&self) -> u64 {
        self.used.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0)
    }

    /// First 16 hex digits of SHA-256 over the sorted `key=value` lines.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.used {
            hasher.update(format!("{k}={v}\n").as_bytes());
        }
        hasher.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
