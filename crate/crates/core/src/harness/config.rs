//! Flat `section.key = value` configuration with a fixed key schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gm::ClipBox;
use crate::io::sha256_hex;

/// Every accepted key. `eval.<name>` keys are accepted for names listed in
/// `eval.models`.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    // verify-rank
    "rank.cells",
    "rank.length",
    "rank.d1",
    "rank.d2",
    "rank.lambda1",
    "rank.lambda2",
    "rank.n_ref",
    "rank.ranks",
    "rank.betas",
    "rank.t0",
    "rank.slope_tol",
    // verify-picard, factorial part
    "picard.cells",
    "picard.length",
    "picard.d1",
    "picard.d2",
    "picard.lambda1",
    "picard.lambda2",
    "picard.source",
    "picard.clip_lo",
    "picard.clip_hi",
    "picard.noise",
    "picard.t0_max",
    "picard.nodes",
    "picard.k_max",
    "picard.beta",
    // verify-picard, closed-form part
    "taylor.t0",
    "taylor.nodes",
    "taylor.k_max",
    "taylor.cells",
    // verify-picard, reference part
    "reference.regime",
    "reference.cells",
    "reference.length",
    "reference.clip_lo",
    "reference.clip_hi",
    "reference.noise",
    "reference.t0_max",
    "reference.nodes",
    "reference.beta",
    "reference.substeps",
    "reference.k_max",
    "reference.tol",
    // verify-constructive
    "constructive.cells",
    "constructive.length",
    "constructive.d1",
    "constructive.d2",
    "constructive.lambda1",
    "constructive.lambda2",
    "constructive.source",
    "constructive.clip_lo",
    "constructive.clip_hi",
    "constructive.noise",
    "constructive.t0_max",
    "constructive.nodes",
    "constructive.beta",
    "constructive.eps",
    "constructive.rank_max",
    "constructive.rank_exponent_tol",
    "constructive.param_slope_tol",
    "surrogate.epochs",
    "surrogate.lr",
    "surrogate.batch_size",
    "surrogate.samples",
    "surrogate.grid_per_axis",
    "surrogate.schedule",
    // gen-data, train, evaluate
    "data.dir",
    "data.dim",
    "data.cells",
    "data.length",
    "data.regimes",
    "data.train_per_regime",
    "data.test_per_regime",
    "data.noise",
    "data.dt",
    "data.grid",
    "data.multires",
    "data.seed",
    "model.basis",
    "model.width",
    "model.depth",
    "model.modes",
    "model.residual",
    "train.epochs",
    "train.lr",
    "train.batch_size",
    "train.precision",
    "eval.models",
    "eval.inject_truth",
    "eval.ordering",
    // report
    "report.inputs",
    "report.d1",
    "report.d2",
    "report.source",
];

/// Keys whose values name files or directories that must already exist.
const PATH_KEYS: &[&str] = &["data.dir"];

/// A parsed configuration. Values stay as text until a command reads them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if cfg.entries.contains_key(k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
            cfg.entries.insert(k.to_string(), v.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets or replaces one key, then re-validates.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.entries.insert(key.trim().to_string(), value.trim().to_string());
        self.validate()
    }

    /// Rejects unknown keys and missing referenced paths.
    pub fn validate(&self) -> Result<()> {
        let models: BTreeSet<String> = self
            .entries
            .get("eval.models")
            .map(|v| v.split(',').map(|s| format!("eval.{}", s.trim())).collect())
            .unwrap_or_default();
        for k in self.entries.keys() {
            if !(KNOWN_KEYS.contains(&k.as_str()) || models.contains(k)) {
                return Err(Error::Config(format!("unknown key {k}")));
            }
        }
        let mut paths: Vec<(&str, &str)> = Vec::new();
        for k in PATH_KEYS {
            if let Some(v) = self.entries.get(*k) {
                paths.push((k, v));
            }
        }
        for k in &models {
            if let Some(v) = self.entries.get(k) {
                paths.extend(v.split(',').map(|p| (k.as_str(), p.trim())));
            }
        }
        if let Some(v) = self.entries.get("report.inputs") {
            paths.extend(v.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| ("report.inputs", p)));
        }
        for (k, p) in paths {
            if !Path::new(p).exists() {
                return Err(Error::Config(format!("{k}: {p} does not exist")));
            }
        }
        Ok(())
    }

    /// `key=value` lines in key order; the hash is taken over this text.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key`, falling back to `default` when it is absent.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))?;
        v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|e| Error::Config(format!("{key} item {s:?}: {e}"))))
                .collect(),
        }
    }

    /// A pair such as `0.7,0.7`.
    pub fn pair(&self, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
        let v = self.list(key, default.to_vec())?;
        <[f64; 2]>::try_from(v).map_err(|v| Error::Config(format!("{key}: expected 2 values, got {}", v.len())))
    }

    pub fn clip_box(&self, section: &str, default: ClipBox) -> Result<ClipBox> {
        ClipBox::new(
            self.pair(&format!("{section}.clip_lo"), default.lo)?,
            self.pair(&format!("{section}.clip_hi"), default.hi)?,
        )
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    /// Hidden-layer schedule such as `64x64;128x128`.
    pub fn schedule(&self, key: &str, default: Vec<Vec<usize>>) -> Result<Vec<Vec<usize>>> {
        let Some(v) = self.entries.get(key) else {
            return Ok(default);
        };
        v.split(';')
            .map(|stage| {
                stage
                    .split('x')
                    .map(|w| w.trim().parse::<usize>().map_err(|e| Error::Config(format!("{key}: {e}"))))
                    .collect()
            })
            .collect()
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_values() {
        let c = Config::parse("# header\nseed = 7\n\nrank.betas = 0.75, 0.5  # two\n").unwrap();
        assert_eq!(c.get("seed", 0u64).unwrap(), 7);
        assert_eq!(c.list::<f64>("rank.betas", vec![]).unwrap(), vec![0.75, 0.5]);
        assert_eq!(c.get("rank.t0", 0.5).unwrap(), 0.5);
    }

    #[test]
    fn unknown_duplicate_and_malformed_rejected() {
        assert!(matches!(Config::parse("rank.bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("seed = 1\nseed = 2"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("seed"), Err(Error::Config(_))));
        let c = Config::parse("seed = x").unwrap();
        assert!(c.get("seed", 0u64).is_err());
    }

    #[test]
    fn missing_paths_rejected() {
        let err = Config::parse("data.dir = /definitely/not/here").unwrap_err();
        assert!(err.to_string().contains("does not exist"));
        let err = Config::parse("eval.models = a\neval.a = /nope.nopm").unwrap_err();
        assert!(err.to_string().contains("does not exist"));
        assert!(Config::parse("eval.b = x").is_err());
    }

    #[test]
    fn hash_ignores_order_and_formatting() {
        let a = Config::parse("seed=1\nrank.t0 = 0.5").unwrap();
        let b = Config::parse("rank.t0=0.5\n# note\nseed = 1").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.set("seed", "2").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn schedule_and_pairs() {
        let c = Config::parse("surrogate.schedule = 64x64;128x128x128\npicard.clip_lo = 0.5,0.6").unwrap();
        assert_eq!(c.schedule("surrogate.schedule", vec![]).unwrap(), vec![vec![64, 64], vec![128, 128, 128]]);
        assert_eq!(c.pair("picard.clip_lo", [0.0; 2]).unwrap(), [0.5, 0.6]);
        let b = c.clip_box("picard", ClipBox::default()).unwrap();
        assert_eq!(b.lo, [0.5, 0.6]);
    }
}
