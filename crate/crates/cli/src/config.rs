//! Run configuration: built-in defaults, then an INI-style file, then
//! command-line flags, each layer overriding the previous one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};

use mortality_core::preprocess::{PipelineConfig, PipelineMode};
use mortality_core::{Error, GbdtParams, Result};

/// `(section, key)`; the top-level section is `""`.
pub type Key = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub schema_path: PathBuf,
    pub target_column: String,
    pub seed: u64,
    pub test_fraction: f64,
    pub cv_folds: usize,
    pub pipeline: PipelineConfig,
    pub gbdt: GbdtParams,
    /// Not part of the hash: the same run written elsewhere is the same run.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

const KNOWN_KEYS: &[(&str, &str)] = &[
    ("", "seed"),
    ("data", "path"),
    ("data", "schema"),
    ("data", "target"),
    ("pipeline", "mode"),
    ("pipeline", "alpha"),
    ("pipeline", "k"),
    ("pipeline", "test_fraction"),
    ("pipeline", "cv_folds"),
    ("gbdt", "n_trees"),
    ("gbdt", "learning_rate"),
    ("gbdt", "max_leaves"),
    ("gbdt", "max_depth"),
    ("gbdt", "min_samples_leaf"),
    ("gbdt", "min_hessian_leaf"),
    ("gbdt", "lambda_l2"),
    ("gbdt", "gamma"),
    ("gbdt", "max_bins"),
    ("gbdt", "positive_weight"),
    ("gbdt", "early_stopping_rounds"),
    ("output", "dir"),
];

fn key(section: &str, name: &str) -> Key {
    (section.to_string(), name.to_string())
}

/// Layered string settings, resolved into a [`RunConfig`] at the end.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<Key, String>,
}

impl Settings {
    pub fn defaults() -> Self {
        let g = GbdtParams::default();
        let p = PipelineConfig::default();
        let mut s = Self::default();
        for (section, name, value) in [
            ("", "seed", "42".to_string()),
            ("data", "path", "data/mi.csv".into()),
            ("data", "schema", "schema/mi_complications.schema".into()),
            ("data", "target", "LET_IS".into()),
            ("pipeline", "mode", "preprocessed".into()),
            ("pipeline", "alpha", p.alpha.to_string()),
            ("pipeline", "k", p.k.to_string()),
            ("pipeline", "test_fraction", "0.2".into()),
            ("pipeline", "cv_folds", "10".into()),
            ("gbdt", "n_trees", g.n_trees.to_string()),
            ("gbdt", "learning_rate", g.learning_rate.to_string()),
            ("gbdt", "max_leaves", g.max_leaves.to_string()),
            ("gbdt", "max_depth", "none".into()),
            ("gbdt", "min_samples_leaf", g.min_samples_leaf.to_string()),
            ("gbdt", "min_hessian_leaf", g.min_hessian_leaf.to_string()),
            ("gbdt", "lambda_l2", g.lambda_l2.to_string()),
            ("gbdt", "gamma", g.gamma.to_string()),
            ("gbdt", "max_bins", g.max_bins.to_string()),
            ("gbdt", "positive_weight", g.positive_weight.to_string()),
            ("gbdt", "early_stopping_rounds", "none".into()),
            ("output", "dir", "out".into()),
        ] {
            s.values.insert(key(section, name), value);
        }
        s
    }

    pub fn set(&mut self, section: &str, name: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&(section, name)) {
            let shown = if section.is_empty() { name.to_string() } else { format!("[{section}] {name}") };
            return Err(Error::Parameter(format!("unknown configuration key {shown}")));
        }
        self.values.insert(key(section, name), value.into());
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Input(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        self.merge_text(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Parameter(format!("config: {e}")))?;
        for (section, props) in &ini {
            for (name, value) in props.iter() {
                self.set(section.unwrap_or(""), name, value.trim())?;
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, name: &str) -> &str {
        self.values.get(&key(section, name)).map_or("", String::as_str)
    }

    fn parse<T: FromStr>(&self, section: &str, name: &str) -> Result<T> {
        let raw = self.get(section, name);
        raw.parse().map_err(|_| {
            Error::Parameter(format!("cannot parse {name} = {raw:?} in [{section}]"))
        })
    }

    /// `none`, empty or `0` map to `None`.
    fn optional(&self, section: &str, name: &str) -> Result<Option<usize>> {
        match self.get(section, name) {
            "" | "none" | "0" => Ok(None),
            _ => self.parse(section, name).map(Some),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let seed: u64 = self.parse("", "seed")?;
        let mode = PipelineMode::from_str(self.get("pipeline", "mode"))?;
        let gbdt = GbdtParams {
            n_trees: self.parse("gbdt", "n_trees")?,
            learning_rate: self.parse("gbdt", "learning_rate")?,
            max_leaves: self.parse("gbdt", "max_leaves")?,
            max_depth: self.optional("gbdt", "max_depth")?,
            min_samples_leaf: self.parse("gbdt", "min_samples_leaf")?,
            min_hessian_leaf: self.parse("gbdt", "min_hessian_leaf")?,
            lambda_l2: self.parse("gbdt", "lambda_l2")?,
            gamma: self.parse("gbdt", "gamma")?,
            max_bins: self.parse("gbdt", "max_bins")?,
            seed,
            positive_weight: self.parse("gbdt", "positive_weight")?,
            early_stopping_rounds: self.optional("gbdt", "early_stopping_rounds")?,
        };
        gbdt.validate()?;
        let config = RunConfig {
            data_path: self.get("data", "path").into(),
            schema_path: self.get("data", "schema").into(),
            target_column: self.get("data", "target").to_string(),
            seed,
            test_fraction: self.parse("pipeline", "test_fraction")?,
            cv_folds: self.parse("pipeline", "cv_folds")?,
            pipeline: PipelineConfig {
                mode,
                alpha: self.parse("pipeline", "alpha")?,
                k: self.parse("pipeline", "k")?,
                seed,
            },
            gbdt,
            output_dir: self.get("output", "dir").into(),
        };
        if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "test_fraction = {} must lie strictly between 0 and 1",
                config.test_fraction
            )));
        }
        if !(config.pipeline.alpha > 0.0 && config.pipeline.alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha = {} must lie in (0, 1]", config.pipeline.alpha)));
        }
        if config.pipeline.k == 0 {
            return Err(Error::Parameter("k must be positive".into()));
        }
        Ok(config)
    }
}

impl RunConfig {
    /// SHA-256 over the canonical JSON of every setting except the output
    /// directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// Fails with an input error if the data or schema file is absent.
    pub fn check_inputs(&self) -> Result<()> {
        for (what, path) in [("data", &self.data_path), ("schema", &self.schema_path)] {
            if !path.is_file() {
                return Err(Error::Input(format!("{what} file {} not found", path.display())));
            }
        }
        Ok(())
    }

    /// The settings as a config file that resolves back to `self`.
    pub fn to_ini(&self) -> String {
        let g = &self.gbdt;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        format!(
            "seed = {}\n\n[data]\npath = {}\nschema = {}\ntarget = {}\n\n\
             [pipeline]\nmode = {}\nalpha = {}\nk = {}\ntest_fraction = {}\ncv_folds = {}\n\n\
             [gbdt]\nn_trees = {}\nlearning_rate = {}\nmax_leaves = {}\nmax_depth = {}\n\
             min_samples_leaf = {}\nmin_hessian_leaf = {}\nlambda_l2 = {}\ngamma = {}\n\
             max_bins = {}\npositive_weight = {}\nearly_stopping_rounds = {}\n",
            self.seed,
            self.data_path.display(),
            self.schema_path.display(),
            self.target_column,
            self.pipeline.mode,
            self.pipeline.alpha,
            self.pipeline.k,
            self.test_fraction,
            self.cv_folds,
            g.n_trees,
            g.learning_rate,
            g.max_leaves,
            opt(g.max_depth),
            g.min_samples_leaf,
            g.min_hessian_leaf,
            g.lambda_l2,
            g.gamma,
            g.max_bins,
            g.positive_weight,
            opt(g.early_stopping_rounds),
        )
    }
}
