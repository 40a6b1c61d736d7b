//! `mortality` command-line tool.

pub mod artifact;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mortality_core::preprocess::PipelineMode;
use mortality_core::{Error, Result};

use commands::RowSet;
use config::{RunConfig, Settings};

#[derive(Debug, Parser)]
#[command(name = "mortality", version, about = "GBDT mortality prediction with Tree SHAP explanations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// INI-style config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Lethal-outcome column.
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// preprocessed (pipeline 1) or raw (pipeline 2).
    #[arg(long, global = true)]
    pub pipeline: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Minority/majority ratio after undersampling.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Features kept by chi-squared selection.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub cv_folds: Option<usize>,
    #[arg(long, global = true)]
    pub n_trees: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_leaves: Option<usize>,
    /// `none` or 0 for unlimited.
    #[arg(long, global = true)]
    pub max_depth: Option<String>,
    #[arg(long, global = true)]
    pub min_samples_leaf: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, split and fit the preprocessing pipeline; write the tables and reports.
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the pipeline and the model on the training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a trained model on the held-out split.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding model.json and pipeline_state.json; defaults to --out.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cross-validated grid search on the training split.
    Gridsearch {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare two pipelines on a shared fold partition with a paired t-test.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// The two pipelines to compare.
        #[arg(long, value_delimiter = ',', num_args = 1..=2, default_values = ["preprocessed", "raw"])]
        compare: Vec<String>,
    },
    /// Tree SHAP values, global importance and a beeswarm plot.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        rows: RowSet,
        /// Feature rows shown in the plot.
        #[arg(long, default_value_t = 20)]
        max_display: usize,
    },
    /// Gather existing results from the output directory into report.txt.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut s = Settings::defaults();
        if let Some(path) = &self.config {
            s.merge_file(path)?;
        }
        let path = |p: &PathBuf| p.display().to_string();
        let flags: [(&str, &str, Option<String>); 15] = [
            ("data", "path", self.data.as_ref().map(path)),
            ("data", "schema", self.schema.as_ref().map(path)),
            ("data", "target", self.target.clone()),
            ("pipeline", "mode", self.pipeline.clone()),
            ("", "seed", self.seed.map(|v| v.to_string())),
            ("output", "dir", self.out.as_ref().map(path)),
            ("pipeline", "alpha", self.alpha.map(|v| v.to_string())),
            ("pipeline", "k", self.k.map(|v| v.to_string())),
            ("pipeline", "test_fraction", self.test_fraction.map(|v| v.to_string())),
            ("pipeline", "cv_folds", self.cv_folds.map(|v| v.to_string())),
            ("gbdt", "n_trees", self.n_trees.map(|v| v.to_string())),
            ("gbdt", "learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("gbdt", "max_leaves", self.max_leaves.map(|v| v.to_string())),
            ("gbdt", "max_depth", self.max_depth.clone()),
            ("gbdt", "min_samples_leaf", self.min_samples_leaf.map(|v| v.to_string())),
        ];
        for (section, name, value) in flags {
            if let Some(v) = value {
                s.set(section, name, v)?;
            }
        }
        s.resolve()
    }
}

/// Runs one command and returns the names of the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let (cfg, outputs) = match &cli.command {
        Command::Prepare { common } => {
            let cfg = common.resolve()?;
            let out = commands::prepare(&cfg)?;
            (cfg, out)
        }
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let out = commands::train(&cfg)?;
            (cfg, out)
        }
        Command::Evaluate { common, model } => {
            let cfg = common.resolve()?;
            let dir = model.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let out = commands::evaluate(&cfg, &dir)?;
            (cfg, out)
        }
        Command::Gridsearch { common } => {
            let cfg = common.resolve()?;
            let out = commands::gridsearch(&cfg)?;
            (cfg, out)
        }
        Command::Ablate { common, compare } => {
            let cfg = common.resolve()?;
            let modes: Vec<PipelineMode> = compare.iter().map(|m| m.parse()).collect::<Result<_>>()?;
            let modes: [PipelineMode; 2] = modes
                .try_into()
                .map_err(|_| Error::Parameter("--compare takes exactly two pipelines".into()))?;
            let out = commands::ablate(&cfg, modes)?;
            (cfg, out)
        }
        Command::Explain { common, model, rows, max_display } => {
            let cfg = common.resolve()?;
            let dir = model.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let out = commands::explain(&cfg, &dir, *rows, *max_display)?;
            (cfg, out)
        }
        Command::Report { common } => {
            let cfg = common.resolve()?;
            let out = commands::report(&cfg, &cfg.output_dir)?;
            (cfg, out)
        }
    };
    outputs.write_all(&cfg.output_dir)?;
    Ok(outputs.names().into_iter().map(|n| cfg.output_dir.join(n).display().to_string()).collect())
}

/// Process exit status for an error: 2 for bad input or configuration,
/// 1 for internal failures.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_user_error() {
        2
    } else {
        1
    }
}
