//! Command-line driver: cohort generation, classifier and model training,
//! cross-validated evaluation, and report export.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;
pub mod tables;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use prism_core::fusion::FusionMode;
use prism_core::stratcv::CvMode;
use prism_core::surv::Ties;
use prism_core::{PrismError, Result};

use crate::commands::EvaluateArgs;
use crate::config::RunConfig;
use crate::manifest::{OutDir, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "prism",
    version,
    about = "Morphology-aware MIL survival pipeline on synthetic cohorts"
)]
pub struct Cli {
    /// Run configuration (JSON); unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// stratified, kmeans or naive.
    #[arg(long, global = true)]
    pub cv_mode: Option<CvMode>,
    /// exact or factorized.
    #[arg(long, global = true)]
    pub fusion_mode: Option<FusionMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Generate {
        /// Number of patients.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the tissue-class classifier on patches drawn from a cohort's prototypes.
    TrainMorph {
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Cross-validated model training.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        /// Directory holding a trained morph_head.prsm; trained afresh if omitted.
        #[arg(long)]
        morph: Option<PathBuf>,
    },
    /// Metrics, Cox, Kaplan-Meier and subgroup tables from predictions.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        val_predictions: Option<PathBuf>,
        /// clinical.csv for subgroup tables.
        #[arg(long)]
        clinical: Option<PathBuf>,
        #[arg(long = "group-by")]
        group_by: Vec<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Paired Wilcoxon signed-rank test between two metrics tables.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Fold assignment and balance audit for one experiment.
    Folds {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value_t = 0)]
        test_fold: usize,
    },
    /// Kaplan-Meier curves for median-split predicted risk groups.
    Km {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Cox fit on the median-split predicted risk groups.
    Cox {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "efron")]
        ties: Ties,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(m) = self.cv_mode {
            c.cv_mode = m;
        }
        if let Some(m) = self.fusion_mode {
            c.model.fusion_mode = m;
        }
        if let Command::Generate { n: Some(n) } = self.command {
            c.cohort.n_patients = n;
        }
        c.finalize()
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate { .. } => "generate",
        Command::TrainMorph { .. } => "train-morph",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
        Command::Folds { .. } => "folds",
        Command::Km { .. } => "km",
        Command::Cox { .. } => "cox",
    }
}

pub fn execute(cli: &Cli) -> Result<RunManifest> {
    let config = cli.run_config()?;
    let out_path = cli
        .out
        .clone()
        .ok_or_else(|| PrismError::config("--out is required"))?;
    let mut out = OutDir::prepare(&out_path, cli.force)?;
    match &cli.command {
        Command::Generate { .. } => {
            commands::cmd_generate(&config, &mut out)?;
        }
        Command::TrainMorph { cohort } => {
            commands::cmd_train_morph(&config, cohort, &mut out)?;
        }
        Command::Train { cohort, morph } => {
            commands::cmd_train(&config, cohort, morph.as_deref(), &mut out)?;
        }
        Command::Evaluate {
            predictions,
            val_predictions,
            clinical,
            group_by,
            threshold,
        } => {
            let args = EvaluateArgs {
                predictions,
                val_predictions: val_predictions.as_deref(),
                clinical: clinical.as_deref(),
                group_by,
                threshold: *threshold,
            };
            commands::cmd_evaluate(&config, &args, &mut out)?;
        }
        Command::Compare { a, b } => {
            commands::cmd_compare(a, b, &mut out)?;
        }
        Command::Folds { cohort, test_fold } => {
            commands::cmd_folds(&config, cohort, *test_fold, &mut out)?;
        }
        Command::Km { predictions } => commands::cmd_km(predictions, &mut out)?,
        Command::Cox { predictions, ties } => {
            commands::cmd_cox(predictions, *ties, &mut out)?;
        }
    }
    out.finish(command_name(&cli.command), &config)
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
