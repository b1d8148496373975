//! `mcb` command line: corpus generation, NegEx pseudo-labelling,
//! training, evaluation, faithfulness analysis and paired comparison.
//!
//! Every command writes its outputs and a `resolved_config.<command>.toml`
//! under the run's output directory.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcb_core::model::{Ablation, ModelKind};

use config::{CimPairs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mcb", version, about = "Multiplicative concept bottleneck experiments")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed applied to every component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Corpus file; defaults to `<out>/corpus.jsonl`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData,
    /// Attach NegEx pseudo-labels to a corpus.
    PseudoLabel {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Trigger lexicon file with [pre], [post] and [pseudo] sections.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train a model; generates the corpus when none is given.
    Train {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Predict on one split and report metrics.
    Eval {
        #[command(flatten)]
        args: ModelArgs,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
    },
    /// CSTPR, CIM and CCR with bootstrap intervals.
    Interpret {
        #[command(flatten)]
        args: ModelArgs,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        bootstrap_b: Option<usize>,
        #[arg(long, value_enum)]
        cim_pairs: Option<CimPairs>,
    },
    /// Concept-mask intervention.
    Intervene {
        #[command(flatten)]
        args: ModelArgs,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        bootstrap_b: Option<usize>,
    },
    /// Paired bootstrap of two prediction dumps on every metric.
    Compare {
        /// System A predictions.
        #[arg(long)]
        a: PathBuf,
        /// System B predictions.
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        bootstrap_b: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<usize>>,
    },
    /// Aggregate run directories into one JSON report and CSV plot data.
    Report {
        /// Run directories to collect.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Cli {
    /// File config merged with flags, seeds propagated.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        match &self.command {
            Command::Train { model, ablation, .. } => {
                if let Some(m) = model {
                    cfg.model.kind = *m;
                }
                if let Some(a) = ablation {
                    cfg.model.ablation = *a;
                }
            }
            Command::Eval { tau, k_list, .. } => {
                if let Some(t) = tau {
                    cfg.evaluation.tau = *t;
                }
                if let Some(k) = k_list {
                    cfg.evaluation.k_list = k.clone();
                }
            }
            Command::Interpret {
                tau,
                bootstrap_b,
                cim_pairs,
                ..
            } => {
                if let Some(t) = tau {
                    cfg.evaluation.tau = *t;
                }
                if let Some(b) = bootstrap_b {
                    cfg.interpret.bootstrap_b = *b;
                }
                if let Some(p) = cim_pairs {
                    cfg.interpret.cim_pairs = *p;
                }
            }
            Command::Intervene {
                tau,
                pairs,
                bootstrap_b,
                ..
            } => {
                if let Some(t) = tau {
                    cfg.evaluation.tau = *t;
                }
                if let Some(p) = pairs {
                    cfg.interpret.pairs = *p;
                }
                if let Some(b) = bootstrap_b {
                    cfg.interpret.bootstrap_b = *b;
                }
            }
            Command::Compare {
                bootstrap_b, k_list, ..
            } => {
                if let Some(b) = bootstrap_b {
                    cfg.evaluation.bootstrap_b = *b;
                }
                if let Some(k) = k_list {
                    cfg.evaluation.k_list = k.clone();
                }
            }
            Command::GenData | Command::PseudoLabel { .. } | Command::Report { .. } => {}
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn name(&self) -> &'static str {
        match self.command {
            Command::GenData => "gen-data",
            Command::PseudoLabel { .. } => "pseudo-label",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Interpret { .. } => "interpret",
            Command::Intervene { .. } => "intervene",
            Command::Compare { .. } => "compare",
            Command::Report { .. } => "report",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status: 0 on success, 2 on usage errors and 1
/// on any other failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
