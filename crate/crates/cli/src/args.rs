use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug, Clone)]
#[command(
    name = "scurve",
    version,
    about = "Fit and simulate S-shaped progression curves with shape-constrained Bayesian splines"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Total sampler iterations per chain, burn-in included.
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Leading iterations discarded from each chain.
    #[arg(long, global = true)]
    pub burnin: Option<usize>,
    /// Keep every n-th post-burn-in iteration.
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    /// Spacing of the age grid for curve summaries and metrics.
    #[arg(long = "grid-step", global = true)]
    pub grid_step: Option<f64>,
    /// Knot range `lo,hi`; `simulate` accepts it more than once.
    #[arg(long = "knot-range", global = true, value_name = "LO,HI")]
    pub knot_range: Vec<String>,
    /// Model variant; `simulate` also takes a comma list or `all`.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Worker threads for chains and replicates.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Independent chains per fit, concatenated in chain order.
    #[arg(long, global = true, default_value_t = 1)]
    pub chains: usize,
    /// Monte Carlo paths per orthant probability.
    #[arg(long = "n-mc", global = true)]
    pub n_mc: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Sign orientation, learning-effect adjustment and standardization only.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess, place knots, run the sampler and write all summaries.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Model and sampler settings (key = value).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Covariate name or `age:FROM-TO`; defaults to every covariate.
        #[arg(long = "contrast")]
        contrasts: Vec<String>,
        /// Fit the data as given, without preprocessing.
        #[arg(long)]
        no_preprocess: bool,
    },
    /// Simulation study over truths, variants and knot ranges.
    Simulate {
        /// LOGISTIC, ASYMMETRIC, a comma list, or `all`.
        #[arg(long, default_value = "all")]
        truth: String,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Age range `lo,hi` over which curve metrics are averaged.
        #[arg(long = "metric-range", value_name = "LO,HI", default_value = "30,90")]
        metric_range: String,
        /// Subjects per simulated dataset.
        #[arg(long)]
        subjects: Option<usize>,
        /// Read the simulated noise level as a standard deviation.
        #[arg(long)]
        noise_is_sd: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge simulation reports (files or output directories); later inputs win.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest into a new directory.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an output directory against the digests in its manifest.
    Verify { dir: PathBuf },
}

fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Fit { .. } => "fit",
            Command::Simulate { .. } => "simulate",
            Command::Report { .. } => "report",
            Command::Replay { .. } => "replay",
            Command::Verify { .. } => "verify",
        }
    }

    /// Resolves relative paths against `base`.
    pub fn rebase_paths(&mut self, base: &Path) {
        match self {
            Command::Preprocess { data, schema, out } => {
                rebase(data, base);
                rebase(schema, base);
                rebase(out, base);
            }
            Command::Fit {
                data,
                schema,
                model,
                out,
                ..
            } => {
                rebase(data, base);
                rebase(schema, base);
                if let Some(m) = model {
                    rebase(m, base);
                }
                rebase(out, base);
            }
            Command::Simulate { model, out, .. } => {
                if let Some(m) = model {
                    rebase(m, base);
                }
                rebase(out, base);
            }
            Command::Report { inputs, out } => {
                inputs.iter_mut().for_each(|p| rebase(p, base));
                rebase(out, base);
            }
            Command::Replay { manifest, out } => {
                rebase(manifest, base);
                rebase(out, base);
            }
            Command::Verify { dir } => rebase(dir, base),
        }
    }

    pub fn set_out(&mut self, dir: PathBuf) {
        match self {
            Command::Preprocess { out, .. }
            | Command::Fit { out, .. }
            | Command::Simulate { out, .. }
            | Command::Report { out, .. }
            | Command::Replay { out, .. } => *out = dir,
            Command::Verify { dir: d } => *d = dir,
        }
    }
}
