use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lab", version, about = "Singularity and anticoncentration laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact singularity probability by enumeration.
    Exact(Common),
    /// Monte Carlo singularity estimate against the two-term prediction.
    Mc(Common),
    /// Exact Lévy concentration L(Σ b_i x_i, r).
    Levy(Common),
    /// Threshold T(x, L).
    Threshold(Common),
    /// Smallest-singular-value tail curve.
    Tail(Common),
    /// Kernel-vector structure dichotomy.
    Structure(Common),
    /// Compressible-net infimum frequency.
    Compressible(Common),
    /// Anticoncentration margin sweep.
    Sweep(Common),
    /// Inversion-of-randomness exceedance curve.
    Smoothing(Common),
    /// Summary of the distribution and of the manifests in --out-dir.
    Report(Common),
}

impl Command {
    pub fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Exact(c) => ("exact", c),
            Command::Mc(c) => ("mc", c),
            Command::Levy(c) => ("levy", c),
            Command::Threshold(c) => ("threshold", c),
            Command::Tail(c) => ("tail", c),
            Command::Structure(c) => ("structure", c),
            Command::Compressible(c) => ("compressible", c),
            Command::Sweep(c) => ("sweep", c),
            Command::Smoothing(c) => ("smoothing", c),
            Command::Report(c) => ("report", c),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NetArg {
    E1,
    Elementary,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepArg {
    NonElementary,
    MaxAtom,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    P,
    Q,
}

/// Every flag is optional and overrides the config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// "ber:p", "rademacher", "uniform:a1,a2,...", inline JSON, or a JSON file.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub delta_prime: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub tau0: Option<f64>,
    #[arg(long)]
    pub levy_samples: Option<u64>,
    #[arg(long, value_enum)]
    pub net: Option<NetArg>,
    #[arg(long)]
    pub net_size: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, value_enum)]
    pub sweep_mode: Option<SweepArg>,
    /// Also count dominant-union hits (mc).
    #[arg(long)]
    pub union_check: bool,
    /// Window radius (levy).
    #[arg(long)]
    pub r: Option<f64>,
    /// Block scale N (smoothing).
    #[arg(long = "N")]
    pub big_n: Option<u64>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long)]
    pub k3: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',')]
    pub l_grid: Option<Vec<f64>>,
    /// Coefficient vector file: one entry per line or a JSON array (levy, threshold).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Enumeration budget in matrices (exact) or DP states (levy, threshold).
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
