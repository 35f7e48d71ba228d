mod commands;
mod config;
mod errors;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Flow-correlation pipeline: synthetic traces, embedding training,
/// indexed matching, and evaluation.
#[derive(Parser)]
#[command(name = "rector", version, about)]
struct Cli {
    /// Key=value config file with dotted section keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for this command's randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Artifact directory (overrides paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Proceed despite config-hash mismatches on input artifacts.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        circuits: Option<u32>,
        #[arg(long)]
        websites: Option<u32>,
        #[arg(long)]
        visits: Option<u32>,
    },
    /// Split the dataset into circuit-disjoint train/test sides.
    Split {
        #[arg(long)]
        train_frac: Option<f64>,
    },
    /// Write the binary feature dump for a dataset file.
    Featurize {
        /// Dataset to featurize (defaults to the test split).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the two embedding towers on the train split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write a checkpoint every this many epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Embed the complete sessions of a dataset with a checkpoint.
    Embed {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build the egress-side inverted-file index.
    Index {
        /// Cluster count (defaults to index.k, or sqrt(M)).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Match every ingress embedding against the index.
    Match {
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        n_probe: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run the sigma-sweep evaluation over the embeddings.
    Eval {
        /// Mapping ratio; repeat for a sweep (defaults to config list).
        #[arg(long = "sigma")]
        sigmas: Vec<f64>,
        #[arg(short = 'N', long)]
        n: Option<usize>,
        #[arg(short = 'M', long)]
        m: Option<usize>,
    },
    /// Measure matcher cost against flow volume.
    Bench {
        /// Comma-separated scenario sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Embedding width for the synthetic scenarios.
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let seed = cli.seed;
    let force = cli.force;
    match cli.cmd {
        Cmd::Gen { circuits, websites, visits } => {
            if let Some(c) = circuits {
                cfg.gen.n_circuits = c;
            }
            if let Some(w) = websites {
                cfg.gen.n_websites = w;
            }
            if let Some(v) = visits {
                cfg.gen.visits_per_pair = v;
            }
            commands::gen(&cfg, seed)
        }
        Cmd::Split { train_frac } => {
            if let Some(f) = train_frac {
                cfg.train_fraction = f;
            }
            cfg.validate()?;
            commands::split(&cfg, seed, force)
        }
        Cmd::Featurize { input } => {
            let input = input.unwrap_or_else(|| cfg.out_dir.join("test.jsonl"));
            commands::featurize(&cfg, &input, force)
        }
        Cmd::Train { epochs, checkpoint_every } => {
            if let Some(e) = epochs {
                cfg.max_epochs = e;
            }
            commands::train(&cfg, seed, force, checkpoint_every)
        }
        Cmd::Embed { input } => {
            let input = input.unwrap_or_else(|| cfg.out_dir.join("test.jsonl"));
            commands::embed(&cfg, &input, force)
        }
        Cmd::Index { k } => commands::index(&cfg, seed, force, k),
        Cmd::Match { tau, n_probe, top_k } => {
            let tau = tau.unwrap_or(cfg.tau);
            commands::run_match(&cfg, force, tau, n_probe, top_k)
        }
        Cmd::Eval { sigmas, n, m } => {
            let sigmas = if sigmas.is_empty() {
                cfg.scenario_sigmas.clone()
            } else {
                sigmas
            };
            for &s in &sigmas {
                if !(s > 0.0 && s <= 1.0) {
                    anyhow::bail!("sigma {s} outside (0, 1]");
                }
            }
            let n = n.unwrap_or(cfg.scenario_n);
            let m = m.unwrap_or(cfg.scenario_m);
            commands::eval(&cfg, seed, force, &sigmas, n, m)
        }
        Cmd::Bench { sizes, sigma, dim } => {
            let sizes = if sizes.is_empty() {
                vec![100, 250, 500, 1000, 2000]
            } else {
                sizes
            };
            commands::bench(&cfg, seed, &sizes, sigma.unwrap_or(0.1), dim)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(errors::exit_code(&err) as u8)
        }
    }
}
