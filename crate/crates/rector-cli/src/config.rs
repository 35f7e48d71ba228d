//! Flat key=value run configuration with dotted section keys, plus the
//! pipeline hash that ties artifacts together.
//!
//! The hash covers only the sections that change artifact contents
//! (window, model, train, gen, split, index); scenario parameters and
//! paths can vary without invalidating upstream artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rector_core::feature::WindowSpec;
use rector_core::model::Dims;
use rector_core::trace::SynthConfig;
use rector_core::train::TrainConfig;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub window: WindowSpec,
    pub dims: Dims,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_loss: f64,
    pub hard_negative_frac: f64,
    pub tied_weights: bool,
    pub gen: SynthConfig,
    pub train_fraction: f64,
    /// None selects sqrt(M) at build time.
    pub index_k: Option<usize>,
    pub index_n_probe: usize,
    pub scenario_n: usize,
    pub scenario_m: usize,
    pub scenario_sigmas: Vec<f64>,
    pub tau: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            window: WindowSpec::default(),
            dims: Dims {
                hidden: 32,
                attn: 16,
                embed: 32,
            },
            margin: 0.2,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            target_loss: 0.004,
            hard_negative_frac: 0.5,
            tied_weights: false,
            gen: SynthConfig::default(),
            train_fraction: 0.9,
            index_k: None,
            index_n_probe: 8,
            scenario_n: 500,
            scenario_m: 500,
            scenario_sigmas: vec![0.1, 0.3, 0.5, 0.8, 1.0],
            tau: 0.8,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value, got {line:?}", lineno + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
        }
        match key {
            "paths.out_dir" => self.out_dir = PathBuf::from(value),
            "window.w" => self.window.w = num(key, value)?,
            "window.seconds" => self.window.window_s = num(key, value)?,
            "window.l" => self.window.l = num(key, value)?,
            "model.hidden" => self.dims.hidden = num(key, value)?,
            "model.attn" => self.dims.attn = num(key, value)?,
            "model.embed" => self.dims.embed = num(key, value)?,
            "train.margin" => self.margin = num(key, value)?,
            "train.lr" => self.learning_rate = num(key, value)?,
            "train.batch" => self.batch_size = num(key, value)?,
            "train.epochs" => self.max_epochs = num(key, value)?,
            "train.target_loss" => self.target_loss = num(key, value)?,
            "train.hard_frac" => self.hard_negative_frac = num(key, value)?,
            "train.tied" => self.tied_weights = num(key, value)?,
            "gen.circuits" => self.gen.n_circuits = num(key, value)?,
            "gen.websites" => self.gen.n_websites = num(key, value)?,
            "gen.visits" => self.gen.visits_per_pair = num(key, value)?,
            "gen.latency" => self.gen.mean_latency_s = num(key, value)?,
            "gen.jitter" => self.gen.latency_jitter_s = num(key, value)?,
            "gen.drop" => self.gen.drop_prob = num(key, value)?,
            "gen.cell" => self.gen.cell_bytes = num(key, value)?,
            "gen.cap" => self.gen.duration_cap_s = num(key, value)?,
            "split.train_frac" => self.train_fraction = num(key, value)?,
            "index.k" => {
                self.index_k = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "index.n_probe" => self.index_n_probe = num(key, value)?,
            "scenario.n" => self.scenario_n = num(key, value)?,
            "scenario.m" => self.scenario_m = num(key, value)?,
            "scenario.tau" => self.tau = num(key, value)?,
            "scenario.sigma" => {
                let mut sigmas = Vec::new();
                for part in value.split(',') {
                    sigmas.push(num::<f64>(key, part.trim())?);
                }
                self.scenario_sigmas = sigmas;
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.w == 0 || self.window.l == 0 || self.window.window_s <= 0.0 {
            bail!("window section must be positive");
        }
        if self.dims.hidden == 0 || self.dims.attn == 0 || self.dims.embed == 0 {
            bail!("model dims must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("split.train_frac must lie in (0, 1)");
        }
        for &s in &self.scenario_sigmas {
            if !(s > 0.0 && s <= 1.0) {
                bail!("scenario.sigma values must lie in (0, 1], got {s}");
            }
        }
        if self.scenario_sigmas.is_empty() {
            bail!("scenario.sigma must list at least one value");
        }
        Ok(())
    }

    fn gen_text(&self) -> String {
        format!(
            "gen.circuits={}\ngen.websites={}\ngen.visits={}\ngen.latency={}\n\
             gen.jitter={}\ngen.drop={}\ngen.cell={}\ngen.cap={}\n",
            self.gen.n_circuits,
            self.gen.n_websites,
            self.gen.visits_per_pair,
            self.gen.mean_latency_s,
            self.gen.latency_jitter_s,
            self.gen.drop_prob,
            self.gen.cell_bytes,
            self.gen.duration_cap_s,
        )
    }

    fn split_text(&self) -> String {
        format!("{}split.train_frac={}\n", self.gen_text(), self.train_fraction)
    }

    fn window_text(&self) -> String {
        format!(
            "window.w={}\nwindow.seconds={}\nwindow.l={}\n",
            self.window.w, self.window.window_s, self.window.l
        )
    }

    fn train_text(&self) -> String {
        format!(
            "{}{}model.hidden={}\nmodel.attn={}\nmodel.embed={}\n\
             train.margin={}\ntrain.lr={}\ntrain.batch={}\ntrain.epochs={}\n\
             train.target_loss={}\ntrain.hard_frac={}\ntrain.tied={}\n",
            self.split_text(),
            self.window_text(),
            self.dims.hidden,
            self.dims.attn,
            self.dims.embed,
            self.margin,
            self.learning_rate,
            self.batch_size,
            self.max_epochs,
            self.target_loss,
            self.hard_negative_frac,
            self.tied_weights,
        )
    }

    fn digest(text: &str) -> String {
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    /// Hash embedded in generated datasets: the gen section only.
    pub fn gen_hash(&self) -> String {
        Self::digest(&self.gen_text())
    }

    /// Hash for the train/test splits: gen plus the split fraction.
    pub fn split_hash(&self) -> String {
        Self::digest(&self.split_text())
    }

    /// Hash for feature dumps: the split chain plus windowing.
    pub fn feature_hash(&self) -> String {
        Self::digest(&format!("{}{}", self.split_text(), self.window_text()))
    }

    /// Hash for checkpoints, embeddings, indexes, and reports: the full
    /// chain through model and training settings.
    pub fn train_hash(&self) -> String {
        Self::digest(&self.train_text())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dims: self.dims,
            margin: self.margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            target_loss: self.target_loss,
            hard_negative_frac: self.hard_negative_frac,
            tied_weights: self.tied_weights,
            seed,
        }
    }
}

/// Worker count for parallel sections: RECTOR_THREADS if set, else the
/// machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("RECTOR_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
