//! Triplet sampling and margin training of the two encoder towers.
//!
//! Distance is cosine distance 1 - u.v on unit embeddings, matching the
//! similarity used at query time. The optimizer is Adam with the
//! conventional moment constants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::feature::{featurize_flow, FeatureTensor, WindowSpec};
use crate::math::{self, dot};
use crate::model::{backward, embed_flow, Dims, ModelParams};
use crate::rng::{mix, subrng, RngExt};
use crate::trace::{Dataset, Role};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Featurized ingress/egress pair for one complete session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFeatures {
    pub session_id: String,
    pub ingress: FeatureTensor,
    pub egress: FeatureTensor,
}

/// Featurizes every complete session of a dataset, ordered by session id.
pub fn build_feature_store(ds: &Dataset, spec: &WindowSpec) -> Vec<SessionFeatures> {
    let mut out = Vec::new();
    for session in ds.complete_sessions() {
        let find = |role: Role| {
            ds.flows
                .iter()
                .find(|f| f.session_id == session && f.role == role)
                .expect("complete session")
        };
        out.push(SessionFeatures {
            ingress: featurize_flow(find(Role::Ingress), spec),
            egress: featurize_flow(find(Role::Egress), spec),
            session_id: session,
        });
    }
    out
}

/// A triplet as indices into a session feature store: the anchor session
/// supplies both anchor (ingress) and positive (egress); the negative is
/// another session's egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub negative: usize,
}

/// Gradients of the triplet loss with respect to the three unit
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Hinge loss max(0, d(a,p) - d(a,n) + m) with d = 1 - cosine, plus its
/// exact gradients (zero when the hinge is inactive).
pub fn triplet_loss(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> (f64, TripletGrads) {
    let d = a.len();
    let raw = (1.0 - dot(a, p)) - (1.0 - dot(a, n)) + margin;
    if raw <= 0.0 {
        return (
            0.0,
            TripletGrads {
                anchor: vec![0.0; d],
                positive: vec![0.0; d],
                negative: vec![0.0; d],
            },
        );
    }
    let grads = TripletGrads {
        anchor: (0..d).map(|k| n[k] - p[k]).collect(),
        positive: a.iter().map(|v| -v).collect(),
        negative: a.to_vec(),
    };
    (raw, grads)
}

/// Current-epoch embeddings used for semi-hard negative mining.
pub struct MiningContext<'a> {
    /// Anchor-side (ingress) embeddings, aligned with the store.
    pub anchors: &'a [Vec<f64>],
    /// Candidate-side (egress) embeddings, aligned with the store.
    pub egress: &'a [Vec<f64>],
}

/// Draws a batch of triplets.
///
/// Anchors are uniform over sessions. Each negative is uniform over the
/// other sessions, except that with probability `hard_frac` (and mining
/// embeddings available) it is the non-matching egress nearest to the
/// anchor under the current model.
pub fn sample_triplets<R: RngCore>(
    n_sessions: usize,
    batch: usize,
    hard_frac: f64,
    mining: Option<&MiningContext>,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    if n_sessions < 2 {
        return Err(Error::Sampling(format!(
            "need at least 2 complete sessions, got {n_sessions}"
        )));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let anchor = rng.below(n_sessions as u64) as usize;
        let hard = rng.uniform() < hard_frac;
        let negative = match (hard, mining) {
            (true, Some(ctx)) => {
                let q = &ctx.anchors[anchor];
                let mut best = usize::MAX;
                let mut best_sim = f64::NEG_INFINITY;
                for (j, e) in ctx.egress.iter().enumerate() {
                    if j == anchor {
                        continue;
                    }
                    let sim = dot(q, e);
                    if sim > best_sim {
                        best_sim = sim;
                        best = j;
                    }
                }
                best
            }
            _ => {
                // Uniform over the n-1 non-anchor sessions.
                let k = rng.below(n_sessions as u64 - 1) as usize;
                if k >= anchor {
                    k + 1
                } else {
                    k
                }
            }
        };
        out.push(Triplet { anchor, negative });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: Dims,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_loss: f64,
    pub hard_negative_frac: f64,
    /// Share one set of encoder weights between the two roles.
    pub tied_weights: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: Dims::default(),
            margin: 0.2,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            target_loss: 0.004,
            hard_negative_frac: 0.5,
            tied_weights: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config("margin must be > 0".into()));
        }
        if self.target_loss < 0.0 {
            return Err(Error::Config("target_loss must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_frac) {
            return Err(Error::Config("hard_negative_frac must lie in [0, 1]".into()));
        }
        if self.batch_size < 1 || self.learning_rate <= 0.0 {
            return Err(Error::Config("batch_size >= 1 and learning_rate > 0 required".into()));
        }
        Ok(())
    }
}

/// Adam first/second-moment accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(dims: Dims) -> Self {
        AdamState {
            m: ModelParams::zeros(dims),
            v: ModelParams::zeros(dims),
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(BETA1, self.t as f64);
        let bc2 = 1.0 - libm::pow(BETA2, self.t as f64);
        let g_views: Vec<Vec<f64>> = grads
            .matrices()
            .iter()
            .map(|(_, s, _, _)| s.to_vec())
            .collect();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        let ps = params.slices_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(g_views.iter()) {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub ingress: ModelParams,
    pub egress: ModelParams,
    pub adam_ingress: AdamState,
    pub adam_egress: AdamState,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

pub struct Trainer<'a> {
    store: &'a [SessionFeatures],
    cfg: TrainConfig,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(store: &'a [SessionFeatures], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if store.len() < 2 {
            return Err(Error::Sampling(format!(
                "training needs at least 2 complete sessions, got {}",
                store.len()
            )));
        }
        let ingress = ModelParams::init(cfg.dims, mix(&[cfg.seed, 1]));
        let egress = if cfg.tied_weights {
            ingress.clone()
        } else {
            ModelParams::init(cfg.dims, mix(&[cfg.seed, 2]))
        };
        let state = TrainState {
            adam_ingress: AdamState::new(cfg.dims),
            adam_egress: AdamState::new(cfg.dims),
            ingress,
            egress,
            epoch: 0,
            loss_history: Vec::new(),
        };
        Ok(Trainer { store, cfg, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// True once the epoch-mean loss has met the target or the epoch
    /// budget is spent.
    pub fn done(&self) -> bool {
        self.state.epoch >= self.cfg.max_epochs
            || self
                .state
                .loss_history
                .last()
                .is_some_and(|l| *l <= self.cfg.target_loss)
    }

    /// One pass: optional mining refresh, then minibatch Adam updates.
    /// Returns the epoch-mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let n = self.store.len();
        let epoch = self.state.epoch;
        let mut rng = subrng(self.cfg.seed, mix(&[0x7472_6169_6e, epoch as u64]));

        let mined: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = if self.cfg.hard_negative_frac > 0.0 {
            let mut anchors = Vec::with_capacity(n);
            let mut egress = Vec::with_capacity(n);
            for s in self.store {
                anchors.push(embed_flow(&self.state.ingress, &s.ingress)?.0 .0);
                egress.push(embed_flow(&self.state.egress, &s.egress)?.0 .0);
            }
            Some((anchors, egress))
        } else {
            None
        };

        let n_batches = n.div_ceil(self.cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for _ in 0..n_batches {
            let ctx = mined.as_ref().map(|(a, e)| MiningContext {
                anchors: a,
                egress: e,
            });
            let triplets = sample_triplets(
                n,
                self.cfg.batch_size,
                self.cfg.hard_negative_frac,
                ctx.as_ref(),
                &mut rng,
            )?;

            let mut grads_in = self.state.ingress.zeros_like();
            let mut grads_eg = self.state.egress.zeros_like();
            for t in &triplets {
                let anchor = &self.store[t.anchor];
                let negative = &self.store[t.negative];
                let (ea, ca) = embed_flow(&self.state.ingress, &anchor.ingress)?;
                let (ep, cp) = embed_flow(&self.state.egress, &anchor.egress)?;
                let (en, cn) = embed_flow(&self.state.egress, &negative.egress)?;
                let (loss, g) = triplet_loss(&ea.0, &ep.0, &en.0, self.cfg.margin);
                loss_sum += loss;
                loss_count += 1;
                if loss > 0.0 {
                    grads_in.add_scaled(&backward(&self.state.ingress, &ca, &g.anchor)?, 1.0);
                    grads_eg.add_scaled(&backward(&self.state.egress, &cp, &g.positive)?, 1.0);
                    grads_eg.add_scaled(&backward(&self.state.egress, &cn, &g.negative)?, 1.0);
                }
            }
            let scale = 1.0 / triplets.len() as f64;
            if self.cfg.tied_weights {
                grads_in.add_scaled(&grads_eg, 1.0);
                let mut combined = self.state.ingress.zeros_like();
                combined.add_scaled(&grads_in, scale);
                self.state
                    .adam_ingress
                    .update(&mut self.state.ingress, &combined, self.cfg.learning_rate);
                self.state.egress = self.state.ingress.clone();
            } else {
                let mut gi = self.state.ingress.zeros_like();
                gi.add_scaled(&grads_in, scale);
                let mut ge = self.state.egress.zeros_like();
                ge.add_scaled(&grads_eg, scale);
                self.state
                    .adam_ingress
                    .update(&mut self.state.ingress, &gi, self.cfg.learning_rate);
                self.state
                    .adam_egress
                    .update(&mut self.state.egress, &ge, self.cfg.learning_rate);
            }
        }

        let mean = loss_sum / loss_count as f64;
        if !mean.is_finite()
            || self.state.ingress.has_non_finite()
            || self.state.egress.has_non_finite()
        {
            return Err(Error::Training {
                epoch,
                message: "loss or parameters became non-finite".into(),
            });
        }
        self.state.loss_history.push(mean);
        self.state.epoch += 1;
        Ok(mean)
    }
}

/// Runs training to the target loss or the epoch budget.
pub fn train(store: &[SessionFeatures], cfg: TrainConfig) -> Result<TrainState> {
    let mut trainer = Trainer::new(store, cfg)?;
    while !trainer.done() {
        trainer.run_epoch()?;
    }
    Ok(trainer.state)
}
