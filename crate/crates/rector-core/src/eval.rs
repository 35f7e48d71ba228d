//! Matching scenarios, pairwise and index-assisted matchers, ROC math,
//! and the comparison-count scaling benchmark.
//!
//! A scenario holds N ingress and M egress embeddings; a fraction sigma
//! of min(N, M) sessions appear on both sides as true pairs, the rest
//! are noise flows whose counterpart was withheld.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ann::{self, IvfIndex};
use crate::feature::WindowSpec;
use crate::math::{self, dot};
use crate::model::{embed_flow, Embedding, ModelParams};
use crate::rng::{subrng, RngExt};
use crate::trace::{Dataset, Role};
use crate::{Error, Result};

/// Both embeddings of one complete session, keyed by the flow ids the
/// matchers report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEmbedding {
    pub session_id: String,
    pub ingress_id: String,
    pub egress_id: String,
    pub ingress: Embedding,
    pub egress: Embedding,
}

/// Embeds every complete session of a dataset with the two towers.
pub fn embed_sessions(
    ds: &Dataset,
    spec: &WindowSpec,
    ingress: &ModelParams,
    egress: &ModelParams,
) -> Result<Vec<SessionEmbedding>> {
    let mut out = Vec::new();
    for session in ds.complete_sessions() {
        let flow = |role: Role| {
            ds.flows
                .iter()
                .find(|f| f.session_id == session && f.role == role)
                .expect("complete session")
        };
        let fi = flow(Role::Ingress);
        let fe = flow(Role::Egress);
        let (ei, _) = embed_flow(ingress, &crate::feature::featurize_flow(fi, spec))?;
        let (ee, _) = embed_flow(egress, &crate::feature::featurize_flow(fe, spec))?;
        out.push(SessionEmbedding {
            session_id: session,
            ingress_id: fi.flow_id.clone(),
            egress_id: fe.flow_id.clone(),
            ingress: ei,
            egress: ee,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ingress: Vec<(String, Embedding)>,
    pub egress: Vec<(String, Embedding)>,
    pub true_pairs: BTreeSet<(String, String)>,
    pub sigma: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.ingress.len()
    }

    pub fn m(&self) -> usize {
        self.egress.len()
    }

    pub fn is_true_pair(&self, i: usize, j: usize) -> bool {
        self.true_pairs
            .contains(&(self.ingress[i].0.clone(), self.egress[j].0.clone()))
    }
}

/// Number of distinct sessions a scenario consumes.
pub fn sessions_required(n: usize, m: usize, sigma: f64) -> usize {
    let n_true = math::round(sigma * n.min(m) as f64) as usize;
    n_true + (n - n_true) + (m - n_true)
}

/// Draws `round(sigma * min(N, M))` sessions as true pairs and fills the
/// remaining slots with one-sided noise flows whose counterpart is
/// withheld from the other side.
pub fn build_scenario(
    store: &[SessionEmbedding],
    n: usize,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Scenario> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Scenario(format!("sigma {sigma} outside (0, 1]")));
    }
    if n == 0 || m == 0 {
        return Err(Error::Scenario("N and M must be positive".into()));
    }
    let n_true = math::round(sigma * n.min(m) as f64) as usize;
    let required = sessions_required(n, m, sigma);
    if store.len() < required {
        return Err(Error::Scenario(format!(
            "pool of {} sessions cannot fill N={n}, M={m} at sigma={sigma}: \
             need {n_true} paired + {} ingress-only + {} egress-only = {required}",
            store.len(),
            n - n_true,
            m - n_true,
        )));
    }

    let mut order: Vec<usize> = (0..store.len()).collect();
    let mut rng = subrng(seed, 0x7363_656e); // "scen"
    rng.shuffle(&mut order);

    let mut ingress = Vec::with_capacity(n);
    let mut egress = Vec::with_capacity(m);
    let mut true_pairs = BTreeSet::new();
    for &idx in order.iter().take(n_true) {
        let s = &store[idx];
        ingress.push((s.ingress_id.clone(), s.ingress.clone()));
        egress.push((s.egress_id.clone(), s.egress.clone()));
        true_pairs.insert((s.ingress_id.clone(), s.egress_id.clone()));
    }
    for &idx in order.iter().skip(n_true).take(n - n_true) {
        let s = &store[idx];
        ingress.push((s.ingress_id.clone(), s.ingress.clone()));
    }
    for &idx in order.iter().skip(n_true + (n - n_true)).take(m - n_true) {
        let s = &store[idx];
        egress.push((s.egress_id.clone(), s.egress.clone()));
    }
    Ok(Scenario {
        ingress,
        egress,
        true_pairs,
        sigma,
        seed,
    })
}

/// One scored ingress/egress candidate; indices into the scenario sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub ingress: u32,
    pub egress: u32,
    pub score: f64,
    pub declared: bool,
}

/// Scores every one of the N*M pairs. Comparison count is exactly N*M.
pub fn match_pairwise(sc: &Scenario, tau: f64) -> (Vec<MatchDecision>, usize) {
    let mut decisions = Vec::with_capacity(sc.n() * sc.m());
    for (i, (_, a)) in sc.ingress.iter().enumerate() {
        for (j, (_, b)) in sc.egress.iter().enumerate() {
            let score = dot(a.as_slice(), b.as_slice());
            decisions.push(MatchDecision {
                ingress: i as u32,
                egress: j as u32,
                score,
                declared: score >= tau,
            });
        }
    }
    let count = decisions.len();
    (decisions, count)
}

/// Queries the egress index once per ingress flow and thresholds the
/// returned hits. Pairs in lists that were never probed are never
/// declared. Comparison count is the total number of scanned candidates.
pub fn match_ann(
    sc: &Scenario,
    index: &IvfIndex,
    n_probe: usize,
    tau: f64,
    top_k: usize,
) -> Result<(Vec<MatchDecision>, usize)> {
    if index.len() != sc.m() {
        return Err(Error::Argument(format!(
            "index holds {} embeddings but the scenario has {} egress flows",
            index.len(),
            sc.m()
        )));
    }
    let by_id: BTreeMap<&str, u32> = sc
        .egress
        .iter()
        .enumerate()
        .map(|(j, (id, _))| (id.as_str(), j as u32))
        .collect();
    let mut decisions = Vec::new();
    let mut comparisons = 0;
    for (i, (_, a)) in sc.ingress.iter().enumerate() {
        let (hits, scanned) = ann::query(index, a, n_probe, top_k)?;
        comparisons += scanned;
        for hit in hits {
            let j = *by_id.get(hit.flow_id.as_str()).ok_or_else(|| {
                Error::Argument(format!("index id {} not in scenario", hit.flow_id))
            })?;
            decisions.push(MatchDecision {
                ingress: i as u32,
                egress: j,
                score: hit.score,
                declared: hit.score >= tau,
            });
        }
    }
    Ok((decisions, comparisons))
}

/// Labels each decision's pair as true or noise, for the ROC sweep.
pub fn label_scores(sc: &Scenario, decisions: &[MatchDecision]) -> Vec<(f64, bool)> {
    decisions
        .iter()
        .map(|d| {
            (
                d.score,
                sc.is_true_pair(d.ingress as usize, d.egress as usize),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Sweeps the threshold over every distinct score, descending, plus an
/// initial tau = +inf point at (0, 0).
///
/// TPR is taken over `n_true` (all true pairs, scored or not, so an
/// index path that never scans a true pair pays for it here). The FPR
/// denominator `n_neg` is the caller's convention: scored negatives
/// only, or all N*M - n_true pairs.
pub fn roc_sweep(scored: &[(f64, bool)], n_true: usize, n_neg: usize) -> Result<Vec<RocPoint>> {
    if scored.is_empty() {
        return Err(Error::Sweep("no scored pairs".into()));
    }
    if n_true == 0 || n_neg == 0 {
        return Err(Error::Sweep(format!(
            "degenerate denominators: {n_true} true pairs, {n_neg} negatives"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut roc = Vec::new();
    roc.push(RocPoint {
        tau: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    });
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == tau {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            tau,
            tpr: tp as f64 / n_true as f64,
            fpr: fp as f64 / n_neg as f64,
        });
    }
    Ok(roc)
}

/// Step-function lookup: max TPR over points with FPR <= target.
pub fn tpr_at_fpr(roc: &[RocPoint], fpr_target: f64) -> f64 {
    roc.iter()
        .filter(|p| p.fpr <= fpr_target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub matcher: String,
    pub n_true: usize,
    pub comparisons: usize,
    pub roc: Vec<RocPoint>,
    /// (FPR target, TPR) rows under the all-pairs FPR convention.
    pub tpr_at: Vec<(f64, f64)>,
    /// Same rows over scored negatives only; equal to `tpr_at` for the
    /// pairwise matcher, looser for the index path.
    pub tpr_at_scored: Vec<(f64, f64)>,
    /// Wall seconds per phase; filled by the caller that owns a clock.
    pub timings: BTreeMap<String, f64>,
}

pub const DEFAULT_FPR_TARGETS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

/// Runs one matcher over a scenario and assembles the report. The ROC
/// uses the all-pairs negative denominator.
pub fn evaluate(
    sc: &Scenario,
    decisions: &[MatchDecision],
    comparisons: usize,
    matcher: &str,
) -> Result<EvalReport> {
    let scored = label_scores(sc, decisions);
    let n_true = sc.true_pairs.len();
    let all_neg = sc.n() * sc.m() - n_true;
    let scored_neg = scored.iter().filter(|(_, t)| !t).count();
    let roc = roc_sweep(&scored, n_true, all_neg)?;
    let roc_scored = roc_sweep(&scored, n_true, scored_neg.max(1))?;
    let tpr_at = DEFAULT_FPR_TARGETS
        .iter()
        .map(|&t| (t, tpr_at_fpr(&roc, t)))
        .collect();
    let tpr_at_scored = DEFAULT_FPR_TARGETS
        .iter()
        .map(|&t| (t, tpr_at_fpr(&roc_scored, t)))
        .collect();
    Ok(EvalReport {
        sigma: sc.sigma,
        n: sc.n(),
        m: sc.m(),
        seed: sc.seed,
        matcher: matcher.into(),
        n_true,
        comparisons,
        roc,
        tpr_at,
        tpr_at_scored,
        timings: BTreeMap::new(),
    })
}

/// A scenario over synthetic unit embeddings: paired ingress vectors sit
/// near their egress partner, noise is isotropic. Used by the scaling
/// bench and anywhere a trained model is overkill.
pub fn synthetic_scenario(n: usize, m: usize, sigma: f64, dim: usize, seed: u64) -> Result<Scenario> {
    let required = sessions_required(n, m, sigma);
    let mut rng = subrng(seed, 0x73796e); // "syn"
    let mut store = Vec::with_capacity(required);
    for s in 0..required {
        let mut eg: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = math::l2_norm(&eg);
        for v in eg.iter_mut() {
            *v /= norm;
        }
        let mut ig: Vec<f64> = eg.iter().map(|v| v + 0.1 * rng.normal()).collect();
        let norm = math::l2_norm(&ig);
        for v in ig.iter_mut() {
            *v /= norm;
        }
        store.push(SessionEmbedding {
            session_id: format!("s{s:06}"),
            ingress_id: format!("s{s:06}_in"),
            egress_id: format!("s{s:06}_eg"),
            ingress: Embedding(ig),
            egress: Embedding(eg),
        });
    }
    build_scenario(&store, n, m, sigma, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub n: usize,
    pub pairwise_comparisons: usize,
    pub ann_comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub points: Vec<ScalePoint>,
    pub pairwise_slope: f64,
    pub ann_slope: f64,
}

/// Comparison-count half of the scaling bench: fresh seeded scenarios at
/// each size, both matchers, log-log least-squares slopes.
///
/// The index is built with `scaling_cluster_count` clusters (M / log2 M)
/// rather than the default sqrt(M), which keeps probed-list sizes
/// logarithmic and the total cost near-linear.
pub fn scaling_comparisons(
    counts: &[usize],
    sigma: f64,
    dim: usize,
    n_probe: usize,
    seed: u64,
) -> Result<ScalingTable> {
    if counts.len() < 3 {
        return Err(Error::Bench(format!(
            "need at least 3 sizes, got {}",
            counts.len()
        )));
    }
    if counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Bench("sizes must be strictly ascending".into()));
    }
    let mut points = Vec::new();
    for (i, &n) in counts.iter().enumerate() {
        let sc = synthetic_scenario(n, n, sigma, dim, seed.wrapping_add(i as u64))?;
        let (_, pairwise) = match_pairwise(&sc, 0.9);
        let k = ann::scaling_cluster_count(n);
        let embs: Vec<(String, Embedding)> = sc.egress.clone();
        let index = ann::build_index(&embs, Some(k), seed)?;
        let (_, approx) = match_ann(&sc, &index, n_probe.min(k), 0.9, n)?;
        points.push(ScalePoint {
            n,
            pairwise_comparisons: pairwise,
            ann_comparisons: approx,
        });
    }
    let pw: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (math::ln(p.n as f64), math::ln(p.pairwise_comparisons as f64)))
        .collect();
    let an: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (math::ln(p.n as f64), math::ln(p.ann_comparisons as f64)))
        .collect();
    Ok(ScalingTable {
        points,
        pairwise_slope: math::ls_slope(&pw),
        ann_slope: math::ls_slope(&an),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn make_store(count: usize, dim: usize, seed: u64) -> Vec<SessionEmbedding> {
        let mut rng = subrng(seed, 99);
        (0..count)
            .map(|s| {
                let mut eg: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let norm = math::l2_norm(&eg);
                for v in eg.iter_mut() {
                    *v /= norm;
                }
                let mut ig: Vec<f64> = eg.iter().map(|v| v + 0.1 * rng.normal()).collect();
                let norm = math::l2_norm(&ig);
                for v in ig.iter_mut() {
                    *v /= norm;
                }
                SessionEmbedding {
                    session_id: format!("s{s:04}"),
                    ingress_id: format!("s{s:04}_in"),
                    egress_id: format!("s{s:04}_eg"),
                    ingress: Embedding(ig),
                    egress: Embedding(eg),
                }
            })
            .collect()
    }

    #[test]
    fn full_mapping_has_no_noise() {
        let store = make_store(60, 8, 1);
        let sc = build_scenario(&store, 50, 50, 1.0, 7).unwrap();
        assert_eq!(sc.true_pairs.len(), 50);
        assert_eq!(sc.n(), 50);
        assert_eq!(sc.m(), 50);
        let paired_in: BTreeSet<&String> = sc.true_pairs.iter().map(|(a, _)| a).collect();
        assert!(sc.ingress.iter().all(|(id, _)| paired_in.contains(id)));
    }

    #[test]
    fn sparse_mapping_counts() {
        let store = make_store(950, 4, 2);
        let sc = build_scenario(&store, 500, 500, 0.1, 3).unwrap();
        assert_eq!(sc.true_pairs.len(), 50);
        assert_eq!(sc.n(), 500);
        assert_eq!(sc.m(), 500);
        // 450 unmatched per side.
        let paired_in: BTreeSet<&String> = sc.true_pairs.iter().map(|(a, _)| a).collect();
        let unmatched = sc.ingress.iter().filter(|(id, _)| !paired_in.contains(id)).count();
        assert_eq!(unmatched, 450);
    }

    #[test]
    fn scenario_is_deterministic() {
        let store = make_store(100, 6, 5);
        let a = build_scenario(&store, 40, 60, 0.5, 11).unwrap();
        let b = build_scenario(&store, 40, 60, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let c = build_scenario(&store, 40, 60, 0.5, 12).unwrap();
        assert_ne!(a.ingress, c.ingress);
    }

    #[test]
    fn scenario_accounting() {
        let store = make_store(200, 4, 8);
        for (n, m, sigma) in [(30, 50, 0.3), (50, 30, 0.8), (40, 40, 1.0)] {
            let sc = build_scenario(&store, n, m, sigma, 1).unwrap();
            let n_true = sc.true_pairs.len();
            assert_eq!(n_true, math::round(sigma * n.min(m) as f64) as usize);
            let paired_in: BTreeSet<&String> = sc.true_pairs.iter().map(|(a, _)| a).collect();
            let paired_eg: BTreeSet<&String> = sc.true_pairs.iter().map(|(_, b)| b).collect();
            let noise_in = sc.ingress.iter().filter(|(id, _)| !paired_in.contains(id)).count();
            let noise_eg = sc.egress.iter().filter(|(id, _)| !paired_eg.contains(id)).count();
            assert_eq!(n_true + noise_in, n);
            assert_eq!(n_true + noise_eg, m);
            // No id sits in two pairs, no counterpart of a noise flow leaked in.
            assert_eq!(paired_in.len(), n_true);
            assert_eq!(paired_eg.len(), n_true);
        }
    }

    #[test]
    fn scenario_pool_too_small() {
        let store = make_store(10, 4, 3);
        let err = build_scenario(&store, 20, 20, 0.5, 0).unwrap_err();
        match err {
            Error::Scenario(msg) => assert!(msg.contains("30"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(build_scenario(&store, 5, 5, 0.0, 0).is_err());
        assert!(build_scenario(&store, 5, 5, 1.5, 0).is_err());
    }

    #[test]
    fn pairwise_counts_and_thresholds() {
        let sc = synthetic_scenario(10, 10, 1.0, 4, 1).unwrap();
        let (decisions, count) = match_pairwise(&sc, 0.5);
        assert_eq!(count, 100);
        assert_eq!(decisions.len(), 100);
        let (all, _) = match_pairwise(&sc, -1.0);
        assert!(all.iter().all(|d| d.declared));
        let (none, _) = match_pairwise(&sc, 1.0 + 1e-9);
        assert!(none.iter().all(|d| !d.declared));
    }

    #[test]
    fn ann_exhaustive_probe_matches_pairwise() {
        let sc = synthetic_scenario(20, 30, 0.5, 8, 4).unwrap();
        let index = ann::build_index(&sc.egress, None, 4).unwrap();
        let (ann_dec, comparisons) = match_ann(&sc, &index, index.k, 0.8, sc.m()).unwrap();
        assert_eq!(comparisons, sc.n() * sc.m());
        let (pw_dec, _) = match_pairwise(&sc, 0.8);
        let key = |d: &MatchDecision| (d.ingress, d.egress);
        let mut a: Vec<_> = ann_dec.iter().map(|d| (key(d), d.score, d.declared)).collect();
        let mut b: Vec<_> = pw_dec.iter().map(|d| (key(d), d.score, d.declared)).collect();
        a.sort_by(|x, y| x.0.cmp(&y.0));
        b.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(a, b);
    }

    #[test]
    fn ann_declared_set_is_contained_in_pairwise() {
        let sc = synthetic_scenario(40, 40, 0.5, 8, 6).unwrap();
        let index = ann::build_index(&sc.egress, Some(6), 6).unwrap();
        let tau = 0.7;
        let (ann_dec, comparisons) = match_ann(&sc, &index, 2, tau, sc.m()).unwrap();
        assert!(comparisons < sc.n() * sc.m());
        let (pw_dec, _) = match_pairwise(&sc, tau);
        let declared_pw: BTreeSet<(u32, u32)> = pw_dec
            .iter()
            .filter(|d| d.declared)
            .map(|d| (d.ingress, d.egress))
            .collect();
        for d in ann_dec.iter().filter(|d| d.declared) {
            assert!(declared_pw.contains(&(d.ingress, d.egress)));
        }
    }

    #[test]
    fn ann_top1_tracks_pairwise_top1() {
        let sc = synthetic_scenario(200, 200, 0.5, 16, 9).unwrap();
        let k = ann::auto_k(sc.m());
        let index = ann::build_index(&sc.egress, Some(k), 9).unwrap();
        let (ann_dec, _) = match_ann(&sc, &index, 8.min(k), -1.0, 1).unwrap();
        let (pw_dec, _) = match_pairwise(&sc, -1.0);
        // Pairwise top-1 per ingress.
        let mut best: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
        for d in &pw_dec {
            let e = best.entry(d.ingress).or_insert((f64::NEG_INFINITY, 0));
            if d.score > e.0 {
                *e = (d.score, d.egress);
            }
        }
        let paired_idx: BTreeSet<u32> = (0..sc.n() as u32)
            .filter(|&i| (0..sc.m()).any(|j| sc.is_true_pair(i as usize, j)))
            .collect();
        let mut differ = 0;
        for &i in &paired_idx {
            let ann_top = ann_dec.iter().find(|d| d.ingress == i).map(|d| d.egress);
            if ann_top != Some(best[&i].1) {
                differ += 1;
            }
        }
        assert!(
            differ * 10 <= paired_idx.len(),
            "{differ} of {} true-pair queries disagree",
            paired_idx.len()
        );
    }

    #[test]
    fn roc_separated_scores() {
        let scored = vec![(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        let roc = roc_sweep(&scored, 2, 2).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(roc[0].tpr, 0.0);
        assert_eq!(roc[0].fpr, 0.0);
        let last = roc.last().unwrap();
        assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
    }

    #[test]
    fn roc_all_equal_scores() {
        let scored = vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        let roc = roc_sweep(&scored, 2, 2).unwrap();
        assert_eq!(roc.len(), 2);
        assert_eq!((roc[0].tpr, roc[0].fpr), (0.0, 0.0));
        assert_eq!((roc[1].tpr, roc[1].fpr), (1.0, 1.0));
    }

    #[test]
    fn roc_matches_enumeration_oracle() {
        let scored = vec![
            (0.9, true),
            (0.7, false),
            (0.7, true),
            (0.4, true),
            (0.2, false),
            (0.1, false),
        ];
        let roc = roc_sweep(&scored, 3, 3).unwrap();
        // Oracle: for each distinct score as tau, count >= tau directly.
        for p in roc.iter().skip(1) {
            let tp = scored.iter().filter(|(s, t)| *t && *s >= p.tau).count();
            let fp = scored.iter().filter(|(s, t)| !*t && *s >= p.tau).count();
            assert_eq!(p.tpr, tp as f64 / 3.0);
            assert_eq!(p.fpr, fp as f64 / 3.0);
        }
        let mut taus: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        assert_eq!(roc.len(), taus.len() + 1);
    }

    #[test]
    fn roc_is_monotone() {
        let sc = synthetic_scenario(50, 50, 0.5, 8, 13).unwrap();
        let (dec, _) = match_pairwise(&sc, 0.0);
        let scored = label_scores(&sc, &dec);
        let roc = roc_sweep(&scored, sc.true_pairs.len(), 2475).unwrap();
        for w in roc.windows(2) {
            assert!(w[1].tau <= w[0].tau);
            assert!(w[1].tpr >= w[0].tpr);
            assert!(w[1].fpr >= w[0].fpr);
        }
    }

    #[test]
    fn roc_rejects_empty() {
        assert!(matches!(roc_sweep(&[], 1, 1), Err(Error::Sweep(_))));
        assert!(matches!(roc_sweep(&[(0.5, true)], 0, 1), Err(Error::Sweep(_))));
    }

    #[test]
    fn tpr_lookup_conventions() {
        let roc = vec![
            RocPoint { tau: f64::INFINITY, tpr: 0.0, fpr: 0.0 },
            RocPoint { tau: 0.9, tpr: 0.8, fpr: 0.1 },
            RocPoint { tau: 0.1, tpr: 1.0, fpr: 1.0 },
        ];
        assert_eq!(tpr_at_fpr(&roc, 0.2), 0.8);
        assert_eq!(tpr_at_fpr(&roc, 0.05), 0.0);
        let with_zero = vec![
            RocPoint { tau: f64::INFINITY, tpr: 0.0, fpr: 0.0 },
            RocPoint { tau: 0.5, tpr: 0.6, fpr: 0.0 },
            RocPoint { tau: 0.1, tpr: 1.0, fpr: 1.0 },
        ];
        assert_eq!(tpr_at_fpr(&with_zero, 0.0), 0.6);
    }

    #[test]
    fn evaluate_report_is_consistent() {
        let sc = synthetic_scenario(60, 60, 0.5, 8, 21).unwrap();
        let (dec, comparisons) = match_pairwise(&sc, 0.8);
        let report = evaluate(&sc, &dec, comparisons, "pairwise").unwrap();
        assert_eq!(report.n_true, 30);
        assert_eq!(report.comparisons, 3600);
        assert_eq!(report.tpr_at.len(), DEFAULT_FPR_TARGETS.len());
        // Pairwise scores every pair, so both conventions agree.
        assert_eq!(report.tpr_at, report.tpr_at_scored);
        // Synthetic pairs sit at cosine ~0.995; matching should be easy.
        let (_, tpr20) = report.tpr_at.iter().find(|(t, _)| *t == 0.2).copied().unwrap();
        assert!(tpr20 > 0.9, "tpr@0.2 = {tpr20}");
    }

    #[test]
    fn pairwise_scaling_is_quadratic() {
        let table = scaling_comparisons(&[100, 200, 400], 0.1, 8, 8, 1).unwrap();
        let c: Vec<usize> = table.points.iter().map(|p| p.pairwise_comparisons).collect();
        assert_eq!(c, vec![10_000, 40_000, 160_000]);
        assert!((table.pairwise_slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ann_scaling_is_near_linear() {
        let table = scaling_comparisons(&[100, 250, 500, 1000, 2000], 0.1, 8, 8, 1).unwrap();
        assert!(table.ann_slope <= 1.3, "slope {}", table.ann_slope);
        assert!(table.ann_slope >= 0.9, "slope {}", table.ann_slope);
        for p in &table.points {
            assert!(p.ann_comparisons < p.pairwise_comparisons);
        }
    }

    #[test]
    fn scaling_rejects_bad_sizes() {
        assert!(matches!(
            scaling_comparisons(&[100, 200], 0.1, 4, 8, 0),
            Err(Error::Bench(_))
        ));
        assert!(matches!(
            scaling_comparisons(&[100, 100, 200], 0.1, 4, 8, 0),
            Err(Error::Bench(_))
        ));
    }
}
