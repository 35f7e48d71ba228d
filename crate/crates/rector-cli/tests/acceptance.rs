//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line. The trained-model criteria share one fixture
//! (synthetic corpus, circuit-disjoint split, eight training epochs) so
//! the whole file stays well inside the time budget.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use rector_core::ann;
use rector_core::eval::{self, SessionEmbedding};
use rector_core::feature::{FeatureTensor, WindowSpec};
use rector_core::model::{self, Dims, Embedding, ModelParams};
use rector_core::rng::{subrng, RngExt};
use rector_core::trace::{gen_synthetic, split_by_circuit, SynthConfig};
use rector_core::train::{train, TrainConfig};

use tempfile::TempDir;

fn report(criterion: u32, name: &str, ok: bool) {
    println!(
        "criterion {criterion} ({name}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({name}) failed");
}

/// Random feature tensor with per-window valid lengths, matching the
/// shapes the featurizer emits.
fn random_tensor(spec: &WindowSpec, seed: u64) -> FeatureTensor {
    let mut rng = subrng(seed, 0xacc);
    let mut ft = FeatureTensor::zeros(spec);
    for k in 0..spec.w {
        let n = rng.below(spec.l as u64 + 1) as usize;
        ft.valid_len[k] = n;
        for row in 0..n {
            let base = (k * spec.l + row) * 2;
            ft.values[base] = rng.range(-1.0, 1.0);
            ft.values[base + 1] = rng.range(0.0, spec.window_s);
        }
    }
    ft
}

struct Fixture {
    final_loss: f64,
    test_sessions: Vec<SessionEmbedding>,
    train_sessions: Vec<SessionEmbedding>,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let synth = SynthConfig {
            n_circuits: 40,
            n_websites: 20,
            visits_per_pair: 4,
            seed: 11,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&synth).unwrap();
        let (train_ds, test_ds) = split_by_circuit(&ds, 0.9, 11).unwrap();
        let spec = WindowSpec::default();
        let store = rector_core::train::build_feature_store(&train_ds, &spec);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            hard_negative_frac: 0.0,
            max_epochs: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let state = train(&store, cfg).unwrap();
        let final_loss = *state.loss_history.last().unwrap();
        let test_sessions =
            eval::embed_sessions(&test_ds, &spec, &state.ingress, &state.egress).unwrap();
        let train_sessions =
            eval::embed_sessions(&train_ds, &spec, &state.ingress, &state.egress).unwrap();
        Fixture {
            final_loss,
            test_sessions,
            train_sessions,
        }
    })
}

#[test]
fn c1_analytic_gradients_match_finite_differences() {
    let spec = WindowSpec {
        w: 4,
        window_s: 5.0,
        l: 20,
    };
    let dims = Dims {
        hidden: 6,
        attn: 4,
        embed: 5,
    };
    let mut worst = 0.0f64;
    for seed in 1..=5u64 {
        let params = ModelParams::init(dims, seed);
        let ft = random_tensor(&spec, seed);
        worst = worst.max(model::finite_diff_check(&params, &ft, seed).unwrap());
    }
    report(1, "exact gradients", worst <= 1e-6);
}

#[test]
fn c2_embedding_invariants_hold_on_random_inputs() {
    let spec = WindowSpec {
        w: 6,
        window_s: 5.0,
        l: 40,
    };
    let dims = Dims {
        hidden: 8,
        attn: 4,
        embed: 8,
    };
    let params = ModelParams::init(dims, 2);
    let mut ok = true;

    // Unit norm and a proper attention distribution on 1000 inputs.
    for seed in 0..1000u64 {
        let ft = random_tensor(&spec, seed);
        let (emb, cache) = model::embed_flow(&params, &ft).unwrap();
        let norm: f64 = emb.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let wsum: f64 = cache.attn_weights.iter().sum();
        ok &= (norm - 1.0).abs() <= 1e-9;
        ok &= (wsum - 1.0).abs() <= 1e-9;
        ok &= cache.attn_weights.iter().all(|&w| w >= 0.0);
    }

    // Bytes past each window's valid length must never reach the model.
    let mut rng = subrng(3, 0x70616464);
    for seed in 0..1000u64 {
        let ft = random_tensor(&spec, seed.wrapping_add(5000));
        let mut noisy = ft.clone();
        for k in 0..spec.w {
            for row in noisy.valid_len[k]..spec.l {
                let base = (k * spec.l + row) * 2;
                noisy.values[base] = rng.normal();
                noisy.values[base + 1] = rng.normal();
            }
        }
        let (a, _) = model::embed_flow(&params, &ft).unwrap();
        let (b, _) = model::embed_flow(&params, &noisy).unwrap();
        ok &= a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    report(2, "unit norm, attention simplex, padding isolation", ok);
}

#[test]
fn c3_full_probe_queries_equal_exhaustive_search() {
    let dim = 8;
    let mut ok = true;
    for seed in 0..20u64 {
        let mut rng = subrng(seed, 0x657861);
        let m = 10 + rng.below(991) as usize;
        let embs: Vec<(String, Embedding)> = (0..m)
            .map(|i| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                (format!("e{i:04}"), Embedding(v))
            })
            .collect();
        let index = ann::build_index(&embs, None, seed).unwrap();
        for _ in 0..5 {
            let mut qv: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
            qv.iter_mut().for_each(|x| *x /= n);
            let q = Embedding(qv);
            let (hits, _) = ann::query(&index, &q, index.k, 10).unwrap();
            let exact = ann::exact_search(&embs, &q, 10);
            ok &= hits.len() == exact.len()
                && hits.iter().zip(&exact).all(|(a, b)| {
                    a.flow_id == b.flow_id && a.score.to_bits() == b.score.to_bits()
                });
        }
    }
    report(3, "full-probe index equals exhaustive search", ok);
}

#[test]
fn c4_index_recall_on_trained_embeddings() {
    let fx = fixture();
    let pool = &fx.train_sessions[..1000];
    let embs: Vec<(String, Embedding)> = pool
        .iter()
        .map(|s| (s.egress_id.clone(), s.egress.clone()))
        .collect();
    let index = ann::build_index(&embs, Some(32), 7).unwrap();
    let mut agree = 0usize;
    for s in pool {
        let (hits, _) = ann::query(&index, &s.ingress, 8, 1).unwrap();
        let exact = ann::exact_search(&embs, &s.ingress, 1);
        if hits.first().map(|h| &h.flow_id) == exact.first().map(|h| &h.flow_id) {
            agree += 1;
        }
    }
    let recall = agree as f64 / pool.len() as f64;
    println!("  recall@1 over 1000 trained embeddings: {recall:.3}");
    report(4, "index recall@1 >= 0.9 at K=32, 8 probes", recall >= 0.9);
}

#[test]
fn c5_comparison_counts_scale_as_expected() {
    let table = eval::scaling_comparisons(&[100, 250, 500, 1000, 2000], 0.1, 16, 8, 3).unwrap();
    println!(
        "  pairwise slope {:.3}, indexed slope {:.3}",
        table.pairwise_slope, table.ann_slope
    );
    let ok = (table.pairwise_slope - 2.0).abs() <= 0.05 && table.ann_slope <= 1.3;
    report(5, "quadratic pairwise, near-linear indexed matching", ok);
}

#[test]
fn c6_training_converges_and_matching_beats_chance() {
    let fx = fixture();
    let loss_ok = fx.final_loss <= 0.05;
    println!("  final training loss: {:.4}", fx.final_loss);

    let sc = eval::build_scenario(&fx.test_sessions, 200, 200, 0.5, 11).unwrap();
    let (decisions, comparisons) = eval::match_pairwise(&sc, 0.8);
    let model_report = eval::evaluate(&sc, &decisions, comparisons, "pairwise").unwrap();

    // Chance baseline: identical pair labels, uniform random scores.
    let mut rng = subrng(99, 0x62617365);
    let baseline: Vec<(f64, bool)> = decisions
        .iter()
        .map(|d| {
            (
                rng.uniform(),
                sc.is_true_pair(d.ingress as usize, d.egress as usize),
            )
        })
        .collect();
    let n_true = sc.true_pairs.len();
    let n_neg = sc.n() * sc.m() - n_true;
    let base_roc = eval::roc_sweep(&baseline, n_true, n_neg).unwrap();

    let mut dominant = true;
    for &(target, tpr) in &model_report.tpr_at {
        let base = eval::tpr_at_fpr(&base_roc, target);
        println!("  tpr at fpr<={target}: model {tpr:.3} vs chance {base:.3}");
        dominant &= tpr > base;
    }
    let tpr_02 = model_report
        .tpr_at
        .iter()
        .find(|(t, _)| *t == 0.2)
        .map(|&(_, v)| v)
        .unwrap();
    report(
        6,
        "loss <= 0.05, tpr >= 0.75 at fpr 0.2, above-chance ROC",
        loss_ok && tpr_02 >= 0.75 && dominant,
    );
}

#[test]
fn c7_sigma_sweep_pair_counts_and_roc_shape() {
    let fx = fixture();
    let mut ok = true;
    for &sigma in &[0.1, 0.3, 0.5, 0.8, 1.0] {
        let sc = eval::build_scenario(&fx.test_sessions, 120, 120, sigma, 5).unwrap();
        let expected = (sigma * 120.0).round() as usize;
        ok &= sc.true_pairs.len() == expected;
        let (decisions, comparisons) = eval::match_pairwise(&sc, 0.8);
        let rep = eval::evaluate(&sc, &decisions, comparisons, "pairwise").unwrap();
        ok &= rep.roc.windows(2).all(|w| {
            w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr && w[1].tau <= w[0].tau
        });
        ok &= rep.roc.first().map(|p| p.tpr == 0.0 && p.fpr == 0.0) == Some(true);
    }
    report(7, "sigma sweep pair counts and monotone ROC", ok);
}

#[test]
fn c8_pipeline_is_reproducible_end_to_end() {
    const CONF: &str = "\
gen.circuits=6
gen.websites=3
gen.visits=1
split.train_frac=0.5
window.w=4
window.seconds=5.0
window.l=30
model.hidden=8
model.attn=4
model.embed=8
train.batch=8
train.epochs=2
train.lr=0.003
train.hard_frac=0.0
";
    // Wall-clock logs aside, every artifact must be byte-identical.
    const ARTIFACTS: &[&str] = &[
        "dataset.jsonl",
        "train.jsonl",
        "test.jsonl",
        "features.bin",
        "checkpoint.json",
        "embeddings.json",
        "index.json",
        "matches.json",
    ];

    fn run_all(dir: &Path) {
        let conf = dir.join("run.conf");
        fs::write(&conf, CONF).unwrap();
        for stage in ["gen", "split", "featurize", "train", "embed", "index", "match"] {
            let out = Command::new(env!("CARGO_BIN_EXE_rector"))
                .arg("--config")
                .arg(&conf)
                .arg("--out")
                .arg(dir)
                .arg("--seed")
                .arg("11")
                .arg(stage)
                .output()
                .expect("spawn rector");
            assert!(
                out.status.success(),
                "{stage} failed:\n{}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }

    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run_all(a.path());
    run_all(b.path());
    let ok = ARTIFACTS.iter().all(|name| {
        let da = fs::read(a.path().join(name)).unwrap();
        let db = fs::read(b.path().join(name)).unwrap();
        !da.is_empty() && da == db
    });
    report(8, "identical artifacts across repeated runs", ok);
}
