//! One function per subcommand; thin adapters from artifacts on disk to
//! the library operations and back.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;

use rector_core::ann;
use rector_core::eval::{self, SessionEmbedding};
use rector_core::feature::featurize_flow;
use rector_core::model::{embed_flow, Embedding};
use rector_core::trace::{self, Role, SynthConfig};
use rector_core::train::{build_feature_store, Trainer};

use crate::config::{thread_count, RunConfig};
use crate::errors::{invariant, missing};
use crate::formats::{self, EmbeddingsFile, EvalFile, MatchFile, MatchRecord, ScalingRow};

fn core(e: rector_core::Error) -> anyhow::Error {
    invariant(e.to_string())
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn gen(cfg: &RunConfig, seed: u64) -> Result<()> {
    let synth = SynthConfig { seed, ..cfg.gen.clone() };
    let mut ds = trace::gen_synthetic(&synth).map_err(core)?;
    let violations = trace::validate_dataset(&ds);
    if !violations.is_empty() {
        return Err(invariant(format!(
            "generated dataset fails validation: {} violations, first: {} ({})",
            violations.len(),
            violations[0].flow_id,
            violations[0].rule
        )));
    }
    ds.meta.config_hash = cfg.gen_hash();
    let path = out(cfg, "dataset.jsonl");
    formats::write_dataset(&path, &ds)?;
    println!(
        "wrote {} flows ({} sessions) to {}",
        ds.flows.len(),
        ds.complete_sessions().len(),
        path.display()
    );
    Ok(())
}

pub fn split(cfg: &RunConfig, seed: u64, force: bool) -> Result<()> {
    let ds = formats::read_dataset(&out(cfg, "dataset.jsonl"))?;
    formats::check_hash(&ds.meta.config_hash, &cfg.gen_hash(), "dataset", force)?;
    let (mut train, mut test) = trace::split_by_circuit(&ds, cfg.train_fraction, seed).map_err(core)?;
    train.meta.config_hash = cfg.split_hash();
    test.meta.config_hash = cfg.split_hash();
    formats::write_dataset(&out(cfg, "train.jsonl"), &train)?;
    formats::write_dataset(&out(cfg, "test.jsonl"), &test)?;
    println!(
        "split {} circuits into {} train / {} test flows",
        ds.circuit_ids().len(),
        train.flows.len(),
        test.flows.len()
    );
    Ok(())
}

pub fn featurize(cfg: &RunConfig, input: &Path, force: bool) -> Result<()> {
    let ds = formats::read_dataset(input)?;
    formats::check_hash_any(
        &ds.meta.config_hash,
        &[&cfg.gen_hash(), &cfg.split_hash()],
        "dataset",
        force,
    )?;
    let records: Vec<_> = ds
        .flows
        .iter()
        .map(|f| (f.flow_id.clone(), featurize_flow(f, &cfg.window)))
        .collect();
    let path = out(cfg, "features.bin");
    formats::write_features(&path, &cfg.window, &records, &cfg.feature_hash())?;
    println!("wrote {} feature records to {}", records.len(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, seed: u64, force: bool, checkpoint_every: Option<usize>) -> Result<()> {
    let ds = formats::read_dataset(&out(cfg, "train.jsonl"))?;
    let hash = cfg.train_hash();
    formats::check_hash(&ds.meta.config_hash, &cfg.split_hash(), "training dataset", force)?;
    let store = build_feature_store(&ds, &cfg.window);
    let mut trainer = Trainer::new(&store, cfg.train_config(seed)).map_err(core)?;
    let mut log = Vec::new();
    while !trainer.done() {
        let t0 = Instant::now();
        let loss = trainer.run_epoch().map_err(core)?;
        let secs = t0.elapsed().as_secs_f64();
        let epoch = trainer.state.epoch;
        log.push((epoch, loss, secs));
        println!("epoch {epoch}: mean loss {loss:.6} ({secs:.2}s)");
        if let Some(every) = checkpoint_every {
            if every > 0 && epoch % every == 0 {
                formats::write_checkpoint(
                    &out(cfg, &format!("checkpoint_epoch{epoch}.json")),
                    &hash,
                    seed,
                    &cfg.window,
                    &trainer.state.ingress,
                    &trainer.state.egress,
                )?;
            }
        }
    }
    formats::write_checkpoint(
        &out(cfg, "checkpoint.json"),
        &hash,
        seed,
        &cfg.window,
        &trainer.state.ingress,
        &trainer.state.egress,
    )?;
    formats::write_train_log(&out(cfg, "train_log.csv"), &log)?;
    println!(
        "trained {} epochs, final loss {:.6}",
        trainer.state.epoch,
        trainer.state.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Embeds the complete sessions of a dataset, splitting the work across
/// up to RECTOR_THREADS workers. Output order and bytes do not depend on
/// the worker count.
pub fn embed_dataset(
    ds: &trace::Dataset,
    cfg: &RunConfig,
    ingress: &rector_core::model::ModelParams,
    egress: &rector_core::model::ModelParams,
) -> Result<Vec<SessionEmbedding>> {
    let sessions = ds.complete_sessions();
    let jobs: Vec<(&trace::FlowTrace, &trace::FlowTrace)> = sessions
        .iter()
        .map(|session| {
            let pick = |role: Role| {
                ds.flows
                    .iter()
                    .find(|f| &f.session_id == session && f.role == role)
                    .expect("complete session")
            };
            (pick(Role::Ingress), pick(Role::Egress))
        })
        .collect();
    let threads = thread_count().clamp(1, jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads);
    let mut results: Vec<Vec<SessionEmbedding>> = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for part in jobs.chunks(chunk.max(1)) {
            handles.push(scope.spawn(move || -> Result<Vec<SessionEmbedding>> {
                part.iter()
                    .map(|(fi, fe)| {
                        let (ei, _) =
                            embed_flow(ingress, &featurize_flow(fi, &cfg.window)).map_err(core)?;
                        let (ee, _) =
                            embed_flow(egress, &featurize_flow(fe, &cfg.window)).map_err(core)?;
                        Ok(SessionEmbedding {
                            session_id: fi.session_id.clone(),
                            ingress_id: fi.flow_id.clone(),
                            egress_id: fe.flow_id.clone(),
                            ingress: ei,
                            egress: ee,
                        })
                    })
                    .collect()
            }));
        }
        for h in handles {
            results.push(h.join().expect("embed worker panicked")?);
        }
        Ok(())
    })?;
    Ok(results.into_iter().flatten().collect())
}

pub fn embed(cfg: &RunConfig, input: &Path, force: bool) -> Result<()> {
    let ds = formats::read_dataset(input)?;
    let hash = cfg.train_hash();
    formats::check_hash_any(
        &ds.meta.config_hash,
        &[&cfg.gen_hash(), &cfg.split_hash()],
        "dataset",
        force,
    )?;
    let (ck, ingress, egress) = formats::read_checkpoint(&out(cfg, "checkpoint.json"))?;
    formats::check_hash(&ck.config_hash, &hash, "checkpoint", force)?;
    let sessions = embed_dataset(&ds, cfg, &ingress, &egress)?;
    let path = out(cfg, "embeddings.json");
    formats::write_embeddings(
        &path,
        &EmbeddingsFile {
            version: 1,
            config_hash: hash,
            seed: ck.seed,
            sessions,
        },
    )?;
    println!("wrote embeddings to {}", path.display());
    Ok(())
}

pub fn index(cfg: &RunConfig, seed: u64, force: bool, k: Option<usize>) -> Result<()> {
    let embs = formats::read_embeddings(&out(cfg, "embeddings.json"))?;
    let hash = cfg.train_hash();
    formats::check_hash(&embs.config_hash, &hash, "embeddings", force)?;
    let egress: Vec<(String, Embedding)> = embs
        .sessions
        .iter()
        .map(|s| (s.egress_id.clone(), s.egress.clone()))
        .collect();
    let index = ann::build_index(&egress, k.or(cfg.index_k), seed).map_err(core)?;
    let path = out(cfg, "index.json");
    formats::write_index(&path, &hash, &index)?;
    println!(
        "indexed {} egress embeddings into {} clusters at {}",
        egress.len(),
        index.k,
        path.display()
    );
    Ok(())
}

pub fn run_match(
    cfg: &RunConfig,
    force: bool,
    tau: f64,
    n_probe: Option<usize>,
    top_k: Option<usize>,
) -> Result<()> {
    let index_path = out(cfg, "index.json");
    if !index_path.exists() {
        return Err(missing(format!(
            "index file {} (run the index command first)",
            index_path.display()
        )));
    }
    let embs = formats::read_embeddings(&out(cfg, "embeddings.json"))?;
    let hash = cfg.train_hash();
    formats::check_hash(&embs.config_hash, &hash, "embeddings", force)?;
    let (index_hash, index) = formats::read_index(&index_path)?;
    formats::check_hash(&index_hash, &hash, "index", force)?;

    let n_probe = n_probe.unwrap_or(cfg.index_n_probe).min(index.k).max(1);
    let top_k = top_k.unwrap_or(index.len());
    let mut records = Vec::new();
    let mut comparisons = 0;
    for s in &embs.sessions {
        let (hits, scanned) = ann::query(&index, &s.ingress, n_probe, top_k).map_err(core)?;
        comparisons += scanned;
        for h in hits {
            records.push(MatchRecord {
                ingress_id: s.ingress_id.clone(),
                egress_id: h.flow_id,
                score: h.score,
                declared: h.score >= tau,
            });
        }
    }
    let declared = records.iter().filter(|r| r.declared).count();
    let path = out(cfg, "matches.json");
    formats::write_json(
        &path,
        &MatchFile {
            version: 1,
            config_hash: hash,
            tau,
            n_probe,
            top_k,
            comparisons,
            records,
        },
    )?;
    println!(
        "matched {} ingress flows: {} declared pairs, {} comparisons, {}",
        embs.sessions.len(),
        declared,
        comparisons,
        path.display()
    );
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    seed: u64,
    force: bool,
    sigmas: &[f64],
    n: usize,
    m: usize,
) -> Result<()> {
    let embs = formats::read_embeddings(&out(cfg, "embeddings.json"))?;
    let hash = cfg.train_hash();
    formats::check_hash(&embs.config_hash, &hash, "embeddings", force)?;
    for (i, &sigma) in sigmas.iter().enumerate() {
        let sc = eval::build_scenario(&embs.sessions, n, m, sigma, seed.wrapping_add(i as u64))
            .map_err(core)?;

        let t0 = Instant::now();
        let (pw_dec, pw_cmp) = eval::match_pairwise(&sc, cfg.tau);
        let pw_secs = t0.elapsed().as_secs_f64();
        let mut pairwise = eval::evaluate(&sc, &pw_dec, pw_cmp, "pairwise").map_err(core)?;
        pairwise.timings.insert("match_s".into(), pw_secs);

        let k = cfg.index_k.unwrap_or_else(|| ann::auto_k(sc.m()));
        let t0 = Instant::now();
        let index = ann::build_index(&sc.egress, Some(k), seed).map_err(core)?;
        let build_secs = t0.elapsed().as_secs_f64();
        let n_probe = cfg.index_n_probe.min(index.k).max(1);
        let t0 = Instant::now();
        let (ann_dec, ann_cmp) =
            eval::match_ann(&sc, &index, n_probe, cfg.tau, sc.m()).map_err(core)?;
        let ann_secs = t0.elapsed().as_secs_f64();
        let mut ann_report = eval::evaluate(&sc, &ann_dec, ann_cmp, "ann").map_err(core)?;
        ann_report.timings.insert("index_build_s".into(), build_secs);
        ann_report.timings.insert("match_s".into(), ann_secs);

        let roc = pairwise.roc.clone();
        let tag = format!("{sigma:.2}");
        formats::write_json(
            &out(cfg, &format!("eval_sigma_{tag}.json")),
            &EvalFile {
                version: 1,
                config_hash: hash.clone(),
                pairwise,
                ann: ann_report,
            },
        )?;
        formats::write_roc_csv(&out(cfg, &format!("roc_sigma_{tag}.csv")), &roc)?;
        println!(
            "sigma {sigma}: {} true pairs, pairwise {} cmp, ann {} cmp",
            sc.true_pairs.len(),
            pw_cmp,
            ann_cmp
        );
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig, seed: u64, sizes: &[usize], sigma: f64, dim: usize) -> Result<()> {
    let table =
        eval::scaling_comparisons(sizes, sigma, dim, cfg.index_n_probe, seed).map_err(core)?;

    // Wall-clock passes, single-threaded, on the same scenario sizes.
    let mut rows = Vec::new();
    let mut walls = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let sc = eval::synthetic_scenario(n, n, sigma, dim, seed.wrapping_add(i as u64))
            .map_err(core)?;
        let t0 = Instant::now();
        let _ = eval::match_pairwise(&sc, cfg.tau);
        let pw_wall = t0.elapsed().as_secs_f64();
        let k = ann::scaling_cluster_count(n);
        let index = ann::build_index(&sc.egress, Some(k), seed).map_err(core)?;
        let t0 = Instant::now();
        let _ = eval::match_ann(&sc, &index, cfg.index_n_probe.min(k), cfg.tau, n).map_err(core)?;
        let ann_wall = t0.elapsed().as_secs_f64();
        walls.push((pw_wall, ann_wall));
    }
    let base = &table.points[0];
    for (point, &(pw_wall, ann_wall)) in table.points.iter().zip(walls.iter()) {
        rows.push(ScalingRow {
            n: point.n,
            matcher: "pairwise",
            comparisons: point.pairwise_comparisons,
            wall_s: pw_wall,
            ratio: point.pairwise_comparisons as f64 / base.pairwise_comparisons as f64,
        });
        rows.push(ScalingRow {
            n: point.n,
            matcher: "ann",
            comparisons: point.ann_comparisons,
            wall_s: ann_wall,
            ratio: point.ann_comparisons as f64 / base.ann_comparisons as f64,
        });
    }
    formats::write_scaling_csv(&out(cfg, "scaling.csv"), &rows)?;
    println!(
        "pairwise slope {:.3}, ann slope {:.3}",
        table.pairwise_slope, table.ann_slope
    );
    Ok(())
}
