//! On-disk artifact formats: dataset JSONL with a meta sidecar, the
//! binary feature dump, model checkpoints, the serialized index,
//! embeddings, match records, and the CSV reports.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rector_core::ann::IvfIndex;
use rector_core::eval::{EvalReport, RocPoint, SessionEmbedding};
use rector_core::feature::{FeatureTensor, WindowSpec};
use rector_core::model::{Dims, Embedding, ModelParams};
use rector_core::trace::{Dataset, DatasetMeta, FlowTrace};

use crate::errors::{invariant, missing};

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            missing(path.display().to_string())
        } else {
            anyhow::Error::from(e).context(format!("opening {}", path.display()))
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(std::fs::File::create(path).with_context(
        || format!("creating {}", path.display()),
    )?))
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Refuses artifacts produced under a different pipeline configuration.
pub fn check_hash(found: &str, expected: &str, what: &str, force: bool) -> Result<()> {
    check_hash_any(found, &[expected], what, force)
}

/// As `check_hash`, for inputs that may come from more than one stage
/// (e.g. a full dataset or one of its splits).
pub fn check_hash_any(found: &str, expected: &[&str], what: &str, force: bool) -> Result<()> {
    if !expected.contains(&found) && !force {
        return Err(invariant(format!(
            "{what} was produced with config hash {found}, current config hashes to \
             {}; rerun upstream stages or pass --force",
            expected.join(" / ")
        )));
    }
    Ok(())
}

// ---- dataset ----

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    for flow in &ds.flows {
        serde_json::to_writer(&mut w, flow)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut m = create(&meta_path(path))?;
    serde_json::to_writer_pretty(&mut m, &ds.meta)?;
    m.write_all(b"\n")?;
    m.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(open(path)?);
    let mut flows: Vec<FlowTrace> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        flows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}: line {}", path.display(), i + 1))?,
        );
    }
    let meta: DatasetMeta = serde_json::from_reader(open(&meta_path(path))?)
        .with_context(|| format!("parsing {}", meta_path(path).display()))?;
    Ok(Dataset { flows, meta })
}

// ---- feature dump ----

const FEATURE_MAGIC: &[u8; 4] = b"RCTF";

#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub config_hash: String,
    pub record_count: usize,
}

pub fn write_features(
    path: &Path,
    spec: &WindowSpec,
    records: &[(String, FeatureTensor)],
    config_hash: &str,
) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(spec.w as u32).to_le_bytes())?;
    w.write_all(&(spec.l as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (_, ft) in records {
        for v in &ft.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut ids = create(&path.with_extension("ids.jsonl"))?;
    for (id, _) in records {
        serde_json::to_writer(&mut ids, id)?;
        ids.write_all(b"\n")?;
    }
    ids.flush()?;
    write_json(
        &meta_path(path),
        &FeatureMeta {
            config_hash: config_hash.to_string(),
            record_count: records.len(),
        },
    )?;
    Ok(())
}

#[cfg_attr(not(test), allow(dead_code))]
pub fn read_features(path: &Path) -> Result<(WindowSpec, Vec<(String, Vec<f64>)>)> {
    let mut r = BufReader::new(open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != FEATURE_MAGIC {
        return Err(invariant(format!("{} is not a feature dump", path.display())));
    }
    let w = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let l = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let ids: Vec<String> = BufReader::new(open(&path.with_extension("ids.jsonl"))?)
        .lines()
        .map(|line| Ok(serde_json::from_str(&line?)?))
        .collect::<Result<_>>()?;
    if ids.len() != count {
        return Err(invariant(format!(
            "feature dump holds {count} records but the sidecar lists {} ids",
            ids.len()
        )));
    }
    let mut records = Vec::with_capacity(count);
    let mut buf = vec![0u8; w * l * 2 * 8];
    for id in ids {
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((id, values));
    }
    Ok((WindowSpec { w, window_s: 0.0, l }, records))
}

// ---- checkpoints ----

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointDims {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "A")]
    pub a: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub dims: CheckpointDims,
    /// Matrix name -> nested row-major arrays (flat for vectors).
    pub params: BTreeMap<String, serde_json::Value>,
}

fn matrix_value(data: &[f64], rows: usize, cols: usize) -> serde_json::Value {
    if cols == 1 {
        serde_json::json!(data)
    } else {
        let nested: Vec<&[f64]> = (0..rows).map(|r| &data[r * cols..(r + 1) * cols]).collect();
        serde_json::json!(nested)
    }
}

pub fn write_checkpoint(
    path: &Path,
    config_hash: &str,
    seed: u64,
    spec: &WindowSpec,
    ingress: &ModelParams,
    egress: &ModelParams,
) -> Result<()> {
    let mut params = BTreeMap::new();
    for (prefix, tower) in [("ingress", ingress), ("egress", egress)] {
        for (name, data, rows, cols) in tower.matrices() {
            params.insert(format!("{prefix}.{name}"), matrix_value(data, rows, cols));
        }
    }
    let ck = Checkpoint {
        version: 1,
        config_hash: config_hash.to_string(),
        seed,
        dims: CheckpointDims {
            h: ingress.dims.hidden,
            a: ingress.dims.attn,
            d: ingress.dims.embed,
            w: spec.w,
            l: spec.l,
        },
        params,
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &ck)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn matrix_from_value(value: &serde_json::Value, rows: usize, cols: usize, name: &str) -> Result<Vec<f64>> {
    let flat: Vec<f64> = if cols == 1 {
        serde_json::from_value(value.clone())
            .map_err(|e| invariant(format!("checkpoint {name}: {e}")))?
    } else {
        let nested: Vec<Vec<f64>> = serde_json::from_value(value.clone())
            .map_err(|e| invariant(format!("checkpoint {name}: {e}")))?;
        if nested.len() != rows || nested.iter().any(|r| r.len() != cols) {
            return Err(invariant(format!(
                "checkpoint {name}: expected {rows}x{cols}, found {}x{}",
                nested.len(),
                nested.first().map_or(0, Vec::len)
            )));
        }
        nested.into_iter().flatten().collect()
    };
    if flat.len() != rows * cols {
        return Err(invariant(format!(
            "checkpoint {name}: expected {} values, found {}",
            rows * cols,
            flat.len()
        )));
    }
    Ok(flat)
}

pub fn read_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams, ModelParams)> {
    let ck: Checkpoint = serde_json::from_reader(open(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if ck.version != 1 {
        return Err(invariant(format!("unsupported checkpoint version {}", ck.version)));
    }
    let dims = Dims {
        hidden: ck.dims.h,
        attn: ck.dims.a,
        embed: ck.dims.d,
    };
    let mut towers = Vec::new();
    for prefix in ["ingress", "egress"] {
        let mut params = ModelParams::zeros(dims);
        let shapes: Vec<(String, usize, usize)> = params
            .matrices()
            .iter()
            .map(|(name, _, rows, cols)| (format!("{prefix}.{name}"), *rows, *cols))
            .collect();
        for (full_name, rows, cols) in shapes {
            let value = ck
                .params
                .get(&full_name)
                .ok_or_else(|| invariant(format!("checkpoint lacks {full_name}")))?;
            let short = full_name.split_once('.').unwrap().1;
            *params.matrix_mut(short).unwrap() = matrix_from_value(value, rows, cols, &full_name)?;
        }
        towers.push(params);
    }
    let egress = towers.pop().unwrap();
    let ingress = towers.pop().unwrap();
    Ok((ck, ingress, egress))
}

// ---- embeddings ----

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingsFile {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub sessions: Vec<SessionEmbedding>,
}

pub fn write_embeddings(path: &Path, file: &EmbeddingsFile) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingsFile> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

// ---- index ----

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexFile {
    pub version: u32,
    pub config_hash: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_probe_default: usize,
    pub centroids: Vec<Vec<f64>>,
    pub lists: Vec<Vec<(String, Embedding)>>,
}

pub fn write_index(path: &Path, config_hash: &str, index: &IvfIndex) -> Result<()> {
    let file = IndexFile {
        version: 1,
        config_hash: config_hash.to_string(),
        k: index.k,
        n_probe_default: index.n_probe_default,
        centroids: index.centroids.clone(),
        lists: index.lists.clone(),
    };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<(String, IvfIndex)> {
    let file: IndexFile = serde_json::from_reader(open(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if file.version != 1 {
        return Err(invariant(format!("unsupported index version {}", file.version)));
    }
    Ok((
        file.config_hash,
        IvfIndex {
            k: file.k,
            n_probe_default: file.n_probe_default,
            centroids: file.centroids,
            lists: file.lists,
        },
    ))
}

// ---- matches and reports ----

#[derive(Debug, Serialize, Deserialize)]
pub struct MatchRecord {
    pub ingress_id: String,
    pub egress_id: String,
    pub score: f64,
    pub declared: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatchFile {
    pub version: u32,
    pub config_hash: String,
    pub tau: f64,
    pub n_probe: usize,
    pub top_k: usize,
    pub comparisons: usize,
    pub records: Vec<MatchRecord>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub version: u32,
    pub config_hash: String,
    pub pairwise: EvalReport,
    pub ann: EvalReport,
}

pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "tau,tpr,fpr")?;
    for p in roc {
        writeln!(w, "{},{},{}", p.tau, p.tpr, p.fpr)?;
    }
    w.flush()?;
    Ok(())
}

pub struct ScalingRow {
    pub n: usize,
    pub matcher: &'static str,
    pub comparisons: usize,
    pub wall_s: f64,
    pub ratio: f64,
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "n,matcher,comparisons,wall_s,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.n, r.matcher, r.comparisons, r.wall_s, r.ratio)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_train_log(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "epoch,mean_loss,wall_seconds")?;
    for (epoch, loss, secs) in rows {
        writeln!(w, "{epoch},{loss},{secs}")?;
    }
    w.flush()?;
    Ok(())
}
