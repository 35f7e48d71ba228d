//! Flow traces, dataset validation, circuit-based splitting, and the
//! synthetic Tor-like traffic generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::de::SeqAccess;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::math;
use crate::rng::{subrng, RngExt};
use crate::{Error, Result};

/// One observed packet: time since flow start, payload bytes, direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub t: f64,
    pub size: u32,
    /// +1 client-to-server, -1 server-to-client.
    pub dir: i8,
}

// Packets serialize as compact [t, size, dir] triples (the JSONL wire
// form), not as objects.
impl Serialize for PacketRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(3))?;
        seq.serialize_element(&self.t)?;
        seq.serialize_element(&self.size)?;
        seq.serialize_element(&self.dir)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for PacketRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = PacketRecord;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a [t, size, dir] triple")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> core::result::Result<PacketRecord, A::Error> {
                let t = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(0, &self))?;
                let size = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                let dir = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(2, &self))?;
                Ok(PacketRecord { t, size, dir })
            }
        }
        deserializer.deserialize_seq(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ingress,
    Egress,
}

/// A labeled packet sequence for one ingress or egress observation of a
/// website session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub flow_id: String,
    pub role: Role,
    pub circuit_id: u32,
    pub website_id: u32,
    pub session_id: String,
    pub packets: Vec<PacketRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub config_hash: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub flows: Vec<FlowTrace>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn circuit_ids(&self) -> BTreeSet<u32> {
        self.flows.iter().map(|f| f.circuit_id).collect()
    }

    /// Session ids that have both an ingress and an egress trace.
    pub fn complete_sessions(&self) -> Vec<String> {
        let mut roles: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
        for f in &self.flows {
            let e = roles.entry(&f.session_id).or_insert((false, false));
            match f.role {
                Role::Ingress => e.0 = true,
                Role::Egress => e.1 = true,
            }
        }
        roles
            .into_iter()
            .filter(|(_, (i, e))| *i && *e)
            .map(|(s, _)| s.to_string())
            .collect()
    }
}

/// Synthetic corpus configuration. Defaults are the desk-scale corpus:
/// 40 circuits x 20 websites x 1 visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_circuits: u32,
    pub n_websites: u32,
    pub visits_per_pair: u32,
    pub mean_latency_s: f64,
    pub latency_jitter_s: f64,
    pub drop_prob: f64,
    pub cell_bytes: u32,
    pub duration_cap_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_circuits: 40,
            n_websites: 20,
            visits_per_pair: 1,
            mean_latency_s: 0.05,
            latency_jitter_s: 0.01,
            drop_prob: 0.02,
            cell_bytes: 512,
            duration_cap_s: 60.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_circuits < 1 || self.n_websites < 1 || self.visits_per_pair < 1 {
            return Err(Error::Config("all counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config("drop_prob must lie in [0, 1]".into()));
        }
        if self.duration_cap_s <= 0.0 {
            return Err(Error::Config("duration_cap_s must be > 0".into()));
        }
        if self.cell_bytes < 1 {
            return Err(Error::Config("cell_bytes must be >= 1".into()));
        }
        if self.mean_latency_s < 0.0 || self.latency_jitter_s < 0.0 {
            return Err(Error::Config("latency parameters must be >= 0".into()));
        }
        Ok(())
    }

    /// Stable FNV-1a hash over the canonical field listing; recorded in
    /// generated dataset metadata.
    pub fn content_hash(&self) -> String {
        let text = format!(
            "c={};w={};v={};lat={};jit={};drop={};cell={};cap={};seed={}",
            self.n_circuits,
            self.n_websites,
            self.visits_per_pair,
            self.mean_latency_s,
            self.latency_jitter_s,
            self.drop_prob,
            self.cell_bytes,
            self.duration_cap_s,
            self.seed
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One broken invariant, tied to the flow that violates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub flow_id: String,
    pub rule: String,
}

/// Checks every dataset invariant; returns an empty list iff all hold.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
    let mut session_roles: BTreeMap<(&str, Role), &str> = BTreeMap::new();

    for flow in &ds.flows {
        if !seen_ids.insert(&flow.flow_id) {
            out.push(Violation {
                flow_id: flow.flow_id.clone(),
                rule: "flow_id not unique".into(),
            });
        }
        if let Some(first) = session_roles.insert((&flow.session_id, flow.role), &flow.flow_id) {
            out.push(Violation {
                flow_id: flow.flow_id.clone(),
                rule: format!(
                    "session {} already has a {:?} trace ({first})",
                    flow.session_id, flow.role
                ),
            });
        }
        let mut prev_t = 0.0;
        for (i, p) in flow.packets.iter().enumerate() {
            if p.t < 0.0 {
                out.push(Violation {
                    flow_id: flow.flow_id.clone(),
                    rule: format!("packet {i} has negative timestamp"),
                });
            }
            if i > 0 && p.t < prev_t {
                out.push(Violation {
                    flow_id: flow.flow_id.clone(),
                    rule: format!("packet {i} breaks time ordering"),
                });
            }
            if p.size < 1 {
                out.push(Violation {
                    flow_id: flow.flow_id.clone(),
                    rule: format!("packet {i} has size < 1"),
                });
            }
            if p.dir != 1 && p.dir != -1 {
                out.push(Violation {
                    flow_id: flow.flow_id.clone(),
                    rule: format!("packet {i} has direction outside {{+1, -1}}"),
                });
            }
            prev_t = p.t;
        }
    }
    out
}

// Stream labels for the generator's independent random streams.
const STREAM_WEBSITE: u64 = 1;
const STREAM_CIRCUIT: u64 = 2;
const STREAM_SESSION: u64 = 3;

struct Burst {
    gap_before_s: f64,
    request_size: u32,
    response_count: u32,
    response_mean_size: f64,
}

/// Per-website burst profile, a pure function of (website_id, seed) so
/// the same website looks alike across circuits.
fn website_profile(seed: u64, website_id: u32) -> Vec<Burst> {
    let mut rng = subrng(seed, crate::rng::mix(&[STREAM_WEBSITE, website_id as u64]));
    let n_bursts = 3 + rng.below(4) as usize; // 3..=6
    (0..n_bursts)
        .map(|_| Burst {
            gap_before_s: rng.range(0.2, 1.5),
            request_size: 200 + rng.below(700) as u32,
            response_count: 3 + rng.below(10) as u32, // 3..=12
            response_mean_size: rng.range(400.0, 1400.0),
        })
        .collect()
}

/// Generates a correlated ingress/egress corpus.
///
/// Structure is shared two ways: flows of the same website reuse that
/// website's burst profile across circuits, and flows of the same
/// circuit share a timing scale across websites. That makes unmatched
/// background flows structurally similar to true pairs.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut flows = Vec::new();

    for c in 0..cfg.n_circuits {
        let mut crng = subrng(cfg.seed, crate::rng::mix(&[STREAM_CIRCUIT, c as u64]));
        let time_scale = crng.range(0.85, 1.25);
        let circuit_iat_jitter = crng.range(0.001, 0.01);

        for w in 0..cfg.n_websites {
            let profile = website_profile(cfg.seed, w);
            for v in 0..cfg.visits_per_pair {
                let mut srng = subrng(
                    cfg.seed,
                    crate::rng::mix(&[STREAM_SESSION, c as u64, w as u64, v as u64]),
                );
                let session_id = format!("c{c}_w{w}_v{v}");

                // Ingress: request packet then a response burst, timing
                // scaled by the circuit and lightly perturbed per visit.
                let mut t = 0.0;
                let mut ingress = Vec::new();
                'bursts: for burst in &profile {
                    t += burst.gap_before_s * time_scale;
                    if t > cfg.duration_cap_s {
                        break 'bursts;
                    }
                    let req_size =
                        (burst.request_size as f64 * srng.range(0.9, 1.1)).max(1.0) as u32;
                    ingress.push(PacketRecord {
                        t,
                        size: req_size,
                        dir: 1,
                    });
                    for _ in 0..burst.response_count {
                        t += srng.range(0.002, 0.05) * time_scale
                            + circuit_iat_jitter * srng.uniform();
                        if t > cfg.duration_cap_s {
                            break 'bursts;
                        }
                        let size =
                            (burst.response_mean_size * srng.range(0.75, 1.25)).max(1.0) as u32;
                        ingress.push(PacketRecord { t, size, dir: -1 });
                    }
                }

                // Egress: cell re-quantization, latency shift with
                // log-normal jitter, independent drops, cap truncation.
                let mut egress = Vec::new();
                for p in &ingress {
                    let dropped = srng.uniform() < cfg.drop_prob;
                    let jitter = if cfg.latency_jitter_s > 0.0 {
                        cfg.latency_jitter_s * math::exp(0.5 * srng.normal())
                    } else {
                        0.0
                    };
                    if dropped {
                        continue;
                    }
                    let t = p.t + cfg.mean_latency_s + jitter;
                    if t > cfg.duration_cap_s {
                        continue;
                    }
                    let cells = (p.size + cfg.cell_bytes - 1) / cfg.cell_bytes;
                    egress.push(PacketRecord {
                        t,
                        size: cells * cfg.cell_bytes,
                        dir: p.dir,
                    });
                }
                egress.sort_by(|a, b| a.t.total_cmp(&b.t));

                flows.push(FlowTrace {
                    flow_id: format!("{session_id}_in"),
                    role: Role::Ingress,
                    circuit_id: c,
                    website_id: w,
                    session_id: session_id.clone(),
                    packets: ingress,
                });
                flows.push(FlowTrace {
                    flow_id: format!("{session_id}_eg"),
                    role: Role::Egress,
                    circuit_id: c,
                    website_id: w,
                    session_id,
                    packets: egress,
                });
            }
        }
    }

    Ok(Dataset {
        flows,
        meta: DatasetMeta {
            seed: cfg.seed,
            config_hash: cfg.content_hash(),
            source: "synthetic".into(),
        },
    })
}

/// Partitions circuits (not flows) into disjoint train/test sides.
pub fn split_by_circuit(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut circuits: Vec<u32> = ds.circuit_ids().into_iter().collect();
    if circuits.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 circuits to split, got {}",
            circuits.len()
        )));
    }
    let mut rng = subrng(seed, crate::rng::mix(&[b's' as u64, b'p' as u64]));
    rng.shuffle(&mut circuits);

    let n = circuits.len();
    let n_train =
        (math::round(train_fraction * n as f64) as usize).clamp(1, n - 1);
    let train_set: BTreeSet<u32> = circuits[..n_train].iter().copied().collect();

    let pick = |keep: bool| Dataset {
        flows: ds
            .flows
            .iter()
            .filter(|f| train_set.contains(&f.circuit_id) == keep)
            .cloned()
            .collect(),
        meta: ds.meta.clone(),
    };
    Ok((pick(true), pick(false)))
}
