//! The flow encoder: per-window 2-layer GRU, attention pooling over
//! windows, linear projection, and L2 normalization, with exact
//! reverse-mode gradients and a finite-difference checker.
//!
//! All numerics are 64-bit. Matrices are row-major; see `math`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::feature::FeatureTensor;
use crate::math::{self, add_mat_t_vec, add_outer, dot, mat_vec, sigmoid, softmax, tanh};
use crate::rng::{subrng, RngExt};
use crate::{Error, Result};

/// Input channels per packet row (signed size, inter-arrival gap).
pub const INPUT_CHANNELS: usize = 2;

/// Norm below which a pre-normalization vector counts as degenerate and
/// the embedding falls back to the first basis vector.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// GRU hidden width H.
    pub hidden: usize,
    /// Attention width A.
    pub attn: usize,
    /// Embedding dimension D.
    pub embed: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            hidden: 32,
            attn: 16,
            embed: 32,
        }
    }
}

/// One GRU layer: z/r/candidate gates with input and recurrent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruLayerParams {
            input_dim,
            hidden_dim,
            w_z: vec![0.0; hidden_dim * input_dim],
            w_r: vec![0.0; hidden_dim * input_dim],
            w_h: vec![0.0; hidden_dim * input_dim],
            u_z: vec![0.0; hidden_dim * hidden_dim],
            u_r: vec![0.0; hidden_dim * hidden_dim],
            u_h: vec![0.0; hidden_dim * hidden_dim],
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    fn init<R: RngCore>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let si = 1.0 / math::sqrt(input_dim as f64);
        let sh = 1.0 / math::sqrt(hidden_dim as f64);
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            for v in m.iter_mut() {
                *v = rng.range(-si, si);
            }
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            for v in m.iter_mut() {
                *v = rng.range(-sh, sh);
            }
        }
        p
    }
}

/// Tanh-gated linear attention: a = softmax(w^T tanh(V h)).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub hidden_dim: usize,
    pub attn_dim: usize,
    /// A x H gate matrix.
    pub v: Vec<f64>,
    /// A-dimensional scoring vector.
    pub w: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(hidden_dim: usize, attn_dim: usize) -> Self {
        AttentionParams {
            hidden_dim,
            attn_dim,
            v: vec![0.0; attn_dim * hidden_dim],
            w: vec![0.0; attn_dim],
        }
    }
}

/// All learnable parameters of one encoder tower.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub gru1: GruLayerParams,
    pub gru2: GruLayerParams,
    pub attn: AttentionParams,
    /// D x H projection.
    pub proj: Vec<f64>,
    pub proj_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        ModelParams {
            dims,
            gru1: GruLayerParams::zeros(INPUT_CHANNELS, dims.hidden),
            gru2: GruLayerParams::zeros(dims.hidden, dims.hidden),
            attn: AttentionParams::zeros(dims.hidden, dims.attn),
            proj: vec![0.0; dims.embed * dims.hidden],
            proj_bias: vec![0.0; dims.embed],
        }
    }

    /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, zero biases.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = subrng(seed, 0x6d6f_64656c); // "model"
        let mut p = Self::zeros(dims);
        p.gru1 = GruLayerParams::init(INPUT_CHANNELS, dims.hidden, &mut rng);
        p.gru2 = GruLayerParams::init(dims.hidden, dims.hidden, &mut rng);
        let sh = 1.0 / math::sqrt(dims.hidden as f64);
        let sa = 1.0 / math::sqrt(dims.attn as f64);
        for v in p.attn.v.iter_mut() {
            *v = rng.range(-sh, sh);
        }
        for v in p.attn.w.iter_mut() {
            *v = rng.range(-sa, sa);
        }
        for v in p.proj.iter_mut() {
            *v = rng.range(-sh, sh);
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// Named matrices with (rows, cols); vectors report cols = 1.
    /// Order is fixed and shared with the flat-coordinate view.
    pub fn matrices(&self) -> Vec<(&'static str, &[f64], usize, usize)> {
        let h = self.dims.hidden;
        let a = self.dims.attn;
        let d = self.dims.embed;
        vec![
            ("gru1.W_z", &self.gru1.w_z[..], h, INPUT_CHANNELS),
            ("gru1.W_r", &self.gru1.w_r[..], h, INPUT_CHANNELS),
            ("gru1.W_h", &self.gru1.w_h[..], h, INPUT_CHANNELS),
            ("gru1.U_z", &self.gru1.u_z[..], h, h),
            ("gru1.U_r", &self.gru1.u_r[..], h, h),
            ("gru1.U_h", &self.gru1.u_h[..], h, h),
            ("gru1.b_z", &self.gru1.b_z[..], h, 1),
            ("gru1.b_r", &self.gru1.b_r[..], h, 1),
            ("gru1.b_h", &self.gru1.b_h[..], h, 1),
            ("gru2.W_z", &self.gru2.w_z[..], h, h),
            ("gru2.W_r", &self.gru2.w_r[..], h, h),
            ("gru2.W_h", &self.gru2.w_h[..], h, h),
            ("gru2.U_z", &self.gru2.u_z[..], h, h),
            ("gru2.U_r", &self.gru2.u_r[..], h, h),
            ("gru2.U_h", &self.gru2.u_h[..], h, h),
            ("gru2.b_z", &self.gru2.b_z[..], h, 1),
            ("gru2.b_r", &self.gru2.b_r[..], h, 1),
            ("gru2.b_h", &self.gru2.b_h[..], h, 1),
            ("attn.V", &self.attn.v[..], a, h),
            ("attn.w", &self.attn.w[..], a, 1),
            ("P", &self.proj[..], d, h),
            ("b_P", &self.proj_bias[..], d, 1),
        ]
    }

    pub fn matrix_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        Some(match name {
            "gru1.W_z" => &mut self.gru1.w_z,
            "gru1.W_r" => &mut self.gru1.w_r,
            "gru1.W_h" => &mut self.gru1.w_h,
            "gru1.U_z" => &mut self.gru1.u_z,
            "gru1.U_r" => &mut self.gru1.u_r,
            "gru1.U_h" => &mut self.gru1.u_h,
            "gru1.b_z" => &mut self.gru1.b_z,
            "gru1.b_r" => &mut self.gru1.b_r,
            "gru1.b_h" => &mut self.gru1.b_h,
            "gru2.W_z" => &mut self.gru2.w_z,
            "gru2.W_r" => &mut self.gru2.w_r,
            "gru2.W_h" => &mut self.gru2.w_h,
            "gru2.U_z" => &mut self.gru2.u_z,
            "gru2.U_r" => &mut self.gru2.u_r,
            "gru2.U_h" => &mut self.gru2.u_h,
            "gru2.b_z" => &mut self.gru2.b_z,
            "gru2.b_r" => &mut self.gru2.b_r,
            "gru2.b_h" => &mut self.gru2.b_h,
            "attn.V" => &mut self.attn.v,
            "attn.w" => &mut self.attn.w,
            "P" => &mut self.proj,
            "b_P" => &mut self.proj_bias,
            _ => return None,
        })
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.gru1.w_z[..],
            &mut self.gru1.w_r[..],
            &mut self.gru1.w_h[..],
            &mut self.gru1.u_z[..],
            &mut self.gru1.u_r[..],
            &mut self.gru1.u_h[..],
            &mut self.gru1.b_z[..],
            &mut self.gru1.b_r[..],
            &mut self.gru1.b_h[..],
            &mut self.gru2.w_z[..],
            &mut self.gru2.w_r[..],
            &mut self.gru2.w_h[..],
            &mut self.gru2.u_z[..],
            &mut self.gru2.u_r[..],
            &mut self.gru2.u_h[..],
            &mut self.gru2.b_z[..],
            &mut self.gru2.b_r[..],
            &mut self.gru2.b_h[..],
            &mut self.attn.v[..],
            &mut self.attn.w[..],
            &mut self.proj[..],
            &mut self.proj_bias[..],
        ]
    }

    pub fn n_coords(&self) -> usize {
        self.matrices().iter().map(|(_, s, _, _)| s.len()).sum()
    }

    pub fn coord(&self, mut idx: usize) -> f64 {
        for (_, s, _, _) in self.matrices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("coordinate index out of range");
    }

    pub fn add_coord(&mut self, mut idx: usize, delta: f64) {
        for s in self.slices_mut() {
            if idx < s.len() {
                s[idx] += delta;
                return;
            }
            idx -= s.len();
        }
        panic!("coordinate index out of range");
    }

    /// self += scale * other, coordinate-wise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let others: Vec<Vec<f64>> = other.matrices().iter().map(|(_, s, _, _)| s.to_vec()).collect();
        for (mine, theirs) in self.slices_mut().into_iter().zip(others.iter()) {
            math::add_scaled(mine, theirs, scale);
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.matrices()
            .iter()
            .any(|(_, s, _, _)| s.iter().any(|v| !v.is_finite()))
    }
}

/// Unit-norm flow embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One GRU step's activations, kept for backprop.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub hbar: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub steps: Vec<GruStep>,
}

impl GruCache {
    pub fn hidden_seq(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.h.clone()).collect()
    }

    fn last_h(&self) -> &[f64] {
        &self.steps.last().expect("T >= 1").h
    }
}

fn check_layer_shapes(layer: &GruLayerParams) -> Result<()> {
    let (i, h) = (layer.input_dim, layer.hidden_dim);
    let ok = layer.w_z.len() == h * i
        && layer.w_r.len() == h * i
        && layer.w_h.len() == h * i
        && layer.u_z.len() == h * h
        && layer.u_r.len() == h * h
        && layer.u_h.len() == h * h
        && layer.b_z.len() == h
        && layer.b_r.len() == h
        && layer.b_h.len() == h;
    if ok {
        Ok(())
    } else {
        Err(Error::Shape("GRU layer parameter shapes inconsistent".into()))
    }
}

fn gru_forward_cached(layer: &GruLayerParams, xs: &[&[f64]], h0: &[f64]) -> Result<GruCache> {
    check_layer_shapes(layer)?;
    if xs.is_empty() {
        return Err(Error::Shape("GRU needs at least one input step".into()));
    }
    if h0.len() != layer.hidden_dim {
        return Err(Error::Shape(format!(
            "h0 has length {}, expected {}",
            h0.len(),
            layer.hidden_dim
        )));
    }
    let (i_dim, h_dim) = (layer.input_dim, layer.hidden_dim);
    let mut steps = Vec::with_capacity(xs.len());
    let mut h_prev = h0.to_vec();
    for x in xs {
        if x.len() != i_dim {
            return Err(Error::Shape(format!(
                "input step has length {}, expected {i_dim}",
                x.len()
            )));
        }
        let mut z = mat_vec(&layer.w_z, h_dim, i_dim, x);
        let uz = mat_vec(&layer.u_z, h_dim, h_dim, &h_prev);
        let mut r = mat_vec(&layer.w_r, h_dim, i_dim, x);
        let ur = mat_vec(&layer.u_r, h_dim, h_dim, &h_prev);
        for k in 0..h_dim {
            z[k] = sigmoid(z[k] + uz[k] + layer.b_z[k]);
            r[k] = sigmoid(r[k] + ur[k] + layer.b_r[k]);
        }
        let rh: Vec<f64> = (0..h_dim).map(|k| r[k] * h_prev[k]).collect();
        let mut hbar = mat_vec(&layer.w_h, h_dim, i_dim, x);
        let uh = mat_vec(&layer.u_h, h_dim, h_dim, &rh);
        for k in 0..h_dim {
            hbar[k] = tanh(hbar[k] + uh[k] + layer.b_h[k]);
        }
        let h: Vec<f64> = (0..h_dim)
            .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * hbar[k])
            .collect();
        h_prev = h.clone();
        steps.push(GruStep { z, r, hbar, h });
    }
    Ok(GruCache { steps })
}

/// Runs one GRU layer over an input sequence; returns all hidden states.
pub fn gru_forward(layer: &GruLayerParams, xs: &[Vec<f64>], h0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
    Ok(gru_forward_cached(layer, &refs, h0)?.hidden_seq())
}

/// Backprop through one GRU layer.
///
/// `dh_out[t]` is the loss gradient arriving at h_t from outside the
/// recurrence. Accumulates parameter gradients into `grads` and returns
/// the per-step input gradients.
fn gru_backward(
    layer: &GruLayerParams,
    xs: &[&[f64]],
    cache: &GruCache,
    dh_out: &[Vec<f64>],
    grads: &mut GruLayerParams,
) -> Vec<Vec<f64>> {
    let (i_dim, h_dim) = (layer.input_dim, layer.hidden_dim);
    let t_len = cache.steps.len();
    debug_assert_eq!(dh_out.len(), t_len);
    let zero_h = vec![0.0; h_dim];
    let mut dx = vec![vec![0.0; i_dim]; t_len];
    let mut carry = vec![0.0; h_dim];

    for t in (0..t_len).rev() {
        let step = &cache.steps[t];
        let h_prev = if t == 0 { &zero_h } else { &cache.steps[t - 1].h };
        let dh: Vec<f64> = (0..h_dim).map(|k| dh_out[t][k] + carry[k]).collect();

        let da_h: Vec<f64> = (0..h_dim)
            .map(|k| dh[k] * step.z[k] * (1.0 - step.hbar[k] * step.hbar[k]))
            .collect();
        let da_z: Vec<f64> = (0..h_dim)
            .map(|k| dh[k] * (step.hbar[k] - h_prev[k]) * step.z[k] * (1.0 - step.z[k]))
            .collect();

        // Candidate path: dW_h, dU_h over r (.) h_prev, and the r gate.
        add_outer(&mut grads.w_h, &da_h, xs[t]);
        let rh: Vec<f64> = (0..h_dim).map(|k| step.r[k] * h_prev[k]).collect();
        add_outer(&mut grads.u_h, &da_h, &rh);
        math::add_scaled(&mut grads.b_h, &da_h, 1.0);
        let mut d_rh = vec![0.0; h_dim];
        add_mat_t_vec(&mut d_rh, &layer.u_h, h_dim, h_dim, &da_h);
        let da_r: Vec<f64> = (0..h_dim)
            .map(|k| d_rh[k] * h_prev[k] * step.r[k] * (1.0 - step.r[k]))
            .collect();

        add_outer(&mut grads.w_z, &da_z, xs[t]);
        add_outer(&mut grads.u_z, &da_z, h_prev);
        math::add_scaled(&mut grads.b_z, &da_z, 1.0);
        add_outer(&mut grads.w_r, &da_r, xs[t]);
        add_outer(&mut grads.u_r, &da_r, h_prev);
        math::add_scaled(&mut grads.b_r, &da_r, 1.0);

        let mut next = vec![0.0; h_dim];
        for k in 0..h_dim {
            next[k] = dh[k] * (1.0 - step.z[k]) + d_rh[k] * step.r[k];
        }
        add_mat_t_vec(&mut next, &layer.u_z, h_dim, h_dim, &da_z);
        add_mat_t_vec(&mut next, &layer.u_r, h_dim, h_dim, &da_r);
        carry = next;

        add_mat_t_vec(&mut dx[t], &layer.w_z, h_dim, i_dim, &da_z);
        add_mat_t_vec(&mut dx[t], &layer.w_r, h_dim, i_dim, &da_r);
        add_mat_t_vec(&mut dx[t], &layer.w_h, h_dim, i_dim, &da_h);
    }
    dx
}

#[derive(Debug, Clone)]
pub struct WindowCache {
    /// Input rows actually consumed (a single zero row for empty windows).
    pub x_rows: Vec<[f64; INPUT_CHANNELS]>,
    pub gru1: GruCache,
    pub gru2: GruCache,
}

/// All intermediates of one `embed_flow` call, sufficient for an exact
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub windows: Vec<WindowCache>,
    /// tanh(V e_w) per window.
    pub attn_u: Vec<Vec<f64>>,
    pub attn_weights: Vec<f64>,
    pub pooled: Vec<f64>,
    pub pre_norm: Vec<f64>,
    pub norm: f64,
    pub embedding: Vec<f64>,
    pub degenerate: bool,
}

/// Encodes the first `valid_len` rows of one window through both GRU
/// layers; empty windows run a single all-zero step.
pub fn encode_window(params: &ModelParams, window: &[f64], valid_len: usize) -> Result<Vec<f64>> {
    let cache = encode_window_cached(params, window, valid_len)?;
    Ok(cache.gru2.last_h().to_vec())
}

fn encode_window_cached(
    params: &ModelParams,
    window: &[f64],
    valid_len: usize,
) -> Result<WindowCache> {
    if window.len() % INPUT_CHANNELS != 0 || valid_len > window.len() / INPUT_CHANNELS {
        return Err(Error::Shape(format!(
            "valid_len {valid_len} exceeds window rows {}",
            window.len() / INPUT_CHANNELS
        )));
    }
    let x_rows: Vec<[f64; INPUT_CHANNELS]> = if valid_len == 0 {
        vec![[0.0; INPUT_CHANNELS]]
    } else {
        (0..valid_len)
            .map(|row| [window[row * 2], window[row * 2 + 1]])
            .collect()
    };
    let zero_h = vec![0.0; params.dims.hidden];
    let refs1: Vec<&[f64]> = x_rows.iter().map(|r| &r[..]).collect();
    let gru1 = gru_forward_cached(&params.gru1, &refs1, &zero_h)?;
    let refs2: Vec<&[f64]> = gru1.steps.iter().map(|s| &s.h[..]).collect();
    let gru2 = gru_forward_cached(&params.gru2, &refs2, &zero_h)?;
    Ok(WindowCache { x_rows, gru1, gru2 })
}

/// Attention-MIL pooling: a = softmax(w^T tanh(V h_k)), z = sum a_k h_k.
pub fn attention_pool(params: &AttentionParams, hs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (z, a, _) = attention_pool_cached(params, hs)?;
    Ok((z, a))
}

fn attention_pool_cached(
    params: &AttentionParams,
    hs: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if hs.is_empty() {
        return Err(Error::Shape("attention pool needs at least one instance".into()));
    }
    let (a_dim, h_dim) = (params.attn_dim, params.hidden_dim);
    let mut logits = Vec::with_capacity(hs.len());
    let mut us = Vec::with_capacity(hs.len());
    for h in hs {
        if h.len() != h_dim {
            return Err(Error::Shape("attention instance width mismatch".into()));
        }
        let mut u = mat_vec(&params.v, a_dim, h_dim, h);
        for x in u.iter_mut() {
            *x = tanh(*x);
        }
        logits.push(dot(&params.w, &u));
        us.push(u);
    }
    let weights = softmax(&logits);
    let mut pooled = vec![0.0; h_dim];
    for (a, h) in weights.iter().zip(hs.iter()) {
        math::add_scaled(&mut pooled, h, *a);
    }
    Ok((pooled, weights, us))
}

/// Full forward pass: encode windows, pool, project, normalize.
pub fn embed_flow(params: &ModelParams, ft: &FeatureTensor) -> Result<(Embedding, ForwardCache)> {
    let d = params.dims.embed;
    let mut windows = Vec::with_capacity(ft.w);
    for k in 0..ft.w {
        windows.push(encode_window_cached(params, ft.window(k), ft.valid_len[k])?);
    }
    let encodings: Vec<Vec<f64>> = windows.iter().map(|w| w.gru2.last_h().to_vec()).collect();
    let (pooled, attn_weights, attn_u) = attention_pool_cached(&params.attn, &encodings)?;

    let mut pre_norm = mat_vec(&params.proj, d, params.dims.hidden, &pooled);
    math::add_scaled(&mut pre_norm, &params.proj_bias, 1.0);
    let norm = math::l2_norm(&pre_norm);

    let (embedding, degenerate) = if norm < NORM_EPS {
        // Degenerate all-zero flow: fixed direction so ordering stays total.
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        (e, true)
    } else {
        (pre_norm.iter().map(|v| v / norm).collect(), false)
    };

    let cache = ForwardCache {
        windows,
        attn_u,
        attn_weights,
        pooled,
        pre_norm,
        norm,
        embedding: embedding.clone(),
        degenerate,
    };
    Ok((Embedding(embedding), cache))
}

/// Exact gradients of `grad_embedding . embedding` with respect to every
/// parameter, from a matching forward cache.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_embedding: &[f64],
) -> Result<ModelParams> {
    let Dims { hidden: h_dim, attn: a_dim, embed: d } = params.dims;
    if grad_embedding.len() != d {
        return Err(Error::Shape(format!(
            "grad_embedding has length {}, expected {d}",
            grad_embedding.len()
        )));
    }
    let mut grads = params.zeros_like();
    if cache.degenerate {
        // The fallback basis vector is constant in the parameters.
        return Ok(grads);
    }

    // Through L2 normalization: dy = (g - v (v.g)) / ||y||.
    let v = &cache.embedding;
    let vg = dot(v, grad_embedding);
    let dy: Vec<f64> = (0..d)
        .map(|k| (grad_embedding[k] - v[k] * vg) / cache.norm)
        .collect();

    // Projection.
    add_outer(&mut grads.proj, &dy, &cache.pooled);
    math::add_scaled(&mut grads.proj_bias, &dy, 1.0);
    let mut d_pooled = vec![0.0; h_dim];
    add_mat_t_vec(&mut d_pooled, &params.proj, d, h_dim, &dy);

    // Attention pooling and softmax.
    let w_count = cache.windows.len();
    let encodings: Vec<&[f64]> = cache.windows.iter().map(|w| &w.gru2.last_h()[..]).collect();
    let scores: Vec<f64> = encodings.iter().map(|e| dot(&d_pooled, e)).collect();
    let mean_score: f64 = cache
        .attn_weights
        .iter()
        .zip(scores.iter())
        .map(|(a, c)| a * c)
        .sum();
    let mut d_enc: Vec<Vec<f64>> = Vec::with_capacity(w_count);
    for k in 0..w_count {
        let a_k = cache.attn_weights[k];
        let ds = a_k * (scores[k] - mean_score);
        // Through the tanh gate.
        let u = &cache.attn_u[k];
        let d_pre: Vec<f64> = (0..a_dim)
            .map(|j| ds * params.attn.w[j] * (1.0 - u[j] * u[j]))
            .collect();
        add_outer(&mut grads.attn.v, &d_pre, encodings[k]);
        math::add_scaled(&mut grads.attn.w, u, ds);
        let mut de: Vec<f64> = (0..h_dim).map(|i| a_k * d_pooled[i]).collect();
        add_mat_t_vec(&mut de, &params.attn.v, a_dim, h_dim, &d_pre);
        d_enc.push(de);
    }

    // Per-window BPTT through both GRU layers.
    for (k, wc) in cache.windows.iter().enumerate() {
        let t_len = wc.gru2.steps.len();
        let mut dh2 = vec![vec![0.0; h_dim]; t_len];
        dh2[t_len - 1] = d_enc[k].clone();
        let xs2: Vec<&[f64]> = wc.gru1.steps.iter().map(|s| &s.h[..]).collect();
        let dh1 = gru_backward(&params.gru2, &xs2, &wc.gru2, &dh2, &mut grads.gru2);
        let xs1: Vec<&[f64]> = wc.x_rows.iter().map(|r| &r[..]).collect();
        gru_backward(&params.gru1, &xs1, &wc.gru1, &dh1, &mut grads.gru1);
    }
    Ok(grads)
}

/// Relative error with an absolute floor, so finite-difference roundoff
/// on near-zero coordinates does not dominate the report.
fn rel_err(a: f64, b: f64) -> f64 {
    math::abs(a - b) / math::abs(a).max(math::abs(b)).max(1e-2)
}

/// Central-difference check of `backward` against the forward pass.
///
/// Perturbs every parameter coordinate (or a seeded 200-coordinate
/// subset when the model is larger) with step 1e-5 and reports the
/// maximum relative error against the analytic gradients.
pub fn finite_diff_check(params: &ModelParams, ft: &FeatureTensor, seed: u64) -> Result<f64> {
    let mut rng = subrng(seed, 0x6664); // "fd"
    let d = params.dims.embed;
    let mut g: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let gn = math::l2_norm(&g);
    for x in g.iter_mut() {
        *x /= gn;
    }

    let (_, cache) = embed_flow(params, ft)?;
    let grads = backward(params, &cache, &g)?;

    let n = params.n_coords();
    let coords: Vec<usize> = if n <= 200 {
        (0..n).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut all);
        all.truncate(200);
        all
    };
    Ok(max_rel_error_vs_fd(params, ft, &g, &grads, &coords))
}

/// Max relative error between supplied analytic gradients and central
/// finite differences over the given coordinates.
pub fn max_rel_error_vs_fd(
    params: &ModelParams,
    ft: &FeatureTensor,
    grad_embedding: &[f64],
    grads: &ModelParams,
    coords: &[usize],
) -> f64 {
    const STEP: f64 = 1e-5;
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = params.clone();
        plus.add_coord(i, STEP);
        let mut minus = params.clone();
        minus.add_coord(i, -STEP);
        let f_plus = dot(grad_embedding, embed_flow(&plus, ft).unwrap().0.as_slice());
        let f_minus = dot(grad_embedding, embed_flow(&minus, ft).unwrap().0.as_slice());
        let fd = (f_plus - f_minus) / (2.0 * STEP);
        worst = worst.max(rel_err(grads.coord(i), fd));
    }
    worst
}
