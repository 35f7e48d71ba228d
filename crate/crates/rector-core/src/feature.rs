//! Window partitioning and the (W x L x 2) per-packet feature tensor.
//!
//! Channel 0 is the direction-signed normalized packet size,
//! channel 1 the within-window inter-arrival gap. Windows never share
//! state, so damage to one window stays in that window's slice.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::trace::{FlowTrace, PacketRecord};

/// Size normalization constant: Ethernet MTU; larger packets clip.
pub const SIZE_NORM: f64 = 1500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Number of non-overlapping windows.
    pub w: usize,
    /// Window duration in seconds.
    pub window_s: f64,
    /// Maximum packets kept per window.
    pub l: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            w: 10,
            window_s: 5.0,
            l: 100,
        }
    }
}

/// Dense W x L x 2 feature array with per-window packet counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub w: usize,
    pub l: usize,
    /// Row-major values, window-major then packet row then channel.
    pub values: Vec<f64>,
    pub valid_len: Vec<usize>,
}

impl FeatureTensor {
    pub fn zeros(spec: &WindowSpec) -> Self {
        FeatureTensor {
            w: spec.w,
            l: spec.l,
            values: vec![0.0; spec.w * spec.l * 2],
            valid_len: vec![0; spec.w],
        }
    }

    /// The L x 2 slice for window `k`.
    pub fn window(&self, k: usize) -> &[f64] {
        &self.values[k * self.l * 2..(k + 1) * self.l * 2]
    }

    fn window_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.l * 2..(k + 1) * self.l * 2]
    }
}

/// Assigns packet at time t to window floor(t / window_s); packets at or
/// past W * window_s are discarded. Intervals are half-open.
pub fn partition_windows(trace: &FlowTrace, spec: &WindowSpec) -> Vec<Vec<PacketRecord>> {
    let mut windows = vec![Vec::new(); spec.w];
    for p in &trace.packets {
        let idx = math::floor(p.t / spec.window_s) as usize;
        if idx < spec.w {
            windows[idx].push(*p);
        }
    }
    windows
}

/// Fills an L x 2 row-major matrix for one window's packets.
///
/// Row l: channel 0 = dir * min(size, 1500) / 1500, channel 1 = gap to
/// the previous packet in the same window (first packet 0), clipped to
/// the window duration. Rows past the packet count stay zero; windows
/// with more than L packets keep the first L.
pub fn featurize_window(packets: &[PacketRecord], l: usize, window_s: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), l * 2);
    out.fill(0.0);
    let mut prev_t: Option<f64> = None;
    for (row, p) in packets.iter().take(l).enumerate() {
        let size = (p.size as f64).min(SIZE_NORM);
        out[row * 2] = p.dir as f64 * size / SIZE_NORM;
        let gap: f64 = match prev_t {
            None => 0.0,
            Some(t) => (p.t - t).clamp(0.0, window_s),
        };
        out[row * 2 + 1] = gap;
        prev_t = Some(p.t);
    }
}

/// Number of packets a window contributes to the tensor (capped at L).
fn kept(packets: &[PacketRecord], l: usize) -> usize {
    packets.len().min(l)
}

pub fn featurize_flow(trace: &FlowTrace, spec: &WindowSpec) -> FeatureTensor {
    let windows = partition_windows(trace, spec);
    let mut ft = FeatureTensor::zeros(spec);
    for (k, packets) in windows.iter().enumerate() {
        ft.valid_len[k] = kept(packets, spec.l);
        featurize_window(packets, spec.l, spec.window_s, ft.window_mut(k));
    }
    ft
}
