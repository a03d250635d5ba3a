//! Leaky integrate-and-fire neuron mathematics and network topology.
//!
//! Everything here is a pure function over plain `f64` values. The whole
//! numerical core runs in double precision; the only place single precision
//! is permitted is checkpoint serialization (and the default checkpoint
//! writer keeps f64 anyway).
//!
//! One contract matters beyond ordinary floating-point care: dot products
//! over presynaptic inputs always sum in ascending presynaptic index order.
//! The asynchronous and layered engines are tested for *bit-exact* agreement
//! under layer-synchronizing presets, and that only holds if both sides
//! accumulate currents in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major weight matrix: `rows` postsynaptic neurons, `cols`
/// presynaptic inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in &rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    context: "weight matrix row",
                    expected: n_cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: n_rows, cols: n_cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// LIF neuron parameters. Reset is hard-to-zero; there is no soft-reset
/// variant in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane time constant, milliseconds.
    pub tau_m_ms: f64,
    /// Firing threshold (dimensionless potential). A neuron fires when its
    /// potential strictly exceeds this value.
    pub u_thr: f64,
}

impl LifParams {
    pub fn new(tau_m_ms: f64, u_thr: f64) -> Result<Self> {
        if !(tau_m_ms > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "membrane time constant must be > 0, got {tau_m_ms}"
            )));
        }
        if !(u_thr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "membrane potential threshold must be > 0, got {u_thr}"
            )));
        }
        Ok(Self { tau_m_ms, u_thr })
    }
}

/// Feedforward fully-connected network: layer sizes plus one inbound weight
/// matrix per layer. Neuron state vectors are flat over all layers; the
/// index range of layer `l` is `[layer_offset(l), layer_offset(l) + size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    n_input: usize,
    layer_sizes: Vec<usize>,
    weights: Vec<WeightMatrix>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl NetworkTopology {
    pub fn new(n_input: usize, layer_sizes: Vec<usize>, weights: Vec<WeightMatrix>) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        if weights.len() != layer_sizes.len() {
            return Err(Error::DimensionMismatch {
                context: "weight matrices per layer",
                expected: layer_sizes.len(),
                got: weights.len(),
            });
        }
        let mut fan_in = n_input;
        for (l, (w, &size)) in weights.iter().zip(&layer_sizes).enumerate() {
            if w.rows() != size || w.cols() != fan_in {
                return Err(Error::InvalidConfig(format!(
                    "layer {l}: weight shape {}x{} does not match {size}x{fan_in}",
                    w.rows(),
                    w.cols()
                )));
            }
            fan_in = size;
        }
        let offsets = Self::compute_offsets(&layer_sizes);
        Ok(Self { n_input, layer_sizes, weights, offsets })
    }

    fn compute_offsets(layer_sizes: &[usize]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in layer_sizes {
            acc += s;
            offsets.push(acc);
        }
        offsets
    }

    /// Rebuilds derived fields after deserialization.
    pub fn restore(&mut self) {
        self.offsets = Self::compute_offsets(&self.layer_sizes);
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Total neuron count over all layers.
    pub fn n_neurons(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn weights(&self) -> &[WeightMatrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [WeightMatrix] {
        &mut self.weights
    }

    /// Flat index of the first neuron of layer `l` (0-based layer index).
    pub fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// Flat index range of layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    /// Layer containing flat neuron index `n`.
    pub fn layer_of(&self, n: usize) -> usize {
        debug_assert!(n < self.n_neurons());
        // offsets is sorted; partition_point returns the first offset > n.
        self.offsets.partition_point(|&o| o <= n) - 1
    }

    /// Number of presynaptic inputs feeding layer `l`.
    pub fn fan_in(&self, l: usize) -> usize {
        if l == 0 {
            self.n_input
        } else {
            self.layer_sizes[l - 1]
        }
    }

    /// Flat index range of the output layer.
    pub fn output_range(&self) -> std::ops::Range<usize> {
        self.layer_range(self.n_layers() - 1)
    }

    pub fn n_hidden(&self) -> usize {
        self.n_neurons() - self.layer_sizes[self.n_layers() - 1]
    }

    /// Zeroed flat state vector (one entry per neuron).
    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.n_neurons()]
    }

    /// Uniform init in `±sqrt(1/fan_in)` per layer, drawn from `rng`.
    pub fn init_weights(&mut self, rng: &mut impl rand::Rng) {
        let mut fan_in = self.n_input;
        for (l, w) in self.weights.iter_mut().enumerate() {
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.gen_range(-bound..bound);
            }
            fan_in = self.layer_sizes[l];
        }
    }
}

/// Postsynaptic currents from a presynaptic spike vector: `W · s`.
///
/// Summation runs over presynaptic index `j` in ascending order; this is a
/// reproducibility contract, not an optimization detail.
pub fn synaptic_current(weights: &WeightMatrix, spikes: &[f64]) -> Result<Vec<f64>> {
    if spikes.len() != weights.cols() {
        return Err(Error::DimensionMismatch {
            context: "synaptic_current spike vector",
            expected: weights.cols(),
            got: spikes.len(),
        });
    }
    let mut out = Vec::with_capacity(weights.rows());
    for i in 0..weights.rows() {
        let row = weights.row(i);
        let mut acc = 0.0;
        for j in 0..spikes.len() {
            acc += row[j] * spikes[j];
        }
        out.push(acc);
    }
    Ok(out)
}

/// Analytical membrane decay over `delta_t` milliseconds:
/// `u · exp(-delta_t / tau_m)`.
#[inline]
pub fn decay(u: f64, delta_t_ms: f64, tau_m_ms: f64) -> f64 {
    debug_assert!(delta_t_ms >= 0.0 && tau_m_ms > 0.0);
    u * (-delta_t_ms / tau_m_ms).exp()
}

/// Threshold function: fires iff the potential strictly exceeds `u_thr`.
#[inline]
pub fn threshold(u: f64, u_thr: f64) -> bool {
    u > u_thr
}

/// Result of one atomic event-driven neuron update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventUpdate {
    /// Potential after the update (0 on a spike, hard reset).
    pub u_new: f64,
    pub spiked: bool,
    /// Potential just before the reset branch. Recorded on every update so
    /// momentum scheduling and the gradient tape see a branch-uniform value.
    pub u_pre_reset: f64,
}

/// The atomic event-driven LIF update: decay the stored potential by the
/// elapsed time, integrate the incoming current, then evaluate the threshold
/// and hard-reset on a spike.
#[inline]
pub fn event_update(u_prev: f64, x_t: f64, delta_t_ms: f64, params: &LifParams) -> EventUpdate {
    let u_minus = decay(u_prev, delta_t_ms, params.tau_m_ms);
    let u_plus = u_minus + x_t;
    if threshold(u_plus, params.u_thr) {
        EventUpdate { u_new: 0.0, spiked: true, u_pre_reset: u_plus }
    } else {
        EventUpdate { u_new: u_plus, spiked: false, u_pre_reset: u_plus }
    }
}
