//! Feed-forward dispatch policy `x = π(φ; w)`.
//!
//! Topology: input → tanh hidden → tanh hidden → linear → scaled tanh. The
//! last stage maps onto the open box `(x̲, x̄)`, so every output is feasible
//! for the box constraints whatever the weights are.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acpf::{Dispatch, LoadVector};
use crate::caseio::VariableIndex;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ccopf-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Smallest hidden layer width.
pub const MIN_HIDDEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Every setpoint reacts to the full load vector.
    Full,
    /// Only active outputs react, and only to total active demand.
    Agc,
}

impl std::fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyMode::Full => "full",
            PolicyMode::Agc => "agc",
        })
    }
}

/// Weights, biases and output scaling of a policy. Serializes as the
/// versioned checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub format: String,
    pub version: u32,
    pub mode: PolicyMode,
    /// `[input, hidden, hidden, output]`.
    pub layer_dims: [usize; 4],
    /// Input features that reach the network; masked features read as zero.
    pub mask: Vec<bool>,
    /// Number of generator-voltage outputs (they lead the output vector).
    pub n_voltage_outputs: usize,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    /// `W1, b1, W2, b2, W3, b3`, matrices row-major.
    pub weights: Vec<f64>,
    pub seed: u64,
}

/// Offsets of each parameter block inside `PolicyParams::weights`.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    dims: [usize; 4],
    w: [usize; 3],
    b: [usize; 3],
    len: usize,
}

impl Blocks {
    fn new(dims: [usize; 4]) -> Self {
        let mut w = [0; 3];
        let mut b = [0; 3];
        let mut off = 0;
        for l in 0..3 {
            w[l] = off;
            off += dims[l + 1] * dims[l];
            b[l] = off;
            off += dims[l + 1];
        }
        Self { dims, w, b, len: off }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// tanh of the pre-scaling outputs.
    pub t: Vec<f64>,
    pub x: Vec<f64>,
}

fn hidden_width(input: usize) -> usize {
    input.div_ceil(2).max(MIN_HIDDEN)
}

/// Fresh policy: weights drawn from N(0, 1) with the given seed, biases zero,
/// frozen weights zero.
pub fn init_policy(index: &VariableIndex, mode: PolicyMode, seed: u64) -> PolicyParams {
    let input = match mode {
        PolicyMode::Full => index.dim_phi(),
        PolicyMode::Agc => 1,
    };
    let h = hidden_width(input);
    let dims = [input, h, h, index.dim_x()];
    let blocks = Blocks::new(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; blocks.len];
    for l in 0..3 {
        let n = dims[l + 1] * dims[l];
        for w in &mut weights[blocks.w[l]..blocks.w[l] + n] {
            *w = StandardNormal.sample(&mut rng);
        }
    }
    let mut params = PolicyParams {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        mode,
        layer_dims: dims,
        mask: vec![true; input],
        n_voltage_outputs: index.n_gen(),
        x_lower: index.x_lower.clone(),
        x_upper: index.x_upper.clone(),
        weights,
        seed,
    };
    for i in params.frozen_indices() {
        params.weights[i] = 0.0;
    }
    params
}

impl PolicyParams {
    fn blocks(&self) -> Blocks {
        Blocks::new(self.layer_dims)
    }

    pub fn dim_w(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[3]
    }

    /// Parameters that never change: in agc mode, the output-layer weights
    /// feeding generator-voltage outputs.
    pub fn frozen_indices(&self) -> Vec<usize> {
        match self.mode {
            PolicyMode::Full => Vec::new(),
            PolicyMode::Agc => {
                let bl = self.blocks();
                let h2 = self.layer_dims[2];
                (0..self.n_voltage_outputs * h2)
                    .map(|i| bl.w[2] + i)
                    .collect()
            }
        }
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dim_w()];
        for i in self.frozen_indices() {
            mask[i] = true;
        }
        mask
    }

    /// Network input for a load realization.
    pub fn features(&self, phi: &LoadVector) -> Vec<f64> {
        match self.mode {
            PolicyMode::Full => phi
                .to_phi()
                .into_iter()
                .zip(&self.mask)
                .map(|(v, &on)| if on { v } else { 0.0 })
                .collect(),
            PolicyMode::Agc => vec![if self.mask[0] { phi.total_active() } else { 0.0 }],
        }
    }

    fn check_input(&self, phi: &LoadVector) -> Result<()> {
        let n = phi.p_d.len() + phi.q_d.len();
        if self.mode == PolicyMode::Full && n != self.input_dim() {
            return Err(Error::Dimension(format!(
                "policy expects {} load features, got {n}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, phi: &LoadVector) -> Result<ForwardCache> {
        self.check_input(phi)?;
        Ok(self.run(self.features(phi)))
    }

    fn run(&self, input: Vec<f64>) -> ForwardCache {
        let bl = self.blocks();
        let w = &self.weights;
        let layer = |l: usize, a: &[f64]| -> Vec<f64> {
            let (rows, cols) = (bl.dims[l + 1], bl.dims[l]);
            (0..rows)
                .map(|r| {
                    let row = &w[bl.w[l] + r * cols..bl.w[l] + (r + 1) * cols];
                    w[bl.b[l] + r] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect()
        };
        let h1: Vec<f64> = layer(0, &input).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = layer(1, &h1).into_iter().map(f64::tanh).collect();
        let t: Vec<f64> = layer(2, &h2).into_iter().map(f64::tanh).collect();
        let x = t
            .iter()
            .zip(self.x_lower.iter().zip(&self.x_upper))
            .map(|(ti, (lo, hi))| (0.5 * (hi + lo) + 0.5 * (hi - lo) * ti).clamp(*lo, *hi))
            .collect();
        ForwardCache {
            input,
            h1,
            h2,
            t,
            x,
        }
    }

    /// Reverse-mode product `(∇_w x)ᵀ g` for an upstream gradient `g = ∂ℓ/∂x`.
    /// Frozen parameters receive zero.
    pub fn backprop(&self, cache: &ForwardCache, upstream: &[f64]) -> Vec<f64> {
        let bl = self.blocks();
        let w = &self.weights;
        let mut grad = vec![0.0; bl.len];

        // output scaling stage and tanh
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.t)
            .zip(self.x_lower.iter().zip(&self.x_upper))
            .map(|((g, t), (lo, hi))| g * 0.5 * (hi - lo) * (1.0 - t * t))
            .collect();

        let acts: [&[f64]; 3] = [&cache.input, &cache.h1, &cache.h2];
        for l in (0..3).rev() {
            let (rows, cols) = (bl.dims[l + 1], bl.dims[l]);
            let a = acts[l];
            for r in 0..rows {
                let d = delta[r];
                grad[bl.b[l] + r] = d;
                if d != 0.0 {
                    let g = &mut grad[bl.w[l] + r * cols..bl.w[l] + (r + 1) * cols];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi = d * ai;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &w[bl.w[l] + r * cols..bl.w[l] + (r + 1) * cols];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += d * wi;
                }
            }
            // hidden activations are tanh
            for (n, h) in next.iter_mut().zip(a) {
                *n *= 1.0 - h * h;
            }
            delta = next;
        }
        for i in self.frozen_indices() {
            grad[i] = 0.0;
        }
        grad
    }

    /// Write to a checkpoint file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: PolicyParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "not a policy checkpoint (format `{}`)",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let d = self.layer_dims;
        if d.iter().any(|&k| k == 0) {
            return Err(Error::Validation("zero-width layer".into()));
        }
        if self.mode == PolicyMode::Agc && d[0] != 1 {
            return Err(Error::Validation("agc policy must have a single input".into()));
        }
        if self.weights.len() != Blocks::new(d).len
            || self.mask.len() != d[0]
            || self.x_lower.len() != d[3]
            || self.x_upper.len() != d[3]
            || self.n_voltage_outputs > d[3]
        {
            return Err(Error::Validation(
                "checkpoint arrays do not match layer dimensions".into(),
            ));
        }
        Ok(())
    }

    /// Check that this policy drives the network described by `index`.
    pub fn check_network(&self, index: &VariableIndex) -> Result<()> {
        let input_ok = match self.mode {
            PolicyMode::Full => self.input_dim() == index.dim_phi(),
            PolicyMode::Agc => true,
        };
        if !input_ok
            || self.output_dim() != index.dim_x()
            || self.n_voltage_outputs != index.n_gen()
        {
            return Err(Error::Dimension(format!(
                "policy {:?} (inputs {}, outputs {}) does not fit network with dim(φ) = {}, dim(x) = {}",
                self.mode,
                self.input_dim(),
                self.output_dim(),
                index.dim_phi(),
                index.dim_x()
            )));
        }
        Ok(())
    }
}

/// Evaluate the policy.
pub fn forward(params: &PolicyParams, phi: &LoadVector) -> Result<Dispatch> {
    let cache = params.forward_cached(phi)?;
    let ng = params.n_voltage_outputs;
    Ok(Dispatch {
        v_set: cache.x[..ng].to_vec(),
        p_g: cache.x[ng..].to_vec(),
    })
}

/// Full `dim(x) × dim(w)` Jacobian of the outputs with respect to the
/// parameters, one reverse sweep per output.
pub fn policy_jacobian(params: &PolicyParams, phi: &LoadVector) -> Result<DMatrix<f64>> {
    let cache = params.forward_cached(phi)?;
    let m = params.output_dim();
    let mut jac = DMatrix::zeros(m, params.dim_w());
    let mut seed = vec![0.0; m];
    for i in 0..m {
        seed[i] = 1.0;
        let row = params.backprop(&cache, &seed);
        for (c, v) in row.into_iter().enumerate() {
            jac[(i, c)] = v;
        }
        seed[i] = 0.0;
    }
    Ok(jac)
}
