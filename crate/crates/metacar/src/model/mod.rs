//! Trainable dynamics model: gated recurrent encoder over a history window
//! plus a two-layer head emitting (dv_x, dv_y, domega), with exact
//! reverse-mode gradients and exact Hessian-vector products.

mod checkpoint;
mod net;
mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::Layout;
pub use scalar::{Dual, Real};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::HistoryWindow;

/// Fixed input standardization: velocities scaled by 1/5, yaw rate by 1/3,
/// actions unscaled. Outputs stay in SI units per second.
pub const VX_SCALE: f64 = 0.2;
pub const VY_SCALE: f64 = 0.2;
pub const OMEGA_SCALE: f64 = 1.0 / 3.0;

pub fn standardize(dyn_state: &[f64; 3]) -> [f64; 3] {
    [
        dyn_state[0] * VX_SCALE,
        dyn_state[1] * VY_SCALE,
        dyn_state[2] * OMEGA_SCALE,
    ]
}

pub fn destandardize(scaled: &[f64; 3]) -> [f64; 3] {
    [
        scaled[0] / VX_SCALE,
        scaled[1] / VY_SCALE,
        scaled[2] / OMEGA_SCALE,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// History length n; windows hold n+1 pairs.
    pub history: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    /// Auxiliary feature count L.
    pub aux: usize,
    pub dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history: 20,
            hidden: 32,
            head_hidden: 32,
            aux: 0,
            dt: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        5 + self.aux
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.input_dim(), self.hidden, self.head_hidden)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub dv_x: f64,
    pub dv_y: f64,
    pub domega: f64,
}

impl Prediction {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dv_x, self.dv_y, self.domega]
    }
}

/// All trainable parameters of one sequence model as a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub cfg: ModelConfig,
    pub data: Vec<f64>,
}

impl ModelWeights {
    /// Per-tensor uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let lay = cfg.layout();
        let sizes = lay.sizes();
        let mut data = Vec::with_capacity(lay.total());
        for (k, &size) in sizes.iter().enumerate() {
            let bound = 1.0 / (lay.fan_in(k) as f64).sqrt();
            for _ in 0..size {
                data.push(rng.gen_range(-bound..bound));
            }
        }
        Self { cfg, data }
    }

    pub fn zeros(cfg: ModelConfig) -> Self {
        let n = cfg.layout().total();
        Self {
            cfg,
            data: vec![0.0; n],
        }
    }

    /// self += scale * other (elementwise over the flat parameters).
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.data.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    /// Zero the final affine layer so the model outputs (0,0,0) everywhere.
    pub fn zero_head_output(&mut self) {
        let lay = self.cfg.layout();
        let start = lay.offset(11);
        for v in self.data[start..].iter_mut() {
            *v = 0.0;
        }
    }
}

pub fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_shapes(weights: &ModelWeights, window: &HistoryWindow, aux: &[f64]) -> Result<()> {
    if window.pairs.len() != weights.cfg.history + 1 {
        return Err(Error::ShapeMismatch {
            what: "history window length",
            expected: weights.cfg.history + 1,
            got: window.pairs.len(),
        });
    }
    if aux.len() != weights.cfg.aux {
        return Err(Error::ShapeMismatch {
            what: "aux feature length",
            expected: weights.cfg.aux,
            got: aux.len(),
        });
    }
    Ok(())
}

/// Standardized per-step input vector for one (state, action) pair.
pub fn step_input(dyn_state: &[f64; 3], d: f64, delta_cmd: f64, aux: &[f64]) -> Vec<f64> {
    let s = standardize(dyn_state);
    let mut x = Vec::with_capacity(5 + aux.len());
    x.extend_from_slice(&s);
    x.push(d);
    x.push(delta_cmd);
    x.extend_from_slice(aux);
    x
}

fn window_inputs(window: &HistoryWindow, aux: &[f64]) -> Vec<Vec<f64>> {
    window
        .pairs
        .iter()
        .map(|(s, u)| step_input(s, u.d, u.delta_cmd, aux))
        .collect()
}

/// Deterministic forward pass: encoder over the window from a zero hidden
/// state, head on the final hidden state.
pub fn forward(weights: &ModelWeights, window: &HistoryWindow, aux: &[f64]) -> Result<Prediction> {
    check_shapes(weights, window, aux)?;
    let lay = weights.cfg.layout();
    let inputs = window_inputs(window, aux);
    let out = net::forward_window(&weights.data, &lay, &inputs, None);
    Ok(Prediction {
        dv_x: out[0],
        dv_y: out[1],
        domega: out[2],
    })
}

/// Forward-Euler step of the dynamic sub-state; pose integration is the
/// caller's job via the kinematic rows.
pub fn predict_next(
    weights: &ModelWeights,
    window: &HistoryWindow,
    aux: &[f64],
    dt: f64,
) -> Result<[f64; 3]> {
    let p = forward(weights, window, aux)?;
    let cur = window.pairs.last().unwrap().0;
    Ok([
        cur[0] + p.dv_x * dt,
        cur[1] + p.dv_y * dt,
        cur[2] + p.domega * dt,
    ])
}

/// Mean squared prediction error over the batch with its exact gradient.
pub fn loss_and_grad(
    weights: &ModelWeights,
    windows: &[HistoryWindow],
    targets: &[[f64; 3]],
    aux: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if windows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    debug_assert_eq!(windows.len(), targets.len());
    check_shapes(weights, &windows[0], aux)?;
    let lay = weights.cfg.layout();
    let batch: Vec<Vec<Vec<f64>>> = windows.iter().map(|w| window_inputs(w, aux)).collect();
    Ok(net::loss_and_grad_generic(
        &weights.data,
        &lay,
        &batch,
        targets,
    ))
}

/// Batch loss without the gradient.
pub fn loss(
    weights: &ModelWeights,
    windows: &[HistoryWindow],
    targets: &[[f64; 3]],
    aux: &[f64],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_shapes(weights, &windows[0], aux)?;
    let lay = weights.cfg.layout();
    let mut total = 0.0;
    for (w, y) in windows.iter().zip(targets.iter()) {
        let inputs: Vec<Vec<f64>> = window_inputs(w, aux);
        let out = net::forward_window(&weights.data, &lay, &inputs, None);
        for j in 0..3 {
            let e = out[j] - y[j];
            total += e * e;
        }
    }
    Ok(total / (3.0 * windows.len() as f64))
}

/// Exact Hessian-vector product of the batch loss: the hand-written gradient
/// is run on dual numbers with tangents seeded by `v`, so the tangent of the
/// gradient is H v with no finite-difference error.
pub fn hessian_vector_product(
    weights: &ModelWeights,
    v: &[f64],
    windows: &[HistoryWindow],
    targets: &[[f64; 3]],
    aux: &[f64],
) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_shapes(weights, &windows[0], aux)?;
    let lay = weights.cfg.layout();
    let w_dual: Vec<Dual> = weights
        .data
        .iter()
        .zip(v.iter())
        .map(|(w, t)| Dual::new(*w, *t))
        .collect();
    let batch: Vec<Vec<Vec<Dual>>> = windows
        .iter()
        .map(|w| {
            window_inputs(w, aux)
                .into_iter()
                .map(|xs| xs.into_iter().map(|x| Dual::new(x, 0.0)).collect())
                .collect()
        })
        .collect();
    let (_, grad) = net::loss_and_grad_generic(&w_dual, &lay, &batch, targets);
    Ok(grad.into_iter().map(|g| g.t).collect())
}

/// Incremental encoder state for horizon rollouts: consume the seed history
/// once, then advance one (state, action) pair per step.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub hidden: Vec<f64>,
}

impl EncoderState {
    pub fn new(weights: &ModelWeights) -> Self {
        Self {
            hidden: vec![0.0; weights.cfg.hidden],
        }
    }

    pub fn consume(&mut self, weights: &ModelWeights, dyn_state: &[f64; 3], d: f64, delta_cmd: f64, aux: &[f64]) {
        let lay = weights.cfg.layout();
        let x = step_input(dyn_state, d, delta_cmd, aux);
        net::gru_step(&weights.data, &lay, &mut self.hidden, &x, None);
    }

    pub fn predict(&self, weights: &ModelWeights) -> Prediction {
        let lay = weights.cfg.layout();
        let out = net::head_forward(&weights.data, &lay, &self.hidden, None);
        Prediction {
            dv_x: out[0],
            dv_y: out[1],
            domega: out[2],
        }
    }
}
