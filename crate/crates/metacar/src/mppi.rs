//! Sampling-based MPC: roll out a dynamics model under noisy control
//! sequences, score trajectories with tracking + control + uncertainty
//! costs, and softmax-average the samples into the next control plan.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::model::EncoderState;
use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState};

/// Cost assigned to rollouts that leave the finite range; effectively zero
/// softmax weight unless every sample diverges.
pub const COST_SENTINEL: f64 = 1e30;

/// Tracking-cost weights: position error in m^2, speed error in (m/s)^2.
pub const POS_WEIGHT: f64 = 1.0;
pub const SPEED_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MPPIConfig {
    /// Horizon length in steps.
    pub horizon: usize,
    /// Number of sampled control sequences.
    pub samples: usize,
    /// Noise standard deviations (throttle, steer); the covariance is
    /// diagonal.
    pub sigma_eps: [f64; 2],
    /// Softmax temperature.
    pub lambda: f64,
    /// Control-cost weight.
    pub gamma_ctrl: f64,
    /// Uncertainty-cost weight.
    pub gamma_unc: f64,
    /// Per-step ceiling on the uncertainty entering the stage cost. The
    /// ensemble variance has a fat tail on off-distribution rollouts; without
    /// a ceiling single spikes can outvote the tracking cost entirely.
    pub sigma_cap: f64,
    pub dt: f64,
}

impl Default for MPPIConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            samples: 512,
            sigma_eps: [0.15, 0.2],
            lambda: 0.1,
            gamma_ctrl: 0.05,
            gamma_unc: 10.0,
            sigma_cap: 1e9,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefPoint {
    pub p_x: f64,
    pub p_y: f64,
    pub speed: f64,
}

/// Reference states indexed by horizon step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub points: Vec<RefPoint>,
}

impl ReferenceTrajectory {
    pub fn point(&self, k: usize) -> &RefPoint {
        self.points.get(k).unwrap_or_else(|| {
            self.points.last().expect("reference trajectory is empty")
        })
    }
}

/// Mean control sequence carried between cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub v: Vec<ControlInput>,
}

impl ControlPlan {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            v: vec![ControlInput::zero(); horizon],
        }
    }
}

/// A dynamics model usable inside rollouts. Implementations capture the
/// measured history at construction; `step` advances the dynamic sub-state
/// and reports the model's scalar uncertainty for that step.
pub trait RolloutModel: Sync {
    type RState: Clone + Send;
    fn init(&self) -> Self::RState;
    fn step(&self, rs: &mut Self::RState, state: &VehicleState, u: ControlInput) -> ([f64; 3], f64);
}

/// Learned-ensemble rollout: per-member recurrent state seeded from the real
/// history, advanced one (state, action) pair per horizon step.
pub struct LearnedRollout<'a> {
    ensemble: &'a Ensemble,
    seed: Vec<EncoderState>,
    aux: Vec<f64>,
    dt: f64,
}

impl<'a> LearnedRollout<'a> {
    /// `history` is the last n (dynamic state, action) pairs before the
    /// current state; the current state enters on the first step together
    /// with the candidate action.
    pub fn new(
        ensemble: &'a Ensemble,
        history: &[([f64; 3], ControlInput)],
        aux: Vec<f64>,
        dt: f64,
    ) -> Self {
        let seed = ensemble
            .members
            .iter()
            .map(|m| {
                let mut s = EncoderState::new(m);
                for (x, u) in history {
                    s.consume(m, x, u.d, u.delta_cmd, &aux);
                }
                s
            })
            .collect();
        Self {
            ensemble,
            seed,
            aux,
            dt,
        }
    }
}

impl RolloutModel for LearnedRollout<'_> {
    type RState = Vec<EncoderState>;

    fn init(&self) -> Self::RState {
        self.seed.clone()
    }

    fn step(&self, rs: &mut Self::RState, state: &VehicleState, u: ControlInput) -> ([f64; 3], f64) {
        let dyn_state = state.dynamic();
        for (m, s) in self.ensemble.members.iter().zip(rs.iter_mut()) {
            s.consume(m, &dyn_state, u.d, u.delta_cmd, &self.aux);
        }
        let p = self.ensemble.predict_states(rs);
        // Keep multi-step rollouts inside the envelope the model was trained
        // on; past it the predictions (and the variance) feed back on
        // themselves and blow up.
        (
            [
                (dyn_state[0] + p.mu[0] * self.dt).clamp(-1.0, 6.0),
                (dyn_state[1] + p.mu[1] * self.dt).clamp(-3.0, 3.0),
                (dyn_state[2] + p.mu[2] * self.dt).clamp(-8.0, 8.0),
            ],
            p.sigma_scalar,
        )
    }
}

/// Analytic bicycle-model rollout (no delay modeling, zero uncertainty).
pub struct AnalyticRollout {
    pub params: VehicleParams,
    pub dt: f64,
}

impl RolloutModel for AnalyticRollout {
    type RState = ();

    fn init(&self) -> Self::RState {}

    fn step(&self, _rs: &mut (), state: &VehicleState, u: ControlInput) -> ([f64; 3], f64) {
        match vehicle::integrate_step(state, &u, &self.params, self.dt) {
            Ok(next) => (next.dynamic(), 0.0),
            Err(_) => ([f64::NAN; 3], 0.0),
        }
    }
}

/// Advance the pose kinematically with the predicted next velocities and
/// install them as the new dynamic sub-state.
pub fn advance_pose(state: &VehicleState, next_dyn: &[f64; 3], dt: f64) -> VehicleState {
    let (sin_phi, cos_phi) = state.phi.sin_cos();
    VehicleState {
        p_x: state.p_x + (next_dyn[0] * cos_phi - next_dyn[1] * sin_phi) * dt,
        p_y: state.p_y + (next_dyn[0] * sin_phi + next_dyn[1] * cos_phi) * dt,
        phi: state.phi + next_dyn[2] * dt,
        v_x: next_dyn[0],
        v_y: next_dyn[1],
        omega: next_dyn[2],
    }
}

/// Uncertainty-aware stage cost: gamma_unc * sigma + weighted squared
/// tracking error in position and speed.
pub fn stage_cost(state: &VehicleState, ref_k: &RefPoint, sigma_k: f64, gamma_unc: f64) -> f64 {
    let ex = state.p_x - ref_k.p_x;
    let ey = state.p_y - ref_k.p_y;
    let ev = state.v_x.hypot(state.v_y) - ref_k.speed;
    gamma_unc * sigma_k + POS_WEIGHT * (ex * ex + ey * ey) + SPEED_WEIGHT * ev * ev
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutEval {
    pub cost: f64,
    pub sigma_sum: f64,
    pub clamped: usize,
}

/// Total sample cost S_m: stage costs along the rollout plus the MPPI
/// control term gamma_ctrl * v_k^T Sigma_eps^-1 (v_k + eps_k).
pub fn rollout_cost<M: RolloutModel>(
    model: &M,
    state0: &VehicleState,
    plan: &ControlPlan,
    eps: &[[f64; 2]],
    reference: &ReferenceTrajectory,
    cfg: &MPPIConfig,
) -> RolloutEval {
    let inv_var = [
        1.0 / (cfg.sigma_eps[0] * cfg.sigma_eps[0]),
        1.0 / (cfg.sigma_eps[1] * cfg.sigma_eps[1]),
    ];
    let mut rs = model.init();
    let mut x = *state0;
    let mut eval = RolloutEval::default();
    for k in 0..cfg.horizon {
        let v_k = plan.v[k];
        let e_k = eps[k];
        if (v_k.d + e_k[0]).abs() > 1.0 {
            eval.clamped += 1;
        }
        if (v_k.delta_cmd + e_k[1]).abs() > 1.0 {
            eval.clamped += 1;
        }
        let u = ControlInput::new(v_k.d + e_k[0], v_k.delta_cmd + e_k[1]);
        let (next_dyn, sigma) = model.step(&mut rs, &x, u);
        if !next_dyn.iter().all(|v| v.is_finite()) {
            eval.cost = COST_SENTINEL;
            return eval;
        }
        let sigma = sigma.min(cfg.sigma_cap);
        eval.sigma_sum += sigma;
        eval.cost += stage_cost(&x, reference.point(k), sigma, cfg.gamma_unc);
        eval.cost += cfg.gamma_ctrl
            * (v_k.d * inv_var[0] * (v_k.d + e_k[0])
                + v_k.delta_cmd * inv_var[1] * (v_k.delta_cmd + e_k[1]));
        x = advance_pose(&x, &next_dyn, cfg.dt);
        if !x.is_finite() {
            eval.cost = COST_SENTINEL;
            return eval;
        }
    }
    if !eval.cost.is_finite() {
        eval.cost = COST_SENTINEL;
    }
    eval
}

/// Softmax weights with the minimum cost subtracted for overflow safety.
pub fn softmax_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let beta = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    costs
        .iter()
        .map(|s| (-(s - beta) / lambda).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MppiDiagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    /// Effective sample size (sum w)^2 / sum w^2.
    pub ess: f64,
    pub clamp_count: usize,
    pub mean_sigma: f64,
    /// Rollouts that left the finite range and were sentinel-costed.
    pub diverged_count: usize,
    /// Every rollout diverged; the safe command was returned.
    pub all_diverged: bool,
}

/// One control cycle: sample noise, score rollouts, softmax-average, and
/// shift the plan for warm-starting the next cycle.
pub fn mppi_step<M: RolloutModel>(
    model: &M,
    state: &VehicleState,
    plan: &ControlPlan,
    reference: &ReferenceTrajectory,
    cfg: &MPPIConfig,
    rng: &mut impl Rng,
) -> (ControlInput, ControlPlan, MppiDiagnostics) {
    let k_h = cfg.horizon;
    let normal_d = Normal::new(0.0, cfg.sigma_eps[0]).unwrap();
    let normal_s = Normal::new(0.0, cfg.sigma_eps[1]).unwrap();
    // Noise is drawn sequentially so the whole cycle is reproducible; only
    // the rollouts run in parallel.
    let noise: Vec<Vec<[f64; 2]>> = (0..cfg.samples)
        .map(|_| {
            (0..k_h)
                .map(|_| [normal_d.sample(rng), normal_s.sample(rng)])
                .collect()
        })
        .collect();

    let evals: Vec<RolloutEval> = noise
        .par_iter()
        .map(|eps| rollout_cost(model, state, plan, eps, reference, cfg))
        .collect();

    let costs: Vec<f64> = evals.iter().map(|e| e.cost).collect();
    let all_diverged = costs.iter().all(|c| *c >= COST_SENTINEL);
    if all_diverged {
        let diag = MppiDiagnostics {
            min_cost: COST_SENTINEL,
            mean_cost: COST_SENTINEL,
            ess: 0.0,
            clamp_count: 0,
            mean_sigma: 0.0,
            diverged_count: costs.len(),
            all_diverged: true,
        };
        return (ControlInput::zero(), plan.clone(), diag);
    }

    let weights = softmax_weights(&costs, cfg.lambda);
    let w_sum: f64 = weights.iter().sum();
    let w_sq: f64 = weights.iter().map(|w| w * w).sum();

    // Weighted average of the clamped sampled controls, per horizon step.
    let mut v_plus = vec![[0.0f64; 2]; k_h];
    for (m, eps) in noise.iter().enumerate() {
        let w = weights[m] / w_sum;
        for k in 0..k_h {
            let u = ControlInput::new(plan.v[k].d + eps[k][0], plan.v[k].delta_cmd + eps[k][1]);
            v_plus[k][0] += w * u.d;
            v_plus[k][1] += w * u.delta_cmd;
        }
    }
    let v_plus: Vec<ControlInput> = v_plus
        .into_iter()
        .map(|u| ControlInput::new(u[0], u[1]))
        .collect();

    let apply = v_plus[0];
    // Warm start: shift left by one, duplicate the last element.
    let mut next = Vec::with_capacity(k_h);
    next.extend_from_slice(&v_plus[1..]);
    next.push(*v_plus.last().unwrap());

    let diag = MppiDiagnostics {
        min_cost: costs.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
        ess: w_sum * w_sum / w_sq,
        clamp_count: evals.iter().map(|e| e.clamped).sum(),
        mean_sigma: evals.iter().map(|e| e.sigma_sum).sum::<f64>()
            / (costs.len() * k_h) as f64,
        diverged_count: costs.iter().filter(|c| **c >= COST_SENTINEL).count(),
        all_diverged: false,
    };
    (apply, ControlPlan { v: next }, diag)
}
