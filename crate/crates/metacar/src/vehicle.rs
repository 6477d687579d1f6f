//! Dynamic bicycle model with Pacejka tires, actuation delay, and steering
//! bias. Serves as the ground-truth plant for data generation and closed-loop
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal speed below which the slip-angle arctans are regularized and
/// rolling resistance is faded out.
pub const LOW_SPEED_GUARD: f64 = 0.3;

/// Planar pose plus body-frame velocities. Heading is stored unwrapped so it
/// stays continuous across laps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p_x: f64,
    pub p_y: f64,
    pub phi: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl VehicleState {
    pub fn zero() -> Self {
        Self {
            p_x: 0.0,
            p_y: 0.0,
            phi: 0.0,
            v_x: 0.0,
            v_y: 0.0,
            omega: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p_x.is_finite()
            && self.p_y.is_finite()
            && self.phi.is_finite()
            && self.v_x.is_finite()
            && self.v_y.is_finite()
            && self.omega.is_finite()
    }

    /// The (v_x, v_y, omega) sub-state the learned model operates on.
    pub fn dynamic(&self) -> [f64; 3] {
        [self.v_x, self.v_y, self.omega]
    }
}

/// Normalized throttle and steering commands, both clamped to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub d: f64,
    pub delta_cmd: f64,
}

impl ControlInput {
    pub fn new(d: f64, delta_cmd: f64) -> Self {
        Self {
            d: d.clamp(-1.0, 1.0),
            delta_cmd: delta_cmd.clamp(-1.0, 1.0),
        }
    }

    pub fn zero() -> Self {
        Self {
            d: 0.0,
            delta_cmd: 0.0,
        }
    }
}

/// Mass, geometry, tire, drivetrain, delay, and steering-map parameters that
/// define one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub m: f64,
    pub i_z: f64,
    pub l_f: f64,
    pub l_r: f64,
    pub b_f: f64,
    pub c_f: f64,
    pub d_f: f64,
    pub b_r: f64,
    pub c_r: f64,
    pub d_r: f64,
    pub c_m1: f64,
    pub c_m2: f64,
    pub c_lf: f64,
    pub c_d: f64,
    pub k_d: f64,
    pub k_bias: f64,
    pub t_d: f64,
}

impl VehicleParams {
    /// A nominal 1/10-scale platform, handy as a test fixture.
    pub fn nominal() -> Self {
        Self {
            m: 4.0,
            i_z: 0.1,
            l_f: 0.17,
            l_r: 0.17,
            b_f: 8.0,
            c_f: 1.7,
            d_f: 35.0,
            b_r: 8.0,
            c_r: 1.7,
            d_r: 35.0,
            c_m1: 20.0,
            c_m2: 1.0,
            c_lf: 1.0,
            c_d: 0.1,
            k_d: 1.0,
            k_bias: 0.0,
            t_d: 0.0,
        }
    }

    pub fn validate(&self) -> bool {
        self.m > 0.0
            && self.i_z > 0.0
            && self.l_f > 0.0
            && self.l_r > 0.0
            && self.t_d >= 0.0
            && self.d_f >= 0.0
            && self.d_r >= 0.0
            && self.k_d > 0.0
    }

    /// Delay in whole control steps, rounded to the nearest multiple of dt.
    pub fn delay_steps(&self, dt: f64) -> usize {
        (self.t_d / dt).round() as usize
    }
}

/// Tire forces and slip angles at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireState {
    pub f_rx: f64,
    pub f_fy: f64,
    pub f_ry: f64,
    pub alpha_f: f64,
    pub alpha_r: f64,
}

pub type StateDerivative = [f64; 6];

/// Steering map: the wheel angle actually realized for a normalized command.
pub fn effective_steering(delta_cmd: f64, params: &VehicleParams) -> f64 {
    params.k_d * delta_cmd + params.k_bias
}

/// Pacejka lateral force plus the rear longitudinal drivetrain force.
///
/// Below the low-speed guard the slip angles use max(v_x, guard) and the
/// rolling resistance fades linearly to zero so the model has a rest fixed
/// point.
pub fn tire_forces(
    state: &VehicleState,
    delta: f64,
    d: f64,
    params: &VehicleParams,
) -> Result<TireState> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState(format!("{state:?}")));
    }
    let v_x = state.v_x;
    let v_guard = v_x.max(LOW_SPEED_GUARD);
    let lf_fade = (v_x.max(0.0) / LOW_SPEED_GUARD).min(1.0);

    let alpha_f = delta - ((state.omega * params.l_f + state.v_y) / v_guard).atan();
    let alpha_r = ((state.omega * params.l_r - state.v_y) / v_guard).atan();
    let f_fy = params.d_f * (params.c_f * (params.b_f * alpha_f).atan()).sin();
    let f_ry = params.d_r * (params.c_r * (params.b_r * alpha_r).atan()).sin();
    let f_rx = (params.c_m1 - params.c_m2 * v_x) * d - params.c_lf * lf_fade - params.c_d * v_x * v_x;

    Ok(TireState {
        f_rx,
        f_fy,
        f_ry,
        alpha_f,
        alpha_r,
    })
}

/// Full right-hand side of the bicycle-model ODE.
pub fn state_derivative(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<StateDerivative> {
    let delta = effective_steering(control.delta_cmd, params);
    let t = tire_forces(state, delta, control.d, params)?;
    let (sin_phi, cos_phi) = state.phi.sin_cos();
    let (sin_d, cos_d) = delta.sin_cos();
    Ok([
        state.v_x * cos_phi - state.v_y * sin_phi,
        state.v_x * sin_phi + state.v_y * cos_phi,
        state.omega,
        (t.f_rx - t.f_fy * sin_d + params.m * state.v_y * state.omega) / params.m,
        (t.f_ry + t.f_fy * cos_d - params.m * state.v_x * state.omega) / params.m,
        (t.f_fy * params.l_f * cos_d - t.f_ry * params.l_r) / params.i_z,
    ])
}

fn add_scaled(s: &VehicleState, k: &StateDerivative, h: f64) -> VehicleState {
    VehicleState {
        p_x: s.p_x + k[0] * h,
        p_y: s.p_y + k[1] * h,
        phi: s.phi + k[2] * h,
        v_x: s.v_x + k[3] * h,
        v_y: s.v_y + k[4] * h,
        omega: s.omega + k[5] * h,
    }
}

/// One explicit RK4 step with the control held constant across the step.
pub fn integrate_step(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    debug_assert!(dt > 0.0);
    let k1 = state_derivative(state, control, params)?;
    let k2 = state_derivative(&add_scaled(state, &k1, dt / 2.0), control, params)?;
    let k3 = state_derivative(&add_scaled(state, &k2, dt / 2.0), control, params)?;
    let k4 = state_derivative(&add_scaled(state, &k3, dt), control, params)?;
    let mut out = *state;
    let sum = |i: usize| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * dt / 6.0;
    out.p_x += sum(0);
    out.p_y += sum(1);
    out.phi += sum(2);
    out.v_x += sum(3);
    out.v_y += sum(4);
    out.omega += sum(5);
    if !out.is_finite() {
        return Err(Error::NonFiniteState(format!("{out:?}")));
    }
    Ok(out)
}

/// Output of [`simulate_delayed`]: the shifted state sequence and the
/// delay-aligned training pairs.
#[derive(Debug, Clone)]
pub struct DelayedTrajectory {
    /// States s_0..s_{T-1}, timestamped t_d + i*dt.
    pub states: Vec<VehicleState>,
    /// Pairs (s_i, a_{i+d}) for i in 0..T-d: the state lags the paired
    /// command by the actuation delay, as it would in a real log.
    pub aligned: Vec<(VehicleState, ControlInput)>,
}

/// Simulate with zero-order-hold actions over [0, t_h) and shift by the
/// actuation delay (rounded to whole steps) to build training-aligned pairs.
pub fn simulate_delayed(
    initial: &VehicleState,
    actions: &[ControlInput],
    params: &VehicleParams,
    dt: f64,
) -> Result<DelayedTrajectory> {
    let d = params.delay_steps(dt);
    let t = actions.len();
    if t <= d {
        return Err(Error::EmptyAlignedWindow {
            t_h: t as f64 * dt,
            t_d: params.t_d,
        });
    }
    let mut states = Vec::with_capacity(t);
    let mut s = *initial;
    for a in actions {
        states.push(s);
        s = integrate_step(&s, a, params, dt)?;
    }
    let aligned = (0..t - d)
        .map(|i| (states[i], actions[i + d]))
        .collect();
    Ok(DelayedTrajectory { states, aligned })
}
