//! Randomized dynamics tasks for meta-training: random parameters, smooth
//! Fourier action sequences, delay-shifted simulation, and history windows
//! with derivative targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState};

/// Multiplier applied to the Fourier base period k*dt. At the literal period
/// the commands change nearly every sample; scaling keeps them smooth at the
/// control rate.
pub const PERIOD_SCALE: f64 = 50.0;

pub const GRAVITY: f64 = 9.81;

/// Fixed-length history of (dynamic state, action) pairs, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    /// (v_x, v_y, omega) paired with the command logged at the same tick.
    pub pairs: Vec<([f64; 3], ControlInput)>,
    pub dt: f64,
}

/// Smooth random action generator: u(t) = C_0 + sum_k C_k sin(2 pi t / (k dt S)).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierActionSpec {
    pub n_terms: usize,
    pub dt: f64,
    pub t_h: f64,
    /// One (throttle, steer) coefficient vector per term; sums to (1, 1).
    pub coeffs: Vec<[f64; 2]>,
}

impl FourierActionSpec {
    /// Draw coefficients uniform in [-1, 1]^2 and shift the whole set so the
    /// componentwise sum is exactly (1, 1).
    pub fn sample(n_terms: usize, dt: f64, t_h: f64, rng: &mut impl Rng) -> Self {
        assert!(n_terms >= 1);
        let mut coeffs: Vec<[f64; 2]> = (0..n_terms)
            .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
            .collect();
        for j in 0..2 {
            let sum: f64 = coeffs.iter().map(|c| c[j]).sum();
            let shift = (1.0 - sum) / n_terms as f64;
            for c in coeffs.iter_mut() {
                c[j] += shift;
            }
        }
        Self {
            n_terms,
            dt,
            t_h,
            coeffs,
        }
    }

    /// Unclamped series value at time t.
    pub fn evaluate(&self, t: f64) -> [f64; 2] {
        let mut u = self.coeffs[0];
        for k in 1..self.n_terms {
            let period = k as f64 * self.dt * PERIOD_SCALE;
            let s = (2.0 * std::f64::consts::PI * t / period).sin();
            u[0] += self.coeffs[k][0] * s;
            u[1] += self.coeffs[k][1] * s;
        }
        u
    }

    /// Sampled, clamped command sequence over [0, t_h) plus the number of
    /// clamped scalar components (a data-health diagnostic).
    pub fn sequence(&self) -> (Vec<ControlInput>, usize) {
        let steps = (self.t_h / self.dt).round() as usize;
        let mut clamped = 0;
        let seq = (0..steps)
            .map(|i| {
                let u = self.evaluate(i as f64 * self.dt);
                if u[0].abs() > 1.0 {
                    clamped += 1;
                }
                if u[1].abs() > 1.0 {
                    clamped += 1;
                }
                ControlInput::new(u[0], u[1])
            })
            .collect();
        (seq, clamped)
    }
}

pub fn sample_action_sequence(
    n_terms: usize,
    dt: f64,
    t_h: f64,
    rng: &mut impl Rng,
) -> Vec<ControlInput> {
    FourierActionSpec::sample(n_terms, dt, t_h, rng).sequence().0
}

/// Uniform sampling bounds for every vehicle parameter. Tire peak forces
/// `d_f_rel`/`d_r_rel` are expressed as multiples of m*g so the drawn force
/// scales with the drawn mass.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamRanges {
    pub m: [f64; 2],
    pub i_z: [f64; 2],
    pub l_f: [f64; 2],
    pub l_r: [f64; 2],
    pub b_f: [f64; 2],
    pub c_f: [f64; 2],
    pub d_f_rel: [f64; 2],
    pub b_r: [f64; 2],
    pub c_r: [f64; 2],
    pub d_r_rel: [f64; 2],
    pub c_m1: [f64; 2],
    pub c_m2: [f64; 2],
    pub c_lf: [f64; 2],
    pub c_d: [f64; 2],
    pub k_d: [f64; 2],
    pub k_bias: [f64; 2],
    pub t_d: [f64; 2],
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            m: [2.0, 6.0],
            i_z: [0.03, 0.2],
            l_f: [0.12, 0.22],
            l_r: [0.12, 0.22],
            b_f: [4.0, 12.0],
            c_f: [1.2, 2.2],
            d_f_rel: [0.5, 1.2],
            b_r: [4.0, 12.0],
            c_r: [1.2, 2.2],
            d_r_rel: [0.5, 1.2],
            c_m1: [10.0, 30.0],
            c_m2: [0.5, 2.0],
            c_lf: [0.0, 2.0],
            c_d: [0.0, 0.2],
            k_d: [0.7, 1.1],
            k_bias: [-0.1, 0.1],
            t_d: [0.0, 0.1],
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

pub fn sample_task_params(ranges: &ParamRanges, rng: &mut impl Rng) -> VehicleParams {
    let m = uniform(rng, ranges.m);
    VehicleParams {
        m,
        i_z: uniform(rng, ranges.i_z),
        l_f: uniform(rng, ranges.l_f),
        l_r: uniform(rng, ranges.l_r),
        b_f: uniform(rng, ranges.b_f),
        c_f: uniform(rng, ranges.c_f),
        d_f: uniform(rng, ranges.d_f_rel) * m * GRAVITY,
        b_r: uniform(rng, ranges.b_r),
        c_r: uniform(rng, ranges.c_r),
        d_r: uniform(rng, ranges.d_r_rel) * m * GRAVITY,
        c_m1: uniform(rng, ranges.c_m1),
        c_m2: uniform(rng, ranges.c_m2),
        c_lf: uniform(rng, ranges.c_lf),
        c_d: uniform(rng, ranges.c_d),
        k_d: uniform(rng, ranges.k_d),
        k_bias: uniform(rng, ranges.k_bias),
        t_d: uniform(rng, ranges.t_d),
    }
}

/// One meta-learning task: every contiguous history window of the simulated
/// trajectory with its derivative target, plus the generating parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDataset {
    pub windows: Vec<HistoryWindow>,
    pub targets: Vec<[f64; 3]>,
    pub params: VehicleParams,
}

/// Slice a (state, action) log into all contiguous windows of length n+1.
/// Window i ends at index i and carries target (x_{i+1} - x_i) / dt.
pub fn make_windows(
    states: &[[f64; 3]],
    actions: &[ControlInput],
    n: usize,
    dt: f64,
) -> Result<(Vec<HistoryWindow>, Vec<[f64; 3]>)> {
    assert_eq!(states.len(), actions.len());
    if states.len() < n + 2 {
        return Err(Error::SequenceTooShort {
            need: n + 2,
            got: states.len(),
        });
    }
    let mut windows = Vec::with_capacity(states.len() - n - 1);
    let mut targets = Vec::with_capacity(states.len() - n - 1);
    for i in n..states.len() - 1 {
        let pairs = (i - n..=i).map(|j| (states[j], actions[j])).collect();
        windows.push(HistoryWindow { pairs, dt });
        targets.push([
            (states[i + 1][0] - states[i][0]) / dt,
            (states[i + 1][1] - states[i][1]) / dt,
            (states[i + 1][2] - states[i][2]) / dt,
        ]);
    }
    Ok((windows, targets))
}

const DELAY_RETRIES: usize = 16;

/// Sample a task: random parameters and actions, delay-shifted simulation,
/// sliced into history windows.
pub fn generate_task(
    ranges: &ParamRanges,
    n_terms: usize,
    t_h: f64,
    n: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<TaskDataset> {
    let mut params = sample_task_params(ranges, rng);
    let mut retries = 0;
    while t_h <= params.t_d + (n + 1) as f64 * dt {
        if retries >= DELAY_RETRIES {
            return Err(Error::DelayRetriesExhausted(DELAY_RETRIES));
        }
        params.t_d = uniform(rng, ranges.t_d);
        retries += 1;
    }
    let spec = FourierActionSpec::sample(n_terms, dt, t_h, rng);
    let (actions, _) = spec.sequence();
    let initial = VehicleState {
        v_x: 0.5,
        ..VehicleState::zero()
    };
    let traj = simulate_floored(&initial, &actions, &params, dt)?;
    let states: Vec<[f64; 3]> = traj.iter().map(|(s, _)| s.dynamic()).collect();
    let acts: Vec<ControlInput> = traj.iter().map(|(_, a)| *a).collect();
    let (windows, targets) = make_windows(&states, &acts, n, dt)?;
    Ok(TaskDataset {
        windows,
        targets,
        params,
    })
}

/// simulate_delayed with the plant's standstill floor: longitudinal speed is
/// not allowed below zero, since the drivetrain model has no reverse gear.
fn simulate_floored(
    initial: &VehicleState,
    actions: &[ControlInput],
    params: &VehicleParams,
    dt: f64,
) -> Result<Vec<(VehicleState, ControlInput)>> {
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
        s = vehicle::integrate_step(&s, a, params, dt)?;
        if s.v_x < 0.0 {
            s.v_x = 0.0;
        }
    }
    Ok((0..t - d).map(|i| (states[i], actions[i + d])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_term_series_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = FourierActionSpec::sample(1, 0.02, 1.0, &mut rng);
        assert_relative_eq!(spec.coeffs[0][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(spec.coeffs[0][1], 1.0, epsilon = 1e-12);
        let (seq, _) = spec.sequence();
        assert!(seq.iter().all(|u| u.d == 1.0 && u.delta_cmd == 1.0));
    }

    #[test]
    fn quarter_period_evaluation() {
        let spec = FourierActionSpec {
            n_terms: 2,
            dt: 0.02,
            t_h: 2.0,
            coeffs: vec![[0.5, 0.5], [0.5, 0.5]],
        };
        let quarter = 1.0 * 0.02 * PERIOD_SCALE / 4.0;
        let u = spec.evaluate(quarter);
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(u[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coefficients_sum_to_one_and_outputs_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let spec = FourierActionSpec::sample(4, 0.02, 2.0, &mut rng);
            for j in 0..2 {
                let sum: f64 = spec.coeffs.iter().map(|c| c[j]).sum();
                assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            }
            let (seq, _) = spec.sequence();
            assert!(seq
                .iter()
                .all(|u| u.d.abs() <= 1.0 && u.delta_cmd.abs() <= 1.0));
        }
    }

    #[test]
    fn clamp_rate_stays_healthy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut clamped = 0usize;
        let mut total = 0usize;
        for _ in 0..100 {
            let spec = FourierActionSpec::sample(4, 0.02, 2.0, &mut rng);
            let (seq, c) = spec.sequence();
            clamped += c;
            total += 2 * seq.len();
        }
        // The sum-to-one anchor parks the series near full throttle, so some
        // clamping is expected; it just must not dominate the signal.
        let rate = clamped as f64 / total as f64;
        assert!(rate < 0.35, "clamp rate {rate}");
        assert!(rate > 0.0);
    }

    #[test]
    fn degenerate_ranges_give_point_values() {
        let mut r = ParamRanges::default();
        r.m = [4.0, 4.0];
        r.k_bias = [0.02, 0.02];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = sample_task_params(&r, &mut rng);
        assert_eq!(p.m, 4.0);
        assert_eq!(p.k_bias, 0.02);
    }

    #[test]
    fn sampled_mass_mean_is_near_center() {
        let r = ParamRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| sample_task_params(&r, &mut rng).m)
            .sum::<f64>()
            / n as f64;
        // Uniform on [2, 6]: sd of the mean is (4/sqrt(12))/sqrt(n).
        let sigma = (4.0 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn sampled_params_satisfy_invariants() {
        let r = ParamRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            assert!(sample_task_params(&r, &mut rng).validate());
        }
    }

    #[test]
    fn minimal_sequence_gives_one_window() {
        let n = 3;
        let states: Vec<[f64; 3]> = (0..n + 2).map(|i| [i as f64, 0.0, 0.0]).collect();
        let actions = vec![ControlInput::zero(); n + 2];
        let (w, y) = make_windows(&states, &actions, n, 0.02).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(y.len(), 1);
        assert_eq!(w[0].pairs.len(), n + 1);
    }

    #[test]
    fn windows_slide_by_one() {
        let states: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, -(i as f64), 0.5]).collect();
        let actions: Vec<ControlInput> = (0..10)
            .map(|i| ControlInput::new(0.1 * i as f64, 0.0))
            .collect();
        let (w, _) = make_windows(&states, &actions, 4, 0.02).unwrap();
        for i in 1..w.len() {
            assert_eq!(w[i].pairs[..4], w[i - 1].pairs[1..]);
        }
    }

    #[test]
    fn targets_match_independent_diff() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let states: Vec<[f64; 3]> = (0..30)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let actions = vec![ControlInput::zero(); 30];
        let dt = 0.05;
        let (w, y) = make_windows(&states, &actions, 5, dt).unwrap();
        for (i, win) in w.iter().enumerate() {
            let end = i + 5;
            for j in 0..3 {
                let expect = (states[end + 1][j] - states[end][j]) * (1.0 / dt);
                assert_relative_eq!(y[i][j], expect, epsilon = 1e-15);
            }
            assert_eq!(win.pairs.last().unwrap().0, states[end]);
        }
    }

    #[test]
    fn too_short_sequence_errors() {
        let states = vec![[0.0; 3]; 4];
        let actions = vec![ControlInput::zero(); 4];
        assert!(make_windows(&states, &actions, 4, 0.02).is_err());
    }

    #[test]
    fn window_count_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10;
        let dt = 0.02;
        let task = generate_task(&ParamRanges::default(), 4, 2.0, n, dt, &mut rng).unwrap();
        let d = task.params.delay_steps(dt);
        let aligned_len = (2.0f64 / dt).round() as usize - d;
        assert_eq!(task.windows.len(), aligned_len - n - 1);
        assert_eq!(task.windows.len(), task.targets.len());
    }

    #[test]
    fn targets_reconstruct_the_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dt = 0.02;
        let task = generate_task(&ParamRanges::default(), 4, 2.0, 8, dt, &mut rng).unwrap();
        // Window i+1's last state must equal window i's last state advanced
        // by the stored target.
        for i in 0..task.windows.len() - 1 {
            let cur = task.windows[i].pairs.last().unwrap().0;
            let next = task.windows[i + 1].pairs.last().unwrap().0;
            for j in 0..3 {
                let rebuilt = cur[j] + task.targets[i][j] * dt;
                assert_relative_eq!(rebuilt, next[j], epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            generate_task(&ParamRanges::default(), 4, 2.0, 8, 0.02, &mut rng).unwrap()
        };
        let a = mk();
        let b = mk();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn steady_state_targets_are_zero() {
        // Constant-velocity trajectory: no forces, zero-delay.
        let n = 4;
        let dt = 0.02;
        let states = vec![[2.0, 0.0, 0.0]; 20];
        let actions = vec![ControlInput::zero(); 20];
        let (_, y) = make_windows(&states, &actions, n, dt).unwrap();
        assert!(y.iter().all(|t| t == &[0.0, 0.0, 0.0]));
    }
}
