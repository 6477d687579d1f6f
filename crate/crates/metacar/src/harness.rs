//! Closed-loop oval-track experiments: baseline controllers a-g, the plant
//! loop with actuation delay, warm-up, online adaptation, per-episode
//! metrics, and the steering-symmetry diagnostic.

use std::collections::VecDeque;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_step, AdaptConfig, ExperienceBuffer};
use crate::ensemble::Ensemble;
use crate::error::Result;
use crate::meta::{pretrain, MetaConfig, PretrainOpts};
use crate::model::{ModelConfig, ModelWeights};
use crate::mppi::{
    advance_pose, mppi_step, AnalyticRollout, ControlPlan, LearnedRollout, MPPIConfig,
    RolloutModel,
};
use crate::taskgen::{sample_task_params, ParamRanges, GRAVITY};
use crate::track::{make_oval_reference, TrackSpec};
use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState};

/// The compared controllers.
///
/// a: analytic MPPI with mis-specified parameters (each scaled by U[0.7,1.3])
/// b: analytic MPPI with the true parameters but no delay compensation
/// c: learned ensemble from random initialization, adapted online, with the
///    uncertainty cost
/// d: meta-learned initialization, adapted online, uncertainty cost off
/// e: pooled (non-meta) pre-trained initialization, adapted online, with the
///    uncertainty cost
/// f: meta-learned initialization, adapted online, with the uncertainty cost
/// g: true model structure and geometry; tire and resistance parameters
///    identified online by finite-difference gradient steps in log space
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl Baseline {
    pub const ALL: [Baseline; 7] = [
        Baseline::A,
        Baseline::B,
        Baseline::C,
        Baseline::D,
        Baseline::E,
        Baseline::F,
        Baseline::G,
    ];

    pub fn letter(&self) -> char {
        match self {
            Baseline::A => 'a',
            Baseline::B => 'b',
            Baseline::C => 'c',
            Baseline::D => 'd',
            Baseline::E => 'e',
            Baseline::F => 'f',
            Baseline::G => 'g',
        }
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Baseline::A),
            "b" => Ok(Baseline::B),
            "c" => Ok(Baseline::C),
            "d" => Ok(Baseline::D),
            "e" => Ok(Baseline::E),
            "f" => Ok(Baseline::F),
            "g" => Ok(Baseline::G),
            other => Err(format!("unknown baseline {other:?} (expected a-g)")),
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Everything defining one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub track: TrackSpec,
    pub model: ModelConfig,
    pub mppi: MPPIConfig,
    pub meta: MetaConfig,
    pub ranges: ParamRanges,
    /// Plant integration step, s.
    pub plant_dt: f64,
    /// Control ticks happen every this many plant steps; the model operates
    /// at plant_dt * control_every.
    pub control_every: usize,
    pub ensemble_size: usize,
    pub episode_duration: f64,
    pub warmup_duration: f64,
    pub buffer_capacity: usize,
    /// Control ticks between online adaptation updates.
    pub adapt_every: usize,
    pub adapt_step_size: f64,
    /// Burst of gradient steps on the warm-up buffer when the learned
    /// controller takes over.
    pub takeover_adapt_steps: usize,
    /// |lateral error| beyond which the episode counts as crashed.
    pub crash_lateral: f64,
    /// Fourier terms and trajectory length for pre-training task generation.
    pub n_terms: usize,
    pub t_h: f64,
    /// Seed offsets so initialization and data streams are reproducible.
    pub pretrain_data_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            track: TrackSpec::default(),
            model: ModelConfig::default(),
            mppi: MPPIConfig::default(),
            meta: MetaConfig::default(),
            ranges: ParamRanges::default(),
            plant_dt: 0.02,
            control_every: 1,
            ensemble_size: 5,
            episode_duration: 120.0,
            warmup_duration: 5.0,
            buffer_capacity: 300,
            adapt_every: 5,
            adapt_step_size: 1e-2,
            takeover_adapt_steps: 150,
            crash_lateral: 3.0,
            n_terms: 4,
            t_h: 2.0,
            pretrain_data_seed: 7,
        }
    }
}

impl HarnessConfig {
    /// Parameter ranges toned down for the reduced configuration: the
    /// stiffest vehicles in the full ranges have yaw time constants well
    /// below the 0.04 s model step, which no forward-Euler surrogate can
    /// track.
    fn scaled_ranges() -> ParamRanges {
        ParamRanges {
            m: [3.0, 5.0],
            i_z: [0.08, 0.18],
            l_f: [0.14, 0.20],
            l_r: [0.14, 0.20],
            b_f: [5.0, 9.0],
            c_f: [1.3, 1.9],
            d_f_rel: [0.5, 0.9],
            b_r: [5.0, 9.0],
            c_r: [1.3, 1.9],
            d_r_rel: [0.5, 0.9],
            c_m1: [15.0, 25.0],
            c_m2: [0.8, 1.5],
            c_lf: [0.0, 1.5],
            c_d: [0.0, 0.15],
            k_d: [0.8, 1.1],
            k_bias: [-0.08, 0.08],
            t_d: [0.0, 0.08],
        }
    }

    /// Reduced configuration sized for single-core test runs; all orderings
    /// the experiments assert are preserved.
    pub fn scaled() -> Self {
        let model = ModelConfig {
            history: 12,
            hidden: 24,
            head_hidden: 16,
            aux: 0,
            // Control runs at the plant rate: the learned rollout integrates
            // forward-Euler, and 0.04 s steps are too coarse for the yaw
            // dynamics of the stiffer vehicles.
            dt: 0.02,
        };
        Self {
            model,
            // Short horizons spread the sample costs far less than the
            // full-scale setup, so the temperature drops with them.
            mppi: MPPIConfig {
                horizon: 24,
                samples: 48,
                dt: 0.02,
                lambda: 0.3,
                // Control effort and uncertainty are summed over the 24-step
                // horizon, so their weights shrink with the finer step or the
                // controller stalls instead of acting.
                gamma_ctrl: 0.05,
                // Sigma over the rollout is comparable to the tracking
                // cost; the full-scale weight would make the controller stall
                // rather than act.
                gamma_unc: 0.1,
                sigma_cap: 2.0,
                ..MPPIConfig::default()
            },
            meta: MetaConfig {
                k_inner: 2,
                alpha: 1e-2,
                beta: 2e-2,
                tasks_per_batch: 4,
                episodes: 4000,
                support_fraction: 0.5,
                second_order: false,
            },
            ranges: Self::scaled_ranges(),
            plant_dt: 0.02,
            control_every: 1,
            ensemble_size: 3,
            episode_duration: 25.0,
            warmup_duration: 5.0,
            // The short episodes leave little time to track distribution
            // shift after takeover, so adapt at a faster cadence but with a
            // gentler step over a longer window; aggressive steps on a short
            // FIFO window drift the model late in the episode.
            adapt_every: 4,
            adapt_step_size: 2e-3,
            buffer_capacity: 1200,
            // The slowest excitation period is k * dt * 50; trajectories must
            // span several of them or the action effect is unidentifiable.
            t_h: 6.0,
            ..Self::default()
        }
    }

    /// Model/control step, s.
    pub fn control_dt(&self) -> f64 {
        self.plant_dt * self.control_every as f64
    }
}

/// Pre-trained initializations shared across baselines and seeds.
#[derive(Debug, Clone)]
pub struct PreparedInits {
    pub pooled: Ensemble,
    pub meta: Ensemble,
}

fn pretrain_ensemble(cfg: &HarnessConfig, meta: &MetaConfig, seed_base: u64) -> Result<Ensemble> {
    let members = (0..cfg.ensemble_size)
        .map(|i| {
            let opts = PretrainOpts {
                meta: *meta,
                model: cfg.model,
                ranges: cfg.ranges,
                n_terms: cfg.n_terms,
                t_h: cfg.t_h,
                init_seed: seed_base + i as u64,
                data_seed: cfg.pretrain_data_seed,
            };
            pretrain(&opts).map(|r| r.best_weights)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble::new(members))
}

/// Meta-learned and pooled initializations from identical task streams.
pub fn prepare_inits(cfg: &HarnessConfig) -> Result<PreparedInits> {
    let meta = pretrain_ensemble(cfg, &cfg.meta, 1000)?;
    let pooled_cfg = MetaConfig {
        k_inner: 0,
        ..cfg.meta
    };
    let pooled = pretrain_ensemble(cfg, &pooled_cfg, 2000)?;
    Ok(PreparedInits { pooled, meta })
}

/// Randomly initialized ensemble (baseline c).
pub fn random_ensemble(cfg: &HarnessConfig, seed: u64) -> Ensemble {
    Ensemble::new(
        (0..cfg.ensemble_size)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
                ModelWeights::init(cfg.model, &mut rng)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub baseline: Baseline,
    pub seed: u64,
    pub mean_abs_lateral: f64,
    pub mean_speed: f64,
    pub laps: f64,
    pub crashed: bool,
    /// Rising crossings of |lateral error| above twice the episode median.
    pub excursions: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    /// Post-warm-up lateral errors at plant rate.
    pub lateral: Vec<f64>,
    /// (t, state, applied command) at plant rate, full episode.
    pub trajectory: Vec<(f64, VehicleState, ControlInput)>,
}

pub fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rising crossings of |e| above 2x the series median (floored at 0.05 m so
/// near-perfect tracking does not count noise as excursions).
pub fn count_excursions(lateral: &[f64]) -> usize {
    let mut abs: Vec<f64> = lateral.iter().map(|e| e.abs()).collect();
    let threshold = (2.0 * median(&mut abs)).max(0.05);
    let mut count = 0;
    let mut above = false;
    for e in lateral {
        let now = e.abs() > threshold;
        if now && !above {
            count += 1;
        }
        above = now;
    }
    count
}

/// Warm-up controller: proportional speed hold plus proportional steering on
/// lateral and heading error, with a small sinusoidal excitation so the
/// buffer sees informative data.
pub fn scripted_command(track: &TrackSpec, state: &VehicleState, t: f64) -> ControlInput {
    let e_lat = track.lateral_error(state);
    let s = track.project(state.p_x, state.p_y);
    let (_, tangent) = track.point_and_tangent(s);
    let e_psi = wrap_angle(state.phi - tangent[1].atan2(tangent[0]));
    // The dither terms matter: adaptation data without real steering and
    // throttle swings leaves the action response unidentified.
    let d = 0.25 * (track.v_ref - state.v_x) + 0.08
        + 0.12 * (2.1 * t).sin()
        + 0.08 * (5.3 * t).sin();
    let steer = -1.5 * e_lat - 1.2 * e_psi + 0.35 * (3.0 * t).sin() + 0.2 * (7.3 * t).sin();
    ControlInput::new(d.clamp(0.0, 1.0), steer)
}

/// Tunable fields for the parametric-identification baseline: tire curves
/// plus rolling and aerodynamic resistance. Geometry, mass, drivetrain gain,
/// steering map, and delay are treated as known.
const TUNED_FIELDS: [fn(&mut VehicleParams) -> &mut f64; 8] = [
    |p| &mut p.b_f,
    |p| &mut p.c_f,
    |p| &mut p.d_f,
    |p| &mut p.b_r,
    |p| &mut p.c_r,
    |p| &mut p.d_r,
    |p| &mut p.c_lf,
    |p| &mut p.c_d,
];

fn param_pred_loss(
    params: &VehicleParams,
    transitions: &[([f64; 3], ControlInput, [f64; 3])],
    dt: f64,
) -> f64 {
    if transitions.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (x, u, y) in transitions {
        let s = VehicleState {
            v_x: x[0],
            v_y: x[1],
            omega: x[2],
            ..VehicleState::zero()
        };
        match vehicle::integrate_step(&s, u, params, dt) {
            Ok(next) => {
                let p = next.dynamic();
                for j in 0..3 {
                    let e = p[j] - y[j];
                    total += e * e;
                }
            }
            Err(_) => total += 1e6,
        }
    }
    total / (3.0 * transitions.len() as f64)
}

/// One normalized gradient step in log-parameter space, by central finite
/// differences, with a single backtracking retry. Log space keeps the
/// positive parameters positive and evens out their wildly different scales.
pub fn adapt_params_fd(
    params: &mut VehicleParams,
    transitions: &[([f64; 3], ControlInput, [f64; 3])],
    dt: f64,
    lr: f64,
) -> f64 {
    const FLOOR: f64 = 1e-4;
    if transitions.is_empty() {
        return param_pred_loss(params, transitions, dt);
    }
    let base = param_pred_loss(params, transitions, dt);
    let mut g_log = [0.0f64; 8];
    for (i, field) in TUNED_FIELDS.iter().enumerate() {
        let mut p = *params;
        let x = *field(&mut p);
        let h = (1e-3 * x.abs()).max(1e-5);
        *field(&mut p) = x + h;
        let lp = param_pred_loss(&p, transitions, dt);
        *field(&mut p) = x - h;
        let lm = param_pred_loss(&p, transitions, dt);
        g_log[i] = (lp - lm) / (2.0 * h) * x.max(FLOOR);
    }
    let norm = g_log.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return base;
    }
    for step in [lr, lr / 4.0] {
        let mut cand = *params;
        for (i, field) in TUNED_FIELDS.iter().enumerate() {
            let x = field(&mut cand);
            *x = (*x * (-step * g_log[i] / norm).exp()).max(FLOOR);
        }
        let l = param_pred_loss(&cand, transitions, dt);
        if l < base {
            *params = cand;
            return l;
        }
    }
    base
}

enum Controller {
    Analytic(VehicleParams),
    Learned {
        ensemble: Ensemble,
        gamma_unc: f64,
    },
    ParamAdapt(VehicleParams),
}

pub fn perturbed_params(true_params: &VehicleParams, seed: u64) -> VehicleParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xA11C_0FF5));
    let mut p = *true_params;
    let mut scale = |x: &mut f64| *x *= rng.gen_range(0.7..1.3);
    scale(&mut p.m);
    scale(&mut p.i_z);
    scale(&mut p.l_f);
    scale(&mut p.l_r);
    scale(&mut p.b_f);
    scale(&mut p.c_f);
    scale(&mut p.d_f);
    scale(&mut p.b_r);
    scale(&mut p.c_r);
    scale(&mut p.d_r);
    scale(&mut p.c_m1);
    scale(&mut p.c_m2);
    scale(&mut p.c_lf);
    scale(&mut p.c_d);
    scale(&mut p.k_d);
    scale(&mut p.k_bias);
    p
}

/// Identification starting point: true geometry and drivetrain, mid-range
/// tire and resistance values.
fn identification_start(true_params: &VehicleParams) -> VehicleParams {
    VehicleParams {
        b_f: 8.0,
        c_f: 1.7,
        d_f: 0.85 * true_params.m * GRAVITY,
        b_r: 8.0,
        c_r: 1.7,
        d_r: 0.85 * true_params.m * GRAVITY,
        c_lf: 1.0,
        c_d: 0.1,
        ..*true_params
    }
}

fn build_controller(
    cfg: &HarnessConfig,
    baseline: Baseline,
    seed: u64,
    true_params: &VehicleParams,
    inits: Option<&PreparedInits>,
) -> Controller {
    fn need(inits: Option<&PreparedInits>) -> &PreparedInits {
        inits.expect("learned baselines require prepared initializations")
    }
    match baseline {
        Baseline::A => Controller::Analytic(perturbed_params(true_params, seed)),
        Baseline::B => Controller::Analytic(VehicleParams {
            // The planner's rollout is delay-free; zero it in the stored
            // params so the controller record says what it actually used.
            t_d: 0.0,
            ..*true_params
        }),
        Baseline::C => Controller::Learned {
            ensemble: random_ensemble(cfg, seed),
            gamma_unc: cfg.mppi.gamma_unc,
        },
        Baseline::D => Controller::Learned {
            ensemble: need(inits).meta.clone(),
            gamma_unc: 0.0,
        },
        Baseline::E => Controller::Learned {
            ensemble: need(inits).pooled.clone(),
            gamma_unc: cfg.mppi.gamma_unc,
        },
        Baseline::F => Controller::Learned {
            ensemble: need(inits).meta.clone(),
            gamma_unc: cfg.mppi.gamma_unc,
        },
        Baseline::G => Controller::ParamAdapt(identification_start(true_params)),
    }
}

/// Run one closed-loop episode. The true vehicle is drawn from `cfg.ranges`
/// using `seed` only, so all baselines at a given seed face the same vehicle.
pub fn run_episode(
    cfg: &HarnessConfig,
    baseline: Baseline,
    seed: u64,
    inits: Option<&PreparedInits>,
) -> Result<EpisodeOutcome> {
    let mut param_rng = ChaCha8Rng::seed_from_u64(seed);
    let true_params = sample_task_params(&cfg.ranges, &mut param_rng);
    let mut ctrl_rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((baseline.letter() as u64) << 48),
    );
    let mut controller = build_controller(cfg, baseline, seed, &true_params, inits);

    let plant_dt = cfg.plant_dt;
    let ce = cfg.control_every;
    let mdt = cfg.control_dt();
    let n = cfg.model.history;
    let plant_steps = (cfg.episode_duration / plant_dt).round() as usize;
    let warmup_ticks = (cfg.warmup_duration / mdt).round() as usize;
    let warmup_plant = warmup_ticks * ce;

    let mut mcfg = cfg.mppi;
    mcfg.dt = mdt;
    if let Controller::Learned { gamma_unc, .. } = &controller {
        mcfg.gamma_unc = *gamma_unc;
    }
    let adapt_cfg = AdaptConfig {
        step_size: cfg.adapt_step_size,
        budget: None,
        debug_delay: None,
    };

    let d_plant = (true_params.t_d / plant_dt).round() as usize;
    let mut delay_q: VecDeque<ControlInput> = std::iter::repeat(ControlInput::zero())
        .take(d_plant)
        .collect();

    let mut state = VehicleState {
        v_x: 0.5,
        ..VehicleState::zero()
    };
    let mut buffer = ExperienceBuffer::new(cfg.buffer_capacity, mdt);
    let mut history: VecDeque<([f64; 3], ControlInput)> = VecDeque::with_capacity(n + 1);
    let mut plan = ControlPlan::zeros(mcfg.horizon);
    let mut cmd = ControlInput::zero();

    let perimeter = cfg.track.perimeter();
    let mut s_prev = cfg.track.project(state.p_x, state.p_y);
    let mut progress = 0.0;
    let mut lateral = Vec::new();
    let mut trajectory = Vec::with_capacity(plant_steps);
    let mut sum_abs_e = 0.0;
    let mut sum_speed = 0.0;
    let mut measured = 0usize;
    let mut crashed = false;

    for pstep in 0..plant_steps {
        let t = pstep as f64 * plant_dt;
        if pstep % ce == 0 {
            let tick = pstep / ce;
            if tick == warmup_ticks {
                // Fit the warm-up data before the first model-based command.
                match &mut controller {
                    Controller::Learned { ensemble, .. } => {
                        for _ in 0..cfg.takeover_adapt_steps {
                            adapt_step(&buffer, ensemble, &adapt_cfg)?;
                        }
                    }
                    Controller::ParamAdapt(p) => {
                        let trans = buffer.transitions(p.delay_steps(mdt));
                        for _ in 0..cfg.takeover_adapt_steps {
                            adapt_params_fd(p, &trans, mdt, 0.2);
                        }
                    }
                    Controller::Analytic(_) => {}
                }
            }
            cmd = if tick < warmup_ticks || history.len() < n {
                scripted_command(&cfg.track, &state, t)
            } else {
                let reference = make_oval_reference(&cfg.track, mcfg.horizon, &state, mdt);
                let (apply, next_plan, _) = match &controller {
                    Controller::Analytic(p) | Controller::ParamAdapt(p) => {
                        let model = AnalyticRollout { params: *p, dt: mdt };
                        mppi_step(&model, &state, &plan, &reference, &mcfg, &mut ctrl_rng)
                    }
                    Controller::Learned { ensemble, .. } => {
                        let hist: Vec<([f64; 3], ControlInput)> =
                            history.iter().cloned().collect();
                        let model = LearnedRollout::new(ensemble, &hist, Vec::new(), mdt);
                        mppi_step(&model, &state, &plan, &reference, &mcfg, &mut ctrl_rng)
                    }
                };
                plan = next_plan;
                apply
            };

            buffer.push(tick as f64 * mdt, state.dynamic(), cmd)?;
            history.push_back((state.dynamic(), cmd));
            if history.len() > n {
                history.pop_front();
            }

            // Adaptation runs from the first full buffer window, so the
            // warm-up laps already fit the model before it has to drive.
            if tick % cfg.adapt_every == 0 {
                match &mut controller {
                    Controller::Learned { ensemble, .. } => {
                        adapt_step(&buffer, ensemble, &adapt_cfg)?;
                    }
                    Controller::ParamAdapt(p) => {
                        let d_ctrl = p.delay_steps(mdt);
                        let trans = buffer.transitions(d_ctrl);
                        if trans.len() >= 10 {
                            for _ in 0..2 {
                                adapt_params_fd(p, &trans, mdt, 0.2);
                            }
                        }
                    }
                    Controller::Analytic(_) => {}
                }
            }
        }

        delay_q.push_back(cmd);
        let applied = delay_q.pop_front().unwrap();
        state = vehicle::integrate_step(&state, &applied, &true_params, plant_dt)?;
        if state.v_x < 0.0 {
            state.v_x = 0.0;
        }
        trajectory.push((t + plant_dt, state, applied));

        let s_now = cfg.track.project(state.p_x, state.p_y);
        let mut ds = (s_now - s_prev).rem_euclid(perimeter);
        if ds > perimeter / 2.0 {
            ds -= perimeter;
        }
        progress += ds;
        s_prev = s_now;

        let e = cfg.track.lateral_error(&state);
        if pstep >= warmup_plant {
            lateral.push(e);
            sum_abs_e += e.abs();
            sum_speed += state.v_x.hypot(state.v_y);
            measured += 1;
        }
        if e.abs() > cfg.crash_lateral {
            crashed = true;
            break;
        }
    }

    // Crashed episodes are charged the corridor bound for the unrun steps so
    // a crash can never look better than staying on track.
    let total_measured = plant_steps.saturating_sub(warmup_plant);
    let missing = total_measured - measured;
    let mean_abs_lateral = if total_measured == 0 {
        0.0
    } else {
        (sum_abs_e + missing as f64 * cfg.crash_lateral) / total_measured as f64
    };
    let mean_speed = if total_measured == 0 {
        0.0
    } else {
        sum_speed / total_measured as f64
    };

    let metrics = EpisodeMetrics {
        baseline,
        seed,
        mean_abs_lateral,
        mean_speed,
        laps: progress / perimeter,
        crashed,
        excursions: count_excursions(&lateral),
    };
    Ok(EpisodeOutcome {
        metrics,
        lateral,
        trajectory,
    })
}

/// Run one baseline over several seeds.
pub fn run_baseline(
    cfg: &HarnessConfig,
    baseline: Baseline,
    seeds: &[u64],
    inits: Option<&PreparedInits>,
) -> Result<Vec<EpisodeMetrics>> {
    seeds
        .iter()
        .map(|&s| run_episode(cfg, baseline, s, inits).map(|o| o.metrics))
        .collect()
}

/// Mean |lateral error| over a set of episodes.
pub fn mean_lateral(metrics: &[EpisodeMetrics]) -> f64 {
    metrics.iter().map(|m| m.mean_abs_lateral).sum::<f64>() / metrics.len() as f64
}

/// Steering-symmetry score of a learned model, in percent.
///
/// From a straight-driving history the model is rolled out open loop with a
/// held steering command of +delta and separately -delta; a left/right
/// symmetric model produces opposite terminal yaw rates. 100 means exactly
/// antisymmetric, 0 means the two responses agree in sign and size.
pub fn symmetry_probe(ensemble: &Ensemble) -> f64 {
    let cfg = *ensemble.cfg();
    let n = cfg.history;
    let dt = cfg.dt;
    let mut scores = Vec::new();
    for &v0 in &[1.0, 1.5, 2.0] {
        for &mag in &[0.3, 0.5, 0.8] {
            let hist: Vec<([f64; 3], ControlInput)> = (0..n)
                .map(|_| ([v0, 0.0, 0.0], ControlInput::new(0.3, 0.0)))
                .collect();
            let terminal_omega = |sign: f64| -> f64 {
                let model = LearnedRollout::new(ensemble, &hist, Vec::new(), dt);
                let mut rs = model.init();
                let mut st = VehicleState {
                    v_x: v0,
                    ..VehicleState::zero()
                };
                let u = ControlInput::new(0.3, sign * mag);
                for _ in 0..10 {
                    let (nd, _) = model.step(&mut rs, &st, u);
                    st = advance_pose(&st, &nd, dt);
                }
                st.omega
            };
            let (wp, wm) = (terminal_omega(1.0), terminal_omega(-1.0));
            let denom = wp.abs() + wm.abs();
            let score = if denom < 1e-9 {
                0.0
            } else {
                (1.0 - (wp + wm).abs() / denom).max(0.0)
            };
            scores.push(score);
        }
    }
    100.0 * scores.iter().sum::<f64>() / scores.len() as f64
}
