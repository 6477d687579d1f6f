//! Online adaptation: a bounded FIFO buffer of timestamped (state, action)
//! samples, turned into training windows and used for per-member gradient
//! steps under a wall-clock budget.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model;
use crate::taskgen::{make_windows, HistoryWindow};
use crate::vehicle::ControlInput;

#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub t: f64,
    pub dyn_state: [f64; 3],
    pub action: ControlInput,
}

/// Rolling experience buffer. Timestamps must be strictly increasing; a jump
/// of more than 1.5 * dt starts a new contiguous run, and training windows
/// never span run boundaries.
#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    samples: VecDeque<Sample>,
    capacity: usize,
    dt: f64,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, dt: f64) -> Self {
        assert!(capacity > 0 && dt > 0.0);
        Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            dt,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn push(&mut self, t: f64, dyn_state: [f64; 3], action: ControlInput) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if t <= last.t {
                return Err(Error::OutOfOrderTimestamp { t, last: last.t });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(Sample {
            t,
            dyn_state,
            action,
        });
        Ok(())
    }

    /// Maximal runs of samples spaced by dt (within 50% slack).
    fn runs(&self) -> Vec<Vec<Sample>> {
        let mut runs = Vec::new();
        let mut cur: Vec<Sample> = Vec::new();
        for s in &self.samples {
            if let Some(last) = cur.last() {
                if s.t - last.t > 1.5 * self.dt {
                    runs.push(std::mem::take(&mut cur));
                }
            }
            cur.push(*s);
        }
        if !cur.is_empty() {
            runs.push(cur);
        }
        runs
    }

    /// One-step transitions (x_i, u_applied, x_{i+1}) with the logged command
    /// realigned by `delay` ticks: the command acting on the plant at tick i
    /// is the one issued at tick i - delay. Runs shorter than delay + 2 yield
    /// nothing.
    pub fn transitions(&self, delay: usize) -> Vec<([f64; 3], ControlInput, [f64; 3])> {
        let mut out = Vec::new();
        for run in self.runs() {
            for i in delay..run.len().saturating_sub(1) {
                out.push((run[i].dyn_state, run[i - delay].action, run[i + 1].dyn_state));
            }
        }
        out
    }

    /// All training windows of history length n derivable from the buffer.
    pub fn windows(&self, n: usize) -> (Vec<HistoryWindow>, Vec<[f64; 3]>) {
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        for run in self.runs() {
            let states: Vec<[f64; 3]> = run.iter().map(|s| s.dyn_state).collect();
            let actions: Vec<ControlInput> = run.iter().map(|s| s.action).collect();
            if let Ok((w, t)) = make_windows(&states, &actions, n, self.dt) {
                windows.extend(w);
                targets.extend(t);
            }
        }
        (windows, targets)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptConfig {
    /// Gradient step size per update.
    pub step_size: f64,
    /// Wall-clock budget; exceeding it discards the computed update.
    pub budget: Option<Duration>,
    /// Test hook: artificial delay inserted before the budget check.
    pub debug_delay: Option<Duration>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            budget: None,
            debug_delay: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptReport {
    /// Whether the gradient step was applied.
    pub applied: bool,
    /// The budget was exceeded and the update discarded.
    pub overrun: bool,
    /// Buffer held too little contiguous data for a single window.
    pub insufficient_data: bool,
    pub n_windows: usize,
    pub loss_before: f64,
}

/// One adaptation step: a single gradient update of every ensemble member on
/// all windows currently in the buffer. Updates are computed first and
/// committed only if the wall-clock budget holds, so an overrun never leaves
/// the ensemble half-updated.
pub fn adapt_step(
    buffer: &ExperienceBuffer,
    ensemble: &mut Ensemble,
    cfg: &AdaptConfig,
) -> Result<AdaptReport> {
    let start = Instant::now();
    let n = ensemble.cfg().history;
    let (windows, targets) = buffer.windows(n);
    if windows.is_empty() {
        return Ok(AdaptReport {
            insufficient_data: true,
            ..Default::default()
        });
    }
    let grads: Vec<(f64, Vec<f64>)> = ensemble
        .members
        .par_iter()
        .map(|m| model::loss_and_grad(m, &windows, &targets, &[]))
        .collect::<Result<_>>()?;
    if let Some(d) = cfg.debug_delay {
        std::thread::sleep(d);
    }
    if let Some(budget) = cfg.budget {
        if start.elapsed() > budget {
            return Ok(AdaptReport {
                overrun: true,
                n_windows: windows.len(),
                loss_before: grads.iter().map(|(l, _)| l).sum::<f64>() / grads.len() as f64,
                ..Default::default()
            });
        }
    }
    let loss_before = grads.iter().map(|(l, _)| l).sum::<f64>() / grads.len() as f64;
    for (m, (_, g)) in ensemble.members.iter_mut().zip(grads.iter()) {
        m.axpy(-cfg.step_size, g);
    }
    Ok(AdaptReport {
        applied: true,
        n_windows: windows.len(),
        loss_before,
        ..Default::default()
    })
}
