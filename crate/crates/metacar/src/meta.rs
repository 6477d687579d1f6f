//! MAML pre-training over generated tasks: inner-loop gradient adaptation,
//! first- and second-order meta-gradients, and the episode-level driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, grad_norm, ModelConfig, ModelWeights};
use crate::taskgen::{self, HistoryWindow, ParamRanges, TaskDataset};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetaConfig {
    pub k_inner: usize,
    /// Inner-loop step size.
    pub alpha: f64,
    /// Meta step size.
    pub beta: f64,
    pub tasks_per_batch: usize,
    pub episodes: usize,
    /// Fraction of each task's windows used by the inner loop.
    pub support_fraction: f64,
    /// Differentiate through the inner updates (exact Hessian-vector
    /// products) instead of the first-order approximation.
    pub second_order: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            k_inner: 3,
            alpha: 1e-2,
            beta: 1e-3,
            tasks_per_batch: 8,
            episodes: 2000,
            support_fraction: 0.5,
            // First order is the full-scale default; the second-order path is
            // exercised on small models where its cost is irrelevant.
            second_order: false,
        }
    }
}

pub const META_GRAD_CLIP: f64 = 10.0;

/// Support/query split: the first floor(frac*N) windows adapt, the rest
/// evaluate.
pub fn split_task(
    task: &TaskDataset,
    support_fraction: f64,
) -> Result<(
    (&[HistoryWindow], &[[f64; 3]]),
    (&[HistoryWindow], &[[f64; 3]]),
)> {
    let n = task.windows.len();
    let cut = ((n as f64) * support_fraction).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::EmptySupport);
    }
    Ok((
        (&task.windows[..cut], &task.targets[..cut]),
        (&task.windows[cut..], &task.targets[cut..]),
    ))
}

/// K plain gradient-descent steps on the support split; also returns the
/// intermediate parameter trajectory (needed to backpropagate through the
/// adaptation).
fn inner_adapt_traj(
    theta: &ModelWeights,
    support: (&[HistoryWindow], &[[f64; 3]]),
    k_inner: usize,
    alpha: f64,
) -> Result<Vec<ModelWeights>> {
    if support.0.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut traj = Vec::with_capacity(k_inner + 1);
    traj.push(theta.clone());
    for _ in 0..k_inner {
        let cur = traj.last().unwrap();
        let (_, g) = model::loss_and_grad(cur, support.0, support.1, &[])?;
        let mut next = cur.clone();
        next.axpy(-alpha, &g);
        traj.push(next);
    }
    Ok(traj)
}

pub fn inner_adapt(
    theta: &ModelWeights,
    task: &TaskDataset,
    k_inner: usize,
    alpha: f64,
    support_fraction: f64,
) -> Result<ModelWeights> {
    let (support, _) = split_task(task, support_fraction)?;
    Ok(inner_adapt_traj(theta, support, k_inner, alpha)?
        .pop()
        .unwrap())
}

/// Meta-gradient and query loss for one task.
fn task_meta_grad(
    theta: &ModelWeights,
    task: &TaskDataset,
    cfg: &MetaConfig,
) -> Result<(Vec<f64>, f64)> {
    let (support, query) = split_task(task, cfg.support_fraction)?;
    let traj = inner_adapt_traj(theta, support, cfg.k_inner, cfg.alpha)?;
    let adapted = traj.last().unwrap();
    let (q_loss, q_grad) = model::loss_and_grad(adapted, query.0, query.1, &[])?;
    if !cfg.second_order {
        return Ok((q_grad, q_loss));
    }
    // Reverse accumulation through theta_{k+1} = theta_k - alpha g(theta_k):
    // v <- (I - alpha H(theta_k)) v, from the last inner step back to theta.
    let mut v = q_grad;
    for k in (0..cfg.k_inner).rev() {
        let hv = model::hessian_vector_product(&traj[k], &v, support.0, support.1, &[])?;
        for (vi, hvi) in v.iter_mut().zip(hv.iter()) {
            *vi -= cfg.alpha * hvi;
        }
    }
    Ok((v, q_loss))
}

/// Mean query loss at adapted parameters; the quantity the meta-update
/// descends (and the finite-difference oracle differentiates).
pub fn meta_loss(theta: &ModelWeights, tasks: &[TaskDataset], cfg: &MetaConfig) -> Result<f64> {
    let mut total = 0.0;
    for task in tasks {
        let (support, query) = split_task(task, cfg.support_fraction)?;
        let traj = inner_adapt_traj(theta, support, cfg.k_inner, cfg.alpha)?;
        total += model::loss(traj.last().unwrap(), query.0, query.1, &[])?;
    }
    Ok(total / tasks.len() as f64)
}

/// The meta-gradient averaged over the task batch, before clipping.
pub fn meta_gradient(
    theta: &ModelWeights,
    tasks: &[TaskDataset],
    cfg: &MetaConfig,
) -> Result<(Vec<f64>, f64)> {
    if tasks.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_task: Vec<Result<(Vec<f64>, f64)>> = tasks
        .par_iter()
        .map(|t| task_meta_grad(theta, t, cfg))
        .collect();
    let mut grad = vec![0.0; theta.data.len()];
    let mut loss = 0.0;
    let scale = 1.0 / tasks.len() as f64;
    for r in per_task {
        let (g, l) = r?;
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += scale * b;
        }
        loss += scale * l;
    }
    Ok((grad, loss))
}

/// One meta-update over a batch of tasks; returns the new initialization and
/// the batch meta-loss.
pub fn meta_step(
    theta: &ModelWeights,
    tasks: &[TaskDataset],
    cfg: &MetaConfig,
) -> Result<(ModelWeights, f64)> {
    let (mut grad, loss) = meta_gradient(theta, tasks, cfg)?;
    let norm = grad_norm(&grad);
    if norm > META_GRAD_CLIP {
        let s = META_GRAD_CLIP / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    let mut next = theta.clone();
    next.axpy(-cfg.beta, &grad);
    Ok((next, loss))
}

/// Everything needed to reproduce one pre-training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainOpts {
    pub meta: MetaConfig,
    pub model: ModelConfig,
    pub ranges: ParamRanges,
    /// Fourier terms per sampled action sequence.
    pub n_terms: usize,
    /// Trajectory length per generated task, s.
    pub t_h: f64,
    pub init_seed: u64,
    pub data_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub final_weights: ModelWeights,
    pub best_weights: ModelWeights,
    /// (episode, meta_loss) per episode.
    pub log: Vec<(usize, f64)>,
}

/// Run episodes of meta-updates over freshly generated task batches. The task
/// stream depends only on `data_seed`, so ensemble members trained with
/// different `init_seed`s share identical tasks.
pub fn pretrain(opts: &PretrainOpts) -> Result<PretrainResult> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(opts.init_seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(opts.data_seed);
    let mut theta = ModelWeights::init(opts.model, &mut init_rng);
    let mut best = theta.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = Vec::with_capacity(opts.meta.episodes);
    for episode in 0..opts.meta.episodes {
        let tasks: Vec<TaskDataset> = (0..opts.meta.tasks_per_batch)
            .map(|_| {
                taskgen::generate_task(
                    &opts.ranges,
                    opts.n_terms,
                    opts.t_h,
                    opts.model.history,
                    opts.model.dt,
                    &mut data_rng,
                )
            })
            .collect::<Result<_>>()?;
        let (next, loss) = meta_step(&theta, &tasks, &opts.meta)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteMetaLoss {
                episode,
                params: tasks
                    .iter()
                    .map(|t| format!("{:?}", t.params))
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        theta = next;
        if loss < best_loss {
            best_loss = loss;
            best = theta.clone();
        }
        log.push((episode, loss));
    }
    Ok(PretrainResult {
        final_weights: theta,
        best_weights: best,
        log,
    })
}
