//! Ensemble of independently initialized models: mean prediction plus
//! population-variance epistemic uncertainty.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, load_checkpoint, save_checkpoint, EncoderState, ModelWeights, OMEGA_SCALE, VX_SCALE,
    VY_SCALE,
};
use crate::taskgen::HistoryWindow;

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<ModelWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsemblePrediction {
    pub mu: [f64; 3],
    /// Population variance (divide by l), componentwise.
    pub sigma2: [f64; 3],
    /// Scalar reduction: variances summed after standardization scaling.
    pub sigma_scalar: f64,
}

fn reduce(outputs: &[[f64; 3]]) -> EnsemblePrediction {
    let l = outputs.len() as f64;
    let mut mu = [0.0; 3];
    for o in outputs {
        for j in 0..3 {
            mu[j] += o[j];
        }
    }
    for m in mu.iter_mut() {
        *m /= l;
    }
    let mut sigma2 = [0.0; 3];
    for o in outputs {
        for j in 0..3 {
            let e = o[j] - mu[j];
            sigma2[j] += e * e;
        }
    }
    for s in sigma2.iter_mut() {
        *s /= l;
    }
    let sigma_scalar = VX_SCALE * VX_SCALE * sigma2[0]
        + VY_SCALE * VY_SCALE * sigma2[1]
        + OMEGA_SCALE * OMEGA_SCALE * sigma2[2];
    EnsemblePrediction {
        mu,
        sigma2,
        sigma_scalar,
    }
}

impl Ensemble {
    pub fn new(members: Vec<ModelWeights>) -> Self {
        assert!(!members.is_empty());
        assert!(members.iter().all(|m| m.cfg == members[0].cfg));
        Self { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn cfg(&self) -> &model::ModelConfig {
        &self.members[0].cfg
    }

    /// Mean and population variance of the member predictions on one window.
    pub fn predict(&self, window: &HistoryWindow, aux: &[f64]) -> Result<EnsemblePrediction> {
        let outputs: Vec<[f64; 3]> = self
            .members
            .iter()
            .map(|m| model::forward(m, window, aux).map(|p| p.as_array()))
            .collect::<Result<_>>()?;
        Ok(reduce(&outputs))
    }

    /// Same reduction over per-member encoder states kept alive by a rollout.
    pub fn predict_states(&self, states: &[EncoderState]) -> EnsemblePrediction {
        let outputs: Vec<[f64; 3]> = self
            .members
            .iter()
            .zip(states.iter())
            .map(|(m, s)| s.predict(m).as_array())
            .collect();
        reduce(&outputs)
    }

    /// Apply the identical gradient procedure to every member on identical
    /// data; members never mix parameters.
    pub fn train_members(
        &mut self,
        windows: &[HistoryWindow],
        targets: &[[f64; 3]],
        steps: usize,
        step_size: f64,
        aux: &[f64],
    ) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        let results: Vec<Result<()>> = self
            .members
            .par_iter_mut()
            .map(|m| {
                for _ in 0..steps {
                    let (_, g) = model::loss_and_grad(m, windows, targets, aux)?;
                    m.axpy(-step_size, &g);
                }
                Ok(())
            })
            .collect();
        results.into_iter().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    l: usize,
    vx_scale: f64,
    vy_scale: f64,
    omega_scale: f64,
}

pub fn save_ensemble(ensemble: &Ensemble, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, m) in ensemble.members.iter().enumerate() {
        save_checkpoint(m, &dir.join(format!("member_{i:03}.bin")))?;
    }
    let manifest = Manifest {
        format_version: 1,
        l: ensemble.len(),
        vx_scale: VX_SCALE,
        vy_scale: VY_SCALE,
        omega_scale: OMEGA_SCALE,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<Ensemble> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != 1 {
        return Err(Error::CheckpointFormat(format!(
            "unsupported ensemble manifest version {}",
            manifest.format_version
        )));
    }
    let members = (0..manifest.l)
        .map(|i| load_checkpoint(&dir.join(format!("member_{i:03}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble::new(members))
}
