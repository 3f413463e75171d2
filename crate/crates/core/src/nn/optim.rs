//! Adam / RAdam with a log-linear learning-rate decay.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    /// Steps over which the rate decays; constant at `lr_end` afterwards.
    pub horizon: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr_start: 1e-2,
            lr_end: 1e-4,
            horizon: 50_000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.horizon == 0 || step >= self.horizon {
            return self.lr_end;
        }
        let frac = step as f64 / self.horizon as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::RAdam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            schedule: LrSchedule::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Number of steps taken (skipped steps included).
    pub step: u64,
    /// Number of steps that actually updated parameters.
    pub applied: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let m = store.blocks().iter().map(|b| vec![0.0; b.value.len()]).collect();
        let v = store.blocks().iter().map(|b| vec![0.0; b.value.len()]).collect();
        Self {
            config,
            m,
            v,
            step: 0,
            applied: 0,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.schedule.lr(self.step)
    }

    /// Applies one update from the store's gradients. A non-finite gradient
    /// skips the update but still advances the step counter.
    pub fn step(&mut self, store: &mut ParamStore) -> StepOutcome {
        let lr = self.current_lr();
        self.step += 1;
        if !store.grads_finite() {
            log::warn!("optimizer: non-finite gradient at step {}, update skipped", self.step - 1);
            return StepOutcome::SkippedNonFinite;
        }
        self.applied += 1;
        let t = self.applied as f64;
        let OptimizerConfig { beta1, beta2, eps, kind, .. } = self.config;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        // RAdam variance rectification; `None` means an un-normalized momentum step
        let rect = match kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::RAdam => {
                let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
                let rho_t = rho_inf - 2.0 * t * beta2.powf(t) / bc2;
                if rho_t > 5.0 {
                    Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
                } else {
                    None
                }
            }
        };
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        let eps = eps as f32;
        for (k, block) in store.blocks_mut().iter_mut().enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..block.value.len() {
                let g = block.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = match rect {
                    Some(r) => step_size * r as f32 * m[i] / (v[i].sqrt() * inv_bc2_sqrt + eps),
                    None => step_size * m[i],
                };
                block.value[i] -= update;
            }
        }
        StepOutcome::Applied
    }
}
