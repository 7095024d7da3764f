//! Optimisation: the shared-gradient process, Adam, and the training step
//! that ties them to the network.

mod adam;
mod gradient;
mod step;

pub use adam::{adam_step, AdamHyper, AdamState, Moments};
pub use gradient::{
    balance_magnitude, balance_weight, dot, gradient_surgery, norm, project_conflict,
    shared_gradient_process, GradientMode, GradientProcessor, GradientSet, ProcessOutput,
    ProcessorState, TaskGradientStats,
};
pub use step::{training_step, OptimState, StepReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub mode: GradientMode,
    /// Fraction of the conflicting component removed by the projection.
    pub alpha: f64,
    /// Blend between the raw gradient (0) and the fully rebalanced one (1).
    pub gamma: f64,
    /// Clip threshold `C` for the balancing weight, which stays in `[1/C, C]`.
    pub clip: f64,
    pub disable_projection: bool,
    pub disable_magnitude: bool,
    pub disable_stop_gradient: bool,
    /// Moving-average decay of gradient norms in `metabalance` mode.
    pub metabalance_decay: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            mode: GradientMode::Htlnet,
            alpha: 1.0,
            gamma: 1.0,
            clip: 100.0,
            disable_projection: false,
            disable_magnitude: false,
            disable_stop_gradient: false,
            metabalance_decay: 0.9,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(format!("optim: {msg}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.clip >= 1.0) {
            return fail("clip must be at least 1");
        }
        if !(0.0..1.0).contains(&self.metabalance_decay) {
            return fail("metabalance_decay must lie in [0, 1)");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam needs lr > 0 and betas in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}
