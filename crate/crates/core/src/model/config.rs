use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Towers linked through label embeddings and fused representations.
    Htlnet,
    /// Every tower reads the shared embedding directly; no transfer paths.
    SharedBottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Attention,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HtlNetConfig {
    /// Number of binary conversion tasks preceding the core regression task.
    pub num_tasks: usize,
    pub embedding_dim: usize,
    pub label_embedding_dim: usize,
    pub tower_units: Vec<usize>,
    pub fusion: FusionKind,
    pub architecture: Architecture,
    pub use_label_embedding: bool,
    pub use_representation: bool,
    /// Adds Gumbel(0, 1) noise to the label-embedding logits while training.
    pub gumbel_noise: bool,
    pub tau0: f64,
    pub tau_decay_factor: f64,
    pub tau_decay_steps: u64,
    pub tau_min: f64,
}

impl Default for HtlNetConfig {
    fn default() -> Self {
        Self {
            num_tasks: 2,
            embedding_dim: 10,
            label_embedding_dim: 10,
            tower_units: vec![128, 64, 32],
            fusion: FusionKind::Attention,
            architecture: Architecture::Htlnet,
            use_label_embedding: true,
            use_representation: true,
            gumbel_noise: false,
            tau0: 10.0,
            tau_decay_factor: 0.5,
            tau_decay_steps: 1000,
            tau_min: 0.1,
        }
    }
}

impl HtlNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(format!("model: {msg}")));
        if self.num_tasks == 0 {
            return fail("num_tasks must be at least 1");
        }
        if self.embedding_dim == 0 || self.label_embedding_dim == 0 {
            return fail("embedding dimensions must be positive");
        }
        if self.tower_units.is_empty() || self.tower_units.contains(&0) {
            return fail("tower_units must be a non-empty list of positive widths");
        }
        if !(self.tau0 > 0.0 && self.tau_min > 0.0) {
            return fail("tau0 and tau_min must be positive");
        }
        if !(self.tau_decay_factor > 0.0 && self.tau_decay_factor <= 1.0) {
            return fail("tau_decay_factor must lie in (0, 1]");
        }
        if self.tau_decay_steps == 0 {
            return fail("tau_decay_steps must be at least 1");
        }
        Ok(())
    }

    /// Whether any cross-task transfer path is wired in.
    pub fn has_transfer(&self) -> bool {
        self.architecture == Architecture::Htlnet
            && (self.use_label_embedding || self.use_representation)
    }

    pub fn uses_label_embedding(&self) -> bool {
        self.architecture == Architecture::Htlnet && self.use_label_embedding
    }

    pub fn uses_representation(&self) -> bool {
        self.architecture == Architecture::Htlnet && self.use_representation
    }

    /// Width of the first hidden layer, where representations are tapped.
    pub fn representation_dim(&self) -> usize {
        self.tower_units[0]
    }
}

/// Step-decayed temperature: `max(τ_min, τ₀ · factor^⌊step / decay_steps⌋)`.
pub fn temperature_schedule(step: u64, cfg: &HtlNetConfig) -> f64 {
    let decays = step / cfg.tau_decay_steps.max(1);
    let decays = i32::try_from(decays).unwrap_or(i32::MAX);
    (cfg.tau0 * cfg.tau_decay_factor.powi(decays)).max(cfg.tau_min)
}
