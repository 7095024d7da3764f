//! Shared-parameter gradient surgery: per-task gradients of the shared
//! embedding are de-conflicted against the core task's gradient, rescaled
//! toward its magnitude, and summed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OptimConfig;
use crate::error::{Error, Result};

/// How per-task gradients of the shared parameters are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Project against the core gradient, then rebalance magnitudes.
    Htlnet,
    /// Plain sum of all task gradients.
    None,
    /// Pairwise projection among all tasks in random order, no rebalancing.
    GradientSurgery,
    /// Magnitude rebalancing only, from moving averages of the norms.
    Metabalance,
}

/// Per-task gradients of the flattened shared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub core: Vec<f64>,
    /// One gradient per conversion step, in task order.
    pub tasks: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn new(core: Vec<f64>, tasks: Vec<Vec<f64>>) -> Result<Self> {
        for (t, g) in tasks.iter().enumerate() {
            if g.len() != core.len() {
                return Err(Error::GradientLength {
                    core: core.len(),
                    task: t + 1,
                    len: g.len(),
                });
            }
        }
        Ok(Self { core, tasks })
    }

    fn check(&self) -> Result<()> {
        for (t, g) in self.tasks.iter().enumerate() {
            if g.len() != self.core.len() {
                return Err(Error::GradientLength {
                    core: self.core.len(),
                    task: t + 1,
                    len: g.len(),
                });
            }
        }
        Ok(())
    }
}

/// Gradient-norm diagnostics for one conversion step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGradientStats {
    pub norm: f64,
    pub processed_norm: f64,
    /// `‖G_core‖ / ‖G_t‖` before any processing.
    pub raw_ratio: f64,
    /// `‖G_core‖ / ‖G_t'‖` after processing.
    pub processed_ratio: f64,
    /// Magnitude factor applied by the balancing step (1 when skipped).
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessOutput {
    pub shared: Vec<f64>,
    pub core_norm: f64,
    pub tasks: Vec<TaskGradientStats>,
    /// Each step's gradient after processing, in task order.
    pub processed: Vec<Vec<f64>>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes an `alpha` fraction of the component of `task` that opposes
/// `core`. Non-conflicting pairs (dot ≥ 0) and a zero core are left alone.
pub fn project_conflict(task: &[f64], core: &[f64], alpha: f64) -> Vec<f64> {
    let d = dot(task, core);
    let core_sq = dot(core, core);
    if d >= 0.0 || core_sq == 0.0 {
        return task.to_vec();
    }
    let c = alpha * d / core_sq;
    task.iter().zip(core).map(|(t, k)| t - c * k).collect()
}

/// `clamp(core_norm / task_norm, 1/C, C)`.
pub fn balance_weight(core_norm: f64, task_norm: f64, clip: f64) -> f64 {
    let w = core_norm / task_norm;
    if w < 1.0 / clip {
        1.0 / clip
    } else if w > clip {
        clip
    } else {
        w
    }
}

/// Blends `task` toward the core gradient's magnitude:
/// `(γ·w + 1 − γ) · G_t` with `w` the clipped norm ratio. Returns the
/// rescaled gradient and the factor applied.
pub fn balance_magnitude(task: &[f64], core: &[f64], gamma: f64, clip: f64) -> (Vec<f64>, f64) {
    let task_norm = norm(task);
    if task_norm == 0.0 {
        return (task.to_vec(), 1.0);
    }
    let w = balance_weight(norm(core), task_norm, clip);
    let scale = gamma * w + (1.0 - gamma);
    (task.iter().map(|v| v * scale).collect(), scale)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn sum_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

fn stats(core_norm: f64, raw: &[f64], processed: &[f64], scale: f64) -> TaskGradientStats {
    let (n, pn) = (norm(raw), norm(processed));
    TaskGradientStats {
        norm: n,
        processed_norm: pn,
        raw_ratio: ratio(core_norm, n),
        processed_ratio: ratio(core_norm, pn),
        scale,
    }
}

/// The stateless modes (`htlnet`, `none`) of the shared-gradient process.
/// For each step in task order the gradient is projected against the core
/// gradient and then rebalanced (unless ablated), and
/// `G_s = G_core + Σ G_t'` is returned.
pub fn shared_gradient_process(gs: &GradientSet, cfg: &OptimConfig) -> Result<ProcessOutput> {
    gs.check()?;
    let core_norm = norm(&gs.core);
    let mut shared = gs.core.clone();
    let mut tasks = Vec::with_capacity(gs.tasks.len());
    let mut processed_all = Vec::with_capacity(gs.tasks.len());
    match cfg.mode {
        GradientMode::None => {
            for g in &gs.tasks {
                sum_into(&mut shared, g);
                tasks.push(stats(core_norm, g, g, 1.0));
                processed_all.push(g.clone());
            }
        }
        GradientMode::Htlnet => {
            for g in &gs.tasks {
                let projected = if cfg.disable_projection {
                    g.clone()
                } else {
                    project_conflict(g, &gs.core, cfg.alpha)
                };
                let (processed, scale) = if cfg.disable_magnitude {
                    (projected, 1.0)
                } else {
                    balance_magnitude(&projected, &gs.core, cfg.gamma, cfg.clip)
                };
                sum_into(&mut shared, &processed);
                tasks.push(stats(core_norm, g, &processed, scale));
                processed_all.push(processed);
            }
        }
        mode => {
            return Err(Error::config(format!(
                "gradient mode {mode:?} keeps state; use GradientProcessor"
            )))
        }
    }
    Ok(ProcessOutput {
        shared,
        core_norm,
        tasks,
        processed: processed_all,
    })
}

/// Moving averages carried between steps by the `metabalance` mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessorState {
    pub core_norm_ema: Option<f64>,
    pub task_norm_ema: Vec<Option<f64>>,
}

/// Runs the configured gradient mode, holding whatever state it needs
/// between steps.
#[derive(Clone, Debug)]
pub struct GradientProcessor {
    cfg: OptimConfig,
    seed: u64,
    state: ProcessorState,
}

impl GradientProcessor {
    /// `seed` drives the per-step task order of `gradient_surgery`.
    pub fn new(cfg: OptimConfig, seed: u64) -> Self {
        Self {
            cfg,
            seed,
            state: ProcessorState::default(),
        }
    }

    pub fn with_state(cfg: OptimConfig, seed: u64, state: ProcessorState) -> Self {
        Self { cfg, seed, state }
    }

    pub fn state(&self) -> &ProcessorState {
        &self.state
    }

    pub fn process(&mut self, gs: &GradientSet, step: u64) -> Result<ProcessOutput> {
        match self.cfg.mode {
            GradientMode::Htlnet | GradientMode::None => shared_gradient_process(gs, &self.cfg),
            GradientMode::GradientSurgery => {
                let mut rng = step_rng(self.seed, step);
                gradient_surgery(gs, &mut rng)
            }
            GradientMode::Metabalance => self.metabalance(gs),
        }
    }

    fn metabalance(&mut self, gs: &GradientSet) -> Result<ProcessOutput> {
        gs.check()?;
        let beta = self.cfg.metabalance_decay;
        let ema = |prev: Option<f64>, x: f64| match prev {
            Some(p) => beta * p + (1.0 - beta) * x,
            None => x,
        };
        let core_norm = norm(&gs.core);
        let core_ema = ema(self.state.core_norm_ema, core_norm);
        self.state.core_norm_ema = Some(core_ema);
        self.state.task_norm_ema.resize(gs.tasks.len(), None);

        let mut shared = gs.core.clone();
        let mut tasks = Vec::with_capacity(gs.tasks.len());
        let mut processed_all = Vec::with_capacity(gs.tasks.len());
        for (t, g) in gs.tasks.iter().enumerate() {
            let task_ema = ema(self.state.task_norm_ema[t], norm(g));
            self.state.task_norm_ema[t] = Some(task_ema);
            let scale = if task_ema > 0.0 {
                let w = balance_weight(core_ema, task_ema, self.cfg.clip);
                self.cfg.gamma * w + (1.0 - self.cfg.gamma)
            } else {
                1.0
            };
            let processed: Vec<f64> = g.iter().map(|v| v * scale).collect();
            sum_into(&mut shared, &processed);
            tasks.push(stats(core_norm, g, &processed, scale));
            processed_all.push(processed);
        }
        Ok(ProcessOutput {
            shared,
            core_norm,
            tasks,
            processed: processed_all,
        })
    }
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Every gradient (core included) is projected off each other task's
/// original gradient it conflicts with, visiting the others in shuffled
/// order; the results are summed.
pub fn gradient_surgery(gs: &GradientSet, rng: &mut impl rand::Rng) -> Result<ProcessOutput> {
    gs.check()?;
    let all: Vec<&[f64]> = std::iter::once(gs.core.as_slice())
        .chain(gs.tasks.iter().map(Vec::as_slice))
        .collect();
    let mut processed = Vec::with_capacity(all.len());
    for (i, g) in all.iter().enumerate() {
        let mut out = g.to_vec();
        let mut order: Vec<usize> = (0..all.len()).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            out = project_conflict(&out, all[j], 1.0);
        }
        processed.push(out);
    }
    let mut shared = vec![0.0; gs.core.len()];
    for g in &processed {
        sum_into(&mut shared, g);
    }
    let core_norm = norm(&gs.core);
    let tasks = gs
        .tasks
        .iter()
        .zip(&processed[1..])
        .map(|(raw, p)| stats(core_norm, raw, p, 1.0))
        .collect();
    processed.remove(0);
    Ok(ProcessOutput {
        shared,
        core_norm,
        tasks,
        processed,
    })
}
