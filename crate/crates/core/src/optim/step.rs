use std::collections::BTreeMap;

use rand::RngCore;

use super::{adam_step, AdamState, GradientProcessor, GradientSet, OptimConfig, ProcessOutput};
use crate::data::HybridBatch;
use crate::error::Result;
use crate::model::{loss_bce, loss_mse, temperature_schedule, ForwardOptions, HtlNet, SHARED_EMBEDDING};
use crate::tensor::Tape;

/// Mutable optimiser state carried across steps.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub adam: AdamState,
    pub processor: GradientProcessor,
}

impl OptimState {
    pub fn new(cfg: &OptimConfig, seed: u64) -> Self {
        Self {
            adam: AdamState::default(),
            processor: GradientProcessor::new(cfg.clone(), seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub tau: f64,
    pub task_losses: Vec<f64>,
    pub core_loss: f64,
    pub gradients: ProcessOutput,
}

/// One optimisation step on `batch`.
///
/// Each loss is differentiated separately so the shared embedding receives
/// per-task gradients, which go through the configured gradient process;
/// every other parameter takes the plain sum of its gradients. All
/// parameters are then updated with Adam.
pub fn training_step(
    model: &mut HtlNet,
    batch: &HybridBatch,
    cfg: &OptimConfig,
    state: &mut OptimState,
    step: u64,
    noise: Option<&mut dyn RngCore>,
) -> Result<StepReport> {
    let tau = temperature_schedule(step, model.config());
    let mut tape = Tape::new();
    let vars = model.params().register(&mut tape, true);
    let opts = ForwardOptions {
        tau,
        cut_transfer: !cfg.disable_stop_gradient,
        noise: if model.config().gumbel_noise { noise } else { None },
    };
    let trace = model.forward(&mut tape, &vars, &batch.features, opts)?;

    let mut task_loss_vars = Vec::with_capacity(model.num_tasks());
    for (prob, labels) in trace.task_probs.iter().zip(&batch.labels) {
        task_loss_vars.push(loss_bce(&mut tape, *prob, labels)?);
    }
    let core_loss_var = loss_mse(&mut tape, trace.core, &batch.core)?;
    let task_losses = task_loss_vars.iter().map(|&l| tape.value(l).item()).collect();
    let core_loss = tape.value(core_loss_var).item();

    let table = vars.get(SHARED_EMBEDDING)?;
    let mut summed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut shared_per_loss = Vec::with_capacity(task_loss_vars.len() + 1);
    for loss in std::iter::once(core_loss_var).chain(task_loss_vars) {
        let mut grads = tape.backward(loss)?;
        for (name, &var) in vars.iter() {
            let Some(g) = grads.take(var) else { continue };
            if var == table {
                shared_per_loss.push(g.into_data());
                continue;
            }
            match summed.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    summed.insert(name.clone(), g.into_data());
                }
            }
        }
    }

    let core = shared_per_loss.remove(0);
    let gradients = state
        .processor
        .process(&GradientSet::new(core, shared_per_loss)?, step)?;
    summed.insert(SHARED_EMBEDDING.to_string(), gradients.shared.clone());
    adam_step(model.params_mut(), &summed, &mut state.adam, cfg.adam())?;

    Ok(StepReport {
        step,
        tau,
        task_losses,
        core_loss,
        gradients,
    })
}
