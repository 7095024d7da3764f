use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{nrmse, EvalReport};
use crate::model::HtlNet;

/// Rows per inference batch; bounds tape memory on large splits.
const EVAL_CHUNK: usize = 4096;

/// Predicted step probabilities (`[task][row]`) and core values for every row.
pub fn predict_dataset(model: &HtlNet, dataset: &Dataset, step: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut probs = vec![Vec::with_capacity(dataset.len()); model.num_tasks()];
    let mut core = Vec::with_capacity(dataset.len());
    for batch in dataset.batches(EVAL_CHUNK) {
        let p = model.predict(&batch.features, step)?;
        for (acc, t) in probs.iter_mut().zip(p.task_probs) {
            acc.extend(t);
        }
        core.extend(p.core);
    }
    Ok((probs, core))
}

/// Full metric report for `dataset`, with the LEU temperature of `step`.
pub fn evaluate(model: &HtlNet, dataset: &Dataset, step: u64) -> Result<EvalReport> {
    let (probs, core_pred) = predict_dataset(model, dataset, step)?;
    let labels: Vec<Vec<f64>> = (0..dataset.num_tasks())
        .map(|t| dataset.samples.iter().map(|s| f64::from(s.labels[t])).collect())
        .collect();
    let core_true: Vec<f64> = dataset.samples.iter().map(|s| s.core).collect();
    Ok(EvalReport::compute(
        &dataset.schema.labels,
        &dataset.schema.core,
        &labels,
        &probs,
        &core_true,
        &core_pred,
    ))
}

/// Core-task NRMSE, the model-selection criterion.
pub fn core_nrmse(model: &HtlNet, dataset: &Dataset, step: u64) -> Result<f64> {
    let (_, core_pred) = predict_dataset(model, dataset, step)?;
    let core_true: Vec<f64> = dataset.samples.iter().map(|s| s.core).collect();
    nrmse(&core_true, &core_pred)
}
