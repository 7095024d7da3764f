//! Evaluation metrics for the conversion steps (AUC, logloss) and the core
//! target (NRMSE, NMAE, Spearman, normalised Gini).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PROB_EPS;

fn metric_err(metric: &'static str, msg: impl Into<String>) -> Error {
    Error::Metric {
        metric,
        msg: msg.into(),
    }
}

fn check_lengths(metric: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(metric_err(metric, format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(metric_err(metric, "empty input"));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count
/// one half. Labels must be 0 or 1 with both classes present.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths("auc", labels.len(), scores.len())?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(metric_err("auc", "labels must be 0 or 1"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(metric_err("auc", "needs at least one positive and one negative label"));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1.0).map(|(r, _)| r).sum();
    let n_pos = n_pos as f64;
    Ok((pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn logloss(labels: &[f64], probs: &[f64]) -> Result<f64> {
    check_lengths("logloss", labels.len(), probs.len())?;
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// RMSE divided by the population standard deviation of `y_true`.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths("nrmse", y_true.len(), y_pred.len())?;
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let var = y_true.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(metric_err("nrmse", "degenerate target: zero standard deviation"));
    }
    let mse = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / n;
    Ok((mse / var).sqrt())
}

/// MAE divided by the mean absolute value of `y_true`.
pub fn nmae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths("nmae", y_true.len(), y_pred.len())?;
    let scale: f64 = y_true.iter().map(|y| y.abs()).sum();
    if scale == 0.0 {
        return Err(metric_err("nmae", "degenerate target: zero mean absolute value"));
    }
    let mae: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(mae / scale)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Pearson correlation of average ranks.
pub fn spearman(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths("spearman", y_true.len(), y_pred.len())?;
    if y_true.len() < 2 {
        return Err(metric_err("spearman", "needs at least two samples"));
    }
    pearson(&average_ranks(y_true), &average_ranks(y_pred))
        .ok_or_else(|| metric_err("spearman", "undefined for a constant input"))
}

/// Gini of cumulative `amounts` visited in descending `order_by`, ties kept
/// in input order.
fn raw_gini(amounts: &[f64], order_by: &[f64], total: f64) -> f64 {
    let mut order: Vec<usize> = (0..amounts.len()).collect();
    order.sort_by(|&a, &b| order_by[b].total_cmp(&order_by[a]));
    let n = amounts.len() as f64;
    let mut cum = 0.0;
    let mut area = 0.0;
    for &i in &order {
        cum += amounts[i];
        area += cum / total;
    }
    (area - (n + 1.0) / 2.0) / n
}

/// Normalised Gini: the Lorenz-curve Gini of true amounts ranked by the
/// prediction, over the same quantity ranked by the truth. A perfect
/// ranking scores 1 and the reversed ranking −1. A flat curve (all amounts
/// equal) returns 0.
pub fn gini(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths("gini", y_true.len(), y_pred.len())?;
    if y_true.iter().any(|&y| y < 0.0) {
        return Err(metric_err("gini", "amounts must be non-negative"));
    }
    let total: f64 = y_true.iter().sum();
    if !(total > 0.0) {
        return Err(metric_err("gini", "amounts sum to zero"));
    }
    let best = raw_gini(y_true, y_true, total);
    if best.abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok(raw_gini(y_true, y_pred, total) / best)
}

/// Metric values for one task; failures (e.g. a single-class split) are
/// kept next to the values instead of aborting the whole report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub values: Vec<(String, f64)>,
    pub errors: Vec<(String, String)>,
}

impl TaskReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.iter().find(|(m, _)| m == metric).map(|(_, v)| *v)
    }

    fn record(&mut self, metric: &str, result: Result<f64>) {
        match result {
            Ok(v) => self.values.push((metric.to_string(), v)),
            Err(e) => self.errors.push((metric.to_string(), e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    /// AUC and logloss per conversion step; NRMSE, NMAE, Spearman and Gini
    /// for the core target.
    pub fn compute(
        step_names: &[String],
        core_name: &str,
        labels: &[Vec<f64>],
        probs: &[Vec<f64>],
        core_true: &[f64],
        core_pred: &[f64],
    ) -> Self {
        let mut tasks = Vec::with_capacity(step_names.len() + 1);
        for ((name, y), p) in step_names.iter().zip(labels).zip(probs) {
            let mut r = TaskReport {
                task: name.clone(),
                values: Vec::new(),
                errors: Vec::new(),
            };
            r.record("auc", auc(y, p));
            r.record("logloss", logloss(y, p));
            tasks.push(r);
        }
        let mut r = TaskReport {
            task: core_name.to_string(),
            values: Vec::new(),
            errors: Vec::new(),
        };
        r.record("nrmse", nrmse(core_true, core_pred));
        r.record("nmae", nmae(core_true, core_pred));
        r.record("spearman", spearman(core_true, core_pred));
        r.record("gini", gini(core_true, core_pred));
        tasks.push(r);
        Self {
            samples: core_true.len(),
            tasks,
        }
    }

    pub fn task(&self, name: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn get(&self, task: &str, metric: &str) -> Option<f64> {
        self.task(task).and_then(|t| t.get(metric))
    }

    /// Tab-separated `task, metric, value` lines, one metric per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            for (m, v) in &t.values {
                let _ = writeln!(out, "{}\t{m}\t{v:?}", t.task);
            }
            for (m, e) in &t.errors {
                let _ = writeln!(out, "{}\t{m}\terror: {e}", t.task);
            }
        }
        out
    }

    /// Aligned table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:<10} {:>12}\n", "task", "metric", "value");
        for t in &self.tasks {
            for (m, v) in &t.values {
                let _ = writeln!(out, "{:<12} {:<10} {:>12.6}", t.task, m, v);
            }
            for (m, e) in &t.errors {
                let _ = writeln!(out, "{:<12} {:<10} {:>12}  ({e})", t.task, m, "n/a");
            }
        }
        let _ = writeln!(out, "samples: {}", self.samples);
        out
    }
}
