use std::fmt::Write as _;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::{RunConfig, Splits};
use super::eval::evaluate;
use super::train::train;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Architecture, FusionKind};
use crate::optim::GradientMode;

/// The reference variant every other one is compared against.
pub const BASELINE: &str = "htlnet";

pub const VARIANTS: [&str; 11] = [
    "htlnet",
    "wo_architecture",
    "wo_optimization",
    "wo_representation",
    "wo_label_embedding",
    "wo_stop_gradient",
    "wo_gradient_conflict",
    "wo_gradient_magnitude",
    "gradient_surgery",
    "metabalance",
    "concat_fusion",
];

/// The base config with one variant's switches applied.
pub fn apply_variant(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let (m, o) = (&mut cfg.model, &mut cfg.optim);
    match name {
        "htlnet" => {}
        "wo_architecture" => m.architecture = Architecture::SharedBottom,
        "wo_optimization" => {
            o.mode = GradientMode::None;
            o.disable_stop_gradient = true;
        }
        "wo_representation" => m.use_representation = false,
        "wo_label_embedding" => m.use_label_embedding = false,
        "wo_stop_gradient" => o.disable_stop_gradient = true,
        "wo_gradient_conflict" => o.disable_projection = true,
        "wo_gradient_magnitude" => o.disable_magnitude = true,
        "gradient_surgery" => o.mode = GradientMode::GradientSurgery,
        "metabalance" => o.mode = GradientMode::Metabalance,
        "concat_fusion" => m.fusion = FusionKind::Concat,
        other => {
            return Err(Error::UnknownVariant {
                name: other.to_string(),
                valid: VARIANTS.join(", "),
            })
        }
    }
    Ok(cfg)
}

/// Whether a larger value of `metric` is better.
pub fn higher_is_better(metric: &str) -> bool {
    matches!(metric, "auc" | "spearman" | "gini")
}

/// Two-sided p-value of Welch's unequal-variance t-test; `None` with fewer
/// than two samples on either side.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Some(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * dist.sf(t.abs()))
}

/// Mean and unbiased sample variance.
fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Test-split report of the best-on-validation checkpoint.
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantRuns {
    pub name: String,
    pub runs: Vec<SeedRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    /// Welch p-value against the baseline (absent for the baseline itself).
    pub p_value: Option<f64>,
    /// Seeds on which the baseline beats this variant.
    pub baseline_wins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantRuns>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantRuns> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Per-seed values of one cell, skipping seeds where it failed.
    pub fn values(&self, variant: &str, task: &str, metric: &str) -> Vec<f64> {
        self.variant(variant)
            .map(|v| v.runs.iter().filter_map(|r| r.report.get(task, metric)).collect())
            .unwrap_or_default()
    }

    /// Seeds on which `BASELINE` strictly beats `variant` on the metric.
    pub fn baseline_wins(&self, variant: &str, task: &str, metric: &str) -> Option<usize> {
        let base = self.variant(BASELINE)?;
        let other = self.variant(variant)?;
        let higher = higher_is_better(metric);
        let wins = base
            .runs
            .iter()
            .filter_map(|b| {
                let o = other.runs.iter().find(|o| o.seed == b.seed)?;
                let (x, y) = (b.report.get(task, metric)?, o.report.get(task, metric)?);
                Some(if higher { x > y } else { x < y })
            })
            .filter(|&w| w)
            .count();
        Some(wins)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for v in &self.variants {
            let Some(first) = v.runs.first() else { continue };
            for t in &first.report.tasks {
                for (metric, _) in &t.values {
                    let values = self.values(&v.name, &t.task, metric);
                    let (mean, var) = mean_var(&values);
                    let is_base = v.name == BASELINE;
                    let p_value = if is_base {
                        None
                    } else {
                        welch_t_test(&self.values(BASELINE, &t.task, metric), &values)
                    };
                    rows.push(SummaryRow {
                        variant: v.name.clone(),
                        task: t.task.clone(),
                        metric: metric.clone(),
                        mean,
                        std: var.sqrt(),
                        p_value,
                        baseline_wins: if is_base { None } else { self.baseline_wins(&v.name, &t.task, metric) },
                    });
                }
            }
        }
        rows
    }

    /// Tab-separated summary: one row per variant, task and metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\ttask\tmetric\tmean\tstd\tp_value\tbaseline_wins\tseeds\n");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in self.summary() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:?}\t{:?}\t{}\t{}\t{}",
                r.variant,
                r.task,
                r.metric,
                r.mean,
                r.std,
                opt(r.p_value.map(|p| format!("{p:?}"))),
                opt(r.baseline_wins.map(|w| w.to_string())),
                self.seeds.len()
            );
        }
        out
    }

    /// Per-seed records: `variant, seed, task, metric, value`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for v in &self.variants {
            for r in &v.runs {
                for line in r.report.to_records().lines() {
                    let _ = writeln!(out, "{}\t{}\t{line}", v.name, r.seed);
                }
            }
        }
        out
    }
}

/// Trains every variant on every seed against the same splits and scores
/// each best-on-validation checkpoint on the test split. With `out`, each
/// run writes its own directory `out/<variant>/seed<k>`.
pub fn ablate(
    base: &RunConfig,
    variants: &[String],
    seeds: &[u64],
    splits: &Splits,
    out: Option<&Path>,
    mut progress: impl FnMut(&str, u64, &EvalReport),
) -> Result<AblationReport> {
    let configs = variants
        .iter()
        .map(|v| apply_variant(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut result = Vec::with_capacity(variants.len());
    for (name, cfg) in variants.iter().zip(configs) {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig { seed, ..cfg.clone() };
            let dir = out.map(|o| o.join(name).join(format!("seed{seed}")));
            let outcome = train(&cfg, splits, dir.as_deref(), None)?;
            let best = outcome.best.model()?;
            let report = evaluate(&best, &splits.test, outcome.best.step)?;
            progress(name, seed, &report);
            runs.push(SeedRun { seed, report });
        }
        result.push(VariantRuns {
            name: name.clone(),
            runs,
        });
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        variants: result,
    })
}
