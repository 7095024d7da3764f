//! Hybrid-target datasets: schema, ingestion, chronological splits and a
//! seeded synthetic conversion-funnel generator.

mod split;
mod synth;
mod table;

pub use split::chronological_split;
pub use synth::{synth_generate, GroundTruth, SyntheticData, SyntheticSpec};
pub use table::{infer_schema, load_table, write_table};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of a hybrid-target table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub features: Vec<String>,
    /// Conversion steps in funnel order.
    pub labels: Vec<String>,
    pub core: String,
    pub timestamp: String,
}

impl Schema {
    /// `f0..f{m-1}`, `y1..yT`, `core`, `ts`.
    pub fn generic(num_fields: usize, num_tasks: usize) -> Self {
        Self {
            features: (0..num_fields).map(|j| format!("f{j}")).collect(),
            labels: (1..=num_tasks).map(|t| format!("y{t}")).collect(),
            core: "core".into(),
            timestamp: "ts".into(),
        }
    }

    /// Video-feed layout: click, then long view, with watch time as the core.
    pub fn kuairand(features: Vec<String>) -> Self {
        Self {
            features,
            labels: vec!["click".into(), "long_view".into()],
            core: "watch_time".into(),
            timestamp: "ts".into(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.labels.len()
    }

    pub fn columns(&self) -> Vec<&str> {
        self.features
            .iter()
            .chain(&self.labels)
            .map(String::as_str)
            .chain([self.core.as_str(), self.timestamp.as_str()])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Per-field categorical indices, each local to its field's vocabulary.
    pub features: Vec<usize>,
    /// Binary outcome of each conversion step, in funnel order.
    pub labels: Vec<u8>,
    pub core: f64,
    pub timestamp: i64,
}

impl Sample {
    /// `y1 ≥ y2 ≥ … ≥ yT`.
    pub fn is_monotone(&self) -> bool {
        self.labels.windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub field_vocab: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.schema.num_tasks()
    }

    pub fn num_fields(&self) -> usize {
        self.schema.features.len()
    }

    /// Checks shapes, vocabularies, label values, the sequential label
    /// constraint and core-value finiteness. Offending rows are reported by
    /// 0-based sample index.
    pub fn validate(&self) -> Result<()> {
        let (m, t) = (self.num_fields(), self.num_tasks());
        if self.field_vocab.len() != m {
            return Err(Error::Dataset(format!(
                "{} vocabulary sizes for {m} feature fields",
                self.field_vocab.len()
            )));
        }
        let mut violations = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != m || s.labels.len() != t {
                return Err(Error::Dataset(format!("sample {i} has the wrong number of columns")));
            }
            if let Some((j, &x)) = s
                .features
                .iter()
                .enumerate()
                .find(|(j, &x)| x >= self.field_vocab[*j])
            {
                return Err(Error::OutOfVocabulary {
                    field: j,
                    index: x,
                    vocab: self.field_vocab[j],
                });
            }
            if s.labels.iter().any(|&y| y > 1) || !(s.core.is_finite() && s.core >= 0.0) {
                return Err(Error::Dataset(format!("sample {i} has an invalid label or core value")));
            }
            if !s.is_monotone() {
                violations.push(i);
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::LabelConstraint { rows: violations })
        }
    }

    pub fn subset(&self, samples: Vec<Sample>) -> Self {
        Self {
            schema: self.schema.clone(),
            field_vocab: self.field_vocab.clone(),
            samples,
        }
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, rows: &[usize]) -> HybridBatch {
        let m = self.num_fields();
        let mut features = Vec::with_capacity(rows.len() * m);
        let mut labels = vec![Vec::with_capacity(rows.len()); self.num_tasks()];
        let mut core = Vec::with_capacity(rows.len());
        for &r in rows {
            let s = &self.samples[r];
            features.extend_from_slice(&s.features);
            for (t, &y) in s.labels.iter().enumerate() {
                labels[t].push(f64::from(y));
            }
            core.push(s.core);
        }
        HybridBatch {
            num_fields: m,
            features,
            labels,
            core,
        }
    }

    /// Consecutive batches of at most `size` rows, in storage order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = HybridBatch> + '_ {
        let size = size.max(1);
        let rows: Vec<usize> = (0..self.len()).collect();
        (0..self.len())
            .step_by(size)
            .map(move |start| self.batch(&rows[start..(start + size).min(rows.len())]))
    }

    /// Empirical positive rate of every step and the mean / population std
    /// of the core value.
    pub fn summary(&self) -> DatasetSummary {
        let n = self.len().max(1) as f64;
        let rates = (0..self.num_tasks())
            .map(|t| self.samples.iter().filter(|s| s.labels[t] == 1).count() as f64 / n)
            .collect();
        let mean = self.samples.iter().map(|s| s.core).sum::<f64>() / n;
        let var = self.samples.iter().map(|s| (s.core - mean).powi(2)).sum::<f64>() / n;
        DatasetSummary {
            samples: self.len(),
            rates,
            core_mean: mean,
            core_std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub rates: Vec<f64>,
    pub core_mean: f64,
    pub core_std: f64,
}

/// Rows ready for the network: flattened per-field feature indices, one
/// label column per step and the core target.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridBatch {
    pub num_fields: usize,
    /// Row-major `[batch, fields]` local feature indices.
    pub features: Vec<usize>,
    /// `labels[t][i]` ∈ {0, 1}.
    pub labels: Vec<Vec<f64>>,
    pub core: Vec<f64>,
}

impl HybridBatch {
    pub fn len(&self) -> usize {
        self.core.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty()
    }
}
