//! Building blocks of the forward pass: feature embedding, the label
//! embedding unit, the attention fusion unit, towers and losses.

use rand::RngCore;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-12;

/// Per-field vocabulary sizes and their offsets into the shared table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldLayout {
    vocab: Vec<usize>,
    offsets: Vec<usize>,
}

impl FieldLayout {
    pub fn new(vocab: Vec<usize>) -> Result<Self> {
        if vocab.is_empty() || vocab.contains(&0) {
            return Err(Error::config(
                "feature layout needs at least one field and every vocabulary must be non-empty",
            ));
        }
        let offsets = vocab
            .iter()
            .scan(0, |acc, &v| {
                let start = *acc;
                *acc += v;
                Some(start)
            })
            .collect();
        Ok(Self { vocab, offsets })
    }

    pub fn num_fields(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[usize] {
        &self.vocab
    }

    /// Total rows `M` of the shared embedding table.
    pub fn total(&self) -> usize {
        self.vocab.iter().sum()
    }
}

/// Looks up each sample's per-field indices in the shared table and lays the
/// rows side by side: `[batch, fields · d]`.
pub fn embed_features(
    tape: &mut Tape,
    table: Var,
    features: &[usize],
    layout: &FieldLayout,
) -> Result<Var> {
    let m = layout.num_fields();
    if features.is_empty() || features.len() % m != 0 {
        return Err(Error::InvalidShape {
            op: "embed_features",
            msg: format!("{} indices do not split into rows of {m} fields", features.len()),
        });
    }
    let mut global = Vec::with_capacity(features.len());
    for (pos, &idx) in features.iter().enumerate() {
        let field = pos % m;
        if idx >= layout.vocab[field] {
            return Err(Error::OutOfVocabulary {
                field,
                index: idx,
                vocab: layout.vocab[field],
            });
        }
        global.push(layout.offsets[field] + idx);
    }
    tape.gather_rows(table, &global, m)
}

pub struct LeuOutput {
    /// `[batch, 2]` relaxed label distribution, columns `(label 0, label 1)`.
    pub probs: Var,
    /// `[batch, L_d]` mixed label embedding.
    pub embedding: Var,
}

/// Label embedding unit. `prob` is the `[batch, 1]` predicted probability of
/// label 1 (already cut from the graph when transfer is isolated); `table`
/// is the `[2, L_d]` label table with row 0 for label 0.
///
/// The temperature softmax runs over `[log(1 − ŷ), log ŷ]`, optionally with
/// Gumbel(0, 1) noise added to each logit, and the result mixes the two rows.
pub fn leu_forward(
    tape: &mut Tape,
    prob: Var,
    tau: f64,
    table: Var,
    noise: Option<&mut dyn RngCore>,
) -> Result<LeuOutput> {
    if !(tau > 0.0) {
        return Err(Error::Domain {
            op: "leu_forward",
            msg: format!("temperature must be positive, got {tau}"),
        });
    }
    let clamped = tape.clamp(prob, PROB_EPS, 1.0 - PROB_EPS);
    let log_pos = tape.log(clamped)?;
    let neg = tape.one_minus(clamped);
    let log_neg = tape.log(neg)?;
    let mut logits = tape.concat(&[log_neg, log_pos])?;
    if let Some(rng) = noise {
        let rows = tape.value(logits).dims2().0;
        let gumbel = Gumbel::new(0.0, 1.0).expect("standard gumbel");
        let draws = (0..rows * 2).map(|_| gumbel.sample(rng)).collect();
        let noise = tape.constant(Tensor::new(vec![rows, 2], draws)?);
        logits = tape.add(logits, noise)?;
    }
    let probs = tape.softmax(logits, tau)?;
    let embedding = tape.matmul(probs, table)?;
    Ok(LeuOutput { probs, embedding })
}

/// Kernels of one fusion unit; each is a `[dim, dim]` linear map.
#[derive(Clone, Copy, Debug)]
pub struct FusionKernels {
    pub value: Var,
    pub key: Var,
    pub query: Var,
}

pub struct FusionOutput {
    pub fused: Var,
    /// `[batch, inputs]` attention weights.
    pub weights: Var,
}

/// Attention fusion over a list of same-width inputs. Each input scores
/// itself as `⟨h2(u), h3(u)⟩ / √k`; the output is the softmax-weighted sum of
/// `h1(u)`.
pub fn ifu_fuse(tape: &mut Tape, inputs: &[Var], kernels: FusionKernels) -> Result<FusionOutput> {
    if inputs.is_empty() {
        return Err(Error::InvalidShape {
            op: "ifu_fuse",
            msg: "no inputs to fuse".into(),
        });
    }
    let k = tape.value(kernels.value).dims2().1;
    let scale = 1.0 / (k as f64).sqrt();
    let mut values = Vec::with_capacity(inputs.len());
    let mut scores = Vec::with_capacity(inputs.len());
    for &u in inputs {
        values.push(tape.matmul(u, kernels.value)?);
        let key = tape.matmul(u, kernels.key)?;
        let query = tape.matmul(u, kernels.query)?;
        let prod = tape.mul(key, query)?;
        let dot = tape.sum_last_axis(prod);
        scores.push(tape.scale(dot, scale));
    }
    let scores = tape.concat(&scores)?;
    let weights = tape.softmax(scores, 1.0)?;
    let mut fused = None;
    for (j, &v) in values.iter().enumerate() {
        let w = tape.slice_cols(weights, j, 1)?;
        let term = tape.mul(v, w)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(FusionOutput {
        fused: fused.expect("non-empty inputs"),
        weights,
    })
}

/// Tape handles for one tower's layers.
#[derive(Clone, Debug)]
pub struct TowerVars {
    /// `(weight, bias)` per hidden layer.
    pub hidden: Vec<(Var, Var)>,
    pub head: (Var, Var),
}

pub struct TowerOutput {
    /// First hidden layer activation, the representation handed downstream.
    pub representation: Var,
    /// `[batch, 1]` pre-activation output of the head.
    pub head: Var,
}

/// ReLU MLP followed by a scalar linear head.
pub fn tower_forward(tape: &mut Tape, input: Var, vars: &TowerVars) -> Result<TowerOutput> {
    let mut h = input;
    let mut representation = None;
    for &(w, b) in &vars.hidden {
        let z = tape.matmul(h, w)?;
        let z = tape.add(z, b)?;
        h = tape.relu(z);
        representation.get_or_insert(h);
    }
    let z = tape.matmul(h, vars.head.0)?;
    let head = tape.add(z, vars.head.1)?;
    Ok(TowerOutput {
        representation: representation.unwrap_or(input),
        head,
    })
}

/// Mean binary cross-entropy of `[batch, 1]` probabilities.
pub fn loss_bce(tape: &mut Tape, prob: Var, labels: &[f64]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::InvalidShape {
            op: "loss_bce",
            msg: "empty batch".into(),
        });
    }
    let p = tape.clamp(prob, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = tape.log(p)?;
    let q = tape.one_minus(p);
    let log_q = tape.log(q)?;
    let y = tape.constant(Tensor::column(labels));
    let not_y = tape.one_minus(y);
    let pos = tape.mul(y, log_p)?;
    let neg = tape.mul(not_y, log_q)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both)?;
    Ok(tape.scale(mean, -1.0))
}

/// Mean squared error of a `[batch, 1]` prediction.
pub fn loss_mse(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::InvalidShape {
            op: "loss_mse",
            msg: "empty batch".into(),
        });
    }
    let y = tape.constant(Tensor::column(targets));
    let diff = tape.sub(pred, y)?;
    let sq = tape.square(diff);
    tape.mean(sq)
}
