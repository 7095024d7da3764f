//! Test support: toy models and batches plus independent oracles written
//! with plain loops over `Vec<f64>`.

#![allow(dead_code)]

use htlnet::data::HybridBatch;
use htlnet::model::{Architecture, FieldLayout, FusionKind, HtlNet, HtlNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toy_config(num_tasks: usize) -> HtlNetConfig {
    HtlNetConfig {
        num_tasks,
        embedding_dim: 3,
        label_embedding_dim: 2,
        tower_units: vec![5, 4],
        tau0: 2.0,
        ..HtlNetConfig::default()
    }
}

pub fn toy_layout() -> FieldLayout {
    FieldLayout::new(vec![4, 3, 5]).unwrap()
}

pub fn toy_model(cfg: HtlNetConfig, seed: u64) -> HtlNet {
    HtlNet::new(cfg, toy_layout(), &mut rng(seed)).unwrap()
}

/// Random monotone funnel labels and log-normal-ish core values.
pub fn toy_batch(layout: &FieldLayout, num_tasks: usize, n: usize, seed: u64) -> HybridBatch {
    let mut r = rng(seed);
    let mut features = Vec::with_capacity(n * layout.num_fields());
    let mut labels = vec![Vec::with_capacity(n); num_tasks];
    let mut core = Vec::with_capacity(n);
    for _ in 0..n {
        for &v in layout.vocab() {
            features.push(r.random_range(0..v));
        }
        let mut alive = true;
        for l in labels.iter_mut() {
            alive = alive && r.random_bool(0.6);
            l.push(if alive { 1.0 } else { 0.0 });
        }
        core.push(if alive { (r.random::<f64>() * 2.0).exp() } else { 0.0 });
    }
    HybridBatch {
        num_fields: layout.num_fields(),
        features,
        labels,
        core,
    }
}

// ---------------------------------------------------------------------------
// The shared-gradient process, transcribed line by line.

pub fn oracle_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn oracle_norm(a: &[f64]) -> f64 {
    oracle_dot(a, a).sqrt()
}

/// Returns `G_s` and the processed `G_t` of every step.
pub fn algorithm1(g_core: &[f64], g_tasks: &[Vec<f64>], alpha: f64, gamma: f64, clip: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut processed = Vec::new();
    for g in g_tasks {
        let mut g_t = g.clone();
        let d = oracle_dot(&g_t, g_core);
        let core_sq = oracle_dot(g_core, g_core);
        if d < 0.0 && core_sq > 0.0 {
            let c = alpha * d / core_sq;
            for i in 0..g_t.len() {
                g_t[i] -= c * g_core[i];
            }
        }
        let t_norm = oracle_norm(&g_t);
        if t_norm > 0.0 {
            let mut weight = oracle_norm(g_core) / t_norm;
            if weight < 1.0 / clip {
                weight = 1.0 / clip;
            }
            if weight > clip {
                weight = clip;
            }
            for v in g_t.iter_mut() {
                *v = gamma * weight * *v + (1.0 - gamma) * *v;
            }
        }
        processed.push(g_t);
    }
    let mut g_s = g_core.to_vec();
    for g_t in &processed {
        for i in 0..g_s.len() {
            g_s[i] += g_t[i];
        }
    }
    (g_s, processed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// Forward pass with plain loops.

type Matrix = Vec<Vec<f64>>;

fn param(model: &HtlNet, name: &str) -> Matrix {
    let t = model.params().get(name).unwrap();
    let (r, c) = t.dims2();
    (0..r).map(|i| (0..c).map(|j| t.at(i, j)).collect()).collect()
}

fn vec_mat(x: &[f64], w: &Matrix) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w[i][j];
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Returns `(first hidden layer, head output)`.
fn tower(model: &HtlNet, prefix: &str, x: &[f64]) -> (Vec<f64>, f64) {
    let layers = model.config().tower_units.len();
    let mut h = x.to_vec();
    let mut first = None;
    for l in 0..layers {
        let w = param(model, &format!("{prefix}.tower.layer{l}.weight"));
        let b = param(model, &format!("{prefix}.tower.layer{l}.bias"));
        let mut z = vec_mat(&h, &w);
        for (zj, bj) in z.iter_mut().zip(&b[0]) {
            *zj = (*zj + bj).max(0.0);
        }
        h = z;
        first.get_or_insert_with(|| h.clone());
    }
    let w = param(model, &format!("{prefix}.tower.head.weight"));
    let b = param(model, &format!("{prefix}.tower.head.bias"));
    (first.unwrap(), vec_mat(&h, &w)[0] + b[0][0])
}

fn fuse(model: &HtlNet, prefix: &str, inputs: &[Vec<f64>]) -> Vec<f64> {
    if model.config().fusion == FusionKind::Concat {
        return inputs.concat();
    }
    let h1 = param(model, &format!("{prefix}.h1"));
    let h2 = param(model, &format!("{prefix}.h2"));
    let h3 = param(model, &format!("{prefix}.h3"));
    let k = h1[0].len() as f64;
    let scores: Vec<f64> = inputs
        .iter()
        .map(|u| {
            let (a, b) = (vec_mat(u, &h2), vec_mat(u, &h3));
            a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / k.sqrt()
        })
        .collect();
    let w = softmax(&scores);
    let mut out = vec![0.0; h1[0].len()];
    for (u, wi) in inputs.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(vec_mat(u, &h1)) {
            *o += wi * v;
        }
    }
    out
}

/// Per-sample forward pass: `(task probabilities [task][row], core [row])`.
pub fn forward_oracle(model: &HtlNet, features: &[usize], tau: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = model.config();
    let vocab = model.layout().vocab().to_vec();
    let m = vocab.len();
    let table = param(model, "shared.embedding");
    let transfer = cfg.architecture == Architecture::Htlnet;
    let use_rep = transfer && cfg.use_representation;
    let use_le = transfer && cfg.use_label_embedding;
    let n = features.len() / m;
    let mut probs = vec![Vec::new(); cfg.num_tasks];
    let mut core = Vec::new();
    for i in 0..n {
        let mut e = Vec::new();
        let mut offset = 0;
        for j in 0..m {
            e.extend(&table[offset + features[i * m + j]]);
            offset += vocab[j];
        }
        let mut reps: Vec<Vec<f64>> = Vec::new();
        let mut les: Vec<Vec<f64>> = Vec::new();
        let input_for = |prefix: &str, reps: &[Vec<f64>], les: &[Vec<f64>]| {
            let mut x = Vec::new();
            if !reps.is_empty() || !les.is_empty() {
                if use_rep {
                    x.extend(fuse(model, &format!("{prefix}.ifu.rep"), reps));
                }
                if use_le {
                    x.extend(fuse(model, &format!("{prefix}.ifu.label"), les));
                }
            }
            x.extend(&e);
            x
        };
        for t in 1..=cfg.num_tasks {
            let prefix = format!("task{t}");
            let x = input_for(&prefix, &reps, &les);
            let (rep, head) = tower(model, &prefix, &x);
            let y = sigmoid(head).clamp(1e-12, 1.0 - 1e-12);
            probs[t - 1].push(sigmoid(head));
            if use_rep {
                reps.push(rep);
            }
            if use_le {
                let p = softmax(&[(1.0 - y).ln() / tau, y.ln() / tau]);
                let lt = param(model, &format!("{prefix}.leu.table"));
                les.push((0..lt[0].len()).map(|c| p[0] * lt[0][c] + p[1] * lt[1][c]).collect());
            }
        }
        let x = input_for("core", &reps, &les);
        core.push(tower(model, "core", &x).1);
    }
    (probs, core)
}

// ---------------------------------------------------------------------------
// Finite-difference checks.

use htlnet::model::{
    embed_features, ifu_fuse, leu_forward, loss_bce, loss_mse, ForwardOptions, FusionKernels,
    ParamVars,
};
use htlnet::tensor::gradcheck::{numerical_partial, relative_error};
use htlnet::tensor::{Tape, Tensor, Var};
use htlnet::Result;

pub const FD_EPS: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values whose magnitude is at least `gap`, away from kinks at 0.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = r.random_range(gap..1.5);
            if r.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Largest relative error between the tape's gradient and central
/// differences of `Σ w ⊙ op(inputs)` with fixed random weights `w`.
pub fn check_op<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let r = rng(99);
    let weighted = |tape: &mut Tape, out: Var, r: &mut ChaCha8Rng| -> Result<Var> {
        let shape = tape.value(out).shape().to_vec();
        let w = tape.constant(random_tensor(r, &shape, -1.0, 1.0));
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let loss = weighted(&mut tape, out, &mut r.clone()).unwrap();
    let mut grads = tape.backward(loss).unwrap();

    let f = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let loss = weighted(&mut tape, out, &mut r.clone())?;
        Ok(tape.value(loss).item())
    };
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.take(v).unwrap();
        for i in 0..inputs[k].len() {
            let numeric = numerical_partial(&f, &mut work, k, i, FD_EPS).unwrap();
            worst = worst.max(relative_error(analytic.data()[i], numeric, FD_FLOOR));
        }
    }
    worst
}

/// Finite-difference check of every tape primitive and model unit.
pub fn primitive_checks() -> Vec<(&'static str, f64)> {
    let mut r = rng(7);
    let mut out = Vec::new();
    let a23 = random_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let b34 = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let c23 = random_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let row13 = random_tensor(&mut r, &[1, 3], -1.0, 1.0);
    let col21 = random_tensor(&mut r, &[2, 1], -1.0, 1.0);
    let pos = random_tensor(&mut r, &[2, 3], 0.2, 2.0);
    let kinked = away_from_zero(&mut r, &[2, 3], 0.01);

    out.push(("matmul", check_op(&[a23.clone(), b34.clone()], |t, v| t.matmul(v[0], v[1]))));
    out.push(("add", check_op(&[a23.clone(), c23.clone()], |t, v| t.add(v[0], v[1]))));
    out.push(("add_broadcast_row", check_op(&[a23.clone(), row13.clone()], |t, v| t.add(v[0], v[1]))));
    out.push(("sub", check_op(&[a23.clone(), col21.clone()], |t, v| t.sub(v[0], v[1]))));
    out.push(("mul", check_op(&[a23.clone(), c23.clone()], |t, v| t.mul(v[0], v[1]))));
    out.push(("mul_broadcast_col", check_op(&[a23.clone(), col21.clone()], |t, v| t.mul(v[0], v[1]))));
    out.push(("scale", check_op(&[a23.clone()], |t, v| Ok(t.scale(v[0], -2.5)))));
    out.push(("add_scalar", check_op(&[a23.clone()], |t, v| Ok(t.add_scalar(v[0], 0.7)))));
    out.push(("one_minus", check_op(&[a23.clone()], |t, v| Ok(t.one_minus(v[0])))));
    out.push(("concat", check_op(&[a23.clone(), col21.clone()], |t, v| t.concat(&[v[0], v[1]]))));
    out.push(("slice_cols", check_op(&[a23.clone()], |t, v| t.slice_cols(v[0], 1, 2))));
    out.push(("sigmoid", check_op(&[a23.clone()], |t, v| Ok(t.sigmoid(v[0])))));
    out.push(("relu", check_op(&[kinked.clone()], |t, v| Ok(t.relu(v[0])))));
    out.push(("log", check_op(&[pos.clone()], |t, v| t.log(v[0]))));
    out.push(("clamp", check_op(&[kinked.clone()], |t, v| Ok(t.clamp(v[0], -5.0, 5.0)))));
    out.push(("softmax_tau", check_op(&[a23.clone()], |t, v| t.softmax(v[0], 0.7))));
    out.push(("sum", check_op(&[a23.clone()], |t, v| Ok(t.sum(v[0])))));
    out.push(("sum_last_axis", check_op(&[a23.clone()], |t, v| Ok(t.sum_last_axis(v[0])))));
    out.push(("mean", check_op(&[a23.clone()], |t, v| t.mean(v[0]))));
    out.push(("square", check_op(&[a23.clone()], |t, v| Ok(t.square(v[0])))));
    let table = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
    out.push(("gather_rows", check_op(&[table.clone()], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2], 2))));

    let layout = FieldLayout::new(vec![2, 3]).unwrap();
    out.push(("embed_features", check_op(&[table.clone()], |t, v| embed_features(t, v[0], &[1, 2, 0, 0], &layout))));
    let prob = random_tensor(&mut r, &[3, 1], 0.05, 0.95);
    let label_table = random_tensor(&mut r, &[2, 4], -1.0, 1.0);
    out.push(("leu_forward", check_op(&[prob.clone(), label_table], |t, v| Ok(leu_forward(t, v[0], 0.8, v[1], None)?.embedding))));
    let (u1, u2) = (random_tensor(&mut r, &[2, 3], -1.0, 1.0), random_tensor(&mut r, &[2, 3], -1.0, 1.0));
    let ks: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[3, 3], -1.0, 1.0)).collect();
    out.push((
        "ifu_fuse",
        check_op(&[u1, u2, ks[0].clone(), ks[1].clone(), ks[2].clone()], |t, v| {
            let kernels = FusionKernels { value: v[2], key: v[3], query: v[4] };
            Ok(ifu_fuse(t, &[v[0], v[1]], kernels)?.fused)
        }),
    ));
    out.push(("loss_bce", check_op(&[prob.clone()], |t, v| loss_bce(t, v[0], &[1.0, 0.0, 1.0]))));
    out.push(("loss_mse", check_op(&[col21.clone()], |t, v| loss_mse(t, v[0], &[0.5, 3.0]))));
    out
}

/// Parameters with biases moved off zero: a fresh model's zero biases put
/// rows with all-dead inputs exactly on a ReLU kink, where central
/// differences measure half the slope.
pub fn jittered_params(model: &HtlNet, names: &[String]) -> Vec<Tensor> {
    let mut r = rng(1234);
    names
        .iter()
        .map(|n| {
            let mut t = model.params().get(n).unwrap().clone();
            if n.ends_with("bias") {
                t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
            }
            t
        })
        .collect()
}

/// Per-entry relative errors of the joint HTLNet loss (all step BCEs plus
/// the core MSE, transfer paths uncut) against central differences, for
/// `count` random parameter entries or every entry when `count` is `None`.
pub fn joint_loss_errors(cfg: HtlNetConfig, seed: u64, count: Option<usize>) -> Vec<(String, f64)> {
    let model = toy_model(cfg, seed);
    let batch = toy_batch(model.layout(), model.num_tasks(), 6, seed + 1);
    let names: Vec<String> = model.params().names().cloned().collect();
    let tensors = jittered_params(&model, &names);

    let build = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let pv: ParamVars = names.iter().cloned().zip(vars.iter().copied()).collect();
        let opts = ForwardOptions { tau: 0.9, cut_transfer: false, noise: None };
        let trace = model.forward(tape, &pv, &batch.features, opts)?;
        let mut total = loss_mse(tape, trace.core, &batch.core)?;
        for (p, y) in trace.task_probs.iter().zip(&batch.labels) {
            let l = loss_bce(tape, *p, y)?;
            total = tape.add(total, l)?;
        }
        Ok(total)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.take(v).unwrap()).collect();

    let f = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let entries: Vec<(usize, usize)> = match count {
        None => (0..tensors.len()).flat_map(|k| (0..tensors[k].len()).map(move |i| (k, i))).collect(),
        Some(count) => {
            let mut r = rng(seed + 2);
            let total: usize = tensors.iter().map(Tensor::len).sum();
            (0..count)
                .map(|_| {
                    let mut flat = r.random_range(0..total);
                    let mut k = 0;
                    while flat >= tensors[k].len() {
                        flat -= tensors[k].len();
                        k += 1;
                    }
                    (k, flat)
                })
                .collect()
        }
    };
    let mut work = tensors.clone();
    entries
        .into_iter()
        .map(|(k, i)| {
            let numeric = numerical_partial(&f, &mut work, k, i, FD_EPS).unwrap();
            let err = relative_error(analytic[k].data()[i], numeric, FD_FLOOR);
            (format!("{}[{i}]", names[k]), err)
        })
        .collect()
}

/// Worst relative error over `count` random parameters of a T = 2 model.
pub fn full_loss_check(count: usize, seed: u64) -> f64 {
    joint_loss_errors(toy_config(2), seed, Some(count))
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Transfer isolation and label-embedding relaxation probes.

/// Largest |gradient| reaching task 1's tower from the core loss and from
/// the step-2 loss on a T = 2 model.
pub fn task1_tower_leakage(cut_transfer: bool) -> (f64, f64) {
    let model = toy_model(toy_config(2), 11);
    let batch = toy_batch(model.layout(), 2, 8, 12);
    let mut tape = Tape::new();
    let vars = model.params().register(&mut tape, true);
    let opts = ForwardOptions { tau: 1.5, cut_transfer, noise: None };
    let trace = model.forward(&mut tape, &vars, &batch.features, opts).unwrap();
    let core_loss = loss_mse(&mut tape, trace.core, &batch.core).unwrap();
    let step2_loss = loss_bce(&mut tape, trace.task_probs[1], &batch.labels[1]).unwrap();
    let mut leak = |loss: Var| {
        let grads = tape.backward(loss).unwrap();
        vars.iter()
            .filter(|(name, _)| name.starts_with("task1.tower."))
            .flat_map(|(_, &v)| grads.get(v).unwrap().data().to_vec())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    };
    (leak(core_loss), leak(step2_loss))
}

/// Relaxed label-1 probability `p` from the label embedding unit.
pub fn leu_p(y_hat: f64, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let prob = tape.constant(Tensor::column(&[y_hat]));
    let table = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
    let out = leu_forward(&mut tape, prob, tau, table, None).unwrap();
    tape.value(out.probs).at(0, 1)
}

/// Gradients reaching the two label-table rows for a batch of predictions.
pub fn leu_row_gradients(y_hat: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let prob = tape.constant(Tensor::column(y_hat));
    let table = tape.param(Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.5, 0.4, -0.6]).unwrap());
    let out = leu_forward(&mut tape, prob, tau, table, None).unwrap();
    let w = tape.constant(Tensor::full(vec![y_hat.len(), 3], 1.0));
    let prod = tape.mul(out.embedding, w).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    let g = g.get(table).unwrap();
    (g.row(0).to_vec(), g.row(1).to_vec())
}

// ---------------------------------------------------------------------------
// Shared-gradient process checks over random gradient sets.

use htlnet::optim::{
    balance_magnitude, project_conflict, shared_gradient_process, GradientMode, GradientSet, OptimConfig,
};

/// Random gradient vector with a per-vector magnitude of `10^U(-spread, spread)`;
/// about one in twenty is exactly zero.
fn random_gradient(r: &mut ChaCha8Rng, dim: usize, spread: f64) -> Vec<f64> {
    if r.random_bool(0.05) {
        return vec![0.0; dim];
    }
    let scale = 10f64.powf(r.random_range(-spread..=spread));
    (0..dim).map(|_| scale * (r.random::<f64>() * 2.0 - 1.0)).collect()
}

/// Gradient set with dimension in 2..=64 and one to three conversion steps.
pub fn random_gradient_set(r: &mut ChaCha8Rng, spread: f64) -> GradientSet {
    let dim = r.random_range(2..=64);
    let t = r.random_range(1..=3);
    let core = random_gradient(r, dim, spread);
    let tasks = (0..t).map(|_| random_gradient(r, dim, spread)).collect();
    GradientSet::new(core, tasks).unwrap()
}

pub fn htlnet_optim(alpha: f64, gamma: f64, clip: f64) -> OptimConfig {
    OptimConfig {
        mode: GradientMode::Htlnet,
        alpha,
        gamma,
        clip,
        ..OptimConfig::default()
    }
}

fn random_hyper(r: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let alpha = r.random::<f64>();
    let gamma = r.random::<f64>();
    let clip = 10f64.powf(r.random_range(0.0..3.0));
    (alpha, gamma, clip)
}

fn worst_relative(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Largest relative disagreement between the library process and the
/// line-by-line transcription, over `cases` random sets and hyperparameters.
pub fn algorithm1_max_error(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let gs = random_gradient_set(&mut r, 3.0);
        let (alpha, gamma, clip) = random_hyper(&mut r);
        let out = shared_gradient_process(&gs, &htlnet_optim(alpha, gamma, clip)).unwrap();
        let (g_s, processed) = algorithm1(&gs.core, &gs.tasks, alpha, gamma, clip);
        worst = worst.max(worst_relative(&out.shared, &g_s));
        for (a, b) in out.processed.iter().zip(&processed) {
            worst = worst.max(worst_relative(a, b));
        }
    }
    worst
}

/// Smallest `G_t' · G_core` after full processing with `α = 1`.
pub fn full_projection_min_dot(cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..cases {
        let gs = random_gradient_set(&mut r, 1.0);
        let (_, gamma, clip) = random_hyper(&mut r);
        let out = shared_gradient_process(&gs, &htlnet_optim(1.0, gamma, clip)).unwrap();
        for g in &out.processed {
            worst = worst.min(oracle_dot(g, &gs.core));
        }
    }
    worst
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    oracle_dot(a, b) / (oracle_norm(a) * oracle_norm(b))
}

/// With `α = 0.5`, counts conflicting pairs `(checked, failures)` where the
/// projection fails to shrink `|G_t · G_core|` or the fully processed
/// gradient fails to raise its cosine with the core gradient.
pub fn half_projection_failures(cases: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let (mut checked, mut failures) = (0, 0);
    for _ in 0..cases {
        let gs = random_gradient_set(&mut r, 1.0);
        let (_, gamma, clip) = random_hyper(&mut r);
        let out = shared_gradient_process(&gs, &htlnet_optim(0.5, gamma, clip)).unwrap();
        for (g, processed) in gs.tasks.iter().zip(&out.processed) {
            let d = oracle_dot(g, &gs.core);
            if !(d < 0.0) || oracle_norm(&gs.core) == 0.0 {
                continue;
            }
            checked += 1;
            let projected = project_conflict(g, &gs.core, 0.5);
            let shrinks = oracle_dot(&projected, &gs.core).abs() < d.abs();
            let aligns = cosine(processed, &gs.core) > cosine(g, &gs.core);
            if !(shrinks && aligns) {
                failures += 1;
            }
        }
    }
    (checked, failures)
}

/// Counts balancing scales outside `[1 − γ + γ/C, 1 − γ + γC]`.
pub fn scale_bound_violations(cases: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let (mut checked, mut violations) = (0, 0);
    for _ in 0..cases {
        let gs = random_gradient_set(&mut r, 4.0);
        let (_, gamma, clip) = random_hyper(&mut r);
        let (lo, hi) = (1.0 - gamma + gamma / clip, 1.0 - gamma + gamma * clip);
        for g in &gs.tasks {
            if oracle_norm(g) == 0.0 {
                continue;
            }
            checked += 1;
            let (_, scale) = balance_magnitude(g, &gs.core, gamma, clip);
            if scale < lo * (1.0 - 1e-12) || scale > hi * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    (checked, violations)
}

// ---------------------------------------------------------------------------
// Funnel label constraint.

use htlnet::data::{load_table, synth_generate, write_table, Schema, SyntheticSpec};
use htlnet::Error;

/// Generates `n` rows of the default funnel and counts non-monotone rows.
pub fn generated_violations(n: usize, seed: u64) -> usize {
    let spec = SyntheticSpec {
        n_samples: n,
        seed,
        ..SyntheticSpec::default()
    };
    let data = synth_generate(&spec).unwrap();
    data.dataset.samples.iter().filter(|s| !s.is_monotone()).count()
}

/// Writes a small generated table, flips row `row` (0-based) to
/// `y1 = 0, y2 = 1`, and returns the file lines the loader reports.
pub fn injected_violation_lines(row: usize) -> Option<Vec<usize>> {
    let spec = SyntheticSpec {
        n_samples: 200,
        seed: 4,
        ..SyntheticSpec::default()
    };
    let mut data = synth_generate(&spec).unwrap().dataset;
    data.samples[row].labels = vec![0, 1];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    write_table(&path, &data).unwrap();
    match load_table(&path, &Schema::generic(data.num_fields(), 2), None) {
        Err(Error::LabelConstraint { rows }) => Some(rows),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Metric oracles.

use htlnet::metrics::{auc, gini, nrmse, spearman};

/// O(n²) pair counting, ties count one half.
pub fn auc_pairs(labels: &[f64], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1.0 && labels[j] == 0.0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Trapezoid-rule Lorenz area above the diagonal, ranked by `key`
/// descending, normalised by the same area ranked by the truth.
pub fn gini_trapezoid(y: &[f64], p: &[f64]) -> f64 {
    let lorenz_gap = |key: &[f64]| {
        let mut idx: Vec<usize> = (0..y.len()).collect();
        idx.sort_by(|&a, &b| key[b].partial_cmp(&key[a]).unwrap());
        let total: f64 = y.iter().sum();
        let n = y.len() as f64;
        let (mut prev, mut cum, mut area) = (0.0, 0.0, 0.0);
        for &i in &idx {
            cum += y[i] / total;
            area += (prev + cum) / (2.0 * n);
            prev = cum;
        }
        area - 0.5
    };
    lorenz_gap(p) / lorenz_gap(y)
}

/// `1 − 6Σd² / (n(n² − 1))` for two tie-free rankings given as permutations
/// of `0..n`.
pub fn spearman_closed_form(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Worst disagreement of AUC, Spearman and Gini with their oracles on
/// `cases` random instances of size 2..=200, plus the mean predictor's
/// NRMSE minus one.
pub fn metric_oracle_errors(cases: usize, seed: u64) -> [f64; 4] {
    use rand::seq::SliceRandom;
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..cases {
        let n = r.random_range(2..=200);
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(r.random_bool(0.3)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0u8..25)) / 25.0).collect();
        worst[0] = worst[0].max((auc(&labels, &scores).unwrap() - auc_pairs(&labels, &scores)).abs());

        let a: Vec<usize> = (0..n).collect();
        let mut b = a.clone();
        b.shuffle(&mut r);
        let (fa, fb): (Vec<f64>, Vec<f64>) = (a.iter().map(|&v| v as f64).collect(), b.iter().map(|&v| v as f64).collect());
        worst[1] = worst[1].max((spearman(&fa, &fb).unwrap() - spearman_closed_form(&a, &b)).abs());

        let y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.4) { 0.0 } else { r.random::<f64>() * 50.0 }).collect();
        let p: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        if y.iter().filter(|&&v| v > 0.0).count() >= 2 {
            worst[2] = worst[2].max((gini(&y, &p).unwrap() - gini_trapezoid(&y, &p)).abs());
        }
        if y.iter().any(|&v| v != y[0]) {
            let mean = y.iter().sum::<f64>() / n as f64;
            worst[3] = worst[3].max((nrmse(&y, &vec![mean; n]).unwrap() - 1.0).abs());
        }
    }
    worst
}
