use rand::{Rng, RngCore};

use super::config::{temperature_schedule, FusionKind, HtlNetConfig};
use super::params::{xavier_uniform, ParamStore, ParamVars, TaskId, SHARED_EMBEDDING};
use super::units::{
    embed_features, ifu_fuse, leu_forward, tower_forward, FieldLayout, FusionKernels, TowerVars,
};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: [usize; 2],
    kind: ParamKind,
}

/// Per-call forward settings.
pub struct ForwardOptions<'a> {
    pub tau: f64,
    /// Detach predictions and representations before they feed downstream
    /// towers, so transfer paths carry no gradient upstream.
    pub cut_transfer: bool,
    /// Gumbel noise source for the label embedding unit; `None` runs the
    /// deterministic relaxation.
    pub noise: Option<&'a mut dyn RngCore>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardTrace {
    pub embedding: Var,
    /// `[batch, 1]` probabilities for steps `1..=T`.
    pub task_probs: Vec<Var>,
    /// `[batch, 1]` core prediction.
    pub core: Var,
    /// First-hidden-layer representations as handed downstream (after any cut).
    pub representations: Vec<Var>,
    /// Label-embedding-unit outputs per step, when enabled.
    pub label_embeddings: Vec<Var>,
    /// Attention weights `(receiver, "label" | "rep", [batch, k])`.
    pub fusion_weights: Vec<(TaskId, &'static str, Var)>,
}

/// Plain-value predictions for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `task_probs[t][i]`: probability of step `t + 1` for sample `i`.
    pub task_probs: Vec<Vec<f64>>,
    pub core: Vec<f64>,
}

/// The hybrid-target network: shared embedding, one tower per conversion
/// step, the core regression tower, and the label/representation transfer
/// paths between them.
#[derive(Clone, Debug, PartialEq)]
pub struct HtlNet {
    cfg: HtlNetConfig,
    layout: FieldLayout,
    params: ParamStore,
}

impl HtlNet {
    /// Xavier-uniform weights, zero biases.
    pub fn new(cfg: HtlNetConfig, layout: FieldLayout, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        for spec in param_specs(&cfg, &layout) {
            let [rows, cols] = spec.shape;
            let t = match spec.kind {
                ParamKind::Weight => xavier_uniform(rows, cols, rng),
                ParamKind::Bias => Tensor::zeros(vec![rows, cols]),
            };
            params.insert(spec.name, t);
        }
        Ok(Self {
            cfg,
            layout,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking the names and
    /// shapes against what `cfg` and `layout` require.
    pub fn from_parts(cfg: HtlNetConfig, layout: FieldLayout, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg, &layout);
        if specs.len() != params.len() {
            return Err(Error::config(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let t = params.get(&spec.name)?;
            if t.shape() != spec.shape {
                return Err(Error::config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self {
            cfg,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &HtlNetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &FieldLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_tasks(&self) -> usize {
        self.cfg.num_tasks
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        features: &[usize],
        mut opts: ForwardOptions<'_>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.cfg;
        let table = vars.get(SHARED_EMBEDDING)?;
        let embedding = embed_features(tape, table, features, &self.layout)?;

        let mut trace = ForwardTrace {
            embedding,
            task_probs: Vec::with_capacity(cfg.num_tasks),
            core: embedding,
            representations: Vec::new(),
            label_embeddings: Vec::new(),
            fusion_weights: Vec::new(),
        };

        for t in 1..=cfg.num_tasks {
            let id = TaskId::Step(t);
            let input = self.tower_input(tape, vars, id, &mut trace)?;
            let out = tower_forward(tape, input, &tower_vars(vars, id, cfg)?)?;
            let prob = tape.sigmoid(out.head);
            if cfg.uses_representation() {
                let rep = if opts.cut_transfer {
                    tape.stop_gradient(out.representation)
                } else {
                    out.representation
                };
                trace.representations.push(rep);
            }
            if cfg.uses_label_embedding() {
                let src = if opts.cut_transfer {
                    tape.stop_gradient(prob)
                } else {
                    prob
                };
                let table = vars.get(&format!("{id}.leu.table"))?;
                let noise: Option<&mut dyn RngCore> = match opts.noise {
                    Some(ref mut rng) => Some(&mut **rng),
                    None => None,
                };
                let leu = leu_forward(tape, src, opts.tau, table, noise)?;
                trace.label_embeddings.push(leu.embedding);
            }
            trace.task_probs.push(prob);
        }

        let input = self.tower_input(tape, vars, TaskId::Core, &mut trace)?;
        trace.core = tower_forward(tape, input, &tower_vars(vars, TaskId::Core, cfg)?)?.head;
        Ok(trace)
    }

    /// `concat(rep_f, le_f, e)` for a receiving tower; the bare shared
    /// embedding when it has no upstream tasks or transfer is disabled.
    fn tower_input(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        id: TaskId,
        trace: &mut ForwardTrace,
    ) -> Result<Var> {
        let k = id.preceding(self.cfg.num_tasks);
        if k == 0 || !self.cfg.has_transfer() {
            return Ok(trace.embedding);
        }
        let mut parts = Vec::with_capacity(3);
        if self.cfg.uses_representation() {
            let inputs = trace.representations[..k].to_vec();
            parts.push(self.fuse(tape, vars, id, "rep", &inputs, trace)?);
        }
        if self.cfg.uses_label_embedding() {
            let inputs = trace.label_embeddings[..k].to_vec();
            parts.push(self.fuse(tape, vars, id, "label", &inputs, trace)?);
        }
        parts.push(trace.embedding);
        tape.concat(&parts)
    }

    fn fuse(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        id: TaskId,
        kind: &'static str,
        inputs: &[Var],
        trace: &mut ForwardTrace,
    ) -> Result<Var> {
        match self.cfg.fusion {
            FusionKind::Concat => tape.concat(inputs),
            FusionKind::Attention => {
                let prefix = format!("{id}.ifu.{kind}");
                let kernels = FusionKernels {
                    value: vars.get(&format!("{prefix}.h1"))?,
                    key: vars.get(&format!("{prefix}.h2"))?,
                    query: vars.get(&format!("{prefix}.h3"))?,
                };
                let out = ifu_fuse(tape, inputs, kernels)?;
                trace.fusion_weights.push((id, kind, out.weights));
                Ok(out.fused)
            }
        }
    }

    /// Noise-free inference at the temperature scheduled for `step`.
    pub fn predict(&self, features: &[usize], step: u64) -> Result<Predictions> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let opts = ForwardOptions {
            tau: temperature_schedule(step, &self.cfg),
            cut_transfer: true,
            noise: None,
        };
        let trace = self.forward(&mut tape, &vars, features, opts)?;
        Ok(Predictions {
            task_probs: trace
                .task_probs
                .iter()
                .map(|&p| tape.value(p).data().to_vec())
                .collect(),
            core: tape.value(trace.core).data().to_vec(),
        })
    }
}

fn tower_vars(vars: &ParamVars, id: TaskId, cfg: &HtlNetConfig) -> Result<TowerVars> {
    let hidden = (0..cfg.tower_units.len())
        .map(|l| {
            Ok((
                vars.get(&format!("{id}.tower.layer{l}.weight"))?,
                vars.get(&format!("{id}.tower.layer{l}.bias"))?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(TowerVars {
        hidden,
        head: (
            vars.get(&format!("{id}.tower.head.weight"))?,
            vars.get(&format!("{id}.tower.head.bias"))?,
        ),
    })
}

/// Width of the tower input for `id`.
fn input_dim(cfg: &HtlNetConfig, layout: &FieldLayout, id: TaskId) -> usize {
    let base = layout.num_fields() * cfg.embedding_dim;
    let k = id.preceding(cfg.num_tasks);
    if k == 0 || !cfg.has_transfer() {
        return base;
    }
    let width = |dim: usize| match cfg.fusion {
        FusionKind::Attention => dim,
        FusionKind::Concat => k * dim,
    };
    let mut total = base;
    if cfg.uses_representation() {
        total += width(cfg.representation_dim());
    }
    if cfg.uses_label_embedding() {
        total += width(cfg.label_embedding_dim);
    }
    total
}

/// Every parameter the configuration needs, in initialisation order.
fn param_specs(cfg: &HtlNetConfig, layout: &FieldLayout) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: [usize; 2], kind| specs.push(ParamSpec { name, shape, kind });
    push(
        SHARED_EMBEDDING.to_string(),
        [layout.total(), cfg.embedding_dim],
        ParamKind::Weight,
    );
    let ids = (1..=cfg.num_tasks).map(TaskId::Step).chain([TaskId::Core]);
    for id in ids {
        let mut fan_in = input_dim(cfg, layout, id);
        for (l, &units) in cfg.tower_units.iter().enumerate() {
            push(format!("{id}.tower.layer{l}.weight"), [fan_in, units], ParamKind::Weight);
            push(format!("{id}.tower.layer{l}.bias"), [1, units], ParamKind::Bias);
            fan_in = units;
        }
        push(format!("{id}.tower.head.weight"), [fan_in, 1], ParamKind::Weight);
        push(format!("{id}.tower.head.bias"), [1, 1], ParamKind::Bias);

        if let TaskId::Step(_) = id {
            if cfg.uses_label_embedding() {
                push(format!("{id}.leu.table"), [2, cfg.label_embedding_dim], ParamKind::Weight);
            }
        }
        if id.preceding(cfg.num_tasks) > 0 && cfg.fusion == FusionKind::Attention {
            let kinds = [
                ("rep", cfg.uses_representation(), cfg.representation_dim()),
                ("label", cfg.uses_label_embedding(), cfg.label_embedding_dim),
            ];
            for (kind, enabled, dim) in kinds {
                if enabled {
                    for h in ["h1", "h2", "h3"] {
                        push(format!("{id}.ifu.{kind}.{h}"), [dim, dim], ParamKind::Weight);
                    }
                }
            }
        }
    }
    specs
}
