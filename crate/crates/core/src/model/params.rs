use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const SHARED_EMBEDDING: &str = "shared.embedding";

/// A tower in the network: one of the binary conversion steps or the core
/// regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    /// 1-based conversion step.
    Step(usize),
    Core,
}

impl TaskId {
    pub fn prefix(self) -> String {
        match self {
            TaskId::Step(t) => format!("task{t}"),
            TaskId::Core => "core".to_string(),
        }
    }

    /// Number of tasks upstream of this one, given `num_tasks` steps.
    pub fn preceding(self, num_tasks: usize) -> usize {
        match self {
            TaskId::Step(t) => t - 1,
            TaskId::Core => num_tasks,
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.prefix())
    }
}

/// Named parameter tensors keyed by stable dotted paths such as
/// `task1.tower.layer0.weight` or `task2.leu.table`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        ParamVars(
            self.tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
                .collect(),
        )
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }
}

/// Binds names to handles already on a tape, e.g. to run the forward pass
/// on caller-built leaves.
impl FromIterator<(String, Var)> for ParamVars {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Xavier/Glorot uniform initialisation of a `[fan_in, fan_out]` matrix.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite xavier bound");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("sized buffer")
}
