use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::checkpoint::Checkpoint;
use super::config::{RunConfig, Splits};
use super::eval::core_nrmse;
use super::seeds::{component_rng, component_seed, Component};
use crate::error::{Error, Result};
use crate::model::{FieldLayout, HtlNet};
use crate::optim::{training_step, OptimState, StepReport, TaskGradientStats};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const LAST_CHECKPOINT: &str = "last.json";
pub const BEST_CHECKPOINT: &str = "best.json";

/// One training-log row.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub tau: f64,
    pub task_losses: Vec<f64>,
    pub core_loss: f64,
    /// `‖G_core‖` on the shared embedding.
    pub core_norm: f64,
    pub tasks: Vec<TaskGradientStats>,
}

impl LogRecord {
    fn new(epoch: usize, r: StepReport) -> Self {
        Self {
            step: r.step,
            epoch,
            tau: r.tau,
            task_losses: r.task_losses,
            core_loss: r.core_loss,
            core_norm: r.gradients.core_norm,
            tasks: r.gradients.tasks,
        }
    }

    pub fn header(num_tasks: usize) -> Vec<String> {
        let mut h: Vec<String> = vec!["step".into(), "epoch".into(), "tau".into()];
        h.extend((1..=num_tasks).map(|t| format!("loss_task{t}")));
        h.push("loss_core".into());
        h.push("norm_core".into());
        for t in 1..=num_tasks {
            for col in ["norm", "processed_norm", "raw_ratio", "processed_ratio", "scale"] {
                h.push(format!("{col}_task{t}"));
            }
        }
        h
    }

    /// Floats use the shortest text that parses back to the same value.
    pub fn fields(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:?}");
        let mut row = vec![self.step.to_string(), self.epoch.to_string(), f(self.tau)];
        row.extend(self.task_losses.iter().map(|&v| f(v)));
        row.push(f(self.core_loss));
        row.push(f(self.core_norm));
        for s in &self.tasks {
            row.extend([s.norm, s.processed_norm, s.raw_ratio, s.processed_ratio, s.scale].map(f));
        }
        row
    }
}

/// State to continue from: the last checkpoint and, if one was saved, the
/// best-so-far checkpoint.
#[derive(Clone, Debug)]
pub struct Resume {
    pub last: Checkpoint,
    pub best: Option<Checkpoint>,
}

impl Resume {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let last = Checkpoint::load(&dir.join(LAST_CHECKPOINT))?;
        let best_path = dir.join(BEST_CHECKPOINT);
        let best = if best_path.exists() {
            Some(Checkpoint::load(&best_path)?)
        } else {
            None
        };
        Ok(Self { last, best })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest validation core NRMSE seen.
    pub best: Checkpoint,
    /// Rows produced by this call (resumed runs omit earlier ones).
    pub log: Vec<LogRecord>,
}

struct RunDir {
    dir: PathBuf,
    log: csv::Writer<std::fs::File>,
}

impl RunDir {
    fn open(dir: &Path, cfg: &RunConfig, resume_step: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut echo = std::fs::File::create(dir.join(CONFIG_FILE))?;
        echo.write_all(cfg.to_toml()?.as_bytes())?;

        let log_path = dir.join(LOG_FILE);
        // A resumed run keeps the rows before its checkpoint and drops any
        // written after it, so the final log matches an uninterrupted run.
        let kept: Vec<csv::StringRecord> = match resume_step {
            Some(step) if log_path.exists() => csv::Reader::from_path(&log_path)?
                .records()
                .filter(|r| {
                    r.as_ref()
                        .map_or(true, |r| r.get(0).and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
                })
                .collect::<std::result::Result<_, _>>()?,
            _ => Vec::new(),
        };
        let mut log = csv::Writer::from_path(&log_path)?;
        log.write_record(LogRecord::header(cfg.model.num_tasks))?;
        for r in &kept {
            log.write_record(r)?;
        }
        log.flush()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn append(&mut self, rec: &LogRecord) -> Result<()> {
        self.log.write_record(rec.fields())?;
        Ok(())
    }

    fn save(&mut self, name: &str, ck: &Checkpoint) -> Result<()> {
        self.log.flush()?;
        ck.save(&self.dir.join(name))
    }
}

/// Trains on `splits.train`, selecting the checkpoint with the lowest
/// validation core NRMSE. With `out`, the run directory receives the config
/// echo, the per-step log and the last / best checkpoints.
pub fn train(
    cfg: &RunConfig,
    splits: &Splits,
    out: Option<&Path>,
    resume: Option<Resume>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = &splits.train;
    if train_set.num_tasks() != cfg.model.num_tasks {
        return Err(Error::config(format!(
            "model.num_tasks = {} but the data has {} label columns",
            cfg.model.num_tasks,
            train_set.num_tasks()
        )));
    }

    let (mut model, mut state, start, mut best) = match resume {
        Some(r) => {
            if r.last.config.model != cfg.model || r.last.config.optim != cfg.optim || r.last.config.seed != cfg.seed {
                return Err(Error::Checkpoint(
                    "resume needs the same seed, model and optim settings as the checkpoint".into(),
                ));
            }
            let best = match (r.best, r.last.best_valid_nrmse) {
                (Some(b), Some(score)) => Some((score, b)),
                _ => None,
            };
            (r.last.model()?, r.last.optim_state(), r.last.step, best)
        }
        None => {
            let layout = FieldLayout::new(train_set.field_vocab.clone())?;
            let mut rng = component_rng(cfg.seed, Component::Init, 0);
            let model = HtlNet::new(cfg.model.clone(), layout, &mut rng)?;
            let state = OptimState::new(&cfg.optim, component_seed(cfg.seed, Component::Surgery));
            (model, state, 0, None)
        }
    };

    let mut run_dir = match out {
        Some(dir) => Some(RunDir::open(dir, cfg, (start > 0).then_some(start))?),
        None => None,
    };

    let bs = cfg.train.batch_size;
    let per_epoch = train_set.len().div_ceil(bs) as u64;
    let total = per_epoch * cfg.train.epochs as u64;
    if start > total {
        return Err(Error::Checkpoint(format!(
            "checkpoint is at step {start}, past the {total} steps this config trains for"
        )));
    }

    let consider = |model: &HtlNet, state: &OptimState, step: u64, best: &mut Option<(f64, Checkpoint)>| -> Result<Option<f64>> {
        let score = core_nrmse(model, &splits.valid, step)?;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            *best = Some((score, Checkpoint::capture(cfg, model, state, step, Some(score))));
        }
        Ok(best.as_ref().map(|(b, _)| *b))
    };

    if total == 0 && best.is_none() {
        consider(&model, &state, 0, &mut best)?;
        if let (Some(dir), Some((_, b))) = (run_dir.as_mut(), &best) {
            dir.save(BEST_CHECKPOINT, b)?;
        }
    }

    let mut log = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = None;
    for step in start..total {
        let epoch = (step / per_epoch) as usize;
        if order_epoch != Some(epoch) {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut component_rng(cfg.seed, Component::DataOrder, epoch as u64));
            order_epoch = Some(epoch);
        }
        let k = (step % per_epoch) as usize;
        let rows = &order[k * bs..((k + 1) * bs).min(order.len())];
        let batch = train_set.batch(rows);
        let mut noise = component_rng(cfg.seed, Component::Gumbel, step);
        let report = training_step(&mut model, &batch, &cfg.optim, &mut state, step, Some(&mut noise))?;
        if !(report.core_loss.is_finite() && report.task_losses.iter().all(|l| l.is_finite())) {
            return Err(Error::Domain {
                op: "train",
                msg: format!("loss became non-finite at step {step}"),
            });
        }
        let rec = LogRecord::new(epoch, report);
        if let Some(dir) = run_dir.as_mut() {
            dir.append(&rec)?;
        }
        log.push(rec);

        let done = step + 1;
        let epoch_end = done % per_epoch == 0;
        let eval_due = epoch_end || (cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0);
        let ckpt_due = epoch_end || (cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0);
        let mut improved = false;
        if eval_due {
            let before = best.as_ref().map(|(b, _)| *b);
            let now = consider(&model, &state, done, &mut best)?;
            improved = now != before;
        }
        if let Some(dir) = run_dir.as_mut() {
            if improved {
                dir.save(BEST_CHECKPOINT, &best.as_ref().expect("scored above").1)?;
            }
            if ckpt_due {
                let last = Checkpoint::capture(cfg, &model, &state, done, best.as_ref().map(|(b, _)| *b));
                dir.save(LAST_CHECKPOINT, &last)?;
            }
        }
    }

    let best_score = best.as_ref().map(|(b, _)| *b);
    let last = Checkpoint::capture(cfg, &model, &state, total, best_score);
    if let Some(dir) = run_dir.as_mut() {
        dir.save(LAST_CHECKPOINT, &last)?;
    }
    let best = match best {
        Some((_, b)) => b,
        None => last.clone(),
    };
    Ok(TrainOutcome { last, best, log })
}
