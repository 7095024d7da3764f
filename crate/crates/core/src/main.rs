use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use htlnet::data::{synth_generate, write_table};
use htlnet::run::{
    ablate, evaluate, train, Checkpoint, Resume, RunConfig, Splits, BASELINE, CONFIG_FILE, VARIANTS,
};
use htlnet::{Error, Result};

#[derive(Parser)]
#[command(name = "htlnet", version, about = "Hybrid-target multi-task learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "HTLNET_OUT")]
    out: Option<PathBuf>,
    /// Reads this table instead of generating synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(data) = &self.data {
            cfg.data.path = Some(data.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic funnel table, its ground truth and the spec used.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Trains one model and reports the best checkpoint on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Scores a checkpoint on one split of its data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Reads this table instead of the checkpoint's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also writes the metric records here.
        #[arg(long, env = "HTLNET_OUT")]
        out: Option<PathBuf>,
    },
    /// Runs the ablation matrix over `train.repeats` seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant to include (repeatable); all variants when omitted.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { common } => generate(&common),
        Command::Train { common, resume } => cmd_train(&common, resume),
        Command::Eval {
            checkpoint,
            split,
            data,
            out,
        } => cmd_eval(&checkpoint, &split, data, out.as_deref()),
        Command::Ablate { common, variants } => cmd_ablate(&common, variants),
    }
}

fn generate(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let mut spec = cfg.data.synthetic.clone();
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let generated = synth_generate(&spec)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    write_table(&out.join("data.csv"), &generated.dataset)?;
    std::fs::write(out.join("data.meta.json"), serde_json::to_vec_pretty(&generated.truth)?)?;
    let echo = toml::to_string(&spec).map_err(|e| Error::Dataset(e.to_string()))?;
    std::fs::write(out.join("spec.toml"), echo)?;

    let s = generated.dataset.summary();
    let target_mean = spec.conditional_core_mean() * spec.rates.last().copied().unwrap_or(0.0);
    println!("wrote {} rows to {}", s.samples, out.join("data.csv").display());
    println!("{:<10} {:>12} {:>12}", "statistic", "observed", "target");
    for (t, (rate, target)) in s.rates.iter().zip(&spec.rates).enumerate() {
        println!("{:<10} {:>12.5} {:>12.5}", format!("rate_y{}", t + 1), rate, target);
    }
    println!("{:<10} {:>12.4} {:>12.4}", "core_mean", s.core_mean, target_mean);
    println!("{:<10} {:>12.4} {:>12}", "core_std", s.core_std, "-");
    Ok(())
}

fn cmd_train(common: &Common, resume: bool) -> Result<()> {
    let cfg = common.resolve()?;
    let splits = cfg.prepare()?;
    let state = if resume {
        Some(Resume::from_dir(&cfg.out_dir)?)
    } else {
        None
    };
    let outcome = train(&cfg, &splits, Some(&cfg.out_dir), state)?;
    let best = outcome.best.model()?;
    let report = evaluate(&best, &splits.test, outcome.best.step)?;
    std::fs::write(cfg.out_dir.join("test_report.tsv"), report.to_records())?;
    println!(
        "trained {} steps; best validation core NRMSE {:.6} at step {}",
        outcome.last.step,
        outcome.best.best_valid_nrmse.unwrap_or(f64::NAN),
        outcome.best.step
    );
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, split: &str, data: Option<PathBuf>, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if data.is_some() {
        cfg.data.path = data;
    }
    let splits = cfg.prepare()?;
    let dataset = splits.get(split)?;
    if dataset.field_vocab.len() != ck.field_vocab.len() {
        return Err(Error::Dataset(format!(
            "data has {} feature fields but the checkpoint expects {}",
            dataset.field_vocab.len(),
            ck.field_vocab.len()
        )));
    }
    let report = evaluate(&ck.model()?, dataset, ck.step)?;
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(format!("eval_{split}.tsv")), report.to_records())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_ablate(common: &Common, variants: Vec<String>) -> Result<()> {
    let cfg = common.resolve()?;
    let variants = if variants.is_empty() {
        VARIANTS.iter().map(|v| v.to_string()).collect()
    } else {
        variants
    };
    let splits: Splits = cfg.prepare()?;
    let seeds: Vec<u64> = (0..cfg.train.repeats as u64).map(|k| cfg.seed + k).collect();
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    let report = ablate(&cfg, &variants, &seeds, &splits, Some(out), |variant, seed, r| {
        let nrmse = r.get(&splits.test.schema.core, "nrmse").unwrap_or(f64::NAN);
        eprintln!("{variant} seed {seed}: test core NRMSE {nrmse:.6}");
    })?;
    std::fs::write(out.join("ablation_summary.tsv"), report.to_tsv())?;
    std::fs::write(out.join("ablation_records.tsv"), report.to_records())?;

    let core = &splits.test.schema.core;
    println!("{:<22} {:>12} {:>10} {:>10} {:>6}", "variant", "core_nrmse", "std", "p_value", "wins");
    for row in report.summary().iter().filter(|r| &r.task == core && r.metric == "nrmse") {
        println!(
            "{:<22} {:>12.6} {:>10.6} {:>10} {:>6}",
            row.variant,
            row.mean,
            row.std,
            row.p_value.map_or("-".into(), |p| format!("{p:.4}")),
            row.baseline_wins.map_or("-".into(), |w| format!("{w}/{}", seeds.len())),
        );
    }
    println!("wins: seeds on which {BASELINE} has the lower test core NRMSE");
    Ok(())
}
