//! deadline-rank: generate synthetic slates, train, evaluate and ablate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deadline_rank::io::{
    self, RunConfig, MANIFEST_FILE, TEST_FILE, TRAIN_FILE, VALIDATION_FILE,
};
use deadline_rank::metrics::{evaluate, EvalConfig};
use deadline_rank::model::DinParams;
use deadline_rank::sim::{generate, split_dataset};
use deadline_rank::train::{encode_all, run_ablation, train_with};
use deadline_rank::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "deadline-rank", version, about = "Listwise ranking for deadline-bound matches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for simulation, initialization and shuffling
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (gradient shards); results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate users and write train/validation/test JSONL files
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write the best checkpoint and the epoch log
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl and validation.jsonl
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a slate file with a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Slate file to evaluate
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the four ablation variants and print the metric table
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Directory holding the three split files; simulated when omitted
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check slate files against the record invariants
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(common.seed, common.threads);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .context("no output directory: pass --out or set paths.out_dir")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if !path.is_file() {
        bail!(Error::Config(format!("input file {} does not exist", path.display())));
    }
    Ok(path)
}

fn split_file(data: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match (data, configured) {
        (Some(dir), _) => existing(dir.join(name)),
        (None, Some(p)) => existing(p.clone()),
        (None, None) => bail!(Error::Config(format!(
            "no {name}: pass --data or set the path in the config"
        ))),
    }
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_generate(common: Common) -> Result<()> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&common, &cfg)?;
    let data = generate(&cfg.sim, cfg.threads)?;
    let split = split_dataset(&data.slates, &cfg.sim.split, cfg.sim.seed)?;
    let manifest = io::write_dataset(&dir, &cfg.sim, &cfg.model.encoding.vocabulary, &data, &split)?;
    let c = &manifest.counts;
    println!(
        "generated {} users, {} matches: train {} / validation {} / test {} slates ({} requests skipped)",
        c.users, c.matches, c.train, c.validation, c.test, c.skipped
    );
    println!("config hash {}", manifest.config_hash);
    println!("wrote {}", dir.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_train(common: Common, data: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&common)?;
    let train_path = split_file(&data, &cfg.paths.train, TRAIN_FILE)?;
    let val_path = split_file(&data, &cfg.paths.validation, VALIDATION_FILE)?;
    let dir = out_dir(&common, &cfg)?;
    let enc = &cfg.model.encoding;
    let train_set = io::read_slates(&train_path, &enc.vocabulary, enc.max_candidates)?;
    let val_set = io::read_slates(&val_path, &enc.vocabulary, enc.max_candidates)?;
    let train_features = encode_all(&train_set, &cfg.model)?;
    let val_features = encode_all(&val_set, &cfg.model)?;
    let mut log_lines = String::new();
    let outcome = train_with(&cfg.model, &cfg.train, &train_features, &val_features, |r| {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_ndcg@1 {:.4}  {:.1}s",
            r.epoch, r.train_loss, r.val_ndcg_at_1, r.wall_time
        );
        log_lines.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
        log_lines.push('\n');
    })?;
    std::fs::write(dir.join("train_log.jsonl"), log_lines)?;
    let checkpoint = cfg.paths.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"));
    outcome.model.save(&checkpoint)?;
    println!(
        "best epoch {} with val_ndcg@1 {:.4}; checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_ndcg_at_1,
        checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: PathBuf, data: PathBuf) -> Result<()> {
    let cfg = load_config(&common)?;
    let checkpoint = existing(checkpoint)?;
    let data = existing(data)?;
    let out = common.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    let model = DinParams::load(&checkpoint)?;
    let enc = &model.config().encoding;
    let slates = io::read_slates(&data, &enc.vocabulary, enc.max_candidates)?;
    let features = encode_all(&slates, model.config())?;
    let report = evaluate(
        &model,
        &features,
        &EvalConfig {
            threads: cfg.threads,
            ..EvalConfig::default()
        },
    )?;
    print!("{}", report.to_key_value());
    if let Some(dir) = out {
        write_json(&dir.join("metrics.json"), serde_json::to_value(&report)?)?;
    }
    Ok(())
}

fn cmd_ablate(common: Common, data: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&common, &cfg)?;
    let enc = &cfg.model.encoding;
    let (train_set, val_set, test_set) = match &data {
        Some(d) => {
            let read = |name| -> Result<_> {
                Ok(io::read_slates(existing(d.join(name))?, &enc.vocabulary, enc.max_candidates)?)
            };
            (read(TRAIN_FILE)?, read(VALIDATION_FILE)?, read(TEST_FILE)?)
        }
        None => {
            let generated = generate(&cfg.sim, cfg.threads)?;
            let split = split_dataset(&generated.slates, &cfg.sim.split, cfg.sim.seed)?;
            (split.train, split.validation, split.test)
        }
    };
    let table = run_ablation(
        &cfg.model,
        &cfg.train,
        &train_set,
        &val_set,
        &test_set,
        &cfg.ablation.seeds,
        &cfg.ablation.variants,
        |v, seed, report| println!("{:<18} seed {seed}: ndcg@1 {:.4}", v.label(), report.ndcg[0]),
    )?;
    let rendered = table.render();
    print!("{rendered}");
    std::fs::write(dir.join("ablation.md"), &rendered)?;
    write_json(&dir.join("ablation.json"), serde_json::to_value(&table)?)?;
    Ok(())
}

fn cmd_validate(common: Common, files: Vec<PathBuf>) -> Result<bool> {
    let cfg = load_config(&common)?;
    let files = files.into_iter().map(existing).collect::<Result<Vec<_>>>()?;
    let enc = &cfg.model.encoding;
    let mut all_ok = true;
    let mut reports = Vec::new();
    for f in &files {
        let report = io::validate_slates(f, &enc.vocabulary, enc.max_candidates)?;
        println!("{}: {} of {} records valid", f.display(), report.valid, report.records);
        for issue in &report.issues {
            println!("  line {}: {}", issue.line, issue.message);
        }
        all_ok &= report.is_ok();
        reports.push((f.display().to_string(), report));
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("validation.json"), serde_json::to_value(&reports)?)?;
    }
    Ok(all_ok)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Validation { .. }
            | Error::Parse { .. }
            | Error::TemporalOrder { .. }
            | Error::WindowViolation(_)
            | Error::DegenerateSlate,
        ) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => cmd_generate(common).map(|_| true),
        Command::Train { common, data } => cmd_train(common, data).map(|_| true),
        Command::Eval {
            common,
            checkpoint,
            data,
        } => cmd_eval(common, checkpoint, data).map(|_| true),
        Command::Ablate { common, data } => cmd_ablate(common, data).map(|_| true),
        Command::Validate { common, files } => cmd_validate(common, files),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
