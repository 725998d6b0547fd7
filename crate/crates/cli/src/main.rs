use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sspb_core::dataset::{generate_synthetic, load_manifest, LabeledExample, SynthConfig};
use sspb_core::harness::{
    self, evaluate_classifier, evaluate_pretext, load_model, pretext_holdout, save_model, train_classifier,
    train_pretext, ModelCard, PretextMetrics,
};
use sspb_core::pretext::{build_pretext_dataset, load_pretext_examples, write_pretext_dataset, PretextConfig, PretextTask};
use sspb_core::{Error, Image, ParamSet, Regime, Result, RunConfig};

#[derive(Parser)]
#[command(name = "sspb", version, about = "Self-supervised pretext pretraining experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled image set with a manifest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        balance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build pretext pairs from the images of a manifest.
    Gen {
        #[arg(long)]
        task: PretextTask,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_side: Option<usize>,
        #[arg(long)]
        swaps: Option<usize>,
        #[arg(long)]
        swap_patch: Option<usize>,
    },
    /// Train an encoder and task head on a pretext task.
    Pretrain {
        #[arg(long)]
        task: PretextTask,
        /// Output of `gen`, or a directory with a labelled manifest.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a classifier from pretext weights or random initialisation.
    Train {
        /// Weight file, or `random`.
        #[arg(long)]
        init: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "none")]
        regime: Regime,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained classifier on a labelled manifest.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the full initialisation × regime matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string(v).expect("serialisable"));
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    sspb_core::io::write_atomic(path, s.as_bytes())
}

fn images_of(examples: &[LabeledExample]) -> Vec<Image> {
    examples.iter().map(|e| e.image.clone()).collect()
}

fn is_pretext_dir(dir: &Path) -> bool {
    std::fs::read_to_string(dir.join("manifest.csv"))
        .map(|s| s.starts_with("input_path,"))
        .unwrap_or(false)
}

fn cmd_pretrain(task: PretextTask, data: &Path, config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let examples = if is_pretext_dir(data) {
        let (t, ex) = load_pretext_examples(data)?;
        if t != task {
            return Err(Error::Usage(format!("{} holds '{t}' examples, not '{task}'", data.display())));
        }
        ex
    } else {
        let images = images_of(&load_manifest(data.join("manifest.csv"))?);
        build_pretext_dataset(&images, task, &cfg.pretext.resolve(cfg.image_side), cfg.seed)?.examples
    };
    let originals: Vec<Image> = examples.iter().map(|e| e.input.clone()).collect();
    let pre = cfg.preprocess.resolve(&originals)?;
    let (tr, te) = pretext_holdout(examples.len(), cfg.pretext_test_count, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let (spec, params, history) = train_pretext(&cfg, task, &pick(&tr), &pre, cfg.seed)?;
    params.save(out)?;
    let metrics = if te.is_empty() {
        serde_json::Value::Null
    } else {
        match evaluate_pretext(&spec, &params, &pick(&te), &pre, &cfg.ssim, cfg.pretext_train.batch_size)? {
            PretextMetrics::Rotation(m) => json!(m),
            PretextMetrics::Image { summary, .. } => json!(summary),
        }
    };
    print_json(&json!({
        "task": task,
        "weights": out,
        "epochs": history.stopped_epoch,
        "final_train_loss": history.epochs.last().map(|e| e.train_loss),
        "held_out": te.len(),
        "metrics": metrics,
    }));
    Ok(())
}

fn cmd_train(init: &str, data: &Path, config: &Path, regime: Regime, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let train = load_manifest(data.join("manifest.csv"))?;
    let pre = cfg.preprocess.resolve(&images_of(&train))?;
    let src = match init {
        "random" => None,
        path => Some(ParamSet::load(path)?),
    };
    let (spec, params, history) = train_classifier(&cfg, src.as_ref(), regime, &train, &pre, cfg.seed)?;
    let card = ModelCard {
        schema_version: harness::SCHEMA_VERSION,
        spec,
        input: pre,
        batch_size: cfg.classifier_train.batch_size,
        init: init.to_string(),
        regime,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        stopped_epoch: history.stopped_epoch,
        best_epoch: history.best_epoch,
    };
    save_model(out, &card, &params, &history)?;
    print_json(&json!({
        "model": out,
        "epochs": history.stopped_epoch,
        "best_epoch": history.best_epoch,
        "final_val_loss": history.epochs.last().map(|e| e.val_loss),
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            n,
            size,
            seed,
            balance,
            out,
        } => {
            let cfg = SynthConfig { n, side: size, seed, balance };
            let ex = generate_synthetic(&cfg, &out)?;
            let positives = ex.iter().filter(|e| e.label == 1).count();
            print_json(&json!({"out": out, "images": ex.len(), "positives": positives}));
        }
        Command::Gen {
            task,
            manifest,
            seed,
            out,
            mask_side,
            swaps,
            swap_patch,
        } => {
            let images = images_of(&load_manifest(&manifest)?);
            let side = images.iter().map(|i| i.height().min(i.width())).min().unwrap_or(0);
            let mut pc = PretextConfig {
                mask_side,
                swap_patch,
                ..PretextConfig::default()
            };
            if let Some(s) = swaps {
                pc.swap_count = s;
            }
            let ds = build_pretext_dataset(&images, task, &pc.resolve(side), seed)?;
            write_pretext_dataset(&ds, &out)?;
            print_json(&json!({"out": out, "task": task, "examples": ds.examples.len(), "config": ds.config}));
        }
        Command::Pretrain {
            task,
            data,
            config,
            out,
            seed,
        } => cmd_pretrain(task, &data, &config, &out, seed)?,
        Command::Train {
            init,
            data,
            config,
            regime,
            out,
            seed,
        } => cmd_train(&init, &data, &config, regime, &out, seed)?,
        Command::Eval { model, manifest, report } => {
            let (card, params) = load_model(&model)?;
            let examples = load_manifest(&manifest)?;
            let acc = evaluate_classifier(&card.spec, &params, &examples, &card.input, card.batch_size)?;
            let r = json!({
                "schema_version": harness::SCHEMA_VERSION,
                "accuracy_pct": acc,
                "n": examples.len(),
                "init": card.init,
                "regime": card.regime,
                "seed": card.seed,
            });
            write_json(&report, &r)?;
            print_json(&r);
        }
        Command::Matrix {
            config,
            out,
            seed,
            seeds,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(k) = seeds {
                cfg.seeds = k;
            }
            cfg.validate()?;
            let out = out
                .or_else(|| cfg.output_dir.as_ref().map(|p| cfg.base_dir.join(p)))
                .ok_or_else(|| Error::Usage("no output directory: pass --out or set output_dir".into()))?;
            let report = harness::run_matrix(&cfg)?;
            harness::write_report(&report, &out)?;
            let failed: Vec<String> = report
                .table1
                .iter()
                .filter(|c| c.status == harness::CellStatus::Failed)
                .map(|c| format!("{}/{}", c.init, c.regime))
                .collect();
            print_json(&json!({"out": out, "cells": report.table1.len(), "failed": failed}));
            if report.any_failed() {
                emit_error("cells_failed", "one or more phases failed; see report.json");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({"error": kind, "message": message}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            match e.kind() {
                "usage" | "config" => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
