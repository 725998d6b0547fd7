//! Report types and the initialisation × regime matrix runner.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::pretext::PretextTask;
use crate::training::TrainHistory;

use super::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingSummary {
    pub patience: usize,
    pub stopped_epochs: Vec<usize>,
    pub best_epochs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub init: Init,
    pub regime: Regime,
    pub regime_label: String,
    pub status: CellStatus,
    /// Mean over seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_pct: Option<f64>,
    pub per_seed_accuracy: Vec<f64>,
    pub epochs_run: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stopping: Option<EarlyStoppingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RotationMetrics>,
    pub per_seed: Vec<RotationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub task: PretextTask,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ImageTaskMetrics>,
    pub per_seed: Vec<ImageTaskMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub toolkit_version: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub table1: Vec<Table1Cell>,
    pub table2: Table2,
    pub table3: Vec<Table3Row>,
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.table1.iter().any(|c| c.status == CellStatus::Failed)
            || self.table2.status == CellStatus::Failed
            || self.table3.iter().any(|r| r.status == CellStatus::Failed)
    }

    pub fn cell(&self, init: Init, regime: Regime) -> Option<&Table1Cell> {
        self.table1.iter().find(|c| c.init == init && c.regime == regime)
    }
}

pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

type PhaseResult<T> = std::result::Result<T, String>;

/// Runs every requested cell for every seed and assembles the report.
/// Individual phase failures are recorded in the report, not returned.
pub fn run_matrix(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started_at = now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads()?)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let seeds = cfg.run_seeds();

    let data: Vec<PhaseResult<(Data, InputTransform)>> = seeds
        .iter()
        .map(|&s| {
            let d = load_data(cfg, s)?;
            let images: Vec<Image> = d.train.iter().map(|e| e.image.clone()).collect();
            let pre = cfg.preprocess.resolve(&images)?;
            Ok((d, pre))
        })
        .map(|r: Result<_>| r.map_err(|e| e.in_phase("loading data").to_string()))
        .collect();

    let needed: BTreeSet<PretextTask> = cfg.inits.iter().filter_map(Init::task).collect();
    let pretext_jobs: Vec<(usize, PretextTask)> =
        (0..seeds.len()).flat_map(|i| needed.iter().map(move |&t| (i, t))).collect();
    let pretext: BTreeMap<(usize, PretextTask), PhaseResult<PretextOutcome>> = pool.install(|| {
        pretext_jobs
            .par_iter()
            .map(|&(i, task)| {
                let r = match &data[i] {
                    Ok((d, pre)) => {
                        let images: Vec<Image> = d.train.iter().map(|e| e.image.clone()).collect();
                        run_pretext_phase(cfg, task, &images, pre, seeds[i]).map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                };
                ((i, task), r)
            })
            .collect()
    });

    let cell_jobs: Vec<(usize, Init, Regime)> = (0..seeds.len())
        .flat_map(|i| cfg.inits.iter().flat_map(move |&init| cfg.regimes.iter().map(move |&r| (i, init, r))))
        .collect();
    let cells: BTreeMap<(usize, Init, Regime), PhaseResult<(f64, TrainHistory)>> = pool.install(|| {
        cell_jobs
            .par_iter()
            .map(|&(i, init, regime)| {
                let run = || -> PhaseResult<(f64, TrainHistory)> {
                    let (d, pre) = data[i].as_ref().map_err(Clone::clone)?;
                    let enc = match init.task() {
                        Some(t) => Some(pretext[&(i, t)].as_ref().map_err(Clone::clone)?.encoder()),
                        None => None,
                    };
                    let out = run_classification_phase(cfg, enc.as_ref(), regime, &d.train, &d.test, pre, seeds[i])
                        .map_err(|e| e.in_phase(format!("classifier '{init}' / '{regime}'")).to_string())?;
                    Ok((out.accuracy_pct, out.history))
                };
                ((i, init, regime), run())
            })
            .collect()
    });

    let n_seeds = seeds.len();
    let mut table1 = Vec::new();
    for init in Init::ALL {
        for &regime in &cfg.regimes {
            let label = regime.label(cfg.classifier_train.epochs);
            if !cfg.inits.contains(&init) {
                table1.push(Table1Cell {
                    init,
                    regime,
                    regime_label: label,
                    status: CellStatus::Skipped,
                    accuracy_pct: None,
                    per_seed_accuracy: vec![],
                    epochs_run: vec![],
                    early_stopping: None,
                    error: None,
                });
                continue;
            }
            let results: Vec<&PhaseResult<(f64, TrainHistory)>> =
                (0..n_seeds).map(|i| &cells[&(i, init, regime)]).collect();
            let error = results.iter().find_map(|r| r.as_ref().err().cloned());
            let ok: Vec<&(f64, TrainHistory)> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let acc: Vec<f64> = ok.iter().map(|(a, _)| *a).collect();
            let early_stopping = match regime {
                Regime::Full => None,
                Regime::Patience(p) => Some(EarlyStoppingSummary {
                    patience: p,
                    stopped_epochs: ok.iter().map(|(_, h)| h.stopped_epoch).collect(),
                    best_epochs: ok.iter().map(|(_, h)| h.best_epoch).collect(),
                }),
            };
            table1.push(Table1Cell {
                init,
                regime,
                regime_label: label,
                status: if error.is_some() { CellStatus::Failed } else { CellStatus::Ok },
                accuracy_pct: error.is_none().then(|| mean(&acc)),
                per_seed_accuracy: acc,
                epochs_run: ok.iter().map(|(_, h)| h.stopped_epoch).collect(),
                early_stopping,
                error,
            });
        }
    }

    let outcomes = |task: PretextTask| -> (CellStatus, Vec<&PretextOutcome>, Option<String>) {
        if !needed.contains(&task) {
            return (CellStatus::Skipped, vec![], None);
        }
        let rs: Vec<_> = (0..n_seeds).map(|i| &pretext[&(i, task)]).collect();
        let err = rs.iter().find_map(|r| r.as_ref().err().cloned());
        let status = if err.is_some() { CellStatus::Failed } else { CellStatus::Ok };
        (status, rs.iter().filter_map(|r| r.as_ref().ok()).collect(), err)
    };

    let (rot_status, rot, rot_err) = outcomes(PretextTask::Rotation);
    let per_seed: Vec<RotationMetrics> = rot
        .iter()
        .filter_map(|o| match o.metrics {
            PretextMetrics::Rotation(m) => Some(m),
            _ => None,
        })
        .collect();
    let table2 = Table2 {
        status: rot_status,
        metrics: (rot_status == CellStatus::Ok).then(|| {
            let f = |g: fn(&RotationMetrics) -> f64| mean(&per_seed.iter().map(g).collect::<Vec<_>>());
            RotationMetrics {
                mse: f(|m| m.mse),
                aad_scaled: f(|m| m.aad_scaled),
                aad_degrees: f(|m| m.aad_degrees),
                std_degrees: f(|m| m.std_degrees),
            }
        }),
        per_seed,
        error: rot_err,
    };

    let table3 = [PretextTask::Inpaint, PretextTask::Corrupt]
        .into_iter()
        .map(|task| {
            let (status, outs, err) = outcomes(task);
            let per_seed: Vec<ImageTaskMetrics> = outs
                .iter()
                .filter_map(|o| match &o.metrics {
                    PretextMetrics::Image { summary, .. } => Some(*summary),
                    _ => None,
                })
                .collect();
            let f = |g: fn(&ImageTaskMetrics) -> f64| mean(&per_seed.iter().map(g).collect::<Vec<_>>());
            Table3Row {
                task,
                status,
                metrics: (status == CellStatus::Ok).then(|| ImageTaskMetrics {
                    mse_mean: f(|m| m.mse_mean),
                    mse_std: f(|m| m.mse_std),
                    ssim_mean: f(|m| m.ssim_mean),
                    ssim_std: f(|m| m.ssim_std),
                }),
                per_seed,
                error: err,
            }
        })
        .collect();

    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            seeds,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            started_at,
            finished_at: now(),
        },
        config: cfg.clone(),
        table1,
        table2,
        table3,
    })
}
