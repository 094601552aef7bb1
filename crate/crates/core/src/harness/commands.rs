//! Subcommand implementations. Each returns data; printing is left to the
//! binary.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::eval::{evaluate, EvalReport};
use super::gradcheck::{self, GradcheckReport};
use super::log::{push_jsonl, read_log, records_for, render};
use super::{load_params, save_params, write_atomic, HarnessError};
use crate::accounting::{trajectory_report, ContextRow, Strategy};
use crate::curation::PolicyParams;
use crate::grpo::{train, IterationMetrics, TaskFamily, TrainSetup};
use crate::seed::Stream;

pub const PARAMS_FILE: &str = "params.json";
pub const METRICS_FILE: &str = "train.csv";
pub const LOG_FILE: &str = "trajectories.jsonl";
pub const CONTEXT_FILE: &str = "context.csv";

/// Initial weights: the config's `init_params` file, or zeros on its basis.
pub fn initial_params(cfg: &RunConfig) -> Result<PolicyParams, HarnessError> {
    match &cfg.init_params {
        None => Ok(PolicyParams::zeros(cfg.basis.clone())),
        Some(p) => {
            let params = load_params(p)?;
            if params.basis() != &cfg.basis {
                return Err(HarnessError::Params {
                    path: p.clone(),
                    message: "feature basis differs from curator.basis".into(),
                });
            }
            Ok(params)
        }
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::io(Path::new("<csv>"), e.into_error()))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub params: PolicyParams,
    pub curve: Vec<IterationMetrics>,
    pub params_path: PathBuf,
    pub metrics_path: PathBuf,
    pub log_path: Option<PathBuf>,
}

/// Trains the curator and writes `params.json`, `train.csv` and, when
/// enabled, `trajectories.jsonl` into `out_dir`. Output is a pure function of
/// the config.
pub fn cli_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary, HarnessError> {
    let params0 = initial_params(cfg)?;
    let tasks = TaskFamily::new(cfg.difficulty, cfg.seed, Stream::TrainTask).map_err(crate::grpo::GrpoError::from)?;
    let executor = cfg.executor();
    let setup = TrainSetup {
        cfg: &cfg.grpo,
        tasks: &tasks,
        skin: cfg.skin,
        executor: &executor,
        capacity: cfg.capacity,
        costs: cfg.costs,
        execution: cfg.execution,
    };
    let mut log = Vec::new();
    let mut log_err = None;
    let mut index = 0;
    let outcome = train(&setup, params0, |it, groups| {
        if !cfg.trajectory_log || log_err.is_some() {
            return;
        }
        for t in groups.iter().flat_map(|g| &g.trajectories) {
            match records_for(t, Some(it), index, cfg.skin, &cfg.costs) {
                Ok(r) => push_jsonl(&mut log, &r),
                Err(e) => log_err = Some(e),
            }
            index += 1;
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let params_path = out_dir.join(PARAMS_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    write_atomic(&metrics_path, &csv_bytes(&outcome.curve)?)?;
    let log_path = if cfg.trajectory_log {
        let p = out_dir.join(LOG_FILE);
        write_atomic(&p, &log)?;
        Some(p)
    } else {
        None
    };
    save_params(&params_path, &outcome.params)?;
    Ok(TrainSummary { params: outcome.params, curve: outcome.curve, params_path, metrics_path, log_path })
}

/// Evaluates the active curator on held-out tasks. `params` defaults to the
/// config's initial weights.
pub fn cli_eval(
    cfg: &RunConfig,
    params: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<EvalReport, HarnessError> {
    let params = match params {
        Some(p) => load_params(p)?,
        None => initial_params(cfg)?,
    };
    let (report, trajs) = evaluate(cfg, Strategy::Active, &params)?;
    if let Some(path) = log_path {
        let mut out = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            push_jsonl(&mut out, &records_for(t, None, i, cfg.skin, &cfg.costs)?);
        }
        write_atomic(path, &out)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    pub rows: Vec<ContextRow>,
}

/// Runs all three strategies on the same held-out tasks and writes the
/// per-turn context lengths of every episode to `csv_path`.
pub fn cli_compare_strategies(
    cfg: &RunConfig,
    params: Option<&Path>,
    csv_path: &Path,
) -> Result<Comparison, HarnessError> {
    let params = match params {
        Some(p) => load_params(p)?,
        None => initial_params(cfg)?,
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for s in Strategy::ALL {
        let (report, trajs) = evaluate(cfg, s, &params)?;
        for t in &trajs {
            rows.extend(trajectory_report(t, s, cfg.skin, &cfg.costs)?.rows(t.task_id));
        }
        reports.push(report);
    }
    write_atomic(csv_path, &csv_bytes(&rows)?)?;
    Ok(Comparison { reports, rows })
}

pub fn cli_gradcheck(seed: u64) -> Result<GradcheckReport, HarnessError> {
    gradcheck::check(seed)
}

pub fn cli_replay(path: &Path) -> Result<String, HarnessError> {
    Ok(render(&read_log(path)?))
}
