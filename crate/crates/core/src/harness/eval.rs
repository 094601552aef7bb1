//! Held-out evaluation and strategy comparison.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::HarnessError;
use crate::accounting::{trajectory_report, PromptCosts, Strategy};
use crate::curation::PolicyParams;
use crate::env::{Difficulty, Environment, Skin, TaskSpec};
use crate::exec::Execution;
use crate::executor::{AugmentedEnv, ExecutorPolicy, StepError};
use crate::grpo::{rollout_trajectory, GrpoError, MemoryPolicy, TaskFamily, Trajectory, MAX_ROLLOUT_ATTEMPTS};
use crate::seed::{self, Stream};

/// Mean total context tokens per trajectory under each formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMeans {
    pub no_memory: f64,
    pub full_context: f64,
    pub active: f64,
}

impl TokenMeans {
    pub fn get(&self, s: Strategy) -> f64 {
        match s {
            Strategy::NoMemory => self.no_memory,
            Strategy::FullContext => self.full_context,
            Strategy::Active => self.active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_turns: f64,
    /// Mean total tokens under the strategy's own formula.
    pub mean_tokens: f64,
    /// The same trajectories accounted under every formula.
    pub tokens_by_formula: TokenMeans,
}

/// `n` held-out tasks; their seeds come from the evaluation stream and never
/// coincide with training task seeds.
pub fn held_out_tasks(difficulty: &Difficulty, master: u64, n: usize) -> Result<Vec<TaskSpec>, HarnessError> {
    let family = TaskFamily::new(*difficulty, master, Stream::EvalTask).map_err(GrpoError::from)?;
    Ok((0..n).map(|i| family.nth(&[i as u64])).collect())
}

/// Runs one episode per task. Episode `i` uses seed
/// `derive(master, EvalRollout, [i, attempt])`.
pub fn run_episodes(
    tasks: &[TaskSpec],
    skin: Skin,
    executor: &ExecutorPolicy,
    policy: MemoryPolicy<'_>,
    master: u64,
    execution: Execution,
) -> Result<Vec<Trajectory>, HarnessError> {
    let results = execution.map(tasks.len(), |i| {
        let aug = AugmentedEnv { env: Environment::new(tasks[i].clone(), skin), executor: executor.clone() };
        let mut attempt = 0;
        loop {
            let s = seed::derive(master, Stream::EvalRollout, &[i as u64, attempt]);
            match rollout_trajectory(&aug, policy, s) {
                Ok(t) => return Ok(t),
                Err(StepError::Env(e)) => return Err(GrpoError::Env(e)),
                Err(StepError::Executor(e)) => {
                    attempt += 1;
                    if attempt >= MAX_ROLLOUT_ATTEMPTS {
                        return Err(GrpoError::AbortLimit { slot: i, attempts: attempt, last: e });
                    }
                }
            }
        }
    });
    results.into_iter().map(|r| r.map_err(HarnessError::from)).collect()
}

pub fn summarize(
    strategy: Strategy,
    trajectories: &[Trajectory],
    skin: Skin,
    costs: &PromptCosts,
) -> Result<EvalReport, HarnessError> {
    if trajectories.is_empty() {
        return Err(HarnessError::NoEpisodes);
    }
    let n = trajectories.len() as f64;
    let mut sums = [0u64; 3];
    for t in trajectories {
        for (k, s) in Strategy::ALL.into_iter().enumerate() {
            sums[k] += trajectory_report(t, s, skin, costs)?.total;
        }
    }
    let tokens_by_formula =
        TokenMeans { no_memory: sums[0] as f64 / n, full_context: sums[1] as f64 / n, active: sums[2] as f64 / n };
    let successes = trajectories.iter().filter(|t| t.reward == 1).count();
    Ok(EvalReport {
        strategy,
        episodes: trajectories.len(),
        successes,
        success_rate: successes as f64 / n,
        mean_turns: trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / n,
        mean_tokens: tokens_by_formula.get(strategy),
        tokens_by_formula,
    })
}

/// Evaluates one strategy on the config's held-out tasks.
pub fn evaluate(
    cfg: &RunConfig,
    strategy: Strategy,
    params: &PolicyParams,
) -> Result<(EvalReport, Vec<Trajectory>), HarnessError> {
    if cfg.eval_episodes == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    let tasks = held_out_tasks(&cfg.difficulty, cfg.seed, cfg.eval_episodes)?;
    let policy = match strategy {
        Strategy::NoMemory => MemoryPolicy::NoMemory,
        Strategy::FullContext => MemoryPolicy::FullContext,
        Strategy::Active => MemoryPolicy::Active { params, capacity: cfg.capacity },
    };
    let trajs = run_episodes(&tasks, cfg.skin, &cfg.executor(), policy, cfg.seed, cfg.execution)?;
    Ok((summarize(strategy, &trajs, cfg.skin, &cfg.costs)?, trajs))
}
