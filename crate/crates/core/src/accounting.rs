//! Per-turn context lengths for the three context-assembly strategies.
//!
//! Turns are 1-indexed. With `S` the system prompt, `O_t` the current
//! observation, `P` the placeholder replacing a past observation, `U` the
//! objective, `(Re_k, A_k)` the assistant reasoning and action of turn `k`,
//! `R_k` the retrieval of turn `k` and `M_t` the curated memory:
//!
//! ```text
//! No Memory            C_t = S + O_t + U
//! Full Context, web    C_t = S + O_t + (t-1) P + U + sum_{k<t} (Re_k + A_k)
//! Full Context, search C_t = S + sum_{k<=t} R_k + U + sum_{k<t} (Re_k + A_k)
//! Active, web          C_t = S + O_t + U + M_t
//! Active, search       C_t = S + R_t + U + M_t
//! ```
//!
//! The search variant of Full Context counts retrievals up to and including
//! the current turn, while the web variant counts placeholders only for past
//! turns. Both are kept exactly as stated.
//!
//! All arithmetic is exact on `u64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Skin;
use crate::grpo::Trajectory;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AccountingError {
    #[error("turn index must be >= 1, got {0}")]
    TurnZero(usize),
    #[error("{what} history has {got} entries, turn {turn} needs {expected}")]
    HistoryLength { what: &'static str, turn: usize, expected: usize, got: usize },
    #[error("trajectory has no turns")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoMemory,
    FullContext,
    Active,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::NoMemory, Strategy::FullContext, Strategy::Active];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoMemory => "no_memory",
            Strategy::FullContext => "full_context",
            Strategy::Active => "active",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Token lengths feeding one turn's formula.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthParts {
    pub sys_len: u64,
    /// `O_t` for web; for the Active search formula this is `R_t`.
    pub obs_len: u64,
    pub placeholder_len: u64,
    pub objective_len: u64,
    /// `(Re_k, A_k)` for the turns before the current one.
    pub assistant_lens: Vec<(u64, u64)>,
    /// `R_k` for turns `1..=t`.
    pub retrieval_lens: Vec<u64>,
    pub memory_len: u64,
}

fn check_history(what: &'static str, turn: usize, expected: usize, got: usize) -> Result<(), AccountingError> {
    if expected == got {
        Ok(())
    } else {
        Err(AccountingError::HistoryLength { what, turn, expected, got })
    }
}

fn assistant_sum(parts: &LengthParts) -> u64 {
    parts.assistant_lens.iter().map(|(re, a)| re + a).sum()
}

pub fn ctx_no_memory(parts: &LengthParts) -> u64 {
    parts.sys_len + parts.obs_len + parts.objective_len
}

pub fn ctx_full_web(parts: &LengthParts, t: usize) -> Result<u64, AccountingError> {
    if t == 0 {
        return Err(AccountingError::TurnZero(t));
    }
    check_history("assistant", t, t - 1, parts.assistant_lens.len())?;
    Ok(parts.sys_len + parts.obs_len + (t as u64 - 1) * parts.placeholder_len + parts.objective_len + assistant_sum(parts))
}

pub fn ctx_full_search(parts: &LengthParts, t: usize) -> Result<u64, AccountingError> {
    if t == 0 {
        return Err(AccountingError::TurnZero(t));
    }
    check_history("assistant", t, t - 1, parts.assistant_lens.len())?;
    check_history("retrieval", t, t, parts.retrieval_lens.len())?;
    let retrieved: u64 = parts.retrieval_lens.iter().sum();
    Ok(parts.sys_len + retrieved + parts.objective_len + assistant_sum(parts))
}

pub fn ctx_active_web(parts: &LengthParts) -> u64 {
    parts.sys_len + parts.obs_len + parts.objective_len + parts.memory_len
}

pub fn ctx_active_search(parts: &LengthParts) -> u64 {
    parts.sys_len + parts.obs_len + parts.objective_len + parts.memory_len
}

/// Fixed prompt-side costs that are not carried by info units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptCosts {
    pub system_len: u64,
    pub placeholder_len: u64,
    pub reasoning_len: u64,
    pub action_len: u64,
}

impl Default for PromptCosts {
    fn default() -> Self {
        PromptCosts { system_len: 64, placeholder_len: 10, reasoning_len: 32, action_len: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextReport {
    pub strategy: Strategy,
    pub skin: Skin,
    pub per_turn: Vec<u64>,
    pub total: u64,
}

/// One `{task_id, strategy, turn, C_t, total}` row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRow {
    pub task_id: u64,
    pub strategy: Strategy,
    pub turn: usize,
    #[serde(rename = "C_t")]
    pub c_t: u64,
    pub total: u64,
}

impl ContextReport {
    pub fn rows(&self, task_id: u64) -> Vec<ContextRow> {
        self.per_turn
            .iter()
            .enumerate()
            .map(|(i, &c)| ContextRow { task_id, strategy: self.strategy, turn: i + 1, c_t: c, total: self.total })
            .collect()
    }
}

/// Per-turn lengths of `trajectory` under `strategy`. Observation and memory
/// lengths exclude the instruction unit, which is counted once as `U`.
pub fn trajectory_report(
    trajectory: &Trajectory,
    strategy: Strategy,
    skin: Skin,
    costs: &PromptCosts,
) -> Result<ContextReport, AccountingError> {
    if trajectory.steps.is_empty() {
        return Err(AccountingError::EmptyTrajectory);
    }
    let mut parts = LengthParts {
        sys_len: costs.system_len,
        placeholder_len: costs.placeholder_len,
        objective_len: trajectory.objective_len,
        ..LengthParts::default()
    };
    let mut per_turn = Vec::with_capacity(trajectory.steps.len());
    for (i, step) in trajectory.steps.iter().enumerate() {
        let t = i + 1;
        parts.obs_len = step.input.observation.content_tokens();
        parts.memory_len = step.memory.content_tokens();
        parts.retrieval_lens.push(parts.obs_len);
        let c = match (strategy, skin) {
            (Strategy::NoMemory, _) => ctx_no_memory(&parts),
            (Strategy::FullContext, Skin::Web) => ctx_full_web(&parts, t)?,
            (Strategy::FullContext, Skin::Search) => ctx_full_search(&parts, t)?,
            (Strategy::Active, Skin::Web) => ctx_active_web(&parts),
            (Strategy::Active, Skin::Search) => ctx_active_search(&parts),
        };
        per_turn.push(c);
        parts.assistant_lens.push((costs.reasoning_len, costs.action_len));
    }
    let total = per_turn.iter().sum();
    Ok(ContextReport { strategy, skin, per_turn, total })
}
