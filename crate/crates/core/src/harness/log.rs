//! Line-delimited trajectory log.
//!
//! One JSON record per turn; the records of a trajectory are contiguous, start
//! at step 0 and end with a record whose `terminal` flag is set. `turn` is the
//! 1-indexed turn used by the context-length formulas (`turn = step + 1`).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::accounting::{trajectory_report, PromptCosts, Strategy};
use crate::env::{Skin, UnitKind};
use crate::grpo::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRef {
    pub id: u64,
    pub kind: UnitKind,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnContext {
    pub no_memory: u64,
    pub full_context: u64,
    pub active: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLogRecord {
    /// Training iteration, absent for evaluation runs.
    pub iteration: Option<usize>,
    /// Index of the trajectory within the log.
    pub trajectory: usize,
    pub task_id: u64,
    pub strategy: Strategy,
    pub step: usize,
    pub turn: usize,
    pub observation: Vec<UnitRef>,
    /// Unit ids of the curated memory handed to the executor.
    pub memory: Vec<u64>,
    pub memory_tokens: u64,
    /// Keep bits in canonical candidate order, as a `0`/`1` string.
    pub decision: String,
    pub logprob: f64,
    pub action: String,
    /// Set on the terminal record only.
    pub reward: Option<u8>,
    pub terminal: bool,
    pub context: TurnContext,
}

pub fn records_for(
    traj: &Trajectory,
    iteration: Option<usize>,
    index: usize,
    skin: Skin,
    costs: &PromptCosts,
) -> Result<Vec<TrajectoryLogRecord>, HarnessError> {
    let reports = Strategy::ALL.map(|s| trajectory_report(traj, s, skin, costs));
    let [no_mem, full, active] = reports;
    let (no_mem, full, active) = (no_mem?, full?, active?);
    let last = traj.steps.len() - 1;
    Ok(traj
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| TrajectoryLogRecord {
            iteration,
            trajectory: index,
            task_id: traj.task_id,
            strategy: traj.strategy,
            step: t,
            turn: t + 1,
            observation: s
                .input
                .observation
                .units
                .iter()
                .map(|u| UnitRef { id: u.id, kind: u.kind, cost: u.token_cost })
                .collect(),
            memory: s.memory.units().iter().map(|u| u.id).collect(),
            memory_tokens: s.memory.token_total(),
            decision: s.decision.keep.iter().map(|&k| if k { '1' } else { '0' }).collect(),
            logprob: s.logprob,
            action: s.action.to_string(),
            reward: (t == last).then_some(traj.reward),
            terminal: t == last,
            context: TurnContext {
                no_memory: no_mem.per_turn[t],
                full_context: full.per_turn[t],
                active: active.per_turn[t],
            },
        })
        .collect())
}

/// Appends the JSON lines for `records` to `out`.
pub fn push_jsonl(out: &mut Vec<u8>, records: &[TrajectoryLogRecord]) {
    for r in records {
        serde_json::to_writer(&mut *out, r).expect("log record serialises");
        out.push(b'\n');
    }
}

/// Reads and validates a log, grouping records by trajectory.
pub fn read_log(path: &Path) -> Result<Vec<Vec<TrajectoryLogRecord>>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut groups: Vec<Vec<TrajectoryLogRecord>> = Vec::new();
    let mut open = false;
    let mut lines = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        let n = i + 1;
        lines = n;
        let err = |message: String| HarnessError::Log { line: n, message };
        if line.trim().is_empty() {
            return Err(err("blank line".into()));
        }
        let rec: TrajectoryLogRecord = serde_json::from_str(&line).map_err(|e| err(format!("unreadable record ({e})")))?;
        if open {
            let cur = groups.last_mut().expect("open trajectory");
            let prev = cur.last().expect("non-empty");
            if rec.trajectory != prev.trajectory || rec.step != prev.step + 1 {
                return Err(err(format!(
                    "trajectory {} ends without a terminal record (next record: trajectory {} step {})",
                    prev.trajectory, rec.trajectory, rec.step
                )));
            }
            cur.push(rec);
        } else {
            if rec.step != 0 {
                return Err(err(format!("trajectory {} starts at step {}", rec.trajectory, rec.step)));
            }
            groups.push(vec![rec]);
        }
        let cur = groups.last().expect("non-empty");
        let last = cur.last().expect("non-empty");
        if last.turn != last.step + 1 {
            return Err(err("turn must equal step + 1".into()));
        }
        if last.terminal != last.reward.is_some() {
            return Err(err("reward must be present exactly on the terminal record".into()));
        }
        open = !last.terminal;
    }
    if open {
        return Err(HarnessError::Log { line: lines, message: "log is truncated: last trajectory has no terminal record".into() });
    }
    Ok(groups)
}

/// Turn-by-turn rendering: memory update, latest observation, then action.
pub fn render(groups: &[Vec<TrajectoryLogRecord>]) -> String {
    let mut out = String::new();
    for g in groups {
        let head = &g[0];
        let _ = writeln!(
            out,
            "=== trajectory {} | task {} | strategy {}{} ===",
            head.trajectory,
            head.task_id,
            head.strategy,
            head.iteration.map(|i| format!(" | iteration {i}")).unwrap_or_default()
        );
        for r in g {
            let _ = writeln!(out, "--- Turn {} ---", r.turn);
            let ids: Vec<String> = r.memory.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "1. Memory Update: [{}] ({} tokens)", ids.join(", "), r.memory_tokens);
            if !r.decision.is_empty() {
                let _ = writeln!(out, "   decision {} logprob {:.6}", r.decision, r.logprob);
            }
            let obs_tokens: u64 = r.observation.iter().map(|u| u64::from(u.cost)).sum();
            let count = |k: UnitKind| r.observation.iter().filter(|u| u.kind == k).count();
            let _ = writeln!(
                out,
                "2. Latest Observation: {} units, {} tokens (anchors {}, noise {}, traps {})",
                r.observation.len(),
                obs_tokens,
                count(UnitKind::Anchor),
                count(UnitKind::Noise),
                count(UnitKind::TrapNoise)
            );
            let _ = writeln!(out, "3. Action: {}", r.action);
            let _ = writeln!(
                out,
                "   context tokens: no_memory {} | full_context {} | active {}",
                r.context.no_memory, r.context.full_context, r.context.active
            );
            if let Some(reward) = r.reward {
                let _ = writeln!(out, "Reward: {reward}");
            }
        }
    }
    out
}
