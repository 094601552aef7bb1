//! The frozen task executor and the augmented environment.
//!
//! From the curator's point of view the executor is part of the environment:
//! [`augmented_step`] composes the executor's action choice with the
//! environment transition, so the only thing the curator controls is the
//! memory it hands over.

mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::MemoryState;
use crate::env::{EnvAction, EnvError, EnvState, Environment, Observation, UnitKind};
use crate::seed::{self, Stream};

pub use remote::{
    render_instruction, render_memory, render_observation, ExecutorRequest, ExecutorResponse, HttpTransport,
    RemoteEndpoint, RemoteExecutor, Transport, TransportError,
};

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("trap probability {0} outside [0, 1]")]
    TrapProbability(f64),
    #[error("remote executor failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("remote executor returned an unparseable action: {0}")]
    MalformedAction(String),
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

/// Deterministic stand-in for a frozen foundation model.
///
/// At the consume step it answers with the required set when every required
/// payload is visible in memory or the observation. Otherwise, once
/// `trap_threshold` trap units sit in memory, it hallucinates an answer from
/// them with probability `trap_prob`. In every other case it takes the
/// skin's progress action toward the next unrevealed anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOracle {
    trap_threshold: usize,
    trap_prob: f64,
    seed: u64,
}

impl ScriptedOracle {
    pub fn new(trap_threshold: usize, trap_prob: f64, seed: u64) -> Result<Self, ExecutorError> {
        if !(0.0..=1.0).contains(&trap_prob) {
            return Err(ExecutorError::TrapProbability(trap_prob));
        }
        Ok(ScriptedOracle { trap_threshold, trap_prob, seed })
    }

    /// Oracle that never falls for traps.
    pub fn trap_free(seed: u64) -> Self {
        ScriptedOracle { trap_threshold: usize::MAX, trap_prob: 0.0, seed }
    }

    pub fn trap_threshold(&self) -> usize {
        self.trap_threshold
    }

    pub fn trap_prob(&self) -> f64 {
        self.trap_prob
    }

    /// `stream` identifies the trajectory; the trap draw for a step depends
    /// only on `(seed, stream, step)`.
    pub fn act(&self, env: &Environment, memory: &MemoryState, obs: &Observation, stream: u64) -> EnvAction {
        let task = &env.task;
        let step = obs.step;
        if step == task.consume_step {
            let visible = |p: u64| {
                memory.units().iter().chain(&obs.units).any(|u| u.kind == UnitKind::Anchor && u.payload == p)
            };
            if task.required_anchors.iter().all(|a| visible(a.payload)) {
                return EnvAction::Answer(task.answer_set());
            }
        }
        if memory.count_kind(UnitKind::TrapNoise) >= self.trap_threshold {
            let u = seed::unit_f64(seed::derive(self.seed, Stream::Executor, &[stream, u64::from(step)]));
            if u < self.trap_prob {
                let decoys = memory.units().iter().filter(|u| u.kind == UnitKind::TrapNoise).map(|u| u.payload).collect();
                return EnvAction::Answer(decoys);
            }
        }
        let target = task
            .required_anchors
            .iter()
            .filter(|a| a.reveal_step > step)
            .min_by_key(|a| a.reveal_step)
            .map_or(task.instruction_unit.payload, |a| a.payload);
        env.skin.progress_action(target)
    }
}

#[derive(Debug, Clone)]
pub enum ExecutorPolicy {
    ScriptedOracle(ScriptedOracle),
    Remote(RemoteExecutor),
}

impl ExecutorPolicy {
    pub fn act(
        &self,
        env: &Environment,
        memory: &MemoryState,
        obs: &Observation,
        stream: u64,
    ) -> Result<EnvAction, ExecutorError> {
        match self {
            ExecutorPolicy::ScriptedOracle(o) => Ok(o.act(env, memory, obs, stream)),
            ExecutorPolicy::Remote(r) => r.act(env, memory, obs),
        }
    }
}

impl From<ScriptedOracle> for ExecutorPolicy {
    fn from(o: ScriptedOracle) -> Self {
        ExecutorPolicy::ScriptedOracle(o)
    }
}

/// Environment with the executor folded into its transition.
#[derive(Debug, Clone)]
pub struct AugmentedEnv {
    pub env: Environment,
    pub executor: ExecutorPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedTransition {
    pub state: EnvState,
    pub observation: Observation,
    pub done: bool,
    pub reward: u8,
    pub action: EnvAction,
}

impl AugmentedEnv {
    pub fn new(env: Environment, executor: impl Into<ExecutorPolicy>) -> Self {
        AugmentedEnv { env, executor: executor.into() }
    }
}

/// Executor action on `(memory, current observation)` followed by the
/// environment step.
pub fn augmented_step(
    aug: &AugmentedEnv,
    state: &EnvState,
    memory: &MemoryState,
    stream: u64,
) -> Result<AugmentedTransition, StepError> {
    if state.done {
        return Err(EnvError::EpisodeDone.into());
    }
    let action = aug.executor.act(&aug.env, memory, &state.observation, stream)?;
    let tr = aug.env.step(state, &action)?;
    Ok(AugmentedTransition { state: tr.state, observation: tr.observation, done: tr.done, reward: tr.reward, action })
}
