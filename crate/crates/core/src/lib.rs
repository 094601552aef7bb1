//! Trainable working-memory curation for agents driven by a frozen executor.
//!
//! The crate is organised around the interaction loop of a curator/executor
//! pair:
//!
//! - [`env`]: synthetic partially observable environments whose observations
//!   bury a few reasoning anchors under token-heavy noise.
//! - [`curation`]: the working-memory model and the trainable keep/drop
//!   curator policy.
//! - [`executor`]: the frozen task executor and the wrapper that folds it into
//!   the environment's transition dynamics.
//! - [`grpo`]: multi-turn group-relative policy optimisation of the curator.
//! - [`accounting`]: per-turn context-length formulas for the No Memory, Full
//!   Context and Active configurations.
//! - [`harness`]: configuration, evaluation, trajectory logs and the CLI
//!   plumbing.
//!
//! Rollouts, evaluation episodes and gradient evaluation are data-parallel.
//! With the `parallel` feature (on by default) they run on rayon; see
//! [`exec::Execution`].

pub mod accounting;
pub mod curation;
pub mod env;
pub mod exec;
pub mod executor;
pub mod grpo;
pub mod harness;
pub mod seed;

pub use accounting::{ContextReport, LengthParts, Strategy};
pub use curation::{CurationDecision, CurationInput, FeatureBasis, MemoryState, PolicyParams};
pub use env::{Difficulty, EnvAction, EnvState, Environment, InfoUnit, Observation, Skin, TaskSpec, UnitKind};
pub use exec::Execution;
pub use executor::{AugmentedEnv, ExecutorPolicy, ScriptedOracle};
pub use grpo::{GroupBatch, GrpoConfig, Trajectory};
