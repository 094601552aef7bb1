//! Run configuration (TOML).
//!
//! ```toml
//! seed = 42                 # required; determines every random stream
//! strategy = "active"       # no_memory | full_context | active
//! execution = "parallel"    # sequential | parallel
//!
//! [env]
//! skin = "web"              # required: web | search
//! anchors = 1               # defaults depend on the skin
//! horizon = 5
//! noise_per_step = 20
//! trap_noise_per_step = 1
//!
//! [curator]
//! capacity = 8
//! basis = ["kind_anchor", "kind_noise", ...]   # default: full basis
//! init_params = "theta0.json"                  # default: all zeros
//!
//! [executor]
//! trap_threshold = 3
//! trap_prob = 0.8
//! # [executor.remote]  url = "http://...", timeout_secs = 60, retries = 2, max_in_flight = 4
//!
//! [grpo]
//! group_size = 4            # default 4 for web, 8 for search
//! learning_rate = 1e-6
//! kl_beta = 0.001
//! clip_ratio = 0.2
//! adv_epsilon = 1e-8
//! iterations = 100
//! batch_size = 8
//!
//! [eval]
//! episodes = 200
//!
//! [accounting]
//! system_len = 64
//! placeholder_len = 10
//! reasoning_len = 32
//! action_len = 8
//!
//! [output]
//! dir = "runs/default"
//! trajectory_log = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::accounting::{PromptCosts, Strategy};
use crate::curation::FeatureBasis;
use crate::env::{Difficulty, Skin, HORIZON_CAP};
use crate::exec::Execution;
use crate::executor::{ExecutorPolicy, RemoteEndpoint, RemoteExecutor, ScriptedOracle};
use crate::grpo::GrpoConfig;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub execution: Execution,
    pub env: EnvSection,
    #[serde(default)]
    pub curator: CuratorSection,
    #[serde(default)]
    pub executor: ExecutorSection,
    #[serde(default)]
    pub grpo: GrpoSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub accounting: PromptCosts,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_strategy() -> Strategy {
    Strategy::Active
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub skin: Skin,
    pub anchors: Option<u32>,
    pub horizon: Option<u32>,
    pub noise_per_step: Option<u32>,
    pub trap_noise_per_step: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuratorSection {
    pub capacity: usize,
    pub basis: FeatureBasis,
    pub init_params: Option<PathBuf>,
}

impl Default for CuratorSection {
    fn default() -> Self {
        CuratorSection { capacity: 8, basis: FeatureBasis::full(), init_params: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutorSection {
    pub trap_threshold: usize,
    pub trap_prob: f64,
    pub remote: Option<RemoteEndpoint>,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        ExecutorSection { trap_threshold: 3, trap_prob: 0.8, remote: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub group_size: Option<usize>,
    pub adv_epsilon: f64,
    pub clip_ratio: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let d = GrpoConfig::default();
        GrpoSection {
            group_size: None,
            adv_epsilon: d.adv_epsilon,
            clip_ratio: d.clip_ratio,
            kl_beta: d.kl_beta,
            learning_rate: d.learning_rate,
            iterations: d.iterations,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trajectory_log: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs/default"), trajectory_log: true }
    }
}

/// Fully resolved configuration; every default filled in and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub execution: Execution,
    pub skin: Skin,
    pub difficulty: Difficulty,
    pub capacity: usize,
    pub basis: FeatureBasis,
    pub init_params: Option<PathBuf>,
    pub trap_threshold: usize,
    pub trap_prob: f64,
    pub remote: Option<RemoteEndpoint>,
    pub grpo: GrpoConfig,
    pub eval_episodes: usize,
    pub costs: PromptCosts,
    pub output_dir: PathBuf,
    pub trajectory_log: bool,
}

/// Skin-dependent environment defaults.
pub fn default_difficulty(skin: Skin) -> Difficulty {
    match skin {
        Skin::Web => Difficulty { anchors: 1, horizon: 5, noise_per_step: 20, trap_noise_per_step: 1 },
        Skin::Search => Difficulty { anchors: 2, horizon: 8, noise_per_step: 20, trap_noise_per_step: 1 },
    }
}

fn invalid(field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid { field: field.to_string(), message: msg.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // relative init_params resolve against the config's directory
        if let (Some(p), Some(dir)) = (cfg.init_params.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn resolve(raw: RawConfig) -> Result<Self, HarnessError> {
        let skin = raw.env.skin;
        let d = default_difficulty(skin);
        let difficulty = Difficulty {
            anchors: raw.env.anchors.unwrap_or(d.anchors),
            horizon: raw.env.horizon.unwrap_or(d.horizon),
            noise_per_step: raw.env.noise_per_step.unwrap_or(d.noise_per_step),
            trap_noise_per_step: raw.env.trap_noise_per_step.unwrap_or(d.trap_noise_per_step),
        };
        if difficulty.anchors == 0 {
            return Err(invalid("env.anchors", "must be >= 1"));
        }
        if difficulty.horizon > HORIZON_CAP {
            return Err(invalid("env.horizon", format!("must be <= {HORIZON_CAP}")));
        }
        if difficulty.horizon < difficulty.anchors + 1 {
            return Err(invalid("env.horizon", "must be at least env.anchors + 1"));
        }
        if raw.curator.capacity == 0 {
            return Err(invalid("curator.capacity", "must be >= 1"));
        }
        if raw.curator.basis.dim() == 0 {
            return Err(invalid("curator.basis", "must name at least one feature"));
        }
        if !(0.0..=1.0).contains(&raw.executor.trap_prob) {
            return Err(invalid("executor.trap_prob", "must lie in [0, 1]"));
        }
        let g = &raw.grpo;
        let grpo = GrpoConfig {
            group_size: g.group_size.unwrap_or_else(|| GrpoConfig::default_group_size(skin)),
            adv_epsilon: g.adv_epsilon,
            clip_ratio: g.clip_ratio,
            kl_beta: g.kl_beta,
            learning_rate: g.learning_rate,
            iterations: g.iterations,
            batch_size: g.batch_size,
            seed: raw.seed,
        };
        if grpo.group_size < 2 {
            return Err(invalid("grpo.group_size", "must be >= 2"));
        }
        if let Err(e) = grpo.validate() {
            let msg = e.to_string();
            let field = msg.split_whitespace().find(|w| w.starts_with("grpo.")).unwrap_or("grpo").to_string();
            return Err(HarnessError::Invalid { field, message: msg });
        }
        Ok(RunConfig {
            seed: raw.seed,
            strategy: raw.strategy,
            execution: raw.execution,
            skin,
            difficulty,
            capacity: raw.curator.capacity,
            basis: raw.curator.basis,
            init_params: raw.curator.init_params,
            trap_threshold: raw.executor.trap_threshold,
            trap_prob: raw.executor.trap_prob,
            remote: raw.executor.remote,
            grpo,
            eval_episodes: raw.eval.episodes,
            costs: raw.accounting,
            output_dir: raw.output.dir,
            trajectory_log: raw.output.trajectory_log,
        })
    }

    /// Executor built from the config. The scripted oracle's stream is keyed by
    /// the master seed.
    pub fn executor(&self) -> ExecutorPolicy {
        match &self.remote {
            Some(ep) => ExecutorPolicy::Remote(RemoteExecutor::http(ep.clone())),
            None => ScriptedOracle::new(self.trap_threshold, self.trap_prob, seed::derive(self.seed, Stream::Executor, &[]))
                .expect("trap_prob validated")
                .into(),
        }
    }
}
