//! Multi-turn group-relative policy optimisation of the curator.
//!
//! For one task, `G` trajectories are rolled out under a frozen snapshot of
//! the curator. Rewards are standardised within the group and the
//! trajectory-level advantage is broadcast to every turn. The objective is
//!
//! ```text
//! J = mean_i (1/L_i) sum_t [ min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i) - beta KL_t ]
//! ```
//!
//! where `rho_t` is the ratio of the current to the sampling probability of
//! the turn's curation decision and `KL_t` is the exact Bernoulli KL to the
//! reference policy summed over the turn's decisions along the realised
//! path. Gradients are closed form and exist only for the curator weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{trajectory_report, AccountingError, PromptCosts, Strategy};
use crate::curation::{
    candidate_list, curate, decision_path, log_sigmoid, sigmoid, CurationDecision, CurationError, CurationInput,
    DecisionPath, MemoryState, PolicyParams,
};
use crate::env::{generate_task, Difficulty, EnvAction, EnvError, Environment, Skin, TaskSpec};
use crate::exec::Execution;
use crate::executor::{augmented_step, AugmentedEnv, ExecutorError, ExecutorPolicy, StepError};
use crate::seed::{self, Stream};

/// Exponent bound applied to `ln rho` before exponentiation.
pub const RATIO_LOG_CLAMP: f64 = 30.0;

/// Replacement rollouts allowed per trajectory slot after executor aborts.
pub const MAX_ROLLOUT_ATTEMPTS: u64 = 3;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("group mixes tasks {0} and {1}")]
    MixedTasks(u64, u64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("advantages not filled for group")]
    AdvantagesMissing,
    #[error("trajectory slot {slot} aborted {attempts} times; last error: {last}")]
    AbortLimit { slot: usize, attempts: u64, last: ExecutorError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub adv_epsilon: f64,
    pub clip_ratio: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Tasks per update; each task contributes one group.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 4,
            adv_epsilon: 1e-8,
            clip_ratio: 0.2,
            kl_beta: 0.001,
            learning_rate: 1e-6,
            iterations: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    /// Default rollout count: 4 for web, 8 for search.
    pub fn default_group_size(skin: Skin) -> usize {
        match skin {
            Skin::Web => 4,
            Skin::Search => 8,
        }
    }

    pub fn for_skin(skin: Skin) -> Self {
        GrpoConfig { group_size: Self::default_group_size(skin), ..GrpoConfig::default() }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.adv_epsilon.is_nan() || self.adv_epsilon <= 0.0 {
            return bad("grpo.adv_epsilon must be > 0");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("grpo.clip_ratio must lie in (0, 1)");
        }
        if self.kl_beta.is_nan() || self.kl_beta < 0.0 {
            return bad("grpo.kl_beta must be >= 0");
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("grpo.learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("grpo.batch_size must be >= 1");
        }
        Ok(())
    }
}

/// How the memory handed to the executor is assembled each turn.
#[derive(Debug, Clone, Copy)]
pub enum MemoryPolicy<'a> {
    /// Memory holds only the instruction.
    NoMemory,
    /// Memory accumulates every unit seen so far, without limit.
    FullContext,
    /// The curator rewrites memory under a capacity of `capacity` units.
    Active { params: &'a PolicyParams, capacity: usize },
}

impl MemoryPolicy<'_> {
    pub fn strategy(&self) -> Strategy {
        match self {
            MemoryPolicy::NoMemory => Strategy::NoMemory,
            MemoryPolicy::FullContext => Strategy::FullContext,
            MemoryPolicy::Active { .. } => Strategy::Active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// `(M_t, o_t, a_{t-1})`.
    pub input: CurationInput,
    pub decision: CurationDecision,
    /// Curated memory `m_t` seen by the executor.
    pub memory: MemoryState,
    pub action: EnvAction,
    /// Log-probability of `decision` under the sampling parameters.
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u64,
    /// Token cost of the instruction unit.
    pub objective_len: u64,
    pub strategy: Strategy,
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
    pub reward: u8,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs one episode to termination.
pub fn rollout_trajectory(aug: &AugmentedEnv, policy: MemoryPolicy<'_>, traj_seed: u64) -> Result<Trajectory, StepError> {
    let task = &aug.env.task;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(traj_seed, Stream::Rollout, &[]));
    let (mut state, _) = aug.env.reset();
    let mut memory = match policy {
        MemoryPolicy::Active { capacity, .. } => MemoryState::new(capacity),
        _ => MemoryState::unbounded(),
    };
    let mut prev_action = None;
    let mut steps = Vec::new();
    loop {
        let input = CurationInput { memory, observation: state.observation.clone(), prev_action };
        let (curated, decision) = match policy {
            MemoryPolicy::Active { params, .. } => curate(params, &input, &mut rng),
            MemoryPolicy::NoMemory => {
                let m = MemoryState::from_units(vec![task.instruction_unit.clone()], 1).expect("single unit");
                (m, CurationDecision::empty())
            }
            MemoryPolicy::FullContext => {
                let units = candidate_list(&input).into_iter().map(|c| c.unit.clone()).collect();
                let m = MemoryState::from_units(units, usize::MAX).expect("deduplicated candidates");
                (m, CurationDecision::empty())
            }
        };
        let tr = augmented_step(aug, &state, &curated, traj_seed)?;
        let logprob = decision.total_logprob();
        steps.push(TrajectoryStep { input, decision, memory: curated.clone(), action: tr.action.clone(), logprob });
        if tr.done {
            return Ok(Trajectory {
                task_id: task.task_id,
                objective_len: u64::from(task.instruction_unit.token_cost),
                strategy: policy.strategy(),
                seed: traj_seed,
                steps,
                reward: tr.reward,
            });
        }
        memory = curated;
        prev_action = Some(tr.action);
        state = tr.state;
    }
}

/// `G` trajectories of one task plus their advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, GrpoError> {
        if trajectories.len() < 2 {
            return Err(GrpoError::GroupTooSmall(trajectories.len()));
        }
        let id = trajectories[0].task_id;
        if let Some(t) = trajectories.iter().find(|t| t.task_id != id) {
            return Err(GrpoError::MixedTasks(id, t.task_id));
        }
        Ok(GroupBatch { trajectories, advantages: Vec::new() })
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| f64::from(t.reward)).collect()
    }

    pub fn fill_advantages(&mut self, adv_epsilon: f64) -> Result<(), GrpoError> {
        self.advantages = advantages(&self.rewards(), adv_epsilon)?;
        Ok(())
    }
}

/// Rolls out `group_size` trajectories of `aug`'s task. Trajectory `g` uses
/// seed `derive(group_seed, Rollout, [g, attempt])`; an executor abort
/// discards the trajectory and retries the slot with the next attempt.
pub fn rollout_group(
    aug: &AugmentedEnv,
    policy: MemoryPolicy<'_>,
    group_size: usize,
    group_seed: u64,
    execution: Execution,
) -> Result<GroupBatch, GrpoError> {
    if group_size < 2 {
        return Err(GrpoError::GroupTooSmall(group_size));
    }
    let results = execution.map(group_size, |g| {
        let mut attempt = 0;
        loop {
            let s = seed::derive(group_seed, Stream::Rollout, &[g as u64, attempt]);
            match rollout_trajectory(aug, policy, s) {
                Ok(t) => return Ok(t),
                Err(StepError::Env(e)) => return Err(GrpoError::Env(e)),
                Err(StepError::Executor(e)) => {
                    attempt += 1;
                    if attempt >= MAX_ROLLOUT_ATTEMPTS {
                        return Err(GrpoError::AbortLimit { slot: g, attempts: attempt, last: e });
                    }
                }
            }
        }
    });
    GroupBatch::new(results.into_iter().collect::<Result<_, _>>()?)
}

/// Group-standardised rewards, `(R_i - mean) / (std + eps)` with the
/// population standard deviation.
pub fn advantages(rewards: &[f64], adv_epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + adv_epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

pub fn importance_ratio(
    params: &PolicyParams,
    old_logprob: f64,
    input: &CurationInput,
    decision: &CurationDecision,
) -> Result<f64, GrpoError> {
    let lp = crate::curation::logprob(params, input, decision)?;
    Ok(ratio_from_logs(lp - old_logprob))
}

fn ratio_from_logs(diff: f64) -> f64 {
    diff.clamp(-RATIO_LOG_CLAMP, RATIO_LOG_CLAMP).exp()
}

pub fn clipped_surrogate(rho: f64, advantage: f64, clip_ratio: f64) -> f64 {
    let clipped = rho.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
    (rho * advantage).min(clipped * advantage)
}

/// `KL(Bern(sigma(z_p)) || Bern(sigma(z_q)))` from logits.
pub fn bernoulli_kl_logits(z_p: f64, z_q: f64) -> f64 {
    let p = sigmoid(z_p);
    let kl = p * (log_sigmoid(z_p) - log_sigmoid(z_q)) + (1.0 - p) * (log_sigmoid(-z_p) - log_sigmoid(-z_q));
    kl.max(0.0)
}

/// Exact KL to the reference policy for one turn, summed over the turn's
/// decisions along the realised path.
pub fn kl_step(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    input: &CurationInput,
    decision: &CurationDecision,
) -> Result<f64, GrpoError> {
    let path = decision_path(params.basis(), input, decision)?;
    Ok(path.features.iter().map(|f| bernoulli_kl_logits(params.logit(f), ref_params.logit(f))).sum())
}

struct TurnTerms {
    surrogate: f64,
    kl: f64,
    grad: Vec<f64>,
}

fn turn_terms(
    path: &DecisionPath,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    old_logprob: f64,
    advantage: f64,
    cfg: &GrpoConfig,
) -> TurnTerms {
    let dim = params.dim();
    let mut lp = 0.0;
    let mut dlp = vec![0.0; dim];
    let mut kl = 0.0;
    let mut dkl = vec![0.0; dim];
    for (f, &keep) in path.features.iter().zip(&path.keep) {
        let z = params.logit(f);
        let z_ref = ref_params.logit(f);
        let p = sigmoid(z);
        lp += if keep { log_sigmoid(z) } else { log_sigmoid(-z) };
        kl += bernoulli_kl_logits(z, z_ref);
        // d/dz log p(bit) = bit - p;  d/dz KL = p (1 - p) (z - z_ref)
        let score = f64::from(u8::from(keep)) - p;
        let kl_slope = p * (1.0 - p) * (z - z_ref);
        for k in 0..dim {
            dlp[k] += score * f[k];
            dkl[k] += kl_slope * f[k];
        }
    }
    let diff = lp - old_logprob;
    let rho = ratio_from_logs(diff);
    let ratio_live = diff.abs() < RATIO_LOG_CLAMP;
    let eps = cfg.clip_ratio;
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * advantage;
    // at equality the unclipped branch is differentiated
    let (surrogate, surrogate_live) = if unclipped <= clipped { (unclipped, true) } else { (clipped, false) };
    let coef = if surrogate_live && ratio_live { advantage * rho } else { 0.0 };
    let grad = (0..dim).map(|k| coef * dlp[k] - cfg.kl_beta * dkl[k]).collect();
    TurnTerms { surrogate, kl, grad }
}

/// Per-trajectory objective contribution, gradient and mean KL.
fn trajectory_terms(
    traj: &Trajectory,
    advantage: f64,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>, f64), GrpoError> {
    let dim = params.dim();
    let l = traj.steps.len();
    if l == 0 {
        return Ok((0.0, vec![0.0; dim], 0.0));
    }
    let mut obj = 0.0;
    let mut kl_sum = 0.0;
    let mut grad = vec![0.0; dim];
    for step in &traj.steps {
        let path = decision_path(params.basis(), &step.input, &step.decision)?;
        let t = turn_terms(&path, params, ref_params, step.logprob, advantage, cfg);
        obj += t.surrogate - cfg.kl_beta * t.kl;
        kl_sum += t.kl;
        for (g, d) in grad.iter_mut().zip(&t.grad) {
            *g += d;
        }
    }
    let inv = 1.0 / l as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((obj * inv, grad, kl_sum * inv))
}

/// Objective, gradient and mean per-turn KL over every trajectory of every
/// group, evaluated in parallel and reduced in trajectory order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub mean_kl: f64,
}

pub fn evaluate_objective(
    groups: &[GroupBatch],
    params: &PolicyParams,
    ref_params: &PolicyParams,
    cfg: &GrpoConfig,
    execution: Execution,
) -> Result<ObjectiveEval, GrpoError> {
    let mut items = Vec::new();
    for g in groups {
        if g.advantages.len() != g.trajectories.len() {
            return Err(GrpoError::AdvantagesMissing);
        }
        items.extend(g.trajectories.iter().zip(g.advantages.iter().copied()));
    }
    if items.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let per = execution.map_slice(&items, |(t, a)| trajectory_terms(t, *a, params, ref_params, cfg));
    let n = items.len() as f64;
    let mut objective = 0.0;
    let mut mean_kl = 0.0;
    let mut gradient = vec![0.0; params.dim()];
    for r in per {
        let (o, g, k) = r?;
        objective += o;
        mean_kl += k;
        for (acc, x) in gradient.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    gradient.iter_mut().for_each(|g| *g /= n);
    Ok(ObjectiveEval { objective: objective / n, gradient, mean_kl: mean_kl / n })
}

pub fn grpo_objective(
    batch: &GroupBatch,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    Ok(evaluate_objective(std::slice::from_ref(batch), params, ref_params, cfg, Execution::Sequential)?.objective)
}

pub fn grpo_gradient(
    batch: &GroupBatch,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    Ok(evaluate_objective(std::slice::from_ref(batch), params, ref_params, cfg, Execution::Sequential)?.gradient)
}

/// Supplies the training tasks for `(iteration, slot)`.
pub trait TaskSource: Sync {
    fn task(&self, iteration: usize, slot: usize) -> TaskSpec;
}

/// Freshly generated tasks of one difficulty, keyed by a master seed and a
/// stream tag so training and held-out tasks never share seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskFamily {
    pub difficulty: Difficulty,
    pub master: u64,
    pub stream: Stream,
}

impl TaskFamily {
    pub fn new(difficulty: Difficulty, master: u64, stream: Stream) -> Result<Self, EnvError> {
        generate_task(0, &difficulty)?;
        Ok(TaskFamily { difficulty, master, stream })
    }

    pub fn nth(&self, counters: &[u64]) -> TaskSpec {
        generate_task(seed::derive(self.master, self.stream, counters), &self.difficulty)
            .expect("difficulty validated at construction")
    }
}

impl TaskSource for TaskFamily {
    fn task(&self, iteration: usize, slot: usize) -> TaskSpec {
        self.nth(&[iteration as u64, slot as u64])
    }
}

/// Fixed task list, cycled.
impl TaskSource for Vec<TaskSpec> {
    fn task(&self, iteration: usize, slot: usize) -> TaskSpec {
        self[(iteration * 7919 + slot) % self.len()].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub tokens_active: f64,
    pub tokens_full_hypothetical: f64,
}

/// Everything a training run needs besides the initial parameters.
pub struct TrainSetup<'a> {
    pub cfg: &'a GrpoConfig,
    pub tasks: &'a dyn TaskSource,
    pub skin: Skin,
    pub executor: &'a ExecutorPolicy,
    pub capacity: usize,
    pub costs: PromptCosts,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<IterationMetrics>,
}

/// Strictly on-policy training: one gradient-ascent step per batch, the
/// sampling snapshot refreshed every batch and the reference policy fixed at
/// `params0`. `observe` sees each iteration's groups before the update.
pub fn train(
    setup: &TrainSetup<'_>,
    params0: PolicyParams,
    mut observe: impl FnMut(usize, &[GroupBatch]),
) -> Result<TrainOutcome, GrpoError> {
    let cfg = setup.cfg;
    cfg.validate()?;
    params0.validate()?;
    let ref_params = params0.clone();
    let mut params = params0;
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let policy = MemoryPolicy::Active { params: &params, capacity: setup.capacity };
        let groups: Vec<GroupBatch> = (0..cfg.batch_size)
            .map(|b| {
                let aug = AugmentedEnv { env: Environment::new(setup.tasks.task(it, b), setup.skin), executor: setup.executor.clone() };
                let group_seed = seed::derive(cfg.seed, Stream::Rollout, &[it as u64, b as u64]);
                let mut g = rollout_group(&aug, policy, cfg.group_size, group_seed, setup.execution)?;
                g.fill_advantages(cfg.adv_epsilon)?;
                Ok(g)
            })
            .collect::<Result<_, GrpoError>>()?;
        observe(it, &groups);

        let eval = evaluate_objective(&groups, &params, &ref_params, cfg, setup.execution)?;
        let trajs: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
        let n = trajs.len() as f64;
        let mean_reward = trajs.iter().map(|t| f64::from(t.reward)).sum::<f64>() / n;
        let mut active = 0u64;
        let mut full = 0u64;
        for t in &trajs {
            active += trajectory_report(t, Strategy::Active, setup.skin, &setup.costs)?.total;
            full += trajectory_report(t, Strategy::FullContext, setup.skin, &setup.costs)?.total;
        }
        let grad_norm = eval.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (w, g) in params.weights_mut().iter_mut().zip(&eval.gradient) {
            *w += cfg.learning_rate * g;
        }
        let m = IterationMetrics {
            iteration: it,
            mean_reward,
            objective: eval.objective,
            mean_kl: eval.mean_kl,
            grad_norm,
            tokens_active: active as f64 / n,
            tokens_full_hypothetical: full as f64 / n,
        };
        log::debug!("iter {it}: reward {:.3} objective {:.4} |g| {:.4}", m.mean_reward, m.objective, m.grad_norm);
        curve.push(m);
    }
    Ok(TrainOutcome { params, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{Feature, FeatureBasis};
    use crate::executor::ScriptedOracle;

    fn aug(seed: u64, anchors: u32) -> AugmentedEnv {
        let task = generate_task(seed, &Difficulty::new(anchors, 5, 20)).unwrap();
        AugmentedEnv::new(Environment::new(task, Skin::Web), ScriptedOracle::new(3, 0.8, 1).unwrap())
    }

    fn keeper() -> PolicyParams {
        PolicyParams::zeros(FeatureBasis::full()).with(Feature::Affinity, 100.0).with(Feature::Bias, -50.0)
    }

    #[test]
    fn advantage_examples() {
        let a = advantages(&[1.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
        let expect = [1.732_050_8, -0.577_350_3, -0.577_350_3, -0.577_350_3];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-6, "{x} vs {e}");
        }
        assert_eq!(advantages(&[1.0, 1.0, 1.0], 1e-8).unwrap(), vec![0.0; 3]);
        let b = advantages(&[1.0, 0.0], 1e-15).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
        assert!(matches!(advantages(&[1.0], 1e-8), Err(GrpoError::GroupTooSmall(1))));
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 0.37, 0.2), 0.37);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn ratio_clamp() {
        assert_eq!(ratio_from_logs(0.0), 1.0);
        assert!((ratio_from_logs(2f64.ln()) - 2.0).abs() < 1e-15);
        assert_eq!(ratio_from_logs(100.0), 30f64.exp());
        assert_eq!(ratio_from_logs(-100.0), (-30f64).exp());
    }

    #[test]
    fn bernoulli_kl_closed_form() {
        // p = 0.5, q = 0.25
        let kl = bernoulli_kl_logits(0.0, (1.0f64 / 3.0).ln());
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expect).abs() < 1e-12);
        assert!((kl - 0.143_841).abs() < 1e-6);
        assert_eq!(bernoulli_kl_logits(1.3, 1.3), 0.0);
    }

    #[test]
    fn keeper_wins_every_rollout() {
        let a = aug(5, 1);
        let g = rollout_group(&a, MemoryPolicy::Active { params: &keeper(), capacity: 8 }, 4, 9, Execution::Sequential).unwrap();
        assert_eq!(g.rewards(), vec![1.0; 4]);
        for t in &g.trajectories {
            assert_eq!(t.len() as u32, a.env.task.consume_step + 1);
        }
    }

    #[test]
    fn drop_all_loses_every_rollout() {
        let drop = PolicyParams::filled(FeatureBasis::full(), -50.0);
        let g = rollout_group(&aug(6, 1), MemoryPolicy::Active { params: &drop, capacity: 8 }, 4, 2, Execution::Sequential).unwrap();
        assert_eq!(g.rewards(), vec![0.0; 4]);
    }

    #[test]
    fn rollouts_reproducible_across_execution_modes() {
        let a = aug(7, 1);
        let p = PolicyParams::zeros(FeatureBasis::full());
        let policy = MemoryPolicy::Active { params: &p, capacity: 8 };
        let x = rollout_group(&a, policy, 4, 3, Execution::Sequential).unwrap();
        let y = rollout_group(&a, policy, 4, 3, Execution::Parallel).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn on_policy_objective_is_mean_advantage() {
        let a = aug(8, 1);
        let p = PolicyParams::new(FeatureBasis::full(), vec![0.5, -0.5, -0.5, 0.0, 0.0, 0.5, 0.2, -0.3, 0.0]).unwrap();
        let cfg = GrpoConfig { kl_beta: 0.0, ..GrpoConfig::default() };
        for s in 0..20 {
            let mut g = rollout_group(&a, MemoryPolicy::Active { params: &p, capacity: 8 }, 4, s, Execution::Sequential).unwrap();
            g.fill_advantages(cfg.adv_epsilon).unwrap();
            let j = grpo_objective(&g, &p, &p, &cfg).unwrap();
            let mean_a = g.advantages.iter().sum::<f64>() / 4.0;
            assert!((j - mean_a).abs() < 1e-12);
            assert!(j.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_advantage_zero_beta_gives_zero_gradient() {
        let a = aug(9, 1);
        let p = PolicyParams::new(FeatureBasis::full(), vec![0.1; 9]).unwrap();
        let mut g = rollout_group(&a, MemoryPolicy::Active { params: &p, capacity: 8 }, 4, 1, Execution::Sequential).unwrap();
        g.advantages = vec![0.0; 4];
        let cfg = GrpoConfig { kl_beta: 0.0, ..GrpoConfig::default() };
        let grad = grpo_gradient(&g, &p, &PolicyParams::zeros(FeatureBasis::full()), &cfg).unwrap();
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn group_validation() {
        let a = aug(10, 1);
        let p = keeper();
        let t = rollout_trajectory(&a, MemoryPolicy::Active { params: &p, capacity: 8 }, 1).unwrap();
        assert!(matches!(GroupBatch::new(vec![t.clone()]), Err(GrpoError::GroupTooSmall(1))));
        let mut other = t.clone();
        other.task_id += 1;
        assert!(matches!(GroupBatch::new(vec![t, other]), Err(GrpoError::MixedTasks(..))));
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig { clip_ratio: 1.0, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig { adv_epsilon: 0.0, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig { kl_beta: -1.0, ..GrpoConfig::default() }.validate().is_err());
        assert!(GrpoConfig { group_size: 1, ..GrpoConfig::default() }.validate().is_err());
        assert_eq!(GrpoConfig::for_skin(Skin::Search).group_size, 8);
    }

    #[test]
    fn lr_zero_is_a_fixed_point() {
        let cfg = GrpoConfig { learning_rate: 0.0, iterations: 3, batch_size: 2, seed: 4, ..GrpoConfig::default() };
        let tasks = TaskFamily::new(Difficulty::new(1, 5, 20), 1, Stream::TrainTask).unwrap();
        let exec: ExecutorPolicy = ScriptedOracle::new(3, 0.8, 0).unwrap().into();
        let setup = TrainSetup {
            cfg: &cfg,
            tasks: &tasks,
            skin: Skin::Web,
            executor: &exec,
            capacity: 8,
            costs: PromptCosts::default(),
            execution: Execution::Parallel,
        };
        let p0 = PolicyParams::new(FeatureBasis::full(), vec![0.2, -0.1, 0.0, 0.0, 0.05, 0.3, 0.0, -0.2, 0.1]).unwrap();
        let out = train(&setup, p0.clone(), |_, _| {}).unwrap();
        assert_eq!(out.params, p0);
        assert_eq!(out.curve.len(), 3);
    }
}
