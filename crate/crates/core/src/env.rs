//! Synthetic partially observable environments.
//!
//! Each task schedules a handful of anchor units across the early steps of an
//! episode and demands them back, as an exact answer set, at a fixed consume
//! step. Every observation is padded with token-heavy noise and a few trap
//! units. Two skins share all of this and differ only in which non-answer
//! action advances the reveal schedule.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Stream};

/// Hard cap on interaction rounds; an episode whose step counter passes it
/// times out with reward 0.
pub const HORIZON_CAP: u32 = 15;

/// Payloads are `family * FAMILY_STRIDE + member`. Anchors share the
/// instruction's family.
pub const FAMILY_STRIDE: u64 = 1_000;

const ID_STRIDE: u64 = 1 << 20;
const INSTRUCTION_COST: u32 = 10;
const ANCHOR_COST: (u32, u32) = (2, 6);
const NOISE_COST: (u32, u32) = (5, 40);
const FAMILY_RANGE: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("difficulty requires at least one anchor")]
    NoAnchors,
    #[error("horizon {horizon} exceeds the horizon cap {cap}")]
    HorizonTooLong { horizon: u32, cap: u32 },
    #[error("horizon {horizon} cannot fit {anchors} anchor reveals before the consume step")]
    ScheduleInfeasible { anchors: u32, horizon: u32 },
    #[error("invalid task spec: {0}")]
    InvalidTask(String),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("task record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    Anchor,
    Noise,
    TrapNoise,
    Instruction,
}

impl UnitKind {
    pub const ALL: [UnitKind; 4] = [UnitKind::Anchor, UnitKind::Noise, UnitKind::TrapNoise, UnitKind::Instruction];

    pub fn is_noise(self) -> bool {
        matches!(self, UnitKind::Noise | UnitKind::TrapNoise)
    }
}

/// Atomic observable item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoUnit {
    pub id: u64,
    pub kind: UnitKind,
    pub payload: u64,
    pub token_cost: u32,
    pub revealed_at: u32,
}

impl InfoUnit {
    pub fn family(&self) -> u64 {
        self.payload / FAMILY_STRIDE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledAnchor {
    pub payload: u64,
    pub reveal_step: u32,
    pub token_cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u64,
    pub instruction_unit: InfoUnit,
    pub required_anchors: Vec<ScheduledAnchor>,
    pub consume_step: u32,
    pub horizon_cap: u32,
    pub noise_per_step: u32,
    pub trap_noise_per_step: u32,
    pub seed: u64,
}

impl TaskSpec {
    pub fn answer_set(&self) -> BTreeSet<u64> {
        self.required_anchors.iter().map(|a| a.payload).collect()
    }

    pub fn instruction_family(&self) -> u64 {
        self.instruction_unit.family()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidTask(m));
        if self.instruction_unit.kind != UnitKind::Instruction {
            return bad("instruction_unit must have kind Instruction".into());
        }
        if self.instruction_unit.token_cost == 0 {
            return bad("instruction_unit.token_cost must be >= 1".into());
        }
        if self.consume_step > self.horizon_cap {
            return bad(format!("consume_step {} exceeds horizon_cap {}", self.consume_step, self.horizon_cap));
        }
        let family = self.instruction_family();
        for a in &self.required_anchors {
            if a.reveal_step >= self.consume_step {
                return bad(format!("anchor {} revealed at {} is not before consume_step", a.payload, a.reveal_step));
            }
            if a.token_cost == 0 {
                return bad(format!("anchor {} has zero token_cost", a.payload));
            }
            if a.payload / FAMILY_STRIDE != family {
                return bad(format!("anchor {} is outside the instruction's answer family", a.payload));
            }
        }
        Ok(())
    }

    /// One-line structured record, suitable for a task corpus file.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("task spec serialises")
    }

    pub fn from_record(line: &str) -> Result<Self, EnvError> {
        let task: TaskSpec = serde_json::from_str(line).map_err(|e| EnvError::Record(e.to_string()))?;
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Difficulty {
    pub anchors: u32,
    pub horizon: u32,
    pub noise_per_step: u32,
    #[serde(default = "default_trap_noise")]
    pub trap_noise_per_step: u32,
}

fn default_trap_noise() -> u32 {
    1
}

impl Difficulty {
    pub fn new(anchors: u32, horizon: u32, noise_per_step: u32) -> Self {
        Difficulty { anchors, horizon, noise_per_step, trap_noise_per_step: default_trap_noise() }
    }
}

/// Builds a task deterministically from `seed`. The consume step is
/// `horizon - 1` and anchors are revealed at distinct earlier steps.
pub fn generate_task(seed: u64, difficulty: &Difficulty) -> Result<TaskSpec, EnvError> {
    let Difficulty { anchors, horizon, noise_per_step, trap_noise_per_step } = *difficulty;
    if anchors == 0 {
        return Err(EnvError::NoAnchors);
    }
    if horizon > HORIZON_CAP {
        return Err(EnvError::HorizonTooLong { horizon, cap: HORIZON_CAP });
    }
    if horizon < anchors + 1 {
        return Err(EnvError::ScheduleInfeasible { anchors, horizon });
    }
    let consume_step = horizon - 1;
    let mut rng = seed::rng(seed, Stream::TaskGen, &[]);
    let family = rng.random_range(1..FAMILY_RANGE);

    let mut steps = rand::seq::index::sample(&mut rng, consume_step as usize, anchors as usize).into_vec();
    steps.sort_unstable();
    let required_anchors = steps
        .into_iter()
        .enumerate()
        .map(|(k, step)| ScheduledAnchor {
            payload: family * FAMILY_STRIDE + 1 + k as u64,
            reveal_step: step as u32,
            token_cost: rng.random_range(ANCHOR_COST.0..=ANCHOR_COST.1),
        })
        .collect();

    Ok(TaskSpec {
        task_id: seed,
        instruction_unit: InfoUnit {
            id: 0,
            kind: UnitKind::Instruction,
            payload: family * FAMILY_STRIDE,
            token_cost: INSTRUCTION_COST,
            revealed_at: 0,
        },
        required_anchors,
        consume_step,
        horizon_cap: HORIZON_CAP,
        noise_per_step,
        trap_noise_per_step,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u32,
    pub units: Vec<InfoUnit>,
    pub total_tokens: u64,
}

impl Observation {
    pub fn new(step: u32, units: Vec<InfoUnit>) -> Self {
        let total_tokens = units.iter().map(|u| u64::from(u.token_cost)).sum();
        Observation { step, units, total_tokens }
    }

    pub fn empty(step: u32) -> Self {
        Observation::new(step, Vec::new())
    }

    /// Token mass excluding the instruction unit.
    pub fn content_tokens(&self) -> u64 {
        self.units.iter().filter(|u| u.kind != UnitKind::Instruction).map(|u| u64::from(u.token_cost)).sum()
    }

    pub fn noise_tokens(&self) -> u64 {
        self.units.iter().filter(|u| u.kind.is_noise()).map(|u| u64::from(u.token_cost)).sum()
    }
}

/// Environment action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvAction {
    Navigate(u64),
    Query(u64),
    Answer(BTreeSet<u64>),
    Stop,
}

impl fmt::Display for EnvAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvAction::Navigate(t) => write!(f, "navigate {t}"),
            EnvAction::Query(k) => write!(f, "query {k}"),
            EnvAction::Answer(set) => {
                let parts: Vec<String> = set.iter().map(u64::to_string).collect();
                write!(f, "answer {}", parts.join(","))
            }
            EnvAction::Stop => f.write_str("stop"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot parse action {0:?}")]
pub struct ParseActionError(pub String);

impl FromStr for EnvAction {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseActionError(s.to_string());
        let trimmed = s.trim();
        let (verb, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((v, r)) => (v, r.trim()),
            None => (trimmed, ""),
        };
        let num = |r: &str| r.parse::<u64>().map_err(|_| err());
        match verb.to_ascii_lowercase().as_str() {
            "navigate" => Ok(EnvAction::Navigate(num(rest)?)),
            "query" => Ok(EnvAction::Query(num(rest)?)),
            "stop" if rest.is_empty() => Ok(EnvAction::Stop),
            "answer" => {
                let set = rest
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(num)
                    .collect::<Result<BTreeSet<u64>, _>>()?;
                Ok(EnvAction::Answer(set))
            }
            _ => Err(err()),
        }
    }
}

/// Which non-answer action advances the reveal schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skin {
    /// Anchors are revealed by navigating to their target.
    #[default]
    Web,
    /// Anchors are revealed by issuing their key as a query.
    Search,
}

impl Skin {
    pub fn progress_action(self, target: u64) -> EnvAction {
        match self {
            Skin::Web => EnvAction::Navigate(target),
            Skin::Search => EnvAction::Query(target),
        }
    }

    fn progress_target(self, action: &EnvAction) -> Option<u64> {
        match (self, action) {
            (Skin::Web, EnvAction::Navigate(t)) | (Skin::Search, EnvAction::Query(t)) => Some(*t),
            _ => None,
        }
    }
}

/// Latent state of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub step: u32,
    /// Payloads of anchors emitted so far.
    pub revealed: Vec<u64>,
    pub done: bool,
    pub last_action: Option<EnvAction>,
    /// The observation emitted for `step`.
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub state: EnvState,
    pub observation: Observation,
    pub done: bool,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub task: TaskSpec,
    pub skin: Skin,
}

impl Environment {
    pub fn new(task: TaskSpec, skin: Skin) -> Self {
        Environment { task, skin }
    }

    pub fn reset(&self) -> (EnvState, Observation) {
        let obs = self.observe(0, true);
        let revealed = self.anchors_at(0).map(|a| a.payload).collect();
        let state = EnvState { step: 0, revealed, done: false, last_action: None, observation: obs.clone() };
        (state, obs)
    }

    pub fn step(&self, state: &EnvState, action: &EnvAction) -> Result<Transition, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        let t = state.step;
        let terminal = |reward: u8| {
            let next = Observation::empty(t + 1);
            let st = EnvState {
                step: t + 1,
                revealed: state.revealed.clone(),
                done: true,
                last_action: Some(action.clone()),
                observation: next.clone(),
            };
            Ok(Transition { state: st, observation: next, done: true, reward })
        };
        match action {
            EnvAction::Answer(set) => {
                let success = t == self.task.consume_step && *set == self.task.answer_set();
                terminal(u8::from(success))
            }
            EnvAction::Stop => terminal(0),
            _ if t + 1 > self.task.horizon_cap => terminal(0),
            _ => {
                let next_step = t + 1;
                let target = self.skin.progress_target(action);
                let reveal = target.is_some_and(|tg| self.anchors_at(next_step).any(|a| a.payload == tg));
                let obs = self.observe(next_step, reveal);
                let mut revealed = state.revealed.clone();
                if reveal {
                    revealed.extend(self.anchors_at(next_step).map(|a| a.payload));
                }
                let st = EnvState {
                    step: next_step,
                    revealed,
                    done: false,
                    last_action: Some(action.clone()),
                    observation: obs.clone(),
                };
                Ok(Transition { state: st, observation: obs, done: false, reward: 0 })
            }
        }
    }

    fn anchors_at(&self, step: u32) -> impl Iterator<Item = &ScheduledAnchor> {
        self.task.required_anchors.iter().filter(move |a| a.reveal_step == step)
    }

    /// Observation for `step`. The instruction comes first on step 0; the
    /// remaining units are shuffled by a per-step stream.
    fn observe(&self, step: u32, reveal_anchors: bool) -> Observation {
        let task = &self.task;
        let mut rng = seed::rng(task.seed, Stream::TaskGen, &[1 + u64::from(step)]);
        let base = 1 + u64::from(step) * ID_STRIDE;
        let family = task.instruction_family();
        let mut body = Vec::new();
        if reveal_anchors {
            for a in self.anchors_at(step) {
                body.push(InfoUnit {
                    id: 0,
                    kind: UnitKind::Anchor,
                    payload: a.payload,
                    token_cost: a.token_cost,
                    revealed_at: step,
                });
            }
        }
        let noise = std::iter::repeat_n(UnitKind::Noise, task.noise_per_step as usize)
            .chain(std::iter::repeat_n(UnitKind::TrapNoise, task.trap_noise_per_step as usize));
        for kind in noise {
            let mut fam = rng.random_range(1..FAMILY_RANGE);
            if fam == family {
                fam += 1;
            }
            body.push(InfoUnit {
                id: 0,
                kind,
                payload: fam * FAMILY_STRIDE + rng.random_range(1..FAMILY_STRIDE),
                token_cost: rng.random_range(NOISE_COST.0..=NOISE_COST.1),
                revealed_at: step,
            });
        }
        for (j, u) in body.iter_mut().enumerate() {
            u.id = base + j as u64;
        }
        body.shuffle(&mut rng);
        let mut units = Vec::with_capacity(body.len() + 1);
        if step == 0 {
            units.push(task.instruction_unit.clone());
        }
        units.extend(body);
        Observation::new(step, units)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn web_task(seed: u64) -> Environment {
        Environment::new(generate_task(seed, &Difficulty::new(1, 5, 20)).unwrap(), Skin::Web)
    }

    #[test]
    fn generate_task_matches_schedule_contract() {
        let task = generate_task(7, &Difficulty::new(1, 5, 20)).unwrap();
        assert_eq!(task.required_anchors.len(), 1);
        assert!(task.required_anchors[0].reveal_step <= 3);
        assert_eq!(task.consume_step, 4);
        assert_eq!(task, generate_task(7, &Difficulty::new(1, 5, 20)).unwrap());
        task.validate().unwrap();
    }

    #[test]
    fn generate_task_rejects_infeasible_schedules() {
        assert_eq!(
            generate_task(1, &Difficulty::new(3, 3, 20)),
            Err(EnvError::ScheduleInfeasible { anchors: 3, horizon: 3 })
        );
        assert_eq!(generate_task(1, &Difficulty::new(0, 5, 20)), Err(EnvError::NoAnchors));
        assert!(matches!(generate_task(1, &Difficulty::new(1, 16, 20)), Err(EnvError::HorizonTooLong { .. })));
    }

    #[test]
    fn reveal_steps_distinct_and_early() {
        for seed in 0..200 {
            let task = generate_task(seed, &Difficulty::new(4, 9, 20)).unwrap();
            let mut steps: Vec<u32> = task.required_anchors.iter().map(|a| a.reveal_step).collect();
            steps.dedup();
            assert_eq!(steps.len(), 4);
            assert!(steps.iter().all(|&s| s < task.consume_step));
        }
    }

    #[test]
    fn reset_unit_counts() {
        // find a task whose anchor is not on step 0
        let env = (0..).map(web_task).find(|e| e.task.required_anchors[0].reveal_step > 0).unwrap();
        let (_, obs) = env.reset();
        assert_eq!(obs.units.len(), 22);
        assert_eq!(obs.units[0].kind, UnitKind::Instruction);
        assert_eq!(obs.units.iter().filter(|u| u.kind == UnitKind::TrapNoise).count(), 1);
        assert_eq!(obs.total_tokens, obs.units.iter().map(|u| u64::from(u.token_cost)).sum::<u64>());

        let env = (0..).map(web_task).find(|e| e.task.required_anchors[0].reveal_step == 0).unwrap();
        let (state, obs) = env.reset();
        let payload = env.task.required_anchors[0].payload;
        assert_eq!(obs.units.iter().filter(|u| u.payload == payload).count(), 1);
        assert_eq!(state.revealed, vec![payload]);
        assert_eq!(env.reset().1, obs);
    }

    #[test]
    fn answer_rules() {
        let env = web_task(3);
        let (mut state, _) = env.reset();
        while state.step < env.task.consume_step {
            let target = env.task.required_anchors[0].payload;
            state = env.step(&state, &Skin::Web.progress_action(target)).unwrap().state;
        }
        let good = env.step(&state, &EnvAction::Answer(env.task.answer_set())).unwrap();
        assert!(good.done);
        assert_eq!(good.reward, 1);
        assert_eq!(env.step(&good.state, &EnvAction::Stop), Err(EnvError::EpisodeDone));

        let bad = env.step(&state, &EnvAction::Answer(BTreeSet::new())).unwrap();
        assert_eq!((bad.done, bad.reward), (true, 0));
    }

    #[test]
    fn early_correct_answer_scores_zero() {
        let env = web_task(4);
        let (state, _) = env.reset();
        let t = env.step(&state, &EnvAction::Answer(env.task.answer_set())).unwrap();
        assert_eq!((t.done, t.reward), (true, 0));
    }

    #[test]
    fn horizon_timeout() {
        let env = web_task(5);
        let (mut state, _) = env.reset();
        let mut steps = 0;
        loop {
            let tr = env.step(&state, &EnvAction::Navigate(1)).unwrap();
            steps += 1;
            if tr.done {
                assert_eq!(tr.reward, 0);
                break;
            }
            state = tr.state;
        }
        assert_eq!(steps, HORIZON_CAP + 1);
    }

    #[test]
    fn wrong_skin_action_misses_anchor() {
        let env = (0..).map(web_task).find(|e| e.task.required_anchors[0].reveal_step == 1).unwrap();
        let (state, _) = env.reset();
        let payload = env.task.required_anchors[0].payload;
        let missed = env.step(&state, &EnvAction::Query(payload)).unwrap();
        assert!(missed.observation.units.iter().all(|u| u.kind != UnitKind::Anchor));
        let hit = env.step(&state, &EnvAction::Navigate(payload)).unwrap();
        assert_eq!(hit.observation.units.iter().filter(|u| u.kind == UnitKind::Anchor).count(), 1);
    }

    #[test]
    fn noise_dominates_token_mass() {
        for seed in 0..300 {
            let env = web_task(seed);
            let (mut state, obs) = env.reset();
            let mut obs = obs;
            loop {
                let frac = obs.noise_tokens() as f64 / obs.total_tokens as f64;
                let has_anchor = obs.units.iter().any(|u| u.kind == UnitKind::Anchor);
                assert!(frac >= if has_anchor { 0.8 } else { 0.9 }, "seed {seed} step {} frac {frac}", obs.step);
                if state.step == env.task.consume_step {
                    break;
                }
                let tr = env.step(&state, &EnvAction::Navigate(env.task.required_anchors[0].payload)).unwrap();
                state = tr.state;
                obs = tr.observation;
            }
        }
    }

    #[test]
    fn unit_ids_unique_within_episode() {
        let env = web_task(11);
        let (mut state, obs) = env.reset();
        let mut ids: Vec<u64> = obs.units.iter().map(|u| u.id).collect();
        for _ in 0..6 {
            let tr = env.step(&state, &EnvAction::Navigate(0)).unwrap();
            ids.extend(tr.observation.units.iter().map(|u| u.id));
            state = tr.state;
        }
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn task_record_roundtrip_and_validation() {
        let task = generate_task(99, &Difficulty::new(2, 6, 20)).unwrap();
        assert_eq!(TaskSpec::from_record(&task.to_record()).unwrap(), task);
        let mut broken = task.clone();
        broken.required_anchors[0].reveal_step = broken.consume_step;
        assert!(matches!(TaskSpec::from_record(&broken.to_record()), Err(EnvError::InvalidTask(_))));
    }

    #[test]
    fn action_text_roundtrip() {
        for a in [
            EnvAction::Navigate(12),
            EnvAction::Query(7),
            EnvAction::Stop,
            EnvAction::Answer([3, 1].into_iter().collect()),
            EnvAction::Answer(BTreeSet::new()),
        ] {
            assert_eq!(a.to_string().parse::<EnvAction>().unwrap(), a);
        }
        assert_eq!(" ANSWER 5, 9 ".parse::<EnvAction>().unwrap(), EnvAction::Answer([5, 9].into_iter().collect()));
        assert!("jump 3".parse::<EnvAction>().is_err());
        assert!("navigate x".parse::<EnvAction>().is_err());
    }
}
