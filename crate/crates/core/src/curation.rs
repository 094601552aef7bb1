//! Working memory and the trainable curator policy.
//!
//! The curator rewrites `(memory, observation, previous action)` into the next
//! memory by walking the candidate units in a canonical order and sampling an
//! independent keep/drop bit for each from a logistic model. The running
//! fullness of the memory is one of the features, so each bit is conditioned on
//! the bits before it. If more units are kept than fit, the lowest-logit ones
//! are evicted after sampling; eviction is a deterministic function of the
//! sampled bits and does not enter the log-probability.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvAction, InfoUnit, Observation, UnitKind};

#[derive(Debug, Error, PartialEq)]
pub enum CurationError {
    #[error("decision has {got} entries but the input yields {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter vector has {got} weights, basis needs {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
    #[error("memory over capacity: {len} units, capacity {capacity}")]
    OverCapacity { len: usize, capacity: usize },
    #[error("duplicate unit id {0} in memory")]
    DuplicateId(u64),
    #[error("memory capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    KindAnchor,
    KindNoise,
    KindTrap,
    KindInstruction,
    /// Steps since the unit was first revealed.
    Recency,
    /// 1 when the unit's payload is in the instruction's answer family.
    Affinity,
    /// 1 when the candidate came from memory rather than the observation.
    MemoryOrigin,
    /// Units kept so far in this curation pass, divided by the capacity.
    Fullness,
    Bias,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("feature name");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Ordered feature selection; fixed for the lifetime of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureBasis(Vec<Feature>);

impl FeatureBasis {
    pub fn new(features: Vec<Feature>) -> Self {
        FeatureBasis(features)
    }

    /// Kind one-hot, recency, affinity, memory origin, fullness and bias.
    pub fn full() -> Self {
        use Feature::*;
        FeatureBasis(vec![KindAnchor, KindNoise, KindTrap, KindInstruction, Recency, Affinity, MemoryOrigin, Fullness, Bias])
    }

    /// Five kind-agnostic features.
    pub fn compact() -> Self {
        use Feature::*;
        FeatureBasis(vec![Recency, Affinity, MemoryOrigin, Fullness, Bias])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.0
    }

    pub fn index_of(&self, feature: Feature) -> Option<usize> {
        self.0.iter().position(|&f| f == feature)
    }

    fn eval(&self, ctx: &CandidateContext<'_>) -> Vec<f64> {
        self.0.iter().map(|&f| ctx.value(f)).collect()
    }
}

impl Default for FeatureBasis {
    fn default() -> Self {
        FeatureBasis::full()
    }
}

/// Curator weights over a [`FeatureBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    basis: FeatureBasis,
    weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(basis: FeatureBasis) -> Self {
        let weights = vec![0.0; basis.dim()];
        PolicyParams { basis, weights }
    }

    pub fn filled(basis: FeatureBasis, value: f64) -> Self {
        let weights = vec![value; basis.dim()];
        PolicyParams { basis, weights }
    }

    pub fn new(basis: FeatureBasis, weights: Vec<f64>) -> Result<Self, CurationError> {
        let p = PolicyParams { basis, weights };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        if self.weights.len() != self.basis.dim() {
            return Err(CurationError::Dimension { expected: self.basis.dim(), got: self.weights.len() });
        }
        if let Some(i) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(CurationError::NonFinite(i));
        }
        Ok(())
    }

    /// Sets the weight of `feature`; features outside the basis are ignored.
    pub fn with(mut self, feature: Feature, weight: f64) -> Self {
        if let Some(i) = self.basis.index_of(feature) {
            self.weights[i] = weight;
        }
        self
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        self.weights.iter().zip(features).map(|(w, x)| w * x).sum()
    }
}

/// Curated working memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    units: Vec<InfoUnit>,
    capacity: usize,
    token_total: u64,
}

impl MemoryState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "memory capacity must be positive");
        MemoryState { units: Vec::new(), capacity, token_total: 0 }
    }

    /// Memory without a practical size limit.
    pub fn unbounded() -> Self {
        MemoryState::new(usize::MAX)
    }

    pub fn from_units(units: Vec<InfoUnit>, capacity: usize) -> Result<Self, CurationError> {
        if capacity == 0 {
            return Err(CurationError::ZeroCapacity);
        }
        if units.len() > capacity {
            return Err(CurationError::OverCapacity { len: units.len(), capacity });
        }
        let mut seen = HashSet::with_capacity(units.len());
        for u in &units {
            if !seen.insert(u.id) {
                return Err(CurationError::DuplicateId(u.id));
            }
        }
        let token_total = units.iter().map(|u| u64::from(u.token_cost)).sum();
        Ok(MemoryState { units, capacity, token_total })
    }

    pub fn units(&self) -> &[InfoUnit] {
        &self.units
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Token mass excluding the instruction unit.
    pub fn content_tokens(&self) -> u64 {
        self.units.iter().filter(|u| u.kind != UnitKind::Instruction).map(|u| u64::from(u.token_cost)).sum()
    }

    pub fn count_kind(&self, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.kind == kind).count()
    }

    pub fn instruction(&self) -> Option<&InfoUnit> {
        self.units.iter().find(|u| u.kind == UnitKind::Instruction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationInput {
    pub memory: MemoryState,
    pub observation: Observation,
    pub prev_action: Option<EnvAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate<'a> {
    pub unit: &'a InfoUnit,
    pub from_memory: bool,
    /// Drop-exempt (the instruction).
    pub exempt: bool,
}

/// Candidates in canonical order: the instruction first, then memory units
/// oldest first, then observation units by position. A unit id present in
/// both memory and the observation appears once, as the memory copy.
pub fn candidate_list(input: &CurationInput) -> Vec<Candidate<'_>> {
    let mut seen = HashSet::new();
    let mut rest = Vec::with_capacity(input.memory.len() + input.observation.units.len());
    let mut instruction = None;
    let sources = input.memory.units.iter().map(|u| (u, true)).chain(input.observation.units.iter().map(|u| (u, false)));
    for (unit, from_memory) in sources {
        if !seen.insert(unit.id) {
            continue;
        }
        if unit.kind == UnitKind::Instruction && instruction.is_none() {
            instruction = Some(Candidate { unit, from_memory, exempt: true });
        } else {
            rest.push(Candidate { unit, from_memory, exempt: false });
        }
    }
    instruction.into_iter().chain(rest).collect()
}

struct CandidateContext<'a> {
    cand: Candidate<'a>,
    step: u32,
    instruction_family: Option<u64>,
    kept_so_far: usize,
    capacity: usize,
}

impl CandidateContext<'_> {
    fn value(&self, f: Feature) -> f64 {
        let u = self.cand.unit;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match f {
            Feature::KindAnchor => flag(u.kind == UnitKind::Anchor),
            Feature::KindNoise => flag(u.kind == UnitKind::Noise),
            Feature::KindTrap => flag(u.kind == UnitKind::TrapNoise),
            Feature::KindInstruction => flag(u.kind == UnitKind::Instruction),
            Feature::Recency => f64::from(self.step.saturating_sub(u.revealed_at)),
            Feature::Affinity => {
                flag(u.kind != UnitKind::Instruction && self.instruction_family == Some(u.family()))
            }
            Feature::MemoryOrigin => flag(self.cand.from_memory),
            Feature::Fullness => self.kept_so_far as f64 / self.capacity as f64,
            Feature::Bias => 1.0,
        }
    }
}

/// Keep/drop bits for every candidate in canonical order, with the
/// log-probability of each bit. Drop-exempt candidates carry `keep = true`
/// and log-probability 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub keep: Vec<bool>,
    pub log_probs: Vec<f64>,
}

impl CurationDecision {
    pub fn empty() -> Self {
        CurationDecision { keep: Vec::new(), log_probs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn total_logprob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Feature vectors of the sampled (non-exempt) decisions along a realised
/// path, with their bits. Features do not depend on the weights, only on the
/// path.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPath {
    pub features: Vec<Vec<f64>>,
    pub keep: Vec<bool>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)`, stable for large `|z|`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Walks the candidates, either sampling bits (`bits == None`) or following
/// given ones. Calls `visit` with (candidate index, features, bit) for every
/// non-exempt candidate and returns the bits.
fn walk<'a>(
    basis: &FeatureBasis,
    input: &'a CurationInput,
    cands: &[Candidate<'a>],
    mut choose: impl FnMut(usize, &[f64]) -> bool,
) -> Vec<bool> {
    let instruction_family = cands.iter().find(|c| c.exempt).map(|c| c.unit.family());
    let capacity = input.memory.capacity;
    let step = input.observation.step;
    let mut kept = 0usize;
    let mut bits = Vec::with_capacity(cands.len());
    for (j, &cand) in cands.iter().enumerate() {
        let keep = if cand.exempt {
            true
        } else {
            let ctx = CandidateContext { cand, step, instruction_family, kept_so_far: kept, capacity };
            choose(j, &basis.eval(&ctx))
        };
        kept += usize::from(keep);
        bits.push(keep);
    }
    bits
}

/// Samples the next memory.
pub fn curate<R: Rng + ?Sized>(params: &PolicyParams, input: &CurationInput, rng: &mut R) -> (MemoryState, CurationDecision) {
    let cands = candidate_list(input);
    let mut logits = vec![f64::INFINITY; cands.len()];
    let mut log_probs = vec![0.0; cands.len()];
    let keep = walk(&params.basis, input, &cands, |j, feat| {
        let z = params.logit(feat);
        let keep = rng.random::<f64>() < sigmoid(z);
        logits[j] = z;
        log_probs[j] = if keep { log_sigmoid(z) } else { log_sigmoid(-z) };
        keep
    });

    // evict lowest logit first; ties go against the later candidate
    let mut kept: Vec<usize> = (0..cands.len()).filter(|&j| keep[j]).collect();
    let capacity = input.memory.capacity;
    if kept.len() > capacity {
        kept.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        kept.truncate(capacity);
        kept.sort_unstable();
    }
    let units = kept.iter().map(|&j| cands[j].unit.clone()).collect();
    let memory = MemoryState::from_units(units, capacity).expect("curated memory respects its invariants");
    (memory, CurationDecision { keep, log_probs })
}

/// Per-decision features along the path taken by `decision`.
pub fn decision_path(
    basis: &FeatureBasis,
    input: &CurationInput,
    decision: &CurationDecision,
) -> Result<DecisionPath, CurationError> {
    let cands = candidate_list(input);
    if decision.keep.len() != cands.len() {
        return Err(CurationError::LengthMismatch { expected: cands.len(), got: decision.keep.len() });
    }
    let mut features = Vec::new();
    let mut keep = Vec::new();
    walk(basis, input, &cands, |j, feat| {
        features.push(feat.to_vec());
        keep.push(decision.keep[j]);
        decision.keep[j]
    });
    Ok(DecisionPath { features, keep })
}

/// Log-probability of `decision` under `params`.
pub fn logprob(params: &PolicyParams, input: &CurationInput, decision: &CurationDecision) -> Result<f64, CurationError> {
    let path = decision_path(&params.basis, input, decision)?;
    Ok(path
        .features
        .iter()
        .zip(&path.keep)
        .map(|(f, &k)| {
            let z = params.logit(f);
            if k {
                log_sigmoid(z)
            } else {
                log_sigmoid(-z)
            }
        })
        .sum())
}

/// Keep probability of every candidate, conditioned on the realised path.
/// Exempt candidates report 1.
pub fn decision_distribution(
    params: &PolicyParams,
    input: &CurationInput,
    decision: &CurationDecision,
) -> Result<Vec<f64>, CurationError> {
    let cands = candidate_list(input);
    if decision.keep.len() != cands.len() {
        return Err(CurationError::LengthMismatch { expected: cands.len(), got: decision.keep.len() });
    }
    let mut probs = vec![1.0; cands.len()];
    walk(&params.basis, input, &cands, |j, feat| {
        probs[j] = sigmoid(params.logit(feat));
        decision.keep[j]
    });
    Ok(probs)
}
