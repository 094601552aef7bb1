//! Finite-difference check of the analytic GRPO gradient.
//!
//! A toy batch is rolled out under a random snapshot, given random
//! advantages, and the objective is evaluated at a perturbed point with a
//! random reference policy so every term (ratio, clip and KL) is live. Central
//! differences are compared component-wise against the closed-form gradient.
//! Draws whose difference stencil would straddle a clip or ratio-clamp kink
//! are rejected and redrawn.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::curation::{decision_path, log_sigmoid, sigmoid, FeatureBasis, PolicyParams};
use crate::env::{generate_task, Difficulty, Environment, Skin};
use crate::exec::Execution;
use crate::executor::{AugmentedEnv, ScriptedOracle};
use crate::grpo::{evaluate_objective, rollout_group, GroupBatch, GrpoConfig, MemoryPolicy, RATIO_LOG_CLAMP};
use crate::seed::{self, Stream};

/// Acceptance tolerance on the component-wise relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero components.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const STEP_SWEEP: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub groups: Vec<GroupBatch>,
    pub params: PolicyParams,
    pub ref_params: PolicyParams,
    pub cfg: GrpoConfig,
}

impl GradcheckCase {
    pub fn objective(&self, params: &PolicyParams) -> f64 {
        evaluate_objective(&self.groups, params, &self.ref_params, &self.cfg, Execution::Sequential)
            .expect("toy batch is well formed")
            .objective
    }

    pub fn analytic(&self) -> Vec<f64> {
        evaluate_objective(&self.groups, &self.params, &self.ref_params, &self.cfg, Execution::Sequential)
            .expect("toy batch is well formed")
            .gradient
    }

    /// True when no turn's log-ratio lies within one difference step of a
    /// kink of the objective.
    pub fn stencil_clear(&self, h: f64) -> bool {
        let eps = self.cfg.clip_ratio;
        let kinks = [(1.0 - eps).ln(), (1.0 + eps).ln(), -RATIO_LOG_CLAMP, RATIO_LOG_CLAMP];
        for g in &self.groups {
            for t in &g.trajectories {
                for s in &t.steps {
                    let path = decision_path(self.params.basis(), &s.input, &s.decision).expect("consistent path");
                    let mut lp = 0.0;
                    let mut dlp = vec![0.0; self.params.dim()];
                    for (f, &k) in path.features.iter().zip(&path.keep) {
                        let z = self.params.logit(f);
                        lp += if k { log_sigmoid(z) } else { log_sigmoid(-z) };
                        let score = f64::from(u8::from(k)) - sigmoid(z);
                        for (d, x) in dlp.iter_mut().zip(f) {
                            *d += score * x;
                        }
                    }
                    let reach = 2.0 * h * dlp.iter().fold(0.0f64, |m, d| m.max(d.abs())) + 1e-12;
                    let diff = lp - s.logprob;
                    if kinks.iter().any(|k| (diff - k).abs() <= reach) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn finite_difference(&self, h: f64) -> Vec<f64> {
        (0..self.params.dim())
            .map(|k| {
                let mut plus = self.params.clone();
                plus.weights_mut()[k] += h;
                let mut minus = self.params.clone();
                minus.weights_mut()[k] -= h;
                (self.objective(&plus) - self.objective(&minus)) / (2.0 * h)
            })
            .collect()
    }
}

pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .collect()
}

fn uniform(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Toy batch on the 5-dimensional compact basis: two groups of four on small
/// web tasks.
pub fn toy_case(seed: u64, basis: FeatureBasis) -> GradcheckCase {
    let dim = basis.dim();
    let mut rng = seed::rng(seed, Stream::Probe, &[]);
    let cfg = GrpoConfig { kl_beta: 0.05, group_size: 4, ..GrpoConfig::default() };
    let difficulty = Difficulty { anchors: 1, horizon: 4, noise_per_step: 8, trap_noise_per_step: 1 };
    let old = PolicyParams::new(basis.clone(), uniform(&mut rng, dim, 1.0)).expect("finite");
    let groups: Vec<GroupBatch> = (0..2u64)
        .map(|b| {
            let task = generate_task(seed::derive(seed, Stream::Probe, &[b]), &difficulty).expect("valid difficulty");
            let aug = AugmentedEnv::new(Environment::new(task, Skin::Web), ScriptedOracle::new(3, 0.8, seed).expect("p"));
            let policy = MemoryPolicy::Active { params: &old, capacity: 4 };
            let mut g = rollout_group(&aug, policy, 4, seed::derive(seed, Stream::Rollout, &[b]), Execution::Sequential)
                .expect("scripted rollouts cannot abort");
            g.advantages = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            g
        })
        .collect();
    let ref_params = PolicyParams::new(basis.clone(), uniform(&mut rng, dim, 1.0)).expect("finite");
    loop {
        let shift = uniform(&mut rng, dim, 0.05);
        let w: Vec<f64> = old.weights().iter().zip(&shift).map(|(a, b)| a + b).collect();
        let case = GradcheckCase {
            groups: groups.clone(),
            params: PolicyParams::new(basis.clone(), w).expect("finite"),
            ref_params: ref_params.clone(),
            cfg: cfg.clone(),
        };
        if STEP_SWEEP.iter().all(|&h| case.stencil_clear(h)) {
            return case;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub h: f64,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub analytic: Vec<f64>,
    pub rows: Vec<GradcheckRow>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn run(seed: u64) -> GradcheckReport {
    let case = toy_case(seed, FeatureBasis::compact());
    let analytic = case.analytic();
    let rows: Vec<GradcheckRow> = STEP_SWEEP
        .iter()
        .map(|&h| {
            let fd = case.finite_difference(h);
            let max_rel_err = relative_errors(&analytic, &fd).into_iter().fold(0.0, f64::max);
            GradcheckRow { h, max_rel_err }
        })
        .collect();
    let max_rel_err = rows.iter().find(|r| r.h == DEFAULT_STEP).map_or(f64::INFINITY, |r| r.max_rel_err);
    GradcheckReport { analytic, rows, max_rel_err, tolerance: TOLERANCE, passed: max_rel_err < TOLERANCE }
}

pub fn check(seed: u64) -> Result<GradcheckReport, HarnessError> {
    let report = run(seed);
    if report.passed {
        Ok(report)
    } else {
        Err(HarnessError::GradcheckFailed { max_rel_err: report.max_rel_err, tolerance: report.tolerance })
    }
}
