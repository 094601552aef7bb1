use std::collections::BTreeSet;

use activectx::accounting::{ctx_active_web, ctx_full_search, ctx_full_web, ctx_no_memory, LengthParts};
use activectx::curation::{
    curate, decision_distribution, log_sigmoid, logprob, sigmoid, FeatureBasis, MemoryState, PolicyParams,
};
use activectx::env::{generate_task, Difficulty, EnvAction, Skin, UnitKind, HORIZON_CAP};
use activectx::executor::{augmented_step, AugmentedEnv, ScriptedOracle};
use activectx::grpo::{rollout_trajectory, MemoryPolicy};
use activectx::{CurationInput, Environment};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cases() -> ProptestConfig {
    ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() }
}

fn difficulty() -> impl Strategy<Value = Difficulty> {
    (1u32..=3, 0u32..=20, 0u32..=3).prop_flat_map(|(a, n, tr)| {
        (a + 1..=HORIZON_CAP).prop_map(move |h| Difficulty { anchors: a, horizon: h, noise_per_step: n, trap_noise_per_step: tr })
    })
}

fn skin() -> impl Strategy<Value = Skin> {
    prop_oneof![Just(Skin::Web), Just(Skin::Search)]
}

fn action(max_payload: u64) -> impl Strategy<Value = EnvAction> {
    prop_oneof![
        4 => (0..max_payload).prop_map(EnvAction::Navigate),
        4 => (0..max_payload).prop_map(EnvAction::Query),
        1 => prop::collection::btree_set(0..max_payload, 0..3).prop_map(EnvAction::Answer),
        1 => Just(EnvAction::Stop),
    ]
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, 9)
}

proptest! {
    #![proptest_config(cases())]

    #[test]
    fn reward_terminal_and_episode_bounded(
        seed in any::<u64>(),
        d in difficulty(),
        sk in skin(),
        actions in prop::collection::vec(action(4), 0..40),
    ) {
        let env = Environment::new(generate_task(seed, &d).unwrap(), sk);
        let (mut state, _) = env.reset();
        let mut rewards = Vec::new();
        let mut script = actions.into_iter();
        let mut steps = 0;
        while !state.done {
            let a = script.next().unwrap_or(EnvAction::Navigate(0));
            let tr = env.step(&state, &a).unwrap();
            rewards.push(tr.reward);
            steps += 1;
            prop_assert_eq!(tr.done, tr.state.done);
            state = tr.state;
        }
        prop_assert!(steps <= HORIZON_CAP as usize + 1);
        prop_assert!(rewards.iter().all(|&r| r <= 1));
        prop_assert!(rewards[..rewards.len() - 1].iter().all(|&r| r == 0));
        prop_assert!(env.step(&state, &EnvAction::Stop).is_err());
    }

    #[test]
    fn same_actions_same_observations(seed in any::<u64>(), d in difficulty(), actions in prop::collection::vec(action(4), 1..16)) {
        let run = || {
            let env = Environment::new(generate_task(seed, &d).unwrap(), Skin::Web);
            let (mut state, first) = env.reset();
            let mut trace = vec![(first, 0u8)];
            for a in &actions {
                if state.done {
                    break;
                }
                let tr = env.step(&state, a).unwrap();
                trace.push((tr.observation.clone(), tr.reward));
                state = tr.state;
            }
            trace
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn default_observations_are_noise_dominated(seed in any::<u64>(), sk in skin()) {
        let d = match sk {
            Skin::Web => Difficulty { anchors: 1, horizon: 5, noise_per_step: 20, trap_noise_per_step: 1 },
            Skin::Search => Difficulty { anchors: 2, horizon: 8, noise_per_step: 20, trap_noise_per_step: 1 },
        };
        let task = generate_task(seed, &d).unwrap();
        let env = Environment::new(task.clone(), sk);
        let (mut state, _) = env.reset();
        while !state.done {
            let obs = &state.observation;
            let noise = obs.noise_tokens() as f64 / obs.total_tokens as f64;
            let has_anchor = obs.units.iter().any(|u| u.kind == UnitKind::Anchor);
            prop_assert!(noise >= if has_anchor { 0.8 } else { 0.9 }, "step {} ratio {}", obs.step, noise);
            let target = task
                .required_anchors
                .iter()
                .find(|a| a.reveal_step > state.step)
                .map_or(0, |a| a.payload);
            let tr = env.step(&state, &sk.progress_action(target)).unwrap();
            state = tr.state;
        }
    }

    #[test]
    fn curated_memory_invariants(
        w in weights(),
        seed in any::<u64>(),
        capacity in 1usize..10,
        d in difficulty(),
    ) {
        let params = PolicyParams::new(FeatureBasis::full(), w).unwrap();
        let task = generate_task(seed, &d).unwrap();
        let aug = AugmentedEnv::new(Environment::new(task.clone(), Skin::Web), ScriptedOracle::new(3, 0.8, seed).unwrap());
        let traj = rollout_trajectory(&aug, MemoryPolicy::Active { params: &params, capacity }, seed).unwrap();
        for step in &traj.steps {
            prop_assert!(step.memory.len() <= capacity);
            prop_assert!(step.memory.units().iter().any(|u| u.id == task.instruction_unit.id));
            let probs = decision_distribution(&params, &step.input, &step.decision).unwrap();
            let product: f64 = probs
                .iter()
                .zip(&step.decision.keep)
                .map(|(&p, &k)| if k { p } else { 1.0 - p })
                .product();
            let lp = logprob(&params, &step.input, &step.decision).unwrap();
            let rel = (lp.exp() - product).abs() / product.max(f64::MIN_POSITIVE);
            prop_assert!(rel < 1e-10 || product < 1e-300, "rel err {}", rel);
        }
    }

    #[test]
    fn keep_and_drop_probabilities_sum_to_one(z in -700.0f64..700.0) {
        prop_assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() <= f64::EPSILON);
        prop_assert!((log_sigmoid(z).exp() + log_sigmoid(-z).exp() - 1.0).abs() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn saturated_weights_are_deterministic(keep in any::<bool>(), seed in any::<u64>(), d in difficulty()) {
        // every full-basis feature is non-negative and bias is 1, so uniform
        // signs give |z| >= 50
        let params = PolicyParams::filled(FeatureBasis::full(), if keep { 50.0 } else { -50.0 });
        let (state, _) = Environment::new(generate_task(seed, &d).unwrap(), Skin::Web).reset();
        let input = CurationInput { memory: MemoryState::new(64), observation: state.observation, prev_action: None };
        let (_, a) = curate(&params, &input, &mut ChaCha8Rng::seed_from_u64(seed));
        let (_, b) = curate(&params, &input, &mut ChaCha8Rng::seed_from_u64(!seed));
        let probs = decision_distribution(&params, &input, &a).unwrap();
        prop_assert!(probs.iter().all(|&p| p < 1e-15 || p > 1.0 - 1e-15));
        prop_assert_eq!(&a.keep, &b.keep);
        prop_assert!(a.keep.iter().all(|&k| k) || !keep);
    }

    #[test]
    fn full_context_nondecreasing_active_bounded(
        s in 0u64..200,
        u in 0u64..50,
        p in 0u64..20,
        turns in prop::collection::vec((0u64..600, 0u64..50, 0u64..20, 0u64..8), 1..15),
        max_cost in 1u64..40,
        capacity in 1u64..10,
    ) {
        let mut web = LengthParts { sys_len: s, objective_len: u, placeholder_len: p, ..LengthParts::default() };
        let mut search = web.clone();
        let fixed_obs = turns[0].0;
        let (mut prev_web, mut prev_search) = (0, 0);
        for (i, &(obs, re, a, kept)) in turns.iter().enumerate() {
            let t = i + 1;
            web.obs_len = fixed_obs;
            search.retrieval_lens.push(obs);
            let cw = ctx_full_web(&web, t).unwrap();
            let cs = ctx_full_search(&search, t).unwrap();
            prop_assert!(cw >= prev_web && cs >= prev_search);
            prev_web = cw;
            prev_search = cs;
            let m = kept.min(capacity) * max_cost;
            let active = ctx_active_web(&LengthParts { obs_len: obs, memory_len: m, ..web.clone() });
            prop_assert!(active <= s + 599 + u + capacity * max_cost);
            web.assistant_lens.push((re, a));
            search.assistant_lens.push((re, a));
        }
        let first = LengthParts { sys_len: s, obs_len: fixed_obs, objective_len: u, placeholder_len: p, ..LengthParts::default() };
        prop_assert_eq!(ctx_full_web(&first, 1).unwrap(), ctx_no_memory(&first));
        prop_assert_eq!(ctx_active_web(&first), ctx_no_memory(&first));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    /// With a trap-free oracle on 1-anchor tasks the reward is 1 exactly when
    /// the anchor is retained from its reveal through the consume step.
    #[test]
    fn reward_determined_by_anchor_retention(seed in any::<u64>(), horizon in 3u32..7, noise in 0u32..6) {
        let task = generate_task(seed, &Difficulty::new(1, horizon, noise)).unwrap();
        let anchor = task.required_anchors[0];
        let aug = AugmentedEnv::new(Environment::new(task.clone(), Skin::Web), ScriptedOracle::trap_free(seed));
        let span = (task.consume_step - anchor.reveal_step) as usize;
        for pattern in 0u32..(1 << span) {
            let (mut state, _) = aug.env.reset();
            let mut memory = MemoryState::from_units(vec![task.instruction_unit.clone()], 64).unwrap();
            let mut reward = 0;
            while !state.done {
                let step = state.step;
                if let Some(unit) = state.observation.units.iter().find(|u| u.kind == UnitKind::Anchor).cloned() {
                    memory = MemoryState::from_units(vec![task.instruction_unit.clone(), unit], 64).unwrap();
                }
                if step > anchor.reveal_step && step <= task.consume_step {
                    let bit = (step - anchor.reveal_step - 1) as usize;
                    if pattern & (1 << bit) == 0 {
                        memory = MemoryState::from_units(vec![task.instruction_unit.clone()], 64).unwrap();
                    }
                }
                let tr = augmented_step(&aug, &state, &memory, 0).unwrap();
                reward = tr.reward;
                state = tr.state;
            }
            let retained = pattern == (1 << span) - 1;
            prop_assert_eq!(reward == 1, retained, "pattern {:b}", pattern);
        }
    }
}

#[test]
fn answer_set_matches_required_payloads() {
    let task = generate_task(17, &Difficulty::new(3, 8, 5)).unwrap();
    let expected: BTreeSet<u64> = task.required_anchors.iter().map(|a| a.payload).collect();
    assert_eq!(task.answer_set(), expected);
}
