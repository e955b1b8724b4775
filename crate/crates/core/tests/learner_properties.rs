use std::collections::BTreeSet;

use cometh_core::distributions::{smooth, sw_js_divergence, JudgmentDistribution};
use cometh_core::learner::{Event, LearnerConfig, LearnerState, Placement};
use proptest::prelude::*;

fn dist() -> impl Strategy<Value = JudgmentDistribution> {
    (0u32..=20, 0u32..=20, 0u32..=20)
        .prop_filter("non-zero", |(a, b, c)| a + b + c > 0)
        .prop_map(|(a, b, c)| {
            JudgmentDistribution::from_weights([a as f64, b as f64, c as f64]).unwrap()
        })
}

fn stream() -> impl Strategy<Value = Vec<(String, String, JudgmentDistribution)>> {
    prop::collection::vec((0usize..3, dist()), 0..40).prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (a, d))| (format!("s{i}"), format!("action{a}"), d))
            .collect()
    })
}

fn config() -> impl Strategy<Value = LearnerConfig> {
    (0.01f64..0.5, 0.005f64..0.2).prop_map(|(a, m)| LearnerConfig::new(a, m))
}

fn check_fixpoint(state: &LearnerState, cfg: &LearnerConfig) {
    for action in state.actions() {
        let cs = state.contexts(action);
        for i in 0..cs.len() {
            for j in (i + 1)..cs.len() {
                let d = sw_js_divergence(
                    &smooth(&cs[i].barycenter(), cfg.epsilon),
                    cs[i].size,
                    &smooth(&cs[j].barycenter(), cfg.epsilon),
                    cs[j].size,
                )
                .unwrap();
                assert!(d >= cfg.delta_merge, "{action}: {} vs {} at {d}", cs[i].id, cs[j].id);
            }
        }
    }
}

fn l1(a: &JudgmentDistribution, b: &JudgmentDistribution) -> f64 {
    a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs()).sum()
}

proptest! {
    #[test]
    fn partition_and_fixpoint_after_every_step(items in stream(), cfg in config()) {
        let mut state = LearnerState::new(cfg).unwrap();
        let mut seen: Vec<(String, String)> = Vec::new();
        for (id, action, d) in &items {
            state.observe(id, action, d).unwrap();
            seen.push((action.clone(), id.clone()));
            for action in state.actions() {
                let mut members = Vec::new();
                for c in state.contexts(action) {
                    prop_assert_eq!(c.size as usize, c.member_ids.len());
                    prop_assert!(c.size > 0);
                    members.extend(c.member_ids.iter().cloned());
                }
                let unique: BTreeSet<_> = members.iter().cloned().collect();
                prop_assert_eq!(unique.len(), members.len());
                let expected: BTreeSet<String> =
                    seen.iter().filter(|(a, _)| a == action).map(|(_, i)| i.clone()).collect();
                prop_assert_eq!(unique, expected);
            }
            check_fixpoint(&state, &cfg);
        }
    }

    #[test]
    fn joining_moves_barycenter_by_bounded_amount(items in stream(), cfg in config()) {
        let mut state = LearnerState::new(cfg).unwrap();
        for (id, action, d) in &items {
            let before: Vec<_> = state.contexts(action).to_vec();
            let n_events = state.events().len();
            let placement = state.observe(id, action, d).unwrap();
            let merged = state.events()[n_events..].iter().any(|e| matches!(e, Event::Merged { .. }));
            if let (Placement::Assigned { context, .. }, false) = (placement, merged) {
                let old = before.iter().find(|c| c.id == context).unwrap();
                let new = state.contexts(action).iter().find(|c| c.id == context).unwrap();
                let shift = l1(&old.barycenter(), &new.barycenter());
                prop_assert!(shift <= 2.0 / (old.size as f64 + 1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn identical_streams_give_identical_logs(items in stream(), cfg in config()) {
        let run = || LearnerState::run_stream(cfg, items.iter().map(|(i, a, d)| (i.as_str(), a.as_str(), d))).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.events(), b.events());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn snapshot_round_trip(items in stream(), cfg in config()) {
        let state = LearnerState::run_stream(cfg, items.iter().map(|(i, a, d)| (i.as_str(), a.as_str(), d))).unwrap();
        let restored = LearnerState::from_json(&state.to_json()).unwrap();
        prop_assert_eq!(&restored, &state);
        prop_assert_eq!(restored.to_json(), state.to_json());
    }
}

#[test]
fn distant_canonical_contexts_do_not_merge() {
    let cfg = LearnerConfig::default();
    let a = JudgmentDistribution::new(0.8, 0.1, 0.1).unwrap();
    let b = JudgmentDistribution::new(0.1, 0.1, 0.8).unwrap();
    let state = LearnerState::run_stream(cfg, [("a", "x", &a), ("b", "x", &b)]).unwrap();
    assert_eq!(state.contexts("x").len(), 2);
}
