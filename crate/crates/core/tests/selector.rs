use std::collections::BTreeMap;

use ipl_core::scheduler::{candidate_pool, selection_batch, RunConfig};
use ipl_core::scorer::{parse_template, ScorerContext};
use ipl_core::selector::{
    brute_force_best, greedy_select, FacilityLocationOracle, GreedyConfig, ModularOracle, ObjectiveOracle, SetFunction,
};
use ipl_core::store::synth::{generate_world, SynthConfig};
use ipl_core::store::{TokenId, VocabMeta};
use ipl_core::vocab::CandidatePool;
use proptest::prelude::*;

fn pool(n: usize) -> CandidatePool {
    CandidatePool::from_entries(
        (0..n)
            .map(|i| VocabMeta { word: format!("t{i:02}"), token_id: i as TokenId, zipf: 4.0, in_lexicon: true, piece_count: 1 })
            .collect(),
    )
    .unwrap()
}

fn value_of(oracle: &dyn SetFunction, p: &CandidatePool, k: usize, cfg: GreedyConfig) -> (Vec<TokenId>, f64) {
    let steps = greedy_select(p, k, oracle, &cfg, |_| Ok(())).unwrap();
    let ids: Vec<TokenId> = steps.iter().map(|s| s.token_id).collect();
    let v = oracle.value(&ids).unwrap();
    (ids, v)
}

proptest! {
    #[test]
    fn greedy_is_optimal_for_modular(weights in prop::collection::vec(0.0f64..10.0, 2..10), k in 1usize..5) {
        let n = weights.len();
        let k = k.min(n);
        let oracle = ModularOracle { weights: weights.iter().enumerate().map(|(i, &w)| (i as TokenId, w)).collect::<BTreeMap<_, _>>() };
        let p = pool(n);
        let (_, greedy) = value_of(&oracle, &p, k, GreedyConfig::default());
        let best = brute_force_best(&p, k, &oracle).unwrap().value;
        prop_assert!((greedy - best).abs() < 1e-9);
    }

    #[test]
    fn facility_location_bound_and_lazy_agreement(
        sim in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 8), 1..6),
        k in 1usize..5,
    ) {
        let oracle = FacilityLocationOracle { sim };
        let p = pool(8);
        let (plain_ids, plain) = value_of(&oracle, &p, k, GreedyConfig::default());
        let (lazy_ids, _) = value_of(&oracle, &p, k, GreedyConfig { lazy: true, ..GreedyConfig::default() });
        prop_assert_eq!(plain_ids, lazy_ids);
        let best = brute_force_best(&p, k, &oracle).unwrap().value;
        prop_assert!(plain >= (1.0 - (-1.0f64).exp()) * best - 1e-12);
    }

    #[test]
    fn step_gains_are_non_increasing_for_submodular(
        sim in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 7), 1..6),
    ) {
        let oracle = FacilityLocationOracle { sim };
        let steps = greedy_select(&pool(7), 5, &oracle, &GreedyConfig::default(), |_| Ok(())).unwrap();
        for w in steps.windows(2) {
            prop_assert!(w[1].gain <= w[0].gain + 1e-12);
        }
    }
}

#[test]
fn objective_selection_is_independent_of_workers_and_laziness() {
    let world = generate_world(&SynthConfig::default(), 1).unwrap();
    let store = &world.store;
    let cfg = RunConfig { tau: 0.1, encoder: ipl_core::prompt::TextEncoder::Emphasis { gain: 2.0 }, ..RunConfig::default() };
    let template = parse_template(&cfg.template, store).unwrap();
    let ctx = ScorerContext::from_template(store, &template, selection_batch(store, &cfg).unwrap(), cfg.tau, cfg.encoder).unwrap();
    let oracle = ObjectiveOracle { ctx: &ctx, lambda: 0.1 };
    let p = candidate_pool(store, &cfg);
    let words = |g: GreedyConfig| -> Vec<String> {
        greedy_select(&p, 4, &oracle, &g, |_| Ok(())).unwrap().into_iter().map(|s| s.chosen).collect()
    };
    let serial = words(GreedyConfig::default());
    assert_eq!(serial, words(GreedyConfig { workers: 4, lazy: false }));
    assert_eq!(serial, words(GreedyConfig { workers: 3, lazy: true }));
    assert!(world.truth.planted_words.contains(&serial[0]) || world.truth.duplicate.as_ref().is_some_and(|d| d.0 == serial[0]));
}
