mod common;

use marriage_rp::graph::{enumerate_paths, find_blocking_structure, BlockingStructure, EdgeMatrix, SearchMode};
use marriage_rp::io::{market_to_json, parse_market};
use marriage_rp::market::{CommittedSet, Market, Matching};
use marriage_rp::rationalize::{
    check_rationalizable, compute_stability_indices, RationalizeOptions, Regime, RegimeKind,
};
use marriage_rp::simulate::substream;
use proptest::prelude::*;

const EPS: f64 = 1e-7;

fn market_from_seed(seed: u64, max_couples: usize) -> Market {
    let mut rng = substream(seed, 0, 0);
    let n = 1 + (seed as usize % max_couples);
    common::random_market(&mut rng, n, 2, 1)
}

fn brute_force_blocks(edges: &EdgeMatrix, matching: &Matching, committed: &CommittedSet, mode: SearchMode) -> bool {
    let n = edges.couples();
    let single = (0..n)
        .filter(|&c| !committed.is_committed(c))
        .any(|c| edges.man_single(c) <= -EPS || edges.woman_single(c) <= -EPS);
    if single {
        return true;
    }
    enumerate_paths(matching, committed, n).iter().any(|p| {
        let weights: Vec<f64> = p.vertices().windows(2).map(|w| edges.edge(w[0], w[1])).collect();
        match mode {
            SearchMode::Consistency => weights.iter().all(|&a| a <= EPS) && weights.iter().any(|&a| a <= -EPS),
            SearchMode::Monotonicity => weights.iter().sum::<f64>() < -EPS,
        }
    })
}

fn grid_weight() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![-1.0, -0.5, 0.0, 0.5, 1.0])
}

/// Wives, committed flags, cross weights, man-single and woman-single weights.
type EdgeCase = (Vec<usize>, Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>);

fn edge_case() -> impl Strategy<Value = EdgeCase> {
    (1usize..=4).prop_flat_map(|n| {
        (
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(grid_weight(), n * n),
            prop::collection::vec(grid_weight(), n),
            prop::collection::vec(grid_weight(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn blocking_search_matches_brute_force((wives, flags, cross, man_single, woman_single) in edge_case()) {
        let n = wives.len();
        let pairs: Vec<(usize, usize)> = wives.iter().enumerate().map(|(m, &w)| (m, w)).collect();
        let matching = Matching::from_pairs(n, n, &pairs);
        let committed = CommittedSet::from_flags(flags);
        let rows: Vec<Vec<f64>> = cross.chunks(n).map(|r| r.to_vec()).collect();
        let edges = EdgeMatrix::from_weights(&matching, rows, man_single, woman_single).with_tolerance(EPS);
        for mode in [SearchMode::Consistency, SearchMode::Monotonicity] {
            let found = find_blocking_structure(&edges, &committed, mode);
            prop_assert_eq!(found.is_some(), brute_force_blocks(&edges, &matching, &committed, mode), "{:?}", mode);
            if let Some(BlockingStructure::Remarriages(p)) = found {
                prop_assert!(p.is_well_formed(&matching));
                prop_assert!(p.is_cycle || (!committed.is_committed(p.men[0]) && !committed.is_committed(p.endpoint)));
                let weights: Vec<f64> = p.vertices().windows(2).map(|w| edges.edge(w[0], w[1])).collect();
                match mode {
                    SearchMode::Consistency => prop_assert!(weights.iter().all(|&a| a <= EPS) && weights.iter().any(|&a| a <= -EPS)),
                    SearchMode::Monotonicity => prop_assert!(weights.iter().sum::<f64>() < 0.0),
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn regimes_are_nested(seed in any::<u64>()) {
        let market = market_from_seed(seed, 4);
        let opts = RationalizeOptions { max_path_len: None, ..Default::default() };
        let obj: Vec<f64> = [RegimeKind::Unilateral, RegimeKind::MutualConsentTransfers, RegimeKind::MutualConsentNoTransfers]
            .iter()
            .map(|&k| compute_stability_indices(&market, &Regime::new(k), &opts).unwrap().objective)
            .collect();
        prop_assert!(obj[0] <= obj[1] + 1e-6 && obj[1] <= obj[2] + 1e-6, "{:?}", obj);
    }

    #[test]
    fn empty_committed_set_collapses_to_unilateral(seed in any::<u64>()) {
        let mut market = market_from_seed(seed, 4);
        market.committed = CommittedSet::none(market.couples());
        let opts = RationalizeOptions { max_path_len: None, ..Default::default() };
        let unilateral = check_rationalizable(&market, &Regime::unilateral(), &opts).unwrap().rationalizable;
        for regime in [Regime::transfers(), Regime::no_transfers()] {
            prop_assert_eq!(check_rationalizable(&market, &regime, &opts).unwrap().rationalizable, unilateral);
        }
        let u = compute_stability_indices(&market, &Regime::unilateral(), &opts).unwrap().objective;
        let t = compute_stability_indices(&market, &Regime::transfers(), &opts).unwrap().objective;
        prop_assert!((u - t).abs() < 1e-6);
    }

    #[test]
    fn verdicts_survive_rescaling(seed in any::<u64>(), c in 0.1f64..10.0) {
        let market = market_from_seed(seed, 3);
        let opts = RationalizeOptions { max_path_len: None, ..Default::default() };
        let mut by_price = market.clone();
        for p in by_price.prices.values_mut() {
            p.private.iter_mut().chain(p.public.iter_mut()).for_each(|x| *x *= c);
        }
        by_price.incomes.values_mut().for_each(|y| *y *= c);
        let mut by_quantity = market.clone();
        by_quantity.private_obs.iter_mut().chain(by_quantity.public_obs.iter_mut()).flatten().for_each(|x| *x *= c);
        by_quantity.incomes.values_mut().for_each(|y| *y *= c);
        for kind in RegimeKind::ALL {
            let regime = Regime::new(kind);
            let base = compute_stability_indices(&market, &regime, &opts).unwrap().average;
            let verdict = check_rationalizable(&market, &regime, &opts).unwrap().rationalizable;
            for scaled in [&by_price, &by_quantity] {
                prop_assert_eq!(check_rationalizable(scaled, &regime, &opts).unwrap().rationalizable, verdict);
                let avg = compute_stability_indices(scaled, &regime, &opts).unwrap().average;
                prop_assert!((avg - base).abs() < 1e-6, "{} {} vs {}", kind, avg, base);
            }
        }
    }

    #[test]
    fn market_files_round_trip(seed in any::<u64>()) {
        let market = market_from_seed(seed, 4);
        prop_assert_eq!(parse_market(&market_to_json(&market)).unwrap(), market);
    }
}
