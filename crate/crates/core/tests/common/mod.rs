#![allow(dead_code)]

use std::collections::BTreeMap;

use marriage_rp::market::{potential_pairs, AllocationCandidate, CommittedSet, Market, Matching, PairKey, PairPrices};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random market with `n` goods of each kind, a random matching and random
/// committed flags. Observed incomes equal expenditure; outside options get
/// incomes near the pair's average expenditure so that signs vary.
pub fn random_market(rng: &mut ChaCha8Rng, couples: usize, n_private: usize, n_public: usize) -> Market {
    let mut wives: Vec<usize> = (0..couples).collect();
    wives.shuffle(rng);
    let pairs: Vec<(usize, usize)> = wives.iter().enumerate().map(|(m, &w)| (m, w)).collect();
    let matching = Matching::from_pairs(couples, couples, &pairs);
    let committed = CommittedSet::from_flags((0..couples).map(|_| rng.gen_bool(0.5)).collect());
    let private_obs: Vec<Vec<f64>> = (0..couples)
        .map(|_| (0..n_private).map(|_| rng.gen_range(0.5..3.0)).collect())
        .collect();
    let public_obs: Vec<Vec<f64>> = (0..couples)
        .map(|_| (0..n_public).map(|_| rng.gen_range(0.5..3.0)).collect())
        .collect();
    let mut market = Market {
        n_private,
        n_public,
        matching,
        committed,
        private_obs,
        public_obs,
        prices: BTreeMap::new(),
        incomes: BTreeMap::new(),
        assignable: vec![None; couples],
    };
    let mut keys: Vec<PairKey> = (0..couples).map(|c| market.couple_key(c)).collect();
    keys.extend(potential_pairs(&market));
    for key in &keys {
        let p = PairPrices {
            private: (0..n_private).map(|_| rng.gen_range(0.5..1.5)).collect(),
            public: (0..n_public).map(|_| rng.gen_range(0.5..1.5)).collect(),
        };
        market.prices.insert(*key, p);
    }
    let spend = |m: &Market, c: usize| {
        let p = m.price(&m.couple_key(c));
        dot(&p.private, &m.private_obs[c]) + dot(&p.public, &m.public_obs[c])
    };
    for c in 0..couples {
        let y = spend(&market, c);
        market.incomes.insert(market.couple_key(c), y);
    }
    for key in potential_pairs(&market) {
        let base = match (key.man, key.woman) {
            (Some(m), Some(w)) => 0.5 * (spend(&market, m) + spend(&market, market.matching.woman_to_man[w].unwrap())),
            (Some(m), None) => 0.5 * spend(&market, m),
            (None, Some(w)) => 0.5 * spend(&market, market.matching.woman_to_man[w].unwrap()),
            (None, None) => unreachable!(),
        };
        market.incomes.insert(key, base * rng.gen_range(0.6..1.4));
    }
    market
}

/// Random split of every private good and every Lindahl price.
pub fn random_candidate(rng: &mut ChaCha8Rng, market: &Market) -> AllocationCandidate {
    let mut candidate = AllocationCandidate::even_split(market);
    for c in 0..market.couples() {
        for k in 0..market.n_private {
            let f: f64 = rng.gen_range(0.0..=1.0);
            let total = market.private_obs[c][k];
            candidate.q_man[c][k] = f * total;
            candidate.q_woman[c][k] = total - f * total;
        }
    }
    let keys: Vec<PairKey> = candidate.lindahl_man.keys().copied().collect();
    for key in keys {
        let public = market.price(&key).public.clone();
        let f: Vec<f64> = public.iter().map(|_| rng.gen_range(0.0..=1.0)).collect();
        candidate
            .lindahl_man
            .insert(key, public.iter().zip(&f).map(|(p, f)| p * f).collect());
        candidate
            .lindahl_woman
            .insert(key, public.iter().zip(&f).map(|(p, f)| p * (1.0 - f)).collect());
    }
    candidate
}
