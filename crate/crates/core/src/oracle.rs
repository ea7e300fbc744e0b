//! Brute-force ground truth for tiny markets: coalition enumeration,
//! coalition blocking checks, the piecewise-linear candidate utility, and a
//! grid search over unobservables.
//!
//! Edge weights here are recomputed from the market directly rather than
//! through [`crate::graph`], so the two can be checked against each other.
//! Weights within `±eps` of zero are treated as non-blocking.

use crate::graph::Coalition;
use crate::lp::{solve, FeasibilityProgram, Relation, Sense, SolveOptions, SolveStatus};
use crate::market::{dot, AgentId, AllocationCandidate, CommittedSet, Market, Matching, PairKey};
use crate::rationalize::{Regime, RegimeKind};

/// Largest market accepted by coalition enumeration.
pub const MAX_ORACLE_COUPLES: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("oracle supports at most {limit} couples ({couples} given)")]
    TooLarge { couples: usize, limit: usize },
    #[error("grid search supports at most 3 couples, 2 private goods and 1 public good")]
    GridTooLarge,
    #[error("{0} is not a cross pair")]
    NotCrossPair(PairKey),
}

/// Every permissible coalition of the market's committed set, smallest first.
pub fn enumerate_permissible_coalitions(market: &Market) -> Result<Vec<Coalition>, OracleError> {
    enumerate_coalitions(&market.matching, &market.committed)
}

/// Every coalition that is permissible for `committed`: members are
/// rematched to someone other than their spouse or leave to stay single;
/// committed members keep their spouse in the coalition and do not leave to
/// stay single. Ordered by size, then lexicographically.
pub fn enumerate_coalitions(matching: &Matching, committed: &CommittedSet) -> Result<Vec<Coalition>, OracleError> {
    let n = matching.men();
    if n > MAX_ORACLE_COUPLES {
        return Err(OracleError::TooLarge {
            couples: n,
            limit: MAX_ORACLE_COUPLES,
        });
    }
    let couple_of_woman = |w: usize| matching.couple_of_woman(w);

    // Each man: absent, single, or a woman other than his wife.
    let mut out = Vec::new();
    let mut man_choice: Vec<Option<Option<usize>>> = vec![None; n];
    fn rec_men(
        m: usize,
        n: usize,
        matching: &Matching,
        committed: &CommittedSet,
        man_choice: &mut Vec<Option<Option<usize>>>,
        out: &mut Vec<Coalition>,
    ) {
        if m == n {
            finish_women(n, matching, committed, man_choice, out);
            return;
        }
        man_choice[m] = None;
        rec_men(m + 1, n, matching, committed, man_choice, out);
        if !committed.is_committed(m) {
            man_choice[m] = Some(None);
            rec_men(m + 1, n, matching, committed, man_choice, out);
        }
        for w in 0..n {
            let taken = man_choice[..m].contains(&Some(Some(w)));
            if matching.man_to_woman[m] != Some(w) && !taken {
                man_choice[m] = Some(Some(w));
                rec_men(m + 1, n, matching, committed, man_choice, out);
            }
        }
        man_choice[m] = None;
    }
    fn finish_women(
        n: usize,
        matching: &Matching,
        committed: &CommittedSet,
        man_choice: &[Option<Option<usize>>],
        out: &mut Vec<Coalition>,
    ) {
        let free: Vec<usize> = (0..n).filter(|&w| !man_choice.contains(&Some(Some(w)))).collect();
        let eligible: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&w| !committed.is_committed(matching.couple_of_woman(w)))
            .collect();
        for mask in 0u32..(1 << eligible.len()) {
            let singles: Vec<usize> = eligible
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, &w)| w)
                .collect();
            let pairs: Vec<(usize, usize)> = man_choice
                .iter()
                .enumerate()
                .filter_map(|(m, c)| c.flatten().map(|w| (m, w)))
                .collect();
            let single_men: Vec<usize> = man_choice
                .iter()
                .enumerate()
                .filter(|(_, c)| **c == Some(None))
                .map(|(m, _)| m)
                .collect();
            if pairs.is_empty() && single_men.is_empty() && singles.is_empty() {
                continue;
            }
            let coalition = Coalition::new(&pairs, &single_men, &singles);
            if coalition.is_permissible(matching, committed) {
                out.push(coalition);
            }
        }
    }
    rec_men(0, n, matching, committed, &mut man_choice, &mut out);
    let _ = couple_of_woman;
    out.sort_by(|a, b| (a.members.len(), a).cmp(&(b.members.len(), b)));
    Ok(out)
}

/// Weight of `key` at `candidate`, computed from the definitions.
pub fn direct_weight(market: &Market, candidate: &AllocationCandidate, key: &PairKey) -> f64 {
    let prices = market.price(key);
    let s = candidate
        .indices
        .as_ref()
        .and_then(|m| m.get(key))
        .copied()
        .unwrap_or(1.0);
    let y = market.income(key) * s;
    let wife_couple = |w: usize| market.matching.woman_to_man[w].expect("married woman");
    let cost = match (key.man, key.woman) {
        (Some(m), Some(w)) => {
            let j = wife_couple(w);
            let private: f64 = (0..market.n_private)
                .map(|k| prices.private[k] * (candidate.q_man[m][k] + candidate.q_woman[j][k]))
                .sum();
            let public: f64 = (0..market.n_public)
                .map(|l| {
                    candidate.lindahl_man[key][l] * market.public_obs[m][l]
                        + candidate.lindahl_woman[key][l] * market.public_obs[j][l]
                })
                .sum();
            private + public
        }
        (Some(m), None) => dot(&prices.private, &candidate.q_man[m]) + dot(&prices.public, &market.public_obs[m]),
        (None, Some(w)) => {
            let j = wife_couple(w);
            dot(&prices.private, &candidate.q_woman[j]) + dot(&prices.public, &market.public_obs[j])
        }
        (None, None) => 0.0,
    };
    cost - y
}

/// Weights of a coalition's moves grouped so that transfers inside
/// committed couples can move money within a group but not across groups.
///
/// Cross moves chain through committed couples; a group starts and ends at
/// non-committed couples, or closes into a cycle of committed couples. Each
/// single move is a group of its own.
fn transfer_groups(
    coalition: &Coalition,
    market: &Market,
    committed: &CommittedSet,
    weight: &dyn Fn(&PairKey) -> f64,
) -> Vec<Vec<f64>> {
    let n = market.couples();
    // next[i] = j when man i marries the wife of couple j.
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut groups = Vec::new();
    for (&a, &b) in &coalition.rematch {
        match (a, b) {
            (AgentId::Man(m), AgentId::Woman(w)) => next[m] = market.matching.woman_to_man[w],
            (AgentId::Man(m), AgentId::Empty) => groups.push(vec![weight(&PairKey::man_single(m))]),
            (AgentId::Woman(w), AgentId::Empty) => groups.push(vec![weight(&PairKey::woman_single(w))]),
            _ => {}
        }
    }
    let edge = |i: usize, j: usize| weight(&PairKey::cross(i, market.matching.wife(j)));
    let mut used = vec![false; n];
    // Walks starting at non-committed couples.
    for start in (0..n).filter(|&c| !committed.is_committed(c)) {
        if next[start].is_none() {
            continue;
        }
        let mut group = Vec::new();
        let mut cur = start;
        while let Some(j) = next[cur] {
            if used[cur] {
                break;
            }
            used[cur] = true;
            group.push(edge(cur, j));
            cur = j;
            if !committed.is_committed(cur) {
                break;
            }
        }
        groups.push(group);
    }
    // Remaining moves form cycles through committed couples only.
    for start in 0..n {
        if used[start] || next[start].is_none() {
            continue;
        }
        let mut group = Vec::new();
        let mut cur = start;
        while let Some(j) = next[cur] {
            if used[cur] {
                break;
            }
            used[cur] = true;
            group.push(edge(cur, j));
            cur = j;
        }
        groups.push(group);
    }
    groups
}

/// Returns the first (smallest) permissible coalition that blocks at
/// `candidate` under `regime`, if any.
///
/// Without transfers (and under unilateral divorce, where every coalition is
/// permissible) a coalition blocks when all its moves weigh at most `eps`
/// and one at most `−eps`. With transfers, money moves within committed
/// couples, so each transfer group counts by its total: all totals at most
/// `eps`, one below `−eps`.
pub fn blocking_coalition_exists(
    market: &Market,
    candidate: &AllocationCandidate,
    regime: &Regime,
    eps: f64,
) -> Result<Option<Coalition>, OracleError> {
    let committed = regime.committed(market);
    let coalitions = enumerate_coalitions(&market.matching, &committed)?;
    let weight = |key: &PairKey| direct_weight(market, candidate, key);
    for coalition in coalitions {
        let blocks = match regime.kind {
            RegimeKind::MutualConsentTransfers => {
                let sums: Vec<f64> = transfer_groups(&coalition, market, &committed, &weight)
                    .iter()
                    .map(|g| g.iter().sum())
                    .collect();
                sums.iter().all(|&s| s <= eps) && sums.iter().any(|&s| s < -eps)
            }
            _ => {
                let moves: Vec<f64> =
                    transfer_groups(&coalition, market, &CommittedSet::none(market.couples()), &weight)
                        .into_iter()
                        .flatten()
                        .collect();
                moves.iter().all(|&a| a <= eps) && moves.iter().any(|&a| a <= -eps)
            }
        };
        if blocks {
            return Ok(Some(coalition));
        }
    }
    Ok(None)
}

/// Piecewise-linear candidate utility `Σ v(x − x_ref)` with
/// `v(x) = M·x` for `x ≤ 0` and `m·x` for `x > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateUtility {
    pub q_ref: Vec<f64>,
    pub big_q_ref: Vec<f64>,
    pub slope_low: f64,
    pub slope_high: f64,
}

impl CandidateUtility {
    fn v(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.slope_high * x
        } else {
            self.slope_low * x
        }
    }

    pub fn value(&self, q: &[f64], big_q: &[f64]) -> f64 {
        q.iter().zip(&self.q_ref).map(|(a, r)| self.v(a - r)).sum::<f64>()
            + big_q
                .iter()
                .zip(&self.big_q_ref)
                .map(|(a, r)| self.v(a - r))
                .sum::<f64>()
    }
}

/// Slopes `m < min` and `M > max` over every price and Lindahl component.
pub fn utility_slopes(market: &Market, candidate: &AllocationCandidate) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let comps = market
        .prices
        .values()
        .flat_map(|p| p.private.iter().chain(&p.public))
        .chain(candidate.lindahl_man.values().flatten())
        .chain(candidate.lindahl_woman.values().flatten());
    for &x in comps {
        if x > 0.0 {
            lo = lo.min(x);
        }
        hi = hi.max(x);
    }
    (0.5 * lo, 2.0 * hi)
}

/// Candidate utilities of the man and the woman of a cross pair, anchored
/// at their current bundles.
pub fn candidate_utilities(
    market: &Market,
    candidate: &AllocationCandidate,
    pair: &PairKey,
) -> Result<(CandidateUtility, CandidateUtility), OracleError> {
    let (Some(m), Some(w)) = (pair.man, pair.woman) else {
        return Err(OracleError::NotCrossPair(*pair));
    };
    let j = market.matching.couple_of_woman(w);
    let (slope_low, slope_high) = utility_slopes(market, candidate);
    let man = CandidateUtility {
        q_ref: candidate.q_man[m].clone(),
        big_q_ref: market.public_obs[m].clone(),
        slope_low,
        slope_high,
    };
    let woman = CandidateUtility {
        q_ref: candidate.q_woman[j].clone(),
        big_q_ref: market.public_obs[j].clone(),
        slope_low,
        slope_high,
    };
    Ok((man, woman))
}

/// Whether the pair blocks when both members hold the candidate utilities:
/// some affordable bundle leaves both at least as well off as now and one
/// strictly better. Solved as an LP over the concave epigraph of `v`.
pub fn candidate_utility_block_check(
    market: &Market,
    candidate: &AllocationCandidate,
    pair: &PairKey,
) -> Result<bool, OracleError> {
    let (man, woman) = candidate_utilities(market, candidate, pair)?;
    let prices = market.price(pair);
    let income = market.income(pair);
    let n = market.n_private;
    let big_n = market.n_public;
    let mut lp = FeasibilityProgram::new();
    let qm: Vec<_> = (0..n)
        .map(|k| lp.add_variable(format!("qm{k}"), 0.0, f64::INFINITY))
        .collect();
    let qw: Vec<_> = (0..n)
        .map(|k| lp.add_variable(format!("qw{k}"), 0.0, f64::INFINITY))
        .collect();
    let big_q: Vec<_> = (0..big_n)
        .map(|l| lp.add_variable(format!("Q{l}"), 0.0, f64::INFINITY))
        .collect();

    let mut budget = Vec::new();
    for k in 0..n {
        budget.push((qm[k], prices.private[k]));
        budget.push((qw[k], prices.private[k]));
    }
    for l in 0..big_n {
        budget.push((big_q[l], prices.public[l]));
    }
    lp.add_constraint("budget", budget, Relation::Le, income);

    let mut objective = Vec::new();
    for (who, util, private) in [("m", &man, &qm), ("w", &woman, &qw)] {
        let mut total = Vec::new();
        let goods = private
            .iter()
            .zip(&util.q_ref)
            .chain(big_q.iter().zip(&util.big_q_ref))
            .enumerate();
        for (g, (&x, &r)) in goods {
            // u ≤ slope·(x − r) for both slopes.
            let u = lp.add_variable(format!("u{who}{g}"), f64::NEG_INFINITY, f64::INFINITY);
            for slope in [util.slope_low, util.slope_high] {
                lp.add_constraint(
                    format!("v{who}{g}"),
                    vec![(u, 1.0), (x, -slope)],
                    Relation::Le,
                    -slope * r,
                );
            }
            total.push((u, 1.0));
        }
        lp.add_constraint(format!("keep{who}"), total.clone(), Relation::Ge, 0.0);
        objective.extend(total);
    }
    lp.set_objective(objective, Sense::Maximize);
    let sol = solve(&lp, &SolveOptions::default()).expect("well-formed program");
    let scale = income.abs().max(1.0) * man.slope_high.max(1.0);
    Ok(sol.status == SolveStatus::Optimal && sol.objective_value.unwrap_or(0.0) > 1e-9 * scale)
}

/// Grid points in `[0, 1]`: the midpoint for one step, otherwise `i/(k−1)`.
fn grid(steps: usize) -> Vec<f64> {
    if steps <= 1 {
        vec![0.5]
    } else {
        (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect()
    }
}

/// Searches a uniform grid of private shares for unobservables under which
/// no permissible coalition blocks. A `true` answer is a certificate; a
/// `false` answer may be an artifact of the grid.
///
/// For each cross pair the Lindahl split is taken from the grid point that
/// maximizes the pair's weight: raising a weight never creates a block, so
/// this choice dominates every other grid split.
pub fn grid_search_rationalizability(
    market: &Market,
    grid_steps: usize,
    regime: &Regime,
    eps: f64,
) -> Result<bool, OracleError> {
    let couples = market.couples();
    if couples > 3 || market.n_private > 2 || market.n_public > 1 {
        return Err(OracleError::GridTooLarge);
    }
    let points = grid(grid_steps);
    let dims = couples * market.n_private;
    let mut idx = vec![0usize; dims];
    loop {
        let fractions = idx.iter().map(|&i| points[i]).collect::<Vec<_>>();
        let candidate = grid_candidate(market, &fractions, &points);
        if blocking_coalition_exists(market, &candidate, regime, eps)?.is_none() {
            return Ok(true);
        }
        // Odometer over the share grid.
        let mut d = 0;
        loop {
            if d == dims {
                return Ok(false);
            }
            idx[d] += 1;
            if idx[d] < points.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn grid_candidate(market: &Market, fractions: &[f64], points: &[f64]) -> AllocationCandidate {
    let n = market.n_private;
    let mut candidate = AllocationCandidate::with_shares(market, |_| 0.0, |_| 0.5);
    for c in 0..market.couples() {
        for k in 0..n {
            let total = market.private_obs[c][k];
            candidate.q_man[c][k] = fractions[c * n + k] * total;
            candidate.q_woman[c][k] = total - candidate.q_man[c][k];
        }
    }
    for (key, pm) in candidate.lindahl_man.iter_mut() {
        let i = key.man.expect("cross");
        let j = market.matching.couple_of_woman(key.woman.expect("cross"));
        let public = &market.price(key).public;
        let pw = candidate.lindahl_woman.get_mut(key).expect("split");
        for l in 0..public.len() {
            // Weight rises with P^m when the man's couple buys more of good l.
            let gain = market.public_obs[i][l] - market.public_obs[j][l];
            let f = if gain >= 0.0 {
                points.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                points.iter().copied().fold(f64::INFINITY, f64::min)
            };
            pm[l] = f * public[l];
            pw[l] = public[l] - pm[l];
        }
    }
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::uniform;

    #[test]
    fn one_non_committed_couple() {
        let market = uniform(&[1.0], &[1.0]);
        let all = enumerate_permissible_coalitions(&market).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0], Coalition::new(&[], &[0], &[]));
        assert!(all.contains(&Coalition::new(&[], &[], &[0])));
        assert!(all.contains(&Coalition::new(&[], &[0], &[0])));
    }

    #[test]
    fn one_committed_couple_has_no_coalition() {
        let mut market = uniform(&[1.0], &[1.0]);
        market.committed = CommittedSet::all(1);
        assert!(enumerate_permissible_coalitions(&market).unwrap().is_empty());
    }

    #[test]
    fn two_committed_couples_only_swap() {
        let mut market = uniform(&[1.0, 1.0], &[1.0, 1.0]);
        market.committed = CommittedSet::all(2);
        let all = enumerate_permissible_coalitions(&market).unwrap();
        assert_eq!(all, vec![Coalition::new(&[(0, 1), (1, 0)], &[], &[])]);
    }

    #[test]
    fn too_large_market_rejected() {
        let market = uniform(&[1.0; 5], &[1.0; 5]);
        assert!(matches!(
            enumerate_permissible_coalitions(&market),
            Err(OracleError::TooLarge { .. })
        ));
    }

    fn swap_market(a01: f64, a10: f64) -> (Market, AllocationCandidate) {
        // Flat market where cross incomes are set to hit the target weights
        // at the even split.
        let mut market = uniform(&[2.0, 2.0], &[1.0, 1.0]);
        market.committed = CommittedSet::all(2);
        let candidate = AllocationCandidate::even_split(&market);
        for (key, target) in [(PairKey::cross(0, 1), a01), (PairKey::cross(1, 0), a10)] {
            let cost = direct_weight(&market, &candidate, &key) + market.income(&key);
            market.incomes.insert(key, cost - target);
        }
        (market, candidate)
    }

    #[test]
    fn swap_blocks_only_with_transfers() {
        let (market, candidate) = swap_market(-1.0, 0.5);
        assert_eq!(
            blocking_coalition_exists(&market, &candidate, &Regime::no_transfers(), 1e-7).unwrap(),
            None
        );
        assert_eq!(
            blocking_coalition_exists(&market, &candidate, &Regime::transfers(), 1e-7).unwrap(),
            Some(Coalition::new(&[(0, 1), (1, 0)], &[], &[]))
        );
    }

    #[test]
    fn non_negative_weights_never_block() {
        let (market, candidate) = swap_market(0.5, 0.5);
        for kind in RegimeKind::ALL {
            assert_eq!(
                blocking_coalition_exists(&market, &candidate, &Regime::new(kind), 1e-7).unwrap(),
                None
            );
        }
    }

    #[test]
    fn single_agent_block() {
        let mut market = uniform(&[2.0, 2.0], &[1.0, 1.0]);
        let candidate = AllocationCandidate::even_split(&market);
        // a_{m0,∅} = 1 + 1 − y = −0.2
        market.incomes.insert(PairKey::man_single(0), 2.2);
        for kind in RegimeKind::ALL {
            let found = blocking_coalition_exists(&market, &candidate, &Regime::new(kind), 1e-7).unwrap();
            assert_eq!(found, Some(Coalition::new(&[], &[0], &[])), "{kind}");
        }
    }

    #[test]
    fn utility_check_boundaries() {
        let market = uniform(&[2.0, 2.0], &[1.0, 1.0]);
        let candidate = AllocationCandidate::even_split(&market);
        let key = PairKey::cross(0, 1);
        let a = direct_weight(&market, &candidate, &key);
        // Equal public consumption: affordable surplus ⇔ negative weight.
        let mut cheap = market.clone();
        cheap.incomes.insert(key, market.income(&key) + a + 0.5);
        assert!(candidate_utility_block_check(&cheap, &candidate, &key).unwrap());
        let mut dear = market.clone();
        dear.incomes.insert(key, market.income(&key) + a - 0.5);
        assert!(!candidate_utility_block_check(&dear, &candidate, &key).unwrap());
        let mut exact = market.clone();
        exact.incomes.insert(key, market.income(&key) + a);
        assert!(!candidate_utility_block_check(&exact, &candidate, &key).unwrap());
        assert!(candidate_utility_block_check(&market, &candidate, &PairKey::man_single(0)).is_err());
    }

    #[test]
    fn utility_is_zero_at_reference() {
        let u = CandidateUtility {
            q_ref: vec![1.0, 2.0],
            big_q_ref: vec![3.0],
            slope_low: 0.5,
            slope_high: 4.0,
        };
        assert_eq!(u.value(&[1.0, 2.0], &[3.0]), 0.0);
        assert_eq!(u.value(&[2.0, 2.0], &[2.0]), 0.5 - 4.0);
    }

    #[test]
    fn grid_search_on_rationalizable_market() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        assert!(grid_search_rationalizability(&market, 11, &Regime::unilateral(), 1e-7).unwrap());
        let mut bad = market.clone();
        bad.incomes.insert(PairKey::cross(0, 1), 20.0);
        assert!(!grid_search_rationalizability(&bad, 11, &Regime::unilateral(), 1e-7).unwrap());
    }
}
