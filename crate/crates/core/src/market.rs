//! Marriage-market dataset and candidate unobservables.
//!
//! A [`Market`] holds everything a researcher observes: the matching, which
//! couples are committed (divorce by mutual consent only), the aggregate
//! private and public consumption of every observed couple, and the prices
//! and incomes of every potential pair, including the option of staying
//! single. An [`AllocationCandidate`] holds what is not observed: the split
//! of private consumption inside each couple, the Lindahl split of public
//! prices for every potential pair, and optionally transfers and stability
//! indices.

use std::collections::BTreeMap;
use std::fmt;

/// Relative tolerance of the budget identity checked at ingestion.
pub const BUDGET_TOLERANCE: f64 = 1e-6;

/// An agent of the market, or the option of staying alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentId {
    Man(usize),
    Woman(usize),
    Empty,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Man(m) => write!(f, "m{m}"),
            AgentId::Woman(w) => write!(f, "w{w}"),
            AgentId::Empty => write!(f, "∅"),
        }
    }
}

/// A potential pair `(m, w)` over `(M ∪ {∅}) × (W ∪ {∅})`; `None` is `∅`.
///
/// `(∅, ∅)` is not a pair; constructors never build it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub man: Option<usize>,
    pub woman: Option<usize>,
}

impl PairKey {
    pub fn cross(man: usize, woman: usize) -> Self {
        Self {
            man: Some(man),
            woman: Some(woman),
        }
    }

    pub fn man_single(man: usize) -> Self {
        Self {
            man: Some(man),
            woman: None,
        }
    }

    pub fn woman_single(woman: usize) -> Self {
        Self {
            man: None,
            woman: Some(woman),
        }
    }

    pub fn is_cross(&self) -> bool {
        self.man.is_some() && self.woman.is_some()
    }

    pub fn is_single(&self) -> bool {
        self.man.is_some() != self.woman.is_some()
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let man = self.man.map_or_else(|| "∅".to_string(), |m| format!("m{m}"));
        let woman = self.woman.map_or_else(|| "∅".to_string(), |w| format!("w{w}"));
        write!(f, "({man},{woman})")
    }
}

/// The observed matching `σ`, stored in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub man_to_woman: Vec<Option<usize>>,
    pub woman_to_man: Vec<Option<usize>>,
}

impl Matching {
    /// Man `i` married to woman `i` for every `i < couples`.
    pub fn identity(couples: usize) -> Self {
        Self {
            man_to_woman: (0..couples).map(Some).collect(),
            woman_to_man: (0..couples).map(Some).collect(),
        }
    }

    /// Builds a matching from `(man, woman)` pairs; unlisted agents are single.
    pub fn from_pairs(men: usize, women: usize, pairs: &[(usize, usize)]) -> Self {
        let mut man_to_woman = vec![None; men];
        let mut woman_to_man = vec![None; women];
        for &(m, w) in pairs {
            if m < men {
                man_to_woman[m] = Some(w);
            }
            if w < women {
                woman_to_man[w] = Some(m);
            }
        }
        Self {
            man_to_woman,
            woman_to_man,
        }
    }

    pub fn men(&self) -> usize {
        self.man_to_woman.len()
    }

    pub fn women(&self) -> usize {
        self.woman_to_man.len()
    }

    /// Wife of couple `c` (couples are indexed by the husband).
    ///
    /// Panics if the man is single; valid markets marry everyone.
    pub fn wife(&self, couple: usize) -> usize {
        self.man_to_woman[couple].expect("every man is married in a valid market")
    }

    /// Couple (husband index) of woman `w`.
    pub fn couple_of_woman(&self, woman: usize) -> usize {
        self.woman_to_man[woman].expect("every woman is married in a valid market")
    }

    /// Spouse of an agent under `σ`; `Empty` for singles and for `∅` itself.
    pub fn spouse(&self, agent: AgentId) -> AgentId {
        match agent {
            AgentId::Man(m) => self
                .man_to_woman
                .get(m)
                .copied()
                .flatten()
                .map_or(AgentId::Empty, AgentId::Woman),
            AgentId::Woman(w) => self
                .woman_to_man
                .get(w)
                .copied()
                .flatten()
                .map_or(AgentId::Empty, AgentId::Man),
            AgentId::Empty => AgentId::Empty,
        }
    }

    /// Pair key of the edge from couple `from` to couple `to`: the husband of
    /// `from` remarries the wife of `to`.
    pub fn edge_key(&self, from: usize, to: usize) -> PairKey {
        PairKey::cross(from, self.wife(to))
    }
}

/// Committed flags, one per observed couple (indexed by husband).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommittedSet {
    pub flags: Vec<bool>,
}

impl CommittedSet {
    pub fn none(couples: usize) -> Self {
        Self {
            flags: vec![false; couples],
        }
    }

    pub fn all(couples: usize) -> Self {
        Self {
            flags: vec![true; couples],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn is_committed(&self, couple: usize) -> bool {
        self.flags.get(couple).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Private (`p`) and public (`P`) price vectors of one potential pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrices {
    pub private: Vec<f64>,
    pub public: Vec<f64>,
}

/// Observed lower bounds on the individual private shares of one couple.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignable {
    pub man: Vec<f64>,
    pub woman: Vec<f64>,
}

/// Full observed dataset.
///
/// Per-couple vectors are indexed by the husband's index. Price and income
/// maps are keyed by every potential pair including observed couples and the
/// single options `(m, ∅)` and `(∅, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub n_private: usize,
    pub n_public: usize,
    pub matching: Matching,
    pub committed: CommittedSet,
    pub private_obs: Vec<Vec<f64>>,
    pub public_obs: Vec<Vec<f64>>,
    pub prices: BTreeMap<PairKey, PairPrices>,
    pub incomes: BTreeMap<PairKey, f64>,
    pub assignable: Vec<Option<Assignable>>,
}

impl Market {
    pub fn couples(&self) -> usize {
        self.matching.men()
    }

    /// Key of the observed couple `c`.
    pub fn couple_key(&self, couple: usize) -> PairKey {
        PairKey::cross(couple, self.matching.wife(couple))
    }

    /// Prices of a pair. Panics when missing; call on validated markets.
    pub fn price(&self, key: &PairKey) -> &PairPrices {
        self.prices
            .get(key)
            .unwrap_or_else(|| panic!("missing prices for {key}"))
    }

    /// Income of a pair. Panics when missing; call on validated markets.
    pub fn income(&self, key: &PairKey) -> f64 {
        *self
            .incomes
            .get(key)
            .unwrap_or_else(|| panic!("missing income for {key}"))
    }

    /// Money value of couple `c`'s private consumption at its own prices.
    pub fn private_expenditure(&self, couple: usize) -> f64 {
        dot(&self.price(&self.couple_key(couple)).private, &self.private_obs[couple])
    }

    /// Every potential outside option, see [`potential_pairs`].
    pub fn potential_pairs(&self) -> Vec<PairKey> {
        potential_pairs(self)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every outside option `(m, w)` with `m ∈ M ∪ {∅}`, `w ∈ W ∪ {∅}`, excluding
/// `(∅, ∅)` and the observed couples. Men-major, then woman index; the single
/// options `(m, ∅)` follow, then `(∅, w)`.
pub fn potential_pairs(market: &Market) -> Vec<PairKey> {
    pairs_of_matching(&market.matching)
}

pub(crate) fn pairs_of_matching(matching: &Matching) -> Vec<PairKey> {
    let men = matching.men();
    let women = matching.women();
    let mut keys = Vec::with_capacity(men * women + men + women);
    for m in 0..men {
        for w in 0..women {
            if matching.man_to_woman[m] != Some(w) {
                keys.push(PairKey::cross(m, w));
            }
        }
    }
    keys.extend((0..men).map(PairKey::man_single));
    keys.extend((0..women).map(PairKey::woman_single));
    keys
}

/// One failed market invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnequalSides {
        men: usize,
        women: usize,
    },
    IndexOutOfRange {
        agent: AgentId,
    },
    MatchingInconsistent {
        man: usize,
        woman: usize,
    },
    UnmatchedAgent(AgentId),
    CommittedLength {
        expected: usize,
        found: usize,
    },
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    NegativeQuantity {
        field: String,
    },
    NonFiniteValue {
        field: String,
    },
    UnknownPair(PairKey),
    MissingPrice(PairKey),
    MissingIncome(PairKey),
    NonPositivePrice(PairKey),
    NonPositiveIncome(PairKey),
    AssignableExceedsTotal {
        couple: usize,
    },
    BudgetMismatch {
        couple: usize,
        expenditure: f64,
        income: f64,
    },
}

impl Violation {
    /// Machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::UnequalSides { .. } => "UnequalSides",
            Violation::IndexOutOfRange { .. } => "IndexOutOfRange",
            Violation::MatchingInconsistent { .. } => "MatchingInconsistent",
            Violation::UnmatchedAgent(_) => "UnmatchedAgent",
            Violation::CommittedLength { .. } => "CommittedLength",
            Violation::DimensionMismatch { .. } => "DimensionMismatch",
            Violation::NegativeQuantity { .. } => "NegativeQuantity",
            Violation::NonFiniteValue { .. } => "NonFiniteValue",
            Violation::UnknownPair(_) => "UnknownPair",
            Violation::MissingPrice(_) => "MissingPrice",
            Violation::MissingIncome(_) => "MissingIncome",
            Violation::NonPositivePrice(_) => "NonPositivePrice",
            Violation::NonPositiveIncome(_) => "NonPositiveIncome",
            Violation::AssignableExceedsTotal { .. } => "AssignableExceedsTotal",
            Violation::BudgetMismatch { .. } => "BudgetMismatch",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnequalSides { men, women } => {
                write!(f, "markets need as many men as women, got {men} and {women}")
            }
            Violation::IndexOutOfRange { agent } => write!(f, "{agent} is out of range"),
            Violation::MatchingInconsistent { man, woman } => {
                write!(f, "m{man} is matched to w{woman} but w{woman} is not matched to m{man}")
            }
            Violation::UnmatchedAgent(agent) => write!(f, "{agent} is not married"),
            Violation::CommittedLength { expected, found } => {
                write!(f, "expected {expected} committed flags, found {found}")
            }
            Violation::DimensionMismatch { field, expected, found } => {
                write!(f, "{field}: expected length {expected}, found {found}")
            }
            Violation::NegativeQuantity { field } => write!(f, "{field} has a negative entry"),
            Violation::NonFiniteValue { field } => write!(f, "{field} is not finite"),
            Violation::UnknownPair(key) => write!(f, "{key} is not a potential pair"),
            Violation::MissingPrice(key) => write!(f, "no prices for {key}"),
            Violation::MissingIncome(key) => write!(f, "no income for {key}"),
            Violation::NonPositivePrice(key) => write!(f, "prices of {key} must be strictly positive"),
            Violation::NonPositiveIncome(key) => write!(f, "income of {key} must be strictly positive"),
            Violation::AssignableExceedsTotal { couple } => {
                write!(f, "assignable consumption of couple {couple} exceeds its total")
            }
            Violation::BudgetMismatch {
                couple,
                expenditure,
                income,
            } => write!(f, "couple {couple} spends {expenditure} but has income {income}"),
        }
    }
}

/// Returns every invariant violation of `market`; empty means valid.
pub fn validate_market(market: &Market) -> Vec<Violation> {
    let mut out = Vec::new();
    let men = market.matching.men();
    let women = market.matching.women();
    if men != women {
        out.push(Violation::UnequalSides { men, women });
    }

    for (m, partner) in market.matching.man_to_woman.iter().enumerate() {
        match *partner {
            None => out.push(Violation::UnmatchedAgent(AgentId::Man(m))),
            Some(w) if w >= women => out.push(Violation::IndexOutOfRange {
                agent: AgentId::Woman(w),
            }),
            Some(w) if market.matching.woman_to_man[w] != Some(m) => {
                out.push(Violation::MatchingInconsistent { man: m, woman: w })
            }
            Some(_) => {}
        }
    }
    for (w, partner) in market.matching.woman_to_man.iter().enumerate() {
        match *partner {
            None => out.push(Violation::UnmatchedAgent(AgentId::Woman(w))),
            Some(m) if m >= men => out.push(Violation::IndexOutOfRange { agent: AgentId::Man(m) }),
            Some(m) if market.matching.man_to_woman[m] != Some(w) => {
                out.push(Violation::MatchingInconsistent { man: m, woman: w })
            }
            Some(_) => {}
        }
    }
    let structural = !out.is_empty();

    if market.committed.len() != men {
        out.push(Violation::CommittedLength {
            expected: men,
            found: market.committed.len(),
        });
    }

    check_per_couple(market, men, &mut out);
    check_pair_maps(market, men, women, &mut out);

    if !structural {
        for c in 0..men {
            let key = market.couple_key(c);
            let (Some(prices), Some(q), Some(big_q), Some(&income)) = (
                market.prices.get(&key),
                market.private_obs.get(c),
                market.public_obs.get(c),
                market.incomes.get(&key),
            ) else {
                continue;
            };
            let dims_ok = prices.private.len() == market.n_private
                && prices.public.len() == market.n_public
                && q.len() == market.n_private
                && big_q.len() == market.n_public;
            if !dims_ok || !income.is_finite() {
                continue;
            }
            let expenditure = dot(&prices.private, q) + dot(&prices.public, big_q);
            if (expenditure - income).abs() > BUDGET_TOLERANCE * income.abs().max(1.0) {
                out.push(Violation::BudgetMismatch {
                    couple: c,
                    expenditure,
                    income,
                });
            }
        }
    }
    out
}

fn check_vector(out: &mut Vec<Violation>, field: String, values: &[f64], expected: usize, nonnegative: bool) -> bool {
    if values.len() != expected {
        out.push(Violation::DimensionMismatch {
            field,
            expected,
            found: values.len(),
        });
        return false;
    }
    if values.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFiniteValue { field });
        return false;
    }
    if nonnegative && values.iter().any(|&v| v < 0.0) {
        out.push(Violation::NegativeQuantity { field });
        return false;
    }
    true
}

fn check_per_couple(market: &Market, men: usize, out: &mut Vec<Violation>) {
    let n = market.n_private;
    let big_n = market.n_public;
    for (field, rows, dim) in [
        ("private_obs", &market.private_obs, n),
        ("public_obs", &market.public_obs, big_n),
    ] {
        if rows.len() != men {
            out.push(Violation::DimensionMismatch {
                field: field.to_string(),
                expected: men,
                found: rows.len(),
            });
            continue;
        }
        for (c, row) in rows.iter().enumerate() {
            check_vector(out, format!("{field}[{c}]"), row, dim, true);
        }
    }

    if market.assignable.len() != men {
        out.push(Violation::DimensionMismatch {
            field: "assignable".to_string(),
            expected: men,
            found: market.assignable.len(),
        });
        return;
    }
    for (c, entry) in market.assignable.iter().enumerate() {
        let Some(a) = entry else { continue };
        let ok_m = check_vector(out, format!("assignable[{c}].man"), &a.man, n, true);
        let ok_w = check_vector(out, format!("assignable[{c}].woman"), &a.woman, n, true);
        if ok_m && ok_w {
            if let Some(total) = market.private_obs.get(c).filter(|t| t.len() == n) {
                let exceeds =
                    (0..n).any(|k| a.man[k] + a.woman[k] > total[k] + BUDGET_TOLERANCE * total[k].abs().max(1.0));
                if exceeds {
                    out.push(Violation::AssignableExceedsTotal { couple: c });
                }
            }
        }
    }
}

fn key_in_domain(key: &PairKey, men: usize, women: usize) -> bool {
    match (key.man, key.woman) {
        (None, None) => false,
        (m, w) => m.is_none_or(|m| m < men) && w.is_none_or(|w| w < women),
    }
}

fn check_pair_maps(market: &Market, men: usize, women: usize, out: &mut Vec<Violation>) {
    for key in market.prices.keys().chain(market.incomes.keys()) {
        if !key_in_domain(key, men, women) {
            out.push(Violation::UnknownPair(*key));
        }
    }
    let mut domain: Vec<PairKey> = Vec::with_capacity((men + 1) * (women + 1));
    for m in 0..men {
        for w in 0..women {
            domain.push(PairKey::cross(m, w));
        }
    }
    domain.extend((0..men).map(PairKey::man_single));
    domain.extend((0..women).map(PairKey::woman_single));

    for key in &domain {
        match market.prices.get(key) {
            None => out.push(Violation::MissingPrice(*key)),
            Some(prices) => {
                let ok_p = check_vector(out, format!("p{key}"), &prices.private, market.n_private, false);
                let ok_big_p = check_vector(out, format!("P{key}"), &prices.public, market.n_public, false);
                if ok_p && ok_big_p && prices.private.iter().chain(&prices.public).any(|&v| v <= 0.0) {
                    out.push(Violation::NonPositivePrice(*key));
                }
            }
        }
        match market.incomes.get(key) {
            None => out.push(Violation::MissingIncome(*key)),
            Some(y) if !y.is_finite() => out.push(Violation::NonFiniteValue {
                field: format!("y{key}"),
            }),
            Some(&y) if y <= 0.0 => out.push(Violation::NonPositiveIncome(*key)),
            Some(_) => {}
        }
    }
}

/// The unobservables: individual private shares, Lindahl splits, and
/// optional transfers and stability indices.
///
/// Shares are indexed by couple. Lindahl splits are keyed by cross pairs
/// (observed couples need none: their public expenditure is `P·Q` whatever
/// the split).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationCandidate {
    pub q_man: Vec<Vec<f64>>,
    pub q_woman: Vec<Vec<f64>>,
    pub lindahl_man: BTreeMap<PairKey, Vec<f64>>,
    pub lindahl_woman: BTreeMap<PairKey, Vec<f64>>,
    pub transfers: Option<Vec<f64>>,
    pub indices: Option<BTreeMap<PairKey, f64>>,
}

/// Why a candidate does not fit its market.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CandidateError {
    #[error("{0}: dimension mismatch")]
    Dimension(String),
    #[error("couple {0}: private shares do not add up to observed consumption")]
    AddingUp(usize),
    #[error("couple {0}: negative private share")]
    NegativeShare(usize),
    #[error("{0}: Lindahl prices do not add up to the public price")]
    LindahlSplit(PairKey),
    #[error("{0}: missing Lindahl split")]
    MissingLindahl(PairKey),
    #[error("couple {0}: transfer on a non-committed couple")]
    UncommittedTransfer(usize),
    #[error("{0}: stability index outside [0, 1]")]
    IndexRange(PairKey),
}

impl AllocationCandidate {
    /// Equal split of every couple's private goods and of every public price.
    pub fn even_split(market: &Market) -> Self {
        Self::with_shares(market, |_| 0.5, |_| 0.5)
    }

    /// Husband of couple `c` gets fraction `share(c)` of each private good;
    /// the man's Lindahl price of pair `k` is fraction `lindahl(k)` of `P`.
    pub fn with_shares(market: &Market, share: impl Fn(usize) -> f64, lindahl: impl Fn(&PairKey) -> f64) -> Self {
        let couples = market.couples();
        let mut q_man = Vec::with_capacity(couples);
        let mut q_woman = Vec::with_capacity(couples);
        for c in 0..couples {
            let f = share(c);
            q_man.push(market.private_obs[c].iter().map(|q| q * f).collect::<Vec<_>>());
            q_woman.push(market.private_obs[c].iter().map(|q| q * (1.0 - f)).collect::<Vec<_>>());
        }
        let mut lindahl_man = BTreeMap::new();
        let mut lindahl_woman = BTreeMap::new();
        for key in potential_pairs(market).into_iter().filter(PairKey::is_cross) {
            let f = lindahl(&key);
            let public = &market.price(&key).public;
            lindahl_man.insert(key, public.iter().map(|p| p * f).collect());
            lindahl_woman.insert(key, public.iter().map(|p| p * (1.0 - f)).collect());
        }
        Self {
            q_man,
            q_woman,
            lindahl_man,
            lindahl_woman,
            transfers: None,
            indices: None,
        }
    }

    /// Checks adding-up, Lindahl-split, transfer and index invariants within `tol`.
    pub fn check(&self, market: &Market, tol: f64) -> Result<(), CandidateError> {
        let couples = market.couples();
        if self.q_man.len() != couples || self.q_woman.len() != couples {
            return Err(CandidateError::Dimension("shares".into()));
        }
        for c in 0..couples {
            let total = &market.private_obs[c];
            if self.q_man[c].len() != total.len() || self.q_woman[c].len() != total.len() {
                return Err(CandidateError::Dimension(format!("shares of couple {c}")));
            }
            for k in 0..total.len() {
                if self.q_man[c][k] < -tol || self.q_woman[c][k] < -tol {
                    return Err(CandidateError::NegativeShare(c));
                }
                if (self.q_man[c][k] + self.q_woman[c][k] - total[k]).abs() > tol * total[k].max(1.0) {
                    return Err(CandidateError::AddingUp(c));
                }
            }
        }
        for key in potential_pairs(market).into_iter().filter(PairKey::is_cross) {
            let (Some(pm), Some(pw)) = (self.lindahl_man.get(&key), self.lindahl_woman.get(&key)) else {
                return Err(CandidateError::MissingLindahl(key));
            };
            let public = &market.price(&key).public;
            if pm.len() != public.len() || pw.len() != public.len() {
                return Err(CandidateError::Dimension(format!("Lindahl prices of {key}")));
            }
            for j in 0..public.len() {
                if pm[j] < -tol || pw[j] < -tol || (pm[j] + pw[j] - public[j]).abs() > tol * public[j].max(1.0) {
                    return Err(CandidateError::LindahlSplit(key));
                }
            }
        }
        if let Some(t) = &self.transfers {
            if t.len() != couples {
                return Err(CandidateError::Dimension("transfers".into()));
            }
            for (c, &tc) in t.iter().enumerate() {
                if !market.committed.is_committed(c) && tc.abs() > tol {
                    return Err(CandidateError::UncommittedTransfer(c));
                }
            }
        }
        if let Some(s) = &self.indices {
            for (key, &v) in s {
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(CandidateError::IndexRange(*key));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Identity-matched market with uniform prices `1`, `n = N = 1`, observed
    /// couple `c` buying `(q[c], Q[c])` and every pair earning the sum of
    /// what its members' couples spend, halved for each member.
    pub fn uniform(q: &[f64], big_q: &[f64]) -> Market {
        let couples = q.len();
        let matching = Matching::identity(couples);
        let mut prices = BTreeMap::new();
        let mut incomes = BTreeMap::new();
        let spend: Vec<f64> = (0..couples).map(|c| q[c] + big_q[c]).collect();
        for m in 0..couples {
            for w in 0..couples {
                prices.insert(
                    PairKey::cross(m, w),
                    PairPrices {
                        private: vec![1.0],
                        public: vec![1.0],
                    },
                );
                incomes.insert(PairKey::cross(m, w), 0.5 * (spend[m] + spend[w]));
            }
            prices.insert(
                PairKey::man_single(m),
                PairPrices {
                    private: vec![1.0],
                    public: vec![1.0],
                },
            );
            prices.insert(
                PairKey::woman_single(m),
                PairPrices {
                    private: vec![1.0],
                    public: vec![1.0],
                },
            );
            incomes.insert(PairKey::man_single(m), 0.5 * spend[m]);
            incomes.insert(PairKey::woman_single(m), 0.5 * spend[m]);
        }
        Market {
            n_private: 1,
            n_public: 1,
            matching,
            committed: CommittedSet::none(couples),
            private_obs: q.iter().map(|&v| vec![v]).collect(),
            public_obs: big_q.iter().map(|&v| vec![v]).collect(),
            prices,
            incomes,
            assignable: vec![None; couples],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::uniform;
    use super::*;

    #[test]
    fn well_formed_two_couple_market_is_valid() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        assert_eq!(validate_market(&market), vec![]);
    }

    #[test]
    fn inconsistent_matching_is_reported() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        market.matching.man_to_woman[0] = Some(1);
        let codes: Vec<_> = validate_market(&market).iter().map(Violation::code).collect();
        assert!(codes.contains(&"MatchingInconsistent"), "{codes:?}");
    }

    #[test]
    fn missing_income_is_reported_with_its_key() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        market.incomes.remove(&PairKey::cross(0, 1));
        assert_eq!(
            validate_market(&market),
            vec![Violation::MissingIncome(PairKey::cross(0, 1))]
        );
    }

    #[test]
    fn nonpositive_price_and_budget_mismatch() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        market.prices.get_mut(&PairKey::cross(1, 0)).unwrap().private[0] = 0.0;
        market.incomes.insert(PairKey::cross(0, 0), 10.0);
        let codes: Vec<_> = validate_market(&market).iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["NonPositivePrice", "BudgetMismatch"]);
    }

    #[test]
    fn unequal_sides_rejected() {
        let mut market = uniform(&[2.0], &[1.0]);
        market.matching = Matching::from_pairs(1, 2, &[(0, 0)]);
        let codes: Vec<_> = validate_market(&market).iter().map(Violation::code).collect();
        assert!(codes.contains(&"UnequalSides"));
        assert!(codes.contains(&"UnmatchedAgent"));
    }

    #[test]
    fn assignable_exceeding_total() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        market.assignable[1] = Some(Assignable {
            man: vec![0.6],
            woman: vec![0.6],
        });
        let codes: Vec<_> = validate_market(&market).iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["AssignableExceedsTotal"]);
    }

    #[test]
    fn potential_pair_counts() {
        for (couples, expected) in [(1, 2), (2, 6), (3, 12)] {
            let market = uniform(&vec![1.0; couples], &vec![1.0; couples]);
            let keys = potential_pairs(&market);
            assert_eq!(keys.len(), expected);
            // cross pairs = n² − n, singles = 2n
            assert_eq!(expected, couples * couples - couples + 2 * couples);
        }
        let one = uniform(&[1.0], &[1.0]);
        assert_eq!(
            potential_pairs(&one),
            vec![PairKey::man_single(0), PairKey::woman_single(0)]
        );
    }

    #[test]
    fn potential_pairs_order_and_uniqueness() {
        let market = uniform(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]);
        let keys = potential_pairs(&market);
        assert_eq!(keys[0], PairKey::cross(0, 1));
        assert_eq!(keys[1], PairKey::cross(0, 2));
        assert_eq!(keys[6], PairKey::man_single(0));
        assert_eq!(keys[11], PairKey::woman_single(2));
        let unique: std::collections::BTreeSet<_> = keys.iter().collect();
        assert_eq!(unique.len(), keys.len());
        for c in 0..3 {
            assert!(!keys.contains(&market.couple_key(c)));
        }
    }

    #[test]
    fn validation_is_idempotent() {
        let mut market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        market.incomes.remove(&PairKey::man_single(1));
        let copy = market.clone();
        assert_eq!(validate_market(&market), validate_market(&market));
        assert_eq!(market, copy);
    }

    #[test]
    fn even_split_candidate_passes_checks() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        let candidate = AllocationCandidate::even_split(&market);
        assert_eq!(candidate.check(&market, 1e-12), Ok(()));
        let mut bad = candidate.clone();
        bad.q_man[0][0] += 0.1;
        assert_eq!(bad.check(&market, 1e-12), Err(CandidateError::AddingUp(0)));
        let mut bad = candidate;
        bad.transfers = Some(vec![1.0, 0.0]);
        assert_eq!(bad.check(&market, 1e-12), Err(CandidateError::UncommittedTransfer(0)));
    }
}
