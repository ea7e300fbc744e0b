//! Rationalizability programs for the three divorce regimes, stability
//! indices, and witness extraction.
//!
//! Unknowns are the husband's private shares (`q_w = q_obs − q_m`), the
//! husband's Lindahl prices for every cross pair (`P^w = P − P^m`), and
//! optionally one stability index per outside option and one transfer per
//! committed couple. Every edge weight is affine in these unknowns.
//!
//! Strict Lindahl positivity is relaxed to `P^m, P^w ≥ 0`, and strict sign
//! conditions on edge weights use the tolerance `eps`. Verdicts for the
//! regime without transfers are relative to the path-length cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::graph::{
    build_edge_matrix, enumerate_paths, find_blocking_structure, find_blocking_structure_within, BlockingStructure,
    EdgeMatrix, PathOfRemarriages, SearchMode,
};
use crate::lp::{
    solve, FeasibilityProgram, LinExpr, Relation, Sense, Solution, SolveError, SolveOptions, SolveStatus, VarId,
    VarKind,
};
use crate::market::{validate_market, AllocationCandidate, CommittedSet, Market, PairKey, Violation};

/// Default cap on the number of edges of paths checked without transfers.
pub const DEFAULT_MAX_PATH_LEN: usize = 4;

/// Largest market for which the regime without transfers may enumerate
/// paths of unbounded length.
pub const UNBOUNDED_PATH_COUPLE_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum RegimeKind {
    Unilateral,
    MutualConsentNoTransfers,
    MutualConsentTransfers,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 3] = [
        RegimeKind::Unilateral,
        RegimeKind::MutualConsentTransfers,
        RegimeKind::MutualConsentNoTransfers,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            RegimeKind::Unilateral => "unilateral",
            RegimeKind::MutualConsentNoTransfers => "no-transfers",
            RegimeKind::MutualConsentTransfers => "transfers",
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unilateral" => Ok(RegimeKind::Unilateral),
            "transfers" | "mutual-consent-transfers" => Ok(RegimeKind::MutualConsentTransfers),
            "no-transfers" | "notransfers" | "mutual-consent-no-transfers" => Ok(RegimeKind::MutualConsentNoTransfers),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// A divorce regime, optionally with its own committed set.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub kind: RegimeKind,
    pub committed_override: Option<CommittedSet>,
}

impl Regime {
    pub fn new(kind: RegimeKind) -> Self {
        Self {
            kind,
            committed_override: None,
        }
    }

    pub fn unilateral() -> Self {
        Self::new(RegimeKind::Unilateral)
    }

    pub fn transfers() -> Self {
        Self::new(RegimeKind::MutualConsentTransfers)
    }

    pub fn no_transfers() -> Self {
        Self::new(RegimeKind::MutualConsentNoTransfers)
    }

    pub fn with_committed(mut self, committed: CommittedSet) -> Self {
        self.committed_override = Some(committed);
        self
    }

    /// Committed set in force: empty under unilateral divorce.
    pub fn committed(&self, market: &Market) -> CommittedSet {
        match self.kind {
            RegimeKind::Unilateral => CommittedSet::none(market.couples()),
            _ => self
                .committed_override
                .clone()
                .unwrap_or_else(|| market.committed.clone()),
        }
    }

    /// Blocking notion matching this regime.
    pub fn search_mode(&self) -> SearchMode {
        match self.kind {
            RegimeKind::MutualConsentTransfers => SearchMode::Monotonicity,
            _ => SearchMode::Consistency,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalizeOptions {
    /// Edge cap for paths checked without transfers; `None` means unbounded.
    pub max_path_len: Option<usize>,
    /// Strictness tolerance for edge signs.
    pub eps: f64,
    /// Fixed big-M; derived per edge from variable bounds when `None`.
    pub big_m: Option<f64>,
    /// Use observed assignable consumption as bounds on private shares.
    pub use_assignable: bool,
    pub solver: SolveOptions,
}

impl Default for RationalizeOptions {
    fn default() -> Self {
        Self {
            max_path_len: Some(DEFAULT_MAX_PATH_LEN),
            eps: crate::graph::DEFAULT_TOLERANCE,
            big_m: None,
            use_assignable: true,
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RationalizeError {
    #[error("invalid market: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidMarket(Vec<Violation>),
    #[error("the regime without transfers needs a path-length cap on markets with more than {limit} couples ({couples} given)")]
    PathLimitRequired { couples: usize, limit: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("solver did not finish: {0}")]
    SolverFailure(String),
    #[error("index program reported infeasible, which zero indices rule out")]
    IndexProgramInfeasible,
}

/// Where each unknown lives in a compiled program.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramLayout {
    pub q_man: Vec<Vec<VarId>>,
    pub lindahl_man: BTreeMap<PairKey, Vec<VarId>>,
    pub indices: BTreeMap<PairKey, VarId>,
    pub transfers: Option<Vec<Option<VarId>>>,
    /// Paths and cycles encoded with binaries (regime without transfers).
    pub structures: Vec<PathOfRemarriages>,
}

/// A compiled regime program and its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeProgram {
    pub program: FeasibilityProgram,
    pub layout: ProgramLayout,
}

impl RegimeProgram {
    /// Reads the unknowns back from a solution vector.
    pub fn candidate(&self, market: &Market, values: &[f64]) -> AllocationCandidate {
        let couples = market.couples();
        let mut q_man = Vec::with_capacity(couples);
        let mut q_woman = Vec::with_capacity(couples);
        for c in 0..couples {
            let qm: Vec<f64> = self.layout.q_man[c]
                .iter()
                .zip(&market.private_obs[c])
                .map(|(v, &total)| values[v.0].clamp(0.0, total))
                .collect();
            q_woman.push(market.private_obs[c].iter().zip(&qm).map(|(t, m)| t - m).collect());
            q_man.push(qm);
        }
        let mut lindahl_man = BTreeMap::new();
        let mut lindahl_woman = BTreeMap::new();
        for (key, vars) in &self.layout.lindahl_man {
            let public = &market.price(key).public;
            let pm: Vec<f64> = vars
                .iter()
                .zip(public)
                .map(|(v, &p)| values[v.0].clamp(0.0, p))
                .collect();
            lindahl_woman.insert(*key, public.iter().zip(&pm).map(|(p, m)| p - m).collect());
            lindahl_man.insert(*key, pm);
        }
        let transfers = self
            .layout
            .transfers
            .as_ref()
            .map(|t| t.iter().map(|v| v.map_or(0.0, |v| values[v.0])).collect());
        let indices = (!self.layout.indices.is_empty()).then(|| {
            self.layout
                .indices
                .iter()
                .map(|(k, v)| (*k, values[v.0].clamp(0.0, 1.0)))
                .collect()
        });
        AllocationCandidate {
            q_man,
            q_woman,
            lindahl_man,
            lindahl_woman,
            transfers,
            indices,
        }
    }

    /// Sum of the index variables.
    pub fn index_sum_terms(&self) -> Vec<(VarId, f64)> {
        self.layout.indices.values().map(|&v| (v, 1.0)).collect()
    }
}

fn ensure_valid(market: &Market) -> Result<(), RationalizeError> {
    let violations = validate_market(market);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(RationalizeError::InvalidMarket(violations))
    }
}

/// Affine expression of the weight of `key` in the program's unknowns.
fn edge_expr(market: &Market, layout: &ProgramLayout, key: &PairKey) -> LinExpr {
    let prices = market.price(key);
    let income = market.income(key);
    let mut e = LinExpr::default();
    let couple_of_woman = |w: usize| market.matching.couple_of_woman(w);
    match (key.man, key.woman) {
        (Some(i), Some(w)) => {
            let j = couple_of_woman(w);
            for (k, &p) in prices.private.iter().enumerate() {
                e.add_constant(p * market.private_obs[j][k]);
                e.add_term(layout.q_man[i][k], p);
                e.add_term(layout.q_man[j][k], -p);
            }
            for (l, &big_p) in prices.public.iter().enumerate() {
                let qi = market.public_obs[i][l];
                let qj = market.public_obs[j][l];
                e.add_constant(big_p * qj);
                e.add_term(layout.lindahl_man[key][l], qi - qj);
            }
        }
        (Some(i), None) => {
            for (k, &p) in prices.private.iter().enumerate() {
                e.add_term(layout.q_man[i][k], p);
            }
            e.add_constant(crate::market::dot(&prices.public, &market.public_obs[i]));
        }
        (None, Some(w)) => {
            let j = couple_of_woman(w);
            for (k, &p) in prices.private.iter().enumerate() {
                e.add_constant(p * market.private_obs[j][k]);
                e.add_term(layout.q_man[j][k], -p);
            }
            e.add_constant(crate::market::dot(&prices.public, &market.public_obs[j]));
        }
        (None, None) => {}
    }
    match layout.indices.get(key) {
        Some(&s) => {
            e.add_term(s, -income);
        }
        None => {
            e.add_constant(-income);
        }
    }
    e.compact()
}

/// Compiles the rationalizability conditions of `regime`.
///
/// With `with_indices`, one index `s ∈ [0, 1]` per outside option
/// multiplies that option's income; without, incomes enter in full.
pub fn build_program(
    market: &Market,
    regime: &Regime,
    opts: &RationalizeOptions,
    with_indices: bool,
) -> Result<RegimeProgram, RationalizeError> {
    ensure_valid(market)?;
    let couples = market.couples();
    let committed = regime.committed(market);
    let mut program = FeasibilityProgram::new();

    let mut q_man = Vec::with_capacity(couples);
    for c in 0..couples {
        let total = &market.private_obs[c];
        let assignable = market.assignable[c].as_ref().filter(|_| opts.use_assignable);
        let vars = (0..market.n_private)
            .map(|k| {
                let (lo, hi) = match assignable {
                    Some(a) => (
                        a.man[k].min(total[k]),
                        (total[k] - a.woman[k]).max(a.man[k].min(total[k])),
                    ),
                    None => (0.0, total[k]),
                };
                program.add_variable(format!("qm[{c}][{k}]"), lo, hi)
            })
            .collect();
        q_man.push(vars);
    }

    let pairs = market.potential_pairs();
    let mut lindahl_man = BTreeMap::new();
    for key in pairs.iter().filter(|k| k.is_cross()) {
        let public = &market.price(key).public;
        let vars = public
            .iter()
            .enumerate()
            .map(|(l, &p)| program.add_variable(format!("pm{key}[{l}]"), 0.0, p))
            .collect();
        lindahl_man.insert(*key, vars);
    }

    let mut indices = BTreeMap::new();
    if with_indices {
        for key in &pairs {
            indices.insert(*key, program.add_variable(format!("s{key}"), 0.0, 1.0));
        }
    }

    let transfers = (regime.kind == RegimeKind::MutualConsentTransfers).then(|| {
        (0..couples)
            .map(|c| {
                committed
                    .is_committed(c)
                    .then(|| program.add_variable(format!("t[{c}]"), f64::NEG_INFINITY, f64::INFINITY))
            })
            .collect::<Vec<_>>()
    });

    let mut layout = ProgramLayout {
        q_man,
        lindahl_man,
        indices,
        transfers,
        structures: Vec::new(),
    };

    // Single options bind for non-committed couples only.
    for c in (0..couples).filter(|&c| !committed.is_committed(c)) {
        for key in [PairKey::man_single(c), PairKey::woman_single(market.matching.wife(c))] {
            let e = edge_expr(market, &layout, &key);
            program.add_expr_constraint(format!("single{key}"), &e, Relation::Ge, 0.0);
        }
    }

    match regime.kind {
        RegimeKind::Unilateral => {
            for key in pairs.iter().filter(|k| k.is_cross()) {
                let e = edge_expr(market, &layout, key);
                program.add_expr_constraint(format!("edge{key}"), &e, Relation::Ge, 0.0);
            }
        }
        RegimeKind::MutualConsentTransfers => {
            let t = layout.transfers.clone().expect("transfer layout");
            for i in 0..couples {
                for j in (0..couples).filter(|&j| j != i) {
                    let key = market.matching.edge_key(i, j);
                    let mut e = edge_expr(market, &layout, &key);
                    if let Some(ti) = t[i] {
                        e.add_term(ti, 1.0);
                    }
                    if let Some(tj) = t[j] {
                        e.add_term(tj, -1.0);
                    }
                    program.add_expr_constraint(format!("edge{key}"), &e, Relation::Ge, 0.0);
                }
            }
        }
        RegimeKind::MutualConsentNoTransfers => {
            let max_len = match opts.max_path_len {
                Some(l) => l,
                None if couples > UNBOUNDED_PATH_COUPLE_LIMIT => {
                    return Err(RationalizeError::PathLimitRequired {
                        couples,
                        limit: UNBOUNDED_PATH_COUPLE_LIMIT,
                    })
                }
                None => couples,
            };
            encode_path_consistency(market, &committed, max_len, opts, &mut program, &mut layout);
        }
    }
    Ok(RegimeProgram { program, layout })
}

/// Forbids, for every permissible structure, the pattern "all edges `≤ 0`
/// with one `< 0`": either some edge is at least `eps` (`z_e = 1`) or every
/// edge is non-negative (`w_P = 1`).
fn encode_path_consistency(
    market: &Market,
    committed: &CommittedSet,
    max_len: usize,
    opts: &RationalizeOptions,
    program: &mut FeasibilityProgram,
    layout: &mut ProgramLayout,
) {
    let structures = enumerate_paths(&market.matching, committed, max_len);
    // A single edge between non-committed couples is its own structure and
    // reduces to a plain sign constraint.
    let mut forced: BTreeSet<(usize, usize)> = BTreeSet::new();
    for p in structures.iter().filter(|p| p.len() == 1) {
        let (i, j) = (p.men[0], p.endpoint);
        forced.insert((i, j));
        let key = market.matching.edge_key(i, j);
        let e = edge_expr(market, layout, &key);
        program.add_expr_constraint(format!("edge{key}"), &e, Relation::Ge, 0.0);
    }

    let mut edge_vars: BTreeMap<(usize, usize), (LinExpr, VarId, f64)> = BTreeMap::new();
    let mut kept = Vec::new();
    for p in structures.into_iter().filter(|p| p.len() > 1) {
        let seq = p.vertices();
        let steps: Vec<(usize, usize)> = seq.windows(2).map(|w| (w[0], w[1])).collect();
        if steps.iter().all(|s| forced.contains(s)) {
            continue;
        }
        let w_p = program.add_binary(format!("w[{}]", kept.len()));
        let mut cover = vec![(w_p, 1.0)];
        for &(i, j) in &steps {
            let (expr, z, big_m) = edge_vars.entry((i, j)).or_insert_with(|| {
                let key = market.matching.edge_key(i, j);
                let e = edge_expr(market, layout, &key);
                let (lo, hi) = e.bounds(program);
                let big_m = opts.big_m.unwrap_or(lo.abs().max(hi.abs()) + 1.0 + opts.eps);
                let z = program.add_binary(format!("z{key}"));
                // a_e ≥ eps − M (1 − z_e)
                let mut row = e.clone();
                row.add_term(z, -big_m);
                program.add_expr_constraint(format!("strict{key}"), &row, Relation::Ge, opts.eps - big_m);
                (e, z, big_m)
            });
            cover.push((*z, 1.0));
            // a_e ≥ −M (1 − w_P)
            let mut row = expr.clone();
            row.add_term(w_p, -*big_m);
            program.add_expr_constraint(format!("weak[{}]({i},{j})", kept.len()), &row, Relation::Ge, -*big_m);
        }
        program.add_constraint(format!("cover[{}]", kept.len()), cover, Relation::Ge, 1.0);
        kept.push(p);
    }
    layout.structures = kept;
}

/// Solves a compiled program; for mixed-integer programs, re-solves the
/// continuous part with binaries fixed to polish the solution.
pub fn solve_regime_program(program: &FeasibilityProgram, opts: &SolveOptions) -> Result<Solution, RationalizeError> {
    let sol = solve(program, opts)?;
    if sol.status != SolveStatus::Optimal || !program.is_mixed_integer() {
        return Ok(sol);
    }
    let values = sol.values.as_ref().expect("optimal solutions carry values");
    let mut fixed = program.clone();
    for (v, &x) in fixed.variables.iter_mut().zip(values) {
        if v.kind == VarKind::Binary {
            let b = x.round().clamp(0.0, 1.0);
            v.lower = b;
            v.upper = b;
            v.kind = VarKind::Continuous;
        }
    }
    let polished = solve(&fixed, opts)?;
    Ok(if polished.status == SolveStatus::Optimal {
        polished
    } else {
        sol
    })
}

fn require_finished(sol: &Solution) -> Result<(), RationalizeError> {
    match sol.status {
        SolveStatus::NumericalFailure => Err(RationalizeError::SolverFailure(
            sol.detail.clone().unwrap_or_else(|| "numerical failure".into()),
        )),
        _ => Ok(()),
    }
}

/// Optimal stability indices under a regime.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub regime: RegimeKind,
    /// One optimal index vector; the optimum is unique only in aggregate.
    pub indices: BTreeMap<PairKey, f64>,
    /// Mean index over all outside options (1 when there are none).
    pub average: f64,
    /// Optimal `Σ s`.
    pub objective: f64,
    pub candidate: AllocationCandidate,
    pub status: SolveStatus,
}

impl IndexReport {
    /// True when every index is 1 within `tol`.
    pub fn is_exact(&self, tol: f64) -> bool {
        self.indices.values().all(|&s| s >= 1.0 - tol)
    }
}

/// Maximizes `Σ s` subject to the regime's conditions with incomes scaled
/// by the indices.
pub fn compute_stability_indices(
    market: &Market,
    regime: &Regime,
    opts: &RationalizeOptions,
) -> Result<IndexReport, RationalizeError> {
    let mut compiled = build_program(market, regime, opts, true)?;
    compiled
        .program
        .set_objective(compiled.index_sum_terms(), Sense::Maximize);
    let sol = solve_regime_program(&compiled.program, &opts.solver)?;
    require_finished(&sol)?;
    if sol.status != SolveStatus::Optimal {
        return Err(RationalizeError::IndexProgramInfeasible);
    }
    let values = sol.values.as_ref().expect("optimal");
    let candidate = compiled.candidate(market, values);
    let indices = candidate.indices.clone().unwrap_or_default();
    let objective: f64 = indices.values().sum();
    let average = if indices.is_empty() {
        1.0
    } else {
        objective / indices.len() as f64
    };
    Ok(IndexReport {
        regime: regime.kind,
        indices,
        average,
        objective,
        candidate,
        status: sol.status,
    })
}

/// Verdict of a rationalizability check.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub rationalizable: bool,
    /// Unobservables under which no permissible structure blocks.
    pub witness: Option<AllocationCandidate>,
    /// A blocking structure at the best-effort candidate, when found.
    pub counterexample: Option<BlockingStructure>,
}

/// Decides whether the data are rationalizable under `regime`.
pub fn check_rationalizable(
    market: &Market,
    regime: &Regime,
    opts: &RationalizeOptions,
) -> Result<Verdict, RationalizeError> {
    let compiled = build_program(market, regime, opts, false)?;
    let sol = solve_regime_program(&compiled.program, &opts.solver)?;
    require_finished(&sol)?;
    if let Some(values) = &sol.values {
        let witness = compiled.candidate(market, values);
        return Ok(Verdict {
            rationalizable: true,
            witness: Some(witness),
            counterexample: None,
        });
    }
    // Infeasible: look for a blocking structure at the best index candidate.
    let report = compute_stability_indices(market, regime, opts)?;
    let mut candidate = report.candidate;
    candidate.indices = None;
    candidate.transfers = None;
    let counterexample = build_edge_matrix(market, &candidate).ok().and_then(|edges| {
        let edges = edges.with_tolerance(opts.eps);
        let committed = regime.committed(market);
        let limit = (regime.kind == RegimeKind::MutualConsentNoTransfers)
            .then_some(opts.max_path_len)
            .flatten();
        find_blocking_structure_within(&edges, &committed, regime.search_mode(), limit)
    });
    Ok(Verdict {
        rationalizable: false,
        witness: None,
        counterexample,
    })
}

/// Searches the witness's edge matrix for a blocking structure under the
/// regime, at half the strictness tolerance.
pub fn witness_blocking_structure(
    market: &Market,
    regime: &Regime,
    witness: &AllocationCandidate,
    opts: &RationalizeOptions,
) -> Option<BlockingStructure> {
    let edges = build_edge_matrix(market, witness).ok()?.with_tolerance(opts.eps / 2.0);
    let committed = regime.committed(market);
    match regime.kind {
        RegimeKind::MutualConsentNoTransfers => {
            find_blocking_structure_within(&edges, &committed, SearchMode::Consistency, opts.max_path_len)
        }
        _ => find_blocking_structure(&edges, &committed, regime.search_mode()),
    }
}

/// Transfers `t` (zero on non-committed couples) with
/// `a_{i→j} + t_i − t_j ≥ 0` on every edge, or `None` when none exist.
pub fn transfer_potentials(
    edges: &EdgeMatrix,
    committed: &CommittedSet,
    opts: &SolveOptions,
) -> Result<Option<Vec<f64>>, RationalizeError> {
    let n = edges.couples();
    let mut program = FeasibilityProgram::new();
    let t: Vec<Option<VarId>> = (0..n)
        .map(|c| {
            committed
                .is_committed(c)
                .then(|| program.add_variable(format!("t[{c}]"), f64::NEG_INFINITY, f64::INFINITY))
        })
        .collect();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut e = LinExpr::constant(edges.edge(i, j));
            if let Some(ti) = t[i] {
                e.add_term(ti, 1.0);
            }
            if let Some(tj) = t[j] {
                e.add_term(tj, -1.0);
            }
            let e = e.compact();
            if e.terms.is_empty() {
                if e.constant < 0.0 {
                    return Ok(None);
                }
                continue;
            }
            program.add_expr_constraint(format!("edge({i},{j})"), &e, Relation::Ge, 0.0);
        }
    }
    let sol = solve(&program, opts)?;
    require_finished(&sol)?;
    Ok(sol
        .values
        .map(|v| t.iter().map(|x| x.map_or(0.0, |x| v[x.0])).collect()))
}
