//! The weighted remarriage graph over observed couples and the search for
//! blocking paths and cycles.
//!
//! Vertices are observed couples, indexed by the husband. The edge from
//! couple `i` to couple `j` is the pair `(m_i, σ(m_j))`: man `i` remarries
//! the wife of couple `j`. Its weight is the negated leftover income of that
//! pair when it buys its members' current bundles at the pair's prices.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::market::{dot, AgentId, AllocationCandidate, CommittedSet, Market, Matching, PairKey};

/// Default strictness tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coalition is not permissible: {0}")]
    NotPermissible(String),
    #[error("malformed coalition: {0}")]
    MalformedCoalition(String),
}

/// Edge weights `a_{m,w}` of every outside option at a fixed candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix {
    couples: usize,
    wives: Vec<usize>,
    cross: Vec<f64>,
    man_single: Vec<f64>,
    woman_single: Vec<f64>,
    pub tolerance: f64,
}

impl EdgeMatrix {
    /// Builds a matrix from raw weights. `cross[i][j]` is the edge from
    /// couple `i` to couple `j` (diagonal ignored); `woman_single[i]` belongs
    /// to the wife of couple `i`.
    pub fn from_weights(
        matching: &Matching,
        cross: Vec<Vec<f64>>,
        man_single: Vec<f64>,
        woman_single: Vec<f64>,
    ) -> Self {
        let couples = matching.men();
        let mut flat = vec![0.0; couples * couples];
        for (i, row) in cross.iter().enumerate().take(couples) {
            for (j, &v) in row.iter().enumerate().take(couples) {
                if i != j {
                    flat[i * couples + j] = v;
                }
            }
        }
        Self {
            couples,
            wives: (0..couples).map(|c| matching.wife(c)).collect(),
            cross: flat,
            man_single,
            woman_single,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn couples(&self) -> usize {
        self.couples
    }

    /// Weight of the edge from couple `from` to couple `to`.
    pub fn edge(&self, from: usize, to: usize) -> f64 {
        self.cross[from * self.couples + to]
    }

    /// Weight of the husband of couple `c` going single.
    pub fn man_single(&self, couple: usize) -> f64 {
        self.man_single[couple]
    }

    /// Weight of the wife of couple `c` going single.
    pub fn woman_single(&self, couple: usize) -> f64 {
        self.woman_single[couple]
    }

    /// Weight of an outside option; `None` for observed couples and keys
    /// out of range.
    pub fn weight(&self, key: &PairKey) -> Option<f64> {
        let couple_of = |w: usize| self.wives.iter().position(|&x| x == w);
        match (key.man, key.woman) {
            (Some(m), Some(w)) => {
                let j = couple_of(w)?;
                (m < self.couples && m != j).then(|| self.edge(m, j))
            }
            (Some(m), None) => self.man_single.get(m).copied(),
            (None, Some(w)) => couple_of(w).map(|c| self.woman_single[c]),
            (None, None) => None,
        }
    }

    /// Pair key of the edge `from → to`.
    pub fn edge_key(&self, from: usize, to: usize) -> PairKey {
        PairKey::cross(from, self.wives[to])
    }

    /// Multiplies every weight and the tolerance by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.cross.iter_mut().for_each(|v| *v *= factor);
        out.man_single.iter_mut().for_each(|v| *v *= factor);
        out.woman_single.iter_mut().for_each(|v| *v *= factor);
        out.tolerance *= factor;
        out
    }
}

/// Weight of any pair key, including observed couples (for which the budget
/// identity makes it zero). Stability indices default to 1.
pub fn pair_weight(market: &Market, candidate: &AllocationCandidate, key: &PairKey) -> f64 {
    let prices = market.price(key);
    let s = candidate
        .indices
        .as_ref()
        .and_then(|s| s.get(key))
        .copied()
        .unwrap_or(1.0);
    let income = market.income(key) * s;
    match (key.man, key.woman) {
        (Some(m), Some(w)) => {
            let j = market.matching.couple_of_woman(w);
            let private: f64 = dot(&prices.private, &candidate.q_man[m]) + dot(&prices.private, &candidate.q_woman[j]);
            let public = if m == j {
                dot(&prices.public, &market.public_obs[m])
            } else {
                let pm = &candidate.lindahl_man[key];
                let pw = &candidate.lindahl_woman[key];
                dot(pm, &market.public_obs[m]) + dot(pw, &market.public_obs[j])
            };
            private + public - income
        }
        (Some(m), None) => {
            dot(&prices.private, &candidate.q_man[m]) + dot(&prices.public, &market.public_obs[m]) - income
        }
        (None, Some(w)) => {
            let j = market.matching.couple_of_woman(w);
            dot(&prices.private, &candidate.q_woman[j]) + dot(&prices.public, &market.public_obs[j]) - income
        }
        (None, None) => 0.0,
    }
}

/// Evaluates every edge weight of `market` at `candidate`.
pub fn build_edge_matrix(market: &Market, candidate: &AllocationCandidate) -> Result<EdgeMatrix, GraphError> {
    let couples = market.couples();
    let n = market.n_private;
    let big_n = market.n_public;
    let shares_ok = candidate.q_man.len() == couples
        && candidate.q_woman.len() == couples
        && candidate.q_man.iter().chain(&candidate.q_woman).all(|q| q.len() == n);
    if !shares_ok {
        return Err(GraphError::DimensionMismatch("private shares".into()));
    }
    for key in market.potential_pairs().iter().filter(|k| k.is_cross()) {
        let ok = |v: Option<&Vec<f64>>| v.is_some_and(|v| v.len() == big_n);
        if !ok(candidate.lindahl_man.get(key)) || !ok(candidate.lindahl_woman.get(key)) {
            return Err(GraphError::DimensionMismatch(format!("Lindahl prices of {key}")));
        }
    }

    let mut cross = vec![0.0; couples * couples];
    for i in 0..couples {
        for j in 0..couples {
            if i != j {
                cross[i * couples + j] = pair_weight(market, candidate, &market.matching.edge_key(i, j));
            }
        }
    }
    let man_single = (0..couples)
        .map(|c| pair_weight(market, candidate, &PairKey::man_single(c)))
        .collect();
    let woman_single = (0..couples)
        .map(|c| pair_weight(market, candidate, &PairKey::woman_single(market.matching.wife(c))))
        .collect();
    Ok(EdgeMatrix {
        couples,
        wives: (0..couples).map(|c| market.matching.wife(c)).collect(),
        cross,
        man_single,
        woman_single,
        tolerance: DEFAULT_TOLERANCE,
    })
}

/// A path or cycle of remarriages: `m_j` remarries `σ(m_{j+1})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathOfRemarriages {
    /// `m_1 .. m_{n-1}`.
    pub men: Vec<usize>,
    /// `m_n`; equals `m_1` for a cycle.
    pub endpoint: usize,
    /// `(m_j, σ(m_{j+1}))` for each step.
    pub edges: Vec<PairKey>,
    pub is_cycle: bool,
}

impl PathOfRemarriages {
    /// Builds the structure visiting `couples` in order; a cycle closes back
    /// on the first couple.
    pub fn from_vertices(couples: &[usize], matching: &Matching, is_cycle: bool) -> Self {
        let mut seq = couples.to_vec();
        if is_cycle {
            seq.push(couples[0]);
        }
        let edges = seq.windows(2).map(|w| matching.edge_key(w[0], w[1])).collect();
        Self {
            men: seq[..seq.len() - 1].to_vec(),
            endpoint: *seq.last().expect("non-empty path"),
            edges,
            is_cycle,
        }
    }

    /// `m_1, …, m_n` (a cycle repeats `m_1` at the end).
    pub fn vertices(&self) -> Vec<usize> {
        let mut v = self.men.clone();
        v.push(self.endpoint);
        v
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Checks that edges chain through the vertices and no couple repeats
    /// except a cycle's closing vertex.
    pub fn is_well_formed(&self, matching: &Matching) -> bool {
        let seq = self.vertices();
        if self.edges.len() + 1 != seq.len() || self.edges.is_empty() {
            return false;
        }
        if self.is_cycle != (seq[0] == self.endpoint) {
            return false;
        }
        let body = if self.is_cycle { &seq[..seq.len() - 1] } else { &seq[..] };
        let distinct: BTreeSet<_> = body.iter().collect();
        if distinct.len() != body.len() {
            return false;
        }
        seq.windows(2)
            .zip(&self.edges)
            .all(|(w, e)| *e == matching.edge_key(w[0], w[1]))
    }

    /// Sum of the edge weights along the structure.
    pub fn weight(&self, edges: &EdgeMatrix) -> f64 {
        self.vertices().windows(2).map(|w| edges.edge(w[0], w[1])).sum()
    }
}

impl fmt::Display for PathOfRemarriages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(PairKey::to_string).collect();
        let kind = if self.is_cycle { "cycle" } else { "path" };
        write!(f, "{kind} {}", parts.join(" -> "))
    }
}

/// A structure that blocks the observed matching at a fixed candidate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockingStructure {
    Remarriages(PathOfRemarriages),
    /// A member of a non-committed couple leaves to stay single.
    GoSingle(PairKey),
}

impl fmt::Display for BlockingStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockingStructure::Remarriages(p) => p.fmt(f),
            BlockingStructure::GoSingle(key) => write!(f, "single {key}"),
        }
    }
}

/// Which stability notion a blocking search tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchMode {
    /// No transfers: all edges weakly negative, one strictly.
    Consistency,
    /// Transfers: negative total weight.
    Monotonicity,
}

/// True iff the structure is a cycle or both end couples are non-committed.
pub fn path_is_permissible(path: &PathOfRemarriages, committed: &CommittedSet) -> bool {
    path.is_cycle || (!committed.is_committed(path.men[0]) && !committed.is_committed(path.endpoint))
}

/// Searches for a permissible blocking structure.
///
/// Consistency returns a structure whose edges are all `≤ ε` with one
/// `≤ −ε`, and finds one whenever it exists. Monotonicity returns a
/// structure of negative total weight and finds one whenever some structure
/// has total weight `< −ε`. Single options count only for non-committed
/// couples.
pub fn find_blocking_structure(
    edges: &EdgeMatrix,
    committed: &CommittedSet,
    mode: SearchMode,
) -> Option<BlockingStructure> {
    find_blocking_structure_within(edges, committed, mode, None)
}

/// As [`find_blocking_structure`], with paths and cycles in Consistency mode
/// limited to `max_len` edges.
pub fn find_blocking_structure_within(
    edges: &EdgeMatrix,
    committed: &CommittedSet,
    mode: SearchMode,
    max_len: Option<usize>,
) -> Option<BlockingStructure> {
    let eps = edges.tolerance;
    let blocks = |a: f64| match mode {
        SearchMode::Consistency => a <= -eps,
        SearchMode::Monotonicity => a < -eps,
    };
    for c in 0..edges.couples {
        if committed.is_committed(c) {
            continue;
        }
        if blocks(edges.man_single[c]) {
            return Some(BlockingStructure::GoSingle(PairKey::man_single(c)));
        }
        if blocks(edges.woman_single[c]) {
            return Some(BlockingStructure::GoSingle(PairKey::woman_single(edges.wives[c])));
        }
    }
    let vertices = match mode {
        SearchMode::Consistency => consistency_search(edges, committed, max_len),
        SearchMode::Monotonicity => monotonicity_search(edges, committed),
    }?;
    let (couples, is_cycle) = vertices;
    let matching = Matching {
        man_to_woman: edges.wives.iter().map(|&w| Some(w)).collect(),
        woman_to_man: {
            let mut v = vec![None; edges.couples];
            for (m, &w) in edges.wives.iter().enumerate() {
                v[w] = Some(m);
            }
            v
        },
    };
    Some(BlockingStructure::Remarriages(PathOfRemarriages::from_vertices(
        &couples, &matching, is_cycle,
    )))
}

fn bfs_parents(
    edges: &EdgeMatrix,
    allowed: &dyn Fn(usize, usize) -> bool,
    source: usize,
    reverse: bool,
) -> Vec<Option<usize>> {
    let n = edges.couples;
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[source] = true;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let ok = if reverse { allowed(v, u) } else { allowed(u, v) };
            if v != u && !seen[v] && ok {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    parent[source] = Some(source);
    parent
}

/// Walks BFS parents from `target` back to the root.
fn trace(parent: &[Option<usize>], target: usize) -> Vec<usize> {
    let mut out = vec![target];
    let mut cur = target;
    while let Some(p) = parent[cur] {
        if p == cur {
            break;
        }
        out.push(p);
        cur = p;
    }
    out
}

fn consistency_search(
    edges: &EdgeMatrix,
    committed: &CommittedSet,
    max_len: Option<usize>,
) -> Option<(Vec<usize>, bool)> {
    let n = edges.couples;
    let eps = edges.tolerance;
    let weak = |u: usize, v: usize| u != v && edges.edge(u, v) <= eps;
    let limit = max_len.unwrap_or(usize::MAX);
    // Reachability trees are shared across strict edges with the same endpoints.
    let mut forward: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    let mut backward: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();

    for u in 0..n {
        for v in 0..n {
            if u == v || edges.edge(u, v) > -eps {
                continue;
            }
            // Cycle: u -> v ~> u.
            let from_v = forward
                .entry(v)
                .or_insert_with(|| bfs_parents(edges, &weak, v, false))
                .clone();
            if from_v[u].is_some() {
                let mut back = trace(&from_v, u);
                back.reverse(); // v .. u
                if back.len() <= limit {
                    let mut cycle = vec![u];
                    cycle.extend(&back[..back.len() - 1]);
                    return Some((cycle, true));
                }
            }
            // Open path x ~> u -> v ~> y between non-committed couples.
            let to_u = backward
                .entry(u)
                .or_insert_with(|| bfs_parents(edges, &weak, u, true))
                .clone();
            let head = (0..n)
                .filter(|&x| !committed.is_committed(x) && to_u[x].is_some())
                .map(|x| trace(&to_u, x)) // x .. u
                .min_by_key(Vec::len);
            let tail = (0..n)
                .filter(|&y| !committed.is_committed(y) && from_v[y].is_some())
                .map(|y| {
                    let mut p = trace(&from_v, y);
                    p.reverse(); // v .. y
                    p
                })
                .min_by_key(Vec::len);
            if let (Some(head), Some(tail)) = (head, tail) {
                if head.len() + tail.len() - 1 <= limit {
                    let mut path = head;
                    path.extend(tail);
                    return Some((path, false));
                }
            }
        }
    }
    None
}

fn monotonicity_search(edges: &EdgeMatrix, committed: &CommittedSet) -> Option<(Vec<usize>, bool)> {
    let n = edges.couples;
    if n < 2 {
        return None;
    }
    // Shifting every edge by ε/n makes any structure with sum < −ε strictly
    // negative while keeping structures with non-negative sum non-negative.
    let shift = edges.tolerance / n as f64;
    let w = |u: usize, v: usize| edges.edge(u, v) + shift;

    if let Some(cycle) = negative_cycle(n, &w) {
        return Some((cycle, true));
    }
    for x in (0..n).filter(|&x| !committed.is_committed(x)) {
        let (dist, pred) = bellman_ford(n, &w, x);
        for y in (0..n).filter(|&y| y != x && !committed.is_committed(y)) {
            if dist[y] < 0.0 {
                let mut path = vec![y];
                let mut cur = y;
                while cur != x {
                    cur = pred[cur].expect("reached vertex has a predecessor");
                    path.push(cur);
                }
                path.reverse();
                return Some((path, false));
            }
        }
    }
    None
}

/// Finds a cycle of negative total weight, returned in traversal order.
fn negative_cycle(n: usize, w: &dyn Fn(usize, usize) -> f64) -> Option<Vec<usize>> {
    let mut dist = vec![0.0; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for _ in 0..n {
        last = None;
        for u in 0..n {
            for v in 0..n {
                if u != v && dist[u] + w(u, v) < dist[v] {
                    dist[v] = dist[u] + w(u, v);
                    pred[v] = Some(u);
                    last = Some(v);
                }
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..n {
        v = pred[v]?;
    }
    let start = v;
    let mut cycle = vec![start];
    let mut cur = pred[start]?;
    while cur != start {
        cycle.push(cur);
        cur = pred[cur]?;
    }
    cycle.reverse();
    // Rotate so the lowest couple comes first.
    let pos = cycle.iter().enumerate().min_by_key(|(_, &c)| c).map(|(i, _)| i)?;
    cycle.rotate_left(pos);
    Some(cycle)
}

fn bellman_ford(n: usize, w: &dyn Fn(usize, usize) -> f64, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for u in 0..n {
            if dist[u].is_infinite() {
                continue;
            }
            for v in 0..n {
                if u != v && v != source && dist[u] + w(u, v) < dist[v] {
                    dist[v] = dist[u] + w(u, v);
                    pred[v] = Some(u);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (dist, pred)
}

/// A coalition `(S, σ̂)`: its members and the rematching among them.
///
/// `rematch` maps every non-empty member to its new partner; `Empty` means
/// the member stays single.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    pub members: BTreeSet<AgentId>,
    pub rematch: BTreeMap<AgentId, AgentId>,
}

impl Coalition {
    /// Builds a coalition from `(man, woman)` remarriages and lists of men
    /// and women leaving to stay single.
    pub fn new(pairs: &[(usize, usize)], single_men: &[usize], single_women: &[usize]) -> Self {
        let mut members = BTreeSet::new();
        let mut rematch = BTreeMap::new();
        for &(m, w) in pairs {
            members.extend([AgentId::Man(m), AgentId::Woman(w)]);
            rematch.insert(AgentId::Man(m), AgentId::Woman(w));
            rematch.insert(AgentId::Woman(w), AgentId::Man(m));
        }
        for &m in single_men {
            members.extend([AgentId::Man(m), AgentId::Empty]);
            rematch.insert(AgentId::Man(m), AgentId::Empty);
        }
        for &w in single_women {
            members.extend([AgentId::Woman(w), AgentId::Empty]);
            rematch.insert(AgentId::Woman(w), AgentId::Empty);
        }
        Self { members, rematch }
    }

    /// Checks that `rematch` is an involutive man–woman pairing on the
    /// members, with `∅` allowed as a partner.
    pub fn validate(&self) -> Result<(), GraphError> {
        for agent in self.members.iter().filter(|a| **a != AgentId::Empty) {
            if !self.rematch.contains_key(agent) {
                return Err(GraphError::MalformedCoalition(format!("{agent} has no partner")));
            }
        }
        for (&a, &b) in &self.rematch {
            if !self.members.contains(&a) || !self.members.contains(&b) {
                return Err(GraphError::MalformedCoalition(format!("{a}-{b} leaves the coalition")));
            }
            match (a, b) {
                (AgentId::Man(_), AgentId::Woman(_)) | (AgentId::Woman(_), AgentId::Man(_)) => {
                    if self.rematch.get(&b) != Some(&a) {
                        return Err(GraphError::MalformedCoalition(format!("{a}-{b} is not mutual")));
                    }
                }
                (AgentId::Empty, _) => return Err(GraphError::MalformedCoalition("∅ cannot choose a partner".into())),
                (_, AgentId::Empty) => {}
                _ => {
                    return Err(GraphError::MalformedCoalition(format!(
                        "{a}-{b} is not a man-woman pair"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Spouse-inclusion rule: every committed member's spouse is a member,
    /// and committed members do not leave to stay single.
    pub fn is_permissible(&self, matching: &Matching, committed: &CommittedSet) -> bool {
        self.permissibility_error(matching, committed).is_none()
    }

    fn permissibility_error(&self, matching: &Matching, committed: &CommittedSet) -> Option<String> {
        for (&agent, &partner) in &self.rematch {
            let couple = match agent {
                AgentId::Man(m) => m,
                AgentId::Woman(w) => matching.woman_to_man.get(w).copied().flatten()?,
                AgentId::Empty => continue,
            };
            if !committed.is_committed(couple) {
                continue;
            }
            let spouse = matching.spouse(agent);
            if !self.members.contains(&spouse) {
                return Some(format!("{agent} is committed but {spouse} is not a member"));
            }
            if partner == AgentId::Empty {
                return Some(format!("{agent} is committed and cannot leave to stay single"));
            }
        }
        None
    }
}

/// Extracts a path or cycle of remarriages from a permissible coalition,
/// choosing the lowest-indexed man wherever several qualify.
///
/// A man whose wife is not taken by another coalition man seeds an open
/// path, which follows each taken wife's husband until the walk leaves the
/// coalition or ends with a man leaving to stay single. Otherwise every
/// rematched man's wife is taken and the walk closes into a cycle. A
/// coalition whose only moves are going single yields the lowest such
/// single option.
pub fn coalition_to_path(
    coalition: &Coalition,
    matching: &Matching,
    committed: &CommittedSet,
) -> Result<BlockingStructure, GraphError> {
    coalition.validate()?;
    if let Some(reason) = coalition.permissibility_error(matching, committed) {
        return Err(GraphError::NotPermissible(reason));
    }
    let new_wife = |m: usize| match coalition.rematch.get(&AgentId::Man(m)) {
        Some(AgentId::Woman(w)) if matching.man_to_woman.get(m) != Some(&Some(*w)) => Some(*w),
        _ => None,
    };
    let remarrying: Vec<usize> = coalition
        .members
        .iter()
        .filter_map(|a| match a {
            AgentId::Man(m) if new_wife(*m).is_some() => Some(*m),
            _ => None,
        })
        .collect();
    let wife_taken = |m: usize| {
        let Some(w) = matching.man_to_woman.get(m).copied().flatten() else {
            return false;
        };
        matches!(coalition.rematch.get(&AgentId::Woman(w)), Some(AgentId::Man(h)) if *h != m)
    };

    let Some(&first) = remarrying.iter().min() else {
        let single = coalition.rematch.iter().find_map(|(&a, &b)| match (a, b) {
            (AgentId::Man(m), AgentId::Empty) => Some(PairKey::man_single(m)),
            (AgentId::Woman(w), AgentId::Empty) => Some(PairKey::woman_single(w)),
            _ => None,
        });
        return single
            .map(BlockingStructure::GoSingle)
            .ok_or_else(|| GraphError::MalformedCoalition("no member changes partner".into()));
    };

    let husband_of = |w: usize| {
        matching
            .woman_to_man
            .get(w)
            .copied()
            .flatten()
            .ok_or_else(|| GraphError::MalformedCoalition(format!("w{w} is not married")))
    };

    let seed = remarrying.iter().copied().find(|&m| !wife_taken(m));
    let (start, is_cycle) = match seed {
        Some(m) => (m, false),
        None => (first, true),
    };
    let mut couples = vec![start];
    let mut current = start;
    loop {
        let w = new_wife(current).expect("walk only visits remarrying men");
        let next = husband_of(w)?;
        if is_cycle && next == start {
            break;
        }
        if couples.contains(&next) {
            return Err(GraphError::MalformedCoalition("walk revisits a couple".into()));
        }
        couples.push(next);
        if new_wife(next).is_none() {
            break;
        }
        current = next;
    }
    let path = PathOfRemarriages::from_vertices(&couples, matching, is_cycle);
    Ok(BlockingStructure::Remarriages(path))
}

/// All permissible simple open paths and cycles with at most `max_len`
/// edges, ordered by length, open paths before cycles, then by vertex
/// sequence. Cycles start at their lowest couple.
pub fn enumerate_permissible_paths(market: &Market, max_len: usize) -> Vec<PathOfRemarriages> {
    enumerate_paths(&market.matching, &market.committed, max_len)
}

/// As [`enumerate_permissible_paths`], from a matching and committed set.
pub fn enumerate_paths(matching: &Matching, committed: &CommittedSet, max_len: usize) -> Vec<PathOfRemarriages> {
    let n = matching.men();
    let mut found: Vec<(Vec<usize>, bool)> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();

    fn extend(
        n: usize,
        committed: &CommittedSet,
        max_len: usize,
        stack: &mut Vec<usize>,
        found: &mut Vec<(Vec<usize>, bool)>,
    ) {
        let edges = stack.len() - 1;
        let first = stack[0];
        let last = *stack.last().expect("non-empty");
        if edges >= 1 && !committed.is_committed(first) && !committed.is_committed(last) {
            found.push((stack.clone(), false));
        }
        if edges < max_len && stack.len() >= 2 {
            // Closing edge back to the (lowest) start couple.
            found.push((stack.clone(), true));
        }
        if edges + 1 > max_len {
            return;
        }
        for v in 0..n {
            if stack.contains(&v) {
                continue;
            }
            stack.push(v);
            extend(n, committed, max_len, stack, found);
            stack.pop();
        }
    }

    for s in 0..n {
        stack.clear();
        stack.push(s);
        extend(n, committed, max_len, &mut stack, &mut found);
    }
    // Keep cycles only once, anchored at their lowest couple.
    found.retain(|(v, is_cycle)| !is_cycle || v.iter().min() == Some(&v[0]));
    let mut paths: Vec<PathOfRemarriages> = found
        .into_iter()
        .map(|(v, is_cycle)| PathOfRemarriages::from_vertices(&v, matching, is_cycle))
        .collect();
    paths.sort_by(|a, b| (a.len(), a.is_cycle, a.vertices()).cmp(&(b.len(), b.is_cycle, b.vertices())));
    paths
}

/// Explicit transfers that concentrate a structure's whole weight on its
/// last edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCertificate {
    /// `(couple, t̂)` along the structure; the first and last are zero.
    pub potentials: Vec<(usize, f64)>,
    /// Edge weights after transfers: zero everywhere except the last edge,
    /// which carries the total.
    pub adjusted: Vec<f64>,
}

/// Telescoping transfers `t̂_{m_1} = 0`, `t̂_{m_j} = a_{m_{j−1},σ(m_j)} + t̂_{m_{j−1}}`
/// and `t̂_{m_n} = 0`.
pub fn transfer_certificate(path: &PathOfRemarriages, edges: &EdgeMatrix) -> TransferCertificate {
    let seq = path.vertices();
    let k = seq.len() - 1;
    let mut t = vec![0.0; k + 1];
    for j in 1..k {
        t[j] = edges.edge(seq[j - 1], seq[j]) + t[j - 1];
    }
    let adjusted = (0..k)
        .map(|j| edges.edge(seq[j], seq[j + 1]) + t[j] - t[j + 1])
        .collect();
    TransferCertificate {
        potentials: seq.iter().copied().zip(t).collect(),
        adjusted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::uniform;

    fn matrix(cross: Vec<Vec<f64>>) -> EdgeMatrix {
        let n = cross.len();
        EdgeMatrix::from_weights(&Matching::identity(n), cross, vec![1.0; n], vec![1.0; n])
    }

    #[test]
    fn two_couple_edge_weight_by_hand() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        let mut market = market;
        market.incomes.insert(PairKey::cross(0, 1), 3.0);
        let candidate = AllocationCandidate::even_split(&market);
        let edges = build_edge_matrix(&market, &candidate).unwrap();
        // p(qA_m + qB_w) + PmA·QA + PwB·QB − y = 1.5 + 0.5 + 1.0 − 3
        assert!(edges.weight(&PairKey::cross(0, 1)).unwrap().abs() < 1e-12);

        let mut with_index = candidate.clone();
        with_index.indices = Some([(PairKey::cross(0, 1), 0.9)].into_iter().collect());
        let edges = build_edge_matrix(&market, &with_index).unwrap();
        assert!((edges.weight(&PairKey::cross(0, 1)).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn observed_couple_weight_is_zero_under_budget_identity() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        let candidate = AllocationCandidate::with_shares(&market, |c| 0.2 + 0.5 * c as f64, |_| 0.3);
        for c in 0..2 {
            assert!(pair_weight(&market, &candidate, &market.couple_key(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        let mut candidate = AllocationCandidate::even_split(&market);
        candidate.q_man[1].push(0.0);
        assert!(matches!(
            build_edge_matrix(&market, &candidate),
            Err(GraphError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn single_negative_edge_is_a_path() {
        let mut cross = vec![vec![1.0; 3]; 3];
        cross[0][1] = -1.0;
        let edges = matrix(cross);
        let none = CommittedSet::none(3);
        for mode in [SearchMode::Consistency, SearchMode::Monotonicity] {
            let found = find_blocking_structure(&edges, &none, mode).unwrap();
            let BlockingStructure::Remarriages(path) = found else {
                panic!("expected a path")
            };
            assert_eq!(path.vertices(), vec![0, 1]);
            assert!(!path.is_cycle);
        }
    }

    #[test]
    fn mixed_sign_cycle_blocks_only_with_transfers() {
        let mut cross = vec![vec![10.0; 3]; 3];
        cross[0][1] = -1.0;
        cross[1][2] = 0.4;
        cross[2][0] = 0.4;
        let edges = matrix(cross);
        let all = CommittedSet::all(3);
        let found = find_blocking_structure(&edges, &all, SearchMode::Monotonicity).unwrap();
        let BlockingStructure::Remarriages(cycle) = found else {
            panic!()
        };
        assert!(cycle.is_cycle);
        assert_eq!(cycle.vertices(), vec![0, 1, 2, 0]);
        assert!((cycle.weight(&edges) + 0.2).abs() < 1e-12);
        assert_eq!(find_blocking_structure(&edges, &all, SearchMode::Consistency), None);
    }

    #[test]
    fn nonnegative_edges_never_block() {
        let edges = matrix(vec![vec![0.0, 2.0], vec![3.0, 0.0]]);
        for committed in [CommittedSet::none(2), CommittedSet::all(2)] {
            for mode in [SearchMode::Consistency, SearchMode::Monotonicity] {
                assert_eq!(find_blocking_structure(&edges, &committed, mode), None);
            }
        }
    }

    #[test]
    fn consistency_length_limit() {
        let mut cross = vec![vec![10.0; 4]; 4];
        cross[0][1] = -1.0;
        cross[1][2] = 0.0;
        cross[2][3] = 0.0;
        cross[3][0] = 0.0;
        let edges = matrix(cross);
        let all = CommittedSet::all(4);
        assert!(find_blocking_structure_within(&edges, &all, SearchMode::Consistency, Some(3)).is_none());
        assert!(find_blocking_structure_within(&edges, &all, SearchMode::Consistency, Some(4)).is_some());
    }

    #[test]
    fn single_option_blocks_only_non_committed() {
        let mut edges = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        edges.man_single[1] = -0.5;
        assert_eq!(
            find_blocking_structure(&edges, &CommittedSet::none(2), SearchMode::Consistency),
            Some(BlockingStructure::GoSingle(PairKey::man_single(1)))
        );
        assert_eq!(
            find_blocking_structure(&edges, &CommittedSet::all(2), SearchMode::Consistency),
            None
        );
    }

    #[test]
    fn permissibility_of_paths() {
        let matching = Matching::identity(3);
        let cycle = PathOfRemarriages::from_vertices(&[0, 1], &matching, true);
        assert!(path_is_permissible(&cycle, &CommittedSet::all(3)));
        let open = PathOfRemarriages::from_vertices(&[0, 1, 2], &matching, false);
        assert!(!path_is_permissible(
            &open,
            &CommittedSet::from_flags(vec![true, false, false])
        ));
        assert!(path_is_permissible(
            &open,
            &CommittedSet::from_flags(vec![false, true, false])
        ));
        assert!(open.is_well_formed(&matching));
        assert_eq!(open.edges, vec![PairKey::cross(0, 1), PairKey::cross(1, 2)]);
    }

    #[test]
    fn swap_coalition_is_a_two_cycle() {
        let matching = Matching::identity(2);
        let swap = Coalition::new(&[(0, 1), (1, 0)], &[], &[]);
        let out = coalition_to_path(&swap, &matching, &CommittedSet::all(2)).unwrap();
        let BlockingStructure::Remarriages(path) = out else {
            panic!()
        };
        assert!(path.is_cycle);
        assert_eq!(path.edges, vec![PairKey::cross(0, 1), PairKey::cross(1, 0)]);
    }

    #[test]
    fn single_remarriage_is_case_one() {
        let matching = Matching::identity(2);
        let c = Coalition::new(&[(0, 1)], &[], &[]);
        let out = coalition_to_path(&c, &matching, &CommittedSet::none(2)).unwrap();
        let BlockingStructure::Remarriages(path) = out else {
            panic!()
        };
        assert_eq!(path.vertices(), vec![0, 1]);
        assert!(!path.is_cycle);
        assert!(matches!(
            coalition_to_path(&c, &matching, &CommittedSet::all(2)),
            Err(GraphError::NotPermissible(_))
        ));
    }

    #[test]
    fn rotation_is_case_two() {
        let matching = Matching::identity(3);
        let c = Coalition::new(&[(0, 1), (1, 2), (2, 0)], &[], &[]);
        let out = coalition_to_path(&c, &matching, &CommittedSet::all(3)).unwrap();
        let BlockingStructure::Remarriages(path) = out else {
            panic!()
        };
        assert_eq!(path.vertices(), vec![0, 1, 2, 0]);
    }

    #[test]
    fn malformed_coalition_rejected() {
        let matching = Matching::identity(2);
        let mut c = Coalition::new(&[(0, 1)], &[], &[]);
        c.rematch.insert(AgentId::Woman(1), AgentId::Man(1));
        assert!(matches!(
            coalition_to_path(&c, &matching, &CommittedSet::none(2)),
            Err(GraphError::MalformedCoalition(_))
        ));
    }

    #[test]
    fn path_enumeration_counts() {
        let market = uniform(&[1.0, 1.0], &[1.0, 1.0]);
        let paths = enumerate_permissible_paths(&market, 2);
        assert_eq!(paths.iter().filter(|p| !p.is_cycle).count(), 2);
        assert_eq!(paths.iter().filter(|p| p.is_cycle).count(), 1);

        let mut committed = market.clone();
        committed.committed = CommittedSet::all(2);
        let paths = enumerate_permissible_paths(&committed, 2);
        assert_eq!(paths.len(), 1);
        assert!(paths[0].is_cycle);
        assert!(enumerate_permissible_paths(&committed, 1).is_empty());
    }

    #[test]
    fn telescoping_transfers_concentrate_weight() {
        let mut cross = vec![vec![0.0; 4]; 4];
        cross[0][1] = 0.5;
        cross[1][2] = -2.0;
        cross[2][3] = 0.7;
        let edges = matrix(cross);
        let path = PathOfRemarriages::from_vertices(&[0, 1, 2, 3], &Matching::identity(4), false);
        let cert = transfer_certificate(&path, &edges);
        assert_eq!(cert.adjusted[..2], [0.0, 0.0]);
        assert!((cert.adjusted[2] - (-0.8)).abs() < 1e-12);
        assert_eq!(cert.potentials[0], (0, 0.0));
    }
}
