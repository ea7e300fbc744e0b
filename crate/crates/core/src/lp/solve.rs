use std::time::Duration;

use super::{FeasibilityProgram, Relation, Sense, Solution, SolveError, SolveStatus, VarKind};

/// Solver backends compiled into this build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// HiGHS (simplex + branch and cut).
    Highs,
    /// The pure-Rust `microlp` solver.
    Microlp,
}

/// Backends usable in this build, preferred first.
pub fn available_backends() -> Vec<Backend> {
    let mut out = Vec::new();
    if cfg!(feature = "highs") {
        out.push(Backend::Highs);
    }
    out.push(Backend::Microlp);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub int_tol: f64,
    pub time_limit: Option<Duration>,
    pub backend: Backend,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            int_tol: 1e-9,
            time_limit: None,
            backend: available_backends()[0],
        }
    }
}

impl SolveOptions {
    pub fn with_backend(backend: Backend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }
}

/// Solves `program` with the configured backend.
pub fn solve(program: &FeasibilityProgram, opts: &SolveOptions) -> Result<Solution, SolveError> {
    program.check()?;
    match opts.backend {
        Backend::Highs => solve_highs(program, opts),
        Backend::Microlp => Ok(solve_microlp(program, opts)),
    }
}

/// Snaps binaries onto `{0, 1}` and reports the objective at those values.
fn finish(program: &FeasibilityProgram, mut values: Vec<f64>, opts: &SolveOptions) -> Solution {
    for (v, x) in program.variables.iter().zip(values.iter_mut()) {
        if v.kind == VarKind::Binary && (*x - x.round()).abs() <= opts.int_tol.max(1e-6) {
            *x = x.round();
        }
    }
    let objective_value = program
        .objective
        .as_ref()
        .map(|o| o.terms.iter().map(|(v, c)| c * values[v.0]).sum());
    Solution {
        status: SolveStatus::Optimal,
        values: Some(values),
        objective_value,
        detail: None,
    }
}

#[cfg(feature = "highs")]
fn solve_highs(program: &FeasibilityProgram, opts: &SolveOptions) -> Result<Solution, SolveError> {
    use highs::{HighsModelStatus, RowProblem};

    let build = |with_objective: bool| {
        let mut pb = RowProblem::default();
        let (costs, sense) = match (&program.objective, with_objective) {
            (Some(obj), true) => {
                let mut costs = vec![0.0; program.variables.len()];
                for &(v, c) in &obj.terms {
                    costs[v.0] += c;
                }
                let sense = match obj.sense {
                    Sense::Maximize => highs::Sense::Maximise,
                    Sense::Minimize => highs::Sense::Minimise,
                };
                (costs, sense)
            }
            _ => (vec![0.0; program.variables.len()], highs::Sense::Minimise),
        };
        let cols: Vec<_> = program
            .variables
            .iter()
            .zip(&costs)
            .map(|(v, &c)| match v.kind {
                VarKind::Continuous => pb.add_column(c, v.lower..=v.upper),
                VarKind::Binary => pb.add_integer_column(c, v.lower.max(0.0)..=v.upper.min(1.0)),
            })
            .collect();
        for c in &program.constraints {
            let row: Vec<_> = c.terms.iter().map(|&(v, k)| (cols[v.0], k)).collect();
            match c.relation {
                Relation::Le => pb.add_row(..=c.rhs, row),
                Relation::Ge => pb.add_row(c.rhs.., row),
                Relation::Eq => pb.add_row(c.rhs..=c.rhs, row),
            }
        }
        let mut model = pb.optimise(sense);
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("random_seed", 0);
        model.set_option("primal_feasibility_tolerance", opts.feas_tol);
        model.set_option("mip_feasibility_tolerance", opts.int_tol.max(opts.feas_tol));
        if let Some(limit) = opts.time_limit {
            model.set_option("time_limit", limit.as_secs_f64());
        }
        model.solve()
    };

    if program.variables.is_empty() {
        return Ok(finish(program, Vec::new(), opts));
    }
    let solved = build(true);
    let status = solved.status();
    Ok(match status {
        HighsModelStatus::Optimal => finish(program, solved.get_solution().columns().to_vec(), opts),
        HighsModelStatus::Infeasible => Solution::failure(SolveStatus::Infeasible, "infeasible"),
        HighsModelStatus::Unbounded => Solution::failure(SolveStatus::Unbounded, "unbounded"),
        HighsModelStatus::UnboundedOrInfeasible => {
            // Re-solve without objective to tell the two apart.
            match build(false).status() {
                HighsModelStatus::Optimal => Solution::failure(SolveStatus::Unbounded, "unbounded"),
                HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
                    Solution::failure(SolveStatus::Infeasible, "infeasible")
                }
                other => Solution::failure(SolveStatus::NumericalFailure, format!("{other:?}")),
            }
        }
        HighsModelStatus::ReachedTimeLimit => Solution::failure(SolveStatus::NumericalFailure, "time limit reached"),
        other => Solution::failure(SolveStatus::NumericalFailure, format!("{other:?}")),
    })
}

#[cfg(not(feature = "highs"))]
fn solve_highs(_: &FeasibilityProgram, _: &SolveOptions) -> Result<Solution, SolveError> {
    Err(SolveError::BackendUnavailable("highs".into()))
}

fn solve_microlp(program: &FeasibilityProgram, opts: &SolveOptions) -> Solution {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};

    let (direction, costs) = match &program.objective {
        Some(obj) => {
            let mut costs = vec![0.0; program.variables.len()];
            for &(v, c) in &obj.terms {
                costs[v.0] += c;
            }
            let dir = match obj.sense {
                Sense::Maximize => OptimizationDirection::Maximize,
                Sense::Minimize => OptimizationDirection::Minimize,
            };
            (dir, costs)
        }
        None => (OptimizationDirection::Minimize, vec![0.0; program.variables.len()]),
    };
    let mut pb = Problem::new(direction);
    if let Some(limit) = opts.time_limit {
        pb.set_time_limit(limit);
    }
    let vars: Vec<_> = program
        .variables
        .iter()
        .zip(&costs)
        .map(|(v, &c)| match v.kind {
            VarKind::Continuous => pb.add_var(c, (v.lower, v.upper)),
            VarKind::Binary => pb.add_integer_var(c, (v.lower.max(0.0).ceil() as i32, v.upper.min(1.0).floor() as i32)),
        })
        .collect();
    for c in &program.constraints {
        let row: Vec<_> = c.terms.iter().map(|&(v, k)| (vars[v.0], k)).collect();
        let op = match c.relation {
            Relation::Le => ComparisonOp::Le,
            Relation::Ge => ComparisonOp::Ge,
            Relation::Eq => ComparisonOp::Eq,
        };
        pb.add_constraint(row.as_slice(), op, c.rhs);
    }
    match pb.solve() {
        Ok(outcome) => {
            if !outcome.is_optimal() {
                let reason = format!("{:?}", outcome.termination_reason());
                return Solution::failure(SolveStatus::NumericalFailure, format!("stopped early: {reason}"));
            }
            match outcome.into_solution() {
                Ok(sol) => finish(program, vars.iter().map(|&v| sol.var_value(v)).collect(), opts),
                Err(_) => Solution::failure(SolveStatus::NumericalFailure, "interrupted"),
            }
        }
        Err(microlp::Error::Infeasible) => Solution::failure(SolveStatus::Infeasible, "infeasible"),
        Err(microlp::Error::Unbounded) => Solution::failure(SolveStatus::Unbounded, "unbounded"),
        Err(e) => Solution::failure(SolveStatus::NumericalFailure, e.to_string()),
    }
}
