//! Backend-agnostic linear and mixed-integer programs.

mod lpformat;
mod solve;

use std::fmt;

pub use solve::{available_backends, solve, Backend, SolveOptions};

/// Index of a variable within its program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
}

/// An affine expression `Σ c·x + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn add_term(&mut self, var: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((var, coef));
        }
        self
    }

    pub fn add_constant(&mut self, value: f64) -> &mut Self {
        self.constant += value;
        self
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for (v, c) in self.terms {
            match out.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|(_, c)| *c != 0.0);
        self.terms = out;
        self
    }

    /// Value at a full assignment of the program's variables.
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Lower and upper bounds over the variables' boxes.
    pub fn bounds(&self, program: &FeasibilityProgram) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, c) in &self.terms {
            let var = &program.variables[v.0];
            if c >= 0.0 {
                lo += c * var.lower;
                hi += c * var.upper;
            } else {
                lo += c * var.upper;
                hi += c * var.lower;
            }
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("constraint {constraint} references undeclared variable {var}")]
    UnknownVariable { constraint: String, var: usize },
    #[error("variable {0} has lower bound above upper bound")]
    InvertedBounds(String),
    #[error("{0} has a non-finite coefficient")]
    NonFinite(String),
}

/// Variables with boxes, sparse linear constraints, and an optional objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityProgram {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Option<Objective>,
}

impl FeasibilityProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.push_variable(name.into(), lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_variable(name.into(), 0.0, 1.0, VarKind::Binary)
    }

    fn push_variable(&mut self, name: String, lower: f64, upper: f64, kind: VarKind) -> VarId {
        self.variables.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            relation,
            rhs,
        });
    }

    /// Adds `expr (relation) rhs`, moving the expression's constant across.
    pub fn add_expr_constraint(&mut self, name: impl Into<String>, expr: &LinExpr, relation: Relation, rhs: f64) {
        let expr = expr.clone().compact();
        self.add_constraint(name, expr.terms, relation, rhs - expr.constant);
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, f64)>, sense: Sense) {
        self.objective = Some(Objective { terms, sense });
    }

    pub fn is_mixed_integer(&self) -> bool {
        self.variables.iter().any(|v| v.kind == VarKind::Binary)
    }

    pub fn binary_count(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Checks declared-variable references, bounds, and finiteness.
    pub fn check(&self) -> Result<(), ProgramError> {
        for v in &self.variables {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() {
                return Err(ProgramError::InvertedBounds(v.name.clone()));
            }
        }
        let rows = self
            .constraints
            .iter()
            .map(|c| (c.name.as_str(), &c.terms, c.rhs))
            .chain(self.objective.iter().map(|o| ("objective", &o.terms, 0.0)));
        for (name, terms, rhs) in rows {
            if !rhs.is_finite() {
                return Err(ProgramError::NonFinite(name.to_string()));
            }
            for &(v, c) in terms {
                if v.0 >= self.variables.len() {
                    return Err(ProgramError::UnknownVariable {
                        constraint: name.to_string(),
                        var: v.0,
                    });
                }
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite(name.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any bound, constraint, or integrality mark at
    /// `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|(v, k)| k * values[v.0]).sum();
            let gap = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    /// Renders the program in CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        lpformat::write_lp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Solver result; `values` is present iff the status is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub values: Option<Vec<f64>>,
    pub objective_value: Option<f64>,
    pub detail: Option<String>,
}

impl Solution {
    pub fn failure(status: SolveStatus, detail: impl Into<String>) -> Self {
        Self {
            status,
            values: None,
            objective_value: None,
            detail: Some(detail.into()),
        }
    }

    pub fn value(&self, var: VarId) -> Option<f64> {
        self.values.as_ref().map(|v| v[var.0])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("solver backend {0} is not available in this build")]
    BackendUnavailable(String),
    #[error("malformed program: {0}")]
    MalformedProgram(#[from] ProgramError),
}
