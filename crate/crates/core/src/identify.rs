//! Bounds on the wife's private expenditure share (the conditional sharing
//! rule) implied by each regime, and the naive bounds implied by assignable
//! consumption alone.
//!
//! Husband bounds follow by complementation: `η^m = total − η^w`.

use serde::{Deserialize, Serialize};

use crate::lp::{Relation, Sense, SolveStatus};
use crate::market::{dot, Market};
use crate::rationalize::{
    build_program, compute_stability_indices, solve_regime_program, RationalizeError, RationalizeOptions, Regime,
    RegimeKind,
};
use crate::stats::Summary;

/// Relative slack allowed when pinning indices at their optimum.
pub const PINNING_SLACK: f64 = 1e-7;

/// How optimal stability indices are held while bounding shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PinningMode {
    /// `Σ s ≥ Σ s*`.
    #[default]
    Aggregate,
    /// `s ≥ s*` for every outside option of one optimal vector.
    PerOption,
}

impl std::str::FromStr for PinningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aggregate" => Ok(PinningMode::Aggregate),
            "per-option" => Ok(PinningMode::PerOption),
            other => Err(format!("unknown pinning mode `{other}`")),
        }
    }
}

/// Bounds on the money value of one wife's private consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupleBounds {
    pub couple: usize,
    pub lower: f64,
    pub upper: f64,
    /// Couple's private expenditure at its own prices.
    pub total: f64,
    pub lower_frac: f64,
    pub upper_frac: f64,
    /// `upper_frac − lower_frac`.
    pub width: f64,
}

impl CoupleBounds {
    fn new(couple: usize, lower: f64, upper: f64, total: f64) -> Self {
        let lower = lower.clamp(0.0, total);
        let upper = upper.clamp(lower, total);
        let (lower_frac, upper_frac) = if total > 0.0 {
            (lower / total, upper / total)
        } else {
            (0.0, 0.0)
        };
        Self {
            couple,
            lower,
            upper,
            total,
            lower_frac,
            upper_frac,
            width: upper_frac - lower_frac,
        }
    }
}

/// Per-couple sharing-rule bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingBounds {
    pub couples: Vec<CoupleBounds>,
}

impl SharingBounds {
    pub fn widths(&self) -> Vec<f64> {
        self.couples.iter().map(|c| c.width).collect()
    }

    pub fn mean_width(&self) -> f64 {
        if self.couples.is_empty() {
            return 0.0;
        }
        self.widths().iter().sum::<f64>() / self.couples.len() as f64
    }
}

/// Bounds from assignable consumption alone.
pub fn naive_bounds(market: &Market) -> SharingBounds {
    let couples = (0..market.couples())
        .map(|c| {
            let p = &market.price(&market.couple_key(c)).private;
            let total = dot(p, &market.private_obs[c]);
            let (lower, upper) = match &market.assignable[c] {
                Some(a) => (dot(p, &a.woman), total - dot(p, &a.man)),
                None => (0.0, total),
            };
            CoupleBounds::new(c, lower, upper, total)
        })
        .collect();
    SharingBounds { couples }
}

/// Minimizes and maximizes each wife's private expenditure subject to the
/// regime's conditions with stability indices held at their optimum.
pub fn bound_sharing_rule(
    market: &Market,
    regime: &Regime,
    opts: &RationalizeOptions,
    pinning: PinningMode,
) -> Result<SharingBounds, RationalizeError> {
    let report = compute_stability_indices(market, regime, opts)?;
    let mut compiled = build_program(market, regime, opts, true)?;
    match pinning {
        PinningMode::Aggregate => {
            let floor = report.objective - PINNING_SLACK * report.objective.abs().max(1.0);
            compiled
                .program
                .add_constraint("pin", compiled.index_sum_terms(), Relation::Ge, floor);
        }
        PinningMode::PerOption => {
            for (key, &var) in &compiled.layout.indices {
                let floor = report.indices[key] - PINNING_SLACK;
                compiled
                    .program
                    .add_constraint(format!("pin{key}"), vec![(var, 1.0)], Relation::Ge, floor);
            }
        }
    }

    let mut couples = Vec::with_capacity(market.couples());
    for c in 0..market.couples() {
        let p = &market.price(&market.couple_key(c)).private;
        let total = dot(p, &market.private_obs[c]);
        // p·q_w = total − p·q_m
        let terms: Vec<_> = compiled.layout.q_man[c]
            .iter()
            .copied()
            .zip(p.iter().copied())
            .collect();
        let mut extreme = |sense: Sense| -> Result<f64, RationalizeError> {
            compiled.program.set_objective(terms.clone(), sense);
            let sol = solve_regime_program(&compiled.program, &opts.solver)?;
            match sol.status {
                SolveStatus::Optimal => {
                    let values = sol.values.as_ref().expect("optimal");
                    Ok(terms.iter().map(|(v, k)| k * values[v.0]).sum())
                }
                _ => Err(RationalizeError::SolverFailure(
                    sol.detail.unwrap_or_else(|| format!("{:?}", sol.status)),
                )),
            }
        };
        let husband_max = extreme(Sense::Maximize)?;
        let husband_min = extreme(Sense::Minimize)?;
        couples.push(CoupleBounds::new(c, total - husband_max, total - husband_min, total));
    }
    Ok(SharingBounds { couples })
}

/// One row of an identification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    /// Regime label, or `naive`.
    pub label: String,
    pub widths: Summary,
}

/// Pools per-couple widths over `markets` for the naive bounds and each
/// regime. Empty input gives an empty table.
pub fn identification_report(
    markets: &[Market],
    regimes: &[RegimeKind],
    opts: &RationalizeOptions,
    pinning: PinningMode,
) -> Result<Vec<WidthRow>, RationalizeError> {
    if markets.is_empty() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    let naive: Vec<f64> = markets.iter().flat_map(|m| naive_bounds(m).widths()).collect();
    if let Some(widths) = Summary::of(&naive) {
        rows.push(WidthRow {
            label: "naive".into(),
            widths,
        });
    }
    for &kind in regimes {
        let mut pooled = Vec::new();
        for market in markets {
            pooled.extend(bound_sharing_rule(market, &Regime::new(kind), opts, pinning)?.widths());
        }
        if let Some(widths) = Summary::of(&pooled) {
            rows.push(WidthRow {
                label: kind.label().into(),
                widths,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::fixtures::uniform;
    use crate::market::{Assignable, CommittedSet};

    #[test]
    fn naive_without_assignable_is_full_width() {
        let market = uniform(&[2.0, 1.0], &[1.0, 2.0]);
        let b = naive_bounds(&market);
        assert!(b.couples.iter().all(|c| c.width == 1.0 && c.lower == 0.0));
    }

    #[test]
    fn naive_with_partial_assignable() {
        let mut market = uniform(&[10.0], &[1.0]);
        market.assignable[0] = Some(Assignable {
            man: vec![3.0],
            woman: vec![4.0],
        });
        let c = naive_bounds(&market).couples[0];
        assert!((c.lower_frac - 0.4).abs() < 1e-12);
        assert!((c.upper_frac - 0.7).abs() < 1e-12);
        assert!((c.width - 0.3).abs() < 1e-12);
    }

    #[test]
    fn full_assignability_point_identifies() {
        let mut market = uniform(&[10.0], &[1.0]);
        market.assignable[0] = Some(Assignable {
            man: vec![6.0],
            woman: vec![4.0],
        });
        assert_eq!(naive_bounds(&market).couples[0].width, 0.0);
        let b = bound_sharing_rule(
            &market,
            &Regime::unilateral(),
            &RationalizeOptions::default(),
            PinningMode::Aggregate,
        )
        .unwrap();
        assert!(b.couples[0].width.abs() < 1e-9);
    }

    #[test]
    fn flat_prices_committed_transfers_match_naive() {
        let mut market = uniform(&[2.0, 1.0, 3.0], &[1.0, 2.0, 1.0]);
        market.committed = CommittedSet::all(3);
        let b = bound_sharing_rule(
            &market,
            &Regime::transfers(),
            &RationalizeOptions::default(),
            PinningMode::Aggregate,
        )
        .unwrap();
        for c in &b.couples {
            assert!((c.width - 1.0).abs() < 1e-6, "{c:?}");
        }
    }

    #[test]
    fn single_couple_report_statistics() {
        let mut market = uniform(&[10.0], &[1.0]);
        market.assignable[0] = Some(Assignable {
            man: vec![3.0],
            woman: vec![4.0],
        });
        let rows =
            identification_report(&[market], &[], &RationalizeOptions::default(), PinningMode::Aggregate).unwrap();
        let s = rows[0].widths;
        for v in [s.mean, s.min, s.median, s.max] {
            assert!((v - 0.3).abs() < 1e-12);
        }
        assert!(identification_report(
            &[],
            &RegimeKind::ALL,
            &RationalizeOptions::default(),
            PinningMode::Aggregate
        )
        .unwrap()
        .is_empty());
    }
}
