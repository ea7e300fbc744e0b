//! Synthetic marriage markets and the perturbation experiments.
//!
//! Each generated market has three private goods (the husband's leisure,
//! priced at his wage; the wife's leisure, priced at her wage; and a
//! Hicksian private good priced 1) and one Hicksian public good priced 1.
//! Individual full income is the wage times the time endowment; labor
//! income is spent on Hicksian goods. Assignable Hicksian consumption is a
//! random fraction per spouse, and the rest is split equally between
//! private and public consumption. Every potential pair's income is the sum
//! of its members' full incomes, so observed couples exhaust their budgets.
//!
//! The default distributions are illustrative, not calibrated to any survey.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::identify::{bound_sharing_rule, naive_bounds, PinningMode};
use crate::market::{Assignable, CommittedSet, Market, Matching, PairKey, PairPrices};
use crate::rationalize::{compute_stability_indices, RationalizeOptions, Regime, RegimeKind};
use crate::stats::Summary;

/// Position of the Hicksian private good in generated price vectors.
pub const HICKSIAN_PRIVATE: usize = 2;

const STREAM_MARKET: u64 = 0;
const STREAM_PERTURB: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommittedPattern {
    All,
    None,
    /// Every other couple, starting with couple 0.
    Alternating,
}

impl CommittedPattern {
    pub fn build(&self, couples: usize) -> CommittedSet {
        match self {
            CommittedPattern::All => CommittedSet::all(couples),
            CommittedPattern::None => CommittedSet::none(couples),
            CommittedPattern::Alternating => CommittedSet::from_flags((0..couples).map(|c| c % 2 == 0).collect()),
        }
    }
}

/// Distributions of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub couples: usize,
    /// Hourly wage range of men `[lo, hi]`.
    pub wage_man: (f64, f64),
    /// Hourly wage range of women `[lo, hi]`.
    pub wage_woman: (f64, f64),
    /// Fraction of the time endowment spent working.
    pub hours: (f64, f64),
    /// Fraction of Hicksian spending assignable to each spouse.
    pub assignable: (f64, f64),
    pub time_endowment: f64,
    pub committed: CommittedPattern,
    /// Record assignable consumption in the market.
    pub record_assignable: bool,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            couples: 10,
            wage_man: (10.0, 30.0),
            wage_woman: (8.0, 25.0),
            hours: (0.2, 0.5),
            assignable: (0.0, 0.2),
            time_endowment: 1.0,
            committed: CommittedPattern::All,
            record_assignable: true,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Random-number stream for one draw and purpose.
pub fn substream(seed: u64, draw: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw * 2 + purpose);
    rng
}

/// Generates a market that exhausts every observed budget.
pub fn generate_market(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Market {
    let n = params.couples;
    let t = params.time_endowment;
    let wage_m: Vec<f64> = (0..n).map(|_| uniform(rng, params.wage_man)).collect();
    let wage_w: Vec<f64> = (0..n).map(|_| uniform(rng, params.wage_woman)).collect();
    let mut private_obs = Vec::with_capacity(n);
    let mut public_obs = Vec::with_capacity(n);
    let mut assignable = Vec::with_capacity(n);
    for c in 0..n {
        let h_m = uniform(rng, params.hours);
        let h_w = uniform(rng, params.hours);
        let a_m = uniform(rng, params.assignable);
        let a_w = uniform(rng, params.assignable);
        let leisure_m = t * (1.0 - h_m);
        let leisure_w = t * (1.0 - h_w);
        let hicksian = t * (wage_m[c] * h_m + wage_w[c] * h_w);
        let shared = hicksian * (1.0 - a_m - a_w);
        let private = hicksian * (a_m + a_w) + 0.5 * shared;
        private_obs.push(vec![leisure_m, leisure_w, private]);
        public_obs.push(vec![0.5 * shared]);
        assignable.push(params.record_assignable.then(|| Assignable {
            man: vec![leisure_m, 0.0, hicksian * a_m],
            woman: vec![0.0, leisure_w, hicksian * a_w],
        }));
    }
    let full_m: Vec<f64> = wage_m.iter().map(|w| w * t).collect();
    let full_w: Vec<f64> = wage_w.iter().map(|w| w * t).collect();

    let mut prices = std::collections::BTreeMap::new();
    let mut incomes = std::collections::BTreeMap::new();
    for m in 0..n {
        for w in 0..n {
            let key = PairKey::cross(m, w);
            prices.insert(
                key,
                PairPrices {
                    private: vec![wage_m[m], wage_w[w], 1.0],
                    public: vec![1.0],
                },
            );
            incomes.insert(key, full_m[m] + full_w[w]);
        }
        // Leisure of an absent partner is priced 1; it never enters a bundle.
        prices.insert(
            PairKey::man_single(m),
            PairPrices {
                private: vec![wage_m[m], 1.0, 1.0],
                public: vec![1.0],
            },
        );
        incomes.insert(PairKey::man_single(m), full_m[m]);
    }
    for w in 0..n {
        prices.insert(
            PairKey::woman_single(w),
            PairPrices {
                private: vec![1.0, wage_w[w], 1.0],
                public: vec![1.0],
            },
        );
        incomes.insert(PairKey::woman_single(w), full_w[w]);
    }
    Market {
        n_private: 3,
        n_public: 1,
        matching: Matching::identity(n),
        committed: params.committed.build(n),
        private_obs,
        public_obs,
        prices,
        incomes,
        assignable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Prices,
    Income,
    Both,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prices" => Ok(ScenarioKind::Prices),
            "income" => Ok(ScenarioKind::Income),
            "both" => Ok(ScenarioKind::Both),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::Prices => "prices",
            ScenarioKind::Income => "income",
            ScenarioKind::Both => "both",
        })
    }
}

/// One perturbation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
    pub generator: GeneratorParams,
    /// Private-good positions whose counterfactual prices are perturbed.
    pub perturbed_private: Vec<usize>,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, alpha: f64, draws: usize, seed: u64) -> Self {
        Self {
            kind,
            alpha,
            draws,
            seed,
            generator: GeneratorParams::default(),
            perturbed_private: vec![HICKSIAN_PRIVATE],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.draws == 0 {
            return Err("draws must be at least 1".into());
        }
        if self.generator.couples == 0 {
            return Err("couples must be at least 1".into());
        }
        Ok(())
    }
}

/// Draws a multiplier `1 + αε`, `ε ~ U[−1, 1]`, redrawing non-positive values.
fn multiplier(rng: &mut ChaCha8Rng, alpha: f64) -> f64 {
    loop {
        let e: f64 = rng.gen_range(-1.0..=1.0);
        let f = 1.0 + alpha * e;
        if f > 0.0 {
            return f;
        }
    }
}

/// Perturbs the prices and/or incomes of every outside option (cross pairs
/// other than observed couples, and single options); observed couples keep
/// their baseline data.
///
/// The noise for every option is drawn in a fixed order whatever the
/// scenario kind, so the same stream yields common random numbers across
/// kinds and values of `alpha`.
pub fn apply_scenario(market: &Market, config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Market {
    let mut out = market.clone();
    let perturb_prices = matches!(config.kind, ScenarioKind::Prices | ScenarioKind::Both);
    let perturb_income = matches!(config.kind, ScenarioKind::Income | ScenarioKind::Both);
    for key in market.potential_pairs() {
        let private: Vec<f64> = config
            .perturbed_private
            .iter()
            .map(|_| multiplier(rng, config.alpha))
            .collect();
        let public: Vec<f64> = (0..market.n_public).map(|_| multiplier(rng, config.alpha)).collect();
        let income = multiplier(rng, config.alpha);
        if config.alpha == 0.0 {
            continue;
        }
        if perturb_prices {
            let prices = out.prices.get_mut(&key).expect("complete price map");
            for (&k, f) in config.perturbed_private.iter().zip(&private) {
                if let Some(p) = prices.private.get_mut(k) {
                    *p *= f;
                }
            }
            for (p, f) in prices.public.iter_mut().zip(&public) {
                *p *= f;
            }
        }
        if perturb_income {
            *out.incomes.get_mut(&key).expect("complete income map") *= income;
        }
    }
    out
}

/// Generates and perturbs draw `draw` of a scenario.
pub fn scenario_market(config: &ScenarioConfig, draw: usize) -> Market {
    let mut rng = substream(config.seed, draw as u64, STREAM_MARKET);
    let base = generate_market(&config.generator, &mut rng);
    let mut rng = substream(config.seed, draw as u64, STREAM_PERTURB);
    apply_scenario(&base, config, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub rationalize: RationalizeOptions,
    pub execution: Execution,
    /// Also bound sharing rules (one pair of solves per couple and regime).
    pub identify: bool,
    pub pinning: PinningMode,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            rationalize: RationalizeOptions::default(),
            execution: Execution::default(),
            identify: true,
            pinning: PinningMode::Aggregate,
        }
    }
}

/// Aggregates of one (scenario, alpha, regime) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub scenario: ScenarioKind,
    pub alpha: f64,
    pub regime: RegimeKind,
    pub draws: usize,
    /// Per-draw average stability index.
    pub index: Option<Summary>,
    /// Per-couple bound widths pooled over draws.
    pub width: Option<Summary>,
    /// Naive widths pooled over the same draws.
    pub naive_width: Option<Summary>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub draws: usize,
    pub couples: usize,
    pub cells: Vec<ExperimentCell>,
}

struct DrawOutcome {
    index: Result<f64, String>,
    widths: Option<Result<Vec<f64>, String>>,
    naive: Vec<f64>,
}

fn run_draw(market: &Market, regime: RegimeKind, opts: &ExperimentOptions) -> DrawOutcome {
    let regime = Regime::new(regime);
    let index = compute_stability_indices(market, &regime, &opts.rationalize)
        .map(|r| r.average)
        .map_err(|e| e.to_string());
    let widths = opts.identify.then(|| {
        bound_sharing_rule(market, &regime, &opts.rationalize, opts.pinning)
            .map(|b| b.widths())
            .map_err(|e| e.to_string())
    });
    DrawOutcome {
        index,
        widths,
        naive: naive_bounds(market).widths(),
    }
}

/// Runs every scenario under every regime. Draws run through
/// `opts.execution`; results do not depend on the execution mode.
pub fn run_experiment(
    configs: &[ScenarioConfig],
    regimes: &[RegimeKind],
    opts: &ExperimentOptions,
) -> ExperimentReport {
    let mut cells = Vec::new();
    for config in configs {
        let jobs: Vec<(usize, RegimeKind)> = (0..config.draws)
            .flat_map(|d| regimes.iter().map(move |&r| (d, r)))
            .collect();
        let markets: Vec<Market> = opts
            .execution
            .map(&(0..config.draws).collect::<Vec<_>>(), |&d| scenario_market(config, d));
        let outcomes = opts.execution.map(&jobs, |&(d, r)| run_draw(&markets[d], r, opts));
        for &regime in regimes {
            let mine: Vec<&DrawOutcome> = jobs
                .iter()
                .zip(&outcomes)
                .filter(|((_, r), _)| *r == regime)
                .map(|(_, o)| o)
                .collect();
            let mut failure_messages = Vec::new();
            let mut indices = Vec::new();
            let mut widths = Vec::new();
            let mut naive = Vec::new();
            for o in &mine {
                match &o.index {
                    Ok(v) => indices.push(*v),
                    Err(e) => failure_messages.push(e.clone()),
                }
                match &o.widths {
                    Some(Ok(w)) => {
                        widths.extend(w);
                        naive.extend(&o.naive);
                    }
                    Some(Err(e)) => failure_messages.push(e.clone()),
                    None => naive.extend(&o.naive),
                }
            }
            cells.push(ExperimentCell {
                scenario: config.kind,
                alpha: config.alpha,
                regime,
                draws: config.draws,
                index: Summary::of(&indices),
                width: Summary::of(&widths),
                naive_width: Summary::of(&naive),
                failures: failure_messages.len(),
                failure_messages,
            });
        }
    }
    ExperimentReport {
        seed: configs.first().map_or(0, |c| c.seed),
        draws: configs.first().map_or(0, |c| c.draws),
        couples: configs.first().map_or(0, |c| c.generator.couples),
        cells,
    }
}

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = 6 - 1 - x.abs().log10().floor() as i32;
    if (0..=15).contains(&digits) {
        format!("{x:.prec$}", prec = digits as usize)
    } else {
        format!("{x:.5e}")
    }
}

impl ExperimentReport {
    /// One CSV row per cell and statistic group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,alpha,regime,metric,count,mean,min,median,max,failures\n");
        for cell in &self.cells {
            for (metric, summary) in [
                ("index", &cell.index),
                ("width", &cell.width),
                ("naive_width", &cell.naive_width),
            ] {
                let Some(s) = summary else { continue };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    cell.scenario,
                    cell.alpha,
                    cell.regime,
                    metric,
                    s.count,
                    sig6(s.mean),
                    sig6(s.min),
                    sig6(s.median),
                    sig6(s.max),
                    cell.failures
                );
            }
        }
        out
    }

    /// Text tables: one panel per scenario, one column per alpha, one row
    /// per regime, for indices and for widths.
    pub fn to_tables(&self) -> String {
        let mut out = String::new();
        let mut scenarios: Vec<ScenarioKind> = self.cells.iter().map(|c| c.scenario).collect();
        scenarios.dedup();
        for scenario in scenarios {
            let cells: Vec<&ExperimentCell> = self.cells.iter().filter(|c| c.scenario == scenario).collect();
            let mut alphas: Vec<f64> = cells.iter().map(|c| c.alpha).collect();
            alphas.dedup();
            let mut regimes: Vec<RegimeKind> = cells.iter().map(|c| c.regime).collect();
            regimes.sort();
            regimes.dedup();
            for (title, widths) in [("average stability index", false), ("sharing-rule bound width", true)] {
                let find = |r: RegimeKind, a: f64| cells.iter().find(|c| c.regime == r && c.alpha == a);
                let mut rows: Vec<(String, Vec<Option<Summary>>)> = regimes
                    .iter()
                    .map(|&r| {
                        let vals = alphas
                            .iter()
                            .map(|&a| find(r, a).and_then(|c| if widths { c.width } else { c.index }))
                            .collect();
                        (r.label().to_string(), vals)
                    })
                    .collect();
                if widths {
                    let naive = alphas
                        .iter()
                        .map(|a| cells.iter().find(|c| c.alpha == *a).and_then(|c| c.naive_width))
                        .collect();
                    rows.push(("naive".into(), naive));
                }
                let mut grid: Vec<Vec<String>> = vec![std::iter::once("regime".to_string())
                    .chain(alphas.iter().map(|a| percent(*a)))
                    .collect()];
                for (label, vals) in rows {
                    let mut line = vec![label];
                    line.extend(vals.into_iter().map(|v| {
                        v.map_or_else(
                            || "-".to_string(),
                            |s| {
                                format!(
                                    "{} ({} / {} / {})",
                                    sig6(s.mean),
                                    sig6(s.min),
                                    sig6(s.median),
                                    sig6(s.max)
                                )
                            },
                        )
                    }));
                    grid.push(line);
                }
                let cols = grid[0].len();
                let width: Vec<usize> = (0..cols)
                    .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
                    .collect();
                let _ = writeln!(out, "[{scenario}] {title}: mean (min / median / max)");
                for row in grid {
                    let mut line = format!("{:<w$}", row[0], w = width[0]);
                    for j in 1..cols {
                        let _ = write!(line, "  {:>w$}", row[j], w = width[j]);
                    }
                    let _ = writeln!(out, "{}", line.trim_end());
                }
                out.push('\n');
            }
        }
        out
    }
}

/// `0.05` as `5%`.
fn percent(alpha: f64) -> String {
    let text = format!("{:.4}", alpha * 100.0);
    let text = text.trim_end_matches('0').trim_end_matches('.');
    format!("{text}%")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::validate_market;

    fn params(couples: usize) -> GeneratorParams {
        GeneratorParams {
            couples,
            ..Default::default()
        }
    }

    #[test]
    fn generated_market_is_valid_and_exhausts_budgets() {
        let mut rng = substream(7, 0, 0);
        let market = generate_market(&params(6), &mut rng);
        assert_eq!(validate_market(&market), vec![]);
        for c in 0..6 {
            let key = market.couple_key(c);
            let p = market.price(&key);
            let spend = crate::market::dot(&p.private, &market.private_obs[c])
                + crate::market::dot(&p.public, &market.public_obs[c]);
            assert!((spend - market.income(&key)).abs() < 1e-9 * spend);
        }
    }

    #[test]
    fn zero_wage_variance_gives_equal_leisure_prices() {
        let p = GeneratorParams {
            wage_man: (15.0, 15.0),
            wage_woman: (15.0, 15.0),
            ..params(4)
        };
        let market = generate_market(&p, &mut substream(1, 0, 0));
        let first = market.prices[&PairKey::cross(0, 0)].private[0];
        assert!(market
            .prices
            .iter()
            .filter(|(k, _)| k.man.is_some())
            .all(|(_, p)| p.private[0] == first));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_market(&params(10), &mut substream(42, 0, 0));
        let b = generate_market(&params(10), &mut substream(42, 0, 0));
        assert_eq!(a, b);
        let c = generate_market(&params(10), &mut substream(42, 1, 0));
        assert_ne!(a, c);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let market = generate_market(&params(4), &mut substream(3, 0, 0));
        for kind in [ScenarioKind::Prices, ScenarioKind::Income, ScenarioKind::Both] {
            let config = ScenarioConfig::new(kind, 0.0, 1, 3);
            assert_eq!(apply_scenario(&market, &config, &mut substream(3, 0, 1)), market);
        }
    }

    #[test]
    fn price_perturbation_range_and_income_untouched() {
        let market = generate_market(&params(4), &mut substream(5, 0, 0));
        let config = ScenarioConfig::new(ScenarioKind::Prices, 0.25, 1, 5);
        let out = apply_scenario(&market, &config, &mut substream(5, 0, 1));
        assert_eq!(out.incomes, market.incomes);
        for key in market.potential_pairs() {
            let p = &out.prices[&key];
            assert!((0.75..=1.25).contains(&p.private[HICKSIAN_PRIVATE]));
            assert!((0.75..=1.25).contains(&p.public[0]));
            assert_eq!(p.private[0], market.prices[&key].private[0]);
        }
        for c in 0..4 {
            assert_eq!(out.prices[&out.couple_key(c)], market.prices[&market.couple_key(c)]);
        }
        let income = ScenarioConfig::new(ScenarioKind::Income, 0.25, 1, 5);
        let out = apply_scenario(&market, &income, &mut substream(5, 0, 1));
        assert_eq!(out.prices, market.prices);
    }

    #[test]
    fn single_draw_cells_collapse_statistics() {
        let mut config = ScenarioConfig::new(ScenarioKind::Both, 0.1, 1, 9);
        config.generator.couples = 3;
        let report = run_experiment(&[config], &[RegimeKind::Unilateral], &ExperimentOptions::default());
        let s = report.cells[0].index.unwrap();
        assert_eq!((s.min, s.median, s.max), (s.mean, s.mean, s.mean));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.60701234), "0.607012");
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(123.456789), "123.457");
    }
}
