//! Command-line interface.
//!
//! Exit codes: 0 on success (and for `check`, a rationalizable market),
//! 1 when `check` finds the market not rationalizable, 2 on invalid input
//! or usage.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::exec::Execution;
use crate::identify::{identification_report, PinningMode};
use crate::io::{market_to_json, read_market};
use crate::lp::{available_backends, Backend};
use crate::market::{AllocationCandidate, Market};
use crate::rationalize::{check_rationalizable, compute_stability_indices, RationalizeOptions, Regime, RegimeKind};
use crate::simulate::{
    apply_scenario, generate_market, run_experiment, sig6, substream, CommittedPattern, ExperimentOptions,
    GeneratorParams, ScenarioConfig, ScenarioKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_RATIONALIZABLE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "marriage-rp",
    version,
    about = "Revealed-preference tests of marriage-market stability"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide whether a market is rationalizable under a regime.
    Check(CheckArgs),
    /// Compute stability indices under one or more regimes.
    Index(IndexArgs),
    /// Bound the sharing rule for one or more markets.
    Identify(IdentifyArgs),
    /// Run perturbation experiments on synthetic markets.
    Simulate(SimulateArgs),
    /// Write a synthetic market file.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Unilateral,
    Transfers,
    NoTransfers,
}

impl From<RegimeArg> for RegimeKind {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Unilateral => RegimeKind::Unilateral,
            RegimeArg::Transfers => RegimeKind::MutualConsentTransfers,
            RegimeArg::NoTransfers => RegimeKind::MutualConsentNoTransfers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Highs,
    Microlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PinningArg {
    Aggregate,
    PerOption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Prices,
    Income,
    Both,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Prices => ScenarioKind::Prices,
            ScenarioArg::Income => ScenarioKind::Income,
            ScenarioArg::Both => ScenarioKind::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommittedArg {
    All,
    None,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Edge cap for paths checked without transfers.
    #[arg(long, default_value_t = crate::rationalize::DEFAULT_MAX_PATH_LEN, conflicts_with = "unbounded_paths")]
    pub max_path_len: usize,
    /// Check paths of every length without transfers (small markets only).
    #[arg(long)]
    pub unbounded_paths: bool,
    /// Strictness tolerance for edge signs.
    #[arg(long, default_value_t = crate::graph::DEFAULT_TOLERANCE)]
    pub eps: f64,
    /// Ignore observed assignable consumption.
    #[arg(long)]
    pub no_assignable: bool,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Per-solve time limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

impl SolverArgs {
    fn options(&self) -> Result<RationalizeOptions, String> {
        let mut opts = RationalizeOptions {
            max_path_len: (!self.unbounded_paths).then_some(self.max_path_len),
            eps: self.eps,
            use_assignable: !self.no_assignable,
            ..RationalizeOptions::default()
        };
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err("--eps must be positive".into());
        }
        if let Some(b) = self.backend {
            let backend = match b {
                BackendArg::Highs => Backend::Highs,
                BackendArg::Microlp => Backend::Microlp,
            };
            if !available_backends().contains(&backend) {
                return Err(format!("backend {b:?} is not compiled into this build"));
            }
            opts.solver.backend = backend;
        }
        if let Some(t) = self.time_limit {
            if !(t > 0.0 && t.is_finite()) {
                return Err("--time-limit must be positive".into());
            }
            opts.solver.time_limit = Some(Duration::from_secs_f64(t));
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    pub market: PathBuf,
    #[arg(long, value_enum, default_value = "transfers")]
    pub regime: RegimeArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IndexArgs {
    pub market: PathBuf,
    /// Regimes to evaluate (default: all).
    #[arg(long = "regime", value_enum)]
    pub regimes: Vec<RegimeArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IdentifyArgs {
    #[arg(required = true)]
    pub markets: Vec<PathBuf>,
    #[arg(long = "regime", value_enum)]
    pub regimes: Vec<RegimeArg>,
    #[arg(long, value_enum, default_value = "aggregate")]
    pub pinning: PinningArg,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long = "scenario", value_enum)]
    pub scenarios: Vec<ScenarioArg>,
    /// Perturbation sizes as fractions, e.g. `0,0.01,0.05`.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1,0.25")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    #[arg(long, default_value_t = 10)]
    pub couples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "regime", value_enum)]
    pub regimes: Vec<RegimeArg>,
    #[arg(long, value_enum, default_value = "all")]
    pub committed: CommittedArg,
    /// Skip sharing-rule bounds.
    #[arg(long)]
    pub no_identify: bool,
    #[arg(long, value_enum, default_value = "aggregate")]
    pub pinning: PinningArg,
    /// Run draws on one thread.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,
    /// Shorthand for `--format json`.
    #[arg(long)]
    pub json: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 5)]
    pub couples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "all")]
    pub committed: CommittedArg,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Omit assignable consumption.
    #[arg(long)]
    pub no_assignable: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

fn invalid(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.to_string(),
    }
}

fn regimes_or_all(regimes: &[RegimeArg]) -> Vec<RegimeKind> {
    if regimes.is_empty() {
        RegimeKind::ALL.to_vec()
    } else {
        let mut out: Vec<RegimeKind> = Vec::new();
        for r in regimes {
            let kind = RegimeKind::from(*r);
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        out
    }
}

fn pinning(p: PinningArg) -> PinningMode {
    match p {
        PinningArg::Aggregate => PinningMode::Aggregate,
        PinningArg::PerOption => PinningMode::PerOption,
    }
}

fn committed(c: CommittedArg) -> CommittedPattern {
    match c {
        CommittedArg::All => CommittedPattern::All,
        CommittedArg::None => CommittedPattern::None,
        CommittedArg::Alternating => CommittedPattern::Alternating,
    }
}

fn load(path: &std::path::Path) -> Result<Market, Failure> {
    read_market(path).map_err(invalid)
}

fn candidate_json(candidate: &AllocationCandidate) -> serde_json::Value {
    json!({
        "q_man": candidate.q_man,
        "q_woman": candidate.q_woman,
        "transfers": candidate.transfers,
        "lindahl_man": candidate.lindahl_man.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<std::collections::BTreeMap<_, _>>(),
    })
}

fn run_check(args: &CheckArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let market = load(&args.market)?;
    let opts = args.solver.options().map_err(invalid)?;
    let regime = Regime::new(args.regime.into());
    let verdict = check_rationalizable(&market, &regime, &opts).map_err(invalid)?;
    if args.json {
        let value = json!({
            "regime": regime.kind.label(),
            "rationalizable": verdict.rationalizable,
            "witness": verdict.witness.as_ref().map(candidate_json),
            "counterexample": verdict.counterexample.as_ref().map(|b| b.to_string()),
        });
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json"));
    } else if verdict.rationalizable {
        let _ = writeln!(out, "rationalizable under {}", regime.kind);
    } else {
        let _ = writeln!(out, "not rationalizable under {}", regime.kind);
        if let Some(b) = &verdict.counterexample {
            let _ = writeln!(out, "blocking structure at the best-index candidate: {b}");
        }
    }
    Ok(if verdict.rationalizable {
        EXIT_OK
    } else {
        EXIT_NOT_RATIONALIZABLE
    })
}

fn run_index(args: &IndexArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let market = load(&args.market)?;
    let opts = args.solver.options().map_err(invalid)?;
    let mut rows = Vec::new();
    for kind in regimes_or_all(&args.regimes) {
        let report = compute_stability_indices(&market, &Regime::new(kind), &opts).map_err(invalid)?;
        rows.push(report);
    }
    if args.json {
        let value: Vec<_> = rows
            .iter()
            .map(|r| {
                json!({
                    "regime": r.regime.label(),
                    "average": r.average,
                    "objective": r.objective,
                    "indices": r.indices.iter().map(|(k, v)| (k.to_string(), *v)).collect::<std::collections::BTreeMap<_, _>>(),
                })
            })
            .collect();
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json"));
    } else {
        let _ = writeln!(out, "{:<14}{:>12}{:>12}", "regime", "average", "minimum");
        for r in &rows {
            let min = r.indices.values().copied().fold(1.0, f64::min);
            let _ = writeln!(out, "{:<14}{:>12}{:>12}", r.regime.label(), sig6(r.average), sig6(min));
        }
    }
    Ok(EXIT_OK)
}

fn run_identify(args: &IdentifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let markets = args.markets.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let opts = args.solver.options().map_err(invalid)?;
    let rows = identification_report(&markets, &regimes_or_all(&args.regimes), &opts, pinning(args.pinning))
        .map_err(invalid)?;
    if args.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("json"));
    } else {
        let _ = writeln!(
            out,
            "{:<14}{:>8}{:>12}{:>12}{:>12}{:>12}",
            "bounds", "n", "mean", "min", "median", "max"
        );
        for row in &rows {
            let s = row.widths;
            let _ = writeln!(
                out,
                "{:<14}{:>8}{:>12}{:>12}{:>12}{:>12}",
                row.label,
                s.count,
                sig6(s.mean),
                sig6(s.min),
                sig6(s.median),
                sig6(s.max)
            );
        }
    }
    Ok(EXIT_OK)
}

fn write_output(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| invalid(format!("cannot write {}: {e}", p.display()))),
        None => {
            let _ = out.write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn run_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let opts = args.solver.options().map_err(invalid)?;
    let scenarios: Vec<ScenarioKind> = if args.scenarios.is_empty() {
        vec![ScenarioKind::Prices, ScenarioKind::Income, ScenarioKind::Both]
    } else {
        args.scenarios.iter().map(|&s| s.into()).collect()
    };
    let generator = GeneratorParams {
        couples: args.couples,
        committed: committed(args.committed),
        ..Default::default()
    };
    let mut configs = Vec::new();
    for &kind in &scenarios {
        for &alpha in &args.alpha {
            let mut config = ScenarioConfig::new(kind, alpha, args.draws, args.seed);
            config.generator = generator.clone();
            config.validate().map_err(invalid)?;
            configs.push(config);
        }
    }
    let experiment = ExperimentOptions {
        rationalize: opts,
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
        identify: !args.no_identify,
        pinning: pinning(args.pinning),
    };
    let report = run_experiment(&configs, &regimes_or_all(&args.regimes), &experiment);
    let format = if args.json { FormatArg::Json } else { args.format };
    let text = match format {
        FormatArg::Table => report.to_tables(),
        FormatArg::Csv => report.to_csv(),
        FormatArg::Json => serde_json::to_string_pretty(&report).expect("json") + "\n",
    };
    write_output(&args.output, &text, out)?;
    Ok(EXIT_OK)
}

fn run_gen(args: &GenArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if args.couples == 0 {
        return Err(invalid("couples must be at least 1"));
    }
    let params = GeneratorParams {
        couples: args.couples,
        committed: committed(args.committed),
        record_assignable: !args.no_assignable,
        ..Default::default()
    };
    let mut market = generate_market(&params, &mut substream(args.seed, 0, 0));
    if let Some(kind) = args.scenario {
        let mut config = ScenarioConfig::new(kind.into(), args.alpha, 1, args.seed);
        config.generator = params;
        config.validate().map_err(invalid)?;
        market = apply_scenario(&market, &config, &mut substream(args.seed, 0, 1));
    }
    write_output(&args.output, &(market_to_json(&market) + "\n"), out)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Check(a) => run_check(a, out),
        Command::Index(a) => run_index(a, out),
        Command::Identify(a) => run_identify(a, out),
        Command::Simulate(a) => run_simulate(a, out),
        Command::Gen(a) => run_gen(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
