//! Command-line front end. Every subcommand writes one JSON or CSV artifact
//! and prints a short summary; exit codes are 0 on success, 1 on invalid
//! input and 2 on numerical failure.

mod experiments;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channels::{self, ChannelError, ChannelLocal};
use crate::deficiency::{self, DeficiencyError, FiniteExperiment, StateConstraint};
use crate::fisher::{self, FisherError};
use crate::harness::{self, HarnessError, Metric, SweepMode};
use crate::measures::{LocalData, MeasureError};
use crate::tangent_sim::{self, EvalMode, SimError, SimulationPlan};
use crate::zerobias::{self, Density1D, DiscreteLaw1D, GaussianMixture, Law, ZeroBiasError};

pub use experiments::run_criterion;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Parser)]
#[command(name = "fishersim", version, about = "Fisher information, zero-bias transforms and certified simulation plans")]
pub struct Cli {
    /// Seed for every random choice (decimal or 0x-hex).
    #[arg(long, global = true, default_value = "0x5EED", value_parser = parse_seed)]
    pub seed: u64,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Artifact path; the artifact goes to standard output when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fisher information, score reduction and chain decomposition of local data.
    Fisher(InputArg),
    /// Zero-bias transform, covariance identity and variance functional of a law.
    Zerobias {
        #[command(flatten)]
        input: InputArg,
        /// Fisher information used to normalize the variance functional.
        #[arg(long, default_value_t = 1.0)]
        j: f64,
    },
    /// Build a simulation plan and evaluate its error.
    Simulate {
        #[arg(value_enum)]
        kind: PlanKind,
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Channel metrics, simulation and counterexamples.
    Channel {
        #[command(subcommand)]
        op: ChannelOp,
    },
    /// Randomization distance and local deficiency of experiments.
    Deficiency {
        #[command(subcommand)]
        op: DeficiencyOp,
    },
    /// Convergence sweeps and Monte Carlo calibration.
    Sweep {
        #[command(subcommand)]
        op: SweepOp,
    },
    /// Run the experiment behind one acceptance criterion (1-10).
    Experiment {
        #[arg(long)]
        criterion: u32,
    },
}

#[derive(Debug, Args)]
pub struct InputArg {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Mc,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanKind {
    Binary,
    Finite,
    Continuous,
    ByIid,
}

#[derive(Debug, Subcommand)]
pub enum ChannelOp {
    GMin(InputArg),
    GMaxSearch {
        #[command(flatten)]
        input: InputArg,
        /// Program support size; defaults to inputs × outputs.
        #[arg(long)]
        support: Option<usize>,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
    },
    SimPlan {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        c: f64,
        /// Random mixed input sequences to evaluate.
        #[arg(long, default_value_t = 16)]
        mixed: usize,
    },
    Counterexample {
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long)]
        n: usize,
    },
    Witness,
}

#[derive(Debug, Subcommand)]
pub enum DeficiencyOp {
    /// Input: {"e": experiment, "f": experiment}.
    Distance(InputArg),
    /// Input: {"e": local data, "f": local data}.
    Local {
        #[command(flatten)]
        input: InputArg,
        /// Allow `‖p − Λq‖₁ ≤ budget` instead of equality.
        #[arg(long)]
        budget: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Binary,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    State,
    Tangent,
}

#[derive(Debug, Subcommand)]
pub enum SweepOp {
    /// CSV of errors over `--n-grid` and a JSON summary of the rate fit.
    Rate {
        #[arg(long, value_enum)]
        family: Family,
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = MetricArg::State)]
        metric: MetricArg,
        #[command(flatten)]
        mode: ModeArgs,
        /// Where to write the JSON summary.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Coverage of Monte Carlo intervals against the exact error.
    Calibrate {
        #[arg(long, value_enum)]
        family: Family,
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| format!("invalid seed {s:?}: {e}"))
}

/// Failure classes mapped to exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::TooLarge { .. } => numerical(e),
            _ => invalid(e),
        }
    }
}

impl From<FisherError> for CliError {
    fn from(e: FisherError) -> Self {
        match e {
            FisherError::InfiniteFisher => numerical(e),
            FisherError::Measure(m) => m.into(),
            _ => invalid(e),
        }
    }
}

impl From<ZeroBiasError> for CliError {
    fn from(e: ZeroBiasError) -> Self {
        numerical(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InfiniteFisher
            | SimError::TooLarge(_)
            | SimError::Overflow(_)
            | SimError::InfiniteFunctional
            | SimError::Unsupported(_)
            | SimError::ZeroBias(_) => numerical(e),
            SimError::Measure(m) => m.into(),
            SimError::Fisher(f) => f.into(),
            _ => invalid(e),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::NoFeasible(_) | ChannelError::TooLarge(_) => numerical(e),
            ChannelError::Sim(s) => s.into(),
            ChannelError::Fisher(f) => f.into(),
            ChannelError::Measure(m) => m.into(),
            _ => invalid(e),
        }
    }
}

impl From<DeficiencyError> for CliError {
    fn from(e: DeficiencyError) -> Self {
        match e {
            DeficiencyError::Infeasible | DeficiencyError::Unbounded => numerical(e),
            DeficiencyError::Measure(m) => m.into(),
            _ => invalid(e),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Sim(s) | HarnessError::ExactUnavailable(s) => s.into(),
            HarnessError::Csv(_) => numerical(e),
            _ => invalid(e),
        }
    }
}

/// What a command produced: the artifact, a summary for the terminal, and
/// whether a numerical flag was raised.
pub struct Outcome {
    pub artifact: String,
    pub summary: String,
    /// Extra files written next to the artifact (path, contents).
    pub extra: Vec<(PathBuf, String)>,
    pub flagged: Option<String>,
}

impl Outcome {
    fn json<T: Serialize>(value: &T, summary: String) -> Result<Outcome, CliError> {
        let mut artifact = serde_json::to_string_pretty(value).map_err(numerical)?;
        artifact.push('\n');
        Ok(Outcome { artifact, summary, extra: Vec::new(), flagged: None })
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory and renames it, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents).map_err(|e| invalid(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        invalid(format!("{}: {e}", path.display()))
    })
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(numerical(e)),
        },
        None => execute(&cli),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let written = match &cli.output {
        Some(path) => outcome
            .extra
            .iter()
            .try_for_each(|(p, c)| write_atomic(p, c))
            .and_then(|_| write_atomic(path, &outcome.artifact)),
        None => {
            print!("{}", outcome.artifact);
            outcome.extra.iter().try_for_each(|(p, c)| write_atomic(p, c))
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    println!("{}", outcome.summary);
    match outcome.flagged {
        Some(flag) => {
            eprintln!("flag: {flag}");
            2
        }
        None => 0,
    }
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Fisher(i) => cmd_fisher(&read_json(&i.input)?),
        Command::Zerobias { input, j } => cmd_zerobias(&read_json(&input.input)?, *j),
        Command::Simulate { kind, input, n, eps, mode } => cmd_simulate(*kind, &input.input, *n, *eps, mode, cli.seed),
        Command::Channel { op } => cmd_channel(op, cli.seed),
        Command::Deficiency { op } => cmd_deficiency(op),
        Command::Sweep { op } => cmd_sweep(op, cli.seed),
        Command::Experiment { criterion } => {
            let (record, passed) = run_criterion(*criterion, cli.seed)?;
            let summary = format!("criterion {criterion}: {}", if passed { "PASS" } else { "FAIL" });
            let mut o = Outcome::json(&record, summary)?;
            if !passed {
                o.flagged = Some(format!("criterion {criterion} failed"));
            }
            Ok(o)
        }
    }
}

fn cmd_fisher(a: &LocalData) -> Result<Outcome, CliError> {
    let j = fisher::fisher_info(a);
    let red = fisher::score_reduction(a)?;
    let chain = fisher::fisher_chain(a)?;
    let record = json!({
        "fisher": j,
        "support_compatible": a.support_compatible(),
        "score_reduction": { "reduced": red.reduced, "levels": red.levels, "group_of": red.group_of },
        "chain": chain,
        "chain_total": fisher::chain_total(&chain),
    });
    Outcome::json(&record, format!("J = {j}\nscore levels = {}\nchain stages = {}", red.levels.len(), chain.len()))
}

/// A law given by family and parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LawSpec {
    Discrete { atoms: Vec<(f64, f64)> },
    Normal { mean: f64, variance: f64 },
    Uniform { a: f64, b: f64 },
    Laplace { mean: f64, b: f64 },
    StudentT { nu: f64, s: f64 },
    Mixture { weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64> },
}

impl LawSpec {
    pub fn law(&self) -> Result<Law, CliError> {
        Ok(match self {
            LawSpec::Discrete { atoms } => DiscreteLaw1D::new(atoms.clone())?.into(),
            other => other.density()?.into(),
        })
    }

    pub fn density(&self) -> Result<Density1D, CliError> {
        Ok(match self {
            LawSpec::Discrete { .. } => return Err(invalid("a density is required, got a discrete law")),
            LawSpec::Normal { mean, variance } => Density1D::normal(*mean, *variance)?,
            LawSpec::Uniform { a, b } => Density1D::uniform(*a, *b)?,
            LawSpec::Laplace { mean, b } => Density1D::laplace(*mean, *b)?,
            LawSpec::StudentT { nu, s } => Density1D::student_t(*nu, *s)?,
            LawSpec::Mixture { weights, means, sds } => {
                if weights.len() != means.len() || weights.len() != sds.len() || weights.is_empty() {
                    return Err(invalid("mixture weights, means and sds must have one equal, positive length"));
                }
                GaussianMixture { weights: weights.clone(), means: means.clone(), sds: sds.clone() }.density()?
            }
        })
    }
}

fn cmd_zerobias(spec: &LawSpec, j: f64) -> Result<Outcome, CliError> {
    let law = spec.law()?;
    let w = zerobias::zero_bias(&law)?;
    let (lo, hi) = w.window();
    let grid: Vec<(f64, f64)> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).map(|x| (x, w.eval(x))).collect();
    let residuals = (0..=5i32)
        .map(|p| {
            zerobias::cov_identity_check(&law, |t| t.powi(p), |t| if p == 0 { 0.0 } else { p as f64 * t.powi(p - 1) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (functional, tails) = match &law {
        Law::Continuous(d) => (Some(zerobias::w_variance_functional(d, j)?), zerobias::tail_condition_check(d).ok()),
        Law::Discrete(_) => (None, None),
    };
    let max_res = residuals.iter().cloned().fold(0.0, f64::max);
    let record = json!({
        "mean": law.mean(),
        "variance": law.variance(),
        "zero_bias_mass": w.integrate(|_| 1.0),
        "zero_bias_grid": grid,
        "identity_residuals": residuals,
        "w_variance": functional,
        "tails": tails,
    });
    let mut summary = format!("variance = {}\nmax identity residual = {max_res:e}", law.variance());
    if let Some(f) = functional {
        summary.push_str(&format!("\nw-variance = {}", f.value));
    }
    Outcome::json(&record, summary)
}

fn eval_modes(mode: &ModeArgs, seed: u64) -> Vec<EvalMode> {
    let mc = EvalMode::MonteCarlo { samples: mode.samples, seed };
    match mode.mode {
        Mode::Exact => vec![EvalMode::Exact],
        Mode::Mc => vec![mc],
        Mode::Both => vec![EvalMode::Exact, mc],
    }
}

fn plan_summary(plan: &SimulationPlan) -> String {
    let mut s = format!("n = {}", plan.n);
    if let Some(u) = plan.program_units() {
        s.push_str(&format!("\nprogram units = {u}"));
    }
    if let Some(c) = plan.certified() {
        s.push_str(&format!("\ncertified: state {} tangent {}", c.state, c.tangent));
    }
    for (name, r) in [("exact", &plan.error_state.exact), ("monte carlo", &plan.error_state.monte_carlo)] {
        if let Some(r) = r {
            s.push_str(&format!("\n{name}: state {} tangent {}", r.tv_state_error, r.tv_tangent_error));
        }
    }
    s.push_str(&format!("\nwithin certificate: {}", plan.within_certificate()));
    s
}

fn cmd_simulate(kind: PlanKind, input: &Path, n: usize, eps: f64, mode: &ModeArgs, seed: u64) -> Result<Outcome, CliError> {
    let mut plan = match kind {
        PlanKind::Continuous => tangent_sim::continuous_plan(&read_json::<LawSpec>(input)?.density()?, n)?,
        _ => {
            let a: LocalData = read_json(input)?;
            match kind {
                PlanKind::Binary => tangent_sim::binary_gaussian_plan(&a, n)?,
                PlanKind::Finite => tangent_sim::finite_plan(&a, n, eps)?,
                _ => tangent_sim::gaussian_by_iid_plan(&a, n, eps)?,
            }
        }
    };
    for m in eval_modes(mode, seed) {
        plan = plan.evaluated(m)?;
    }
    let summary = plan_summary(&plan);
    Outcome::json(&plan, summary)
}

fn cmd_channel(op: &ChannelOp, seed: u64) -> Result<Outcome, CliError> {
    match op {
        ChannelOp::GMin(i) => {
            let g = channels::g_min(&read_json::<ChannelLocal>(&i.input)?);
            let s = format!("g_min = {} at input {}", g.value, g.argmax);
            Outcome::json(&g, s)
        }
        ChannelOp::GMaxSearch { input, support, restarts } => {
            let cl: ChannelLocal = read_json(&input.input)?;
            let m = support.unwrap_or(cl.in_size() * cl.out_size());
            let r = channels::g_max_search(&cl, m, *restarts, seed)?;
            let lo = channels::g_min(&cl).value;
            let s = format!(
                "g_max upper value = {}\ng_min = {lo}\nresiduals: state {:e} tangent {:e}",
                r.value, r.state_residual, r.tangent_residual
            );
            Outcome::json(&r, s)
        }
        ChannelOp::SimPlan { input, n, eps, c, mixed } => {
            let cl: ChannelLocal = read_json(&input.input)?;
            let plan = channels::channel_sim_plan(&cl, *n, *eps, *c)?.evaluated(*mixed, seed)?;
            let m = plan.measured.as_ref().expect("evaluated");
            let s = format!(
                "program units = {}\ncertified: state {} tangent {}\ncb error: state {} tangent {}\nwithin certificate: {}",
                match plan.program {
                    tangent_sim::Resource::Gaussian { units, .. } => units,
                    _ => f64::NAN,
                },
                plan.certified.state,
                plan.certified.tangent,
                m.cb_state,
                m.cb_tangent,
                plan.within_certificate()
            );
            Outcome::json(&plan, s)
        }
        ChannelOp::Counterexample { t, n } => {
            let r = channels::continuity_counterexample(*t, *n)?;
            let s = format!("divergence = {}\nl1 perturbation = {:e}\nnominal l1 = {:e}", r.divergence, r.l1, r.nominal_l1);
            let mut o = Outcome::json(&r, s)?;
            if r.out_of_range {
                o.flagged = Some("value outside the double range".into());
            }
            Ok(o)
        }
        ChannelOp::Witness => {
            let w = channels::parallelogram_witness(seed)?;
            let s = format!("defect = {}\nscale = {}\nfound = {} after {} tries", w.defect, w.scale, w.found, w.tries);
            let mut o = Outcome::json(&w, s)?;
            if !w.found {
                o.flagged = Some("no witness within the search budget".into());
            }
            Ok(o)
        }
    }
}

#[derive(Deserialize)]
struct ExperimentPair {
    e: FiniteExperiment,
    f: FiniteExperiment,
}

#[derive(Deserialize)]
struct LocalPair {
    e: LocalData,
    f: LocalData,
}

fn cmd_deficiency(op: &DeficiencyOp) -> Result<Outcome, CliError> {
    match op {
        DeficiencyOp::Distance(i) => {
            let pair: ExperimentPair = read_json(&i.input)?;
            let r = deficiency::randomization_distance(&pair.e, &pair.f)?;
            let s = format!("distance = {}", r.value);
            Outcome::json(&r, s)
        }
        DeficiencyOp::Local { input, budget } => {
            let pair: LocalPair = read_json(&input.input)?;
            let mode = budget.map_or(StateConstraint::Exact, |b| StateConstraint::Relaxed { budget: b });
            let r = deficiency::local_deficiency(&pair.e, &pair.f, mode)?;
            let s = format!("tangent error = {}\nstate error = {}", r.tangent_error, r.state_error);
            Outcome::json(&r, s)
        }
    }
}

fn family_plan(family: Family, a: &LocalData, n: usize, eps: f64) -> Result<SimulationPlan, SimError> {
    match family {
        Family::Binary => tangent_sim::binary_gaussian_plan(a, n),
        Family::Finite => tangent_sim::finite_plan(a, n, eps),
    }
}

fn cmd_sweep(op: &SweepOp, seed: u64) -> Result<Outcome, CliError> {
    match op {
        SweepOp::Rate { family, input, n_grid, eps, metric, mode, summary } => {
            let a: LocalData = read_json(&input.input)?;
            let sweep_mode = match mode.mode {
                Mode::Exact => SweepMode::Exact,
                Mode::Mc => SweepMode::MonteCarlo { samples: mode.samples, seed },
                Mode::Both => SweepMode::Both { samples: mode.samples, seed },
            };
            let metric = match metric {
                MetricArg::State => Metric::State,
                MetricArg::Tangent => Metric::Tangent,
            };
            let r = harness::convergence_sweep(|n| family_plan(*family, &a, n, *eps), n_grid, sweep_mode, metric)?;
            let record = json!({
                "metric": r.metric,
                "fit": r.fit,
                "certified_fit": r.certified_fit,
                "within_certificate": r.within_certificate(),
            });
            let mut text = serde_json::to_string_pretty(&record).map_err(numerical)?;
            text.push('\n');
            let s = format!(
                "slope = {}\nR2 = {}\ncertified slope = {}\nwithin certificate: {}",
                fmt_opt(r.fit.slope),
                fmt_opt(r.fit.r2),
                fmt_opt(r.certified_fit.slope),
                r.within_certificate()
            );
            let extra = summary.iter().map(|p| (p.clone(), text.clone())).collect();
            Ok(Outcome { artifact: r.to_csv()?, summary: s, extra, flagged: None })
        }
        SweepOp::Calibrate { family, input, n, eps, trials, samples } => {
            let a: LocalData = read_json(&input.input)?;
            let plan = family_plan(*family, &a, *n, *eps)?;
            let r = harness::mc_calibration(&plan, *trials, *samples, seed)?;
            let s = format!(
                "coverage: state {} tangent {}\nwithin contract: {}",
                r.state_coverage,
                r.tangent_coverage,
                r.within_contract()
            );
            Outcome::json(&r, s)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| v.to_string())
}
