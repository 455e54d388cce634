//! Asymptotic tangent simulations: plans that turn a Gaussian shift (or an
//! IID family) into another IID family or Gaussian shift with a vanishing
//! error, together with their certified bounds and exact or sampled errors.
//!
//! Every plan works on the law of the score statistic, which is sufficient;
//! outputs on the full sample space are recovered by conditional
//! reconstruction, which does not change either error.
//!
//! Errors are reported as a pair: the L1 distance between target and
//! simulated laws, and the L1 distance between the tangents scaled by
//! `1/√n`. A plan's overall error is the larger of the two.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::fisher::{fisher_chain, fisher_info, FisherError};
use crate::measures::{GaussianLocal, LocalData, MeasureError};
use crate::numeric::{binomial_pmf, gl5, normal_cell, normal_first_moment_cell, normal_pdf};
use crate::zerobias::{
    tail_condition_check, w_variance_functional, Density1D, DiscreteLaw1D, GaussianMixture, ZeroBiasError,
};

/// Largest number of cells or types enumerated in exact mode.
pub const MAX_CELLS: usize = 10_000_000;
/// Largest `n` accepted by the binomial oracle.
pub const MAX_BINOMIAL_N: usize = 1_000_000;
/// Slack allowed when comparing a measured error with its certificate.
pub const CERT_SLACK: f64 = 1e-9;
/// Samples per independently seeded Monte Carlo chunk.
pub const MC_CHUNK: usize = 4096;
const MAX_FFT: usize = 1 << 23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("n must be positive")]
    ZeroN,
    #[error("binary plan needs exactly two letters, found {0}")]
    NotBinary(usize),
    #[error("degenerate pmf: p(1) = {0}")]
    Degenerate(f64),
    #[error("zero tangent")]
    ZeroTangent,
    #[error("Fisher information is infinite")]
    InfiniteFisher,
    #[error("eps = {eps} is not below p(0) = {p0} at stage {stage}")]
    EpsTooLarge { stage: usize, eps: f64, p0: f64 },
    #[error("eps must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("enumeration of {0} cells is too large for exact mode")]
    TooLarge(f64),
    #[error("n = {0} exceeds the binomial oracle limit")]
    Overflow(usize),
    #[error("the variance functional is infinite")]
    InfiniteFunctional,
    #[error("plans are incompatible: {0}")]
    Incompatible(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{0} must be positive, got {1}")]
    BadParameter(&'static str, f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Fisher(#[from] FisherError),
    #[error(transparent)]
    ZeroBias(#[from] ZeroBiasError),
}

/// One side of a simulation: a finite IID family, a Gaussian shift, or the
/// law of a continuous score.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resource {
    /// `a^⊗n`.
    Local { local: LocalData },
    /// `{N(0,1), √units · δN(0,1)}`.
    Gaussian { units: f64, local: GaussianLocal },
    /// IID copies of a continuous score with the given second moment.
    ScoreDensity { second_moment: f64 },
}

impl Resource {
    fn gaussian(units: f64) -> Result<Resource, SimError> {
        Ok(Resource::Gaussian { units, local: GaussianLocal::standard_units(units)? })
    }
}

/// Tagged description of the kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KernelSpec {
    Identity,
    /// Round the Gaussian score to the nearest point of `α(m - nη)`, ties to
    /// the lower point, then reconstruct uniformly given the count.
    LatticeRounding { alpha: f64, eta: f64, n: usize, ties: String },
    /// Chain of binary splits with a truncation map after each split that
    /// has a non-trivial remainder.
    FiniteChain { eps: f64, stages: Vec<StageSpec> },
    /// Identity on the score, then conditional reconstruction.
    ScoreIdentity { second_moment: f64 },
    /// Sum of the scores plus Gaussian noise of standard deviation
    /// `eps · J` per sample, rescaled to unit variance.
    SmoothedScore { eps: f64, noise_sd: f64, units: f64 },
    Composite { stages: Vec<KernelSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSpec {
    /// Letter split off at this stage, in the labels of the input.
    pub letter: usize,
    pub eta: f64,
    pub alpha: f64,
    pub fisher: f64,
    /// Samples fed to this stage.
    pub samples: usize,
    /// Largest count of the remaining letters kept before truncation.
    pub keep: Option<usize>,
    /// Large-deviation exponent of the truncation event.
    pub c_eps: Option<f64>,
}

/// A certified bound on both errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub state: f64,
    pub tangent: f64,
    /// True when part of the bound is a measured quantity.
    pub empirical: bool,
    /// Intermediate constants, for auditing.
    pub constants: BTreeMap<String, f64>,
}

impl Certificate {
    pub fn overall(&self) -> f64 {
        self.state.max(self.tangent)
    }
}

/// Measured errors: exact, or a Monte Carlo estimate with 95% intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub tv_state_error: f64,
    pub tv_tangent_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_ci: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangent_ci: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Deterministic correction already added to the estimates (mass the
    /// sampler cannot reach).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<[f64; 2]>,
    /// True when the value combines stage values rather than measuring the
    /// whole plan.
    pub aggregated: bool,
}

impl ErrorReport {
    fn exact(state: f64, tangent: f64) -> ErrorReport {
        ErrorReport {
            tv_state_error: state,
            tv_tangent_error: tangent,
            state_ci: None,
            tangent_ci: None,
            samples: None,
            bias: None,
            aggregated: false,
        }
    }

    pub fn overall(&self) -> f64 {
        self.tv_state_error.max(self.tv_tangent_error)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorState {
    pub certified: Option<Certificate>,
    pub exact: Option<ErrorReport>,
    pub monte_carlo: Option<ErrorReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationPlan {
    pub n: usize,
    pub program: Resource,
    pub target: Resource,
    pub kernel_spec: KernelSpec,
    pub error_state: ErrorState,
    #[serde(skip)]
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Identity,
    Binary { eta: f64, alpha: f64 },
    Finite(FiniteParams),
    Continuous { density: Density1D, j: f64 },
    ByIid(ByIidParams),
    Composite(Vec<SimulationPlan>),
}

#[derive(Debug, Clone)]
struct FiniteParams {
    a: LocalData,
    stages: Vec<StagePlan>,
}

#[derive(Debug, Clone)]
struct StagePlan {
    eta: f64,
    alpha: f64,
    fisher: f64,
    samples: usize,
    keep: Option<usize>,
    c_eps: Option<f64>,
    /// Information of the local data this stage starts from.
    level_fisher: f64,
    /// `max |L|` over the letters of the local data this stage starts from.
    level_max_score: f64,
}

#[derive(Debug, Clone)]
struct ByIidParams {
    /// Law of the summed score: `(value, mass)`, sorted.
    atoms: Vec<(f64, f64)>,
    noise_sd: f64,
    /// Variance of the smoothed sum.
    variance: f64,
    /// Fisher information per sample.
    j: f64,
}

impl SimulationPlan {
    /// True when every present measured error is within its certificate.
    pub fn within_certificate(&self) -> bool {
        let Some(c) = &self.error_state.certified else { return true };
        [&self.error_state.exact].iter().all(|r| match r {
            Some(r) => r.tv_state_error <= c.state + CERT_SLACK && r.tv_tangent_error <= c.tangent + CERT_SLACK,
            None => true,
        }) && match &self.error_state.monte_carlo {
            Some(r) => {
                let lo_s = r.state_ci.map_or(r.tv_state_error, |ci| ci[0]);
                let lo_t = r.tangent_ci.map_or(r.tv_tangent_error, |ci| ci[0]);
                lo_s <= c.state + CERT_SLACK && lo_t <= c.tangent + CERT_SLACK
            }
            None => true,
        }
    }

    /// Evaluates and stores the result in `error_state`.
    pub fn evaluated(mut self, mode: EvalMode) -> Result<SimulationPlan, SimError> {
        let r = evaluate_plan_error(&self, mode)?;
        match mode {
            EvalMode::Exact => self.error_state.exact = Some(r),
            EvalMode::MonteCarlo { .. } => self.error_state.monte_carlo = Some(r),
        }
        Ok(self)
    }

    pub fn certified(&self) -> Option<&Certificate> {
        self.error_state.certified.as_ref()
    }

    /// Gaussian units consumed by the program, if it is Gaussian.
    pub fn program_units(&self) -> Option<f64> {
        match self.program {
            Resource::Gaussian { units, .. } => Some(units),
            _ => None,
        }
    }
}

fn check_n(n: usize) -> Result<(), SimError> {
    if n == 0 {
        Err(SimError::ZeroN)
    } else {
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<(), SimError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(SimError::BadEps(eps))
    }
}

/// `α = L(1) - L(0)` of binary local data; zero when either letter is null.
fn binary_alpha(b: &LocalData) -> f64 {
    let (p, d) = (b.probs(), b.weights());
    if p[0] <= 0.0 || p[1] <= 0.0 {
        0.0
    } else {
        d[1] / p[1] - d[0] / p[0]
    }
}

// ---------------------------------------------------------------------------
// Binary lattice

/// The lattice `l_m = α(m - nη)` with the binomial law, the Gaussian cell
/// masses and the Gaussian first moments over the rounding cells.
struct Lattice {
    l: Vec<f64>,
    b: Vec<f64>,
    g: Vec<f64>,
    t: Vec<f64>,
}

fn lattice(eta: f64, alpha: f64, n: usize) -> Lattice {
    let b = binomial_pmf(n, eta);
    let l: Vec<f64> = (0..=n).map(|m| alpha * (m as f64 - n as f64 * eta)).collect();
    let sd = alpha.abs() * (n as f64 * eta * (1.0 - eta)).sqrt();
    if sd == 0.0 {
        // No information to simulate: the constant kernel is exact.
        let t = l.iter().zip(&b).map(|(l, b)| l * b).collect();
        return Lattice { g: b.clone(), t, l, b };
    }
    let order: Vec<usize> = if alpha > 0.0 { (0..=n).collect() } else { (0..=n).rev().collect() };
    let (mut g, mut t) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for (i, &m) in order.iter().enumerate() {
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (l[order[i - 1]] + l[m]) / sd };
        let hi = if i == n { f64::INFINITY } else { 0.5 * (l[m] + l[order[i + 1]]) / sd };
        g[m] = normal_cell(lo, hi);
        t[m] = sd * normal_first_moment_cell(lo, hi);
    }
    Lattice { l, b, g, t }
}

/// Count laws of a binary plan on `n` samples, indexed by the number of
/// second letters: the target binomial law, its score sum, and the simulated
/// law and unscaled tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLaws {
    pub score: Vec<f64>,
    pub target: Vec<f64>,
    pub sim: Vec<f64>,
    pub sim_tangent: Vec<f64>,
}

impl CountLaws {
    /// Unscaled tangent of the target, `score · target`.
    pub fn target_tangent(&self) -> Vec<f64> {
        self.score.iter().zip(&self.target).map(|(l, b)| l * b).collect()
    }
}

/// [`CountLaws`] for binary local data. Data without information (a null
/// letter or a zero tangent) gets the exact constant kernel.
pub fn binary_count_laws(a: &LocalData, n: usize) -> Result<CountLaws, SimError> {
    if a.k() != 2 {
        return Err(SimError::NotBinary(a.k()));
    }
    if n + 1 > MAX_CELLS {
        return Err(SimError::TooLarge((n + 1) as f64));
    }
    let eta = a.probs()[1];
    let lat = lattice(eta, binary_alpha(a), n);
    Ok(CountLaws { score: lat.l, target: lat.b, sim: lat.g, sim_tangent: lat.t })
}

/// Lattice index nearest to the Gaussian score `y`, ties to the lower point.
fn round_to_lattice(y: f64, eta: f64, alpha: f64, n: usize) -> usize {
    let u = y / alpha + n as f64 * eta;
    let m = if alpha > 0.0 { (u - 0.5).ceil() } else { (u + 0.5).floor() };
    m.clamp(0.0, n as f64) as usize
}

fn lattice_errors(lat: &Lattice, n: usize) -> (f64, f64) {
    let mut state = 0.0;
    let mut tangent = 0.0;
    for m in 0..lat.l.len() {
        state += (lat.b[m] - lat.g[m]).abs();
        tangent += (lat.l[m] * lat.b[m] - lat.t[m]).abs();
    }
    (state, tangent / (n as f64).sqrt())
}

/// Exact `Σ_k |Binom(n,η)(k) - N(0,1)(cell_k)|` over the standardized cells
/// `z_k ± 1/(2√n σ)`, `z_k = (k - nη)/(√n σ)`, with the two boundary cells
/// extended to infinity.
pub fn exact_binomial_gaussian_tv(eta: f64, n: usize) -> Result<f64, SimError> {
    check_n(n)?;
    if n > MAX_BINOMIAL_N {
        return Err(SimError::Overflow(n));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(SimError::Degenerate(eta));
    }
    let scale = (n as f64 * eta * (1.0 - eta)).sqrt();
    let half = 0.5 / scale;
    let b = binomial_pmf(n, eta);
    let total = (0..=n)
        .map(|k| {
            let z = (k as f64 - n as f64 * eta) / scale;
            let lo = if k == 0 { f64::NEG_INFINITY } else { z - half };
            let hi = if k == n { f64::INFINITY } else { z + half };
            (b[k] - normal_cell(lo, hi)).abs()
        })
        .sum();
    Ok(total)
}

/// Certified `(state, scaled tangent)` for the binary plan on `m` samples and
/// the constants behind them. State: twice the sup-over-cells bound
/// `1/(√m σ)`. Tangent: `(2C' + 3a)/m^{1/4}` with `C' = √m · state` and
/// `a = max(|α|, J + α²/m)`.
fn binary_certificate(eta: f64, alpha: f64, m: usize) -> (f64, f64, BTreeMap<String, f64>) {
    let mut c = BTreeMap::new();
    let j = alpha * alpha * eta * (1.0 - eta);
    if m == 0 || j == 0.0 {
        return (0.0, 0.0, c);
    }
    let mf = m as f64;
    let sigma = (eta * (1.0 - eta)).sqrt();
    let state = (2.0 / (mf.sqrt() * sigma)).min(2.0);
    let c_prime = mf.sqrt() * state;
    let a = alpha.abs().max(j + alpha * alpha / mf);
    let tangent = (2.0 * c_prime + 3.0 * a) / mf.powf(0.25);
    let a_closed = 8.0 / j.sqrt() + 3.0 * j + 3.0 * alpha * alpha + 3.0 * alpha.abs();
    c.insert("sigma".into(), sigma);
    c.insert("fisher".into(), j);
    c.insert("alpha".into(), alpha);
    c.insert("c_prime".into(), c_prime);
    c.insert("a".into(), a);
    c.insert("cell_sup_bound".into(), 1.0 / (mf.sqrt() * sigma));
    c.insert("closed_form_constant".into(), a_closed);
    c.insert("closed_form_bound".into(), a_closed / mf.powf(0.25));
    (state, tangent, c)
}

/// Gaussian-to-binary plan: round `N(0, nJ)` to the nearest lattice point.
pub fn binary_gaussian_plan(a: &LocalData, n: usize) -> Result<SimulationPlan, SimError> {
    check_n(n)?;
    if a.k() != 2 {
        return Err(SimError::NotBinary(a.k()));
    }
    let eta = a.probs()[1];
    if eta <= 0.0 || eta >= 1.0 {
        return Err(SimError::Degenerate(eta));
    }
    if a.weights().iter().all(|&d| d == 0.0) {
        return Err(SimError::ZeroTangent);
    }
    let alpha = binary_alpha(a);
    let j = fisher_info(a);
    let (state, tangent, constants) = binary_certificate(eta, alpha, n);
    Ok(SimulationPlan {
        n,
        program: Resource::gaussian(n as f64 * j)?,
        target: Resource::Local { local: a.clone() },
        kernel_spec: KernelSpec::LatticeRounding { alpha, eta, n, ties: "lower".into() },
        error_state: ErrorState {
            certified: Some(Certificate { state, tangent, empirical: false, constants }),
            ..Default::default()
        },
        kind: PlanKind::Binary { eta, alpha },
    })
}

/// Measured constants of the tangent lemma for a binary plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    /// `√n ·` exact state error.
    pub c_prime: f64,
    /// `E|E[L'|L̃] - L̃|`.
    pub rounding_bias: f64,
    /// `(1/n) E L̃²` under the simulated law.
    pub second_moment: f64,
    pub a: f64,
    /// `(2C' + 3a)/n^{1/4}`.
    pub bound: f64,
    pub tangent_error: f64,
}

/// Evaluates the tangent lemma with measured `C'` and `a` on a binary plan.
pub fn lemma_check(plan: &SimulationPlan) -> Result<LemmaCheck, SimError> {
    let PlanKind::Binary { eta, alpha } = plan.kind else {
        return Err(SimError::Unsupported("lemma check needs a binary plan".into()));
    };
    let n = plan.n;
    let lat = lattice(eta, alpha, n);
    let (state, tangent_error) = lattice_errors(&lat, n);
    let j = alpha * alpha * eta * (1.0 - eta);
    let rounding_bias: f64 = (0..=n).map(|m| (lat.t[m] - lat.l[m] * lat.g[m]).abs()).sum();
    let second_moment = (0..=n).map(|m| lat.l[m] * lat.l[m] * lat.g[m]).sum::<f64>() / n as f64;
    let c_prime = (n as f64).sqrt() * state;
    let a = rounding_bias.max(j).max(second_moment);
    let bound = (2.0 * c_prime + 3.0 * a) / (n as f64).powf(0.25);
    Ok(LemmaCheck { c_prime, rounding_bias, second_moment, a, bound, tangent_error })
}

// ---------------------------------------------------------------------------
// Finite alphabets

/// `p0 ln(p0/(p0-eps)) + p1 ln(p1/(p1+eps))`, the exponent of the event that
/// more than `m(p1+eps)` of `m` binary draws fall on letter 1.
pub fn truncation_exponent(p0: f64, p1: f64, eps: f64) -> Result<f64, SimError> {
    check_eps(eps)?;
    if eps >= p0 {
        return Err(SimError::EpsTooLarge { stage: 0, eps, p0 });
    }
    let t1 = if p1 > 0.0 { p1 * (p1 / (p1 + eps)).ln() } else { 0.0 };
    Ok(p0 * (p0 / (p0 - eps)).ln() + t1)
}

/// Extra information per sample consumed by the finite plan:
/// `Σ_i J_i (Π_{j<i} min(1, p_j(1)+eps) - Π_{j<i} p_j(1))`.
pub fn finite_overhead(a: &LocalData, eps: f64) -> Result<f64, SimError> {
    check_eps(eps)?;
    let chain = fisher_chain(a)?;
    let mut f = 0.0;
    let mut padded = 1.0;
    for st in &chain {
        f += st.fisher * (padded - st.weight);
        padded *= (st.binary.probs()[1] + eps).min(1.0);
    }
    Ok(f.max(0.0))
}

/// Plan for `a^⊗n` from a Gaussian shift: split off the last letter, simulate
/// the binary split with [`binary_gaussian_plan`], keep at most
/// `⌊m(p(1)+eps)⌋` samples for the remaining letters (mapping any excess to
/// the all-last-letter sequence), and recurse.
pub fn finite_plan(a: &LocalData, n: usize, eps: f64) -> Result<SimulationPlan, SimError> {
    check_n(n)?;
    check_eps(eps)?;
    let j = fisher_info(a);
    if j.is_infinite() {
        return Err(SimError::InfiniteFisher);
    }
    if a.k() == 2 {
        return binary_gaussian_plan(a, n);
    }
    let chain = fisher_chain(a)?;
    if chain.is_empty() {
        return Err(SimError::NotBinary(a.k()));
    }
    let mut stages = Vec::with_capacity(chain.len());
    let mut specs = Vec::with_capacity(chain.len());
    let mut samples = n;
    let mut level = a.clone();
    for (i, st) in chain.iter().enumerate() {
        let (p0, p1) = (st.binary.probs()[0], st.binary.probs()[1]);
        let last = i + 1 == chain.len();
        let (keep, c_eps) = if last {
            (None, None)
        } else {
            if eps >= p0 {
                return Err(SimError::EpsTooLarge { stage: i, eps, p0 });
            }
            let c = truncation_exponent(p0, p1, eps)?;
            let keep = ((samples as f64 * (p1 + eps)).floor() as usize).min(samples);
            (Some(keep), Some(c))
        };
        let level_max_score = level.score().iter().map(|s| s.abs()).fold(0.0, f64::max);
        let sp = StagePlan {
            eta: p1,
            alpha: binary_alpha(&st.binary),
            fisher: st.fisher,
            samples,
            keep,
            c_eps,
            level_fisher: fisher_info(&level),
            level_max_score,
        };
        specs.push(StageSpec {
            letter: level.k() - 1,
            eta: sp.eta,
            alpha: sp.alpha,
            fisher: sp.fisher,
            samples,
            keep,
            c_eps,
        });
        stages.push(sp);
        if let Some(k) = keep {
            samples = k;
        }
        level = st.remainder.clone();
    }
    let f = finite_overhead(a, eps)?;
    let used: f64 = stages.iter().map(|s| s.samples as f64 * s.fisher).sum();
    let mut cert = finite_certificate(&stages, n);
    cert.constants.insert("overhead".into(), f);
    cert.constants.insert("used_units".into(), used);
    Ok(SimulationPlan {
        n,
        program: Resource::gaussian(n as f64 * (j + f))?,
        target: Resource::Local { local: a.clone() },
        kernel_spec: KernelSpec::FiniteChain { eps, stages: specs },
        error_state: ErrorState { certified: Some(cert), ..Default::default() },
        kind: PlanKind::Finite(FiniteParams { a: a.clone(), stages }),
    })
}

/// Stage errors for one level of the chain, unscaled tangent.
#[derive(Debug, Clone, Copy)]
struct LevelErrors {
    state: f64,
    tangent: f64,
}

/// Combines per-stage binary errors into the error of the whole chain.
///
/// One level is `binary ⊗ rest` followed by the truncation map. With
/// `(E, U)` the state and unscaled tangent errors of each factor and `S` the
/// L1 norm of each factor's target tangent (at most `√(m J)`), the product
/// rule gives `U ≤ U_b + S_b E_r + E_b (S_r + U_r) + U_r`. Truncation adds
/// `2P` to the state error and `2 m max|L| P` to the tangent error, where
/// `P ≤ exp(-m C)` is the probability of the truncated event.
fn combine_levels(stages: &[StagePlan], per_stage: &[LevelErrors], truncation: &[(f64, f64)]) -> LevelErrors {
    let mut acc = LevelErrors { state: 0.0, tangent: 0.0 };
    let mut rest_norm = 0.0;
    for i in (0..stages.len()).rev() {
        let st = &stages[i];
        let b = per_stage[i];
        let s_b = (st.samples as f64 * st.fisher).sqrt();
        let (t_state, t_tan) = truncation[i];
        let state = b.state + acc.state + t_state;
        let tangent =
            b.tangent + s_b * acc.state + b.state * (rest_norm + acc.tangent) + acc.tangent + t_tan;
        acc = LevelErrors { state, tangent };
        rest_norm = (st.samples as f64 * st.level_fisher).sqrt();
    }
    acc
}

fn truncation_bounds(stages: &[StagePlan]) -> Vec<(f64, f64)> {
    stages
        .iter()
        .map(|st| match (st.keep, st.c_eps) {
            (Some(k), Some(c)) if k < st.samples => {
                let m = st.samples as f64;
                let p = (-m * c).exp();
                (2.0 * p, 2.0 * m * st.level_max_score * p)
            }
            _ => (0.0, 0.0),
        })
        .collect()
}

fn finite_certificate(stages: &[StagePlan], n: usize) -> Certificate {
    let per_stage: Vec<LevelErrors> = stages
        .iter()
        .map(|st| {
            let (s, t, _) = binary_certificate(st.eta, st.alpha, st.samples);
            LevelErrors { state: s, tangent: t * (st.samples as f64).sqrt() }
        })
        .collect();
    let trunc = truncation_bounds(stages);
    let total = combine_levels(stages, &per_stage, &trunc);
    let mut constants = BTreeMap::new();
    for (i, st) in stages.iter().enumerate() {
        let (s, t, _) = binary_certificate(st.eta, st.alpha, st.samples);
        constants.insert(format!("stage{i}_state"), s);
        constants.insert(format!("stage{i}_tangent"), t);
        constants.insert(format!("stage{i}_truncation_state"), trunc[i].0);
        constants.insert(format!("stage{i}_truncation_tangent"), trunc[i].1 / (n as f64).sqrt());
    }
    Certificate {
        state: total.state.min(2.0),
        tangent: total.tangent / (n as f64).sqrt(),
        empirical: false,
        constants,
    }
}

/// Exact errors of a finite plan by streaming over count types.
///
/// Both the target and the simulated law are exchangeable, so only the law
/// of the letter counts matters. For two stages the first `m` outputs of the
/// second stage (out of `keep`) have the count law `D_m`, obtained from
/// `D_keep` by `D_{m-1}(j) = D_m(j)(m-j)/m + D_m(j+1)(j+1)/m`.
fn finite_exact(fp: &FiniteParams, n: usize) -> Result<(f64, f64), SimError> {
    let stages = &fp.stages;
    match stages.len() {
        1 => {
            let st = &stages[0];
            if n + 1 > MAX_CELLS {
                return Err(SimError::TooLarge((n + 1) as f64));
            }
            Ok(lattice_errors(&lattice(st.eta, st.alpha, n), n))
        }
        2 => {
            let (sa, sb) = (&stages[0], &stages[1]);
            let keep = sa.keep.unwrap_or(n);
            let cells = (keep as f64 + 1.0) * (keep as f64 + 2.0) / 2.0 + n as f64;
            if cells > MAX_CELLS as f64 {
                return Err(SimError::TooLarge(cells));
            }
            let score = fp.a.score();
            let k = fp.a.k();
            // Letters: k-1 split at stage a, k-2 split at stage b, the rest
            // (a single letter, or null letters) at the leaf.
            let (l_a, l_b, l_leaf) = (score[k - 1], score[k - 2], score[0]);
            let la = lattice(sa.eta, sa.alpha, n);
            let lb = lattice(sb.eta, sb.alpha, keep);
            let mut d = lb.g.clone();
            let mut e = lb.t.clone();
            let (mut state, mut tangent) = (0.0, 0.0);
            let (mut trunc_p, mut trunc_t) = (0.0, 0.0);
            for m in keep + 1..=n {
                trunc_p += la.g[m];
                trunc_t += la.t[m];
                let bm = binomial_pmf(m, sb.eta);
                state += la.b[m];
                for (jj, &bj) in bm.iter().enumerate() {
                    let lv = jj as f64 * l_leaf + (m - jj) as f64 * l_b + (n - m) as f64 * l_a;
                    tangent += (lv * la.b[m] * bj).abs();
                }
            }
            for m in (0..=keep).rev() {
                let bm = binomial_pmf(m, sb.eta);
                for jj in 0..=m {
                    let lv = jj as f64 * l_leaf + (m - jj) as f64 * l_b + (n - m) as f64 * l_a;
                    let tgt = la.b[m] * bm[jj];
                    let mut sim = la.g[m] * d[jj];
                    let mut sim_t = la.t[m] * d[jj] + la.g[m] * e[jj];
                    if m == 0 {
                        sim += trunc_p;
                        sim_t += trunc_t;
                    }
                    state += (sim - tgt).abs();
                    tangent += (sim_t - lv * tgt).abs();
                }
                if m > 0 {
                    let mf = m as f64;
                    for jj in 0..m {
                        d[jj] = d[jj] * (m - jj) as f64 / mf + d[jj + 1] * (jj + 1) as f64 / mf;
                        e[jj] = e[jj] * (m - jj) as f64 / mf + e[jj + 1] * (jj + 1) as f64 / mf;
                    }
                }
            }
            Ok((state, tangent / (n as f64).sqrt()))
        }
        s => Err(SimError::Unsupported(format!("exact evaluation of a {s}-stage chain"))),
    }
}

// ---------------------------------------------------------------------------
// Continuous scores

/// `max(2√((w-1)/√n), 4√((w-1)/n))`, capped at 2.
fn zero_bias_state_bound(w: f64, n: usize) -> f64 {
    let nf = n as f64;
    let excess = (w - 1.0).max(0.0);
    (2.0 * (excess / nf.sqrt()).sqrt()).max(4.0 * (excess / nf).sqrt()).min(2.0)
}

/// Plan for IID copies of a continuous score from `N(0, nJ)`: the identity on
/// the score followed by conditional reconstruction.
pub fn continuous_plan(p_l: &Density1D, n: usize) -> Result<SimulationPlan, SimError> {
    check_n(n)?;
    let j = p_l.integrate(|t| t * t);
    let w = w_variance_functional(p_l, j)?;
    if !w.value.is_finite() {
        return Err(SimError::InfiniteFunctional);
    }
    let state = zero_bias_state_bound(w.value, n);
    let nf = n as f64;
    let tangent = (2.0 * nf.sqrt() * state + 3.0 * j) / nf.powf(0.25);
    let mut constants = BTreeMap::new();
    constants.insert("w_variance".into(), w.value);
    constants.insert("second_moment".into(), j);
    constants.insert("truncated_mass".into(), w.truncated_mass);
    Ok(SimulationPlan {
        n,
        program: Resource::gaussian(nf * j)?,
        target: Resource::ScoreDensity { second_moment: j },
        kernel_spec: KernelSpec::ScoreIdentity { second_moment: j },
        error_state: ErrorState {
            certified: Some(Certificate { state, tangent, empirical: w.unreliable, constants }),
            ..Default::default()
        },
        kind: PlanKind::Continuous { density: p_l.clone(), j },
    })
}

/// Density of the sum of `n` IID copies, sampled on an equispaced grid.
struct SumGrid {
    x0: f64,
    h: f64,
    values: Vec<f64>,
}

impl SumGrid {
    fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    fn interp(&self, x: f64) -> f64 {
        let u = (x - self.x0) / self.h;
        if u < 0.0 || u >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = u.floor() as usize;
        let f = u - i as f64;
        (self.values[i] * (1.0 - f) + self.values[i + 1] * f).max(0.0)
    }
}

/// n-fold convolution by FFT. The single-copy density is sampled with
/// spacing `sd/40` (aligned to the support ends when they are finite), with
/// jumps taking their midpoint value; the result wraps modulo the array
/// length, which covers `±20√n sd` around the mean.
fn score_sum_grid(p: &Density1D, n: usize) -> Result<SumGrid, SimError> {
    let sd = p.variance().sqrt();
    let mean = p.mean();
    let (lo, hi) = p.support();
    let (wlo, whi) = p.window();
    let target_h = sd / 40.0;
    let (x0, h, count) = if lo.is_finite() && hi.is_finite() {
        let k = ((hi - lo) / target_h).ceil().max(1.0);
        (lo, (hi - lo) / k, k as usize + 1)
    } else {
        let k = ((whi - wlo) / target_h).ceil();
        (wlo, target_h, k as usize + 1)
    };
    let nf = n as f64;
    let want = (40.0 * nf.sqrt() * sd / h).ceil() as usize + 2;
    let len = want.max(1024).next_power_of_two();
    if len > MAX_FFT || count > MAX_CELLS {
        return Err(SimError::TooLarge(len.max(count) as f64));
    }
    let eta = 1e-9 * h;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for u in 0..count {
        let x = x0 + u as f64 * h;
        let v = 0.5 * (p.eval(x - eta) + p.eval(x + eta));
        buf[u % len].re += v * h;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = c.powu(n as u32);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    // Sum of offsets u has mean n(mean - x0)/h; center the window there.
    let center = nf * (mean - x0) / h;
    let start = (center - len as f64 / 2.0).round() as i64;
    let values = (0..len)
        .map(|i| {
            let u = start + i as i64;
            let idx = u.rem_euclid(len as i64) as usize;
            (buf[idx].re / len as f64 / h).max(0.0)
        })
        .collect();
    Ok(SumGrid { x0: nf * x0 + start as f64 * h, h, values })
}

fn continuous_exact(p: &Density1D, j: f64, n: usize) -> Result<(f64, f64), SimError> {
    let grid = score_sum_grid(p, n)?;
    let sd = (n as f64 * j).sqrt();
    let (mut state, mut tangent) = (0.0, 0.0);
    for (i, &v) in grid.values.iter().enumerate() {
        let x = grid.x(i);
        let diff = (v - normal_pdf(x / sd) / sd).abs();
        state += diff;
        tangent += x.abs() * diff;
    }
    Ok((state * grid.h, tangent * grid.h / (n as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// Gaussian shifts from IID families

/// Law of the summed score of `a^⊗n`, sorted by value.
fn score_sum_atoms(a: &LocalData, n: usize) -> Result<Vec<(f64, f64)>, SimError> {
    let law = DiscreteLaw1D::score_law(a)?;
    if law.atoms().len() == 2 {
        let (x0, x1) = (law.atoms()[0].0, law.atoms()[1].0);
        let b = binomial_pmf(n, law.atoms()[1].1);
        return Ok((0..=n).map(|m| (m as f64 * x1 + (n - m) as f64 * x0, b[m])).collect());
    }
    Ok(law.convolution_power(n)?.atoms().to_vec())
}

impl ByIidParams {
    /// Indices of atoms within `reach` of `t`.
    fn near(&self, t: f64, reach: f64) -> std::ops::Range<usize> {
        let lo = self.atoms.partition_point(|a| a.0 < t - reach);
        let hi = self.atoms.partition_point(|a| a.0 <= t + reach);
        lo..hi
    }

    /// `(p_T(t), Σ_s s B(s) φ_σ(t-s))`.
    fn mix(&self, t: f64) -> (f64, f64) {
        let s = self.noise_sd;
        let (mut p, mut d) = (0.0, 0.0);
        for &(x, m) in &self.atoms[self.near(t, 40.0 * s)] {
            let k = m * normal_pdf((t - x) / s) / s;
            p += k;
            d += x * k;
        }
        (p, d)
    }

    fn target(&self, t: f64) -> f64 {
        let sd = self.variance.sqrt();
        normal_pdf(t / sd) / sd
    }

    /// Mean shift rate of the smoothed sum per unit variance.
    fn slope(&self, n: usize) -> f64 {
        n as f64 * self.j / self.variance
    }

    /// `(state, tangent, regression defect)` by quadrature.
    fn quadrature(&self, n: usize) -> Result<(f64, f64, f64), SimError> {
        let sd = self.variance.sqrt();
        let width = (self.noise_sd / 4.0).min(sd / 20.0);
        let panels = (28.0 * sd / width).ceil();
        if panels > 2e6 {
            return Err(SimError::TooLarge(panels));
        }
        let c = self.slope(n);
        let (mut s, mut t, mut d) = (0.0, 0.0, 0.0);
        let lo = -14.0 * sd;
        for i in 0..panels as usize {
            let a = lo + i as f64 * width;
            s += gl5(a, a + width, |x| (self.mix(x).0 - self.target(x)).abs());
            t += gl5(a, a + width, |x| (self.mix(x).1 - c * x * self.target(x)).abs());
            d += gl5(a, a + width, |x| {
                let (p, m) = self.mix(x);
                (m - c * x * p).abs()
            });
        }
        let rn = (n as f64).sqrt();
        Ok((s, t / rn, d / rn))
    }
}

/// Gaussian units reached by smoothing: `nJ/(1 + eps² J)`.
pub fn smoothing_units(n: usize, j: f64, eps: f64) -> f64 {
    n as f64 * j / (1.0 + eps * eps * j)
}

/// Plan for a Gaussian shift from `a^⊗n`: add independent `N(0, (eps J)²)`
/// noise to each score and output the standardized sum. The Gaussian target
/// carries `nJ/(1 + eps² J)` units.
pub fn gaussian_by_iid_plan(a: &LocalData, n: usize, eps: f64) -> Result<SimulationPlan, SimError> {
    check_n(n)?;
    check_eps(eps)?;
    let j = fisher_info(a);
    if j.is_infinite() {
        return Err(SimError::InfiniteFisher);
    }
    if j == 0.0 {
        return Err(SimError::ZeroTangent);
    }
    let nf = n as f64;
    let noise = eps * j;
    let units = smoothing_units(n, j, eps);
    let per_sample = j + noise * noise;
    let params = ByIidParams {
        atoms: score_sum_atoms(a, n)?,
        noise_sd: noise * nf.sqrt(),
        variance: nf * per_sample,
        j,
    };
    let score = a.score();
    let (mut weights, mut means) = (vec![], vec![]);
    for (&p, &l) in a.probs().iter().zip(&score) {
        if p > 0.0 {
            weights.push(p);
            means.push(l);
        }
    }
    let sds = vec![noise; weights.len()];
    let smoothed = GaussianMixture { weights, means, sds }.density()?;
    let w = w_variance_functional(&smoothed, per_sample)?;
    if !w.value.is_finite() {
        return Err(SimError::InfiniteFunctional);
    }
    let tail = tail_condition_check(&smoothed).ok();
    let (_, _, defect) = params.quadrature(n)?;
    let state = zero_bias_state_bound(w.value, n);
    let tangent = defect + (2.0 * nf.sqrt() * state + 3.0 * per_sample) / nf.powf(0.25);
    let mut constants = BTreeMap::new();
    constants.insert("w_variance".into(), w.value);
    constants.insert("regression_defect".into(), defect);
    constants.insert("units".into(), units);
    if let Some(t) = tail {
        constants.insert("tail_alpha_left".into(), t.alphas[0]);
        constants.insert("tail_alpha_right".into(), t.alphas[1]);
    }
    Ok(SimulationPlan {
        n,
        program: Resource::Local { local: a.clone() },
        target: Resource::gaussian(units)?,
        kernel_spec: KernelSpec::SmoothedScore { eps, noise_sd: noise, units },
        error_state: ErrorState {
            certified: Some(Certificate { state, tangent, empirical: true, constants }),
            ..Default::default()
        },
        kind: PlanKind::ByIid(params),
    })
}

// ---------------------------------------------------------------------------
// Identity and composition

/// The exact plan that outputs its program unchanged.
pub fn identity_plan(a: &LocalData, n: usize) -> Result<SimulationPlan, SimError> {
    check_n(n)?;
    Ok(SimulationPlan {
        n,
        program: Resource::Local { local: a.clone() },
        target: Resource::Local { local: a.clone() },
        kernel_spec: KernelSpec::Identity,
        error_state: ErrorState {
            certified: Some(Certificate { state: 0.0, tangent: 0.0, empirical: false, constants: BTreeMap::new() }),
            ..Default::default()
        },
        kind: PlanKind::Identity,
    })
}

fn compatible(prev: &SimulationPlan, next: &SimulationPlan) -> Result<(), SimError> {
    if prev.n != next.n {
        return Err(SimError::Incompatible(format!("n = {} then n = {}", prev.n, next.n)));
    }
    match (&prev.target, &next.program) {
        // A Gaussian shift with more units degrades exactly to one with fewer.
        (Resource::Gaussian { units: have, .. }, Resource::Gaussian { units: need, .. }) => {
            if *need <= have * (1.0 + 1e-12) {
                Ok(())
            } else {
                Err(SimError::Incompatible(format!("{need} Gaussian units needed, {have} produced")))
            }
        }
        (Resource::Local { local: x }, Resource::Local { local: y }) => {
            let close = x.k() == y.k()
                && x.probs().iter().zip(y.probs()).all(|(a, b)| (a - b).abs() <= 1e-12)
                && x.weights().iter().zip(y.weights()).all(|(a, b)| (a - b).abs() <= 1e-12);
            if close {
                Ok(())
            } else {
                Err(SimError::Incompatible("local data differ".into()))
            }
        }
        (t, p) => Err(SimError::Incompatible(format!("{t:?} does not feed {p:?}"))),
    }
}

/// Chains plans: each plan's target must be the next plan's program. The
/// certificate is the sum of the stage certificates.
pub fn compose_plans(mut plans: Vec<SimulationPlan>) -> Result<SimulationPlan, SimError> {
    if plans.is_empty() {
        return Err(SimError::Incompatible("no plans".into()));
    }
    if plans.len() == 1 {
        return Ok(plans.pop().unwrap());
    }
    for w in plans.windows(2) {
        compatible(&w[0], &w[1])?;
    }
    let mut cert = Certificate { state: 0.0, tangent: 0.0, empirical: false, constants: BTreeMap::new() };
    let mut have_cert = true;
    for (i, p) in plans.iter().enumerate() {
        match p.certified() {
            Some(c) => {
                cert.state += c.state;
                cert.tangent += c.tangent;
                cert.empirical |= c.empirical;
                cert.constants.insert(format!("stage{i}_state"), c.state);
                cert.constants.insert(format!("stage{i}_tangent"), c.tangent);
            }
            None => have_cert = false,
        }
    }
    cert.state = cert.state.min(2.0);
    Ok(SimulationPlan {
        n: plans[0].n,
        program: plans[0].program.clone(),
        target: plans[plans.len() - 1].target.clone(),
        kernel_spec: KernelSpec::Composite { stages: plans.iter().map(|p| p.kernel_spec.clone()).collect() },
        error_state: ErrorState { certified: have_cert.then_some(cert), ..Default::default() },
        kind: PlanKind::Composite(plans),
    })
}

/// Law of the lattice index reached by a Gaussian-by-IID stage followed by a
/// binary stage: per atom `s`, the rounded score is Gaussian with mean
/// `ρ√(U/V) s` and variance `U(ρ²σ²/V + 1 - ρ²)`, `ρ² = U/E`.
struct ChainedLaw {
    g: Vec<f64>,
    t: Vec<f64>,
    lat: Lattice,
    rho: f64,
    units: f64,
}

fn chained_law(first: &SimulationPlan, second: &SimulationPlan) -> Option<ChainedLaw> {
    let (PlanKind::ByIid(p), PlanKind::Binary { eta, alpha }) = (&first.kind, &second.kind) else {
        return None;
    };
    let (Resource::Gaussian { units: e, .. }, Some(u)) = (&first.target, second.program_units()) else {
        return None;
    };
    let n = second.n;
    let rho = (u / e).min(1.0).sqrt();
    let sd = (u * (rho * rho * p.noise_sd * p.noise_sd / p.variance + 1.0 - rho * rho)).sqrt();
    let lat = lattice(*eta, *alpha, n);
    let order: Vec<usize> = if *alpha > 0.0 { (0..=n).collect() } else { (0..=n).rev().collect() };
    let bounds: Vec<f64> = (0..=n + 1)
        .map(|i| match i {
            0 => f64::NEG_INFINITY,
            i if i == n + 1 => f64::INFINITY,
            i => 0.5 * (lat.l[order[i - 1]] + lat.l[order[i]]),
        })
        .collect();
    let (mut g, mut t) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for &(s, mass) in &p.atoms {
        let mu = rho * (u / p.variance).sqrt() * s;
        for (i, &m) in order.iter().enumerate() {
            let c = normal_cell((bounds[i] - mu) / sd, (bounds[i + 1] - mu) / sd);
            g[m] += mass * c;
            t[m] += s * mass * c;
        }
    }
    Some(ChainedLaw { g, t, lat, rho, units: u })
}

// ---------------------------------------------------------------------------
// Evaluation

/// Exact or sampled errors of a plan.
pub fn evaluate_plan_error(plan: &SimulationPlan, mode: EvalMode) -> Result<ErrorReport, SimError> {
    let n = plan.n;
    match (mode, &plan.kind) {
        (_, PlanKind::Identity) => Ok(match mode {
            EvalMode::Exact => ErrorReport::exact(0.0, 0.0),
            EvalMode::MonteCarlo { samples, .. } => ErrorReport {
                state_ci: Some([0.0, 0.0]),
                tangent_ci: Some([0.0, 0.0]),
                samples: Some(samples),
                ..ErrorReport::exact(0.0, 0.0)
            },
        }),
        (EvalMode::Exact, PlanKind::Binary { eta, alpha }) => {
            if n + 1 > MAX_CELLS {
                return Err(SimError::TooLarge((n + 1) as f64));
            }
            let (s, t) = lattice_errors(&lattice(*eta, *alpha, n), n);
            Ok(ErrorReport::exact(s, t))
        }
        (EvalMode::MonteCarlo { samples, seed }, PlanKind::Binary { eta, alpha }) => {
            Ok(binary_mc(*eta, *alpha, n, samples, seed))
        }
        (EvalMode::Exact, PlanKind::Finite(fp)) => {
            let (s, t) = finite_exact(fp, n)?;
            Ok(ErrorReport::exact(s, t))
        }
        (EvalMode::MonteCarlo { samples, seed }, PlanKind::Finite(fp)) => Ok(finite_mc(fp, n, samples, seed)),
        (EvalMode::Exact, PlanKind::Continuous { density, j }) => {
            let (s, t) = continuous_exact(density, *j, n)?;
            Ok(ErrorReport::exact(s, t))
        }
        (EvalMode::MonteCarlo { samples, seed }, PlanKind::Continuous { density, j }) => {
            let grid = score_sum_grid(density, n)?;
            let sd = (n as f64 * j).sqrt();
            let rn = (n as f64).sqrt();
            Ok(run_mc(samples, seed, |rng| {
                let y = sd * rng.sample::<f64, _>(StandardNormal);
                let q = normal_pdf(y / sd) / sd;
                let p = grid.interp(y);
                ((1.0 - p / q).abs(), y.abs() * (q - p).abs() / (q * rn))
            }))
        }
        (EvalMode::Exact, PlanKind::ByIid(p)) => {
            let (s, t, _) = p.quadrature(n)?;
            Ok(ErrorReport::exact(s, t))
        }
        (EvalMode::MonteCarlo { samples, seed }, PlanKind::ByIid(p)) => {
            // Balanced mixture of the smoothed sum and the Gaussian target.
            let cum = cumulative(&p.atoms);
            let c = p.slope(n);
            let rn = (n as f64).sqrt();
            let sd = p.variance.sqrt();
            Ok(run_mc(samples, seed, |rng| {
                let x = if rng.random::<bool>() {
                    let s = p.atoms[pick(&cum, rng.random::<f64>())].0;
                    s + p.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    sd * rng.sample::<f64, _>(StandardNormal)
                };
                let (pt, d) = p.mix(x);
                let q = p.target(x);
                let mix = 0.5 * (pt + q);
                ((pt - q).abs() / mix, (d - c * x * q).abs() / (mix * rn))
            }))
        }
        (_, PlanKind::Composite(stages)) => composite_eval(stages, n, mode),
    }
}

fn composite_eval(stages: &[SimulationPlan], n: usize, mode: EvalMode) -> Result<ErrorReport, SimError> {
    if stages.len() == 2 {
        if let Some(ch) = chained_law(&stages[0], &stages[1]) {
            let rn = (n as f64).sqrt();
            return Ok(match mode {
                EvalMode::Exact => {
                    let mut s = 0.0;
                    let mut t = 0.0;
                    for m in 0..=n {
                        s += (ch.lat.b[m] - ch.g[m]).abs();
                        t += (ch.lat.l[m] * ch.lat.b[m] - ch.t[m]).abs();
                    }
                    ErrorReport::exact(s, t / rn)
                }
                EvalMode::MonteCarlo { samples, seed } => {
                    let (PlanKind::ByIid(p), PlanKind::Binary { eta, alpha }) = (&stages[0].kind, &stages[1].kind)
                    else {
                        unreachable!()
                    };
                    let cum = cumulative(&p.atoms);
                    let laws = IndexedLaws {
                        tgt: &ch.lat.b,
                        sim: &ch.g,
                        tgt_t: ch.lat.l.iter().zip(&ch.lat.b).map(|(l, b)| l * b).collect(),
                        sim_t: &ch.t,
                    };
                    laws.run(n, samples, seed, |rng| {
                        let s = p.atoms[pick(&cum, rng.random::<f64>())].0;
                        let x = s + p.noise_sd * rng.sample::<f64, _>(StandardNormal);
                        let w: f64 = rng.sample(StandardNormal);
                        let y = ch.units.sqrt()
                            * (ch.rho * x / p.variance.sqrt() + (1.0 - ch.rho * ch.rho).sqrt() * w);
                        round_to_lattice(y, *eta, *alpha, n)
                    })
                }
            });
        }
    }
    let mut out = ErrorReport { aggregated: true, ..ErrorReport::exact(0.0, 0.0) };
    let mut cis = (Some([0.0, 0.0]), Some([0.0, 0.0]));
    for (i, st) in stages.iter().enumerate() {
        let mode_i = match mode {
            EvalMode::MonteCarlo { samples, seed } => {
                EvalMode::MonteCarlo { samples, seed: seed.wrapping_add(i as u64) }
            }
            m => m,
        };
        let r = evaluate_plan_error(st, mode_i)?;
        out.tv_state_error += r.tv_state_error;
        out.tv_tangent_error += r.tv_tangent_error;
        cis.0 = cis.0.zip(r.state_ci).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]);
        cis.1 = cis.1.zip(r.tangent_ci).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]);
        out.samples = r.samples.or(out.samples);
    }
    if let EvalMode::MonteCarlo { .. } = mode {
        out.state_ci = cis.0;
        out.tangent_ci = cis.1;
    }
    Ok(out)
}

fn cumulative(atoms: &[(f64, f64)]) -> Vec<f64> {
    cumulative_masses(&atoms.iter().map(|a| a.1).collect::<Vec<_>>())
}

fn pick(cum: &[f64], u: f64) -> usize {
    let total = cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u * total).min(cum.len() - 1)
}

// ---------------------------------------------------------------------------
// Monte Carlo


/// Averages `f` over `samples` draws. Chunk `c` uses the ChaCha8 stream `c`
/// of `seed`, and chunk sums are merged in chunk order, so the result does
/// not depend on the thread count.
pub fn run_mc<F>(samples: usize, seed: u64, f: F) -> ErrorReport
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64) + Sync,
{
    let samples = samples.max(2);
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = [0.0; 4];
            for _ in 0..count {
                let (s, t) = f(&mut rng);
                acc[0] += s;
                acc[1] += s * s;
                acc[2] += t;
                acc[3] += t * t;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in &sums {
        for i in 0..4 {
            tot[i] += s[i];
        }
    }
    let nf = samples as f64;
    let ci = |sum: f64, sq: f64| {
        let mean = sum / nf;
        let var = ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        let half = 1.959_963_984_540_054 * (var / nf).sqrt();
        (mean, [mean - half, mean + half])
    };
    let (s, s_ci) = ci(tot[0], tot[1]);
    let (t, t_ci) = ci(tot[2], tot[3]);
    ErrorReport {
        tv_state_error: s,
        tv_tangent_error: t,
        state_ci: Some(s_ci),
        tangent_ci: Some(t_ci),
        samples: Some(samples),
        bias: Some([0.0, 0.0]),
        aggregated: false,
    }
}

/// Balanced-mixture estimator on a finite index set. Each draw comes from
/// the simulated law (through `draw_sim`) or the target law with probability
/// one half, and contributes `|B - G| / M` and `|TB - TG| / (M √n)` with
/// `M = (B + G)/2`. Both are unbiased for the exact errors and bounded by 2
/// (respectively by the tangent-to-mass ratio), so the normal interval is
/// reliable even where one law has much heavier tails than the other.
struct IndexedLaws<'a> {
    tgt: &'a [f64],
    sim: &'a [f64],
    tgt_t: Vec<f64>,
    sim_t: &'a [f64],
}

impl IndexedLaws<'_> {
    fn run<D>(&self, n: usize, samples: usize, seed: u64, draw_sim: D) -> ErrorReport
    where
        D: Fn(&mut ChaCha8Rng) -> usize + Sync,
    {
        let cum = cumulative_masses(self.tgt);
        let rn = (n as f64).sqrt();
        run_mc(samples, seed, |rng| {
            let m = if rng.random::<bool>() { draw_sim(rng) } else { pick(&cum, rng.random::<f64>()) };
            let mix = 0.5 * (self.tgt[m] + self.sim[m]);
            if mix == 0.0 {
                return (0.0, 0.0);
            }
            ((self.tgt[m] - self.sim[m]).abs() / mix, (self.tgt_t[m] - self.sim_t[m]).abs() / (mix * rn))
        })
    }
}

fn cumulative_masses(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Samples the Gaussian program and rounds it, mixed with binomial draws.
fn binary_mc(eta: f64, alpha: f64, n: usize, samples: usize, seed: u64) -> ErrorReport {
    let lat = lattice(eta, alpha, n);
    let sd = alpha.abs() * (n as f64 * eta * (1.0 - eta)).sqrt();
    let laws = IndexedLaws {
        tgt: &lat.b,
        sim: &lat.g,
        tgt_t: lat.l.iter().zip(&lat.b).map(|(l, b)| l * b).collect(),
        sim_t: &lat.t,
    };
    laws.run(n, samples, seed, |rng| round_to_lattice(sd * rng.sample::<f64, _>(StandardNormal), eta, alpha, n))
}

/// Stage estimates combined with the same product and truncation rule as
/// the certificate; an estimated upper bound rather than an unbiased
/// estimate of the whole chain.
fn finite_mc(fp: &FiniteParams, n: usize, samples: usize, seed: u64) -> ErrorReport {
    let stages = &fp.stages;
    let runs: Vec<ErrorReport> = stages
        .iter()
        .enumerate()
        .map(|(i, st)| {
            if st.samples == 0 || st.fisher == 0.0 || st.eta <= 0.0 || st.eta >= 1.0 {
                ErrorReport {
                    state_ci: Some([0.0, 0.0]),
                    tangent_ci: Some([0.0, 0.0]),
                    ..ErrorReport::exact(0.0, 0.0)
                }
            } else {
                binary_mc(st.eta, st.alpha, st.samples, samples, seed.wrapping_add(i as u64))
            }
        })
        .collect();
    let trunc = truncation_bounds(stages);
    let combine = |pick: &dyn Fn(&ErrorReport) -> (f64, f64)| {
        let per: Vec<LevelErrors> = runs
            .iter()
            .zip(stages)
            .map(|(r, st)| {
                let (s, t) = pick(r);
                LevelErrors { state: s.max(0.0), tangent: t.max(0.0) * (st.samples as f64).sqrt() }
            })
            .collect();
        let c = combine_levels(stages, &per, &trunc);
        (c.state, c.tangent / (n as f64).sqrt())
    };
    let (s, t) = combine(&|r| (r.tv_state_error, r.tv_tangent_error));
    let (s_lo, t_lo) = combine(&|r| (r.state_ci.unwrap()[0], r.tangent_ci.unwrap()[0]));
    let (s_hi, t_hi) = combine(&|r| (r.state_ci.unwrap()[1], r.tangent_ci.unwrap()[1]));
    ErrorReport {
        tv_state_error: s,
        tv_tangent_error: t,
        state_ci: Some([s_lo, s_hi]),
        tangent_ci: Some([t_lo, t_hi]),
        samples: Some(samples),
        bias: None,
        aggregated: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(eta: f64, d: f64) -> LocalData {
        LocalData::from_vecs(vec![1.0 - eta, eta], vec![-d, d]).unwrap()
    }

    #[test]
    fn rounding_ties_go_to_lower_point() {
        // α > 0: y = 0.5α sits between m = nη and nη + 1.
        let (eta, n) = (0.5, 4);
        assert_eq!(round_to_lattice(0.5, eta, 1.0, n), 2);
        assert_eq!(round_to_lattice(0.500001, eta, 1.0, n), 3);
        // α < 0: lattice decreases in m; the lower value is the larger m.
        assert_eq!(round_to_lattice(-0.5, eta, -1.0, n), 3);
        assert_eq!(round_to_lattice(0.5, eta, -1.0, n), 2);
        assert_eq!(round_to_lattice(1e9, eta, 1.0, n), 4);
    }

    #[test]
    fn lattice_masses_sum_to_one() {
        let lat = lattice(0.3, -1.7, 50);
        assert!((lat.g.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(lat.t.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn binary_routes_agree() {
        for &(eta, n) in &[(0.5, 1usize), (0.3, 64), (0.9, 200)] {
            let a = binary(eta, 0.2);
            let plan = binary_gaussian_plan(&a, n).unwrap();
            let r = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
            let z = exact_binomial_gaussian_tv(eta, n).unwrap();
            assert!((r.tv_state_error - z).abs() < 1e-12, "{} vs {z}", r.tv_state_error);
        }
    }

    #[test]
    fn truncation_exponent_positive() {
        assert!(truncation_exponent(0.5, 0.5, 0.1).unwrap() > 0.0);
        assert!(matches!(truncation_exponent(0.2, 0.8, 0.2), Err(SimError::EpsTooLarge { .. })));
    }

    #[test]
    fn finite_plan_with_two_letters_is_binary() {
        let a = binary(0.4, 0.1);
        let p = finite_plan(&a, 32, 0.05).unwrap();
        assert!(matches!(p.kernel_spec, KernelSpec::LatticeRounding { .. }));
    }
}
