//! The zero-bias transform for discrete and continuous laws on the real line,
//! the covariance identity, the sum lemma, the variance functional used by the
//! continuous-score plans, and a tail-shape classifier for densities.
//!
//! For a law `X` with mean `μ` and variance `V`, the zero-bias density is
//! `W(x) = (1/V) ∫_{-∞}^x (μ - y) P(dy)`, which is a probability density
//! supported in the convex hull of the support of `X`.
//!
//! Continuous densities are evaluators with a quadrature window. The window is
//! `center ± cutoff·scale` mapped through `sinh`, so panels are finest near the
//! center and widen geometrically in the tails; breakpoints of the density
//! (kinks, support ends) are always panel edges.

use std::cell::Cell;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::measures::{LocalData, MAX_ATOMS, SUM_TOL};
use crate::numeric::{gl5, linear_fit, normal_pdf};

/// Default quadrature node count.
pub const DEFAULT_NODES: usize = 1 << 14;
/// Default half-width of the quadrature window, in units of the scale.
pub const DEFAULT_CUTOFF: f64 = 12.0;
/// Densities must integrate to one within this tolerance.
pub const DENSITY_TOL: f64 = 1e-8;
/// Below this a density value counts as zero in ratios.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZeroBiasError {
    #[error("law has zero variance")]
    ZeroVariance,
    #[error("law has no atoms")]
    Empty,
    #[error("atom {index} is invalid")]
    BadAtom { index: usize },
    #[error("masses sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("density integrates to {0} over its window, not 1")]
    DensityNotNormalized(f64),
    #[error("law would have {0} atoms, above the limit")]
    TooLarge(f64),
    #[error("J = {j} does not match the second moment {second_moment}")]
    MomentMismatch { j: f64, second_moment: f64 },
    #[error("law is not centered (mean {0})")]
    NotCentered(f64),
    #[error("too few tail points to classify the tail")]
    InsufficientTail,
    #[error("invalid quadrature window")]
    BadWindow,
}

/// A finitely supported law on the real line, atoms sorted by location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteLaw1D {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteLaw1D {
    /// Sorts atoms, merges coincident locations, drops zero masses.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, ZeroBiasError> {
        if atoms.is_empty() {
            return Err(ZeroBiasError::Empty);
        }
        for (index, &(x, m)) in atoms.iter().enumerate() {
            if !x.is_finite() || !m.is_finite() || m < 0.0 {
                return Err(ZeroBiasError::BadAtom { index });
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ZeroBiasError::NotNormalized(total));
        }
        if (total - 1.0).abs() > SUM_TOL {
            atoms.iter_mut().for_each(|a| a.1 /= total);
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            if m == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if (x - last.0).abs() <= 1e-12 * x.abs().max(1.0) => last.1 += m,
                _ => merged.push((x, m)),
            }
        }
        Ok(DiscreteLaw1D { atoms: merged })
    }

    /// Law of the score `δ(x)/p(x)` under `p`.
    pub fn score_law(a: &LocalData) -> Result<Self, ZeroBiasError> {
        let atoms = a.score().into_iter().zip(a.probs().iter().copied()).collect();
        DiscreteLaw1D::new(atoms)
    }

    /// Centered Bernoulli: `-eta` with mass `1-eta`, `1-eta` with mass `eta`.
    pub fn centered_bernoulli(eta: f64) -> Result<Self, ZeroBiasError> {
        DiscreteLaw1D::new(vec![(-eta, 1.0 - eta), (1.0 - eta, eta)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&(x, m)| m * f(x)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.expect(|x| (x - mu) * (x - mu))
    }

    pub fn min(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    /// Law of `a·X + b`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self, ZeroBiasError> {
        DiscreteLaw1D::new(self.atoms.iter().map(|&(x, m)| (a * x + b, m)).collect())
    }

    /// Law of the sum of independent copies of `self` and `other`.
    pub fn convolve(&self, other: &DiscreteLaw1D) -> Result<Self, ZeroBiasError> {
        let size = self.atoms.len() as f64 * other.atoms.len() as f64;
        if size > MAX_ATOMS as f64 {
            return Err(ZeroBiasError::TooLarge(size));
        }
        let mut atoms = Vec::with_capacity(size as usize);
        for &(x, m) in &self.atoms {
            for &(y, w) in &other.atoms {
                atoms.push((x + y, m * w));
            }
        }
        DiscreteLaw1D::new(atoms)
    }

    /// Law of the sum of `n` independent copies.
    pub fn convolution_power(&self, n: usize) -> Result<Self, ZeroBiasError> {
        if n == 0 {
            return DiscreteLaw1D::new(vec![(0.0, 1.0)]);
        }
        let mut out = self.clone();
        for _ in 1..n {
            out = out.convolve(self)?;
        }
        Ok(out)
    }
}

type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A probability density on the line with its quadrature grid.
#[derive(Clone)]
pub struct Density1D {
    f: Evaluator,
    lo: f64,
    hi: f64,
    breakpoints: Vec<f64>,
    center: f64,
    scale: f64,
    nodes: usize,
    cutoff: f64,
}

impl std::fmt::Debug for Density1D {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("Density1D")
            .field("support", &(self.lo, self.hi))
            .field("breakpoints", &self.breakpoints)
            .field("center", &self.center)
            .field("scale", &self.scale)
            .field("nodes", &self.nodes)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl Density1D {
    /// Builds a density and checks that it integrates to one over its window.
    ///
    /// `lo`/`hi` bound the support (may be infinite); `center` and `scale`
    /// place the window; `breakpoints` are points where the density is not
    /// smooth.
    pub fn new<F>(f: F, lo: f64, hi: f64, center: f64, scale: f64, breakpoints: Vec<f64>) -> Result<Self, ZeroBiasError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Density1D::unchecked(Arc::new(f), lo, hi, center, scale, breakpoints)?.checked()
    }

    fn checked(self) -> Result<Self, ZeroBiasError> {
        let total = self.integrate(|_| 1.0);
        if (total - 1.0).abs() > DENSITY_TOL {
            return Err(ZeroBiasError::DensityNotNormalized(total));
        }
        Ok(self)
    }

    fn unchecked(f: Evaluator, lo: f64, hi: f64, center: f64, scale: f64, mut breakpoints: Vec<f64>) -> Result<Self, ZeroBiasError> {
        if !(lo < hi) || !(scale > 0.0) || !center.is_finite() || !scale.is_finite() {
            return Err(ZeroBiasError::BadWindow);
        }
        breakpoints.retain(|b| b.is_finite() && *b > lo && *b < hi);
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Ok(Density1D { f, lo, hi, breakpoints, center, scale, nodes: DEFAULT_NODES, cutoff: DEFAULT_CUTOFF })
    }

    /// Replaces the grid spec (node count and window half-width in scales).
    pub fn with_grid(mut self, nodes: usize, cutoff: f64) -> Self {
        self.nodes = nodes.max(10);
        self.cutoff = cutoff;
        self
    }

    pub fn normal(mean: f64, variance: f64) -> Result<Self, ZeroBiasError> {
        if !(variance > 0.0) {
            return Err(ZeroBiasError::ZeroVariance);
        }
        let s = variance.sqrt();
        Density1D::new(move |x| normal_pdf((x - mean) / s) / s, f64::NEG_INFINITY, f64::INFINITY, mean, s, vec![])
    }

    pub fn standard_normal() -> Self {
        Density1D::normal(0.0, 1.0).expect("standard normal is valid")
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self, ZeroBiasError> {
        if !(a < b) {
            return Err(ZeroBiasError::BadWindow);
        }
        let h = 1.0 / (b - a);
        Density1D::new(move |x| if x >= a && x <= b { h } else { 0.0 }, a, b, 0.5 * (a + b), b - a, vec![])
    }

    /// Laplace law with the given mean and scale parameter `b`.
    pub fn laplace(mean: f64, b: f64) -> Result<Self, ZeroBiasError> {
        if !(b > 0.0) {
            return Err(ZeroBiasError::ZeroVariance);
        }
        let f = move |x: f64| (-(x - mean).abs() / b).exp() / (2.0 * b);
        Density1D::unchecked(Arc::new(f), f64::NEG_INFINITY, f64::INFINITY, mean, b, vec![mean])?
            .with_grid(DEFAULT_NODES, 40.0)
            .checked()
    }

    /// Student t with `nu` degrees of freedom scaled by `s`. The window reaches
    /// far enough that the truncated second moment (or mass, for `nu <= 2`)
    /// is negligible.
    pub fn student_t(nu: f64, s: f64) -> Result<Self, ZeroBiasError> {
        if !(nu > 0.0 && s > 0.0) {
            return Err(ZeroBiasError::BadWindow);
        }
        let c = (libm::lgamma(0.5 * (nu + 1.0)) - libm::lgamma(0.5 * nu)).exp() / (nu * std::f64::consts::PI).sqrt() / s;
        let f = move |x: f64| c * (1.0 + (x / s) * (x / s) / nu).powf(-0.5 * (nu + 1.0));
        let cutoff = if nu > 2.0 { 10f64.powf(12.0 / (nu - 2.0)).clamp(DEFAULT_CUTOFF, 1e12) } else { 1e12 };
        Density1D::unchecked(Arc::new(f), f64::NEG_INFINITY, f64::INFINITY, 0.0, s, vec![])?
            .with_grid(DEFAULT_NODES, cutoff)
            .checked()
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            0.0
        } else {
            (self.f)(x)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// The integration window `[a, b]`.
    pub fn window(&self) -> (f64, f64) {
        let a = (self.center - self.cutoff * self.scale).max(self.lo);
        let b = (self.center + self.cutoff * self.scale).min(self.hi);
        (a, b)
    }

    /// Panel edges: a `sinh`-graded grid over the window merged with the
    /// breakpoints.
    pub fn edges(&self) -> Vec<f64> {
        let (a, b) = self.window();
        let panels = (self.nodes / 5).max(2);
        let ua = ((a - self.center) / self.scale).asinh();
        let ub = ((b - self.center) / self.scale).asinh();
        let mut e: Vec<f64> = (0..=panels)
            .map(|i| {
                let u = ua + (ub - ua) * i as f64 / panels as f64;
                self.center + self.scale * u.sinh()
            })
            .collect();
        e[0] = a;
        e[panels] = b;
        e.extend(self.breakpoints.iter().copied().filter(|&x| x > a && x < b));
        e.sort_by(f64::total_cmp);
        e.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * x.abs().max(1.0));
        e
    }

    /// `∫ g(x) p(x) dx` over the window.
    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        let e = self.edges();
        e.windows(2).map(|w| gl5(w[0], w[1], |x| g(x) * self.eval(x))).sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.integrate(|x| (x - mu) * (x - mu))
    }

    /// Mass lost to the window, `1 - ∫_window p`.
    pub fn truncated_mass(&self) -> f64 {
        1.0 - self.integrate(|_| 1.0)
    }
}

/// Input to [`zero_bias`].
#[derive(Debug, Clone)]
pub enum Law {
    Discrete(DiscreteLaw1D),
    Continuous(Density1D),
}

impl From<DiscreteLaw1D> for Law {
    fn from(d: DiscreteLaw1D) -> Self {
        Law::Discrete(d)
    }
}

impl From<Density1D> for Law {
    fn from(d: Density1D) -> Self {
        Law::Continuous(d)
    }
}

impl Law {
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match self {
            Law::Discrete(d) => d.expect(f),
            Law::Continuous(d) => d.integrate(f),
        }
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.expect(|x| (x - mu) * (x - mu))
    }
}

/// Zero-bias step function of a discrete law: `levels[i]` is the value on
/// `[x_i, x_{i+1})`.
fn discrete_zero_bias_steps(d: &DiscreteLaw1D) -> Result<(Vec<f64>, Vec<f64>), ZeroBiasError> {
    let v = d.variance();
    if !(v > 0.0) {
        return Err(ZeroBiasError::ZeroVariance);
    }
    let mu = d.mean();
    let xs: Vec<f64> = d.atoms.iter().map(|a| a.0).collect();
    let mut levels = Vec::with_capacity(xs.len());
    let (mut left, mut right) = (0.0, 0.0);
    let lefts: Vec<f64> = d
        .atoms
        .iter()
        .map(|&(x, m)| {
            left += (mu - x) * m;
            left
        })
        .collect();
    // The same partial sums from the right avoid cancellation past the mean.
    let mut rights = vec![0.0; xs.len()];
    for i in (0..xs.len()).rev() {
        rights[i] = right;
        let (x, m) = d.atoms[i];
        right += (x - mu) * m;
    }
    for i in 0..xs.len() {
        let c = if xs[i] < mu { lefts[i] } else { rights[i] };
        levels.push((c / v).max(0.0));
    }
    Ok((xs, levels))
}

fn step_eval(xs: &[f64], levels: &[f64], x: f64) -> f64 {
    if x < xs[0] || x >= xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&a| a <= x) - 1;
    levels[i]
}

/// Cumulative tables for the zero-bias density of a continuous law.
struct ContinuousZeroBias {
    edges: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    mu: f64,
    v: f64,
    p: Evaluator,
    lo: f64,
    hi: f64,
}

impl ContinuousZeroBias {
    fn build(d: &Density1D) -> Result<Self, ZeroBiasError> {
        let mu = d.mean();
        let v = d.variance();
        if !(v > 0.0) {
            return Err(ZeroBiasError::ZeroVariance);
        }
        let edges = d.edges();
        let p = d.clone();
        let g = move |y: f64| (mu - y) * p.eval(y);
        let cells: Vec<f64> = edges.windows(2).map(|w| gl5(w[0], w[1], &g)).collect();
        let mut left = vec![0.0; edges.len()];
        for i in 0..cells.len() {
            left[i + 1] = left[i] + cells[i];
        }
        let mut right = vec![0.0; edges.len()];
        for i in (0..cells.len()).rev() {
            right[i] = right[i + 1] - cells[i];
        }
        let src = d.clone();
        Ok(ContinuousZeroBias {
            edges,
            left,
            right,
            mu,
            v,
            p: Arc::new(move |x| src.eval(x)),
            lo: d.lo,
            hi: d.hi,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let e = &self.edges;
        if x <= e[0] || x >= e[e.len() - 1] {
            return 0.0;
        }
        let i = e.partition_point(|&a| a <= x) - 1;
        let g = |y: f64| (self.mu - y) * (self.p)(y);
        let c = if x <= self.mu {
            self.left[i] + gl5(e[i], x, g)
        } else {
            self.right[i + 1] - gl5(x, e[i + 1], g)
        };
        (c / self.v).max(0.0)
    }
}

/// Zero-bias density of a discrete or continuous law.
pub fn zero_bias(law: &Law) -> Result<Density1D, ZeroBiasError> {
    match law {
        Law::Discrete(d) => {
            let (xs, levels) = discrete_zero_bias_steps(d)?;
            let (lo, hi) = (d.min(), d.max());
            let (center, scale) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let bps = xs.clone();
            let f = move |x: f64| step_eval(&xs, &levels, x);
            // Steps are exact on panels between atoms; a coarse grid suffices.
            Ok(Density1D::unchecked(Arc::new(f), lo, hi, center, scale, bps)?.with_grid(10, 1.0))
        }
        Law::Continuous(d) => {
            let z = Arc::new(ContinuousZeroBias::build(d)?);
            let (lo, hi) = (z.lo, z.hi);
            let zz = z.clone();
            let out = Density1D::unchecked(Arc::new(move |x| zz.eval(x)), lo, hi, d.center, d.scale, d.breakpoints.clone())?
                .with_grid(d.nodes, d.cutoff);
            Ok(out)
        }
    }
}

/// `|E[X f(X)] - V(X) E f'(X°)|` for a centered law.
pub fn cov_identity_check<F, DF>(law: &Law, f: F, df: DF) -> Result<f64, ZeroBiasError>
where
    F: Fn(f64) -> f64,
    DF: Fn(f64) -> f64,
{
    let w = zero_bias(law)?;
    let lhs = law.expect(|x| x * f(x));
    let rhs = law.variance() * w.integrate(df);
    Ok((lhs - rhs).abs())
}

/// Zero-bias density of the sum of `n` independent copies of a centered
/// discrete law, built as `W_X * p_X^{*(n-1)}`.
pub fn sum_zero_bias(x: &DiscreteLaw1D, n: usize) -> Result<Density1D, ZeroBiasError> {
    if n == 0 {
        return Err(ZeroBiasError::Empty);
    }
    let (xs, levels) = discrete_zero_bias_steps(x)?;
    let rest = x.convolution_power(n - 1)?;
    let size = rest.atoms.len() as f64 * xs.len() as f64;
    if size > MAX_ATOMS as f64 {
        return Err(ZeroBiasError::TooLarge(size));
    }
    let shifts = rest.atoms.clone();
    let lo = x.min() + rest.min();
    let hi = x.max() + rest.max();
    let mut bps: Vec<f64> = Vec::with_capacity(size as usize);
    for &(y, _) in &shifts {
        bps.extend(xs.iter().map(|a| a + y));
    }
    let f = move |s: f64| shifts.iter().map(|&(y, q)| q * step_eval(&xs, &levels, s - y)).sum::<f64>();
    Ok(Density1D::unchecked(Arc::new(f), lo, hi, 0.5 * (lo + hi), 0.5 * (hi - lo), bps)?.with_grid(10, 1.0))
}

/// Value of the variance functional `E[h(L)²]`,
/// `h(l) = ∫_{-∞}^l (-t) p_L(t) dt / (J p_L(l))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WVariance {
    #[serde(serialize_with = "finite_or_null")]
    pub value: f64,
    /// The density vanishes inside its support, so the ratio is unreliable.
    pub unreliable: bool,
    /// Probability mass outside the quadrature window.
    pub truncated_mass: f64,
}

/// Evaluates the variance functional by quadrature. Returns `+∞` when a tail
/// is polynomial with exponent at most 5, where the integral diverges.
pub fn w_variance_functional(p_l: &Density1D, j: f64) -> Result<WVariance, ZeroBiasError> {
    let m1 = p_l.mean();
    let m2 = p_l.integrate(|t| t * t);
    if (m2 - j).abs() > 1e-6 * j.max(1.0) {
        return Err(ZeroBiasError::MomentMismatch { j, second_moment: m2 });
    }
    if m1.abs() > 1e-6 * m2.sqrt().max(1.0) {
        return Err(ZeroBiasError::NotCentered(m1));
    }
    if let Ok(report) = tail_condition_check(p_l) {
        if report.template == TailTemplate::Poly && report.alphas.iter().any(|&a| a <= 5.0) {
            return Ok(WVariance { value: f64::INFINITY, unreliable: false, truncated_mass: p_l.truncated_mass() });
        }
    }
    let z = ContinuousZeroBias::build(p_l)?;
    let edges = p_l.edges();
    let (a, b) = p_l.window();
    let inner = 0.5 * (b - a).min(p_l.cutoff * p_l.scale);
    let unreliable = Cell::new(false);
    let mut value = 0.0;
    for w in edges.windows(2) {
        value += gl5(w[0], w[1], |l| {
            let p = p_l.eval(l);
            if p <= DENSITY_FLOOR {
                if (l - p_l.center).abs() < inner && l > p_l.lo && l < p_l.hi {
                    unreliable.set(true);
                }
                return 0.0;
            }
            let h = z.eval(l) * z.v / (j * p);
            h * h * p
        });
    }
    Ok(WVariance { value, unreliable: unreliable.get(), truncated_mass: p_l.truncated_mass() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TailTemplate {
    /// `p(t) ≈ c |t|^{-α}`.
    Poly,
    /// `p(t) ≈ c exp(-b |t|^α)`.
    Exp,
    /// Support bounded on both sides.
    Bounded,
}

/// Tail classification of a density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    /// The sufficient tail condition for a finite variance functional holds.
    pub finite: bool,
    #[serde(serialize_with = "option_finite_or_null")]
    pub value: Option<f64>,
    pub template: TailTemplate,
    /// Fitted exponents for the left and right tails; `+∞` for a bounded side.
    #[serde(serialize_with = "pair_finite_or_null")]
    pub alphas: [f64; 2],
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn option_finite_or_null<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        _ => s.serialize_none(),
    }
}

fn pair_finite_or_null<S: Serializer>(v: &[f64; 2], s: S) -> Result<S::Ok, S::Error> {
    let pair: [Option<f64>; 2] = [v[0], v[1]].map(|x| x.is_finite().then_some(x));
    pair.serialize(s)
}

/// Slack allowed on fitted exponents when comparing to the thresholds.
const ALPHA_SLACK: f64 = 0.05;

/// Fits `-ln p` on one tail against `c + α ln r` and `c + b r^α`, with `r`
/// the distance from the center. Returns `None` for a bounded side.
fn fit_tail(d: &Density1D, side: f64) -> Result<Option<(TailTemplate, f64)>, ZeroBiasError> {
    let edge = if side < 0.0 { d.lo } else { d.hi };
    if edge.is_finite() {
        return Ok(None);
    }
    let mut r = 3.0 * d.scale;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    while r <= 1e8 * d.scale {
        let p = d.eval(d.center + side * r);
        if !(p > DENSITY_FLOOR) {
            break;
        }
        pts.push((r / d.scale, -p.ln()));
        r *= 1.05;
    }
    if pts.len() < 6 {
        return Err(ZeroBiasError::InsufficientTail);
    }
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let sse = |xs: &[f64]| {
        let (b, a, _) = linear_fit(xs, &ys);
        let e: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        (b, e)
    };
    let lnr: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let (alpha_poly, e_poly) = sse(&lnr);
    let mut best_exp = (f64::NAN, f64::INFINITY);
    let mut alpha = 0.25;
    while alpha <= 4.0 + 1e-12 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0.powf(alpha)).collect();
        let (b, e) = sse(&xs);
        if b > 0.0 && e < best_exp.1 {
            best_exp = (alpha, e);
        }
        alpha += 0.005;
    }
    if e_poly <= best_exp.1 {
        Ok(Some((TailTemplate::Poly, alpha_poly)))
    } else {
        Ok(Some((TailTemplate::Exp, best_exp.0)))
    }
}

/// Classifies both tails and checks the sufficient conditions: bounded
/// support, polynomial decay with exponent at least 4, or `exp(-|t|^α)`
/// decay with `α ≥ 2`.
pub fn tail_condition_check(d: &Density1D) -> Result<TailReport, ZeroBiasError> {
    let sides = [fit_tail(d, -1.0)?, fit_tail(d, 1.0)?];
    let mut alphas = [f64::INFINITY; 2];
    let mut finite = true;
    let mut template = TailTemplate::Bounded;
    for (i, s) in sides.iter().enumerate() {
        if let Some((t, a)) = *s {
            alphas[i] = a;
            let ok = match t {
                TailTemplate::Poly => a >= 4.0 - ALPHA_SLACK,
                TailTemplate::Exp => a >= 2.0 - ALPHA_SLACK,
                TailTemplate::Bounded => true,
            };
            finite &= ok;
            template = match (template, t) {
                (TailTemplate::Poly, _) | (_, TailTemplate::Poly) => TailTemplate::Poly,
                _ => TailTemplate::Exp,
            };
        }
    }
    Ok(TailReport { finite, value: None, template, alphas })
}

/// A finite Gaussian mixture, used for laws whose convolutions stay in closed
/// form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GaussianMixture {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    /// Affine image with mean 0 and variance 1.
    pub fn standardized(&self) -> GaussianMixture {
        let (mu, sd) = (self.mean(), self.variance().sqrt());
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| (m - mu) / sd).collect(),
            sds: self.sds.iter().map(|s| s / sd).collect(),
        }
    }

    /// Law of `a1 X1 + a2 X2` for independent mixtures.
    pub fn combine(a1: f64, x1: &GaussianMixture, a2: f64, x2: &GaussianMixture) -> GaussianMixture {
        let mut out = GaussianMixture { weights: vec![], means: vec![], sds: vec![] };
        for i in 0..x1.weights.len() {
            for j in 0..x2.weights.len() {
                out.weights.push(x1.weights[i] * x2.weights[j]);
                out.means.push(a1 * x1.means[i] + a2 * x2.means[j]);
                out.sds.push(((a1 * x1.sds[i]).powi(2) + (a2 * x2.sds[j]).powi(2)).sqrt());
            }
        }
        out
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * normal_pdf((x - m) / s) / s)
            .sum()
    }

    pub fn density(&self) -> Result<Density1D, ZeroBiasError> {
        let m = self.clone();
        let (mu, sd) = (self.mean(), self.variance().sqrt());
        // Window wide enough for the narrowest far component.
        let reach = self
            .means
            .iter()
            .zip(&self.sds)
            .map(|(mm, s)| ((mm - mu).abs() + DEFAULT_CUTOFF * s) / sd)
            .fold(DEFAULT_CUTOFF, f64::max);
        // Narrow components get their own panel edges every half width.
        let mut bps = Vec::new();
        for (mm, s) in self.means.iter().zip(&self.sds) {
            if *s < 0.1 * sd {
                bps.extend((-24..=24).map(|j| mm + 0.5 * j as f64 * s));
            }
        }
        Density1D::unchecked(Arc::new(move |x| m.pdf(x)), f64::NEG_INFINITY, f64::INFINITY, mu, sd, bps)?
            .with_grid(DEFAULT_NODES, reach)
            .checked()
    }
}

/// `E (W(X)/p(X) - 1)²` for a density, computed as `∫ W²/p - 1` over the
/// points where `p` is above the floor. Returns `None` when `W/p` is not
/// bounded on the grid (out of hypothesis).
pub fn zero_bias_ratio_variance(d: &Density1D) -> Result<Option<f64>, ZeroBiasError> {
    let z = ContinuousZeroBias::build(d)?;
    let edges = d.edges();
    let bounded = Cell::new(true);
    let mut acc = 0.0;
    for w in edges.windows(2) {
        acc += gl5(w[0], w[1], |x| {
            let p = d.eval(x);
            if p <= DENSITY_FLOOR {
                if z.eval(x) > DENSITY_FLOOR {
                    bounded.set(false);
                }
                return 0.0;
            }
            let r = z.eval(x) / p - 1.0;
            r * r * p
        });
    }
    Ok(bounded.get().then_some(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_bernoulli_gives_uniform() {
        for eta in [0.1, 0.3, 0.5, 0.9] {
            let b = DiscreteLaw1D::centered_bernoulli(eta).unwrap();
            let w = zero_bias(&b.into()).unwrap();
            assert_eq!(w.support(), (-eta, 1.0 - eta));
            for i in 0..1000 {
                let x = -eta + (i as f64 + 0.5) / 1000.0;
                assert!((w.eval(x) - 1.0).abs() < 1e-12);
            }
            assert!((w.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_is_a_fixed_point() {
        let n = Density1D::standard_normal();
        let w = zero_bias(&n.clone().into()).unwrap();
        for i in -60..=60 {
            let x = i as f64 * 0.1;
            assert!((w.eval(x) - n.eval(x)).abs() < 1e-10, "{x}");
        }
    }

    #[test]
    fn support_stays_in_hull() {
        let law = DiscreteLaw1D::new(vec![(-1.0, 0.2), (0.5, 0.5), (2.0, 0.3)]).unwrap();
        let w = zero_bias(&law.into()).unwrap();
        assert_eq!(w.support(), (-1.0, 2.0));
        assert_eq!(w.eval(-1.0001), 0.0);
        assert_eq!(w.eval(2.0), 0.0);
    }

    #[test]
    fn identity_linear_and_constant() {
        let law: Law = DiscreteLaw1D::centered_bernoulli(0.3).unwrap().into();
        assert!(cov_identity_check(&law, |_| 1.0, |_| 0.0).unwrap() < 1e-15);
        assert!(cov_identity_check(&law, |t| t, |_| 1.0).unwrap() < 1e-15);
        assert!(cov_identity_check(&law, |t| t.powi(3), |t| 3.0 * t * t).unwrap() < 1e-12);
    }

    #[test]
    fn sum_lemma_single_term() {
        let x = DiscreteLaw1D::centered_bernoulli(0.3).unwrap();
        let a = sum_zero_bias(&x, 1).unwrap();
        let b = zero_bias(&x.clone().into()).unwrap();
        for i in 0..100 {
            let t = -0.3 + i as f64 / 100.0;
            assert_eq!(a.eval(t), b.eval(t));
        }
    }

    #[test]
    fn w_variance_normal_is_one() {
        let w = w_variance_functional(&Density1D::standard_normal(), 1.0).unwrap();
        assert!((w.value - 1.0).abs() < 1e-9, "{w:?}");
        assert!(!w.unreliable);
        assert!(matches!(
            w_variance_functional(&Density1D::standard_normal(), 2.0),
            Err(ZeroBiasError::MomentMismatch { .. })
        ));
    }

    #[test]
    fn tail_templates() {
        let r = tail_condition_check(&Density1D::standard_normal()).unwrap();
        assert_eq!(r.template, TailTemplate::Exp);
        assert!(r.finite);
        assert!((r.alphas[0] - 2.0).abs() < 0.02 && (r.alphas[1] - 2.0).abs() < 0.02, "{r:?}");
        let u = tail_condition_check(&Density1D::uniform(-1.0, 1.0).unwrap()).unwrap();
        assert_eq!(u.template, TailTemplate::Bounded);
        assert!(u.finite);
        let json = serde_json::to_string(&u).unwrap();
        assert_eq!(json, r#"{"finite":true,"value":null,"template":"bounded","alphas":[null,null]}"#);
    }
}
