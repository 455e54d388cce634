//! Comparison of finite experiments by randomization: the smallest worst-case
//! L1 error with which one experiment is reproduced from another by a Markov
//! kernel, and its local version at a point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::measures::{l1_distance, FinitePmf, LinearKernelMap, LocalData, MarkovKernel, MeasureError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeficiencyError {
    #[error("experiment needs at least one law")]
    Empty,
    #[error("laws have different supports: {0} and {1}")]
    Support(usize, usize),
    #[error("experiments have {0} and {1} parameters")]
    ThetaMismatch(usize, usize),
    #[error("no kernel maps the base law onto the target law")]
    Infeasible,
    #[error("relaxed state budget must be nonnegative, got {0}")]
    BadBudget(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Laws `p_θ` on a common finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExperimentJson", into = "ExperimentJson")]
pub struct FiniteExperiment {
    laws: Vec<FinitePmf>,
}

#[derive(Serialize, Deserialize)]
struct ExperimentJson {
    thetas: usize,
    support: usize,
    laws: Vec<Vec<f64>>,
}

impl TryFrom<ExperimentJson> for FiniteExperiment {
    type Error = DeficiencyError;
    fn try_from(j: ExperimentJson) -> Result<Self, DeficiencyError> {
        if j.laws.len() != j.thetas {
            return Err(DeficiencyError::ThetaMismatch(j.thetas, j.laws.len()));
        }
        if let Some(l) = j.laws.iter().find(|l| l.len() != j.support) {
            return Err(DeficiencyError::Support(j.support, l.len()));
        }
        FiniteExperiment::from_vecs(j.laws)
    }
}

impl From<FiniteExperiment> for ExperimentJson {
    fn from(e: FiniteExperiment) -> Self {
        ExperimentJson {
            thetas: e.theta_count(),
            support: e.support(),
            laws: e.laws.into_iter().map(|p| p.into_vec()).collect(),
        }
    }
}

impl FiniteExperiment {
    pub fn new(laws: Vec<FinitePmf>) -> Result<Self, DeficiencyError> {
        let Some(first) = laws.first() else { return Err(DeficiencyError::Empty) };
        if let Some(l) = laws.iter().find(|l| l.k() != first.k()) {
            return Err(DeficiencyError::Support(first.k(), l.k()));
        }
        Ok(FiniteExperiment { laws })
    }

    pub fn from_vecs(laws: Vec<Vec<f64>>) -> Result<Self, DeficiencyError> {
        FiniteExperiment::new(laws.into_iter().map(FinitePmf::new).collect::<Result<_, _>>()?)
    }

    pub fn theta_count(&self) -> usize {
        self.laws.len()
    }

    pub fn support(&self) -> usize {
        self.laws[0].k()
    }

    pub fn laws(&self) -> &[FinitePmf] {
        &self.laws
    }

    /// The experiment observed through a Markov kernel.
    pub fn garbled(&self, k: &MarkovKernel) -> Result<Self, DeficiencyError> {
        let laws = self.laws.iter().map(|p| k.map().apply(p.probs())).collect::<Result<Vec<_>, _>>()?;
        FiniteExperiment::from_vecs(laws)
    }
}

/// Optimal value, an optimal kernel, and the per-parameter errors it attains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceResult {
    pub value: f64,
    pub kernel: MarkovKernel,
    pub per_theta: Vec<f64>,
}

/// Variables `Λ(y|x)` at `y·m_in + x`, then the caller's extras.
struct KernelVars {
    out: usize,
    inp: usize,
}

impl KernelVars {
    fn idx(&self, y: usize, x: usize) -> usize {
        y * self.inp + x
    }

    fn count(&self) -> usize {
        self.out * self.inp
    }

    fn stochastic_rows(&self, lp: &mut LinearProgram) {
        for x in 0..self.inp {
            lp.add_row((0..self.out).map(|y| (self.idx(y, x), 1.0)).collect(), Relation::Eq, 1.0);
        }
    }

    /// Adds `target(y) − Σ_x Λ(y|x) src(x) = s⁺_y − s⁻_y` with the split
    /// variables starting at `first`; returns the split indices.
    fn residual_rows(&self, lp: &mut LinearProgram, src: &[f64], target: &[f64], first: usize) -> Vec<usize> {
        let mut splits = Vec::with_capacity(2 * self.out);
        for (y, &t) in target.iter().enumerate() {
            let (sp, sm) = (first + 2 * y, first + 2 * y + 1);
            let mut row: Vec<(usize, f64)> =
                (0..self.inp).filter(|&x| src[x] != 0.0).map(|x| (self.idx(y, x), src[x])).collect();
            row.push((sp, 1.0));
            row.push((sm, -1.0));
            lp.add_row(row, Relation::Eq, t);
            splits.extend([sp, sm]);
        }
        splits
    }

    fn kernel(&self, sol: &[f64]) -> Result<MarkovKernel, DeficiencyError> {
        let mut m = LinearKernelMap::zeros(self.out, self.inp);
        for y in 0..self.out {
            for x in 0..self.inp {
                m.set(y, x, sol[self.idx(y, x)].max(0.0));
            }
        }
        // Column sums are 1 up to the solver tolerance; MarkovKernel renormalizes.
        Ok(MarkovKernel::new(m)?)
    }
}

/// `min_Λ max_θ ‖p_θ − Λ(q_θ)‖₁` over Markov kernels from the support of `f`
/// to the support of `e`. Zero exactly when `e` is a garbling of `f`.
pub fn randomization_distance(e: &FiniteExperiment, f: &FiniteExperiment) -> Result<DistanceResult, DeficiencyError> {
    if e.theta_count() != f.theta_count() {
        return Err(DeficiencyError::ThetaMismatch(e.theta_count(), f.theta_count()));
    }
    let kv = KernelVars { out: e.support(), inp: f.support() };
    let t = kv.count();
    let first_split = t + 1;
    let per_theta = 2 * kv.out;
    let mut lp = LinearProgram::new(first_split + e.theta_count() * per_theta);
    lp.objective[t] = 1.0;
    kv.stochastic_rows(&mut lp);
    for (th, (p, q)) in e.laws.iter().zip(&f.laws).enumerate() {
        let splits = kv.residual_rows(&mut lp, q.probs(), p.probs(), first_split + th * per_theta);
        let mut row: Vec<(usize, f64)> = splits.iter().map(|&s| (s, 1.0)).collect();
        row.push((t, -1.0));
        lp.add_row(row, Relation::Le, 0.0);
    }
    match lp.solve() {
        LpOutcome::Optimal { x, value } => {
            let kernel = kv.kernel(&x)?;
            let per_theta = e
                .laws
                .iter()
                .zip(&f.laws)
                .map(|(p, q)| Ok(l1_distance(p.probs(), &kernel.map().apply(q.probs())?)))
                .collect::<Result<Vec<_>, DeficiencyError>>()?;
            Ok(DistanceResult { value: value.max(0.0), kernel, per_theta })
        }
        LpOutcome::Infeasible { .. } => Err(DeficiencyError::Infeasible),
        LpOutcome::Unbounded => Err(DeficiencyError::Unbounded),
    }
}

/// How the state constraint `p = Λ(q)` is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StateConstraint {
    Exact,
    /// `‖p − Λ(q)‖₁ ≤ budget`.
    Relaxed { budget: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalDeficiency {
    /// `‖δ − Λ(δ′)‖₁` at the optimum.
    pub tangent_error: f64,
    /// `‖p − Λ(q)‖₁` at the optimum.
    pub state_error: f64,
    pub kernel: MarkovKernel,
}

/// `min_Λ ‖δ − Λ(δ′)‖₁` subject to the state constraint, for `e = (p, δ)`
/// and `f = (q, δ′)`. The constant kernel onto `p` always meets the exact
/// constraint, so [`DeficiencyError::Infeasible`] only signals solver
/// failure.
pub fn local_deficiency(
    e: &LocalData,
    f: &LocalData,
    mode: StateConstraint,
) -> Result<LocalDeficiency, DeficiencyError> {
    let kv = KernelVars { out: e.k(), inp: f.k() };
    let n = kv.count();
    let tan_first = n;
    let state_first = n + 2 * kv.out;
    let vars = match mode {
        StateConstraint::Exact => state_first,
        StateConstraint::Relaxed { budget } => {
            if !(budget >= 0.0 && budget.is_finite()) {
                return Err(DeficiencyError::BadBudget(budget));
            }
            state_first + 2 * kv.out
        }
    };
    let mut lp = LinearProgram::new(vars);
    kv.stochastic_rows(&mut lp);
    let splits = kv.residual_rows(&mut lp, f.weights(), e.weights(), tan_first);
    for s in splits {
        lp.objective[s] = 1.0;
    }
    match mode {
        StateConstraint::Exact => {
            for y in 0..kv.out {
                let row = (0..kv.inp).filter(|&x| f.probs()[x] != 0.0).map(|x| (kv.idx(y, x), f.probs()[x])).collect();
                lp.add_row(row, Relation::Eq, e.probs()[y]);
            }
        }
        StateConstraint::Relaxed { budget } => {
            let splits = kv.residual_rows(&mut lp, f.probs(), e.probs(), state_first);
            lp.add_row(splits.iter().map(|&s| (s, 1.0)).collect(), Relation::Le, budget);
        }
    }
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => {
            let kernel = kv.kernel(&x)?;
            let tangent_error = l1_distance(e.weights(), &kernel.map().apply(f.weights())?);
            let state_error = l1_distance(e.probs(), &kernel.map().apply(f.probs())?);
            Ok(LocalDeficiency { tangent_error, state_error, kernel })
        }
        LpOutcome::Infeasible { .. } => Err(DeficiencyError::Infeasible),
        LpOutcome::Unbounded => Err(DeficiencyError::Unbounded),
    }
}
