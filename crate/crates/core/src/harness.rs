//! Convergence sweeps over plan families, log-log rate fits, and Monte Carlo
//! interval calibration against exact errors.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::linear_fit;
use crate::tangent_sim::{evaluate_plan_error, EvalMode, ErrorReport, SimError, SimulationPlan, CERT_SLACK};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("a sweep needs at least 4 sizes, got {0}")]
    TooFewPoints(usize),
    #[error("sizes must be strictly ascending")]
    NotAscending,
    #[error("plan has no certificate")]
    Uncertified,
    #[error("exact errors are unavailable: {0}")]
    ExactUnavailable(SimError),
    #[error("{0} must be positive")]
    BadParameter(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("csv: {0}")]
    Csv(String),
}

/// Which error a sweep records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    State,
    Tangent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
    Both { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub exact: Option<f64>,
    pub certified: f64,
    pub mc: Option<f64>,
    pub ci: Option<[f64; 2]>,
}

/// Least-squares fit of `ln error` against `ln n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    /// True when the smallest size was dropped because `R² < 0.9`.
    pub excluded_smallest: bool,
    /// True when some error is zero or not finite, so no fit is reported.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub metric: Metric,
    pub rows: Vec<SweepRow>,
    /// Fit of the exact column, or of the Monte Carlo column without exact values.
    pub fit: RateFit,
    pub certified_fit: RateFit,
}

impl SweepResult {
    pub fn fitted_slope(&self) -> Option<f64> {
        self.fit.slope
    }

    pub fn fit_r2(&self) -> Option<f64> {
        self.fit.r2
    }

    /// Every exact value is within its certified bound.
    pub fn within_certificate(&self) -> bool {
        self.rows.iter().all(|r| r.exact.is_none_or(|e| e <= r.certified + CERT_SLACK))
    }

    /// CSV with header `n,exact,certified,mc,ci_lo,ci_hi`; missing values
    /// are empty fields.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| HarnessError::Csv(e.to_string());
        w.write_record(["n", "exact", "certified", "mc", "ci_lo", "ci_hi"]).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                opt(r.exact),
                r.certified.to_string(),
                opt(r.mc),
                opt(r.ci.map(|c| c[0])),
                opt(r.ci.map(|c| c[1])),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Csv(e.to_string()))
    }
}

/// Fits `ln y = a + slope · ln n`. Drops the smallest `n` once when
/// `R² < 0.9` and at least four points remain.
pub fn fit_rate(ns: &[usize], ys: &[f64]) -> RateFit {
    if ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) || ns.len() < 2 {
        return RateFit { slope: None, r2: None, excluded_smallest: false, degenerate: true };
    }
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, _, r2) = linear_fit(&lx, &ly);
    if r2 < 0.9 && ns.len() > 4 {
        let (slope, _, r2) = linear_fit(&lx[1..], &ly[1..]);
        return RateFit { slope: Some(slope), r2: Some(r2), excluded_smallest: true, degenerate: false };
    }
    RateFit { slope: Some(slope), r2: Some(r2), excluded_smallest: false, degenerate: false }
}

fn pick(r: &ErrorReport, m: Metric) -> (f64, Option<[f64; 2]>) {
    match m {
        Metric::State => (r.tv_state_error, r.state_ci),
        Metric::Tangent => (r.tv_tangent_error, r.tangent_ci),
    }
}

/// Seed of the Monte Carlo run at size `n`.
pub fn row_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds and evaluates the plan at each size; sizes are evaluated in
/// parallel and merged in grid order.
pub fn convergence_sweep<G>(family: G, n_grid: &[usize], mode: SweepMode, metric: Metric) -> Result<SweepResult, HarnessError>
where
    G: Fn(usize) -> Result<SimulationPlan, SimError> + Sync,
{
    if n_grid.len() < 4 {
        return Err(HarnessError::TooFewPoints(n_grid.len()));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(HarnessError::NotAscending);
    }
    let rows = n_grid
        .par_iter()
        .map(|&n| {
            let plan = family(n)?;
            let cert = plan.certified().ok_or(HarnessError::Uncertified)?;
            let certified = match metric {
                Metric::State => cert.state,
                Metric::Tangent => cert.tangent,
            };
            let exact = match mode {
                SweepMode::Exact | SweepMode::Both { .. } => Some(pick(&evaluate_plan_error(&plan, EvalMode::Exact)?, metric).0),
                SweepMode::MonteCarlo { .. } => None,
            };
            let (mc, ci) = match mode {
                SweepMode::MonteCarlo { samples, seed } | SweepMode::Both { samples, seed } => {
                    let r = evaluate_plan_error(&plan, EvalMode::MonteCarlo { samples, seed: row_seed(seed, n) })?;
                    let (v, ci) = pick(&r, metric);
                    (Some(v), ci)
                }
                SweepMode::Exact => (None, None),
            };
            Ok(SweepRow { n, exact, certified, mc, ci })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let measured: Vec<f64> = rows.iter().map(|r| r.exact.or(r.mc).unwrap_or(f64::NAN)).collect();
    let certified: Vec<f64> = rows.iter().map(|r| r.certified).collect();
    Ok(SweepResult { metric, fit: fit_rate(&ns, &measured), certified_fit: fit_rate(&ns, &certified), rows })
}

/// Coverage of the 95% Monte Carlo intervals over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub trials: usize,
    pub samples: usize,
    pub exact_state: f64,
    pub exact_tangent: f64,
    pub state_coverage: f64,
    pub tangent_coverage: f64,
    pub mean_state_half_width: f64,
    pub mean_tangent_half_width: f64,
}

impl CalibrationReport {
    /// Both coverages inside `[0.90, 0.99]`, or exactly 1 for a zero-error
    /// plan with zero-width intervals.
    pub fn within_contract(&self) -> bool {
        let ok = |c: f64, w: f64| (0.90..=0.99).contains(&c) || (c == 1.0 && w == 0.0);
        ok(self.state_coverage, self.mean_state_half_width) && ok(self.tangent_coverage, self.mean_tangent_half_width)
    }
}

/// Runs `trials` Monte Carlo evaluations with seeds derived from `seed` and
/// counts how often each interval contains the exact value.
pub fn mc_calibration(plan: &SimulationPlan, trials: usize, samples: usize, seed: u64) -> Result<CalibrationReport, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::BadParameter("trials"));
    }
    if samples < 2 {
        return Err(HarnessError::BadParameter("samples"));
    }
    let exact = evaluate_plan_error(plan, EvalMode::Exact).map_err(HarnessError::ExactUnavailable)?;
    let runs = (0..trials)
        .map(|t| evaluate_plan_error(plan, EvalMode::MonteCarlo { samples, seed: row_seed(seed, t) }))
        .collect::<Result<Vec<_>, _>>()?;
    let covers = |ci: Option<[f64; 2]>, v: f64| ci.is_some_and(|c| c[0] <= v && v <= c[1]);
    let half = |ci: Option<[f64; 2]>| ci.map_or(0.0, |c| 0.5 * (c[1] - c[0]));
    let tf = trials as f64;
    Ok(CalibrationReport {
        trials,
        samples,
        exact_state: exact.tv_state_error,
        exact_tangent: exact.tv_tangent_error,
        state_coverage: runs.iter().filter(|r| covers(r.state_ci, exact.tv_state_error)).count() as f64 / tf,
        tangent_coverage: runs.iter().filter(|r| covers(r.tangent_ci, exact.tv_tangent_error)).count() as f64 / tf,
        mean_state_half_width: runs.iter().map(|r| half(r.state_ci)).sum::<f64>() / tf,
        mean_tangent_half_width: runs.iter().map(|r| half(r.tangent_ci)).sum::<f64>() / tf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_law() {
        let ns = [16, 64, 256, 1024];
        let ys: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.25)).collect();
        let f = fit_rate(&ns, &ys);
        assert!((f.slope.unwrap() + 0.25).abs() < 1e-12);
        assert!(!f.excluded_smallest && !f.degenerate);
    }

    #[test]
    fn zero_errors_are_degenerate() {
        let f = fit_rate(&[1, 2, 3, 4], &[0.0; 4]);
        assert!(f.degenerate && f.slope.is_none());
    }

    #[test]
    fn noisy_first_point_is_dropped() {
        let ns = [2, 4, 8, 16, 32, 64];
        let mut ys: Vec<f64> = ns.iter().map(|&n| (n as f64).powf(-0.5)).collect();
        ys[0] = 1e-6;
        let f = fit_rate(&ns, &ys);
        assert!(f.excluded_smallest);
        assert!((f.slope.unwrap() + 0.5).abs() < 1e-12);
    }
}
