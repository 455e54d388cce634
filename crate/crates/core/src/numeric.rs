//! Shared numerical helpers: normal law, binomial tables, Gauss-Legendre
//! panels, and least-squares line fits.

use libm::erfc;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(N(0,1) <= x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(N(0,1) > x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `P(a <= N(0,1) <= b)`, evaluated on the tail closest to the cell so that
/// far-tail cells keep their relative accuracy.
pub fn normal_cell(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// `∫_a^b t φ(t) dt = φ(a) - φ(b)`.
pub fn normal_first_moment_cell(a: f64, b: f64) -> f64 {
    let pa = if a.is_finite() { normal_pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { normal_pdf(b) } else { 0.0 };
    pa - pb
}

/// `ln(i!)` for `i = 0..=n`, accumulated term by term.
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// `Binom(n, eta)` probabilities for `k = 0..=n`.
///
/// Built by the ratio recurrence outward from the mode and normalized at the
/// end, which keeps the relative error of each entry near `n` ulps.
pub fn binomial_pmf(n: usize, eta: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if eta <= 0.0 || eta >= 1.0 {
        out[if eta <= 0.0 { 0 } else { n }] = 1.0;
        return out;
    }
    let odds = eta / (1.0 - eta);
    let mode = (((n + 1) as f64 * eta).floor() as usize).min(n);
    out[mode] = 1.0;
    for k in mode..n {
        out[k + 1] = out[k] * (n - k) as f64 / (k + 1) as f64 * odds;
    }
    for k in (1..=mode).rev() {
        out[k - 1] = out[k] * k as f64 / (n - k + 1) as f64 / odds;
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Five-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
pub const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Five-point Gauss-Legendre rule on `[a, b]`.
pub fn gl5<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    GL5_NODES.iter().zip(GL5_WEIGHTS.iter()).map(|(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Ordinary least squares `y = a + b x`; returns `(slope, intercept, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tails_consistent() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cell(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        let far = normal_cell(10.0, 10.5);
        assert!(far > 0.0 && far < 1e-22);
        assert!((normal_cell(f64::NEG_INFINITY, f64::INFINITY) - 1.0).abs() < 1e-16);
    }

    #[test]
    fn binomial_sums_to_one() {
        for &(n, eta) in &[(1usize, 0.5), (16, 0.1), (4096, 0.9)] {
            let b = binomial_pmf(n, eta);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let b = binomial_pmf(3, 0.5);
        assert!((b[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn gl5_is_exact_on_degree_nine() {
        let v = gl5(-1.0, 2.0, |x| x.powi(9) + x.powi(4));
        let exact = (2f64.powi(10) - 1.0) / 10.0 + (2f64.powi(5) + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-11);
    }
}
