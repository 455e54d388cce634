use fishersim::measures::LocalData;
use fishersim::numeric::linear_fit;
use fishersim::tangent_sim::*;
use fishersim::zerobias::Density1D;
use proptest::prelude::*;

fn binary(eta: f64, d: f64) -> LocalData {
    LocalData::from_vecs(vec![1.0 - eta, eta], vec![-d, d]).unwrap()
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Oracle: binomial masses from log-gamma and Gaussian cells from the CDF,
/// both on the unstandardized score lattice.
fn oracle_binary_tv(p1: f64, alpha: f64, n: usize) -> f64 {
    let sd = alpha.abs() * (n as f64 * p1 * (1.0 - p1)).sqrt();
    let mut pts: Vec<(f64, f64)> = (0..=n)
        .map(|m| {
            let b = (ln_choose(n, m) + m as f64 * p1.ln() + (n - m) as f64 * (1.0 - p1).ln()).exp();
            (alpha * (m as f64 - n as f64 * p1), b)
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut tv = 0.0;
    for i in 0..pts.len() {
        let lo = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (pts[i - 1].0 + pts[i].0) };
        let hi = if i + 1 == pts.len() { f64::INFINITY } else { 0.5 * (pts[i].0 + pts[i + 1].0) };
        let g = phi_cdf(hi / sd) - phi_cdf(lo / sd);
        tv += (pts[i].1 - g).abs();
    }
    tv
}

#[test]
fn binary_state_error_regression_baseline() {
    // p = (0.7, 0.3), δ = (0.3, -0.3): α = -0.3/0.7 - 0.3/0.3.
    let a = LocalData::from_vecs(vec![0.7, 0.3], vec![0.3, -0.3]).unwrap();
    let plan = binary_gaussian_plan(&a, 1024).unwrap();
    let r = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
    let alpha = -0.3 / 0.3 - 0.3 / 0.7;
    let oracle = oracle_binary_tv(0.3, alpha, 1024);
    assert!((r.tv_state_error - oracle).abs() < 1e-9, "{} vs {oracle}", r.tv_state_error);
    // Frozen from the oracle above.
    assert!((oracle - BASELINE_1024).abs() < 1e-9, "{oracle}");
}

const BASELINE_1024: f64 = 0.006_866_320_338_076_624;

#[test]
fn binary_bound_grid() {
    for i in 1..=9 {
        let eta = i as f64 / 10.0;
        let sigma = (eta * (1.0 - eta)).sqrt();
        for &n in &[16usize, 64, 256, 1024, 4096] {
            let tv = exact_binomial_gaussian_tv(eta, n).unwrap();
            assert!(tv <= 1.0 / ((n as f64).sqrt() * sigma), "eta={eta} n={n} tv={tv}");
            let plan = binary_gaussian_plan(&binary(eta, 0.3), n).unwrap().evaluated(EvalMode::Exact).unwrap();
            assert!(plan.within_certificate(), "{:?}", plan.error_state);
            let ex = plan.error_state.exact.as_ref().unwrap();
            assert!((ex.tv_state_error - tv).abs() < 1e-12);
        }
    }
}

#[test]
fn binary_small_cases() {
    // n = 1, η = ½: cells (-∞, 0] and (0, ∞) each carry ½.
    assert!(exact_binomial_gaussian_tv(0.5, 1).unwrap().abs() < 1e-15);
    // n = 1 with certificate still valid.
    let plan = binary_gaussian_plan(&binary(0.5, 0.25), 1).unwrap().evaluated(EvalMode::Exact).unwrap();
    assert!(plan.within_certificate());
    let c = plan.certified().unwrap();
    assert!(c.constants["closed_form_bound"] == c.constants["closed_form_constant"]);
    assert!(matches!(binary_gaussian_plan(&binary(0.0, 0.0), 4), Err(SimError::Degenerate(_))));
    assert!(matches!(binary_gaussian_plan(&binary(0.3, 0.0), 4), Err(SimError::ZeroTangent)));
    assert!(matches!(exact_binomial_gaussian_tv(0.5, 2_000_000), Err(SimError::Overflow(_))));
}

#[test]
fn binary_slope_and_lemma() {
    let ns = [16usize, 64, 256, 1024, 4096];
    for &eta in &[0.2, 0.5, 0.7] {
        let mut xs = vec![];
        let mut ys = vec![];
        for &n in &ns {
            let plan = binary_gaussian_plan(&binary(eta, 0.4), n).unwrap();
            let lc = lemma_check(&plan).unwrap();
            assert!(lc.tangent_error <= lc.bound, "{lc:?}");
            let r = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
            xs.push((n as f64).ln());
            ys.push(r.tv_state_error.ln());
        }
        let (slope, _, _) = linear_fit(&xs, &ys);
        assert!(slope <= -0.45, "eta={eta} slope={slope}");
    }
}

#[test]
fn monte_carlo_calibration() {
    let plan = binary_gaussian_plan(&binary(0.3, 0.3), 64).unwrap();
    let exact = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
    let mut cover = (0, 0);
    for seed in 0..100u64 {
        let r = evaluate_plan_error(&plan, EvalMode::MonteCarlo { samples: 20_000, seed }).unwrap();
        let (s, t) = (r.state_ci.unwrap(), r.tangent_ci.unwrap());
        cover.0 += (s[0] <= exact.tv_state_error && exact.tv_state_error <= s[1]) as usize;
        cover.1 += (t[0] <= exact.tv_tangent_error && exact.tv_tangent_error <= t[1]) as usize;
    }
    assert!(cover.0 >= 93 && cover.1 >= 93, "{cover:?}");
}

#[test]
fn monte_carlo_is_thread_independent() {
    let plan = binary_gaussian_plan(&binary(0.4, 0.2), 100).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate_plan_error(&plan, EvalMode::MonteCarlo { samples: 50_000, seed: 9 }).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn identity_plan_has_zero_error() {
    let a = LocalData::from_vecs(vec![0.2, 0.3, 0.5], vec![0.1, -0.05, -0.05]).unwrap();
    let p = identity_plan(&a, 10).unwrap();
    let r = evaluate_plan_error(&p, EvalMode::Exact).unwrap();
    assert_eq!((r.tv_state_error, r.tv_tangent_error), (0.0, 0.0));
}

fn uniform3(e: f64) -> LocalData {
    LocalData::from_vecs(vec![1.0 / 3.0; 3], vec![e, 0.0, -e]).unwrap()
}

#[test]
fn finite_exponent_matches_chain() {
    let a = uniform3(0.1);
    let j = fishersim::fisher::fisher_info(&a);
    let mut last = f64::INFINITY;
    for &eps in &[0.1, 0.05, 0.01] {
        let plan = finite_plan(&a, 4096, eps).unwrap();
        // Independent evaluation: stage a splits letter 2 from {0,1}
        // (p(1) = 2/3); stage b is applied to a fraction 2/3 + eps.
        let ja = fishersim::fisher::fisher_info(
            &LocalData::from_vecs(vec![1.0 / 3.0, 2.0 / 3.0], vec![-0.1, 0.1]).unwrap(),
        );
        let jb = fishersim::fisher::fisher_info(&LocalData::from_vecs(vec![0.5, 0.5], vec![-0.075, 0.075]).unwrap());
        let f = jb * eps;
        assert!((ja + 2.0 / 3.0 * jb - j).abs() < 1e-12);
        let units = plan.program_units().unwrap();
        assert!((units - 4096.0 * (j + f)).abs() < 1e-9, "{units}");
        assert!(f < last);
        last = f;
    }
    assert!(last < 0.01 * j);
}

#[test]
fn finite_eps_too_large() {
    let a = LocalData::from_vecs(vec![0.5, 0.4, 0.1], vec![0.05, 0.0, -0.05]).unwrap();
    assert!(matches!(finite_plan(&a, 16, 0.2), Err(SimError::EpsTooLarge { stage: 0, .. })));
}

/// Independent oracle for small k = 3 plans: the count law of the first m of
/// `keep` exchangeable outputs is hypergeometric given their total.
fn finite_oracle(a: &LocalData, n: usize, eps: f64) -> (f64, f64) {
    let (p, d) = (a.probs(), a.weights());
    let l: Vec<f64> = p.iter().zip(d).map(|(p, d)| d / p).collect();
    let pa1 = p[0] + p[1];
    let alpha_a = (d[0] + d[1]) / pa1 - d[2] / p[2];
    let pb1 = p[0] / pa1;
    let lb: Vec<f64> = (0..2).map(|x| l[x] - (d[0] + d[1]) / pa1).collect();
    let alpha_b = lb[0] - lb[1];
    let keep = ((n as f64 * (pa1 + eps)).floor() as usize).min(n);
    let cells = |p1: f64, alpha: f64, m: usize| -> Vec<(f64, f64, f64)> {
        // (binomial, gaussian cell, gaussian first moment) indexed by count.
        let sd = alpha.abs() * (m as f64 * p1 * (1.0 - p1)).sqrt();
        let pts: Vec<f64> = (0..=m).map(|k| alpha * (k as f64 - m as f64 * p1)).collect();
        (0..=m)
            .map(|k| {
                let b = (ln_choose(m, k) + k as f64 * p1.ln() + (m - k) as f64 * (1.0 - p1).ln()).exp();
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for (kk, &x) in pts.iter().enumerate() {
                    if kk == k {
                        continue;
                    }
                    let mid = 0.5 * (x + pts[k]);
                    if x < pts[k] {
                        lo = lo.max(mid);
                    } else {
                        hi = hi.min(mid);
                    }
                }
                let g = phi_cdf(hi / sd) - phi_cdf(lo / sd);
                let pdf = |z: f64| if z.is_finite() { (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() } else { 0.0 };
                (b, g, sd * (pdf(lo / sd) - pdf(hi / sd)))
            })
            .collect()
    };
    let ca = cells(pa1, alpha_a, n);
    let cb = cells(pb1, alpha_b, keep);
    let hyper = |j: usize, m: usize, r: usize| -> f64 {
        if j > r || m - j > keep - r {
            0.0
        } else {
            (ln_choose(r, j) + ln_choose(keep - r, m - j) - ln_choose(keep, m)).exp()
        }
    };
    let (mut s, mut t) = (0.0, 0.0);
    let trunc_p: f64 = (keep + 1..=n).map(|m| ca[m].1).sum();
    let trunc_t: f64 = (keep + 1..=n).map(|m| ca[m].2).sum();
    for m in 0..=n {
        for j in 0..=m {
            let lv = j as f64 * l[0] + (m - j) as f64 * l[1] + (n - m) as f64 * l[2];
            let tgt = ca[m].0 * (ln_choose(m, j) + j as f64 * pb1.ln() + (m - j) as f64 * (1.0 - pb1).ln()).exp();
            let (mut sim, mut sim_t) = (0.0, 0.0);
            if m <= keep {
                for r in 0..=keep {
                    let h = hyper(j, m, r);
                    sim += ca[m].1 * cb[r].1 * h;
                    sim_t += (ca[m].2 * cb[r].1 + ca[m].1 * cb[r].2) * h;
                }
            }
            if m == 0 {
                sim += trunc_p;
                sim_t += trunc_t;
            }
            s += (sim - tgt).abs();
            t += (sim_t - lv * tgt).abs();
        }
    }
    (s, t / (n as f64).sqrt())
}

#[test]
fn finite_exact_matches_hypergeometric_oracle() {
    let a = LocalData::from_vecs(vec![0.25, 0.35, 0.4], vec![0.2, -0.05, -0.15]).unwrap();
    for &(n, eps) in &[(1usize, 0.1), (5, 0.05), (12, 0.1), (30, 0.02)] {
        let plan = finite_plan(&a, n, eps).unwrap();
        let r = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
        let (s, t) = finite_oracle(&a, n, eps);
        assert!((r.tv_state_error - s).abs() < 1e-10, "n={n}: {} vs {s}", r.tv_state_error);
        assert!((r.tv_tangent_error - t).abs() < 1e-10, "n={n}: {} vs {t}", r.tv_tangent_error);
    }
}

#[test]
fn finite_family_certified_and_decaying() {
    let a = uniform3(0.1);
    let mut xs = vec![];
    let mut ys = vec![];
    for &n in &[16usize, 64, 256, 1024, 4096] {
        let plan = finite_plan(&a, n, 0.05).unwrap().evaluated(EvalMode::Exact).unwrap();
        assert!(plan.within_certificate(), "n={n}: {:?}", plan.error_state);
        xs.push((n as f64).ln());
        ys.push(plan.error_state.exact.unwrap().tv_state_error.ln());
    }
    let (slope, _, _) = linear_fit(&xs, &ys);
    assert!(slope <= -0.2, "{slope}");
}

#[test]
fn four_letter_exact_unsupported() {
    let a = LocalData::from_vecs(vec![0.25; 4], vec![0.1, 0.0, 0.0, -0.1]).unwrap();
    let plan = finite_plan(&a, 8, 0.05).unwrap();
    assert!(matches!(evaluate_plan_error(&plan, EvalMode::Exact), Err(SimError::Unsupported(_))));
    let mc = evaluate_plan_error(&plan, EvalMode::MonteCarlo { samples: 4000, seed: 1 }).unwrap();
    assert!(mc.aggregated);
}

#[test]
fn continuous_normal_is_exact() {
    let plan = continuous_plan(&Density1D::standard_normal(), 64).unwrap().evaluated(EvalMode::Exact).unwrap();
    let c = plan.certified().unwrap();
    assert!(c.state < 1e-6, "{c:?}");
    let r = plan.error_state.exact.as_ref().unwrap();
    assert!(r.tv_state_error < 1e-9, "{r:?}");
    assert!(plan.within_certificate());
}

#[test]
fn continuous_uniform_against_triangle() {
    // n = 2: the sum of two uniforms on [-√3, √3] is triangular.
    let s = 3f64.sqrt();
    let plan = continuous_plan(&Density1D::uniform(-s, s).unwrap(), 2).unwrap();
    let r = evaluate_plan_error(&plan, EvalMode::Exact).unwrap();
    let tri = |x: f64| ((2.0 * s - x.abs()) / (4.0 * s * s)).max(0.0);
    let gauss = |x: f64| (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
    let h = 1e-4;
    let mut oracle = 0.0;
    let mut x = -20.0 + 0.5 * h;
    while x < 20.0 {
        oracle += (tri(x) - gauss(x)).abs() * h;
        x += h;
    }
    // Trapezoid error at the kinks of |p_S - φ| is O(h²).
    assert!((r.tv_state_error - oracle).abs() < 1e-4, "{} vs {oracle}", r.tv_state_error);
}

#[test]
fn continuous_certificate_rate() {
    let s = 3f64.sqrt();
    let u = Density1D::uniform(-s, s).unwrap();
    let mut prev: Option<f64> = None;
    for &n in &[16usize, 64, 256, 1024] {
        let plan = continuous_plan(&u, n).unwrap().evaluated(EvalMode::Exact).unwrap();
        assert!(plan.within_certificate(), "n={n}: {:?}", plan.error_state);
        let b16 = continuous_plan(&u, 16 * n).unwrap().certified().unwrap().state;
        let b = plan.certified().unwrap().state;
        assert!((b / b16 - 2.0).abs() < 1e-9, "{b} {b16}");
        if let Some(p) = prev {
            assert!(b < p);
        }
        prev = Some(b);
    }
    let cauchy = Density1D::student_t(1.0, 1.0).unwrap();
    assert!(continuous_plan(&cauchy, 4).is_err());
}

#[test]
fn smoothing_plan_exponent_and_error() {
    let a = binary(0.5, 0.5);
    assert!((fishersim::fisher::fisher_info(&a) - 1.0).abs() < 1e-15);
    let plan = gaussian_by_iid_plan(&a, 256, 0.1).unwrap();
    let Resource::Gaussian { units, .. } = plan.target else { panic!() };
    assert!((units - 256.0 / 1.01).abs() < 1e-9);
    // With noise comparable to the score spread the fitted tail exponent is
    // the Gaussian one.
    let wide = gaussian_by_iid_plan(&a, 16, 1.0).unwrap();
    let c = wide.certified().unwrap();
    for key in ["tail_alpha_left", "tail_alpha_right"] {
        assert!((c.constants[key] - 2.0).abs() < 0.1, "{key}: {}", c.constants[key]);
    }
    let plan = plan.evaluated(EvalMode::Exact).unwrap();
    assert!(plan.within_certificate(), "{:?}", plan.error_state);
    for &eps in &[1e-2, 1e-4, 1e-6] {
        assert!((smoothing_units(16, 1.0, eps) - 16.0).abs() <= 16.0 * eps * eps + 1e-12);
    }
    // Very small noise leaves near-empty valleys between the score atoms.
    assert!(matches!(gaussian_by_iid_plan(&a, 16, 1e-3), Err(SimError::InfiniteFunctional)));
}

#[test]
fn composition_sums_certificates() {
    let a = binary(0.5, 0.5);
    let b = binary(0.3, 0.2);
    let n = 128;
    let p1 = gaussian_by_iid_plan(&a, n, 0.5).unwrap();
    let p2 = binary_gaussian_plan(&b, n).unwrap();
    let (c1, c2) = (p1.certified().unwrap().clone(), p2.certified().unwrap().clone());
    let single = compose_plans(vec![p2.clone()]).unwrap();
    assert_eq!(single.certified(), p2.certified());
    let comp = compose_plans(vec![p1.clone(), p2.clone()]).unwrap();
    let c = comp.certified().unwrap();
    assert!((c.state - (c1.state + c2.state).min(2.0)).abs() < 1e-15);
    assert!((c.tangent - (c1.tangent + c2.tangent)).abs() < 1e-15);

    let exact = evaluate_plan_error(&comp, EvalMode::Exact).unwrap();
    let e1 = evaluate_plan_error(&p1, EvalMode::Exact).unwrap();
    let e2 = evaluate_plan_error(&p2, EvalMode::Exact).unwrap();
    assert!(exact.tv_state_error <= e1.tv_state_error + e2.tv_state_error + 1e-12);

    let mode = EvalMode::MonteCarlo { samples: 40_000, seed: 3 };
    let mc = evaluate_plan_error(&comp, mode).unwrap();
    let m1 = evaluate_plan_error(&p1, mode).unwrap();
    let m2 = evaluate_plan_error(&p2, mode).unwrap();
    let hi = m1.state_ci.unwrap()[1] + m2.state_ci.unwrap()[1];
    assert!(mc.tv_state_error <= hi, "{} vs {hi}", mc.tv_state_error);
    let ci = mc.state_ci.unwrap();
    assert!(ci[0] <= exact.tv_state_error && exact.tv_state_error <= ci[1], "{ci:?} {}", exact.tv_state_error);

    // Not enough Gaussian units for the second stage.
    let strong = binary_gaussian_plan(&binary(0.5, 0.6), n).unwrap();
    assert!(matches!(compose_plans(vec![p1, strong]), Err(SimError::Incompatible(_))));
}

#[test]
fn plan_serializes_with_tagged_kernel() {
    let plan = binary_gaussian_plan(&binary(0.5, 0.25), 8).unwrap().evaluated(EvalMode::Exact).unwrap();
    let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
    assert_eq!(v["kernel_spec"]["rule"], "lattice_rounding");
    assert_eq!(v["program"]["kind"], "gaussian");
    assert!(v["error_state"]["exact"]["tv_state_error"].is_number());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_plans_within_certificate(eta in 0.05f64..0.95, d in 0.01f64..2.0, n in 1usize..600) {
        let a = binary(eta, d);
        let plan = binary_gaussian_plan(&a, n).unwrap().evaluated(EvalMode::Exact).unwrap();
        prop_assert!(plan.within_certificate());
        let r = plan.error_state.exact.as_ref().unwrap();
        let z = exact_binomial_gaussian_tv(eta, n).unwrap();
        prop_assert!((r.tv_state_error - z).abs() < 1e-12);
        prop_assert!(r.tv_state_error >= 0.0 && r.tv_tangent_error >= 0.0);
    }

    #[test]
    fn three_letter_plans_within_certificate(
        w in prop::array::uniform3(0.1f64..1.0),
        t in prop::array::uniform3(-1.0f64..1.0),
        n in 1usize..200,
    ) {
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        let tm: f64 = t.iter().sum::<f64>() / 3.0;
        let d: Vec<f64> = t.iter().map(|x| 0.2 * (x - tm)).collect();
        let a = LocalData::from_vecs(p.clone(), d).unwrap();
        let eps = 0.5 * p[2];
        let plan = finite_plan(&a, n, eps).unwrap().evaluated(EvalMode::Exact).unwrap();
        prop_assert!(plan.within_certificate(), "{:?}", plan.error_state);
    }
}
