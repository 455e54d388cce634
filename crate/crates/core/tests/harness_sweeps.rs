use fishersim::harness::*;
use fishersim::measures::LocalData;
use fishersim::tangent_sim::{binary_gaussian_plan, finite_plan, identity_plan};

const GRID: [usize; 9] = [16, 32, 64, 128, 256, 512, 1024, 2048, 4096];

fn binary() -> LocalData {
    LocalData::from_vecs(vec![0.7, 0.3], vec![0.3, -0.3]).unwrap()
}

fn uniform3() -> LocalData {
    LocalData::from_vecs(vec![1.0 / 3.0; 3], vec![-0.1, 0.0, 0.1]).unwrap()
}

#[test]
fn binary_family_rate() {
    let a = binary();
    let r = convergence_sweep(|n| binary_gaussian_plan(&a, n), &GRID, SweepMode::Exact, Metric::State).unwrap();
    assert!(r.within_certificate());
    assert!(r.fitted_slope().unwrap() <= -0.45, "{:?}", r.fit);
    assert!(r.fit_r2().unwrap() > 0.9);
    let t = convergence_sweep(|n| binary_gaussian_plan(&a, n), &GRID, SweepMode::Exact, Metric::Tangent).unwrap();
    assert!(t.within_certificate());
    // (2C' + 3|α|)/n^{1/4} with C' = 2/σ and |α| the dominant constant.
    assert!((t.certified_fit.slope.unwrap() + 0.25).abs() < 1e-9, "{:?}", t.certified_fit);
}

#[test]
fn finite_family_rate() {
    let a = uniform3();
    let r = convergence_sweep(|n| finite_plan(&a, n, 0.05), &GRID, SweepMode::Exact, Metric::State).unwrap();
    assert!(r.within_certificate());
    assert!(r.fitted_slope().unwrap() <= -0.2, "{:?}", r.fit);
    let t = convergence_sweep(|n| finite_plan(&a, n, 0.05), &GRID, SweepMode::Exact, Metric::Tangent).unwrap();
    assert!(t.within_certificate());
    // Truncation terms decay like exp(-mC), so over this grid the certified
    // tangent falls faster than n^{-1/4}.
    let s = t.certified_fit.slope.unwrap();
    assert!(s <= -0.25 + 1e-9, "{s}");
}

#[test]
fn zero_error_family_is_degenerate() {
    let a = binary();
    let r = convergence_sweep(|n| identity_plan(&a, n), &[4, 8, 16, 32], SweepMode::Exact, Metric::State).unwrap();
    assert!(r.fit.degenerate && r.fitted_slope().is_none());
    assert!(r.rows.iter().all(|row| row.exact == Some(0.0)));
}

#[test]
fn sweep_argument_checks() {
    let a = binary();
    let f = |n| binary_gaussian_plan(&a, n);
    assert_eq!(convergence_sweep(f, &[16, 32, 64], SweepMode::Exact, Metric::State), Err(HarnessError::TooFewPoints(3)));
    assert_eq!(convergence_sweep(f, &[16, 8, 64, 128], SweepMode::Exact, Metric::State), Err(HarnessError::NotAscending));
}

#[test]
fn csv_is_deterministic_across_thread_counts() {
    let a = binary();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            convergence_sweep(
                |n| binary_gaussian_plan(&a, n),
                &[16, 64, 256, 1024],
                SweepMode::Both { samples: 30_000, seed: 0x5EED },
                Metric::State,
            )
            .unwrap()
            .to_csv()
            .unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
    assert!(one.starts_with("n,exact,certified,mc,ci_lo,ci_hi\n"));
    assert_eq!(one.lines().count(), 5);
}

#[test]
fn calibration_contract() {
    let a = binary();
    let zero = mc_calibration(&identity_plan(&a, 64).unwrap(), 20, 1000, 1).unwrap();
    assert_eq!(zero.state_coverage, 1.0);
    assert!(zero.within_contract());

    let plan = binary_gaussian_plan(&a, 256).unwrap();
    let full = mc_calibration(&plan, 100, 20_000, 2).unwrap();
    assert!(full.within_contract(), "{full:?}");
    let half = mc_calibration(&plan, 100, 10_000, 3).unwrap();
    let ratio = half.mean_state_half_width / full.mean_state_half_width;
    assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.15, "{ratio}");
    let ratio = half.mean_tangent_half_width / full.mean_tangent_half_width;
    assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.15, "{ratio}");
}
