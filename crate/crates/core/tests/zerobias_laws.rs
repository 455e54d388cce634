use fishersim::zerobias::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn battery() -> Vec<(&'static str, Law)> {
    let three = DiscreteLaw1D::new(vec![(-1.0, 0.3), (0.2, 0.5), (1.0, 0.2)]).unwrap();
    let mu = three.mean();
    vec![
        ("bernoulli", DiscreteLaw1D::centered_bernoulli(0.3).unwrap().into()),
        ("three-atom", three.affine(1.0, -mu).unwrap().into()),
        ("normal", Density1D::normal(0.0, 2.0).unwrap().into()),
        ("uniform", Density1D::uniform(-1.5, 1.5).unwrap().into()),
        ("laplace", Density1D::laplace(0.0, 0.7).unwrap().into()),
    ]
}

#[test]
fn covariance_identity_on_polynomials() {
    for (name, law) in battery() {
        for j in 0..=5i32 {
            let r = cov_identity_check(&law, |t| t.powi(j), |t| if j == 0 { 0.0 } else { j as f64 * t.powi(j - 1) })
                .unwrap();
            assert!(r < 1e-7, "{name} t^{j}: residual {r}");
        }
    }
}

#[test]
fn zero_bias_integrates_to_one() {
    for (name, law) in battery() {
        let w = zero_bias(&law).unwrap();
        let total = w.integrate(|_| 1.0);
        assert!((total - 1.0).abs() < 1e-8, "{name}: {total}");
    }
}

#[test]
fn random_three_atom_supports() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let xs: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ms: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = ms.iter().sum();
        let law = DiscreteLaw1D::new(xs.iter().zip(&ms).map(|(&x, &m)| (x, m / s)).collect()).unwrap();
        let w = zero_bias(&law.clone().into()).unwrap();
        let (lo, hi) = w.support();
        assert!(lo >= law.min() && hi <= law.max());
        for i in 0..200 {
            let x = -4.0 + 8.0 * i as f64 / 200.0;
            if x < law.min() || x > law.max() {
                assert_eq!(w.eval(x), 0.0);
            }
        }
        assert!((w.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sum_lemma_matches_direct_transform() {
    let laws = [
        DiscreteLaw1D::centered_bernoulli(0.3).unwrap(),
        {
            let l = DiscreteLaw1D::new(vec![(-1.0, 0.25), (0.5, 0.5), (2.0, 0.25)]).unwrap();
            let m = l.mean();
            l.affine(1.0, -m).unwrap()
        },
    ];
    for x in &laws {
        for n in 1..=4 {
            let lemma = sum_zero_bias(x, n).unwrap();
            let s = x.convolution_power(n).unwrap();
            let direct = zero_bias(&s.clone().into()).unwrap();
            let (lo, hi) = (s.min() - 0.5, s.max() + 0.5);
            for i in 0..=2000 {
                let t = lo + (hi - lo) * (i as f64 + 0.318) / 2000.0;
                assert!((lemma.eval(t) - direct.eval(t)).abs() < 1e-8, "n={n} t={t}");
            }
            // Mean of the zero-bias law is E S³ / (2 V(S)).
            let m = lemma.integrate(|t| t);
            let expect = s.expect(|t| t.powi(3)) / (2.0 * s.variance());
            assert!((m - expect).abs() < 1e-10, "{m} vs {expect}");
        }
    }
}

#[test]
fn tail_classification() {
    let cauchy = Density1D::student_t(1.0, 1.0).unwrap();
    let r = tail_condition_check(&cauchy).unwrap();
    assert_eq!(r.template, TailTemplate::Poly);
    assert!((r.alphas[0] - 2.0).abs() < 0.05 && (r.alphas[1] - 2.0).abs() < 0.05, "{r:?}");
    assert!(!r.finite);

    let t5 = Density1D::student_t(5.0, (3.0f64 / 5.0).sqrt()).unwrap();
    let r = tail_condition_check(&t5).unwrap();
    assert_eq!(r.template, TailTemplate::Poly);
    assert!(r.alphas.iter().all(|a| (a - 6.0).abs() < 0.1), "{r:?}");
    assert!(r.finite);
    let w = w_variance_functional(&t5, 1.0).unwrap();
    assert!(w.value.is_finite() && w.value > 1.0, "{w:?}");

    let lap = Density1D::laplace(0.0, 1.0).unwrap();
    let r = tail_condition_check(&lap).unwrap();
    assert_eq!(r.template, TailTemplate::Exp);
    assert!(r.alphas.iter().all(|a| (a - 1.0).abs() < 0.02), "{r:?}");
    assert!(!r.finite);
}

#[test]
fn bounded_support_functional_is_finite() {
    let a = 3f64.sqrt();
    let u = Density1D::uniform(-a, a).unwrap();
    let w = w_variance_functional(&u, 1.0).unwrap();
    // h(l) = (3 - l²)/2 on [-√3, √3]; E h² = 6/5.
    assert!((w.value - 1.2).abs() < 1e-9, "{w:?}");
}

#[test]
fn two_term_variance_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mk = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(1..=3usize);
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = w.iter().sum();
            GaussianMixture {
                weights: w.iter().map(|x| x / s).collect(),
                means: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
                sds: (0..k).map(|_| rng.random_range(0.4..1.2)).collect(),
            }
            .standardized()
        };
        let (x1, x2) = (mk(&mut rng), mk(&mut rng));
        let th: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let (a1, a2) = (th.cos(), th.sin());
        let s = GaussianMixture::combine(a1, &x1, a2, &x2);
        let t1 = zero_bias_ratio_variance(&x1.density().unwrap()).unwrap().unwrap();
        let t2 = zero_bias_ratio_variance(&x2.density().unwrap()).unwrap().unwrap();
        let ts = zero_bias_ratio_variance(&s.density().unwrap()).unwrap().unwrap();
        assert!(ts <= a1.powi(4) * t1 + a2.powi(4) * t2 + 1e-6, "{ts} {t1} {t2} {a1}");
    }
}
