use proptest::prelude::*;
use pzvem::baselines::*;
use pzvem::numerics::{inverse_filter, poly_roots};
use pzvem::Frame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn l1(y: &[f64], a: &[f64]) -> f64 {
    (a.len()..y.len())
        .map(|n| {
            (y[n]
                + a.iter()
                    .enumerate()
                    .map(|(j, c)| c * y[n - j - 1])
                    .sum::<f64>())
            .abs()
        })
        .sum()
}

// The 1-norm optimum of a 2-parameter fit sits where two residuals vanish.
fn vertex_oracle(y: &[f64]) -> f64 {
    let rows: Vec<(f64, f64, f64)> = (2..y.len()).map(|n| (y[n - 1], y[n - 2], -y[n])).collect();
    let mut best = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (p, q, r) = rows[i];
            let (s, t, u) = rows[j];
            let det = p * t - q * s;
            if det.abs() < 1e-12 {
                continue;
            }
            let a = [(r * t - q * u) / det, (p * u - r * s) / det];
            best = best.min(l1(y, &a));
        }
    }
    best
}

#[test]
fn irls_reaches_the_vertex_optimum() {
    let cfg = IrlsConfig {
        max_iters: 500,
        ..IrlsConfig::default()
    };
    for seed in 0..10 {
        let mut e = noise(12, seed);
        e[3] += 6.0;
        let y = inverse_filter(&[1.0, -0.5, 0.3], &e).unwrap();
        let fit = lp1_fit(&y, 2, &cfg).unwrap();
        let oracle = vertex_oracle(&y);
        let got = *fit.objective_trace.last().unwrap();
        assert!(got <= oracle * 1.001, "seed {seed}: {got} vs {oracle}");
        assert!(got >= oracle * (1.0 - 1e-9));
    }
}

#[test]
fn long_ar1_consistency() {
    let y = inverse_filter(&[1.0, -0.9], &noise(10_000, 1)).unwrap();
    let a = lp2(&Frame::new(y, 8000.0).unwrap(), 1).unwrap();
    assert!(a[0] > -0.92 && a[0] < -0.88, "{}", a[0]);
}

#[test]
fn two_stage_recovers_arma_filter() {
    let e = noise(5000, 2);
    let be = pzvem::numerics::fir_apply(&[1.0, 0.5], &e).unwrap();
    let y = inverse_filter(&[1.0, -1.3, 0.65], &be).unwrap();
    let m = ts_ls_pz(&Frame::new(y, 8000.0).unwrap(), 2, 1, Some(20)).unwrap();
    for (got, want) in m.a.iter().zip([-1.3, 0.65]) {
        assert!((got - want).abs() < 0.1, "{:?}", m.a);
    }
    assert!((m.b[0] - 0.5).abs() < 0.1, "{:?}", m.b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lp1_objective_never_increases(seed in 0u64..10_000, k in 1usize..6) {
        let y = inverse_filter(&[1.0, -0.8], &noise(80, seed)).unwrap();
        let fit = lp1_fit(&y, k, &IrlsConfig::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!((fit.objective_trace.last().unwrap() - l1(&y, &fit.a)).abs() < 1e-9);
    }

    #[test]
    fn autocorrelation_lp_is_minimum_phase(seed in 0u64..10_000, k in 1usize..12) {
        let y = noise(64, seed);
        let a = lp2(&Frame::new(y, 8000.0).unwrap(), k).unwrap();
        let mut c = vec![1.0];
        c.extend(a);
        for z in poly_roots(&c).unwrap() {
            prop_assert!(z.norm() < 1.0);
        }
    }
}
