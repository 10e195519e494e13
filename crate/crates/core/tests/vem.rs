use nalgebra::DMatrix;
use proptest::prelude::*;
use pzvem::baselines::ts_ls_pz;
use pzvem::numerics::inverse_filter;
use pzvem::synthesis::{build_resonator, ResonatorSpec};
use pzvem::vem::*;
use pzvem::Frame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn unit_hyper(k: usize, l: usize, d: usize) -> VemConfig {
    VemConfig {
        hyper_c: 1.0,
        hyper_d: 1.0,
        hyper_e: 1.0,
        hyper_f: 1.0,
        ..VemConfig::with_orders(k, l, d)
    }
}

#[test]
fn single_sample_bound_term_by_term() {
    let mut s = init_state(Frame::new(vec![1.0], 8000.0).unwrap(), unit_hyper(0, 0, 1)).unwrap();
    s.residual = ResidualPosterior::new(vec![0.5], DMatrix::from_element(1, 1, 0.5)).unwrap();
    s.precisions = PrecisionPosteriors {
        alpha_shape: vec![1.0],
        alpha_rate: vec![1.0],
        gamma_shape: 1.0,
        gamma_rate: 1.0,
    };
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let expected = -EULER_GAMMA - 0.5 * ln2pi - 0.25 + 0.5 * 0.5f64.ln();
    assert!(
        (s.elbo() - expected).abs() < 1e-12,
        "{} vs {expected}",
        s.elbo()
    );
}

// log p(y) for one sample with e integrated out:
// y | α, γ ~ N(0, 1/α + 1/γ), α, γ ~ Gamma(1, 1); trapezoid rule in log coordinates.
fn log_evidence(y: f64) -> f64 {
    let (lo, hi, h) = (-30.0, 6.0, 0.01);
    let n = ((hi - lo) / h) as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut total = 0.0;
    for (i, &u) in grid.iter().enumerate() {
        let alpha = u.exp();
        let mut inner = 0.0;
        for (j, &v) in grid.iter().enumerate() {
            let gamma = v.exp();
            let var = 1.0 / alpha + 1.0 / gamma;
            let dens = (-0.5 * y * y / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            inner += w(j) * dens * (-gamma).exp() * gamma;
        }
        total += w(i) * inner * (-alpha).exp() * alpha;
    }
    (total * h * h).ln()
}

#[test]
fn bound_never_exceeds_quadrature_evidence() {
    for y in [0.2, 1.3, 3.0] {
        let evidence = log_evidence(y);
        let mut s = init_state(Frame::new(vec![y], 8000.0).unwrap(), unit_hyper(0, 0, 1)).unwrap();
        for _ in 0..50 {
            let bound = s.sweep().unwrap();
            assert!(
                bound <= evidence + 1e-9,
                "y={y}: bound {bound} > evidence {evidence}"
            );
        }
        let gap = evidence - s.elbo_trace.last().unwrap();
        assert!(gap >= 0.0 && gap < 1.0, "y={y}: gap {gap}");
    }
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn m_steps_are_local_minima() {
    let y: Vec<f64> = inverse_filter(&[1.0, -1.2, 0.6], &noise(120, 3)).unwrap();
    let mut s = init_state(
        Frame::new(y, 8000.0).unwrap(),
        VemConfig::with_orders(3, 2, 4),
    )
    .unwrap();
    for _ in 0..3 {
        s.sweep().unwrap();
    }
    s.residual = s.e_step_residual().unwrap();
    s.a = s.m_step_a().unwrap();
    let base = s.expected_fit_error();
    for i in 0..s.a.len() {
        for delta in [1e-4, -1e-4] {
            let mut t = s.clone();
            t.a[i] += delta;
            assert!(t.expected_fit_error() >= base, "a[{i}] {delta:+}");
        }
    }
    s.b = s.m_step_b().unwrap();
    let base = s.expected_fit_error();
    for i in 0..s.b.len() {
        for delta in [1e-4, -1e-4] {
            let mut t = s.clone();
            t.b[i] += delta;
            assert!(t.expected_fit_error() >= base, "b[{i}] {delta:+}");
        }
    }
}

#[test]
fn gaussian_frame_goes_to_the_noise_component() {
    let model = build_resonator(&ResonatorSpec::nasal_n()).unwrap();
    for seed in 0..5 {
        let y = inverse_filter(&model.denominator(), &noise(240, 100 + seed)).unwrap();
        let energy: f64 = y.iter().map(|v| v * v).sum();
        let r = run_vem(Frame::new(y, 8000.0).unwrap(), VemConfig::default()).unwrap();
        let mu: f64 = r.residual_mean.iter().map(|v| v * v).sum();
        assert!(mu / energy < 0.5, "seed {seed}: {}", mu / energy);
        let mut alphas = r.alpha_means.clone();
        alphas.sort_by(f64::total_cmp);
        let median = alphas[alphas.len() / 2];
        assert!(
            median > 10.0 * r.gamma_mean,
            "seed {seed}: {median} vs {}",
            r.gamma_mean
        );
    }
}

#[test]
fn two_stage_start_uses_the_least_squares_fit() {
    let y = inverse_filter(&[1.0, -0.9, 0.4], &noise(240, 8)).unwrap();
    let frame = Frame::new(y, 8000.0).unwrap();
    let cfg = VemConfig {
        init: InitStrategy::TwoStage,
        ..VemConfig::with_orders(4, 2, 8)
    };
    let s = init_state(frame.clone(), cfg).unwrap();
    let fit = ts_ls_pz(&frame, 4, 2, None).unwrap();
    assert_eq!(s.a, fit.a);
    assert_eq!(s.b, fit.b);
}

#[test]
fn ragged_final_block() {
    let p = BlockPartition::new(240, 7);
    assert_eq!(p.num_blocks(), 35);
    assert_eq!(p.block_len(34), 240 - 7 * 34);
    assert_eq!(p.block_of(239), 34);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn short_frames_have_monotone_bounds(
        y in prop::collection::vec(-2.0..2.0f64, 16..40),
        k in 0usize..3,
        l in 0usize..3,
        d in 1usize..6,
    ) {
        prop_assume!(y.iter().any(|v| v.abs() > 1e-3));
        let cfg = VemConfig { max_iters: 30, ..VemConfig::with_orders(k, l, d) };
        if let Ok(r) = run_vem(Frame::new(y, 8000.0).unwrap(), cfg) {
            for w in r.elbo_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn posterior_shapes_are_fixed_by_the_data_size(n in 8usize..60, d in 1usize..9) {
        let y: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut s = init_state(Frame::new(y, 8000.0).unwrap(), VemConfig::with_orders(1, 1, d)).unwrap();
        s.sweep().unwrap();
        let blocks = BlockPartition::new(n, d);
        for o in 0..blocks.num_blocks() {
            prop_assert_eq!(s.precisions.alpha_shape[o], 1.0 + blocks.block_len(o) as f64 / 2.0);
        }
        prop_assert!((s.precisions.gamma_shape - (1e-6 + n as f64 / 2.0)).abs() < 1e-12);
    }
}
