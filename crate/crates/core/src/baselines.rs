//! Reference estimators: autocorrelation-method linear prediction, 1-norm
//! linear prediction by iteratively reweighted least squares, and two-stage
//! least-squares pole-zero estimation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Frame, PoleZeroModel};
use crate::numerics::{fir_apply, solve_lls};

/// Solver controls for 1-norm linear prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    pub max_iters: usize,
    /// Residual floor for the weights, relative to `max |y|`.
    pub epsilon: f64,
    /// Relative coefficient-change stopping threshold.
    pub tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            epsilon: 1e-8,
            tol: 1e-8,
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("IRLS needs at least one iteration"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("IRLS epsilon must be positive"));
        }
        Ok(())
    }
}

/// Biased autocorrelation `r(0..=max_lag)`.
pub fn autocorrelation(y: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| y.iter().zip(y.iter().skip(lag)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Solves the Toeplitz normal equations `Σ_j a_j r(|i−j|) = −r(i)` by the
/// Levinson-Durbin recursion. Returns `a_1..a_k` and the final prediction
/// error power.
pub fn levinson_durbin(r: &[f64], k: usize) -> Result<(Vec<f64>, f64)> {
    if r.len() <= k {
        return Err(Error::dim("autocorrelation is shorter than the order"));
    }
    if !(r[0] > 0.0) {
        return Err(Error::invalid("zero autocorrelation at lag 0"));
    }
    let mut a = vec![0.0; k];
    let mut err = r[0];
    for i in 1..=k {
        let acc = r[i] + (1..i).map(|j| a[j - 1] * r[i - j]).sum::<f64>();
        let reflection = -acc / err;
        if !reflection.is_finite() || reflection.abs() >= 1.0 {
            // Perfectly predictable: higher orders stay zero.
            break;
        }
        let prev = a.clone();
        for j in 1..i {
            a[j - 1] = prev[j - 1] + reflection * prev[i - j - 1];
        }
        a[i - 1] = reflection;
        err *= 1.0 - reflection * reflection;
        if err <= r[0] * 1e-15 {
            break;
        }
    }
    Ok((a, err))
}

/// 2-norm linear prediction by the autocorrelation method.
pub fn lp2(frame: &Frame, k: usize) -> Result<Vec<f64>> {
    let y = &frame.samples;
    if y.len() <= k {
        return Err(Error::dim(format!("need more than {k} samples")));
    }
    let r = autocorrelation(y, k);
    Ok(levinson_durbin(&r, k)?.0)
}

/// Row `n` (for `n >= start`) holds `[y(n−1), .., y(n−k)]`.
fn lagged_rows(y: &[f64], k: usize, start: usize) -> DMatrix<f64> {
    DMatrix::from_fn(y.len() - start, k, |row, col| {
        let n = row + start;
        y[n - col - 1]
    })
}

/// 2-norm linear prediction by the covariance method: least squares over
/// samples `k..N`.
pub fn covariance_lp(y: &[f64], k: usize) -> Result<Vec<f64>> {
    if y.len() <= k {
        return Err(Error::dim(format!("need more than {k} samples")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let design = lagged_rows(y, k, k);
    let target: Vec<f64> = y[k..].iter().map(|v| -v).collect();
    solve_lls(&design, &target)
}

/// Prediction residual `y(n) + Σ a_j y(n−j)` with the first `k` samples
/// zeroed, as produced by covariance-type estimators.
pub fn covariance_residual(y: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let mut taps = vec![1.0];
    taps.extend_from_slice(a);
    let mut r = fir_apply(&taps, y)?;
    r.iter_mut().take(a.len()).for_each(|v| *v = 0.0);
    Ok(r)
}

/// Coefficients and objective history of a 1-norm fit.
#[derive(Debug, Clone)]
pub struct Lp1Fit {
    pub a: Vec<f64>,
    /// `Σ |residual|` of each accepted iterate, starting with the 2-norm solution.
    pub objective_trace: Vec<f64>,
}

fn l1_objective(y: &[f64], a: &[f64]) -> f64 {
    let k = a.len();
    (k..y.len())
        .map(|n| {
            let pred: f64 = a.iter().enumerate().map(|(j, c)| c * y[n - j - 1]).sum();
            (y[n] + pred).abs()
        })
        .sum()
}

/// 1-norm linear prediction: minimizes `Σ_n |y(n) + Σ a_j y(n−j)|` over
/// `n = k..N` by iteratively reweighted least squares.
pub fn lp1(frame: &Frame, k: usize, cfg: &IrlsConfig) -> Result<Vec<f64>> {
    Ok(lp1_fit(&frame.samples, k, cfg)?.a)
}

pub fn lp1_fit(y: &[f64], k: usize, cfg: &IrlsConfig) -> Result<Lp1Fit> {
    cfg.validate()?;
    let mut a = covariance_lp(y, k)?;
    let mut objective = l1_objective(y, &a);
    let mut trace = vec![objective];
    if k == 0 {
        return Ok(Lp1Fit {
            a,
            objective_trace: trace,
        });
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.epsilon * peak.max(f64::MIN_POSITIVE);
    let design = lagged_rows(y, k, k);
    let rows = design.nrows();

    for _ in 1..cfg.max_iters {
        let weights: Vec<f64> = (0..rows)
            .map(|row| {
                let n = row + k;
                let pred: f64 = a.iter().enumerate().map(|(j, c)| c * y[n - j - 1]).sum();
                1.0 / (y[n] + pred).abs().max(floor)
            })
            .collect();
        let mut weighted = design.clone();
        let mut target = vec![0.0; rows];
        for row in 0..rows {
            let s = weights[row].sqrt();
            weighted.row_mut(row).scale_mut(s);
            target[row] = -y[row + k] * s;
        }
        let next = solve_lls(&weighted, &target)?;
        let next_obj = l1_objective(y, &next);
        if next_obj > objective {
            break;
        }
        let change = next
            .iter()
            .zip(&a)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        let size = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        a = next;
        objective = next_obj;
        trace.push(objective);
        if change <= cfg.tol * size.max(1.0) {
            break;
        }
    }
    Ok(Lp1Fit {
        a,
        objective_trace: trace,
    })
}

/// Default long-AR order for the two-stage estimator: `min(4(k+l), N/4)`.
pub fn default_long_order(n: usize, k: usize, l: usize) -> usize {
    (4 * (k + l)).min(n / 4)
}

/// Second stage of the two-stage estimator: joint least squares for `a`, `b`
/// in `y(n) + Σ a_j y(n−j) − Σ b_i x(n−i) = x(n)` over rows `start..N`,
/// where `x` is an excitation estimate (`b_0 = 1` is known).
pub fn ts_ls_stage2(
    y: &[f64],
    excitation: &[f64],
    k: usize,
    l: usize,
    start: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    if excitation.len() != n {
        return Err(Error::dim("excitation length differs from frame length"));
    }
    if start < k.max(l) || start >= n {
        return Err(Error::dim("invalid first regression row"));
    }
    let rows = n - start;
    let design = DMatrix::from_fn(rows, k + l, |row, col| {
        let t = row + start;
        if col < k {
            y[t - col - 1]
        } else {
            -excitation[t - (col - k) - 1]
        }
    });
    let target: Vec<f64> = (start..n).map(|t| excitation[t] - y[t]).collect();
    let theta = solve_lls(&design, &target)?;
    Ok((theta[..k].to_vec(), theta[k..].to_vec()))
}

/// Two-stage least-squares pole-zero estimate. `long_order` defaults to
/// [`default_long_order`].
pub fn ts_ls_pz(
    frame: &Frame,
    k: usize,
    l: usize,
    long_order: Option<usize>,
) -> Result<PoleZeroModel> {
    let y = &frame.samples;
    let n = y.len();
    let (a, b) = if l == 0 {
        (covariance_lp(y, k)?, Vec::new())
    } else {
        let p = long_order.unwrap_or_else(|| default_long_order(n, k, l));
        if !(n > p && p > k + l) {
            return Err(Error::dim(format!(
                "two-stage estimator needs N > long order > k + l (N={n}, long order={p})"
            )));
        }
        let long = covariance_lp(y, p)?;
        let excitation = covariance_residual(y, &long)?;
        let start = k.max(p + l);
        if n - start < k + l {
            return Err(Error::Rank("too few rows for the second stage".into()));
        }
        ts_ls_stage2(y, &excitation, k, l, start)?
    };
    PoleZeroModel::new(a, b, 1.0)?.with_frame_gain(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::poly_roots;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn frame(y: Vec<f64>) -> Frame {
        Frame::new(y, 8000.0).unwrap()
    }

    #[test]
    fn lp2_long_ar1() {
        let w = noise(10_000, 1);
        let mut y = vec![0.0; w.len()];
        for n in 0..w.len() {
            y[n] = w[n] + if n > 0 { 0.9 * y[n - 1] } else { 0.0 };
        }
        let a = lp2(&frame(y), 1).unwrap();
        assert!((-0.92..=-0.88).contains(&a[0]), "{a:?}");
    }

    #[test]
    fn lp2_impulse_and_closed_form() {
        let mut y = vec![0.0; 16];
        y[0] = 1.0;
        assert_eq!(lp2(&frame(y), 1).unwrap(), vec![0.0]);
        let y = vec![1.0, 2.0, -1.0, 0.5];
        let r = autocorrelation(&y, 1);
        let a = lp2(&frame(y), 1).unwrap();
        assert!((a[0] + r[1] / r[0]).abs() < 1e-15);
    }

    #[test]
    fn levinson_order_two_matches_direct_solve() {
        let r = [1.0, 0.5, 0.25];
        let (a, _) = levinson_durbin(&r, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let direct = m.try_inverse().unwrap() * nalgebra::DVector::from_vec(vec![-0.5, -0.25]);
        assert!((a[0] - direct[0]).abs() < 1e-14 && (a[1] - direct[1]).abs() < 1e-14);
    }

    #[test]
    fn lp2_rejects_silence() {
        assert!(matches!(
            lp2(&frame(vec![0.0; 8]), 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn lp2_is_minimum_phase() {
        for seed in 0..10 {
            let y = noise(240, seed);
            let a = lp2(&frame(y), 10).unwrap();
            let mut c = vec![1.0];
            c.extend(a);
            assert!(poly_roots(&c).unwrap().iter().all(|z| z.norm() < 1.0));
        }
    }

    #[test]
    fn lp1_exact_ar1() {
        let y: Vec<f64> = (0..40).map(|n| 0.8f64.powi(n)).collect();
        let a = lp1(&frame(y), 1, &IrlsConfig::default()).unwrap();
        assert!((a[0] + 0.8).abs() < 1e-6);
    }

    #[test]
    fn lp1_starts_from_covariance_solution() {
        let y = noise(60, 3);
        let cfg = IrlsConfig {
            max_iters: 1,
            ..IrlsConfig::default()
        };
        let a = lp1(&frame(y.clone()), 3, &cfg).unwrap();
        assert_eq!(a, covariance_lp(&y, 3).unwrap());
    }

    #[test]
    fn lp1_objective_never_increases() {
        for seed in 0..5 {
            let fit = lp1_fit(&noise(120, seed), 4, &IrlsConfig::default()).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn ts_ls_without_zeros_is_covariance_lp() {
        let y = noise(200, 5);
        let m = ts_ls_pz(&frame(y.clone()), 4, 0, None).unwrap();
        assert_eq!(m.a, covariance_lp(&y, 4).unwrap());
        assert!(m.b.is_empty());
    }

    #[test]
    fn ts_ls_stage2_with_true_excitation() {
        let (a_true, b_true) = ([-1.2, 0.5], [0.4]);
        let e = noise(300, 9);
        let bx = fir_apply(&[1.0, b_true[0]], &e).unwrap();
        let y = crate::numerics::inverse_filter(&[1.0, a_true[0], a_true[1]], &bx).unwrap();
        let (a, b) = ts_ls_stage2(&y, &e, 2, 1, 2).unwrap();
        assert!((a[0] - a_true[0]).abs() < 1e-8 && (a[1] - a_true[1]).abs() < 1e-8);
        assert!((b[0] - b_true[0]).abs() < 1e-8);
    }

    #[test]
    fn ts_ls_generative_arma() {
        let (a_true, b_true) = ([-1.2, 0.5], [0.4]);
        let e = noise(5000, 11);
        let bx = fir_apply(&[1.0, b_true[0]], &e).unwrap();
        let y = crate::numerics::inverse_filter(&[1.0, a_true[0], a_true[1]], &bx).unwrap();
        let m = ts_ls_pz(&frame(y), 2, 1, Some(20)).unwrap();
        assert!((m.a[0] - a_true[0]).abs() < 0.1 && (m.a[1] - a_true[1]).abs() < 0.1);
        assert!((m.b[0] - b_true[0]).abs() < 0.1);
    }

    #[test]
    fn ts_ls_checks_orders() {
        assert!(ts_ls_pz(&frame(noise(20, 1)), 5, 5, Some(30)).is_err());
    }
}
