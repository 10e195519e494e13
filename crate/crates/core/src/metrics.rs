//! Evaluation measures: minimum-phase reflection, power cepstra of rational
//! models, truncated cepstral distortion, periodograms and residual sparsity.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Frame, PoleZeroModel};
use crate::numerics::{poly_from_roots, poly_roots};

/// Cepstral order used for distortion figures.
pub const DEFAULT_CEPSTRAL_ORDER: usize = 300;

const UNIT_CIRCLE_GUARD: f64 = 1e-8;

fn roots_of(tail: &[f64]) -> Result<Vec<Complex64>> {
    if tail.is_empty() {
        return Ok(Vec::new());
    }
    let mut c = vec![1.0];
    c.extend_from_slice(tail);
    poly_roots(&c)
}

// Reflects roots outside the unit circle; returns the new roots and the
// product of the moduli of the reflected ones.
fn reflect(roots: &[Complex64]) -> Result<(Vec<Complex64>, f64, bool)> {
    let mut out = Vec::with_capacity(roots.len());
    let mut scale = 1.0;
    let mut changed = false;
    for &z in roots {
        let r = z.norm();
        if (r - 1.0).abs() <= UNIT_CIRCLE_GUARD {
            return Err(Error::Numerical(format!(
                "root {:.6}{:+.6}j lies on the unit circle",
                z.re, z.im
            )));
        }
        if r > 1.0 {
            out.push(1.0 / z.conj());
            scale *= r;
            changed = true;
        } else {
            out.push(z);
        }
    }
    Ok((out, scale, changed))
}

/// Replaces every pole and zero outside the unit circle by its conjugate
/// reciprocal. The gain is adjusted so the magnitude response is unchanged.
pub fn minimum_phase(model: &PoleZeroModel) -> Result<PoleZeroModel> {
    let (poles, pole_scale, poles_changed) = reflect(&roots_of(&model.a)?)?;
    let (zeros, zero_scale, zeros_changed) = reflect(&roots_of(&model.b)?)?;
    let mut out = model.clone();
    if poles_changed {
        out.a = poly_from_roots(&poles)[1..].to_vec();
    }
    if zeros_changed {
        out.b = poly_from_roots(&zeros)[1..].to_vec();
    }
    out.gain = model.gain * zero_scale / pole_scale;
    Ok(out)
}

/// Power cepstrum `c_0..c_S` of a minimum-phase model (one side of the
/// symmetric sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepstralCoefficients {
    pub values: Vec<f64>,
}

impl CepstralCoefficients {
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }

    /// `c_n` for `n ≥ 1`.
    pub fn tail(&self) -> &[f64] {
        &self.values[1..]
    }
}

/// `c_n = (Σ_i p_iⁿ − Σ_i q_iⁿ) / n` over poles `p` and zeros `q`; `c_0 = 2 ln g`.
pub fn power_cepstrum(model: &PoleZeroModel, order: usize) -> Result<CepstralCoefficients> {
    let poles = roots_of(&model.a)?;
    let zeros = roots_of(&model.b)?;
    if let Some(z) = poles.iter().chain(&zeros).find(|z| z.norm() >= 1.0) {
        return Err(Error::invalid(format!(
            "model is not minimum phase (root modulus {:.6})",
            z.norm()
        )));
    }
    let mut values = Vec::with_capacity(order + 1);
    values.push(2.0 * model.gain.ln());
    let mut pp = poles.clone();
    let mut qp = zeros.clone();
    for n in 1..=order {
        let s: Complex64 = pp.iter().sum::<Complex64>() - qp.iter().sum::<Complex64>();
        values.push(s.re / n as f64);
        pp.iter_mut().zip(&poles).for_each(|(acc, p)| *acc *= p);
        qp.iter_mut().zip(&zeros).for_each(|(acc, q)| *acc *= q);
    }
    Ok(CepstralCoefficients { values })
}

/// Truncated power-cepstral distance `Σ_{n=−S..S, n≠0} (c_n − ĉ_n)²` after
/// reflecting both models to minimum phase. The gain term `c_0` is excluded.
pub fn spectral_distortion(
    truth: &PoleZeroModel,
    estimate: &PoleZeroModel,
    order: usize,
) -> Result<f64> {
    let c = power_cepstrum(&minimum_phase(truth)?, order)?;
    let d = power_cepstrum(&minimum_phase(estimate)?, order)?;
    Ok(2.0
        * c.tail()
            .iter()
            .zip(d.tail())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>())
}

/// `|DFT_nfft(y)|² / N` over all `nfft` bins.
pub fn periodogram(frame: &Frame, nfft: usize) -> Result<Vec<f64>> {
    let n = frame.len();
    if nfft < n {
        return Err(Error::dim(format!(
            "nfft {nfft} is shorter than the frame ({n})"
        )));
    }
    if !nfft.is_power_of_two() {
        return Err(Error::dim("nfft must be a power of two"));
    }
    let mut buf: Vec<Complex64> = frame
        .samples
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    Ok(buf.iter().map(|z| z.norm_sqr() / n as f64).collect())
}

/// `‖x‖₁ / (√N ‖x‖₂)`, in `(0, 1]`; smaller is sparser.
pub fn sparsity_ratio(x: &[f64]) -> Result<f64> {
    let l2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x.is_empty() || l2 == 0.0 {
        return Err(Error::invalid("sparsity of a zero vector is undefined"));
    }
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    Ok(l1 / ((x.len() as f64).sqrt() * l2))
}
