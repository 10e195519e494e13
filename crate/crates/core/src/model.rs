use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fir_apply, inverse_filter};

/// One analysis window of audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Frame {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::dim("frame has no samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame contains non-finite samples"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Pole-zero speech production filter `gain · B(z) / A(z)` with
/// `A(z) = 1 + Σ a_k z^{-k}` and `B(z) = 1 + Σ b_l z^{-l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleZeroModel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gain: f64,
}

impl PoleZeroModel {
    pub fn new(a: Vec<f64>, b: Vec<f64>, gain: f64) -> Result<Self> {
        let model = Self { a, b, gain };
        model.validate()?;
        Ok(model)
    }

    pub fn identity() -> Self {
        Self {
            a: Vec::new(),
            b: Vec::new(),
            gain: 1.0,
        }
    }

    pub fn all_pole(a: Vec<f64>) -> Self {
        Self {
            a,
            b: Vec::new(),
            gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model coefficients must be finite"));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid("model gain must be positive and finite"));
        }
        Ok(())
    }

    pub fn k_order(&self) -> usize {
        self.a.len()
    }

    pub fn l_order(&self) -> usize {
        self.b.len()
    }

    /// `[1, a_1, .., a_K]`
    pub fn denominator(&self) -> Vec<f64> {
        monic(&self.a)
    }

    /// `[1, b_1, .., b_L]`
    pub fn numerator(&self) -> Vec<f64> {
        monic(&self.b)
    }

    /// Complex response `gain · B(e^{jω}) / A(e^{jω})`.
    pub fn response_at(&self, omega: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -omega);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * zinv + v)
        };
        self.gain * eval(&self.numerator()) / eval(&self.denominator())
    }

    /// `points` magnitude samples in dB uniformly spaced on `[0, fs/2]`,
    /// returned as `(frequency_hz, magnitude_db)` pairs.
    pub fn magnitude_response(&self, sample_rate: f64, points: usize) -> Vec<(f64, f64)> {
        let denom = (points.max(2) - 1) as f64;
        (0..points)
            .map(|i| {
                let frac = i as f64 / denom;
                let omega = std::f64::consts::PI * frac;
                let mag = self.response_at(omega).norm();
                (frac * sample_rate / 2.0, 20.0 * mag.max(1e-300).log10())
            })
            .collect()
    }

    /// Excitation implied by the model: `B⁻¹ A y` with zero initial conditions.
    pub fn inverse_filter(&self, y: &[f64]) -> Result<Vec<f64>> {
        let ay = fir_apply(&self.denominator(), y)?;
        inverse_filter(&self.numerator(), &ay)
    }

    /// Sets the gain to the RMS of the inverse-filtered frame, so a unit-power
    /// excitation driven through the model reproduces the frame's power.
    pub fn with_frame_gain(mut self, y: &[f64]) -> Result<Self> {
        let resid = self.inverse_filter(y)?;
        let rms = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64).sqrt();
        self.gain = if rms.is_finite() && rms > 0.0 {
            rms
        } else {
            1.0
        };
        Ok(self)
    }
}

fn monic(tail: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(tail.len() + 1);
    v.push(1.0);
    v.extend_from_slice(tail);
    v
}
