//! Synthetic voiced frames: an LF glottal-derivative pulse train plus white
//! Gaussian excitation, shaped by a formant/antiformant filter.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PoleZeroModel;
use crate::numerics::{fir_apply, inverse_filter, poly_from_roots};

const NEWTON_STEPS: usize = 100;

/// LF waveform parameters. Timing values are fractions of the pitch period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfParams {
    /// Magnitude of the negative peak at the main excitation instant.
    pub ee: f64,
    pub tp: f64,
    pub te: f64,
    pub ta: f64,
    pub tc: f64,
}

impl Default for LfParams {
    /// Modal phonation.
    fn default() -> Self {
        Self {
            ee: 1.0,
            tp: 0.4554,
            te: 0.575,
            ta: 0.009,
            tc: 1.0,
        }
    }
}

impl LfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ee > 0.0
            && self.tp > 0.0
            && self.tp < self.te
            && self.te <= self.tc
            && self.tc <= 1.0
            && self.ta > 0.0;
        if !ok {
            return Err(Error::invalid(format!(
                "LF timing must satisfy 0 < Tp < Te <= Tc <= 1, Ta > 0, Ee > 0 (got {self:?})"
            )));
        }
        // The open phase has to cross zero before Te to reach −Ee there.
        if self.te >= 2.0 * self.tp {
            return Err(Error::invalid("LF open phase requires Te < 2 Tp"));
        }
        Ok(())
    }
}

/// One period of the LF waveform with its solved shape constants, in time
/// units of the period (`t ∈ [0, 1)`).
#[derive(Debug, Clone)]
pub struct LfWaveform {
    params: LfParams,
    /// Growth rate of the open phase.
    pub alpha: f64,
    /// Return-phase decay rate.
    pub epsilon: f64,
    /// Open-phase amplitude.
    pub e0: f64,
    omega: f64,
}

impl LfWaveform {
    /// Solves the return-phase constant and the open-phase growth so that the
    /// waveform reaches `−Ee` at `Te` and the `samples`-point sampled period
    /// sums to zero.
    pub fn solve(params: &LfParams, samples: usize) -> Result<Self> {
        params.validate()?;
        if samples < 8 {
            return Err(Error::invalid("pitch period must span at least 8 samples"));
        }
        let epsilon = solve_epsilon(params)?;
        let omega = PI / params.tp;
        let mut wave = Self {
            params: params.clone(),
            alpha: 0.0,
            epsilon,
            e0: 0.0,
            omega,
        };

        let grid: Vec<f64> = (0..samples).map(|n| n as f64 / samples as f64).collect();
        let return_sum: f64 = grid.iter().map(|&t| wave.return_phase(t)).sum();
        let sin_te = (omega * params.te).sin();
        // Open-phase value normalized by −Ee: e^{α(t−Te)} sin(ωt) / sin(ωTe).
        let open = |alpha: f64| -> (f64, f64) {
            grid.iter()
                .filter(|&&t| t <= params.te)
                .fold((0.0, 0.0), |(v, d), &t| {
                    let g =
                        -params.ee * (alpha * (t - params.te)).exp() * (omega * t).sin() / sin_te;
                    (v + g, d + g * (t - params.te))
                })
        };
        let mut alpha = 0.0;
        let mut solved = false;
        for _ in 0..NEWTON_STEPS {
            let (v, d) = open(alpha);
            let resid = v + return_sum;
            if resid.abs() < 1e-13 * params.ee * samples as f64 {
                solved = true;
                break;
            }
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let mut step = resid / d;
            // Damp large steps; the area is exponential in alpha.
            step = step.clamp(-5.0, 5.0);
            alpha -= step;
        }
        if !solved {
            let (v, _) = open(alpha);
            if (v + return_sum).abs() >= 1e-9 * params.ee {
                return Err(Error::Numerical(
                    "LF area balance did not converge in 100 Newton steps".into(),
                ));
            }
        }
        wave.alpha = alpha;
        wave.e0 = -params.ee / ((alpha * params.te).exp() * sin_te);
        Ok(wave)
    }

    pub fn params(&self) -> &LfParams {
        &self.params
    }

    fn return_phase(&self, t: f64) -> f64 {
        let p = &self.params;
        if t <= p.te || t > p.tc {
            return 0.0;
        }
        let floor = (-self.epsilon * (p.tc - p.te)).exp();
        -(p.ee / (self.epsilon * p.ta)) * ((-self.epsilon * (t - p.te)).exp() - floor)
    }

    /// Waveform value at `t` (fraction of the period).
    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.params;
        if t < 0.0 || t >= 1.0 {
            return 0.0;
        }
        if t <= p.te {
            self.e0 * (self.alpha * t).exp() * (self.omega * t).sin()
        } else {
            self.return_phase(t)
        }
    }

    /// The return-phase expression evaluated at `Te` (right limit).
    pub fn return_phase_at_te(&self) -> f64 {
        let p = &self.params;
        let floor = (-self.epsilon * (p.tc - p.te)).exp();
        -(p.ee / (self.epsilon * p.ta)) * (1.0 - floor)
    }
}

// ε Ta = 1 − exp(−ε (Tc − Te))
fn solve_epsilon(p: &LfParams) -> Result<f64> {
    let span = p.tc - p.te;
    if span <= 0.0 {
        // Abrupt closure: the return phase is empty.
        return Ok(1.0 / p.ta);
    }
    let mut eps = 1.0 / p.ta;
    for _ in 0..NEWTON_STEPS {
        let ex = (-eps * span).exp();
        let f = eps * p.ta - 1.0 + ex;
        let df = p.ta - span * ex;
        if f.abs() < 1e-15 {
            return Ok(eps);
        }
        eps -= f / df;
    }
    let f = eps * p.ta - 1.0 + (-eps * span).exp();
    if f.abs() < 1e-12 {
        Ok(eps)
    } else {
        Err(Error::Numerical(
            "LF return-phase constant did not converge".into(),
        ))
    }
}

/// One sampled period of the glottal flow derivative, `round(fs/f0)` samples.
pub fn lf_pulse(lf: &LfParams, f0: f64, sample_rate: f64) -> Result<Vec<f64>> {
    if !(f0 > 0.0 && sample_rate > 0.0) {
        return Err(Error::invalid("f0 and sample rate must be positive"));
    }
    let period = (sample_rate / f0).round() as usize;
    let wave = LfWaveform::solve(lf, period)?;
    Ok((0..period)
        .map(|n| wave.eval(n as f64 / period as f64))
        .collect())
}

/// A resonance or anti-resonance as `(frequency Hz, bandwidth Hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub freq: f64,
    pub bandwidth: f64,
}

impl Resonance {
    pub fn new(freq: f64, bandwidth: f64) -> Self {
        Self { freq, bandwidth }
    }

    /// Upper-half-plane root `exp(−π Bw/fs) · e^{j 2π F/fs}`.
    pub fn root(&self, sample_rate: f64) -> Complex64 {
        let radius = (-PI * self.bandwidth / sample_rate).exp();
        Complex64::from_polar(radius, 2.0 * PI * self.freq / sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSpec {
    pub formants: Vec<Resonance>,
    pub antiformants: Vec<Resonance>,
    pub sample_rate: f64,
}

impl ResonatorSpec {
    /// Two formants (257/32 Hz, 1891/100 Hz) and one antiformant (1223/52 Hz)
    /// at 8 kHz: a nasal /n/.
    pub fn nasal_n() -> Self {
        Self {
            formants: vec![Resonance::new(257.0, 32.0), Resonance::new(1891.0, 100.0)],
            antiformants: vec![Resonance::new(1223.0, 52.0)],
            sample_rate: 8000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let nyquist = self.sample_rate / 2.0;
        for r in self.formants.iter().chain(&self.antiformants) {
            if !(r.freq > 0.0 && r.freq < nyquist) {
                return Err(Error::invalid(format!(
                    "resonance at {} Hz is outside (0, {nyquist}) Hz",
                    r.freq
                )));
            }
            if !(r.bandwidth > 0.0) {
                return Err(Error::invalid("bandwidths must be positive"));
            }
        }
        Ok(())
    }
}

fn conjugate_pairs(resonances: &[Resonance], sample_rate: f64) -> Vec<Complex64> {
    resonances
        .iter()
        .flat_map(|r| {
            let z = r.root(sample_rate);
            [z, z.conj()]
        })
        .collect()
}

/// Filter with one conjugate pole pair per formant and one conjugate zero
/// pair per antiformant.
pub fn build_resonator(spec: &ResonatorSpec) -> Result<PoleZeroModel> {
    spec.validate()?;
    let poles = conjugate_pairs(&spec.formants, spec.sample_rate);
    let zeros = conjugate_pairs(&spec.antiformants, spec.sample_rate);
    let a = poly_from_roots(&poles)[1..].to_vec();
    let b = poly_from_roots(&zeros)[1..].to_vec();
    PoleZeroModel::new(a, b, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub f0: f64,
    pub sample_rate: f64,
    pub n_samples: usize,
    pub resonator: ResonatorSpec,
    pub lf: LfParams,
    /// Energy ratio of pulse train to Gaussian excitation in dB; `+∞` disables
    /// the Gaussian component.
    #[serde(with = "ratio_serde")]
    pub ratio_db: f64,
    pub seed: u64,
    /// First pulse onset in samples; drawn from the seed when absent.
    #[serde(default)]
    pub onset: Option<usize>,
}

// JSON has no infinity; `+∞` is written as the string "inf".
mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" || t == "+inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad ratio {t:?}"))),
        }
    }
}

impl SynthSpec {
    /// 240-sample /n/ frame at 8 kHz with a 30 dB pulse-to-noise ratio.
    pub fn nasal_n(f0: f64, seed: u64) -> Self {
        Self {
            f0,
            sample_rate: 8000.0,
            n_samples: 240,
            resonator: ResonatorSpec::nasal_n(),
            lf: LfParams::default(),
            ratio_db: 30.0,
            seed,
            onset: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 50.0 && self.f0 < self.sample_rate / 4.0) {
            return Err(Error::invalid(format!(
                "f0 {} Hz outside (50, fs/4) Hz",
                self.f0
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("frame length must be positive"));
        }
        if self.onset.is_some_and(|o| o >= self.n_samples) {
            return Err(Error::invalid("pulse onset lies beyond the frame"));
        }
        if self.ratio_db.is_nan() || self.ratio_db == f64::NEG_INFINITY {
            return Err(Error::invalid("ratio_db must be finite or +inf"));
        }
        if (self.resonator.sample_rate - self.sample_rate).abs() > 0.0 {
            return Err(Error::invalid("resonator and frame sample rates differ"));
        }
        self.resonator.validate()?;
        self.lf.validate()
    }
}

/// A generated observation with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFrame {
    pub y: Vec<f64>,
    pub e_true: Vec<f64>,
    pub m_true: Vec<f64>,
    pub model_true: PoleZeroModel,
    pub spec: SynthSpec,
    /// Sample index of the first pulse onset.
    pub onset: usize,
}

impl SynthFrame {
    pub fn frame(&self) -> crate::model::Frame {
        crate::model::Frame {
            samples: self.y.clone(),
            sample_rate: self.spec.sample_rate,
        }
    }

    /// Measured `10 log10(‖e‖² / ‖m‖²)`.
    pub fn measured_ratio_db(&self) -> f64 {
        let pe: f64 = self.e_true.iter().map(|v| v * v).sum();
        let pm: f64 = self.m_true.iter().map(|v| v * v).sum();
        10.0 * (pe / pm).log10()
    }
}

/// Generates `y` from `A y = B e + m` with zero initial conditions.
pub fn synth_frame(spec: &SynthSpec) -> Result<SynthFrame> {
    spec.validate()?;
    let n = spec.n_samples;
    let pulse = lf_pulse(&spec.lf, spec.f0, spec.sample_rate)?;
    let period = pulse.len();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drawn = rng.random_range(0..period);
    let onset = spec.onset.unwrap_or(drawn);
    let e_true: Vec<f64> = (0..n)
        .map(|i| {
            if i < onset {
                0.0
            } else {
                pulse[(i - onset) % period]
            }
        })
        .collect();

    let m_true = if spec.ratio_db == f64::INFINITY {
        vec![0.0; n]
    } else {
        let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pe: f64 = e_true.iter().map(|v| v * v).sum();
        let pr: f64 = raw.iter().map(|v| v * v).sum();
        if pe == 0.0 {
            return Err(Error::invalid("pulse train has no energy in this frame"));
        }
        let scale = (pe / pr / 10f64.powf(spec.ratio_db / 10.0)).sqrt();
        raw.into_iter().map(|v| v * scale).collect()
    };

    let model_true = build_resonator(&spec.resonator)?;
    let be = fir_apply(&model_true.numerator(), &e_true)?;
    let drive: Vec<f64> = be.iter().zip(&m_true).map(|(p, q)| p + q).collect();
    let y = inverse_filter(&model_true.denominator(), &drive)?;

    Ok(SynthFrame {
        y,
        e_true,
        m_true,
        model_true,
        spec: spec.clone(),
        onset,
    })
}
