//! Per-method analysis and the seeded Monte Carlo distortion study.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{covariance_residual, lp1, lp2, ts_ls_pz, IrlsConfig};
use crate::error::{Error, Result};
use crate::metrics::{spectral_distortion, DEFAULT_CEPSTRAL_ORDER};
use crate::model::{Frame, PoleZeroModel};
use crate::numerics::fir_apply;
use crate::parallel::{map_indexed, Execution};
use crate::synthesis::{synth_frame, SynthSpec};
use crate::vem::{run_vem, AnalysisResult, InitStrategy, VemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    VemPz,
    VemAp,
    Lp2,
    Lp1,
    TsLsPz,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::VemPz,
        Method::VemAp,
        Method::Lp2,
        Method::Lp1,
        Method::TsLsPz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VemPz => "vem-pz",
            Method::VemAp => "vem-ap",
            Method::Lp2 => "lp2",
            Method::Lp1 => "lp1",
            Method::TsLsPz => "ts-ls-pz",
        }
    }

    pub fn is_vem(self) -> bool {
        matches!(self, Method::VemPz | Method::VemAp)
    }

    pub fn is_all_pole(self) -> bool {
        matches!(self, Method::VemAp | Method::Lp2 | Method::Lp1)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?}; expected one of vem-pz, vem-ap, lp2, lp1, ts-ls-pz"
                ))
            })
    }
}

/// A method with its orders; `block_size` applies to the VEM methods only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub k: usize,
    #[serde(default)]
    pub l: usize,
    #[serde(default)]
    pub block_size: Option<usize>,
}

impl MethodSpec {
    pub fn new(method: Method, k: usize, l: usize, block_size: Option<usize>) -> Self {
        Self {
            method,
            k,
            l,
            block_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.is_all_pole() && self.l != 0 {
            return Err(Error::invalid(format!(
                "{} is all-pole; l must be 0",
                self.method
            )));
        }
        match (self.method.is_vem(), self.block_size) {
            (true, None) => Err(Error::invalid(format!(
                "{} needs a block size",
                self.method
            ))),
            (true, Some(0)) => Err(Error::invalid("block size must be at least 1")),
            (false, Some(_)) => Err(Error::invalid(format!(
                "{} takes no block size",
                self.method
            ))),
            _ => Ok(()),
        }
    }
}

/// Iteration controls shared by the VEM methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VemOptions {
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    #[serde(default)]
    pub init: InitStrategy,
}

impl Default for VemOptions {
    fn default() -> Self {
        let base = VemConfig::default();
        Self {
            max_iters: base.max_iters,
            elbo_rel_tol: base.elbo_rel_tol,
            init: InitStrategy::TwoStage,
        }
    }
}

/// Estimated model and the residual it implies for the analyzed frame.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: PoleZeroModel,
    pub residual: Vec<f64>,
    /// Full iteration record for the VEM methods.
    pub vem: Option<AnalysisResult>,
}

pub fn analyze(frame: &Frame, spec: &MethodSpec, opts: &VemOptions) -> Result<Fit> {
    spec.validate()?;
    let y = &frame.samples;
    match spec.method {
        Method::VemPz | Method::VemAp => {
            let config = VemConfig {
                max_iters: opts.max_iters,
                elbo_rel_tol: opts.elbo_rel_tol,
                init: opts.init,
                ..VemConfig::with_orders(spec.k, spec.l, spec.block_size.expect("validated"))
            };
            let r = run_vem(frame.clone(), config)?;
            Ok(Fit {
                model: r.model.clone(),
                residual: r.residual_mean.clone(),
                vem: Some(r),
            })
        }
        Method::Lp2 => {
            let model = PoleZeroModel::all_pole(lp2(frame, spec.k)?).with_frame_gain(y)?;
            let residual = fir_apply(&model.denominator(), y)?;
            Ok(Fit {
                model,
                residual,
                vem: None,
            })
        }
        Method::Lp1 => {
            let a = lp1(frame, spec.k, &IrlsConfig::default())?;
            let residual = covariance_residual(y, &a)?;
            Ok(Fit {
                model: PoleZeroModel::all_pole(a).with_frame_gain(y)?,
                residual,
                vem: None,
            })
        }
        Method::TsLsPz => {
            let model = ts_ls_pz(frame, spec.k, spec.l, None)?;
            let residual = model.inverse_filter(y)?;
            Ok(Fit {
                model,
                residual,
                vem: None,
            })
        }
    }
}

/// A Monte Carlo distortion study over a grid of fundamental frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub f0s: Vec<f64>,
    pub runs: usize,
    pub methods: Vec<MethodSpec>,
    /// Frame template; `f0` and `seed` are replaced per run.
    pub synth: SynthSpec,
    #[serde(default)]
    pub vem: VemOptions,
    #[serde(default = "default_order")]
    pub cepstral_order: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_order() -> usize {
    DEFAULT_CEPSTRAL_ORDER
}

impl ExperimentConfig {
    /// Five pitches from 200 to 400 Hz, eight method rows, 500 runs each.
    /// Pulse onsets are aligned with the first excitation block.
    pub fn reference_grid() -> Self {
        let vem_pz = |d| MethodSpec::new(Method::VemPz, 5, 5, Some(d));
        Self {
            f0s: vec![200.0, 250.0, 300.0, 350.0, 400.0],
            runs: 500,
            methods: vec![
                MethodSpec::new(Method::Lp2, 10, 0, None),
                MethodSpec::new(Method::TsLsPz, 5, 5, None),
                MethodSpec::new(Method::Lp1, 10, 0, None),
                MethodSpec::new(Method::VemAp, 10, 0, Some(6)),
                vem_pz(1),
                vem_pz(5),
                vem_pz(7),
                vem_pz(8),
            ],
            synth: SynthSpec {
                onset: Some(0),
                ..SynthSpec::nasal_n(200.0, 0)
            },
            vem: VemOptions::default(),
            cepstral_order: DEFAULT_CEPSTRAL_ORDER,
            master_seed: 0x5eed,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if self.f0s.is_empty() || self.methods.is_empty() {
            return Err(Error::invalid("need at least one f0 and one method"));
        }
        if self.cepstral_order == 0 {
            return Err(Error::invalid("cepstral order must be at least 1"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        for &f0 in &self.f0s {
            SynthSpec {
                f0,
                ..self.synth.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn frame_spec(&self, f0_index: usize, run: usize) -> SynthSpec {
        SynthSpec {
            f0: self.f0s[f0_index],
            seed: run_seed(self.master_seed, f0_index, run),
            ..self.synth.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one synthetic frame. Every method sees the same frames.
pub fn run_seed(master: u64, f0_index: usize, run: usize) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(f0_index as u64)) ^ run as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub f0_hz: f64,
    pub block_size: Option<usize>,
    pub k: usize,
    pub l: usize,
    /// Over successful runs; NaN when every run failed.
    pub sd_mean: f64,
    pub sd_stderr: f64,
    pub runs: usize,
    pub failed_runs: usize,
}

fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Distortion of one method on one seeded frame.
pub fn score_run(
    config: &ExperimentConfig,
    method: &MethodSpec,
    f0_index: usize,
    run: usize,
) -> Result<f64> {
    let sf = synth_frame(&config.frame_spec(f0_index, run))?;
    let fit = analyze(&sf.frame(), method, &config.vem)?;
    let sd = spectral_distortion(&sf.model_true, &fit.model, config.cepstral_order)?;
    if sd.is_finite() {
        Ok(sd)
    } else {
        Err(Error::Numerical("distortion is not finite".into()))
    }
}

/// Runs every (method, f0, run) job and returns one row per (method, f0),
/// sorted by method, block size and f0.
pub fn run_experiment(config: &ExperimentConfig, exec: Execution) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let (nm, nf, nr) = (config.methods.len(), config.f0s.len(), config.runs);
    let scores = map_indexed(exec, nm * nf * nr, |job| {
        let (cell, run) = (job / nr, job % nr);
        let (m, f) = (cell / nf, cell % nf);
        score_run(config, &config.methods[m], f, run).ok()
    });
    let mut rows: Vec<ResultRow> = scores
        .chunks(nr)
        .enumerate()
        .map(|(cell, chunk)| {
            let spec = &config.methods[cell / nf];
            let ok: Vec<f64> = chunk.iter().flatten().copied().collect();
            let (sd_mean, sd_stderr) = summarize(&ok);
            ResultRow {
                method: spec.method,
                f0_hz: config.f0s[cell % nf],
                block_size: spec.block_size,
                k: spec.k,
                l: spec.l,
                sd_mean,
                sd_stderr,
                runs: nr,
                failed_runs: nr - ok.len(),
            }
        })
        .collect();
    rows.sort_by(|x, y| {
        (x.method.name(), x.block_size, x.k, x.l)
            .cmp(&(y.method.name(), y.block_size, y.k, y.l))
            .then(x.f0_hz.total_cmp(&y.f0_hz))
    });
    Ok(rows)
}

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "f0_hz",
    "block_size",
    "k",
    "l",
    "sd_mean",
    "sd_stderr",
    "runs",
    "failed_runs",
];

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.f0_hz.to_string(),
            r.block_size
                .map_or_else(|| "n/a".to_string(), |d| d.to_string()),
            r.k.to_string(),
            r.l.to_string(),
            format!("{:.6}", r.sd_mean),
            format!("{:.6}", r.sd_stderr),
            r.runs.to_string(),
            r.failed_runs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
