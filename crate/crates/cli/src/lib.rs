//! Subcommands of the `pzvem` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use pzvem::experiment::{
    analyze, run_experiment, write_csv, ExperimentConfig, Method, MethodSpec, VemOptions,
};
use pzvem::io::{self as pio, Framing, ModelRecord, RecordKind};
use pzvem::metrics::spectral_distortion;
use pzvem::parallel::Execution;
use pzvem::synthesis::{synth_frame, LfParams, Resonance, ResonatorSpec, SynthFrame, SynthSpec};
use pzvem::vem::InitStrategy;
use pzvem::{Error, Frame, PoleZeroModel, Result};

/// Points in the emitted magnitude response.
pub const RESPONSE_POINTS: usize = 512;

/// Peak level of WAV output for frames that exceed full scale.
pub const WAV_PEAK: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(
    name = "pzvem",
    version,
    about = "Pole-zero speech analysis with block-sparse excitation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic voiced frame with known filter and excitation.
    Synth(SynthArgs),
    /// Estimate a model from a frame file (JSON or WAV).
    Analyze(AnalyzeArgs),
    /// Monte Carlo spectral-distortion study.
    Mc(McArgs),
    /// Spectral distortion between two model files.
    EvalSd(EvalSdArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200.0)]
    pub f0: f64,
    #[arg(long, default_value_t = 8000.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 240)]
    pub n: usize,
    /// Comma-separated `freq:bandwidth` pairs in Hz.
    #[arg(long, default_value = "257:32,1891:100", allow_hyphen_values = true)]
    pub formants: String,
    /// Comma-separated `freq:bandwidth` pairs in Hz; empty for an all-pole filter.
    #[arg(long, default_value = "1223:52", allow_hyphen_values = true)]
    pub antiformants: String,
    /// Pulse-to-noise energy ratio in dB, or `inf`.
    #[arg(long, default_value = "30")]
    pub ratio_db: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed first-pulse onset in samples (random when omitted).
    #[arg(long)]
    pub onset: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the observed frame as 16-bit PCM.
    #[arg(long)]
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Identity,
    TwoStage,
}

impl From<InitArg> for InitStrategy {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Identity => InitStrategy::Identity,
            InitArg::TwoStage => InitStrategy::TwoStage,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// SynthFrame JSON or mono 16-bit WAV.
    pub input: PathBuf,
    #[arg(long, default_value = "vem-pz")]
    pub method: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Numerator order; defaults to 10 for pole-zero methods and 0 otherwise.
    #[arg(long)]
    pub l: Option<usize>,
    /// Excitation block size for the VEM methods.
    #[arg(long)]
    pub block: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::TwoStage)]
    pub init: InitArg,
    /// WAV framing.
    #[arg(long, default_value_t = 240)]
    pub frame_len: usize,
    #[arg(long, default_value_t = 240)]
    pub hop: usize,
    /// Analyze only this WAV frame.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Magnitude-response plot data (frame, freq_hz, magnitude_db).
    #[arg(long)]
    pub response_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Experiment JSON; the reference grid is used when omitted.
    pub config: Option<PathBuf>,
    /// Override the run count.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; falls back to the config's output, then stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the effective configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct EvalSdArgs {
    pub truth: PathBuf,
    pub estimate: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub order: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &mut out),
        Command::Analyze(a) => cmd_analyze(&a, &mut out),
        Command::Mc(a) => cmd_mc(&a, &mut out),
        Command::EvalSd(a) => cmd_eval_sd(&a, &mut out),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

/// Parses `F:BW[,F:BW..]`; the empty string gives no resonances.
pub fn parse_resonances(s: &str) -> Result<Vec<Resonance>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (f, bw) = p
                .split_once(':')
                .ok_or_else(|| usage(format!("expected FREQ:BW, got {p:?}")))?;
            let num = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| usage(format!("bad number {t:?} in {p:?}")))
            };
            Ok(Resonance::new(num(f)?, num(bw)?))
        })
        .collect()
}

pub fn parse_ratio_db(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| usage(format!("--ratio-db must be a number or inf, got {s:?}"))),
    }
}

pub fn synth_spec(a: &SynthArgs) -> Result<SynthSpec> {
    let spec = SynthSpec {
        f0: a.f0,
        sample_rate: a.fs,
        n_samples: a.n,
        resonator: ResonatorSpec {
            formants: parse_resonances(&a.formants)?,
            antiformants: parse_resonances(&a.antiformants)?,
            sample_rate: a.fs,
        },
        lf: LfParams::default(),
        ratio_db: parse_ratio_db(&a.ratio_db)?,
        seed: a.seed,
        onset: a.onset,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn cmd_synth(a: &SynthArgs, out: &mut impl Write) -> Result<()> {
    let sf = synth_frame(&synth_spec(a)?)?;
    pio::write_record(&a.out, RecordKind::SynthFrame, &sf)?;
    if let Some(wav) = &a.wav {
        let peak = sf.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > WAV_PEAK {
            WAV_PEAK / peak
        } else {
            1.0
        };
        let scaled: Vec<f64> = sf.y.iter().map(|v| v * scale).collect();
        pio::write_wav(wav, &scaled, sf.spec.sample_rate)?;
        if scale != 1.0 {
            writeln!(out, "wav scaled by {scale:.6}")?;
        }
    }
    let m = &sf.model_true;
    writeln!(
        out,
        "K={} L={} onset={} ratio={:.3} dB",
        m.k_order(),
        m.l_order(),
        sf.onset,
        sf.measured_ratio_db()
    )?;
    writeln!(out, "a = {:?}", m.a)?;
    writeln!(out, "b = {:?}", m.b)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub start: usize,
    pub model: PoleZeroModel,
    pub residual_mean: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `(frequency_hz, magnitude_db)` on `[0, fs/2]`.
    pub frequency_response: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub method: MethodSpec,
    pub vem: Option<VemOptions>,
    pub sample_rate: f64,
    pub frames: Vec<FrameReport>,
    #[serde(default)]
    pub failures: Vec<FrameFailure>,
}

pub fn method_spec(a: &AnalyzeArgs) -> Result<MethodSpec> {
    let method: Method = a.method.parse().map_err(|e: Error| usage(e.to_string()))?;
    let l = a.l.unwrap_or(if method.is_all_pole() { 0 } else { 10 });
    let block_size = match (method.is_vem(), a.block) {
        (true, b) => Some(b.unwrap_or(8)),
        (false, None) => None,
        (false, Some(_)) => return Err(usage(format!("--block does not apply to {method}"))),
    };
    let spec = MethodSpec::new(method, a.k, l, block_size);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Frames with their start offsets.
fn load_frames(a: &AnalyzeArgs) -> Result<Vec<(usize, usize, Frame)>> {
    if is_wav(&a.input) {
        let framing = Framing {
            frame_len: a.frame_len,
            hop: a.hop,
        };
        let frames = pio::read_wav(&a.input, framing)?;
        if frames.is_empty() {
            return Err(Error::Format(format!(
                "file holds fewer than {} samples",
                a.frame_len
            )));
        }
        let all = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| (i, i * a.hop, f));
        match a.frame {
            Some(want) => {
                let picked: Vec<_> = all.filter(|(i, _, _)| *i == want).collect();
                if picked.is_empty() {
                    return Err(usage(format!("--frame {want} is beyond the last frame")));
                }
                Ok(picked)
            }
            None => Ok(all.collect()),
        }
    } else {
        let sf: SynthFrame = pio::read_record(&a.input, RecordKind::SynthFrame)?;
        Ok(vec![(0, 0, sf.frame())])
    }
}

pub fn analyze_frames(a: &AnalyzeArgs) -> Result<AnalysisReport> {
    let spec = method_spec(a)?;
    let opts = VemOptions {
        max_iters: a.max_iter,
        elbo_rel_tol: a.tol,
        init: a.init.into(),
    };
    let frames = load_frames(a)?;
    let single = frames.len() == 1;
    let sample_rate = frames[0].2.sample_rate;
    let mut report = AnalysisReport {
        method: spec.clone(),
        vem: spec.method.is_vem().then(|| opts.clone()),
        sample_rate,
        frames: Vec::new(),
        failures: Vec::new(),
    };
    for (index, start, frame) in frames {
        match analyze(&frame, &spec, &opts) {
            Ok(fit) => {
                let (elbo_trace, iterations, converged) = match &fit.vem {
                    Some(r) => (r.elbo_trace.clone(), r.iterations, r.converged),
                    None => (Vec::new(), 0, true),
                };
                report.frames.push(FrameReport {
                    index,
                    start,
                    frequency_response: fit.model.magnitude_response(sample_rate, RESPONSE_POINTS),
                    model: fit.model,
                    residual_mean: fit.residual,
                    elbo_trace,
                    iterations,
                    converged,
                });
            }
            Err(e) if single => return Err(e),
            Err(e) => report.failures.push(FrameFailure {
                index,
                message: e.to_string(),
            }),
        }
    }
    Ok(report)
}

fn write_response_csv(path: &Path, report: &AnalysisReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "frame,freq_hz,magnitude_db")?;
    for f in &report.frames {
        for (hz, db) in &f.frequency_response {
            writeln!(w, "{},{hz},{db}", f.index)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut impl Write) -> Result<()> {
    let report = analyze_frames(a)?;
    pio::write_record(&a.out, RecordKind::Analysis, &report)?;
    if let Some(path) = &a.response_csv {
        write_response_csv(path, &report)?;
    }
    writeln!(
        out,
        "{}: {} frame(s) analyzed, {} failed",
        report.method.method,
        report.frames.len(),
        report.failures.len()
    )?;
    Ok(())
}

pub fn experiment_config(a: &McArgs) -> Result<ExperimentConfig> {
    let mut config = match &a.config {
        Some(p) => pio::read_record(p, RecordKind::Experiment)?,
        None => ExperimentConfig::reference_grid(),
    };
    if let Some(r) = a.runs {
        config.runs = r;
    }
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    if a.out.is_some() {
        config.output = a.out.clone();
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn cmd_mc(a: &McArgs, out: &mut impl Write) -> Result<()> {
    let config = experiment_config(a)?;
    if let Some(p) = &a.dump_config {
        return pio::write_record(p, RecordKind::Experiment, &config);
    }
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let rows = run_experiment(&config, exec)?;
    match &config.output {
        Some(p) => write_csv(&rows, BufWriter::new(File::create(p)?)),
        None => write_csv(&rows, out),
    }
}

/// Model held by a model, synth-frame or single-frame analysis record.
pub fn load_model(path: &Path) -> Result<PoleZeroModel> {
    let value: Value = pio::read_value(path)?;
    match pio::record_kind(&value)? {
        RecordKind::Model => Ok(pio::from_value::<ModelRecord>(RecordKind::Model, value)?.model),
        RecordKind::SynthFrame => {
            Ok(pio::from_value::<SynthFrame>(RecordKind::SynthFrame, value)?.model_true)
        }
        RecordKind::Analysis => {
            let r: AnalysisReport = pio::from_value(RecordKind::Analysis, value)?;
            match r.frames.as_slice() {
                [only] => Ok(only.model.clone()),
                _ => Err(Error::Format(format!(
                    "{} holds {} frame models; expected one",
                    path.display(),
                    r.frames.len()
                ))),
            }
        }
        RecordKind::Experiment => Err(Error::Format(format!(
            "{} is an experiment configuration, not a model",
            path.display()
        ))),
    }
}

fn cmd_eval_sd(a: &EvalSdArgs, out: &mut impl Write) -> Result<()> {
    if a.order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    let truth = load_model(&a.truth)?;
    let est = load_model(&a.estimate)?;
    writeln!(out, "{}", spectral_distortion(&truth, &est, a.order)?)?;
    Ok(())
}
