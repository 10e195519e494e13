//! Variational EM estimation of a pole-zero model driven by a block-sparse
//! plus white Gaussian excitation.
//!
//! The generative model for one frame `y` of `N` samples is
//!
//! ```text
//! A y = B e + m,   m ~ N(0, γ⁻¹ I),   e ~ N(0, Γ⁻¹),   Γ = diag(α) ⊗ I_D
//! γ ~ Gamma(c, d),  α_o ~ Gamma(e, f)
//! ```
//!
//! where `A`, `B` are unit lower-triangular Toeplitz filters. The posterior is
//! approximated by `q(e) q(γ) Π q(α_o)`; each sweep updates `q(e)`, `q(α)`,
//! `q(γ)` in closed form and then re-estimates the filter coefficients `a`
//! and `b` by minimizing `E_q ‖A y − B e‖²`.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::baselines::ts_ls_pz;
use crate::error::{Error, Result};
use crate::model::{Frame, PoleZeroModel};
use crate::numerics::{fir_apply, solve_lls, toeplitz_gram, BandedSpdFactor, SpdFactor};

/// Upper bound applied to `E[α_o]` before it enters the residual update.
pub const MAX_PRECISION: f64 = 1e12;

/// Starting filters for the first sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `A = B = I`.
    #[default]
    Identity,
    /// Coefficients of the two-stage least-squares pole-zero fit of the frame.
    TwoStage,
}

/// Model orders, prior hyperparameters and iteration controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VemConfig {
    /// Denominator order `K`.
    pub k_order: usize,
    /// Numerator order `L`; zero gives the all-pole variant.
    pub l_order: usize,
    /// Excitation block length `D`.
    pub block_size: usize,
    /// Gamma shape of the Gaussian-component precision prior.
    pub hyper_c: f64,
    /// Gamma rate of the Gaussian-component precision prior.
    pub hyper_d: f64,
    /// Gamma shape of each block-precision prior.
    pub hyper_e: f64,
    /// Gamma rate of each block-precision prior.
    pub hyper_f: f64,
    /// `E[γ]` used by the first residual update.
    pub gamma_init: f64,
    /// `E[α_o]` used by the first residual update.
    pub alpha_init: f64,
    pub max_iters: usize,
    /// Stop when the relative change of the bound between sweeps drops below this.
    pub elbo_rel_tol: f64,
    #[serde(default)]
    pub init: InitStrategy,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            k_order: 5,
            l_order: 5,
            block_size: 8,
            hyper_c: 1e-6,
            hyper_d: 1e-6,
            hyper_e: 1.0,
            hyper_f: 1e-6,
            gamma_init: 10.0,
            alpha_init: 1.0,
            max_iters: 100,
            elbo_rel_tol: 1e-6,
            init: InitStrategy::Identity,
        }
    }
}

impl VemConfig {
    pub fn with_orders(k_order: usize, l_order: usize, block_size: usize) -> Self {
        Self {
            k_order,
            l_order,
            block_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::invalid("block size must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        let positive = [
            ("hyper_c", self.hyper_c),
            ("hyper_d", self.hyper_d),
            ("hyper_e", self.hyper_e),
            ("hyper_f", self.hyper_f),
            ("gamma_init", self.gamma_init),
            ("alpha_init", self.alpha_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        if !(self.elbo_rel_tol >= 0.0) {
            return Err(Error::invalid("elbo_rel_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Contiguous left-aligned blocks of length `D`; the last one is shorter when
/// `D` does not divide `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    n: usize,
    block_size: usize,
}

impl BlockPartition {
    pub fn new(n: usize, block_size: usize) -> Self {
        assert!(block_size > 0);
        Self { n, block_size }
    }

    pub fn num_blocks(&self) -> usize {
        self.n.div_ceil(self.block_size)
    }

    pub fn range(&self, o: usize) -> Range<usize> {
        let start = o * self.block_size;
        start..(start + self.block_size).min(self.n)
    }

    pub fn block_len(&self, o: usize) -> usize {
        self.range(o).len()
    }

    pub fn block_of(&self, i: usize) -> usize {
        i / self.block_size
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(|o| self.range(o))
    }
}

/// Gaussian posterior `q(e) = N(μ̃, Σ̃)` with `R̃ = Σ̃ + μ̃μ̃ᵀ`.
#[derive(Debug, Clone)]
pub struct ResidualPosterior {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub autocorrelation: DMatrix<f64>,
    log_det_cov: f64,
}

impl ResidualPosterior {
    /// Builds the posterior from its moments; the covariance must be SPD.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::dim("covariance shape differs from mean length"));
        }
        let log_det_cov = SpdFactor::new(&covariance)?.log_det();
        Ok(Self::with_log_det(mean, covariance, log_det_cov))
    }

    fn with_log_det(mean: Vec<f64>, covariance: DMatrix<f64>, log_det_cov: f64) -> Self {
        let n = mean.len();
        let mut autocorrelation = covariance.clone();
        for j in 0..n {
            for i in 0..n {
                autocorrelation[(i, j)] += mean[i] * mean[j];
            }
        }
        Self {
            mean,
            covariance,
            autocorrelation,
            log_det_cov,
        }
    }

    pub fn log_det_covariance(&self) -> f64 {
        self.log_det_cov
    }
}

/// Gamma posteriors `q(α_o) = Gamma(ẽ_o, f̃_o)` and `q(γ) = Gamma(c̃, d̃)`
/// (shape/rate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPosteriors {
    pub alpha_shape: Vec<f64>,
    pub alpha_rate: Vec<f64>,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
}

impl PrecisionPosteriors {
    pub fn alpha_means(&self) -> Vec<f64> {
        self.alpha_shape
            .iter()
            .zip(&self.alpha_rate)
            .map(|(s, r)| s / r)
            .collect()
    }

    pub fn gamma_mean(&self) -> f64 {
        self.gamma_shape / self.gamma_rate
    }
}

/// Outcome of a full analysis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub model: PoleZeroModel,
    pub residual_mean: Vec<f64>,
    /// `E[α_o]` per block.
    pub alpha_means: Vec<f64>,
    /// `E[γ]`.
    pub gamma_mean: f64,
    pub iterations: usize,
    pub final_elbo: f64,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
}

/// Iteration state of one analysis session.
#[derive(Debug, Clone)]
pub struct VemState {
    pub frame: Frame,
    pub config: VemConfig,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub residual: ResidualPosterior,
    pub precisions: PrecisionPosteriors,
    pub elbo_trace: Vec<f64>,
    blocks: BlockPartition,
}

/// Prepares a session: starting filters per `config.init`,
/// `E[γ] = gamma_init`, `E[α_o] = alpha_init`.
pub fn init_state(frame: Frame, config: VemConfig) -> Result<VemState> {
    config.validate()?;
    let n = frame.len();
    if n < config.k_order + config.l_order + 1 {
        return Err(Error::dim(format!(
            "frame of {n} samples is too short for K={} and L={}",
            config.k_order, config.l_order
        )));
    }
    if frame.is_silent() {
        return Err(Error::invalid("frame is all zeros"));
    }
    let blocks = BlockPartition::new(n, config.block_size);
    let o = blocks.num_blocks();
    // Initial expectations are encoded as Gamma(init, 1).
    let precisions = PrecisionPosteriors {
        alpha_shape: vec![config.alpha_init; o],
        alpha_rate: vec![1.0; o],
        gamma_shape: config.gamma_init,
        gamma_rate: 1.0,
    };
    let residual = ResidualPosterior::with_log_det(vec![0.0; n], DMatrix::identity(n, n), 0.0);
    let (a, b) = match config.init {
        InitStrategy::TwoStage if config.k_order + config.l_order > 0 => {
            let fit = ts_ls_pz(&frame, config.k_order, config.l_order, None)?;
            (fit.a, fit.b)
        }
        _ => (vec![0.0; config.k_order], vec![0.0; config.l_order]),
    };
    Ok(VemState {
        a,
        b,
        frame,
        config,
        residual,
        precisions,
        elbo_trace: Vec::new(),
        blocks,
    })
}

impl VemState {
    pub fn n(&self) -> usize {
        self.frame.len()
    }

    pub fn blocks(&self) -> BlockPartition {
        self.blocks
    }

    pub fn denominator(&self) -> Vec<f64> {
        monic(&self.a)
    }

    pub fn numerator(&self) -> Vec<f64> {
        monic(&self.b)
    }

    /// `A y`.
    pub fn filtered_frame(&self) -> Vec<f64> {
        fir_apply(&self.denominator(), &self.frame.samples).expect("frame is non-empty")
    }

    /// Per-sample `E[Γ_e]` diagonal, clamped at [`MAX_PRECISION`].
    pub fn sample_precisions(&self) -> Vec<f64> {
        let means = self.precisions.alpha_means();
        let mut diag = vec![0.0; self.n()];
        for (o, r) in self.blocks.ranges().enumerate() {
            let v = means[o].min(MAX_PRECISION);
            diag[r].iter_mut().for_each(|d| *d = v);
        }
        diag
    }

    /// `q(e)` given the current precision expectations and filters:
    /// `Σ̃ = (E[γ] BᵀB + E[Γ_e])⁻¹`, `μ̃ = E[γ] Σ̃ Bᵀ A y`.
    pub fn e_step_residual(&self) -> Result<ResidualPosterior> {
        let n = self.n();
        let gamma = self.precisions.gamma_mean();
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Numerical(format!("E[γ] = {gamma} is not usable")));
        }
        let numer = self.numerator();
        let mut precision = toeplitz_gram(&numer, n);
        precision *= gamma;
        for (i, d) in self.sample_precisions().into_iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Numerical(format!("E[α] = {d} is not usable")));
            }
            precision[(i, i)] += d;
        }
        let bt_ay = crate::numerics::fir_transpose_apply(&numer, &self.filtered_frame())?;
        // The precision has half-bandwidth L; the dense jittered factor is the
        // fallback when a banded pivot breaks down.
        let (solved, covariance, log_det) =
            match BandedSpdFactor::new(&precision, self.config.l_order) {
                Ok(f) => (f.solve(&bt_ay), f.inverse(), f.log_det()),
                Err(_) => {
                    let f = SpdFactor::new(&precision)?;
                    (f.solve(&bt_ay), f.inverse(), f.log_det())
                }
            };
        let mean: Vec<f64> = solved.into_iter().map(|v| gamma * v).collect();
        Ok(ResidualPosterior::with_log_det(mean, covariance, -log_det))
    }

    /// `ẽ_o = e + D_o/2`, `f̃_o = f + ½ Σ_{i∈o} R̃_ii`; the γ part is carried over.
    pub fn e_step_alpha(&self) -> PrecisionPosteriors {
        let r = &self.residual.autocorrelation;
        let cfg = &self.config;
        let (shape, rate) = self
            .blocks
            .ranges()
            .map(|range| {
                let len = range.len() as f64;
                let diag: f64 = range.map(|i| r[(i, i)]).sum();
                (cfg.hyper_e + 0.5 * len, cfg.hyper_f + 0.5 * diag)
            })
            .unzip();
        PrecisionPosteriors {
            alpha_shape: shape,
            alpha_rate: rate,
            ..self.precisions.clone()
        }
    }

    /// `E_q ‖A y − B e‖² = tr(Σ̃ BᵀB) + ‖A y − B μ̃‖²`.
    pub fn expected_fit_error(&self) -> f64 {
        let numer = self.numerator();
        let b_mu = fir_apply(&numer, &self.residual.mean).expect("mean is non-empty");
        let misfit: f64 = self
            .filtered_frame()
            .iter()
            .zip(&b_mu)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        misfit + banded_trace(&self.residual.covariance, &numer)
    }

    /// `c̃ = c + N/2`, `d̃ = d + ½ E_q ‖A y − B e‖²`; the α part is carried over.
    pub fn e_step_gamma(&self) -> PrecisionPosteriors {
        PrecisionPosteriors {
            gamma_shape: self.config.hyper_c + 0.5 * self.n() as f64,
            gamma_rate: self.config.hyper_d + 0.5 * self.expected_fit_error(),
            ..self.precisions.clone()
        }
    }

    /// Least-squares update of `a` with `b` held fixed:
    /// `argmin ‖(B μ̃ − y) − C a‖²` where column `j` of `C` is `y` delayed by `j`.
    pub fn m_step_a(&self) -> Result<Vec<f64>> {
        let k = self.config.k_order;
        if k == 0 {
            return Ok(Vec::new());
        }
        let y = &self.frame.samples;
        let n = y.len();
        let design = delay_matrix(y, k);
        let b_mu = fir_apply(&self.numerator(), &self.residual.mean)?;
        let target: Vec<f64> = (0..n).map(|i| b_mu[i] - y[i]).collect();
        solve_lls(&design, &target).map_err(|e| match e {
            Error::Rank(msg) => Error::Rank(format!("denominator update: {msg}")),
            other => other,
        })
    }

    /// `E[FᵀF]` (L×L) and `E[Fᵀe]` (L) from the posterior autocorrelation.
    pub fn expected_delay_moments(&self) -> (DMatrix<f64>, Vec<f64>) {
        expected_delay_moments(&self.residual.autocorrelation, self.config.l_order)
    }

    /// `b = E[FᵀF]⁻¹ (E[F]ᵀ A y − E[Fᵀe])` with `a` held fixed.
    pub fn m_step_b(&self) -> Result<Vec<f64>> {
        let l = self.config.l_order;
        if l == 0 {
            return Ok(Vec::new());
        }
        let (fff, fte) = self.expected_delay_moments();
        let ay = self.filtered_frame();
        let mu = &self.residual.mean;
        let n = self.n();
        let rhs: Vec<f64> = (1..=l)
            .map(|lag| {
                let ef_ay: f64 = (lag..n).map(|t| mu[t - lag] * ay[t]).sum();
                ef_ay - fte[lag - 1]
            })
            .collect();
        let factor = SpdFactor::new(&fff).map_err(|_| Error::Rank("E[FᵀF] is singular".into()))?;
        if factor.jitter() > 0.0 {
            return Err(Error::Rank("E[FᵀF] is numerically singular".into()));
        }
        Ok(factor.solve(&rhs))
    }

    /// Variational lower bound `E_q[log p(y, e, α, γ)] + H[q]` for the current
    /// posteriors and filters.
    pub fn elbo(&self) -> f64 {
        let cfg = &self.config;
        let n = self.n() as f64;
        let ln2pi = (2.0 * PI).ln();
        let post = &self.precisions;

        let e_gamma = post.gamma_mean();
        let e_ln_gamma = digamma(post.gamma_shape) - post.gamma_rate.ln();

        // log N(Ay | Be, γ⁻¹ I)
        let mut bound =
            0.5 * n * e_ln_gamma - 0.5 * n * ln2pi - 0.5 * e_gamma * self.expected_fit_error();

        // log N(e | 0, Γ⁻¹) and log Gamma(α_o; e, f)
        let r = &self.residual.autocorrelation;
        for (o, range) in self.blocks.ranges().enumerate() {
            let (shape, rate) = (post.alpha_shape[o], post.alpha_rate[o]);
            let e_alpha = shape / rate;
            let e_ln_alpha = digamma(shape) - rate.ln();
            let len = range.len() as f64;
            let diag: f64 = range.map(|i| r[(i, i)]).sum();
            bound += 0.5 * len * (e_ln_alpha - ln2pi) - 0.5 * e_alpha * diag;
            bound += gamma_log_prior(cfg.hyper_e, cfg.hyper_f, e_alpha, e_ln_alpha);
            bound += gamma_entropy(shape, rate);
        }

        // log Gamma(γ; c, d)
        bound += gamma_log_prior(cfg.hyper_c, cfg.hyper_d, e_gamma, e_ln_gamma);
        bound += gamma_entropy(post.gamma_shape, post.gamma_rate);

        // H[q(e)]
        bound += 0.5 * n * (1.0 + ln2pi) + 0.5 * self.residual.log_det_covariance();
        bound
    }

    /// One sweep: residual, block precisions, noise precision, record the
    /// bound, then `a` and `b`. Returns the recorded bound.
    pub fn sweep(&mut self) -> Result<f64> {
        self.residual = self.e_step_residual()?;
        self.precisions = self.e_step_alpha();
        self.precisions = self.e_step_gamma();
        let bound = self.elbo();
        self.elbo_trace.push(bound);
        self.a = self.m_step_a()?;
        self.b = self.m_step_b()?;
        Ok(bound)
    }

    pub fn model(&self) -> PoleZeroModel {
        PoleZeroModel {
            a: self.a.clone(),
            b: self.b.clone(),
            gain: 1.0,
        }
    }
}

/// Runs sweeps until the relative change of the bound falls below
/// `elbo_rel_tol` or `max_iters` is reached.
pub fn run_vem(frame: Frame, config: VemConfig) -> Result<AnalysisResult> {
    let mut state = init_state(frame, config)?;
    let mut converged = false;
    let mut prev: Option<f64> = None;
    for _ in 0..state.config.max_iters {
        let bound = state.sweep()?;
        if let Some(p) = prev {
            if (bound - p).abs() <= state.config.elbo_rel_tol * bound.abs() {
                converged = true;
                break;
            }
        }
        prev = Some(bound);
    }
    let model = state.model().with_frame_gain(&state.frame.samples)?;
    Ok(AnalysisResult {
        model,
        residual_mean: state.residual.mean.clone(),
        alpha_means: state.precisions.alpha_means(),
        gamma_mean: state.precisions.gamma_mean(),
        iterations: state.elbo_trace.len(),
        final_elbo: *state.elbo_trace.last().expect("at least one sweep"),
        converged,
        elbo_trace: state.elbo_trace,
    })
}

/// `E[FᵀF]_{ij} = Σ_k R̃_{k, k+|j−i|}` over `k < N − max(i, j)` and
/// `E[Fᵀe]_l = Σ_k R̃_{k, k+l}` over `k < N − l` (lags `1..=L`).
pub fn expected_delay_moments(r: &DMatrix<f64>, l: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = r.nrows();
    let mut fff = DMatrix::zeros(l, l);
    for i in 1..=l {
        for j in i..=l {
            let v: f64 = (0..n.saturating_sub(j)).map(|k| r[(k, k + j - i)]).sum();
            fff[(i - 1, j - 1)] = v;
            fff[(j - 1, i - 1)] = v;
        }
    }
    let fte = (1..=l)
        .map(|lag| (0..n.saturating_sub(lag)).map(|k| r[(k, k + lag)]).sum())
        .collect();
    (fff, fte)
}

/// N×K matrix whose column `j` (0-based) is `y` delayed by `j + 1` samples.
pub fn delay_matrix(y: &[f64], k: usize) -> DMatrix<f64> {
    let n = y.len();
    DMatrix::from_fn(
        n,
        k,
        |row, col| {
            if row > col {
                y[row - col - 1]
            } else {
                0.0
            }
        },
    )
}

// tr(S · TᵀT) for lower-triangular Toeplitz T with the given support,
// touching only the band of S.
fn banded_trace(s: &DMatrix<f64>, coeffs: &[f64]) -> f64 {
    let n = s.nrows();
    let gram = toeplitz_gram(coeffs, n);
    let bw = coeffs.len() - 1;
    let mut acc = 0.0;
    for i in 0..n {
        acc += s[(i, i)] * gram[(i, i)];
        for j in (i + 1)..n.min(i + bw + 1) {
            acc += 2.0 * s[(i, j)] * gram[(i, j)];
        }
    }
    acc
}

// E[log Gamma(x; shape, rate)] given E[x] and E[log x].
fn gamma_log_prior(shape: f64, rate: f64, e_x: f64, e_ln_x: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * e_ln_x - rate * e_x
}

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

fn monic(tail: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(tail.len() + 1);
    v.push(1.0);
    v.extend_from_slice(tail);
    v
}
