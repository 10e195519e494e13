//! Structured linear algebra shared by the estimators.
//!
//! Filters of the form `[1, c_1, .., c_M]` act on a frame as lower-triangular
//! Toeplitz operators with zero initial conditions. Products with these
//! operators are computed by streaming convolution; only the residual
//! posterior covariance is ever held as a dense matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Monic FIR taps `[1, c_1, .., c_M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirCoefficients {
    taps: Vec<f64>,
}

impl FirCoefficients {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.first() != Some(&1.0) {
            return Err(Error::invalid("FIR taps must start with exactly 1"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("FIR taps must be finite"));
        }
        Ok(Self { taps })
    }

    /// Builds `[1, tail..]`.
    pub fn from_tail(tail: &[f64]) -> Result<Self> {
        let mut taps = Vec::with_capacity(tail.len() + 1);
        taps.push(1.0);
        taps.extend_from_slice(tail);
        Self::new(taps)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Coefficients after the leading one.
    pub fn tail(&self) -> &[f64] {
        &self.taps[1..]
    }

    pub fn order(&self) -> usize {
        self.taps.len() - 1
    }
}

impl AsRef<[f64]> for FirCoefficients {
    fn as_ref(&self) -> &[f64] {
        &self.taps
    }
}

/// N×N lower-triangular Toeplitz operator described by its first column.
#[derive(Debug, Clone, PartialEq)]
pub struct LtToeplitz {
    first_column: Vec<f64>,
}

/// Builds the N×N lower-triangular Toeplitz operator whose first column is
/// `coeffs` padded with zeros.
pub fn build_lt_toeplitz(coeffs: &[f64], n: usize) -> Result<LtToeplitz> {
    if n == 0 {
        return Err(Error::dim("Toeplitz dimension must be positive"));
    }
    if coeffs.len() > n {
        return Err(Error::dim(format!(
            "{} coefficients do not fit a {n}x{n} Toeplitz matrix",
            coeffs.len()
        )));
    }
    let mut first_column = vec![0.0; n];
    first_column[..coeffs.len()].copy_from_slice(coeffs);
    Ok(LtToeplitz { first_column })
}

impl LtToeplitz {
    pub fn dim(&self) -> usize {
        self.first_column.len()
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row >= col {
            self.first_column[row - col]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// `T x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("vector length differs from operator dimension"));
        }
        fir_apply(self.support(), x)
    }

    /// `Tᵀ x`.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("vector length differs from operator dimension"));
        }
        fir_transpose_apply(self.support(), x)
    }

    /// Solves `T z = x` by forward substitution.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("vector length differs from operator dimension"));
        }
        inverse_filter(self.support(), x)
    }

    pub fn is_unit_lower_triangular(&self) -> bool {
        self.first_column[0] == 1.0
    }

    // Trailing zeros of the first column carry no work.
    fn support(&self) -> &[f64] {
        let len = self
            .first_column
            .iter()
            .rposition(|&c| c != 0.0)
            .map_or(1, |p| p + 1);
        &self.first_column[..len]
    }
}

/// Causal convolution with zero initial conditions, truncated to `x.len()`:
/// `out[n] = Σ_k coeffs[k] x[n-k]`.
pub fn fir_apply(coeffs: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::dim("cannot filter an empty signal"));
    }
    let mut out = vec![0.0; x.len()];
    for (n, o) in out.iter_mut().enumerate() {
        *o = coeffs
            .iter()
            .take(n + 1)
            .enumerate()
            .map(|(k, c)| c * x[n - k])
            .sum();
    }
    Ok(out)
}

/// Adjoint of [`fir_apply`]: `out[n] = Σ_k coeffs[k] x[n+k]`.
pub fn fir_transpose_apply(coeffs: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::dim("cannot filter an empty signal"));
    }
    let n_len = x.len();
    let mut out = vec![0.0; n_len];
    for (n, o) in out.iter_mut().enumerate() {
        *o = coeffs
            .iter()
            .take(n_len - n)
            .enumerate()
            .map(|(k, c)| c * x[n + k])
            .sum();
    }
    Ok(out)
}

/// Recursive (all-pole) filtering: solves `fir_apply(denominator, out) = x`
/// with zero initial conditions. `denominator[0]` must be nonzero.
pub fn inverse_filter(denominator: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::dim("cannot filter an empty signal"));
    }
    let lead = *denominator
        .first()
        .ok_or_else(|| Error::dim("empty denominator"))?;
    if lead == 0.0 {
        return Err(Error::Numerical("denominator leading tap is zero".into()));
    }
    let mut out = vec![0.0; x.len()];
    for n in 0..x.len() {
        let feedback: f64 = denominator
            .iter()
            .enumerate()
            .skip(1)
            .take(n)
            .map(|(k, c)| c * out[n - k])
            .sum();
        out[n] = (x[n] - feedback) / lead;
    }
    Ok(out)
}

/// Dense `TᵀT` for the lower-triangular Toeplitz operator with the given
/// first-column support. The result is banded with half-bandwidth
/// `coeffs.len() - 1`.
pub fn toeplitz_gram(coeffs: &[f64], n: usize) -> DMatrix<f64> {
    let bw = coeffs.len().saturating_sub(1);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n.min(i + bw + 1) {
            // Σ_k T[k,i] T[k,j] over rows k >= j.
            let v: f64 = (j..n.min(i + coeffs.len()))
                .map(|k| coeffs[k - i] * coeffs[k - j])
                .sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Cholesky factor of a symmetric positive-definite matrix, with the diagonal
/// jitter that was needed to obtain it.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factors `m`, escalating a diagonal jitter of `{0, 1e-12, 1e-10, 1e-8}·tr(m)/N`
    /// before giving up.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::dim(
                "SPD factorization needs a non-empty square matrix",
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix has non-finite entries".into()));
        }
        let scale = m.trace() / n as f64;
        for &level in &JITTER_LADDER {
            let jitter = level * scale;
            let mut work = m.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    work[(i, i)] += jitter;
                }
            }
            if let Some(chol) = nalgebra::Cholesky::new(work) {
                return Ok(Self { chol, jitter });
            }
        }
        Err(Error::Numerical(
            "matrix is not positive definite after jitter escalation".into(),
        ))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }

    /// `log det` of the (jittered) factored matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    if rhs.len() != m.nrows() {
        return Err(Error::dim(
            "right-hand side length differs from matrix order",
        ));
    }
    Ok(SpdFactor::new(m)?.solve(rhs))
}

/// Full inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    Ok(SpdFactor::new(m)?.inverse())
}

/// Cholesky factor of a symmetric positive-definite matrix whose entries
/// vanish beyond half-bandwidth `bw`. Factoring costs `O(N bw²)` and the full
/// inverse `O(N² bw)`.
pub struct BandedSpdFactor {
    l: DMatrix<f64>,
    bw: usize,
}

impl BandedSpdFactor {
    /// Entries of `m` outside the band are ignored. Fails with
    /// [`Error::Numerical`] on a non-positive pivot; no jitter is applied.
    pub fn new(m: &DMatrix<f64>, bw: usize) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::dim(
                "SPD factorization needs a non-empty square matrix",
            ));
        }
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let pivot = m[(j, j)] - (lo..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
            if !(pivot > 0.0 && pivot.is_finite()) {
                return Err(Error::Numerical(format!("non-positive pivot at row {j}")));
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n.min(j + bw + 1) {
                let lo = i.saturating_sub(bw);
                let s: f64 = (lo..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
                l[(i, j)] = (m[(i, j)] - s) / d;
            }
        }
        Ok(Self { l, bw })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        let l = &self.l;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let s: f64 = (i.saturating_sub(self.bw)..i)
                .map(|k| l[(i, k)] * x[k])
                .sum();
            x[i] = (x[i] - s) / l[(i, i)];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n.min(i + self.bw + 1))
                .map(|k| l[(k, i)] * x[k])
                .sum();
            x[i] = (x[i] - s) / l[(i, i)];
        }
        x
    }

    /// Full inverse from `Lᵀ Σ = L⁻¹`, filled from the last row upwards.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        let l = &self.l;
        let mut s = DMatrix::zeros(n, n);
        for i in (0..n).rev() {
            let band = i + 1..n.min(i + self.bw + 1);
            let d = l[(i, i)];
            for j in (i + 1..n).rev() {
                // Σ_kj for k > i; rows below i are complete in both triangles.
                let v: f64 = band.clone().map(|k| l[(k, i)] * s[(k, j)]).sum();
                s[(i, j)] = -v / d;
                s[(j, i)] = s[(i, j)];
            }
            let v: f64 = band.map(|k| l[(k, i)] * s[(k, i)]).sum();
            s[(i, i)] = (1.0 / d - v) / d;
        }
        s
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim("matrix is not square"));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Linear least squares `argmin_x ‖design·x − target‖²`.
///
/// Fails with [`Error::Rank`] when the smallest singular value of `design`
/// falls below `1e-10` times the largest.
pub fn solve_lls(design: &DMatrix<f64>, target: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = design.shape();
    if rows != target.len() {
        return Err(Error::dim(format!(
            "design has {rows} rows but target has {} entries",
            target.len()
        )));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows < cols {
        return Err(Error::Rank(format!(
            "{rows} equations cannot determine {cols} unknowns"
        )));
    }
    if design.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("least-squares input is not finite".into()));
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin < 1e-10 * smax {
        return Err(Error::Rank(format!(
            "condition {:.3e} exceeds 1e10",
            if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            }
        )));
    }
    let b = DVector::from_column_slice(target);
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(x.as_slice().to_vec())
}

/// Evaluates `Σ coeffs[i] z^{deg-i}` (descending powers) by Horner's rule.
pub fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn poly_eval_derivative(coeffs: &[f64], z: Complex64) -> Complex64 {
    let deg = coeffs.len() - 1;
    coeffs[..deg]
        .iter()
        .enumerate()
        .fold(Complex64::new(0.0, 0.0), |acc, (i, &c)| {
            acc * z + c * (deg - i) as f64
        })
}

/// All complex roots of the monic polynomial `z^n + c_1 z^{n-1} + .. + c_n`
/// given as `[1, c_1, .., c_n]`, from the eigenvalues of its companion matrix.
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    if coeffs.len() < 2 {
        return Err(Error::dim("polynomial degree must be at least 1"));
    }
    let lead = coeffs[0];
    if lead == 0.0 || !lead.is_finite() {
        return Err(Error::invalid("leading coefficient must be nonzero"));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("polynomial has non-finite coefficients"));
    }
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let deg = monic.len() - 1;

    // Exact zero roots split off to keep the companion matrix well scaled.
    let zeros_at_origin = monic.iter().rev().take_while(|&&c| c == 0.0).count();
    let reduced = &monic[..monic.len() - zeros_at_origin];
    let mut roots = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
    let rdeg = reduced.len() - 1;
    if rdeg == 0 {
        return Ok(roots);
    }
    if rdeg == 1 {
        roots.push(Complex64::new(-reduced[1], 0.0));
        return Ok(roots);
    }

    let mut companion = DMatrix::<f64>::zeros(rdeg, rdeg);
    for j in 0..rdeg {
        companion[(0, j)] = -reduced[j + 1];
    }
    for i in 1..rdeg {
        companion[(i, i - 1)] = 1.0;
    }
    let eig = companion.complex_eigenvalues();
    for z0 in eig.iter() {
        roots.push(polish_root(reduced, *z0));
    }
    debug_assert_eq!(roots.len(), deg);
    Ok(roots)
}

// A few Newton steps, kept only while they reduce the residual.
fn polish_root(coeffs: &[f64], mut z: Complex64) -> Complex64 {
    let mut best = poly_eval(coeffs, z).norm();
    for _ in 0..3 {
        let d = poly_eval_derivative(coeffs, z);
        if d.norm() == 0.0 {
            break;
        }
        let cand = z - poly_eval(coeffs, z) / d;
        let r = poly_eval(coeffs, cand).norm();
        if r.is_finite() && r < best {
            z = cand;
            best = r;
        } else {
            break;
        }
    }
    // Keep real roots of real polynomials on the real axis.
    if z.im.abs() < 1e-14 * (1.0 + z.re.abs()) {
        z.im = 0.0;
    }
    z
}

/// Real monic polynomial `[1, c_1, .., c_n]` with the given roots.
/// Complex roots must come in conjugate pairs; imaginary residue is dropped.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, &c) in acc.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_toeplitz() {
        let t = build_lt_toeplitz(&[1.0], 3).unwrap();
        assert_eq!(t.to_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn two_tap_toeplitz_layout() {
        let t = build_lt_toeplitz(&[1.0, 2.0], 3).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(3, 3, &[1., 0., 0., 2., 1., 0., 0., 2., 1.]);
        assert_eq!(t, expect);
    }

    #[test]
    fn toeplitz_rejects_long_column() {
        assert!(matches!(
            build_lt_toeplitz(&[1.0, 2.0, 3.0], 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fir_hand_cases() {
        let x = [0.3, -1.0, 2.5];
        assert_eq!(fir_apply(&[1.0], &x).unwrap(), x.to_vec());
        assert_eq!(
            fir_apply(&[1.0, 1.0], &[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 1.0, 0.0]
        );
        assert!(matches!(fir_apply(&[1.0], &[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn fir_matches_dense_multiply() {
        let mut r = rng();
        let coeffs: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        let dense = build_lt_toeplitz(&coeffs, 16).unwrap().to_dense();
        let oracle = &dense * DVector::from_column_slice(&x);
        let oracle_t = dense.transpose() * DVector::from_column_slice(&x);
        let fast = fir_apply(&coeffs, &x).unwrap();
        let fast_t = fir_transpose_apply(&coeffs, &x).unwrap();
        for i in 0..16 {
            assert!((fast[i] - oracle[i]).abs() < 1e-12);
            assert!((fast_t[i] - oracle_t[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_filter_undoes_fir() {
        let mut r = rng();
        let mut coeffs = vec![1.0];
        coeffs.extend((0..4).map(|_| r.random_range(-0.5..0.5)));
        let x: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let t = build_lt_toeplitz(&coeffs, 20).unwrap();
        assert!(t.is_unit_lower_triangular());
        let back = t.solve(&t.mul_vec(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gram_matches_dense() {
        let coeffs = [1.0, -0.4, 0.3, 0.2];
        let dense = build_lt_toeplitz(&coeffs, 9).unwrap().to_dense();
        let g = toeplitz_gram(&coeffs, 9);
        let oracle = dense.transpose() * &dense;
        assert!((g - oracle).abs().max() < 1e-14);
    }

    #[test]
    fn fir_coefficients_must_be_monic() {
        assert!(FirCoefficients::new(vec![0.5, 1.0]).is_err());
        assert!(FirCoefficients::new(vec![1.0, f64::NAN]).is_err());
        let f = FirCoefficients::from_tail(&[0.2, 0.1]).unwrap();
        assert_eq!(f.taps(), &[1.0, 0.2, 0.1]);
        assert_eq!(f.order(), 2);
    }

    #[test]
    fn spd_trivial_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            solve_spd(&id, &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let two = DMatrix::from_element(1, 1, 2.0);
        assert!((solve_spd(&two, &[4.0]).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spd_matches_explicit_inverse() {
        let mut r = rng();
        let n = 12;
        let g = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let m = &g * g.transpose() + DMatrix::identity(n, n);
        let rhs: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let oracle = m.clone().try_inverse().unwrap() * DVector::from_column_slice(&rhs);
        let x = solve_spd(&m, &rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() <= 1e-9 * oracle.amax());
        }
        let inv = spd_inverse(&m).unwrap();
        assert!((&m * inv - DMatrix::identity(n, n)).amax() < 1e-9);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_spd(&m, &[1.0, 1.0]),
            Err(Error::Numerical(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(solve_spd(&asym, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lls_square_and_consistent() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = solve_lls(&a, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);

        let d = DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 1., 1., 2., -1.]);
        let truth = [0.5, -2.0];
        let t: Vec<f64> = (0..4)
            .map(|i| d[(i, 0)] * truth[0] + d[(i, 1)] * truth[1])
            .collect();
        let x = solve_lls(&d, &t).unwrap();
        assert!((x[0] - truth[0]).abs() < 1e-12 && (x[1] - truth[1]).abs() < 1e-12);
    }

    #[test]
    fn lls_matches_normal_equations() {
        let mut r = rng();
        let d = DMatrix::from_fn(50, 5, |_, _| r.random_range(-1.0..1.0));
        let t: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let tv = DVector::from_column_slice(&t);
        let oracle = (d.transpose() * &d).try_inverse().unwrap() * d.transpose() * &tv;
        let x = solve_lls(&d, &t).unwrap();
        for i in 0..5 {
            assert!((x[i] - oracle[i]).abs() < 1e-9);
        }
        let resid = &tv - &d * DVector::from_column_slice(&x);
        assert!((d.transpose() * resid).amax() < 1e-8 * tv.norm());
    }

    #[test]
    fn lls_detects_rank_deficiency() {
        let d = DMatrix::from_row_slice(3, 2, &[1., 2., 2., 4., 3., 6.]);
        assert!(matches!(
            solve_lls(&d, &[1.0, 2.0, 3.0]),
            Err(Error::Rank(_))
        ));
    }

    fn sorted_re(mut v: Vec<Complex64>) -> Vec<f64> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        v.into_iter().map(|z| z.re).collect()
    }

    #[test]
    fn roots_hand_cases() {
        let r = sorted_re(poly_roots(&[1.0, 0.0, -1.0]).unwrap());
        assert!((r[0] + 1.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        let r = sorted_re(poly_roots(&[1.0, -0.75, 0.125]).unwrap());
        assert!((r[0] - 0.25).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
        assert!(matches!(poly_roots(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn roots_of_random_degree_eight() {
        let mut r = rng();
        for _ in 0..20 {
            let mut c = vec![1.0];
            c.extend((0..8).map(|_| r.random_range(-1.0..1.0)));
            let scale = c.iter().map(|v: &f64| v.abs()).fold(0.0, f64::max);
            let roots = poly_roots(&c).unwrap();
            assert_eq!(roots.len(), 8);
            for z in roots {
                assert!(poly_eval(&c, z).norm() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn roots_round_trip_through_expansion() {
        let c = [1.0, -0.3, 0.0, 0.2, 0.0];
        let back = poly_from_roots(&poly_roots(&c).unwrap());
        for (a, b) in back.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
