//! Dense symmetric positive-definite linear algebra.
//!
//! Every likelihood in the crate goes through [`chol_with_jitter`]: a plain
//! Cholesky factorization retried with a diagonal jitter that grows by powers
//! of ten. The jitter actually applied is kept on the factor so that objective
//! values can be audited afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{EtprError, Result};

/// Number of escalation steps after `base_jitter` (base, 10·base, …, 10⁶·base).
const JITTER_STEPS: i32 = 6;

/// A dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, checking that it is square, non-empty and symmetric to 1e-12 relative.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 {
            return Err(EtprError::DimensionMismatch { expected: 1, found: 0 });
        }
        if m.ncols() != n {
            return Err(EtprError::DimensionMismatch {
                expected: n,
                found: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(EtprError::ConfigInvalid(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds from a matrix already known to be symmetric (e.g. a Gram matrix
    /// assembled from one triangle).
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.0.diagonal().mean()
    }

    /// Returns `self + c·I`.
    pub fn add_diagonal(&self, c: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        SymMatrix(m)
    }
}

/// Lower-triangular Cholesky factor of `A + jitter_used·I`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
    log_det: f64,
}

impl PsdFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// log|A + jI| = 2·Σ log Lᵢᵢ.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(EtprError::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }

    /// Solves L z = b in place.
    fn forward(&self, z: &mut DVector<f64>) {
        let l = &self.lower;
        let n = l.nrows();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
    }

    /// Solves Lᵀ x = z in place.
    fn backward(&self, x: &mut DVector<f64>) {
        let l = &self.lower;
        let n = l.nrows();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    /// Full inverse (A + jI)⁻¹, used by gradient traces.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            self.forward(&mut e);
            self.backward(&mut e);
            inv.set_column(j, &e);
        }
        // symmetrize away round-off
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

/// Default base jitter: 1e-8 times the mean diagonal entry.
pub fn default_base_jitter(a: &SymMatrix) -> f64 {
    1e-8 * a.mean_diagonal().abs()
}

/// Plain Cholesky; `None` when a pivot is not strictly positive.
fn cholesky(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // relative pivot floor rejects numerically singular matrices
        if !(d > 1e-15 * (a[(j, j)].abs() + jitter)) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Factorizes `a + j·I` for the smallest `j` in {0, b, 10b, …, 10⁶b} that works.
pub fn chol_with_jitter(a: &SymMatrix, base_jitter: f64) -> Result<PsdFactor> {
    if !(base_jitter >= 0.0) {
        return Err(EtprError::ConfigInvalid(format!(
            "base jitter must be nonnegative, got {base_jitter}"
        )));
    }
    let mut schedule = vec![0.0];
    if base_jitter > 0.0 {
        schedule.extend((0..=JITTER_STEPS).map(|k| base_jitter * 10f64.powi(k)));
    }
    for &j in &schedule {
        if let Some(lower) = cholesky(a.as_matrix(), j) {
            let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            return Ok(PsdFactor {
                lower,
                jitter_used: j,
                log_det,
            });
        }
    }
    Err(EtprError::NotPositiveDefinite {
        max_jitter: *schedule.last().unwrap(),
    })
}

/// Returns x with (A + jI) x = b.
pub fn solve_psd(f: &PsdFactor, b: &DVector<f64>) -> Result<DVector<f64>> {
    f.check_len(b.len())?;
    let mut x = b.clone();
    f.forward(&mut x);
    f.backward(&mut x);
    Ok(x)
}

/// Returns yᵀ (A + jI)⁻¹ y, computed as ‖L⁻¹y‖².
pub fn quad_form(f: &PsdFactor, y: &DVector<f64>) -> Result<f64> {
    f.check_len(y.len())?;
    let mut z = y.clone();
    f.forward(&mut z);
    Ok(z.norm_squared())
}
