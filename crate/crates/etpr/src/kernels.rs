//! Composite covariance kernel: squared exponential plus a non-stationary
//! linear term,
//!
//! ```text
//! k(x, x') = v · exp(−½ Σ_q w_q (x_q − x'_q)²) + Σ_q a_q x_q x'_q
//! ```
//!
//! Each `w_q` and `a_q` carries an inclusion indicator. An excluded parameter
//! is exactly zero and takes no part in the optimization vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EtprError, Result};
use crate::numerics::SymMatrix;

/// Identifies one kernel hyperparameter. Ordering is `v, w₁..w_p, a₁..a_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    V,
    W(usize),
    A(usize),
}

/// Hyperparameters of one curve's kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub v: f64,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma: Vec<bool>,
    pub delta: Vec<bool>,
}

impl KernelParams {
    /// All parameters included.
    pub fn new(v: f64, w: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        let p = w.len();
        Self::with_mask(v, w, a, vec![true; p], vec![true; p])
    }

    pub fn with_mask(
        v: f64,
        w: Vec<f64>,
        a: Vec<f64>,
        gamma: Vec<bool>,
        delta: Vec<bool>,
    ) -> Result<Self> {
        let k = KernelParams {
            v,
            w,
            a,
            gamma,
            delta,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.w.len();
        for len in [self.a.len(), self.gamma.len(), self.delta.len()] {
            if len != p {
                return Err(EtprError::DimensionMismatch { expected: p, found: len });
            }
        }
        if !(self.v > 0.0) || !self.v.is_finite() {
            return Err(EtprError::ConfigInvalid(format!("v must be positive, got {}", self.v)));
        }
        for q in 0..p {
            if !(self.w[q] >= 0.0) || !(self.a[q] >= 0.0) {
                return Err(EtprError::ConfigInvalid(format!(
                    "w and a must be nonnegative (q = {q})"
                )));
            }
            if (!self.gamma[q] && self.w[q] != 0.0) || (!self.delta[q] && self.a[q] != 0.0) {
                return Err(EtprError::ConfigInvalid(format!(
                    "excluded parameter at q = {q} must be zero"
                )));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.w.len()
    }

    /// Included parameters in canonical order.
    pub fn active_ids(&self) -> Vec<ParamId> {
        let p = self.p();
        let mut ids = Vec::with_capacity(1 + 2 * p);
        ids.push(ParamId::V);
        ids.extend((0..p).filter(|&q| self.gamma[q]).map(ParamId::W));
        ids.extend((0..p).filter(|&q| self.delta[q]).map(ParamId::A));
        ids
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::V => self.v,
            ParamId::W(q) => self.w[q],
            ParamId::A(q) => self.a[q],
        }
    }

    pub fn set(&mut self, id: ParamId, value: f64) {
        match id {
            ParamId::V => self.v = value,
            ParamId::W(q) => self.w[q] = value,
            ParamId::A(q) => self.a[q] = value,
        }
    }

    /// Sets the indicator of `w_q`; excluding zeroes the value, including
    /// restores `value_if_included` when the parameter was zero.
    pub fn set_gamma(&mut self, q: usize, included: bool, value_if_included: f64) {
        self.gamma[q] = included;
        if !included {
            self.w[q] = 0.0;
        } else if self.w[q] == 0.0 {
            self.w[q] = value_if_included;
        }
    }

    pub fn set_delta(&mut self, q: usize, included: bool, value_if_included: f64) {
        self.delta[q] = included;
        if !included {
            self.a[q] = 0.0;
        } else if self.a[q] == 0.0 {
            self.a[q] = value_if_included;
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.p() {
            return Err(EtprError::DimensionMismatch {
                expected: self.p(),
                found: len,
            });
        }
        Ok(())
    }

    /// Squared-exponential factor exp(−½ Σ w_q (x_q − x'_q)²).
    fn se_factor(&self, x: &[f64], x2: &[f64]) -> f64 {
        let mut s = 0.0;
        for q in 0..self.p() {
            if self.gamma[q] {
                let d = x[q] - x2[q];
                s += self.w[q] * d * d;
            }
        }
        (-0.5 * s).exp()
    }

    fn linear(&self, x: &[f64], x2: &[f64]) -> f64 {
        let mut s = 0.0;
        for q in 0..self.p() {
            if self.delta[q] {
                s += self.a[q] * (x[q] * x2[q]);
            }
        }
        s
    }

    fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        self.v * self.se_factor(x, x2) + self.linear(x, x2)
    }

    /// k(x, x2).
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        self.check_input(x2.len())?;
        Ok(self.eval_unchecked(x, x2))
    }

    /// Gram matrix at the rows of `x` (n × p).
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<SymMatrix> {
        self.check_input(x.ncols())?;
        let n = x.nrows();
        if n == 0 {
            return Err(EtprError::DimensionMismatch { expected: 1, found: 0 });
        }
        let rows = row_vecs(x);
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for l in 0..=j {
                let value = self.eval_unchecked(&rows[j], &rows[l]);
                k[(j, l)] = value;
                k[(l, j)] = value;
            }
        }
        Ok(SymMatrix::from_symmetric_unchecked(k))
    }

    /// Cross-covariance vector (k(x₁,u), …, k(x_n,u)).
    pub fn cross(&self, x: &DMatrix<f64>, u: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x.ncols())?;
        self.check_input(u.len())?;
        let rows = row_vecs(x);
        Ok(DVector::from_iterator(
            rows.len(),
            rows.iter().map(|r| self.eval_unchecked(r, u)),
        ))
    }

    /// ∂K/∂θ for every active parameter, in canonical order.
    pub fn grad_gram(&self, x: &DMatrix<f64>) -> Result<Vec<(ParamId, DMatrix<f64>)>> {
        self.check_input(x.ncols())?;
        let n = x.nrows();
        if n == 0 {
            return Err(EtprError::DimensionMismatch { expected: 1, found: 0 });
        }
        let rows = row_vecs(x);
        let mut se = DMatrix::zeros(n, n);
        for j in 0..n {
            for l in 0..=j {
                let e = self.se_factor(&rows[j], &rows[l]);
                se[(j, l)] = e;
                se[(l, j)] = e;
            }
        }
        let mut out = Vec::new();
        for id in self.active_ids() {
            let m = match id {
                ParamId::V => se.clone(),
                ParamId::W(q) => DMatrix::from_fn(n, n, |j, l| {
                    let d = rows[j][q] - rows[l][q];
                    -0.5 * self.v * se[(j, l)] * d * d
                }),
                ParamId::A(q) => DMatrix::from_fn(n, n, |j, l| rows[j][q] * rows[l][q]),
            };
            out.push((id, m));
        }
        Ok(out)
    }
}

fn row_vecs(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|j| x.row(j).iter().copied().collect())
        .collect()
}
