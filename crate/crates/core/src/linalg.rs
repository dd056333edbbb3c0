//! Singular value decomposition and the Moore-Penrose pseudoinverse.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::{shape_str, Tensor2D};

/// Default relative cutoff for treating singular values as zero.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Thin singular value decomposition `m = U · diag(S) · Vt`.
///
/// `U` is `rows × k`, `Vt` is `k × cols` with `k = min(rows, cols)`, and the
/// singular values are non-negative and sorted in descending order.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Tensor2D,
    pub s: Vec<f64>,
    pub vt: Tensor2D,
}

fn to_dmatrix(m: &Tensor2D) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Tensor2D {
    Tensor2D::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

impl Tensor2D {
    /// Thin SVD with singular values sorted in descending order.
    pub fn svd(&self) -> Result<Svd> {
        // Convergence tolerance below 5·eps makes the implicit-shift
        // iteration mis-converge on exactly rank-deficient inputs.
        let svd = to_dmatrix(self)
            .try_svd(true, true, 5.0 * f64::EPSILON, 4000)
            .ok_or_else(|| {
                Error::Numeric(format!(
                    "SVD did not converge for {} matrix (frobenius norm {:.3e})",
                    shape_str(self.rows(), self.cols()),
                    self.frobenius_norm()
                ))
            })?;
        let u = svd.u.as_ref().expect("U requested");
        let vt = svd.v_t.as_ref().expect("Vt requested");
        Ok(Svd {
            u: from_dmatrix(u),
            s: svd.singular_values.iter().copied().collect(),
            vt: from_dmatrix(vt),
        })
    }

    /// Moore-Penrose pseudoinverse.
    ///
    /// Singular values at or below `rcond · σ_max` are treated as zero. The
    /// result satisfies the four Penrose conditions up to SVD accuracy.
    pub fn pinv(&self, rcond: f64) -> Result<Tensor2D> {
        if !(rcond > 0.0 && rcond < 1.0) {
            return Err(Error::Validation(format!(
                "rcond must lie in (0, 1), got {rcond}"
            )));
        }
        let Svd { u, s, vt } = self.svd()?;
        let cutoff = rcond * s.first().copied().unwrap_or(0.0);
        // pinv = V · diag(1/σ kept) · Uᵀ, assembled as Vtᵀ·(scaled Uᵀ).
        let k = s.len();
        let ut_scaled = Tensor2D::from_fn(k, u.rows(), |j, i| {
            if s[j] > cutoff {
                u.get(i, j) / s[j]
            } else {
                0.0
            }
        });
        vt.transpose().matmul(&ut_scaled)
    }
}

/// Best rank-`r` approximation: keep the `r` leading singular triplets.
pub fn truncated_svd_approx(m: &Tensor2D, rank: usize) -> Result<(Tensor2D, f64)> {
    let Svd { u, s, vt } = m.svd()?;
    let kept = rank.min(s.len());
    let mut out = Tensor2D::zeros(m.rows(), m.cols());
    for j in 0..kept {
        let sj = s[j];
        for i in 0..m.rows() {
            let uij = u.get(i, j) * sj;
            for c in 0..m.cols() {
                out.data_mut()[i * m.cols() + c] += uij * vt.get(j, c);
            }
        }
    }
    let tail_energy: f64 = s[kept..].iter().map(|v| v * v).sum();
    Ok((out, tail_energy))
}
