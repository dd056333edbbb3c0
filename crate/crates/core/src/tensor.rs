//! Dense row-major `f64` matrices and the small arithmetic kernel the
//! merging algorithms are built on.
//!
//! All computation in this crate happens in 64-bit floats regardless of the
//! on-disk storage dtype; pseudoinverse residuals degrade visibly with
//! 32-bit accumulation.

use crate::error::{Error, Result};

/// Dense real matrix with row-major storage.
///
/// Invariants: `rows > 0`, `cols > 0`, `data.len() == rows * cols`.
/// Values are immutable after construction; operations return new tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub(crate) fn shape_str(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}

impl Tensor2D {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row-major data. Fails if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "tensor dimensions must be positive, got {}",
                shape_str(rows, cols)
            )));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Validation("tensor element count overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "data length {} does not match {} ({} elements)",
                data.len(),
                shape_str(rows, cols),
                expected
            )));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    /// Build elementwise from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor2D { rows, cols, data }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        Tensor2D::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are always positive
    }

    /// Row-major view of the raw data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Tensor2D, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op} requires equal shapes, got {} and {}",
                shape_str(self.rows, self.cols),
                shape_str(other.rows, other.cols)
            )));
        }
        Ok(())
    }

    /// Frobenius norm: square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.sq_frobenius_norm().sqrt()
    }

    /// Sum of squared entries (squared Frobenius norm).
    pub fn sq_frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Squared Frobenius distance `‖self - other‖_F²` without allocating.
    pub fn sq_frobenius_distance(&self, other: &Tensor2D) -> Result<f64> {
        self.same_shape(other, "distance")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum())
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {} by {}: inner dimensions {} and {} differ",
                shape_str(self.rows, self.cols),
                shape_str(other.rows, other.cols),
                self.cols,
                other.rows
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        // i-k-j order keeps both operands streaming in row-major.
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor2D {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Transpose. Applying it twice returns the original bit-exactly.
    pub fn transpose(&self) -> Tensor2D {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor2D {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Weighted sum `Σ cᵢ·mᵢ` over a non-empty list of equally shaped terms.
    pub fn weighted_sum(terms: &[(f64, &Tensor2D)]) -> Result<Tensor2D> {
        let (first_c, first) = terms
            .first()
            .ok_or_else(|| Error::Validation("weighted_sum requires at least one term".into()))?;
        let mut out = first.scale(*first_c);
        for (c, m) in &terms[1..] {
            first.same_shape(m, "weighted_sum")?;
            for (o, v) in out.data.iter_mut().zip(&m.data) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.same_shape(other, "add")?;
        Ok(Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor2D) -> Result<Tensor2D> {
        self.same_shape(other, "sub")?;
        Ok(Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

impl std::ops::Index<(usize, usize)> for Tensor2D {
    type Output = f64;

    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.data[row * self.cols + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frobenius_norm_zero_matrix() {
        assert_eq!(Tensor2D::zeros(2, 2).frobenius_norm(), 0.0);
    }

    #[test]
    fn frobenius_norm_three_four_five() {
        let m = Tensor2D::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_relative_eq!(m.frobenius_norm(), 5.0, max_relative = 1e-15);
    }

    #[test]
    fn frobenius_norm_identity() {
        for n in [1, 3, 7] {
            assert_relative_eq!(
                Tensor2D::identity(n).frobenius_norm(),
                (n as f64).sqrt(),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn matmul_identity_is_noop() {
        let m = Tensor2D::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = Tensor2D::identity(2).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Tensor2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor2D::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), (1, 1));
        assert_eq!(out.get(0, 0), 11.0);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let m = Tensor2D::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let z = Tensor2D::zeros(4, 2);
        let out = z.matmul(&m).unwrap();
        assert_eq!(out, Tensor2D::zeros(4, 3));
    }

    #[test]
    fn matmul_shape_error_names_both_operands() {
        let a = Tensor2D::zeros(2, 3);
        let b = Tensor2D::zeros(4, 5);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x5"), "{msg}");
    }

    #[test]
    fn transpose_flips_shape() {
        let m = Tensor2D::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let t = m.transpose();
        assert_eq!(t.shape(), (3, 1));
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn transpose_of_symmetric_is_identity() {
        let m = Tensor2D::from_vec(2, 2, vec![1.0, 5.0, 5.0, 2.0]).unwrap();
        assert_eq!(m.transpose(), m);
    }

    #[test]
    fn transpose_definition() {
        let m = Tensor2D::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = m.transpose();
        assert_eq!(t.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn weighted_sum_single_term_is_identity() {
        let m = Tensor2D::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let out = Tensor2D::weighted_sum(&[(1.0, &m)]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn weighted_sum_convex_split() {
        let m = Tensor2D::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let out = Tensor2D::weighted_sum(&[(0.5, &m), (0.5, &m)]).unwrap();
        for (a, b) in out.data().iter().zip(m.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn weighted_sum_cancellation() {
        let a = Tensor2D::from_vec(1, 1, vec![1.0]).unwrap();
        let b = Tensor2D::from_vec(1, 1, vec![-3.0]).unwrap();
        let out = Tensor2D::weighted_sum(&[(3.0, &a), (1.0, &b)]).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn weighted_sum_rejects_shape_mismatch() {
        let a = Tensor2D::zeros(1, 2);
        let b = Tensor2D::zeros(2, 1);
        assert!(Tensor2D::weighted_sum(&[(1.0, &a), (1.0, &b)]).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor2D::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor2D::from_vec(0, 2, vec![]).is_err());
    }
}
