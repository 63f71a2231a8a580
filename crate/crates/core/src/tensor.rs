//! Dense row-major `f64` matrices.
//!
//! Element `(r, c)` lives at `data[r * cols + c]`. The products below split
//! work by output row and accumulate each entry in ascending inner index, so
//! the parallel and sequential builds produce identical bits.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape("hadamard", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    par::for_each_row_mut(&mut out.data, n, |i, out_row| {
        for (j, &av) in a.row(i).iter().enumerate() {
            // Sparse inputs (MNIST pixels) skip most of the work here.
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[j * n..(j + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    par::for_each_row_mut(&mut out.data, n, |i, out_row| {
        for s in 0..a.rows {
            let av = a.data[s * a.cols + i];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[s * n..(s + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

/// `a * bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    let k = a.cols;
    par::for_each_row_mut(&mut out.data, b.rows, |i, out_row| {
        let a_row = a.row(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b.data[j * k..(j + 1) * k];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    Ok(out)
}

/// A `rows x cols` matrix of independent Bernoulli(`p_one`) entries.
///
/// Consumes exactly `rows * cols` draws, in row-major order; an entry is 1
/// when its uniform draw is below `p_one`.
pub fn bernoulli_matrix(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    p_one: f64,
) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&p_one) {
        return Err(Error::InvalidProbability(p_one));
    }
    let data = (0..rows * cols)
        .map(|_| if rng.next_f64() < p_one { 1.0 } else { 0.0 })
        .collect();
    Ok(Matrix { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_left() {
        let x = m(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
        assert_eq!(matmul(&x, &Matrix::identity(2)).unwrap(), x);
    }

    #[test]
    fn hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), m(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn mismatch_reports_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)).unwrap_err();
        match err {
            Error::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = RngStream::new(9, 0);
        let a = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let b = Matrix::from_fn(4, 5, |_, _| rng.uniform(-1.0, 1.0));
        let c = Matrix::from_fn(6, 3, |_, _| rng.uniform(-1.0, 1.0));
        assert_eq!(
            matmul_tn(&a, &b).unwrap(),
            matmul(&a.transpose(), &b).unwrap()
        );
        let nt = matmul_nt(&a, &c).unwrap();
        let reference = matmul(&a, &c.transpose()).unwrap();
        for (x, y) in nt.data().iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn bernoulli_degenerate() {
        let mut rng = RngStream::new(1, 0);
        assert!(bernoulli_matrix(&mut rng, 4, 5, 1.0)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));
        assert!(bernoulli_matrix(&mut rng, 4, 5, 0.0)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert_eq!(rng.position(), 40);
        assert!(matches!(
            bernoulli_matrix(&mut rng, 1, 1, 1.5),
            Err(Error::InvalidProbability(_))
        ));
        assert!(bernoulli_matrix(&mut rng, 1, 1, -0.1).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let x = m(&[&[0.2, 0.4, 0.4], &[0.9, 0.05, 0.05]]);
        assert_eq!(x.argmax_rows(), vec![1, 0]);
    }
}
