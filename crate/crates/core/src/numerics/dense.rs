//! Row-major dense matrices and vectors over `f64`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(invalid!("{what}: non-finite entry at index {i}")),
        None => Ok(()),
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Shape-checked but finiteness-unchecked; callers validate.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!("matrix {rows}x{cols} needs {} entries, got {}", rows * cols, data.len()));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid!("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Entries drawn i.i.d. from N(0, std^2).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Self { rows, cols, data }
    }

    /// Random matrix with orthonormal rows (Gram-Schmidt on a Gaussian draw); square only.
    pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        loop {
            let mut m = Self::random_normal(n, n, 1.0, rng);
            let mut ok = true;
            for i in 0..n {
                for j in 0..i {
                    let d: f64 = (0..n).map(|k| m.get(i, k) * m.get(j, k)).sum();
                    for k in 0..n {
                        let v = m.get(i, k) - d * m.get(j, k);
                        m.set(i, k, v);
                    }
                }
                let norm = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    ok = false;
                    break;
                }
                for k in 0..n {
                    let v = m.get(i, k) / norm;
                    m.set(i, k, v);
                }
            }
            if ok {
                return m;
            }
        }
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
        self.data.is_empty()
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
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(invalid!("matmul shape mismatch: {}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.dim() {
            return Err(invalid!("matvec shape mismatch: {}x{} * {}", self.rows, self.cols, v.dim()));
        }
        let data = (0..self.rows).map(|r| dot_slices(self.row(r), v.data())).collect();
        Ok(Vector { data })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid!("shape mismatch {:?} vs {:?}", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(invalid!("vstack column mismatch"));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn as_column(&self) -> Result<Vector> {
        if self.cols != 1 {
            return Err(invalid!("expected a column, got {}x{}", self.rows, self.cols));
        }
        Ok(Vector { data: self.data.clone() })
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(invalid!("shape mismatch {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Self { data })
    }

    pub fn random_normal<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self { data: (0..dim).map(|_| normal.sample(rng)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector { data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(invalid!("dot dim mismatch: {} vs {}", self.dim(), other.dim()));
        }
        Ok(dot_slices(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.data, &self.data).sqrt()
    }

    pub fn concat(parts: &[&Vector]) -> Vector {
        Vector { data: parts.iter().flat_map(|v| v.data.iter().copied()).collect() }
    }

    /// Column-matrix view (dim x 1).
    pub fn to_column(&self) -> Matrix {
        Matrix { rows: self.data.len(), cols: 1, data: self.data.clone() }
    }

    fn zip_with(&self, other: &Vector, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        if self.dim() != other.dim() {
            return Err(invalid!("dim mismatch: {} vs {}", self.dim(), other.dim()));
        }
        Ok(Vector { data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() })
    }
}

impl From<Vector> for Matrix {
    fn from(v: Vector) -> Self {
        let rows = v.data.len();
        Matrix { rows, cols: 1, data: v.data }
    }
}

/// Sequential left-to-right dot product.
#[inline]
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax_slice(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(v: &Vector) -> Result<Vector> {
    if v.dim() == 0 {
        return Err(invalid!("softmax of an empty vector"));
    }
    Ok(Vector { data: softmax_slice(&v.data) })
}

pub fn argmax_det(v: &Vector) -> Result<usize> {
    if v.dim() == 0 {
        return Err(invalid!("argmax of an empty vector"));
    }
    Ok(argmax_slice(&v.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric_and_overflow_safe() {
        let s = softmax(&Vector::from_vec(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Vector::from_vec(vec![1000.0; 3]).unwrap()).unwrap();
        for x in s.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn softmax_one_two_three() {
        // Values from mpmath: exp(k) / (e + e^2 + e^3).
        let expected = [0.090_030_573_170_380_457_998, 0.244_728_471_054_797_652_473, 0.665_240_955_774_821_889_529];
        let s = softmax(&Vector::from_vec(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let e = Vector::from_vec(vec![]).unwrap();
        assert!(softmax(&e).is_err());
        assert!(argmax_det(&e).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let v = |d: &[f64]| Vector::from_vec(d.to_vec()).unwrap();
        assert_eq!(argmax_det(&v(&[1.0, 1.0, 0.0])).unwrap(), 0);
        assert_eq!(argmax_det(&v(&[0.0, 5.0, 5.0])).unwrap(), 1);
        assert_eq!(argmax_det(&v(&[0.1, 0.9, 0.3])).unwrap(), 1);
    }

    #[test]
    fn matvec_basics() {
        let v = Vector::from_vec(vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v);
        assert_eq!(Matrix::zeros(2, 3).matvec(&v).unwrap(), Vector::zeros(2));
        assert!(Matrix::zeros(2, 2).matvec(&v).is_err());
    }

    #[test]
    fn matmul_three_by_three_by_hand() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 3.0], vec![2.0, 0.0, -2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![4.0, -1.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap();
        // Row i of a*b worked by hand.
        let expected = Matrix::from_rows(&[vec![8.0, -1.0, 2.0], vec![5.0, 1.5, 1.0], vec![-2.0, 0.0, 2.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), expected);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn non_finite_construction_rejected() {
        assert!(Vector::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Matrix::random_orthogonal(6, &mut rng);
        let qqt = q.matmul(&q.transpose()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qqt.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vstack_and_concat() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let s = Matrix::vstack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), (3, 2));
        assert_eq!(s.row(2), &[5.0, 6.0]);
        let v = Vector::concat(&[&Vector::zeros(1), &Vector::from_vec(vec![2.0]).unwrap()]);
        assert_eq!(v.data(), &[0.0, 2.0]);
    }
}
