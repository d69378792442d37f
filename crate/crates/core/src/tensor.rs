//! Dense row-major `f64` tensors.
//!
//! No broadcasting: binary operations require identical shapes. Bias rows are
//! expanded explicitly with [`Tensor::repeat_rows`].

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero or missing extent")]
    InvalidShape(Vec<usize>),
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("division by zero at flat index {0}")]
    DivisionByZero(usize),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_finite(data: &[f64]) -> Result<(), TensorError> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(TensorError::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

impl Tensor {
    /// Builds a tensor, rejecting bad shapes, wrong lengths and NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::LengthMismatch {
                shape: vec![rows.len(), cols],
                expected: cols,
                actual: bad.len(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid shape {shape:?}"
        );
        assert!(value.is_finite());
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Internal constructor for results of arithmetic on finite inputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|x| x.is_finite()),
            "operation produced a non-finite value"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Replaces the payload in place. Length and finiteness are re-validated.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<(), TensorError> {
        if data.len() != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: self.shape.clone(),
                expected: self.data.len(),
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        self.data = data;
        Ok(())
    }

    /// Element at `(row, col)` of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.rank() == 1 {
            self.shape[0]
        } else {
            self.shape[1]
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|x| x * factor)
    }

    fn require_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn ewise(&self, other: &Self, op: BinaryOp) -> Result<Self, TensorError> {
        self.require_same_shape(other, "ewise")?;
        let data = match op {
            BinaryOp::Add => zip_with(&self.data, &other.data, |a, b| a + b),
            BinaryOp::Sub => zip_with(&self.data, &other.data, |a, b| a - b),
            BinaryOp::Mul => zip_with(&self.data, &other.data, |a, b| a * b),
            BinaryOp::Div => {
                if let Some(i) = other.data.iter().position(|&b| b == 0.0) {
                    return Err(TensorError::DivisionByZero(i));
                }
                zip_with(&self.data, &other.data, |a, b| a / b)
            }
        };
        check_finite(&data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.ewise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.ewise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.ewise(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Self) -> Result<Self, TensorError> {
        self.ewise(other, BinaryOp::Div)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (r, k, c) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; r * c];
        // i-k-j order walks both operands contiguously.
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * c..(i + 1) * c];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * c..(p + 1) * c];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite(&out)?;
        Ok(Self::from_parts(vec![r, c], out))
    }

    pub fn transpose(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    pub fn reduce_sum(&self, axis: usize) -> Result<Self, TensorError> {
        let rank = self.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += self.data[base + i];
                }
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        check_finite(&out)?;
        Ok(Self::from_parts(shape, out))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// Stacks a rank-1 tensor `n` times into an `n × len` matrix.
    pub fn repeat_rows(&self, n: usize) -> Self {
        assert_eq!(self.rank(), 1, "repeat_rows expects a vector");
        let len = self.data.len();
        let mut data = Vec::with_capacity(n * len);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Self::from_parts(vec![n, len], data)
    }

    /// Rows `indices` of a matrix, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let cols = self.shape[1];
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_parts(vec![indices.len(), cols], data)
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Global l2 norm over a list of tensors.
pub fn global_l2_norm(tensors: &[Tensor]) -> f64 {
    tensors.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_values(n: usize, mut seed: u64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn naive_matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * c + j];
                }
                out[i * c + j] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_matmul() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        for (r, k, c, seed) in [(5, 7, 3, 1), (64, 64, 64, 2), (1, 9, 13, 3)] {
            let a = lcg_values(r * k, seed);
            let b = lcg_values(k * c, seed + 100);
            let expected = naive_matmul(&a, &b, r, k, c);
            let got = Tensor::new(vec![r, k], a)
                .unwrap()
                .matmul(&Tensor::new(vec![k, c], b).unwrap())
                .unwrap();
            for (g, e) in got.as_slice().iter().zip(&expected) {
                assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn ewise_basics() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let m = Tensor::from_vec(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.mul(&m).unwrap().as_slice(), &[0.0, 2.0, 0.0]);
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let y = Tensor::from_vec(vec![3.0, 4.0]).unwrap();
        assert_eq!(x.add(&y).unwrap().as_slice(), &[4.0, 6.0]);
        assert_eq!(y.sub(&x).unwrap().as_slice(), &[2.0, 2.0]);
        assert_eq!(y.div(&x).unwrap().as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn square_matches_scalar_loop() {
        let v = lcg_values(257, 9);
        let t = Tensor::from_vec(v.clone()).unwrap();
        let sq = t.mul(&t).unwrap();
        for (s, x) in sq.as_slice().iter().zip(&v) {
            assert_eq!(*s, x * x);
        }
    }

    #[test]
    fn ewise_errors() {
        let a = Tensor::zeros(&[3]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(
            a.add(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let one = Tensor::filled(&[3], 1.0);
        assert_eq!(one.div(&a), Err(TensorError::DivisionByZero(0)));
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            Tensor::from_vec(vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1, .. })
        ));
        assert!(Tensor::from_vec(vec![f64::INFINITY]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn norms() {
        let t = Tensor::from_vec(vec![3.0, 4.0]).unwrap();
        assert_eq!(t.l2_norm(), 5.0);
        let z = Tensor::zeros(&[3]);
        assert_eq!((z.l2_norm(), z.linf_norm()), (0.0, 0.0));
        assert_eq!(Tensor::from_vec(vec![1.0, -2.0, 2.0]).unwrap().linf_norm(), 2.0);
    }

    #[test]
    fn reduce_sum_axes() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.reduce_sum(0).unwrap().as_slice(), &[4.0, 6.0]);
        assert_eq!(m.reduce_sum(1).unwrap().as_slice(), &[3.0, 7.0]);
        assert_eq!(
            m.reduce_sum(2),
            Err(TensorError::AxisOutOfRange { axis: 2, rank: 2 })
        );
    }

    #[test]
    fn reduce_sum_matches_scalar_loop_rank3() {
        let (a, b, c) = (3, 4, 5);
        let v = lcg_values(a * b * c, 4);
        let t = Tensor::new(vec![a, b, c], v.clone()).unwrap();
        let s1 = t.reduce_sum(1).unwrap();
        assert_eq!(s1.shape(), &[a, c]);
        for i in 0..a {
            for k in 0..c {
                let mut acc = 0.0;
                for j in 0..b {
                    acc += v[(i * b + j) * c + k];
                }
                assert!((s1.as_slice()[i * c + k] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l2_squared_equals_sum_of_squares() {
        let t = Tensor::new(vec![8, 8], lcg_values(64, 5)).unwrap();
        let via_reduce = t.mul(&t).unwrap().reduce_sum(1).unwrap().reduce_sum(0).unwrap();
        assert!((t.l2_norm().powi(2) - via_reduce.as_slice()[0]).abs() < 1e-12);
    }

    #[test]
    fn repeat_and_transpose() {
        let b = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let r = b.repeat_rows(3);
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.as_slice(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let t = r.transpose();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.as_slice(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }
}
