//! Dense row-major numeric tensors.
//!
//! Training runs on `f32`; every operation is also available on `f64` so
//! gradients can be verified against central finite differences at tight
//! tolerances.

use crate::error::{Error, Result};

/// Element type of a [`DenseTensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln_1p(self) -> Self {
        f32::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Flat row-major numeric array with an explicit shape.
///
/// Rank-2 `[n, d]` is the canonical hidden-state layout; rank 1 is used for
/// biases and schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T = f32> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidArgument {
                op: "DenseTensor::new".into(),
                message: "rank must be at least 1".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::InvalidArgument {
                op: "DenseTensor::new".into(),
                message: format!(
                    "shape {:?} implies {} values, got {}",
                    shape,
                    expected,
                    values.len()
                ),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![T::ZERO; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
        }
    }

    /// Rank-2 constructor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        debug_assert!(rows.iter().all(|r| r.len() == cols));
        Self {
            shape: vec![rows.len(), cols],
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows when viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per row when viewed as a matrix: product of trailing dims.
    pub fn row_width(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_width();
        &self.values[i * w..(i + 1) * w]
    }

    /// Reinterpret as rank-2 `[rows, row_width]` without copying.
    pub fn to_matrix(mut self) -> Self {
        let w = self.row_width();
        self.shape = vec![self.shape[0], w];
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.values.len() {
            return Err(Error::InvalidArgument {
                op: "reshape".into(),
                message: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.to_f64()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// `y[i,j] = sum_k x[i,k] * w[k,j]`, accumulated in f64.
pub(crate) fn matmul<T: Scalar>(x: &DenseTensor<T>, w: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let (k2, m) = (w.shape()[0], w.shape()[1]);
    if k != k2 {
        return Err(Error::DimMismatch {
            op: "linear".into(),
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut out = vec![T::ZERO; n * m];
    for i in 0..n {
        let xrow = &x.values()[i * k..(i + 1) * k];
        for j in 0..m {
            let mut acc = 0.0f64;
            for (kk, &xv) in xrow.iter().enumerate() {
                acc += xv.to_f64() * w.values()[kk * m + j].to_f64();
            }
            out[i * m + j] = T::from_f64(acc);
        }
    }
    DenseTensor::new(vec![n, m], out)
}
