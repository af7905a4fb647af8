//! Dense row-major `f64` tensors.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr_free::standard_normal;

use super::NumericsError;

/// Dense real array in row-major order.
///
/// Every constructor checks that the shape matches the data length and that
/// all entries are finite.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Row-major data of the transpose, built on first use. Parameters are
    /// shared snapshots, so a frozen weight is transposed once per run.
    transposed: OnceLock<Arc<Vec<f64>>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumericsError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::LengthMismatch { shape, len: data.len() });
        }
        check_finite("tensor", &data)?;
        Ok(Self::from_parts(shape, data))
    }

    /// Builds a tensor whose data is already known to be finite and sized.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            transposed: OnceLock::new(),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        let len = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; len])
    }

    pub fn scalar(value: f64) -> Result<Self, NumericsError> {
        Self::new(vec![1], vec![value])
    }

    /// `rows × cols` matrix from nested rows.
    pub fn matrix(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(NumericsError::InvalidShape(vec![n, m]));
        }
        Self::new(vec![n, m], rows.concat())
    }

    pub fn vector(values: &[f64]) -> Result<Self, NumericsError> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Gaussian entries with mean zero and the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| std * standard_normal(rng)).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.transposed = OnceLock::new();
        &mut self.data
    }

    /// Row-major data of the transpose of a matrix, cached.
    pub(crate) fn transposed_data(&self) -> Arc<Vec<f64>> {
        let (r, c) = self.dims2();
        Arc::clone(
            self.transposed
                .get_or_init(|| Arc::new(transpose_raw(&self.data, r, c))),
        )
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix; a 1-D tensor is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        Self::new(shape, self.data)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        Self::from_parts(vec![c, r], transpose_raw(&self.data, r, c))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest elementwise absolute difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor, NumericsError> {
        let data: Vec<f64> = self.data.iter().map(|x| x * s).collect();
        check_finite("scale", &data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                op: "elementwise",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        check_finite("elementwise", &data)?;
        Ok(Self::from_parts(self.shape.clone(), data))
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(op))
    }
}

fn transpose_raw(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

/// Box-Muller normal sampler, kept local so the stream only depends on `rand`'s
/// uniform generator.
mod rand_distr_free {
    use rand::Rng;

    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.gen();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}
