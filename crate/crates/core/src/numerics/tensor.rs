use super::Real;
use crate::{Error, Result};
use rand::Rng;
use std::fmt;

/// Tensor extents in NHWC order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims4 {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Dims4 { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn with_batch(self, n: usize) -> Self {
        Dims4 { n, ..self }
    }
}

impl fmt::Display for Dims4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Rank-4 array in NHWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims4,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: Dims4) -> Self {
        Tensor4 {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn filled(dims: Dims4, value: T) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims4, data: Vec<T>) -> Result<Self> {
        if dims.n == 0 || dims.h == 0 || dims.w == 0 || dims.c == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be >= 1, got {dims}"
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::shape("Tensor4::from_vec", dims.len(), data.len()));
        }
        Ok(Tensor4 { dims, data })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(dims: Dims4, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..dims.len())
            .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        let d = self.dims;
        ((n * d.h + y) * d.w + x) * d.c + c
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(n, y, x, c)]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.dims.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Same data, new extents. Element count must match.
    pub fn reshape(self, dims: Dims4) -> Result<Self> {
        if dims.len() != self.data.len() {
            return Err(Error::shape("Tensor4::reshape", self.dims, dims));
        }
        Ok(Tensor4 {
            dims,
            data: self.data,
        })
    }

    /// Copy of the batch items at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let len = self.dims.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor4 {
            dims: self.dims.with_batch(indices.len()),
            data,
        }
    }

    /// Stack single-or-multi batch tensors with identical per-sample extents.
    pub fn concat(parts: &[&Tensor4<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("Tensor4::concat"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims.with_batch(1) != first.dims.with_batch(1) {
                return Err(Error::shape("Tensor4::concat", first.dims, p.dims));
            }
            n += p.dims.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            dims: first.dims.with_batch(n),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Tensor4<T>) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape("Tensor4::dot", self.dims, other.dims));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_dims(&self, op: &'static str, want: Dims4) -> Result<()> {
        if self.dims != want {
            return Err(Error::shape(op, want, self.dims));
        }
        Ok(())
    }
}
