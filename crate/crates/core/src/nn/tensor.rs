use crate::error::{Error, Result};

use super::Real;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(shape, data.len()));
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per sample (C·H·W).
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
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

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Self {
        let [n, _, h, w] = parts[0].shape;
        let c_total: usize = parts.iter().map(|p| p.c()).sum();
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for i in 0..n {
            for p in parts {
                assert_eq!((p.n(), p.h(), p.w()), (n, h, w), "concat shape mismatch");
                data.extend_from_slice(p.sample(i));
            }
        }
        Self {
            shape: [n, c_total, h, w],
            data,
        }
    }

    /// Inverse of [`Tensor::concat_channels`]: splits into the given channel
    /// counts.
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Self> {
        let [n, c, h, w] = self.shape;
        assert_eq!(counts.iter().sum::<usize>(), c, "split counts must cover channels");
        let hw = h * w;
        let mut out: Vec<Vec<T>> = counts.iter().map(|&k| Vec::with_capacity(n * k * hw)).collect();
        for i in 0..n {
            let s = self.sample(i);
            let mut off = 0;
            for (dst, &k) in out.iter_mut().zip(counts) {
                dst.extend_from_slice(&s[off * hw..(off + k) * hw]);
                off += k;
            }
        }
        out.into_iter()
            .zip(counts)
            .map(|(d, &k)| Self {
                shape: [n, k, h, w],
                data: d,
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
