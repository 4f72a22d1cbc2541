use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Activations are always `N x C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[n, c, h, w]`; panics on tensors of another rank.
    pub fn dims4(&self) -> [usize; 4] {
        <[usize; 4]>::try_from(self.shape.as_slice()).expect("rank-4 tensor")
    }

    /// Contiguous `C x H x W` block of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let per: usize = self.shape[1..].iter().product();
        &self.data[n * per..(n + 1) * per]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let per: usize = self.shape[1..].iter().product();
        &mut self.data[n * per..(n + 1) * per]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Element-type conversion through `f64`.
    pub fn cast<S: Scalar>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| S::lit(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Stacks equally shaped `C x H x W` samples into one batch.
    pub fn stack(samples: &[&[T]], chw: [usize; 3]) -> Result<Self> {
        let per = chw.iter().product::<usize>();
        let mut data = Vec::with_capacity(per * samples.len());
        for s in samples {
            if s.len() != per {
                return Err(Error::ShapeMismatch(format!(
                    "sample of {} values, expected {per}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor {
            shape: vec![samples.len(), chw[0], chw[1], chw[2]],
            data,
        })
    }
}
