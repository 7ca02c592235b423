//! Dense f64 tensors in channels-last layout.

use crate::error::{CoreError, Result};

/// Row-major tensor: images are (n, h, w, c), flat features (n, f).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(CoreError::Mismatch(format!(
                "tensor data has {} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Elements per batch sample.
    pub fn sample_len(&self) -> usize {
        if self.batch() == 0 {
            0
        } else {
            self.len() / self.batch()
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.dims.len() != 4 {
            return Err(CoreError::Mismatch(format!(
                "expected rank-4 tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.dims.len() != 2 {
            return Err(CoreError::Mismatch(format!(
                "expected rank-2 tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1]))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
