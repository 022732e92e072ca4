use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dense channel-major tensor (`channels × rows × cols`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor3D<T> {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Tensor3D<T> {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![T::default(); channels * rows * cols],
        }
    }

    pub fn from_vec(
        channels: usize,
        rows: usize,
        cols: usize,
        data: Vec<T>,
    ) -> Result<Self, ModelError> {
        if data.len() != channels * rows * cols {
            return Err(ModelError::Dimension {
                expected: format!("{} values", channels * rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, c: usize, r: usize, q: usize) -> usize {
        (c * self.rows + r) * self.cols + q
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, q: usize) -> T {
        self.data[self.idx(c, r, q)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, q: usize, v: T) {
        let i = self.idx(c, r, q);
        self.data[i] = v;
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    /// Elements of the sub-block `[c0,c1) × [r0,r1) × [q0,q1)` in channel-major order.
    pub fn block(
        &self,
        (c0, c1): (usize, usize),
        (r0, r1): (usize, usize),
        (q0, q1): (usize, usize),
    ) -> Vec<T> {
        let mut out = Vec::with_capacity((c1 - c0) * (r1 - r0) * (q1 - q0));
        for c in c0..c1 {
            for r in r0..r1 {
                let base = self.idx(c, r, 0);
                out.extend_from_slice(&self.data[base + q0..base + q1]);
            }
        }
        out
    }
}

impl<T: Copy + Default + PartialEq> Tensor3D<T> {
    pub fn nnz(&self) -> usize {
        let zero = T::default();
        self.data.iter().filter(|&&v| v != zero).count()
    }

    pub fn channel_nnz(&self, c: usize) -> usize {
        let zero = T::default();
        let n = self.rows * self.cols;
        self.data[c * n..(c + 1) * n]
            .iter()
            .filter(|&&v| v != zero)
            .count()
    }
}

impl Tensor3D<i8> {
    /// Two's-complement bytes, as they would sit in DRAM.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }
}
