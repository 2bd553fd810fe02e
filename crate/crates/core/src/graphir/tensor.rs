use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Checks that `perm` is a permutation of `0..rank`.
pub(crate) fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    if perm.len() != rank {
        bail!(Shape, "permutation {perm:?} does not match rank {rank}");
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            bail!(Shape, "{perm:?} is not a permutation of 0..{rank}");
        }
        seen[p] = true;
    }
    Ok(())
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&dims) != data.len() {
            bail!(Shape, "dims {dims:?} need {} values, got {}", numel(&dims), data.len());
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = numel(&dims);
        Tensor { dims, data: vec![0.0; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same elements, new extents.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        if numel(&dims) != self.data.len() {
            bail!(Shape, "cannot reshape {:?} into {dims:?}", self.dims);
        }
        self.dims = dims;
        Ok(self)
    }

    /// Output axis `j` is input axis `perm[j]`.
    pub fn transpose(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.dims.len())?;
        let dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let src = strides(&self.dims);
        let moved: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; dims.len()];
        let mut off = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[off]);
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                off += moved[ax];
                if idx[ax] < dims[ax] {
                    break;
                }
                off -= moved[ax] * dims[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor { dims, data })
    }

    /// `parts` equal slices along `axis`.
    pub fn split(&self, axis: usize, parts: usize) -> Result<Vec<Self>> {
        if axis >= self.dims.len() {
            bail!(Shape, "split axis {axis} out of range for {:?}", self.dims);
        }
        if parts == 0 || !self.dims[axis].is_multiple_of(parts) {
            bail!(Shape, "extent {} on axis {axis} not divisible into {parts} parts", self.dims[axis]);
        }
        let outer = numel(&self.dims[..axis]);
        let inner = numel(&self.dims[axis + 1..]);
        let piece = self.dims[axis] / parts * inner;
        let mut dims = self.dims.clone();
        dims[axis] /= parts;
        Ok((0..parts)
            .map(|k| {
                let mut data = Vec::with_capacity(outer * piece);
                for o in 0..outer {
                    let start = o * self.dims[axis] * inner + k * piece;
                    data.extend_from_slice(&self.data[start..start + piece]);
                }
                Tensor { dims: dims.clone(), data }
            })
            .collect())
    }

    /// Join tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let Some(first) = parts.first() else {
            bail!(Shape, "concat of zero tensors");
        };
        if axis >= first.dims.len() {
            bail!(Shape, "concat axis {axis} out of range for {:?}", first.dims);
        }
        let mut dims = first.dims.clone();
        dims[axis] = 0;
        for p in parts {
            let same_rest = p.dims.len() == first.dims.len()
                && p.dims.iter().zip(&first.dims).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                bail!(Shape, "cannot concat {:?} with {:?} on axis {axis}", p.dims, first.dims);
            }
            dims[axis] += p.dims[axis];
        }
        let outer = numel(&first.dims[..axis]);
        let inner = numel(&first.dims[axis + 1..]);
        let mut data = Vec::with_capacity(numel(&dims));
        for o in 0..outer {
            for p in parts {
                let piece = p.dims[axis] * inner;
                data.extend_from_slice(&p.data[o * piece..(o + 1) * piece]);
            }
        }
        Ok(Tensor { dims, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.dims != other.dims {
            bail!(Shape, "comparing {:?} with {:?}", self.dims, other.dims);
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max(libm::fabs(a - b))))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }
}
