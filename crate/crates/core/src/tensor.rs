//! Dense N-way tensor storage and mode-n fiber addressing.
//!
//! Values are stored with mode 1 varying fastest. A mode-n fiber is a row of
//! the J_n × I_n unfolding `X_(n)`, where the row index is
//! `j = 1 + Σ_{k≠n} (i_k − 1) J_k` and `J_k = ∏_{m<k, m≠n} I_m` (empty
//! product = 1). All public indices are 1-based; `*0` helpers are 0-based.

use crate::error::{CpdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
}

/// A mode-n fiber, i.e. row `j` of the mode-n unfolding. Both fields are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiberIndex {
    pub mode: usize,
    pub j: usize,
}

impl FiberIndex {
    pub fn new(mode: usize, j: usize) -> Self {
        FiberIndex { mode, j }
    }
}

pub(crate) fn column_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = Vec::with_capacity(shape.len());
    let mut acc = 1usize;
    for &d in shape {
        strides.push(acc);
        acc *= d;
    }
    strides
}

/// Number of mode-`mode` fibers, `J_n = ∏_{m≠n} I_m` (mode is 1-based).
pub fn fiber_count(shape: &[usize], mode: usize) -> Result<usize> {
    check_mode(shape, mode)?;
    Ok(shape
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != mode - 1)
        .map(|(_, &d)| d)
        .product())
}

fn check_mode(shape: &[usize], mode: usize) -> Result<()> {
    if mode == 0 || mode > shape.len() {
        return Err(CpdError::index(format!(
            "mode {mode} outside 1..={}",
            shape.len()
        )));
    }
    Ok(())
}

/// Decodes a fiber index into its coordinates `(i_k)_{k≠n}`, listed in
/// increasing `k` and 1-based.
pub fn decode_fiber(fi: FiberIndex, shape: &[usize]) -> Result<Vec<usize>> {
    let jn = fiber_count(shape, fi.mode)?;
    if fi.j == 0 || fi.j > jn {
        return Err(CpdError::index(format!(
            "fiber index j={} outside 1..={jn} for mode {}",
            fi.j, fi.mode
        )));
    }
    let mut rem = fi.j - 1;
    let mut out = Vec::with_capacity(shape.len() - 1);
    for (k, &d) in shape.iter().enumerate() {
        if k == fi.mode - 1 {
            continue;
        }
        out.push(rem % d + 1);
        rem /= d;
    }
    Ok(out)
}

/// Inverse of [`decode_fiber`].
pub fn encode_fiber(mode: usize, coords: &[usize], shape: &[usize]) -> Result<FiberIndex> {
    check_mode(shape, mode)?;
    if coords.len() + 1 != shape.len() {
        return Err(CpdError::dim(format!(
            "expected {} fiber coordinates, got {}",
            shape.len() - 1,
            coords.len()
        )));
    }
    let mut j = 0usize;
    let mut weight = 1usize;
    let others = shape.iter().enumerate().filter(|&(k, _)| k != mode - 1);
    for ((k, &d), &c) in others.zip(coords) {
        if c == 0 || c > d {
            return Err(CpdError::index(format!(
                "coordinate {c} outside 1..={d} for mode {}",
                k + 1
            )));
        }
        j += (c - 1) * weight;
        weight *= d;
    }
    Ok(FiberIndex { mode, j: j + 1 })
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(CpdError::dim("tensor must have at least one mode"));
        }
        if shape.contains(&0) {
            return Err(CpdError::dim(format!("shape {shape:?} has an empty mode")));
        }
        let len = checked_len(&shape)?;
        if values.len() != len {
            return Err(CpdError::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        let strides = column_major_strides(&shape);
        Ok(DenseTensor {
            shape,
            strides,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = checked_len(&shape)?;
        Self::new(shape, vec![0.0; len])
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_len(&shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            for (k, d) in shape.iter().enumerate() {
                idx[k] += 1;
                if idx[k] < *d {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Entry at the 1-based multi-index `idx`.
    pub fn entry_at(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.shape.len() {
            return Err(CpdError::index(format!(
                "expected {} indices, got {}",
                self.shape.len(),
                idx.len()
            )));
        }
        let mut offset = 0;
        for (k, (&i, &d)) in idx.iter().zip(&self.shape).enumerate() {
            if i == 0 || i > d {
                return Err(CpdError::index(format!(
                    "index {i} outside 1..={d} in mode {}",
                    k + 1
                )));
            }
            offset += (i - 1) * self.strides[k];
        }
        Ok(self.values[offset])
    }

    pub fn fiber_count(&self, mode: usize) -> Result<usize> {
        fiber_count(&self.shape, mode)
    }

    /// The mode-n fiber `X_(n)(j, :)`.
    pub fn fiber_at(&self, fi: FiberIndex) -> Result<Vec<f64>> {
        decode_fiber(fi, &self.shape)?;
        let mut out = vec![0.0; self.shape[fi.mode - 1]];
        self.copy_fiber0(fi.mode - 1, fi.j - 1, &mut out);
        Ok(out)
    }

    /// Linear offset of element `i_n = 0` of fiber `j0` in mode `mode0`.
    pub(crate) fn fiber_base0(&self, mode0: usize, j0: usize) -> usize {
        let mut rem = j0;
        let mut base = 0;
        for (k, &d) in self.shape.iter().enumerate() {
            if k == mode0 {
                continue;
            }
            base += (rem % d) * self.strides[k];
            rem /= d;
        }
        base
    }

    pub(crate) fn copy_fiber0(&self, mode0: usize, j0: usize, out: &mut [f64]) {
        let base = self.fiber_base0(mode0, j0);
        let stride = self.strides[mode0];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.values[base + i * stride];
        }
    }
}

/// `∏ shape`, or an error if it overflows `usize`.
pub(crate) fn checked_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CpdError::dim(format!("shape {shape:?} overflows the address space")))
}

/// Writes 0-based fiber coordinates of `j0` into `coords`, skipping `mode0`
/// (its slot is left untouched).
pub(crate) fn decode_fiber0(shape: &[usize], mode0: usize, j0: usize, coords: &mut [usize]) {
    let mut rem = j0;
    for (k, &d) in shape.iter().enumerate() {
        if k == mode0 {
            continue;
        }
        coords[k] = rem % d;
        rem /= d;
    }
}
