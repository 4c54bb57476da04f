use ndarray::Array2;
use rand::Rng;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::tensor::{checked_len, DenseTensor};

/// The N factor matrices `A_(n)` (shape I_n × F) of a rank-F CP model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    factors: Vec<Array2<f64>>,
}

impl FactorModel {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(CpdError::dim("a factor model needs at least one factor"));
        };
        let rank = first.ncols();
        if rank == 0 {
            return Err(CpdError::dim("rank must be at least 1"));
        }
        for (k, a) in factors.iter().enumerate() {
            if a.ncols() != rank {
                return Err(CpdError::dim(format!(
                    "factor {} has {} columns, expected rank {rank}",
                    k + 1,
                    a.ncols()
                )));
            }
            if a.nrows() == 0 {
                return Err(CpdError::dim(format!("factor {} has no rows", k + 1)));
            }
        }
        Ok(FactorModel { factors })
    }

    /// Entries i.i.d. uniform on [0, 1).
    pub fn random_uniform<R: Rng + ?Sized>(shape: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let factors = shape
            .iter()
            .map(|&rows| Array2::from_shape_simple_fn((rows, rank), || rng.random::<f64>()))
            .collect();
        Self::new(factors)
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Result<Self> {
        Self::new(shape.iter().map(|&rows| Array2::zeros((rows, rank))).collect())
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Array2<f64>> {
        self.factors
    }

    /// Factor of the 1-based `mode`.
    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode - 1]
    }

    /// Replaces factor `mode` (1-based); shape must be unchanged.
    pub fn set_factor(&mut self, mode: usize, a: Array2<f64>) -> Result<()> {
        let slot = self
            .factors
            .get_mut(mode.wrapping_sub(1))
            .ok_or_else(|| CpdError::index(format!("mode {mode} out of range")))?;
        if slot.dim() != a.dim() {
            return Err(CpdError::dim(format!(
                "replacement factor {:?} does not match {:?}",
                a.dim(),
                slot.dim()
            )));
        }
        *slot = a;
        Ok(())
    }

    pub(crate) fn factor_mut0(&mut self, mode0: usize) -> &mut Array2<f64> {
        &mut self.factors[mode0]
    }

    pub fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if self.order() != shape.len() {
            return Err(CpdError::dim(format!(
                "model has {} factors, tensor has {} modes",
                self.order(),
                shape.len()
            )));
        }
        for (k, (a, &d)) in self.factors.iter().zip(shape).enumerate() {
            if a.nrows() != d {
                return Err(CpdError::dim(format!(
                    "factor {} has {} rows, tensor mode has size {d}",
                    k + 1,
                    a.nrows()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.factors.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Materializes `Σ_f a_1f ∘ … ∘ a_Nf`.
    pub fn to_dense(&self, exec: Exec) -> Result<DenseTensor> {
        let shape = self.shape();
        let len = checked_len(&shape)?;
        let i1 = shape[0];
        let n_fibers = len / i1;
        let rank = self.rank();
        let a1 = &self.factors[0];
        let chunks = exec.map_chunks(n_fibers, 4096, |range| {
            let mut out = Vec::with_capacity(range.len() * i1);
            let mut coords = vec![0usize; shape.len()];
            let mut h = vec![0.0; rank];
            for j0 in range {
                crate::tensor::decode_fiber0(&shape, 0, j0, &mut coords);
                h.fill(1.0);
                for (k, a) in self.factors.iter().enumerate().skip(1) {
                    let row = a.row(coords[k]);
                    for (hf, &v) in h.iter_mut().zip(row.iter()) {
                        *hf *= v;
                    }
                }
                for i in 0..i1 {
                    let row = a1.row(i);
                    out.push(row.iter().zip(&h).map(|(a, b)| a * b).sum());
                }
            }
            out
        });
        DenseTensor::new(shape, chunks.concat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_rank_mismatch() {
        let err = FactorModel::new(vec![Array2::zeros((2, 2)), Array2::zeros((3, 1))]);
        assert!(matches!(err, Err(CpdError::Dimension(_))));
        assert!(FactorModel::new(vec![]).is_err());
    }

    #[test]
    fn to_dense_matches_entrywise_sum() {
        let a = array![[1.0, 2.0], [3.0, -1.0]];
        let b = array![[0.5, 1.0], [2.0, 0.0], [1.0, 1.0]];
        let c = array![[1.0, -2.0], [0.0, 3.0]];
        let m = FactorModel::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let t = m.to_dense(Exec::Sequential).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    let want: f64 = (0..2).map(|f| a[[i, f]] * b[[j, f]] * c[[k, f]]).sum();
                    assert_eq!(t.entry_at(&[i + 1, j + 1, k + 1]).unwrap(), want);
                }
            }
        }
        assert_eq!(t, m.to_dense(Exec::Parallel).unwrap());
    }

    #[test]
    fn set_factor_checks_shape() {
        let mut m = FactorModel::zeros(&[2, 3, 4], 2).unwrap();
        assert!(m.set_factor(2, Array2::ones((3, 2))).is_ok());
        assert!(m.set_factor(2, Array2::ones((2, 2))).is_err());
        assert!(m.set_factor(4, Array2::ones((2, 2))).is_err());
    }
}
