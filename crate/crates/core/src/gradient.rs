//! Block gradients of the least-squares CP objective.
//!
//! Convention: for mode n the stochastic gradient over a fiber batch S is
//! `G = (1/|S|)(A_(n) H_Sᵀ H_S − X_Sᵀ H_S)`. Averaged over all |S|-subsets it
//! equals `(1/J_n)(A_(n) HᵀH − X_(n)ᵀ H)`, the exact gradient of
//! `f̃_n = (1/(2 J_n)) ‖X_(n) − H A_(n)ᵀ‖²`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::kr::{full_mttkrp, gram_hadamard, kr_rows0};
use crate::model::FactorModel;
use crate::tensor::{DenseTensor, FiberIndex};

#[derive(Debug, Clone)]
pub struct BlockGradient {
    pub mode: usize,
    pub g: Array2<f64>,
    pub batch: Vec<FiberIndex>,
    /// Divisor applied to the batch sums (the batch size).
    pub normalization: usize,
}

pub fn stochastic_block_gradient(
    t: &DenseTensor,
    model: &FactorModel,
    mode: usize,
    fibers: &[FiberIndex],
) -> Result<BlockGradient> {
    model.check_shape(t.shape())?;
    let jn = t.fiber_count(mode)?;
    if fibers.is_empty() {
        return Err(CpdError::arg("stochastic gradient needs a non-empty batch"));
    }
    let mut j0s = Vec::with_capacity(fibers.len());
    for fi in fibers {
        if fi.mode != mode || fi.j == 0 || fi.j > jn {
            return Err(CpdError::index(format!(
                "fiber {fi:?} is not a valid mode-{mode} fiber (J = {jn})"
            )));
        }
        j0s.push(fi.j - 1);
    }
    Ok(BlockGradient {
        mode,
        g: sampled_gradient0(t, model, mode - 1, &j0s),
        batch: fibers.to_vec(),
        normalization: fibers.len(),
    })
}

/// Hot path of the solvers; inputs are assumed validated.
pub(crate) fn sampled_gradient0(t: &DenseTensor, model: &FactorModel, mode0: usize, j0s: &[usize]) -> Array2<f64> {
    let h = kr_rows0(model, t.shape(), mode0, j0s);
    let i_n = t.shape()[mode0];
    let mut xs = Array2::<f64>::zeros((j0s.len(), i_n));
    for (mut row, &j0) in xs.rows_mut().into_iter().zip(j0s) {
        t.copy_fiber0(mode0, j0, row.as_slice_mut().expect("row-major"));
    }
    let gram = h.t().dot(&h);
    let a = &model.factors()[mode0];
    let mut g = a.dot(&gram);
    g -= &xs.t().dot(&h);
    g /= j0s.len() as f64;
    g
}

/// `(1/J_n)(A_(n) HᵀH − X_(n)ᵀ H)`.
pub fn full_block_gradient(t: &DenseTensor, model: &FactorModel, mode: usize, exec: Exec) -> Result<Array2<f64>> {
    let m = full_mttkrp(t, model, mode, exec)?;
    let jn = t.fiber_count(mode)? as f64;
    let mut g = model.factor(mode).dot(&gram_hadamard(model, mode));
    g -= &m;
    g /= jn;
    Ok(g)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_lambda_max(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let dm = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    SymmetricEigen::try_new(dm, 1e-14, 10_000)
        .map(|e| e.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(f64::NAN)
}

/// Lipschitz constant of `∇ f̃_n`: `λ_max(H_(n)ᵀ H_(n)) / J_n`.
pub fn block_lipschitz(model: &FactorModel, mode: usize) -> f64 {
    let jn: usize = model
        .shape()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k + 1 != mode)
        .map(|(_, &d)| d)
        .product();
    symmetric_lambda_max(&gram_hadamard(model, mode)) / jn as f64
}

/// `f̃_n(θ) = (1/(2 J_n)) ‖X − [[A]]‖²_F`.
pub fn block_objective(t: &DenseTensor, model: &FactorModel, mode: usize, exec: Exec) -> Result<f64> {
    let jn = t.fiber_count(mode)? as f64;
    let sq = crate::metrics::residual_sq(t, model, exec)?;
    Ok(sq / (2.0 * jn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(shape: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> FactorModel {
        let factors = shape
            .iter()
            .map(|&d| Array2::from_shape_simple_fn((d, rank), || rng.random_range(-1.0..1.0)))
            .collect();
        FactorModel::new(factors).unwrap()
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn all_fibers(jn: usize, mode: usize) -> Vec<FiberIndex> {
        (1..=jn).map(|j| FiberIndex::new(mode, j)).collect()
    }

    #[test]
    fn exact_model_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&[4, 5, 6], 3, &mut rng);
        let t = m.to_dense(Exec::Sequential).unwrap();
        for mode in 1..=3 {
            let jn = t.fiber_count(mode).unwrap();
            let batch: Vec<_> = all_fibers(jn, mode).into_iter().step_by(3).collect();
            let g = stochastic_block_gradient(&t, &m, mode, &batch).unwrap();
            assert!(max_abs(&g.g) <= 1e-10);
            assert!(max_abs(&full_block_gradient(&t, &m, mode, Exec::default()).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn full_batch_matches_dense_oracle() {
        let t = DenseTensor::new(vec![2, 2, 2], vec![1.0, -2.0, 3.0, 0.0, 5.0, 1.0, -1.0, 2.0]).unwrap();
        let m = FactorModel::new(vec![
            array![[1.0, 2.0], [3.0, 4.0]],
            array![[0.0, -1.0], [2.0, 5.0]],
            array![[3.0, 1.0], [-2.0, 2.0]],
        ])
        .unwrap();
        // mode 1 by hand: fibers j = 1..4 over (i2, i3) with i2 fastest.
        let x1 = array![[1.0, -2.0], [3.0, 0.0], [5.0, 1.0], [-1.0, 2.0]];
        let h1 = array![[0.0, -1.0], [6.0, 5.0], [0.0, -2.0], [-4.0, 10.0]];
        let want = (m.factor(1).dot(&h1.t().dot(&h1)) - x1.t().dot(&h1)) / 4.0;
        let g = stochastic_block_gradient(&t, &m, 1, &all_fibers(4, 1)).unwrap();
        assert!(max_abs(&(&g.g - &want)) <= 1e-12);
        let full = full_block_gradient(&t, &m, 1, Exec::Sequential).unwrap();
        assert!(max_abs(&(&full - &want)) <= 1e-12);
    }

    #[test]
    fn subset_average_is_unbiased_on_2x2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = DenseTensor::from_fn(vec![2, 2, 2], |_| rng.random_range(-3..=3) as f64).unwrap();
        let m = random_model(&[2, 2, 2], 2, &mut rng);
        for mode in 1..=3 {
            let mut sum = Array2::zeros((2, 2));
            let mut count = 0.0;
            for a in 1..=4 {
                for b in a + 1..=4 {
                    let fib = [FiberIndex::new(mode, a), FiberIndex::new(mode, b)];
                    sum += &stochastic_block_gradient(&t, &m, mode, &fib).unwrap().g;
                    count += 1.0;
                }
            }
            let full = full_block_gradient(&t, &m, mode, Exec::Sequential).unwrap();
            assert!(max_abs(&(sum / count - full)) <= 1e-12);
        }
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = DenseTensor::from_fn(vec![3, 3, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        let m = random_model(&[3, 3, 3], 2, &mut rng);
        let h = 1e-6;
        for mode in 1..=3 {
            let g = full_block_gradient(&t, &m, mode, Exec::Sequential).unwrap();
            let mut fd = Array2::zeros(g.dim());
            for ((i, f), v) in fd.indexed_iter_mut() {
                let mut plus = m.clone();
                let mut minus = m.clone();
                plus.factor_mut0(mode - 1)[[i, f]] += h;
                minus.factor_mut0(mode - 1)[[i, f]] -= h;
                *v = (block_objective(&t, &plus, mode, Exec::Sequential).unwrap()
                    - block_objective(&t, &minus, mode, Exec::Sequential).unwrap())
                    / (2.0 * h);
            }
            let rel = max_abs(&(&fd - &g)) / max_abs(&g);
            assert!(rel <= 1e-5, "{rel}");
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let t = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        let m = FactorModel::zeros(&[2, 2, 2], 1).unwrap();
        assert!(matches!(stochastic_block_gradient(&t, &m, 1, &[]), Err(CpdError::Argument(_))));
    }

    #[test]
    fn lipschitz_examples() {
        // F = 1 with column norms c2, c3 on modes 2 and 3.
        let m = FactorModel::new(vec![array![[1.0], [1.0]], array![[3.0], [4.0]], array![[1.0], [2.0], [2.0]]]).unwrap();
        let jn = 6.0;
        assert!((block_lipschitz(&m, 1) - 25.0 * 9.0 / jn).abs() <= 1e-12);
        // unit-norm columns
        let u = FactorModel::new(vec![array![[0.6], [0.8]], array![[0.0], [1.0]], array![[1.0], [0.0]]]).unwrap();
        assert!((block_lipschitz(&u, 1) - 1.0 / 4.0).abs() <= 1e-12);
        assert_eq!(block_lipschitz(&FactorModel::zeros(&[2, 3, 4], 3).unwrap(), 2), 0.0);
    }

    #[test]
    fn lipschitz_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let truth = random_model(&[4, 3, 5], 2, &mut rng);
            let t = truth.to_dense(Exec::Sequential).unwrap();
            let mut m = random_model(&[4, 3, 5], 2, &mut rng);
            let mode = rng.random_range(1..=3);
            let before = block_objective(&t, &m, mode, Exec::Sequential).unwrap();
            let g = full_block_gradient(&t, &m, mode, Exec::Sequential).unwrap();
            let step = 1.0 / block_lipschitz(&m, mode);
            m.factor_mut0(mode - 1).scaled_add(-step, &g);
            let after = block_objective(&t, &m, mode, Exec::Sequential).unwrap();
            assert!(after <= before * (1.0 + 1e-12));
        }
    }
}
