//! Khatri-Rao row machinery: sampled rows of `H_(n) = ⊙_{k≠n} A_(k)`, the
//! Hadamard Gram identity and full MTTKRP. The full `J_n × F` product is never
//! materialized.

use ndarray::{Array2, ArrayViewMut1};

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::model::FactorModel;
use crate::tensor::{decode_fiber0, fiber_count, DenseTensor, FiberIndex};

/// Fibers processed per parallel work item; fixed so reductions are reproducible.
pub(crate) const FIBER_CHUNK: usize = 512;

/// Rows of `H_(n)` for the given mode-n fibers, one row per fiber.
pub fn kr_rows(model: &FactorModel, mode: usize, fibers: &[FiberIndex]) -> Result<Array2<f64>> {
    let shape = model.shape();
    let jn = fiber_count(&shape, mode)?;
    let mut j0s = Vec::with_capacity(fibers.len());
    for fi in fibers {
        if fi.mode != mode {
            return Err(CpdError::arg(format!(
                "fiber of mode {} passed for mode {mode}",
                fi.mode
            )));
        }
        if fi.j == 0 || fi.j > jn {
            return Err(CpdError::index(format!("fiber j={} outside 1..={jn}", fi.j)));
        }
        j0s.push(fi.j - 1);
    }
    Ok(kr_rows0(model, &shape, mode - 1, &j0s))
}

pub(crate) fn kr_rows0(model: &FactorModel, shape: &[usize], mode0: usize, j0s: &[usize]) -> Array2<f64> {
    let mut h = Array2::ones((j0s.len(), model.rank()));
    let mut coords = vec![0usize; shape.len()];
    for (row, &j0) in h.rows_mut().into_iter().zip(j0s) {
        kr_row0(model, shape, mode0, j0, &mut coords, row);
    }
    h
}

/// Writes the Hadamard product of `A_(k)(i_k, :)`, k ≠ mode, into `out`
/// (which must be pre-filled with ones).
#[inline]
fn kr_row0(
    model: &FactorModel,
    shape: &[usize],
    mode0: usize,
    j0: usize,
    coords: &mut [usize],
    mut out: ArrayViewMut1<f64>,
) {
    decode_fiber0(shape, mode0, j0, coords);
    for (k, a) in model.factors().iter().enumerate() {
        if k == mode0 {
            continue;
        }
        let src = a.row(coords[k]);
        out.zip_mut_with(&src, |h, &v| *h *= v);
    }
}

/// `H_(n)ᵀ H_(n)` via `⊛_{k≠n} A_(k)ᵀ A_(k)`.
pub fn gram_hadamard(model: &FactorModel, mode: usize) -> Array2<f64> {
    let rank = model.rank();
    let mut g = Array2::ones((rank, rank));
    for (k, a) in model.factors().iter().enumerate() {
        if k + 1 == mode {
            continue;
        }
        g *= &a.t().dot(a);
    }
    g
}

/// `X_(n)ᵀ H_(n)` (I_n × F), streamed over all mode-n fibers.
pub fn full_mttkrp(t: &DenseTensor, model: &FactorModel, mode: usize, exec: Exec) -> Result<Array2<f64>> {
    model.check_shape(t.shape())?;
    let jn = t.fiber_count(mode)?;
    let mode0 = mode - 1;
    let shape = t.shape();
    let (i_n, rank) = (shape[mode0], model.rank());
    let stride = t.strides()[mode0];
    let values = t.values();
    let partials = exec.map_chunks(jn, FIBER_CHUNK, |range| {
        let mut acc = Array2::<f64>::zeros((i_n, rank));
        let mut coords = vec![0usize; shape.len()];
        let mut h = ndarray::Array1::<f64>::ones(rank);
        for j0 in range {
            h.fill(1.0);
            kr_row0(model, shape, mode0, j0, &mut coords, h.view_mut());
            let base = t.fiber_base0(mode0, j0);
            for (i, mut acc_row) in acc.rows_mut().into_iter().enumerate() {
                let x = values[base + i * stride];
                if x != 0.0 {
                    acc_row.scaled_add(x, &h);
                }
            }
        }
        acc
    });
    let mut out = Array2::zeros((i_n, rank));
    for p in &partials {
        out += p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Oracle: build `⊙_{k≠n} A_(k)` by the column-wise Kronecker definition,
    /// with the lowest remaining mode varying fastest.
    fn materialized_kr(model: &FactorModel, mode: usize) -> Array2<f64> {
        let rank = model.rank();
        let mut acc: Option<Array2<f64>> = None;
        for (k, a) in model.factors().iter().enumerate() {
            if k + 1 == mode {
                continue;
            }
            acc = Some(match acc {
                None => a.clone(),
                Some(prev) => {
                    // column f of (a ⊙' prev) = kron(a[:,f], prev[:,f]) so that prev's index is fastest
                    let mut out = Array2::zeros((a.nrows() * prev.nrows(), rank));
                    for ia in 0..a.nrows() {
                        for ip in 0..prev.nrows() {
                            for f in 0..rank {
                                out[[ia * prev.nrows() + ip, f]] = a[[ia, f]] * prev[[ip, f]];
                            }
                        }
                    }
                    out
                }
            });
        }
        acc.unwrap()
    }

    /// Oracle: `X_(n)` by explicit unfolding through `entry_at`.
    fn unfold(t: &DenseTensor, mode: usize) -> Array2<f64> {
        let jn = t.fiber_count(mode).unwrap();
        let mut x = Array2::zeros((jn, t.shape()[mode - 1]));
        for j in 1..=jn {
            let coords = crate::tensor::decode_fiber(FiberIndex::new(mode, j), t.shape()).unwrap();
            for i in 1..=t.shape()[mode - 1] {
                let mut idx = coords.clone();
                idx.insert(mode - 1, i);
                x[[j - 1, i - 1]] = t.entry_at(&idx).unwrap();
            }
        }
        x
    }

    fn random_model(shape: &[usize], rank: usize, seed: u64) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = shape
            .iter()
            .map(|&d| Array2::from_shape_simple_fn((d, rank), || rng.random_range(-1.0..1.0)))
            .collect();
        FactorModel::new(factors).unwrap()
    }

    fn all_fibers(shape: &[usize], mode: usize) -> Vec<FiberIndex> {
        (1..=fiber_count(shape, mode).unwrap()).map(|j| FiberIndex::new(mode, j)).collect()
    }

    #[test]
    fn ones_rank_one() {
        let m = FactorModel::new(vec![Array2::ones((2, 1)), Array2::ones((3, 1)), Array2::ones((2, 1))]).unwrap();
        let h = kr_rows(&m, 2, &all_fibers(&[2, 3, 2], 2)).unwrap();
        assert_eq!(h, Array2::<f64>::ones((4, 1)));
    }

    #[test]
    fn small_integer_matches_materialized() {
        let m = FactorModel::new(vec![
            array![[1.0, 2.0], [3.0, 4.0]],
            array![[0.0, -1.0], [2.0, 5.0]],
            array![[3.0, 1.0], [-2.0, 2.0]],
        ])
        .unwrap();
        for mode in 1..=3 {
            let h = kr_rows(&m, mode, &all_fibers(&[2, 2, 2], mode)).unwrap();
            assert_eq!(h, materialized_kr(&m, mode));
        }
    }

    #[test]
    fn empty_fiber_set() {
        let m = random_model(&[2, 3, 4], 3, 1);
        assert_eq!(kr_rows(&m, 1, &[]).unwrap().dim(), (0, 3));
    }

    #[test]
    fn kr_rows_rejects_wrong_mode() {
        let m = random_model(&[2, 3, 4], 2, 1);
        assert!(kr_rows(&m, 1, &[FiberIndex::new(2, 1)]).is_err());
        assert!(kr_rows(&m, 1, &[FiberIndex::new(1, 13)]).is_err());
    }

    #[test]
    fn full_index_set_matches_materialized() {
        for (seed, shape) in [(2, vec![3, 4, 5]), (3, vec![2, 3, 2, 4]), (4, vec![7, 6, 9])] {
            let m = random_model(&shape, 3, seed);
            for mode in 1..=shape.len() {
                let h = kr_rows(&m, mode, &all_fibers(&shape, mode)).unwrap();
                let want = materialized_kr(&m, mode);
                let diff = (&h - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
                assert!(diff <= 1e-12, "mode {mode}: {diff}");
            }
        }
    }

    #[test]
    fn gram_identity() {
        let shape = [4, 3, 5];
        let m = random_model(&shape, 3, 9);
        for mode in 1..=3 {
            let h = materialized_kr(&m, mode);
            let want = h.t().dot(&h);
            let got = gram_hadamard(&m, mode);
            let diff = (&got - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn mttkrp_zero_tensor() {
        let m = random_model(&[3, 4, 5], 2, 5);
        let t = DenseTensor::zeros(vec![3, 4, 5]).unwrap();
        assert_eq!(full_mttkrp(&t, &m, 2, Exec::default()).unwrap(), Array2::zeros((4, 2)));
    }

    #[test]
    fn mttkrp_matches_brute_force() {
        let t = DenseTensor::new(vec![2, 2, 2], vec![1.0, -2.0, 3.0, 0.0, 5.0, 1.0, -1.0, 2.0]).unwrap();
        let m = FactorModel::new(vec![
            array![[1.0, 2.0], [3.0, 4.0]],
            array![[0.0, -1.0], [2.0, 5.0]],
            array![[3.0, 1.0], [-2.0, 2.0]],
        ])
        .unwrap();
        for mode in 1..=3 {
            let want = unfold(&t, mode).t().dot(&materialized_kr(&m, mode));
            assert_eq!(full_mttkrp(&t, &m, mode, Exec::Sequential).unwrap(), want);
        }
    }

    #[test]
    fn mttkrp_relative_error_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = vec![5, 6, 7];
        let t = DenseTensor::from_fn(shape.clone(), |_| rng.random_range(-1.0..1.0)).unwrap();
        let m = random_model(&shape, 4, 12);
        for mode in 1..=3 {
            let want = unfold(&t, mode).t().dot(&materialized_kr(&m, mode));
            let got = full_mttkrp(&t, &m, mode, Exec::Parallel).unwrap();
            let rel = (&got - &want).mapv(|v| v * v).sum().sqrt() / want.mapv(|v| v * v).sum().sqrt();
            assert!(rel <= 1e-12, "{rel}");
            assert_eq!(got, full_mttkrp(&t, &m, mode, Exec::Sequential).unwrap());
        }
    }

    #[test]
    fn mttkrp_rank_one_identity() {
        let a = array![[1.0], [2.0], [-1.0]];
        let b = array![[0.5], [1.5]];
        let c = array![[2.0], [1.0], [3.0], [-1.0]];
        let m = FactorModel::new(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let t = m.to_dense(Exec::Sequential).unwrap();
        let got = full_mttkrp(&t, &m, 1, Exec::Sequential).unwrap();
        let scale = b.t().dot(&b)[[0, 0]] * c.t().dot(&c)[[0, 0]];
        for i in 0..3 {
            assert!((got[[i, 0]] - a[[i, 0]] * scale).abs() <= 1e-12);
        }
    }
}
