//! Fit cost, permutation-resolved factor MSE and noise-level accounting.

use ndarray::{Array1, Array2};

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::hungarian::min_cost_assignment;
use crate::kr::FIBER_CHUNK;
use crate::model::FactorModel;
use crate::tensor::{decode_fiber0, DenseTensor};

/// `‖X − [[A_(1), …, A_(N)]]‖²_F`, streamed over mode-1 fibers.
pub fn residual_sq(t: &DenseTensor, model: &FactorModel, exec: Exec) -> Result<f64> {
    model.check_shape(t.shape())?;
    let shape = t.shape();
    let i1 = shape[0];
    let n_fibers = t.len() / i1;
    let rank = model.rank();
    let a1 = &model.factors()[0];
    let values = t.values();
    let partials = exec.map_chunks(n_fibers, FIBER_CHUNK, |range| {
        let mut coords = vec![0usize; shape.len()];
        let mut h = vec![0.0; rank];
        let mut acc = 0.0;
        for j0 in range {
            decode_fiber0(shape, 0, j0, &mut coords);
            h.fill(1.0);
            for (k, a) in model.factors().iter().enumerate().skip(1) {
                for (hf, &v) in h.iter_mut().zip(a.row(coords[k]).iter()) {
                    *hf *= v;
                }
            }
            let fiber = &values[j0 * i1..(j0 + 1) * i1];
            for (i, &x) in fiber.iter().enumerate() {
                let rec: f64 = a1.row(i).iter().zip(&h).map(|(a, b)| a * b).sum();
                let d = x - rec;
                acc += d * d;
            }
        }
        acc
    });
    Ok(partials.into_iter().sum())
}

/// `(1/∏ I_n) ‖X − [[A]]‖²_F`.
pub fn cost(t: &DenseTensor, model: &FactorModel, exec: Exec) -> Result<f64> {
    Ok(residual_sq(t, model, exec)? / t.len() as f64)
}

fn normalized_columns(a: &Array2<f64>, label: &str) -> Result<Vec<Array1<f64>>> {
    a.columns()
        .into_iter()
        .enumerate()
        .map(|(f, c)| {
            let norm = c.dot(&c).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                Err(CpdError::Metric(format!("{label} column {} has norm {norm}", f + 1)))
            } else {
                Ok(c.mapv(|v| v / norm))
            }
        })
        .collect()
}

/// Squared distance between unit columns, minimized over the sign of `v`.
fn signed_distance(u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    minus.min(plus)
}

/// Column-normalized MSE between estimated and true factors of one
/// (1-based) mode, minimized over column permutations and per-column signs.
pub fn mse(est: &FactorModel, truth: &FactorModel, mode: usize) -> Result<f64> {
    if est.shape() != truth.shape() || est.rank() != truth.rank() {
        return Err(CpdError::dim(format!(
            "estimate {:?} rank {} vs truth {:?} rank {}",
            est.shape(),
            est.rank(),
            truth.shape(),
            truth.rank()
        )));
    }
    if mode == 0 || mode > est.order() {
        return Err(CpdError::index(format!("mode {mode} out of range")));
    }
    let e = normalized_columns(est.factor(mode), "estimate")?;
    let t = normalized_columns(truth.factor(mode), "truth")?;
    let rank = e.len();
    let mut cost = Vec::with_capacity(rank * rank);
    for ef in &e {
        for tp in &t {
            cost.push(signed_distance(tp, ef));
        }
    }
    let (_, total) = min_cost_assignment(&cost, rank);
    Ok(total / rank as f64)
}

/// Per-mode MSE followed by the mode average.
pub fn mse_all(est: &FactorModel, truth: &FactorModel) -> Result<(Vec<f64>, f64)> {
    let per_mode = (1..=est.order())
        .map(|n| mse(est, truth, n))
        .collect::<Result<Vec<_>>>()?;
    let avg = per_mode.iter().sum::<f64>() / per_mode.len() as f64;
    Ok((per_mode, avg))
}

/// Noise standard deviation giving `snr_db` relative to the clean tensor's
/// mean-square value.
pub fn snr_sigma(clean: &DenseTensor, snr_db: f64) -> Result<f64> {
    let ms = clean.frobenius_norm_sq() / clean.len() as f64;
    if ms == 0.0 {
        return Err(CpdError::arg("SNR is undefined for a zero tensor"));
    }
    if !snr_db.is_finite() {
        return Err(CpdError::arg(format!("SNR must be finite, got {snr_db}")));
    }
    Ok((ms / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// `10 log10(‖X‖² / ‖Y − X‖²)`.
pub fn empirical_snr_db(clean: &DenseTensor, noisy: &DenseTensor) -> Result<f64> {
    if clean.shape() != noisy.shape() {
        return Err(CpdError::dim("clean and noisy tensors differ in shape"));
    }
    let noise: f64 = clean
        .values()
        .iter()
        .zip(noisy.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(10.0 * (clean.frobenius_norm_sq() / noise).log10())
}
