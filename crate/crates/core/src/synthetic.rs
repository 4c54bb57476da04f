//! Synthetic low-rank instances with optional Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::metrics::snr_sigma;
use crate::model::FactorModel;
use crate::tensor::DenseTensor;

pub const NORMAL_ID: &str = "rand_distr::StandardNormal (ziggurat, rand_distr 0.5)";

/// 8 GiB.
pub const DEFAULT_MEMORY_LIMIT: u128 = 8 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FactorDistribution {
    /// Entries i.i.d. uniform on [0, 1).
    #[default]
    Uniform,
    /// Uniform entries with every column rescaled to sum to `rho`.
    UniformColumnSum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub shape: Vec<usize>,
    pub rank: usize,
    pub distribution: FactorDistribution,
    /// `None` leaves the tensor noiseless.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub memory_limit: u128,
}

impl SyntheticSpec {
    pub fn new(shape: Vec<usize>, rank: usize, seed: u64) -> Self {
        SyntheticSpec {
            shape,
            rank,
            distribution: FactorDistribution::Uniform,
            snr_db: None,
            seed,
            memory_limit: DEFAULT_MEMORY_LIMIT,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    pub fn with_distribution(mut self, d: FactorDistribution) -> Self {
        self.distribution = d;
        self
    }

    /// Bytes held by the generated tensors (clean and noisy copies).
    pub fn required_bytes(&self) -> u128 {
        let entries: u128 = self.shape.iter().map(|&d| d as u128).product();
        let copies = if self.snr_db.is_some() { 2 } else { 1 };
        entries * 8 * copies
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(CpdError::arg("rank must be at least 1"));
        }
        if self.shape.is_empty() || self.shape.iter().any(|&d| d < 2) {
            return Err(CpdError::arg(format!("every mode needs size >= 2, got {:?}", self.shape)));
        }
        if let FactorDistribution::UniformColumnSum(rho) = self.distribution {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(CpdError::arg(format!("column sum must be > 0, got {rho}")));
            }
        }
        let required = self.required_bytes();
        if required > self.memory_limit {
            return Err(CpdError::Resource {
                required,
                limit: self.memory_limit,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    /// Noisy tensor when an SNR was requested, otherwise the clean tensor.
    pub tensor: DenseTensor,
    pub truth: FactorModel,
    /// The noiseless tensor, kept only when noise was added.
    pub clean: Option<DenseTensor>,
    pub noise_sigma: f64,
}

pub fn generate(spec: &SyntheticSpec, exec: Exec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = FactorModel::random_uniform(&spec.shape, spec.rank, &mut rng)?;
    if let FactorDistribution::UniformColumnSum(rho) = spec.distribution {
        let factors = truth
            .into_factors()
            .into_iter()
            .map(|mut a| {
                for mut c in a.columns_mut() {
                    let s = c.sum();
                    if s > 0.0 {
                        c.mapv_inplace(|v| v * rho / s);
                    }
                }
                a
            })
            .collect();
        truth = FactorModel::new(factors)?;
    }
    let clean = truth.to_dense(exec)?;
    match spec.snr_db {
        None => Ok(SyntheticInstance {
            tensor: clean,
            truth,
            clean: None,
            noise_sigma: 0.0,
        }),
        Some(snr) => {
            let sigma = snr_sigma(&clean, snr)?;
            let mut noisy = clean.clone();
            for v in noisy.values_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
            Ok(SyntheticInstance {
                tensor: noisy,
                truth,
                clean: Some(clean),
                noise_sigma: sigma,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::empirical_snr_db;

    #[test]
    fn rank_one_matches_outer_product() {
        let inst = generate(&SyntheticSpec::new(vec![2, 2, 2], 1, 3), Exec::Sequential).unwrap();
        let (a, b, c) = (inst.truth.factor(1), inst.truth.factor(2), inst.truth.factor(3));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let want = a[[i, 0]] * b[[j, 0]] * c[[k, 0]];
                    let got = inst.tensor.entry_at(&[i + 1, j + 1, k + 1]).unwrap();
                    assert!((got - want).abs() <= 1e-15 * want.abs());
                }
            }
        }
        assert!(inst.clean.is_none());
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SyntheticSpec::new(vec![5, 4, 3], 2, 9).with_snr(10.0);
        let a = generate(&spec, Exec::Parallel).unwrap();
        let b = generate(&spec, Exec::Sequential).unwrap();
        assert_eq!(crate::io::encode_tensor(&a.tensor), crate::io::encode_tensor(&b.tensor));
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn empirical_snr_close_to_target() {
        for snr in [10.0, 30.0] {
            let spec = SyntheticSpec::new(vec![50, 50, 50], 5, 1).with_snr(snr);
            let inst = generate(&spec, Exec::default()).unwrap();
            let got = empirical_snr_db(inst.clean.as_ref().unwrap(), &inst.tensor).unwrap();
            assert!((got - snr).abs() <= 0.2, "{got}");
        }
    }

    #[test]
    fn column_sum_distribution() {
        let spec = SyntheticSpec::new(vec![6, 5, 4], 3, 2).with_distribution(FactorDistribution::UniformColumnSum(7.0));
        let inst = generate(&spec, Exec::default()).unwrap();
        for a in inst.truth.factors() {
            for c in a.columns() {
                assert!((c.sum() - 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memory_limit_enforced() {
        let mut spec = SyntheticSpec::new(vec![2000, 2000, 2000], 10, 0);
        let err = generate(&spec, Exec::default()).unwrap_err();
        assert!(matches!(err, CpdError::Resource { required: 64_000_000_000, .. }));
        spec.memory_limit = 1 << 40;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec::new(vec![1, 4, 4], 2, 0).validate().is_err());
        assert!(SyntheticSpec::new(vec![4, 4, 4], 0, 0).validate().is_err());
    }
}
