//! Proximal and projection operators for factor regularizers.
//!
//! `apply_prox(reg, M, α)` returns `argmin_Z ½‖Z − M‖²_F + α·h(Z)`.
//! `L21`, `Simplex` and `Monotone` act on each column; `L2` shrinks the whole
//! matrix as one vector; the rest are entrywise.

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};
use std::fmt;

use crate::error::{CpdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    #[default]
    None,
    Nonneg,
    L1(f64),
    /// `λ‖A‖_F`
    L2(f64),
    /// `λ Σ_f ‖A(:, f)‖₂`
    L21(f64),
    L0(f64),
    /// Columns on the scaled simplex `{z ≥ 0, 1ᵀz = ρ}`.
    Simplex(f64),
    /// Columns nondecreasing from top to bottom.
    Monotone,
}

/// Stepsize passed to a proximal operator.
#[derive(Debug, Clone, Copy)]
pub enum Step<'a> {
    Scalar(f64),
    Entrywise(&'a Array2<f64>),
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1(l) | Regularizer::L2(l) | Regularizer::L21(l) | Regularizer::L0(l)
                if !(l >= 0.0 && l.is_finite()) =>
            {
                Err(CpdError::arg(format!("regularizer weight must be >= 0, got {l}")))
            }
            Regularizer::Simplex(rho) if !(rho > 0.0 && rho.is_finite()) => {
                Err(CpdError::arg(format!("simplex scale must be > 0, got {rho}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the prox decomposes entrywise, so entrywise stepsizes are exact.
    pub fn is_separable(&self) -> bool {
        matches!(
            self,
            Regularizer::None | Regularizer::Nonneg | Regularizer::L1(_) | Regularizer::L0(_)
        )
    }

    /// `h(Z)`, with `+∞` outside a constraint set (sums checked to `1e-9·ρ`).
    pub fn penalty(&self, z: &Array2<f64>) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Nonneg => {
                if z.iter().all(|&v| v >= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::L1(l) => l * z.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::L2(l) => l * z.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Regularizer::L21(l) => l * z.columns().into_iter().map(|c| c.dot(&c).sqrt()).sum::<f64>(),
            Regularizer::L0(l) => l * z.iter().filter(|&&v| v != 0.0).count() as f64,
            Regularizer::Simplex(rho) => {
                let ok = z.iter().all(|&v| v >= 0.0)
                    && z.columns().into_iter().all(|c| (c.sum() - rho).abs() <= 1e-9 * rho.max(1.0));
                if ok {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::Monotone => {
                let ok = z
                    .columns()
                    .into_iter()
                    .all(|c| c.iter().zip(c.iter().skip(1)).all(|(a, b)| a <= b));
                if ok {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `½‖Z − M‖² + α·h(Z)`.
    pub fn prox_objective(&self, z: &Array2<f64>, m: &Array2<f64>, alpha: f64) -> f64 {
        let fit = 0.5 * Zip::from(z).and(m).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
        let pen = self.penalty(z);
        if pen == 0.0 {
            fit
        } else {
            fit + alpha * pen
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::None => write!(f, "none"),
            Regularizer::Nonneg => write!(f, "nonneg"),
            Regularizer::L1(l) => write!(f, "l1(lambda={l})"),
            Regularizer::L2(l) => write!(f, "l2(lambda={l})"),
            Regularizer::L21(l) => write!(f, "l21(lambda={l})"),
            Regularizer::L0(l) => write!(f, "l0(lambda={l})"),
            Regularizer::Simplex(rho) => write!(f, "simplex(rho={rho})"),
            Regularizer::Monotone => write!(f, "monotone"),
        }
    }
}

pub fn apply_prox(reg: &Regularizer, m: &Array2<f64>, step: Step<'_>) -> Result<Array2<f64>> {
    reg.validate()?;
    match step {
        Step::Scalar(alpha) => {
            if !(alpha >= 0.0) {
                return Err(CpdError::arg(format!("stepsize must be >= 0, got {alpha}")));
            }
            Ok(prox_scalar(reg, m, alpha))
        }
        Step::Entrywise(steps) => {
            if steps.dim() != m.dim() {
                return Err(CpdError::dim(format!(
                    "stepsize matrix {:?} does not match {:?}",
                    steps.dim(),
                    m.dim()
                )));
            }
            if !reg.is_separable() {
                return Err(CpdError::arg(format!(
                    "{reg} is not separable and needs a scalar stepsize"
                )));
            }
            let mut out = m.clone();
            match *reg {
                Regularizer::L1(l) => Zip::from(&mut out)
                    .and(steps)
                    .for_each(|x, &a| *x = soft_threshold(*x, l * a)),
                Regularizer::L0(l) => Zip::from(&mut out)
                    .and(steps)
                    .for_each(|x, &a| *x = hard_threshold(*x, l * a)),
                _ => return Ok(prox_scalar(reg, m, 0.0)),
            }
            Ok(out)
        }
    }
}

fn prox_scalar(reg: &Regularizer, m: &Array2<f64>, alpha: f64) -> Array2<f64> {
    match *reg {
        Regularizer::None => m.clone(),
        Regularizer::Nonneg => m.mapv(|v| v.max(0.0)),
        Regularizer::L1(l) => m.mapv(|v| soft_threshold(v, l * alpha)),
        Regularizer::L0(l) => prox_l0(m, l * alpha),
        Regularizer::L2(l) => {
            let flat = m.iter().copied().collect::<ndarray::Array1<f64>>();
            let shrunk = prox_l2_column(flat.view(), l * alpha);
            Array2::from_shape_vec(m.raw_dim(), shrunk).expect("same length")
        }
        Regularizer::L21(l) => prox_l21(m, l * alpha),
        Regularizer::Simplex(rho) => map_columns(m, |c, mut out| {
            let z = project_simplex_column(c, rho);
            out.iter_mut().zip(z).for_each(|(o, v)| *o = v);
        }),
        Regularizer::Monotone => map_columns(m, |c, mut out| {
            let z = isotonic_column(c);
            out.iter_mut().zip(z).for_each(|(o, v)| *o = v);
        }),
    }
}

fn map_columns(m: &Array2<f64>, mut f: impl FnMut(ArrayView1<f64>, ArrayViewMut1<f64>)) -> Array2<f64> {
    let mut out = Array2::zeros(m.raw_dim());
    for (src, dst) in m.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))) {
        f(src, dst);
    }
    out
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Keeps `x` iff `x² > 2t`; ties go to zero.
#[inline]
pub fn hard_threshold(x: f64, t: f64) -> f64 {
    if x * x > 2.0 * t {
        x
    } else {
        0.0
    }
}

/// Group shrinkage `v · max(1 − t/‖v‖, 0)`.
pub fn prox_l2_column(v: ArrayView1<f64>, t: f64) -> Vec<f64> {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 || t >= norm {
        return vec![0.0; v.len()];
    }
    let scale = 1.0 - t / norm;
    v.iter().map(|x| x * scale).collect()
}

pub fn prox_l21(m: &Array2<f64>, t: f64) -> Array2<f64> {
    map_columns(m, |c, mut out| {
        let z = prox_l2_column(c, t);
        out.iter_mut().zip(z).for_each(|(o, v)| *o = v);
    })
}

pub fn prox_l0(m: &Array2<f64>, t: f64) -> Array2<f64> {
    m.mapv(|v| hard_threshold(v, t))
}

/// Euclidean projection onto `{z ≥ 0, 1ᵀz = ρ}` by sorting.
pub fn project_simplex_column(v: ArrayView1<f64>, rho: f64) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let cand = (cumsum - rho) / (k + 1) as f64;
        if uk - cand > 0.0 {
            theta = cand;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Least-squares nondecreasing fit by pool-adjacent-violators.
pub fn isotonic_column(v: ArrayView1<f64>) -> Vec<f64> {
    // (block mean, block length)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        let mut cur = (x, 1usize);
        while let Some(&(mean, len)) = blocks.last() {
            if mean <= cur.0 {
                break;
            }
            blocks.pop();
            let total = len + cur.1;
            cur = ((mean * len as f64 + cur.0 * cur.1 as f64) / total as f64, total);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(mean, len)| std::iter::repeat_n(mean, len))
        .collect()
}
