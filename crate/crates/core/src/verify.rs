//! Self-check suites run by `brascpd verify`.
//!
//! Every check compares the library against a small independent oracle:
//! explicit index formulas, a materialized Khatri-Rao product and unfolding,
//! subset enumeration, central differences, random feasible candidates and
//! brute-force permutation search.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CpdError, Result};
use crate::exec::Exec;
use crate::gradient::{full_block_gradient, stochastic_block_gradient};
use crate::kr::{full_mttkrp, gram_hadamard, kr_rows};
use crate::metrics::mse;
use crate::model::FactorModel;
use crate::prox::{apply_prox, Regularizer, Step};
use crate::tensor::{decode_fiber, encode_fiber, fiber_count, DenseTensor, FiberIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Index,
    Kr,
    Gradient,
    Prox,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Index, Suite::Kr, Suite::Gradient, Suite::Prox, Suite::Metrics];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Index => "index",
            Suite::Kr => "kr",
            Suite::Gradient => "gradient",
            Suite::Prox => "prox",
            Suite::Metrics => "metrics",
        }
    }
}

/// Parses `all` or a comma-separated list of suite names.
pub fn parse_selector(s: &str) -> Result<Vec<Suite>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        let suite = Suite::ALL
            .into_iter()
            .find(|x| x.name() == part)
            .ok_or_else(|| CpdError::arg(format!("unknown suite `{part}`; expected all, index, kr, gradient, prox or metrics")))?;
        if !out.contains(&suite) {
            out.push(suite);
        }
    }
    if out.is_empty() {
        return Err(CpdError::arg("empty suite selector"));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies every stochastic gradient before the unbiasedness check.
    /// Anything but 1 must make that check fail.
    pub gradient_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 20_190_101,
            gradient_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{}\t{}\t{}\t{}", self.suite.name(), self.check, status, self.detail)
    }
}

pub fn run_suites(suites: &[Suite], opts: &VerifyOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for &s in suites {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (s as u64));
        let mut push = |check: &str, res: Result<(bool, String)>| {
            let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
            out.push(CheckResult {
                suite: s,
                check: check.to_string(),
                passed,
                detail,
            });
        };
        match s {
            Suite::Index => {
                push("fiber_roundtrip", index_roundtrip());
                push("fiber_formula", fiber_formula(&mut rng));
            }
            Suite::Kr => {
                push("kr_rows_vs_materialized", kr_rows_check(&mut rng));
                push("gram_identity", gram_check(&mut rng));
                push("mttkrp_vs_unfolding", mttkrp_check(&mut rng));
            }
            Suite::Gradient => {
                push("unbiasedness", unbiasedness(&mut rng, opts.gradient_scale));
                push("finite_differences", finite_differences(&mut rng));
            }
            Suite::Prox => {
                push("optimality_vs_candidates", prox_optimality(&mut rng));
                push("projection_idempotence", prox_idempotence(&mut rng));
            }
            Suite::Metrics => {
                push("mse_vs_brute_force", mse_brute_force(&mut rng));
                push("mse_invariance", mse_invariance(&mut rng));
            }
        }
    }
    out
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn random_shape(rng: &mut ChaCha8Rng, order: usize, max: usize) -> Vec<usize> {
    (0..order).map(|_| rng.random_range(1..=max)).collect()
}

fn random_model(rng: &mut ChaCha8Rng, shape: &[usize], rank: usize) -> FactorModel {
    let factors = shape
        .iter()
        .map(|&d| Array2::from_shape_fn((d, rank), |_| rng.random_range(-1.0..1.0)))
        .collect();
    FactorModel::new(factors).expect("valid rank")
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).expect("valid shape")
}

fn index_roundtrip() -> Result<(bool, String)> {
    let mut checked = 0usize;
    for shape in [vec![2, 3, 4], vec![3, 1, 2, 2], vec![5, 4], vec![2, 2, 2, 2, 2]] {
        for mode in 1..=shape.len() {
            for j in 1..=fiber_count(&shape, mode)? {
                let coords = decode_fiber(FiberIndex::new(mode, j), &shape)?;
                let back = encode_fiber(mode, &coords, &shape)?;
                if back.j != j {
                    return Ok((false, format!("shape {shape:?} mode {mode}: j={j} came back as {}", back.j)));
                }
                checked += 1;
            }
        }
    }
    Ok((true, format!("{checked} fibers")))
}

/// Fiber entries against `X(i_1, …, i_N)` with `j = 1 + Σ_{k≠n} (i_k − 1) J_k`.
fn fiber_formula(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    for _ in 0..10 {
        let order = rng.random_range(2..=4);
        let shape = random_shape(rng, order, 4);
        let t = random_tensor(rng, &shape);
        for mode in 1..=order {
            let mut idx = vec![1usize; order];
            loop {
                let mut j = 1;
                let mut jk = 1;
                for k in 0..order {
                    if k + 1 != mode {
                        j += (idx[k] - 1) * jk;
                        jk *= shape[k];
                    }
                }
                let fiber = t.fiber_at(FiberIndex::new(mode, j))?;
                for i in 1..=shape[mode - 1] {
                    let mut full = idx.clone();
                    full[mode - 1] = i;
                    if fiber[i - 1] != t.entry_at(&full)? {
                        return Ok((false, format!("shape {shape:?} mode {mode} j {j} entry {i}")));
                    }
                }
                // odometer over the other modes
                let mut k = 0;
                loop {
                    if k == order {
                        break;
                    }
                    if k + 1 == mode {
                        k += 1;
                        continue;
                    }
                    idx[k] += 1;
                    if idx[k] <= shape[k] {
                        break;
                    }
                    idx[k] = 1;
                    k += 1;
                }
                if k == order {
                    break;
                }
            }
        }
    }
    Ok((true, "10 random tensors".into()))
}

/// `A_N ⊙ … ⊙ A_1` without mode `n`, rows ordered lowest mode fastest.
fn materialized_kr(model: &FactorModel, mode: usize) -> Array2<f64> {
    let rank = model.rank();
    let mut h = Array2::<f64>::ones((1, rank));
    for k in (1..=model.order()).rev().filter(|&k| k != mode) {
        let a = model.factor(k);
        let mut next = Array2::zeros((h.nrows() * a.nrows(), rank));
        for r in 0..h.nrows() {
            for i in 0..a.nrows() {
                for f in 0..rank {
                    next[[r * a.nrows() + i, f]] = h[[r, f]] * a[[i, f]];
                }
            }
        }
        h = next;
    }
    h
}

fn unfolding(t: &DenseTensor, mode: usize) -> Result<Array2<f64>> {
    let jn = t.fiber_count(mode)?;
    let mut x = Array2::zeros((jn, t.shape()[mode - 1]));
    for j in 1..=jn {
        for (i, v) in t.fiber_at(FiberIndex::new(mode, j))?.into_iter().enumerate() {
            x[[j - 1, i]] = v;
        }
    }
    Ok(x)
}

fn kr_rows_check(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let order = rng.random_range(3..=4);
        let shape = random_shape(rng, order, 4);
        let rank = rng.random_range(1..=3);
        let model = random_model(rng, &shape, rank);
        for mode in 1..=order {
            let h = materialized_kr(&model, mode);
            let fibers: Vec<FiberIndex> = (1..=h.nrows()).map(|j| FiberIndex::new(mode, j)).collect();
            worst = worst.max(max_abs_diff(&kr_rows(&model, mode, &fibers)?, &h));
        }
    }
    Ok((worst <= 1e-14, format!("max abs diff {worst:e}")))
}

fn gram_check(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let shape = random_shape(rng, 3, 5);
        let rank = rng.random_range(1..=4);
        let model = random_model(rng, &shape, rank);
        for mode in 1..=3 {
            let h = materialized_kr(&model, mode);
            worst = worst.max(max_abs_diff(&gram_hadamard(&model, mode), &h.t().dot(&h)));
        }
    }
    Ok((worst <= 1e-12, format!("max abs diff {worst:e}")))
}

fn mttkrp_check(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let order = rng.random_range(3..=4);
        let shape = random_shape(rng, order, 4);
        let t = random_tensor(rng, &shape);
        let rank = rng.random_range(1..=3);
        let model = random_model(rng, &shape, rank);
        for mode in 1..=order {
            let want = unfolding(&t, mode)?.t().dot(&materialized_kr(&model, mode));
            for exec in [Exec::Sequential, Exec::Parallel] {
                worst = worst.max(max_abs_diff(&full_mttkrp(&t, &model, mode, exec)?, &want));
            }
        }
    }
    Ok((worst <= 1e-12, format!("max abs diff {worst:e}")))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for rest in subsets(n, k - 1) {
            if rest.first().is_none_or(|&r| r > first) {
                let mut s = vec![first];
                s.extend(rest);
                out.push(s);
            }
        }
    }
    out
}

/// Mean of the stochastic gradient over every batch of size B equals the
/// oracle block gradient `(1/J)(A HᵀH − X_(n)ᵀ H)`.
fn unbiasedness(rng: &mut ChaCha8Rng, scale: f64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let shape: Vec<usize> = (0..3).map(|_| rng.random_range(2..=4)).collect();
        let t = random_tensor(rng, &shape);
        let rank = rng.random_range(1..=3);
        let model = random_model(rng, &shape, rank);
        let mode = rng.random_range(1..=3);
        let h = materialized_kr(&model, mode);
        let jn = h.nrows();
        let a = model.factor(mode);
        let want = (a.dot(&h.t().dot(&h)) - unfolding(&t, mode)?.t().dot(&h)) / jn as f64;
        for b in 1..=2 {
            let all = subsets(jn, b);
            let mut mean = Array2::<f64>::zeros(a.raw_dim());
            for s in &all {
                let fibers: Vec<FiberIndex> = s.iter().map(|&j| FiberIndex::new(mode, j)).collect();
                mean += &(stochastic_block_gradient(&t, &model, mode, &fibers)?.g * scale);
            }
            mean /= all.len() as f64;
            worst = worst.max(max_abs_diff(&mean, &want));
        }
    }
    Ok((worst <= 1e-12, format!("max abs diff {worst:e}")))
}

/// `(1/(2J)) Σ (X − [[A]])²` by explicit entry loops.
fn oracle_objective(t: &DenseTensor, model: &FactorModel, mode: usize) -> Result<f64> {
    let shape = t.shape().to_vec();
    let mut idx = vec![0usize; shape.len()];
    let mut total = 0.0;
    for &x in t.values() {
        let mut approx = 0.0;
        for f in 0..model.rank() {
            approx += (0..shape.len()).map(|k| model.factors()[k][[idx[k], f]]).product::<f64>();
        }
        total += (x - approx) * (x - approx);
        for k in 0..shape.len() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(total / (2.0 * fiber_count(&shape, mode)? as f64))
}

fn finite_differences(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let shape: Vec<usize> = (0..3).map(|_| rng.random_range(2..=5)).collect();
        let t = random_tensor(rng, &shape);
        let rank = rng.random_range(1..=3);
        let model = random_model(rng, &shape, rank);
        let mode = rng.random_range(1..=3);
        let g = full_block_gradient(&t, &model, mode, Exec::Sequential)?;
        let mut fd = Array2::<f64>::zeros(g.raw_dim());
        for ((i, f), v) in fd.indexed_iter_mut() {
            let bump = |d: f64| -> Result<f64> {
                let mut factors = model.factors().to_vec();
                factors[mode - 1][[i, f]] += d;
                oracle_objective(&t, &FactorModel::new(factors)?, mode)
            };
            *v = (bump(h)? - bump(-h)?) / (2.0 * h);
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let diff = (&g - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:e}")))
}

/// A random point of the regularizer's domain, shaped like `like`.
fn feasible_candidate(rng: &mut ChaCha8Rng, reg: &Regularizer, like: &Array2<f64>, near: &Array2<f64>) -> Array2<f64> {
    let local = rng.random_bool(0.5);
    let mut z = Array2::from_shape_fn(like.raw_dim(), |idx| {
        if local {
            near[idx] + rng.random_range(-0.1..0.1)
        } else {
            rng.random_range(-3.0..3.0)
        }
    });
    match *reg {
        Regularizer::Nonneg => z.mapv_inplace(f64::abs),
        Regularizer::Simplex(rho) => {
            for mut c in z.columns_mut() {
                c.mapv_inplace(|v| v.abs() + 1e-12);
                let s = c.sum();
                c.mapv_inplace(|v| v * rho / s);
            }
        }
        Regularizer::Monotone => {
            for mut c in z.columns_mut() {
                let mut v = c.to_vec();
                v.sort_by(f64::total_cmp);
                c.assign(&ndarray::Array1::from(v));
            }
        }
        Regularizer::L0(_) if rng.random_bool(0.5) => z.mapv_inplace(|v| if rng.random_bool(0.5) { 0.0 } else { v }),
        _ => {}
    }
    z
}

fn prox_optimality(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let regs = [
        Regularizer::None,
        Regularizer::Nonneg,
        Regularizer::L1(0.7),
        Regularizer::L2(0.9),
        Regularizer::L21(0.6),
        Regularizer::L0(0.4),
        Regularizer::Simplex(1.5),
        Regularizer::Monotone,
    ];
    for reg in regs {
        for _ in 0..20 {
            let d = rng.random_range(1..=3);
            let cols = rng.random_range(1..=2);
            let m = Array2::from_shape_fn((d, cols), |_| rng.random_range(-2.0..2.0));
            let alpha = rng.random_range(0.05..2.0);
            let z = apply_prox(&reg, &m, Step::Scalar(alpha))?;
            let best = reg.prox_objective(&z, &m, alpha);
            if !best.is_finite() {
                return Ok((false, format!("{reg}: output infeasible")));
            }
            for _ in 0..500 {
                let c = feasible_candidate(rng, &reg, &m, &z);
                let obj = reg.prox_objective(&c, &m, alpha);
                if obj < best - 1e-10 * (1.0 + best.abs()) {
                    return Ok((false, format!("{reg}: candidate {obj} beats prox {best}")));
                }
            }
        }
    }
    Ok((true, format!("{} operators x 20 inputs x 500 candidates", regs.len())))
}

fn prox_idempotence(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = Array2::from_shape_fn((rng.random_range(1..=6), rng.random_range(1..=3)), |_| rng.random_range(-5.0..5.0));
        for reg in [Regularizer::Nonneg, Regularizer::Simplex(rng.random_range(0.1..10.0)), Regularizer::Monotone] {
            let once = apply_prox(&reg, &m, Step::Scalar(1.0))?;
            let twice = apply_prox(&reg, &once, Step::Scalar(1.0))?;
            worst = worst.max(max_abs_diff(&once, &twice));
        }
    }
    Ok((worst <= 1e-12, format!("max abs diff {worst:e}")))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_mse(est: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let unit = |a: &Array2<f64>, f: usize| {
        let c = a.column(f).to_owned();
        let n = c.dot(&c).sqrt();
        c / n
    };
    let rank = est.ncols();
    permutations(rank)
        .into_iter()
        .map(|p| {
            (0..rank)
                .map(|f| {
                    let (u, v) = (unit(truth, p[f]), unit(est, f));
                    let minus = (&u - &v).mapv(|x| x * x).sum();
                    let plus = (&u + &v).mapv(|x| x * x).sum();
                    minus.min(plus)
                })
                .sum::<f64>()
                / rank as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn mse_brute_force(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let rank = rng.random_range(1..=5);
        let shape = vec![rng.random_range(2..=6), 3, 2];
        let est = random_model(rng, &shape, rank);
        let truth = random_model(rng, &shape, rank);
        let got = mse(&est, &truth, 1)?;
        worst = worst.max((got - brute_force_mse(est.factor(1), truth.factor(1))).abs());
    }
    Ok((worst <= 1e-12, format!("max abs diff {worst:e}")))
}

fn mse_invariance(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let rank = rng.random_range(1..=6);
        let shape = vec![rng.random_range(2..=8), 2, 2];
        let truth = random_model(rng, &shape, rank);
        let mut perm: Vec<usize> = (0..rank).collect();
        for i in (1..rank).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let scales: Vec<f64> = (0..rank).map(|_| rng.random_range(0.1..10.0)).collect();
        let factors = truth
            .factors()
            .iter()
            .map(|a| Array2::from_shape_fn(a.raw_dim(), |(i, f)| a[[i, perm[f]]] * scales[f]))
            .collect();
        let est = FactorModel::new(factors)?;
        for mode in 1..=3 {
            worst = worst.max(mse(&est, &truth, mode)?.abs());
        }
    }
    Ok((worst <= 1e-12, format!("max mse of permuted/scaled truth {worst:e}")))
}
