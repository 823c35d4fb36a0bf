//! Empirical maximum mean discrepancy.
//!
//! For source samples `x₁..xₙ` and target samples `u₁..uₘ` the biased
//! (V-statistic) estimate of `‖μ_S - μ_T‖²` is
//!
//! ```text
//! (1/n²) ΣΣ k(xᵢ,xⱼ) + (1/m²) ΣΣ k(uᵢ,uⱼ) - (2/(n·m)) ΣΣ k(xᵢ,uⱼ)
//! ```
//!
//! with the diagonal terms kept. This is the quantity used as a training
//! loss, and the one [`mmd_gradient`] differentiates. The unbiased
//! U-statistic drops the within-domain diagonals and divides by `n(n-1)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_dims, gram_resolved, sq_dist, FeatureMatrix, KernelSpec};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Biased,
    Unbiased,
}

/// A squared-MMD estimate together with the kernel it was computed under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Reported value. Biased estimates are clamped at zero.
    pub value: f64,
    /// Value before clamping.
    pub raw_value: f64,
    pub estimator: Estimator,
    /// The resolved (fixed-bandwidth) kernel.
    pub kernel: KernelSpec,
    pub n_source: usize,
    pub n_target: usize,
}

/// Biased MMD² together with its gradient with respect to every feature.
#[derive(Clone, Debug)]
pub struct MmdGradient {
    pub estimate: MmdEstimate,
    /// `∂L/∂S`, shape `n_S × d`.
    pub source: Array2<f64>,
    /// `∂L/∂T`, shape `n_T × d`.
    pub target: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    /// Observed biased MMD².
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    /// `(quantile, value)` pairs of the permutation null distribution.
    pub null_distribution_quantiles: Vec<(f64, f64)>,
    pub kernel: KernelSpec,
}

/// Quantiles reported for the permutation null distribution.
pub const NULL_QUANTILES: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

fn check_sizes(s: &FeatureMatrix, t: &FeatureMatrix, min: usize) -> Result<()> {
    check_dims(s, t)?;
    if s.n() < min || t.n() < min {
        return Err(Error::input(format!(
            "estimator needs at least {min} sample(s) per domain, got {} source and {} target",
            s.n(),
            t.n()
        )));
    }
    Ok(())
}

fn clamp_biased(raw: f64) -> f64 {
    if raw < 0.0 {
        debug_assert!(raw >= -1e-9, "biased MMD² far below zero: {raw}");
        0.0
    } else {
        raw
    }
}

/// Biased (V-statistic) estimator with the diagonal kernel terms included.
pub fn mmd_biased(spec: &KernelSpec, s: &FeatureMatrix, t: &FeatureMatrix) -> Result<MmdEstimate> {
    check_sizes(s, t, 1)?;
    let kernel = spec.resolve(s, t)?;
    let raw = biased_with(&kernel, s.view(), t.view());
    Ok(MmdEstimate {
        value: clamp_biased(raw),
        raw_value: raw,
        estimator: Estimator::Biased,
        kernel,
        n_source: s.n(),
        n_target: t.n(),
    })
}

pub(crate) fn biased_with(kernel: &KernelSpec, s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> f64 {
    let (n, m) = (s.nrows() as f64, t.nrows() as f64);
    let kss = gram_resolved(kernel, s, s, true).sum();
    let ktt = gram_resolved(kernel, t, t, true).sum();
    let kst = gram_resolved(kernel, s, t, false).sum();
    kss / (n * n) + ktt / (m * m) - 2.0 * kst / (n * m)
}

/// Unbiased U-statistic estimator. May be negative.
pub fn mmd_unbiased(spec: &KernelSpec, s: &FeatureMatrix, t: &FeatureMatrix) -> Result<MmdEstimate> {
    check_sizes(s, t, 2)?;
    let kernel = spec.resolve(s, t)?;
    let (n, m) = (s.n() as f64, t.n() as f64);
    let off_diagonal_sum = |x: ArrayView2<'_, f64>| {
        let g = gram_resolved(&kernel, x, x, true);
        g.sum() - g.values.diag().sum()
    };
    let kss = off_diagonal_sum(s.view());
    let ktt = off_diagonal_sum(t.view());
    let kst = gram_resolved(&kernel, s.view(), t.view(), false).sum();
    let value = kss / (n * (n - 1.0)) + ktt / (m * (m - 1.0)) - 2.0 * kst / (n * m);
    Ok(MmdEstimate {
        value,
        raw_value: value,
        estimator: Estimator::Unbiased,
        kernel,
        n_source: s.n(),
        n_target: t.n(),
    })
}

/// Analytic gradient of the biased estimator.
///
/// Uses `∂k(x, y)/∂x = Σ wₘ kₘ(x, y) (y - x) / σₘ²`. A median-heuristic
/// bandwidth is computed once from the inputs and then held constant.
pub fn mmd_gradient(spec: &KernelSpec, s: &FeatureMatrix, t: &FeatureMatrix) -> Result<MmdGradient> {
    check_sizes(s, t, 1)?;
    let kernel = spec.resolve(s, t)?;
    Ok(gradient_with(&kernel, s.view(), t.view()))
}

pub(crate) fn gradient_with(
    kernel: &KernelSpec,
    s: ArrayView2<'_, f64>,
    t: ArrayView2<'_, f64>,
) -> MmdGradient {
    let (n, m, d) = (s.nrows(), t.nrows(), s.ncols());
    let (nf, mf) = (n as f64, m as f64);
    let mut gs = Array2::<f64>::zeros((n, d));
    let mut gt = Array2::<f64>::zeros((m, d));
    let k0 = kernel.value_at(0.0);

    let within = |x: ArrayView2<'_, f64>, g: &mut Array2<f64>, count: f64| -> f64 {
        let scale = 2.0 / (count * count);
        let mut sum = x.nrows() as f64 * k0;
        for i in 0..x.nrows() {
            for j in (i + 1)..x.nrows() {
                let (k, c) = kernel.value_and_slope(sq_dist(x.row(i), x.row(j)));
                sum += 2.0 * k;
                for f in 0..d {
                    let step = scale * c * (x[[j, f]] - x[[i, f]]);
                    g[[i, f]] += step;
                    g[[j, f]] -= step;
                }
            }
        }
        sum
    };
    let kss = within(s, &mut gs, nf);
    let ktt = within(t, &mut gt, mf);

    let cross_scale = 2.0 / (nf * mf);
    let mut kst = 0.0;
    for i in 0..n {
        for j in 0..m {
            let (k, c) = kernel.value_and_slope(sq_dist(s.row(i), t.row(j)));
            kst += k;
            for f in 0..d {
                let step = cross_scale * c * (t[[j, f]] - s[[i, f]]);
                gs[[i, f]] -= step;
                gt[[j, f]] += step;
            }
        }
    }

    let raw = kss / (nf * nf) + ktt / (mf * mf) - cross_scale * kst;
    MmdGradient {
        estimate: MmdEstimate {
            value: clamp_biased(raw),
            raw_value: raw,
            estimator: Estimator::Biased,
            kernel: kernel.clone(),
            n_source: n,
            n_target: m,
        },
        source: gs,
        target: gt,
    }
}

/// Two-sample permutation test on the biased MMD² statistic.
///
/// The kernel is resolved once on the pooled sample, which is itself
/// invariant under relabelling. Replicate `r` draws its split from its own
/// random stream, so the result does not depend on thread scheduling.
pub fn permutation_test(
    spec: &KernelSpec,
    s: &FeatureMatrix,
    t: &FeatureMatrix,
    n_permutations: usize,
    seed: u64,
) -> Result<PermutationTestResult> {
    check_sizes(s, t, 2)?;
    if n_permutations < 99 {
        return Err(Error::input(format!(
            "permutation test needs at least 99 permutations, got {n_permutations}"
        )));
    }
    let kernel = spec.resolve(s, t)?;
    let pooled = s.concat(t)?;
    let (n_s, total) = (s.n(), pooled.n());
    let k = gram_resolved(&kernel, pooled.view(), pooled.view(), true).values;

    let identity: Vec<usize> = (0..total).collect();
    let observed = split_statistic(&k, &identity, n_s);
    let null: Vec<f64> = (0..n_permutations)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, rng::stream::PERMUTATION_BASE + r as u64);
            let mut order = identity.clone();
            order.shuffle(&mut rng);
            split_statistic(&k, &order, n_s)
        })
        .collect();

    let exceed = null.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + n_permutations) as f64;
    let mut sorted = null;
    sorted.sort_by(f64::total_cmp);
    let null_distribution_quantiles = NULL_QUANTILES
        .iter()
        .map(|&q| (q, quantile_sorted(&sorted, q)))
        .collect();
    Ok(PermutationTestResult {
        statistic: clamp_biased(observed),
        p_value,
        n_permutations,
        null_distribution_quantiles,
        kernel,
    })
}

/// Biased MMD² of the split `order[..n_s]` vs `order[n_s..]`, as `aᵀ K a`
/// with `a = 1/n_s` on the first block and `-1/n_t` on the second.
fn split_statistic(k: &Array2<f64>, order: &[usize], n_s: usize) -> f64 {
    let n_t = order.len() - n_s;
    let mut a = Array1::<f64>::zeros(order.len());
    for (pos, &idx) in order.iter().enumerate() {
        a[idx] = if pos < n_s {
            1.0 / n_s as f64
        } else {
            -1.0 / n_t as f64
        };
    }
    k.axis_iter(Axis(0))
        .zip(a.iter())
        .map(|(row, ai)| ai * row.dot(&a))
        .sum()
}

/// Linear-interpolation quantile of a sorted, nonempty slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
