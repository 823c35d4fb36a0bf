//! Independent oracles and helpers shared by the integration tests.
//!
//! Nothing here calls the crate's kernel or estimator code: the oracles are
//! written from the textbook formulas with plain loops over `Vec<f64>`.
#![allow(dead_code)]

pub mod cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rkhs_mmd::FeatureMatrix;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, mean: f64, scale: f64) -> Rows {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + scale * z
                })
                .collect()
        })
        .collect()
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn fm(rows: &Rows) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows).unwrap()
}

pub fn rows_of(m: &FeatureMatrix) -> Rows {
    (0..m.n()).map(|i| m.row(i).to_vec()).collect()
}

/// `Σ wₘ exp(-‖x-y‖² / (2σₘ²))`.
pub fn naive_kernel(bandwidths: &[f64], weights: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for k in 0..x.len() {
        r2 += (x[k] - y[k]) * (x[k] - y[k]);
    }
    let mut v = 0.0;
    for m in 0..bandwidths.len() {
        v += weights[m] * (-r2 / (2.0 * bandwidths[m] * bandwidths[m])).exp();
    }
    v
}

/// Triple-loop MMD²; `unbiased` drops the within-domain diagonals.
pub fn naive_mmd(bw: &[f64], w: &[f64], s: &Rows, t: &Rows, unbiased: bool) -> f64 {
    let (n, m) = (s.len() as f64, t.len() as f64);
    let mut ss = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if !(unbiased && i == j) {
                ss += naive_kernel(bw, w, &s[i], &s[j]);
            }
        }
    }
    let mut tt = 0.0;
    for i in 0..t.len() {
        for j in 0..t.len() {
            if !(unbiased && i == j) {
                tt += naive_kernel(bw, w, &t[i], &t[j]);
            }
        }
    }
    let mut st = 0.0;
    for x in s {
        for y in t {
            st += naive_kernel(bw, w, x, y);
        }
    }
    if unbiased {
        ss / (n * (n - 1.0)) + tt / (m * (m - 1.0)) - 2.0 * st / (n * m)
    } else {
        ss / (n * n) + tt / (m * m) - 2.0 * st / (n * m)
    }
}

/// σ = sqrt(median / 2) over all nonzero pairwise squared distances of the
/// pooled set, by full enumeration and sort.
pub fn naive_median_sigma(pool: &Rows) -> f64 {
    let mut d2 = Vec::new();
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            let r2: f64 = pool[i].iter().zip(&pool[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 > 0.0 {
                d2.push(r2);
            }
        }
    }
    d2.sort_by(f64::total_cmp);
    let k = d2.len();
    let med = if k % 2 == 1 {
        d2[k / 2]
    } else {
        0.5 * (d2[k / 2 - 1] + d2[k / 2])
    };
    (med / 2.0).sqrt()
}

/// Unbiased sample covariance, by loops.
pub fn naive_cov(x: &Rows) -> Vec<Vec<f64>> {
    let (n, d) = (x.len(), x[0].len());
    let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in x {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

pub fn naive_coral(s: &Rows, t: &Rows) -> f64 {
    let (cs, ct) = (naive_cov(s), naive_cov(t));
    let d = cs.len();
    let mut f = 0.0;
    for a in 0..d {
        for b in 0..d {
            f += (cs[a][b] - ct[a][b]).powi(2);
        }
    }
    f / (4.0 * (d * d) as f64)
}

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative errors. Central differences at h = 1e-6
/// carry roughly `ε·|f|/h ≈ 1e-10·|f|` of rounding noise, so entries whose
/// true derivative is below ~1e-5·|f| cannot be resolved to 1e-5 relative;
/// below the floor the comparison degrades gracefully to an absolute one.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Maximum relative error between `analytic` and central differences of `f`
/// over every coordinate of `x`.
pub fn max_fd_error(x: &[f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| rel_err(analytic[i], central_diff(&mut x, i, f)))
        .fold(0.0, f64::max)
}

pub fn flatten(rows: &Rows) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn unflatten(v: &[f64], d: usize) -> Rows {
    v.chunks(d).map(<[f64]>::to_vec).collect()
}
