//! Gaussian kernels, Gram matrices and bandwidth selection.
//!
//! The Gaussian kernel is parameterised as
//! `k(x, y) = exp(-‖x - y‖² / (2σ²))`; note the factor of two in the
//! denominator. A Gaussian mixture is a convex combination of such kernels
//! and is itself positive definite.
//!
//! Bandwidths are either fixed, or chosen from the data with the median
//! heuristic: `σ² = median(‖xᵢ - xⱼ‖²) / 2`, which puts the kernel exponent
//! at exactly `-1` for a median-distance pair. In median mode a [`KernelSpec`]'s
//! `bandwidths` are multipliers applied to that σ, and [`KernelSpec::resolve`]
//! turns it into a fixed spec for a given pair of sample sets.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multipliers of the median-heuristic σ used by the default mixture kernel.
pub const DEFAULT_MIXTURE_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Gram matrices with at least this many `n·m·d` multiply-adds are filled in
/// parallel.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Gaussian,
    GaussianMixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    Fixed,
    MedianHeuristic,
}

/// Kernel family plus bandwidth parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// σ values in fixed mode, multipliers of the median σ otherwise.
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth_mode: BandwidthMode,
}

impl KernelSpec {
    /// Single Gaussian with a fixed bandwidth.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidths: vec![sigma],
            weights: vec![1.0],
            bandwidth_mode: BandwidthMode::Fixed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single Gaussian whose σ comes from the median heuristic.
    pub fn gaussian_median() -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidths: vec![1.0],
            weights: vec![1.0],
            bandwidth_mode: BandwidthMode::MedianHeuristic,
        }
    }

    /// Fixed-bandwidth mixture.
    pub fn mixture(bandwidths: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::GaussianMixture,
            bandwidths,
            weights,
            bandwidth_mode: BandwidthMode::Fixed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal-weight mixture over [`DEFAULT_MIXTURE_SCALES`] times the median σ.
    pub fn mixture_median() -> Self {
        let m = DEFAULT_MIXTURE_SCALES.len();
        KernelSpec {
            family: KernelFamily::GaussianMixture,
            bandwidths: DEFAULT_MIXTURE_SCALES.to_vec(),
            weights: vec![1.0 / m as f64; m],
            bandwidth_mode: BandwidthMode::MedianHeuristic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() {
            return Err(Error::input("kernel needs at least one bandwidth"));
        }
        if self.weights.len() != self.bandwidths.len() {
            return Err(Error::input(format!(
                "kernel has {} bandwidths but {} weights",
                self.bandwidths.len(),
                self.weights.len()
            )));
        }
        if self.family == KernelFamily::Gaussian && self.bandwidths.len() != 1 {
            return Err(Error::input("gaussian kernel takes exactly one bandwidth"));
        }
        if let Some(s) = self.bandwidths.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::input(format!("bandwidth must be positive, got {s}")));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::input(format!("kernel weight must be nonnegative, got {w}")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("kernel weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn is_resolved(&self) -> bool {
        self.bandwidth_mode == BandwidthMode::Fixed
    }

    /// Fix the bandwidths for the pooled sample `a ∪ b`.
    ///
    /// A fixed spec is returned unchanged. `b` may be the same matrix as `a`,
    /// in which case the pool is `a` alone.
    pub fn resolve(&self, a: &FeatureMatrix, b: &FeatureMatrix) -> Result<KernelSpec> {
        self.validate()?;
        match self.bandwidth_mode {
            BandwidthMode::Fixed => Ok(self.clone()),
            BandwidthMode::MedianHeuristic => {
                let sigma = if std::ptr::eq(a, b) || a == b {
                    median_heuristic_pooled(&[a])?
                } else {
                    median_heuristic(a, b)?
                };
                Ok(self.with_base_sigma(sigma))
            }
        }
    }

    /// Fixed spec whose bandwidths are this spec's multipliers times `sigma`.
    pub fn with_base_sigma(&self, sigma: f64) -> KernelSpec {
        KernelSpec {
            family: self.family,
            bandwidths: self.bandwidths.iter().map(|m| m * sigma).collect(),
            weights: self.weights.clone(),
            bandwidth_mode: BandwidthMode::Fixed,
        }
    }

    /// Kernel value as a function of squared distance. Only meaningful for a
    /// resolved spec.
    #[inline]
    pub(crate) fn value_at(&self, sq_dist: f64) -> f64 {
        self.bandwidths
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (-sq_dist / (2.0 * s * s)).exp())
            .sum()
    }

    /// Kernel value and the radial slope `c` such that
    /// `∂k(x, y)/∂x = c · (y - x)`, i.e. `c = Σ wₘ kₘ / σₘ²`.
    #[inline]
    pub(crate) fn value_and_slope(&self, sq_dist: f64) -> (f64, f64) {
        let mut value = 0.0;
        let mut slope = 0.0;
        for (s, w) in self.bandwidths.iter().zip(&self.weights) {
            let s2 = s * s;
            let k = w * (-sq_dist / (2.0 * s2)).exp();
            value += k;
            slope += k / s2;
        }
        (value, slope)
    }

    fn require_resolved(&self) -> Result<()> {
        if self.is_resolved() {
            Ok(())
        } else {
            Err(Error::input(
                "median-heuristic kernel must be resolved against data before evaluation",
            ))
        }
    }
}

/// An `n × d` matrix of finite features, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::input("feature dimension must be at least 1"));
        }
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!("non-finite feature {v} at row {i}, column {j}")));
        }
        Ok(FeatureMatrix { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or_else(|| {
            Error::input("cannot infer feature dimension from zero rows")
        })?;
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::input(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::input(e.to_string()))?;
        Self::new(data)
    }

    /// Empty matrix with `d` columns.
    pub fn empty(d: usize) -> Result<Self> {
        Self::new(Array2::zeros((0, d)))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select(Axis(0), indices),
        }
    }

    /// Stack `self` on top of `other`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        check_dims(self, other)?;
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::input(e.to_string()))?;
        Ok(FeatureMatrix { data })
    }
}

/// Pairwise kernel evaluations between two sample sets.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
    /// Set when both inputs were the same sample set.
    pub symmetric: bool,
}

impl KernelMatrix {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

pub(crate) fn check_dims(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            expected: a.d(),
            found: b.d(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    match (x.as_slice(), y.as_slice()) {
        (Some(x), Some(y)) => sq_dist_slices(x, y),
        _ => x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum(),
    }
}

#[inline]
fn sq_dist_slices(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Evaluate `k(x, y)` for a resolved spec.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    spec.require_resolved()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let r2 = sq_dist(ArrayView1::from(x), ArrayView1::from(y));
    Ok(spec.value_at(r2))
}

/// Gram matrix `K[i][j] = k(a[i], b[j])`.
///
/// A median-heuristic spec is resolved on the pooled sample first. When `a`
/// and `b` hold the same samples only the upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, a: &FeatureMatrix, b: &FeatureMatrix) -> Result<KernelMatrix> {
    check_dims(a, b)?;
    let symmetric = std::ptr::eq(a, b) || a == b;
    if a.n() == 0 || b.n() == 0 {
        return Ok(KernelMatrix {
            values: Array2::zeros((a.n(), b.n())),
            symmetric,
        });
    }
    let resolved = spec.resolve(a, b)?;
    Ok(gram_resolved(&resolved, a.view(), b.view(), symmetric))
}

pub(crate) fn gram_resolved(
    spec: &KernelSpec,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    symmetric: bool,
) -> KernelMatrix {
    let (n, m, d) = (a.nrows(), b.nrows(), a.ncols());
    let (a, b) = (a.as_standard_layout(), b.as_standard_layout());
    let (a_flat, b_flat) = (
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    );
    let mut values = Array2::<f64>::zeros((n, m));
    let fill_row = |i: usize, mut row: ndarray::ArrayViewMut1<'_, f64>| {
        let row = row.as_slice_mut().expect("rows of a fresh array are contiguous");
        let x = &a_flat[i * d..(i + 1) * d];
        let start = if symmetric { i } else { 0 };
        for (j, out) in row.iter_mut().enumerate().skip(start) {
            *out = spec.value_at(sq_dist_slices(x, &b_flat[j * d..(j + 1) * d]));
        }
    };
    if n * m * d >= PARALLEL_WORK_THRESHOLD {
        values
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for (i, row) in values.axis_iter_mut(Axis(0)).enumerate() {
            fill_row(i, row);
        }
    }
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                values[[i, j]] = values[[j, i]];
            }
        }
    }
    KernelMatrix { values, symmetric }
}

/// Median-heuristic bandwidth over the pooled sample `a ∪ b`.
///
/// Returns `σ = sqrt(median / 2)` where the median runs over the squared
/// distances of all distinct pairs with nonzero distance. An even count
/// takes the mean of the two middle values.
pub fn median_heuristic(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    check_dims(a, b)?;
    median_heuristic_pooled(&[a, b])
}

fn median_heuristic_pooled(sets: &[&FeatureMatrix]) -> Result<f64> {
    let rows: Vec<ArrayView1<'_, f64>> = sets
        .iter()
        .flat_map(|m| m.data.axis_iter(Axis(0)))
        .collect();
    if rows.len() < 2 {
        return Err(Error::Degenerate(
            "median heuristic needs at least two samples".into(),
        ));
    }
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let r2 = sq_dist(rows[i], rows[j]);
            if r2 > 0.0 {
                dists.push(r2);
            }
        }
    }
    let med = median(&mut dists).ok_or_else(|| {
        Error::Degenerate("all pairwise distances are zero; bandwidth would be 0".into())
    })?;
    Ok((med / 2.0).sqrt())
}

fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper_mid, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        Some(upper_mid)
    } else {
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower_mid + upper_mid))
    }
}
