//! Correlation alignment (CORAL) loss.
//!
//! `L = ‖C_S - C_T‖²_F / (4d²)` where `C` is the sample covariance with
//! divisor `n - 1`. Only second-order statistics enter, so a pure mean shift
//! between domains is invisible to it.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::kernel::{check_dims, FeatureMatrix};

#[derive(Clone, Debug)]
pub struct CoralGradient {
    pub value: f64,
    pub source: Array2<f64>,
    pub target: Array2<f64>,
}

fn check(s: &FeatureMatrix, t: &FeatureMatrix) -> Result<()> {
    check_dims(s, t)?;
    if s.n() < 2 || t.n() < 2 {
        return Err(Error::input(format!(
            "CORAL needs at least 2 samples per domain, got {} source and {} target",
            s.n(),
            t.n()
        )));
    }
    Ok(())
}

fn centered(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    &x - &mean
}

fn covariance(xc: &Array2<f64>) -> Array2<f64> {
    xc.t().dot(xc) / (xc.nrows() as f64 - 1.0)
}

pub fn coral_loss(s: &FeatureMatrix, t: &FeatureMatrix) -> Result<f64> {
    check(s, t)?;
    Ok(coral_with_gradient(s.view(), t.view(), false).value)
}

/// CORAL loss and its analytic gradient with respect to both inputs.
///
/// With `D = C_S - C_T`, `∂L/∂S = S_c D / ((n_S - 1) d²)` and
/// `∂L/∂T = -T_c D / ((n_T - 1) d²)`, where `S_c`, `T_c` are the centered
/// inputs.
pub fn coral_gradient(s: &FeatureMatrix, t: &FeatureMatrix) -> Result<CoralGradient> {
    check(s, t)?;
    Ok(coral_with_gradient(s.view(), t.view(), true))
}

pub(crate) fn coral_with_gradient(
    s: ArrayView2<'_, f64>,
    t: ArrayView2<'_, f64>,
    with_gradient: bool,
) -> CoralGradient {
    let d = s.ncols() as f64;
    let sc = centered(s);
    let tc = centered(t);
    let diff = covariance(&sc) - covariance(&tc);
    let value = diff.iter().map(|v| v * v).sum::<f64>() / (4.0 * d * d);
    let (source, target) = if with_gradient {
        let gs = sc.dot(&diff) / ((s.nrows() as f64 - 1.0) * d * d);
        let gt = tc.dot(&diff) / (-(t.nrows() as f64 - 1.0) * d * d);
        (gs, gt)
    } else {
        (Array2::zeros(s.dim()), Array2::zeros(t.dim()))
    };
    CoralGradient {
        value,
        source,
        target,
    }
}
