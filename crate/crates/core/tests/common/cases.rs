//! Random instances for the oracle and gradient checks, shared by the
//! property tests and the acceptance runner.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rkhs_mmd::coral::{coral_gradient, coral_loss};
use rkhs_mmd::kernel::{gram, KernelSpec};
use rkhs_mmd::mmd::{mmd_biased, mmd_gradient, mmd_unbiased, Estimator};
use rkhs_mmd::net::{backward, cross_entropy, forward, init_model, MlpModel};
use rkhs_mmd::FeatureMatrix;

use super::*;

pub fn random_spec(r: &mut ChaCha8Rng) -> KernelSpec {
    match r.random_range(0..3) {
        0 => KernelSpec::gaussian(r.random_range(0.3..3.0)).unwrap(),
        1 => {
            let m = r.random_range(2..5);
            let bw = (0..m).map(|_| r.random_range(0.3..3.0)).collect();
            KernelSpec::mixture(bw, vec![1.0 / m as f64; m]).unwrap()
        }
        _ => KernelSpec::mixture_median(),
    }
}

/// Bandwidths the crate should use for `spec` on `s ∪ t`, from the oracle.
pub fn oracle_bandwidths(spec: &KernelSpec, s: &Rows, t: &Rows) -> Vec<f64> {
    if spec.is_resolved() {
        spec.bandwidths.clone()
    } else {
        let pool: Rows = s.iter().chain(t).cloned().collect();
        let sigma = naive_median_sigma(&pool);
        spec.bandwidths.iter().map(|m| m * sigma).collect()
    }
}

/// Largest deviation of the biased and unbiased estimators from the loop
/// oracle on one random instance (n ≤ 10, d ≤ 4).
pub fn estimator_oracle_error(r: &mut ChaCha8Rng) -> f64 {
    let d = r.random_range(1..=4);
    let (ns, nt) = (r.random_range(2..=10), r.random_range(2..=10));
    let s = uniform_rows(r, ns, d, -2.0, 2.0);
    let t = uniform_rows(r, nt, d, -1.0, 3.0);
    let spec = random_spec(r);
    let bw = oracle_bandwidths(&spec, &s, &t);
    let w = spec.weights.clone();
    let b = mmd_biased(&spec, &fm(&s), &fm(&t)).unwrap();
    let u = mmd_unbiased(&spec, &fm(&s), &fm(&t)).unwrap();
    assert_eq!((b.estimator, u.estimator), (Estimator::Biased, Estimator::Unbiased));
    assert_eq!((b.n_source, b.n_target), (ns, nt));
    (b.raw_value - naive_mmd(&bw, &w, &s, &t, false))
        .abs()
        .max((u.value - naive_mmd(&bw, &w, &s, &t, true)).abs())
}

/// Relative error of the analytic MMD gradient vs central differences for
/// one random instance; the kernel is resolved first and held fixed.
pub fn mmd_gradient_error(r: &mut ChaCha8Rng) -> f64 {
    let d = r.random_range(1..=4);
    let (ns, nt) = (r.random_range(1..=8), r.random_range(1..=8));
    let s = normal_rows(r, ns, d, 0.0, 1.0);
    let t = normal_rows(r, nt, d, 0.5, 1.0);
    let spec = random_spec(r).resolve(&fm(&s), &fm(&t)).unwrap();
    let g = mmd_gradient(&spec, &fm(&s), &fm(&t)).unwrap();
    let analytic: Vec<f64> = g.source.iter().chain(g.target.iter()).copied().collect();
    let x: Vec<f64> = flatten(&s).into_iter().chain(flatten(&t)).collect();
    let split = ns * d;
    let (bw, w) = (spec.bandwidths.clone(), spec.weights.clone());
    let mut f = |x: &[f64]| naive_mmd(&bw, &w, &unflatten(&x[..split], d), &unflatten(&x[split..], d), false);
    assert!((g.estimate.raw_value - f(&x)).abs() < 1e-12);
    max_fd_error(&x, &analytic, &mut f)
}

/// Value deviation from the loop oracle and gradient relative error for one
/// random CORAL instance.
pub fn coral_errors(r: &mut ChaCha8Rng) -> (f64, f64) {
    let d = r.random_range(1..=4);
    let (ns, nt) = (r.random_range(2..=8), r.random_range(2..=8));
    let s = normal_rows(r, ns, d, 0.0, 1.0);
    let t = normal_rows(r, nt, d, 0.3, 1.5);
    let g = coral_gradient(&fm(&s), &fm(&t)).unwrap();
    let value_err = (g.value - naive_coral(&s, &t)).abs();
    assert_eq!(g.value, coral_loss(&fm(&s), &fm(&t)).unwrap());
    let analytic: Vec<f64> = g.source.iter().chain(g.target.iter()).copied().collect();
    let x: Vec<f64> = flatten(&s).into_iter().chain(flatten(&t)).collect();
    let split = ns * d;
    let mut f = |x: &[f64]| naive_coral(&unflatten(&x[..split], d), &unflatten(&x[split..], d));
    (value_err, max_fd_error(&x, &analytic, &mut f))
}

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    MixtureMedian,
    Gaussian,
    Coral,
}

/// Discrepancy value (from the loop oracles) and analytic tap gradients.
pub fn discrepancy(kind: Kind, spec: &KernelSpec, s: &Array2<f64>, t: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let (fs, ft) = (FeatureMatrix::new(s.clone()).unwrap(), FeatureMatrix::new(t.clone()).unwrap());
    let (rs, rt) = (rows_of(&fs), rows_of(&ft));
    match kind {
        Kind::Coral => {
            let g = coral_gradient(&fs, &ft).unwrap();
            (naive_coral(&rs, &rt), g.source, g.target)
        }
        _ => {
            let g = mmd_gradient(spec, &fs, &ft).unwrap();
            (naive_mmd(&spec.bandwidths, &spec.weights, &rs, &rt, false), g.source, g.target)
        }
    }
}

pub struct Case {
    pub model: MlpModel,
    pub xs: Array2<f64>,
    pub xt: Array2<f64>,
    pub labels: Vec<usize>,
    pub taps: Vec<(usize, f64)>,
    pub kind: Kind,
    /// Resolved per tap at the unperturbed parameters, then held fixed.
    pub specs: Vec<KernelSpec>,
}

pub fn joint_loss(case: &Case, params: &[f64]) -> f64 {
    let mut model = case.model.clone();
    model.set_parameters(params).unwrap();
    let ts = forward(&model, case.xs.view(), None).unwrap();
    let tt = forward(&model, case.xt.view(), None).unwrap();
    let mut loss = cross_entropy(&ts, &case.labels).unwrap();
    for ((layer, lambda), spec) in case.taps.iter().zip(&case.specs) {
        loss += lambda * discrepancy(case.kind, spec, &ts.activations[*layer], &tt.activations[*layer]).0;
    }
    loss
}

pub fn analytic_gradient(case: &Case) -> Vec<f64> {
    let ts = forward(&case.model, case.xs.view(), None).unwrap();
    let tt = forward(&case.model, case.xt.view(), None).unwrap();
    let (mut inj_s, mut inj_t) = (Vec::new(), Vec::new());
    for ((layer, lambda), spec) in case.taps.iter().zip(&case.specs) {
        let (_, gs, gt) = discrepancy(case.kind, spec, &ts.activations[*layer], &tt.activations[*layer]);
        inj_s.push((*layer, gs * *lambda));
        inj_t.push((*layer, gt * *lambda));
    }
    let mut g = backward(&case.model, &ts, Some(&case.labels), &view(&inj_s)).unwrap();
    g.add_assign(&backward(&case.model, &tt, None, &view(&inj_t)).unwrap());
    g.flatten()
}

fn view(v: &[(usize, Array2<f64>)]) -> Vec<(usize, ndarray::ArrayView2<'_, f64>)> {
    v.iter().map(|(l, g)| (*l, g.view())).collect()
}

pub fn random_case(r: &mut ChaCha8Rng) -> Case {
    let d_in = r.random_range(1..=4);
    let n_hidden = r.random_range(1..=3);
    let mut dims = vec![d_in];
    dims.extend((0..n_hidden).map(|_| r.random_range(2..=6)));
    let n_classes = r.random_range(2..=4);
    dims.push(n_classes);
    let mut model = init_model(&dims, r.random()).unwrap();
    let params: Vec<f64> = (0..model.num_parameters())
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            0.7 * z
        })
        .collect();
    model.set_parameters(&params).unwrap();

    let (ns, nt) = (r.random_range(2..=8), r.random_range(2..=8));
    let xs = Array2::from_shape_vec((ns, d_in), normal_rows(r, ns, d_in, 0.0, 1.0).concat()).unwrap();
    let xt = Array2::from_shape_vec((nt, d_in), normal_rows(r, nt, d_in, 0.5, 1.0).concat()).unwrap();
    let labels = (0..ns).map(|_| r.random_range(0..n_classes)).collect();
    let kind = [Kind::MixtureMedian, Kind::Gaussian, Kind::Coral][r.random_range(0..3)];
    let n_layers = dims.len() - 1;
    let mut taps = vec![(r.random_range(0..n_layers), r.random_range(0.1..2.0))];
    if r.random_bool(0.5) {
        let other = r.random_range(0..n_layers);
        if other != taps[0].0 {
            taps.push((other, r.random_range(0.1..2.0)));
        }
    }
    let ts = forward(&model, xs.view(), None).unwrap();
    let tt = forward(&model, xt.view(), None).unwrap();
    let specs = taps
        .iter()
        .map(|(layer, _)| match kind {
            Kind::MixtureMedian => {
                let a = FeatureMatrix::new(ts.activations[*layer].clone()).unwrap();
                let b = FeatureMatrix::new(tt.activations[*layer].clone()).unwrap();
                let base = KernelSpec::mixture_median();
                // dead tapped units can make every pooled row coincide
                base.resolve(&a, &b).unwrap_or_else(|_| base.with_base_sigma(1.0))
            }
            _ => KernelSpec::gaussian(1.0).unwrap(),
        })
        .collect();
    Case {
        model,
        xs,
        xt,
        labels,
        taps,
        kind,
        specs,
    }
}

/// Relative error of the joint-loss parameter gradient for one random case.
pub fn joint_gradient_error(r: &mut ChaCha8Rng) -> f64 {
    let case = random_case(r);
    let analytic = analytic_gradient(&case);
    let params = case.model.parameters();
    max_fd_error(&params, &analytic, &mut |p| joint_loss(&case, p))
}

/// Smallest eigenvalue of a median-bandwidth Gram matrix on random points;
/// `case` in 0..50 sweeps n over 2..=50 and d over 1..=5.
pub fn gram_min_eigenvalue(r: &mut ChaCha8Rng, case: usize) -> f64 {
    let n = 2 + case % 49;
    let d = 1 + case % 5;
    let rows = normal_rows(r, n, d, 0.0, 1.0);
    let spec = if case.is_multiple_of(2) {
        KernelSpec::gaussian_median()
    } else {
        KernelSpec::mixture_median()
    };
    let x = fm(&rows);
    let k = gram(&spec.resolve(&x, &x).unwrap(), &x, &x).unwrap();
    assert!(k.symmetric);
    let m = DMatrix::from_fn(n, n, |i, j| k.values[[i, j]]);
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}
