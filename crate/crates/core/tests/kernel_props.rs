mod common;

use common::cases::*;
use common::*;
use proptest::prelude::*;
use rkhs_mmd::kernel::{eval_kernel, gram, median_heuristic, KernelSpec};
use rkhs_mmd::Error;

fn rows_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Rows> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), 1..=max_n)
}

// With coordinates in [-5, 5]³ the exponent stays above -600 for σ ≥ 0.5,
// so kernel values never underflow to exactly 0.
fn mixture_strategy() -> impl Strategy<Value = KernelSpec> {
    prop::collection::vec((0.5..5.0f64, 0.05..1.0f64), 1..=4).prop_map(|pairs| {
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let bw = pairs.iter().map(|p| p.0).collect();
        let mut w: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
        // absorb rounding so the weights sum to 1 within 1e-12
        let last = w.len() - 1;
        w[last] = 1.0 - w[..last].iter().sum::<f64>();
        KernelSpec::mixture(bw, w).unwrap()
    })
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(
        spec in mixture_strategy(),
        x in prop::collection::vec(-5.0..5.0f64, 3),
        y in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let kxy = eval_kernel(&spec, &x, &y).unwrap();
        let kyx = eval_kernel(&spec, &y, &x).unwrap();
        prop_assert_eq!(kxy.to_bits(), kyx.to_bits());
        prop_assert!(kxy > 0.0 && kxy <= 1.0);
        prop_assert!((eval_kernel(&spec, &x, &x).unwrap() - 1.0).abs() < 1e-12);
        if x != y {
            let r2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 > 1e-6 {
                prop_assert!(kxy < 1.0);
            }
        }
        let oracle = naive_kernel(&spec.bandwidths, &spec.weights, &x, &y);
        prop_assert!((kxy - oracle).abs() < 1e-14);
    }

    #[test]
    fn gram_matches_pointwise_kernel(a in rows_strategy(8, 2), b in rows_strategy(6, 2), sigma in 0.2..3.0f64) {
        let spec = KernelSpec::gaussian(sigma).unwrap();
        let (fa, fb) = (fm(&a), fm(&b));
        let k = gram(&spec, &fa, &fb).unwrap();
        prop_assert_eq!((k.nrows(), k.ncols()), (a.len(), b.len()));
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                prop_assert!((k.values[[i, j]] - naive_kernel(&[sigma], &[1.0], x, y)).abs() < 1e-14);
            }
        }
        let sym = gram(&spec, &fa, &fa).unwrap();
        prop_assert!(sym.symmetric);
        for i in 0..a.len() {
            prop_assert_eq!(sym.values[[i, i]], 1.0);
            for j in 0..a.len() {
                prop_assert_eq!(sym.values[[i, j]].to_bits(), sym.values[[j, i]].to_bits());
            }
        }
    }

    #[test]
    fn doubling_points_and_bandwidth_preserves_gram(a in rows_strategy(10, 3), spec in mixture_strategy()) {
        let doubled: Rows = a.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let spec2 = KernelSpec {
            bandwidths: spec.bandwidths.iter().map(|s| 2.0 * s).collect(),
            ..spec.clone()
        };
        let k1 = gram(&spec, &fm(&a), &fm(&a)).unwrap();
        let k2 = gram(&spec2, &fm(&doubled), &fm(&doubled)).unwrap();
        for (x, y) in k1.values.iter().zip(k2.values.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn median_heuristic_matches_enumeration(a in rows_strategy(12, 2), b in rows_strategy(12, 2)) {
        let pool: Rows = a.iter().chain(&b).cloned().collect();
        prop_assume!(pool.len() >= 2);
        let sigma = median_heuristic(&fm(&a), &fm(&b)).unwrap();
        prop_assert!((sigma - naive_median_sigma(&pool)).abs() < 1e-12 * sigma.max(1.0));
    }
}

#[test]
fn random_gram_matrices_are_psd() {
    let mut r = rng(5);
    let worst = (0..50).map(|case| gram_min_eigenvalue(&mut r, case)).fold(f64::INFINITY, f64::min);
    assert!(worst >= -1e-8, "min eigenvalue {worst}");
}

#[test]
fn median_of_all_equal_points_is_degenerate() {
    let a = fm(&vec![vec![1.0, 2.0]; 4]);
    assert!(matches!(median_heuristic(&a, &a), Err(Error::Degenerate(_))));
}

#[test]
fn median_ignores_duplicate_points() {
    // the two zero distances are dropped, leaving {1, 1, 1, 1, 4, 4, 9, 9}
    let a = fm(&vec![vec![0.0], vec![0.0], vec![1.0], vec![3.0]]);
    let b = fm(&vec![vec![1.0]]);
    let pool = vec![vec![0.0], vec![0.0], vec![1.0], vec![3.0], vec![1.0]];
    let sigma = median_heuristic(&a, &b).unwrap();
    assert!((sigma - naive_median_sigma(&pool)).abs() < 1e-15);
}

#[test]
fn empty_sides_give_empty_gram() {
    let spec = KernelSpec::gaussian(1.0).unwrap();
    let a = fm(&vec![vec![0.0, 1.0]; 3]);
    let e = rkhs_mmd::FeatureMatrix::empty(2).unwrap();
    let k = gram(&spec, &a, &e).unwrap();
    assert_eq!((k.nrows(), k.ncols()), (3, 0));
    assert_eq!(k.sum(), 0.0);
}
