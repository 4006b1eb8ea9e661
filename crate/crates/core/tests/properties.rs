//! Property-based invariants over randomized inputs.

use kanpca::kan::{KanLayer, LayerMode};
use kanpca::linalg::{covariance, eigh_symmetric, r_squared, JACOBI_TOL};
use kanpca::pipeline::{chronological_split, ReturnPanel};
use kanpca::splines::{spline_value, KnotVector, SplineCoeffs};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_strategy() -> impl Strategy<Value = (KnotVector, f64)> {
    (
        -5.0..0.0_f64,
        0.5..8.0_f64,
        1usize..8,
        1usize..5,
        0.0..1.0_f64,
    )
        .prop_map(|(lo, width, intervals, degree, frac)| {
            let kv = KnotVector::uniform(lo, lo + width, intervals, degree).unwrap();
            let x = lo + width * frac;
            (kv, x)
        })
}

proptest! {
    #[test]
    fn basis_partition_of_unity_and_nonnegativity((kv, x) in grid_strategy()) {
        let b = kv.basis_values(x).unwrap();
        let sum: f64 = b.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum {} at x={}", sum, x);
        prop_assert!(b.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(b.len(), kv.basis_count());
    }

    #[test]
    fn basis_derivatives_sum_to_zero((kv, x) in grid_strategy()) {
        let d = kv.basis_derivatives(x).unwrap();
        let sum: f64 = d.iter().sum();
        let scale: f64 = d.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(sum.abs() / scale < 1e-10, "sum {} at x={}", sum, x);
    }

    #[test]
    fn spline_space_reproduces_affine_functions(
        (kv, x) in grid_strategy(),
        slope in -3.0..3.0_f64,
        intercept in -2.0..2.0_f64,
    ) {
        let coeffs = SplineCoeffs::new(
            kv.greville_abscissae().iter().map(|g| slope * g + intercept).collect(),
        );
        let v = spline_value(&kv, &coeffs, x).unwrap();
        prop_assert!((v - (slope * x + intercept)).abs() < 1e-9, "{} vs {}", v, slope * x + intercept);
    }

    #[test]
    fn affine_layer_superposition(
        seed in 0u64..1000,
        a in -2.0..2.0_f64,
        b in -2.0..2.0_f64,
    ) {
        let knots = KnotVector::uniform(-1.0, 1.0, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = KanLayer::new_affine(4, 3, knots, &mut rng);
        prop_assert_eq!(layer.mode(), LayerMode::Affine);
        let x = Array1::from_shape_fn(4, |i| ((seed as f64 + i as f64) * 0.73).sin());
        let z = Array1::from_shape_fn(4, |i| ((seed as f64 - i as f64) * 1.19).cos());
        let (fx, _) = layer.forward(x.view()).unwrap();
        let (fz, _) = layer.forward(z.view()).unwrap();
        let combo = &x * a + &z * b;
        let (fc, _) = layer.forward(combo.view()).unwrap();
        for j in 0..3 {
            let expect = a * fx[j] + b * fz[j];
            prop_assert!((fc[j] - expect).abs() < 1e-10, "node {}: {} vs {}", j, fc[j], expect);
        }
    }

    #[test]
    fn split_sizes_and_partition(t in 10usize..400) {
        let values = Array2::from_shape_fn((t, 2), |(r, c)| (r * 2 + c) as f64);
        let panel = ReturnPanel {
            dates: (0..t).map(|i| format!("d{:05}", i)).collect(),
            tickers: vec!["A".into(), "B".into()],
            values,
            standardization: None,
        };
        let s = chronological_split(&panel, (0.7, 0.1, 0.2)).unwrap();
        prop_assert_eq!(s.train.n_rows(), (0.7 * t as f64).floor() as usize);
        prop_assert_eq!(s.validation.n_rows(), (0.1 * t as f64).floor() as usize);
        prop_assert_eq!(s.train.n_rows() + s.validation.n_rows() + s.test.n_rows(), t);
        // Concatenation reproduces the original panel, in order.
        let mut rows = Vec::new();
        for p in [&s.train, &s.validation, &s.test] {
            for r in 0..p.n_rows() {
                rows.push(p.values[[r, 0]]);
            }
        }
        let expect: Vec<f64> = (0..t).map(|r| panel.values[[r, 0]]).collect();
        prop_assert_eq!(rows, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_positive_semidefinite(seed in 0u64..500, n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let x = Array2::from_shape_fn((3 * n, n), |_| rng.random_range(-1.0..1.0_f64));
        let cov = covariance(x.view()).unwrap();
        let eig = eigh_symmetric(cov.values.view(), JACOBI_TOL).unwrap();
        let trace: f64 = (0..n).map(|i| cov.values[[i, i]]).sum();
        let min = eig.eigenvalues[n - 1];
        prop_assert!(min >= -1e-10 * trace.max(1.0), "min eigenvalue {}", min);
    }

    #[test]
    fn r_squared_never_exceeds_one(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let x = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0_f64));
        let xh = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0_f64));
        let r2 = r_squared(x.view(), xh.view()).unwrap();
        prop_assert!(r2 <= 1.0 + 1e-12);
        prop_assert!((r_squared(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-15);
    }
}
