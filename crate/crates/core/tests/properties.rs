use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spectral_denoise::applications::{snr_gain_tau, Covariance, NoiseCovariances};
use spectral_denoise::denoise::{amse_estimate, optimal_b};
use spectral_denoise::geometry::recover_population_geometry;
use spectral_denoise::spiked::{cosines, forward_singular_value, invert_singular_value, naive_rank};
use spectral_denoise::{AspectRatio, SpikeParams, WeightedGeometry};

proptest! {
    #[test]
    fn singular_value_roundtrip(g in 0.05f64..8.0, excess in 1e-3f64..50.0) {
        let gamma = AspectRatio::new(g).unwrap();
        let t = gamma.population_threshold() + excess;
        let lambda = forward_singular_value(t, gamma).unwrap();
        prop_assert!(lambda > gamma.bulk_edge());
        let back = invert_singular_value(lambda, gamma).unwrap();
        prop_assert!((back - t).abs() <= 1e-10 * t);
    }

    #[test]
    fn cosines_are_unit(g in 0.05f64..8.0, excess in 1e-3f64..50.0) {
        let gamma = AspectRatio::new(g).unwrap();
        let c = cosines(gamma.population_threshold() + excess, gamma).unwrap();
        prop_assert!((c.c * c.c + c.s * c.s - 1.0).abs() <= 1e-14);
        prop_assert!((c.c_tilde * c.c_tilde + c.s_tilde * c.s_tilde - 1.0).abs() <= 1e-14);
        prop_assert!(c.c > 0.0 && c.c < 1.0);
    }

    #[test]
    fn naive_rank_counts_values_above_edge(values in proptest::collection::vec(0.0f64..4.0, 1..20)) {
        let gamma = AspectRatio::new(0.5).unwrap();
        let mut v = values;
        v.sort_by(|a, b| b.total_cmp(a));
        let r = naive_rank(&v, gamma, 0.0).unwrap();
        prop_assert_eq!(r, v.iter().filter(|x| **x > gamma.bulk_edge()).count());
    }

    #[test]
    fn tau_at_least_one(s in proptest::collection::vec(0.05f64..10.0, 1..15), t in proptest::collection::vec(0.05f64..10.0, 1..15)) {
        let cov = NoiseCovariances::new(Covariance::Diagonal(s), Covariance::Diagonal(t)).unwrap();
        prop_assert!(snr_gain_tau(&cov) >= 1.0 - 1e-12);
    }

    #[test]
    fn optimal_b_beats_perturbations(
        g in 0.1f64..3.0,
        e in proptest::collection::vec(0.2f64..2.0, 4),
        mu in 0.3f64..2.0,
        nu in 0.3f64..2.0,
        dir in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let gamma = AspectRatio::new(g).unwrap();
        let th = gamma.population_threshold();
        let sp = SpikeParams::from_population(&[th + 2.0, th + 0.8], gamma).unwrap();
        let pop = |a: f64, b: f64| DMatrix::from_row_slice(2, 2, &[a, 0.3 * (a * b).sqrt(), 0.3 * (a * b).sqrt(), b]);
        let (d, dt) = WeightedGeometry::predict_empirical(&pop(e[0], e[1]), &pop(e[2], e[3]), &sp, mu, nu);
        let geo = recover_population_geometry(&d, &dt, &sp, mu, nu).unwrap();
        let b = optimal_b(&geo);
        let t = DMatrix::from_diagonal(&DVector::from_column_slice(&geo.t));
        let m = &geo.c * t * geo.c_tilde.transpose();
        let obj = |b: &DMatrix<f64>| (&geo.d * b * &geo.d_tilde).dot(b) - 2.0 * m.dot(b);
        let delta = DMatrix::from_column_slice(2, 2, &dir) * 1e-2;
        prop_assert!(obj(&(&b + delta)) >= obj(&b) - 1e-12);
        prop_assert!(amse_estimate(&geo).0 >= 0.0);
    }
}
