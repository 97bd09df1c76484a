use floc_steady::rates::{build_rates, validate_rates, ParamSet, RemovalConvention};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ParamSet> {
    (0.0f64..100.0, 0.1f64..10.0, 1e-5f64..1e-2, 0.5f64..2.5, prop::bool::ANY).prop_map(
        |(gamma_dot, c_g, a, b, reciprocal)| ParamSet {
            gamma_dot: if reciprocal { gamma_dot.max(1e-3) } else { gamma_dot },
            c_g,
            a,
            b,
            c_mu_convention: if reciprocal {
                RemovalConvention::Reciprocal
            } else {
                RemovalConvention::ExpDecay
            },
            ..ParamSet::default()
        },
    )
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_truncated(p in params(), x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let r = build_rates(&p).unwrap();
        prop_assert_eq!(r.ka(x, y), r.ka(y, x));
        if x + y >= 1.0 {
            prop_assert_eq!(r.ka(x, y), 0.0);
        } else {
            prop_assert!(r.ka(x, y) >= 0.0);
        }
    }

    #[test]
    fn pointwise_rate_bounds(p in params(), x in 0.0f64..=1.0) {
        let r = build_rates(&p).unwrap();
        prop_assert_eq!(r.kf(0.0), 0.0);
        prop_assert!(r.g(x) >= p.c_g);
        prop_assert!(r.mu(x) >= 0.0);
        prop_assert!(r.kf(x) >= 0.0);
        prop_assert!(r.q_shape(x) >= 0.0);
    }

    #[test]
    fn daughter_density_is_normalized_with_mean_half_parent(y in 1e-3f64..=1.0) {
        let r = build_rates(&ParamSet::default()).unwrap();
        let mass = quadrature::clenshaw_curtis::integrate(|x| r.gamma_density(x, y), 0.0, y, 1e-15).integral;
        let mean = quadrature::clenshaw_curtis::integrate(|x| x * r.gamma_density(x, y), 0.0, y, 1e-15).integral;
        prop_assert!((mass - 1.0).abs() <= 1e-12);
        prop_assert!((mean - 0.5 * y).abs() <= 1e-10);
    }

    #[test]
    fn every_valid_parameter_set_passes_validation(p in params()) {
        let r = build_rates(&p).unwrap();
        let report = validate_rates(&r, 64, 1e-12).unwrap();
        prop_assert!(report.passed(), "{}", report);
    }
}
