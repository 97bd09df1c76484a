//! Constants of the fixed-point existence theorem and the closed-form steady
//! state of the linear (growth and removal only) model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FlocError, Result};
use crate::rates::ModelRates;
use crate::spectral::Grid;

pub const DEFAULT_THEOREM_SAMPLES: usize = 4096;

/// Evaluated hypotheses and constants of the existence theorem.
///
/// Sup norms are maxima over `n_samples` equispaced points (a tensor grid for
/// the kernel) and are therefore lower bounds of the true suprema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub n_samples: usize,
    /// `k_f / 2 - mu >= 0` at every sample.
    pub c1_holds: bool,
    /// `min (k_f / 2 - mu)` over the samples; positive iff the strict form holds.
    pub c1_min_margin: f64,
    pub inv_g_l1: f64,
    pub ka_sup: f64,
    pub kf_sup: f64,
    pub half_kf_minus_mu_sup: f64,
    /// Infinite when the aggregation kernel vanishes (serialized as `null`).
    pub radius_r: f64,
    pub contraction_c: f64,
    pub maps_into_holds: bool,
    pub theorem_applies: bool,
}

fn samples(xbar: f64, n: usize) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| if i + 1 == n { xbar } else { xbar * i as f64 / (n - 1) as f64 })
}

/// `int_0^xbar 1/g` by adaptive Clenshaw–Curtis quadrature.
pub fn inverse_growth_l1(rates: &ModelRates) -> f64 {
    quadrature::clenshaw_curtis::integrate(|x| 1.0 / rates.g(x).abs(), 0.0, rates.xbar(), 1e-14).integral
}

pub fn check_theorem1(rates: &ModelRates, n_samples: usize) -> Result<TheoremReport> {
    if n_samples < 64 {
        return Err(FlocError::InvalidParameter(format!(
            "theorem check needs at least 64 samples, got {n_samples}"
        )));
    }
    let xbar = rates.xbar();
    let xs = samples(xbar, n_samples);

    let mut kf_sup = 0.0_f64;
    let mut half_sup = 0.0_f64;
    let mut margin = f64::INFINITY;
    for x in xs.clone() {
        let kf = rates.kf(x);
        let h = 0.5 * kf - rates.mu(x);
        kf_sup = kf_sup.max(kf.abs());
        half_sup = half_sup.max(h.abs());
        margin = margin.min(h);
    }

    let mut ka_sup = 0.0_f64;
    for x in xs.clone() {
        for y in xs.clone() {
            if x + y >= xbar {
                break;
            }
            ka_sup = ka_sup.max(rates.ka(x, y).abs());
        }
    }

    let inv_g_l1 = inverse_growth_l1(rates);
    let root_ka = ka_sup.sqrt();
    let radius_r = if ka_sup > 0.0 { 1.0 / (inv_g_l1 * root_ka) } else { f64::INFINITY };
    let contraction_c = inv_g_l1 * (kf_sup + half_sup + 1.5 * root_ka);
    let maps_into_holds = if radius_r.is_finite() {
        1.0 + radius_r * inv_g_l1 * (kf_sup + half_sup + root_ka) <= radius_r
    } else {
        // any sufficiently large radius works iff the linear part alone contracts
        inv_g_l1 * (kf_sup + half_sup) < 1.0
    };
    let c1_holds = margin >= 0.0;

    Ok(TheoremReport {
        n_samples,
        c1_holds,
        c1_min_margin: margin,
        inv_g_l1,
        ka_sup,
        kf_sup,
        half_kf_minus_mu_sup: half_sup,
        radius_r,
        contraction_c,
        maps_into_holds,
        theorem_applies: c1_holds && maps_into_holds && contraction_c < 1.0 && radius_r >= 1.0,
    })
}

/// Steady state of `-(g u)' - mu u = 0` with `g(0) u(0) = 1`:
/// `u(x) = exp(-int_0^x mu/g) / g(x)`.
pub fn linear_exact(rates: &ModelRates, x: f64) -> f64 {
    if let Some((c_g, c_mu)) = rates.descriptor().affine_growth_linear_removal {
        return (-(c_mu / c_g) * (x - x.ln_1p())).exp() / (c_g * (1.0 + x));
    }
    let exponent = if x == 0.0 {
        0.0
    } else {
        quadrature::clenshaw_curtis::integrate(|s| rates.mu(s) / rates.g(s), 0.0, x, 1e-15).integral
    };
    (-exponent).exp() / rates.g(x)
}

pub fn linear_exact_nodes(rates: &ModelRates, grid: &Grid) -> DVector<f64> {
    grid.sample(|x| linear_exact(rates, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{build_rates, ParamSet};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn g100() -> ModelRates {
        ModelRates::custom(1.0, |_| 100.0)
            .unwrap()
            .with_fragmentation(|x| x)
            .with_aggregation(|_, _| 1.0)
    }

    #[test]
    fn constants_for_fast_growth() {
        let r = check_theorem1(&g100(), DEFAULT_THEOREM_SAMPLES).unwrap();
        assert_relative_eq!(r.inv_g_l1, 0.01, max_relative = 1e-14);
        assert_eq!(r.ka_sup, 1.0);
        assert_eq!(r.kf_sup, 1.0);
        assert_eq!(r.half_kf_minus_mu_sup, 0.5);
        assert_relative_eq!(r.contraction_c, 0.03, max_relative = 1e-13);
        assert_relative_eq!(r.radius_r, 100.0, max_relative = 1e-13);
        assert!(r.c1_holds);
        assert_eq!(r.c1_min_margin, 0.0);
        assert!(r.maps_into_holds);
        assert!(r.theorem_applies);
    }

    #[test]
    fn c1_fails_with_constant_removal() {
        let rates = ModelRates::custom(1.0, |_| 1.0)
            .unwrap()
            .with_removal(|_| 1.0)
            .with_fragmentation(|x| x);
        let r = check_theorem1(&rates, 64).unwrap();
        assert!(!r.c1_holds);
        assert_eq!(r.c1_min_margin, -1.0);
        assert!(!r.theorem_applies);
    }

    #[test]
    fn unit_radius() {
        let rates = ModelRates::custom(1.0, |_| 2.0).unwrap().with_aggregation(|_, _| 4.0);
        let r = check_theorem1(&rates, 128).unwrap();
        assert_relative_eq!(r.radius_r, 1.0, max_relative = 1e-14);
        // 1 + 1 * 0.5 * 2 = 2 > 1
        assert!(!r.maps_into_holds);
    }

    #[test]
    fn zero_kernel_gives_unbounded_radius() {
        let rates = ModelRates::custom(1.0, |_| 10.0).unwrap().with_fragmentation(|x| x);
        let r = check_theorem1(&rates, 64).unwrap();
        assert!(r.radius_r.is_infinite());
        assert!(r.maps_into_holds);
        assert!(r.theorem_applies);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"radius_r\":null"));
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(check_theorem1(&g100(), 63).is_err());
    }

    #[test]
    fn growth_scaling_identities() {
        let p = ParamSet { gamma_dot: 3.0, ..ParamSet::default() };
        let base = build_rates(&p).unwrap();
        let lam = 7.0;
        let scaled = base.clone().with_growth(move |x| lam * (x + 1.0));
        let a = check_theorem1(&base, 256).unwrap();
        let b = check_theorem1(&scaled, 256).unwrap();
        assert_relative_eq!(b.inv_g_l1, a.inv_g_l1 / lam, max_relative = 1e-13);
        assert_relative_eq!(b.radius_r, a.radius_r * lam, max_relative = 1e-13);
        assert_relative_eq!(b.contraction_c, a.contraction_c / lam, max_relative = 1e-13);
    }

    #[test]
    fn linear_solution_examples() {
        let unit = ModelRates::custom(1.0, |_| 1.0).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(linear_exact(&unit, x), 1.0);
        }
        let decay = ModelRates::custom(1.0, |_| 2.0).unwrap().with_removal(|_| 2.0);
        for x in [0.0, 0.25, 0.9] {
            assert_relative_eq!(linear_exact(&decay, x), 0.5 * (-x).exp(), max_relative = 1e-13);
        }
        let p = ParamSet { gamma_dot: 0.0, ..ParamSet::default() };
        let rates = build_rates(&p).unwrap();
        assert_abs_diff_eq!(linear_exact(&rates, 1.0), 0.367_879_441_171_442_33, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_matches_quadrature_path() {
        let rates = build_rates(&ParamSet { gamma_dot: 0.4, c_g: 2.5, ..ParamSet::default() }).unwrap();
        let (c_g, c_mu) = rates.descriptor().affine_growth_linear_removal.unwrap();
        let generic = ModelRates::custom(1.0, move |x| c_g * (x + 1.0))
            .unwrap()
            .with_removal(move |x| c_mu * x);
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert_relative_eq!(linear_exact(&rates, x), linear_exact(&generic, x), max_relative = 1e-13);
        }
    }
}
