//! Brute-force reference discretizations on a uniform fine grid.

#![allow(dead_code)]

use floc_steady::rates::ModelRates;

pub const FINE_POINTS: usize = 10_000;

/// Composite trapezoid rule with `FINE_POINTS` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    trapezoid_with(f, a, b, FINE_POINTS)
}

pub fn trapezoid_with(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / points as f64;
    let inner: f64 = (1..points).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

/// `-(g u)'(x) - mu(x) u(x)`, derivative by central differences (one-sided at the ends).
pub fn growth_removal(rates: &ModelRates, u: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let h = rates.xbar() / FINE_POINTS as f64;
    let gu = |s: f64| rates.g(s) * u(s);
    let d = if x - h < 0.0 {
        (-3.0 * gu(x) + 4.0 * gu(x + h) - gu(x + 2.0 * h)) / (2.0 * h)
    } else if x + h > rates.xbar() {
        (3.0 * gu(x) - 4.0 * gu(x - h) + gu(x - 2.0 * h)) / (2.0 * h)
    } else {
        (gu(x + h) - gu(x - h)) / (2.0 * h)
    };
    -d - rates.mu(x) * u(x)
}

/// Gain and loss of the aggregation operator. For `x < xbar` every pair in the
/// gain integral lies strictly inside the kernel's support; at `x = xbar` the
/// untruncated expression yields the limit from the left.
pub fn aggregation(rates: &ModelRates, u: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    aggregation_with(rates, u, x, FINE_POINTS)
}

/// As [`aggregation`] on `points` intervals. The kernel has cube-root endpoint
/// behaviour, so the trapezoid error decays only like `points^(-4/3)`.
pub fn aggregation_with(rates: &ModelRates, u: &dyn Fn(f64) -> f64, x: f64, points: usize) -> f64 {
    let gain = 0.5 * trapezoid_with(|y| rates.ka_interior(x - y, y) * u(x - y) * u(y), 0.0, x, points);
    let loss = u(x) * trapezoid_with(|y| rates.ka_interior(x, y) * u(y), 0.0, rates.xbar() - x, points);
    gain - loss
}

pub fn breakage(rates: &ModelRates, u: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let gain = trapezoid(|y| rates.gamma_density(x, y) * rates.kf(y) * u(y), x, rates.xbar());
    gain - 0.5 * rates.kf(x) * u(x)
}
