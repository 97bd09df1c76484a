//! Model rate functions.
//!
//! A [`ModelRates`] bundles the six size-dependent rates of the flocculation
//! equation: growth `g`, removal `mu`, aggregation kernel `k_a`, fragmentation
//! kernel `k_f`, post-fragmentation density `Gamma(x; y)` and the renewal shape
//! `q`. [`build_rates`] produces the orthokinetic / power-law family driven by
//! a shear rate; arbitrary closures can be swapped in with the `with_*` methods.
//!
//! The aggregation kernel is stored as its interior expression and truncated
//! on access: [`ModelRates::ka`] returns zero whenever `x + y >= xbar`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FlocError, Result};

pub type Rate = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Kernel = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Orthokinetic prefactor in `k_a = 1.3 * shear * (x^(1/3) + y^(1/3))^3`.
pub const ORTHOKINETIC_PREFACTOR: f64 = 1.3;

/// How the removal coefficient `C_mu` depends on the shear rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalConvention {
    /// `C_mu = exp(-shear)`
    #[default]
    ExpDecay,
    /// `C_mu = 1 / shear`
    Reciprocal,
}

impl std::str::FromStr for RemovalConvention {
    type Err = FlocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_decay" => Ok(Self::ExpDecay),
            "reciprocal" => Ok(Self::Reciprocal),
            other => Err(FlocError::InvalidParameter(format!(
                "unknown removal convention '{other}' (expected exp_decay or reciprocal)"
            ))),
        }
    }
}

/// Removal coefficient `C_mu` for a given shear rate.
pub fn removal_coefficient(gamma_dot: f64, convention: RemovalConvention) -> Result<f64> {
    if !gamma_dot.is_finite() || gamma_dot < 0.0 {
        return Err(FlocError::InvalidParameter(format!(
            "shear rate must be finite and non-negative, got {gamma_dot}"
        )));
    }
    match convention {
        RemovalConvention::ExpDecay => Ok((-gamma_dot).exp()),
        RemovalConvention::Reciprocal if gamma_dot == 0.0 => Err(FlocError::InvalidParameter(
            "reciprocal removal convention requires a positive shear rate".into(),
        )),
        RemovalConvention::Reciprocal => Ok(1.0 / gamma_dot),
    }
}

fn default_gamma_dot() -> f64 {
    1.0
}
fn default_nu() -> f64 {
    1e-6
}
fn default_a() -> f64 {
    7e-4
}
fn default_b() -> f64 {
    1.6
}
fn default_c_g() -> f64 {
    1.0
}
fn default_xbar() -> f64 {
    1.0
}

/// Physical parameters of the shear-driven kernel family.
///
/// Loadable from JSON with keys `gamma_dot`, `nu`, `a`, `b`, `c_g`,
/// `c_mu_convention` and `xbar`; missing keys take their default values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSet {
    /// Shear rate (1/s).
    #[serde(default = "default_gamma_dot")]
    pub gamma_dot: f64,
    /// Kinematic viscosity (m^2/s). Carried for provenance; the kernels only
    /// see it through the shear rate.
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Fragmentation fit coefficient.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Fragmentation fit exponent.
    #[serde(default = "default_b")]
    pub b: f64,
    /// Growth coefficient.
    #[serde(default = "default_c_g")]
    pub c_g: f64,
    #[serde(default)]
    pub c_mu_convention: RemovalConvention,
    /// Maximal floc size.
    #[serde(default = "default_xbar")]
    pub xbar: f64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self {
            gamma_dot: default_gamma_dot(),
            nu: default_nu(),
            a: default_a(),
            b: default_b(),
            c_g: default_c_g(),
            c_mu_convention: RemovalConvention::default(),
            xbar: default_xbar(),
        }
    }
}

impl ParamSet {
    pub fn with_shear(mut self, gamma_dot: f64) -> Self {
        self.gamma_dot = gamma_dot;
        self
    }

    pub fn with_growth(mut self, c_g: f64) -> Self {
        self.c_g = c_g;
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let params: ParamSet = serde_json::from_str(s)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Removal coefficient under the configured convention.
    pub fn c_mu(&self) -> Result<f64> {
        removal_coefficient(self.gamma_dot, self.c_mu_convention)
    }

    /// Breakage rate coefficient `C_f = a * shear^b`.
    pub fn c_f(&self) -> f64 {
        self.a * self.gamma_dot.powf(self.b)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(FlocError::InvalidParameter(format!("{what} = {v} is out of range")))
        };
        let fields = [
            ("gamma_dot", self.gamma_dot),
            ("nu", self.nu),
            ("a", self.a),
            ("b", self.b),
            ("c_g", self.c_g),
            ("xbar", self.xbar),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return bad(name, v);
            }
        }
        if self.gamma_dot < 0.0 {
            return bad("gamma_dot", self.gamma_dot);
        }
        if self.nu <= 0.0 {
            return bad("nu", self.nu);
        }
        if self.a < 0.0 {
            return bad("a", self.a);
        }
        if self.c_g <= 0.0 {
            return bad("c_g", self.c_g);
        }
        if self.xbar <= 0.0 {
            return bad("xbar", self.xbar);
        }
        let c_mu = self.c_mu()?;
        if c_mu < 0.0 {
            return bad("c_mu", c_mu);
        }
        Ok(())
    }
}

/// Serializable description of where a [`ModelRates`] came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDescriptor {
    pub label: String,
    pub params: Option<ParamSet>,
    /// `(c_g, c_mu)` when growth is `c_g (x + 1)` and removal is `c_mu x`,
    /// which admits a closed-form linear steady state.
    pub affine_growth_linear_removal: Option<(f64, f64)>,
    pub aggregation: bool,
    pub fragmentation: bool,
}

/// The six rate functions plus the domain endpoint.
#[derive(Clone)]
pub struct ModelRates {
    growth: Rate,
    removal: Rate,
    aggregation: Kernel,
    fragmentation: Rate,
    post_fragmentation: Kernel,
    renewal_shape: Rate,
    xbar: f64,
    descriptor: RateDescriptor,
}

impl fmt::Debug for ModelRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRates")
            .field("xbar", &self.xbar)
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

/// Beta(2,2) daughter distribution `6 x (y - x) / y^3` on `[0, y]`.
pub fn beta22_density(x: f64, y: f64) -> f64 {
    if y <= 0.0 || x < 0.0 || x > y {
        0.0
    } else {
        6.0 * x * (y - x) / (y * y * y)
    }
}

/// Surface-area renewal shape `x^(2/3)`.
pub fn surface_area_shape(x: f64) -> f64 {
    let c = x.cbrt();
    c * c
}

impl ModelRates {
    /// Rates with the given growth function and everything else switched off,
    /// except the Beta(2,2) daughter density and the surface-area renewal shape.
    pub fn custom(xbar: f64, growth: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(xbar.is_finite() && xbar > 0.0) {
            return Err(FlocError::InvalidParameter(format!("xbar = {xbar} must be positive")));
        }
        Ok(Self {
            growth: Arc::new(growth),
            removal: Arc::new(|_| 0.0),
            aggregation: Arc::new(|_, _| 0.0),
            fragmentation: Arc::new(|_| 0.0),
            post_fragmentation: Arc::new(beta22_density),
            renewal_shape: Arc::new(surface_area_shape),
            xbar,
            descriptor: RateDescriptor {
                label: "custom".into(),
                params: None,
                affine_growth_linear_removal: None,
                aggregation: false,
                fragmentation: false,
            },
        })
    }

    pub fn with_growth(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.growth = Arc::new(f);
        self.descriptor.affine_growth_linear_removal = None;
        self.mark_custom();
        self
    }

    pub fn with_removal(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.removal = Arc::new(f);
        self.descriptor.affine_growth_linear_removal = None;
        self.mark_custom();
        self
    }

    /// Sets the aggregation kernel on the open triangle `x + y < xbar`.
    /// Truncation outside it is applied by [`ModelRates::ka`].
    pub fn with_aggregation(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.aggregation = Arc::new(f);
        self.descriptor.aggregation = true;
        self.mark_custom();
        self
    }

    pub fn with_fragmentation(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.fragmentation = Arc::new(f);
        self.descriptor.fragmentation = true;
        self.mark_custom();
        self
    }

    pub fn with_post_fragmentation(
        mut self,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.post_fragmentation = Arc::new(f);
        self.mark_custom();
        self
    }

    pub fn with_renewal_shape(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.renewal_shape = Arc::new(f);
        self.mark_custom();
        self
    }

    /// Drops aggregation, leaving the other rates untouched.
    pub fn without_aggregation(mut self) -> Self {
        self.aggregation = Arc::new(|_, _| 0.0);
        self.descriptor.aggregation = false;
        self
    }

    /// Drops fragmentation, leaving the other rates untouched.
    pub fn without_fragmentation(mut self) -> Self {
        self.fragmentation = Arc::new(|_| 0.0);
        self.descriptor.fragmentation = false;
        self
    }

    /// Growth and removal only: the linear size-structured model.
    pub fn linear_part(self) -> Self {
        self.without_aggregation().without_fragmentation()
    }

    fn mark_custom(&mut self) {
        if !self.descriptor.label.ends_with("(modified)") && self.descriptor.label != "custom" {
            self.descriptor.label.push_str(" (modified)");
        }
    }

    pub fn xbar(&self) -> f64 {
        self.xbar
    }

    pub fn descriptor(&self) -> &RateDescriptor {
        &self.descriptor
    }

    pub fn g(&self, x: f64) -> f64 {
        (self.growth)(x)
    }

    pub fn mu(&self, x: f64) -> f64 {
        (self.removal)(x)
    }

    /// Aggregation kernel, zero whenever `x + y >= xbar`.
    pub fn ka(&self, x: f64, y: f64) -> f64 {
        if x + y >= self.xbar {
            0.0
        } else {
            (self.aggregation)(x, y)
        }
    }

    /// The kernel expression without truncation. Used by the discretization to
    /// take one-sided limits on the truncation line `x + y = xbar`.
    pub fn ka_interior(&self, x: f64, y: f64) -> f64 {
        (self.aggregation)(x, y)
    }

    pub fn kf(&self, x: f64) -> f64 {
        (self.fragmentation)(x)
    }

    /// Probability density of a daughter of size `x` from a parent of size `y`.
    pub fn gamma_density(&self, x: f64, y: f64) -> f64 {
        (self.post_fragmentation)(x, y)
    }

    pub fn q_shape(&self, x: f64) -> f64 {
        (self.renewal_shape)(x)
    }
}

/// Shear-driven rates: orthokinetic aggregation, power-law fragmentation,
/// Beta(2,2) daughters, linear removal, surface-area renewal and affine growth.
pub fn build_rates(params: &ParamSet) -> Result<ModelRates> {
    params.validate()?;
    let shear = params.gamma_dot;
    let c_f = params.c_f();
    let c_mu = params.c_mu()?;
    let c_g = params.c_g;

    Ok(ModelRates {
        growth: Arc::new(move |x| c_g * (x + 1.0)),
        removal: Arc::new(move |x| c_mu * x),
        aggregation: Arc::new(move |x, y| {
            let s = x.cbrt() + y.cbrt();
            ORTHOKINETIC_PREFACTOR * shear * s * s * s
        }),
        fragmentation: Arc::new(move |x| c_f * x.cbrt()),
        post_fragmentation: Arc::new(beta22_density),
        renewal_shape: Arc::new(surface_area_shape),
        xbar: params.xbar,
        descriptor: RateDescriptor {
            label: "orthokinetic".into(),
            params: Some(*params),
            affine_growth_linear_removal: Some((c_g, c_mu)),
            aggregation: true,
            fragmentation: true,
        },
    })
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// Largest observed violation (zero when the check holds exactly).
    pub worst_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub tol: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rate validation ({} samples, tol {:e})", self.n_samples, self.tol)?;
        for c in &self.checks {
            writeln!(
                f,
                "  [{}] {:<19} {:<58} worst violation {:.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.description,
                c.worst_violation
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Samples every standing assumption on the rates. Violations are reported,
/// never raised.
pub fn validate_rates(rates: &ModelRates, n_samples: usize, tol: f64) -> Result<ValidationReport> {
    if n_samples < 2 {
        return Err(FlocError::InvalidParameter("validation needs at least 2 samples".into()));
    }
    let xbar = rates.xbar;
    let xs: Vec<f64> = (0..n_samples)
        .map(|i| xbar * i as f64 / (n_samples - 1) as f64)
        .collect();

    let mut checks = Vec::new();
    let mut push = |name, description, violation: f64, passed: bool| {
        checks.push(AssumptionCheck { name, description, passed, worst_violation: violation });
    };

    // A1: strictly positive growth.
    let g_min = xs.iter().map(|&x| rates.g(x)).fold(f64::INFINITY, f64::min);
    push(
        "A1",
        "g(x) > 0 on [0, xbar]",
        if g_min > 0.0 { 0.0 } else { -g_min },
        g_min > 0.0,
    );

    // A2: symmetry, truncation, boundedness on a tensor grid.
    let mut asym = 0.0f64;
    let mut trunc = 0.0f64;
    let mut finite = true;
    for &x in &xs {
        for &y in &xs {
            let kxy = rates.ka(x, y);
            let kyx = rates.ka(y, x);
            finite &= kxy.is_finite();
            asym = asym.max((kxy - kyx).abs());
            if x + y >= xbar {
                trunc = trunc.max(kxy.abs());
            }
        }
    }
    push("A2-symmetry", "k_a(x, y) = k_a(y, x)", asym, finite && asym <= tol);
    push("A2-truncation", "k_a(x, y) = 0 for x + y >= xbar", trunc, trunc <= tol);

    let min_over = |f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| f(x)).fold(f64::INFINITY, f64::min);

    let mu_min = min_over(&|x| rates.mu(x));
    push("A3", "mu(x) >= 0", (-mu_min).max(0.0), mu_min >= -tol);

    let q_min = min_over(&|x| rates.q_shape(x));
    push("A4", "q(x) >= 0", (-q_min).max(0.0), q_min >= -tol);

    let kf_min = min_over(&|x| rates.kf(x));
    let kf0 = rates.kf(0.0).abs();
    push(
        "A5",
        "k_f(x) >= 0 and k_f(0) = 0",
        (-kf_min).max(0.0).max(kf0),
        kf_min >= -tol && kf0 <= tol,
    );

    // A6: sign and support of the daughter density.
    let mut neg = 0.0f64;
    let mut outside = 0.0f64;
    for &y in xs.iter().skip(1) {
        for &x in &xs {
            let v = rates.gamma_density(x, y);
            if x <= y {
                neg = neg.max(-v);
            } else {
                outside = outside.max(v.abs());
            }
        }
    }
    push(
        "A6",
        "Gamma(x; y) >= 0 on (0, y], zero for x > y",
        neg.max(outside),
        neg <= tol && outside <= tol,
    );

    let mut norm_err = 0.0f64;
    for &y in xs.iter().skip(1) {
        let mass = quadrature::integrate(|x| rates.gamma_density(x, y), 0.0, y, 1e-14).integral;
        norm_err = norm_err.max((mass - 1.0).abs());
    }
    push(
        "Gamma-normalization",
        "integral of Gamma(x; y) over [0, y] equals 1",
        norm_err,
        norm_err <= tol,
    );

    Ok(ValidationReport { n_samples, tol, checks })
}
