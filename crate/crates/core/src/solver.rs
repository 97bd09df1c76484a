//! Steady-state solvers: damped Newton on the collocation residual, Picard
//! iteration on the integrated fixed-point map, and an explicit time stepper
//! used to check that computed steady states are equilibria of the flow.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_aggregation, apply_breakage, jacobian, jacobian_fd, rate_of_change, residual, Boundary,
    DiscreteModel,
};
use crate::error::{FlocError, Result};
use crate::theory::linear_exact_nodes;

/// Densities below this are treated as genuinely negative rather than round-off.
pub const NEGATIVITY_FLOOR: f64 = -1e-10;

/// Picard iterations used to warm-start Newton after a failed attempt.
pub const PICARD_WARM_START: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianKind {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Picard,
}

/// Why an iteration stopped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    #[default]
    MaxIterations,
    SingularJacobian,
    /// No step length down to the minimum reduced the residual.
    LineSearchFailed,
    NegativeDensity,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Newton step length; halved until the residual decreases.
    pub damping: f64,
    pub jacobian: JacobianKind,
    pub boundary: Boundary,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::newton()
    }
}

impl SolverConfig {
    pub fn newton() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
            damping: 1.0,
            jacobian: JacobianKind::Analytic,
            boundary: Boundary::Ivp,
        }
    }

    pub fn picard() -> Self {
        Self { max_iter: 10_000, ..Self::newton() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(FlocError::InvalidParameter(format!("tol = {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(FlocError::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(FlocError::InvalidParameter(format!(
                "damping = {} must lie in (0, 1]",
                self.damping
            )));
        }
        if let Boundary::Bvp { c_q } = self.boundary {
            if !(c_q > 0.0 && c_q.is_finite()) {
                return Err(FlocError::InvalidParameter(format!("C_q = {c_q} must be positive")));
            }
        }
        Ok(())
    }
}

/// A computed stationary density with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub n: usize,
    pub xbar: f64,
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
    /// Renewal constant: the supplied one in bvp mode, the normalizing one
    /// otherwise. `None` when it is undefined.
    pub c_q: Option<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
    #[serde(skip)]
    pub termination: Termination,
    /// Residual sup-norm before the first and after every iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl SteadyState {
    pub fn u_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn sup(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn residual_norm(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> f64 {
    match residual(model, u, boundary) {
        Ok(r) => {
            let s = sup(&r);
            if s.is_finite() { s } else { f64::INFINITY }
        }
        Err(_) => f64::INFINITY,
    }
}

fn check_init(model: &DiscreteModel, init: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    match init {
        Some(u) if u.len() != model.len() => {
            Err(FlocError::DimensionMismatch { expected: model.len(), got: u.len() })
        }
        Some(u) if u.iter().any(|v| !v.is_finite()) => Err(FlocError::NonFinite),
        Some(u) => Ok(u.clone()),
        None => Ok(linear_exact_nodes(model.rates(), model.grid())),
    }
}

struct NewtonRun {
    u: DVector<f64>,
    norm: f64,
    iterations: usize,
    termination: Termination,
    history: Vec<f64>,
}

fn newton_iterate(
    model: &DiscreteModel,
    config: &SolverConfig,
    mut u: DVector<f64>,
    max_iter: usize,
) -> Result<NewtonRun> {
    let boundary = config.boundary;
    let mut norm = residual_norm(model, &u, boundary);
    let mut history = vec![norm];
    if !norm.is_finite() {
        return Ok(NewtonRun { u, norm, iterations: 0, termination: Termination::NonFinite, history });
    }
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    while iterations < max_iter {
        if norm <= config.tol {
            termination = Termination::Converged;
            break;
        }
        let r = residual(model, &u, boundary)?;
        let jac = match config.jacobian {
            JacobianKind::Analytic => jacobian(model, &u, boundary),
            JacobianKind::FiniteDifference => jacobian_fd(model, &u, boundary)?,
        };
        let Some(delta) = solve_linear(jac, -r) else {
            termination = Termination::SingularJacobian;
            break;
        };
        iterations += 1;

        let mut step = config.damping;
        let mut accepted = None;
        while step >= 1e-10 {
            let trial = &u + step * &delta;
            let trial_norm = residual_norm(model, &trial, boundary);
            if trial_norm < norm {
                accepted = Some((trial, trial_norm));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, trial_norm)) => {
                u = trial;
                norm = trial_norm;
                history.push(norm);
            }
            None => {
                termination = Termination::LineSearchFailed;
                break;
            }
        }
    }
    if termination == Termination::MaxIterations && norm <= config.tol {
        termination = Termination::Converged;
    }
    Ok(NewtonRun { u, norm, iterations, termination, history })
}

fn solve_linear(jac: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let lu = jac.lu();
    let delta = lu.solve(&rhs)?;
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

fn renewal_constant(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> Option<f64> {
    match boundary {
        Boundary::Bvp { c_q } => Some(c_q),
        Boundary::Ivp => {
            let denom = model.renewal_weights().dot(u);
            let c = model.g_nodes[0] * u[0] / denom;
            (c.is_finite() && denom != 0.0).then_some(c)
        }
    }
}

fn finish(
    model: &DiscreteModel,
    u: DVector<f64>,
    residual_norm: f64,
    iterations: usize,
    method: Method,
    mut termination: Termination,
    history: Vec<f64>,
    boundary: Boundary,
) -> SteadyState {
    if termination == Termination::Converged && u.min() < NEGATIVITY_FLOOR {
        termination = Termination::NegativeDensity;
    }
    let grid = model.grid();
    SteadyState {
        n: grid.degree(),
        xbar: grid.xbar(),
        nodes: grid.nodes().to_vec(),
        c_q: renewal_constant(model, &u, boundary),
        u: u.as_slice().to_vec(),
        residual_norm,
        iterations,
        method,
        converged: termination == Termination::Converged,
        termination,
        history,
    }
}

/// Damped Newton iteration on [`residual`].
///
/// Starts from `init`, or from the linear steady state at the nodes. If the
/// first attempt fails in ivp mode, Newton is restarted from
/// [`PICARD_WARM_START`] Picard iterates; the iteration count covers all work.
pub fn solve_newton(
    model: &DiscreteModel,
    config: &SolverConfig,
    init: Option<&DVector<f64>>,
) -> Result<SteadyState> {
    config.validate()?;
    let u0 = check_init(model, init)?;
    let mut run = newton_iterate(model, config, u0, config.max_iter)?;

    if run.termination != Termination::Converged
        && config.boundary == Boundary::Ivp
        && run.iterations < config.max_iter
    {
        let warm = picard_iterate(model, config.tol, PICARD_WARM_START);
        if warm.f.iter().all(|v| v.is_finite()) {
            let u = warm.f.component_div(&model.g_nodes);
            let budget = config.max_iter - run.iterations;
            let retry = newton_iterate(model, config, u, budget)?;
            let mut history = run.history;
            history.extend(retry.history);
            run = NewtonRun {
                iterations: run.iterations + warm.iterations + retry.iterations,
                history,
                ..retry
            };
        }
    }

    Ok(finish(
        model,
        run.u,
        run.norm,
        run.iterations,
        Method::Newton,
        run.termination,
        run.history,
        config.boundary,
    ))
}

/// One application of the discrete fixed-point map
/// `f -> 1 + Q (A(u) + B(u) - mu u)` with `u = f / g`.
pub fn picard_map(model: &DiscreteModel, f: &DVector<f64>) -> DVector<f64> {
    let u = f.component_div(&model.g_nodes);
    let source =
        apply_aggregation(model, &u) + apply_breakage(model, &u) - model.mu_nodes.component_mul(&u);
    let mut out = &model.ops().cumulative * source;
    out.add_scalar_mut(1.0);
    out
}

struct PicardRun {
    f: DVector<f64>,
    step: f64,
    iterations: usize,
    termination: Termination,
    history: Vec<f64>,
}

fn picard_iterate(model: &DiscreteModel, tol: f64, max_iter: usize) -> PicardRun {
    let mut f = DVector::from_element(model.len(), 1.0);
    let mut step = f64::INFINITY;
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = picard_map(model, &f);
        iterations += 1;
        step = sup(&(&next - &f));
        f = next;
        history.push(step);
        if !step.is_finite() {
            termination = Termination::NonFinite;
            break;
        }
        if step <= tol {
            termination = Termination::Converged;
            break;
        }
    }
    PicardRun { f, step, iterations, termination, history }
}

/// Fixed-point iteration from `f = 1`, stopped when successive iterates differ
/// by at most `tol` in the sup norm. The reported `residual_norm` is that last
/// difference, `|Phi[f] - f|`.
///
/// The map builds in the normalization `g(0) u(0) = 1`, so only the ivp
/// boundary is accepted.
pub fn solve_picard(model: &DiscreteModel, config: &SolverConfig) -> Result<SteadyState> {
    config.validate()?;
    if config.boundary != Boundary::Ivp {
        return Err(FlocError::InvalidParameter(
            "fixed-point iteration supports only the ivp normalization".into(),
        ));
    }
    let run = picard_iterate(model, config.tol, config.max_iter);
    let u = run.f.component_div(&model.g_nodes);
    Ok(finish(
        model,
        u,
        run.step,
        run.iterations,
        Method::Picard,
        run.termination,
        run.history,
        Boundary::Ivp,
    ))
}

/// `C_q = g(0) u_0 / sum_j w_j q(x_j) u_j` at a computed state.
pub fn compute_cq(state: &SteadyState, model: &DiscreteModel) -> Result<f64> {
    if state.u.len() != model.len() {
        return Err(FlocError::DimensionMismatch { expected: model.len(), got: state.u.len() });
    }
    let u = state.u_vector();
    let denom = model.renewal_weights().dot(&u);
    if denom == 0.0 || !denom.is_finite() {
        return Err(FlocError::DegenerateRenewal);
    }
    Ok(model.g_nodes[0] * u[0] / denom)
}

fn enforce_boundary(model: &DiscreteModel, u: &mut DVector<f64>, boundary: Boundary) {
    match boundary {
        Boundary::Ivp => u[0] = 1.0 / model.g_nodes[0],
        Boundary::Bvp { c_q } => {
            let rw = model.renewal_weights();
            let rest: f64 = (1..u.len()).map(|j| rw[j] * u[j]).sum();
            u[0] = c_q * rest / (model.g_nodes[0] - c_q * rw[0]);
        }
    }
}

/// Classical RK4 for `du/dt = G(u) + A(u) + B(u)` on rows `1..=n`, with row 0
/// set from the boundary condition after every stage. The last step is
/// shortened to land on `t_end`.
pub fn evolve(
    model: &DiscreteModel,
    u0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    boundary: Boundary,
) -> Result<DVector<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlocError::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    if !(t_end >= dt && t_end.is_finite()) {
        return Err(FlocError::InvalidParameter(format!(
            "t_end = {t_end} must be at least dt = {dt}"
        )));
    }
    if u0.len() != model.len() {
        return Err(FlocError::DimensionMismatch { expected: model.len(), got: u0.len() });
    }

    let rhs = |u: &DVector<f64>| {
        let mut k = rate_of_change(model, u);
        k[0] = 0.0;
        k
    };
    let stage = |u: &DVector<f64>, k: &DVector<f64>, h: f64| {
        let mut y = u + h * k;
        enforce_boundary(model, &mut y, boundary);
        y
    };

    let mut u = u0.clone();
    enforce_boundary(model, &mut u, boundary);
    let mut t = 0.0;
    let steps = (t_end / dt).round().max(1.0) as usize;
    for i in 0..steps {
        let h = if i + 1 == steps { t_end - t } else { dt };
        let k1 = rhs(&u);
        let k2 = rhs(&stage(&u, &k1, 0.5 * h));
        let k3 = rhs(&stage(&u, &k2, 0.5 * h));
        let k4 = rhs(&stage(&u, &k3, h));
        u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        enforce_boundary(model, &mut u, boundary);
        t += h;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FlocError::BlowUp { time: t });
        }
    }
    Ok(u)
}
