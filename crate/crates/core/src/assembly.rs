//! Discrete growth, aggregation and breakage operators at the collocation
//! nodes, and the steady-state residual built from them.
//!
//! Two quadrature schemes are available for the integral terms:
//!
//! * [`Scheme::Mapped`] (default): every sub-interval integral (`[0, x_k]` for
//!   the aggregation gain, `[0, xbar - x_k]` for the loss, `[x_k, xbar]` for
//!   breakage) gets its own Clenshaw–Curtis rule through the endpoint
//!   flattening map of [`SubintervalRule`](crate::spectral::SubintervalRule).
//!   Integrands are never cut off inside a rule, so the truncation line of
//!   the aggregation kernel and the support edge of `Gamma` cost no accuracy.
//! * [`Scheme::Nodal`]: integrands are sampled on the collocation nodes only.
//!   The gain uses the cumulative matrix and the `Phi` tensor, the loss the
//!   full weights with the truncated kernel, breakage `w - Q[k]`. Integrands
//!   that are cut off inside `[0, xbar]` make this first order in `1/n`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FlocError, Result};
use crate::rates::ModelRates;
use crate::spectral::{Grid, SpectralOperators};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Mapped,
    Nodal,
}

/// Equation used in row 0 of the residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// `u_0 = 1 / g(0)`, i.e. the renewal integral normalized to one.
    Ivp,
    /// `g(0) u_0 = C_q sum_j w_j q(x_j) u_j`.
    Bvp { c_q: f64 },
}

#[derive(Clone, Debug)]
enum GainTable {
    /// `coef[(k, l)]`, gain_k = sum_l coef v_{n-l} v_l with v = S_k u
    Mapped(DMatrix<f64>),
    /// `coef[k][i]` for `i <= k`, gain_k = sum_i coef (Phi_{k,i} . u) u_i
    Nodal(Vec<Vec<f64>>),
}

/// Rates tabulated on one grid, ready for repeated residual evaluation.
#[derive(Clone, Debug)]
pub struct DiscreteModel {
    ops: Arc<SpectralOperators>,
    rates: ModelRates,
    scheme: Scheme,
    pub g_nodes: DVector<f64>,
    pub mu_nodes: DVector<f64>,
    pub kf_nodes: DVector<f64>,
    pub q_nodes: DVector<f64>,
    growth: DMatrix<f64>,
    breakage: DMatrix<f64>,
    loss: DMatrix<f64>,
    gain: GainTable,
}

impl DiscreteModel {
    pub fn new(ops: Arc<SpectralOperators>, rates: ModelRates, scheme: Scheme) -> Result<Self> {
        let grid = &ops.grid;
        if grid.xbar() != rates.xbar() {
            return Err(FlocError::InvalidParameter(format!(
                "grid domain [0, {}] does not match rate domain [0, {}]",
                grid.xbar(),
                rates.xbar()
            )));
        }
        let g_nodes = grid.sample(|x| rates.g(x));
        if let Some(bad) = g_nodes.iter().find(|&&g| !(g > 0.0 && g.is_finite())) {
            return Err(FlocError::InvalidParameter(format!(
                "growth rate must be positive at every node, found {bad}"
            )));
        }
        let mu_nodes = grid.sample(|x| rates.mu(x));
        let kf_nodes = grid.sample(|x| rates.kf(x));
        let q_nodes = grid.sample(|x| rates.q_shape(x));

        let mut growth = -&ops.d_matrix * DMatrix::from_diagonal(&g_nodes);
        for k in 0..grid.len() {
            growth[(k, k)] -= mu_nodes[k];
        }

        let (mut breakage, loss, gain) = match scheme {
            Scheme::Mapped => mapped_tables(&ops, &rates),
            Scheme::Nodal => nodal_tables(&ops, &rates),
        };
        for k in 0..grid.len() {
            breakage[(k, k)] -= 0.5 * kf_nodes[k];
        }

        Ok(Self {
            ops,
            rates,
            scheme,
            g_nodes,
            mu_nodes,
            kf_nodes,
            q_nodes,
            growth,
            breakage,
            loss,
            gain,
        })
    }

    /// Builds fresh operators of degree `n` on the rates' domain.
    pub fn build(n: usize, rates: ModelRates) -> Result<Self> {
        let ops = Arc::new(SpectralOperators::build(n, rates.xbar())?);
        Self::new(ops, rates, Scheme::default())
    }

    pub fn grid(&self) -> &Grid {
        &self.ops.grid
    }

    pub fn ops(&self) -> &Arc<SpectralOperators> {
        &self.ops
    }

    pub fn rates(&self) -> &ModelRates {
        &self.rates
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.ops.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `w_j q(x_j)`: the discrete renewal functional.
    pub fn renewal_weights(&self) -> DVector<f64> {
        self.ops.weights.component_mul(&self.q_nodes)
    }

    /// Matrix of the linear part `-D (g u) - mu u + B(u)`.
    pub fn linear_operator(&self) -> DMatrix<f64> {
        &self.growth + &self.breakage
    }

    fn check_len(&self, u: &DVector<f64>) {
        assert_eq!(u.len(), self.len(), "nodal vector has the wrong length");
    }

    /// Aggregation gain `1/2 int_0^x k_a(x - y, y) u(x - y) u(y) dy` at the nodes.
    ///
    /// With the mapped scheme the value at `x = xbar`, where every pair sits on
    /// the truncation line, is the limit from the left. This is the continuous
    /// representative of the gain, and the value the steady-state equation
    /// holds with at the last node.
    pub fn aggregation_gain(&self, u: &DVector<f64>) -> DVector<f64> {
        self.check_len(u);
        let m = self.len();
        let n = m - 1;
        let mut out = DVector::zeros(m);
        match &self.gain {
            GainTable::Mapped(coef) => {
                let rule = self.ops.subinterval();
                for k in 1..m {
                    let v = rule.rows(k) * u;
                    out[k] = (0..m).map(|l| coef[(k, l)] * v[n - l] * v[l]).sum();
                }
            }
            GainTable::Nodal(coef) => {
                let phi = self.ops.interp_tensor();
                let us = u.as_slice();
                for (k, row) in coef.iter().enumerate() {
                    out[k] = row
                        .iter()
                        .enumerate()
                        .map(|(i, c)| c * phi.contract(k, i, us) * u[i])
                        .sum();
                }
            }
        }
        out
    }

    /// Aggregation loss `u(x) int_0^{xbar - x} k_a(x, y) u(y) dy` at the nodes.
    pub fn aggregation_loss(&self, u: &DVector<f64>) -> DVector<f64> {
        self.check_len(u);
        (&self.loss * u).component_mul(u)
    }
}

fn mapped_tables(
    ops: &SpectralOperators,
    rates: &ModelRates,
) -> (DMatrix<f64>, DMatrix<f64>, GainTable) {
    let grid = &ops.grid;
    let m = grid.len();
    let n = m - 1;
    let rule = ops.subinterval();
    let xs = grid.nodes();

    let mut gain = DMatrix::zeros(m, m);
    let mut loss = DMatrix::zeros(m, m);
    let mut breakage = DMatrix::zeros(m, m);
    for k in 0..m {
        let s = xs[k];
        // On [0, x_k] the mapped points pair up as z_l + z_{n-l} = x_k, so the
        // kernel is evaluated on or inside the truncation line; on the line
        // (k = n) the interior expression gives the one-sided limit.
        for l in 0..m {
            gain[(k, l)] = 0.5
                * s
                * rule.omega[l]
                * rates.ka_interior(s * rule.psi[n - l], s * rule.psi[l]);
        }

        let span = xs[n - k];
        if span > 0.0 {
            let rows = rule.rows(n - k);
            for l in 0..m {
                let c = span * rule.omega[l] * rates.ka_interior(s, span * rule.psi[l]);
                if c != 0.0 {
                    for j in 0..m {
                        loss[(k, j)] += c * rows[(l, j)];
                    }
                }
            }
            for l in 0..m {
                let y = if l == n { grid.xbar() } else { s + span * rule.psi[l] };
                let c = span * rule.omega[l] * rates.gamma_density(s, y) * rates.kf(y);
                if c != 0.0 {
                    let row = grid.cardinal_row(y);
                    for (j, r) in row.into_iter().enumerate() {
                        breakage[(k, j)] += c * r;
                    }
                }
            }
        }
    }
    (breakage, loss, GainTable::Mapped(gain))
}

fn nodal_tables(
    ops: &SpectralOperators,
    rates: &ModelRates,
) -> (DMatrix<f64>, DMatrix<f64>, GainTable) {
    let grid = &ops.grid;
    let m = grid.len();
    let xs = grid.nodes();
    let w = &ops.weights;
    let q = &ops.cumulative;

    let gain = (0..m)
        .map(|k| {
            (0..=k)
                .map(|i| 0.5 * q[(k, i)] * rates.ka(xs[k] - xs[i], xs[i]))
                .collect()
        })
        .collect();
    let loss = DMatrix::from_fn(m, m, |k, j| w[j] * rates.ka(xs[k], xs[j]));
    let breakage = DMatrix::from_fn(m, m, |k, j| {
        if xs[j] == 0.0 {
            // zero-size parent: Gamma(.; 0) is taken as 0 (always multiplied by k_f(0) = 0)
            0.0
        } else {
            (w[j] - q[(k, j)]) * rates.gamma_density(xs[k], xs[j]) * rates.kf(xs[j])
        }
    });
    (breakage, loss, GainTable::Nodal(gain))
}

/// Aggregation operator: gain minus loss.
pub fn apply_aggregation(model: &DiscreteModel, u: &DVector<f64>) -> DVector<f64> {
    model.aggregation_gain(u) - model.aggregation_loss(u)
}

/// Breakage operator `int_x^xbar Gamma(x; y) k_f(y) u(y) dy - k_f(x) u(x) / 2`.
pub fn apply_breakage(model: &DiscreteModel, u: &DVector<f64>) -> DVector<f64> {
    model.check_len(u);
    &model.breakage * u
}

/// Growth and removal `-d/dx (g u) - mu u`.
pub fn apply_growth_removal(model: &DiscreteModel, u: &DVector<f64>) -> DVector<f64> {
    model.check_len(u);
    &model.growth * u
}

/// Right-hand side `G(u) + A(u) + B(u)` of the evolution equation at every node.
pub fn rate_of_change(model: &DiscreteModel, u: &DVector<f64>) -> DVector<f64> {
    model.linear_operator() * u + apply_aggregation(model, u)
}

fn boundary_row(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> f64 {
    match boundary {
        Boundary::Ivp => u[0] - 1.0 / model.g_nodes[0],
        Boundary::Bvp { c_q } => model.g_nodes[0] * u[0] - c_q * model.renewal_weights().dot(u),
    }
}

/// Steady-state residual: rows `1..=n` are the collocated equation, row 0 the
/// boundary condition.
pub fn residual(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> Result<DVector<f64>> {
    if u.len() != model.len() {
        return Err(FlocError::DimensionMismatch { expected: model.len(), got: u.len() });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(FlocError::NonFinite);
    }
    let mut r = rate_of_change(model, u);
    r[0] = boundary_row(model, u, boundary);
    Ok(r)
}

/// Analytic Jacobian of [`residual`].
pub fn jacobian(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> DMatrix<f64> {
    model.check_len(u);
    let m = model.len();
    let n = m - 1;
    let mut jac = model.linear_operator();

    let lu = &model.loss * u;
    for k in 0..m {
        for j in 0..m {
            jac[(k, j)] -= u[k] * model.loss[(k, j)];
        }
        jac[(k, k)] -= lu[k];
    }

    match &model.gain {
        GainTable::Mapped(coef) => {
            // d/du of sum_l c_l v_{n-l} v_l is 2 sum_l c_l v_{n-l} S_k[l, :]
            // because c_l = c_{n-l}.
            let rule = model.ops.subinterval();
            for k in 1..m {
                let rows = rule.rows(k);
                let v = rows * u;
                let a = DVector::from_fn(m, |l, _| 2.0 * coef[(k, l)] * v[n - l]);
                let grad = rows.tr_mul(&a);
                for j in 0..m {
                    jac[(k, j)] += grad[j];
                }
            }
        }
        GainTable::Nodal(coef) => {
            let phi = model.ops.interp_tensor();
            let us = u.as_slice();
            for (k, row) in coef.iter().enumerate() {
                for (i, &c) in row.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let phi_row = phi.row(k, i).expect("i <= k");
                    for j in 0..m {
                        jac[(k, j)] += c * phi_row[j] * u[i];
                    }
                    jac[(k, i)] += c * phi.contract(k, i, us);
                }
            }
        }
    }

    match boundary {
        Boundary::Ivp => {
            jac.row_mut(0).fill(0.0);
            jac[(0, 0)] = 1.0;
        }
        Boundary::Bvp { c_q } => {
            let rw = model.renewal_weights();
            for j in 0..m {
                jac[(0, j)] = -c_q * rw[j];
            }
            jac[(0, 0)] += model.g_nodes[0];
        }
    }
    jac
}

/// Central-difference Jacobian with steps `1e-7 (1 + |u_j|)`.
pub fn jacobian_fd(model: &DiscreteModel, u: &DVector<f64>, boundary: Boundary) -> Result<DMatrix<f64>> {
    let m = model.len();
    let mut jac = DMatrix::zeros(m, m);
    let mut probe = u.clone();
    for j in 0..m {
        let h = 1e-7 * (1.0 + u[j].abs());
        probe[j] = u[j] + h;
        let plus = residual(model, &probe, boundary)?;
        probe[j] = u[j] - h;
        let minus = residual(model, &probe, boundary)?;
        probe[j] = u[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}
