//! Chebyshev–Gauss–Lobatto collocation on `[0, xbar]`.
//!
//! Everything here is built from the cardinal (Lagrange) polynomials of the
//! shifted Lobatto grid, evaluated in barycentric form:
//!
//! * [`diff_matrix`]: `D[i][j] = phi_j'(x_i)`
//! * [`quad_weights`]: `w_i = int_0^xbar phi_i`
//! * [`cumulative_matrix`]: `Q[k][j] = int_0^{x_k} phi_j`
//! * [`interp_tensor`]: `Phi[k][i][j] = phi_j(x_k - x_i)` for `k >= i`
//! * [`SubintervalRule`]: a Clenshaw–Curtis rule carried onto `[0, s]` through
//!   an endpoint-flattening substitution, together with the interpolation rows
//!   it needs at the mapped points.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{FlocError, Result};

/// Collocation grid of polynomial degree `n` on `[0, xbar]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    xbar: f64,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn degree(&self) -> usize {
        self.n
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn xbar(&self) -> f64 {
        self.xbar
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn node_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.nodes)
    }

    /// Tabulates `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.nodes.iter().map(|&x| f(x)))
    }

    /// Barycentric weights of the Lobatto points: alternating signs, halved
    /// at both ends.
    pub fn barycentric_weights(&self) -> Vec<f64> {
        (0..=self.n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == self.n {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect()
    }

    /// `x_i - x_j` from the angle form, free of cancellation.
    fn node_difference(&self, i: usize, j: usize) -> f64 {
        let h = PI / (2.0 * self.n as f64);
        let sum = (i + j) as f64 * h;
        let diff = (i as f64 - j as f64) * h;
        self.xbar * sum.sin() * diff.sin()
    }

    /// Row of cardinal-function values `phi_j(z)` for `j = 0..=n`.
    pub fn cardinal_row(&self, z: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        self.cardinal_row_into(z, &mut row);
        row
    }

    fn cardinal_row_into(&self, z: f64, row: &mut [f64]) {
        if let Some(j) = self.nodes.iter().position(|&x| x == z) {
            row.iter_mut().for_each(|r| *r = 0.0);
            row[j] = 1.0;
            return;
        }
        let mut total = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            let bw = if j == 0 || j == self.n { 0.5 * s } else { s };
            *r = bw / (z - self.nodes[j]);
            total += *r;
        }
        row.iter_mut().for_each(|r| *r /= total);
    }
}

/// Shifted Chebyshev–Gauss–Lobatto grid `x_j = (1 - cos(j pi / n)) xbar / 2`.
///
/// The left half is computed as `xbar sin^2(j pi / 2n)` and the right half by
/// reflection. Each left node is then re-derived from its mirror, which makes
/// `nodes[j] + nodes[n - j] == xbar` hold exactly in floating point.
pub fn build_grid(n: usize, xbar: f64) -> Result<Grid> {
    if n == 0 {
        return Err(FlocError::InvalidParameter("grid degree must be at least 1".into()));
    }
    if !(xbar.is_finite() && xbar > 0.0) {
        return Err(FlocError::InvalidParameter(format!("xbar = {xbar} must be positive")));
    }
    let mut nodes = vec![0.0; n + 1];
    for j in 0..=n / 2 {
        if 2 * j == n {
            nodes[j] = 0.5 * xbar;
        } else {
            let s = (j as f64 * PI / (2.0 * n as f64)).sin();
            let mirror = xbar - xbar * s * s;
            nodes[n - j] = mirror;
            // exact: mirror lies in [xbar/2, xbar]
            nodes[j] = xbar - mirror;
        }
    }
    nodes[0] = 0.0;
    nodes[n] = xbar;
    Ok(Grid { n, xbar, nodes })
}

/// Differentiation matrix `D[i][j] = phi_j'(x_i)`.
///
/// Off-diagonal entries use the barycentric form `(b_j / b_i) / (x_i - x_j)`,
/// which equals `pi'(x_i) / (pi'(x_j) (x_i - x_j))`; the diagonal is the
/// negative row sum so that constants are differentiated to zero exactly.
pub fn diff_matrix(grid: &Grid) -> DMatrix<f64> {
    let m = grid.len();
    let bw = grid.barycentric_weights();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..m {
            if i != j {
                let v = (bw[j] / bw[i]) / grid.node_difference(i, j);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        d[(i, i)] = -row_sum;
    }
    d
}

/// `Q[k][j] = int_0^{x_k} phi_j(s) ds`, computed exactly from the Chebyshev
/// expansion of each cardinal polynomial.
pub fn cumulative_matrix(grid: &Grid) -> DMatrix<f64> {
    let n = grid.n;
    let m = n + 1;
    let nf = n as f64;
    // cos(r pi / n) for r in 0..2n, indexed modulo 2n.
    let cos_table: Vec<f64> = (0..2 * n).map(|r| (r as f64 * PI / nf).cos()).collect();
    let cheb = |deg: usize, k: usize| cos_table[(deg * k) % (2 * n)];

    // antiderivative of T_deg evaluated at t_k, up to a constant
    let antideriv = |deg: usize, k: usize| -> f64 {
        match deg {
            0 => cheb(1, k),
            1 => 0.25 * cheb(2, k),
            _ => {
                cheb(deg + 1, k) / (2.0 * (deg + 1) as f64)
                    - cheb(deg - 1, k) / (2.0 * (deg - 1) as f64)
            }
        }
    };
    // e[deg][k] = F_deg(1) - F_deg(t_k); t = 1 corresponds to x = 0
    let mut e = vec![vec![0.0; m]; m];
    for (deg, row) in e.iter_mut().enumerate() {
        let at_one = antideriv(deg, 0);
        for (k, v) in row.iter_mut().enumerate().skip(1) {
            *v = at_one - antideriv(deg, k);
        }
    }

    let half = |j: usize| if j == 0 || j == n { 0.5 } else { 1.0 };
    let scale = 0.5 * grid.xbar;
    let mut q = DMatrix::zeros(m, m);
    let mut coeffs = vec![0.0; m];
    for j in 0..m {
        for (deg, c) in coeffs.iter_mut().enumerate() {
            *c = 2.0 / nf * half(j) * half(deg) * cheb(deg, j);
        }
        for k in 1..m {
            let mut acc = 0.0;
            for (deg, c) in coeffs.iter().enumerate() {
                acc += c * e[deg][k];
            }
            q[(k, j)] = scale * acc;
        }
    }
    q
}

/// Interpolatory quadrature weights `w_i = int_0^xbar phi_i(s) ds`.
pub fn quad_weights(grid: &Grid) -> DVector<f64> {
    cumulative_matrix(grid).row(grid.n).transpose()
}

/// Rank-3 tensor `Phi[k][i][j] = phi_j(x_k - x_i)` for `k >= i` (zero otherwise).
///
/// Only the lower triangle `k >= i` is stored.
#[derive(Clone, Debug)]
pub struct InterpTensor {
    m: usize,
    data: Vec<f64>,
}

impl InterpTensor {
    fn offset(&self, k: usize, i: usize) -> usize {
        (k * (k + 1) / 2 + i) * self.m
    }

    /// The row `Phi[k][i][..]`, or `None` when `i > k`.
    pub fn row(&self, k: usize, i: usize) -> Option<&[f64]> {
        (i <= k).then(|| {
            let o = self.offset(k, i);
            &self.data[o..o + self.m]
        })
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.row(k, i).map_or(0.0, |r| r[j])
    }

    /// `sum_j Phi[k][i][j] u_j`: the interpolant of `u` at `x_k - x_i`.
    pub fn contract(&self, k: usize, i: usize, u: &[f64]) -> f64 {
        self.row(k, i)
            .map_or(0.0, |r| r.iter().zip(u).map(|(a, b)| a * b).sum())
    }
}

pub fn interp_tensor(grid: &Grid) -> InterpTensor {
    let m = grid.len();
    let mut data = vec![0.0; m * m * (m + 1) / 2];
    for k in 0..m {
        for i in 0..=k {
            let o = (k * (k + 1) / 2 + i) * m;
            let z = grid.nodes[k] - grid.nodes[i];
            grid.cardinal_row_into(z, &mut data[o..o + m]);
        }
    }
    InterpTensor { m, data }
}

/// Barycentric evaluation of the degree-`n` interpolant through `values`.
pub fn interpolate(grid: &Grid, values: &[f64], x: f64) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(FlocError::DimensionMismatch { expected: grid.len(), got: values.len() });
    }
    if !(0.0..=grid.xbar).contains(&x) {
        return Err(FlocError::OutOfDomain { x, xbar: grid.xbar });
    }
    if let Some(j) = grid.nodes.iter().position(|&v| v == x) {
        return Ok(values[j]);
    }
    let row = grid.cardinal_row(x);
    Ok(row.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// Endpoint-flattening substitution `psi(t) = t^3 (10 - 15 t + 6 t^2)` on `[0, 1]`.
///
/// `psi'` has double zeros at both ends, which turns the `s^(1/3)` endpoint
/// behaviour of the orthokinetic kernel into a smooth integrand.
pub fn flatten(t: f64) -> f64 {
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

pub fn flatten_derivative(t: f64) -> f64 {
    let u = t * (1.0 - t);
    30.0 * u * u
}

/// Quadrature on `[0, s]` for every `s = x_k`, built from the Lobatto rule:
/// `int_0^s f ≈ s * sum_l omega_l f(s psi_l)`.
///
/// `rows[k]` holds the cardinal rows `phi_j(x_k psi_l)` so that nodal data can
/// be interpolated onto the mapped points of `[0, x_k]`.
#[derive(Clone, Debug)]
pub struct SubintervalRule {
    m: usize,
    /// `psi(t_l)` with `t_l = x_l / xbar`; satisfies `psi[l] + psi[n - l] == 1`.
    pub psi: Vec<f64>,
    /// Weights on `[0, 1]`, `w_l psi'(t_l) / xbar`.
    pub omega: Vec<f64>,
    rows: Vec<DMatrix<f64>>,
}

impl SubintervalRule {
    pub fn new(grid: &Grid, weights: &DVector<f64>) -> Self {
        let m = grid.len();
        let n = grid.n;
        let mut psi = vec![0.0; m];
        for l in 0..m {
            if 2 * l <= n {
                psi[l] = flatten(grid.nodes[l] / grid.xbar);
            } else {
                psi[l] = 1.0 - psi[n - l];
            }
        }
        if n.is_multiple_of(2) {
            psi[n / 2] = 0.5;
        }
        psi[0] = 0.0;
        psi[n] = 1.0;
        let omega = (0..m)
            .map(|l| weights[l] / grid.xbar * flatten_derivative(grid.nodes[l] / grid.xbar))
            .collect();

        let rows = grid
            .nodes
            .iter()
            .map(|&s| {
                let mut mat = DMatrix::zeros(m, m);
                let mut buf = vec![0.0; m];
                for (l, &p) in psi.iter().enumerate() {
                    grid.cardinal_row_into(s * p, &mut buf);
                    for (j, &b) in buf.iter().enumerate() {
                        mat[(l, j)] = b;
                    }
                }
                mat
            })
            .collect();
        Self { m, psi, omega, rows }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Interpolation matrix onto the mapped points of `[0, x_k]`.
    pub fn rows(&self, k: usize) -> &DMatrix<f64> {
        &self.rows[k]
    }
}

/// All discrete operators of one grid. The rank-3 objects are built lazily.
#[derive(Debug)]
pub struct SpectralOperators {
    pub grid: Grid,
    pub d_matrix: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub cumulative: DMatrix<f64>,
    interp: OnceLock<InterpTensor>,
    subinterval: OnceLock<SubintervalRule>,
}

impl SpectralOperators {
    pub fn new(grid: Grid) -> Self {
        let d_matrix = diff_matrix(&grid);
        let cumulative = cumulative_matrix(&grid);
        let weights = cumulative.row(grid.n).transpose();
        Self {
            grid,
            d_matrix,
            weights,
            cumulative,
            interp: OnceLock::new(),
            subinterval: OnceLock::new(),
        }
    }

    pub fn build(n: usize, xbar: f64) -> Result<Self> {
        Ok(Self::new(build_grid(n, xbar)?))
    }

    pub fn interp_tensor(&self) -> &InterpTensor {
        self.interp.get_or_init(|| interp_tensor(&self.grid))
    }

    pub fn subinterval(&self) -> &SubintervalRule {
        self.subinterval.get_or_init(|| SubintervalRule::new(&self.grid, &self.weights))
    }

    /// `int_0^xbar` of the interpolant of `values`.
    pub fn integrate(&self, values: &DVector<f64>) -> f64 {
        self.weights.dot(values)
    }
}
