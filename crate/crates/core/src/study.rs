//! Derived quantities and batch runs: mean floc size, grid-refinement studies
//! and parameter sweeps over shear and growth rates.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{Boundary, DiscreteModel, Scheme};
use crate::error::{FlocError, Result};
use crate::rates::{build_rates, ParamSet};
use crate::solver::{solve_newton, SolverConfig, SteadyState};
use crate::spectral::{build_grid, interpolate, quad_weights, SpectralOperators};
use crate::theory::linear_exact_nodes;

/// Degree of the reference solution in nonlinear convergence studies.
pub const REFERENCE_DEGREE: usize = 200;

/// Residual tolerance of the reference solve. The residual of a degree-200
/// collocation system cannot be pushed much below `1e-12` in double precision
/// (the differentiation matrix has entries of order `n^2`).
pub const REFERENCE_TOL: f64 = 1e-10;

pub const SWEEP_CSV_HEADER: [&str; 7] =
    ["gamma_dot", "c_g", "converged", "avg_size", "c_q", "residual_norm", "iterations"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeWeighting {
    /// `int x u / int u`
    #[default]
    Number,
    /// `int x^2 u / int x u`
    Mass,
}

/// Mean floc size of a stationary density.
pub fn mean_size(state: &SteadyState, weighting: SizeWeighting) -> Result<f64> {
    let grid = build_grid(state.n, state.xbar)?;
    if state.u.len() != grid.len() {
        return Err(FlocError::DimensionMismatch { expected: grid.len(), got: state.u.len() });
    }
    let w = quad_weights(&grid);
    let (mut num, mut den) = (0.0, 0.0);
    for ((wj, xj), uj) in w.iter().zip(grid.nodes()).zip(&state.u) {
        let base = match weighting {
            SizeWeighting::Number => wj * uj,
            SizeWeighting::Mass => wj * xj * uj,
        };
        num += base * xj;
        den += base;
    }
    if den == 0.0 || !den.is_finite() {
        return Err(FlocError::EmptyDistribution);
    }
    Ok(num / den)
}

/// Number-weighted mean size `sum w x u / sum w u`.
pub fn average_floc_size(state: &SteadyState) -> Result<f64> {
    mean_size(state, SizeWeighting::Number)
}

/// Shared operators keyed by grid degree and domain.
#[derive(Debug, Default)]
pub struct OperatorCache {
    entries: Mutex<HashMap<(usize, u64), Arc<SpectralOperators>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, n: usize, xbar: f64) -> Result<Arc<SpectralOperators>> {
        let key = (n, xbar.to_bits());
        if let Some(ops) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(ops.clone());
        }
        let ops = Arc::new(SpectralOperators::build(n, xbar)?);
        Ok(self.entries.lock().expect("cache lock").entry(key).or_insert(ops).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Aggregation and fragmentation off; compared with the closed form.
    Linear,
    /// Full rates; compared with a high-degree reference solution.
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub converged: bool,
    /// Absolute sup error (linear) or relative sup error (nonlinear).
    pub error: Option<f64>,
}

fn solve_with(
    cache: &OperatorCache,
    rates: crate::rates::ModelRates,
    n: usize,
    config: &SolverConfig,
) -> Result<(DiscreteModel, SteadyState)> {
    let ops = cache.get(n, rates.xbar())?;
    let model = DiscreteModel::new(ops, rates, Scheme::default())?;
    let state = solve_newton(&model, config, None)?;
    Ok((model, state))
}

/// Error of the computed steady state for each degree in `n_values`.
///
/// Degrees must be strictly ascending. Rows whose solve fails keep
/// `converged = false` and no error value.
pub fn run_convergence_study(
    mode: StudyMode,
    n_values: &[usize],
    params: &ParamSet,
    reference_n: usize,
    config: &SolverConfig,
) -> Result<Vec<ConvergenceRow>> {
    if n_values.is_empty() {
        return Err(FlocError::InvalidParameter("no grid degrees given".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FlocError::InvalidParameter("grid degrees must be strictly ascending".into()));
    }
    let rates = build_rates(params)?;
    let cache = OperatorCache::new();

    match mode {
        StudyMode::Linear => {
            let rates = rates.linear_part();
            n_values
                .iter()
                .map(|&n| {
                    let (model, state) = solve_with(&cache, rates.clone(), n, config)?;
                    let exact = linear_exact_nodes(&rates, model.grid());
                    let error = state.converged.then(|| (state.u_vector() - exact).amax());
                    Ok(ConvergenceRow { n, converged: state.converged, error })
                })
                .collect()
        }
        StudyMode::Nonlinear => {
            let ref_config = SolverConfig { tol: config.tol.max(REFERENCE_TOL), ..*config };
            let (ref_model, reference) = solve_with(&cache, rates.clone(), reference_n, &ref_config)?;
            if !reference.converged {
                return Err(FlocError::NotConverged);
            }
            let ref_nodes = ref_model.grid().nodes().to_vec();
            let ref_sup = reference.u_vector().amax();
            n_values
                .iter()
                .map(|&n| {
                    let (model, state) = solve_with(&cache, rates.clone(), n, config)?;
                    if !state.converged {
                        return Ok(ConvergenceRow { n, converged: false, error: None });
                    }
                    let mut worst = 0.0_f64;
                    for (x, r) in ref_nodes.iter().zip(&reference.u) {
                        let v = interpolate(model.grid(), &state.u, *x)?;
                        worst = worst.max((v - r).abs());
                    }
                    Ok(ConvergenceRow { n, converged: true, error: Some(worst / ref_sup) })
                })
                .collect()
        }
    }
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["n", "converged", "error"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.converged.to_string(),
            r.error.map(fmt_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid of `(gamma_dot, c_g)` points sharing every other parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub gamma_dot_values: Vec<f64>,
    pub c_g_values: Vec<f64>,
    pub n: usize,
    /// Template for the remaining parameters; its shear and growth are ignored.
    pub base: ParamSet,
    pub boundary: Boundary,
    pub config: SolverConfig,
    /// Weighting of the `avg_size` column.
    #[serde(default)]
    pub weighting: SizeWeighting,
}

impl SweepSpec {
    pub fn new(gamma_dot_values: Vec<f64>, c_g_values: Vec<f64>, n: usize) -> Self {
        Self {
            gamma_dot_values,
            c_g_values,
            n,
            base: ParamSet::default(),
            boundary: Boundary::Ivp,
            config: SolverConfig::newton(),
            weighting: SizeWeighting::Number,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_dot_values.is_empty() || self.c_g_values.is_empty() {
            return Err(FlocError::InvalidParameter("sweep lists must be non-empty".into()));
        }
        if let Some(g) = self.gamma_dot_values.iter().find(|g| !(0.0..=100.0).contains(*g)) {
            return Err(FlocError::InvalidParameter(format!("shear rate {g} outside [0, 100]")));
        }
        if let Some(c) = self.c_g_values.iter().find(|c| !(**c > 0.0 && **c <= 10.0)) {
            return Err(FlocError::InvalidParameter(format!("growth coefficient {c} outside (0, 10]")));
        }
        if self.n == 0 {
            return Err(FlocError::InvalidParameter("grid degree must be at least 1".into()));
        }
        self.base.validate()?;
        self.config.with_boundary(self.boundary).validate()
    }

    /// Points in output order: outer `c_g`, inner `gamma_dot`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.c_g_values
            .iter()
            .flat_map(|&c| self.gamma_dot_values.iter().map(move |&g| (g, c)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma_dot: f64,
    pub c_g: f64,
    pub converged: bool,
    pub avg_size: Option<f64>,
    pub c_q: Option<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// `|u - u_linear|_inf` against the linear steady state with the same
    /// growth and removal. Not part of the CSV.
    #[serde(skip)]
    pub linear_distance: Option<f64>,
}

fn sweep_point(
    spec: &SweepSpec,
    cache: &OperatorCache,
    gamma_dot: f64,
    c_g: f64,
) -> Result<SweepRow> {
    let params = spec.base.with_shear(gamma_dot).with_growth(c_g);
    let rates = build_rates(&params)?;
    let config = spec.config.with_boundary(spec.boundary);
    let (model, state) = solve_with(cache, rates.clone(), spec.n, &config)?;
    let (avg_size, linear_distance) = if state.converged {
        let linear = linear_exact_nodes(&rates, model.grid());
        (mean_size(&state, spec.weighting).ok(), Some((state.u_vector() - linear).amax()))
    } else {
        (None, None)
    };
    Ok(SweepRow {
        gamma_dot,
        c_g,
        converged: state.converged,
        avg_size,
        c_q: if state.converged { state.c_q } else { None },
        residual_norm: state.residual_norm,
        iterations: state.iterations,
        linear_distance,
    })
}

/// Solves every point of the sweep, on `threads` worker threads (`0` lets the
/// pool choose). Rows come back in [`SweepSpec::points`] order.
pub fn run_sweep(spec: &SweepSpec, threads: usize) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let cache = OperatorCache::new();
    cache.get(spec.n, spec.base.xbar)?;
    let points = spec.points();
    if threads == 1 {
        return points.iter().map(|&(g, c)| sweep_point(spec, &cache, g, c)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FlocError::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        points
            .par_iter()
            .map(|&(g, c)| sweep_point(spec, &cache, g, c))
            .collect()
    })
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_float(r.gamma_dot),
            fmt_float(r.c_g),
            r.converged.to_string(),
            r.avg_size.map(fmt_float).unwrap_or_default(),
            r.c_q.map(fmt_float).unwrap_or_default(),
            fmt_float(r.residual_norm),
            r.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(SWEEP_CSV_HEADER) {
        return Err(FlocError::InvalidParameter(format!("unexpected sweep header {header:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| FlocError::InvalidParameter(format!("bad number {s:?}")))
    };
    let optional = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() { Ok(None) } else { parse(s).map(Some) }
    };
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            Ok(SweepRow {
                gamma_dot: parse(field(0))?,
                c_g: parse(field(1))?,
                converged: field(2)
                    .parse()
                    .map_err(|_| FlocError::InvalidParameter(format!("bad flag {:?}", field(2))))?,
                avg_size: optional(field(3))?,
                c_q: optional(field(4))?,
                residual_norm: parse(field(5))?,
                iterations: field(6)
                    .parse()
                    .map_err(|_| FlocError::InvalidParameter(format!("bad count {:?}", field(6))))?,
                linear_distance: None,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotone {
    StrictlyDecreasing,
    NonIncreasing,
    Violated,
}

impl Monotone {
    pub fn of(values: &[f64]) -> Self {
        if values.windows(2).all(|w| w[1] < w[0]) {
            Monotone::StrictlyDecreasing
        } else if values.windows(2).all(|w| w[1] <= w[0]) {
            Monotone::NonIncreasing
        } else {
            Monotone::Violated
        }
    }

    pub fn non_increasing(self) -> bool {
        self != Monotone::Violated
    }
}

/// Post-pass trend checks on a sweep, over converged rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTrends {
    /// For each `c_g`: how `avg_size` behaves as `gamma_dot` increases.
    pub avg_size_in_gamma: Vec<(f64, Monotone)>,
    /// For each `gamma_dot`: how the distance to the linear state behaves as `c_g` increases.
    pub linear_distance_in_c_g: Vec<(f64, Monotone)>,
}

impl SweepTrends {
    pub fn holds(&self) -> bool {
        self.avg_size_in_gamma
            .iter()
            .chain(&self.linear_distance_in_c_g)
            .all(|(_, m)| m.non_increasing())
    }
}

fn ordered_series(
    rows: &[SweepRow],
    group: impl Fn(&SweepRow) -> f64,
    axis: impl Fn(&SweepRow) -> f64,
    value: impl Fn(&SweepRow) -> Option<f64>,
) -> Vec<(f64, Monotone)> {
    let mut keys: Vec<f64> = rows.iter().map(&group).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let mut pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.converged && group(r) == k)
                .filter_map(|r| value(r).map(|v| (axis(r), v)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let vals: Vec<f64> = pts.into_iter().map(|p| p.1).collect();
            (k, Monotone::of(&vals))
        })
        .collect()
}

pub fn sweep_trends(rows: &[SweepRow]) -> SweepTrends {
    SweepTrends {
        avg_size_in_gamma: ordered_series(rows, |r| r.c_g, |r| r.gamma_dot, |r| r.avg_size),
        linear_distance_in_c_g: ordered_series(
            rows,
            |r| r.gamma_dot,
            |r| r.c_g,
            |r| r.linear_distance,
        ),
    }
}

/// Nodal vector of a state interpolated onto another grid.
pub fn resample(state: &SteadyState, nodes: &[f64]) -> Result<DVector<f64>> {
    let grid = build_grid(state.n, state.xbar)?;
    let values: Result<Vec<f64>> = nodes.iter().map(|&x| interpolate(&grid, &state.u, x)).collect();
    Ok(DVector::from_vec(values?))
}
