//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! non-zero status if any criterion fails.
//!
//! Run with `cargo test -p floc-steady --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use floc_steady::assembly::{
    apply_aggregation, apply_breakage, apply_growth_removal, jacobian, jacobian_fd, Boundary,
    DiscreteModel, Scheme,
};
use floc_steady::rates::{build_rates, validate_rates, ModelRates, ParamSet};
use floc_steady::solver::{
    compute_cq, evolve, solve_newton, solve_picard, SolverConfig, SteadyState,
};
use floc_steady::spectral::SpectralOperators;
use floc_steady::study::{
    run_convergence_study, run_sweep, Monotone, StudyMode, SweepRow, SweepSpec, REFERENCE_DEGREE,
};
use floc_steady::theory::{check_theorem1, DEFAULT_THEOREM_SAMPLES};
use nalgebra::DVector;
use rand::{rngs::StdRng, Rng, SeedableRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn model(n: usize, rates: ModelRates) -> DiscreteModel {
    DiscreteModel::build(n, rates).expect("valid model")
}

fn defaults() -> ParamSet {
    ParamSet::default().with_shear(1.0).with_growth(1.0)
}

fn linear_convergence() -> Outcome {
    let params = defaults();
    let cfg = SolverConfig::newton();
    let start = Instant::now();
    let degrees: Vec<usize> = (4..=32).step_by(4).collect();
    let rows = run_convergence_study(StudyMode::Linear, &degrees, &params, REFERENCE_DEGREE, &cfg)
        .expect("linear study");
    let elapsed = start.elapsed();
    let at = |n: usize| rows.iter().find(|r| r.n == n).and_then(|r| r.error).unwrap_or(f64::INFINITY);
    let e30 = run_convergence_study(StudyMode::Linear, &[30], &params, REFERENCE_DEGREE, &cfg)
        .expect("linear solve")[0]
        .error
        .unwrap_or(f64::INFINITY);
    let e20 = at(20);
    outcome(
        e20 <= 1e-10 && e30 <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("err(n=20) = {e20:.2e}, err(n=30) = {e30:.2e}, study over n=4..32 in {}", secs(elapsed)),
    )
}

fn nonlinear_self_convergence() -> Outcome {
    let params = defaults();
    let start = Instant::now();
    let degrees = [40, 48, 56, 64, 80, 100];
    let rows = run_convergence_study(
        StudyMode::Nonlinear,
        &degrees,
        &params,
        REFERENCE_DEGREE,
        &SolverConfig::newton(),
    )
    .expect("nonlinear study");
    let elapsed = start.elapsed();
    let worst = rows.iter().map(|r| r.error.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let all_converged = rows.iter().all(|r| r.converged);
    outcome(
        all_converged && worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error over n in {degrees:?} vs n={REFERENCE_DEGREE}: {worst:.2e} (n=40: {:.2e}), {}",
            rows[0].error.unwrap_or(f64::NAN),
            secs(elapsed)
        ),
    )
}

fn operator_exactness() -> Outcome {
    let mut worst_ratio = 0.0_f64;
    let mut worst_pou = 0.0_f64;
    for n in [2usize, 8, 32, 64] {
        let tol = 1e-9 * (1.0 + (n * n) as f64);
        let ops = SpectralOperators::build(n, 1.0).expect("operators");
        let xs = ops.grid.nodes();
        for m in 0..=n as i32 {
            let p = DVector::from_iterator(n + 1, xs.iter().map(|x| x.powi(m)));
            let dp = &ops.d_matrix * &p;
            let qp = &ops.cumulative * &p;
            for (k, &x) in xs.iter().enumerate() {
                let d_exact = if m == 0 { 0.0 } else { m as f64 * x.powi(m - 1) };
                let q_exact = x.powi(m + 1) / (m + 1) as f64;
                worst_ratio = worst_ratio
                    .max((dp[k] - d_exact).abs() / tol)
                    .max((qp[k] - q_exact).abs() / tol);
            }
            let w_exact = 1.0 / (m + 1) as f64;
            worst_ratio = worst_ratio.max((ops.weights.dot(&p) - w_exact).abs() / tol);
        }
        let phi = ops.interp_tensor();
        for k in 0..=n {
            for i in 0..=k {
                let s: f64 = phi.row(k, i).expect("lower triangle").iter().sum();
                worst_pou = worst_pou.max((s - 1.0).abs());
            }
        }
    }
    outcome(
        worst_ratio <= 1.0 && worst_pou <= 1e-12,
        format!(
            "worst D/w/Q error as fraction of 1e-9(1+n^2): {worst_ratio:.2e}, partition of unity: {worst_pou:.2e}"
        ),
    )
}

fn brute_force_oracle() -> Outcome {
    let rates = build_rates(&defaults()).expect("rates");
    let m = model(32, rates.clone());
    let uf = |x: f64| (-x).exp();
    let u = m.grid().sample(uf);
    let (a, b, g) = (apply_aggregation(&m, &u), apply_breakage(&m, &u), apply_growth_removal(&m, &u));
    let (mut ea, mut eb, mut eg) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (k, &x) in m.grid().nodes().iter().enumerate() {
        ea = ea.max((a[k] - common::aggregation(&rates, &uf, x)).abs());
        eb = eb.max((b[k] - common::breakage(&rates, &uf, x)).abs());
        eg = eg.max((g[k] - common::growth_removal(&rates, &uf, x)).abs());
    }
    outcome(
        ea.max(eb).max(eg) <= 1e-5,
        format!("sup errors at n=32: aggregation {ea:.2e}, breakage {eb:.2e}, growth/removal {eg:.2e}"),
    )
}

fn conservation() -> Outcome {
    let rates = build_rates(&defaults()).expect("rates");
    let m = model(48, rates.clone());
    let u = m.grid().sample(|x| (-x).exp());
    let w = &m.ops().weights;
    let xw = w.component_mul(&m.grid().node_vector());
    let m1a = xw.dot(&apply_aggregation(&m, &u));
    let b = apply_breakage(&m, &u);
    let m1b = xw.dot(&b);
    let m0b = w.dot(&b) - 0.5 * w.dot(&m.kf_nodes.component_mul(&u));
    let report = validate_rates(&rates, 256, 1e-12).expect("validation");
    let gamma = report.check("Gamma-normalization").expect("normalization check");
    outcome(
        m1a.abs() <= 1e-6 && m1b.abs() <= 1e-6 && m0b.abs() <= 1e-6 && gamma.passed,
        format!(
            "n=48: first moments A {m1a:.2e}, B {m1b:.2e}; zeroth moment of B minus half fragmentation {m0b:.2e}; Gamma normalization {:.2e}",
            gamma.worst_violation
        ),
    )
}

fn fixed_point_cross_validation() -> Outcome {
    let rates = ModelRates::custom(1.0, |_| 100.0)
        .expect("rates")
        .with_fragmentation(|x| x)
        .with_aggregation(|_, _| 1.0);
    let report = check_theorem1(&rates, DEFAULT_THEOREM_SAMPLES).expect("theorem check");
    let m = model(32, rates);
    let newton = solve_newton(&m, &SolverConfig::newton(), None).expect("newton");
    let picard = solve_picard(&m, &SolverConfig::picard()).expect("picard");
    let diff = (newton.u_vector() - picard.u_vector()).amax();
    outcome(
        report.contraction_c < 1.0 && newton.converged && picard.converged && diff <= 1e-8,
        format!(
            "c = {:.3}, r = {:.1}, theorem applies: {}; Picard {} in {} steps; |u_newton - u_picard| = {diff:.2e}",
            report.contraction_c,
            report.radius_r,
            report.theorem_applies,
            if picard.converged { "converged" } else { "did not converge" },
            picard.iterations
        ),
    )
}

fn sweep(gammas: &[f64], c_gs: &[f64]) -> (Vec<SweepRow>, Duration) {
    let start = Instant::now();
    let rows = run_sweep(&SweepSpec::new(gammas.to_vec(), c_gs.to_vec(), 50), 0).expect("sweep");
    (rows, start.elapsed())
}

fn trends() -> Outcome {
    let (shear, t1) = sweep(&[1.0, 5.0, 10.0, 20.0], &[1.0]);
    let (growth, t2) = sweep(&[1.0], &[1.0, 2.0, 5.0, 10.0]);
    let sizes: Vec<f64> = shear.iter().map(|r| r.avg_size.unwrap_or(f64::NAN)).collect();
    let dists: Vec<f64> = growth.iter().map(|r| r.linear_distance.unwrap_or(f64::NAN)).collect();
    let all = shear.iter().chain(&growth).all(|r| r.converged);
    let limit = Duration::from_secs(30);
    outcome(
        all && Monotone::of(&sizes) == Monotone::StrictlyDecreasing
            && Monotone::of(&dists) == Monotone::StrictlyDecreasing
            && t1 < limit
            && t2 < limit,
        format!(
            "avg size over shear 1,5,10,20: {} ({}); distance to linear state over c_g 1,2,5,10: {} ({})",
            fmt_list(&sizes),
            secs(t1),
            fmt_list(&dists),
            secs(t2)
        ),
    )
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn equilibrium() -> Outcome {
    let m = model(50, build_rates(&defaults()).expect("rates"));
    let state = solve_newton(&m, &SolverConfig::newton(), None).expect("newton");
    let u0 = state.u_vector();
    let start = Instant::now();
    let drift = match evolve(&m, &u0, 1.0, 1e-3, Boundary::Ivp) {
        Ok(u) => (u - &u0).amax(),
        Err(_) => f64::INFINITY,
    };
    outcome(
        state.converged && drift <= 1e-8,
        format!("n=50, t=1, dt=1e-3: sup drift {drift:.2e} ({})", secs(start.elapsed())),
    )
}

fn jacobian_check() -> Outcome {
    let m = model(24, build_rates(&defaults()).expect("rates"));
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let u = DVector::from_fn(25, |_, _| rng.gen_range(0.05..2.0));
    let mut worst = 0.0_f64;
    for boundary in [Boundary::Ivp, Boundary::Bvp { c_q: 4.0 }] {
        let ja = jacobian(&m, &u, boundary);
        let jf = jacobian_fd(&m, &u, boundary).expect("finite differences");
        for j in 0..25 {
            let scale = ja.column(j).amax();
            worst = worst.max((ja.column(j) - jf.column(j)).amax() / scale);
        }
    }
    outcome(worst <= 1e-5, format!("n=24, worst column-relative difference {worst:.2e}"))
}

fn renewal_identity() -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    let mut check = |m: &DiscreteModel, s: &SteadyState, c_q: f64| {
        let u = s.u_vector();
        let gap = (m.g_nodes[0] * u[0] - c_q * m.renewal_weights().dot(&u)).abs();
        worst = worst.max(gap);
        count += 1;
    };
    let ops = Arc::new(SpectralOperators::build(50, 1.0).expect("operators"));
    let mut all_converged = true;
    for (gamma, c_g) in [(1.0, 1.0), (5.0, 1.0), (10.0, 1.0), (20.0, 1.0), (1.0, 2.0), (1.0, 5.0), (1.0, 10.0)] {
        let rates = build_rates(&defaults().with_shear(gamma).with_growth(c_g)).expect("rates");
        let m = DiscreteModel::new(ops.clone(), rates, Scheme::default()).expect("model");
        let ivp = solve_newton(&m, &SolverConfig::newton(), None).expect("ivp solve");
        all_converged &= ivp.converged;
        let c_q = compute_cq(&ivp, &m).expect("renewal constant");
        check(&m, &ivp, c_q);
        let cfg = SolverConfig::newton().with_boundary(Boundary::Bvp { c_q });
        let bvp = solve_newton(&m, &cfg, Some(&ivp.u_vector())).expect("bvp solve");
        all_converged &= bvp.converged;
        check(&m, &bvp, c_q);
    }
    outcome(
        all_converged && worst <= 1e-12,
        format!("{count} converged ivp/bvp states, worst |g(0)u_0 - C_q sum w q u| = {worst:.2e}"),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("1", "linear-oracle spectral convergence", linear_convergence),
        ("2", "nonlinear self-convergence", nonlinear_self_convergence),
        ("3", "operator exactness", operator_exactness),
        ("4", "brute-force oracle equivalence", brute_force_oracle),
        ("5", "conservation properties", conservation),
        ("6", "fixed-point cross-validation", fixed_point_cross_validation),
        ("7", "trend reproduction", trends),
        ("8", "equilibrium under time stepping", equilibrium),
        ("9", "jacobian correctness", jacobian_check),
        ("C_q", "renewal identity at converged states", renewal_identity),
    ];
    let mut failures = 0;
    for (id, title, run) in criteria {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failures += 1;
        }
        println!(
            "{} [{id}] {title}: {}",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
