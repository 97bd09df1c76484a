//! Command-line driver for steady flocculation distributions.
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use floc_steady::assembly::{Boundary, DiscreteModel};
use floc_steady::rates::{build_rates, validate_rates, ParamSet, RemovalConvention};
use floc_steady::solver::{solve_newton, solve_picard, SolverConfig, SteadyState};
use floc_steady::study::{
    mean_size, run_convergence_study, run_sweep, sweep_trends, write_convergence_csv,
    write_sweep_csv, SizeWeighting, StudyMode, SweepSpec, REFERENCE_DEGREE,
};
use floc_steady::theory::{check_theorem1, DEFAULT_THEOREM_SAMPLES};
use floc_steady::FlocError;

#[derive(Parser)]
#[command(version, about = "Steady-state size distributions of a flocculation model", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a single steady state and print it as JSON
    Solve(SolveArgs),
    /// Evaluate the fixed-point theorem's hypotheses and constants (JSON)
    CheckTheorem(TheoremArgs),
    /// Grid-refinement study (CSV of n, converged, error)
    Convergence(ConvergenceArgs),
    /// Parameter sweep over shear rates and growth coefficients (CSV)
    Sweep(SweepArgs),
    /// Check the standing assumptions on the rate functions
    ValidateRates(ValidateArgs),
}

#[derive(Args)]
struct ParamArgs {
    /// JSON parameter file; missing keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shear rate (overrides the config file)
    #[arg(long)]
    gamma_dot: Option<f64>,
    /// Growth coefficient (overrides the config file)
    #[arg(long)]
    c_g: Option<f64>,
    #[arg(long, value_enum)]
    cmu_convention: Option<Convention>,
    /// Output file (default stdout)
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long, value_enum, default_value_t = Mode::Ivp)]
    mode: Mode,
    /// Renewal constant, required in bvp mode
    #[arg(long)]
    cq: Option<f64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    boundary: BoundaryArgs,
    /// Polynomial degree of the grid
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, value_enum, default_value_t = SolveMethod::Newton)]
    method: SolveMethod,
    /// Residual tolerance (defaults to the method's own)
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct TheoremArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = DEFAULT_THEOREM_SAMPLES)]
    samples: usize,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ModeOfStudy::Linear)]
    study_mode: ModeOfStudy,
    /// Grid degrees, ascending (default 4..32 step 4 for linear, 40..100 for nonlinear)
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, default_value_t = REFERENCE_DEGREE)]
    reference_n: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    boundary: BoundaryArgs,
    /// Shear rates, comma separated
    #[arg(long = "gamma-values", value_delimiter = ',', default_value = "1,5,10,20")]
    gamma_values: Vec<f64>,
    /// Growth coefficients, comma separated
    #[arg(long = "c-g-values", value_delimiter = ',', default_value = "1")]
    c_g_values: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Worker threads (0 lets the pool decide)
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_enum, default_value_t = Weighting::Number)]
    weighting: Weighting,
    /// Print the monotonicity of each series to stderr
    #[arg(long)]
    trends: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ivp,
    Bvp,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Convention {
    ExpDecay,
    Reciprocal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMethod {
    Newton,
    Picard,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeOfStudy {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Number,
    Mass,
}

/// What went wrong, mapped onto the exit code.
enum Failure {
    NotConverged(String),
    Input(String),
}

impl From<FlocError> for Failure {
    fn from(e: FlocError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::NotConverged(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

impl ParamArgs {
    fn load(&self) -> Result<ParamSet, Failure> {
        let mut p = match &self.config {
            Some(path) => ParamSet::from_path(path)?,
            None => ParamSet::default(),
        };
        if let Some(g) = self.gamma_dot {
            p.gamma_dot = g;
        }
        if let Some(c) = self.c_g {
            p.c_g = c;
        }
        if let Some(c) = self.cmu_convention {
            p.c_mu_convention = match c {
                Convention::ExpDecay => RemovalConvention::ExpDecay,
                Convention::Reciprocal => RemovalConvention::Reciprocal,
            };
        }
        p.validate()?;
        Ok(p)
    }

    fn sink(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

impl BoundaryArgs {
    fn boundary(&self) -> Result<Boundary, Failure> {
        match (self.mode, self.cq) {
            (Mode::Ivp, None) => Ok(Boundary::Ivp),
            (Mode::Ivp, Some(_)) => Err(Failure::Input("--cq is only meaningful with --mode bvp".into())),
            (Mode::Bvp, Some(c_q)) => Ok(Boundary::Bvp { c_q }),
            (Mode::Bvp, None) => Err(Failure::Input("--mode bvp requires --cq".into())),
        }
    }
}

fn solve(args: &SolveArgs) -> CliResult {
    let params = args.params.load()?;
    let boundary = args.boundary.boundary()?;
    let model = DiscreteModel::build(args.n, build_rates(&params)?)?;
    let state = match args.method {
        SolveMethod::Newton => {
            let mut cfg = SolverConfig::newton().with_boundary(boundary);
            if let Some(tol) = args.tol {
                cfg = cfg.with_tol(tol);
            }
            cfg.validate()?;
            match boundary {
                Boundary::Ivp => solve_newton(&model, &cfg, None)?,
                Boundary::Bvp { .. } => {
                    // start from the normalized solution
                    let warm = solve_newton(&model, &cfg.with_boundary(Boundary::Ivp), None)?;
                    let init = warm.converged.then(|| warm.u_vector());
                    solve_newton(&model, &cfg, init.as_ref())?
                }
            }
        }
        SolveMethod::Picard => {
            let mut cfg = SolverConfig::picard().with_boundary(boundary);
            if let Some(tol) = args.tol {
                cfg = cfg.with_tol(tol);
            }
            solve_picard(&model, &cfg)?
        }
    };
    emit_state(&state, &mut args.params.sink()?)?;
    if state.converged {
        if let Ok(size) = mean_size(&state, SizeWeighting::Number) {
            eprintln!(
                "converged in {} iterations, residual {:.3e}, average size {size:.6}",
                state.iterations, state.residual_norm
            );
        }
        Ok(())
    } else {
        Err(Failure::NotConverged(format!(
            "no convergence after {} iterations ({:?}), residual {:.3e}",
            state.iterations, state.termination, state.residual_norm
        )))
    }
}

fn emit_state(state: &SteadyState, out: &mut dyn Write) -> CliResult {
    writeln!(out, "{}", state.to_json()?)?;
    out.flush()?;
    Ok(())
}

fn check_theorem(args: &TheoremArgs) -> CliResult {
    let rates = build_rates(&args.params.load()?)?;
    let report = check_theorem1(&rates, args.samples)?;
    let mut out = args.params.sink()?;
    let json = serde_json::to_string_pretty(&report).map_err(FlocError::from)?;
    writeln!(out, "{json}")?;
    out.flush()?;
    Ok(())
}

fn convergence(args: &ConvergenceArgs) -> CliResult {
    let params = args.params.load()?;
    let (mode, default_n): (StudyMode, Vec<usize>) = match args.study_mode {
        ModeOfStudy::Linear => (StudyMode::Linear, (4..=32).step_by(4).collect()),
        ModeOfStudy::Nonlinear => (StudyMode::Nonlinear, vec![40, 48, 56, 64, 80, 100]),
    };
    let n_values = if args.n.is_empty() { default_n } else { args.n.clone() };
    let rows = run_convergence_study(mode, &n_values, &params, args.reference_n, &SolverConfig::newton())?;
    write_convergence_csv(&rows, args.params.sink()?)?;
    let failed = rows.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        return Err(Failure::NotConverged(format!("{failed} of {} solves did not converge", rows.len())));
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> CliResult {
    let base = args.params.load()?;
    let mut spec = SweepSpec::new(args.gamma_values.clone(), args.c_g_values.clone(), args.n);
    spec.base = base;
    spec.boundary = args.boundary.boundary()?;
    spec.weighting = match args.weighting {
        Weighting::Number => SizeWeighting::Number,
        Weighting::Mass => SizeWeighting::Mass,
    };
    let rows = run_sweep(&spec, args.parallel)?;
    write_sweep_csv(&rows, args.params.sink()?)?;
    if args.trends {
        let t = sweep_trends(&rows);
        for (c_g, m) in &t.avg_size_in_gamma {
            eprintln!("c_g = {c_g}: avg_size in gamma_dot {m:?}");
        }
        for (g, m) in &t.linear_distance_in_c_g {
            eprintln!("gamma_dot = {g}: distance to linear state in c_g {m:?}");
        }
    }
    let failed = rows.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        return Err(Failure::NotConverged(format!("{failed} of {} points did not converge", rows.len())));
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> CliResult {
    let rates = build_rates(&args.params.load()?)?;
    let report = validate_rates(&rates, args.samples, args.tol)?;
    let mut out = args.params.sink()?;
    writeln!(out, "{report}")?;
    out.flush()?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Input("rate functions violate the standing assumptions".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::CheckTheorem(a) => check_theorem(a),
        Command::Convergence(a) => convergence(a),
        Command::Sweep(a) => sweep(a),
        Command::ValidateRates(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
