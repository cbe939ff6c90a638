//! Command-line front end: config parsing, subcommand dispatch and output files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dump;
pub mod expr;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use quadgrad::{
    arclength_continue, check_hypotheses, estimate_constants, export_branch, export_region, natural_continue,
    newton_solve, nonexistence_probe_Pk, principal_eigenpair, solve_P0, two_parameter_scan, EigenOptions, EigenSign,
    Error as CoreError, ProbeOutcome, ProblemSpec, ScanOptions, Solution, SolveOptions, StepControls, StopReason,
};

use crate::config::{ConfigDocument, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "quadgrad",
    version,
    about = "Solver and continuation toolkit for elliptic systems with quadratic gradient terms"
)]
struct Cli {
    /// Log solver progress to stderr (`RUST_LOG` refines it).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Block triangular form of the coupling and the 1×1-block check.
    Coupling { config: PathBuf },
    /// Solve at one λ on the lower branch and write a solution dump.
    Solve {
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Principal eigenvalue of one component's operator with weight c_ii.
    Eigen {
        config: PathBuf,
        /// 1-based component index.
        #[arg(long)]
        component: usize,
        /// `+` for a positive eigenfunction, `-` for a negative one.
        #[arg(long, value_parser = parse_sign, allow_hyphen_values = true)]
        sign: EigenSign,
    },
    /// Follow the lower branch from one λ to another and write a branch CSV.
    Continue {
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        /// Pseudo-arclength instead of natural continuation; passes folds.
        #[arg(long)]
        arclength: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Classify a (λ, γ) grid and write a region CSV.
    Scan {
        config: PathBuf,
        /// `start:end:count` or a comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        lambda_grid: String,
        #[arg(long, allow_hyphen_values = true)]
        gamma_grid: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check the standing hypotheses, report estimate constants, optionally run the P_k probe.
    Verify {
        config: PathBuf,
        #[arg(long)]
        probe_k: Option<usize>,
    },
}

fn parse_sign(s: &str) -> Result<EigenSign, String> {
    match s {
        "+" | "plus" => Ok(EigenSign::Plus),
        "-" | "minus" => Ok(EigenSign::Minus),
        _ => Err(format!("expected `+` or `-`, got `{s}`")),
    }
}

/// Parses `start:end:count` (inclusive, evenly spaced) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let number =
        |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("`{t}` is not a finite number"));
    match parts.len() {
        1 => s.split(',').map(number).collect(),
        3 => {
            let (a, b) = (number(parts[0])?, number(parts[1])?);
            let count = parts[2].trim().parse::<usize>().map_err(|_| format!("`{}` is not a count", parts[2]))?;
            match count {
                0 => Err("grid count must be positive".into()),
                1 => Ok(vec![a]),
                _ => Ok((0..count).map(|k| a + (b - a) * k as f64 / (count - 1) as f64).collect()),
            }
        }
        _ => Err(format!("`{s}` is neither `start:end:count` nor a list")),
    }
}

enum Failure {
    Config(String),
    NoConvergence(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NoConvergence { .. }
            | CoreError::EigenNoConvergence { .. }
            | CoreError::SingularJacobian { .. }
            | CoreError::MonotonicityViolation { .. }
            | CoreError::Continuation(_) => Failure::NoConvergence(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

/// Runs one command; `argv[0]` is the program name. Returns the exit code.
pub fn run_command<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    }
    let result = match cli.command {
        Command::Coupling { config } => coupling(&config, out),
        Command::Solve { config, lambda, gamma, output } => solve(&config, lambda, gamma, output, out),
        Command::Eigen { config, component, sign } => eigen(&config, component, sign, out),
        Command::Continue { config, from, to, arclength, output } => {
            continue_branch(&config, from, to, arclength, output, out, err)
        }
        Command::Scan { config, lambda_grid, gamma_grid, output } => {
            scan(&config, &lambda_grid, &gamma_grid, output, out, err)
        }
        Command::Verify { config, probe_k } => verify(&config, probe_k, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::NoConvergence(m)) => {
            let _ = writeln!(err, "no convergence: {m}");
            EXIT_NO_CONVERGENCE
        }
    }
}

struct Loaded {
    doc: ConfigDocument,
    problem: ProblemSpec<f64>,
    base: PathBuf,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let (doc, problem, base) = config::load(path)?;
    Ok(Loaded { doc, problem, base })
}

impl Loaded {
    fn solve_options(&self) -> SolveOptions<f64> {
        let mut o = SolveOptions::default();
        if let Some(t) = self.doc.run.tol {
            o.newton_tol = t;
        }
        if let Some(m) = self.doc.run.max_iterations {
            o.max_newton_iters = m;
        }
        o
    }

    fn step_controls(&self) -> StepControls<f64> {
        let mut c = StepControls { solve: self.solve_options(), ..StepControls::default() };
        if let Some(s) = self.doc.run.initial_step {
            c.initial_step = s;
        }
        if let Some(s) = self.doc.run.max_step {
            c.max_step = s;
        }
        c
    }

    fn eigen_options(&self) -> EigenOptions<f64> {
        EigenOptions { solve: self.solve_options(), ..EigenOptions::default() }
    }

    /// CLI path as given, config path relative to the config's directory.
    fn output_path(&self, flag: Option<PathBuf>, configured: &Option<String>) -> Option<PathBuf> {
        flag.or_else(|| configured.as_ref().map(|p| self.base.join(p)))
    }
}

/// Lower-branch solution at `lambda`: Newton from `u₀`, then natural continuation
/// from `λ = 0` when the direct attempt fails.
fn lower_solution(p: &ProblemSpec<f64>, lambda: f64, ctl: &StepControls<f64>) -> Result<Solution<f64>, Failure> {
    let u0 = solve_P0(p, &ctl.solve);
    if !u0.converged {
        return Err(Failure::NoConvergence(format!("λ = 0 problem: residual {:e}", u0.residual_norm)));
    }
    if lambda == 0.0 {
        return Ok(u0);
    }
    let at = p.clone().with_lambda(lambda);
    if let Ok(s) = newton_solve(&at, &u0.u, &ctl.solve) {
        if s.converged {
            return Ok(s);
        }
    }
    log::info!("direct solve at λ = {lambda} failed; continuing from λ = 0");
    let branch = natural_continue(p, 0.0, lambda, &u0, ctl)?;
    match (branch.stop, branch.points.last()) {
        (StopReason::ReachedEnd, Some(last)) => Ok(last.solution.clone()),
        (stop, last) => Err(Failure::NoConvergence(format!(
            "lower branch stopped ({stop:?}) at λ = {}",
            last.map_or(0.0, |p| p.lambda)
        ))),
    }
}

fn open_output(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn coupling(path: &Path, out: &mut dyn Write) -> Outcome {
    let l = load(path)?;
    let c = l.problem.coupling();
    let form = quadgrad::block_triangular_form(c);
    let h3 = quadgrad::check_H3(&form, c);
    let blocks: Vec<String> = form
        .blocks()
        .iter()
        .map(|b| format!("{{{}}}", b.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",")))
        .collect();
    writeln!(out, "components: {}", c.n())?;
    writeln!(out, "blocks: {}", blocks.join(" "))?;
    writeln!(out, "fully coupled: {}", quadgrad::is_fully_coupled(c))?;
    if h3.pass {
        writeln!(out, "H3: pass")?;
        Ok(EXIT_OK)
    } else {
        let bad: Vec<String> = h3.offending_blocks.iter().map(|&b| blocks[b].clone()).collect();
        writeln!(out, "H3: FAIL, 1x1 blocks with vanishing diagonal coupling: {}", bad.join(" "))?;
        Ok(EXIT_HYPOTHESIS)
    }
}

fn solve(path: &Path, lambda: f64, gamma: Option<f64>, output: Option<PathBuf>, out: &mut dyn Write) -> Outcome {
    let l = load(path)?;
    let mut p = l.problem.clone().with_lambda(lambda);
    if let Some(g) = gamma {
        p = p.with_gamma(g);
    }
    let s = lower_solution(&p, lambda, &l.step_controls())?;
    match l.output_path(output, &l.doc.run.output) {
        Some(file) => {
            dump::write_dump(open_output(&file)?, p.grid(), lambda, p.gamma(), &s)?;
            writeln!(
                out,
                "λ = {lambda}: residual {:e}, sup norm {:e}, written to {}",
                s.residual_norm,
                s.u.sup_norm(),
                file.display()
            )?;
        }
        None => dump::write_dump(&mut *out, p.grid(), lambda, p.gamma(), &s)?,
    }
    Ok(EXIT_OK)
}

fn eigen(path: &Path, component: usize, sign: EigenSign, out: &mut dyn Write) -> Outcome {
    let l = load(path)?;
    let n = l.problem.n();
    if component == 0 || component > n {
        return Err(Failure::Config(format!("component {component} out of range 1..={n}")));
    }
    let i = component - 1;
    let weight = l.problem.coupling().entry(i, i);
    let r = principal_eigenpair(&l.problem.operators()[i], weight, sign, &l.eigen_options())?;
    writeln!(out, "lambda1 = {:.10}", r.lambda1)?;
    writeln!(out, "iterations = {}", r.iterations)?;
    writeln!(out, "residual = {:e}", r.residual)?;
    Ok(EXIT_OK)
}

fn continue_branch(
    path: &Path,
    from: f64,
    to: f64,
    arclength: bool,
    output: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let l = load(path)?;
    let p = l.problem.clone().with_lambda(from);
    let mut ctl = l.step_controls();
    let start = lower_solution(&p, from, &ctl)?;
    let branch = if arclength {
        ctl.lambda_window = Some((from.min(to), from.max(to)));
        let direction = if to >= from { 1.0 } else { -1.0 };
        let length = l.doc.run.max_arclength.unwrap_or(ScanOptions::<f64>::default().max_arclength);
        arclength_continue(&p, &start, direction, length, &ctl)?
    } else {
        natural_continue(&p, from, to, &start, &ctl)?
    };
    let id = if arclength { "arclength" } else { "natural" };
    let target = l.output_path(output, &l.doc.run.branch_csv);
    let summary: &mut dyn Write = match &target {
        Some(file) => {
            export_branch(&branch, id, open_output(file)?)?;
            &mut *out
        }
        None => {
            export_branch(&branch, id, &mut *out)?;
            &mut *err
        }
    };
    writeln!(summary, "{} points, stop: {:?}", branch.points.len(), branch.stop)?;
    for f in &branch.folds {
        writeln!(summary, "fold at λ = {:.8} (bracket [{:.8}, {:.8}])", f.lambda, f.bracket.0, f.bracket.1)?;
    }
    Ok(EXIT_OK)
}

fn scan(
    path: &Path,
    lambda_grid: &str,
    gamma_grid: &str,
    output: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    let l = load(path)?;
    let lambdas = parse_grid(lambda_grid).map_err(|e| Failure::Config(format!("--lambda-grid: {e}")))?;
    let gammas = parse_grid(gamma_grid).map_err(|e| Failure::Config(format!("--gamma-grid: {e}")))?;
    let mut opts = ScanOptions { steps: l.step_controls(), ..ScanOptions::default() };
    if let Some(a) = l.doc.run.max_arclength {
        opts.max_arclength = a;
    }
    if let Some(t) = l.doc.run.fold_tol {
        opts.fold_tol = t;
    }
    let map = two_parameter_scan(&l.problem, &lambdas, &gammas, &opts)?;
    let target = l.output_path(output, &l.doc.run.region_csv);
    let summary: &mut dyn Write = match &target {
        Some(file) => {
            export_region(&map, open_output(file)?)?;
            &mut *out
        }
        None => {
            export_region(&map, &mut *out)?;
            &mut *err
        }
    };
    for ((g, lower), (_, negative)) in map.fold_lower.iter().zip(&map.fold_negative) {
        let show =
            |f: &Option<quadgrad::Fold<f64>>| f.as_ref().map_or("none".to_string(), |f| format!("{:.6}", f.lambda));
        writeln!(summary, "γ = {g}: lower-branch fold {}, nonpositive-branch fold {}", show(lower), show(negative))?;
    }
    Ok(EXIT_OK)
}

fn verify(path: &Path, probe_k: Option<usize>, out: &mut dyn Write) -> Outcome {
    let l = load(path)?;
    let p = &l.problem;
    let report = check_hypotheses(p, &l.solve_options())?;
    let m = &report.m_bounds;
    writeln!(out, "(M): {} (eigenvalues of M in [{:e}, {:e}])", pass_word(m.pass), m.mu_min, m.mu_max)?;
    if !m.pass {
        let w = &m.witness;
        writeln!(out, "  witness: component {}, node {}", w.component + 1, w.node)?;
    }
    writeln!(out, "H3: {}", pass_word(report.h3.pass))?;
    match &report.h4 {
        Some(h4) => writeln!(out, "H4: {}", pass_word(h4.pass))?,
        None => writeln!(out, "H4: not checked, λ = 0 problem did not converge")?,
    }
    writeln!(out, "fully coupled: {}", report.fully_coupled)?;
    if !report.h0.converged {
        return Err(Failure::NoConvergence(format!("λ = 0 problem: residual {:e}", report.h0.residual_norm)));
    }
    if !report.all_pass() {
        return Ok(EXIT_HYPOTHESIS);
    }
    let u0 = report.h0.u.clone();
    let k = estimate_constants(p, std::slice::from_ref(&u0), &l.eigen_options())?;
    writeln!(out, "C0 = {:e}", k.c0)?;
    writeln!(out, "m1 = {:e}, m2 = {:e}", k.m1, k.m2)?;
    writeln!(out, "lambda1 = {:.8}, A = {:e}", k.lambda1, k.a)?;
    let quotients: Vec<String> = k.i_quotients.iter().map(|q| format!("{q:e}")).collect();
    writeln!(out, "boundary quotients = [{}]", quotients.join(", "))?;
    if let Some(kk) = probe_k {
        let top = l.doc.run.window.map_or(k.lambda1, |w| w.1);
        let probe = nonexistence_probe_Pk(p, kk, &k, top, Some(&u0), &l.solve_options())?;
        let converged = probe.attempts.iter().filter(|a| a.converged).count();
        writeln!(out, "P_{kk} probe: {} seeds, {converged} converged", probe.attempts.len())?;
        if let ProbeOutcome::CounterexampleFound(s) = &probe.outcome {
            writeln!(out, "P_{kk} probe: counterexample found (sup norm {:e})", s.u.sup_norm())?;
            return Ok(EXIT_HYPOTHESIS);
        }
        writeln!(out, "P_{kk} probe: all seeds failed")?;
    }
    Ok(EXIT_OK)
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}
