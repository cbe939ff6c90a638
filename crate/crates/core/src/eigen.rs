//! Principal half-eigenvalues of positively homogeneous operators by inverse
//! power iteration, and an empirical anti-maximum window.

use log::debug;

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::operators::{GradientMatrixSpec, OperatorSpec};
use crate::problem::{residual, ProblemSpec};
use crate::scalar::Real;
use crate::solver::{newton_solve, solve_operator, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSign {
    /// Positive eigenfunction.
    Plus,
    /// Negative eigenfunction.
    Minus,
}

impl EigenSign {
    fn unit<T: Real>(self) -> T {
        match self {
            EigenSign::Plus => T::one(),
            EigenSign::Minus => -T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions<T> {
    /// Relative tolerance on successive eigenvalue estimates.
    pub tol: T,
    pub max_iterations: usize,
    /// Accept when `max |F[φ] + λcφ| ≤ residual_factor · λ`.
    pub residual_factor: T,
    pub solve: SolveOptions<T>,
}

impl<T: Real> Default for EigenOptions<T> {
    fn default() -> Self {
        EigenOptions {
            tol: T::lit(1e-8).max(T::lit(64.0) * T::epsilon()),
            max_iterations: 500,
            residual_factor: T::lit(1e-6),
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult<T> {
    pub sign: EigenSign,
    pub lambda1: T,
    /// Normalized so that `max |φ| = 1`, zero on the boundary.
    pub phi1: ScalarField<T>,
    pub iterations: usize,
    /// `max |F[φ] + λ₁ c φ|` over interior nodes.
    pub residual: T,
}

fn check_weight<T: Real>(c: &ScalarField<T>) -> Result<()> {
    let grid = c.grid();
    if let Some(k) = grid.interior_nodes().find(|&k| !(c.get(k) >= T::zero())) {
        return Err(Error::Domain { node: k, reason: format!("weight must be nonnegative, got {}", c.get(k)) });
    }
    let threshold = T::lit(crate::coupling::DEFAULT_THRESHOLD);
    if grid.interior_nodes().all(|k| c.get(k) <= threshold) {
        return Err(Error::EmptyWeight);
    }
    Ok(())
}

/// `max |F[φ] + λ c φ|` over interior nodes.
pub fn eigen_residual<T: Real>(op: &OperatorSpec<T>, c: &ScalarField<T>, lambda: T, phi: &ScalarField<T>) -> Result<T> {
    let grid = c.grid().clone();
    let p = ProblemSpec::new(
        vec![op.clone()],
        GradientMatrixSpec::zero(&grid, 1),
        CouplingMatrix::new(vec![vec![c.clone()]], T::lit(crate::coupling::DEFAULT_THRESHOLD))?,
        VectorField::zeros(grid.clone(), 1),
    )?
    .with_lambda(lambda);
    Ok(residual(&p, &VectorField::replicate(phi, 1))?.sup_norm())
}

/// Residual that rounding alone produces when applying the stencil to `|φ| ≤ 1`.
fn round_off_floor<T: Real>(op: &OperatorSpec<T>) -> T {
    let grid = op.grid();
    let (_, upper) = op.ellipticity();
    let scale = (0..grid.dim())
        .map(|a| {
            let h = grid.spacing(a);
            T::two() * upper / (h * h) + op.max_drift() / h
        })
        .fold(T::zero(), |acc, v| acc + v);
    T::lit(64.0) * T::epsilon() * scale
}

/// Principal eigenpair with an eigenfunction of the requested sign, started from the
/// constant field of that sign.
pub fn principal_eigenpair<T: Real>(
    op: &OperatorSpec<T>,
    c: &ScalarField<T>,
    sign: EigenSign,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    let start = ScalarField::from_fn_dirichlet(c.grid().clone(), |_, _| sign.unit());
    principal_eigenpair_from(op, c, sign, &start, opts)
}

/// Same as [`principal_eigenpair`] from a caller-supplied start of the right sign.
pub fn principal_eigenpair_from<T: Real>(
    op: &OperatorSpec<T>,
    c: &ScalarField<T>,
    sign: EigenSign,
    start: &ScalarField<T>,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    check_weight(c)?;
    c.check_same_grid(start)?;
    let grid = c.grid().clone();
    let s = sign.unit::<T>();
    if grid.interior_nodes().any(|k| !(s * start.get(k) > T::zero())) {
        return Err(Error::InvalidProblem("start field must have the requested sign inside".into()));
    }
    let mut v = start.scale(T::one() / start.sup_norm());
    v.zero_boundary();
    let mut warm: Option<ScalarField<T>> = None;
    let mut lambda = T::nan();
    for it in 1..=opts.max_iterations {
        let source = c.zip_map(&v, |a, b| a * b)?;
        let solved = solve_operator(op, &source, warm.as_ref(), &opts.solve)?;
        if !solved.converged {
            return Err(Error::NoConvergence {
                iterations: solved.iterations,
                residual: solved.residual_norm.to_f64_lossy(),
            });
        }
        let w = solved.u.component(0).clone();
        let size = w.sup_norm();
        if !(size > T::zero() && size.is_finite()) {
            return Err(Error::EigenNoConvergence { iterations: it, lambda: lambda.to_f64_lossy() });
        }
        let next = T::one() / size;
        let phi = w.scale(next);
        let settled = (next - lambda).abs() <= opts.tol * next;
        lambda = next;
        warm = Some(w);
        if settled {
            let res = eigen_residual(op, c, lambda, &phi)?;
            if res <= (opts.residual_factor * lambda).max(round_off_floor(op)) {
                debug!("eigenpair ({sign:?}) λ = {lambda:e} after {it} iterations");
                return Ok(EigenResult { sign, lambda1: lambda, phi1: phi, iterations: it, residual: res });
            }
        }
        v = phi;
    }
    Err(Error::EigenNoConvergence { iterations: opts.max_iterations, lambda: lambda.to_f64_lossy() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntiMaxSample<T> {
    pub lambda: T,
    /// `(min u, max u)` over interior nodes, `None` when the solve failed.
    pub range: Option<(T, T)>,
    pub error: Option<String>,
}

impl<T: Real> AntiMaxSample<T> {
    pub fn negative(&self) -> bool {
        self.range.is_some_and(|(_, hi)| hi < T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntiMaxReport<T> {
    /// `λ₁⁻` of the operator with this weight.
    pub lambda1: T,
    /// Width of the contiguous window above `λ₁⁻` on which `u < 0`; `None` if the
    /// first sample is already not negative or the input is degenerate.
    pub epsilon0: Option<T>,
    /// `f ≡ 0` gives `u ≡ 0` and no window.
    pub degenerate: bool,
    pub table: Vec<AntiMaxSample<T>>,
}

/// Scans `λ = λ₁⁻ + k·step`, solving `−F[u] − λcu = f` for `f ⪈ 0` and recording the sign of `u`.
pub fn antimaximum_window<T: Real>(
    op: &OperatorSpec<T>,
    c: &ScalarField<T>,
    f: &ScalarField<T>,
    step: T,
    max_steps: usize,
    opts: &EigenOptions<T>,
) -> Result<AntiMaxReport<T>> {
    if !(step > T::zero()) {
        return Err(Error::InvalidProblem("lambda step must be positive".into()));
    }
    c.check_same_grid(f)?;
    let grid = f.grid().clone();
    if let Some(k) = grid.interior_nodes().find(|&k| !(f.get(k) >= T::zero())) {
        return Err(Error::Domain { node: k, reason: "forcing must be nonnegative".into() });
    }
    let lambda1 = principal_eigenpair(op, c, EigenSign::Minus, opts)?.lambda1;
    let degenerate = grid.interior_nodes().all(|k| f.get(k) == T::zero());
    let base = ProblemSpec::scalar(op.clone(), T::zero(), c.clone(), f.clone())?;
    let zero = VectorField::zeros(grid.clone(), 1);
    let mut table = Vec::with_capacity(max_steps);
    for k in 1..=max_steps {
        let lambda = lambda1 + T::from_usize_lossy(k) * step;
        let sample = match newton_solve(&base.clone().with_lambda(lambda), &zero, &opts.solve) {
            Ok(s) if s.converged => {
                let u = s.u.component(0);
                let (lo, hi) = grid
                    .interior_nodes()
                    .map(|n| u.get(n))
                    .fold((T::infinity(), T::neg_infinity()), |(lo, hi), x| (lo.min(x), hi.max(x)));
                AntiMaxSample { lambda, range: Some((lo, hi)), error: None }
            }
            Ok(s) => AntiMaxSample {
                lambda,
                range: None,
                error: Some(format!("no convergence (residual {:e})", s.residual_norm.to_f64_lossy())),
            },
            Err(e) => AntiMaxSample { lambda, range: None, error: Some(e.to_string()) },
        };
        table.push(sample);
    }
    let run = table.iter().take_while(|s| s.negative()).count();
    let epsilon0 = (!degenerate && run > 0).then(|| T::from_usize_lossy(run) * step);
    Ok(AntiMaxReport { lambda1, epsilon0, degenerate, table })
}
