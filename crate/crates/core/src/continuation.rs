//! Solution branches in `λ`: natural and pseudo-arclength continuation, fold
//! detection, seed ladders for secondary branches, the `(λ, γ)` region scan,
//! and CSV export.

use std::io::Write;
use std::path::Path;

use log::debug;
use rayon::prelude::*;

use crate::eigen::{principal_eigenpair, EigenOptions, EigenSign};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::linalg::BandLu;
use crate::problem::{assemble, lambda_derivative, Assembly, ProblemSpec};
use crate::scalar::{max_abs, Real};
use crate::solver::{compare_order, newton_solve, solve_P0, OrderReport, Solution, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct StepControls<T> {
    pub initial_step: T,
    pub min_step: T,
    pub max_step: T,
    /// Step growth after a successful step.
    pub growth: T,
    /// Reject a step whose weighted distance exceeds `max_jump · (1 + ‖u‖_w)`.
    pub max_jump: T,
    pub max_points: usize,
    /// Stop once a component's sup-norm exceeds this value.
    pub sup_ceiling: T,
    /// Stop once `λ` leaves this window.
    pub lambda_window: Option<(T, T)>,
    pub max_corrector_iterations: usize,
    /// Arclength tracing stops one point after `λ` turns.
    pub stop_after_fold: bool,
    pub solve: SolveOptions<T>,
}

impl<T: Real> Default for StepControls<T> {
    fn default() -> Self {
        StepControls {
            initial_step: T::lit(0.1),
            min_step: T::lit(1e-8),
            max_step: T::lit(0.5),
            growth: T::lit(1.5),
            max_jump: T::one(),
            max_points: 5000,
            sup_ceiling: T::lit(1e6),
            lambda_window: None,
            max_corrector_iterations: 12,
            stop_after_fold: false,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint<T> {
    pub lambda: T,
    pub gamma: T,
    pub solution: Solution<T>,
    pub sup_norms: Vec<T>,
    pub mins: Vec<T>,
    pub arclength: T,
    pub fold_flag: bool,
}

impl<T: Real> BranchPoint<T> {
    fn new(lambda: T, gamma: T, solution: Solution<T>, arclength: T) -> Self {
        BranchPoint {
            lambda,
            gamma,
            sup_norms: solution.u.sup_norms(),
            mins: solution.u.mins(),
            solution,
            arclength,
            fold_flag: false,
        }
    }

    pub fn u(&self) -> &VectorField<T> {
        &self.solution.u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold<T> {
    /// Fitted turning value.
    pub lambda: T,
    /// Sampled extreme `λ` and fitted vertex, in increasing order.
    pub bracket: (T, T),
    /// Index of the flagged branch point.
    pub index: usize,
}

impl<T: Real> Fold<T> {
    pub fn width(&self) -> T {
        self.bracket.1 - self.bracket.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    ReachedEnd,
    /// Step fell below the minimum; near a fold for natural continuation.
    StepUnderflow,
    SupCeiling,
    LambdaWindow,
    MaxArclength,
    MaxPoints,
    /// `λ` turned and the controls asked to stop there.
    FoldPassed,
    /// The bordered corrector broke down.
    Breakdown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub origin: String,
    pub points: Vec<BranchPoint<T>>,
    pub folds: Vec<Fold<T>>,
    pub stop: StopReason,
}

impl<T: Real> Branch<T> {
    pub fn lambdas(&self) -> Vec<T> {
        lambdas(&self.points)
    }

    pub fn last(&self) -> &BranchPoint<T> {
        self.points.last().expect("branches hold at least one point")
    }

    fn finish(mut self) -> Self {
        self.folds = detect_fold(&self);
        for p in &mut self.points {
            p.fold_flag = false;
        }
        for f in &self.folds {
            self.points[f.index].fold_flag = true;
        }
        self
    }
}

/// `sqrt(Σ du²/N + dλ²)` with `N` the grid node count.
fn weighted_norm<T: Real>(du: &[T], dlambda: T, nodes: usize) -> T {
    let s: T = du.iter().map(|&x| x * x).sum();
    (s / T::from_usize_lossy(nodes) + dlambda * dlambda).sqrt()
}

fn field_norm<T: Real>(u: &[T], nodes: usize) -> T {
    weighted_norm(u, T::zero(), nodes)
}

fn exceeds_ceiling<T: Real>(u: &VectorField<T>, ctl: &StepControls<T>) -> bool {
    u.sup_norms().iter().any(|&s| !(s <= ctl.sup_ceiling))
}

fn outside_window<T: Real>(lambda: T, ctl: &StepControls<T>) -> bool {
    ctl.lambda_window.is_some_and(|(lo, hi)| lambda < lo || lambda > hi)
}

fn validate_controls<T: Real>(ctl: &StepControls<T>) -> Result<()> {
    if ctl.min_step > T::zero()
        && ctl.initial_step >= ctl.min_step
        && ctl.max_step >= ctl.initial_step
        && ctl.growth >= T::one()
    {
        ctl.solve.validate()
    } else {
        Err(Error::InvalidProblem("step controls need 0 < min_step ≤ initial_step ≤ max_step and growth ≥ 1".into()))
    }
}

fn converged_at<T: Real>(
    p: &ProblemSpec<T>,
    lambda: T,
    guess: &VectorField<T>,
    opts: &SolveOptions<T>,
) -> Option<Solution<T>> {
    match newton_solve(&p.clone().with_lambda(lambda), guess, opts) {
        Ok(s) if s.converged && s.u.is_finite() => Some(s),
        Ok(_) => None,
        Err(e) => {
            debug!("newton at λ = {lambda:e}: {e}");
            None
        }
    }
}

/// Steps `λ` from `lambda_start` to `lambda_end`, warm-starting each solve from
/// the previous point and halving the step on failure.
pub fn natural_continue<T: Real>(
    p: &ProblemSpec<T>,
    lambda_start: T,
    lambda_end: T,
    initial: &Solution<T>,
    ctl: &StepControls<T>,
) -> Result<Branch<T>> {
    validate_controls(ctl)?;
    let nodes = p.grid().node_count();
    let first = converged_at(p, lambda_start, &initial.u, &ctl.solve)
        .ok_or_else(|| Error::Continuation(format!("no converged solution at the start λ = {lambda_start}")))?;
    let mut points = vec![BranchPoint::new(lambda_start, p.gamma(), first, T::zero())];
    let direction = if lambda_end >= lambda_start { T::one() } else { -T::one() };
    let mut step = ctl.initial_step;
    let stop = loop {
        let last = points.last().expect("nonempty");
        if last.lambda == lambda_end {
            break StopReason::ReachedEnd;
        }
        if points.len() >= ctl.max_points {
            break StopReason::MaxPoints;
        }
        let remaining = (lambda_end - last.lambda).abs();
        let lambda = if step >= remaining { lambda_end } else { last.lambda + direction * step };
        let accepted = converged_at(p, lambda, last.u(), &ctl.solve).and_then(|s| {
            let du: Vec<T> = s.u.to_flat().iter().zip(last.u().to_flat()).map(|(a, b)| *a - b).collect();
            let dist = weighted_norm(&du, lambda - last.lambda, nodes);
            let limit = ctl.max_jump * (T::one() + field_norm(&last.u().to_flat(), nodes));
            (dist <= limit).then_some((s, dist))
        });
        match accepted {
            Some((s, dist)) => {
                let arclength = last.arclength + dist;
                let ceiling = exceeds_ceiling(&s.u, ctl);
                points.push(BranchPoint::new(lambda, p.gamma(), s, arclength));
                if ceiling {
                    break StopReason::SupCeiling;
                }
                step = (step * ctl.growth).min(ctl.max_step);
            }
            None => {
                step *= T::half();
                if step < ctl.min_step {
                    break StopReason::StepUnderflow;
                }
            }
        }
    };
    let origin = format!("natural continuation from λ = {lambda_start} toward {lambda_end}");
    Ok(Branch { origin, points, folds: Vec::new(), stop }.finish())
}

struct ArcState<T> {
    u: Vec<T>,
    lambda: T,
    tolerance: T,
}

/// Solves `J z = −∂r/∂λ` and returns the unit tangent `(z, 1)` oriented by `direction`.
fn initial_tangent<T: Real>(p: &ProblemSpec<T>, u: &[T], direction: T) -> Result<(Vec<T>, T)> {
    let (_, jac) = assemble(p, u, &Assembly::full(), true);
    let lu = BandLu::factor_unchecked(&jac.expect("jacobian requested"))?;
    let rhs: Vec<T> = lambda_derivative(p, u).iter().map(|&v| -v).collect();
    let z = lu.solve(&rhs);
    let norm = weighted_norm(&z, T::one(), p.grid().node_count());
    let s = direction.signum() / norm;
    Ok((z.iter().map(|&v| v * s).collect(), s))
}

/// Newton corrector on the bordered system `r(u, λ) = 0`, `⟨t, X − X₀⟩_w = ds`.
fn correct<T: Real>(
    p: &ProblemSpec<T>,
    base: &ArcState<T>,
    tangent: (&[T], T),
    ds: T,
    ctl: &StepControls<T>,
) -> Option<ArcState<T>> {
    let nodes = T::from_usize_lossy(p.grid().node_count());
    let (tu, tl) = tangent;
    let mut u: Vec<T> = base.u.iter().zip(tu).map(|(&a, &t)| a + ds * t).collect();
    let mut lambda = base.lambda + ds * tl;
    for _ in 0..ctl.max_corrector_iterations {
        let pl = p.clone().with_lambda(lambda);
        let (r, jac) = assemble(&pl, &u, &Assembly::full(), true);
        let dot: T = tu.iter().zip(u.iter().zip(&base.u)).map(|(&t, (&a, &b))| t * (a - b)).sum();
        let g = dot / nodes + tl * (lambda - base.lambda) - ds;
        if !(max_abs(&r).is_finite() && g.is_finite()) {
            return None;
        }
        let jac = jac.expect("jacobian requested");
        let tol = crate::solver::attainable_tol(ctl.solve.newton_tol, &jac, &u);
        if max_abs(&r) <= tol && g.abs() <= tol {
            return Some(ArcState { u, lambda, tolerance: tol });
        }
        let lu = BandLu::factor_unchecked(&jac).ok()?;
        let a = lu.solve(&r.iter().map(|&v| -v).collect::<Vec<_>>());
        let b = lu.solve(&lambda_derivative(&pl, &u).iter().map(|&v| -v).collect::<Vec<_>>());
        let ta: T = tu.iter().zip(&a).map(|(&t, &x)| t * x).sum();
        let tb: T = tu.iter().zip(&b).map(|(&t, &x)| t * x).sum();
        let denom = tb / nodes + tl;
        if denom == T::zero() || !denom.is_finite() {
            return None;
        }
        let dl = (-g - ta / nodes) / denom;
        for ((x, &ai), &bi) in u.iter_mut().zip(&a).zip(&b) {
            *x += ai + bi * dl;
        }
        lambda += dl;
    }
    None
}

/// Pseudo-arclength continuation in `(λ, u)` with the weighted norm
/// `sqrt(‖u‖²/N + λ²)`; `direction` fixes the initial sign of `dλ/ds`.
pub fn arclength_continue<T: Real>(
    p: &ProblemSpec<T>,
    start: &Solution<T>,
    direction: T,
    max_arclength: T,
    ctl: &StepControls<T>,
) -> Result<Branch<T>> {
    validate_controls(ctl)?;
    let nodes = p.grid().node_count();
    let lambda0 = p.lambda();
    let first = converged_at(p, lambda0, &start.u, &ctl.solve)
        .ok_or_else(|| Error::Continuation(format!("start does not converge at λ = {lambda0}")))?;
    let mut state = ArcState { u: first.u.to_flat(), lambda: lambda0, tolerance: first.tolerance };
    let (mut tu, mut tl) = initial_tangent(p, &state.u, direction)?;
    let mut points = vec![BranchPoint::new(lambda0, p.gamma(), first, T::zero())];
    let mut ds = ctl.initial_step;
    let stop = loop {
        let last = points.last().expect("nonempty");
        if last.arclength >= max_arclength {
            break StopReason::MaxArclength;
        }
        if points.len() >= ctl.max_points {
            break StopReason::MaxPoints;
        }
        let step = ds.min(max_arclength - last.arclength).max(ctl.min_step);
        let accepted = correct(p, &state, (&tu, tl), step, ctl).and_then(|next| {
            let du: Vec<T> = next.u.iter().zip(&state.u).map(|(&a, &b)| a - b).collect();
            let dist = weighted_norm(&du, next.lambda - state.lambda, nodes);
            let limit = ctl.max_jump * (T::one() + field_norm(&state.u, nodes));
            (dist <= limit && dist > T::zero()).then_some((next, du, dist))
        });
        let Some((next, du, dist)) = accepted else {
            ds *= T::half();
            if ds < ctl.min_step {
                break StopReason::Breakdown(format!(
                    "corrector failed below the minimum step at λ = {}",
                    state.lambda
                ));
            }
            continue;
        };
        // secant tangent keeps the orientation through folds
        tu = du.iter().map(|&v| v / dist).collect();
        tl = (next.lambda - state.lambda) / dist;
        let u = VectorField::from_flat(p.grid(), p.n(), &next.u);
        let r = crate::problem::residual(&p.clone().with_lambda(next.lambda), &u)?.sup_norm();
        let solution = Solution {
            u,
            residual_norm: r,
            converged: true,
            iterations: 0,
            jacobian_singularity_indicator: T::nan(),
            tolerance: next.tolerance,
        };
        let arclength = last.arclength + dist;
        let ceiling = exceeds_ceiling(&solution.u, ctl);
        let leaving = outside_window(next.lambda, ctl);
        points.push(BranchPoint::new(next.lambda, p.gamma(), solution, arclength));
        state = next;
        if ceiling {
            break StopReason::SupCeiling;
        }
        if leaving {
            break StopReason::LambdaWindow;
        }
        if ctl.stop_after_fold && !detect_fold_samples(&arclengths(&points), &lambdas(&points)).is_empty() {
            break StopReason::FoldPassed;
        }
        ds = (ds * ctl.growth).min(ctl.max_step);
    };
    let origin = format!("arclength continuation from λ = {lambda0}");
    Ok(Branch { origin, points, folds: Vec::new(), stop }.finish())
}

/// Turning points of sampled `λ(s)`: every sign change of `Δλ` is fitted by the
/// parabola through the extreme sample and its neighbours.
pub fn detect_fold_samples<T: Real>(arclength: &[T], lambda: &[T]) -> Vec<Fold<T>> {
    let mut folds = Vec::new();
    for i in 1..lambda.len().saturating_sub(1) {
        let before = lambda[i] - lambda[i - 1];
        let after = lambda[i + 1] - lambda[i];
        if !(before * after < T::zero()) {
            continue;
        }
        let (s0, s1, s2) = (arclength[i - 1], arclength[i], arclength[i + 1]);
        let (l0, l1, l2) = (lambda[i - 1], lambda[i], lambda[i + 1]);
        // divided differences of the interpolating parabola
        let d01 = (l1 - l0) / (s1 - s0);
        let d12 = (l2 - l1) / (s2 - s1);
        let curvature = (d12 - d01) / (s2 - s0);
        let vertex = if curvature != T::zero() && curvature.is_finite() {
            let slope_at_s1 = d01 + curvature * (s1 - s0);
            l1 - slope_at_s1 * slope_at_s1 / (T::lit(4.0) * curvature)
        } else {
            l1
        };
        let bracket = if vertex >= l1 { (l1, vertex) } else { (vertex, l1) };
        folds.push(Fold { lambda: vertex, bracket, index: i });
    }
    folds
}

pub fn detect_fold<T: Real>(branch: &Branch<T>) -> Vec<Fold<T>> {
    detect_fold_samples(&arclengths(&branch.points), &lambdas(&branch.points))
}

/// Traces with arclength continuation until the first fold, then re-traces from just
/// before it with smaller steps until the bracket is no wider than `tol`.
pub fn locate_fold<T: Real>(
    p: &ProblemSpec<T>,
    start: &Solution<T>,
    direction: T,
    max_arclength: T,
    tol: T,
    ctl: &StepControls<T>,
) -> Result<Option<(Fold<T>, Branch<T>)>> {
    let branch = arclength_continue(p, start, direction, max_arclength, &stop_at_first_fold(ctl))?;
    let Some(mut fold) = branch.folds.first().cloned() else {
        return Ok(None);
    };
    let mut local = branch;
    let mut ctl = ctl.clone();
    for _ in 0..12 {
        if fold.width() <= tol {
            break;
        }
        let back = fold.index.saturating_sub(1);
        let restart = &local.points[back];
        let span = local.points[(fold.index + 1).min(local.points.len() - 1)].arclength - restart.arclength;
        ctl.max_step = (span / T::lit(8.0)).max(ctl.min_step);
        ctl.initial_step = ctl.max_step;
        let direction = local.points[back + 1].lambda - restart.lambda;
        let pl = p.clone().with_lambda(restart.lambda);
        let again =
            arclength_continue(&pl, &restart.solution, direction, T::lit(4.0) * span, &stop_at_first_fold(&ctl))?;
        match again.folds.first() {
            Some(f) => {
                fold = f.clone();
                local = again;
            }
            None => break,
        }
    }
    Ok(Some((fold, local)))
}

fn stop_at_first_fold<T: Real>(ctl: &StepControls<T>) -> StepControls<T> {
    StepControls { stop_after_fold: true, ..ctl.clone() }
}

fn arclengths<T: Real>(points: &[BranchPoint<T>]) -> Vec<T> {
    points.iter().map(|p| p.arclength).collect()
}

fn lambdas<T: Real>(points: &[BranchPoint<T>]) -> Vec<T> {
    points.iter().map(|p| p.lambda).collect()
}

/// Every crossing of `λ` by the branch, each corrected by Newton from the
/// linear interpolant between the bracketing points.
pub fn branch_solutions_at<T: Real>(
    p: &ProblemSpec<T>,
    branch: &Branch<T>,
    lambda: T,
    opts: &SolveOptions<T>,
) -> Vec<Solution<T>> {
    let mut found: Vec<Solution<T>> = Vec::new();
    for pair in branch.points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (lo, hi) = (a.lambda.min(b.lambda), a.lambda.max(b.lambda));
        if lambda < lo || lambda > hi {
            continue;
        }
        let theta = if hi > lo { (lambda - a.lambda) / (b.lambda - a.lambda) } else { T::zero() };
        let guess = a.u().zip_map(b.u(), |x, y| x + theta * (y - x)).expect("same grid");
        if let Some(s) = converged_at(p, lambda, &guess, opts) {
            push_distinct(&mut found, s);
        }
    }
    found
}

fn push_distinct<T: Real>(found: &mut Vec<Solution<T>>, s: Solution<T>) {
    let tol = T::lit(1e-6) * (T::one() + s.u.sup_norm());
    if found.iter().all(|f| f.u.distance(&s.u).map_or(true, |d| d > tol)) {
        found.push(s);
    }
}

/// Initial-guess shapes used by the seed ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedShape {
    /// `t·φ`.
    Scaled,
    /// `sgn(t)·ln(1 + (e^{m|t|} − 1)|φ|)/m`, the profile whose exponential transform is a multiple of `φ`.
    Exponential,
}

/// Scales tried by [`seed_ladder`] on top of zero, with both signs where requested.
pub const SEED_SCALES: [f64; 10] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SeedAttempt<T> {
    pub scale: T,
    pub shape: SeedShape,
    pub converged: bool,
}

pub fn seed_guess<T: Real>(phi: &ScalarField<T>, n: usize, scale: T, shape: SeedShape, rate: T) -> VectorField<T> {
    let field = match shape {
        SeedShape::Scaled => phi.scale(scale),
        SeedShape::Exponential => {
            let m = if rate > T::zero() { rate } else { T::one() };
            let exponent = (m * scale.abs()).min(T::lit(crate::transform::EXPONENT_LIMIT));
            let amp = exponent.exp_m1();
            phi.map(|x| scale.signum() * (amp * x.abs()).ln_1p() / m)
        }
    };
    let mut u = VectorField::replicate(&field, n);
    u.zero_boundary();
    u
}

/// Newton from every rung of a seed ladder; returns all distinct converged solutions.
pub fn seed_ladder<T: Real>(
    p: &ProblemSpec<T>,
    phi: &ScalarField<T>,
    scales: &[T],
    opts: &SolveOptions<T>,
) -> (Vec<Solution<T>>, Vec<SeedAttempt<T>>) {
    let rate = p.gradient().mu_min();
    let mut found = Vec::new();
    let mut attempts = Vec::new();
    for &scale in scales {
        let shapes: &[SeedShape] =
            if scale == T::zero() { &[SeedShape::Scaled] } else { &[SeedShape::Scaled, SeedShape::Exponential] };
        for &shape in shapes {
            let guess = seed_guess(phi, p.n(), scale, shape, rate);
            let outcome = newton_solve(p, &guess, opts).ok().filter(|s| s.converged && s.u.is_finite());
            attempts.push(SeedAttempt { scale, shape, converged: outcome.is_some() });
            if let Some(s) = outcome {
                push_distinct(&mut found, s);
            }
        }
    }
    (found, attempts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpperSeed<T> {
    pub solution: Solution<T>,
    pub scale: T,
    pub shape: SeedShape,
    /// Order relative to the supplied lower solution.
    pub order: Option<OrderReport<T>>,
    /// False when every converged rung returned the lower solution.
    pub distinct: bool,
    pub attempts: Vec<SeedAttempt<T>>,
}

/// Newton from `t·φ₁` (and its exponential-profile counterpart) over the
/// geometric ladder `t, 2t, 4t, …` at the given `λ`. With `t = 0` a single solve
/// from zero is made.
pub fn seed_upper_branch<T: Real>(
    p: &ProblemSpec<T>,
    lambda: T,
    phi1: &ScalarField<T>,
    t: T,
    rungs: usize,
    lower: Option<&VectorField<T>>,
    opts: &SolveOptions<T>,
) -> Result<UpperSeed<T>> {
    let pl = p.clone().with_lambda(lambda);
    let scales: Vec<T> = if t == T::zero() {
        vec![T::zero()]
    } else {
        (0..rungs.max(1)).map(|k| t * T::from_usize_lossy(1 << k)).collect()
    };
    let form = crate::coupling::block_triangular_form(p.coupling());
    let mut fallback: Option<UpperSeed<T>> = None;
    let mut attempts = Vec::new();
    for &scale in &scales {
        let shapes: &[SeedShape] =
            if scale == T::zero() { &[SeedShape::Scaled] } else { &[SeedShape::Scaled, SeedShape::Exponential] };
        for &shape in shapes {
            let guess = seed_guess(phi1, p.n(), scale, shape, p.gradient().mu_min());
            let outcome = newton_solve(&pl, &guess, opts).ok().filter(|s| s.converged && s.u.is_finite());
            attempts.push(SeedAttempt { scale, shape, converged: outcome.is_some() });
            let Some(solution) = outcome else { continue };
            let (order, distinct) = match lower {
                Some(low) => {
                    let gap = low.distance(&solution.u)?;
                    let distinct = gap > T::lit(1e-6) * (T::one() + low.sup_norm());
                    (Some(compare_order(low, &solution.u, &form)?), distinct)
                }
                None => (None, true),
            };
            let seed = UpperSeed { solution, scale, shape, order, distinct, attempts: Vec::new() };
            if distinct {
                return Ok(UpperSeed { attempts, ..seed });
            }
            fallback.get_or_insert(seed);
        }
    }
    match fallback {
        Some(seed) => Ok(UpperSeed { attempts, ..seed }),
        None => Err(Error::NoConvergence { iterations: attempts.len(), residual: f64::NAN }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignClass {
    Nonnegative,
    Nonpositive,
    SignChanging,
}

impl SignClass {
    pub fn of<T: Real>(u: &VectorField<T>) -> Self {
        let tol = T::lit(crate::solver::CHECK_TOL);
        if u.min() >= -tol {
            SignClass::Nonnegative
        } else if u.max() <= tol {
            SignClass::Nonpositive
        } else {
            SignClass::SignChanging
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SignClass::Nonnegative => "nonnegative",
            SignClass::Nonpositive => "nonpositive",
            SignClass::SignChanging => "sign-changing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionCell<T> {
    pub lambda: T,
    pub gamma: T,
    pub count: usize,
    pub classes: Vec<SignClass>,
    pub lower_found: bool,
    pub upper_found: bool,
    pub nonpositive_found: bool,
    /// Per-cell failure, recorded instead of aborting the scan.
    pub error: Option<String>,
}

impl<T> RegionCell<T> {
    pub fn sign_class(&self) -> String {
        if self.classes.is_empty() {
            return "none".into();
        }
        self.classes.iter().map(|c| c.label()).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap<T> {
    pub cells: Vec<RegionCell<T>>,
    /// `(γ, λ̄₁(γ))`: fold of the branch through `u_{0,γ}`; `None` when no fold was found.
    pub fold_lower: Vec<(T, Option<Fold<T>>)>,
    /// `(γ, λ̄₂(γ))`: fold of the nonpositive branch.
    pub fold_negative: Vec<(T, Option<Fold<T>>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions<T> {
    pub steps: StepControls<T>,
    /// Arclength budget when tracing to a fold.
    pub max_arclength: T,
    pub fold_tol: T,
    /// Also locate the folds `λ̄₁(γ)` and `λ̄₂(γ)` for every `γ`.
    pub locate_folds: bool,
    pub seed_scales: Vec<T>,
}

impl<T: Real> Default for ScanOptions<T> {
    fn default() -> Self {
        ScanOptions {
            steps: StepControls::default(),
            max_arclength: T::lit(50.0),
            fold_tol: T::lit(1e-3),
            locate_folds: true,
            seed_scales: SEED_SCALES.iter().map(|&s| T::lit(s)).collect(),
        }
    }
}

/// Cells of one γ column with its lower and nonpositive folds.
type ScanColumn<T> = (Vec<RegionCell<T>>, Option<Fold<T>>, Option<Fold<T>>);

/// Classifies every `(λ, γ)` cell: lower branch continued from `u_{0,γ}`, upper
/// branch from positive seeds, nonpositive solutions from multiples of `φ₁⁻`.
/// Nonexistence in a cell means "not found under the ladder", nothing stronger.
pub fn two_parameter_scan<T: Real>(
    p: &ProblemSpec<T>,
    lambdas: &[T],
    gammas: &[T],
    opts: &ScanOptions<T>,
) -> Result<RegionMap<T>> {
    if lambdas.is_empty() || gammas.is_empty() {
        return Ok(RegionMap { cells: Vec::new(), fold_lower: Vec::new(), fold_negative: Vec::new() });
    }
    let weight = p.coupling().row_sum(0);
    let eig = EigenOptions { solve: opts.steps.solve.clone(), ..EigenOptions::default() };
    let op = &p.operators()[0];
    let phi_plus = principal_eigenpair(op, &weight, EigenSign::Plus, &eig)?.phi1;
    let minus = principal_eigenpair(op, &weight, EigenSign::Minus, &eig)?;
    let phi_minus = minus.phi1.map(T::abs);
    let positive: Vec<T> = opts.seed_scales.clone();
    let negative: Vec<T> = opts.seed_scales.iter().map(|&s| -s).collect();
    let mut sorted: Vec<T> = lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite λ"));

    let columns: Vec<ScanColumn<T>> = gammas
        .par_iter()
        .map(|&gamma| {
            let pg = p.clone().with_gamma(gamma);
            let u0 = solve_P0(&pg, &opts.steps.solve);
            // lower branch: continue from u_{0,γ} through the sorted grid
            let mut reached: Vec<Option<Solution<T>>> = vec![None; sorted.len()];
            if u0.converged {
                let mut current = (T::zero(), u0.clone());
                for (j, &lam) in sorted.iter().enumerate() {
                    if lam < T::zero() {
                        continue;
                    }
                    match natural_continue(&pg, current.0, lam, &current.1, &opts.steps) {
                        Ok(b) if b.stop == StopReason::ReachedEnd => {
                            let s = b.last().solution.clone();
                            reached[j] = Some(s.clone());
                            current = (lam, s);
                        }
                        _ => break,
                    }
                }
            }
            let cells: Vec<RegionCell<T>> = lambdas
                .iter()
                .map(|&lambda| {
                    let j = sorted.iter().position(|&l| l == lambda).expect("lambda from grid");
                    scan_cell(&pg, lambda, gamma, reached[j].clone(), &phi_plus, &phi_minus, &positive, &negative, opts)
                })
                .collect();
            let (fold1, fold2) = if opts.locate_folds {
                let f1 = u0
                    .converged
                    .then(|| {
                        locate_fold(&pg, &u0, T::one(), opts.max_arclength, opts.fold_tol, &opts.steps).ok().flatten()
                    })
                    .flatten()
                    .map(|(f, _)| f);
                let f2 = negative_fold(&pg, &sorted, &phi_minus, &negative, opts);
                (f1, f2)
            } else {
                (None, None)
            };
            (cells, fold1, fold2)
        })
        .collect();
    let mut map = RegionMap { cells: Vec::new(), fold_lower: Vec::new(), fold_negative: Vec::new() };
    for (&gamma, (cells, f1, f2)) in gammas.iter().zip(columns) {
        map.cells.extend(cells);
        map.fold_lower.push((gamma, f1));
        map.fold_negative.push((gamma, f2));
    }
    Ok(map)
}

#[allow(clippy::too_many_arguments)]
fn scan_cell<T: Real>(
    pg: &ProblemSpec<T>,
    lambda: T,
    gamma: T,
    lower: Option<Solution<T>>,
    phi_plus: &ScalarField<T>,
    phi_minus: &ScalarField<T>,
    positive: &[T],
    negative: &[T],
    opts: &ScanOptions<T>,
) -> RegionCell<T> {
    let pl = pg.clone().with_lambda(lambda);
    let mut found: Vec<Solution<T>> = Vec::new();
    let lower_found = lower.is_some();
    if let Some(s) = lower {
        push_distinct(&mut found, s);
    }
    let before = found.len();
    for s in seed_ladder(&pl, phi_plus, positive, &opts.steps.solve).0 {
        push_distinct(&mut found, s);
    }
    let upper_found =
        found.len() > before && found.iter().skip(before).any(|s| SignClass::of(&s.u) == SignClass::Nonnegative);
    for s in seed_ladder(&pl, phi_minus, negative, &opts.steps.solve).0 {
        push_distinct(&mut found, s);
    }
    let classes: Vec<SignClass> = found.iter().map(|s| SignClass::of(&s.u)).collect();
    RegionCell {
        lambda,
        gamma,
        count: found.len(),
        nonpositive_found: classes.contains(&SignClass::Nonpositive),
        classes,
        lower_found,
        upper_found,
        error: None,
    }
}

/// Finds a nonpositive solution at the largest grid `λ` where the ladder produces
/// one, then traces it toward smaller `λ` to its fold.
fn negative_fold<T: Real>(
    pg: &ProblemSpec<T>,
    sorted: &[T],
    phi_minus: &ScalarField<T>,
    negative: &[T],
    opts: &ScanOptions<T>,
) -> Option<Fold<T>> {
    for &lambda in sorted.iter().rev() {
        let pl = pg.clone().with_lambda(lambda);
        let (found, _) = seed_ladder(&pl, phi_minus, negative, &opts.steps.solve);
        // the solution closest to zero sits on the branch that turns first
        let Some(start) = found
            .into_iter()
            .filter(|s| SignClass::of(&s.u) == SignClass::Nonpositive)
            .min_by(|a, b| a.u.sup_norm().partial_cmp(&b.u.sup_norm()).expect("finite"))
        else {
            continue;
        };
        return locate_fold(&pl, &start, -T::one(), opts.max_arclength, opts.fold_tol, &opts.steps)
            .ok()
            .flatten()
            .map(|(f, _)| f);
    }
    None
}

/// Writes `branch_id,arclength,lambda,gamma,sup_norm_1..n,min_1..n,fold_flag`.
pub fn export_branch<T: Real, W: Write>(branch: &Branch<T>, branch_id: &str, out: W) -> Result<()> {
    let first = branch.points.first().ok_or(Error::Empty("branch"))?;
    let n = first.sup_norms.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["branch_id".to_string(), "arclength".into(), "lambda".into(), "gamma".into()];
    header.extend((1..=n).map(|i| format!("sup_norm_{i}")));
    header.extend((1..=n).map(|i| format!("min_{i}")));
    header.push("fold_flag".into());
    w.write_record(&header).map_err(csv_error)?;
    let mut order: Vec<&BranchPoint<T>> = branch.points.iter().collect();
    order.sort_by(|a, b| a.arclength.partial_cmp(&b.arclength).expect("finite arclength"));
    for p in order {
        let mut row = vec![branch_id.to_string(), num(p.arclength), num(p.lambda), num(p.gamma)];
        row.extend(p.sup_norms.iter().map(|&v| num(v)));
        row.extend(p.mins.iter().map(|&v| num(v)));
        row.push(p.fold_flag.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_branch_file<T: Real>(branch: &Branch<T>, branch_id: &str, path: &Path) -> Result<()> {
    export_branch(branch, branch_id, std::fs::File::create(path)?)
}

/// Writes `lambda,gamma,count,sign_class,lower_found,upper_found`.
pub fn export_region<T: Real, W: Write>(map: &RegionMap<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "gamma", "count", "sign_class", "lower_found", "upper_found"]).map_err(csv_error)?;
    for c in &map.cells {
        w.write_record([
            num(c.lambda),
            num(c.gamma),
            c.count.to_string(),
            c.sign_class(),
            c.lower_found.to_string(),
            c.upper_found.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn num<T: Real>(x: T) -> String {
    format!("{:?}", x.to_f64_lossy())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
