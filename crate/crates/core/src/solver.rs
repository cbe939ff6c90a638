//! Nonlinear solves of the discrete system: damped semismooth Newton, the
//! frozen-coefficient fixed-point map, monotone sub/supersolution iteration,
//! and the discrete strict order between solutions.

use std::sync::Arc;

use log::debug;

use crate::coupling::BlockForm;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::linalg::{BandLu, SparseMatrix};
use crate::operators::{GradientMatrixSpec, OperatorSpec};
use crate::problem::{assemble, frozen_source, gradient_sup, Assembly, ProblemSpec};
use crate::scalar::{max_abs, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions<T> {
    /// Convergence threshold on `max |r|`.
    pub newton_tol: T,
    pub max_newton_iters: usize,
    /// Step reduction factor of the backtracking line search.
    pub backtrack: T,
    pub min_step: T,
    /// Re-select the active Pucci/Bellman branch at every Newton iteration.
    /// When false the first linearization is kept for the whole solve.
    pub policy_freeze: bool,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            newton_tol: T::lit(1e-9),
            max_newton_iters: 100,
            backtrack: T::half(),
            min_step: T::lit(2f64.powi(-20)),
            policy_freeze: true,
        }
    }
}

impl<T: Real> SolveOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.newton_tol > T::zero()
            && self.min_step > T::zero()
            && self.backtrack > T::zero()
            && self.backtrack < T::one()
            && self.max_newton_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProblem("solve options: tolerances must be positive and backtrack in (0, 1)".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub u: VectorField<T>,
    pub residual_norm: T,
    pub converged: bool,
    pub iterations: usize,
    /// Smallest-eigenvalue magnitude estimate of the final linearization.
    pub jacobian_singularity_indicator: T,
    /// Residual level used for `converged`: `newton_tol`, raised to the round-off floor on fine grids.
    pub tolerance: T,
}

pub(crate) struct NewtonOutcome<T> {
    pub x: Vec<T>,
    pub residual_norm: T,
    pub converged: bool,
    pub iterations: usize,
    pub indicator: T,
    pub tolerance: T,
}

/// Multiple of `ε·‖J‖∞·(1 + ‖u‖∞)` below which residuals are round-off.
const ROUNDOFF_FACTOR: f64 = 16.0;

/// `max(tol, 16 ε ‖J‖∞ (1 + ‖u‖∞))`: the residual a discrete solution can attain in
/// floating point, since stencil rows scale like `1/h²`.
pub(crate) fn attainable_tol<T: Real>(tol: T, jac: &SparseMatrix<T>, x: &[T]) -> T {
    let floor = T::lit(ROUNDOFF_FACTOR) * T::epsilon() * jac.norm_inf() * (T::one() + max_abs(x));
    tol.max(floor)
}

/// [`attainable_tol`] at `u` for the full residual of `p`.
pub fn residual_tolerance<T: Real>(p: &ProblemSpec<T>, u: &VectorField<T>, tol: T) -> T {
    let flat = u.to_flat();
    let (_, jac) = assemble(p, &flat, &Assembly::full(), true);
    attainable_tol(tol, &jac.expect("jacobian requested"), &flat)
}

fn l2<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Damped Newton on a residual map. `eval(x, true)` must return the Jacobian.
/// Entries listed in `pinned` are held at zero.
#[allow(clippy::unnecessary_unwrap)]
pub(crate) fn newton_core<T: Real>(
    eval: impl Fn(&[T], bool) -> (Vec<T>, Option<SparseMatrix<T>>),
    mut x: Vec<T>,
    pinned: &[usize],
    opts: &SolveOptions<T>,
) -> Result<NewtonOutcome<T>> {
    opts.validate()?;
    for &b in pinned {
        x[b] = T::zero();
    }
    let (mut r, mut jac) = eval(&x, true);
    let mut norm = max_abs(&r);
    let mut tolerance = attainable_tol(opts.newton_tol, jac.as_ref().expect("jacobian requested"), &x);
    let mut chord: Option<BandLu<T>> = None;
    let mut iterations = 0;
    // the round-off floor only excuses a residual once Newton has tried to reduce it
    let mut converged = norm <= opts.newton_tol;
    while !converged && iterations < opts.max_newton_iters {
        if !norm.is_finite() {
            break;
        }
        iterations += 1;
        let fresh;
        let lu = if opts.policy_freeze || chord.is_none() {
            fresh = BandLu::factor(jac.as_ref().expect("jacobian requested"))?;
            if !opts.policy_freeze {
                chord = Some(fresh.clone());
            }
            &fresh
        } else {
            chord.as_ref().expect("chord factorization")
        };
        let mut dx: Vec<T> = r.iter().map(|&v| -v).collect();
        lu.solve_in_place(&mut dx);
        let merit = l2(&r);
        let mut step = T::one();
        let accepted = loop {
            let mut trial: Vec<T> = x.iter().zip(&dx).map(|(&a, &d)| a + step * d).collect();
            for &b in pinned {
                trial[b] = T::zero();
            }
            let (rt, _) = eval(&trial, false);
            let mt = l2(&rt);
            if mt.is_finite() && mt <= (T::one() - T::lit(1e-4) * step) * merit {
                break Some((trial, rt));
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                break None;
            }
        };
        let Some((trial, _)) = accepted else {
            debug!("newton: step underflow at iteration {iterations}, residual {norm:e}");
            converged = norm <= tolerance;
            break;
        };
        x = trial;
        let (rn, jn) = eval(&x, opts.policy_freeze);
        r = rn;
        if opts.policy_freeze {
            jac = jn;
            tolerance = attainable_tol(opts.newton_tol, jac.as_ref().expect("jacobian requested"), &x);
        }
        norm = max_abs(&r);
        converged = norm <= tolerance;
    }
    let final_jac = if opts.policy_freeze { jac } else { eval(&x, true).1 };
    let indicator = final_jac
        .and_then(|j| BandLu::factor_unchecked(&j).ok())
        .map_or(T::zero(), |lu| lu.smallest_eigenvalue_estimate());
    Ok(NewtonOutcome { x, residual_norm: norm, converged, iterations, indicator, tolerance })
}

pub(crate) fn boundary_rows<T: Real>(grid: &Grid<T>, n: usize) -> Vec<usize> {
    grid.boundary_nodes().flat_map(|k| (0..n).map(move |i| k * n + i)).collect()
}

pub(crate) fn solve_assembly<T: Real>(
    p: &ProblemSpec<T>,
    terms: &Assembly<'_, T>,
    initial: Vec<T>,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    let pinned = boundary_rows(p.grid(), p.n());
    let out = newton_core(|x, j| assemble(p, x, terms, j), initial, &pinned, opts)?;
    Ok(Solution {
        u: VectorField::from_flat(p.grid(), p.n(), &out.x),
        residual_norm: out.residual_norm,
        converged: out.converged,
        iterations: out.iterations,
        jacobian_singularity_indicator: out.indicator,
        tolerance: out.tolerance,
    })
}

/// Damped Newton on the full residual from `initial`.
pub fn newton_solve<T: Real>(
    p: &ProblemSpec<T>,
    initial: &VectorField<T>,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    p.check_field(initial)?;
    solve_assembly(p, &Assembly::full(), initial.to_flat(), opts)
}

/// The uncoupled problem at `λ = 0`, solved from zero. Failures come back as
/// an unconverged solution rather than an error.
#[allow(non_snake_case)]
pub fn solve_P0<T: Real>(p: &ProblemSpec<T>, opts: &SolveOptions<T>) -> Solution<T> {
    let p0 = p.clone().with_lambda(T::zero());
    let zero = VectorField::zeros(p.grid().clone(), p.n());
    match newton_solve(&p0, &zero, opts) {
        Ok(s) => s,
        Err(e) => {
            debug!("P0 solve failed: {e}");
            Solution {
                u: zero,
                residual_norm: T::infinity(),
                converged: false,
                iterations: 0,
                jacobian_singularity_indicator: T::zero(),
                tolerance: opts.newton_tol,
            }
        }
    }
}

/// Solves `−F[w] = source` with zero Dirichlet data for a single operator.
pub fn solve_operator<T: Real>(
    op: &OperatorSpec<T>,
    source: &ScalarField<T>,
    initial: Option<&ScalarField<T>>,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    let grid = source.grid().clone();
    let p = ProblemSpec::new(
        vec![op.clone()],
        GradientMatrixSpec::zero(&grid, 1),
        crate::coupling::CouplingMatrix::zeros(&grid, 1),
        VectorField::replicate(source, 1),
    )?;
    let start = initial.map_or_else(|| vec![T::zero(); grid.node_count()], |f| f.values().to_vec());
    solve_assembly(&p, &Assembly { gradient: false, coupling: false, shift: T::zero(), source: None }, start, opts)
}

/// One application of the frozen map: `U` with `−F_i[U_i] = λ(𝒞u)_i + ⟨M_i Du_i, Du_i⟩ + γh_i`.
/// Gradient terms use centred differences.
pub fn fixed_point_map<T: Real>(
    p: &ProblemSpec<T>,
    u: &VectorField<T>,
    opts: &SolveOptions<T>,
) -> Result<VectorField<T>> {
    shifted_map(p, u, T::zero(), opts)
}

fn shifted_map<T: Real>(
    p: &ProblemSpec<T>,
    u: &VectorField<T>,
    shift: T,
    opts: &SolveOptions<T>,
) -> Result<VectorField<T>> {
    p.check_field(u)?;
    let flat = u.to_flat();
    let source = frozen_source(p, &flat, shift);
    let terms = Assembly { gradient: false, coupling: false, shift, source: Some(&source) };
    let s = solve_assembly(p, &terms, flat, opts)?;
    if !s.converged {
        return Err(Error::NoConvergence { iterations: s.iterations, residual: s.residual_norm.to_f64_lossy() });
    }
    Ok(s.u)
}

/// Repeats the fixed-point map until the full residual drops below the Newton tolerance.
pub fn picard_iterate<T: Real>(
    p: &ProblemSpec<T>,
    initial: &VectorField<T>,
    max_iterations: usize,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    let mut u = initial.clone();
    u.zero_boundary();
    for it in 0..=max_iterations {
        let r = crate::problem::residual(p, &u)?.sup_norm();
        let tolerance = residual_tolerance(p, &u, opts.newton_tol);
        if r <= tolerance || it == max_iterations {
            return Ok(Solution {
                u,
                residual_norm: r,
                converged: r <= tolerance,
                iterations: it,
                jacobian_singularity_indicator: T::nan(),
                tolerance,
            });
        }
        u = fixed_point_map(p, &u, opts)?;
        if !u.is_finite() {
            return Err(Error::NoConvergence { iterations: it + 1, residual: f64::INFINITY });
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sub,
    Super,
}

/// Default coercivity shift `λ·max row sum + 2μ₂·max |Du| + 1` over the bracket.
pub fn default_shift<T: Real>(p: &ProblemSpec<T>, xi: &VectorField<T>, eta: &VectorField<T>) -> T {
    let lambda_part = p.lambda().abs() * p.coupling().max_row_sum();
    let grad = gradient_sup(xi).max(gradient_sup(eta));
    lambda_part + T::two() * p.gradient().mu_max() * grad + T::one()
}

pub const MONOTONE_MAX_ITERATIONS: usize = 5000;

/// Monotone iteration `−F[u^{k+1}] + K u^{k+1} = λ𝒞u^k + ⟨M Du^k, Du^k⟩ + γh + K u^k`
/// started from the subsolution `xi` or the supersolution `eta`.
pub fn monotone_iterate<T: Real>(
    p: &ProblemSpec<T>,
    xi: &VectorField<T>,
    eta: &VectorField<T>,
    from: Side,
    shift: Option<T>,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    p.check_field(xi)?;
    p.check_field(eta)?;
    let gap = xi.zip_map(eta, |a, b| a - b)?.max();
    if gap > T::lit(CHECK_TOL) {
        return Err(Error::InvalidProblem(format!("bracket is not ordered: xi exceeds eta by {gap}")));
    }
    for (w, side) in [(xi, Side::Sub), (eta, Side::Super)] {
        let check = check_subsolution(p, w, side, T::lit(CHECK_TOL))?;
        if !check.pass {
            return Err(Error::InvalidProblem(format!(
                "{} check failed (margin {:e})",
                if side == Side::Sub { "subsolution" } else { "supersolution" },
                check.margin.to_f64_lossy()
            )));
        }
    }
    let k_shift = shift.unwrap_or_else(|| default_shift(p, xi, eta));
    let mut u = match from {
        Side::Sub => xi.clone(),
        Side::Super => eta.clone(),
    };
    let slack = T::lit(1e-10);
    for it in 0..MONOTONE_MAX_ITERATIONS {
        let r = crate::problem::residual(p, &u)?.sup_norm();
        let tolerance = residual_tolerance(p, &u, opts.newton_tol);
        if r <= tolerance {
            return Ok(Solution {
                u,
                residual_norm: r,
                converged: true,
                iterations: it,
                jacobian_singularity_indicator: T::nan(),
                tolerance,
            });
        }
        let next = shifted_map(p, &u, k_shift, opts)?;
        let diff = next.zip_map(&u, |a, b| a - b)?;
        let violation = match from {
            Side::Sub => -diff.min(),
            Side::Super => diff.max(),
        };
        if violation > slack * (T::one() + u.sup_norm()) {
            return Err(Error::MonotonicityViolation { iteration: it + 1, violation: violation.to_f64_lossy() });
        }
        u = next;
    }
    let r = crate::problem::residual(p, &u)?.sup_norm();
    let tolerance = residual_tolerance(p, &u, opts.newton_tol);
    Ok(Solution {
        u,
        residual_norm: r,
        converged: r <= tolerance,
        iterations: MONOTONE_MAX_ITERATIONS,
        jacobian_singularity_indicator: T::nan(),
        tolerance,
    })
}

/// Tolerance for residual sign checks and nodewise orderings.
pub const CHECK_TOL: f64 = 1e-8;
/// Threshold on inward difference quotients for boundary strictness.
pub const NORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsolutionCheck<T> {
    pub pass: bool,
    /// `min(−r)` for subsolutions, `min(r)` for supersolutions, over interior rows.
    pub margin: T,
}

/// Residual sign test: a subsolution has `r ≤ tol` inside and `w ≤ 0` on the boundary.
pub fn check_subsolution<T: Real>(
    p: &ProblemSpec<T>,
    w: &VectorField<T>,
    side: Side,
    tol: T,
) -> Result<SubsolutionCheck<T>> {
    let r = crate::problem::residual(p, w)?;
    let grid = p.grid();
    let sign = if side == Side::Sub { -T::one() } else { T::one() };
    let mut margin = T::infinity();
    let mut boundary_ok = true;
    for k in 0..grid.node_count() {
        for i in 0..p.n() {
            if grid.is_boundary(k) {
                boundary_ok &= sign * w.get(i, k) >= -tol;
            } else {
                margin = margin.min(sign * r.get(i, k));
            }
        }
    }
    Ok(SubsolutionCheck { pass: boundary_ok && margin >= -tol, margin })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Equal,
    StrictlyBelow,
    Below,
    StrictlyAbove,
    Above,
    Incomparable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentOrder<T> {
    /// `min (v − u)` over interior nodes.
    pub interior_margin: T,
    /// Smallest inward-difference margin at boundary contact points, `+∞` if none.
    pub normal_margin: T,
    pub strict_ll: bool,
    pub strict_gg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport<T> {
    pub leq: bool,
    pub geq: bool,
    pub strict_ll: bool,
    pub strict_gg: bool,
    pub components: Vec<ComponentOrder<T>>,
    /// Blocks in which `u ≪ v` holds for every component.
    pub block_strict_ll: Vec<bool>,
    pub block_strict_gg: Vec<bool>,
}

impl<T> OrderReport<T> {
    pub fn relation(&self) -> Relation {
        match (self.strict_ll, self.strict_gg, self.leq, self.geq) {
            (true, _, _, _) => Relation::StrictlyBelow,
            (_, true, _, _) => Relation::StrictlyAbove,
            (_, _, true, true) => Relation::Equal,
            (_, _, true, false) => Relation::Below,
            (_, _, false, true) => Relation::Above,
            _ => Relation::Incomparable,
        }
    }

    /// At least one block where `u ≪ v`.
    pub fn strict_in_some_block(&self) -> bool {
        self.block_strict_ll.iter().any(|&b| b)
    }
}

/// Whether `u ≪ v` for one component: strict inside, and at boundary contacts
/// the inward difference quotient of `v` exceeds that of `u`.
fn strictly_below<T: Real>(grid: &Arc<Grid<T>>, u: &ScalarField<T>, v: &ScalarField<T>) -> (bool, T, T) {
    let mut interior_margin = T::infinity();
    let mut normal_margin = T::infinity();
    let mut strict = true;
    for k in 0..grid.node_count() {
        let gap = v.get(k) - u.get(k);
        if grid.is_interior(k) {
            interior_margin = interior_margin.min(gap);
            strict &= gap > T::zero();
        } else if gap <= T::zero() {
            let (inner, dist) = grid.inward(k).expect("boundary node");
            let slope_u = (u.get(inner) - u.get(k)) / dist;
            let slope_v = (v.get(inner) - v.get(k)) / dist;
            let margin = slope_v - slope_u;
            normal_margin = normal_margin.min(margin);
            strict &= gap == T::zero() && margin > T::lit(NORMAL_TOL);
        }
    }
    (strict, interior_margin, normal_margin)
}

pub fn compare_order<T: Real>(u: &VectorField<T>, v: &VectorField<T>, form: &BlockForm) -> Result<OrderReport<T>> {
    u.check_compatible(v)?;
    let grid = u.grid();
    let tol = T::lit(CHECK_TOL);
    let diff = v.zip_map(u, |a, b| a - b)?;
    let leq = diff.min() >= -tol;
    let geq = diff.max() <= tol;
    let components: Vec<ComponentOrder<T>> = (0..u.n())
        .map(|i| {
            let (ll, interior_margin, normal_margin) = strictly_below(grid, u.component(i), v.component(i));
            let (gg, _, _) = strictly_below(grid, v.component(i), u.component(i));
            ComponentOrder { interior_margin, normal_margin, strict_ll: ll, strict_gg: gg }
        })
        .collect();
    let block_flag = |pick: fn(&ComponentOrder<T>) -> bool| -> Vec<bool> {
        (0..form.block_count()).map(|k| form.block(k).iter().all(|&i| pick(&components[i]))).collect()
    };
    let block_strict_ll = block_flag(|c| c.strict_ll);
    let block_strict_gg = block_flag(|c| c.strict_gg);
    Ok(OrderReport {
        leq,
        geq,
        strict_ll: components.iter().all(|c| c.strict_ll),
        strict_gg: components.iter().all(|c| c.strict_gg),
        components,
        block_strict_ll,
        block_strict_gg,
    })
}

/// Componentwise `max(u_j, a)`.
#[allow(non_snake_case)]
pub fn truncate_Ra<T: Real>(u: &VectorField<T>, a: T) -> VectorField<T> {
    u.map(|x| x.max(a))
}

/// A strict subsolution below `u0`: solves `−ℒ⁻_i[ξ_i] = −(λ K c̃ + γ h_i⁻ + 1)` with
/// `ℒ⁻` the lower extremal operator of each equation, doubling `K` until the
/// candidate passes the residual check and lies below `u0`.
pub fn lower_barrier<T: Real>(
    p: &ProblemSpec<T>,
    u0: &VectorField<T>,
    opts: &SolveOptions<T>,
) -> Result<VectorField<T>> {
    let c_tilde = (0..p.n())
        .map(|i| p.coupling().row_sum(i))
        .reduce(|a, b| a.zip_map(&b, T::max).expect("same grid"))
        .expect("at least one component");
    let mut k_level = u0.sup_norm() + T::one();
    for _ in 0..40 {
        let mut components = Vec::with_capacity(p.n());
        for i in 0..p.n() {
            let h_neg = p.rhs().component(i).map(|h| (-h).max(T::zero()));
            let source =
                c_tilde.zip_map(&h_neg, |c, hn| -(p.lambda().abs() * k_level * c + p.gamma().abs() * hn + T::one()))?;
            let s = solve_operator(&p.operators()[i].lower_extremal(), &source, None, opts)?;
            if !s.converged {
                return Err(Error::NoConvergence {
                    iterations: s.iterations,
                    residual: s.residual_norm.to_f64_lossy(),
                });
            }
            components.push(s.u.component(0).clone());
        }
        let xi = VectorField::new(components)?;
        let below = xi.zip_map(u0, |a, b| a - b)?.max() <= T::zero();
        if below && check_subsolution(p, &xi, Side::Sub, T::zero())?.pass {
            return Ok(xi);
        }
        k_level *= T::two();
    }
    Err(Error::NoConvergence { iterations: 40, residual: f64::NAN })
}
