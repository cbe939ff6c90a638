//! Hypothesis checks, estimate constants, a priori bound reports, nonexistence
//! probes and multiplicity certification.
//!
//! Nonexistence is only ever reported as "no seed of the documented ladder
//! converged", never as a proof.

use rayon::prelude::*;

use crate::continuation::{
    natural_continue, seed_guess, seed_upper_branch, Branch, SeedShape, SignClass, StepControls,
};
use crate::coupling::{block_triangular_form, check_H3, check_H4, is_fully_coupled, BlockForm, H3Report, H4Report};
use crate::eigen::{principal_eigenpair, EigenOptions, EigenSign};
use crate::error::{Error, Result};
use crate::grid::{boundary_distance, inf_quotient, ScalarField, VectorField};
use crate::operators::{EigenWitness, OperatorSpec};
use crate::problem::{gradient_sup, ProblemSpec};
use crate::scalar::Real;
use crate::solver::{compare_order, newton_solve, solve_P0, OrderReport, Solution, SolveOptions};
use crate::transform::exp_change_up;

#[derive(Debug, Clone, PartialEq)]
pub struct MBounds<T> {
    pub pass: bool,
    /// `μ₁`, `μ₂`: extreme eigenvalues of the gradient matrices.
    pub mu_min: T,
    pub mu_max: T,
    /// Where the smallest eigenvalue sits.
    pub witness: EigenWitness<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport<T> {
    pub m_bounds: MBounds<T>,
    /// The solve of the uncoupled `λ = 0` problem.
    pub h0: Solution<T>,
    pub h3: H3Report,
    /// `None` when `u₀` could not be computed.
    pub h4: Option<H4Report<T>>,
    pub fully_coupled: bool,
    pub block_form: BlockForm,
}

impl<T: Real> HypothesisReport<T> {
    pub fn all_pass(&self) -> bool {
        self.m_bounds.pass && self.h0.converged && self.h3.pass && self.h4.as_ref().is_some_and(|h| h.pass)
    }
}

pub fn check_hypotheses<T: Real>(p: &ProblemSpec<T>, opts: &SolveOptions<T>) -> Result<HypothesisReport<T>> {
    let (witness, mu_max) = p.gradient().eigen_range();
    let m_bounds = MBounds { pass: witness.value > T::zero(), mu_min: witness.value, mu_max, witness };
    let h0 = solve_P0(p, opts);
    let block_form = block_triangular_form(p.coupling());
    let h3 = check_H3(&block_form, p.coupling());
    let h4 = if h0.converged { Some(check_H4(p.coupling(), &h0.u, &block_form)?) } else { None };
    Ok(HypothesisReport { m_bounds, h0, h3, h4, fully_coupled: is_fully_coupled(p.coupling()), block_form })
}

/// Margin applied to the observed lower bound when it stands in for `C₀`.
pub const LOWER_BOUND_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConstants<T> {
    /// Observed `max ‖u_i⁻‖∞` over the supplied samples, with a 10% margin.
    pub c0: T,
    /// `μ₁/Λ_P`.
    pub m1: T,
    /// `μ₂/λ_P`.
    pub m2: T,
    /// Principal eigenvalue of the lower extremal operator with weight `c̃`.
    pub lambda1: T,
    /// Its positive eigenfunction.
    pub phi1: ScalarField<T>,
    /// `λ₁/m₁`.
    pub a: T,
    /// `max_i Σ_j c_ij`.
    pub c_tilde: ScalarField<T>,
    /// `min_{i in first block} Σ_j c_ij`.
    pub c_hat: ScalarField<T>,
    /// `inf w_i/d` with `w_i = (e^{m₁(u_i + C₀ + δ)} − 1)/m₁` for the last sample.
    pub i_quotients: Vec<T>,
}

/// Offset `δ` in the boundary quotients.
pub const QUOTIENT_OFFSET: f64 = 0.01;

/// The lower extremal operator `ℳ⁻ − b|Du|` with the worst constants over all equations.
pub fn global_lower_extremal<T: Real>(p: &ProblemSpec<T>, extra_drift: T) -> OperatorSpec<T> {
    let (lower, upper) = p.ellipticity();
    let drift = p.operators().iter().map(OperatorSpec::max_drift).fold(T::zero(), T::max) + extra_drift;
    OperatorSpec::PucciMinus { lower, upper, drift: ScalarField::constant(p.grid().clone(), drift) }
}

pub fn c_tilde<T: Real>(p: &ProblemSpec<T>) -> ScalarField<T> {
    (1..p.n()).fold(p.coupling().row_sum(0), |acc, i| acc.zip_map(&p.coupling().row_sum(i), T::max).expect("same grid"))
}

pub fn c_hat<T: Real>(p: &ProblemSpec<T>) -> ScalarField<T> {
    let form = block_triangular_form(p.coupling());
    let first = form.block(0);
    first[1..].iter().fold(p.coupling().row_sum(first[0]), |acc, &i| {
        acc.zip_map(&p.coupling().row_sum(i), T::min).expect("same grid")
    })
}

/// Constants of the a priori estimates. `samples` are solutions whose negative
/// parts calibrate `C₀`; without samples `u₀` is used.
pub fn estimate_constants<T: Real>(
    p: &ProblemSpec<T>,
    samples: &[VectorField<T>],
    opts: &EigenOptions<T>,
) -> Result<EstimateConstants<T>> {
    let (lower, upper) = p.ellipticity();
    let m1 = p.gradient().mu_min() / upper;
    let m2 = p.gradient().mu_max() / lower;
    let ct = c_tilde(p);
    let ch = c_hat(p);
    let eig = principal_eigenpair(&global_lower_extremal(p, T::zero()), &ct, EigenSign::Plus, opts)?;
    let fallback;
    let samples = if samples.is_empty() {
        let u0 = solve_P0(p, &opts.solve);
        if !u0.converged {
            return Err(Error::NoConvergence { iterations: u0.iterations, residual: u0.residual_norm.to_f64_lossy() });
        }
        fallback = [u0.u];
        &fallback[..]
    } else {
        samples
    };
    let observed = samples.iter().map(|u| (-u.min()).max(T::zero())).fold(T::zero(), T::max);
    let c0 = T::lit(LOWER_BOUND_MARGIN) * observed;
    let last = samples.last().expect("nonempty samples");
    let d = boundary_distance(p.grid());
    let rate = if m1 > T::zero() { m1 } else { T::one() };
    let i_quotients = last
        .components()
        .iter()
        .map(|u| {
            let shifted = u.map(|x| x + c0 + T::lit(QUOTIENT_OFFSET));
            inf_quotient(&exp_change_up(&shifted, rate)?, &d)
        })
        .collect::<Result<Vec<T>>>()?;
    let a = if m1 > T::zero() { eig.lambda1 / m1 } else { T::infinity() };
    Ok(EstimateConstants { c0, m1, m2, lambda1: eig.lambda1, phi1: eig.phi1, a, c_tilde: ct, c_hat: ch, i_quotients })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport<T> {
    pub window: (T, T),
    pub points_in_window: usize,
    /// Per component: `max ‖u_i‖∞` over branch points with `λ` in the window.
    pub sup_bounds: Vec<T>,
    /// Per component: `max ‖u_i⁻‖∞` over branch points with `λ ∈ [0, Λ₂]`.
    pub lower_bounds: Vec<T>,
    pub finite: bool,
    pub growth_at_lower_edge: bool,
    pub growth_at_upper_edge: bool,
}

impl<T> AprioriReport<T> {
    pub fn edge_growth(&self) -> bool {
        self.growth_at_lower_edge || self.growth_at_upper_edge
    }
}

/// Ratio of edge-zone norm to the median that counts as growth.
pub const EDGE_GROWTH_RATIO: f64 = 10.0;
/// Fraction of the window at each end examined for growth.
pub const EDGE_ZONE: f64 = 0.1;

/// Bounds over the branch points inside `[Λ₁, Λ₂]`. Growth is flagged at an edge
/// when the norms increase over the last three samples toward it and the largest
/// one in the edge zone exceeds ten times the median.
pub fn apriori_report<T: Real>(branches: &[Branch<T>], lower: T, upper: T) -> Result<AprioriReport<T>> {
    let mut inside: Vec<(T, T, &VectorField<T>)> = branches
        .iter()
        .flat_map(|b| b.points.iter())
        .filter(|p| p.lambda >= lower && p.lambda <= upper)
        .map(|p| (p.lambda, p.u().sup_norm(), p.u()))
        .collect();
    if inside.is_empty() {
        return Err(Error::Empty("branch points in the a priori window"));
    }
    inside.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite λ"));
    let n = inside[0].2.n();
    let mut sup_bounds = vec![T::zero(); n];
    for (_, _, u) in &inside {
        for (b, s) in sup_bounds.iter_mut().zip(u.sup_norms()) {
            *b = b.max(s);
        }
    }
    let mut lower_bounds = vec![T::zero(); n];
    for p in branches.iter().flat_map(|b| b.points.iter()).filter(|p| p.lambda >= T::zero() && p.lambda <= upper) {
        for (b, m) in lower_bounds.iter_mut().zip(p.u().mins()) {
            *b = b.max((-m).max(T::zero()));
        }
    }
    let finite = sup_bounds.iter().chain(&lower_bounds).all(|v| v.is_finite());
    let mut norms: Vec<T> = inside.iter().map(|x| x.1).collect();
    let ordered = norms.clone();
    norms.sort_by(|a, b| a.partial_cmp(b).expect("finite norm"));
    let median = norms[norms.len() / 2];
    let zone = T::lit(EDGE_ZONE) * (upper - lower);
    let grows = |seq: Vec<(T, T)>| -> bool {
        // seq runs from the interior toward the edge
        let in_zone: Vec<T> = seq.iter().filter(|(d, _)| *d <= zone).map(|x| x.1).collect();
        let tail: Vec<T> = seq.iter().rev().take(3).map(|x| x.1).collect();
        let increasing = tail.len() == 3 && tail[0] > tail[1] && tail[1] > tail[2];
        let peak = in_zone.iter().copied().fold(T::zero(), T::max);
        increasing && peak > T::lit(EDGE_GROWTH_RATIO) * median
    };
    let toward_upper: Vec<(T, T)> = inside.iter().zip(&ordered).map(|(x, &s)| (upper - x.0, s)).collect();
    let toward_lower: Vec<(T, T)> = inside.iter().zip(&ordered).rev().map(|(x, &s)| (x.0 - lower, s)).collect();
    Ok(AprioriReport {
        window: (lower, upper),
        points_in_window: inside.len(),
        sup_bounds,
        lower_bounds,
        finite,
        growth_at_lower_edge: grows(toward_lower),
        growth_at_upper_edge: grows(toward_upper),
    })
}

/// Multiples of `φ` in the documented ladder, used with both signs and both seed shapes.
pub const PROBE_SCALES: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeAttempt {
    pub seed: String,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeOutcome<T> {
    AllFailed,
    /// A seed converged; the solution is attached for inspection.
    CounterexampleFound(Box<Solution<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport<T> {
    pub outcome: ProbeOutcome<T>,
    pub attempts: Vec<ProbeAttempt>,
}

impl<T> ProbeReport<T> {
    pub fn all_failed(&self) -> bool {
        matches!(self.outcome, ProbeOutcome::AllFailed)
    }
}

/// The documented ladder: zero, `u₀`, then `±t·φ` and the exponential profiles for
/// `t` in [`PROBE_SCALES`]. `nonnegative_only` drops the negative rungs and a `u₀`
/// with negative values.
pub fn documented_seeds<T: Real>(
    p: &ProblemSpec<T>,
    phi: &ScalarField<T>,
    u0: Option<&VectorField<T>>,
    nonnegative_only: bool,
) -> Vec<(String, VectorField<T>)> {
    let mut seeds = vec![("zero".to_string(), VectorField::zeros(p.grid().clone(), p.n()))];
    if let Some(u0) = u0 {
        if !nonnegative_only || u0.min() >= T::zero() {
            seeds.push(("u0".into(), u0.clone()));
        }
    }
    let signs: &[f64] = if nonnegative_only { &[1.0] } else { &[1.0, -1.0] };
    for &t in &PROBE_SCALES {
        for &sign in signs {
            for shape in [SeedShape::Scaled, SeedShape::Exponential] {
                let scale = T::lit(sign * t);
                let label = format!("{}{t}·phi ({shape:?})", if sign < 0.0 { "-" } else { "+" });
                seeds.push((label, seed_guess(phi, p.n(), scale, shape, p.gradient().mu_min())));
            }
        }
    }
    seeds
}

fn run_seeds<T: Real>(
    p: &ProblemSpec<T>,
    seeds: Vec<(String, VectorField<T>)>,
    accept: impl Fn(&Solution<T>) -> bool,
    opts: &SolveOptions<T>,
) -> ProbeReport<T> {
    let mut attempts = Vec::with_capacity(seeds.len());
    let mut found = None;
    for (seed, guess) in seeds {
        let result = newton_solve(p, &guess, opts).ok().filter(|s| s.converged && s.u.is_finite());
        let converged = result.as_ref().is_some_and(&accept);
        attempts.push(ProbeAttempt { seed, converged });
        if converged && found.is_none() {
            found = result;
        }
    }
    let outcome = match found {
        Some(s) => ProbeOutcome::CounterexampleFound(Box::new(s)),
        None => ProbeOutcome::AllFailed,
    };
    ProbeReport { outcome, attempts }
}

/// `h̃ = h⁻ + (A + Λ₂C₀)c̃`, per component.
pub fn modified_source<T: Real>(
    p: &ProblemSpec<T>,
    constants: &EstimateConstants<T>,
    window_top: T,
) -> Result<VectorField<T>> {
    let level = constants.a + window_top * constants.c0;
    let parts = p
        .rhs()
        .components()
        .iter()
        .map(|h| h.zip_map(&constants.c_tilde, |hv, c| (-hv).max(T::zero()) + level * c))
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(parts)
}

/// Tries every documented seed on `−F[u] = λ𝒞u + γh + ⟨M Du, Du⟩ + k h̃`.
/// With `k ≥ 1` no solution should exist; a converged seed is a counterexample.
#[allow(non_snake_case)]
pub fn nonexistence_probe_Pk<T: Real>(
    p: &ProblemSpec<T>,
    k: usize,
    constants: &EstimateConstants<T>,
    window_top: T,
    u0: Option<&VectorField<T>>,
    opts: &SolveOptions<T>,
) -> Result<ProbeReport<T>> {
    let h_tilde = modified_source(p, constants, window_top)?;
    let kk = T::from_usize_lossy(k);
    // the γ factor multiplies h only, so fold k h̃ in as k h̃/γ
    let gamma = p.gamma();
    if gamma == T::zero() && k > 0 {
        return Err(Error::InvalidProblem("the probe needs γ ≠ 0".into()));
    }
    let rhs = if k == 0 { p.rhs().clone() } else { p.rhs().zip_map(&h_tilde, |h, t| h + kk * t / gamma)? };
    let pk = p.clone().with_rhs(rhs)?;
    let seeds = documented_seeds(p, &constants.phi1, u0, false);
    Ok(run_seeds(&pk, seeds, |_| true, opts))
}

/// `λ̂₁`: principal eigenvalue of `ℳ⁻ − (b + 2μ₂‖Du₀‖∞)|Du|` with weight `ĉ`,
/// and its eigenfunction.
pub fn lambda_hat1<T: Real>(
    p: &ProblemSpec<T>,
    u0: &VectorField<T>,
    opts: &EigenOptions<T>,
) -> Result<(T, ScalarField<T>)> {
    let extra = T::two() * p.gradient().mu_max() * gradient_sup(u0);
    let r = principal_eigenpair(&global_lower_extremal(p, extra), &c_hat(p), EigenSign::Plus, opts)?;
    Ok((r.lambda1, r.phi1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonnegativeProbe<T> {
    pub lambda: T,
    pub lambda_hat1: T,
    /// Whether `λ ≥ λ̂₁`, the range where nonexistence is expected.
    pub above_threshold: bool,
    pub report: ProbeReport<T>,
}

impl<T> NonnegativeProbe<T> {
    pub fn found_nonnegative(&self) -> bool {
        !self.report.all_failed()
    }
}

/// Searches for a nonnegative solution at `λ` from nonnegative seeds only.
pub fn nonexistence_nonneg<T: Real>(
    p: &ProblemSpec<T>,
    lambda: T,
    u0: &VectorField<T>,
    opts: &EigenOptions<T>,
) -> Result<NonnegativeProbe<T>> {
    let (hat, phi) = lambda_hat1(p, u0, opts)?;
    let pl = p.clone().with_lambda(lambda);
    let seeds = documented_seeds(p, &phi, Some(u0), true);
    let report = run_seeds(&pl, seeds, |s| SignClass::of(&s.u) == SignClass::Nonnegative, &opts.solve);
    Ok(NonnegativeProbe { lambda, lambda_hat1: hat, above_threshold: lambda >= hat, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityEntry<T> {
    pub lambda: T,
    /// `None` at `λ = 0`, where only `u₀` exists.
    pub lower: Option<Solution<T>>,
    pub upper: Option<Solution<T>>,
    pub distinct: bool,
    pub order: Option<OrderReport<T>>,
    pub strict_in_some_block: bool,
    /// Strict order in every component; only meaningful for fully coupled systems.
    pub strict_in_all_components: bool,
    /// Every found one-signed solution lies strictly on the expected side of `u₀`.
    pub sign_clause: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityReport<T> {
    pub u0: VectorField<T>,
    pub fully_coupled: bool,
    pub entries: Vec<MultiplicityEntry<T>>,
    /// For increasing sampled `λ > 0`: whether each lower solution is `≪` the previous one.
    pub lower_decreasing: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityOptions<T> {
    pub steps: StepControls<T>,
    /// First rung and length of the upper-branch seed ladder.
    pub seed_scale: T,
    pub seed_rungs: usize,
}

impl<T: Real> Default for MultiplicityOptions<T> {
    fn default() -> Self {
        MultiplicityOptions { steps: StepControls::default(), seed_scale: T::one(), seed_rungs: 10 }
    }
}

/// For each `λ`: the lower solution by continuation from `u₀`, the upper one from the
/// seed ladder along `phi`, their distinctness and strict order.
pub fn certify_multiplicity<T: Real>(
    p: &ProblemSpec<T>,
    lambdas: &[T],
    phi: &ScalarField<T>,
    opts: &MultiplicityOptions<T>,
) -> Result<MultiplicityReport<T>> {
    let solve = &opts.steps.solve;
    let u0 = solve_P0(p, solve);
    if !u0.converged {
        return Err(Error::NoConvergence { iterations: u0.iterations, residual: u0.residual_norm.to_f64_lossy() });
    }
    let form = block_triangular_form(p.coupling());
    let fully_coupled = is_fully_coupled(p.coupling());
    let sign_of_u0 = SignClass::of(&u0.u);
    let entry = |lambda: T| -> Result<MultiplicityEntry<T>> {
        if lambda == T::zero() {
            return Ok(MultiplicityEntry {
                lambda,
                lower: Some(u0.clone()),
                upper: None,
                distinct: false,
                order: None,
                strict_in_some_block: false,
                strict_in_all_components: false,
                sign_clause: true,
                note: Some("multiplicity not applicable at λ = 0".into()),
            });
        }
        let branch = natural_continue(p, T::zero(), lambda, &u0, &opts.steps)?;
        let lower = (branch.last().lambda == lambda).then(|| branch.last().solution.clone());
        let Some(lower) = lower else {
            return Ok(MultiplicityEntry {
                lambda,
                lower: None,
                upper: None,
                distinct: false,
                order: None,
                strict_in_some_block: false,
                strict_in_all_components: false,
                sign_clause: false,
                note: Some(format!("lower branch stopped at λ = {}", branch.last().lambda)),
            });
        };
        let upper = seed_upper_branch(p, lambda, phi, opts.seed_scale, opts.seed_rungs, Some(&lower.u), solve)
            .ok()
            .filter(|s| s.distinct)
            .map(|s| s.solution);
        let (distinct, order) = match &upper {
            Some(up) => {
                let gap = (up.u.sup_norm() - lower.u.sup_norm()).abs().max(up.u.distance(&lower.u)?);
                let tol = T::lit(10.0) * lower.tolerance.max(up.tolerance);
                (gap > tol, Some(compare_order(&lower.u, &up.u, &form)?))
            }
            None => (false, None),
        };
        let mut sign_clause = true;
        for s in std::iter::once(&lower).chain(upper.as_ref()) {
            let class = SignClass::of(&s.u);
            if sign_of_u0 == SignClass::Nonpositive && class == SignClass::Nonpositive {
                sign_clause &= compare_order(&s.u, &u0.u, &form)?.strict_ll;
            }
            if sign_of_u0 == SignClass::Nonnegative && class == SignClass::Nonnegative && u0.u.sup_norm() > T::zero() {
                sign_clause &= compare_order(&u0.u, &s.u, &form)?.strict_ll;
            }
        }
        let strict_in_some_block = order.as_ref().is_some_and(OrderReport::strict_in_some_block);
        let strict_in_all_components = order.as_ref().is_some_and(|o| o.strict_ll);
        let note = upper.is_none().then(|| "no distinct second solution from the seed ladder".to_string());
        Ok(MultiplicityEntry {
            lambda,
            lower: Some(lower),
            upper,
            distinct,
            order,
            strict_in_some_block,
            strict_in_all_components,
            sign_clause,
            note,
        })
    };
    let entries = lambdas.par_iter().map(|&l| entry(l)).collect::<Result<Vec<_>>>()?;
    let mut positive: Vec<&MultiplicityEntry<T>> =
        entries.iter().filter(|e| e.lambda > T::zero() && e.lower.is_some()).collect();
    positive.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("finite λ"));
    let lower_decreasing = positive
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].lower.as_ref().expect("filtered"), w[1].lower.as_ref().expect("filtered"));
            compare_order(&b.u, &a.u, &form).map(|o| o.strict_ll).unwrap_or(false)
        })
        .collect();
    Ok(MultiplicityReport { u0: u0.u, fully_coupled, entries, lower_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::natural_continue;
    use crate::coupling::CouplingMatrix;
    use crate::grid::{build_grid, Grid};
    use crate::operators::GradientMatrixSpec;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(n: usize) -> Arc<Grid<f64>> {
        build_grid(1, &[(0.0, 1.0)], &[n]).unwrap()
    }

    fn model(g: &Arc<Grid<f64>>, mu: f64, h: f64) -> ProblemSpec<f64> {
        ProblemSpec::scalar(
            OperatorSpec::laplacian(g),
            mu,
            ScalarField::constant(g.clone(), 1.0),
            ScalarField::constant(g.clone(), h),
        )
        .unwrap()
    }

    #[test]
    fn hypotheses_pass_on_scalar_model() {
        let g = grid(29);
        let r = check_hypotheses(&model(&g, 1.0, 0.0), &SolveOptions::default()).unwrap();
        assert!(r.m_bounds.pass && r.h3.pass && r.h0.converged && r.fully_coupled);
        assert_eq!(r.h0.u.sup_norm(), 0.0);
        // u₀ ≡ 0 gives 𝒞u₀ ≡ 0
        assert!(!r.h4.unwrap().pass);
    }

    #[test]
    fn degenerate_gradient_matrix_fails_with_witness() {
        let g = grid(9);
        let m = ScalarField::from_fn(g.clone(), |x, _| (x - 0.5).abs() * 2.0);
        let p = model(&g, 1.0, -0.1).with_gradient(GradientMatrixSpec::new(vec![vec![m]]).unwrap()).unwrap();
        let r = check_hypotheses(&p, &SolveOptions::default()).unwrap();
        assert!(!r.m_bounds.pass);
        assert_eq!(r.m_bounds.witness.node, 5);
        assert!(!r.all_pass());
    }

    #[test]
    fn diagonal_coupling_with_zero_block_fails_h3() {
        let g = grid(9);
        let c = CouplingMatrix::constant(&g, &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let p = ProblemSpec::new(
            vec![OperatorSpec::laplacian(&g); 2],
            GradientMatrixSpec::scalar(&g, 2, 1.0).unwrap(),
            c,
            VectorField::replicate(&ScalarField::constant(g.clone(), -0.1), 2),
        )
        .unwrap();
        let r = check_hypotheses(&p, &SolveOptions::default()).unwrap();
        assert!(!r.h3.pass);
        assert!(!r.fully_coupled);
    }

    #[test]
    fn estimate_constants_scalar() {
        let g = grid(99);
        let p = model(&g, 1.0, -0.1);
        let k = estimate_constants(&p, &[], &EigenOptions::default()).unwrap();
        assert_eq!((k.m1, k.m2), (1.0, 1.0));
        assert!((k.lambda1 - PI * PI).abs() < 0.01);
        assert!((k.a - k.lambda1).abs() < 1e-12);
        assert!(k.c0 > 0.0 && k.c0 < 0.02);
        assert!(k.c_hat.values().iter().zip(k.c_tilde.values()).all(|(a, b)| a <= b));
        assert!(k.i_quotients[0] > 0.0);
    }

    #[test]
    fn apriori_examples() {
        let g = grid(49);
        let p = ProblemSpec::scalar(
            OperatorSpec::laplacian(&g),
            0.0,
            ScalarField::constant(g.clone(), 1.0),
            ScalarField::from_fn(g.clone(), |x, _| (PI * x).sin()),
        )
        .unwrap();
        let ctl = StepControls { max_step: 0.2, ..StepControls::default() };
        let start = solve_P0(&p, &ctl.solve);
        let safe = natural_continue(&p, 0.0, 0.5 * PI * PI, &start, &ctl).unwrap();
        let r = apriori_report(std::slice::from_ref(&safe), 0.1, 0.5 * PI * PI).unwrap();
        assert!(r.finite && !r.edge_growth());
        // 1/(π² − λ) at the upper end of the sampled branch
        assert!((r.sup_bounds[0] - 2.0 / (PI * PI)).abs() < 0.01);

        let near = natural_continue(&p, 0.0, 0.995 * PI * PI, &start, &ctl).unwrap();
        let r = apriori_report(&[near], 0.1, PI * PI).unwrap();
        assert!(r.growth_at_upper_edge && !r.growth_at_lower_edge);

        assert!(matches!(apriori_report(&[safe], 20.0, 30.0), Err(Error::Empty(_))));
    }

    #[test]
    fn probe_k0_finds_lower_solution() {
        let g = grid(49);
        let p = model(&g, 1.0, -0.1).with_lambda(0.2);
        let k = estimate_constants(&p, &[], &EigenOptions::default()).unwrap();
        let r = nonexistence_probe_Pk(&p, 0, &k, 0.2, None, &SolveOptions::default()).unwrap();
        assert!(!r.all_failed());
        assert!(r.attempts[0].converged);
    }

    #[test]
    fn lambda_hat_for_zero_u0_is_first_eigenvalue() {
        let g = grid(99);
        let p = model(&g, 1.0, 0.0);
        let (hat, _) = lambda_hat1(&p, &VectorField::zeros(g.clone(), 1), &EigenOptions::default()).unwrap();
        assert!((hat - PI * PI).abs() < 0.01 * PI * PI);
    }

    #[test]
    fn multiplicity_at_zero_is_not_applicable() {
        let g = grid(29);
        let p = model(&g, 1.0, -0.1);
        let phi = ScalarField::from_fn(g.clone(), |x, _| (PI * x).sin());
        let r = certify_multiplicity(&p, &[0.0], &phi, &MultiplicityOptions::default()).unwrap();
        assert!(r.entries[0].note.as_deref().unwrap().contains("not applicable"));
        assert!(r.entries[0].upper.is_none());
    }
}
