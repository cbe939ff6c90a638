//! Exponential changes of variables `mv = e^{mu} − 1` and `mw = 1 − e^{−mu}`.

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::operators::{pucci_minus, pucci_plus};
use crate::scalar::Real;

/// Largest exponent the maps accept before reporting overflow.
pub const EXPONENT_LIMIT: f64 = 700.0;

fn check_rate<T: Real>(m: T) -> Result<()> {
    if m > T::zero() && m.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!("exponential rate must be positive, got {m}")))
    }
}

fn map_guarded<T: Real>(u: &ScalarField<T>, exponent_sign: T, m: T, f: impl Fn(T) -> T) -> Result<ScalarField<T>> {
    check_rate(m)?;
    if let Some(k) = u.values().iter().position(|&x| exponent_sign * m * x > T::lit(EXPONENT_LIMIT)) {
        return Err(Error::Domain { node: k, reason: format!("exponent {} overflows", exponent_sign * m * u.get(k)) });
    }
    Ok(u.map(f))
}

/// `v = (e^{mu} − 1)/m`.
pub fn exp_change_up<T: Real>(u: &ScalarField<T>, m: T) -> Result<ScalarField<T>> {
    map_guarded(u, T::one(), m, |x| (m * x).exp_m1() / m)
}

/// `w = (1 − e^{−mu})/m`.
pub fn exp_change_down<T: Real>(u: &ScalarField<T>, m: T) -> Result<ScalarField<T>> {
    map_guarded(u, -T::one(), m, |x| -(-m * x).exp_m1() / m)
}

/// `u = ln(1 + mv)/m`, the inverse of [`exp_change_up`].
pub fn invert_up<T: Real>(v: &ScalarField<T>, m: T) -> Result<ScalarField<T>> {
    check_rate(m)?;
    if let Some(k) = v.values().iter().position(|&x| !(T::one() + m * x > T::zero())) {
        return Err(Error::Domain {
            node: k,
            reason: format!("1 + m·v = {} is not positive", T::one() + m * v.get(k)),
        });
    }
    Ok(v.map(|x| (m * x).ln_1p() / m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport<T> {
    pub pass: bool,
    /// Largest amount by which either inequality fails, over both extremal operators.
    pub max_violation: T,
    pub tolerance: T,
    pub worst_node: Option<usize>,
}

/// Default constant in the `tol_factor · h²` acceptance level.
pub const SANDWICH_TOL_FACTOR: f64 = 10.0;

/// Checks `ℳ(D²u) + mλ|Du|² ≤ ℳ(D²v)/(1 + mv) ≤ ℳ(D²u) + mΛ|Du|²` with
/// `v = exp_change_up(u, m)` for both extremal operators `ℳ = ℳ±`, nodewise
/// on the diagonal Hessian.
///
/// Derivatives are fourth-order central differences where the five-point
/// stencil fits inside the grid and second-order next to the boundary.
pub fn verify_exp_sandwich<T: Real>(
    u: &ScalarField<T>,
    m: T,
    lower: T,
    upper: T,
    tol_factor: T,
) -> Result<SandwichReport<T>> {
    let v = exp_change_up(u, m)?;
    let grid = u.grid();
    let h = (0..grid.dim()).map(|a| grid.spacing(a)).fold(T::zero(), T::max);
    let tolerance = tol_factor * h * h;
    let mut max_violation = T::zero();
    let mut worst_node = None;
    for k in grid.interior_nodes() {
        let mut hess_u = vec![vec![T::zero(); grid.dim()]; grid.dim()];
        let mut hess_v = hess_u.clone();
        let mut grad_sq = T::zero();
        for axis in 0..grid.dim() {
            let (du, d2u) = derivatives(u, k, axis);
            let (_, d2v) = derivatives(&v, k, axis);
            hess_u[axis][axis] = d2u;
            hess_v[axis][axis] = d2v;
            grad_sq += du * du;
        }
        let scale = T::one() + m * v.get(k);
        for plus in [true, false] {
            let ext = |x: &[Vec<T>]| if plus { pucci_plus(x, lower, upper) } else { pucci_minus(x, lower, upper) };
            let base = ext(&hess_u)?;
            let middle = ext(&hess_v)? / scale;
            let violation = (base + m * lower * grad_sq - middle).max(middle - base - m * upper * grad_sq);
            if violation > max_violation {
                max_violation = violation;
                worst_node = Some(k);
            }
        }
    }
    Ok(SandwichReport { pass: max_violation <= tolerance, max_violation, tolerance, worst_node })
}

/// First and second difference along `axis`.
fn derivatives<T: Real>(u: &ScalarField<T>, k: usize, axis: usize) -> (T, T) {
    let grid = u.grid();
    let h = grid.spacing(axis);
    let at = |step: isize| {
        let mut node = k;
        for _ in 0..step.unsigned_abs() {
            node = grid.neighbor(node, axis, step.signum())?;
        }
        Some(u.get(node))
    };
    let (m1, p1) = (at(-1).expect("interior"), at(1).expect("interior"));
    let c = u.get(k);
    match (at(-2), at(2)) {
        (Some(m2), Some(p2)) => {
            let twelve = T::lit(12.0);
            let first = (m2 - T::lit(8.0) * m1 + T::lit(8.0) * p1 - p2) / (twelve * h);
            let second = (-m2 + T::lit(16.0) * m1 - T::lit(30.0) * c + T::lit(16.0) * p1 - p2) / (twelve * h * h);
            (first, second)
        }
        _ => ((p1 - m1) / (T::two() * h), (p1 - T::two() * c + m1) / (h * h)),
    }
}
