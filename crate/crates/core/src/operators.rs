//! Elliptic operators, gradient matrices and their pointwise discrete evaluation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::jet::{slot, Jet, CENTRE};
use crate::scalar::Real;

fn check_symmetric<T: Real>(x: &[Vec<T>]) -> Result<()> {
    let d = x.len();
    if d == 0 || d > 2 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidProblem(format!("expected a 1×1 or 2×2 matrix, got {d} rows")));
    }
    if d == 2 {
        let scale = x[0][1].abs().max(x[1][0].abs()).max(T::min_positive_value());
        if (x[0][1] - x[1][0]).abs() > T::lit(1e-12) * scale {
            return Err(Error::NotSymmetric);
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix of size at most two.
pub fn symmetric_eigenvalues<T: Real>(x: &[Vec<T>]) -> Result<Vec<T>> {
    check_symmetric(x)?;
    if x.len() == 1 {
        return Ok(vec![x[0][0]]);
    }
    let mean = (x[0][0] + x[1][1]) * T::half();
    let half_diff = (x[0][0] - x[1][1]) * T::half();
    let radius = half_diff.hypot(x[0][1]);
    Ok(vec![mean - radius, mean + radius])
}

/// `Λ Σ e⁺ + λ Σ e⁻` over the eigenvalues `e` of `x`.
pub fn pucci_plus<T: Real>(x: &[Vec<T>], lower: T, upper: T) -> Result<T> {
    check_ellipticity(lower, upper)?;
    let eig = symmetric_eigenvalues(x)?;
    Ok(eig.into_iter().map(|e| if e > T::zero() { upper * e } else { lower * e }).sum())
}

/// `λ Σ e⁺ + Λ Σ e⁻` over the eigenvalues `e` of `x`.
pub fn pucci_minus<T: Real>(x: &[Vec<T>], lower: T, upper: T) -> Result<T> {
    check_ellipticity(lower, upper)?;
    let eig = symmetric_eigenvalues(x)?;
    Ok(eig.into_iter().map(|e| if e > T::zero() { lower * e } else { upper * e }).sum())
}

fn check_ellipticity<T: Real>(lower: T, upper: T) -> Result<()> {
    if lower > T::zero() && upper >= lower && upper.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProblem(format!(
            "ellipticity constants must satisfy 0 < lower ≤ upper, got ({lower}, {upper})"
        )))
    }
}

/// `⟨M p, p⟩`.
pub fn gradient_quadratic<T: Real>(du: &[T], m: &[Vec<T>]) -> T {
    m.iter().zip(du).map(|(row, &pi)| row.iter().zip(du).map(|(&mij, &pj)| mij * pj).sum::<T>() * pi).sum()
}

/// Centred first and second differences at one interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives<T> {
    pub gradient: Vec<T>,
    pub second: Vec<T>,
}

pub fn discrete_derivatives<T: Real>(u: &ScalarField<T>, node: usize) -> Result<Derivatives<T>> {
    let grid = u.grid();
    if node >= grid.node_count() {
        return Err(Error::InvalidGrid(format!("node {node} out of range")));
    }
    if grid.is_boundary(node) {
        return Err(Error::BoundaryNode(node));
    }
    let mut gradient = Vec::with_capacity(grid.dim());
    let mut second = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let minus = u.get(grid.neighbor(node, axis, -1).expect("interior node"));
        let plus = u.get(grid.neighbor(node, axis, 1).expect("interior node"));
        let centre = u.get(node);
        gradient.push((plus - minus) / (T::two() * h));
        second.push((plus - centre - centre + minus) / (h * h));
    }
    Ok(Derivatives { gradient, second })
}

/// `Σ_α a_α(x) ∂_αα u + Σ_α b_α(x) ∂_α u` with axis-aligned diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator<T> {
    diffusion: Vec<ScalarField<T>>,
    drift: Vec<ScalarField<T>>,
}

impl<T: Real> LinearOperator<T> {
    pub fn new(diffusion: Vec<ScalarField<T>>, drift: Vec<ScalarField<T>>) -> Result<Self> {
        let first = diffusion.first().ok_or(Error::Empty("diffusion coefficients"))?;
        let dim = first.grid().dim();
        if diffusion.len() != dim || drift.len() != dim {
            return Err(Error::InvalidProblem(format!(
                "linear operator on a {dim}D grid needs {dim} diffusion and drift fields"
            )));
        }
        for f in diffusion.iter().chain(&drift) {
            first.check_same_grid(f)?;
        }
        for (axis, a) in diffusion.iter().enumerate() {
            if let Some(k) = a.values().iter().position(|&v| !(v > T::zero())) {
                return Err(Error::Domain { node: k, reason: format!("diffusion along axis {axis} is not positive") });
            }
        }
        Ok(LinearOperator { diffusion, drift })
    }

    pub fn constant(grid: &Arc<Grid<T>>, diffusion: &[T], drift: &[T]) -> Result<Self> {
        let mk = |vals: &[T]| vals.iter().map(|&v| ScalarField::constant(grid.clone(), v)).collect();
        Self::new(mk(diffusion), mk(drift))
    }

    pub fn laplacian(grid: &Arc<Grid<T>>) -> Self {
        let dim = grid.dim();
        Self::constant(grid, &vec![T::one(); dim], &vec![T::zero(); dim]).expect("unit diffusion is valid")
    }

    pub fn diffusion(&self) -> &[ScalarField<T>] {
        &self.diffusion
    }

    pub fn drift(&self) -> &[ScalarField<T>] {
        &self.drift
    }

    fn grid(&self) -> &Arc<Grid<T>> {
        self.diffusion[0].grid()
    }

    fn bounds(&self) -> (T, T) {
        self.diffusion.iter().fold((T::infinity(), T::zero()), |(lo, hi), a| (lo.min(a.min()), hi.max(a.max())))
    }

    fn max_drift(&self) -> T {
        let grid = self.grid();
        (0..grid.node_count())
            .map(|k| self.drift.iter().map(|b| b.get(k) * b.get(k)).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
    }
}

/// The operator `F_i` of one equation.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec<T> {
    Linear(LinearOperator<T>),
    /// `ℳ⁺(D²u) + b|Du|`.
    PucciPlus {
        lower: T,
        upper: T,
        drift: ScalarField<T>,
    },
    /// `ℳ⁻(D²u) − b|Du|`.
    PucciMinus {
        lower: T,
        upper: T,
        drift: ScalarField<T>,
    },
    /// Pointwise minimum over a finite family.
    BellmanMin(Vec<LinearOperator<T>>),
    /// Pointwise maximum over a finite family.
    BellmanMax(Vec<LinearOperator<T>>),
}

impl<T: Real> OperatorSpec<T> {
    pub fn laplacian(grid: &Arc<Grid<T>>) -> Self {
        OperatorSpec::Linear(LinearOperator::laplacian(grid))
    }

    pub fn pucci_plus(grid: &Arc<Grid<T>>, lower: T, upper: T, drift: T) -> Result<Self> {
        check_ellipticity(lower, upper)?;
        Ok(OperatorSpec::PucciPlus { lower, upper, drift: ScalarField::constant(grid.clone(), drift) })
    }

    pub fn pucci_minus(grid: &Arc<Grid<T>>, lower: T, upper: T, drift: T) -> Result<Self> {
        check_ellipticity(lower, upper)?;
        Ok(OperatorSpec::PucciMinus { lower, upper, drift: ScalarField::constant(grid.clone(), drift) })
    }

    pub fn bellman_min(members: Vec<LinearOperator<T>>) -> Result<Self> {
        Self::check_family(&members)?;
        Ok(OperatorSpec::BellmanMin(members))
    }

    pub fn bellman_max(members: Vec<LinearOperator<T>>) -> Result<Self> {
        Self::check_family(&members)?;
        Ok(OperatorSpec::BellmanMax(members))
    }

    fn check_family(members: &[LinearOperator<T>]) -> Result<()> {
        let first = members.first().ok_or(Error::Empty("Bellman family"))?;
        for m in &members[1..] {
            first.diffusion[0].check_same_grid(&m.diffusion[0])?;
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        match self {
            OperatorSpec::Linear(l) => l.grid(),
            OperatorSpec::PucciPlus { drift, .. } | OperatorSpec::PucciMinus { drift, .. } => drift.grid(),
            OperatorSpec::BellmanMin(m) | OperatorSpec::BellmanMax(m) => m[0].grid(),
        }
    }

    /// Ellipticity constants `(λ_P, Λ_P)`.
    pub fn ellipticity(&self) -> (T, T) {
        match self {
            OperatorSpec::Linear(l) => l.bounds(),
            OperatorSpec::PucciPlus { lower, upper, .. } | OperatorSpec::PucciMinus { lower, upper, .. } => {
                (*lower, *upper)
            }
            OperatorSpec::BellmanMin(m) | OperatorSpec::BellmanMax(m) => m
                .iter()
                .map(LinearOperator::bounds)
                .fold((T::infinity(), T::zero()), |(lo, hi), (a, b)| (lo.min(a), hi.max(b))),
        }
    }

    /// `max_x |b(x)|`.
    pub fn max_drift(&self) -> T {
        match self {
            OperatorSpec::Linear(l) => l.max_drift(),
            OperatorSpec::PucciPlus { drift, .. } | OperatorSpec::PucciMinus { drift, .. } => drift.sup_norm(),
            OperatorSpec::BellmanMin(m) | OperatorSpec::BellmanMax(m) => {
                m.iter().map(LinearOperator::max_drift).fold(T::zero(), T::max)
            }
        }
    }

    /// `G(p, X) = −F(−p, −X)`.
    pub fn dual(&self) -> Self {
        match self {
            OperatorSpec::Linear(l) => OperatorSpec::Linear(l.clone()),
            OperatorSpec::PucciPlus { lower, upper, drift } => {
                OperatorSpec::PucciMinus { lower: *lower, upper: *upper, drift: drift.clone() }
            }
            OperatorSpec::PucciMinus { lower, upper, drift } => {
                OperatorSpec::PucciPlus { lower: *lower, upper: *upper, drift: drift.clone() }
            }
            OperatorSpec::BellmanMin(m) => OperatorSpec::BellmanMax(m.clone()),
            OperatorSpec::BellmanMax(m) => OperatorSpec::BellmanMin(m.clone()),
        }
    }

    /// The lower extremal operator `ℳ⁻ − |b|∞|Du|` with this operator's constants.
    pub fn lower_extremal(&self) -> Self {
        let (lower, upper) = self.ellipticity();
        OperatorSpec::PucciMinus { lower, upper, drift: ScalarField::constant(self.grid().clone(), self.max_drift()) }
    }

    /// The upper extremal operator `ℳ⁺ + |b|∞|Du|`.
    pub fn upper_extremal(&self) -> Self {
        self.lower_extremal().dual()
    }

    pub fn name(&self) -> &'static str {
        match self {
            OperatorSpec::Linear(_) => "linear",
            OperatorSpec::PucciPlus { .. } => "pucci_plus",
            OperatorSpec::PucciMinus { .. } => "pucci_minus",
            OperatorSpec::BellmanMin(_) => "bellman_min",
            OperatorSpec::BellmanMax(_) => "bellman_max",
        }
    }
}

/// Per-component symmetric matrices `M_i(x)` of the quadratic gradient term.
///
/// In 1D each component stores `[m]`; in 2D `[m_xx, m_xy, m_yy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrixSpec<T> {
    entries: Vec<Vec<ScalarField<T>>>,
    mu_min: T,
    mu_max: T,
}

/// Where the smallest eigenvalue of the gradient matrices is attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenWitness<T> {
    pub component: usize,
    pub node: usize,
    pub value: T,
}

impl<T: Real> GradientMatrixSpec<T> {
    /// Rejects asymmetric layouts and matrices with a negative eigenvalue.
    pub fn new(entries: Vec<Vec<ScalarField<T>>>) -> Result<Self> {
        let first = entries.first().and_then(|e| e.first()).ok_or(Error::Empty("gradient matrices"))?;
        let grid = first.grid().clone();
        let expected = if grid.dim() == 1 { 1 } else { 3 };
        for e in &entries {
            if e.len() != expected {
                return Err(Error::InvalidProblem(format!(
                    "gradient matrix needs {expected} entries, got {}",
                    e.len()
                )));
            }
            for f in e {
                first.check_same_grid(f)?;
            }
        }
        let mut spec = GradientMatrixSpec { entries, mu_min: T::zero(), mu_max: T::zero() };
        let (lo, hi) = spec.eigen_range();
        if lo.value < -T::lit(1e-12) * (T::one() + hi.abs()) {
            return Err(Error::Domain {
                node: lo.node,
                reason: format!("gradient matrix {} has negative eigenvalue {}", lo.component + 1, lo.value),
            });
        }
        spec.mu_min = lo.value.max(T::zero());
        spec.mu_max = hi;
        Ok(spec)
    }

    /// `M_i = μ I` for every component.
    pub fn scalar(grid: &Arc<Grid<T>>, n: usize, mu: T) -> Result<Self> {
        let c = |v: T| ScalarField::constant(grid.clone(), v);
        let one = if grid.dim() == 1 { vec![c(mu)] } else { vec![c(mu), c(T::zero()), c(mu)] };
        Self::new(vec![one; n])
    }

    pub fn zero(grid: &Arc<Grid<T>>, n: usize) -> Self {
        Self::scalar(grid, n, T::zero()).expect("zero matrix is admissible")
    }

    /// Per-component constants `M_i = μ_i I`.
    pub fn per_component(grid: &Arc<Grid<T>>, mus: &[T]) -> Result<Self> {
        let c = |v: T| ScalarField::constant(grid.clone(), v);
        let entries = mus
            .iter()
            .map(|&mu| if grid.dim() == 1 { vec![c(mu)] } else { vec![c(mu), c(T::zero()), c(mu)] })
            .collect();
        Self::new(entries)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    /// Smallest eigenvalue over all components and nodes (clamped at zero).
    pub fn mu_min(&self) -> T {
        self.mu_min
    }

    pub fn mu_max(&self) -> T {
        self.mu_max
    }

    pub fn entries(&self, component: usize) -> &[ScalarField<T>] {
        &self.entries[component]
    }

    /// `M_i(x)` as a dense matrix.
    pub fn matrix(&self, component: usize, node: usize) -> Vec<Vec<T>> {
        let e = &self.entries[component];
        if e.len() == 1 {
            vec![vec![e[0].get(node)]]
        } else {
            let (a, b, c) = (e[0].get(node), e[1].get(node), e[2].get(node));
            vec![vec![a, b], vec![b, c]]
        }
    }

    #[inline]
    fn diagonal(&self, component: usize, node: usize, axis: usize) -> T {
        self.entries[component][2 * axis].get(node)
    }

    #[inline]
    fn off_diagonal(&self, component: usize, node: usize) -> T {
        let e = &self.entries[component];
        if e.len() == 3 {
            e[1].get(node)
        } else {
            T::zero()
        }
    }

    /// Smallest eigenvalue with its location, and the largest eigenvalue.
    pub fn eigen_range(&self) -> (EigenWitness<T>, T) {
        let nodes = self.entries[0][0].grid().node_count();
        let mut lo = EigenWitness { component: 0, node: 0, value: T::infinity() };
        let mut hi = T::neg_infinity();
        for i in 0..self.n() {
            for k in 0..nodes {
                let eig = symmetric_eigenvalues(&self.matrix(i, k)).expect("stored matrices are symmetric");
                if eig[0] < lo.value {
                    lo = EigenWitness { component: i, node: k, value: eig[0] };
                }
                hi = hi.max(*eig.last().unwrap());
            }
        }
        (lo, hi)
    }
}

/// Discretization of the principal part together with the gradient term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientScheme {
    /// Centred differences for both `D²u` and `⟨M Du, Du⟩`.
    #[default]
    Centered,
    /// Per axis, `a ∂²u + M_αα (∂u)²` is replaced by the exponentially fitted
    /// difference `a (E(δ₊) + E(δ₋)) / h²` with `E(δ) = (e^{mδ} − 1)/m`,
    /// `m = M_αα / a`. The scheme is monotone and reproduces the exponential
    /// change of variables exactly on the grid.
    ExponentialFit,
}

/// Stencil jets along one axis.
pub(crate) struct AxisStencil<T> {
    /// `u₋ − u₀` and `u₊ − u₀`
    pub minus: Jet<T>,
    pub plus: Jet<T>,
    pub spacing: T,
}

impl<T: Real> AxisStencil<T> {
    pub fn second(&self) -> Jet<T> {
        (self.plus + self.minus).scale(T::one() / (self.spacing * self.spacing))
    }

    pub fn first(&self) -> Jet<T> {
        (self.plus - self.minus).scale(T::one() / (T::two() * self.spacing))
    }
}

/// Builds the stencil of `values` (one component, all nodes) at interior node `k`.
pub(crate) fn stencil<T: Real>(grid: &Grid<T>, values: &[T], k: usize) -> Vec<AxisStencil<T>> {
    let centre = Jet::seed(values[k], CENTRE);
    (0..grid.dim())
        .map(|axis| {
            let m = grid.neighbor(k, axis, -1).expect("interior node");
            let p = grid.neighbor(k, axis, 1).expect("interior node");
            AxisStencil {
                minus: Jet::seed(values[m], slot(axis, -1)) - centre,
                plus: Jet::seed(values[p], slot(axis, 1)) - centre,
                spacing: grid.spacing(axis),
            }
        })
        .collect()
}

/// `a ∂²u` plus, when `m ≠ 0`, the matching `m (∂u)²` contribution.
fn axis_term<T: Real>(a: T, m: T, ax: &AxisStencil<T>, scheme: GradientScheme) -> Jet<T> {
    match scheme {
        GradientScheme::Centered => {
            let s = ax.second().scale(a);
            if m == T::zero() {
                s
            } else {
                let d = ax.first();
                s + (d * d).scale(m)
            }
        }
        GradientScheme::ExponentialFit => {
            let rate = m / a;
            (ax.plus.expm1_over(rate) + ax.minus.expm1_over(rate)).scale(a / (ax.spacing * ax.spacing))
        }
    }
}

fn gradient_norm<T: Real>(axes: &[AxisStencil<T>]) -> Jet<T> {
    if axes.len() == 1 {
        axes[0].first().abs()
    } else {
        let sq = axes.iter().map(|ax| {
            let d = ax.first();
            d * d
        });
        sq.fold(Jet::constant(T::zero()), |acc, t| acc + t).sqrt()
    }
}

fn linear_at<T: Real>(
    l: &LinearOperator<T>,
    k: usize,
    m_diag: &[T],
    axes: &[AxisStencil<T>],
    scheme: GradientScheme,
) -> Jet<T> {
    axes.iter().enumerate().fold(Jet::constant(T::zero()), |acc, (axis, ax)| {
        let a = l.diffusion[axis].get(k);
        let b = l.drift[axis].get(k);
        acc + axis_term(a, m_diag[axis], ax, scheme) + ax.first().scale(b)
    })
}

/// Picks by value; the first candidate wins ties.
fn select<T: Real>(candidates: impl Iterator<Item = Jet<T>>, prefer_larger: bool) -> Jet<T> {
    candidates
        .reduce(|best, c| {
            let better = if prefer_larger { c.value > best.value } else { c.value < best.value };
            if better {
                c
            } else {
                best
            }
        })
        .expect("nonempty candidate list")
}

/// `F[u] + Σ_α M_αα (∂_α u)²` at node `k`, where `m_diag` holds the diagonal of
/// `M` (zeros when the gradient term is excluded). The off-diagonal part of
/// the gradient term is not included.
pub(crate) fn principal_part<T: Real>(
    op: &OperatorSpec<T>,
    k: usize,
    m_diag: &[T],
    axes: &[AxisStencil<T>],
    scheme: GradientScheme,
) -> Jet<T> {
    match op {
        OperatorSpec::Linear(l) => linear_at(l, k, m_diag, axes, scheme),
        OperatorSpec::PucciPlus { lower, upper, drift } | OperatorSpec::PucciMinus { lower, upper, drift } => {
            let plus = matches!(op, OperatorSpec::PucciPlus { .. });
            let second = axes.iter().enumerate().fold(Jet::constant(T::zero()), |acc, (axis, ax)| {
                let lo = axis_term(*lower, m_diag[axis], ax, scheme);
                let hi = axis_term(*upper, m_diag[axis], ax, scheme);
                acc + select([lo, hi].into_iter(), plus)
            });
            let b = drift.get(k);
            if b == T::zero() {
                second
            } else {
                let g = gradient_norm(axes).scale(b);
                if plus {
                    second + g
                } else {
                    second - g
                }
            }
        }
        OperatorSpec::BellmanMin(members) => {
            select(members.iter().map(|l| linear_at(l, k, m_diag, axes, scheme)), false)
        }
        OperatorSpec::BellmanMax(members) => {
            select(members.iter().map(|l| linear_at(l, k, m_diag, axes, scheme)), true)
        }
    }
}

/// `F_i[u] + ⟨M_i Du, Du⟩` (or just `F_i[u]` when `with_gradient` is false) at node `k`.
pub(crate) fn operator_with_gradient<T: Real>(
    op: &OperatorSpec<T>,
    gradient: &GradientMatrixSpec<T>,
    component: usize,
    k: usize,
    axes: &[AxisStencil<T>],
    scheme: GradientScheme,
    with_gradient: bool,
) -> Jet<T> {
    let dim = axes.len();
    let mut m_diag = [T::zero(); 2];
    if with_gradient {
        for (axis, m) in m_diag.iter_mut().enumerate().take(dim) {
            *m = gradient.diagonal(component, k, axis);
        }
    }
    let mut value = principal_part(op, k, &m_diag[..dim], axes, scheme);
    if with_gradient && dim == 2 {
        let mxy = gradient.off_diagonal(component, k);
        if mxy != T::zero() {
            value = value + (axes[0].first() * axes[1].first()).scale(T::two() * mxy);
        }
    }
    value
}
