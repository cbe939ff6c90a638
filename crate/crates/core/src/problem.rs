//! The discrete system `−F_i[u_i] − ⟨M_i Du_i, Du_i⟩ = λ (𝒞u)_i + γ h_i` with
//! homogeneous Dirichlet data, its residual and its linearization.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::jet::{slot, CENTRE};
use crate::linalg::SparseMatrix;
use crate::operators::{operator_with_gradient, stencil, GradientMatrixSpec, GradientScheme, OperatorSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    operators: Vec<OperatorSpec<T>>,
    gradient: GradientMatrixSpec<T>,
    coupling: CouplingMatrix<T>,
    rhs: VectorField<T>,
    lambda: T,
    gamma: T,
    scheme: GradientScheme,
}

impl<T: Real> ProblemSpec<T> {
    /// `λ = 0`, `γ = 1`, centred scheme.
    pub fn new(
        operators: Vec<OperatorSpec<T>>,
        gradient: GradientMatrixSpec<T>,
        coupling: CouplingMatrix<T>,
        rhs: VectorField<T>,
    ) -> Result<Self> {
        let n = rhs.n();
        if operators.len() != n || gradient.n() != n || coupling.n() != n {
            return Err(Error::InvalidProblem(format!(
                "component counts disagree: {} operators, {} gradient matrices, {}×{} coupling, {} right-hand sides",
                operators.len(),
                gradient.n(),
                coupling.n(),
                coupling.n(),
                n
            )));
        }
        let grid = rhs.grid().clone();
        let same = |g: &Arc<Grid<T>>| Arc::ptr_eq(g, &grid) || **g == *grid;
        if !operators.iter().all(|op| same(op.grid())) || !same(coupling.grid()) || !same(gradient.entries(0)[0].grid())
        {
            return Err(Error::FieldMismatch("problem data live on different grids".into()));
        }
        Ok(ProblemSpec {
            operators,
            gradient,
            coupling,
            rhs,
            lambda: T::zero(),
            gamma: T::one(),
            scheme: GradientScheme::Centered,
        })
    }

    /// One equation `−F[u] − μ|Du|² = λ c u + h`.
    pub fn scalar(op: OperatorSpec<T>, mu: T, c: ScalarField<T>, h: ScalarField<T>) -> Result<Self> {
        let grid = h.grid().clone();
        let coupling = CouplingMatrix::new(vec![vec![c]], T::lit(crate::coupling::DEFAULT_THRESHOLD))?;
        Self::new(vec![op], GradientMatrixSpec::scalar(&grid, 1, mu)?, coupling, VectorField::replicate(&h, 1))
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_scheme(mut self, scheme: GradientScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_rhs(mut self, rhs: VectorField<T>) -> Result<Self> {
        self.rhs.check_compatible(&rhs)?;
        self.rhs = rhs;
        Ok(self)
    }

    pub fn with_operators(mut self, operators: Vec<OperatorSpec<T>>) -> Result<Self> {
        if operators.len() != self.n() {
            return Err(Error::InvalidProblem("operator count must match component count".into()));
        }
        self.operators = operators;
        Ok(self)
    }

    pub fn with_gradient(mut self, gradient: GradientMatrixSpec<T>) -> Result<Self> {
        if gradient.n() != self.n() {
            return Err(Error::InvalidProblem("gradient matrix count must match component count".into()));
        }
        self.gradient = gradient;
        Ok(self)
    }

    pub fn with_coupling(mut self, coupling: CouplingMatrix<T>) -> Result<Self> {
        if coupling.n() != self.n() {
            return Err(Error::InvalidProblem("coupling size must match component count".into()));
        }
        self.coupling = coupling;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.rhs.n()
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        self.rhs.grid()
    }

    pub fn operators(&self) -> &[OperatorSpec<T>] {
        &self.operators
    }

    pub fn gradient(&self) -> &GradientMatrixSpec<T> {
        &self.gradient
    }

    pub fn coupling(&self) -> &CouplingMatrix<T> {
        &self.coupling
    }

    pub fn rhs(&self) -> &VectorField<T> {
        &self.rhs
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn scheme(&self) -> GradientScheme {
        self.scheme
    }

    /// Number of scalar unknowns, boundary nodes included.
    pub fn unknowns(&self) -> usize {
        self.n() * self.grid().node_count()
    }

    /// Smallest and largest ellipticity constants over all operators.
    pub fn ellipticity(&self) -> (T, T) {
        self.operators
            .iter()
            .map(OperatorSpec::ellipticity)
            .fold((T::infinity(), T::zero()), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
    }

    pub fn check_field(&self, u: &VectorField<T>) -> Result<()> {
        self.rhs.check_compatible(u)
    }
}

/// Which terms of the system are kept when assembling.
#[derive(Debug, Clone)]
pub(crate) struct Assembly<'a, T> {
    pub gradient: bool,
    pub coupling: bool,
    /// Adds `shift · u_i` to interior rows.
    pub shift: T,
    /// Node-major replacement for `γ h`.
    pub source: Option<&'a [T]>,
}

impl<T: Real> Assembly<'_, T> {
    pub fn full() -> Self {
        Assembly { gradient: true, coupling: true, shift: T::zero(), source: None }
    }
}

/// Residual value and sparse Jacobian row `(column, value)` of one unknown.
type ResidualRow<T> = (T, Vec<(usize, T)>);

/// Residual (node-major) and, on request, the Jacobian of the selected system.
pub(crate) fn assemble<T: Real>(
    p: &ProblemSpec<T>,
    u: &[T],
    terms: &Assembly<'_, T>,
    with_jacobian: bool,
) -> (Vec<T>, Option<SparseMatrix<T>>) {
    let grid = p.grid();
    let n = p.n();
    let nodes = grid.node_count();
    debug_assert_eq!(u.len(), n * nodes);
    let component_values: Vec<Vec<T>> = (0..n).map(|i| (0..nodes).map(|k| u[k * n + i]).collect()).collect();

    let per_node: Vec<Vec<ResidualRow<T>>> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            (0..n)
                .map(|i| {
                    let row = k * n + i;
                    if grid.is_boundary(k) {
                        return (u[row], if with_jacobian { vec![(row, T::one())] } else { Vec::new() });
                    }
                    let axes = stencil(grid, &component_values[i], k);
                    let f = operator_with_gradient(&p.operators[i], &p.gradient, i, k, &axes, p.scheme, terms.gradient);
                    let source = match terms.source {
                        Some(s) => s[row],
                        None => p.gamma * p.rhs.get(i, k),
                    };
                    let mut r = -f.value + terms.shift * u[row] - source;
                    let mut entries = Vec::new();
                    if with_jacobian {
                        entries.push((row, -f.grad[CENTRE] + terms.shift));
                        for axis in 0..grid.dim() {
                            for step in [-1isize, 1] {
                                let nb = grid.neighbor(k, axis, step).expect("interior node");
                                entries.push((nb * n + i, -f.grad[slot(axis, step)]));
                            }
                        }
                    }
                    if terms.coupling {
                        for j in 0..n {
                            let c = p.coupling.value(i, j, k);
                            if c != T::zero() {
                                r -= p.lambda * c * u[k * n + j];
                                if with_jacobian {
                                    entries.push((k * n + j, -p.lambda * c));
                                }
                            }
                        }
                    }
                    (r, entries)
                })
                .collect()
        })
        .collect();

    let mut residual = Vec::with_capacity(n * nodes);
    let mut jacobian = with_jacobian.then(|| SparseMatrix::new(n * nodes));
    for (k, rows) in per_node.into_iter().enumerate() {
        for (i, (r, entries)) in rows.into_iter().enumerate() {
            residual.push(r);
            if let Some(j) = jacobian.as_mut() {
                for (col, v) in entries {
                    j.add(k * n + i, col, v);
                }
            }
        }
    }
    (residual, jacobian)
}

/// `∂r/∂λ = −(𝒞u)_i` on interior rows, zero on boundary rows.
pub(crate) fn lambda_derivative<T: Real>(p: &ProblemSpec<T>, u: &[T]) -> Vec<T> {
    let grid = p.grid();
    let n = p.n();
    let mut out = vec![T::zero(); u.len()];
    for k in grid.interior_nodes() {
        for i in 0..n {
            out[k * n + i] = -(0..n).map(|j| p.coupling.value(i, j, k) * u[k * n + j]).sum::<T>();
        }
    }
    out
}

/// Centred gradient of component `i` at interior node `k`.
pub(crate) fn centred_gradient<T: Real>(grid: &Grid<T>, values: &[T], n: usize, i: usize, k: usize) -> [T; 2] {
    let mut g = [T::zero(); 2];
    for (axis, slot) in g.iter_mut().enumerate().take(grid.dim()) {
        let m = grid.neighbor(k, axis, -1).expect("interior node");
        let p = grid.neighbor(k, axis, 1).expect("interior node");
        *slot = (values[p * n + i] - values[m * n + i]) / (T::two() * grid.spacing(axis));
    }
    g
}

/// `λ(𝒞u)_i + ⟨M_i Du_i, Du_i⟩ + γh_i + shift·u_i` on interior rows, zero on boundary rows.
pub(crate) fn frozen_source<T: Real>(p: &ProblemSpec<T>, u: &[T], shift: T) -> Vec<T> {
    let grid = p.grid();
    let n = p.n();
    let mut out = vec![T::zero(); u.len()];
    for k in grid.interior_nodes() {
        for i in 0..n {
            let g = centred_gradient(grid, u, n, i, k);
            let quad = crate::operators::gradient_quadratic(&g[..grid.dim()], &p.gradient.matrix(i, k));
            let coupled: T = (0..n).map(|j| p.coupling.value(i, j, k) * u[k * n + j]).sum();
            out[k * n + i] = p.lambda * coupled + quad + p.gamma * p.rhs.get(i, k) + shift * u[k * n + i];
        }
    }
    out
}

/// `max |Du|` over interior nodes and components (centred differences).
pub fn gradient_sup<T: Real>(u: &VectorField<T>) -> T {
    let grid = u.grid();
    let n = u.n();
    let flat = u.to_flat();
    let mut best = T::zero();
    for k in grid.interior_nodes() {
        for i in 0..n {
            let g = centred_gradient(grid, &flat, n, i, k);
            best = best.max((g[0] * g[0] + g[1] * g[1]).sqrt());
        }
    }
    best
}

/// `r_i = −F_i[u] − ⟨M_i Du, Du⟩ − λ(𝒞u)_i − γh_i` inside, `r_i = u_i` on the boundary.
pub fn residual<T: Real>(p: &ProblemSpec<T>, u: &VectorField<T>) -> Result<VectorField<T>> {
    p.check_field(u)?;
    let (r, _) = assemble(p, &u.to_flat(), &Assembly::full(), false);
    Ok(VectorField::from_flat(p.grid(), p.n(), &r))
}

/// Jacobian of [`residual`] with Pucci and Bellman kinks resolved by the active branch.
/// Unknowns are ordered node-major (`node · n + component`).
pub fn linearize<T: Real>(p: &ProblemSpec<T>, u: &VectorField<T>) -> Result<SparseMatrix<T>> {
    p.check_field(u)?;
    let (_, j) = assemble(p, &u.to_flat(), &Assembly::full(), true);
    Ok(j.expect("jacobian requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use rand::{Rng, SeedableRng};

    fn grid1(n: usize) -> Arc<Grid<f64>> {
        build_grid(1, &[(0.0, 1.0)], &[n]).unwrap()
    }

    fn laplace_problem(g: &Arc<Grid<f64>>, mu: f64, h: ScalarField<f64>) -> ProblemSpec<f64> {
        ProblemSpec::scalar(OperatorSpec::laplacian(g), mu, ScalarField::constant(g.clone(), 1.0), h).unwrap()
    }

    #[test]
    fn zero_field_zero_data() {
        let g = grid1(9);
        let p = laplace_problem(&g, 1.0, ScalarField::zeros(g.clone())).with_lambda(3.0);
        let r = residual(&p, &VectorField::zeros(g.clone(), 1)).unwrap();
        assert_eq!(r.sup_norm(), 0.0);
    }

    #[test]
    fn parabola_is_exact() {
        let g = grid1(19);
        let u = VectorField::replicate(&ScalarField::from_fn(g.clone(), |x, _| x * (1.0 - x)), 1);
        let p = laplace_problem(&g, 0.0, ScalarField::constant(g.clone(), 2.0));
        assert!(residual(&p, &u).unwrap().sup_norm() < 1e-11);

        // with the gradient term: r = −(1−2x)² − (h − 2), here h ≡ 2; centred differences are exact for quadratics
        let p = laplace_problem(&g, 1.0, ScalarField::constant(g.clone(), 2.0));
        let r = residual(&p, &u).unwrap();
        for k in g.interior_nodes() {
            let x = g.coord(k, 0);
            assert!((r.get(0, k) + (1.0 - 2.0 * x).powi(2)).abs() < 1e-11);
        }
    }

    #[test]
    fn laplacian_jacobian_is_tridiagonal() {
        let g = grid1(5);
        let p = laplace_problem(&g, 0.0, ScalarField::zeros(g.clone()));
        let j = linearize(&p, &VectorField::zeros(g.clone(), 1)).unwrap();
        let h2 = g.spacing(0).powi(2);
        for k in 0..g.node_count() {
            if g.is_boundary(k) {
                assert_eq!(j.row(k), &[(k, 1.0)]);
            } else {
                assert!((j.get(k, k) - 2.0 / h2).abs() < 1e-9);
                assert!((j.get(k, k - 1) + 1.0 / h2).abs() < 1e-9);
                assert!((j.get(k, k + 1) + 1.0 / h2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pucci_row_matches_linear_row_where_convex() {
        let g = grid1(7);
        let u = VectorField::replicate(&ScalarField::from_fn_dirichlet(g.clone(), |x, _| x * x), 1);
        let h = ScalarField::zeros(g.clone());
        let pucci = ProblemSpec::scalar(
            OperatorSpec::pucci_plus(&g, 1.0, 2.0, 0.0).unwrap(),
            0.0,
            ScalarField::zeros(g.clone()),
            h.clone(),
        )
        .unwrap();
        let linear = ProblemSpec::scalar(
            OperatorSpec::Linear(crate::operators::LinearOperator::constant(&g, &[2.0], &[0.0]).unwrap()),
            0.0,
            ScalarField::zeros(g.clone()),
            h,
        )
        .unwrap();
        let a = linearize(&pucci, &u).unwrap();
        let b = linearize(&linear, &u).unwrap();
        // interior nodes away from the boundary jump see a positive second difference
        for k in 2..g.node_count() - 2 {
            for c in 0..g.node_count() {
                assert_eq!(a.get(k, c), b.get(k, c));
            }
        }
    }

    fn jvp_check(p: &ProblemSpec<f64>, seed: u64) {
        let g = p.grid().clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = p.n();
        let comps: Vec<ScalarField<f64>> = (0..n)
            .map(|i| {
                let (a, b) = (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0));
                ScalarField::from_fn_dirichlet(g.clone(), move |x, y| {
                    a * (3.0 * x + i as f64).sin() * (1.0 + b * y) + 0.3
                })
            })
            .collect();
        let u = VectorField::new(comps).unwrap();
        let v = VectorField::new(
            (0..n).map(|i| ScalarField::from_fn(g.clone(), move |x, y| (2.0 * x + y + i as f64).cos())).collect(),
        )
        .unwrap();
        let j = linearize(p, &u).unwrap();
        let jv = j.matvec(&v.to_flat());
        let r0 = residual(p, &u).unwrap().to_flat();
        let mut errors = Vec::new();
        for eps in [1e-4, 1e-5] {
            let shifted = u.zip_map(&v, |a, b| a + eps * b).unwrap();
            let r1 = residual(p, &shifted).unwrap().to_flat();
            let err = jv
                .iter()
                .zip(r1.iter().zip(&r0))
                .map(|(&jvi, (&a, &b))| (jvi - (a - b) / eps).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        let scale = crate::scalar::max_abs(&jv).max(1.0);
        // first order in ε: shrinking ε tenfold shrinks the mismatch roughly tenfold
        assert!(errors[1] < 0.2 * errors[0] + 1e-7 * scale, "errors {errors:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = grid1(15);
        for scheme in [GradientScheme::Centered, GradientScheme::ExponentialFit] {
            let p = ProblemSpec::scalar(
                OperatorSpec::Linear(crate::operators::LinearOperator::constant(&g, &[1.5], &[0.7]).unwrap()),
                1.3,
                ScalarField::constant(g.clone(), 1.0),
                ScalarField::constant(g.clone(), 0.4),
            )
            .unwrap()
            .with_lambda(2.0)
            .with_scheme(scheme);
            jvp_check(&p, 1);
        }
        let g2 = build_grid(2, &[(0.0, 1.0), (0.0, 2.0)], &[5, 6]).unwrap();
        let coupling = CouplingMatrix::constant(&g2, &[vec![0.5, 1.0], vec![2.0, 0.0]]).unwrap();
        let m = GradientMatrixSpec::new(vec![
            vec![
                ScalarField::constant(g2.clone(), 1.0),
                ScalarField::constant(g2.clone(), 0.3),
                ScalarField::constant(g2.clone(), 2.0),
            ],
            vec![
                ScalarField::constant(g2.clone(), 0.5),
                ScalarField::constant(g2.clone(), 0.0),
                ScalarField::constant(g2.clone(), 0.5),
            ],
        ])
        .unwrap();
        let ops = vec![
            OperatorSpec::Linear(crate::operators::LinearOperator::constant(&g2, &[1.0, 2.0], &[0.1, -0.2]).unwrap()),
            OperatorSpec::Linear(crate::operators::LinearOperator::laplacian(&g2)),
        ];
        let p = ProblemSpec::new(ops, m, coupling, VectorField::zeros(g2.clone(), 2)).unwrap().with_lambda(1.5);
        jvp_check(&p, 2);
    }

    proptest::proptest! {
        #[test]
        fn homogeneous_without_gradient_term(t in 0.0f64..5.0, seed in 0u64..100) {
            let g = grid1(11);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);
            let h = ScalarField::from_fn(g.clone(), |x, _| a * x + b);
            let u = VectorField::replicate(&ScalarField::from_fn_dirichlet(g.clone(), |x, _| (a * 4.0 * x).sin() + b * x), 1);
            let p = ProblemSpec::scalar(OperatorSpec::pucci_minus(&g, 1.0, 3.0, 0.5).unwrap(), 0.0,
                ScalarField::constant(g.clone(), 1.0), h.clone()).unwrap().with_lambda(1.7);
            let scaled = p.clone().with_rhs(VectorField::replicate(&h.scale(t), 1)).unwrap();
            let r = residual(&p, &u).unwrap().scale(t);
            let rt = residual(&scaled, &u.scale(t)).unwrap();
            proptest::prop_assert!(r.distance(&rt).unwrap() < 1e-9 * (1.0 + r.sup_norm()));
        }

        #[test]
        fn structure_condition_holds(seed in 0u64..200) {
            // F[u] − F[v] ≤ ℳ⁺[u − v] for the Pucci family, discretely
            let g = grid1(13);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..6.0));
            let u = ScalarField::from_fn_dirichlet(g.clone(), |x, _| a * (c * x).sin());
            let v = ScalarField::from_fn_dirichlet(g.clone(), |x, _| b * x * (1.0 - x) + (c * x).cos());
            let zero = ScalarField::zeros(g.clone());
            let mk = |op: OperatorSpec<f64>| ProblemSpec::scalar(op, 0.0, zero.clone(), zero.clone()).unwrap();
            let f = mk(OperatorSpec::pucci_minus(&g, 1.0, 2.0, 0.0).unwrap());
            let upper = mk(OperatorSpec::pucci_plus(&g, 1.0, 2.0, 0.0).unwrap());
            let lower = mk(OperatorSpec::pucci_minus(&g, 1.0, 2.0, 0.0).unwrap());
            let vf = |w: &ScalarField<f64>| VectorField::replicate(w, 1);
            let diff = u.zip_map(&v, |x, y| x - y).unwrap();
            // residual = −F, so the inequalities flip
            let ru = residual(&f, &vf(&u)).unwrap();
            let rv = residual(&f, &vf(&v)).unwrap();
            let rplus = residual(&upper, &vf(&diff)).unwrap();
            let rminus = residual(&lower, &vf(&diff)).unwrap();
            for k in g.interior_nodes() {
                let d = ru.get(0, k) - rv.get(0, k);
                proptest::prop_assert!(d >= rplus.get(0, k) - 1e-8);
                proptest::prop_assert!(d <= rminus.get(0, k) + 1e-8);
            }
        }
    }
}
