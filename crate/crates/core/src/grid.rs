//! Uniform lattices on intervals and rectangles, and the grid functions living on them.
//!
//! Nodes are numbered lexicographically with the first axis fastest, boundary
//! nodes included: a 2D grid with `nx × ny` interior nodes has
//! `(nx + 2) × (ny + 2)` nodes in total.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Structured grid on `(a, b)` or `(a, b) × (c, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    lower: [T; 2],
    upper: [T; 2],
    interior: [usize; 2],
    spacing: [T; 2],
}

/// Builds a grid from per-axis extents `(lower, upper)` and interior node counts.
pub fn build_grid<T: Real>(dim: usize, extents: &[(T, T)], resolution: &[usize]) -> Result<Arc<Grid<T>>> {
    Grid::new(dim, extents, resolution).map(Arc::new)
}

impl<T: Real> Grid<T> {
    pub fn new(dim: usize, extents: &[(T, T)], resolution: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim || resolution.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and resolutions, got {} and {}",
                extents.len(),
                resolution.len()
            )));
        }
        let mut lower = [T::zero(); 2];
        let mut upper = [T::one(); 2];
        let mut interior = [1usize; 2];
        let mut spacing = [T::one(); 2];
        for axis in 0..dim {
            let (lo, hi) = extents[axis];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!("axis {axis}: need finite lower < upper, got ({lo}, {hi})")));
            }
            if resolution[axis] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: at least 3 interior nodes required, got {}",
                    resolution[axis]
                )));
            }
            lower[axis] = lo;
            upper[axis] = hi;
            interior[axis] = resolution[axis];
            spacing[axis] = (hi - lo) / T::from_usize_lossy(resolution[axis] + 1);
        }
        Ok(Grid { dim, lower, upper, interior, spacing })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self, axis: usize) -> T {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> T {
        self.upper[axis]
    }

    /// Interior node count along `axis`.
    pub fn resolution(&self, axis: usize) -> usize {
        self.interior[axis]
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.spacing[axis]
    }

    /// Total points along `axis`, boundary included.
    pub fn points(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.interior[axis] + 2
        } else {
            1
        }
    }

    pub fn node_count(&self) -> usize {
        self.points(0) * self.points(1)
    }

    pub fn interior_count(&self) -> usize {
        (0..self.dim).map(|a| self.interior[a]).product()
    }

    pub fn boundary_count(&self) -> usize {
        self.node_count() - self.interior_count()
    }

    /// Lattice coordinates of node `k`.
    pub fn lattice(&self, k: usize) -> [usize; 2] {
        let px = self.points(0);
        [k % px, k / px]
    }

    pub fn index(&self, lattice: [usize; 2]) -> usize {
        lattice[0] + self.points(0) * lattice[1]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        let l = self.lattice(k);
        (0..self.dim).any(|a| l[a] == 0 || l[a] == self.points(a) - 1)
    }

    pub fn is_interior(&self, k: usize) -> bool {
        !self.is_boundary(k)
    }

    /// Physical coordinate of node `k` along `axis`.
    pub fn coord(&self, k: usize, axis: usize) -> T {
        let l = self.lattice(k);
        if l[axis] == self.points(axis) - 1 {
            self.upper[axis]
        } else {
            self.lower[axis] + self.spacing[axis] * T::from_usize_lossy(l[axis])
        }
    }

    /// Coordinates `[x, y]`; `y` is zero in 1D.
    pub fn coords(&self, k: usize) -> [T; 2] {
        let y = if self.dim == 2 { self.coord(k, 1) } else { T::zero() };
        [self.coord(k, 0), y]
    }

    /// Neighbour of `k` one step along `axis` in direction `step` (±1).
    pub fn neighbor(&self, k: usize, axis: usize, step: isize) -> Option<usize> {
        let mut l = self.lattice(k);
        let moved = l[axis] as isize + step;
        if axis >= self.dim || moved < 0 || moved >= self.points(axis) as isize {
            return None;
        }
        l[axis] = moved as usize;
        Some(self.index(l))
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| self.is_interior(k))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| self.is_boundary(k))
    }

    /// Inward neighbour of a boundary node and its distance. Corners use the
    /// diagonal interior neighbour.
    pub fn inward(&self, k: usize) -> Option<(usize, T)> {
        if !self.is_boundary(k) {
            return None;
        }
        let mut l = self.lattice(k);
        let mut dist2 = T::zero();
        for a in 0..self.dim {
            if l[a] == 0 {
                l[a] = 1;
                dist2 += self.spacing[a] * self.spacing[a];
            } else if l[a] == self.points(a) - 1 {
                l[a] -= 1;
                dist2 += self.spacing[a] * self.spacing[a];
            }
        }
        Some((self.index(l), dist2.sqrt()))
    }
}

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::FieldMismatch(format!("{} values for {} nodes", values.len(), grid.node_count())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain { node: k, reason: "non-finite value".into() });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Arc<Grid<T>>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Arc<Grid<T>>, c: T) -> Self {
        let n = grid.node_count();
        ScalarField { grid, values: vec![c; n] }
    }

    /// Samples `f(x, y)` at every node (`y = 0` in 1D).
    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn(T, T) -> T) -> Self {
        let values = (0..grid.node_count())
            .map(|k| {
                let [x, y] = grid.coords(k);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    /// Samples `f` on interior nodes and sets boundary nodes to zero.
    pub fn from_fn_dirichlet(grid: Arc<Grid<T>>, f: impl Fn(T, T) -> T) -> Self {
        let mut field = Self::from_fn(grid, f);
        field.zero_boundary();
        field
    }

    pub(crate) fn from_raw(grid: Arc<Grid<T>>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, k: usize) -> T {
        self.values[k]
    }

    pub fn zero_boundary(&mut self) {
        let boundary: Vec<usize> = self.grid.boundary_nodes().collect();
        for k in boundary {
            self.values[k] = T::zero();
        }
    }

    pub fn sup_norm(&self) -> T {
        crate::scalar::max_abs(&self.values)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// Largest value of the negative part `u⁻ = max(-u, 0)`.
    pub fn negative_part_sup(&self) -> T {
        self.values.iter().fold(T::zero(), |acc, &v| acc.max(-v))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::FieldMismatch("fields live on different grids".into()))
        }
    }

    /// Number of nodes where the value exceeds `threshold`.
    pub fn count_above(&self, threshold: T) -> usize {
        self.values.iter().filter(|&&v| v > threshold).count()
    }
}

/// `n ≥ 1` scalar fields sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    components: Vec<ScalarField<T>>,
}

impl<T: Real> VectorField<T> {
    pub fn new(components: Vec<ScalarField<T>>) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("component list"))?;
        for c in &components[1..] {
            first.check_same_grid(c)?;
        }
        Ok(VectorField { components })
    }

    pub fn zeros(grid: Arc<Grid<T>>, n: usize) -> Self {
        assert!(n >= 1, "vector field needs at least one component");
        VectorField { components: vec![ScalarField::zeros(grid); n] }
    }

    pub fn replicate(field: &ScalarField<T>, n: usize) -> Self {
        assert!(n >= 1, "vector field needs at least one component");
        VectorField { components: vec![field.clone(); n] }
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        self.components[0].grid()
    }

    pub fn component(&self, i: usize) -> &ScalarField<T> {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut ScalarField<T> {
        &mut self.components[i]
    }

    pub fn components(&self) -> &[ScalarField<T>] {
        &self.components
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.components[i].values[k]
    }

    pub fn sup_norm(&self) -> T {
        self.components.iter().fold(T::zero(), |acc, c| acc.max(c.sup_norm()))
    }

    pub fn sup_norms(&self) -> Vec<T> {
        self.components.iter().map(ScalarField::sup_norm).collect()
    }

    pub fn mins(&self) -> Vec<T> {
        self.components.iter().map(ScalarField::min).collect()
    }

    pub fn maxs(&self) -> Vec<T> {
        self.components.iter().map(ScalarField::max).collect()
    }

    pub fn min(&self) -> T {
        self.components.iter().fold(T::infinity(), |acc, c| acc.min(c.min()))
    }

    pub fn max(&self) -> T {
        self.components.iter().fold(T::neg_infinity(), |acc, c| acc.max(c.max()))
    }

    pub fn map(&self, f: impl Fn(T) -> T + Copy) -> Self {
        VectorField { components: self.components.iter().map(|c| c.map(f)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T + Copy) -> Result<Self> {
        self.check_compatible(other)?;
        let components =
            self.components.iter().zip(&other.components).map(|(a, b)| a.zip_map(b, f)).collect::<Result<Vec<_>>>()?;
        Ok(VectorField { components })
    }

    /// `max_i max_k |u_i - v_i|`.
    pub fn distance(&self, other: &Self) -> Result<T> {
        Ok(self.zip_map(other, |a, b| a - b)?.sup_norm())
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::FieldMismatch(format!("{} vs {} components", self.n(), other.n())));
        }
        self.components[0].check_same_grid(&other.components[0])
    }

    /// Node-major flattening: entry `k * n + i` holds component `i` at node `k`.
    pub fn to_flat(&self) -> Vec<T> {
        let n = self.n();
        let nodes = self.grid().node_count();
        let mut flat = vec![T::zero(); n * nodes];
        for (i, c) in self.components.iter().enumerate() {
            for (k, &v) in c.values.iter().enumerate() {
                flat[k * n + i] = v;
            }
        }
        flat
    }

    pub fn from_flat(grid: &Arc<Grid<T>>, n: usize, flat: &[T]) -> Self {
        let nodes = grid.node_count();
        debug_assert_eq!(flat.len(), n * nodes);
        let components = (0..n)
            .map(|i| ScalarField::from_raw(grid.clone(), (0..nodes).map(|k| flat[k * n + i]).collect()))
            .collect();
        VectorField { components }
    }

    pub fn zero_boundary(&mut self) {
        for c in &mut self.components {
            c.zero_boundary();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.values.iter().all(|v| v.is_finite()))
    }
}

/// Euclidean distance from each node to the boundary of the box; exactly zero on boundary nodes.
pub fn boundary_distance<T: Real>(grid: &Arc<Grid<T>>) -> ScalarField<T> {
    let values = (0..grid.node_count())
        .map(|k| {
            if grid.is_boundary(k) {
                return T::zero();
            }
            (0..grid.dim()).fold(T::infinity(), |acc, a| {
                let x = grid.coord(k, a);
                acc.min(x - grid.lower(a)).min(grid.upper(a) - x)
            })
        })
        .collect();
    ScalarField::from_raw(grid.clone(), values)
}

/// `min u/d` over interior nodes.
pub fn inf_quotient<T: Real>(u: &ScalarField<T>, d: &ScalarField<T>) -> Result<T> {
    u.check_same_grid(d)?;
    let grid = u.grid();
    grid.interior_nodes()
        .map(|k| u.get(k) / d.get(k))
        .fold(None, |acc: Option<T>, q| Some(acc.map_or(q, |a| a.min(q))))
        .ok_or(Error::Empty("interior"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d(n: usize) -> Arc<Grid<f64>> {
        build_grid(1, &[(0.0, 1.0)], &[n]).unwrap()
    }

    #[test]
    fn one_dimensional_lattice() {
        let g = unit_1d(3);
        assert_eq!(g.spacing(0), 0.25);
        let xs: Vec<f64> = (0..g.node_count()).map(|k| g.coord(k, 0)).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.interior_nodes().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn two_dimensional_counts() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        assert_eq!(g.interior_count(), 9);
        assert_eq!(g.boundary_count(), 16);
        assert_eq!(g.node_count(), 25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_grid(1, &[(0.0, 1.0)], &[2]).is_err());
        assert!(build_grid(1, &[(1.0, 0.0)], &[5]).is_err());
        assert!(build_grid(3, &[(0.0, 1.0); 3], &[5; 3]).is_err());
        assert!(build_grid(2, &[(0.0, 1.0)], &[5]).is_err());
    }

    #[test]
    fn index_is_a_bijection() {
        let g = build_grid(2, &[(0.0, 2.0), (-1.0, 1.0)], &[4, 3]).unwrap();
        let mut seen = vec![false; g.node_count()];
        for j in 0..g.points(1) {
            for i in 0..g.points(0) {
                let k = g.index([i, j]);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(g.lattice(k), [i, j]);
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn boundary_nodes_touch_the_interior() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 4]).unwrap();
        for k in g.boundary_nodes() {
            let (inner, _) = g.inward(k).unwrap();
            assert!(g.is_interior(inner), "boundary node {k} has no interior neighbour");
        }
    }

    #[test]
    fn distance_examples() {
        let g = unit_1d(3);
        let d = boundary_distance(&g);
        assert_eq!(d.values(), &[0.0, 0.25, 0.5, 0.25, 0.0]);

        let g2 = build_grid(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        let d2 = boundary_distance(&g2);
        let k = g2.index([2, 1]); // (0.5, 0.25)
        assert_eq!(d2.get(k), 0.25);
        for b in g2.boundary_nodes() {
            assert_eq!(d2.get(b), 0.0);
        }
    }

    #[test]
    fn distance_is_reflection_symmetric() {
        let g = build_grid(2, &[(0.0, 1.0), (0.0, 2.0)], &[6, 9]).unwrap();
        let d: ScalarField<f64> = boundary_distance(&g);
        for k in 0..g.node_count() {
            let [i, j] = g.lattice(k);
            let mirror_x = g.index([g.points(0) - 1 - i, j]);
            let mirror_y = g.index([i, g.points(1) - 1 - j]);
            assert!((d.get(k) - d.get(mirror_x)).abs() < 1e-14);
            assert!((d.get(k) - d.get(mirror_y)).abs() < 1e-14);
        }
    }

    #[test]
    fn quotient_examples() {
        let g = unit_1d(9);
        let d = boundary_distance(&g);
        assert!((inf_quotient(&d, &d).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(inf_quotient(&ScalarField::zeros(g.clone()), &d).unwrap(), 0.0);
    }

    #[test]
    fn quotient_of_parabola() {
        // direct evaluation over all nodes: x(1-x)/min(x, 1-x) = 1 - x for x ≤ 1/2,
        // so the minimum sits at the central node and equals 1/2
        let g = unit_1d(99);
        let d = boundary_distance(&g);
        let u = ScalarField::from_fn(g.clone(), |x, _| x * (1.0 - x));
        let brute = g
            .interior_nodes()
            .map(|k| {
                let x = g.coord(k, 0);
                x * (1.0 - x) / x.min(1.0 - x)
            })
            .fold(f64::INFINITY, f64::min);
        let q = inf_quotient(&u, &d).unwrap();
        assert!((q - brute).abs() < 1e-14);
        assert!((q - 0.5).abs() <= g.spacing(0));
    }

    #[test]
    fn refinement_never_increases_spacing() {
        let mut last = f64::INFINITY;
        for n in 3..60 {
            let g = unit_1d(n);
            assert!(g.spacing(0) <= last);
            last = g.spacing(0);
        }
    }

    #[test]
    fn flat_round_trip() {
        let g = unit_1d(5);
        let a = ScalarField::from_fn(g.clone(), |x, _| x);
        let b = ScalarField::from_fn(g.clone(), |x, _| -2.0 * x);
        let v = VectorField::new(vec![a, b]).unwrap();
        let flat = v.to_flat();
        assert_eq!(flat[2 * 2 + 1], v.get(1, 2));
        assert_eq!(VectorField::from_flat(&g, 2, &flat), v);
    }

    proptest::proptest! {
        #[test]
        fn quotient_is_positively_homogeneous(alpha in 0.0f64..10.0, n in 3usize..40) {
            let g = unit_1d(n);
            let d = boundary_distance(&g);
            let u = ScalarField::from_fn(g.clone(), |x, _| (3.0 * x).sin() + x * x);
            let q = inf_quotient(&u, &d).unwrap();
            let qa = inf_quotient(&u.scale(alpha), &d).unwrap();
            proptest::prop_assert!((qa - alpha * q).abs() <= 1e-12 * (1.0 + qa.abs()));
        }
    }
}
