//! Zero-order coupling matrices: positivity pattern, block triangular form and
//! the structural hypotheses built on it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::scalar::Real;

pub const DEFAULT_THRESHOLD: f64 = 1e-12;

/// `n × n` nonnegative coefficient fields `c_ij(x)` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix<T> {
    n: usize,
    entries: Vec<ScalarField<T>>,
    threshold: T,
}

impl<T: Real> CouplingMatrix<T> {
    /// `entries[i][j]` is `c_ij`. Values below `-threshold` are rejected.
    pub fn new(entries: Vec<Vec<ScalarField<T>>>, threshold: T) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::Empty("coupling matrix"));
        }
        if !(threshold >= T::zero()) {
            return Err(Error::InvalidProblem("coupling threshold must be nonnegative".into()));
        }
        let grid = entries[0].first().ok_or(Error::Empty("coupling row"))?.grid().clone();
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in entries.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidProblem(format!(
                    "coupling row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, c) in row.into_iter().enumerate() {
                if !Arc::ptr_eq(c.grid(), &grid) && **c.grid() != *grid {
                    return Err(Error::FieldMismatch("coupling entries live on different grids".into()));
                }
                if let Some(k) = c.values().iter().position(|&v| v < -threshold) {
                    return Err(Error::Domain {
                        node: k,
                        reason: format!("coupling c_{}{} = {} is negative", i + 1, j + 1, c.get(k)),
                    });
                }
                flat.push(c);
            }
        }
        Ok(CouplingMatrix { n, entries: flat, threshold })
    }

    /// Spatially constant coupling `c_ij(x) = values[i][j]`.
    pub fn constant(grid: &Arc<Grid<T>>, values: &[Vec<T>]) -> Result<Self> {
        let entries =
            values.iter().map(|row| row.iter().map(|&v| ScalarField::constant(grid.clone(), v)).collect()).collect();
        Self::new(entries, T::lit(DEFAULT_THRESHOLD))
    }

    pub fn zeros(grid: &Arc<Grid<T>>, n: usize) -> Self {
        CouplingMatrix {
            n,
            entries: vec![ScalarField::zeros(grid.clone()); n * n],
            threshold: T::lit(DEFAULT_THRESHOLD),
        }
    }

    pub fn with_threshold(mut self, threshold: T) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        self.entries[0].grid()
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarField<T> {
        &self.entries[i * self.n + j]
    }

    #[inline]
    pub(crate) fn value(&self, i: usize, j: usize, node: usize) -> T {
        self.entries[i * self.n + j].get(node)
    }

    /// `Σ_j c_ij` as a field.
    pub fn row_sum(&self, i: usize) -> ScalarField<T> {
        let grid = self.grid().clone();
        let values = (0..grid.node_count()).map(|k| (0..self.n).map(|j| self.value(i, j, k)).sum()).collect();
        ScalarField::from_raw(grid, values)
    }

    /// Largest row sum over all rows and nodes.
    pub fn max_row_sum(&self) -> T {
        (0..self.n).map(|i| self.row_sum(i).max()).fold(T::zero(), T::max)
    }

    /// `(𝒞u)_i = Σ_j c_ij u_j` nodewise.
    pub fn apply(&self, u: &VectorField<T>) -> Result<VectorField<T>> {
        if u.n() != self.n {
            return Err(Error::FieldMismatch(format!("coupling has {} components, field has {}", self.n, u.n())));
        }
        u.component(0).check_same_grid(&self.entries[0])?;
        let nodes = self.grid().node_count();
        let components = (0..self.n)
            .map(|i| {
                let values = (0..nodes).map(|k| (0..self.n).map(|j| self.value(i, j, k) * u.get(j, k)).sum()).collect();
                ScalarField::from_raw(self.grid().clone(), values)
            })
            .collect();
        VectorField::new(components)
    }

    pub fn nonzero_pattern(&self) -> Pattern {
        let mut mask = vec![vec![false; self.n]; self.n];
        let mut counts = vec![vec![0; self.n]; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                let count = self.entry(i, j).count_above(self.threshold);
                counts[i][j] = count;
                mask[i][j] = count > 0;
            }
        }
        Pattern { mask, counts }
    }
}

/// Which entries are nonzero at one node at least, with the number of such nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub mask: Vec<Vec<bool>>,
    pub counts: Vec<Vec<usize>>,
}

impl Pattern {
    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i][j]
    }
}

/// Component permutation and block sizes that make the coupling block lower triangular.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockForm {
    /// `permutation[p]` is the original index placed at position `p`.
    pub permutation: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl BlockForm {
    pub fn block_count(&self) -> usize {
        self.sizes.len()
    }

    /// Cumulative offsets `s_0 = 0, s_k = t_1 + … + t_k`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0];
        for &t in &self.sizes {
            offsets.push(offsets.last().unwrap() + t);
        }
        offsets
    }

    /// Original component indices of block `k`.
    pub fn block(&self, k: usize) -> &[usize] {
        let offsets = self.offsets();
        &self.permutation[offsets[k]..offsets[k + 1]]
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        (0..self.block_count()).map(|k| self.block(k).to_vec()).collect()
    }

    pub fn block_of(&self, component: usize) -> usize {
        let pos = self.permutation.iter().position(|&c| c == component).expect("component in permutation");
        let offsets = self.offsets();
        (0..self.block_count()).find(|&k| pos < offsets[k + 1]).expect("position inside some block")
    }

    /// Single block covering all components.
    pub fn single(n: usize) -> Self {
        BlockForm { permutation: (0..n).collect(), sizes: vec![n] }
    }
}

/// Block triangular form of a 0/1 pattern, `pattern[i][j]` meaning equation `i` depends on `j`.
///
/// Blocks are the strongly connected components of the dependency digraph,
/// emitted dependencies-first with ties going to the smallest original index.
pub fn block_form_of_pattern(pattern: &[Vec<bool>]) -> BlockForm {
    let n = pattern.len();
    // reach[i][j]: i depends (transitively) on j
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || pattern[i][j]).collect()).collect();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut component_of = vec![usize::MAX; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if component_of[i] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &members {
            component_of[j] = components.len();
        }
        components.push(members);
    }
    let mut placed = vec![false; components.len()];
    let mut permutation = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(components.len());
    for _ in 0..components.len() {
        // components are created in order of their smallest member, so the first ready one wins ties
        let next = (0..components.len())
            .find(|&c| {
                !placed[c]
                    && components[c]
                        .iter()
                        .all(|&i| (0..n).all(|j| !pattern[i][j] || component_of[j] == c || placed[component_of[j]]))
            })
            .expect("condensation is acyclic");
        placed[next] = true;
        permutation.extend_from_slice(&components[next]);
        sizes.push(components[next].len());
    }
    BlockForm { permutation, sizes }
}

pub fn block_triangular_form<T: Real>(c: &CouplingMatrix<T>) -> BlockForm {
    block_form_of_pattern(&c.nonzero_pattern().mask)
}

pub fn is_fully_coupled<T: Real>(c: &CouplingMatrix<T>) -> bool {
    block_triangular_form(c).block_count() == 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct H3Report {
    pub pass: bool,
    /// Zero-based indices of 1×1 blocks whose diagonal coefficient vanishes.
    pub offending_blocks: Vec<usize>,
}

/// No 1×1 block may have an identically zero coefficient.
#[allow(non_snake_case)]
pub fn check_H3<T: Real>(form: &BlockForm, c: &CouplingMatrix<T>) -> H3Report {
    let pattern = c.nonzero_pattern();
    let offending_blocks: Vec<usize> = (0..form.block_count())
        .filter(|&k| {
            let block = form.block(k);
            block.len() == 1 && !pattern.get(block[0], block[0])
        })
        .collect();
    H3Report { pass: offending_blocks.is_empty(), offending_blocks }
}

#[derive(Debug, Clone, PartialEq)]
pub struct H4Report<T> {
    pub pass: bool,
    /// Per block: the first component `i` with `(𝒞u₀)_i` nonzero somewhere.
    pub witnesses: Vec<Option<usize>>,
    /// Per component: `max |(𝒞u₀)_i|`.
    pub magnitudes: Vec<T>,
}

/// Every block needs some component with `(𝒞u₀)_i ≢ 0`.
#[allow(non_snake_case)]
pub fn check_H4<T: Real>(c: &CouplingMatrix<T>, u0: &VectorField<T>, form: &BlockForm) -> Result<H4Report<T>> {
    let product = c.apply(u0)?;
    let magnitudes = product.sup_norms();
    let witnesses: Vec<Option<usize>> = (0..form.block_count())
        .map(|k| {
            let mut members = form.block(k).to_vec();
            members.sort_unstable();
            members.into_iter().find(|&i| magnitudes[i] > c.threshold())
        })
        .collect();
    Ok(H4Report { pass: witnesses.iter().all(Option::is_some), witnesses, magnitudes })
}
