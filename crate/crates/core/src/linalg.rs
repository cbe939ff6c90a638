//! Sparse assembly and banded LU with partial pivoting.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-list sparse matrix; duplicate entries are summed on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    size: usize,
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn new(size: usize) -> Self {
        SparseMatrix { size, rows: vec![Vec::new(); size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn add(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.size && col < self.size);
        let entries = &mut self.rows[row];
        match entries.iter_mut().find(|(c, _)| *c == col) {
            Some((_, v)) => *v += value,
            None => entries.push((col, value)),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.rows[row].iter().filter(|(c, _)| *c == col).map(|&(_, v)| v).sum()
    }

    pub fn row(&self, row: usize) -> &[(usize, T)] {
        &self.rows[row]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        self.rows.iter().map(|r| r.iter().map(|&(c, v)| v * x[c]).sum()).collect()
    }

    /// Lower and upper bandwidths of the stored nonzeros.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                if v == T::zero() {
                    continue;
                }
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        (lower, upper)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        self.rows.iter().map(|r| r.iter().map(|&(_, v)| v.abs()).sum::<T>()).fold(T::zero(), T::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut dense = vec![vec![T::zero(); self.size]; self.size];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                dense[i][j] += v;
            }
        }
        dense
    }

    pub fn factor(&self) -> Result<BandLu<T>> {
        BandLu::factor(self)
    }
}

/// Pivot ratio below which a factorization is inspected for near-singularity.
const PIVOT_RATIO_FLAG: f64 = 1e-11;
/// Relative smallest-eigenvalue level that confirms a flagged factorization as singular.
const SINGULAR_RELATIVE: f64 = 1e-11;
const INVERSE_ITERATION_STEPS: usize = 10;

/// Banded LU factorization `P A = L U`.
///
/// Row `i` keeps columns `i - kl ..= i + ku + kl` (room for pivoting fill-in),
/// column `j` stored at offset `j - i + kl`. Multipliers of step `k` stay in
/// column `k` and are not permuted by later pivots, so the forward solve
/// interleaves swaps and eliminations.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    size: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<T>,
    pivots: Vec<usize>,
    norm_inf: T,
    min_pivot_ratio: T,
}

impl<T: Real> BandLu<T> {
    pub fn factor(a: &SparseMatrix<T>) -> Result<Self> {
        let lu = Self::factor_unchecked(a)?;
        if lu.min_pivot_ratio < T::lit(PIVOT_RATIO_FLAG) {
            let indicator = lu.smallest_eigenvalue_estimate();
            if !(indicator > T::lit(SINGULAR_RELATIVE) * lu.norm_inf) {
                return Err(Error::SingularJacobian { indicator: indicator.to_f64_lossy() });
            }
        }
        Ok(lu)
    }

    /// Factorizes without the near-singularity policy; only an exactly zero
    /// or non-finite pivot is an error.
    pub fn factor_unchecked(a: &SparseMatrix<T>) -> Result<Self> {
        let n = a.size();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut band = vec![T::zero(); n * width];
        for i in 0..n {
            for &(j, v) in a.row(i) {
                band[i * width + j + kl - i] += v;
            }
        }
        let mut pivots = vec![0; n];
        let mut max_pivot = T::zero();
        let mut min_pivot = T::infinity();
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[k * width + kl].abs();
            for i in k + 1..=last_row {
                let cand = band[i * width + k + kl - i].abs();
                if cand > best {
                    best = cand;
                    p = i;
                }
            }
            pivots[k] = p;
            if !(best.is_finite() && best > T::zero()) {
                let indicator = if best.is_finite() { 0.0 } else { f64::NAN };
                return Err(Error::SingularJacobian { indicator });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    band.swap(k * width + j + kl - k, p * width + j + kl - p);
                }
            }
            let pivot = band[k * width + kl];
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            for i in k + 1..=last_row {
                let l = band[i * width + k + kl - i] / pivot;
                band[i * width + k + kl - i] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=last_col {
                    let ukj = band[k * width + j + kl - k];
                    band[i * width + j + kl - i] -= l * ukj;
                }
            }
        }
        let min_pivot_ratio = if n == 0 { T::one() } else { min_pivot / max_pivot };
        Ok(BandLu { size: n, kl, ku, width, band, pivots, norm_inf: a.norm_inf(), min_pivot_ratio })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn min_pivot_ratio(&self) -> T {
        self.min_pivot_ratio
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let (n, kl, ku, w) = (self.size, self.kl, self.ku, self.width);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk == T::zero() {
                continue;
            }
            for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                x[i] -= self.band[i * w + k + kl - i] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.band[k * w + j + kl - k] * x[j];
            }
            x[k] = s / self.band[k * w + kl];
        }
    }

    /// Inverse-iteration estimate of the smallest eigenvalue magnitude.
    pub fn smallest_eigenvalue_estimate(&self) -> T {
        let n = self.size;
        if n == 0 {
            return T::infinity();
        }
        // deterministic, non-symmetric start vector so no eigenvector is missed by symmetry
        let mut x: Vec<T> = (0..n).map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7)).collect();
        let mut estimate = T::infinity();
        for _ in 0..INVERSE_ITERATION_STEPS {
            let norm = crate::scalar::max_abs(&x);
            for v in x.iter_mut() {
                *v /= norm;
            }
            let y = self.solve(&x);
            let growth = crate::scalar::max_abs(&y);
            if !growth.is_finite() {
                return T::zero();
            }
            estimate = T::one() / growth;
            x = y;
        }
        estimate
    }
}
