#![allow(dead_code)]

pub mod shooting;

use std::sync::Arc;

use quadgrad::*;

pub fn unit_grid(n: usize) -> Arc<Grid<f64>> {
    build_grid(1, &[(0.0, 1.0)], &[n]).unwrap()
}

/// `−u″ − μ(u′)² = λu + h` on `(0, 1)` with `c ≡ 1`.
pub fn scalar_model(g: &Arc<Grid<f64>>, mu: f64, h: f64) -> ProblemSpec<f64> {
    ProblemSpec::scalar(
        OperatorSpec::laplacian(g),
        mu,
        ScalarField::constant(g.clone(), 1.0),
        ScalarField::constant(g.clone(), h),
    )
    .unwrap()
}

/// The fully coupled pair `c₁₂ = c₂₁ ≡ 1`, `c₁₁ = c₂₂ ≡ 0`, `μ = 1`.
pub fn coupled_pair(g: &Arc<Grid<f64>>, h: [f64; 2]) -> ProblemSpec<f64> {
    let c = CouplingMatrix::constant(g, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let rhs = VectorField::new(h.iter().map(|&v| ScalarField::constant(g.clone(), v)).collect()).unwrap();
    ProblemSpec::new(vec![OperatorSpec::laplacian(g); 2], GradientMatrixSpec::scalar(g, 2, 1.0).unwrap(), c, rhs)
        .unwrap()
}

pub fn sine(g: &Arc<Grid<f64>>) -> ScalarField<f64> {
    ScalarField::from_fn(g.clone(), |x, _| (std::f64::consts::PI * x).sin())
}

/// Irreducibility by definition: every split of `members` into two nonempty
/// parts `I`, `J` has some `i ∈ I`, `j ∈ J` with `pattern[i][j]`.
pub fn irreducible_by_bipartition(pattern: &[Vec<bool>], members: &[usize]) -> bool {
    let k = members.len();
    if k <= 1 {
        return true;
    }
    (1..(1u32 << k) - 1).all(|mask| {
        let (inside, outside): (Vec<usize>, Vec<usize>) = (0..k).partition(|&b| mask & (1 << b) != 0);
        inside.iter().any(|&a| outside.iter().any(|&b| pattern[members[a]][members[b]]))
    })
}

/// A block form is correct iff every block is irreducible, the blocks cover
/// each index once, and no equation depends on a later block.
pub fn block_form_agrees(pattern: &[Vec<bool>], form: &BlockForm) -> bool {
    let n = pattern.len();
    let mut seen = form.permutation.clone();
    seen.sort_unstable();
    if seen != (0..n).collect::<Vec<_>>() || form.sizes.iter().sum::<usize>() != n {
        return false;
    }
    let blocks = form.blocks();
    let block_of: Vec<usize> = (0..n).map(|i| blocks.iter().position(|b| b.contains(&i)).unwrap()).collect();
    blocks.iter().all(|b| irreducible_by_bipartition(pattern, b))
        && (0..n).all(|i| (0..n).all(|j| !pattern[i][j] || block_of[j] <= block_of[i]))
}

pub fn pattern_from_bits(n: usize, bits: u64) -> Vec<Vec<bool>> {
    (0..n).map(|i| (0..n).map(|j| bits & (1 << (i * n + j)) != 0).collect()).collect()
}
