//! Finite-difference solver and continuation toolkit for fully nonlinear
//! uniformly elliptic systems with quadratic gradient growth,
//!
//! ```text
//! −F_i[u_i] − ⟨M_i(x) Du_i, Du_i⟩ = λ Σ_j c_ij(x) u_j + γ h_i(x)   in Ω,
//!                             u_i = 0                             on ∂Ω,
//! ```
//!
//! on intervals and rectangles. Everything is generic over the scalar type
//! (`f32` or `f64`); the `*64` aliases fix double precision.

// comparisons are written so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod continuation;
pub mod coupling;
pub mod eigen;
pub mod error;
pub mod grid;
mod jet;
pub mod linalg;
pub mod operators;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod transform;
pub mod verify;

pub use continuation::{
    arclength_continue, branch_solutions_at, detect_fold, detect_fold_samples, export_branch, export_branch_file,
    export_region, locate_fold, natural_continue, seed_ladder, seed_upper_branch, two_parameter_scan, Branch,
    BranchPoint, Fold, RegionCell, RegionMap, ScanOptions, SeedShape, SignClass, StepControls, StopReason, UpperSeed,
};
pub use coupling::{
    block_form_of_pattern, block_triangular_form, check_H3, check_H4, is_fully_coupled, BlockForm, CouplingMatrix,
    H3Report, H4Report, Pattern,
};
pub use eigen::{
    antimaximum_window, eigen_residual, principal_eigenpair, principal_eigenpair_from, AntiMaxReport, AntiMaxSample,
    EigenOptions, EigenResult, EigenSign,
};
pub use error::{Error, Result};
pub use grid::{boundary_distance, build_grid, inf_quotient, Grid, ScalarField, VectorField};
pub use linalg::{BandLu, SparseMatrix};
pub use operators::{
    discrete_derivatives, gradient_quadratic, pucci_minus, pucci_plus, Derivatives, EigenWitness, GradientMatrixSpec,
    GradientScheme, LinearOperator, OperatorSpec,
};
pub use problem::{gradient_sup, linearize, residual, ProblemSpec};
pub use scalar::Real;
pub use solver::{
    check_subsolution, compare_order, default_shift, fixed_point_map, lower_barrier, monotone_iterate, newton_solve,
    picard_iterate, residual_tolerance, solve_P0, solve_operator, truncate_Ra, OrderReport, Relation, Side, Solution,
    SolveOptions,
};
pub use transform::{exp_change_down, exp_change_up, invert_up, verify_exp_sandwich, SandwichReport};
pub use verify::{
    apriori_report, certify_multiplicity, check_hypotheses, documented_seeds, estimate_constants, lambda_hat1,
    nonexistence_nonneg, nonexistence_probe_Pk, AprioriReport, EstimateConstants, HypothesisReport, MBounds,
    MultiplicityEntry, MultiplicityOptions, MultiplicityReport, NonnegativeProbe, ProbeOutcome, ProbeReport,
};

pub type Grid64 = Grid<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type VectorField64 = VectorField<f64>;
pub type CouplingMatrix64 = CouplingMatrix<f64>;
pub type OperatorSpec64 = OperatorSpec<f64>;
pub type ProblemSpec64 = ProblemSpec<f64>;
