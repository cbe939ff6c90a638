//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use quadgrad::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::shooting::Shooter;
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(&str, bool)], detail: String) -> Self {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let detail = if failed.is_empty() { detail } else { format!("{detail}; failed: {}", failed.join(", ")) };
        Outcome { pass: failed.is_empty(), detail }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn eigen_oracles() -> Outcome {
    let g = unit_grid(399);
    let c = ScalarField::constant(g.clone(), 1.0);
    let opts = EigenOptions::default();
    let timed = |op: &OperatorSpec<f64>, sign| {
        let t = Instant::now();
        let r = principal_eigenpair(op, &c, sign, &opts).unwrap();
        (r.lambda1, t.elapsed())
    };
    let (lap, t1) = timed(&OperatorSpec::laplacian(&g), EigenSign::Plus);
    let pucci = OperatorSpec::pucci_minus(&g, 1.0, 2.0, 0.0).unwrap();
    let (plus, t2) = timed(&pucci, EigenSign::Plus);
    let (minus, t3) = timed(&pucci, EigenSign::Minus);
    let limit = Duration::from_secs(5);
    Outcome::new(
        &[
            ("laplacian within 0.5%", relative(lap, PI * PI) < 5e-3),
            ("pucci λ⁺ within 1% of 2π²", relative(plus, 2.0 * PI * PI) < 1e-2),
            ("pucci λ⁻ within 1% of π²", relative(minus, PI * PI) < 1e-2),
            ("each under 5 s", t1 < limit && t2 < limit && t3 < limit),
        ],
        format!("λ₁(Δ) = {lap:.6}, λ₁⁺(ℳ⁻) = {plus:.5}, λ₁⁻(ℳ⁻) = {minus:.6}; {t1:.2?}/{t2:.2?}/{t3:.2?}"),
    )
}

fn cole_hopf() -> Outcome {
    let exact = |x: f64| ((x - 0.5).cos() / 0.5f64.cos()).ln();
    let errors: Vec<f64> = [99, 199, 399]
        .iter()
        .map(|&n| {
            let g = unit_grid(n);
            let p = scalar_model(&g, 1.0, 1.0);
            let s = solve_P0(&p, &SolveOptions::default());
            assert!(s.converged);
            g.interior_nodes().map(|k| (s.u.get(0, k) - exact(g.coord(k, 0))).abs()).fold(0.0, f64::max)
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Outcome::new(
        &[("order ≥ 1.9", orders.iter().all(|&o| o >= 1.9)), ("error at h = 1/400 below 1e-4", errors[2] < 1e-4)],
        format!("errors {:?}, orders {orders:.3?}", errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
    )
}

fn sandwich() -> Outcome {
    let g = unit_grid(199);
    let h = g.spacing(0);
    let sine = sine(&g);
    let parabola = ScalarField::from_fn(g.clone(), |x, _| x * (1.0 - x));
    let identity = verify_exp_sandwich(&sine, 1.0, 1.0, 1.0, 10.0).unwrap();
    let strict: Vec<SandwichReport<f64>> =
        [&sine, &parabola].iter().map(|u| verify_exp_sandwich(u, 1.0, 1.0, 2.0, 10.0).unwrap()).collect();
    Outcome::new(
        &[
            ("identity case within 10h²", identity.pass && identity.max_violation <= 10.0 * h * h),
            ("strict case nodewise", strict.iter().all(|r| r.pass)),
        ],
        format!(
            "identity violation {:.2e} (10h² = {:.2e}); strict violations {:.2e}, {:.2e}",
            identity.max_violation,
            10.0 * h * h,
            strict[0].max_violation,
            strict[1].max_violation
        ),
    )
}

fn coupling_decomposition() -> Outcome {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for n in 1..=4 {
        for bits in 0..(1u64 << (n * n)) {
            let pattern = pattern_from_bits(n, bits);
            checked += 1;
            if !block_form_agrees(&pattern, &block_form_of_pattern(&pattern)) {
                mismatches += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let everything: Vec<usize> = (0..5).collect();
    let mut coupled_mismatches = 0usize;
    for _ in 0..1000 {
        let density: f64 = rng.gen_range(0.1..0.6);
        let pattern: Vec<Vec<bool>> = (0..5).map(|_| (0..5).map(|_| rng.gen_bool(density)).collect()).collect();
        let form = block_form_of_pattern(&pattern);
        checked += 1;
        if !block_form_agrees(&pattern, &form) {
            mismatches += 1;
        }
        if (form.block_count() == 1) != irreducible_by_bipartition(&pattern, &everything) {
            coupled_mismatches += 1;
        }
    }
    let g = unit_grid(9);
    let diag = CouplingMatrix::constant(&g, &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let h3 = check_H3(&block_triangular_form(&diag), &diag);
    Outcome::new(
        &[
            ("block forms agree with the bipartition oracle", mismatches == 0),
            ("full coupling agrees", coupled_mismatches == 0),
            ("H3 flags diag(1,0)", !h3.pass),
        ],
        format!("{checked} patterns, {mismatches} mismatches; H3 offending blocks {:?}", h3.offending_blocks),
    )
}

fn multiplicity() -> Outcome {
    let nodes = 1999;
    let g = unit_grid(nodes);
    let p = scalar_model(&g, 1.0, -0.1).with_scheme(GradientScheme::ExponentialFit);
    let lambdas = [0.05, 0.1, 0.2];
    let opts = MultiplicityOptions { seed_scale: 5.0, seed_rungs: 8, ..MultiplicityOptions::default() };
    let report = certify_multiplicity(&p, &lambdas, &sine(&g), &opts).unwrap();
    let mut checks = Vec::new();
    let mut detail = Vec::new();
    let mut oracle_gap = 0.0f64;
    let mut upper_sups = Vec::new();
    let mut lower_gaps = Vec::new();
    for e in &report.entries {
        let (Some(lower), Some(upper)) = (&e.lower, &e.upper) else {
            checks.push(false);
            detail.push(format!("λ = {}: {:?}", e.lambda, e.note));
            continue;
        };
        checks.push(e.distinct && e.order.as_ref().is_some_and(|o| o.strict_ll) && e.sign_clause);
        let shooter = Shooter::new(e.lambda, -0.1);
        let roots = shooter.roots(2.5);
        for s in [lower, upper] {
            let top = s.u.get(0, g.index([nodes.div_ceil(2), 0]));
            let Some(&root) = roots.iter().min_by(|a, b| (*a - top).abs().total_cmp(&(*b - top).abs())) else {
                oracle_gap = f64::INFINITY;
                continue;
            };
            let profile = shooter.profile(root, nodes);
            let gap = g.interior_nodes().zip(&profile).map(|(k, v)| (s.u.get(0, k) - v).abs()).fold(0.0, f64::max);
            oracle_gap = oracle_gap.max(gap);
        }
        upper_sups.push(upper.u.sup_norm());
        lower_gaps.push(lower.u.distance(&report.u0).unwrap());
        detail.push(format!("λ = {}: lower min {:.7}, upper max {:.6}", e.lambda, lower.u.min(), upper.u.max()));
    }
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    Outcome::new(
        &[
            ("two distinct strictly ordered solutions at every λ", checks.iter().all(|&c| c) && checks.len() == 3),
            ("both match the shooting oracle to 1e-3", oracle_gap < 1e-3),
            ("upper sup-norm decreasing in λ", upper_sups.len() == 3 && decreasing(&upper_sups)),
            ("‖u_λ,1 − u₀‖ decreasing as λ ↓", lower_gaps.len() == 3 && increasing(&lower_gaps)),
        ],
        format!("{}; oracle gap {oracle_gap:.2e}", detail.join("; ")),
    )
}

fn positive_fold(g: &std::sync::Arc<Grid<f64>>) -> Option<Fold<f64>> {
    let p = scalar_model(g, 1.0, 0.1);
    let start = solve_P0(&p, &SolveOptions::default());
    locate_fold(&p, &start, 1.0, 50.0, 1e-3, &StepControls::default()).unwrap().map(|(f, _)| f)
}

fn fold_bound() -> Outcome {
    let g = unit_grid(199);
    let c = ScalarField::constant(g.clone(), 1.0);
    let lambda_minus =
        principal_eigenpair(&OperatorSpec::laplacian(&g), &c, EigenSign::Minus, &EigenOptions::default())
            .unwrap()
            .lambda1;
    let Some(fold) = positive_fold(&g) else {
        return Outcome { pass: false, detail: "no fold detected".into() };
    };
    // the continuum problem has two positive solutions just below the fold and none just above
    let below = Shooter::new(fold.lambda - 0.05, 0.1).roots(2.5).iter().filter(|r| **r > 0.0).count();
    let above = Shooter::new(fold.lambda + 0.05, 0.1).roots(2.5).iter().filter(|r| **r > 0.0).count();
    Outcome::new(
        &[
            ("0 < λ̄₁ < λ₁⁻", fold.lambda > 0.0 && fold.lambda < lambda_minus),
            ("bracket width ≤ 1e-3", fold.width() <= 1e-3),
            ("shooting agrees on the side of the fold", below == 2 && above == 0),
        ],
        format!(
            "λ̄₁ = {:.5}, bracket {:?}, λ₁⁻ = {lambda_minus:.5}, margin {:.5}",
            fold.lambda,
            fold.bracket,
            lambda_minus - fold.lambda
        ),
    )
}

fn anti_maximum() -> Outcome {
    let g = unit_grid(199);
    let f = sine(&g);
    let c = ScalarField::constant(g.clone(), 1.0);
    let solve = |lambda: f64| {
        let p =
            ProblemSpec::scalar(OperatorSpec::laplacian(&g), 0.0, c.clone(), f.clone()).unwrap().with_lambda(lambda);
        newton_solve(&p, &VectorField::zeros(g.clone(), 1), &SolveOptions::default()).unwrap().u
    };
    let above = solve(PI * PI + 0.1);
    let below = solve(PI * PI - 0.1);
    let interior = |u: &VectorField<f64>, pred: fn(f64) -> bool| g.interior_nodes().all(|k| pred(u.get(0, k)));
    let extreme =
        |u: &VectorField<f64>, pick: fn(f64, f64) -> f64| g.interior_nodes().map(|k| u.get(0, k)).reduce(pick).unwrap();
    Outcome::new(
        &[
            ("strictly negative above π²", interior(&above, |v| v < 0.0)),
            ("strictly positive below π²", interior(&below, |v| v > 0.0)),
        ],
        format!(
            "interior max above {:.3e}, interior min below {:.3e}",
            extreme(&above, f64::max),
            extreme(&below, f64::min)
        ),
    )
}

fn system() -> Outcome {
    let g = unit_grid(199);
    let p = coupled_pair(&g, [-0.1, -0.2]).with_scheme(GradientScheme::ExponentialFit);
    let opts = MultiplicityOptions { seed_scale: 5.0, seed_rungs: 8, ..MultiplicityOptions::default() };
    let phi = sine(&g);
    let report = certify_multiplicity(&p, &[0.1], &phi, &opts).unwrap();
    let e = &report.entries[0];
    // no fold on the lower branch: λ̄ is the principal eigenvalue with weight c̃
    let constants = estimate_constants(&p, &[], &EigenOptions::default()).unwrap();
    let lambda_bar = constants.lambda1;
    let u0 = solve_P0(&p, &SolveOptions::default());
    let ctl = StepControls { max_step: 0.1, ..StepControls::default() };
    let branch = natural_continue(&p, 0.0, 0.9 * lambda_bar, &u0, &ctl).unwrap();
    let folds = detect_fold(&branch);
    let apriori = apriori_report(std::slice::from_ref(&branch), 0.1, 0.9 * lambda_bar).unwrap();
    Outcome::new(
        &[
            ("two distinct solutions at λ = 0.1", e.distinct),
            ("strict order in the single block", report.fully_coupled && e.strict_in_some_block),
            ("lower branch has no fold below 0.9λ̄", folds.is_empty()),
            ("a priori bounds finite", apriori.finite && apriori.points_in_window > 10),
            ("no edge growth", !apriori.edge_growth()),
        ],
        format!(
            "upper max {:?}; λ̄ = {lambda_bar:.5}; sup bounds {:.4?} over {} points",
            e.upper.as_ref().map(|s| s.u.maxs()),
            apriori.sup_bounds,
            apriori.points_in_window
        ),
    )
}

fn nonexistence() -> Outcome {
    let g = unit_grid(199);
    let p = scalar_model(&g, 1.0, -0.1);
    let opts = SolveOptions::default();
    let window_top = 1.0;
    let u0 = solve_P0(&p, &opts);
    let branch = natural_continue(&p, 0.0, window_top, &u0, &StepControls::default()).unwrap();
    let samples: Vec<VectorField<f64>> = branch.points.iter().map(|q| q.u().clone()).collect();
    let constants = estimate_constants(&p, &samples, &EigenOptions::default()).unwrap();
    let lambda = 0.2;
    let probe =
        nonexistence_probe_Pk(&p.clone().with_lambda(lambda), 1, &constants, window_top, Some(&u0.u), &opts).unwrap();
    // with c̃ ≡ 1 the modified source is h + h⁻ + A + Λ₂C₀
    let source = constants.a + window_top * constants.c0;
    let shooting_k1 = Shooter::new(lambda, source).roots(2.5);

    let q = scalar_model(&g, 1.0, 0.1);
    let q0 = solve_P0(&q, &opts);
    let eig = EigenOptions::default();
    let (hat, _) = lambda_hat1(&q, &q0.u, &eig).unwrap();
    let high = nonexistence_nonneg(&q, 1.5 * hat, &q0.u, &eig).unwrap();
    let shooting_high = Shooter::new(1.5 * hat, 0.1).roots(2.5).into_iter().filter(|r| *r > 0.0).count();
    let fold = positive_fold(&g).map(|f| f.lambda).unwrap_or(f64::NAN);
    let sanity = nonexistence_nonneg(&q, fold - 0.1, &q0.u, &eig).unwrap();
    Outcome::new(
        &[
            ("P_λ,1 probe all-failed", probe.all_failed() && probe.attempts.len() >= 26),
            ("shooting finds no solution of P_λ,1", shooting_k1.is_empty()),
            ("no nonnegative solution at 1.5·λ̂₁", !high.found_nonnegative() && shooting_high == 0),
            ("sanity inversion below the fold finds one", fold.is_finite() && sanity.found_nonnegative()),
        ],
        format!(
            "{} seeds tried at k = 1 (source {source:.4}); λ̂₁ = {hat:.4}; sanity at λ = {:.4}",
            probe.attempts.len(),
            fold - 0.1
        ),
    )
}

fn region_scan() -> Outcome {
    let g = unit_grid(199);
    let p = scalar_model(&g, 1.0, 0.1);
    let lambdas: Vec<f64> = (0..10).map(|k| 6.0 + k as f64).collect();
    let gammas = [1.0, 0.5, 0.25, 0.1, 0.05];
    let t = Instant::now();
    let map = two_parameter_scan(&p, &lambdas, &gammas, &ScanOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let folds = |v: &[(f64, Option<Fold<f64>>)]| {
        v.iter().map(|(_, f)| f.as_ref().map(|f| f.lambda)).collect::<Option<Vec<f64>>>()
    };
    let lower = folds(&map.fold_lower).unwrap_or_default();
    let negative = folds(&map.fold_negative).unwrap_or_default();
    let approaching =
        |v: &[f64]| v.len() == gammas.len() && v.windows(2).all(|w| (w[1] - PI * PI).abs() < (w[0] - PI * PI).abs());
    let clean = map.cells.iter().all(|c| {
        let bar2 =
            map.fold_negative.iter().find(|(g, _)| *g == c.gamma).and_then(|(_, f)| f.as_ref()).map(|f| f.lambda);
        bar2.is_some_and(|b| c.lambda >= b) || !c.nonpositive_found
    });
    Outcome::new(
        &[
            ("λ̄₁(γ) approaches π² monotonically", approaching(&lower) && lower.iter().all(|&l| l < PI * PI)),
            ("λ̄₂(γ) approaches π² monotonically", approaching(&negative) && negative.iter().all(|&l| l > PI * PI)),
            ("no nonpositive solution below λ̄₂", clean && map.cells.len() == 50),
            ("runtime under 5 min", elapsed < Duration::from_secs(300)),
        ],
        format!("λ̄₁ {lower:.4?}, λ̄₂ {negative:.4?}, {elapsed:.1?}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("eigenvalue oracles", eigen_oracles),
        ("Cole–Hopf solver oracle", cole_hopf),
        ("exponential-change sandwich", sandwich),
        ("coupling decomposition", coupling_decomposition),
        ("multiplicity", multiplicity),
        ("fold bound", fold_bound),
        ("anti-maximum", anti_maximum),
        ("system test", system),
        ("nonexistence probes", nonexistence),
        ("two-parameter scan", region_scan),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| Outcome { pass: false, detail: format!("panicked: {:?}", e.downcast_ref::<String>()) });
        if !outcome.pass {
            failures += 1;
        }
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {:>2} {name}: {} [{:.1?}]", k + 1, outcome.detail, t.elapsed());
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
