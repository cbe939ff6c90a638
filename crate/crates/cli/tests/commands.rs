use std::io::BufReader;
use std::path::PathBuf;
use std::process::Command;

use quadgrad_cli::dump::read_dump;
use quadgrad_cli::{parse_grid, run_command, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NO_CONVERGENCE, EXIT_OK};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

/// Runs in-process and returns `(exit code, stdout, stderr)`.
fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("quadgrad").chain(args.iter().copied());
    let code = run_command(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn eigen_of_laplacian_is_pi_squared() {
    let cfg = data("lap.cfg");
    let (code, out, err) = run(&["eigen", &cfg, "--component", "1", "--sign", "+"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let value: f64 = out.lines().find_map(|l| l.strip_prefix("lambda1 = ")).unwrap().parse().unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((value - pi2).abs() / pi2 < 5e-3, "{value}");
    // the negative eigenfunction of a linear operator has the same eigenvalue
    let (code, out, _) = run(&["eigen", &cfg, "--component", "1", "--sign", "-"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains(&format!("lambda1 = {value:.10}")), "{out}");
}

#[test]
fn decoupled_zero_block_is_an_h3_violation() {
    let (code, out, _) = run(&["coupling", &data("diag10.cfg")]);
    assert_eq!(code, EXIT_HYPOTHESIS);
    assert!(out.contains("H3: FAIL") && out.contains("{2}"), "{out}");
    let (code, out, _) = run(&["coupling", &data("pair2d.cfg")]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("fully coupled: true") && out.contains("H3: pass"), "{out}");
}

#[test]
fn usage_errors_exit_with_config_code() {
    let cfg = data("scalar.cfg");
    assert_eq!(run(&["solve", &cfg, "--lambda"]).0, EXIT_CONFIG);
    assert_eq!(run(&["frobnicate", &cfg]).0, EXIT_CONFIG);
    assert_eq!(run(&[]).0, EXIT_CONFIG);
    assert_eq!(run(&["eigen", &cfg, "--component", "1", "--sign", "0"]).0, EXIT_CONFIG);
    assert_eq!(run(&["eigen", &cfg, "--component", "2", "--sign", "+"]).0, EXIT_CONFIG);
    assert_eq!(run(&["solve", "/nonexistent.cfg", "--lambda", "1"]).0, EXIT_CONFIG);
    assert_eq!(run(&["scan", &cfg, "--lambda-grid", "1:2", "--gamma-grid", "1"]).0, EXIT_CONFIG);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("solve") && out.contains("verify"));
}

#[test]
fn eigen_with_empty_weight_is_a_config_error() {
    let (code, _, err) = run(&["eigen", &data("diag10.cfg"), "--component", "2", "--sign", "+"]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
}

#[test]
fn solve_writes_a_readable_dump() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.txt");
    let (code, out, err) = run(&["solve", &data("scalar.cfg"), "--lambda", "0.1", "--output", file.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("written to"));
    let (header, u) = read_dump(BufReader::new(std::fs::File::open(&file).unwrap())).unwrap();
    assert_eq!((header.dim, header.n, header.resolution.as_slice()), (1, 1, &[99][..]));
    assert_eq!((header.lambda, header.gamma), (0.1, 1.0));
    assert!(header.converged);
    assert_eq!(u[0].len(), 101);
    // lower branch midpoint value from the shooting oracle in the core tests
    assert!((u[0][50] - -0.0125781).abs() < 1e-4, "{}", u[0][50]);
    assert_eq!((u[0][0], u[0][100]), (0.0, 0.0));
}

#[test]
fn solve_reports_non_convergence() {
    // with γ = −1 the source is +0.1 and the lower branch folds back near λ ≈ 8.45
    let (code, _, err) = run(&["solve", &data("scalar.cfg"), "--lambda", "9", "--gamma", "-1"]);
    assert_eq!(code, EXIT_NO_CONVERGENCE, "{err}");
    assert!(err.contains("StepUnderflow"), "{err}");
}

#[test]
fn solve_in_two_dimensions_to_stdout() {
    let (code, out, err) = run(&["solve", &data("pair2d.cfg"), "--lambda", "0.5"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let (header, u) = read_dump(BufReader::new(out.as_bytes())).unwrap();
    assert_eq!((header.dim, header.n), (2, 2));
    assert_eq!(u[1].len(), 17 * 17);
    assert!(u.iter().flatten().all(|v| *v <= 1e-12), "negative sources give a nonpositive lower solution");
}

#[test]
fn continue_finds_the_fold_with_arclength() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("branch.csv");
    let cfg = data("scalar.cfg");
    let cfg_pos = dir.path().join("pos.cfg");
    std::fs::write(&cfg_pos, std::fs::read_to_string(&cfg).unwrap().replace("h1 = \"-0.1\"", "h1 = \"0.1\"")).unwrap();
    let (code, out, err) = run(&[
        "continue",
        cfg_pos.to_str().unwrap(),
        "--from",
        "0",
        "--to",
        "9.8",
        "--arclength",
        "-o",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let fold: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("fold at λ = "))
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(fold > 8.0 && fold < std::f64::consts::PI.powi(2), "{out}");
    let mut reader = csv::Reader::from_path(&file).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["branch_id", "arclength", "lambda", "gamma", "sup_norm_1", "min_1", "fold_flag"]
    );
    assert!(reader.records().count() > 5);
}

#[test]
fn natural_continuation_csv_on_stdout() {
    let (code, out, err) = run(&["continue", &data("scalar.cfg"), "--from", "0.5", "--to", "0.1"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(rows.len() >= 2 && rows.iter().all(|r| r.starts_with("natural,")));
    assert!(err.contains("ReachedEnd"), "{err}");
}

#[test]
fn scan_writes_region_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pos.cfg");
    let text = std::fs::read_to_string(data("scalar.cfg")).unwrap().replace("resolution = 99", "resolution = 39");
    std::fs::write(&cfg, text.replace("h1 = \"-0.1\"", "h1 = \"1\"")).unwrap();
    let file = dir.path().join("region.csv");
    let (code, out, err) = run(&[
        "scan",
        cfg.to_str().unwrap(),
        "--lambda-grid",
        "2:8:3",
        "--gamma-grid",
        "0.5,0.1",
        "-o",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("γ = ")).count(), 2, "{out}");
    let rows = csv::Reader::from_path(&file).unwrap().records().count();
    assert_eq!(rows, 6);
}

#[test]
fn verify_reports_constants_and_probe() {
    let (code, out, err) = run(&["verify", &data("scalar.cfg"), "--probe-k", "1"]);
    assert_eq!(code, EXIT_OK, "{err}\n{out}");
    for key in ["(M): pass", "H3: pass", "H4: pass", "C0 = ", "lambda1 = ", "P_1 probe: all seeds failed"] {
        assert!(out.contains(key), "missing `{key}` in\n{out}");
    }
    let (code, out, _) = run(&["verify", &data("diag10.cfg")]);
    assert_eq!(code, EXIT_HYPOTHESIS, "{out}");
}

#[test]
fn grid_specs() {
    assert_eq!(parse_grid("0:1:3").unwrap(), [0.0, 0.5, 1.0]);
    assert_eq!(parse_grid("1, 2.5,-3").unwrap(), [1.0, 2.5, -3.0]);
    assert_eq!(parse_grid("4:5:1").unwrap(), [4.0]);
    assert!(parse_grid("1:2").is_err());
    assert!(parse_grid("0:1:0").is_err());
    assert!(parse_grid("a,b").is_err());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_quadgrad");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let o = status(&["eigen", &data("lap.cfg"), "--component", "1", "--sign", "+"]);
    assert_eq!(o.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("lambda1 = 9.86"));
    assert_eq!(status(&["coupling", &data("diag10.cfg")]).status.code(), Some(EXIT_HYPOTHESIS));
    assert_eq!(status(&["solve", &data("lap.cfg"), "--lambda"]).status.code(), Some(EXIT_CONFIG));
    let o = status(&["nonsense"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}
