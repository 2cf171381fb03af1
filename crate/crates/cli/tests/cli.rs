use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use purify_core::DenseMatrix;
use tempfile::TempDir;

const SMALL: &str = "\
model.m = 12
model.n = 4
model.weights.s = 1
model.init.ell = 0.05
algo.iterations = 4
algo.batch_size = 500
";

fn purify(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_purify"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_matrix(p: &Path) -> DenseMatrix {
    DenseMatrix::from_csv(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn gen_identity_writes_identity() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", "seed = 1\nmodel.m = 4\nmodel.n = 4\nmodel.ground_truth = identity\n");
    let o = purify(tmp.path(), &["gen", "--config", cfg.to_str().unwrap(), "--out", "g"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_matrix(&tmp.path().join("g/a_star.csv")), DenseMatrix::identity(4));
    assert!(tmp.path().join("g/a0.csv").exists());
    assert!(tmp.path().join("g/resolved_config").exists());
}

#[test]
fn gen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 5\n{SMALL}"));
    for out in ["a", "b"] {
        assert!(purify(tmp.path(), &["gen", "--config", cfg.to_str().unwrap(), "--out", out]).status.success());
    }
    for f in ["a_star.csv", "a0.csv"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap());
    }
    let resolved = fs::read_to_string(tmp.path().join("a/resolved_config")).unwrap();
    let other = fs::read_to_string(tmp.path().join("b/resolved_config")).unwrap();
    assert_eq!(resolved.replace("outputs = a\n", "outputs = b\n"), other);
}

#[test]
fn config_errors_exit_two_and_name_the_problem() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("seed = 1\nmodel.m = 3\nmodel.n = 5\n", "model.m = 3"),
        ("seed = 1\nalgo.etta = 0.1\n", "algo.etta"),
        ("model.n = 4\n", "seed"),
        ("seed = 1\nmodel.noise = loud\n", "model.noise"),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}"), body);
        let o = purify(tmp.path(), &["gen", "--config", cfg.to_str().unwrap(), "--out", "g"]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
    }
}

#[test]
fn run_with_zero_iterations_records_the_start() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 2\n{}", SMALL.replace("algo.iterations = 4", "algo.iterations = 0")));
    let o = purify(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "r0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let traj = fs::read_to_string(tmp.path().join("r0/trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], purify_core::analysis::IterRecord::CSV_HEADER);
    assert_eq!(lines.len(), 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r0/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 0);
    for f in ["a_final.csv", "a_normalized.csv", "resolved_config"] {
        assert!(tmp.path().join("r0").join(f).exists(), "{f}");
    }
}

#[test]
fn params_echo_reproduces_the_trajectory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 3\n{SMALL}model.noise = unbiased\nmodel.noise.level = 0.01\n"));
    assert!(purify(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "a"]).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/summary.json")).unwrap()).unwrap();
    let echo = write_config(tmp.path(), "echo", summary["params_echo"].as_str().unwrap());
    let o = purify(tmp.path(), &["run", "--config", echo.to_str().unwrap(), "--out", "b", "--threads", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("a/trajectory.csv")).unwrap(),
        fs::read(tmp.path().join("b/trajectory.csv")).unwrap()
    );
    assert_eq!(fs::read(tmp.path().join("a/a_final.csv")).unwrap(), fs::read(tmp.path().join("b/a_final.csv")).unwrap());
}

#[test]
fn rank_deficient_start_exits_three_with_partial_trajectory() {
    let tmp = TempDir::new().unwrap();
    // Two identical columns.
    let a0 = DenseMatrix::from_fn(12, 4, |i, j| if j == 3 { ((i % 4) == 2) as u8 as f64 } else { ((i % 4) == j) as u8 as f64 });
    fs::write(tmp.path().join("a0.csv"), a0.to_csv()).unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 1\n{SMALL}model.a0.path = a0.csv\n"));
    let o = purify(tmp.path(), &["run", "--config", cfg.to_str().unwrap(), "--out", "r"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration 0"), "{}", stderr(&o));
    let traj = fs::read_to_string(tmp.path().join("r/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2);
}

const IMBALANCED: &str = "\
model.m = 18
model.n = 6
model.weights = marginals
model.weights.marginals = 3*bernoulli(0.3, 0.31622776601683794); 3*bernoulli(0.3, 1)
model.init.ell = 0
equil.eta = 0.25
equil.inner_iterations = 1
equil.epsilon = 0.02
equil.batch_size = 4000
equil.alpha = 0
";

#[test]
fn equilibrate_balances_a_tenfold_imbalance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 3\n{IMBALANCED}"));
    let o = purify(tmp.path(), &["equilibrate", "--config", cfg.to_str().unwrap(), "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(tmp.path().join("e/equil_log.csv")).unwrap();
    let last: Vec<&str> = log.lines().last().unwrap().split(',').collect();
    assert_eq!(last[1], "6");
    assert!(last[3].parse::<f64>().unwrap() <= 2.0, "{log}");
    let d: Vec<f64> = serde_json::from_str(&fs::read_to_string(tmp.path().join("e/d.json")).unwrap()).unwrap();
    assert_eq!(d.len(), 6);
    assert_eq!(read_matrix(&tmp.path().join("e/a_balanced.csv")).shape(), (18, 6));
}

#[test]
fn equilibrate_leaves_balanced_identity_alone() {
    let tmp = TempDir::new().unwrap();
    let body = "seed = 1\nmodel.m = 4\nmodel.n = 4\nmodel.ground_truth = identity\nmodel.weights = marginals\n\
                model.weights.marginals = 4*bernoulli(1, 0.5)\nmodel.init.ell = 0\nequil.epsilon = 0.05\nequil.batch_size = 50\n\
                equil.alpha = 0\n";
    let cfg = write_config(tmp.path(), "c", body);
    let o = purify(tmp.path(), &["equilibrate", "--config", cfg.to_str().unwrap(), "--out", "e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d: Vec<f64> = serde_json::from_str(&fs::read_to_string(tmp.path().join("e/d.json")).unwrap()).unwrap();
    assert_eq!(d, vec![1.0; 4]);
}

#[test]
fn equilibrate_error_codes() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad", &format!("seed = 3\n{IMBALANCED}").replace("equil.epsilon = 0.02", "equil.epsilon = 1"));
    let o = purify(tmp.path(), &["equilibrate", "--config", bad.to_str().unwrap(), "--out", "e"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("epsilon"));

    let capped = write_config(tmp.path(), "cap", &format!("seed = 3\n{IMBALANCED}equil.max_outer = 2\n"));
    let o = purify(tmp.path(), &["equilibrate", "--config", capped.to_str().unwrap(), "--out", "e"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(tmp.path().join("e/d.json").exists());

    let none = write_config(tmp.path(), "none", &format!("seed = 3\n{SMALL}"));
    let o = purify(tmp.path(), &["equilibrate", "--config", none.to_str().unwrap(), "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_value_sweep_matches_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 4\n{SMALL}model.noise = adversarial\nmodel.noise.level = 0.01\n"));
    let c = cfg.to_str().unwrap();
    assert!(purify(tmp.path(), &["run", "--config", c, "--out", "r"]).status.success());
    let o = purify(tmp.path(), &["sweep", "--config", c, "--out", "s", "--axis", "noise_level", "--values", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r/summary.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "ok");
    assert_eq!(row[4].parse::<f64>().unwrap(), summary["final_col_err"].as_f64().unwrap());
}

#[test]
fn sweep_records_failed_points() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c", &format!("seed = 4\n{SMALL}"));
    let c = cfg.to_str().unwrap();
    let o = purify(tmp.path(), &["sweep", "--config", c, "--out", "s", "--axis", "warm_start_ell", "--values", "0.05,0.9", "--repeats", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[..2].iter().all(|r| r[3] == "ok"));
    assert!(rows[2..].iter().all(|r| r[3] == "config_error"));
    assert_ne!(rows[0][2], rows[1][2]);

    let o = purify(tmp.path(), &["sweep", "--config", c, "--out", "s2", "--axis", "warm_start_ell", "--values", "0.9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_suites() {
    let tmp = TempDir::new().unwrap();
    for suite in ["recurrences", "pinv", "norms"] {
        let o = purify(tmp.path(), &["verify", "--suite", suite, "--seed", "7", "--draws", "100"]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        let report: Vec<serde_json::Value> = serde_json::from_slice(&o.stdout).unwrap();
        assert!(!report.is_empty());
        for a in &report {
            assert_eq!(a["failures"], 0, "{a}");
            assert_eq!(a["draws"], 100, "{a}");
            assert!(a["name"].is_string() && a["worst_slack"].is_number());
        }
    }
    let o = purify(tmp.path(), &["verify", "--suite", "lemmas", "--seed", "7", "--draws", "0"]);
    assert!(o.status.success());
    assert_eq!(serde_json::from_slice::<Vec<serde_json::Value>>(&o.stdout).unwrap().len(), 0);
    assert_eq!(purify(tmp.path(), &["verify", "--suite", "everything", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(purify(tmp.path(), &["verify", "--suite", "norms"]).status.code(), Some(2));
}

#[test]
fn pinv_subcommand_writes_left_inverse() {
    let tmp = TempDir::new().unwrap();
    let a = DenseMatrix::from_rows(&[vec![1.0, 0.2], vec![0.1, 1.0], vec![0.5, 0.5], vec![0.0, 0.3]]).unwrap();
    fs::write(tmp.path().join("a.csv"), a.to_csv()).unwrap();
    let o = purify(tmp.path(), &["pinv", "--input", "a.csv", "--out", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p = read_matrix(&tmp.path().join("p/pinv.csv"));
    assert!(p.matmul(&a).sub(&DenseMatrix::identity(2)).norm_max() < 1e-10);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("p/pinv.json")).unwrap()).unwrap();
    assert!(report["inf_norm"].as_f64().unwrap() <= report["ls_inf_norm"].as_f64().unwrap() + 1e-8);
}

#[test]
fn oracle_subcommand() {
    let tmp = TempDir::new().unwrap();
    let body = "seed = 2\nmodel.m = 8\nmodel.n = 3\nmodel.weights.s = 1\nmodel.init.ell = 0.05\nalgo.alpha = 0.05\n";
    let cfg = write_config(tmp.path(), "c", body);
    let o = purify(tmp.path(), &["oracle", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/oracle.json")).unwrap()).unwrap();
    assert_eq!(report["outcomes"], 8);
    assert_eq!(read_matrix(&tmp.path().join("o/exact_update.csv")).shape(), (8, 3));

    let noisy = write_config(tmp.path(), "n", &format!("{body}model.noise = unbiased\nmodel.noise.level = 0.01\n"));
    let o = purify(tmp.path(), &["oracle", "--config", noisy.to_str().unwrap(), "--out", "o2"]);
    assert_eq!(o.status.code(), Some(2));
}
