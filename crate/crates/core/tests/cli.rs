//! Command-line behavior: artifact schemas, exit codes, and byte-level
//! reproducibility of emitted CSVs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn crtm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crtm"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crtm_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_EVOLVE: &str = r#"
experiment = "evolve"

[model]
v = 20.0
l = 10.0
epsilon = 0.1

[mesh]
n_y = 8
n_theta = 8

[solver]
dt = 0.001
t_end = 0.05
snapshot_times = [0.0, 0.05]
diag_stride = 5
"#;

#[test]
fn evolve_writes_snapshots_and_conserved_mass_column() {
    let dir = temp_dir("evolve");
    let config = write_config(&dir, "evolve.toml", SMALL_EVOLVE);
    let out = dir.join("out");
    let status = crtm()
        .args(["evolve", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = report.lines();
    let prov = lines.next().unwrap();
    assert!(prov.starts_with("# crtm v"), "provenance line: {prov}");
    assert!(prov.contains("cmd=evolve"));
    assert_eq!(lines.next().unwrap(), "t,M_total,M_i,M_b,I,linf_gap");
    let masses: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!masses.is_empty());
    for m in &masses {
        assert!(
            (m - masses[0]).abs() <= 1e-12,
            "mass drift in report: {m} vs {}",
            masses[0]
        );
    }

    // t = 0 snapshot equals the uniform initial condition.
    let snap0 = std::fs::read_to_string(out.join("snapshot_t0.csv")).unwrap();
    let uniform = 1.0 / (4.0 * std::f64::consts::PI * 10.0);
    let mut bulk_rows = 0;
    for line in snap0.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 5 {
            let n: f64 = fields[4].parse().unwrap();
            assert!((n - uniform).abs() < 1e-15);
            bulk_rows += 1;
        }
    }
    assert_eq!(bulk_rows, 16 * 16);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = temp_dir("badcfg");
    let bad = SMALL_EVOLVE.replace("epsilon = 0.1", "epsilon = -0.1");
    let config = write_config(&dir, "bad.toml", &bad);
    let output = crtm()
        .args(["evolve", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("model.epsilon"), "stderr: {stderr}");

    // Reference coarser than a test grid is also a config error.
    let bad = format!("{SMALL_EVOLVE}\n[converge]\nresolutions = [[16, 16]]\nreference = 8\n");
    let config = write_config(&dir, "bad_ref.toml", &bad);
    let output = crtm()
        .args(["converge", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn numerical_failures_exit_with_code_3() {
    let dir = temp_dir("cfl");
    //

    // eps = 0.4 resolves the jump band; dt far beyond the stability bound.
    let body = SMALL_EVOLVE
        .replace("epsilon = 0.1", "epsilon = 0.4")
        .replace("dt = 0.001", "dt = 0.5")
        .replace("snapshot_times = [0.0, 0.05]", "snapshot_times = []")
        .replace("t_end = 0.05", "t_end = 2.0");
    let config = write_config(&dir, "cfl.toml", &body);
    let output = crtm()
        .args(["evolve", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("CFL"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn steady_budget_exhaustion_exits_with_code_4() {
    let dir = temp_dir("nonconv");
    let body = format!(
        "{}",
        SMALL_EVOLVE
            .replace("t_end = 0.05", "t_end = 0.01")
            .replace("snapshot_times = [0.0, 0.05]", "snapshot_times = []")
    ) + "entropy_reference = true\nsteady_budget = 0.01\nsteady_tol = 1e-14\n";
    let config = write_config(&dir, "nonconv.toml", &body);
    let output = crtm()
        .args(["evolve", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}

const SMALL_COMPARE: &str = r#"
experiment = "mc-compare"

[model]
v = 20.0
l = 10.0
epsilon = 0.1

[mesh]
n_y = 8
n_theta = 8

[solver]
dt = 0.001
t_end = 0.02
snapshot_times = [0.02]

[mc]
n_cell = 20000
seed = 12345
bootstrap_reps = 4
"#;

#[test]
fn mc_compare_is_byte_identical_across_reruns_and_worker_counts() {
    let dir = temp_dir("determinism");
    let config = write_config(&dir, "cmp.toml", SMALL_COMPARE);
    let run_with = |tag: &str, workers: usize| -> Vec<(String, Vec<u8>)> {
        let out = dir.join(tag);
        let status = crtm()
            .args(["mc-compare", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("--set")
            .arg(format!("mc.workers={workers}"))
            .status()
            .unwrap();
        assert!(status.success());
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let a = run_with("w1", 1);
    let b = run_with("w2", 2);
    let c = run_with("w1_again", 1);
    assert_eq!(a.len(), 3); // pde, mc, compare
    assert_eq!(a, b, "worker count must not change any emitted byte");
    assert_eq!(a, c, "reruns with identical config must be byte-identical");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_flag_overrides_config() {
    let dir = temp_dir("seed");
    let config = write_config(&dir, "cmp.toml", SMALL_COMPARE);
    let out1 = dir.join("s1");
    let out2 = dir.join("s2");
    for (out, seed) in [(&out1, "1"), (&out2, "2")] {
        let status = crtm()
            .args(["mc-compare", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let mc1 = std::fs::read(out1.join("mc_t0p02.csv")).unwrap();
    let mc2 = std::fs::read(out2.join("mc_t0p02.csv")).unwrap();
    assert_ne!(mc1, mc2, "different seeds must change the histogram");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn asymptotic_ladder_emits_expected_schema() {
    let dir = temp_dir("ladder");
    let body = r#"
experiment = "asymptotic"

[model]
v = 20.0
l = 10.0
epsilon = 0.1

[mesh]
n_y = 8
n_theta = 8

[solver]
dt = 0.001
t_end = 0.05

[asymptotic]
epsilons = [0.4, 0.2]
"#;
    let config = write_config(&dir, "ladder.toml", body);
    let out = dir.join("out");
    let status = crtm()
        .args(["asymptotic", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("ladder.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "epsilon,M_i,M_b,ratio,ratio_diff,diffusion");
    assert_eq!(lines.len(), 4);
    // Triangular kernel: diffusion column is k/12 independent of epsilon.
    for line in &lines[2..] {
        let d: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!((d - 1.0 / 12.0).abs() < 1e-9, "diffusion column {d}");
    }
    std::fs::remove_dir_all(&dir).ok();
}
