use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_avgbench");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("AVGBENCH_THREADS").output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn records(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (headers, rows)
}

fn column<'a>(headers: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let k = headers.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].as_str()).collect()
}

#[test]
fn presets_are_listed_and_printable() {
    let list = run_ok(&["presets"]);
    for name in ["fig1_u1", "fig1_u2", "fig1_u3", "fig2", "table_s11", "table_s12", "noisy_twobody"] {
        assert!(list.lines().any(|l| l == name), "{name} missing from {list}");
        assert!(run_ok(&["presets", name]).contains("[experiment]"));
    }
}

#[test]
fn check_configs_classify() {
    let dir = configs();
    let reflection = run_ok(&["check", dir.join("check_reflection.toml").to_str().unwrap()]);
    assert!(reflection.contains("4-way"), "{reflection}");
    let generic = run_ok(&["check", dir.join("check_generic.toml").to_str().unwrap()]);
    assert!(generic.contains("tp+unital only"), "{generic}");
    run_ok(&["check", dir.join("check_kraus.toml").to_str().unwrap()]);
}

#[test]
fn benchmark_outputs_are_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run_ok(&["benchmark", "--preset", "noisy_twobody", "--rounds", "40", "--out", a.path().to_str().unwrap()]);
    run_ok(&[
        "benchmark",
        "--preset",
        "noisy_twobody",
        "--rounds",
        "40",
        "--threads",
        "2",
        "--out",
        b.path().to_str().unwrap(),
    ]);
    let (fa, fb) = (a.path().join("benchmark.csv"), b.path().join("benchmark.csv"));
    assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    let (h, rows) = records(&fa);
    assert_eq!(rows.len(), 3);
    assert!(column(&h, &rows, "status").iter().all(|s| *s == "ok"));
    assert!(column(&h, &rows, "n_rounds").iter().all(|s| *s == "40"));
}

#[test]
fn zero_rounds_leaves_sampled_columns_empty() {
    let out = TempDir::new().unwrap();
    let cfg = configs().join("mixed_schemes.toml");
    run_ok(&["benchmark", "--config", cfg.to_str().unwrap(), "--rounds", "0", "--out", out.path().to_str().unwrap()]);
    let (h, rows) = records(&out.path().join("benchmark.csv"));
    assert_eq!(rows.len(), 4);
    assert!(column(&h, &rows, "sampled_mean").iter().all(|s| s.is_empty()));
    assert!(column(&h, &rows, "sampled_std").iter().all(|s| s.is_empty()));
    assert!(column(&h, &rows, "classical_value").iter().all(|s| s.parse::<f64>().is_ok()));
}

#[test]
fn precondition_failures_are_reported_per_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "rows.toml",
        r#"
[experiment]
kind = "benchmark"
width = 8
depth = 1
init = "plus_bell"
gate = { kind = "haar", seed = 2 }
ensemble = { strategy = "reflection" }

[[experiment.observables]]
scheme = "single_site"
sites = [1]
paulis = ["Z"]

[[experiment.observables]]
scheme = "three_site"
sites = [0, 1, 2]
paulis = ["X", "X", "X"]
"#,
    );
    let out = dir.path().join("out");
    run_ok(&["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let (h, rows) = records(&out.join("benchmark.csv"));
    let status = column(&h, &rows, "status");
    assert_eq!(status[0], "ok");
    assert!(status[1].contains("bell_product"), "{}", status[1]);
    assert!(column(&h, &rows, "classical_value")[1].is_empty());
}

#[test]
fn phi_sweep_matches_oracle_column() {
    let out = TempDir::new().unwrap();
    run_ok(&["benchmark", "--preset", "fig1_u3", "--out", out.path().to_str().unwrap()]);
    let (h, rows) = records(&out.path().join("phi_sweep.csv"));
    assert_eq!(rows.len(), 41);
    let classical = column(&h, &rows, "classical_value");
    let oracle = column(&h, &rows, "oracle_value");
    for (c, o) in classical.iter().zip(oracle) {
        let (c, o): (f64, f64) = (c.parse().unwrap(), o.parse().unwrap());
        assert!((c - o).abs() < 1e-10);
    }
}

#[test]
fn depth_sweep_skips_wide_chains() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "depth.toml",
        r#"
seed = 4
rounds = 30

[experiment]
kind = "depth_sweep"
t_min = 2
t_max = 5
width_cap = 10
"#,
    );
    let out = dir.path().join("out");
    run_ok(&["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let (h, rows) = records(&out.join("depth_sweep.csv"));
    assert_eq!(column(&h, &rows, "T"), vec!["2", "3", "4"]);
    let (_, samples) = records(&out.join("depth_sweep_samples.csv"));
    assert_eq!(samples.len(), 3 * 30);
    assert!(out.join("depth_sweep_histograms.csv").exists());
}

#[test]
fn supermap_subcommand_writes_tables_and_certificates() {
    let out = TempDir::new().unwrap();
    let o = out.path().to_str().unwrap();
    let report = run_ok(&["supermap", "--mode", "four-way", "--verify-samples", "5", "--out", o]);
    assert!(report.contains("1.33333333"), "{report}");
    let files: Vec<String> =
        std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    for prefix in ["x_", "decomposition_"] {
        assert!(files.iter().any(|f| f.starts_with(prefix) && f.ends_with(".csv")), "{prefix} in {files:?}");
    }
    assert!(files.iter().any(|f| f == "supermap_report.txt"));

    let forced = TempDir::new().unwrap();
    let report = run_ok(&["supermap", "--mode", "four_way", "--force-both-unit", "--out", forced.path().to_str().unwrap()]);
    assert!(report.contains("infeasible"), "{report}");
    let files: Vec<String> =
        std::fs::read_dir(forced.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(files.iter().any(|f| f.starts_with("certificate_")), "{files:?}");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let unknown = write(&dir, "unknown.toml", "seed = 1\ncolour = \"red\"\n[experiment]\nkind = \"supermap\"\nmode = \"three_way\"\n");
    let broken = write(&dir, "broken.toml", "[experiment\nkind = 3");
    for args in [
        vec!["benchmark", "--config", unknown.as_str()],
        vec!["benchmark", "--config", broken.as_str()],
        vec!["benchmark", "--preset", "nope"],
        vec!["benchmark"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["benchmark", "--config", unknown.as_str()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn unrealizable_custom_supermap_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "custom.toml",
        r#"
[experiment]
kind = "benchmark"
width = 8
depth = 2
gate = { kind = "haar", seed = 1 }
ensemble = { strategy = "custom_supermap", table = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, -0.2] }

[[experiment.observables]]
scheme = "k_body"
sites = [1, 2]
paulis = ["X", "X"]
"#,
    );
    let out = run(&["benchmark", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn shipped_run_configs_execute() {
    for name in ["fig1_u1.toml", "fig1_u2.toml", "table_s11.toml", "table_s12.toml", "mixed_schemes.toml", "fig2.toml"] {
        let out = TempDir::new().unwrap();
        let cfg = configs().join(name);
        run_ok(&["benchmark", "--config", cfg.to_str().unwrap(), "--rounds", "4", "--out", out.path().to_str().unwrap()]);
        assert!(std::fs::read_dir(out.path()).unwrap().count() > 0, "{name} wrote nothing");
    }
}
