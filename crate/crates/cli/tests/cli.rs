use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn kamtori(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kamtori"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("KAMTORI_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Data rows of a CSV, skipping the hash line and the column header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# kamtori format_version=1 config_sha256="));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn matrix_reports_dimensions_and_chains() {
    let tmp = TempDir::new().unwrap();
    let o = kamtori(&["matrix", "--n-s", "3"], &tmp.path().join("m3"));
    assert!(o.status.success());
    assert_eq!(manifest(&tmp.path().join("m3"))["summary"]["dimension"], 34);

    let dir = tmp.path().join("m5");
    assert!(kamtori(&["matrix", "--n-s", "5"], &dir).status.success());
    let m = manifest(&dir);
    assert_eq!(m["summary"]["dimension"], 125);
    assert_eq!(m["summary"]["diagonal_mismatches"], 0);
    let longest = m["summary"]["chain_lengths"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).max();
    assert_eq!(longest, Some(3));
    for r in rows(&dir.join("chains.csv")) {
        assert!(r[4].parse::<f64>().unwrap() < 1e-10);
    }
    assert_eq!(rows(&dir.join("diagonal.csv")).len(), 125);
}

#[test]
fn zero_order_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = kamtori(&["matrix", "--n-s", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solve.n_s"));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "initial = [0.0, 0.0, 0.18]\n[solve]\ngrid = 63\n").unwrap();
    let o = kamtori(&["solve", "-c", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("solve") && err.contains("grid"), "{err}");

    std::fs::write(&cfg, "energy = 0.08\nspeed = 3\n").unwrap();
    let o = kamtori(&["solve", "-c", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
}

#[test]
fn reference_solve_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = kamtori(&["solve", "--initial", "0,0,0.18"], dir);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let m = manifest(&a);
    assert_eq!(m["status"], "converged");
    assert_eq!(m["format_version"], 1);
    let side = m["summary"]["side_ratio"][1].as_f64().unwrap();
    assert!((0.03..=0.05).contains(&side), "{side}");
    for name in m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).chain(["manifest.json"]) {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        assert!(x == y, "{name} differs between runs");
    }
    assert!(!rows(&a.join("history.csv")).is_empty());
    assert!(!rows(&a.join("invariant.csv")).is_empty());

    // continue from the saved combination to a larger orbit
    let seed = a.join("seed.json");
    let c = tmp.path().join("c");
    let o = kamtori(&["solve", "--initial", "0,0,0.16", "--seed", seed.to_str().unwrap()], &c);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&c)["status"], "converged");
}

#[test]
fn obstructed_solve_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let o = kamtori(&["solve", "--initial", "0,0,0.121"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(!o.stderr.is_empty());
    assert_eq!(manifest(tmp.path())["status"], "obstructed");
}

#[test]
fn poincare_overlay_stays_in_the_allowed_region() {
    let tmp = TempDir::new().unwrap();
    let o = kamtori(&["poincare", "--probe", "0,0.18"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rows(&tmp.path().join("sections.csv"));
    for tag in ["oracle", "constant-action", "kam-invariant"] {
        assert!(rows.iter().any(|r| r[3] == tag), "{tag}");
    }
    for r in &rows {
        let (y, py): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        // energy limit on x = 0: p_y^2/2 + y^2/2 - y^3/3 <= 1/12
        assert!(0.5 * py * py + 0.5 * y * y - y * y * y / 3.0 <= 1.0 / 12.0 + 1e-9);
    }
}

#[test]
fn empty_probe_list_writes_empty_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "probes = []\n").unwrap();
    let out = tmp.path().join("out");
    let o = kamtori(&["poincare", "-c", cfg.to_str().unwrap()], &out);
    assert!(o.status.success());
    assert!(rows(&out.join("sections.csv")).is_empty());
}

#[test]
fn scan_of_one_probe_is_one_row() {
    let tmp = TempDir::new().unwrap();
    let o = kamtori(&["scan", "--probe", "0,0.18", "--chaos-t-end", "2000"], tmp.path());
    assert!(o.status.success());
    let rows = rows(&tmp.path().join("scan.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], "converged");
    assert!(!rows[0][7].is_empty(), "dispersion column");
    assert!(tmp.path().join("probes/probe_000.json").exists());
}

#[test]
fn environment_overrides_the_output_directory() {
    let tmp = TempDir::new().unwrap();
    let target = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_kamtori"))
        .args(["matrix", "--n-s", "3", "--output-dir"])
        .arg(tmp.path().join("from-flag"))
        .env("KAMTORI_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("manifest.json").exists());
    assert!(!tmp.path().join("from-flag").exists());
}
