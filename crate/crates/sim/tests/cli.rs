use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cav_sim::output::summary_csv;
use cav_sim::{run, Scenario, EXIT_FAILED, EXIT_INPUT, EXIT_OK, FIXTURES};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cav-sim"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cav-sim-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_fixture(name: &str, out: &Path, extra: &[&str]) -> i32 {
    let status = bin()
        .args(["run", "--fixture", name, "--out"])
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status;
    status.code().unwrap()
}

/// Summary rows keyed by `cav_id`, as column-name → value maps.
fn summary(out: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

fn row(rows: &[std::collections::HashMap<String, String>], id: &str) -> std::collections::HashMap<String, String> {
    rows.iter().find(|r| r["cav_id"] == id).unwrap().clone()
}

fn value(r: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    r[key].parse().unwrap()
}

#[test]
fn every_fixture_exits_zero_and_writes_outputs() {
    for (name, _) in FIXTURES {
        let out = scratch(name);
        assert_eq!(run_fixture(name, &out, &[]), EXIT_OK, "{name}");
        let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
        assert_eq!(traj.lines().next().unwrap(), "t,p,v,u,arc_kind,cav_id");
        assert!(fs::read_to_string(out.join("audit.txt")).unwrap().ends_with("result: PASS\n"));
    }
}

#[test]
fn fixture_unconstrained_exit_times() {
    let out = scratch("fig2");
    run_fixture("fig2_unconstrained", &out, &[]);
    let rows = summary(&out);
    assert!((value(&row(&rows, "1"), "tf") - 32.03).abs() < 0.005);
    assert!((value(&row(&rows, "2"), "tf") - 33.0).abs() < 1e-9);
    assert_eq!(row(&rows, "1")["exit_mode"], "free");
}

#[test]
fn fixture_lateral_enters_merging_zone_when_conflict_clears() {
    let out = scratch("fig6");
    run_fixture("fig6_lateral", &out, &[]);
    let rows = summary(&out);
    let tc = value(&row(&rows, "1"), "tf");
    assert!((tc - 32.027).abs() < 5e-4);
    let follower = row(&rows, "2");
    assert_eq!(follower["structure"], "LateralInterior");
    let junction: f64 = follower["junctions"].parse().unwrap();
    assert!((junction - tc).abs() < 1e-6);
    // The breakpoint is written exactly, with p = L there.
    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let at = traj
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[5] == "2" && (f[0].parse::<f64>().unwrap() - junction).abs() < 1e-6)
        .unwrap();
    assert!((at[1].parse::<f64>().unwrap() - 370.0).abs() < 1e-6);
}

#[test]
fn fixture_uvmax_reports_junctions() {
    let out = scratch("fig7");
    run_fixture("fig7_uvmax", &out, &[]);
    let r = row(&summary(&out), "1");
    let j: Vec<f64> = r["junctions"].split(';').map(|x| x.parse().unwrap()).collect();
    assert!((j[0] - 4.0).abs() < 0.2 && (j[1] - 31.0).abs() < 0.5, "{j:?}");
    assert_eq!(r["structure"], "SaturatedAcceleration");
}

#[test]
fn safety_fixture_reports_active_constraints() {
    let out = scratch("fig3");
    run_fixture("fig3_safety_no_exit", &out, &[]);
    let r = row(&summary(&out), "2");
    assert_eq!(r["binding_bound"], "Follower");
    assert_eq!(r["active_constraints"], "ExitLowerBound(Follower);RearEnd");
    assert_eq!(r["rounds"], "1");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = scratch("badkey");
    let path = dir.join("s.toml");
    fs::write(&path, "schema_version = 1\n[config]\ngama = 0.1\n[[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\n").unwrap();
    let st = bin().args(["run"]).arg(&path).arg("--out").arg(dir.join("o")).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_INPUT));
}

#[test]
fn wrong_schema_version_and_missing_file_are_config_errors() {
    let dir = scratch("schema");
    let path = dir.join("s.toml");
    fs::write(&path, "schema_version = 7\n[[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\n").unwrap();
    let st = bin().args(["run"]).arg(&path).arg("--out").arg(dir.join("o")).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_INPUT));
    let st = bin().args(["run"]).arg(dir.join("missing.toml")).arg("--out").arg(dir.join("o")).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_INPUT));
}

#[test]
fn infeasible_vehicle_exits_two_with_trace() {
    let dir = scratch("infeasible");
    let path = dir.join("s.toml");
    fs::write(&path, "schema_version = 1\n[[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\ntf = 5.0\n").unwrap();
    let out = dir.join("o");
    let st = bin().args(["run"]).arg(&path).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_FAILED));
    let audit = fs::read_to_string(out.join("audit.txt")).unwrap();
    assert!(audit.contains("infeasible"), "{audit}");
}

#[test]
fn unsorted_arrivals_are_sorted_on_load() {
    let text = "schema_version = 1\n\
        [config]\nphi = 1.0\n\
        [[arrivals]]\nid = 2\nt0 = 2.0\nv0 = 12.0\n\
        [[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\ntf = 39.0\n";
    let r = run(&Scenario::from_toml(text).unwrap()).unwrap();
    let order: Vec<u64> = r.vehicles.iter().map(|v| v.arrival.id).collect();
    assert_eq!(order, [1, 2]);
    assert!(r.passed());
}

#[test]
fn same_seed_gives_identical_summary() {
    let text = "schema_version = 1\n\
        [[arrivals]]\nid = 1\nt0 = 0.0\nv0 = 10.0\n\
        [[arrivals]]\nid = 2\nt0 = 0.0\nv0 = 11.0\nroad = \"EW\"\nmovement = \"eastbound\"\n\
        [[arrivals]]\nid = 3\nt0 = 0.0\nv0 = 12.0\nroad = \"NS\"\nmovement = \"northbound\"\n";
    let s = Scenario::from_toml(text).unwrap();
    let a = summary_csv(&run(&s).unwrap()).unwrap();
    let b = summary_csv(&run(&s).unwrap()).unwrap();
    assert_eq!(a, b);
    let dir = scratch("repro");
    let path = dir.join("s.toml");
    fs::write(&path, text).unwrap();
    for k in 0..2 {
        bin().args(["run"]).arg(&path).args(["--seed", "5", "--out"]).arg(dir.join(format!("o{k}"))).status().unwrap();
    }
    assert_eq!(fs::read(dir.join("o0/summary.csv")).unwrap(), fs::read(dir.join("o1/summary.csv")).unwrap());
}

#[test]
fn gamma_override_trades_time_for_energy() {
    let (lo, hi) = (scratch("g_lo"), scratch("g_hi"));
    run_fixture("fig2_unconstrained", &lo, &["--gamma", "0.01"]);
    run_fixture("fig2_unconstrained", &hi, &["--gamma", "0.5"]);
    let (a, b) = (row(&summary(&lo), "1"), row(&summary(&hi), "1"));
    assert!(value(&a, "travel_time") > value(&b, "travel_time"));
    assert!(value(&a, "energy") < value(&b, "energy"));
}

#[test]
fn sample_step_sets_grid_and_keeps_breakpoints() {
    let out = scratch("step");
    run_fixture("fig7_uvmax", &out, &["--sample-step", "0.5"]);
    let text = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let times: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    let tf = *times.last().unwrap();
    let grid = (tf / 0.5).floor() as usize + 1;
    assert_eq!(times.len(), grid + 1, "grid plus the off-grid exit time");
    for t in [4.0, 31.0, 32.348148] {
        assert!(times.iter().any(|x| (x - t).abs() < 1e-6));
    }
}

#[test]
fn list_fixtures_names_every_fixture() {
    let out = bin().arg("list-fixtures").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for (name, _) in FIXTURES {
        assert!(text.lines().any(|l| l == *name));
    }
}

#[test]
fn each_fixture_runs_within_a_second() {
    for (name, _) in FIXTURES {
        let s = Scenario::fixture(name).unwrap();
        let start = Instant::now();
        run(&s).unwrap();
        assert!(start.elapsed() < Duration::from_secs(1), "{name}: {:?}", start.elapsed());
    }
}
