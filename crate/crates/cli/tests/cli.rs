use std::path::{Path, PathBuf};
use std::process::Command;

use popctl_core::io::Dump;
use serde_json::Value;
use tempfile::TempDir;

const SMALL_GRID: &str = "[grid]\nnx = [4]\nna = 16\n";

struct Run {
    code: i32,
    out: PathBuf,
    _dir: TempDir,
}

impl Run {
    fn manifest(&self) -> Value {
        read_json(&self.out.join("manifest.json"))
    }

    fn error(&self) -> Value {
        read_json(&self.out.join("error.json"))
    }

    fn text(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap()
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_with(config: &str, extra: &[&str], files: &[(&str, &str)]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    for (name, body) in files {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_popctl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--output-dir")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run {
        code: status.status.code().unwrap(),
        out,
        _dir: dir,
    }
}

fn run(config: &str) -> Run {
    run_with(config, &[], &[])
}

#[test]
fn validate_reference_passes_declared_hypotheses() {
    let r = run("kind = \"validate\"\n");
    assert_eq!(r.code, 0);
    let m = r.manifest();
    for h in ["H1", "h1", "H2", "H3"] {
        assert_eq!(m["summary"]["hypotheses"][h], "pass", "{h}");
    }
    assert_eq!(m["summary"]["hypotheses"]["H4"], "not-asserted");
    assert_eq!(m["status"], "ok");
    let c = &m["constants"];
    assert!((c["t_min"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert!((c["t0"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert!((c["t1"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!((c["r_sup"].as_f64().unwrap() - 0.50625).abs() < 1e-9);
}

#[test]
fn failing_declared_hypothesis_is_an_experiment_failure() {
    let r = run("kind = \"validate\"\n[model]\nmu1 = { kind = \"constant\", value = 1.0 }\n");
    assert_eq!(r.code, 4);
    assert_eq!(r.manifest()["summary"]["hypotheses"]["H1"], "fail");
    assert_eq!(r.error()["category"], "experiment");
}

#[test]
fn sweep_over_the_threshold_window() {
    let r = run(&format!(
        "kind = \"sweep\"\n{SMALL_GRID}[hum]\nmax_iter = 150\n[sweep]\nhorizons = [0.3, 0.5, 0.8, 1.0, 1.2]\n"
    ));
    assert_eq!(r.code, 0);
    let csv = r.text("sweep.csv");
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("requested_t,t,steps,t_min,residual_ratio"));
    assert_eq!(lines.count(), 5);
    let m = r.manifest();
    assert!((m["constants"]["t_min"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(m["outputs"][0], "sweep.csv");
}

#[test]
fn missing_rate_table_names_the_key() {
    let r = run("kind = \"validate\"\n[model]\nmu1_table = \"nowhere.txt\"\n");
    assert_eq!(r.code, 2);
    let e = r.error();
    assert_eq!(e["key"], "model.mu1_table");
    assert_eq!(e["category"], "config");
}

#[test]
fn malformed_rate_table_names_the_key() {
    let r = run_with(
        "kind = \"validate\"\n[model]\nmu2_table = \"mu2.txt\"\n",
        &[],
        &[("mu2.txt", "0.5\nabc\n")],
    );
    assert_eq!(r.code, 2);
    let e = r.error();
    assert_eq!(e["key"], "model.mu2_table");
    assert!(e["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn rate_table_with_infinite_tail_validates() {
    let r = run_with(
        "kind = \"validate\"\n[model]\nmu1_table = \"mu1.txt\"\n",
        &[],
        &[("mu1.txt", "# age mortality\n0.5\n1.0\n2.0\ninf\n")],
    );
    assert_eq!(r.code, 0);
    assert_eq!(r.manifest()["summary"]["hypotheses"]["H1"], "pass");
}

#[test]
fn unknown_keys_are_rejected() {
    for cfg in [
        "kind = \"validate\"\ncolour = 3\n",
        "kind = \"validate\"\n[grid]\nnz = [4]\n",
        "kind = \"nonsense\"\n",
    ] {
        let r = run(cfg);
        assert_eq!(r.code, 2, "{cfg}");
        assert_eq!(r.error()["category"], "config");
    }
}

#[test]
fn misaligned_grid_is_a_config_error() {
    let r = run("kind = \"simulate\"\n[grid]\nnx = [4]\nna = 16\nns = 12\n");
    assert_eq!(r.code, 2);
    assert!(r.error()["message"].as_str().unwrap().contains("Ns = 16"));
}

const SIMULATE: &str = "kind = \"simulate\"
seed = 7
[grid]
nx = [4]
na = 16
[initial]
kind = \"random\"
lo = 0.0
hi = 1.0
[simulate]
horizon = 0.5
stride = 4
volterra = true
control = { kind = \"random\", lo = 0.0, hi = 2.0 }
";

#[test]
fn reruns_are_bit_identical() {
    let a = run(SIMULATE);
    let b = run(SIMULATE);
    assert_eq!(a.code, 0);
    for f in ["diagnostics.csv", "newborn.csv"] {
        assert_eq!(a.text(f), b.text(f), "{f}");
    }
    let bin = |r: &Run| std::fs::read(r.out.join("trajectory.bin")).unwrap();
    assert_eq!(bin(&a), bin(&b));
    assert_eq!(a.manifest()["config_hash"], b.manifest()["config_hash"]);
}

#[test]
fn seed_override_changes_random_data_only() {
    let a = run(SIMULATE);
    let b = run_with(SIMULATE, &["--seed", "8"], &[]);
    assert_eq!(b.code, 0);
    assert_ne!(a.text("diagnostics.csv"), b.text("diagnostics.csv"));
    assert_eq!(b.manifest()["seed"], 8);
    assert_ne!(a.manifest()["config_hash"], b.manifest()["config_hash"]);
}

#[test]
fn simulate_outputs_are_consistent() {
    let r = run(SIMULATE);
    let m = r.manifest();
    assert!(m["summary"]["min"].as_f64().unwrap() >= 0.0);
    let rel = m["summary"]["volterra_relative_difference"].as_f64().unwrap();
    assert!(rel < 5.0 / 16.0, "{rel}");
    // initial state plus one row per step
    assert_eq!(r.text("diagnostics.csv").lines().count(), 1 + 9);
    let dump = Dump::load(&r.out.join("trajectory.bin")).unwrap();
    assert_eq!(dump.dims, vec![3, 16, 16, 4]);
    assert_eq!(dump.spacings[0], 0.25);
}

#[test]
fn indivisible_stride_is_rejected() {
    let r = run(&format!("kind = \"simulate\"\n{SMALL_GRID}[simulate]\nhorizon = 0.5\nstride = 3\n"));
    assert_eq!(r.code, 2);
    assert_eq!(r.error()["key"], "simulate.stride");
}

#[test]
fn adjoint_check_passes() {
    let r = run(&format!("kind = \"adjoint-check\"\n{SMALL_GRID}[adjoint-check]\ntrials = 3\n"));
    assert_eq!(r.code, 0);
    assert!(r.manifest()["summary"]["max_relative_defect"].as_f64().unwrap() <= 1e-10);
    assert_eq!(r.text("duality.csv").lines().count(), 4);
}

#[test]
fn geometry_writes_one_row_per_cell() {
    let r = run(&format!("kind = \"geometry\"\n{SMALL_GRID}[geometry]\nhorizon = 1.2\n"));
    assert_eq!(r.code, 0);
    let csv = r.text("fates.csv");
    assert_eq!(csv.lines().next().unwrap(), "a,s,fate,event_time,renewals");
    assert_eq!(csv.lines().count(), 1 + 16 * 16);
    let below = run(&format!("kind = \"geometry\"\n{SMALL_GRID}[geometry]\nhorizon = 0.3\n"));
    let frac = |r: &Run| r.manifest()["summary"]["covered_fraction"].as_f64().unwrap();
    assert!(frac(&below) < frac(&r));
}

#[test]
fn steady_state_dump_round_trips() {
    let r = run(&format!("kind = \"steady\"\n{SMALL_GRID}"));
    assert_eq!(r.code, 0);
    let m = r.manifest();
    assert!(m["summary"]["contraction"].as_f64().unwrap() <= 0.56);
    let dump = Dump::load(&r.out.join("steady.bin")).unwrap();
    assert_eq!(dump.dims, vec![16, 16, 4]);
    assert!(dump.values.iter().all(|v| *v > 0.0));

    // the dump is accepted back as initial data
    let path = r.out.join("steady.bin");
    let hum = run(&format!(
        "kind = \"hum\"\n{SMALL_GRID}[initial]\nkind = \"file\"\npath = {:?}\n[hum]\nmax_iter = 50\n",
        path.to_str().unwrap()
    ));
    assert_eq!(hum.code, 0);
    let missing = run(&format!("kind = \"hum\"\n{SMALL_GRID}[initial]\nkind = \"file\"\npath = \"p.bin\"\n"));
    assert_eq!(missing.code, 2);
    assert_eq!(missing.error()["key"], "initial.path");
}

#[test]
fn steady_non_convergence_is_numerical() {
    let r = run(&format!("kind = \"steady\"\n{SMALL_GRID}[steady]\nmax_iter = 1\n"));
    assert_eq!(r.code, 3);
    assert_eq!(r.error()["category"], "numerical");
    assert_eq!(r.manifest()["status"], "numerical");
}

#[test]
fn hum_writes_control_and_trace() {
    let r = run(&format!("kind = \"hum\"\n{SMALL_GRID}[hum]\nhorizon = 1.0\nmax_iter = 100\n"));
    assert_eq!(r.code, 0);
    let s = &r.manifest()["summary"];
    assert!(s["residual_ratio"].as_f64().unwrap() < 0.1);
    let control = Dump::load(&r.out.join("control.bin")).unwrap();
    assert_eq!(control.dims, vec![16, 16, 16, 4]);
    let rows = r.text("cg_residuals.csv").lines().count();
    assert_eq!(rows, s["iterations"].as_u64().unwrap() as usize + 2);
}

#[test]
fn blowup_probe_separates_sub_and_supercritical() {
    let r = run(
        "kind = \"blowup-probe\"\n[grid]\nnx = [4]\nna = 32\n[model]\nmu2 = { kind = \"zero\" }\n\
         [initial]\nkind = \"constant\"\nvalue = 1.0\n",
    );
    assert_eq!(r.code, 0);
    let runs = r.manifest()["summary"]["runs"].clone();
    assert_eq!(runs[0]["verdict"], "decay");
    assert_eq!(runs[1]["verdict"], "grow");
    assert!((runs[1]["r"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn staircase_with_fixed_leg_count() {
    let r = run(&format!("kind = \"staircase\"\n{SMALL_GRID}[staircase]\nt_star = 1.0\nlegs = 4\n"));
    assert_eq!(r.code, 0);
    let s = &r.manifest()["summary"];
    assert_eq!(s["legs"], 4);
    assert!(s["final_relative_error"].as_f64().unwrap() < 0.05);
    assert!(s["min"]["value"].as_f64().unwrap() >= 0.0);
    assert_eq!(r.text("plan.csv").lines().count(), 5);
    assert_eq!(r.text("legs.csv").lines().count(), 5);
}

#[test]
fn staircase_horizon_below_threshold_is_rejected() {
    let r = run(&format!("kind = \"staircase\"\n{SMALL_GRID}[staircase]\nt_star = 0.5\nlegs = 2\n"));
    assert_eq!(r.code, 2);
}
