//! End-to-end checks of the pipeline binary: artifact chaining, staleness
//! refusal, reproducibility, and the numeric sanity of each stage's tables.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(
        &path,
        r#"
seed = 11

[plant]
n_grid = 32
sensor_indices = [18, 25]

[steady]
dt = 0.02
t_steps = 40

[snapshots]
dt = 0.02
n_steps = 3000
spacing = 50
n_output_modes = 6

[rom]
r = 8

[simulate]
dt = 0.02
horizon = 40.0
turn_on = [0.0]
stride = 20
settle = 60.0

[bifurcation]
mu_lo = 0.25
mu_hi = 0.55
step = 0.15
dt = 0.05
t_steps = 30

[oracle]
n = 8
n_u = 2
instances = 2
dt = 0.002
spacing = 10
"#,
    )
    .unwrap();
    path
}

fn bpod(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpod"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Data rows of a stamped table (comment and header skipped).
fn table_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let stamp = lines.next().unwrap();
    assert!(stamp.starts_with("# manifest "), "missing stamp in {}", path.display());
    lines
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "typo_key = 1\n").unwrap();
    let out = bpod(tmp.path(), &cfg, &["steady"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("typo_key"));
}

#[test]
fn invalid_ranges_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[steady]\ndt = -0.01\n").unwrap();
    let out = bpod(tmp.path(), &cfg, &["steady"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("steady.dt"));
}

#[test]
fn steady_stage_is_stamped_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["steady"]));

    let state = tmp.path().join("out/steady_state.csv");
    let manifest = tmp.path().join("out/steady.manifest.toml");
    assert!(state.exists() && manifest.exists());

    let first = std::fs::read(&state).unwrap();
    let stamp = std::fs::read_to_string(&state).unwrap().lines().next().unwrap().to_string();
    assert!(std::fs::read_to_string(&manifest).unwrap().contains(stamp.trim_start_matches("# manifest ")));

    // Same config and seed: byte-identical artifact.
    assert_ok(&bpod(tmp.path(), &cfg, &["steady"]));
    assert_eq!(first, std::fs::read(&state).unwrap());
}

#[test]
fn downstream_stages_name_the_missing_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = bpod(tmp.path(), &cfg, &["eigs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bpod steady"));

    let out = bpod(tmp.path(), &cfg, &["lqr"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bpod rom"));
}

#[test]
fn changed_seed_invalidates_upstream_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["steady"]));

    let out = bpod(tmp.path(), &cfg, &["--seed", "99", "eigs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stale"));
    assert!(stderr(&out).contains("bpod steady"));

    assert_ok(&bpod(tmp.path(), &cfg, &["--seed", "99", "--force", "eigs"]));
}

#[test]
fn edited_artifacts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["steady"]));

    let state = tmp.path().join("out/steady_state.csv");
    let mut text = std::fs::read_to_string(&state).unwrap();
    text.push_str("0.0\n");
    std::fs::write(&state, text).unwrap();

    let out = bpod(tmp.path(), &cfg, &["eigs"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not match its manifest"));
}

#[test]
fn pipeline_chains_from_steady_to_closed_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    for stage in ["steady", "eigs", "snapshots", "rom", "lqr", "lqg"] {
        assert_ok(&bpod(tmp.path(), &cfg, &[stage]));
    }
    let out_dir = tmp.path().join("out");
    for artifact in [
        "eigs_values.csv",
        "phi_u.csv",
        "psi_u.csv",
        "x_factor.csv",
        "z_factor.csv",
        "hsv.csv",
        "gramian_diag.csv",
        "model/model.json",
        "lqr_gain.csv",
        "lqr_spectrum.csv",
        "lqg_gain.csv",
        "lqg_spectrum.csv",
        "c_bar.csv",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }

    // Both unstable directions appear with positive real part.
    let eigs = table_rows(&out_dir.join("eigs_values.csv"));
    assert_eq!(eigs.len(), 2);
    for row in &eigs {
        assert!(row[0].parse::<f64>().unwrap() > 0.0);
    }

    // The designed loops are stable.
    for table in ["lqr_spectrum.csv", "lqg_spectrum.csv"] {
        for row in table_rows(&out_dir.join(table)) {
            assert!(row[0].parse::<f64>().unwrap() < 0.0, "{table} has an unstable eigenvalue");
        }
    }

    // One trace per requested switch-on time, each with decaying energy.
    assert_ok(&bpod(
        tmp.path(),
        &cfg,
        &["simulate", "--mode", "observer", "--turn-on", "2", "--turn-on", "6"],
    ));
    for name in ["trace_observer_t2.csv", "trace_observer_t6.csv"] {
        let rows = table_rows(&out_dir.join(name));
        let first: f64 = rows.first().unwrap()[1].parse().unwrap();
        let last: f64 = rows.last().unwrap()[1].parse().unwrap();
        assert!(last < 0.05 * first, "{name}: energy {first:.3e} -> {last:.3e}");
    }
}

#[test]
fn oracle_comparison_matches_dense_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["--jobs", "2", "oracle-compare"]));
    let rows = table_rows(&tmp.path().join("out/oracle_compare.csv"));
    assert_eq!(rows.len(), 8); // 2 instances x 4 values
    for row in rows {
        let rel: f64 = row[4].parse().unwrap();
        assert!(rel < 0.02, "relative error {rel:.3e}");
    }
}

#[test]
fn bifurcation_scan_brackets_the_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["bifurcation"]));
    let out_dir = tmp.path().join("out");

    let branch = table_rows(&out_dir.join("branch.csv"));
    assert_eq!(branch.len(), 3);
    for row in &branch {
        let state_ref = &row[4];
        assert!(out_dir.join(state_ref).exists(), "missing {state_ref}");
    }

    let bracket = table_rows(&out_dir.join("hopf_bracket.csv"));
    assert_eq!(bracket.len(), 1);
    let lo: f64 = bracket[0][0].parse().unwrap();
    let hi: f64 = bracket[0][1].parse().unwrap();
    assert!(lo < hi && hi - lo <= 0.15 + 1e-12);
}

#[test]
fn strict_mode_still_solves_the_steady_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    assert_ok(&bpod(tmp.path(), &cfg, &["--strict", "steady"]));
    let rows = table_rows(&tmp.path().join("out/steady_history.csv"));
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert!(last <= 1e-10);
}
