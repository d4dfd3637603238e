//! End-to-end runs of the pvar binary: determinism, run-directory reuse,
//! config layering and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pvar_cli::manifest::read_manifest;

fn pvar() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pvar"));
    c.env_remove("RUST_LOG");
    for (k, _) in std::env::vars() {
        if k.starts_with("PANELVAR_") {
            c.env_remove(&k);
        }
    }
    c
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = pvar();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary spawns")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args, &[]);
    assert!(
        out.status.success(),
        "pvar {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SIM_CFG: &str = "sim.n_units = 2\nsim.m_per_unit = 2\nsim.p = 1\nsim.t_len = 60\nseed = 4\n";

/// Simulates a small panel and returns the directory holding its CSVs.
fn simulated_panel(root: &Path) -> PathBuf {
    let cfg = write_cfg(root, "sim.cfg", SIM_CFG);
    let dir = root.join("sim");
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    dir
}

fn estimate_cfg(sim: &Path) -> String {
    format!(
        "data.panel = {}/data.csv\ndata.variables = {}/variables.csv\n\
         model.p = 1\nmcmc.n_burn = 20\nmcmc.n_save = 30\nseed = 4\n",
        sim.display(),
        sim.display()
    )
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "sim.cfg", SIM_CFG);
    let run_once = |dir: &str, seed: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut args = vec![
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        run_ok(&args);
        out
    };
    let a = run_once("a", None);
    let b = run_once("b", None);
    let c = run_once("c", Some("5"));
    assert_eq!(read(&a.join("data.csv")), read(&b.join("data.csv")));
    assert_ne!(read(&a.join("data.csv")), read(&c.join("data.csv")));
    assert!(a.join("truth.csv").is_file());
    let manifest = read_manifest(&a).unwrap();
    assert_eq!(manifest.seed, 4);
    assert_eq!(manifest.panel.t_len, 60);
    assert_eq!(read_manifest(&c).unwrap().seed, 5);
}

#[test]
fn sparsity_zero_leaves_units_decoupled() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "sim.cfg",
        "sim.n_units = 2\nsim.m_per_unit = 2\nsim.p = 1\nsim.t_len = 40\nsim.sparsity = 0\nseed = 1\n",
    );
    let out = tmp.path().join("run");
    run_ok(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let n = 4;
    let mut rdr = csv::Reader::from_path(out.join("truth.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (matrix, row, col, value) = (
            rec.get(0).unwrap(),
            rec.get(1).unwrap().parse::<usize>().unwrap(),
            rec.get(2).unwrap().parse::<usize>().unwrap(),
            rec.get(3).unwrap().parse::<f64>().unwrap(),
        );
        match matrix {
            "phi_s" => {
                if row != col % n {
                    assert_eq!(value, 0.0, "phi_s[{row},{col}] should be zero");
                }
            }
            "l" => assert_eq!(value, 0.0, "l[{row},{col}] should be zero"),
            "u" => assert_eq!(value, f64::from(u8::from(row == col)), "u mixes shocks"),
            _ => {}
        }
    }
}

#[test]
fn missing_config_key_is_named_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "model.p = 1\n");
    let out = run(
        &[
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("data.panel"), "stderr was: {stderr}");
}

#[test]
fn forecast_reuses_the_stored_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated_panel(tmp.path());
    let cfg = write_cfg(
        tmp.path(),
        "fc.cfg",
        &format!("{}forecast.h = 3\n", estimate_cfg(&sim)),
    );
    let dir = tmp.path().join("run");
    let args = [
        "forecast",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    run_ok(&args);
    assert!(dir.join("draws").join("own_0_0.csv").is_file());
    let first = read(&dir.join("forecast.csv"));

    // second run must reuse the stored draws and reproduce the file
    run_ok(&args);
    assert_eq!(first, read(&dir.join("forecast.csv")));

    // altering one stored draw must alter the forecast, proving the draws
    // on disk are what the forecast consumes
    let own = dir.join("draws").join("own_0_0.csv");
    let text = std::fs::read_to_string(&own).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[1] = "50.0".into();
    lines[1] = fields.join(",");
    std::fs::write(&own, lines.join("\n") + "\n").unwrap();
    run_ok(&args);
    assert_ne!(first, read(&dir.join("forecast.csv")));

    // changing an estimation setting invalidates the run directory
    let changed = write_cfg(
        tmp.path(),
        "fc2.cfg",
        &format!("{}forecast.h = 3\n", estimate_cfg(&sim))
            .replace("mcmc.n_save = 30", "mcmc.n_save = 31"),
    );
    let out = run(
        &[
            "forecast",
            "--config",
            changed.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mcmc.n_save"), "stderr was: {stderr}");
}

#[test]
fn environment_overrides_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated_panel(tmp.path());
    let cfg = write_cfg(tmp.path(), "est.cfg", &estimate_cfg(&sim));
    let dir = tmp.path().join("run");
    let out = run(
        &[
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[("PANELVAR_MCMC__N_SAVE", "25")],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = read_manifest(&dir).unwrap();
    assert_eq!(manifest.n_save, 25);
    assert_eq!(manifest.config["mcmc.n_save"], "25");
    let own = std::fs::read_to_string(dir.join("draws").join("own_0_0.csv")).unwrap();
    assert_eq!(own.lines().count(), 26);

    let bad = run(
        &[
            "estimate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[("PANELVAR_NO_SUCH__KEY", "1")],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no_such.key"));
}

#[test]
fn json_config_is_equivalent_to_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let flat = write_cfg(tmp.path(), "sim.cfg", SIM_CFG);
    let json = write_cfg(
        tmp.path(),
        "sim.json",
        r#"{"sim": {"n_units": 2, "m_per_unit": 2, "p": 1, "t_len": 60}, "seed": 4}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&[
        "simulate",
        "--config",
        flat.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    run_ok(&[
        "simulate",
        "--config",
        json.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(read(&a.join("data.csv")), read(&b.join("data.csv")));
}

#[test]
fn scores_are_identical_across_reruns_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated_panel(tmp.path());
    let cfg = write_cfg(
        tmp.path(),
        "eval.cfg",
        &format!(
            "{}forecast.h = 2\nforecast.benchmark = ar1\nforecast.bench_draws = 30\n\
             holdout.first_origin = 2004-10\n",
            estimate_cfg(&sim)
        ),
    );
    let run_eval = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        run_ok(&[
            "forecast",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        out
    };
    let a = run_eval("a", "1");
    let b = run_eval("b", "2");
    let c = run_eval("c", "1");
    let scores = read(&a.join("scores.csv"));
    assert_eq!(
        scores,
        read(&b.join("scores.csv")),
        "thread count changed scores"
    );
    assert_eq!(scores, read(&c.join("scores.csv")), "rerun changed scores");
    assert_eq!(read(&a.join("table2.csv")), read(&b.join("table2.csv")));
    assert!(a.join("cumlps_1.csv").is_file());
    assert!(a.join("table_by_country.csv").is_file());

    // both models scored at both origins, both horizons truncated correctly:
    // origin 2004-10 scores h=1,2; origin 2004-11 only h=1
    let text = String::from_utf8(scores).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * (4 * 2 + 4 * 1));
    assert!(rows.iter().any(|r| r.contains(",pvar,")));
    assert!(rows.iter().any(|r| r.contains(",ar1,")));
}

#[test]
fn self_benchmark_table_is_neutral() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated_panel(tmp.path());
    let cfg = write_cfg(
        tmp.path(),
        "self.cfg",
        &format!(
            "{}forecast.h = 1\nforecast.benchmark = pvar\nholdout.first_origin = 2004-11\n",
            estimate_cfg(&sim)
        ),
    );
    let dir = tmp.path().join("run");
    run_ok(&[
        "forecast",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let mut rdr = csv::Reader::from_path(dir.join("table2.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.get(0).unwrap(), "pvar");
        assert_eq!(rec.get(6).unwrap().parse::<f64>().unwrap(), 1.0);
        assert_eq!(rec.get(7).unwrap().parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn spillover_summarizes_each_scheduled_window() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulated_panel(tmp.path());
    let cfg = write_cfg(
        tmp.path(),
        "spill.cfg",
        &format!(
            "{}spillover.h = 6\nspillover.window_ends = 2004-06, 2004-12\n",
            estimate_cfg(&sim)
        ),
    );
    let dir = tmp.path().join("run");
    run_ok(&[
        "spillover",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let total = std::fs::read_to_string(dir.join("dy_total.csv")).unwrap();
    let lines: Vec<&str> = total.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2004-06,"));
    assert!(lines[2].starts_with("2004-12,"));
    let by_country = std::fs::read_to_string(dir.join("dy_by_country.csv")).unwrap();
    assert!(by_country.contains("C00"));
    assert!(by_country.contains("C01"));
    assert!(dir.join("dy_by_variable.csv").is_file());
    assert!(read_manifest(&dir).is_ok());
}

#[test]
fn usage_errors_and_help_follow_the_exit_contract() {
    let help = run(&["--help"], &[]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("spillover"));

    let unknown = run(&["frobnicate"], &[]);
    assert_eq!(unknown.status.code(), Some(1));

    let no_config = run(&["estimate"], &[]);
    assert_eq!(no_config.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_config.stderr).contains("--config"));
}
