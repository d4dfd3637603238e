//! Subcommand implementations: each one turns the effective config into core
//! calls and leaves results plus a manifest in the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use panelvar::forecast::{
    recursive_exercise, write_cumlps_csv, write_scores_csv, write_table_csv, EvalPlan,
    ForecastDistribution, ForecastModel, PvarModel,
};
use panelvar::gibbs::McmcConfig;
use panelvar::panel::{load_dataset, Month, PanelDataset};
use panelvar::pvar::{assemble_system_draw, SystemDraw};
use panelvar::rng::child_seed;
use panelvar::sim::{simulate_pvar, SimSpec, SimTruth};
use panelvar::spillover::{spillover_recursion, write_spillover_csv};
use panelvar::stats::{mean, quantile};
use panelvar::vamp::VampConfig;

use crate::bench::ArBenchmark;
use crate::config::Config;
use crate::fetch::run_fetch;
use crate::manifest::{
    fingerprint_files, manifest_exists, read_manifest, write_manifest, PanelInfo, RunManifest,
};
use crate::store::{
    equation_infos, load_data_echo, read_draws, write_data_echo, write_draws, DRAWS_LAYOUT,
};
use crate::{compute, validation, CliResult};

fn tool_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn ensure_out(cfg: &Config) -> CliResult<PathBuf> {
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(&out)
        .map_err(|e| validation(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn vamp_config(cfg: &Config) -> CliResult<VampConfig> {
    let d = VampConfig::default();
    Ok(VampConfig {
        tol: cfg.parse_or("vamp.tol", d.tol)?,
        max_iter: cfg.parse_or("vamp.max_iter", d.max_iter)?,
        damping: cfg.parse_or("vamp.damping", d.damping)?,
        zeta_init: cfg.parse_or("vamp.zeta_init", d.zeta_init)?,
        a_sigma: cfg.parse_or("vamp.a_sigma", d.a_sigma)?,
        b_sigma: cfg.parse_or("vamp.b_sigma", d.b_sigma)?,
        record_trace: false,
    })
}

fn mcmc_config(cfg: &Config) -> CliResult<McmcConfig> {
    let d = McmcConfig::default();
    Ok(McmcConfig {
        n_burn: cfg.parse_or("mcmc.n_burn", d.n_burn)?,
        n_save: cfg.parse_or("mcmc.n_save", d.n_save)?,
        thin: cfg.parse_or("mcmc.thin", d.thin)?,
        seed: 0,
        freeze_scales: None,
    })
}

fn pvar_model(cfg: &Config) -> CliResult<PvarModel> {
    let p: usize = cfg.parse_required("model.p")?;
    if p == 0 {
        return Err(validation("config key model.p: must be at least 1"));
    }
    let mut model = PvarModel::new(cfg.get("model.name").unwrap_or("pvar"), p);
    model.vamp = vamp_config(cfg)?;
    model.mcmc = mcmc_config(cfg)?;
    model.propagate_b = cfg.parse_or("model.propagate_stacked", true)?;
    Ok(model)
}

fn load_input_panel(cfg: &Config) -> CliResult<PanelDataset> {
    let panel = cfg.existing_path("data.panel")?;
    let vars = cfg.existing_path("data.variables")?;
    load_dataset(&panel, &vars).map_err(validation)
}

fn panel_info(ds: &PanelDataset, p: usize) -> PanelInfo {
    PanelInfo {
        n_units: ds.countries().len(),
        m: ds.countries().iter().map(|c| c.vars.len()).collect(),
        p,
        t_len: ds.t_len(),
    }
}

fn month_index(ds: &PanelDataset, m: Month, key: &str) -> CliResult<usize> {
    ds.time_index().iter().position(|&t| t == m).ok_or_else(|| {
        validation(format!(
            "config key {key}: period {m} is outside the sample {}..{}",
            ds.time(0),
            ds.time(ds.t_len() - 1)
        ))
    })
}

pub fn cmd_fetch(cfg: &Config) -> CliResult<()> {
    let out = ensure_out(cfg)?;
    let outcome = run_fetch(cfg, &out)?;
    log::info!("fetched {} series into {}", outcome.fetched, out.display());
    if !outcome.errors.is_empty() {
        for (req, msg) in &outcome.errors {
            log::error!("{}: {msg}", req.id());
        }
        return Err(compute(format!(
            "{} of {} series failed; see fetch_errors.csv",
            outcome.errors.len(),
            outcome.fetched + outcome.errors.len()
        )));
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &Config) -> CliResult<()> {
    let out = ensure_out(cfg)?;
    let mut spec = SimSpec::new(
        cfg.parse_required("sim.n_units")?,
        cfg.parse_required("sim.m_per_unit")?,
        cfg.parse_required("sim.p")?,
        cfg.parse_required("sim.t_len")?,
    );
    spec.sparsity = cfg.parse_or("sim.sparsity", spec.sparsity)?;
    spec.own_diag = cfg.parse_or("sim.own_diag", spec.own_diag)?;
    spec.cross_scale = cfg.parse_or("sim.cross_scale", spec.cross_scale)?;
    spec.seed = cfg.seed()?;
    spec.validate().map_err(validation)?;
    let t0 = Instant::now();
    let (ds, truth) = simulate_pvar(&spec).map_err(compute)?;
    let (data, vars) = write_data_echo(&out, &ds)?;
    write_truth_csv(&out.join("truth.csv"), &truth)?;
    let mut timings = BTreeMap::new();
    timings.insert("simulate".to_string(), t0.elapsed().as_millis() as u64);
    write_manifest(
        &out,
        &RunManifest {
            tool: tool_id(),
            seed: spec.seed,
            data_fingerprint: fingerprint_files(&[&data, &vars])?,
            config: cfg.echo().clone(),
            panel: panel_info(&ds, spec.p),
            equations: vec![],
            n_save: 0,
            timings_ms: timings,
            draws_layout: String::new(),
        },
    )
}

/// The generating system in long format, one row per matrix entry.
fn write_truth_csv(path: &Path, truth: &SimTruth) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    let res: Result<(), csv::Error> = (|| {
        w.write_record(["matrix", "row", "col", "value"])?;
        let mats: [(&str, &DMatrix<f64>); 4] = [
            ("phi_s", &truth.phi_s),
            ("l", &truth.l),
            ("phi", &truth.system.phi),
            ("u", &truth.system.u),
        ];
        for (name, m) in mats {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    w.write_record([name, &r.to_string(), &c.to_string(), &m[(r, c)].to_string()])?;
                }
            }
        }
        for (r, v) in truth.system.h.iter().enumerate() {
            w.write_record(["h", &r.to_string(), "0", &v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_estimate(cfg: &Config) -> CliResult<RunManifest> {
    let out = ensure_out(cfg)?;
    let ds = load_input_panel(cfg)?;
    let model = pvar_model(cfg)?;
    let seed = cfg.seed()?;
    let t0 = Instant::now();
    let post = model.estimate(&ds, seed).map_err(compute)?;
    let est_ms = t0.elapsed().as_millis() as u64;
    let (data, vars) = write_data_echo(&out, &ds)?;
    write_draws(&out, &post)?;
    let mut timings = BTreeMap::new();
    timings.insert("estimate".to_string(), est_ms);
    let manifest = RunManifest {
        tool: tool_id(),
        seed,
        data_fingerprint: fingerprint_files(&[&data, &vars])?,
        config: cfg.echo().clone(),
        panel: panel_info(&ds, model.p),
        equations: equation_infos(&post),
        n_save: post.n_save(),
        timings_ms: timings,
        draws_layout: DRAWS_LAYOUT.to_string(),
    };
    write_manifest(&out, &manifest)?;
    for e in &manifest.equations {
        if !e.vamp_converged {
            log::warn!(
                "equation ({}, {}) stopped after {} iterations without converging",
                e.country,
                e.eq,
                e.vamp_iterations
            );
        }
    }
    Ok(manifest)
}

/// Keys that pin what the stored draws mean; a forecast reusing a run
/// directory must agree with the manifest on all of them.
fn reuse_guard(cfg: &Config, m: &RunManifest) -> CliResult<()> {
    let relevant = |k: &str| {
        k.starts_with("model.")
            || k.starts_with("mcmc.")
            || k.starts_with("vamp.")
            || k.starts_with("data.")
            || k == "seed"
    };
    let mut changed: Vec<&String> = Vec::new();
    for k in cfg.echo().keys().chain(m.config.keys()) {
        if !relevant(k) || changed.contains(&k) {
            continue;
        }
        if cfg.echo().get(k) != m.config.get(k) {
            changed.push(k);
        }
    }
    if !changed.is_empty() {
        let list: Vec<&str> = changed.iter().map(|s| s.as_str()).collect();
        return Err(validation(format!(
            "run directory was estimated under different settings; changed keys: {}",
            list.join(", ")
        )));
    }
    Ok(())
}

pub fn cmd_forecast(cfg: &Config) -> CliResult<()> {
    let out = ensure_out(cfg)?;
    let manifest = if manifest_exists(&out) {
        let m = read_manifest(&out)?;
        if m.equations.is_empty() {
            cmd_estimate(cfg)?
        } else {
            reuse_guard(cfg, &m)?;
            m
        }
    } else {
        cmd_estimate(cfg)?
    };
    let ds = load_data_echo(&out)?;
    let fp = fingerprint_files(&[
        &out.join(crate::store::DATA_FILE),
        &out.join(crate::store::VARS_FILE),
    ])?;
    if fp != manifest.data_fingerprint {
        return Err(validation(format!(
            "data echo in {} does not match the manifest fingerprint",
            out.display()
        )));
    }
    let post = read_draws(&out, &ds, &manifest)?;
    let model = pvar_model(cfg)?;
    let h: usize = cfg.parse_or("forecast.h", 12)?;
    if h == 0 {
        return Err(validation("config key forecast.h: must be at least 1"));
    }
    let use_mean = match cfg.get("forecast.point") {
        None => false,
        Some("median") => false,
        Some("mean") => true,
        Some(other) => {
            return Err(validation(format!(
                "config key forecast.point: expected mean or median, got {other:?}"
            )))
        }
    };
    let seed = cfg.seed()?;

    let t0 = Instant::now();
    let dist = model
        .forecast_from(&post, &ds, h, child_seed(seed, "cli/forecast"))
        .map_err(compute)?;
    write_forecast_csv(&out.join("forecast.csv"), &ds, &dist)?;
    let mut manifest = manifest;
    manifest
        .timings_ms
        .insert("forecast".to_string(), t0.elapsed().as_millis() as u64);

    if let Some(first) = cfg.month("holdout.first_origin")? {
        let t0 = Instant::now();
        let plan = EvalPlan {
            first_origin: month_index(&ds, first, "holdout.first_origin")?,
            h_max: h,
            seed: child_seed(seed, "cli/eval"),
            use_mean_point: use_mean,
        };
        let bench_name = cfg.get("forecast.benchmark").unwrap_or("ar1").to_string();
        let bench = ArBenchmark::new(
            &bench_name,
            cfg.parse_or("forecast.bench_draws", manifest.n_save)?,
        );
        let mut models: Vec<&dyn ForecastModel> = vec![&model];
        if bench_name != model.name {
            models.push(&bench);
        }
        let eval = recursive_exercise(&ds, &plan, &models).map_err(compute)?;
        for (model_name, origin) in &eval.failures {
            log::warn!("{model_name} failed at origin {origin}, scores skipped there");
        }
        write_scores_csv(&out.join("scores.csv"), &eval.rows).map_err(compute)?;
        let table = eval.summary_table(&bench_name).map_err(compute)?;
        write_table_csv(&out.join("table2.csv"), &table).map_err(compute)?;
        let by_country = eval.score_table(&bench_name).map_err(compute)?;
        write_table_csv(&out.join("table_by_country.csv"), &by_country).map_err(compute)?;
        write_cumlps_csv(&out, &eval, &bench_name).map_err(compute)?;
        manifest
            .timings_ms
            .insert("evaluate".to_string(), t0.elapsed().as_millis() as u64);
    }
    write_manifest(&out, &manifest)
}

/// Predictive summaries per variable and horizon from the sample-end
/// forecast.
fn write_forecast_csv(
    path: &Path,
    ds: &PanelDataset,
    dist: &ForecastDistribution,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| validation(format!("cannot write {}: {e}", path.display())))?;
    let specs = ds.specs();
    let origin_month = ds.time(dist.origin);
    let res: Result<(), csv::Error> = (|| {
        w.write_record([
            "country", "variable", "period", "horizon", "mean", "median", "q05", "q16", "q84",
            "q95",
        ])?;
        for (v, spec) in specs.iter().enumerate() {
            for h in 1..=dist.h_max() {
                let draws = dist.horizon_draws(h, v);
                w.write_record([
                    spec.country.clone(),
                    spec.code.clone(),
                    origin_month.plus(h as i32).to_string(),
                    h.to_string(),
                    mean(&draws).to_string(),
                    quantile(&draws, 0.5).to_string(),
                    quantile(&draws, 0.05).to_string(),
                    quantile(&draws, 0.16).to_string(),
                    quantile(&draws, 0.84).to_string(),
                    quantile(&draws, 0.95).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| validation(format!("cannot write {}: {e}", path.display())))
}

/// Window ends as time indices, either listed outright or generated from a
/// first end plus a step.
fn window_schedule(cfg: &Config, ds: &PanelDataset) -> CliResult<Vec<usize>> {
    if let Some(list) = cfg.list("spillover.window_ends") {
        if list.is_empty() {
            return Err(validation(
                "config key spillover.window_ends: no windows listed",
            ));
        }
        let mut out = Vec::with_capacity(list.len());
        for s in &list {
            let m: Month = s.parse().map_err(|_| {
                validation(format!(
                    "config key spillover.window_ends: expected a YYYY-MM period, got {s:?}"
                ))
            })?;
            out.push(month_index(ds, m, "spillover.window_ends")?);
        }
        return Ok(out);
    }
    let first = cfg.month("spillover.first_end")?.ok_or_else(|| {
        validation("missing config key spillover.window_ends or spillover.first_end")
    })?;
    let step: usize = cfg.parse_or("spillover.step", 1)?;
    if step == 0 {
        return Err(validation("config key spillover.step: must be at least 1"));
    }
    let start = month_index(ds, first, "spillover.first_end")?;
    Ok((start..ds.t_len()).step_by(step).collect())
}

pub fn cmd_spillover(cfg: &Config) -> CliResult<()> {
    let out = ensure_out(cfg)?;
    let ds = load_input_panel(cfg)?;
    let model = pvar_model(cfg)?;
    let h_f: usize = cfg.parse_or("spillover.h", 12)?;
    if h_f == 0 {
        return Err(validation("config key spillover.h: must be at least 1"));
    }
    let ends = window_schedule(cfg, &ds)?;
    let seed = cfg.seed()?;
    let t0 = Instant::now();
    let runner =
        |window: &PanelDataset, window_seed: u64| -> panelvar::error::Result<Vec<SystemDraw>> {
            let post = model.estimate(window, window_seed)?;
            let mut rng = panelvar::rng::stream(window_seed, "assemble");
            Ok((0..post.n_save())
                .map(|d| assemble_system_draw(&post, d, model.propagate_b, &mut rng))
                .collect())
        };
    let results = spillover_recursion(&ds, &runner, h_f, &ends, child_seed(seed, "cli/spillover"))
        .map_err(compute)?;
    write_spillover_csv(&out, &results).map_err(compute)?;
    for m in &results.failed_windows {
        log::warn!("window ending {m} failed to estimate, skipped");
    }
    let mut timings = BTreeMap::new();
    timings.insert("spillover".to_string(), t0.elapsed().as_millis() as u64);
    let (data, vars) = write_data_echo(&out, &ds)?;
    write_manifest(
        &out,
        &RunManifest {
            tool: tool_id(),
            seed,
            data_fingerprint: fingerprint_files(&[&data, &vars])?,
            config: cfg.echo().clone(),
            panel: panel_info(&ds, model.p),
            equations: vec![],
            n_save: 0,
            timings_ms: timings,
            draws_layout: String::new(),
        },
    )
}
