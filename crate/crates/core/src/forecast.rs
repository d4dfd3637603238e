//! Forecast simulation, density scoring and the recursive out-of-sample
//! evaluation harness.
//!
//! Predictive distributions are built by simulating each posterior system
//! draw forward. Scores: squared-error against the point forecast (median of
//! the draws by default) and the log predictive density, Rao-Blackwellized
//! over the draw-conditional Gaussians at horizon 1 and Gaussian-fitted to
//! the simulated draws beyond.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::panel::{Month, PanelDataset};
use crate::rng::child_seed;
use crate::stats::{log_sum_exp, mean, median, sample_var};

const VAR_FLOOR: f64 = 1e-10;

/// Simulated predictive distribution from one forecast origin.
#[derive(Debug, Clone)]
pub struct ForecastDistribution {
    /// Time index of the last observation the forecast conditions on.
    pub origin: usize,
    /// One simulated path per posterior draw, each h_max x n.
    pub paths: Vec<DMatrix<f64>>,
    /// Draw-conditional one-step-ahead means.
    pub one_step_means: Vec<DVector<f64>>,
    /// Draw-conditional one-step-ahead variances (diagonal of the
    /// reduced-form error covariance).
    pub one_step_vars: Vec<DVector<f64>>,
}

impl ForecastDistribution {
    pub fn n_draws(&self) -> usize {
        self.paths.len()
    }

    pub fn h_max(&self) -> usize {
        self.paths.first().map(|p| p.nrows()).unwrap_or(0)
    }

    pub fn n_vars(&self) -> usize {
        self.paths.first().map(|p| p.ncols()).unwrap_or(0)
    }

    /// All draws for one variable at horizon h (1-based).
    pub fn horizon_draws(&self, h: usize, var: usize) -> Vec<f64> {
        assert!(h >= 1 && h <= self.h_max());
        self.paths.iter().map(|p| p[(h - 1, var)]).collect()
    }

    /// Point forecast: median of the draws, or their mean on request.
    pub fn point(&self, h: usize, var: usize, use_mean: bool) -> f64 {
        let draws = self.horizon_draws(h, var);
        if use_mean {
            mean(&draws)
        } else {
            median(&draws)
        }
    }
}

/// Mean and variance of y_{t+1} given one system draw and the recent lags
/// (newest first).
pub fn one_step_moments(
    system: &crate::pvar::SystemDraw,
    lags: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = system.n();
    let p = system.p();
    assert_eq!(lags.nrows(), p);
    assert_eq!(lags.ncols(), n);
    let mut m = DVector::zeros(n);
    for l in 0..p {
        m += system.phi.view((0, l * n), (n, n)) * lags.row(l).transpose();
    }
    (m, system.sigma().diagonal())
}

/// Simulates every system draw h_max steps ahead, feeding forecasts back in
/// as lags. `lags` holds the last p observations, newest first.
pub fn simulate_forecast<R: Rng>(
    systems: &[crate::pvar::SystemDraw],
    lags: &DMatrix<f64>,
    origin: usize,
    h_max: usize,
    rng: &mut R,
) -> Result<ForecastDistribution> {
    if systems.is_empty() {
        return Err(Error::EmptyInput("no system draws to forecast from"));
    }
    if h_max == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let n = systems[0].n();
    let p = systems[0].p();
    if lags.nrows() != p || lags.ncols() != n {
        return Err(Error::Dimension(format!(
            "lag window {}x{} does not fit a ({n}, p={p}) system",
            lags.nrows(),
            lags.ncols()
        )));
    }
    let mut paths = Vec::with_capacity(systems.len());
    let mut one_step_means = Vec::with_capacity(systems.len());
    let mut one_step_vars = Vec::with_capacity(systems.len());
    for system in systems {
        let (m1, v1) = one_step_moments(system, lags);
        one_step_means.push(m1);
        one_step_vars.push(v1);
        let impact = system.impact();
        let mut recent: Vec<DVector<f64>> = (0..p).map(|l| lags.row(l).transpose()).collect();
        let mut path = DMatrix::zeros(h_max, n);
        for h in 0..h_max {
            let mut y = &impact * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            for (l, past) in recent.iter().enumerate() {
                y += system.phi.view((0, l * n), (n, n)) * past;
            }
            path.row_mut(h).copy_from(&y.transpose());
            recent.rotate_right(1);
            recent[0] = y;
        }
        paths.push(path);
    }
    Ok(ForecastDistribution {
        origin,
        paths,
        one_step_means,
        one_step_vars,
    })
}

/// Root mean squared error of point forecasts against realized values.
pub fn rmse(forecasts: &[f64], actuals: &[f64]) -> Result<f64> {
    if forecasts.is_empty() {
        return Err(Error::EmptyInput("no forecasts to score"));
    }
    if forecasts.len() != actuals.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts against {} actuals",
            forecasts.len(),
            actuals.len()
        )));
    }
    let ss: f64 = forecasts
        .iter()
        .zip(actuals)
        .map(|(f, a)| (f - a) * (f - a))
        .sum();
    Ok((ss / forecasts.len() as f64).sqrt())
}

pub fn gaussian_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let v = var.max(VAR_FLOOR);
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - mean) * (x - mean) / (2.0 * v)
}

/// Log predictive score of an equally weighted Gaussian mixture over the
/// draw-conditional moments, evaluated at the realized value.
pub fn lps_mixture(means: &[f64], vars: &[f64], actual: f64) -> f64 {
    assert!(!means.is_empty());
    assert_eq!(means.len(), vars.len());
    let terms: Vec<f64> = means
        .iter()
        .zip(vars)
        .map(|(&m, &v)| gaussian_log_density(actual, m, v))
        .collect();
    log_sum_exp(&terms) - (means.len() as f64).ln()
}

/// Log predictive score of a Gaussian fit to the simulated draws.
pub fn lps_fit(draws: &[f64], actual: f64) -> f64 {
    assert!(
        draws.len() >= 2,
        "need at least two draws to fit a variance"
    );
    gaussian_log_density(actual, mean(draws), sample_var(draws))
}

/// A model the recursive exercise can re-estimate on each window.
pub trait ForecastModel: Sync {
    fn name(&self) -> &str;
    /// Estimate on the window and return the predictive distribution from
    /// its last period. All randomness must derive from `seed`.
    fn fit_forecast(
        &self,
        window: &PanelDataset,
        h_max: usize,
        seed: u64,
    ) -> Result<ForecastDistribution>;
}

/// The full pipeline as a forecast model.
pub struct PvarModel {
    pub name: String,
    pub p: usize,
    pub vamp: crate::vamp::VampConfig,
    pub mcmc: crate::gibbs::McmcConfig,
    pub propagate_b: bool,
}

impl PvarModel {
    pub fn new(name: &str, p: usize) -> Self {
        PvarModel {
            name: name.into(),
            p,
            vamp: crate::vamp::VampConfig::default(),
            mcmc: crate::gibbs::McmcConfig::default(),
            propagate_b: true,
        }
    }

    pub fn estimate(&self, window: &PanelDataset, seed: u64) -> Result<crate::pvar::PvarPosterior> {
        let mcmc = crate::gibbs::McmcConfig {
            seed: child_seed(seed, "estimate"),
            ..self.mcmc.clone()
        };
        crate::pvar::estimate_pvar(window, self.p, &self.vamp, &mcmc)
    }

    /// Draw-by-draw system assembly followed by path simulation.
    pub fn forecast_from(
        &self,
        post: &crate::pvar::PvarPosterior,
        window: &PanelDataset,
        h_max: usize,
        seed: u64,
    ) -> Result<ForecastDistribution> {
        let mut rng = crate::rng::stream(seed, "assemble");
        let systems: Vec<crate::pvar::SystemDraw> = (0..post.n_save())
            .map(|d| crate::pvar::assemble_system_draw(post, d, self.propagate_b, &mut rng))
            .collect();
        let lags = window.recent_lags(self.p);
        let mut path_rng = crate::rng::stream(seed, "paths");
        simulate_forecast(&systems, &lags, window.t_len() - 1, h_max, &mut path_rng)
    }
}

impl ForecastModel for PvarModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit_forecast(
        &self,
        window: &PanelDataset,
        h_max: usize,
        seed: u64,
    ) -> Result<ForecastDistribution> {
        let post = self.estimate(window, seed)?;
        self.forecast_from(&post, window, h_max, seed)
    }
}

/// Evaluation design: expanding windows starting at `first_origin` (the time
/// index of the last in-sample observation of the first window), one origin
/// per period after that.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub first_origin: usize,
    pub h_max: usize,
    pub seed: u64,
    /// Score the mean of the draws instead of the median.
    pub use_mean_point: bool,
}

impl EvalPlan {
    pub fn new(first_origin: usize, h_max: usize, seed: u64) -> Self {
        EvalPlan {
            first_origin,
            h_max,
            seed,
            use_mean_point: false,
        }
    }
}

/// One scored (origin, model, variable, horizon) cell. `abs_error` is the
/// absolute point-forecast error; squared and averaged at aggregation time.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub origin: Month,
    pub model: String,
    pub country: String,
    pub variable: String,
    pub horizon: usize,
    pub abs_error: f64,
    pub lps: f64,
}

/// Aggregated scores with benchmark-relative columns: RMSE as a ratio, LPS
/// as a difference.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub rows: Vec<AggRow>,
}

#[derive(Debug, Clone)]
pub struct AggRow {
    pub model: String,
    pub country: String,
    pub variable: String,
    pub horizon: usize,
    pub rmse: f64,
    pub lps: f64,
    pub relative_rmse: f64,
    pub relative_lps: f64,
}

/// Per-origin results of the whole exercise.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<ScoreRow>,
    /// Origins where a model failed to estimate, recorded and skipped.
    pub failures: Vec<(String, Month)>,
}

/// Runs the expanding-window exercise: estimate at every origin, forecast up
/// to h_max, score whatever actuals the sample still contains.
pub fn recursive_exercise(
    ds: &PanelDataset,
    plan: &EvalPlan,
    models: &[&dyn ForecastModel],
) -> Result<Evaluation> {
    if models.is_empty() {
        return Err(Error::EmptyInput("no models to evaluate"));
    }
    if plan.h_max == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let t_len = ds.t_len();
    if plan.first_origin + 1 >= t_len {
        return Err(Error::Config(format!(
            "first origin {} leaves no hold-out in {} periods",
            plan.first_origin, t_len
        )));
    }
    let specs = ds.specs();
    let countries: Vec<String> = specs.iter().map(|s| s.country.clone()).collect();
    let codes: Vec<String> = specs.iter().map(|s| s.code.clone()).collect();

    let origins: Vec<usize> = (plan.first_origin..t_len - 1).collect();
    let per_origin: Vec<(Vec<ScoreRow>, Vec<(String, Month)>)> = origins
        .par_iter()
        .map(|&origin| {
            let window = ds.window(origin + 1);
            let origin_month = ds.time(origin);
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for model in models {
                let seed = child_seed(plan.seed, &format!("origin/{origin}/{}", model.name()));
                let fc = match model.fit_forecast(&window, plan.h_max, seed) {
                    Ok(fc) => fc,
                    Err(e) => {
                        log::warn!("{} failed at origin {origin_month}: {e}", model.name());
                        failures.push((model.name().to_string(), origin_month));
                        continue;
                    }
                };
                let h_avail = plan.h_max.min(t_len - 1 - origin);
                for h in 1..=h_avail {
                    for (col, (country, code)) in countries.iter().zip(&codes).enumerate() {
                        let actual = ds.value(origin + h, col);
                        let point = fc.point(h, col, plan.use_mean_point);
                        let lps = if h == 1 {
                            let means: Vec<f64> =
                                fc.one_step_means.iter().map(|m| m[col]).collect();
                            let vars: Vec<f64> = fc.one_step_vars.iter().map(|v| v[col]).collect();
                            lps_mixture(&means, &vars, actual)
                        } else {
                            lps_fit(&fc.horizon_draws(h, col), actual)
                        };
                        rows.push(ScoreRow {
                            origin: origin_month,
                            model: model.name().to_string(),
                            country: country.clone(),
                            variable: code.clone(),
                            horizon: h,
                            abs_error: (point - actual).abs(),
                            lps,
                        });
                    }
                }
            }
            (rows, failures)
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_origin {
        rows.extend(r);
        failures.extend(f);
    }
    Ok(Evaluation { rows, failures })
}

type GroupKey = (String, String, String, usize);

fn group_rows(rows: &[ScoreRow]) -> BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> {
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (
            r.model.clone(),
            r.country.clone(),
            r.variable.clone(),
            r.horizon,
        );
        let entry = groups.entry(key).or_default();
        entry.0.push(r.abs_error * r.abs_error);
        entry.1.push(r.lps);
    }
    groups
}

impl Evaluation {
    /// Aggregates per (model, country, variable, horizon): RMSE over
    /// origins, mean LPS, and benchmark-relative columns.
    pub fn score_table(&self, benchmark: &str) -> Result<ScoreTable> {
        let groups = group_rows(&self.rows);
        // benchmark lookup per (country, variable, horizon)
        let mut bench: BTreeMap<(String, String, usize), (f64, f64)> = BTreeMap::new();
        for ((model, country, variable, horizon), (se, lps)) in &groups {
            if model == benchmark {
                bench.insert(
                    (country.clone(), variable.clone(), *horizon),
                    (mean(se).sqrt(), mean(lps)),
                );
            }
        }
        if bench.is_empty() {
            return Err(Error::Config(format!(
                "benchmark model {benchmark} produced no scores"
            )));
        }
        let mut rows = Vec::new();
        for ((model, country, variable, horizon), (se, lps)) in &groups {
            let rmse = mean(se).sqrt();
            let lps = mean(lps);
            let (b_rmse, b_lps) = bench
                .get(&(country.clone(), variable.clone(), *horizon))
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            // the benchmark against itself is neutral by definition, even
            // when its own RMSE is zero and the ratio would be 0/0
            let (relative_rmse, relative_lps) = if model == benchmark {
                (1.0, 0.0)
            } else {
                (rmse / b_rmse, lps - b_lps)
            };
            rows.push(AggRow {
                model: model.clone(),
                country: country.clone(),
                variable: variable.clone(),
                horizon: *horizon,
                rmse,
                lps,
                relative_rmse,
                relative_lps,
            });
        }
        Ok(ScoreTable { rows })
    }

    /// Averages country-level aggregates per (model, variable, horizon) and
    /// relates them to the benchmark.
    pub fn summary_table(&self, benchmark: &str) -> Result<ScoreTable> {
        let per_country = self.score_table(benchmark)?;
        let mut groups: BTreeMap<(String, String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &per_country.rows {
            let entry = groups
                .entry((r.model.clone(), r.variable.clone(), r.horizon))
                .or_default();
            entry.0.push(r.rmse);
            entry.1.push(r.lps);
        }
        let mut bench: BTreeMap<(String, usize), (f64, f64)> = BTreeMap::new();
        for ((model, variable, horizon), (rmses, lpss)) in &groups {
            if model == benchmark {
                bench.insert((variable.clone(), *horizon), (mean(rmses), mean(lpss)));
            }
        }
        let mut rows = Vec::new();
        for ((model, variable, horizon), (rmses, lpss)) in &groups {
            let rmse = mean(rmses);
            let lps = mean(lpss);
            let (b_rmse, b_lps) = bench
                .get(&(variable.clone(), *horizon))
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            let (relative_rmse, relative_lps) = if model == benchmark {
                (1.0, 0.0)
            } else {
                (rmse / b_rmse, lps - b_lps)
            };
            rows.push(AggRow {
                model: model.clone(),
                country: "ALL".into(),
                variable: variable.clone(),
                horizon: *horizon,
                rmse,
                lps,
                relative_rmse,
                relative_lps,
            });
        }
        Ok(ScoreTable { rows })
    }

    /// Cumulative per-origin LPS differences against the benchmark, per
    /// (model, country, variable, horizon), in origin order. Only origins
    /// scored by both models enter the sum.
    pub fn cumulative_lps(
        &self,
        benchmark: &str,
    ) -> BTreeMap<(String, String, String, usize), Vec<(Month, f64)>> {
        let mut bench: BTreeMap<(String, String, usize, Month), f64> = BTreeMap::new();
        for r in &self.rows {
            if r.model == benchmark {
                bench.insert(
                    (r.country.clone(), r.variable.clone(), r.horizon, r.origin),
                    r.lps,
                );
            }
        }
        let mut diffs: BTreeMap<(String, String, String, usize), Vec<(Month, f64)>> =
            BTreeMap::new();
        for r in &self.rows {
            if let Some(&b) =
                bench.get(&(r.country.clone(), r.variable.clone(), r.horizon, r.origin))
            {
                diffs
                    .entry((
                        r.model.clone(),
                        r.country.clone(),
                        r.variable.clone(),
                        r.horizon,
                    ))
                    .or_default()
                    .push((r.origin, r.lps - b));
            }
        }
        for series in diffs.values_mut() {
            series.sort_by_key(|(m, _)| m.since(Month::new(1900, 1)));
            let mut acc = 0.0;
            for (_, v) in series.iter_mut() {
                acc += *v;
                *v = acc;
            }
        }
        diffs
    }
}

/// Long-format per-origin scores. The `rmse` column holds each origin's
/// absolute error; squaring and averaging reproduces the aggregate RMSE.
pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "origin", "country", "variable", "horizon", "model", "rmse", "lps",
    ])?;
    for r in rows {
        w.write_record([
            r.origin.to_string(),
            r.country.clone(),
            r.variable.clone(),
            r.horizon.to_string(),
            r.model.clone(),
            r.abs_error.to_string(),
            r.lps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_csv(path: &Path, table: &ScoreTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "country",
        "variable",
        "horizon",
        "rmse",
        "lps",
        "relative_rmse",
        "relative_lps",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.model.clone(),
            r.country.clone(),
            r.variable.clone(),
            r.horizon.to_string(),
            r.rmse.to_string(),
            r.lps.to_string(),
            r.relative_rmse.to_string(),
            r.relative_lps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One file per horizon: rows keyed by (model, country, variable), one
/// column per origin, cells the cumulative LPS difference to the benchmark.
pub fn write_cumlps_csv(dir: &Path, eval: &Evaluation, benchmark: &str) -> Result<()> {
    let cum = eval.cumulative_lps(benchmark);
    let horizons: std::collections::BTreeSet<usize> = cum.keys().map(|(_, _, _, h)| *h).collect();
    for h in horizons {
        let mut origins: std::collections::BTreeSet<i32> = std::collections::BTreeSet::new();
        for ((_, _, _, hh), series) in &cum {
            if *hh == h {
                origins.extend(series.iter().map(|(m, _)| m.since(Month::new(1900, 1))));
            }
        }
        let origin_months: Vec<Month> = origins
            .iter()
            .map(|&o| Month::new(1900, 1).plus(o))
            .collect();
        let mut w = csv::Writer::from_path(dir.join(format!("cumlps_{h}.csv")))?;
        let mut header = vec!["model".to_string(), "country".into(), "variable".into()];
        header.extend(origin_months.iter().map(|m| m.to_string()));
        w.write_record(&header)?;
        for ((model, country, variable, hh), series) in &cum {
            if *hh != h {
                continue;
            }
            let by_month: BTreeMap<i32, f64> = series
                .iter()
                .map(|(m, v)| (m.since(Month::new(1900, 1)), *v))
                .collect();
            let mut rec = vec![model.clone(), country.clone(), variable.clone()];
            for o in &origins {
                rec.push(by_month.get(o).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}
