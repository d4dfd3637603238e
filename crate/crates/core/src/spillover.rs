//! Forecast error variance decompositions and cross-country connectedness
//! indices with posterior bands over expanding windows.
//!
//! Shocks are orthogonalized by the model's own triangular decomposition, so
//! the impact matrix is U sqrt(H) and the decomposition is exact per draw.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{Month, PanelDataset};
use crate::pvar::SystemDraw;
use crate::stats::quantile;

/// Row-stochastic decomposition: entry (a, b) is the share of variable a's
/// forecast error variance over `horizon` steps due to orthogonal shock b.
#[derive(Debug, Clone)]
pub struct FevdMatrix {
    pub shares: DMatrix<f64>,
    pub horizon: usize,
}

impl FevdMatrix {
    pub fn n(&self) -> usize {
        self.shares.nrows()
    }
}

/// Moving-average coefficients Psi_0..Psi_{h_max-1} of the lag polynomial.
fn ma_coefficients(sd: &SystemDraw, h_max: usize) -> Vec<DMatrix<f64>> {
    let n = sd.n();
    let p = sd.p();
    let mut psi: Vec<DMatrix<f64>> = Vec::with_capacity(h_max);
    psi.push(DMatrix::identity(n, n));
    for h in 1..h_max {
        let mut next = DMatrix::zeros(n, n);
        for l in 1..=p.min(h) {
            next += sd.phi.view((0, (l - 1) * n), (n, n)) * &psi[h - l];
        }
        psi.push(next);
    }
    psi
}

/// Variance decomposition accumulated over `h_f` steps. An explosive draw
/// whose moving-average terms overflow is rejected so the caller can count
/// and exclude it.
pub fn fevd(sd: &SystemDraw, h_f: usize) -> Result<FevdMatrix> {
    if h_f == 0 {
        return Err(Error::Config(
            "decomposition horizon must be positive".into(),
        ));
    }
    let n = sd.n();
    let impact = sd.impact();
    let mut num: DMatrix<f64> = DMatrix::zeros(n, n);
    for psi in ma_coefficients(sd, h_f) {
        let theta = psi * &impact;
        for a in 0..n {
            for b in 0..n {
                num[(a, b)] += theta[(a, b)] * theta[(a, b)];
            }
        }
    }
    if num.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteFevd);
    }
    let mut shares = num;
    for a in 0..n {
        let row_sum: f64 = shares.row(a).sum();
        if !(row_sum.is_finite() && row_sum > 0.0) {
            return Err(Error::NonFiniteFevd);
        }
        for b in 0..n {
            shares[(a, b)] /= row_sum;
        }
    }
    Ok(FevdMatrix {
        shares,
        horizon: h_f,
    })
}

/// Average over all variables of the share received from other units'
/// shocks. Within-unit cross-variable shares do not count.
pub fn dy_total_cross_country(f: &FevdMatrix, unit_of: &[usize]) -> f64 {
    let n = f.n();
    assert_eq!(unit_of.len(), n);
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if unit_of[b] != unit_of[a] {
                total += f.shares[(a, b)];
            }
        }
    }
    total / n as f64
}

/// Per unit: average over its variables of the share received from abroad.
pub fn dy_by_country(f: &FevdMatrix, unit_of: &[usize]) -> Vec<f64> {
    let n = f.n();
    assert_eq!(unit_of.len(), n);
    let n_units = unit_of.iter().max().map(|&u| u + 1).unwrap_or(0);
    let mut sums = vec![0.0; n_units];
    let mut counts = vec![0usize; n_units];
    for a in 0..n {
        let mut foreign = 0.0;
        for b in 0..n {
            if unit_of[b] != unit_of[a] {
                foreign += f.shares[(a, b)];
            }
        }
        sums[unit_of[a]] += foreign;
        counts[unit_of[a]] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Per variable type: cross-country share mass between same-type variables,
/// as a fraction of all same-type mass for rows of that type. The restricted
/// rows are re-normalized by that same-type mass, so each value is a share
/// of the type's own forecast-error variance carried by the type's shocks.
pub fn dy_by_variable(
    f: &FevdMatrix,
    unit_of: &[usize],
    type_of: &[String],
) -> BTreeMap<String, f64> {
    let n = f.n();
    assert_eq!(unit_of.len(), n);
    assert_eq!(type_of.len(), n);
    let mut num: BTreeMap<&str, f64> = BTreeMap::new();
    let mut den: BTreeMap<&str, f64> = BTreeMap::new();
    for a in 0..n {
        for b in 0..n {
            if type_of[b] != type_of[a] {
                continue;
            }
            let e = den.entry(&type_of[a]).or_default();
            *e += f.shares[(a, b)];
            if unit_of[b] != unit_of[a] {
                *num.entry(&type_of[a]).or_default() += f.shares[(a, b)];
            }
        }
    }
    den.into_iter()
        .map(|(ty, d)| {
            let cross = num.get(ty).copied().unwrap_or(0.0);
            (ty.to_string(), if d > 0.0 { cross / d } else { 0.0 })
        })
        .collect()
}

/// Posterior summary of one index at one window end.
#[derive(Debug, Clone)]
pub struct WindowSummary {
    pub window_end: Month,
    pub median: f64,
    pub q16: f64,
    pub q84: f64,
    pub q05: f64,
    pub q95: f64,
    /// Draws dropped because their decomposition overflowed.
    pub excluded: usize,
}

fn summarize(window_end: Month, draws: &[f64], excluded: usize) -> WindowSummary {
    WindowSummary {
        window_end,
        median: quantile(draws, 0.5),
        q16: quantile(draws, 0.16),
        q84: quantile(draws, 0.84),
        q05: quantile(draws, 0.05),
        q95: quantile(draws, 0.95),
        excluded,
    }
}

/// All three index variants across the window schedule.
#[derive(Debug, Clone)]
pub struct SpilloverResults {
    pub total: Vec<WindowSummary>,
    pub by_country: BTreeMap<String, Vec<WindowSummary>>,
    pub by_variable: BTreeMap<String, Vec<WindowSummary>>,
    /// Window ends where estimation failed outright.
    pub failed_windows: Vec<Month>,
}

/// Re-estimates on every scheduled window and summarizes the index draws.
/// `window_ends` are time indices of each window's last observation; the
/// runner maps a window (and a seed) to posterior system draws.
pub fn spillover_recursion<F>(
    ds: &PanelDataset,
    runner: &F,
    h_f: usize,
    window_ends: &[usize],
    seed: u64,
) -> Result<SpilloverResults>
where
    F: Fn(&PanelDataset, u64) -> Result<Vec<SystemDraw>> + Sync,
{
    if window_ends.is_empty() {
        return Err(Error::EmptyInput("no spillover windows scheduled"));
    }
    let unit_of = ds.country_of_cols();
    let type_of: Vec<String> = ds.specs().iter().map(|s| s.code.clone()).collect();
    let country_codes: Vec<String> = ds.countries().iter().map(|c| c.code.clone()).collect();

    let mut total = Vec::new();
    let mut by_country: BTreeMap<String, Vec<WindowSummary>> = BTreeMap::new();
    let mut by_variable: BTreeMap<String, Vec<WindowSummary>> = BTreeMap::new();
    let mut failed = Vec::new();

    for &end in window_ends {
        let window = ds.window(end + 1);
        let window_end = ds.time(end);
        let systems = match runner(
            &window,
            crate::rng::child_seed(seed, &format!("window/{end}")),
        ) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("spillover window ending {window_end} failed: {e}");
                failed.push(window_end);
                continue;
            }
        };
        let mut excluded = 0usize;
        let mut totals = Vec::with_capacity(systems.len());
        let mut per_country: Vec<Vec<f64>> = vec![Vec::new(); country_codes.len()];
        let mut per_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for sd in &systems {
            let f = match fevd(sd, h_f) {
                Ok(f) => f,
                Err(Error::NonFiniteFevd) => {
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            totals.push(dy_total_cross_country(&f, &unit_of));
            for (c, v) in dy_by_country(&f, &unit_of).into_iter().enumerate() {
                per_country[c].push(v);
            }
            for (ty, v) in dy_by_variable(&f, &unit_of, &type_of) {
                per_type.entry(ty).or_default().push(v);
            }
        }
        if totals.is_empty() {
            log::warn!("all draws excluded at window ending {window_end}");
            failed.push(window_end);
            continue;
        }
        total.push(summarize(window_end, &totals, excluded));
        for (c, code) in country_codes.iter().enumerate() {
            by_country.entry(code.clone()).or_default().push(summarize(
                window_end,
                &per_country[c],
                excluded,
            ));
        }
        for (ty, vals) in per_type {
            by_variable
                .entry(ty)
                .or_default()
                .push(summarize(window_end, &vals, excluded));
        }
    }
    Ok(SpilloverResults {
        total,
        by_country,
        by_variable,
        failed_windows: failed,
    })
}

/// Convenience runner for `spillover_recursion` built from the estimation
/// pipeline: estimate, then assemble every posterior draw.
pub fn pvar_spillover_runner(
    p: usize,
    vamp: crate::vamp::VampConfig,
    mcmc: crate::gibbs::McmcConfig,
    propagate_b: bool,
) -> impl Fn(&PanelDataset, u64) -> Result<Vec<SystemDraw>> + Sync {
    move |window: &PanelDataset, seed: u64| {
        let mcmc = crate::gibbs::McmcConfig {
            seed: crate::rng::child_seed(seed, "estimate"),
            ..mcmc.clone()
        };
        let post = crate::pvar::estimate_pvar(window, p, &vamp, &mcmc)?;
        let mut rng = crate::rng::stream(seed, "assemble");
        Ok((0..post.n_save())
            .map(|d| crate::pvar::assemble_system_draw(&post, d, propagate_b, &mut rng))
            .collect())
    }
}

fn write_summary_record<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    prefix: &[String],
    s: &WindowSummary,
) -> Result<()> {
    let mut rec = prefix.to_vec();
    rec.extend([
        s.window_end.to_string(),
        s.median.to_string(),
        s.q16.to_string(),
        s.q84.to_string(),
        s.q05.to_string(),
        s.q95.to_string(),
        s.excluded.to_string(),
    ]);
    w.write_record(&rec)?;
    Ok(())
}

pub fn write_spillover_csv(dir: &Path, results: &SpilloverResults) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("dy_total.csv"))?;
    w.write_record([
        "window_end",
        "median",
        "q16",
        "q84",
        "q05",
        "q95",
        "excluded",
    ])?;
    for s in &results.total {
        write_summary_record(&mut w, &[], s)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("dy_by_country.csv"))?;
    w.write_record([
        "country",
        "window_end",
        "median",
        "q16",
        "q84",
        "q05",
        "q95",
        "excluded",
    ])?;
    for (country, series) in &results.by_country {
        for s in series {
            write_summary_record(&mut w, std::slice::from_ref(country), s)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("dy_by_variable.csv"))?;
    w.write_record([
        "variable",
        "window_end",
        "median",
        "q16",
        "q84",
        "q05",
        "q95",
        "excluded",
    ])?;
    for (variable, series) in &results.by_variable {
        for s in series {
            write_summary_record(&mut w, std::slice::from_ref(variable), s)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pvar::reduced_from_structural;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn shares_matrix(rows: &[&[f64]]) -> FevdMatrix {
        let n = rows.len();
        let shares = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
        FevdMatrix {
            shares,
            horizon: 12,
        }
    }

    #[test]
    fn univariate_share_is_one() {
        let sd = SystemDraw {
            phi: DMatrix::from_element(1, 1, 0.7),
            u: DMatrix::identity(1, 1),
            h: DVector::from_element(1, 2.0),
        };
        let f = fevd(&sd, 12).unwrap();
        assert_relative_eq!(f.shares[(0, 0)], 1.0);
    }

    #[test]
    fn decoupled_system_decomposes_to_identity() {
        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.3, 0.8]));
        let sd = SystemDraw {
            phi,
            u: DMatrix::identity(3, 3),
            h: DVector::from_vec(vec![1.0, 2.0, 0.5]),
        };
        let f = fevd(&sd, 12).unwrap();
        assert!((f.shares - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn rows_are_stochastic_for_random_stable_draws() {
        let mut rng = crate::rng::stream(1, "fevd-rows");
        for _ in 0..20 {
            let n = 4;
            let phi = DMatrix::from_fn(n, 2 * n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.2);
            let mut l = DMatrix::zeros(n, n);
            for r in 1..n {
                for c in 0..r {
                    l[(r, c)] = rng.sample::<f64, _>(StandardNormal) * 0.3;
                }
            }
            let h = DVector::from_fn(n, |_, _| 0.2 + rng.gen::<f64>());
            let sd = {
                let u = crate::pvar::unit_lower_inverse(&l);
                SystemDraw {
                    phi: &u * phi,
                    u,
                    h,
                }
            };
            let f = fevd(&sd, 12).unwrap();
            for a in 0..n {
                assert_relative_eq!(f.shares.row(a).sum(), 1.0, epsilon = 1e-10);
                for b in 0..n {
                    assert!((0.0..=1.0).contains(&f.shares[(a, b)]));
                }
            }
        }
    }

    #[test]
    fn bivariate_decomposition_matches_simulation_oracle() {
        // one shock active at a time; sample variance of the accumulated
        // response estimates each numerator column
        let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, 0.5]);
        let sd = SystemDraw {
            phi: phi.clone(),
            u: DMatrix::identity(2, 2),
            h: DVector::from_element(2, 1.0),
        };
        let h_f = 12;
        let f = fevd(&sd, h_f).unwrap();

        let n_paths = 200_000;
        let mut rng = crate::rng::stream(2, "fevd-oracle");
        let mut var = [[0.0_f64; 2]; 2]; // [a][shock]
        for b in 0..2 {
            let mut sums = [0.0_f64; 2];
            let mut sq = [0.0_f64; 2];
            for _ in 0..n_paths {
                let mut y = DVector::zeros(2);
                for _ in 0..h_f {
                    let mut shock = DVector::zeros(2);
                    shock[b] = rng.sample::<f64, _>(StandardNormal);
                    y = &phi * y + shock;
                }
                for a in 0..2 {
                    sums[a] += y[a];
                    sq[a] += y[a] * y[a];
                }
            }
            for a in 0..2 {
                let m = sums[a] / n_paths as f64;
                var[a][b] = sq[a] / n_paths as f64 - m * m;
            }
        }
        for a in 0..2 {
            let row_sum = var[a][0] + var[a][1];
            for b in 0..2 {
                let oracle = var[a][b] / row_sum;
                assert!(
                    (f.shares[(a, b)] - oracle).abs() < 0.01,
                    "share ({a},{b}): {} vs oracle {oracle}",
                    f.shares[(a, b)]
                );
            }
        }
    }

    #[test]
    fn overflowing_draw_is_rejected() {
        let sd = SystemDraw {
            phi: DMatrix::from_element(1, 1, 1e40),
            u: DMatrix::identity(1, 1),
            h: DVector::from_element(1, 1.0),
        };
        assert!(matches!(fevd(&sd, 12), Err(Error::NonFiniteFevd)));
    }

    #[test]
    fn block_diagonal_system_has_zero_spillover() {
        let f = shares_matrix(&[
            &[0.7, 0.3, 0.0, 0.0],
            &[0.4, 0.6, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.2, 0.8],
        ]);
        let unit_of = vec![0, 0, 1, 1];
        assert_relative_eq!(dy_total_cross_country(&f, &unit_of), 0.0);
        for v in dy_by_country(&f, &unit_of) {
            assert_relative_eq!(v, 0.0);
        }
        let types = vec!["x".to_string(), "y".into(), "x".into(), "y".into()];
        for (_, v) in dy_by_variable(&f, &unit_of, &types) {
            assert_relative_eq!(v, 0.0);
        }
    }

    #[test]
    fn symmetric_two_country_example() {
        let f = shares_matrix(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let unit_of = vec![0, 1];
        assert_relative_eq!(dy_total_cross_country(&f, &unit_of), 0.5);
        let by_c = dy_by_country(&f, &unit_of);
        assert_relative_eq!(by_c[0], 0.5);
        assert_relative_eq!(by_c[1], 0.5);
        let types = vec!["cpi".to_string(), "cpi".into()];
        let by_v = dy_by_variable(&f, &unit_of, &types);
        assert_relative_eq!(by_v["cpi"], 0.5);
    }

    #[test]
    fn single_country_panel_spills_nothing() {
        let f = shares_matrix(&[&[0.6, 0.4], &[0.1, 0.9]]);
        let unit_of = vec![0, 0];
        assert_relative_eq!(dy_total_cross_country(&f, &unit_of), 0.0);
        assert_relative_eq!(dy_by_country(&f, &unit_of)[0], 0.0);
    }

    #[test]
    fn lonely_variable_type_receives_zero() {
        let f = shares_matrix(&[&[0.5, 0.25, 0.25], &[0.2, 0.5, 0.3], &[0.3, 0.3, 0.4]]);
        let unit_of = vec![0, 0, 1];
        let types = vec!["gdp".to_string(), "cpi".into(), "cpi".into()];
        let by_v = dy_by_variable(&f, &unit_of, &types);
        assert_relative_eq!(by_v["gdp"], 0.0);
        // cpi rows: cross-country same-type mass over same-type mass
        let expect = (0.3 + 0.3) / (0.5 + 0.3 + 0.3 + 0.4);
        assert_relative_eq!(by_v["cpi"], expect, max_relative = 1e-12);
    }

    #[test]
    fn full_foreign_dependence_scores_one() {
        let f = shares_matrix(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let unit_of = vec![0, 1];
        let by_c = dy_by_country(&f, &unit_of);
        assert_relative_eq!(by_c[0], 1.0);
        assert_relative_eq!(by_c[1], 0.0);
    }

    fn recursion_dataset(t_len: usize) -> PanelDataset {
        use crate::panel::{CountryBlock, Transform, VariableSpec};
        let mk = |country: &str, code: &str| VariableSpec {
            code: code.into(),
            name: code.into(),
            country: country.into(),
            transform: Transform::Level,
        };
        let countries = vec![
            CountryBlock {
                code: "AA".into(),
                vars: vec![mk("AA", "x")],
            },
            CountryBlock {
                code: "BB".into(),
                vars: vec![mk("BB", "x")],
            },
        ];
        let mut rng = crate::rng::stream(33, "spill-data");
        let series = DMatrix::from_fn(t_len, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let months = (0..t_len)
            .map(|t| Month::new(2005, 1).plus(t as i32))
            .collect();
        PanelDataset::new(countries, series, months).unwrap()
    }

    fn fixed_draws() -> Vec<SystemDraw> {
        let mut rng = crate::rng::stream(5, "spill-draws");
        (0..40)
            .map(|_| {
                let mut l = DMatrix::zeros(2, 2);
                l[(1, 0)] = 0.4 + 0.1 * rng.sample::<f64, _>(StandardNormal);
                let mut phi_s = DMatrix::zeros(2, 2);
                phi_s[(0, 0)] = 0.5;
                phi_s[(1, 1)] = 0.5;
                phi_s[(0, 1)] = 0.1;
                reduced_from_structural(&phi_s, &l, DVector::from_element(2, 1.0))
            })
            .collect()
    }

    #[test]
    fn recursion_summarizes_and_flags() {
        let ds = recursion_dataset(20);
        let draws = fixed_draws();
        let runner = |window: &PanelDataset, _seed: u64| {
            if window.t_len() == 16 {
                return Err(Error::EmptyInput("window refused"));
            }
            let mut out = draws.clone();
            if window.t_len() == 18 {
                // inject one explosive draw to exercise the counter
                out.push(SystemDraw {
                    phi: DMatrix::from_element(2, 2, 1e40),
                    u: DMatrix::identity(2, 2),
                    h: DVector::from_element(2, 1.0),
                });
            }
            Ok(out)
        };
        let res = spillover_recursion(&ds, &runner, 12, &[14, 15, 16, 17, 19], 1).unwrap();
        assert_eq!(res.failed_windows.len(), 1);
        assert_eq!(res.total.len(), 4);
        for s in &res.total {
            assert!(s.q05 <= s.q16 && s.q16 <= s.median);
            assert!(s.median <= s.q84 && s.q84 <= s.q95);
            assert!(s.median >= 0.0 && s.median <= 1.0);
        }
        let excluded: Vec<usize> = res.total.iter().map(|s| s.excluded).collect();
        assert_eq!(excluded.iter().sum::<usize>(), 1);
        // identical draws at every surviving window: medians agree
        let meds: Vec<f64> = res.total.iter().map(|s| s.median).collect();
        for w in meds.windows(2) {
            assert_relative_eq!(w[0], w[1], epsilon = 1e-12);
        }
        assert_eq!(res.by_country.len(), 2);
        assert_eq!(res.by_variable.len(), 1);
    }

    #[test]
    fn index_summaries_ignore_draw_order() {
        let ds = recursion_dataset(12);
        let forward = fixed_draws();
        let mut reversed = forward.clone();
        reversed.reverse();
        let run = |draws: Vec<SystemDraw>| {
            let runner = move |_: &PanelDataset, _: u64| Ok(draws.clone());
            spillover_recursion(&ds, &runner, 12, &[10], 1).unwrap()
        };
        let a = run(forward);
        let b = run(reversed);
        assert_relative_eq!(a.total[0].median, b.total[0].median, epsilon = 1e-14);
        assert_relative_eq!(a.total[0].q05, b.total[0].q05, epsilon = 1e-14);
        assert_relative_eq!(a.total[0].q95, b.total[0].q95, epsilon = 1e-14);
    }
}
