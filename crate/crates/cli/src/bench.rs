//! Univariate AR(1) benchmark: one per-variable regression with intercept,
//! fit by least squares on each window, forecast by simulation. Serves as
//! the named benchmark in score tables.

use nalgebra::{DMatrix, DVector};
use panelvar::forecast::{ForecastDistribution, ForecastModel};
use panelvar::panel::PanelDataset;
use panelvar::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct ArBenchmark {
    pub name: String,
    pub n_draws: usize,
}

impl ArBenchmark {
    pub fn new(name: &str, n_draws: usize) -> Self {
        ArBenchmark {
            name: name.into(),
            n_draws,
        }
    }
}

struct ArFit {
    intercept: f64,
    slope: f64,
    var: f64,
}

/// Least squares for y_t = c + phi y_{t-1}; a flat series gets its mean and
/// slope zero.
fn fit_ar1(y: &[f64]) -> ArFit {
    let t = y.len() - 1;
    let x: Vec<f64> = y[..t].to_vec();
    let z: Vec<f64> = y[1..].to_vec();
    let mx = x.iter().sum::<f64>() / t as f64;
    let mz = z.iter().sum::<f64>() / t as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxz: f64 = x.iter().zip(&z).map(|(a, b)| (a - mx) * (b - mz)).sum();
    let slope = if sxx > 1e-12 { sxz / sxx } else { 0.0 };
    let intercept = mz - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(&z)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let dof = (t as f64 - 2.0).max(1.0);
    ArFit {
        intercept,
        slope,
        var: (rss / dof).max(1e-12),
    }
}

impl ForecastModel for ArBenchmark {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit_forecast(
        &self,
        window: &PanelDataset,
        h_max: usize,
        seed: u64,
    ) -> Result<ForecastDistribution> {
        let t = window.t_len();
        let n = window.n_vars();
        if t < 4 {
            return Err(Error::Config(format!(
                "AR benchmark needs at least 4 observations, window has {t}"
            )));
        }
        let fits: Vec<ArFit> = (0..n)
            .map(|c| {
                let col: Vec<f64> = window.series().column(c).iter().cloned().collect();
                fit_ar1(&col)
            })
            .collect();
        let last: Vec<f64> = (0..n).map(|c| window.value(t - 1, c)).collect();
        let step_mean = DVector::from_fn(n, |c, _| fits[c].intercept + fits[c].slope * last[c]);
        let step_var = DVector::from_fn(n, |c, _| fits[c].var);

        let mut rng = panelvar::rng::stream(seed, "ar1");
        let mut paths = Vec::with_capacity(self.n_draws);
        for _ in 0..self.n_draws {
            let mut path = DMatrix::zeros(h_max, n);
            for c in 0..n {
                let f = &fits[c];
                let sd = f.var.sqrt();
                let mut prev = last[c];
                for h in 0..h_max {
                    prev = f.intercept + f.slope * prev + sd * rng.sample::<f64, _>(StandardNormal);
                    path[(h, c)] = prev;
                }
            }
            paths.push(path);
        }
        Ok(ForecastDistribution {
            origin: t - 1,
            one_step_means: vec![step_mean; self.n_draws],
            one_step_vars: vec![step_var; self.n_draws],
            paths,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use panelvar::sim::{simulate_pvar, SimSpec};

    #[test]
    fn ar1_fit_recovers_a_clean_recursion() {
        // y_t = 1 + 0.5 y_{t-1}, no noise: exact fit with zero variance floor
        let mut y = vec![0.0];
        for _ in 0..30 {
            y.push(1.0 + 0.5 * y.last().unwrap());
        }
        let f = fit_ar1(&y);
        assert!(
            (f.intercept - 1.0).abs() < 1e-8,
            "intercept {}",
            f.intercept
        );
        assert!((f.slope - 0.5).abs() < 1e-8, "slope {}", f.slope);
        assert!(f.var <= 1e-10);
    }

    #[test]
    fn flat_series_gets_slope_zero() {
        let f = fit_ar1(&vec![3.0; 20]);
        assert_eq!(f.slope, 0.0);
        assert!((f.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn forecast_distribution_shapes_and_determinism() {
        let mut spec = SimSpec::new(2, 1, 1, 50);
        spec.seed = 3;
        let (ds, _) = simulate_pvar(&spec).unwrap();
        let model = ArBenchmark::new("ar1", 25);
        let a = model.fit_forecast(&ds, 6, 99).unwrap();
        let b = model.fit_forecast(&ds, 6, 99).unwrap();
        assert_eq!(a.paths.len(), 25);
        assert_eq!(a.paths[0].nrows(), 6);
        assert_eq!(a.paths[0].ncols(), 2);
        assert_eq!(a.paths[7].as_slice(), b.paths[7].as_slice());
        assert_eq!(a.one_step_means[0], a.one_step_means[24]);
    }
}
