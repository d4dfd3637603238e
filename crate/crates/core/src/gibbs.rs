//! Exact Gibbs sampler for the own-country coefficient block.
//!
//! After the rotation and the variational fit of the stacked block, the
//! own-block posterior is Gaussian up to the Horseshoe scales: the response
//! is y1 adjusted for the stacked-block mean, and the stacked-block
//! uncertainty enters through an inflated plug-in covariance. The sampler
//! alternates an exact multivariate normal draw of the coefficients with the
//! inverse-Gamma sweep over the scales.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::horseshoe::{horseshoe_gibbs_step, OwnBlockScales};
use crate::rotation::RotationSplit;
use crate::stats::ess;

/// Gaussian likelihood for the own block with the stacked block integrated
/// out at its approximate posterior: y ~ N(X a, sigma) with
/// sigma = var_scalar * Z1 Z1' + sigma2 I. Cross-products against the fixed
/// sigma are cached once; per-draw work is then a k x k solve.
#[derive(Debug, Clone)]
pub struct PluginLikelihood {
    pub y_tilde: DVector<f64>,
    pub x_tilde: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Lower Cholesky factor of sigma, for simulating responses.
    sigma_l: DMatrix<f64>,
    /// X' sigma^{-1}, k x k.
    xtsi: DMatrix<f64>,
    /// X' sigma^{-1} X.
    xtsx: DMatrix<f64>,
    /// X' sigma^{-1} y.
    xtsy: DVector<f64>,
}

impl PluginLikelihood {
    pub fn new(x_tilde: DMatrix<f64>, y_tilde: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let k = x_tilde.nrows();
        if x_tilde.ncols() != k || y_tilde.len() != k || sigma.nrows() != k || sigma.ncols() != k {
            return Err(Error::Dimension(format!(
                "plug-in likelihood wants square {k}-dim pieces, got X {}x{}, y {}, sigma {}x{}",
                x_tilde.nrows(),
                x_tilde.ncols(),
                y_tilde.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let chol = jittered_cholesky(&sigma, "plug-in covariance")?;
        let sigma_l = chol.l();
        // X' sigma^{-1} = (sigma^{-1} X)'
        let xtsi = chol.solve(&x_tilde).transpose();
        let xtsx = &xtsi * &x_tilde;
        let xtsy = &xtsi * &y_tilde;
        Ok(PluginLikelihood {
            y_tilde,
            x_tilde,
            sigma,
            sigma_l,
            xtsi,
            xtsx,
            xtsy,
        })
    }

    /// Assembles the likelihood from a rotated design and the stacked-block
    /// approximation: adjusted response y1 - Z1 b_mean, plug-in covariance
    /// b_var * Z1 Z1' + sigma2 I.
    pub fn from_rotation(
        split: &RotationSplit,
        b_mean: &DVector<f64>,
        b_var: f64,
        sigma2: f64,
    ) -> Result<Self> {
        let k = split.k();
        if b_mean.len() != split.big_k() {
            return Err(Error::Dimension(format!(
                "stacked mean has {} entries for {} columns",
                b_mean.len(),
                split.big_k()
            )));
        }
        if b_var < 0.0 || sigma2 <= 0.0 {
            return Err(Error::Config("plug-in variances must be positive".into()));
        }
        let y_tilde = &split.y1 - &split.z1 * b_mean;
        let mut sigma = &split.z1 * split.z1.transpose() * b_var;
        for i in 0..k {
            sigma[(i, i)] += sigma2;
        }
        Self::new(split.x1.clone(), y_tilde, sigma)
    }

    pub fn dim(&self) -> usize {
        self.y_tilde.len()
    }

    /// Swaps in a new response, reusing the cached sigma factorization.
    pub fn set_response(&mut self, y_tilde: DVector<f64>) {
        assert_eq!(y_tilde.len(), self.dim());
        self.xtsy = &self.xtsi * &y_tilde;
        self.y_tilde = y_tilde;
    }

    /// Simulates y ~ N(X a, sigma).
    pub fn draw_response<R: Rng>(&self, a: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let k = self.dim();
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.x_tilde * a + &self.sigma_l * z
    }
}

/// Cholesky with escalating diagonal jitter: one plain attempt, then three
/// with 1e-10 * mean(diag) scaled up tenfold each time.
pub fn jittered_cholesky(m: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    let k = m.nrows();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let base = m.diagonal().mean().abs().max(f64::MIN_POSITIVE) * 1e-10;
    let mut jitter = base;
    for attempt in 1..=3 {
        let mut jittered = m.clone();
        for i in 0..k {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
        if attempt < 3 {
            jitter *= 10.0;
        }
    }
    Err(Error::NotPositiveDefinite {
        matrix: name,
        attempts: 3,
        last_jitter: jitter,
    })
}

/// Posterior mean and covariance of the coefficients under a diagonal
/// Gaussian prior: S = (diag(1/v) + X' sigma^{-1} X)^{-1},
/// mu = S (diag(1/v) m + X' sigma^{-1} y).
pub fn conditional_posterior(
    pl: &PluginLikelihood,
    prior_mean: &DVector<f64>,
    prior_var: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mu, chol) = posterior_mean_chol(pl, prior_mean, prior_var)?;
    let cov = chol.inverse();
    Ok((mu, cov))
}

fn posterior_mean_chol(
    pl: &PluginLikelihood,
    prior_mean: &DVector<f64>,
    prior_var: &DVector<f64>,
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
    let k = pl.dim();
    assert_eq!(prior_mean.len(), k);
    assert_eq!(prior_var.len(), k);
    assert!(
        prior_var.iter().all(|&v| v > 0.0),
        "prior variances must be positive"
    );
    let mut prec = pl.xtsx.clone();
    let mut rhs = pl.xtsy.clone();
    for i in 0..k {
        prec[(i, i)] += 1.0 / prior_var[i];
        rhs[i] += prior_mean[i] / prior_var[i];
    }
    let chol = jittered_cholesky(&prec, "posterior precision")?;
    let mu = chol.solve(&rhs);
    Ok((mu, chol))
}

/// One exact draw from the conditional posterior of the coefficients.
pub fn conditional_a_draw<R: Rng>(
    pl: &PluginLikelihood,
    prior_mean: &DVector<f64>,
    prior_var: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mu, chol) = posterior_mean_chol(pl, prior_mean, prior_var)?;
    let k = pl.dim();
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    // precision = L L', so L'^{-1} z has the posterior covariance
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("cholesky factor is invertible");
    Ok(mu + w)
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    pub seed: u64,
    /// Fix every prior variance at this value instead of sampling the
    /// Horseshoe hierarchy; turns the chain into iid Gaussian draws.
    pub freeze_scales: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_burn: 1000,
            n_save: 2000,
            thin: 1,
            seed: 0,
            freeze_scales: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_save == 0 || self.thin == 0 {
            return Err(Error::Config(
                "chain needs n_save >= 1 and thin >= 1".into(),
            ));
        }
        if let Some(v) = self.freeze_scales {
            if v <= 0.0 {
                return Err(Error::Config("frozen scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Saved chain: coefficient draws row per sweep, the scale path, and the
/// per-coordinate effective sample size.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    /// n_save x k coefficient draws.
    pub a: DMatrix<f64>,
    /// n_save x k local scale draws.
    pub psi2: DMatrix<f64>,
    /// Global scale path.
    pub lambda2: Vec<f64>,
    /// Effective sample size per coefficient coordinate.
    pub ess: Vec<f64>,
}

impl ChainDraws {
    pub fn n_save(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn mean_a(&self) -> DVector<f64> {
        self.a.row_mean().transpose()
    }

    /// Columnwise quantile of the coefficient draws.
    pub fn quantile_a(&self, p: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|j| {
                let col: Vec<f64> = self.a.column(j).iter().cloned().collect();
                crate::stats::quantile(&col, p)
            }),
        )
    }
}

/// Runs the two-block Gibbs sampler: coefficients given scales, scales given
/// coefficients. The noise covariance stays fixed at the plug-in value.
pub fn run_equation_mcmc(pl: &PluginLikelihood, cfg: &McmcConfig) -> Result<ChainDraws> {
    cfg.validate()?;
    let k = pl.dim();
    let mut rng = crate::rng::stream(cfg.seed, "gibbs");
    let prior_mean = DVector::zeros(k);
    let mut scales = OwnBlockScales::unit(k);
    let frozen = cfg.freeze_scales.map(|v| DVector::from_element(k, v));

    let total = cfg.n_burn + cfg.n_save * cfg.thin;
    let mut a = DMatrix::zeros(cfg.n_save, k);
    let mut psi2 = DMatrix::zeros(cfg.n_save, k);
    let mut lambda2 = Vec::with_capacity(cfg.n_save);
    let mut saved = 0;

    for sweep in 0..total {
        let prior_var = match &frozen {
            Some(v) => v.clone(),
            None => scales.prior_var(),
        };
        let draw = conditional_a_draw(pl, &prior_mean, &prior_var, &mut rng)?;
        if frozen.is_none() {
            scales = horseshoe_gibbs_step(&draw, &scales, &mut rng);
        }
        if sweep >= cfg.n_burn && (sweep - cfg.n_burn) % cfg.thin == 0 {
            for j in 0..k {
                a[(saved, j)] = draw[j];
                psi2[(saved, j)] = scales.psi2[j];
            }
            lambda2.push(scales.lambda2);
            saved += 1;
        }
    }
    debug_assert_eq!(saved, cfg.n_save);

    let ess_per_coord: Vec<f64> = (0..k)
        .map(|j| {
            let col: Vec<f64> = a.column(j).iter().cloned().collect();
            ess(&col)
        })
        .collect();
    Ok(ChainDraws {
        a,
        psi2,
        lambda2,
        ess: ess_per_coord,
    })
}
