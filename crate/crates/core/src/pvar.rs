//! Whole-panel estimation and system assembly.
//!
//! Every equation is estimated on its own: rotate, fit the stacked block
//! variationally, then sample the own block exactly. Draws are reassembled
//! into the structural system y_t = L y_t + Phi_s (lags) + eps and mapped to
//! the reduced form Phi = U Phi_s, Sigma = U H U' with U = (I - L)^{-1}.

use nalgebra::{DMatrix, DVector, Schur};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Result;
use crate::gibbs::{run_equation_mcmc, ChainDraws, McmcConfig, PluginLikelihood};
use crate::panel::{build_equation_design, ColumnRole, PanelDataset};
use crate::rng::child_seed;
use crate::rotation::qr_rotation;
use crate::vamp::{vamp_fit, ApproxPosterior, VampConfig};

/// Variable counts per unit plus the lag order; fixes the global stacking
/// order (unit blocks in panel order) used by every system matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelDims {
    pub m: Vec<usize>,
    pub p: usize,
}

impl PanelDims {
    pub fn from_dataset(ds: &PanelDataset, p: usize) -> Self {
        PanelDims {
            m: (0..ds.n_countries()).map(|c| ds.m(c)).collect(),
            p,
        }
    }

    pub fn n(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn n_units(&self) -> usize {
        self.m.len()
    }

    /// First global index of unit i's block.
    pub fn offset(&self, i: usize) -> usize {
        self.m[..i].iter().sum()
    }

    /// Global index of variable j of unit i.
    pub fn row_of(&self, i: usize, j: usize) -> usize {
        self.offset(i) + j
    }

    /// Unit owning each global index.
    pub fn unit_of_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n());
        for (i, &m) in self.m.iter().enumerate() {
            out.extend(std::iter::repeat(i).take(m));
        }
        out
    }
}

/// Posterior pieces for one equation: the exact chain for the own block, the
/// Gaussian approximation for the stacked block, and the column map that
/// says where every stacked coefficient lives in the system.
#[derive(Debug, Clone)]
pub struct EquationPosterior {
    pub country: usize,
    pub eq: usize,
    pub chain: ChainDraws,
    pub approx: ApproxPosterior,
    pub roles: Vec<ColumnRole>,
    pub t_eff: usize,
}

/// All equation posteriors in panel order plus the stacking dimensions.
#[derive(Debug, Clone)]
pub struct PvarPosterior {
    pub dims: PanelDims,
    pub equations: Vec<EquationPosterior>,
}

impl PvarPosterior {
    pub fn n_save(&self) -> usize {
        self.equations
            .first()
            .map(|e| e.chain.n_save())
            .unwrap_or(0)
    }

    pub fn equation(&self, i: usize, j: usize) -> &EquationPosterior {
        &self.equations[self.dims.row_of(i, j)]
    }
}

/// Estimates every equation of the panel. Equations run in parallel; each
/// gets its own seed derived from the root in `mcmc_cfg.seed`, so results do
/// not depend on scheduling.
pub fn estimate_pvar(
    ds: &PanelDataset,
    p: usize,
    vamp_cfg: &VampConfig,
    mcmc_cfg: &McmcConfig,
) -> Result<PvarPosterior> {
    let dims = PanelDims::from_dataset(ds, p);
    let jobs: Vec<(usize, usize)> = (0..dims.n_units())
        .flat_map(|i| (0..dims.m[i]).map(move |j| (i, j)))
        .collect();
    let equations: Vec<EquationPosterior> = jobs
        .par_iter()
        .map(|&(i, j)| {
            estimate_equation(ds, i, j, p, vamp_cfg, mcmc_cfg).map_err(|e| e.for_equation(i, j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PvarPosterior { dims, equations })
}

fn estimate_equation(
    ds: &PanelDataset,
    i: usize,
    j: usize,
    p: usize,
    vamp_cfg: &VampConfig,
    mcmc_cfg: &McmcConfig,
) -> Result<EquationPosterior> {
    let design = build_equation_design(ds, i, j, p)?;
    let split = qr_rotation(&design)?;
    let approx = vamp_fit(&split.y2, &split.z2, &design.classes(), vamp_cfg)?;
    let pl = PluginLikelihood::from_rotation(
        &split,
        &approx.mean,
        approx.var_scalar,
        approx.sigma2_hat,
    )?;
    let eq_cfg = McmcConfig {
        seed: child_seed(mcmc_cfg.seed, &format!("eq/{i}/{j}")),
        ..mcmc_cfg.clone()
    };
    let chain = run_equation_mcmc(&pl, &eq_cfg)?;
    let t_eff = design.t_eff();
    Ok(EquationPosterior {
        country: i,
        eq: j,
        chain,
        approx,
        roles: design.roles,
        t_eff,
    })
}

/// One draw of the full system in reduced form.
#[derive(Debug, Clone)]
pub struct SystemDraw {
    /// n x n*p reduced-form lag coefficients, lag-1 block first.
    pub phi: DMatrix<f64>,
    /// Unit-lower-triangular contemporaneous mixing, (I - L)^{-1}.
    pub u: DMatrix<f64>,
    /// Structural shock variances.
    pub h: DVector<f64>,
}

impl SystemDraw {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.phi.ncols() / self.phi.nrows()
    }

    /// Reduced-form error covariance U H U'.
    pub fn sigma(&self) -> DMatrix<f64> {
        let mut uh = self.u.clone();
        for j in 0..self.n() {
            uh.column_mut(j).scale_mut(self.h[j]);
        }
        uh * self.u.transpose()
    }

    /// Impact of one-standard-deviation structural shocks, U sqrt(H).
    pub fn impact(&self) -> DMatrix<f64> {
        let mut b = self.u.clone();
        for j in 0..self.n() {
            b.column_mut(j).scale_mut(self.h[j].sqrt());
        }
        b
    }
}

/// Writes one equation's coefficients into the structural matrices.
/// `a` is the own-lag block in design order (lag-major), `b` the stacked
/// block whose order the roles describe.
pub fn place_equation(
    dims: &PanelDims,
    country: usize,
    eq: usize,
    a: &DVector<f64>,
    b: &DVector<f64>,
    roles: &[ColumnRole],
    phi_s: &mut DMatrix<f64>,
    l: &mut DMatrix<f64>,
) {
    let n = dims.n();
    let m_i = dims.m[country];
    assert_eq!(a.len(), m_i * dims.p);
    assert_eq!(b.len(), roles.len());
    let row = dims.row_of(country, eq);
    let off_i = dims.offset(country);
    for lag in 1..=dims.p {
        for v in 0..m_i {
            phi_s[(row, (lag - 1) * n + off_i + v)] = a[(lag - 1) * m_i + v];
        }
    }
    for (q, role) in roles.iter().enumerate() {
        match *role {
            ColumnRole::OtherLag {
                country: c,
                lag,
                var,
            } => {
                phi_s[(row, (lag - 1) * n + dims.offset(c) + var)] = b[q];
            }
            ColumnRole::OwnContemp { eq: s } => {
                l[(row, off_i + s)] = b[q];
            }
            ColumnRole::PrecedingContemp { country: c, var } => {
                l[(row, dims.offset(c) + var)] = b[q];
            }
        }
    }
}

/// Reads one equation's coefficients back out of the structural matrices;
/// exact inverse of `place_equation`.
pub fn extract_equation(
    dims: &PanelDims,
    country: usize,
    eq: usize,
    roles: &[ColumnRole],
    phi_s: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = dims.n();
    let m_i = dims.m[country];
    let row = dims.row_of(country, eq);
    let off_i = dims.offset(country);
    let mut a = DVector::zeros(m_i * dims.p);
    for lag in 1..=dims.p {
        for v in 0..m_i {
            a[(lag - 1) * m_i + v] = phi_s[(row, (lag - 1) * n + off_i + v)];
        }
    }
    let mut b = DVector::zeros(roles.len());
    for (q, role) in roles.iter().enumerate() {
        b[q] = match *role {
            ColumnRole::OtherLag {
                country: c,
                lag,
                var,
            } => phi_s[(row, (lag - 1) * n + dims.offset(c) + var)],
            ColumnRole::OwnContemp { eq: s } => l[(row, off_i + s)],
            ColumnRole::PrecedingContemp { country: c, var } => l[(row, dims.offset(c) + var)],
        };
    }
    (a, b)
}

/// (I - L)^{-1} for strictly lower-triangular L; always exists.
pub fn unit_lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let m = DMatrix::identity(n, n) - l;
    m.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("unit diagonal cannot vanish")
}

/// Maps structural pieces to the reduced form.
pub fn reduced_from_structural(
    phi_s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    h: DVector<f64>,
) -> SystemDraw {
    let u = unit_lower_inverse(l);
    let phi = &u * phi_s;
    SystemDraw { phi, u, h }
}

/// Assembles posterior draw `draw_index` into a full system. With
/// `propagate_b` the stacked block is drawn from its Gaussian approximation
/// N(mean, var_scalar I); otherwise the mean is used as is.
pub fn assemble_system_draw<R: Rng>(
    post: &PvarPosterior,
    draw_index: usize,
    propagate_b: bool,
    rng: &mut R,
) -> SystemDraw {
    let dims = &post.dims;
    let n = dims.n();
    let mut phi_s = DMatrix::zeros(n, n * dims.p);
    let mut l = DMatrix::zeros(n, n);
    let mut h = DVector::zeros(n);
    for ep in &post.equations {
        assert!(draw_index < ep.chain.n_save(), "draw index out of range");
        let a = ep.chain.a.row(draw_index).transpose();
        let mut b = ep.approx.mean.clone();
        if propagate_b && !b.is_empty() {
            let sd = ep.approx.var_scalar.max(0.0).sqrt();
            for q in 0..b.len() {
                b[q] += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        place_equation(
            dims, ep.country, ep.eq, &a, &b, &ep.roles, &mut phi_s, &mut l,
        );
        h[dims.row_of(ep.country, ep.eq)] = ep.approx.sigma2_hat;
    }
    reduced_from_structural(&phi_s, &l, h)
}

/// n*p x n*p companion form of an n x n*p lag matrix.
pub fn companion_matrix(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = phi.nrows();
    let p = phi.ncols() / n;
    assert_eq!(phi.ncols(), n * p);
    let mut c = DMatrix::zeros(n * p, n * p);
    c.view_mut((0, 0), (n, n * p)).copy_from(phi);
    for i in 0..n * (p - 1) {
        c[(n + i, i)] = 1.0;
    }
    c
}

/// Largest eigenvalue modulus. The QR eigenvalue iteration runs under a
/// finite sweep budget; a coincident cluster of eigenvalues can keep it
/// from deflating, in which case the radius comes from the norm limit
/// instead.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
    }
    norm_limit_radius(m)
}

/// rho(A) as lim ||A^k||^(1/k) with k = 2^32, by repeated squaring with
/// rescaling. Insensitive to eigenvalue multiplicity.
fn norm_limit_radius(m: &DMatrix<f64>) -> f64 {
    // invariant: A^(2^j) = exp(log_norm) * a with a at unit Frobenius norm
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut a = m / norm;
    let mut log_norm = norm.ln();
    for _ in 0..32 {
        let b = &a * &a;
        let t = b.norm();
        if t == 0.0 {
            return 0.0;
        }
        log_norm = 2.0 * log_norm + t.ln();
        a = b / t;
    }
    (log_norm / (1u64 << 32) as f64).exp()
}
