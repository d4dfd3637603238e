//! Horseshoe shrinkage hierarchy in its inverse-Gamma auxiliary form.
//!
//! Each coefficient phi_i carries a local scale psi_i and shares a global
//! scale lambda with the other coefficients of its class. The auxiliary
//! variables nu_i and xi make every conditional an inverse Gamma, which gives
//! both a closed-form EM pass (used inside the variational fit) and a
//! closed-form Gibbs sweep (used in the own-lag sampler).

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Bounds applied to every variance-like quantity in the hierarchy.
pub const SCALE_CLAMP: (f64, f64) = (1e-12, 1e12);

pub fn clamp_scale(x: f64) -> f64 {
    x.clamp(SCALE_CLAMP.0, SCALE_CLAMP.1)
}

/// Which global scale a regressor column loads on: lagged values of other
/// cross-section units, or contemporaneous terms that capture covariance
/// structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnClass {
    OtherLag,
    Contemporaneous,
}

/// Scales for one regression block with two column classes.
#[derive(Debug, Clone)]
pub struct HorseshoeState {
    pub psi2: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda2_lag: f64,
    pub xi_aux_lag: f64,
    pub lambda2_contemp: f64,
    pub xi_aux_contemp: f64,
}

impl HorseshoeState {
    /// All scales start at one.
    pub fn unit(k: usize) -> Self {
        HorseshoeState {
            psi2: vec![1.0; k],
            nu: vec![1.0; k],
            lambda2_lag: 1.0,
            xi_aux_lag: 1.0,
            lambda2_contemp: 1.0,
            xi_aux_contemp: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.psi2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi2.is_empty()
    }

    pub fn lambda2(&self, class: ColumnClass) -> f64 {
        match class {
            ColumnClass::OtherLag => self.lambda2_lag,
            ColumnClass::Contemporaneous => self.lambda2_contemp,
        }
    }

    /// Per-column prior variances psi2_i * lambda2(class_i).
    pub fn prior_var(&self, classes: &[ColumnClass]) -> DVector<f64> {
        assert_eq!(classes.len(), self.len());
        DVector::from_iterator(
            self.len(),
            self.psi2
                .iter()
                .zip(classes)
                .map(|(&p2, &c)| clamp_scale(p2 * self.lambda2(c))),
        )
    }
}

/// One EM pass over the hierarchy given current coefficient estimates.
///
/// Updates run in the conditional-expectation order: local precisions first
/// (using the incoming global scales), then each class's global precision
/// (using the fresh local precisions), then the auxiliaries. E-steps use the
/// inverse-Gamma conditional mean of each precision:
///   1/psi2_i    <- 1 / (1/nu_i + phi_i^2 / (2 lambda2))
///   1/lambda2_c <- (K_c + 1) / (2/xi_c + sum_{i in c} phi_i^2 / psi2_i)
///   nu_i        <- 1 / (1 + 1/psi2_i)
///   xi_c        <- 1 / (1 + 1/lambda2_c)
pub fn em_update_horseshoe(
    phi: &DVector<f64>,
    hs: &HorseshoeState,
    classes: &[ColumnClass],
) -> HorseshoeState {
    let k = hs.len();
    assert_eq!(phi.len(), k);
    assert_eq!(classes.len(), k);

    let mut next = hs.clone();
    for i in 0..k {
        let inv_lambda2 = 1.0 / hs.lambda2(classes[i]);
        let inv_psi2 = 1.0 / (1.0 / hs.nu[i] + phi[i] * phi[i] * inv_lambda2 / 2.0);
        next.psi2[i] = clamp_scale(1.0 / inv_psi2);
    }
    for class in [ColumnClass::OtherLag, ColumnClass::Contemporaneous] {
        let members: Vec<usize> = (0..k).filter(|&i| classes[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let weighted: f64 = members
            .iter()
            .map(|&i| phi[i] * phi[i] / next.psi2[i])
            .sum();
        let xi_aux = match class {
            ColumnClass::OtherLag => hs.xi_aux_lag,
            ColumnClass::Contemporaneous => hs.xi_aux_contemp,
        };
        let inv_lambda2 = (members.len() as f64 + 1.0) / (2.0 / xi_aux + weighted);
        let lambda2 = clamp_scale(1.0 / inv_lambda2);
        let xi_new = clamp_scale(1.0 / (1.0 + inv_lambda2));
        match class {
            ColumnClass::OtherLag => {
                next.lambda2_lag = lambda2;
                next.xi_aux_lag = xi_new;
            }
            ColumnClass::Contemporaneous => {
                next.lambda2_contemp = lambda2;
                next.xi_aux_contemp = xi_new;
            }
        }
    }
    for i in 0..k {
        next.nu[i] = clamp_scale(1.0 / (1.0 + 1.0 / next.psi2[i]));
    }
    next
}

/// Scales for the own-lag coefficient block, which has a single global scale.
#[derive(Debug, Clone)]
pub struct OwnBlockScales {
    pub psi2: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda2: f64,
    pub xi_aux: f64,
}

impl OwnBlockScales {
    pub fn unit(k: usize) -> Self {
        OwnBlockScales {
            psi2: vec![1.0; k],
            nu: vec![1.0; k],
            lambda2: 1.0,
            xi_aux: 1.0,
        }
    }

    /// A draw from the hierarchy itself (nu_i, xi half-unit auxiliaries first,
    /// then the scales given them).
    pub fn draw_prior<R: Rng>(k: usize, rng: &mut R) -> Self {
        let nu: Vec<f64> = (0..k).map(|_| draw_inv_gamma(rng, 0.5, 1.0)).collect();
        let psi2: Vec<f64> = nu
            .iter()
            .map(|&n| draw_inv_gamma(rng, 0.5, 1.0 / n))
            .collect();
        let xi_aux = draw_inv_gamma(rng, 0.5, 1.0);
        let lambda2 = draw_inv_gamma(rng, 0.5, 1.0 / xi_aux);
        OwnBlockScales {
            psi2,
            nu,
            lambda2,
            xi_aux,
        }
    }

    /// Per-column prior variances psi2_i * lambda2.
    pub fn prior_var(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.psi2.len(),
            self.psi2.iter().map(|&p2| clamp_scale(p2 * self.lambda2)),
        )
    }
}

/// Shape and scale of the inverse-Gamma conditional for the global lambda2
/// given coefficients, local scales and the auxiliary xi.
pub fn lambda2_conditional(phi: &DVector<f64>, psi2: &[f64], xi_aux: f64) -> (f64, f64) {
    let k = phi.len();
    assert_eq!(psi2.len(), k);
    let shape = (k as f64 + 1.0) / 2.0;
    let scale = 1.0 / xi_aux
        + phi
            .iter()
            .zip(psi2)
            .map(|(&f, &p2)| f * f / (2.0 * p2))
            .sum::<f64>();
    (shape, scale)
}

/// One Gibbs sweep over the scales given the current coefficient draw.
/// Every conditional is inverse Gamma:
///   psi2_i | .  ~ IG(1, 1/nu_i + phi_i^2/(2 lambda2))
///   lambda2 | . ~ IG((k+1)/2, 1/xi + sum_i phi_i^2/(2 psi2_i))
///   nu_i | .    ~ IG(1, 1 + 1/psi2_i)
///   xi | .      ~ IG(1, 1 + 1/lambda2)
pub fn horseshoe_gibbs_step<R: Rng>(
    phi: &DVector<f64>,
    hs: &OwnBlockScales,
    rng: &mut R,
) -> OwnBlockScales {
    let k = phi.len();
    assert_eq!(hs.psi2.len(), k);
    let mut next = hs.clone();
    for i in 0..k {
        let scale = 1.0 / hs.nu[i] + phi[i] * phi[i] / (2.0 * hs.lambda2);
        next.psi2[i] = draw_inv_gamma(rng, 1.0, scale);
    }
    let (shape, scale) = lambda2_conditional(phi, &next.psi2, hs.xi_aux);
    next.lambda2 = draw_inv_gamma(rng, shape, scale);
    for i in 0..k {
        next.nu[i] = draw_inv_gamma(rng, 1.0, 1.0 + 1.0 / next.psi2[i]);
    }
    next.xi_aux = draw_inv_gamma(rng, 1.0, 1.0 + 1.0 / next.lambda2);
    next
}

/// Inverse-Gamma(shape, scale) draw, clamped to the scale bounds.
/// X ~ IG(a, b) iff 1/X ~ Gamma(a, rate = b).
pub fn draw_inv_gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let scale = scale.max(SCALE_CLAMP.0);
    let gamma = Gamma::new(shape, 1.0 / scale).expect("valid Gamma parameters");
    clamp_scale(1.0 / gamma.sample(rng))
}

/// CDF-inversion median of Inverse-Gamma(1, b): F(x) = exp(-b/x).
pub fn inv_gamma1_median(scale: f64) -> f64 {
    scale / std::f64::consts::LN_2
}

pub(crate) fn check_classes(classes: &[ColumnClass], k: usize) -> Result<()> {
    if classes.len() != k {
        return Err(Error::Dimension(format!(
            "{} column classes for {} columns",
            classes.len(),
            k
        )));
    }
    Ok(())
}
