//! Synthetic sparse panel systems with known coefficients, for oracle tests
//! and the `simulate` command.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::panel::{CountryBlock, Month, PanelDataset, Transform, VariableSpec};
use crate::pvar::{
    companion_matrix, reduced_from_structural, spectral_radius, PanelDims, SystemDraw,
};

/// Shape and sparsity of a synthetic system. Own first lags sit at
/// `own_diag`; every cross-unit lag entry and every contemporaneous entry is
/// nonzero with probability `sparsity`, drawn N(0, cross_scale^2).
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub n_units: usize,
    pub m_per_unit: usize,
    pub p: usize,
    pub t_len: usize,
    pub sparsity: f64,
    pub own_diag: f64,
    pub cross_scale: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(n_units: usize, m_per_unit: usize, p: usize, t_len: usize) -> Self {
        SimSpec {
            n_units,
            m_per_unit,
            p,
            t_len,
            sparsity: 0.1,
            own_diag: 0.5,
            cross_scale: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.m_per_unit == 0 || self.p == 0 {
            return Err(Error::Config("system dimensions must be positive".into()));
        }
        if self.t_len <= self.p {
            return Err(Error::Config(format!(
                "{} periods cannot support {} lags",
                self.t_len, self.p
            )));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config("sparsity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> PanelDims {
        PanelDims {
            m: vec![self.m_per_unit; self.n_units],
            p: self.p,
        }
    }
}

/// The generating system in both forms, kept for oracle comparisons.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub dims: PanelDims,
    /// Structural lag coefficients (before contemporaneous mixing).
    pub phi_s: DMatrix<f64>,
    /// Strictly lower-triangular contemporaneous coefficients.
    pub l: DMatrix<f64>,
    pub system: SystemDraw,
}

/// Draws a stable sparse system by rejection, then simulates a panel from
/// it. Stability is judged on the reduced-form companion matrix; after 100
/// consecutive unstable draws the generator gives up.
pub fn simulate_pvar(spec: &SimSpec) -> Result<(PanelDataset, SimTruth)> {
    spec.validate()?;
    let mut rng = crate::rng::stream(spec.seed, "simulate");
    let dims = spec.dims();
    let n = dims.n();

    let mut truth = None;
    for _ in 0..100 {
        let (phi_s, l) = draw_structural(spec, &dims, &mut rng);
        let system = reduced_from_structural(&phi_s, &l, DVector::from_element(n, 1.0));
        if spectral_radius(&companion_matrix(&system.phi)) < 0.98 {
            truth = Some(SimTruth {
                dims: dims.clone(),
                phi_s,
                l,
                system,
            });
            break;
        }
    }
    let truth = truth.ok_or(Error::UnstableSimulation { tries: 100 })?;

    let data = simulate_paths(&truth.system, spec.t_len, 100, &mut rng);
    let countries = (0..spec.n_units)
        .map(|i| CountryBlock {
            code: format!("C{i:02}"),
            vars: (0..spec.m_per_unit)
                .map(|v| VariableSpec {
                    code: format!("V{v}"),
                    name: format!("V{v}"),
                    country: format!("C{i:02}"),
                    transform: Transform::Level,
                })
                .collect(),
        })
        .collect();
    let months = (0..spec.t_len)
        .map(|t| Month::new(2000, 1).plus(t as i32))
        .collect();
    let ds = PanelDataset::new(countries, data, months)?;
    Ok((ds, truth))
}

fn draw_structural<R: Rng>(
    spec: &SimSpec,
    dims: &PanelDims,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = dims.n();
    let unit_of = dims.unit_of_rows();
    let mut phi_s = DMatrix::zeros(n, n * spec.p);
    let mut l = DMatrix::zeros(n, n);
    for r in 0..n {
        phi_s[(r, r)] = spec.own_diag;
        for lag in 1..=spec.p {
            for c in 0..n {
                if unit_of[c] == unit_of[r] {
                    continue;
                }
                if rng.gen::<f64>() < spec.sparsity {
                    phi_s[(r, (lag - 1) * n + c)] =
                        rng.sample::<f64, _>(StandardNormal) * spec.cross_scale;
                }
            }
        }
        for c in 0..r {
            if rng.gen::<f64>() < spec.sparsity {
                l[(r, c)] = rng.sample::<f64, _>(StandardNormal) * spec.cross_scale;
            }
        }
    }
    (phi_s, l)
}

/// Simulates `t_len` periods after a warm-up from zero initial conditions;
/// rows are time, columns follow the stacking order.
pub fn simulate_paths<R: Rng>(
    system: &SystemDraw,
    t_len: usize,
    warmup: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = system.n();
    let p = system.p();
    let impact = system.impact();
    let mut lags: Vec<DVector<f64>> = vec![DVector::zeros(n); p];
    let mut out = DMatrix::zeros(t_len, n);
    for t in 0..warmup + t_len {
        let mut y = &impact * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        for (lag, past) in lags.iter().enumerate() {
            y += system.phi.view((0, lag * n), (n, n)) * past;
        }
        lags.rotate_right(1);
        lags[0] = y.clone();
        if t >= warmup {
            out.row_mut(t - warmup).copy_from(&y.transpose());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_var;

    #[test]
    fn zero_sparsity_decouples_the_system_exactly() {
        let mut spec = SimSpec::new(3, 2, 1, 50);
        spec.sparsity = 0.0;
        let (_, truth) = simulate_pvar(&spec).unwrap();
        let n = truth.dims.n();
        assert_eq!(truth.l, DMatrix::zeros(n, n));
        for r in 0..n {
            for c in 0..n {
                let expect = if r == c { 0.5 } else { 0.0 };
                assert_eq!(truth.phi_s[(r, c)], expect);
            }
        }
        assert_eq!(truth.system.phi, truth.phi_s);
    }

    #[test]
    fn emitted_truth_is_stable() {
        for seed in 0..5 {
            let mut spec = SimSpec::new(2, 2, 2, 40);
            spec.sparsity = 0.3;
            spec.seed = seed;
            let (_, truth) = simulate_pvar(&spec).unwrap();
            let rho = spectral_radius(&companion_matrix(&truth.system.phi));
            assert!(rho < 0.98, "seed {seed}: spectral radius {rho}");
        }
    }

    #[test]
    fn many_decoupled_units_simulate_quickly() {
        // sparse draws leave most units decoupled, putting a repeated
        // eigenvalue at own_diag; the radius check must still terminate
        let mut spec = SimSpec::new(10, 2, 1, 200);
        spec.seed = 90;
        let (ds, truth) = simulate_pvar(&spec).unwrap();
        assert_eq!(ds.series().nrows(), 200);
        assert_eq!(ds.series().ncols(), 20);
        assert!(spectral_radius(&companion_matrix(&truth.system.phi)) < 0.98);
    }

    #[test]
    fn unstable_settings_are_rejected_with_advice() {
        let mut spec = SimSpec::new(2, 1, 1, 30);
        spec.own_diag = 1.2; // explosive on its own, no draw can fix it
        let err = simulate_pvar(&spec).unwrap_err();
        assert!(matches!(err, Error::UnstableSimulation { tries: 100 }));
    }

    #[test]
    fn simulation_is_deterministic() {
        let mut spec = SimSpec::new(2, 2, 1, 80);
        spec.sparsity = 0.2;
        spec.seed = 9;
        let (a, ta) = simulate_pvar(&spec).unwrap();
        let (b, tb) = simulate_pvar(&spec).unwrap();
        assert_eq!(a.series().as_slice(), b.series().as_slice());
        assert_eq!(ta.phi_s.as_slice(), tb.phi_s.as_slice());
        spec.seed = 10;
        let (c, _) = simulate_pvar(&spec).unwrap();
        assert_ne!(a.series().as_slice(), c.series().as_slice());
    }

    #[test]
    fn ar1_sample_variance_matches_the_stationary_law() {
        // single unit, single variable: y_t = 0.5 y_{t-1} + e, var = 1/(1-.25)
        let mut spec = SimSpec::new(1, 1, 1, 20000);
        spec.sparsity = 0.0;
        spec.seed = 3;
        let (ds, _) = simulate_pvar(&spec).unwrap();
        let col: Vec<f64> = ds.series().column(0).iter().cloned().collect();
        let v = sample_var(&col);
        let expect = 1.0 / (1.0 - 0.25);
        assert!(
            (v - expect).abs() < 0.1,
            "sample variance {v} vs stationary {expect}"
        );
    }
}
