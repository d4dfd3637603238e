//! Orthogonal rotation of one equation.
//!
//! A full QR factorization of the own-lag block X splits observation space
//! into the k directions spanned by X (carried by Q1) and its orthogonal
//! complement (carried by Q2). Rotating the regression by Q' makes the two
//! coefficient blocks separable: the complement part (y2, Z2) identifies the
//! stacked block alone because Q2'X = 0, while the span part (y1, X1, Z1)
//! keeps everything needed for the own-lag coefficients afterwards.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::EquationDesign;

/// Relative threshold under which an R diagonal entry marks collinearity.
const RANK_TOL: f64 = 1e-10;

/// The rotated pieces of one equation.
#[derive(Debug, Clone)]
pub struct RotationSplit {
    /// T_eff x k orthonormal basis of span(X).
    pub q1: DMatrix<f64>,
    /// T_eff x (T_eff - k) orthonormal basis of the complement.
    pub q2: DMatrix<f64>,
    /// k x k upper-triangular X1 = Q1'X with non-negative diagonal.
    pub x1: DMatrix<f64>,
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
}

impl RotationSplit {
    pub fn k(&self) -> usize {
        self.q1.ncols()
    }

    pub fn t_rot(&self) -> usize {
        self.q2.ncols()
    }

    pub fn big_k(&self) -> usize {
        self.z1.ncols()
    }
}

/// Householder QR of the own-lag block, with the complement basis
/// materialized and the R diagonal forced non-negative so reruns produce the
/// same factors.
pub fn qr_rotation(design: &EquationDesign) -> Result<RotationSplit> {
    let x = &design.x_own;
    let t = x.nrows();
    let k = x.ncols();
    debug_assert!(t > k);

    let qr = x.clone().qr();
    // applying the reflector sequence to the identity yields the full Q'
    let mut qt = DMatrix::<f64>::identity(t, t);
    qr.q_tr_mul(&mut qt);
    let mut r = qr.r();

    for i in 0..k {
        if r[(i, i)] < 0.0 {
            for c in 0..k {
                r[(i, c)] = -r[(i, c)];
            }
            for c in 0..t {
                qt[(i, c)] = -qt[(i, c)];
            }
        }
    }

    let max_diag = (0..k).map(|i| r[(i, i)]).fold(0.0_f64, f64::max);
    let collinear: Vec<usize> = (0..k)
        .filter(|&i| r[(i, i)] <= RANK_TOL * max_diag || max_diag == 0.0)
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }

    let q1t = qt.rows(0, k).into_owned();
    let q2t = qt.rows(k, t - k).into_owned();
    let y1 = &q1t * &design.y;
    let y2 = &q2t * &design.y;
    let z1 = &q1t * &design.z_other;
    let z2 = &q2t * &design.z_other;

    Ok(RotationSplit {
        q1: q1t.transpose(),
        q2: q2t.transpose(),
        x1: r,
        y1,
        y2,
        z1,
        z2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ColumnRole;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_design(t: usize, k: usize, big_k: usize, seed: u64) -> EquationDesign {
        let mut rng = crate::rng::stream(seed, "rotation-test");
        let mut gauss = |r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let x_own = gauss(t, k);
        let z_other = gauss(t, big_k);
        let y = gauss(t, 1).column(0).into_owned();
        EquationDesign {
            country: 0,
            eq: 0,
            p: 1,
            y,
            x_own,
            z_other,
            roles: (0..big_k)
                .map(|v| ColumnRole::OtherLag {
                    country: 1,
                    lag: 1,
                    var: v,
                })
                .collect(),
        }
    }

    /// Modified Gram-Schmidt basis of span(X), an independent oracle for Q1.
    fn mgs_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = x.clone();
        for j in 0..q.ncols() {
            for prev in 0..j {
                let proj = q.column(prev).dot(&q.column(j));
                let prev_col = q.column(prev).into_owned();
                let mut col = q.column_mut(j);
                col.axpy(-proj, &prev_col, 1.0);
            }
            let norm = q.column(j).norm();
            q.column_mut(j).scale_mut(1.0 / norm);
        }
        q
    }

    #[test]
    fn factors_are_orthonormal_and_annihilating() {
        let d = random_design(60, 5, 7, 1);
        let rot = qr_rotation(&d).unwrap();
        let q = {
            let mut q = DMatrix::zeros(60, 60);
            q.columns_mut(0, 5).copy_from(&rot.q1);
            q.columns_mut(5, 55).copy_from(&rot.q2);
            q
        };
        let gram = q.transpose() * &q;
        let eye = DMatrix::identity(60, 60);
        assert!((gram - eye).amax() < 1e-12);
        let q2tx = rot.q2.transpose() * &d.x_own;
        assert!(q2tx.amax() < 1e-12 * d.x_own.amax());
    }

    #[test]
    fn x1_is_upper_triangular_with_positive_diagonal_and_reconstructs_x() {
        let d = random_design(40, 4, 0, 2);
        let rot = qr_rotation(&d).unwrap();
        for i in 0..4 {
            assert!(rot.x1[(i, i)] > 0.0);
            for j in 0..i {
                assert_relative_eq!(rot.x1[(i, j)], 0.0, epsilon = 1e-13);
            }
        }
        let recon = &rot.q1 * &rot.x1;
        assert!((recon - &d.x_own).amax() < 1e-12);
    }

    #[test]
    fn q1_spans_the_same_space_as_gram_schmidt_oracle() {
        let d = random_design(30, 6, 0, 3);
        let rot = qr_rotation(&d).unwrap();
        let g = mgs_basis(&d.x_own);
        let proj_qr = &rot.q1 * rot.q1.transpose();
        let proj_mgs = &g * g.transpose();
        assert!((proj_qr - proj_mgs).amax() < 1e-10);
    }

    #[test]
    fn rotation_preserves_squared_norms() {
        let d = random_design(50, 3, 4, 4);
        let rot = qr_rotation(&d).unwrap();
        assert_relative_eq!(
            d.y.norm_squared(),
            rot.y1.norm_squared() + rot.y2.norm_squared(),
            max_relative = 1e-12
        );
        for c in 0..d.z_other.ncols() {
            assert_relative_eq!(
                d.z_other.column(c).norm_squared(),
                rot.z1.column(c).norm_squared() + rot.z2.column(c).norm_squared(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn rotated_regression_agrees_with_joint_least_squares() {
        // Solve the full regression y ~ [X Z] by normal equations, then fix
        // the Z coefficients and recover the X block from the rotated system:
        // X1 a = y1 - Z1 b. Both must give the same a.
        let d = random_design(80, 4, 6, 5);
        let rot = qr_rotation(&d).unwrap();
        let mut w = DMatrix::zeros(80, 10);
        w.columns_mut(0, 4).copy_from(&d.x_own);
        w.columns_mut(4, 6).copy_from(&d.z_other);
        let wtw = w.transpose() * &w;
        let wty = w.transpose() * &d.y;
        let ols = wtw.lu().solve(&wty).unwrap();
        let a_ols = ols.rows(0, 4).into_owned();
        let b_ols = ols.rows(4, 6).into_owned();

        let rhs = &rot.y1 - &rot.z1 * &b_ols;
        let a_rot = rot
            .x1
            .clone()
            .solve_upper_triangular(&rhs)
            .expect("triangular solve");
        assert!((a_rot - a_ols).amax() < 1e-9);
    }

    #[test]
    fn duplicate_columns_are_reported_as_rank_deficient() {
        let mut d = random_design(30, 3, 0, 6);
        let col0 = d.x_own.column(0).into_owned();
        d.x_own.column_mut(2).copy_from(&col0);
        match qr_rotation(&d).unwrap_err() {
            Error::RankDeficient(cols) => assert!(cols.contains(&2)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rotation_is_deterministic() {
        let d = random_design(45, 4, 5, 7);
        let a = qr_rotation(&d).unwrap();
        let b = qr_rotation(&d).unwrap();
        assert_eq!(a.x1.as_slice(), b.x1.as_slice());
        assert_eq!(a.q2.as_slice(), b.q2.as_slice());
        assert_eq!(a.y2.as_slice(), b.y2.as_slice());
    }

    #[test]
    fn empty_stacked_block_rotates_to_empty() {
        let d = random_design(25, 2, 0, 8);
        let rot = qr_rotation(&d).unwrap();
        assert_eq!(rot.z1.ncols(), 0);
        assert_eq!(rot.z2.ncols(), 0);
        assert_eq!(rot.z2.nrows(), 23);
    }
}
