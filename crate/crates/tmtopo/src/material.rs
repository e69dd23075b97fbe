//! Material-point kernels: compressible neo-Hookean energy with its first
//! and second stress derivatives, the higher-order strain term that keeps
//! crushed void regions solvable, and the smooth transition functions that
//! map the design variable to densities and stiffnesses.
//!
//! All stress kernels work on full 3x3 deformation gradients; plane-strain
//! states are embedded with a unit out-of-plane stretch so the same formulas
//! serve both the 2D assembly and the derivative test suite.

use nalgebra::{Matrix2, Matrix3};
use thiserror::Error;

/// Fourth-order tensor indexed as `[i][j][k][l]` = dP_ij / dF_kl.
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

/// Sixth-order tensor indexed as `[i][j][k][l][m][n]` = d2P_ij / (dF_kl dF_mn).
pub type Tensor6 = [[[[[[f64; 3]; 3]; 3]; 3]; 3]; 3];

/// Second gradient of a 2D displacement field, indexed `[i][j][k]` =
/// d2 u_i / (dX_j dX_k). Symmetric in (j, k).
pub type DispHessian = [[[f64; 2]; 2]; 2];

/// Design value at and below which a point counts as fully void one unit
/// lower; the transition spans `[chi_v - 1, chi_v]`.
pub const DEFAULT_CHI_VOID: f64 = -5.0;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("non-finite deformation gradient entry")]
    NonFinite,
    #[error("non-positive deformation gradient determinant {0}")]
    NonPositiveDet(f64),
}

/// Embeds an in-plane displacement gradient into the plane-strain
/// deformation gradient with third row and column (0, 0, 1).
pub fn plane_strain_f(grad_u: &Matrix2<f64>) -> Result<Matrix3<f64>, KernelError> {
    if !grad_u.iter().all(|v| v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    Ok(Matrix3::new(
        1.0 + grad_u[(0, 0)],
        grad_u[(0, 1)],
        0.0,
        grad_u[(1, 0)],
        1.0 + grad_u[(1, 1)],
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

fn checked_det(f: &Matrix3<f64>) -> Result<f64, KernelError> {
    if !f.iter().all(|v| v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    let det = f.determinant();
    if det <= 0.0 {
        return Err(KernelError::NonPositiveDet(det));
    }
    Ok(det)
}

/// Stored energy density of the compressible neo-Hookean solid,
/// `K/2 (ln J)^2 + G/2 (J^(-2/3) ||F||^2 - 3)`.
pub fn neo_hookean_energy(f: &Matrix3<f64>, bulk: f64, shear: f64) -> Result<f64, KernelError> {
    let det = checked_det(f)?;
    let ln_j = det.ln();
    let s = f.norm_squared();
    Ok(0.5 * bulk * ln_j * ln_j + 0.5 * shear * (det.powf(-2.0 / 3.0) * s - 3.0))
}

/// First Piola-Kirchhoff stress `K ln J F^-T + G J^(-2/3) (F - ||F||^2/3 F^-T)`.
pub fn pk1_stress(f: &Matrix3<f64>, bulk: f64, shear: f64) -> Result<Matrix3<f64>, KernelError> {
    let det = checked_det(f)?;
    let finv_t = f
        .try_inverse()
        .ok_or(KernelError::NonPositiveDet(det))?
        .transpose();
    let ln_j = det.ln();
    let jm23 = det.powf(-2.0 / 3.0);
    let s = f.norm_squared();
    Ok(finv_t * (bulk * ln_j - shear * jm23 * s / 3.0) + f * (shear * jm23))
}

/// First derivative of the stress, dP/dF.
pub fn pk1_tangent(f: &Matrix3<f64>, bulk: f64, shear: f64) -> Result<Tensor4, KernelError> {
    let det = checked_det(f)?;
    let g = f
        .try_inverse()
        .ok_or(KernelError::NonPositiveDet(det))?
        .transpose();
    let ln_j = det.ln();
    let jm23 = det.powf(-2.0 / 3.0);
    let s = f.norm_squared();
    let id = Matrix3::<f64>::identity();

    let mut a = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let vol = bulk * (g[(i, j)] * g[(k, l)] - ln_j * g[(i, l)] * g[(k, j)]);
                    let iso = shear
                        * jm23
                        * (id[(i, k)] * id[(j, l)]
                            - 2.0 / 3.0 * (g[(k, l)] * f[(i, j)] + f[(k, l)] * g[(i, j)])
                            + 2.0 * s / 9.0 * g[(i, j)] * g[(k, l)]
                            + s / 3.0 * g[(i, l)] * g[(k, j)]);
                    a[i][j][k][l] = vol + iso;
                }
            }
        }
    }
    Ok(a)
}

/// Second derivative of the stress, d2P/dF2. Needed by the monolithic
/// optimizer where the adjoint equation is differentiated once more with
/// respect to displacement.
pub fn pk1_second_derivative(
    f: &Matrix3<f64>,
    bulk: f64,
    shear: f64,
) -> Result<Tensor6, KernelError> {
    let det = checked_det(f)?;
    let g = f
        .try_inverse()
        .ok_or(KernelError::NonPositiveDet(det))?
        .transpose();
    let ln_j = det.ln();
    let jm23 = det.powf(-2.0 / 3.0);
    let s = f.norm_squared();
    let id = Matrix3::<f64>::identity();

    let t = |i: usize, j: usize, k: usize, l: usize| -> f64 {
        id[(i, k)] * id[(j, l)] - 2.0 / 3.0 * (g[(k, l)] * f[(i, j)] + f[(k, l)] * g[(i, j)])
            + 2.0 * s / 9.0 * g[(i, j)] * g[(k, l)]
            + s / 3.0 * g[(i, l)] * g[(k, j)]
    };

    let mut d = [[[[[[0.0; 3]; 3]; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    for m in 0..3 {
                        for n in 0..3 {
                            let vol = bulk
                                * (-g[(i, n)] * g[(m, j)] * g[(k, l)]
                                    - g[(i, j)] * g[(k, n)] * g[(m, l)]
                                    - g[(m, n)] * g[(i, l)] * g[(k, j)]
                                    + ln_j
                                        * (g[(i, n)] * g[(m, l)] * g[(k, j)]
                                            + g[(i, l)] * g[(k, n)] * g[(m, j)]));
                            let dt = -2.0 / 3.0
                                * (-g[(k, n)] * g[(m, l)] * f[(i, j)]
                                    + g[(k, l)] * id[(i, m)] * id[(j, n)]
                                    + id[(k, m)] * id[(l, n)] * g[(i, j)]
                                    - f[(k, l)] * g[(i, n)] * g[(m, j)])
                                + 2.0 / 9.0
                                    * (2.0 * f[(m, n)] * g[(i, j)] * g[(k, l)]
                                        - s * (g[(i, n)] * g[(m, j)] * g[(k, l)]
                                            + g[(i, j)] * g[(k, n)] * g[(m, l)]))
                                + 1.0 / 3.0
                                    * (2.0 * f[(m, n)] * g[(i, l)] * g[(k, j)]
                                        - s * (g[(i, n)] * g[(m, l)] * g[(k, j)]
                                            + g[(i, l)] * g[(k, n)] * g[(m, j)]));
                            let iso = shear
                                * jm23
                                * (dt - 2.0 / 3.0 * g[(m, n)] * t(i, j, k, l));
                            d[i][j][k][l][m][n] = vol + iso;
                        }
                    }
                }
            }
        }
    }
    Ok(d)
}

/// Quadratic energy of the displacement second gradient, `1/2 H:::H`.
pub fn higher_order_energy(h: &DispHessian) -> f64 {
    0.5 * triple_dot(h, h)
}

/// Full contraction of two displacement Hessians.
pub fn triple_dot(a: &DispHessian, b: &DispHessian) -> f64 {
    let mut acc = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                acc += a[i][j][k] * b[i][j][k];
            }
        }
    }
    acc
}

/// Exponential compression gate of the void regularization. Clamped so the
/// weight stays finite for arbitrarily negative determinants; equilibrium
/// rejects such states separately.
pub fn compression_gate(det_f: f64) -> f64 {
    (-5.0 * det_f).min(600.0).exp()
}

/// Scalar weight of the higher-order term: `k_r I(chi) exp(-5 det F)` with
/// `k_r = kbar_r L^2 K_s`. `length` is the characteristic dimension used to
/// make the scaling mesh-independent.
pub fn reg_weight(
    chi: f64,
    det_f: f64,
    kbar_r: f64,
    length: f64,
    bulk: f64,
    chi_void: f64,
) -> f64 {
    kbar_r * length * length * bulk * void_indicator(chi, chi_void) * compression_gate(det_f)
}

/// Logistic map from design variable to material density, overflow-safe for
/// any finite argument.
pub fn sigmoid_density(chi: f64) -> f64 {
    if chi >= 0.0 {
        1.0 / (1.0 + (-chi).exp())
    } else {
        let e = chi.exp();
        e / (1.0 + e)
    }
}

/// d rho / d chi = rho (1 - rho), evaluated without cancellation.
pub fn sigmoid_density_d(chi: f64) -> f64 {
    let (rho, one_minus) = sigmoid_pair(chi);
    rho * one_minus
}

/// d2 rho / d chi2 = rho (1 - rho)(1 - 2 rho).
pub fn sigmoid_density_dd(chi: f64) -> f64 {
    let (rho, one_minus) = sigmoid_pair(chi);
    rho * one_minus * (one_minus - rho)
}

fn sigmoid_pair(chi: f64) -> (f64, f64) {
    if chi >= 0.0 {
        let t = (-chi).exp();
        (1.0 / (1.0 + t), t / (1.0 + t))
    } else {
        let t = chi.exp();
        (t / (1.0 + t), 1.0 / (1.0 + t))
    }
}

/// RAMP interpolation of the elastic modulus scale:
/// `E = E0 + (1 - E0) rho / (1 + p (1 - rho))`.
pub fn ramp_stiffness(chi: f64, p: f64, e0: f64) -> f64 {
    let (rho, one_minus) = sigmoid_pair(chi);
    e0 + (1.0 - e0) * rho / (1.0 + p * one_minus)
}

/// d E / d chi.
pub fn ramp_stiffness_d(chi: f64, p: f64, e0: f64) -> f64 {
    let (rho, one_minus) = sigmoid_pair(chi);
    let denom = 1.0 + p * one_minus;
    (1.0 - e0) * (1.0 + p) / (denom * denom) * rho * one_minus
}

/// d2 E / d chi2.
pub fn ramp_stiffness_dd(chi: f64, p: f64, e0: f64) -> f64 {
    let (rho, one_minus) = sigmoid_pair(chi);
    let denom = 1.0 + p * one_minus;
    let d1 = rho * one_minus;
    let d2 = d1 * (one_minus - rho);
    (1.0 - e0) * (1.0 + p) * (d2 / (denom * denom) + 2.0 * p * d1 * d1 / (denom * denom * denom))
}

/// Smooth indicator of void material: 0 for `chi >= chi_v`, 1 for
/// `chi <= chi_v - 1`, quintic blend in between (C1 at both junctions).
pub fn void_indicator(chi: f64, chi_void: f64) -> f64 {
    let s = (chi_void - chi).clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// d I / d chi.
pub fn void_indicator_d(chi: f64, chi_void: f64) -> f64 {
    let s = chi_void - chi;
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    let w = s * (1.0 - s);
    -30.0 * w * w
}

/// d2 I / d chi2.
pub fn void_indicator_dd(chi: f64, chi_void: f64) -> f64 {
    let s = chi_void - chi;
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const K: f64 = 1.3;
    const G: f64 = 0.7;

    fn random_f(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        loop {
            let f = Matrix3::identity()
                + Matrix3::from_fn(|_, _| rng.random_range(-0.55..0.55));
            let det = f.determinant();
            if (0.2..=3.0).contains(&det) {
                return f;
            }
        }
    }

    #[test]
    fn undeformed_state_is_stress_free() {
        let f = Matrix3::identity();
        assert_eq!(neo_hookean_energy(&f, K, G).unwrap(), 0.0);
        assert_abs_diff_eq!(pk1_stress(&f, K, G).unwrap().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_dilation_energy_is_volumetric_only() {
        // J = 2 with an isochoric-neutral stretch leaves only K/2 (ln 2)^2.
        let f = Matrix3::identity() * 2f64.powf(1.0 / 3.0);
        let e = neo_hookean_energy(&f, 1.0, G).unwrap();
        assert_relative_eq!(e, 0.5 * 2f64.ln().powi(2), max_relative = 1e-14);
        assert_relative_eq!(e, 0.240226506959101, max_relative = 1e-12);
    }

    #[test]
    fn simple_shear_energy_is_shear_only() {
        let mut f = Matrix3::identity();
        f[(0, 1)] = 0.5;
        let e = neo_hookean_energy(&f, K, 6.0 / 13.0).unwrap();
        assert_relative_eq!(e, 3.0 / 52.0, max_relative = 1e-14);
    }

    #[test]
    fn hydrostatic_stress_is_spherical() {
        let lambda = 1.37;
        let f = Matrix3::identity() * lambda;
        let p = pk1_stress(&f, K, G).unwrap();
        let expect = 3.0 * K * lambda.ln() / lambda;
        assert_relative_eq!(p[(0, 0)], expect, max_relative = 1e-13);
        assert_relative_eq!(p[(1, 1)], expect, max_relative = 1e-13);
        assert_relative_eq!(p[(2, 2)], expect, max_relative = 1e-13);
        assert_abs_diff_eq!(p[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_determinant_is_rejected() {
        let mut f = Matrix3::identity();
        f[(0, 0)] = 0.0;
        assert!(matches!(
            neo_hookean_energy(&f, K, G),
            Err(KernelError::NonPositiveDet(_))
        ));
        f[(0, 0)] = f64::NAN;
        assert_eq!(neo_hookean_energy(&f, K, G), Err(KernelError::NonFinite));
    }

    #[test]
    fn tangent_at_identity_is_isotropic_elasticity() {
        let a = pk1_tangent(&Matrix3::identity(), K, G).unwrap();
        let id = Matrix3::<f64>::identity();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let expect = K * id[(i, j)] * id[(k, l)]
                            + G * (id[(i, k)] * id[(j, l)] + id[(i, l)] * id[(j, k)]
                                - 2.0 / 3.0 * id[(i, j)] * id[(k, l)]);
                        assert_abs_diff_eq!(a[i][j][k][l], expect, epsilon = 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn stress_matches_energy_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let p = pk1_stress(&f, K, G).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(i, j)] += h;
                    fm[(i, j)] -= h;
                    let fd = (neo_hookean_energy(&fp, K, G).unwrap()
                        - neo_hookean_energy(&fm, K, G).unwrap())
                        / (2.0 * h);
                    assert_relative_eq!(p[(i, j)], fd, epsilon = 1e-8, max_relative = 1e-7);
                }
            }
        }
    }

    #[test]
    fn tangent_matches_stress_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for _ in 0..10 {
            let f = random_f(&mut rng);
            let a = pk1_tangent(&f, K, G).unwrap();
            for k in 0..3 {
                for l in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(k, l)] += h;
                    fm[(k, l)] -= h;
                    let pp = pk1_stress(&fp, K, G).unwrap();
                    let pm = pk1_stress(&fm, K, G).unwrap();
                    for i in 0..3 {
                        for j in 0..3 {
                            let fd = (pp[(i, j)] - pm[(i, j)]) / (2.0 * h);
                            assert_relative_eq!(
                                a[i][j][k][l],
                                fd,
                                epsilon = 1e-6,
                                max_relative = 1e-5
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn second_derivative_matches_tangent_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        for _ in 0..5 {
            let f = random_f(&mut rng);
            let d = pk1_second_derivative(&f, K, G).unwrap();
            for m in 0..3 {
                for n in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(m, n)] += h;
                    fm[(m, n)] -= h;
                    let ap = pk1_tangent(&fp, K, G).unwrap();
                    let am = pk1_tangent(&fm, K, G).unwrap();
                    for i in 0..3 {
                        for j in 0..3 {
                            for k in 0..3 {
                                for l in 0..3 {
                                    let fd = (ap[i][j][k][l] - am[i][j][k][l]) / (2.0 * h);
                                    assert_relative_eq!(
                                        d[i][j][k][l][m][n],
                                        fd,
                                        epsilon = 1e-5,
                                        max_relative = 1e-4
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn plane_strain_embedding_has_unit_out_of_plane_stretch() {
        let gu = Matrix2::new(0.1, -0.2, 0.3, 0.05);
        let f = plane_strain_f(&gu).unwrap();
        assert_eq!(f[(2, 2)], 1.0);
        assert_eq!(f[(0, 2)], 0.0);
        assert_eq!(f[(2, 0)], 0.0);
        assert_eq!(f[(0, 0)], 1.1);
        assert_eq!(f[(1, 0)], 0.3);
        assert!(plane_strain_f(&Matrix2::new(f64::INFINITY, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn hessian_energy_counts_every_entry_once() {
        let mut h: DispHessian = [[[0.0; 2]; 2]; 2];
        h[1][0][1] = 1.0;
        assert_eq!(higher_order_energy(&h), 0.5);
        // u_x = X1^2 has H[0][0][0] = 2 and energy 2.
        let mut h2: DispHessian = [[[0.0; 2]; 2]; 2];
        h2[0][0][0] = 2.0;
        assert_eq!(higher_order_energy(&h2), 2.0);
    }

    #[test]
    fn reg_weight_scales_and_gates() {
        // Fully void point of the path-control scenario:
        // 1e-6 * 52^2 * 5/3 * exp(-5) = 3.0365681142545e-5.
        let w = reg_weight(-10.0, 1.0, 1e-6, 52.0, 5.0 / 3.0, DEFAULT_CHI_VOID);
        assert_relative_eq!(w, 3.0365681142545e-5, max_relative = 1e-9);
        // Crushed void: gate approaches 1.
        let w0 = reg_weight(-10.0, 0.0, 1e-6, 52.0, 5.0 / 3.0, DEFAULT_CHI_VOID);
        assert_relative_eq!(w0, 1e-6 * 52.0 * 52.0 * 5.0 / 3.0, max_relative = 1e-12);
        // Solid material switches the term off entirely.
        assert_eq!(reg_weight(40.0, 1.0, 1e-6, 52.0, 5.0 / 3.0, DEFAULT_CHI_VOID), 0.0);
        // Inverted states still produce a finite weight.
        assert!(reg_weight(-10.0, -1e6, 1e-6, 52.0, 5.0 / 3.0, DEFAULT_CHI_VOID).is_finite());
    }

    #[test]
    fn sigmoid_density_reference_points() {
        assert_eq!(sigmoid_density(0.0), 0.5);
        assert_relative_eq!(sigmoid_density(-5.0), 1.0 / (1.0 + 5f64.exp()), max_relative = 1e-15);
        assert!(sigmoid_density(800.0) <= 1.0);
        assert!(sigmoid_density(-800.0) >= 0.0);
        assert!(sigmoid_density(-800.0) < 1e-300 || sigmoid_density(-800.0) == 0.0);
        assert_relative_eq!(
            sigmoid_density(-1.3862943611198906),
            0.2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn transition_derivatives_match_differences() {
        // Sweep stays inside |chi| <= 7: further out the functions flatten to
        // machine precision and central differences lose all their digits.
        let h = 1e-6;
        for &chi in &[-7.0, -5.5, -5.2, -3.0, -1.0, 0.0, 0.7, 4.0, 6.0] {
            let fd = (sigmoid_density(chi + h) - sigmoid_density(chi - h)) / (2.0 * h);
            assert_relative_eq!(sigmoid_density_d(chi), fd, epsilon = 1e-10, max_relative = 1e-8);
            let fd2 = (sigmoid_density_d(chi + h) - sigmoid_density_d(chi - h)) / (2.0 * h);
            assert_relative_eq!(sigmoid_density_dd(chi), fd2, epsilon = 1e-9, max_relative = 1e-7);

            let fd = (ramp_stiffness(chi + h, 8.0, 1e-12) - ramp_stiffness(chi - h, 8.0, 1e-12))
                / (2.0 * h);
            assert_relative_eq!(
                ramp_stiffness_d(chi, 8.0, 1e-12),
                fd,
                epsilon = 1e-10,
                max_relative = 1e-7
            );
            let fd2 = (ramp_stiffness_d(chi + h, 8.0, 1e-12)
                - ramp_stiffness_d(chi - h, 8.0, 1e-12))
                / (2.0 * h);
            assert_relative_eq!(
                ramp_stiffness_dd(chi, 8.0, 1e-12),
                fd2,
                epsilon = 1e-9,
                max_relative = 1e-6
            );

            let fd = (void_indicator(chi + h, -5.0) - void_indicator(chi - h, -5.0)) / (2.0 * h);
            assert_relative_eq!(void_indicator_d(chi, -5.0), fd, epsilon = 1e-9, max_relative = 1e-7);
            let fd2 =
                (void_indicator_d(chi + h, -5.0) - void_indicator_d(chi - h, -5.0)) / (2.0 * h);
            assert_relative_eq!(
                void_indicator_dd(chi, -5.0),
                fd2,
                epsilon = 1e-8,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn ramp_reference_points() {
        assert_relative_eq!(ramp_stiffness(0.0, 8.0, 0.0), 0.1, max_relative = 1e-15);
        assert_relative_eq!(ramp_stiffness(100.0, 8.0, 1e-12), 1.0, max_relative = 1e-12);
        assert_relative_eq!(ramp_stiffness(-100.0, 8.0, 1e-12), 1e-12, max_relative = 1e-6);
        // Monotone in chi.
        let mut last = 0.0;
        for i in 0..200 {
            let chi = -50.0 + i as f64 * 0.5;
            let e = ramp_stiffness(chi, 8.0, 1e-12);
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn void_indicator_transition_band() {
        assert_eq!(void_indicator(-5.0, -5.0), 0.0);
        assert_eq!(void_indicator(-4.0, -5.0), 0.0);
        assert_eq!(void_indicator(40.0, -5.0), 0.0);
        assert_eq!(void_indicator(-6.0, -5.0), 1.0);
        assert_eq!(void_indicator(-40.0, -5.0), 1.0);
        assert_relative_eq!(void_indicator(-5.5, -5.0), 0.5, max_relative = 1e-15);
        // C1 at the junctions: slope tends to zero.
        assert_abs_diff_eq!(void_indicator_d(-5.0 + 1e-9, -5.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(void_indicator_d(-6.0 + 1e-9, -5.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropy_of_energy_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let f = random_f(&mut rng);
            let angle = rng.random_range(-3.0..3.0);
            let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            ));
            let q = nalgebra::Rotation3::from_axis_angle(&axis, angle);
            let rotated = q.matrix() * f;
            assert_relative_eq!(
                neo_hookean_energy(&rotated, K, G).unwrap(),
                neo_hookean_energy(&f, K, G).unwrap(),
                max_relative = 1e-10
            );
        }
    }
}
