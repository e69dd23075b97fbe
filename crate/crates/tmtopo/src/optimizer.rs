//! Monolithic design optimization: state, adjoint, design, and constraint
//! variables advance together through one semismooth Newton iteration on
//! the full stationarity system, damped by a pseudo-transient term whose
//! step grows as the iteration approaches a solution.
//!
//! Unknown ordering: for each control point `j` the blocks
//! `[u^j, q^j, lam_u^j, lam_q^j]`, followed by the design field `chi`, the
//! mean density `rho_bar`, and the two constraint multipliers
//! `[mu_avg, mu_max]`.

use crate::equilibrium::{
    advance, assemble_equilibrium, gp_deformation, hess_contract, level_to_u_d, newton_solve,
    AdvanceOpts, NewtonOpts, SolveError,
};
use crate::material::{
    compression_gate, pk1_second_derivative, pk1_stress, pk1_tangent, plane_strain_f,
    ramp_stiffness, ramp_stiffness_d, ramp_stiffness_dd, sigmoid_density, sigmoid_density_d,
    sigmoid_density_dd, void_indicator, void_indicator_d, void_indicator_dd, DispHessian,
};
use crate::fem::space::DofTarget;
use crate::model::{integrate_design, nodal_at_gp, DesignField, Model};
use crate::sparse::{factor_solve, TripletMatrix};
use nalgebra::Matrix2;

/// Slope of the density interpolation at `chi = 0`; sets the scale of the
/// interface width constraint.
const DENSITY_SLOPE_AT_ZERO: f64 = 0.25;

/// Gradients below this magnitude count as flat when normalizing the
/// interface direction.
const GRAD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct ControlPoint {
    /// Prescribed mean displacement of the driven region.
    pub u_d: f64,
    /// Objective weight on the traction mismatch.
    pub weight: f64,
    /// Target mean traction.
    pub q_target: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerParams {
    pub control_points: Vec<ControlPoint>,
    /// Upper bound on the mean density.
    pub rho_max: f64,
    /// Stiffness of the mean-density saddle regularization.
    pub k_rho: f64,
    /// Interface penalty scale, exponent, and width.
    pub interface_k: f64,
    pub interface_n: f64,
    pub interface_l: f64,
    /// Gradient length scale of the pseudo-transient term.
    pub transient_l: f64,
}

#[derive(Debug, Clone)]
pub struct CpState {
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    pub lam_u: Vec<f64>,
    pub lam_q: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub cps: Vec<CpState>,
    pub chi: Vec<f64>,
    pub chi_old: Vec<f64>,
    pub rho_bar: f64,
    pub mu_avg: f64,
    pub mu_max: f64,
}

/// Offsets of the blocks inside the flat unknown vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n_u: usize,
    pub n_q: usize,
    pub n_chi: usize,
    pub m: usize,
}

impl Layout {
    pub fn new(model: &Model, m: usize) -> Self {
        Layout {
            n_u: model.n_u(),
            n_q: model.n_q(),
            n_chi: model.n_chi(),
            m,
        }
    }

    #[inline]
    fn stride(&self) -> usize {
        2 * (self.n_u + self.n_q)
    }

    #[inline]
    pub fn u(&self, j: usize) -> usize {
        j * self.stride()
    }

    #[inline]
    pub fn q(&self, j: usize) -> usize {
        self.u(j) + self.n_u
    }

    #[inline]
    pub fn lam_u(&self, j: usize) -> usize {
        self.q(j) + self.n_q
    }

    #[inline]
    pub fn lam_q(&self, j: usize) -> usize {
        self.lam_u(j) + self.n_u
    }

    #[inline]
    pub fn chi(&self) -> usize {
        self.m * self.stride()
    }

    #[inline]
    pub fn rho_bar(&self) -> usize {
        self.chi() + self.n_chi
    }

    #[inline]
    pub fn mu_avg(&self) -> usize {
        self.rho_bar() + 1
    }

    #[inline]
    pub fn mu_max(&self) -> usize {
        self.rho_bar() + 2
    }

    pub fn total(&self) -> usize {
        self.rho_bar() + 3
    }
}

impl OptState {
    /// Accept the current design as the reference the transient term damps
    /// against.
    pub fn accept_design(&mut self) {
        self.chi_old.copy_from_slice(&self.chi);
    }

    pub fn apply_step(&mut self, lay: &Layout, step: &[f64], scale: f64) {
        for (j, cp) in self.cps.iter_mut().enumerate() {
            for (i, v) in cp.u.iter_mut().enumerate() {
                *v += scale * step[lay.u(j) + i];
            }
            for (i, v) in cp.q.iter_mut().enumerate() {
                *v += scale * step[lay.q(j) + i];
            }
            for (i, v) in cp.lam_u.iter_mut().enumerate() {
                *v += scale * step[lay.lam_u(j) + i];
            }
            for (i, v) in cp.lam_q.iter_mut().enumerate() {
                *v += scale * step[lay.lam_q(j) + i];
            }
        }
        for (i, v) in self.chi.iter_mut().enumerate() {
            *v += scale * step[lay.chi() + i];
        }
        self.rho_bar += scale * step[lay.rho_bar()];
        self.mu_avg += scale * step[lay.mu_avg()];
        self.mu_max += scale * step[lay.mu_max()];
    }
}

/// `H(a) : H(b)` over both components with symmetric second-derivative
/// storage.
#[inline]
fn hess_pair(a: &DispHessian, b: &DispHessian) -> f64 {
    let mut acc = 0.0;
    for i in 0..2 {
        acc += a[i][0][0] * b[i][0][0] + 2.0 * a[i][0][1] * b[i][0][1] + a[i][1][1] * b[i][1][1];
    }
    acc
}

/// Interface slack `g` at a quadrature point, `< 0` where the design
/// transition is wide enough.
#[inline]
fn interface_slack(grad_norm: f64, l_i: f64) -> f64 {
    DENSITY_SLOPE_AT_ZERO * grad_norm * l_i / 2.0 - 1.0
}

/// Objective terms and constraint measures of a design/state pair.
#[derive(Debug, Clone)]
pub struct Metrics {
    /// Traction mismatch term per control point.
    pub c_q: Vec<f64>,
    /// Interface penalty.
    pub c_interface: f64,
    /// Full design objective: interface penalty, mean-density coupling, and
    /// the augmented volume-cap terms.
    pub c_chi: f64,
    /// Domain-mean density.
    pub volume_fraction: f64,
    /// Largest interface slack over all quadrature points.
    pub max_slack: f64,
    /// Fraction of the domain area where the slack exceeds 0.1.
    pub violation_fraction: f64,
}

/// Traction mismatch of one control point: the squared deviation integrated
/// over the driven boundary (the traction is constant there, so the integral
/// is the region length `gamma`).
fn mismatch(pt: &ControlPoint, q: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    for (c, &qc) in q.iter().enumerate() {
        let target = if c == 0 { pt.q_target } else { 0.0 };
        acc += pt.weight * gamma * (qc - target) * (qc - target);
    }
    acc
}

/// Interface penalty integral with slack diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceSummary {
    /// Penalty integral over the domain.
    pub penalty: f64,
    /// Largest slack over all quadrature points.
    pub max_slack: f64,
    /// Area of the region where the slack exceeds 0.1.
    pub violating_area: f64,
}

pub fn interface_penalty(model: &Model, params: &OptimizerParams, chi: &[f64]) -> InterfaceSummary {
    let mut penalty = 0.0;
    let mut max_slack = f64::NEG_INFINITY;
    let mut violating_area = 0.0;
    for e in 0..model.mesh.n_elements() {
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (_, gchi) = nodal_at_gp(model, chi, e, g);
            let t = (gchi[0] * gchi[0] + gchi[1] * gchi[1]).sqrt();
            let slack = interface_slack(t, params.interface_l);
            max_slack = max_slack.max(slack);
            if slack > 0.0 {
                penalty += gp.weight * params.interface_k * slack.powf(params.interface_n);
            }
            if slack > 0.1 {
                violating_area += gp.weight;
            }
        }
    }
    InterfaceSummary { penalty, max_slack, violating_area }
}

pub fn metrics(model: &Model, params: &OptimizerParams, state: &OptState) -> Metrics {
    let gamma = model.driven.gamma;
    let c_q = state
        .cps
        .iter()
        .zip(&params.control_points)
        .map(|(cp, pt)| mismatch(pt, &cp.q, gamma))
        .collect();
    let iface = interface_penalty(model, params, &state.chi);
    let mut volume = 0.0;
    for e in 0..model.mesh.n_elements() {
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (chi, _) = nodal_at_gp(model, &state.chi, e, g);
            volume += gp.weight * sigmoid_density(chi);
        }
    }
    let area = model.mesh.area();
    let x = state.rho_bar / params.rho_max - 1.0 - state.mu_max / params.k_rho;
    let cap = x.max(0.0);
    let c_chi = iface.penalty
        + state.mu_avg * (volume - state.rho_bar * area)
        + area * (0.5 * params.k_rho * cap * cap - state.mu_max * state.mu_max / (2.0 * params.k_rho));
    Metrics {
        c_q,
        c_interface: iface.penalty,
        c_chi,
        volume_fraction: volume / area,
        max_slack: iface.max_slack,
        violation_fraction: iface.violating_area / area,
    }
}

/// Total objective: traction mismatch over all control points plus the
/// interface penalty.
pub fn objective(model: &Model, params: &OptimizerParams, state: &OptState) -> f64 {
    let m = metrics(model, params, state);
    m.c_q.iter().sum::<f64>() + m.c_interface
}

/// Residual and optional Jacobian of the full stationarity system.
///
/// Row blocks: per control point the equilibrium rows (at `u`, `q` offsets)
/// and the adjoint rows (at `lam_u`, `lam_q` offsets); then design
/// optimality, mean-density, volume-constraint, and density-cap rows.
pub fn assemble_coupled(
    model: &Model,
    params: &OptimizerParams,
    state: &OptState,
    dt: f64,
    want_matrix: bool,
) -> Result<(Vec<f64>, Option<TripletMatrix>), SolveError> {
    let m = params.control_points.len();
    let lay = Layout::new(model, m);
    let n = lay.total();
    let mp = &model.material;
    let k_r = mp.k_r();
    let mut r = vec![0.0; n];
    let mut mat = want_matrix.then(|| TripletMatrix::new(n));

    let u_full: Vec<Vec<f64>> = state.cps.iter().map(|cp| model.u_space.scattered(&cp.u)).collect();
    let l_full: Vec<Vec<f64>> = state
        .cps
        .iter()
        .map(|cp| model.u_space.scattered(&cp.lam_u))
        .collect();

    // Element-constant design mass / gradient matrices for the transient
    // term (every element has the same geometry).
    let mut m_loc = [[0.0f64; 4]; 4];
    let mut g_loc = [[0.0f64; 4]; 4];
    for gp in &model.table.gps {
        for b in 0..4 {
            for c in 0..4 {
                m_loc[b][c] += gp.weight * gp.n4[b] * gp.n4[c];
                g_loc[b][c] += gp.weight * (gp.g4[b][0] * gp.g4[c][0] + gp.g4[b][1] * gp.g4[c][1]);
            }
        }
    }
    let lt2 = params.transient_l * params.transient_l;
    let inv_dt = if dt.is_finite() { 1.0 / dt } else { 0.0 };
    let ki = params.interface_k;
    let ni = params.interface_n;
    let ci = DENSITY_SLOPE_AT_ZERO * params.interface_l / 2.0;

    // Per-element scratch, reused across control points.
    let mut k_uu = [[0.0f64; 16]; 16];
    let mut w_uu = [[0.0f64; 16]; 16];
    let mut k_uchi = [[0.0f64; 4]; 16];
    let mut k_lchi = [[0.0f64; 4]; 16];

    for e in 0..model.mesh.n_elements() {
        let dofs = &model.elem_udofs[e];
        let q4 = &model.elem_q4[e];
        let mut r_chi = [0.0f64; 4];
        let mut k_chichi = [[0.0f64; 4]; 4];
        let mut k_chi_mu = [0.0f64; 4];
        let mut r_vol = 0.0; // contribution to the volume-constraint row

        // Design-only terms: interface penalty, volume coupling, transient.
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (chi, gchi) = nodal_at_gp(model, &state.chi, e, g);
            let rho_d = sigmoid_density_d(chi);
            r_vol += gp.weight * (sigmoid_density(chi) - state.rho_bar);
            for b in 0..4 {
                r_chi[b] += gp.weight * state.mu_avg * rho_d * gp.n4[b];
                k_chi_mu[b] += gp.weight * rho_d * gp.n4[b];
            }
            if want_matrix {
                let rho_dd = sigmoid_density_dd(chi);
                for b in 0..4 {
                    for c in 0..4 {
                        k_chichi[b][c] +=
                            gp.weight * state.mu_avg * rho_dd * gp.n4[b] * gp.n4[c];
                    }
                }
            }

            let t = (gchi[0] * gchi[0] + gchi[1] * gchi[1]).sqrt();
            if t > GRAD_GUARD {
                let slack = interface_slack(t, params.interface_l);
                if slack > 0.0 {
                    let pw1 = slack.powf(ni - 1.0);
                    let dots: Vec<f64> = (0..4)
                        .map(|b| (gchi[0] * gp.g4[b][0] + gchi[1] * gp.g4[b][1]) / t)
                        .collect();
                    for b in 0..4 {
                        r_chi[b] += gp.weight * ki * ni * pw1 * ci * dots[b];
                    }
                    if want_matrix {
                        let pw2 = slack.powf(ni - 2.0);
                        for b in 0..4 {
                            for c in 0..4 {
                                let gg = gp.g4[b][0] * gp.g4[c][0] + gp.g4[b][1] * gp.g4[c][1];
                                let v = ni * (ni - 1.0) * pw2 * ci * ci * dots[b] * dots[c]
                                    + ni * pw1 * ci * (gg / t - dots[b] * dots[c] / t);
                                k_chichi[b][c] += gp.weight * ki * v;
                            }
                        }
                    }
                }
            }

            // Pseudo-transient damping toward the previous accepted design.
            let mut dval = 0.0;
            let mut dgrad = [0.0, 0.0];
            for (b, &node) in q4.iter().enumerate() {
                let d = state.chi[node] - state.chi_old[node];
                dval += gp.n4[b] * d;
                dgrad[0] += gp.g4[b][0] * d;
                dgrad[1] += gp.g4[b][1] * d;
            }
            for b in 0..4 {
                r_chi[b] += gp.weight
                    * inv_dt
                    * (gp.n4[b] * dval + lt2 * (gp.g4[b][0] * dgrad[0] + gp.g4[b][1] * dgrad[1]));
            }
        }
        if want_matrix && inv_dt != 0.0 {
            for b in 0..4 {
                for c in 0..4 {
                    k_chichi[b][c] += inv_dt * (m_loc[b][c] + lt2 * g_loc[b][c]);
                }
            }
        }

        // State and adjoint terms, one pass per control point.
        for j in 0..m {
            let mut r_u = [0.0f64; 16];
            let mut r_l = [0.0f64; 16];
            let mut r_chi_j = [0.0f64; 4];
            if want_matrix {
                k_uu = [[0.0; 16]; 16];
                w_uu = [[0.0; 16]; 16];
                k_uchi = [[0.0; 4]; 16];
                k_lchi = [[0.0; 4]; 16];
            }
            for (g, gp) in model.table.gps.iter().enumerate() {
                let (du, hu) = gp_deformation(model, e, g, &u_full[j]);
                let (dl, hl) = gp_deformation(model, e, g, &l_full[j]);
                let f2 = Matrix2::identity() + du;
                let det = f2.determinant();
                if !det.is_finite() || det <= 0.0 {
                    return Err(SolveError::Degenerate { element: e, det });
                }
                let finv_t = f2
                    .try_inverse()
                    .ok_or(SolveError::Degenerate { element: e, det })?
                    .transpose();
                let f3 =
                    plane_strain_f(&du).map_err(|_| SolveError::Degenerate { element: e, det })?;
                let p = pk1_stress(&f3, mp.bulk, mp.shear)
                    .map_err(|_| SolveError::Degenerate { element: e, det })?;
                let a4 = pk1_tangent(&f3, mp.bulk, mp.shear)
                    .map_err(|_| SolveError::Degenerate { element: e, det })?;

                let (chi, _) = nodal_at_gp(model, &state.chi, e, g);
                let e_val = ramp_stiffness(chi, mp.ramp_p, mp.e0);
                let e_d = ramp_stiffness_d(chi, mp.ramp_p, mp.e0);
                let gate = compression_gate(det);
                let iv = void_indicator(chi, mp.chi_void);
                let iv_d = void_indicator_d(chi, mp.chi_void);
                let w_reg = k_r * iv * gate;
                let wd_reg = k_r * iv_d * gate; // d(weight)/d(chi)

                // Adjoint gradient contracted with the stress tangent on its
                // first index pair: T[i][l] = sum_{m,jj} A[m][jj][i][l] dl[m][jj].
                let mut t_mat = [[0.0f64; 2]; 2];
                for i in 0..2 {
                    for l in 0..2 {
                        let mut acc = 0.0;
                        for mm in 0..2 {
                            for jj in 0..2 {
                                acc += a4[mm][jj][i][l] * dl[(mm, jj)];
                            }
                        }
                        t_mat[i][l] = acc;
                    }
                }
                let p_dot_dl = (0..2)
                    .map(|i| (0..2).map(|jj| p[(i, jj)] * dl[(i, jj)]).sum::<f64>())
                    .sum::<f64>();
                let s_hh = hess_pair(&hu, &hl);

                // Pulled-back basis gradients c_a = F^{-T} grad N_a.
                let mut cvec = [[0.0f64; 2]; 8];
                for a in 0..8 {
                    for i in 0..2 {
                        cvec[a][i] = finv_t[(i, 0)] * gp.g8[a][0] + finv_t[(i, 1)] * gp.g8[a][1];
                    }
                }

                for a in 0..8 {
                    let ga = gp.g8[a];
                    let ha = gp.h8[a];
                    for i in 0..2 {
                        r_u[2 * a + i] += gp.weight
                            * (e_val * (p[(i, 0)] * ga[0] + p[(i, 1)] * ga[1])
                                + w_reg * hess_contract(&hu, i, &ha));
                        r_l[2 * a + i] += gp.weight
                            * (e_val * (t_mat[i][0] * ga[0] + t_mat[i][1] * ga[1])
                                + w_reg * hess_contract(&hl, i, &ha)
                                - 5.0 * w_reg * det * cvec[a][i] * s_hh);
                    }
                }
                for b in 0..4 {
                    r_chi_j[b] +=
                        gp.weight * gp.n4[b] * (e_d * p_dot_dl + wd_reg * s_hh);
                }

                if !want_matrix {
                    continue;
                }
                let d6 = pk1_second_derivative(&f3, mp.bulk, mp.shear)
                    .map_err(|_| SolveError::Degenerate { element: e, det })?;
                // V[i][l][k][nn] = sum_{m,jj} D[m][jj][i][l][k][nn] dl[m][jj]
                let mut v6 = [[[[0.0f64; 2]; 2]; 2]; 2];
                for i in 0..2 {
                    for l in 0..2 {
                        for k in 0..2 {
                            for nn in 0..2 {
                                let mut acc = 0.0;
                                for mm in 0..2 {
                                    for jj in 0..2 {
                                        acc += d6[mm][jj][i][l][k][nn] * dl[(mm, jj)];
                                    }
                                }
                                v6[i][l][k][nn] = acc;
                            }
                        }
                    }
                }
                let e_dd = ramp_stiffness_dd(chi, mp.ramp_p, mp.e0);
                let iv_dd = void_indicator_dd(chi, mp.chi_void);
                let wdd_reg = k_r * iv_dd * gate;
                let beta = w_reg * det;

                let mut hcu = [[0.0f64; 2]; 8]; // H(u) : H(N_a e_i)
                let mut hcl = [[0.0f64; 2]; 8]; // H(lam) : H(N_a e_i)
                for a in 0..8 {
                    for i in 0..2 {
                        hcu[a][i] = hess_contract(&hu, i, &gp.h8[a]);
                        hcl[a][i] = hess_contract(&hl, i, &gp.h8[a]);
                    }
                }

                for a in 0..8 {
                    let ga = gp.g8[a];
                    let ha = gp.h8[a];
                    for b in 0..8 {
                        let gb = gp.g8[b];
                        let hb = gp.h8[b];
                        let hess_ab = ha[0] * hb[0] + 2.0 * ha[1] * hb[1] + ha[2] * hb[2];
                        for i in 0..2 {
                            for k in 0..2 {
                                // Equilibrium tangent.
                                let mut v = 0.0;
                                for jj in 0..2 {
                                    for ll in 0..2 {
                                        v += a4[i][jj][k][ll] * ga[jj] * gb[ll];
                                    }
                                }
                                v *= e_val;
                                if w_reg != 0.0 {
                                    if i == k {
                                        v += w_reg * hess_ab;
                                    }
                                    v -= 5.0 * beta * cvec[b][k] * hcu[a][i];
                                }
                                k_uu[2 * a + i][2 * b + k] += gp.weight * v;

                                // Second variation against the adjoint.
                                let mut w = 0.0;
                                for ll in 0..2 {
                                    for nn in 0..2 {
                                        w += v6[i][ll][k][nn] * ga[ll] * gb[nn];
                                    }
                                }
                                w *= e_val;
                                if w_reg != 0.0 {
                                    w -= 5.0 * beta * cvec[b][k] * hcl[a][i];
                                    w -= 5.0 * w_reg * det * (1.0 - 5.0 * det)
                                        * s_hh
                                        * cvec[a][i]
                                        * cvec[b][k];
                                    w += 5.0 * beta * s_hh * cvec[b][i] * cvec[a][k];
                                    w -= 5.0 * beta * cvec[a][i] * hcl[b][k];
                                }
                                w_uu[2 * a + i][2 * b + k] += gp.weight * w;
                            }
                        }
                    }
                    // Design couplings of the state and adjoint rows.
                    for i in 0..2 {
                        let su = e_d * (p[(i, 0)] * ga[0] + p[(i, 1)] * ga[1])
                            + wd_reg * hcu[a][i];
                        let sl = e_d * (t_mat[i][0] * ga[0] + t_mat[i][1] * ga[1])
                            + wd_reg * (hcl[a][i] - 5.0 * det * cvec[a][i] * s_hh);
                        for b in 0..4 {
                            k_uchi[2 * a + i][b] += gp.weight * gp.n4[b] * su;
                            k_lchi[2 * a + i][b] += gp.weight * gp.n4[b] * sl;
                        }
                    }
                }
                for b in 0..4 {
                    for c in 0..4 {
                        k_chichi[b][c] += gp.weight
                            * gp.n4[b]
                            * gp.n4[c]
                            * (e_dd * p_dot_dl + wdd_reg * s_hh);
                    }
                }
            }

            // Scatter the control-point blocks.
            for (la, &da) in dofs.iter().enumerate() {
                let DofTarget::Free(ia) = da else { continue };
                r[lay.u(j) + ia] += r_u[la];
                r[lay.lam_u(j) + ia] += r_l[la];
                if let Some(mat) = mat.as_mut() {
                    for (lb, &db) in dofs.iter().enumerate() {
                        if let DofTarget::Free(ib) = db {
                            mat.push(lay.u(j) + ia, lay.u(j) + ib, k_uu[la][lb]);
                            // Adjoint rows carry the transposed tangent.
                            mat.push(lay.lam_u(j) + ia, lay.lam_u(j) + ib, k_uu[lb][la]);
                            mat.push(lay.lam_u(j) + ia, lay.u(j) + ib, w_uu[la][lb]);
                        }
                    }
                    for (b, &node) in q4.iter().enumerate() {
                        mat.push(lay.u(j) + ia, lay.chi() + node, k_uchi[la][b]);
                        mat.push(lay.lam_u(j) + ia, lay.chi() + node, k_lchi[la][b]);
                        mat.push(lay.chi() + node, lay.lam_u(j) + ia, k_uchi[la][b]);
                        mat.push(lay.chi() + node, lay.u(j) + ia, k_lchi[la][b]);
                    }
                }
            }
            for (b, &node) in q4.iter().enumerate() {
                r[lay.chi() + node] += r_chi_j[b];
            }
        }

        // Scatter the shared design rows.
        for (b, &node) in q4.iter().enumerate() {
            r[lay.chi() + node] += r_chi[b];
            if let Some(mat) = mat.as_mut() {
                for (c, &node_c) in q4.iter().enumerate() {
                    mat.push(lay.chi() + node, lay.chi() + node_c, k_chichi[b][c]);
                }
                mat.push(lay.chi() + node, lay.mu_avg(), k_chi_mu[b]);
                mat.push(lay.mu_avg(), lay.chi() + node, k_chi_mu[b]);
            }
        }
        r[lay.mu_avg()] += r_vol;
    }

    // Boundary couplings and the traction-target adjoint rows.
    for (c, bc) in model.driven.b.iter().enumerate() {
        for (j, (cp, pt)) in state.cps.iter().zip(&params.control_points).enumerate() {
            let u_d = level_to_u_d(model, pt.u_d);
            let mut bu = 0.0;
            let mut bl = 0.0;
            for (i, &bi) in bc.iter().enumerate() {
                if bi == 0.0 {
                    continue;
                }
                r[lay.u(j) + i] -= cp.q[c] * bi;
                r[lay.lam_u(j) + i] -= cp.lam_q[c] * bi;
                bu += bi * cp.u[i];
                bl += bi * cp.lam_u[i];
                if let Some(mat) = mat.as_mut() {
                    mat.push(lay.u(j) + i, lay.q(j) + c, -bi);
                    mat.push(lay.q(j) + c, lay.u(j) + i, -bi);
                    mat.push(lay.lam_u(j) + i, lay.lam_q(j) + c, -bi);
                    mat.push(lay.lam_q(j) + c, lay.lam_u(j) + i, -bi);
                }
            }
            r[lay.q(j) + c] = u_d[c] * model.driven.gamma - bu;
            let target = if c == 0 { pt.q_target } else { 0.0 };
            // Objective gradient of the boundary-integrated mismatch, hence
            // the region-length factor.
            let wq = 2.0 * pt.weight * model.driven.gamma;
            r[lay.lam_q(j) + c] = wq * (cp.q[c] - target) - bl;
            if let Some(mat) = mat.as_mut() {
                mat.push(lay.lam_q(j) + c, lay.q(j) + c, wq);
            }
        }
    }

    // Mean-density saddle rows. The kink of the cap is handled by the
    // active-set step function.
    let area = model.mesh.area();
    let x = state.rho_bar / params.rho_max - 1.0 - state.mu_max / params.k_rho;
    let active = x >= 0.0;
    let xp = if active { x } else { 0.0 };
    r[lay.rho_bar()] = area * (params.k_rho * xp / params.rho_max - state.mu_avg);
    r[lay.mu_max()] = area * (-xp - state.mu_max / params.k_rho);
    if let Some(mat) = mat.as_mut() {
        let s = if active { 1.0 } else { 0.0 };
        mat.push(
            lay.rho_bar(),
            lay.rho_bar(),
            area * params.k_rho * s / (params.rho_max * params.rho_max),
        );
        mat.push(lay.rho_bar(), lay.mu_max(), -area * s / params.rho_max);
        mat.push(lay.rho_bar(), lay.mu_avg(), -area);
        mat.push(lay.mu_avg(), lay.rho_bar(), -area);
        mat.push(lay.mu_max(), lay.rho_bar(), -area * s / params.rho_max);
        mat.push(lay.mu_max(), lay.mu_max(), area * (s - 1.0) / params.k_rho);
    }

    Ok((r, mat))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One damped design step: Newton on the coupled system at fixed `dt`.
/// Mutates `state`; the caller restores a saved copy on failure.
pub fn coupled_newton(
    model: &Model,
    params: &OptimizerParams,
    state: &mut OptState,
    dt: f64,
    opts: &NewtonOpts,
) -> Result<usize, SolveError> {
    let lay = Layout::new(model, params.control_points.len());
    let mut first = 0.0;
    let mut prev_norm = f64::INFINITY;
    let mut last: Option<(Vec<f64>, f64)> = None;
    let mut backtracks = 0;
    let mut pattern: Option<crate::sparse::PatternCache> = None;
    for it in 0..=opts.max_iter {
        let (r, mat) = assemble_coupled(model, params, state, dt, true)?;
        let norm = norm2(&r);
        if !norm.is_finite() {
            return Err(SolveError::Diverged { norm, first });
        }
        if it == 0 {
            first = norm;
        } else if norm <= (opts.rel_tol * first).max(opts.abs_tol) {
            return Ok(it);
        }
        // Retreat half of an update that made the residual worse; see the
        // matching logic in the equilibrium iteration.
        if norm > 1.0001 * prev_norm && backtracks < 5 {
            if let Some((step, applied)) = &mut last {
                backtracks += 1;
                let undo = 0.5 * *applied;
                *applied -= undo;
                state.apply_step(&lay, step, undo);
                continue;
            }
        }
        if norm > opts.div_factor * first.max(opts.abs_tol) {
            return Err(SolveError::Diverged { norm, first });
        }
        if it == opts.max_iter {
            return Err(SolveError::Stalled(opts.max_iter));
        }
        prev_norm = norm;
        backtracks = 0;
        let mat = mat.expect("assembled with matrix");
        if pattern.is_none() {
            pattern = Some(crate::sparse::analyze(&mat).map_err(SolveError::Linear)?);
        }
        let step = pattern
            .as_ref()
            .unwrap()
            .factor(&mat)
            .and_then(|f| f.solve(&r))
            .map_err(SolveError::Linear)?;
        // Keep every control-point state on the positive-volume side, as in
        // the pure equilibrium iteration.
        let mut scale = 1.0f64;
        for (j, cp) in state.cps.iter().enumerate() {
            let dir = &step[lay.u(j)..lay.u(j) + cp.u.len()];
            scale = scale.min(crate::equilibrium::feasible_fraction(
                model,
                &cp.u,
                dir,
                crate::equilibrium::StepGuard::Cushion,
            ));
        }
        state.apply_step(&lay, &step, -scale);
        last = Some((step, scale));
    }
    Err(SolveError::Stalled(opts.max_iter))
}

/// A single attempt of the damped design iteration. Abstract so the driver
/// logic can be exercised against scripted steppers.
pub trait DesignStep {
    type State: Clone;
    /// Try one step of size `dt`; `Ok` carries the iteration count.
    fn attempt(&mut self, state: &mut Self::State, dt: f64) -> Result<usize, SolveError>;
    /// Accept the current state as the new reference configuration.
    fn commit(&mut self, state: &mut Self::State);
}

#[derive(Debug, Clone, Copy)]
pub struct DriveOpts {
    pub dt0: f64,
    /// Stop (converged) once the step exceeds this.
    pub dt_max: f64,
    /// Stop (budget) after this many attempts, successful or not.
    pub max_iterations: usize,
    /// Grow the step after convergence in at most this many iterations.
    pub grow_iters: usize,
    /// Abort once rejection shrinks the step below this.
    pub dt_min: f64,
}

impl DriveOpts {
    /// Schedule starting at `dt0` with the underflow guard nine orders of
    /// magnitude below it.
    pub fn with_dt0(dt0: f64, dt_max: f64, max_iterations: usize) -> Self {
        DriveOpts {
            dt0,
            dt_max,
            max_iterations,
            grow_iters: 5,
            dt_min: dt0 * 1e-9,
        }
    }
}

impl Default for DriveOpts {
    fn default() -> Self {
        DriveOpts::with_dt0(1.0, 1e6, 400)
    }
}

#[derive(Debug, Clone)]
pub struct DriveEvent {
    /// 1-based attempt counter.
    pub iteration: usize,
    /// Accumulated pseudo-time after this attempt (unchanged on rejection).
    pub t: f64,
    pub dt: f64,
    /// Newton iterations on success, error text on rejection.
    pub outcome: Result<usize, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveStop {
    /// Step size exceeded `dt_max`: the undamped system converged.
    StepConverged,
    /// Attempt budget exhausted.
    IterationLimit,
    /// Rejections shrank the step below `dt_min`.
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct DriveReport {
    pub events: Vec<DriveEvent>,
    pub stop: DriveStop,
    pub final_dt: f64,
}

/// Pseudo-transient continuation: grow the step quickly while Newton stays
/// cheap, back off hard when a step is rejected.
pub fn adaptive_drive<S: DesignStep>(
    stepper: &mut S,
    state: &mut S::State,
    opts: &DriveOpts,
    mut on_accept: impl FnMut(&S::State, &DriveEvent),
) -> Result<DriveReport, SolveError> {
    let mut dt = opts.dt0;
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut iteration = 0;
    let stop = loop {
        if dt > opts.dt_max {
            break DriveStop::StepConverged;
        }
        if iteration >= opts.max_iterations {
            break DriveStop::IterationLimit;
        }
        iteration += 1;
        let saved = state.clone();
        match stepper.attempt(state, dt) {
            Ok(iters) => {
                stepper.commit(state);
                t += dt;
                let event = DriveEvent {
                    iteration,
                    t,
                    dt,
                    outcome: Ok(iters),
                };
                on_accept(state, &event);
                events.push(event);
                if iters <= opts.grow_iters {
                    dt *= 2.0;
                }
            }
            Err(e) if e.is_retryable() => {
                *state = saved;
                events.push(DriveEvent {
                    iteration,
                    t,
                    dt,
                    outcome: Err(e.to_string()),
                });
                dt /= 4.0;
                if dt < opts.dt_min {
                    break DriveStop::StepUnderflow;
                }
            }
            Err(e) => return Err(e),
        }
    };
    Ok(DriveReport {
        events,
        stop,
        final_dt: dt,
    })
}

/// The production stepper: coupled Newton with a small iteration cap so the
/// driver learns about difficulty quickly.
pub struct CoupledNewton<'a> {
    pub model: &'a Model,
    pub params: &'a OptimizerParams,
    pub newton: NewtonOpts,
}

impl<'a> CoupledNewton<'a> {
    pub fn new(model: &'a Model, params: &'a OptimizerParams) -> Self {
        CoupledNewton {
            model,
            params,
            newton: NewtonOpts {
                max_iter: 7,
                ..NewtonOpts::default()
            },
        }
    }
}

impl DesignStep for CoupledNewton<'_> {
    type State = OptState;

    fn attempt(&mut self, state: &mut OptState, dt: f64) -> Result<usize, SolveError> {
        coupled_newton(self.model, self.params, state, dt, &self.newton)
    }

    fn commit(&mut self, state: &mut OptState) {
        state.accept_design();
    }
}

/// Starting point of the damped iteration: equilibrium pre-solves control
/// point by control point, adjoint fields from linear solves with the
/// transposed tangent, mean density matching the design, and zero
/// constraint multipliers.
pub fn initialize(
    model: &Model,
    params: &OptimizerParams,
    chi: Vec<f64>,
) -> Result<OptState, SolveError> {
    assert_eq!(chi.len(), model.n_chi());
    let design = DesignField::Nodal(chi.clone());
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut level = 0.0;
    let mut cps = Vec::with_capacity(params.control_points.len());
    let opts = AdvanceOpts::default();
    for pt in &params.control_points {
        let from = level_to_u_d(model, level);
        let to = level_to_u_d(model, pt.u_d);
        advance(model, &design, &mut u, &mut q, &from, &to, &opts)?;
        level = pt.u_d;
        cps.push(CpState {
            u: u.clone(),
            q: q.clone(),
            lam_u: Vec::new(),
            lam_q: Vec::new(),
        });
    }
    for (cp, pt) in cps.iter_mut().zip(&params.control_points) {
        let u_d = level_to_u_d(model, pt.u_d);
        let asm = assemble_equilibrium(model, &design, &cp.u, &cp.q, &u_d, true)?;
        let mat = asm.matrix.expect("assembled with matrix").transposed();
        let mut rhs = vec![0.0; model.n_u() + model.n_q()];
        for (c, &qc) in cp.q.iter().enumerate() {
            let target = if c == 0 { pt.q_target } else { 0.0 };
            rhs[model.n_u() + c] = -2.0 * pt.weight * model.driven.gamma * (qc - target);
        }
        let sol = factor_solve(&mat, &rhs).map_err(SolveError::Linear)?;
        cp.lam_u = sol[..model.n_u()].to_vec();
        cp.lam_q = sol[model.n_u()..].to_vec();
    }
    let rho_bar = integrate_design(model, &design, sigmoid_density) / model.mesh.area();
    Ok(OptState {
        cps,
        chi: chi.clone(),
        chi_old: chi,
        rho_bar,
        mu_avg: 0.0,
        mu_max: 0.0,
    })
}

/// Norm of the undamped stationarity residual; small once the damped
/// iteration has genuinely converged.
pub fn optimality_residual(
    model: &Model,
    params: &OptimizerParams,
    state: &OptState,
) -> Result<f64, SolveError> {
    let (r, _) = assemble_coupled(model, params, state, f64::INFINITY, false)?;
    Ok(norm2(&r))
}

/// Design rows of the coupled residual in the undamped limit. With zero
/// volume multipliers (as right after [`initialize`]) this is the total
/// derivative of the objective with respect to each design DOF.
pub fn design_gradient(
    model: &Model,
    params: &OptimizerParams,
    state: &OptState,
) -> Result<Vec<f64>, SolveError> {
    let lay = Layout::new(model, params.control_points.len());
    let (r, _) = assemble_coupled(model, params, state, f64::INFINITY, false)?;
    Ok(r[lay.chi()..lay.chi() + lay.n_chi].to_vec())
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    /// Largest relative deviation, floored at a fraction of the gradient
    /// scale so near-zero components do not dominate.
    pub max_rel_err: f64,
    pub worst: usize,
}

/// Compare the adjoint design gradient against central differences of the
/// re-solved objective; `h` is the design perturbation per DOF.
pub fn check_gradient(
    model: &Model,
    params: &OptimizerParams,
    chi0: &[f64],
    h: f64,
) -> Result<GradientCheck, SolveError> {
    let base = initialize(model, params, chi0.to_vec())?;
    let analytic = design_gradient(model, params, &base)?;
    // Perturbation solves start from the unperturbed states, so the first
    // residual is already small; only the absolute tolerance matters and it
    // must sit well below the objective changes being measured.
    let newton = NewtonOpts {
        max_iter: 30,
        rel_tol: 1e-12,
        abs_tol: 1e-12,
        ..NewtonOpts::default()
    };
    let mut fd = vec![0.0; chi0.len()];
    for (b, slot) in fd.iter_mut().enumerate() {
        let mut vals = [0.0; 2];
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut chi = chi0.to_vec();
            chi[b] += sign * h;
            let design = DesignField::Nodal(chi.clone());
            let mut c = 0.0;
            for (cp, pt) in base.cps.iter().zip(&params.control_points) {
                let mut u = cp.u.clone();
                let mut q = cp.q.clone();
                let u_d = level_to_u_d(model, pt.u_d);
                newton_solve(model, &design, &mut u, &mut q, &u_d, &newton)?;
                c += mismatch(pt, &q, model.driven.gamma);
            }
            vals[s] = c + interface_penalty(model, params, &chi).penalty;
        }
        *slot = (vals[0] - vals[1]) / (2.0 * h);
    }
    let max_fd = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * max_fd).max(f64::MIN_POSITIVE);
    let mut max_rel_err = 0.0;
    let mut worst = 0;
    for (b, (&a, &f)) in analytic.iter().zip(&fd).enumerate() {
        let err = (a - f).abs() / f.abs().max(floor);
        if err > max_rel_err {
            max_rel_err = err;
            worst = b;
        }
    }
    Ok(GradientCheck {
        analytic,
        fd,
        max_rel_err,
        worst,
    })
}
