//! Forward problem: static equilibrium of the interpolated hyperelastic
//! body with the higher-order void regularization, driven by a boundary
//! region whose displacement is prescribed in the mean through scalar
//! multipliers. Solved by Newton iteration with load stepping.

use crate::fem::space::DofTarget;
use crate::material::{
    higher_order_energy, neo_hookean_energy, pk1_stress, pk1_tangent, plane_strain_f,
    ramp_stiffness, reg_weight, void_indicator, DispHessian,
};
use crate::model::{DesignField, Model};
use crate::sparse::{LinearError, TripletMatrix};
use nalgebra::Matrix2;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("degenerate deformation in element {element} (det F = {det:.3e})")]
    Degenerate { element: usize, det: f64 },
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error("iteration diverged: residual {norm:.3e} from initial {first:.3e}")]
    Diverged { norm: f64, first: f64 },
    #[error("no convergence within {0} iterations")]
    Stalled(usize),
    #[error("load step underflow at t = {0:.6}")]
    StepUnderflow(f64),
}

impl SolveError {
    /// Failures that a smaller load increment can plausibly cure.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            SolveError::Degenerate { .. }
                | SolveError::Diverged { .. }
                | SolveError::Stalled(_)
                | SolveError::Linear(LinearError::Singular)
        )
    }
}

/// Displacement gradient and displacement Hessian at one quadrature
/// point. `u_full` is the unreduced nodal vector (2 components per node);
/// the deformation gradient is `I + grad`.
pub fn gp_deformation(
    model: &Model,
    element: usize,
    gp: usize,
    u_full: &[f64],
) -> (Matrix2<f64>, DispHessian) {
    let shapes = &model.table.gps[gp];
    let nodes = &model.elem_q8[element];
    let mut grad = Matrix2::zeros();
    let mut h: DispHessian = [[[0.0; 2]; 2]; 2];
    for a in 0..8 {
        let g = shapes.g8[a];
        let hs = shapes.h8[a];
        for i in 0..2 {
            let ui = u_full[2 * nodes[a] + i];
            grad[(i, 0)] += ui * g[0];
            grad[(i, 1)] += ui * g[1];
            h[i][0][0] += ui * hs[0];
            h[i][0][1] += ui * hs[1];
            h[i][1][1] += ui * hs[2];
        }
    }
    h[0][1][0] = h[0][0][1];
    h[1][1][0] = h[1][0][1];
    (grad, h)
}

/// `H(u) : H(N_a e_i)` using the symmetric storage of the second
/// derivatives (xx, xy, yy).
#[inline]
pub fn hess_contract(h: &DispHessian, i: usize, ha: &[f64; 3]) -> f64 {
    h[i][0][0] * ha[0] + 2.0 * h[i][0][1] * ha[1] + h[i][1][1] * ha[2]
}

/// Smallest positive root of `a s^2 + b s + c` with `c > 0`, if any.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return (b < 0.0).then(|| -c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // Citardauq pairing keeps both roots accurate when a or c is small.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    [q / a, c / q]
        .into_iter()
        .filter(|r| *r > 0.0)
        .min_by(f64::total_cmp)
}

/// How far one Newton step may compress any quadrature point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepGuard {
    /// No point's volume ratio may drop below half its current value (or
    /// below an absolute 0.05 for points nowhere near pinching). Squeezed
    /// contact zones then compact by at most one halving per step: letting
    /// the local volume collapse by an order of magnitude spikes the void
    /// pressure and throws the iteration into overshoot/backtrack cycles.
    Cushion,
    /// Only positivity is enforced: the step may run to 95% of the nearest
    /// volume-ratio sign change. A pinched film can snap through — the
    /// equilibrium branch it was on ends, and the next one is only reachable
    /// by crushing straight through the ridge that [`Self::Cushion`] exists
    /// to avoid. Used when step refinement is exhausted and "through" is the
    /// only direction left.
    Barrier,
}

/// Largest fraction of the Newton decrement `du` that keeps every
/// quadrature point's volume ratio inside what `guard` allows, capped
/// at 1. Along the update `u - s du` the determinant of the in-plane
/// deformation block is exactly quadratic in `s`, so the bound is
/// algebraic.
pub fn feasible_fraction(model: &Model, u: &[f64], du: &[f64], guard: StepGuard) -> f64 {
    let u_full = model.u_space.scattered(u);
    let du_full = model.u_space.scattered(du);
    let mut s = 1.0f64;
    for e in 0..model.elem_q8.len() {
        for gp in 0..model.table.gps.len() {
            let (g, _) = gp_deformation(model, e, gp, &u_full);
            let (dg, _) = gp_deformation(model, e, gp, &du_full);
            let det = (1.0 + g[(0, 0)]) * (1.0 + g[(1, 1)]) - g[(0, 1)] * g[(1, 0)];
            let cross = (1.0 + g[(0, 0)]) * dg[(1, 1)] + dg[(0, 0)] * (1.0 + g[(1, 1)])
                - g[(0, 1)] * dg[(1, 0)]
                - dg[(0, 1)] * g[(1, 0)];
            let quad = dg[(0, 0)] * dg[(1, 1)] - dg[(0, 1)] * dg[(1, 0)];
            if det > 0.0 {
                match guard {
                    StepGuard::Cushion => {
                        let floor = f64::min(0.5 * det, 0.05);
                        if let Some(root) = smallest_positive_root(quad, -cross, det - floor) {
                            s = s.min(root);
                        }
                    }
                    StepGuard::Barrier => {
                        if let Some(root) = smallest_positive_root(quad, -cross, det) {
                            s = s.min(0.95 * root);
                        }
                    }
                }
            }
        }
    }
    s
}

pub struct EquilibriumAssembly {
    /// Residual over `[u_reduced, q]`.
    pub residual: Vec<f64>,
    pub matrix: Option<TripletMatrix>,
    /// Smallest det F over all quadrature points.
    pub min_det: f64,
    /// Smallest det F restricted to void material (indicator >= 1/2).
    pub min_void_det: f64,
}

/// Residual and (optionally) tangent of the equilibrium system at state
/// `(u, q)` under prescribed mean displacements `u_d` (one per driven
/// component).
pub fn assemble_equilibrium(
    model: &Model,
    design: &DesignField,
    u: &[f64],
    q: &[f64],
    u_d: &[f64],
    want_matrix: bool,
) -> Result<EquilibriumAssembly, SolveError> {
    let n_u = model.n_u();
    let n_q = model.n_q();
    debug_assert_eq!(u.len(), n_u);
    debug_assert_eq!(q.len(), n_q);
    debug_assert_eq!(u_d.len(), n_q);

    let u_full = model.u_space.scattered(u);
    let mp = &model.material;
    let mut residual = vec![0.0; n_u + n_q];
    let mut matrix = want_matrix.then(|| TripletMatrix::new(n_u + n_q));
    let mut min_det = f64::INFINITY;
    let mut min_void_det = f64::INFINITY;

    let mut k_loc = [[0.0f64; 16]; 16];
    for e in 0..model.mesh.n_elements() {
        let dofs = &model.elem_udofs[e];
        let mut r_loc = [0.0f64; 16];
        if want_matrix {
            k_loc = [[0.0; 16]; 16];
        }
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (du, hu) = gp_deformation(model, e, g, &u_full);
            let f2 = Matrix2::identity() + du;
            let det = f2.determinant();
            if !det.is_finite() || det <= 0.0 {
                return Err(SolveError::Degenerate { element: e, det });
            }
            min_det = min_det.min(det);
            let (chi, _) = design.at_gp(model, e, g);
            if void_indicator(chi, mp.chi_void) >= 0.5 {
                min_void_det = min_void_det.min(det);
            }

            let f3 = plane_strain_f(&du).map_err(|_| SolveError::Degenerate { element: e, det })?;
            let p = pk1_stress(&f3, mp.bulk, mp.shear)
                .map_err(|_| SolveError::Degenerate { element: e, det })?;
            let e_ramp = ramp_stiffness(chi, mp.ramp_p, mp.e0);
            let w_reg = reg_weight(chi, det, mp.kbar_r, mp.length, mp.bulk, mp.chi_void);

            for a in 0..8 {
                let ga = gp.g8[a];
                let ha = gp.h8[a];
                for i in 0..2 {
                    let mut v = e_ramp * (p[(i, 0)] * ga[0] + p[(i, 1)] * ga[1]);
                    if w_reg != 0.0 {
                        v += w_reg * hess_contract(&hu, i, &ha);
                    }
                    r_loc[2 * a + i] += gp.weight * v;
                }
            }

            if want_matrix {
                let a4 = pk1_tangent(&f3, mp.bulk, mp.shear)
                    .map_err(|_| SolveError::Degenerate { element: e, det })?;
                let finv_t = f2
                    .try_inverse()
                    .ok_or(SolveError::Degenerate { element: e, det })?
                    .transpose();
                // H(u) : H(N_a e_i) per (a, i), reused across columns.
                let mut hh = [[0.0f64; 2]; 8];
                if w_reg != 0.0 {
                    for a in 0..8 {
                        for i in 0..2 {
                            hh[a][i] = hess_contract(&hu, i, &gp.h8[a]);
                        }
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
                                let mut v = 0.0;
                                for jj in 0..2 {
                                    for ll in 0..2 {
                                        v += a4[i][jj][k][ll] * ga[jj] * gb[ll];
                                    }
                                }
                                v *= e_ramp;
                                if w_reg != 0.0 {
                                    if i == k {
                                        v += w_reg * hess_ab;
                                    }
                                    // Weight depends on det F; its variation
                                    // makes the block unsymmetric.
                                    let fb = finv_t[(k, 0)] * gb[0] + finv_t[(k, 1)] * gb[1];
                                    v -= 5.0 * w_reg * det * fb * hh[a][i];
                                }
                                k_loc[2 * a + i][2 * b + k] += gp.weight * v;
                            }
                        }
                    }
                }
            }
        }

        for (la, &da) in dofs.iter().enumerate() {
            let DofTarget::Free(i) = da else { continue };
            residual[i] += r_loc[la];
            if let Some(mat) = matrix.as_mut() {
                for (lb, &db) in dofs.iter().enumerate() {
                    if let DofTarget::Free(j) = db {
                        mat.push(i, j, k_loc[la][lb]);
                    }
                }
            }
        }
    }

    // Driven boundary: multiplier force on u and the mean-displacement rows.
    for (c, bc) in model.driven.b.iter().enumerate() {
        let mut bu = 0.0;
        for (i, &bi) in bc.iter().enumerate() {
            if bi != 0.0 {
                residual[i] -= q[c] * bi;
                bu += bi * u[i];
                if let Some(mat) = matrix.as_mut() {
                    mat.push(i, n_u + c, -bi);
                    mat.push(n_u + c, i, -bi);
                }
            }
        }
        residual[n_u + c] = u_d[c] * model.driven.gamma - bu;
    }

    Ok(EquilibriumAssembly {
        residual,
        matrix,
        min_det,
        min_void_det,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub div_factor: f64,
    /// Stagnation test: fail once the residual norm has contracted by less
    /// than `stall_factor` over the last `stall_window` applied steps. A
    /// factor at or above 1 disables the test, leaving `max_iter` as the
    /// only budget — the patient mode for steps that have no smaller
    /// fallback left.
    pub stall_window: usize,
    pub stall_factor: f64,
    /// Per-step compression limit; see [`StepGuard`].
    pub guard: StepGuard,
    /// How many half-step retreats a single iteration may take when the
    /// residual grows. Zero accepts every guarded step as-is: monotone
    /// descent is what traps the iteration in a basin that has lost its
    /// equilibrium, so snap-through attempts run without retreats.
    pub backtrack_limit: u32,
    /// Pseudo-time damping for snap-through. When positive, the update
    /// solves `(K + δI)·du = r` with `δ = |r| / ptc_step` on the
    /// displacement block, which caps the step's soft-mode component near
    /// `ptc_step` while leaving stiff modes at Newton speed. Past a fold
    /// the tangent is near-singular along the snapping mode and plain
    /// Newton orbits chaotically; the damped update instead follows the
    /// quasi-static crushing motion `u̇ = -r`, and the damping fades
    /// automatically as the residual drops, restoring quadratic finish.
    /// Zero disables the shift.
    pub ptc_step: f64,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        NewtonOpts {
            max_iter: 30,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            div_factor: 1e6,
            stall_window: 16,
            stall_factor: 0.92,
            guard: StepGuard::Cushion,
            backtrack_limit: 5,
            ptc_step: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub min_det: f64,
    pub min_void_det: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full Newton iteration on `(u, q)` at fixed `u_d`. On failure the state
/// may hold a partial iterate; callers restore from their own copy.
pub fn newton_solve(
    model: &Model,
    design: &DesignField,
    u: &mut [f64],
    q: &mut [f64],
    u_d: &[f64],
    opts: &NewtonOpts,
) -> Result<NewtonReport, SolveError> {
    let n_u = model.n_u();
    let mut first = f64::NAN;
    let mut prev_norm = f64::INFINITY;
    // Last applied update: direction and the fraction of it still applied.
    let mut last: Option<(Vec<f64>, f64)> = None;
    let mut backtracks = 0;
    // Norms at recent applied steps; quitting early on stagnation is what
    // keeps a high iteration cap affordable.
    let mut trail: Vec<f64> = Vec::new();
    // The tangent pattern is fixed by the mesh, so its sparsity analysis is
    // paid once and every later iteration runs the numeric phase only.
    let mut pattern: Option<crate::sparse::PatternCache> = None;
    for it in 0..=opts.max_iter {
        let asm = assemble_equilibrium(model, design, u, q, u_d, true)?;
        let norm = norm2(&asm.residual);
        if std::env::var_os("TMTOPO_TRACE").is_some() {
            eprintln!(
                "    it={it:3} |r|={norm:11.4e} min_det={:10.3e} void={:10.3e} bt={backtracks}",
                asm.min_det, asm.min_void_det
            );
        }
        if !norm.is_finite() {
            return Err(SolveError::Diverged { norm, first });
        }
        if it == 0 {
            first = norm;
        }
        let tol = f64::max(opts.rel_tol * first, opts.abs_tol);
        if norm <= tol {
            return Ok(NewtonReport {
                iterations: it,
                residual: norm,
                min_det: asm.min_det,
                min_void_det: asm.min_void_det,
            });
        }
        // A residual that grew means the last step overshot; retreat half of
        // it and re-evaluate instead of computing a fresh direction from the
        // worse point. The re-assembly above is the only cost. Equal norms
        // are a plateau, not an overshoot — retreating there buys nothing.
        if norm > 1.0001 * prev_norm && backtracks < opts.backtrack_limit {
            if let Some((step, applied)) = &mut last {
                backtracks += 1;
                let undo = 0.5 * *applied;
                *applied -= undo;
                for (i, ui) in u.iter_mut().enumerate() {
                    *ui += undo * step[i];
                }
                for (c, qc) in q.iter_mut().enumerate() {
                    *qc += undo * step[n_u + c];
                }
                continue;
            }
        }
        if norm > opts.div_factor * first {
            return Err(SolveError::Diverged { norm, first });
        }
        if it == opts.max_iter {
            break;
        }
        // Squeezed contact zones converge linearly while the mesh rearranges
        // (each step is volume-guard-limited); that is worth riding out even
        // when slow, because retrying with a smaller increment repeats the
        // same rearrangement from the same state. Only a contraction rate
        // indistinguishable from flat marks a genuinely stuck iteration.
        trail.push(norm);
        let w = opts.stall_window;
        if opts.stall_factor < 1.0
            && trail.len() > w
            && norm > opts.stall_factor * trail[trail.len() - 1 - w]
        {
            return Err(SolveError::Stalled(it));
        }
        prev_norm = norm;
        backtracks = 0;
        let matrix = asm.matrix.as_ref().unwrap();
        let damped;
        let system = if opts.ptc_step > 0.0 {
            let delta = norm / opts.ptc_step;
            let mut m = matrix.clone();
            for i in 0..n_u {
                m.push(i, i, delta);
            }
            damped = m;
            &damped
        } else {
            matrix
        };
        if pattern.is_none() {
            pattern = Some(crate::sparse::analyze(system)?);
        }
        let step = pattern.as_ref().unwrap().factor(system)?.solve(&asm.residual)?;
        let s = feasible_fraction(model, u, &step[..n_u], opts.guard);
        if std::env::var_os("TMTOPO_TRACE").is_some() {
            eprintln!("        step |du|={:.3e} s={s:.3e}", norm2(&step));
        }
        for (i, ui) in u.iter_mut().enumerate() {
            *ui -= s * step[i];
        }
        for (c, qc) in q.iter_mut().enumerate() {
            *qc -= s * step[n_u + c];
        }
        last = Some((step, s));
    }
    Err(SolveError::Stalled(opts.max_iter))
}

#[derive(Debug, Clone)]
pub enum StepEvent {
    Accepted { t: f64, dt: f64, iterations: usize },
    Rejected { t: f64, dt: f64, error: SolveError },
}

#[derive(Debug, Clone, Default)]
pub struct AdvanceReport {
    pub events: Vec<StepEvent>,
    pub total_iterations: usize,
    pub min_det: f64,
    pub min_void_det: f64,
    /// Step fraction in effect when the program step completed; feeding it
    /// into the next call's `initial_fraction` spares a hard continuation
    /// front the repeated discovery that full steps cannot cross it.
    pub final_dt: f64,
}

impl AdvanceReport {
    pub fn rejections(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.events.iter().filter_map(|e| match e {
            StepEvent::Rejected { t, dt, .. } => Some((*t, *dt)),
            StepEvent::Accepted { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdvanceOpts {
    pub newton: NewtonOpts,
    /// Smallest admissible step as a fraction of the whole program step.
    pub min_fraction: f64,
    /// First attempted step fraction, clamped to [min_fraction, 1].
    pub initial_fraction: f64,
}

impl Default for AdvanceOpts {
    fn default() -> Self {
        AdvanceOpts {
            // Continuation gives the iteration a high budget: post-contact
            // states creep linearly under the volume guard, and restarting a
            // nearly-converged creep on a halved step costs far more than
            // letting it finish. The stagnation window inside the iteration
            // cuts genuinely stuck attempts short.
            newton: NewtonOpts {
                max_iter: 900,
                ..NewtonOpts::default()
            },
            min_fraction: 1.0 / 1024.0,
            initial_fraction: 1.0,
        }
    }
}

/// Moves the prescribed displacements from `from` to `to`, bisecting the
/// step on failure and doubling it again after success. `(u, q)` must be in
/// equilibrium at `from` (or be a good enough starting guess).
pub fn advance(
    model: &Model,
    design: &DesignField,
    u: &mut Vec<f64>,
    q: &mut Vec<f64>,
    from: &[f64],
    to: &[f64],
    opts: &AdvanceOpts,
) -> Result<AdvanceReport, SolveError> {
    let n_q = model.n_q();
    let mut report = AdvanceReport {
        min_det: f64::INFINITY,
        min_void_det: f64::INFINITY,
        ..Default::default()
    };
    let mut t = 0.0;
    let mut dt = opts.initial_fraction.clamp(opts.min_fraction, 1.0);
    // Last resort: when even the smallest increment cannot converge, the
    // state is pinned against a snap — an equilibrium branch that ends —
    // and no refinement helps because every nearby target past the snap is
    // on the far side of the same ridge. The jump aims far (half the
    // remaining program step, then a quarter, then all of it) with only
    // the positivity barrier limiting compression, letting the iteration
    // crush through.
    let mut jumping = false;
    let mut jumps = 0u8;
    // Rejections mean the front is hardening; regrowing straight after the
    // next success usually bounces off the same wall, wasting a failed
    // attempt per accepted step, so growth pauses for a couple of steps.
    let mut cooldown = 0u8;
    while t < 1.0 {
        dt = dt.min(1.0 - t);
        let target: Vec<f64> = (0..n_q)
            .map(|c| from[c] + (t + dt) * (to[c] - from[c]))
            .collect();
        let mut u_try = u.clone();
        let mut q_try = q.clone();
        // Once halving has no further room, retrying cannot make the front
        // easier, so compression is limited only by positivity and the
        // stagnation test is loosened to a long, nearly-flat window: creep
        // this slow could never finish within the iteration budget anyway,
        // so only a true limit cycle fails it — early, handing over to the
        // jump. The jump itself is the end of the line and gets the whole
        // budget unconditionally, since crushing through a snap spikes the
        // residual in ways a stagnation window misreads.
        let mut nopts = opts.newton;
        if jumping {
            nopts.stall_factor = f64::INFINITY;
            nopts.guard = StepGuard::Barrier;
            nopts.backtrack_limit = 0;
            nopts.ptc_step = 0.01;
            // Post-snap states are ill-conditioned enough that the damped
            // flow settles on a rounding-noise floor a few decades above
            // the usual tolerance; the crossing only has to seed the next
            // increment, so accept at force-scale precision instead.
            nopts.abs_tol = 1e-8;
        } else if dt <= 2.0 * opts.min_fraction {
            nopts.stall_window = 80;
            nopts.stall_factor = 0.999;
            nopts.guard = StepGuard::Barrier;
        }
        let attempt = newton_solve(model, design, &mut u_try, &mut q_try, &target, &nopts);
        if std::env::var_os("TMTOPO_TRACE").is_some() {
            match &attempt {
                Ok(rep) => eprintln!("  t={t:.6} dt={dt:.6} ok iters={}", rep.iterations),
                Err(e) => eprintln!("  t={t:.6} dt={dt:.6} REJECT {e}"),
            }
        }
        match attempt {
            Ok(rep) => {
                *u = u_try;
                *q = q_try;
                t += dt;
                jumping = false;
                jumps = 0;
                report.events.push(StepEvent::Accepted {
                    t,
                    dt,
                    iterations: rep.iterations,
                });
                report.total_iterations += rep.iterations;
                report.min_det = report.min_det.min(rep.min_det);
                report.min_void_det = report.min_void_det.min(rep.min_void_det);
                // Regrow after successes that stayed well under the budget;
                // shrink ahead when one nearly exhausted it, since the front
                // is hard and the resistance tends to grow. The bands are
                // wide because guard-limited creep (void elements pinned
                // near degeneracy) costs iterations roughly like the square
                // root of the step size, so small steps multiply the total
                // work without making the individual step much cheaper.
                if rep.iterations <= 55 {
                    if cooldown == 0 {
                        dt = (dt * 2.0).min(1.0);
                    } else {
                        cooldown -= 1;
                    }
                } else if rep.iterations > 140 {
                    dt = (dt * 0.5).max(opts.min_fraction);
                }
            }
            Err(err) if err.is_retryable() => {
                report.events.push(StepEvent::Rejected { t, dt, error: err });
                cooldown = 2;
                if jumping {
                    jumps += 1;
                    match jumps {
                        1 => dt = 0.25 * (1.0 - t),
                        2 => dt = 1.0 - t,
                        _ => return Err(SolveError::StepUnderflow(t)),
                    }
                } else {
                    dt *= 0.5;
                    if dt < opts.min_fraction {
                        jumping = true;
                        dt = 0.5 * (1.0 - t);
                    }
                }
            }
            Err(err) => return Err(err),
        }
    }
    report.final_dt = dt;
    Ok(report)
}

/// Boundary reaction conjugate to each prescribed mean displacement:
/// multiplier times region length.
pub fn reactions(model: &Model, q: &[f64]) -> Vec<f64> {
    q.iter().map(|&qc| qc * model.driven.gamma).collect()
}

/// Prescribed-displacement vector for a scalar load level: the level drives
/// the first constrained component, any further components are held at zero.
pub fn level_to_u_d(model: &Model, level: f64) -> Vec<f64> {
    let mut v = vec![0.0; model.n_q()];
    if !v.is_empty() {
        v[0] = level;
    }
    v
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub u_d: f64,
    pub reaction: f64,
    pub iterations: usize,
    pub min_void_det: f64,
}

/// Equilibrium path over a list of load levels starting from the natural
/// state. Returns one record per level plus the aggregated step report.
pub fn reaction_sweep(
    model: &Model,
    design: &DesignField,
    levels: &[f64],
    opts: &AdvanceOpts,
) -> Result<(Vec<SweepPoint>, AdvanceReport), SolveError> {
    let mut u = vec![0.0; model.n_u()];
    let mut q = vec![0.0; model.n_q()];
    let mut from = level_to_u_d(model, 0.0);
    let mut points = Vec::with_capacity(levels.len());
    let mut total = AdvanceReport {
        min_det: f64::INFINITY,
        min_void_det: f64::INFINITY,
        ..Default::default()
    };
    // Each level starts at the step fraction the previous one ended on:
    // across a hard contact front, re-attempting full steps at every level
    // just re-pays their rejection cost.
    let mut level_opts = *opts;
    for &level in levels {
        let to = level_to_u_d(model, level);
        let rep = advance(model, design, &mut u, &mut q, &from, &to, &level_opts)?;
        level_opts.initial_fraction = (2.0 * rep.final_dt).min(1.0);
        let iterations = rep.total_iterations;
        total.total_iterations += iterations;
        total.min_det = total.min_det.min(rep.min_det);
        total.min_void_det = total.min_void_det.min(rep.min_void_det);
        total.events.extend(rep.events);
        total.final_dt = rep.final_dt;
        points.push(SweepPoint {
            u_d: level,
            reaction: reactions(model, &q)[0],
            iterations,
            min_void_det: rep.min_void_det,
        });
        from = to;
    }
    Ok((points, total))
}

/// Tangent stiffness of a sampled load path by central differences
/// (one-sided at the ends).
pub fn stiffness_series(points: &[SweepPoint]) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let (lo, hi) = match i {
            0 => (0, (n - 1).min(1)),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        let du = points[hi].u_d - points[lo].u_d;
        out[i] = if du != 0.0 {
            (points[hi].reaction - points[lo].reaction) / du
        } else {
            0.0
        };
    }
    out
}

/// Total stored energy of the body at the given reduced displacement.
/// Includes the higher-order term with its weight frozen, so this is the
/// exact potential only where that weight vanishes (solid designs).
pub fn stored_energy(
    model: &Model,
    design: &DesignField,
    u: &[f64],
) -> Result<f64, SolveError> {
    let u_full = model.u_space.scattered(u);
    let mp = &model.material;
    let mut acc = 0.0;
    for e in 0..model.mesh.n_elements() {
        for (g, gp) in model.table.gps.iter().enumerate() {
            let (du, hu) = gp_deformation(model, e, g, &u_full);
            let det = (Matrix2::identity() + du).determinant();
            if !det.is_finite() || det <= 0.0 {
                return Err(SolveError::Degenerate { element: e, det });
            }
            let (chi, _) = design.at_gp(model, e, g);
            let f3 = plane_strain_f(&du).map_err(|_| SolveError::Degenerate { element: e, det })?;
            let psi = neo_hookean_energy(&f3, mp.bulk, mp.shear)
                .map_err(|_| SolveError::Degenerate { element: e, det })?;
            let e_ramp = ramp_stiffness(chi, mp.ramp_p, mp.e0);
            let w_reg = reg_weight(chi, det, mp.kbar_r, mp.length, mp.bulk, mp.chi_void);
            acc += gp.weight * (e_ramp * psi + w_reg * higher_order_energy(&hu));
        }
    }
    Ok(acc)
}
