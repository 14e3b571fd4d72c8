//! Return-mapping kinematics: transport of the referential coordinate field
//! ξ, evolution of the Jacobian J, and reconstruction of deformation and
//! density.
//!
//! J is evolved by its own transport equation J̇ = J div v − v·∇J and the
//! value reconstructed from ξ serves as a cross-check, not as the primary
//! quantity: differentiating ξ twice per step amplifies advection noise.
//!
//! On periodic axes ξ components live on a circle of circumference L, so all
//! finite differences of ξ are taken in the minimal-image sense and values
//! are rewrapped into the reference box after each step.

use crate::constitutive::MaterialLaw;
use crate::error::{Monitor, SimError};
use crate::grid::{self, Grid, Boundary, Parity, ScalarField, VectorField};

/// Transport discretization for the advective derivative v·∇(·).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvectionScheme {
    /// First-order upwind (default).
    Upwind1,
    /// Second-order upwind with a minmod-limited curvature correction.
    Upwind2Minmod,
}

/// Complete kinematic state at one time level.
#[derive(Debug, Clone)]
pub struct KinematicState {
    /// Referential coordinates X = ξ(t,x).
    pub xi: VectorField,
    /// J = det F = 1/det(∇ξ), evolved by transport.
    pub jac: ScalarField,
    pub t: f64,
}

impl KinematicState {
    /// Identity map with unit Jacobian (undeformed start).
    pub fn identity(grid: &Grid) -> Self {
        KinematicState {
            xi: VectorField::from_fn(grid, |x, a| x[a]),
            jac: ScalarField::constant(grid, 1.0),
            t: 0.0,
        }
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

#[inline]
fn unwrap_diff(d: f64, wrap: Option<f64>) -> f64 {
    match wrap {
        None => d,
        Some(l) => d - l * (d / l).round(),
    }
}

/// Advance a scalar quantity by one advective-transport step
/// f ← f − dt·v·∇f. Scalars mirror evenly at walls.
pub fn advect_scalar(
    grid: &Grid,
    f: &ScalarField,
    v: &VectorField,
    dt: f64,
    scheme: AdvectionScheme,
    wrap: Option<f64>,
) -> ScalarField {
    let mut out = f.clone();
    let src = f.as_slice();
    let n = grid.cells();
    for a in 0..grid.dim() {
        let vel = v.comp(a).as_slice();
        let h = grid.spacing()[a];
        let p1 = grid.axis_map(a, 1, Parity::Even);
        let m1 = grid.axis_map(a, -1, Parity::Even);
        let (p2, m2) = match scheme {
            AdvectionScheme::Upwind1 => (None, None),
            AdvectionScheme::Upwind2Minmod => (
                Some(grid.axis_map(a, 2, Parity::Even)),
                Some(grid.axis_map(a, -2, Parity::Even)),
            ),
        };
        let dst = out.as_mut_slice();
        let mut idx = 0usize;
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let w = vel[idx];
                    if w != 0.0 {
                        let ca = [i, j, k][a];
                        let center = src[idx];
                        let up = p1.sign[ca] * src[(idx as isize + p1.delta[ca]) as usize];
                        let dn = m1.sign[ca] * src[(idx as isize + m1.delta[ca]) as usize];
                        let deriv = if w >= 0.0 {
                            let back1 = unwrap_diff(center - dn, wrap);
                            match (&p2, &m2) {
                                (Some(_), Some(mm2)) => {
                                    let fwd = unwrap_diff(up - center, wrap);
                                    let dn2 =
                                        mm2.sign[ca] * src[(idx as isize + mm2.delta[ca]) as usize];
                                    let back2 = unwrap_diff(dn - dn2, wrap);
                                    (back1 + 0.5 * minmod(fwd - back1, back1 - back2)) / h
                                }
                                _ => back1 / h,
                            }
                        } else {
                            let fwd1 = unwrap_diff(up - center, wrap);
                            match (&p2, &m2) {
                                (Some(pp2), Some(_)) => {
                                    let up2 =
                                        pp2.sign[ca] * src[(idx as isize + pp2.delta[ca]) as usize];
                                    let fwd2 = unwrap_diff(up2 - up, wrap);
                                    let back = unwrap_diff(center - dn, wrap);
                                    (fwd1 - 0.5 * minmod(fwd2 - fwd1, fwd1 - back)) / h
                                }
                                _ => fwd1 / h,
                            }
                        };
                        dst[idx] -= dt * w * deriv;
                    }
                    idx += 1;
                }
            }
        }
    }
    out
}

/// Largest advective CFL number dt·|v_a|/h_a across axes.
pub fn cfl_number(grid: &Grid, v: &VectorField, dt: f64) -> f64 {
    let mut cfl = 0.0f64;
    for a in 0..grid.dim() {
        cfl = cfl.max(dt * v.comp(a).max_abs() / grid.spacing()[a]);
    }
    cfl
}

/// Transport the return mapping: ξ̇ + (v·∇)ξ = 0, componentwise upwind.
/// Rejects the step if the advective CFL number exceeds 1.
pub fn advect_xi(
    grid: &Grid,
    state: &KinematicState,
    v: &VectorField,
    dt: f64,
    scheme: AdvectionScheme,
) -> Result<VectorField, SimError> {
    let cfl = cfl_number(grid, v, dt);
    if cfl > 1.0 + 1e-12 {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::StepRejected,
            t: state.t,
            step: 0,
            details: format!("advective CFL {cfl:.3} > 1 in xi transport"),
        });
    }
    let mut out = VectorField::zeros(grid);
    for b in 0..grid.dim() {
        let wrap = match grid.boundary(b) {
            Boundary::Periodic => Some(grid.lengths()[b]),
            Boundary::SlipWall => None,
        };
        let mut comp = advect_scalar(grid, state.xi.comp(b), v, dt, scheme, wrap);
        if let Some(l) = wrap {
            for val in comp.as_mut_slice() {
                *val = val.rem_euclid(l);
            }
        }
        *out.comp_mut(b) = comp;
    }
    Ok(out)
}

/// Advance J̇ = J div v − v·∇J one explicit step. The divergence is the
/// centered stencil shared with the rest of the code; the transport part is
/// upwind.
pub fn evolve_j(
    grid: &Grid,
    j: &ScalarField,
    v: &VectorField,
    dt: f64,
    scheme: AdvectionScheme,
    j_floor: f64,
    t: f64,
) -> Result<ScalarField, SimError> {
    let div = grid::divergence(grid, v);
    let mut out = advect_scalar(grid, j, v, dt, scheme, None);
    for idx in 0..grid.len() {
        out.as_mut_slice()[idx] += dt * j.as_slice()[idx] * div.as_slice()[idx];
    }
    let min = out.min();
    if !(min > j_floor) {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::JacobianFloor,
            t,
            step: 0,
            details: format!("min J = {min:.6e} fell to the floor {j_floor:.1e}"),
        });
    }
    Ok(out)
}

/// Reconstruct J = 1/det(∇ξ) by centered differences and cofactor expansion.
/// Serves as a cross-check for the evolved J.
pub fn jacobian_from_xi(grid: &Grid, xi: &VectorField, t: f64) -> Result<ScalarField, SimError> {
    let d = grid.dim();
    let mut out = ScalarField::zeros(grid);
    let mut min_det = f64::INFINITY;
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        // g[b][a] = ∂_a ξ_b, minimal-image on periodic value boxes.
        let mut g = [[0.0f64; 3]; 3];
        for b in 0..d {
            let wrap = match grid.boundary(b) {
                Boundary::Periodic => Some(grid.lengths()[b]),
                Boundary::SlipWall => None,
            };
            let data = xi.comp(b).as_slice();
            for a in 0..d {
                let plus = grid.sample(data, c, a, 1, Parity::Even);
                let minus = grid.sample(data, c, a, -1, Parity::Even);
                g[b][a] = unwrap_diff(plus - minus, wrap) / (2.0 * grid.spacing()[a]);
            }
        }
        let det = if d == 2 {
            g[0][0] * g[1][1] - g[0][1] * g[1][0]
        } else {
            g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1])
                - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
                + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0])
        };
        min_det = min_det.min(det);
        out.as_mut_slice()[idx] = 1.0 / det;
    }
    if !(min_det > 0.0) {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::JacobianFloor,
            t,
            step: 0,
            details: format!("det(∇ξ) reached {min_det:.6e} <= 0"),
        });
    }
    Ok(out)
}

/// Actual mass density ρ(x) = ρ_ref(ξ(x))/J(x), with ρ_ref sampled by
/// multilinear interpolation at X = ξ(x). Returns the clamp counter for
/// out-of-box referential samples on wall axes.
pub fn density(
    grid: &Grid,
    xi: &VectorField,
    j: &ScalarField,
    law: &MaterialLaw,
    t: f64,
) -> Result<(ScalarField, u64), SimError> {
    let min = j.min();
    if !(min > 0.0) {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::JacobianFloor,
            t,
            step: 0,
            details: format!("density needs min J > 0, got {min:.6e}"),
        });
    }
    let mut clamped = 0u64;
    let mut out = ScalarField::zeros(grid);
    for idx in 0..grid.len() {
        let mut x_ref = [0.0f64; 3];
        for b in 0..grid.dim() {
            x_ref[b] = xi.comp(b).as_slice()[idx];
        }
        let rho_ref = law.rho_ref.interp(grid, x_ref, &mut clamped);
        out.as_mut_slice()[idx] = rho_ref / j.as_slice()[idx];
    }
    Ok((out, clamped))
}

/// L² norm of J − 1/det(∇ξ) over cells at least one cell away from slip
/// walls (the wall mirror corrupts ∇ξ in the boundary band). Diagnostic
/// only; not forced to zero.
pub fn consistency_residual(grid: &Grid, xi: &VectorField, jac: &ScalarField) -> f64 {
    let from_xi = match jacobian_from_xi(grid, xi, 0.0) {
        Ok(f) => f,
        Err(_) => return f64::INFINITY,
    };
    let n = grid.cells();
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        let mut skip = false;
        for a in 0..grid.dim() {
            if grid.boundary(a) == Boundary::SlipWall && (c[a] == 0 || c[a] + 1 == n[a]) {
                skip = true;
            }
        }
        if skip {
            continue;
        }
        let d = jac.as_slice()[idx] - from_xi.as_slice()[idx];
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (sum * grid.cell_volume()).sqrt()
    }
}
