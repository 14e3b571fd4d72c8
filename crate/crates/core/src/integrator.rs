//! Orchestration of one full time step of the coupled system and stability
//! management.
//!
//! Substep order: (1) transport ξ and J, (2) rebuild ρ, (3) refresh the
//! gravitational potential, (4) mixture step, (5) momentum step, so each
//! substep maps onto one term of the energy audit. Momentum advection is in
//! conservative form ∂_t(ρv) + div(ρv⊗v); the Newtonian viscous term is
//! semi-implicit (conjugate gradients in the ρ-weighted inner product, in
//! which the frozen operator is self-adjoint); the hyperviscous force is
//! explicit by default with its own h⁴ time-step bound, with an optional
//! lagged-coefficient implicit mode for stiff runs.

use crate::constitutive::{self, MaterialLaw};
use crate::error::{Monitor, SimError};
use crate::gravity::{ExternalMass, GravitySolver, Potential};
use crate::grid::{self, Boundary, Grid, Rank3Field, ScalarField, TensorField, VectorField};
use crate::kinematics::{self, AdvectionScheme, KinematicState};
use crate::mixture::{self, MixtureSpec, MixtureWorkspace, SpeciesState};

/// Time-step policy. The effective dt is the minimum of all active bounds,
/// capped by `dt_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    pub dt_max: f64,
    /// Factor on the advective-acoustic bound h/(|v| + c_s).
    pub cfl: f64,
    /// Factor on the explicit Newtonian bound ρh²/ν₁ (used only when the
    /// Newtonian solve is explicit).
    pub visc_factor: f64,
    /// Factor on the explicit hyperviscous bound ρh⁴/(ν₂|∇e(v)|^(q−2)).
    pub hyper_factor: f64,
    /// Factor on the explicit smooth-reaction bound from the mixture.
    pub diff_factor: f64,
    pub max_steps: u64,
    pub j_floor: f64,
    pub scheme: AdvectionScheme,
    pub newtonian_implicit: bool,
    pub hyper_implicit: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_max: 1e-2,
            cfl: 0.4,
            visc_factor: 0.25,
            hyper_factor: 0.2,
            diff_factor: 0.25,
            max_steps: 10_000,
            j_floor: 1e-6,
            scheme: AdvectionScheme::Upwind1,
            newtonian_implicit: true,
            hyper_implicit: false,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), SimError> {
        for (key, v) in [
            ("stepping.dt_max", self.dt_max),
            ("stepping.cfl", self.cfl),
            ("stepping.visc_factor", self.visc_factor),
            ("stepping.hyper_factor", self.hyper_factor),
            ("stepping.diff_factor", self.diff_factor),
            ("stepping.j_floor", self.j_floor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::config(key, "must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Complete state of one time level.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub v: VectorField,
    pub kin: KinematicState,
    pub species: Option<SpeciesState>,
    pub rho: ScalarField,
    pub pressure: ScalarField,
    pub potential: Option<Potential>,
    /// dt used to reach this state (0 for the initial one).
    pub last_dt: f64,
    /// Cumulative out-of-box clamps in referential density sampling.
    pub clamp_count: u64,
}

impl SimState {
    pub fn species_fields(&self) -> Option<&[ScalarField]> {
        self.species.as_ref().map(|s| s.c.as_slice())
    }

    fn check_finite(&self, grid: &Grid) -> Result<(), SimError> {
        let mut bad: Vec<String> = Vec::new();
        if !self.v.is_finite() {
            bad.push("v".into());
        }
        if !self.kin.xi.is_finite() || !self.kin.jac.is_finite() {
            bad.push("xi/J".into());
        }
        if !self.rho.is_finite() || !self.pressure.is_finite() {
            bad.push("rho/p".into());
        }
        if let Some(s) = &self.species {
            if !s.is_finite() {
                bad.push("c/mu".into());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            let _ = grid;
            Err(SimError::MonitorTripped {
                monitor: Monitor::NonFinite,
                t: self.t,
                step: self.step,
                details: format!(
                    "non-finite fields: {} (max|v| {:.3e}, min J {:.3e}, ρ range [{:.3e}, {:.3e}])",
                    bad.join(", "),
                    self.v.max_norm(),
                    self.kin.jac.min(),
                    self.rho.min(),
                    self.rho.max()
                ),
            })
        }
    }
}

/// Owns the pieces needed to advance a state; one stepper advances one
/// simulation.
pub struct Stepper<'a> {
    pub grid: &'a Grid,
    pub law: &'a MaterialLaw,
    pub mixture: Option<&'a MixtureSpec>,
    pub gravity: Option<&'a mut GravitySolver>,
    pub ext: &'a ExternalMass,
    pub ctl: StepControl,
    /// Hold v fixed (prescribed-flow scenarios); the momentum substep is
    /// skipped.
    pub freeze_velocity: bool,
    /// Warm-start correction carried between viscous solves.
    pub visc_guess: Option<VectorField>,
    /// Scratch carried between mixture diffusion solves.
    pub mixture_ws: MixtureWorkspace,
}

impl<'a> Stepper<'a> {
    /// Derive ρ, V, p for a freshly assembled state.
    pub fn prepare(
        &mut self,
        v: VectorField,
        kin: KinematicState,
        species: Option<SpeciesState>,
    ) -> Result<SimState, SimError> {
        let (rho, clamps) = kinematics::density(self.grid, &kin.xi, &kin.jac, self.law, kin.t)?;
        let potential = match self.gravity.as_mut() {
            Some(solver) => Some(solver.solve(&rho, self.ext, kin.t)?),
            None => None,
        };
        let pressure = constitutive::pressure(
            self.grid,
            self.law,
            &kin.jac,
            species.as_ref().map(|s| s.c.as_slice()),
        )?;
        let state = SimState {
            t: kin.t,
            step: 0,
            v,
            kin,
            species,
            rho,
            pressure,
            potential,
            last_dt: 0.0,
            clamp_count: clamps,
        };
        state.check_finite(self.grid)?;
        Ok(state)
    }

    /// Effective dt from the active stability bounds.
    pub fn stability_dt(&self, state: &SimState) -> f64 {
        let mut dt = self.ctl.dt_max;
        let h = self.grid.min_spacing();

        // Advective-acoustic CFL.
        let vmax = state.v.max_norm();
        let mut cs_max: f64 = 0.0;
        for idx in 0..self.grid.len() {
            let j = state.kin.jac.as_slice()[idx];
            let rho = state.rho.as_slice()[idx].max(1e-300);
            let c2 = self.law.energy.d2phi0(j) * j / rho;
            if c2 > 0.0 {
                cs_max = cs_max.max(c2.sqrt());
            }
        }
        let speed = vmax + cs_max;
        if speed > 0.0 {
            dt = dt.min(self.ctl.cfl * h / speed);
        }

        let rho_min = state.rho.min().max(1e-300);
        if !self.ctl.newtonian_implicit {
            dt = dt.min(self.ctl.visc_factor * h * h * rho_min / self.law.viscosity.nu1);
        }
        if !self.ctl.hyper_implicit {
            // Explicit 4th-order bound h⁴ρ/(ν₂·max|∇e(v)|^(q−2)).
            let e = grid::sym_grad(self.grid, &state.v);
            let s = grid::grad_tensor(self.grid, &e);
            let mut coeff_max: f64 = 0.0;
            for idx in 0..self.grid.len() {
                coeff_max = coeff_max.max(s.norm_sq_at(idx));
            }
            let q = self.law.viscosity.q;
            let coeff = if coeff_max > 0.0 {
                self.law.viscosity.nu2 * coeff_max.powf(0.5 * (q - 2.0))
            } else {
                0.0
            };
            if coeff > 0.0 {
                dt = dt.min(self.ctl.hyper_factor * h.powi(4) * rho_min / coeff);
            }
        }
        if let Some(spec) = self.mixture {
            // Smooth part of the reaction rate (the stiff penalty part is
            // implicit); the diffusion solve itself is unconditionally
            // stable.
            let j_min = state.kin.jac.min().max(1e-300);
            let rate = spec.reaction_scale() * self.law.energy.d2phi1_dcc() / j_min;
            if rate > 0.0 {
                dt = dt.min(self.ctl.diff_factor / rate);
            }
        }
        dt
    }

    /// Momentum substep: conservative advection, explicit pressure, gravity
    /// and hyperviscous forces, then the (semi-implicit) Newtonian solve.
    /// `rho_old` is the density at the step start, matching `state.v`.
    fn momentum_step(
        &mut self,
        state: &SimState,
        rho_old: &ScalarField,
        rho_new: &ScalarField,
        pressure_new: &ScalarField,
        potential_new: Option<&Potential>,
        dt: f64,
    ) -> Result<VectorField, SimError> {
        let grid = self.grid;
        let d = grid.dim();
        let c_fields = state.species_fields();

        // Conservative advection of m = ρv by face-upwind fluxes.
        let mut momentum: Vec<ScalarField> = (0..d)
            .map(|i| {
                let mut m = state.v.comp(i).clone();
                for idx in 0..grid.len() {
                    m.as_mut_slice()[idx] *= rho_old.as_slice()[idx];
                }
                m
            })
            .collect();
        let flux_update = {
            let mut upd: Vec<ScalarField> = (0..d).map(|_| ScalarField::zeros(grid)).collect();
            let n = grid.cells();
            for axis in 0..d {
                let h = grid.spacing()[axis];
                let va = state.v.comp(axis);
                for idx in 0..grid.len() {
                    let c = grid.coords(idx);
                    let last = c[axis] + 1 == n[axis];
                    if last && grid.boundary(axis) == Boundary::SlipWall {
                        continue; // wall face carries no flux
                    }
                    let mut cc = c;
                    cc[axis] = if last { 0 } else { c[axis] + 1 };
                    let hi = grid.index(cc);
                    let v_face = 0.5 * (va.as_slice()[idx] + va.as_slice()[hi]);
                    if v_face == 0.0 {
                        continue;
                    }
                    let up = if v_face >= 0.0 { idx } else { hi };
                    for i in 0..d {
                        let f = v_face * momentum[i].as_slice()[up];
                        upd[i].as_mut_slice()[idx] -= f / h;
                        upd[i].as_mut_slice()[hi] += f / h;
                    }
                }
            }
            upd
        };
        for i in 0..d {
            momentum[i].add_scaled(&flux_update[i], dt);
        }

        // v* = m*/ρ_new plus explicit forces.
        let grad_p: VectorField = grid::gradient(grid, pressure_new);
        let grav = potential_new.map(|p| p.acceleration(grid));
        let hyper = if self.ctl.hyper_implicit {
            None
        } else {
            Some(constitutive::hyperviscous_force(
                grid,
                self.law,
                &state.v,
                &state.kin.jac,
                c_fields,
            ))
        };
        let mut v_star = VectorField::zeros(grid);
        for i in 0..d {
            let comp = v_star.comp_mut(i);
            for idx in 0..grid.len() {
                let rho = rho_new.as_slice()[idx].max(1e-300);
                let mut force = -grad_p.comp(i).as_slice()[idx];
                if let Some(g) = &grav {
                    force += rho * g.comp(i).as_slice()[idx];
                }
                if let Some(hy) = &hyper {
                    force += hy.comp(i).as_slice()[idx];
                }
                comp.as_mut_slice()[idx] = momentum[i].as_slice()[idx] / rho + dt * force / rho;
            }
        }

        // Newtonian (and optionally hyperviscous) term.
        if !self.ctl.newtonian_implicit && !self.ctl.hyper_implicit {
            let stress = constitutive::newtonian_stress(
                grid,
                self.law,
                &state.v,
                &state.kin.jac,
                c_fields,
            );
            let div = grid::div_tensor(grid, &stress);
            for i in 0..d {
                for idx in 0..grid.len() {
                    let rho = rho_new.as_slice()[idx].max(1e-300);
                    v_star.comp_mut(i).as_mut_slice()[idx] += dt * div.comp(i).as_slice()[idx] / rho;
                }
            }
            return Ok(v_star);
        }

        self.implicit_viscous_solve(state, rho_new, v_star, dt)
    }

    /// Solve (I − (dt/ρ)·div σ(·)) v = v* with σ(v) = ν₁e(v) and, in the
    /// lagged implicit mode, the linearized hyperstress. CG runs in the
    /// ρ-weighted inner product, in which the operator is self-adjoint
    /// positive definite. Tolerance 1e-8 relative: the splitting itself is
    /// O(dt), so tighter solves buy nothing.
    fn implicit_viscous_solve(
        &mut self,
        state: &SimState,
        rho: &ScalarField,
        rhs: VectorField,
        dt: f64,
    ) -> Result<VectorField, SimError> {
        let grid = self.grid;
        let d = grid.dim();
        let c_fields = state.species_fields();
        let jac = &state.kin.jac;

        // Coefficients frozen for the solve: ν₁(J,c) pointwise, and in the
        // lagged implicit mode ν₂|∇e(v_old)|^(q−2).
        let mut nu1 = ScalarField::zeros(grid);
        {
            let mut buf = Vec::new();
            for idx in 0..grid.len() {
                let comp = match c_fields {
                    None => &[][..],
                    Some(fields) => {
                        buf.clear();
                        buf.extend(fields.iter().map(|f| f.as_slice()[idx]));
                        &buf[..]
                    }
                };
                nu1.as_mut_slice()[idx] = self.law.viscosity.nu1_at(jac.as_slice()[idx], comp);
            }
        }
        let hyper_coeff: Option<ScalarField> = if self.ctl.hyper_implicit {
            let e = grid::sym_grad(grid, &state.v);
            let s = grid::grad_tensor(grid, &e);
            let q = self.law.viscosity.q;
            let mut w = ScalarField::zeros(grid);
            let mut buf = Vec::new();
            for idx in 0..grid.len() {
                let comp = match c_fields {
                    None => &[][..],
                    Some(fields) => {
                        buf.clear();
                        buf.extend(fields.iter().map(|f| f.as_slice()[idx]));
                        &buf[..]
                    }
                };
                let nu2 = self.law.viscosity.nu2_at(jac.as_slice()[idx], comp);
                let ns = s.norm_sq_at(idx);
                w.as_mut_slice()[idx] = if ns > 0.0 {
                    nu2 * ns.powf(0.5 * (q - 2.0))
                } else {
                    0.0
                };
            }
            Some(w)
        } else {
            None
        };

        // Reused workspaces across CG iterations.
        let mut e_buf = TensorField::zeros(grid);
        let mut div_buf = VectorField::zeros(grid);
        let mut s_buf = if hyper_coeff.is_some() {
            Some((Rank3Field::zeros(grid), TensorField::zeros(grid), VectorField::zeros(grid)))
        } else {
            None
        };
        let inv_rho: Vec<f64> = rho.as_slice().iter().map(|r| 1.0 / r.max(1e-300)).collect();

        let mut apply = |v: &VectorField, out: &mut VectorField| {
            grid::sym_grad_into(grid, v, &mut e_buf);
            // Hyperstress first (it needs the unscaled strain), then scale
            // the strain by ν₁ in place for the Newtonian divergence.
            if let (Some(w), Some((s, t, f))) = (&hyper_coeff, s_buf.as_mut()) {
                grid::grad_tensor_into(grid, &e_buf, s);
                for i in 0..d {
                    for j in 0..d {
                        for k in 0..d {
                            let comp = s.comp_mut(i, j, k);
                            for (val, c) in comp.as_mut_slice().iter_mut().zip(w.as_slice()) {
                                *val *= c;
                            }
                        }
                    }
                }
                grid::div_rank3_into(grid, s, t);
                grid::div_tensor_into(grid, t, f);
            }
            for i in 0..d {
                for j in 0..d {
                    let comp = e_buf.comp_mut(i, j);
                    for (val, nu) in comp.as_mut_slice().iter_mut().zip(nu1.as_slice()) {
                        *val *= nu;
                    }
                }
            }
            grid::div_tensor_into(grid, &e_buf, &mut div_buf);
            if let Some((_, _, f)) = s_buf.as_ref() {
                for i in 0..d {
                    div_buf.comp_mut(i).add_scaled(f.comp(i), -1.0);
                }
            }
            for i in 0..d {
                let oc = out.comp_mut(i).as_mut_slice();
                let vc = v.comp(i).as_slice();
                let dc = div_buf.comp(i).as_slice();
                for idx in 0..oc.len() {
                    oc[idx] = vc[idx] - dt * dc[idx] * inv_rho[idx];
                }
            }
        };
        let dot_rho = |a: &VectorField, b: &VectorField| -> f64 {
            let mut acc = 0.0;
            for i in 0..d {
                let ac = a.comp(i).as_slice();
                let bc = b.comp(i).as_slice();
                let rc = rho.as_slice();
                for idx in 0..ac.len() {
                    acc += rc[idx] * ac[idx] * bc[idx];
                }
            }
            acc * grid.cell_volume()
        };

        // Warm start: last step's correction is an excellent predictor of
        // this one, since the viscous operator varies slowly.
        let mut x = rhs.clone();
        if let Some(corr) = &self.visc_guess {
            x.add_scaled(corr, 1.0);
        }
        let mut ax = VectorField::zeros(grid);
        apply(&x, &mut ax);
        let mut r = rhs.clone();
        r.add_scaled(&ax, -1.0);
        let mut p = r.clone();
        let mut rr = dot_rho(&r, &r);
        let rhs_norm = dot_rho(&rhs, &rhs).max(1e-300);
        let tol_sq = 1e-14 * rhs_norm;
        let mut iter = 0;
        while rr > tol_sq && iter < 400 {
            apply(&p, &mut ax);
            let pap = dot_rho(&p, &ax);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            x.add_scaled(&p, alpha);
            r.add_scaled(&ax, -alpha);
            let rr_new = dot_rho(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..d {
                let pc = p.comp_mut(i);
                for idx in 0..grid.len() {
                    pc.as_mut_slice()[idx] =
                        r.comp(i).as_slice()[idx] + beta * pc.as_slice()[idx];
                }
            }
            iter += 1;
        }
        if std::env::var("SGDIFF_CG_TRACE").is_ok() {
            eprintln!("viscous cg iters {iter}");
        }
        if !(rr <= tol_sq * 1e6) {
            return Err(SimError::MonitorTripped {
                monitor: Monitor::StepRejected,
                t: state.t,
                step: state.step,
                details: format!("viscous solve stalled: residual {rr:.3e} after {iter} iterations"),
            });
        }
        let mut corr = x.clone();
        corr.add_scaled(&rhs, -1.0);
        self.visc_guess = Some(corr);
        Ok(x)
    }

    /// Advance one full step at the stability-limited dt. On error the
    /// returned report names the monitor that fired and the field extrema.
    pub fn full_step(&mut self, state: &SimState) -> Result<SimState, SimError> {
        let dt = self.stability_dt(state);
        self.full_step_with_dt(state, dt)
    }

    pub fn full_step_with_dt(&mut self, state: &SimState, dt: f64) -> Result<SimState, SimError> {
        let grid = self.grid;
        let t_new = state.t + dt;
        let trace = std::env::var("SGDIFF_STEP_TRACE").is_ok();
        let mut mark = std::time::Instant::now();
        let lap = |label: &str, mark: &mut std::time::Instant| {
            if trace {
                eprintln!("  {label}: {:.1} ms", mark.elapsed().as_secs_f64() * 1e3);
                *mark = std::time::Instant::now();
            }
        };

        // (1) transport ξ and J
        let xi = kinematics::advect_xi(grid, &state.kin, &state.v, dt, self.ctl.scheme)
            .map_err(|e| at_step(e, state.step))?;
        let jac = kinematics::evolve_j(
            grid,
            &state.kin.jac,
            &state.v,
            dt,
            self.ctl.scheme,
            self.ctl.j_floor,
            t_new,
        )
        .map_err(|e| at_step(e, state.step))?;
        let kin = KinematicState { xi, jac, t: t_new };
        lap("transport", &mut mark);

        // (2) rebuild ρ
        let (rho_new, clamps) =
            kinematics::density(grid, &kin.xi, &kin.jac, self.law, t_new)
                .map_err(|e| at_step(e, state.step))?;
        lap("density", &mut mark);

        // (3) refresh V
        let potential = match self.gravity.as_mut() {
            Some(solver) => Some(solver.solve(&rho_new, self.ext, t_new)?),
            None => None,
        };
        lap("gravity", &mut mark);

        // (4) mixture step
        let species = match (&state.species, self.mixture) {
            (Some(sp), Some(spec)) => Some(
                mixture::diffusion_reaction_step_ws(
                    grid,
                    sp,
                    Some(&state.v),
                    &kin.jac,
                    dt,
                    spec,
                    self.law,
                    self.ctl.scheme,
                    t_new,
                    &mut self.mixture_ws,
                )
                .map_err(|e| at_step(e, state.step))?,
            ),
            _ => None,
        };
        lap("mixture", &mut mark);

        // (5) momentum step
        let pressure = constitutive::pressure(
            grid,
            self.law,
            &kin.jac,
            species.as_ref().map(|s| s.c.as_slice()),
        )?;
        let v = if self.freeze_velocity {
            state.v.clone()
        } else {
            self.momentum_step(
                state,
                &state.rho,
                &rho_new,
                &pressure,
                potential.as_ref(),
                dt,
            )?
        };
        lap("momentum", &mut mark);

        let new_state = SimState {
            t: t_new,
            step: state.step + 1,
            v,
            kin,
            species,
            rho: rho_new,
            pressure,
            potential,
            last_dt: dt,
            clamp_count: state.clamp_count + clamps,
        };
        new_state.check_finite(grid)?;
        Ok(new_state)
    }
}

fn at_step(e: SimError, step: u64) -> SimError {
    match e {
        SimError::MonitorTripped {
            monitor,
            t,
            details,
            ..
        } => SimError::MonitorTripped {
            monitor,
            t,
            step,
            details,
        },
        other => other,
    }
}
