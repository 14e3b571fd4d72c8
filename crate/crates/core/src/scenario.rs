//! Scenario presets: initial fields and material assembly for the shipped
//! cases.
//!
//! * `uniform-sphere` — a dense ball in a thin ambient medium, relaxing
//!   toward hydrostatic balance under self-gravity.
//! * `two-layer-rt` — heavy-over-light layering with a sinusoidally
//!   perturbed interface, differentiating under self-gravity.
//! * `mixing-box` — reaction-diffusion of species in a prescribed cellular
//!   velocity field (momentum equation frozen).
//! * `tidal` — a resting body plus prescribed orbiting external masses.
//!
//! All presets start from ξ = identity (so det ∇ξ₀ > 0 holds trivially) and
//! carry c on the simplex exactly. Random perturbations draw from a seeded
//! generator, so runs are reproducible bit for bit.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::constitutive::MaterialLaw;
use crate::error::SimError;
use crate::grid::{Grid, ScalarField, VectorField};
use crate::kinematics::KinematicState;
use crate::mixture::{chemical_potential, SpeciesState};

/// Everything a run needs besides the stepper itself.
pub struct ScenarioSetup {
    pub grid: Grid,
    pub law: MaterialLaw,
    pub v0: VectorField,
    pub kin0: KinematicState,
    pub species0: Option<SpeciesState>,
    /// Mixing-box holds the velocity fixed (prescribed flow).
    pub freeze_velocity: bool,
}

fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

/// Build the initial state for the configured scenario.
pub fn build(cfg: &RunConfig) -> Result<ScenarioSetup, SimError> {
    let grid = Grid::new(
        cfg.grid.dim,
        cfg.grid.cells,
        cfg.grid.lengths,
        cfg.grid.bc,
    )?;
    let sc = &cfg.scenario;
    let m = &cfg.material;
    let energy = cfg.stored_energy();
    let viscosity = cfg.viscosity();

    let dim = grid.dim();
    let lengths = grid.lengths();
    let center = {
        let mut c = [0.0; 3];
        for a in 0..dim {
            c[a] = 0.5 * lengths[a];
        }
        c
    };
    // Interface smoothing width in physical units.
    let width = sc.interface_width_cells * grid.min_spacing();

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut freeze_velocity = false;
    let mut v0 = VectorField::zeros(&grid);

    let (rho_ref, heavy_fraction): (ScalarField, Option<ScalarField>) = match sc.name.as_str() {
        "uniform-sphere" => {
            let r0 = sc.radius;
            let rho = ScalarField::from_fn(&grid, |x| {
                let mut r2 = 0.0;
                for a in 0..dim {
                    r2 += (x[a] - center[a]).powi(2);
                }
                let s = smoothstep((r0 - r2.sqrt()) / width + 0.5);
                m.rho_light + (m.rho_heavy - m.rho_light) * s
            });
            (rho, None)
        }
        "two-layer-rt" => {
            // Heavy over light; the interface height carries a sinusoidal
            // perturbation plus (optionally) seeded broadband noise at a
            // tenth of the main amplitude.
            let modes: Vec<(f64, f64)> = (2..6)
                .map(|k| (0.1 * sc.amplitude * rng.gen_range(-1.0..1.0), k as f64))
                .collect();
            let y0 = sc.interface * lengths[1];
            let kx = 2.0 * std::f64::consts::PI * sc.mode as f64 / lengths[0];
            let heavy = ScalarField::from_fn(&grid, |x| {
                let mut eta = sc.amplitude * (kx * x[0]).cos();
                for (a, k) in &modes {
                    eta += a * (k * kx * x[0]).cos();
                }
                smoothstep((x[1] - (y0 + eta)) / width + 0.5)
            });
            let rho = ScalarField::from_fn(&grid, |_| 0.0);
            let mut rho = rho;
            for idx in 0..grid.len() {
                let s = heavy.as_slice()[idx];
                rho.as_mut_slice()[idx] = m.rho_light + (m.rho_heavy - m.rho_light) * s;
            }
            (rho, Some(heavy))
        }
        "mixing-box" => {
            freeze_velocity = true;
            let amp = sc.flow_amplitude;
            let pi = std::f64::consts::PI;
            v0 = VectorField::from_fn(&grid, |x, a| {
                // Cellular flow: v·n = 0 on the box faces, div v = 0.
                let (sx, cx) = (pi * x[0] / lengths[0]).sin_cos();
                let (sy, cy) = (pi * x[1] / lengths[1]).sin_cos();
                match a {
                    0 => amp * sx * cy,
                    1 => -amp * cx * sy * lengths[1] / lengths[0],
                    _ => 0.0,
                }
            });
            let heavy = ScalarField::from_fn(&grid, |x| {
                smoothstep((x[1] - sc.interface * lengths[1]) / width + 0.5)
            });
            let rho = ScalarField::constant(&grid, m.rho_light);
            (rho, Some(heavy))
        }
        "tidal" => {
            let r0 = sc.radius;
            let rho = ScalarField::from_fn(&grid, |x| {
                let mut r2 = 0.0;
                for a in 0..dim {
                    r2 += (x[a] - center[a]).powi(2);
                }
                let s = smoothstep((r0 - r2.sqrt()) / width + 0.5);
                m.rho_light + (m.rho_heavy - m.rho_light) * s
            });
            (rho, None)
        }
        other => {
            return Err(SimError::config(
                "scenario.name",
                format!("unknown scenario `{other}`"),
            ))
        }
    };

    let law = MaterialLaw {
        energy,
        rho_ref,
        viscosity,
    };
    law.validate(&grid, cfg.mixture.enabled)?;

    let kin0 = KinematicState::identity(&grid);

    let species0 = match (cfg.mixture_spec(), heavy_fraction) {
        (Some(spec), Some(heavy)) => {
            spec.validate()?;
            // Species 0 is the heavy phase; remaining species split the
            // light side evenly so that Σc = 1 exactly.
            let n = spec.n;
            let mut c: Vec<ScalarField> =
                (0..n).map(|_| ScalarField::zeros(&grid)).collect();
            for idx in 0..grid.len() {
                let s = heavy.as_slice()[idx];
                c[0].as_mut_slice()[idx] = s;
                let rest = (1.0 - s) / (n - 1) as f64;
                for f in c.iter_mut().skip(1) {
                    f.as_mut_slice()[idx] = rest;
                }
            }
            let mu = chemical_potential(&grid, &c, &kin0.jac, &law, &spec)?;
            Some(SpeciesState { c, mu })
        }
        (Some(spec), None) => {
            spec.validate()?;
            // Uniform composition at the preferred mix.
            let n = spec.n;
            let base = &law.energy.c_star;
            let c: Vec<ScalarField> = (0..n)
                .map(|i| ScalarField::constant(&grid, base[i]))
                .collect();
            let mu = chemical_potential(&grid, &c, &kin0.jac, &law, &spec)?;
            Some(SpeciesState { c, mu })
        }
        _ => None,
    };

    Ok(ScenarioSetup {
        grid,
        law,
        v0,
        kin0,
        species0,
        freeze_velocity,
    })
}
