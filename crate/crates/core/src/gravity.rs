//! Free-space Poisson solver for the self-generated gravitational potential,
//! ΔV = 4πG(ρ + ρ_ext), via zero-padded FFT convolution with the
//! fundamental solution (−G/|x| in 3-d, 2G·ln|x| in the planar 2-d test
//! mode). Padding by a factor ≥ 2 per axis makes the circular convolution
//! agree with the open convolution on the physical box; the physical box is
//! centered in the padded one so external masses can sit on any side.
//!
//! The kernel value at zero displacement is the analytic cell average of the
//! fundamental solution over one cell, which removes the singularity.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::SimError;
use crate::grid::{self, Boundary, Grid, ScalarField, VectorField};

/// Softened external body orbiting (or parked) outside the fluid box.
/// `kind` selects the radial profile; both profiles are smooth, so the
/// analytic time derivative of the density exists everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalBody {
    pub mass: f64,
    pub kind: BodyKind,
    /// Orbit center in box coordinates.
    pub center: [f64; 3],
    /// Orbit radius; 0 parks the body at the center.
    pub orbit_radius: f64,
    /// Angular rate (rad/s) of the circular orbit in the x-y plane.
    pub angular_rate: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BodyKind {
    /// Plummer-softened point mass with scale length `softening`.
    Plummer { softening: f64 },
    /// Near-rigid sphere: uniform core with a cosine edge taper of
    /// half-width `taper` around `radius`.
    Sphere { radius: f64, taper: f64 },
}

impl ExternalBody {
    pub fn position(&self, t: f64) -> [f64; 3] {
        let a = self.angular_rate * t + self.phase;
        [
            self.center[0] + self.orbit_radius * a.cos(),
            self.center[1] + self.orbit_radius * a.sin(),
            self.center[2],
        ]
    }

    pub fn velocity(&self, t: f64) -> [f64; 3] {
        let a = self.angular_rate * t + self.phase;
        let s = self.orbit_radius * self.angular_rate;
        [-s * a.sin(), s * a.cos(), 0.0]
    }

    /// Radial density profile and its derivative, normalized to total mass
    /// in `dim` dimensions.
    fn profile(&self, r: f64, dim: usize) -> (f64, f64) {
        match self.kind {
            BodyKind::Plummer { softening } => {
                let e2 = softening * softening;
                let s = r * r + e2;
                if dim == 3 {
                    let c = 3.0 * self.mass * e2 / (4.0 * std::f64::consts::PI);
                    (c * s.powf(-2.5), c * -5.0 * r * s.powf(-3.5))
                } else {
                    let c = self.mass * e2 / std::f64::consts::PI;
                    (c / (s * s), c * -4.0 * r / (s * s * s))
                }
            }
            BodyKind::Sphere { radius, taper } => {
                let w = taper.max(1e-12);
                let (r0, r1) = ((radius - w).max(0.0), radius + w);
                // Normalize the tapered profile to the requested mass.
                let volume = tapered_volume(r0, r1, dim);
                let rho0 = self.mass / volume;
                if r <= r0 {
                    (rho0, 0.0)
                } else if r >= r1 {
                    (0.0, 0.0)
                } else {
                    let u = (r - r0) / (r1 - r0);
                    let t = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
                    let dt = -0.5 * std::f64::consts::PI * (std::f64::consts::PI * u).sin()
                        / (r1 - r0);
                    (rho0 * t, rho0 * dt)
                }
            }
        }
    }
}

/// ∫ t(r) dV of the cosine-tapered unit profile, by 1-d quadrature.
fn tapered_volume(r0: f64, r1: f64, dim: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let core = if dim == 3 {
        4.0 / 3.0 * pi * r0.powi(3)
    } else {
        pi * r0 * r0
    };
    let steps = 2000;
    let dr = (r1 - r0) / steps as f64;
    let mut shell = 0.0;
    for i in 0..steps {
        let r = r0 + (i as f64 + 0.5) * dr;
        let u = (r - r0) / (r1 - r0);
        let t = 0.5 * (1.0 + (pi * u).cos());
        shell += t * if dim == 3 { 4.0 * pi * r * r } else { 2.0 * pi * r } * dr;
    }
    core + shell
}

/// Prescribed external mass distribution. It never feels the fluid;
/// trajectories are inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalMass {
    pub bodies: Vec<ExternalBody>,
}

impl ExternalMass {
    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn density_at(&self, t: f64, x: [f64; 3], dim: usize) -> f64 {
        let mut rho = 0.0;
        for b in &self.bodies {
            let p = b.position(t);
            let mut r2 = 0.0;
            for a in 0..dim {
                let d = x[a] - p[a];
                r2 += d * d;
            }
            rho += b.profile(r2.sqrt(), dim).0;
        }
        rho
    }

    /// Analytic ∂_t ρ_ext = −ẋ_b·∇ρ summed over bodies.
    pub fn density_rate_at(&self, t: f64, x: [f64; 3], dim: usize) -> f64 {
        let mut rate = 0.0;
        for b in &self.bodies {
            let p = b.position(t);
            let v = b.velocity(t);
            let mut r2 = 0.0;
            let mut rv = 0.0;
            for a in 0..dim {
                let d = x[a] - p[a];
                r2 += d * d;
                rv += d * v[a];
            }
            let r = r2.sqrt();
            if r > 1e-300 {
                // ∂_t ρ(|x−p(t)|) = ρ'(r)·∂_t r with ∂_t r = −(x−p)·ṗ/r.
                let (_, drho) = b.profile(r, dim);
                rate += -(rv / r) * drho;
            }
        }
        rate
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, b) in self.bodies.iter().enumerate() {
            if !(b.mass >= 0.0) || !b.mass.is_finite() {
                return Err(SimError::config(
                    format!("gravity.ext[{i}].mass"),
                    "must be finite and nonnegative",
                ));
            }
            let ok = match b.kind {
                BodyKind::Plummer { softening } => softening > 0.0,
                BodyKind::Sphere { radius, taper } => radius > 0.0 && taper > 0.0,
            };
            if !ok {
                return Err(SimError::config(
                    format!("gravity.ext[{i}]"),
                    "softening/radius/taper must be positive",
                ));
            }
            if !b.position(0.0).iter().all(|p| p.is_finite()) {
                return Err(SimError::config(
                    format!("gravity.ext[{i}]"),
                    "trajectory must be finite",
                ));
            }
        }
        Ok(())
    }
}

/// Potential on the padded box, with the physical box embedded at `offset`.
/// The circular convolution makes the padded field periodic, so periodic
/// stencils apply on it.
#[derive(Debug, Clone)]
pub struct Potential {
    pub padded: Grid,
    pub data: ScalarField,
    pub offset: [usize; 3],
    /// Cells whose density was clipped to zero before the solve.
    pub clipped_cells: u64,
}

impl Potential {
    /// Restriction of V to the physical box.
    pub fn restrict(&self, omega: &Grid) -> ScalarField {
        let mut out = ScalarField::zeros(omega);
        for idx in 0..omega.len() {
            let c = omega.coords(idx);
            let p = [
                c[0] + self.offset[0],
                c[1] + self.offset[1],
                c[2] + self.offset[2],
            ];
            out.as_mut_slice()[idx] = self.data.as_slice()[self.padded.index(p)];
        }
        out
    }

    /// Gravitational acceleration −∇V on the physical box, differentiated on
    /// the padded data so box edges see true neighbors.
    pub fn acceleration(&self, omega: &Grid) -> VectorField {
        let mut out = VectorField::zeros(omega);
        for idx in 0..omega.len() {
            let c = omega.coords(idx);
            let p = [
                c[0] + self.offset[0],
                c[1] + self.offset[1],
                c[2] + self.offset[2],
            ];
            for a in 0..omega.dim() {
                let d = self
                    .padded
                    .deriv(self.data.as_slice(), p, a, crate::grid::Parity::Even);
                out.comp_mut(a).as_mut_slice()[idx] = -d;
            }
        }
        out
    }

    /// Field energy ∫ |∇V|²/(8πG) over the padded box.
    pub fn field_energy(&self, g_const: f64) -> f64 {
        let grad = grid::gradient(&self.padded, &self.data);
        let mut sum = 0.0;
        for a in 0..self.padded.dim() {
            for v in grad.comp(a).as_slice() {
                sum += v * v;
            }
        }
        sum * self.padded.cell_volume() / (8.0 * std::f64::consts::PI * g_const)
    }

    /// Quadrature of f(x)·V over the padded box for a pointwise external
    /// density function (used for the ρ_ext coupling and power terms).
    pub fn integrate_against(&self, omega: &Grid, f: impl Fn([f64; 3]) -> f64) -> f64 {
        let mut sum = 0.0;
        for idx in 0..self.padded.len() {
            let x = self.box_position(idx, omega);
            sum += f(x) * self.data.as_slice()[idx];
        }
        sum * self.padded.cell_volume()
    }

    /// Physical-box coordinates of a padded cell (can be negative or beyond
    /// the box lengths).
    pub fn box_position(&self, padded_idx: usize, omega: &Grid) -> [f64; 3] {
        let c = self.padded.coords(padded_idx);
        let mut x = [0.0; 3];
        for a in 0..omega.dim() {
            x[a] = (c[a] as f64 - self.offset[a] as f64 + 0.5) * omega.spacing()[a];
        }
        x
    }

    /// True if a padded cell lies inside the embedded physical box.
    pub fn inside_box(&self, padded_idx: usize, omega: &Grid) -> bool {
        let c = self.padded.coords(padded_idx);
        (0..omega.dim()).all(|a| {
            c[a] >= self.offset[a] && c[a] < self.offset[a] + omega.cells()[a]
        })
    }
}

/// FFT-based free-space solver. Owns its plans and kernel; one solve at a
/// time per instance.
pub struct GravitySolver {
    omega: Grid,
    g_const: f64,
    padded: Grid,
    offset: [usize; 3],
    kernel_hat: Vec<Complex64>,
    planner: FftPlanner<f64>,
}

impl GravitySolver {
    pub fn new(omega: &Grid, g_const: f64, padding: f64) -> Result<Self, SimError> {
        if !(g_const > 0.0) {
            return Err(SimError::config("gravity.constant", "must be positive"));
        }
        if !(padding >= 2.0) {
            return Err(SimError::config(
                "gravity.padding",
                "padding factor must be at least 2",
            ));
        }
        let mut pad_cells = [1usize; 3];
        let mut pad_lengths = [1.0f64; 3];
        let mut offset = [0usize; 3];
        for a in 0..omega.dim() {
            let n = omega.cells()[a];
            let p = (n as f64 * padding).ceil() as usize;
            pad_cells[a] = p;
            pad_lengths[a] = p as f64 * omega.spacing()[a];
            offset[a] = (p - n) / 2;
        }
        let padded = Grid::new(omega.dim(), pad_cells, pad_lengths, [Boundary::Periodic; 3])?;

        let mut solver = GravitySolver {
            omega: omega.clone(),
            g_const,
            padded,
            offset,
            kernel_hat: Vec::new(),
            planner: FftPlanner::new(),
        };
        solver.build_kernel();
        Ok(solver)
    }

    pub fn padded_grid(&self) -> &Grid {
        &self.padded
    }

    fn build_kernel(&mut self) {
        let dim = self.omega.dim();
        let h = self.omega.spacing();
        let n = self.padded.cells();
        let mut kernel = vec![Complex64::new(0.0, 0.0); self.padded.len()];
        let self_value = if dim == 3 {
            -self.g_const * cell_average_inv_r(h[0], h[1], h[2])
        } else {
            2.0 * self.g_const * cell_average_ln_r(h[0], h[1])
        };
        for idx in 0..self.padded.len() {
            let c = self.padded.coords(idx);
            let mut r2 = 0.0;
            let mut origin = true;
            for a in 0..dim {
                let mut d = c[a] as isize;
                if d > (n[a] / 2) as isize {
                    d -= n[a] as isize;
                }
                if d != 0 {
                    origin = false;
                }
                let x = d as f64 * h[a];
                r2 += x * x;
            }
            kernel[idx].re = if origin {
                self_value
            } else if dim == 3 {
                -self.g_const / r2.sqrt()
            } else {
                2.0 * self.g_const * r2.sqrt().ln()
            };
        }
        self.fft_nd(&mut kernel, false);
        self.kernel_hat = kernel;
    }

    fn fft_nd(&mut self, data: &mut [Complex64], inverse: bool) {
        let n = self.padded.cells();
        let dim = self.omega.dim();
        for axis in 0..dim {
            let len = n[axis];
            let fft = if inverse {
                self.planner.plan_fft_inverse(len)
            } else {
                self.planner.plan_fft_forward(len)
            };
            let mut line = vec![Complex64::new(0.0, 0.0); len];
            // Iterate over all lines along `axis`.
            let mut outer = [0usize; 3];
            let others: Vec<usize> = (0..3).filter(|a| *a != axis).collect();
            for i in 0..n[others[0]] {
                for j in 0..n[others[1]] {
                    outer[others[0]] = i;
                    outer[others[1]] = j;
                    for (k, v) in line.iter_mut().enumerate() {
                        outer[axis] = k;
                        *v = data[self.padded.index(outer)];
                    }
                    fft.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        outer[axis] = k;
                        data[self.padded.index(outer)] = *v;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / (0..dim).map(|a| n[a] as f64).product::<f64>();
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// V = kernel ∗ (ρ + ρ_ext), with V → 0 far from the sources. Slightly
    /// negative fluid densities are clipped for the solve and counted.
    pub fn solve(
        &mut self,
        rho: &ScalarField,
        ext: &ExternalMass,
        t: f64,
    ) -> Result<Potential, SimError> {
        assert_eq!(
            rho.as_slice().len(),
            self.omega.len(),
            "density does not live on the solver's grid"
        );
        let volume = self.omega.cell_volume();
        let mut source = vec![Complex64::new(0.0, 0.0); self.padded.len()];
        let mut clipped = 0u64;
        for idx in 0..self.omega.len() {
            let c = self.omega.coords(idx);
            let p = [
                c[0] + self.offset[0],
                c[1] + self.offset[1],
                c[2] + self.offset[2],
            ];
            let mut val = rho.as_slice()[idx];
            if val < 0.0 {
                val = 0.0;
                clipped += 1;
            }
            source[self.padded.index(p)].re = val * volume;
        }
        if !ext.is_empty() {
            let dim = self.omega.dim();
            let pot_stub = Potential {
                padded: self.padded.clone(),
                data: ScalarField::zeros(&self.padded),
                offset: self.offset,
                clipped_cells: 0,
            };
            for idx in 0..self.padded.len() {
                if pot_stub.inside_box(idx, &self.omega) {
                    continue; // ρ_ext is supported outside the fluid box
                }
                let x = pot_stub.box_position(idx, &self.omega);
                let val = ext.density_at(t, x, dim);
                if val != 0.0 {
                    source[idx].re += val * volume;
                }
            }
        }
        self.fft_nd(&mut source, false);
        for (s, k) in source.iter_mut().zip(&self.kernel_hat) {
            *s *= *k;
        }
        self.fft_nd(&mut source, true);
        let mut data = ScalarField::zeros(&self.padded);
        for (o, s) in data.as_mut_slice().iter_mut().zip(&source) {
            *o = s.re;
        }
        if !data.is_finite() {
            return Err(SimError::MonitorTripped {
                monitor: crate::error::Monitor::NonFinite,
                t,
                step: 0,
                details: "potential solve produced non-finite values".into(),
            });
        }
        Ok(Potential {
            padded: self.padded.clone(),
            data,
            offset: self.offset,
            clipped_cells: clipped,
        })
    }
}

/// Cell average of 1/|x| over a hx×hy×hz cell centered at the origin:
/// 8 corner integrals of the standard cuboid formula, divided by the volume.
pub fn cell_average_inv_r(hx: f64, hy: f64, hz: f64) -> f64 {
    let corner = corner_integral_inv_r(hx / 2.0, hy / 2.0, hz / 2.0);
    8.0 * corner / (hx * hy * hz)
}

/// ∫₀^a ∫₀^b ∫₀^c dx dy dz / |x|.
fn corner_integral_inv_r(a: f64, b: f64, c: f64) -> f64 {
    let r = (a * a + b * b + c * c).sqrt();
    b * c * (a / (b * b + c * c).sqrt()).asinh()
        + c * a * (b / (c * c + a * a).sqrt()).asinh()
        + a * b * (c / (a * a + b * b).sqrt()).asinh()
        - 0.5 * a * a * (b * c / (a * r)).atan()
        - 0.5 * b * b * (c * a / (b * r)).atan()
        - 0.5 * c * c * (a * b / (c * r)).atan()
}

/// Cell average of ln|x| over a hx×hy cell centered at the origin.
pub fn cell_average_ln_r(hx: f64, hy: f64) -> f64 {
    let corner = corner_integral_ln_r(hx / 2.0, hy / 2.0);
    4.0 * corner / (hx * hy)
}

/// ∫₀^a ∫₀^b ln√(x²+y²) dx dy.
fn corner_integral_ln_r(a: f64, b: f64) -> f64 {
    0.5 * (a * b * (a * a + b * b).ln() - 3.0 * a * b
        + a * a * (b / a).atan()
        + b * b * (a / b).atan())
}
