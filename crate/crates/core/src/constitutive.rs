//! Material law catalog: stored energy in J and c, pressure, Newtonian and
//! hyperviscous stresses, and the force divergences they contribute to the
//! momentum balance.
//!
//! The shipped energy presets are spatially homogeneous; material
//! inhomogeneity enters through the referential density ρ_ref(X) and the
//! composition c. The stored energy splits as φ_ref(J,c) = φ₀(J) + φ₁(J,c)
//! with a convex quadratic mixture part.

use crate::error::SimError;
use crate::grid::{
    self, Grid, Rank3Field, ScalarField, TensorField, VectorField,
};

/// Volumetric double-well term A·(J−J_a)²(J−J_b)², modeling a volumetric
/// phase transition. Drives p(J) non-monotone for large enough amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub amplitude: f64,
    pub j_a: f64,
    pub j_b: f64,
}

/// Stored energy density per referential volume.
///
/// φ₀(J) = eps_phi/J^alpha + kappa·(J−1)² [+ double well]
/// φ₁(J,c) = (chi/2)·|c − c_star|²
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEnergy {
    pub eps_phi: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub well: Option<DoubleWell>,
    /// Convexity modulus of the mixture part (Hessian = chi·I).
    pub chi: f64,
    /// Preferred composition; empty for single-species runs.
    pub c_star: Vec<f64>,
}

impl StoredEnergy {
    pub fn power_law(eps_phi: f64, alpha: f64, kappa: f64) -> Self {
        StoredEnergy {
            eps_phi,
            alpha,
            kappa,
            well: None,
            chi: 0.0,
            c_star: Vec::new(),
        }
    }

    pub fn phi0(&self, j: f64) -> f64 {
        let mut phi = self.eps_phi / j.powf(self.alpha) + self.kappa * (j - 1.0) * (j - 1.0);
        if let Some(w) = self.well {
            let (u, v) = (j - w.j_a, j - w.j_b);
            phi += w.amplitude * u * u * v * v;
        }
        phi
    }

    pub fn dphi0(&self, j: f64) -> f64 {
        let mut d = -self.alpha * self.eps_phi / j.powf(self.alpha + 1.0)
            + 2.0 * self.kappa * (j - 1.0);
        if let Some(w) = self.well {
            let (u, v) = (j - w.j_a, j - w.j_b);
            d += 2.0 * w.amplitude * u * v * (u + v);
        }
        d
    }

    pub fn d2phi0(&self, j: f64) -> f64 {
        let mut d = self.alpha * (self.alpha + 1.0) * self.eps_phi / j.powf(self.alpha + 2.0)
            + 2.0 * self.kappa;
        if let Some(w) = self.well {
            let (u, v) = (j - w.j_a, j - w.j_b);
            d += 2.0 * w.amplitude * (u * u + 4.0 * u * v + v * v);
        }
        d
    }

    pub fn species(&self) -> usize {
        self.c_star.len()
    }

    pub fn phi1(&self, _j: f64, c: &[f64]) -> f64 {
        debug_assert_eq!(c.len(), self.c_star.len());
        0.5 * self.chi
            * c.iter()
                .zip(&self.c_star)
                .map(|(ci, ai)| (ci - ai) * (ci - ai))
                .sum::<f64>()
    }

    /// ∂_c φ₁ written into `out`.
    pub fn dphi1_dc(&self, _j: f64, c: &[f64], out: &mut [f64]) {
        for ((o, ci), ai) in out.iter_mut().zip(c).zip(&self.c_star) {
            *o = self.chi * (ci - ai);
        }
    }

    /// The mixture part carries no volumetric coupling: ∂_J φ₁ = 0.
    pub fn dphi1_dj(&self, _j: f64, _c: &[f64]) -> f64 {
        0.0
    }

    /// Hessian of φ₁ in c is chi·I; returned as the scalar multiple.
    pub fn d2phi1_dcc(&self) -> f64 {
        self.chi
    }

    pub fn phi(&self, j: f64, c: &[f64]) -> f64 {
        self.phi0(j) + if c.is_empty() { 0.0 } else { self.phi1(j, c) }
    }

    pub fn dphi_dj(&self, j: f64, c: &[f64]) -> f64 {
        self.dphi0(j) + if c.is_empty() { 0.0 } else { self.dphi1_dj(j, c) }
    }
}

/// Viscosity model: base moduli with optional affine composition blending
/// and an optional J-power hook for pressure-dependent viscosity (off by
/// default).
#[derive(Debug, Clone, PartialEq)]
pub struct Viscosity {
    pub nu1: f64,
    pub nu2: f64,
    pub q: f64,
    /// Per-species multipliers for ν₁; empty means spatially uniform.
    pub blend1: Vec<f64>,
    pub blend2: Vec<f64>,
    /// ν_i ∝ J^(−j_exponent); 0 disables the hook.
    pub j_exponent: f64,
}

impl Viscosity {
    pub fn uniform(nu1: f64, nu2: f64, q: f64) -> Self {
        Viscosity {
            nu1,
            nu2,
            q,
            blend1: Vec::new(),
            blend2: Vec::new(),
            j_exponent: 0.0,
        }
    }

    fn blend(coeffs: &[f64], c: &[f64]) -> f64 {
        if coeffs.is_empty() || c.is_empty() {
            return 1.0;
        }
        coeffs
            .iter()
            .zip(c)
            .map(|(b, ci)| b * ci.clamp(0.0, 1.0))
            .sum::<f64>()
            .max(1e-12)
    }

    pub fn nu1_at(&self, j: f64, c: &[f64]) -> f64 {
        let mut v = self.nu1 * Self::blend(&self.blend1, c);
        if self.j_exponent != 0.0 {
            v *= j.powf(-self.j_exponent);
        }
        v
    }

    pub fn nu2_at(&self, j: f64, c: &[f64]) -> f64 {
        let mut v = self.nu2 * Self::blend(&self.blend2, c);
        if self.j_exponent != 0.0 {
            v *= j.powf(-self.j_exponent);
        }
        v
    }
}

/// Complete material description: stored energy, referential density field,
/// and viscosities.
#[derive(Debug, Clone)]
pub struct MaterialLaw {
    pub energy: StoredEnergy,
    pub rho_ref: ScalarField,
    pub viscosity: Viscosity,
}

impl MaterialLaw {
    /// Validate the standing assumptions: coercivity of φ₀ (by sampling),
    /// uniform convexity of φ₁, positive viscosities with q > 3, and a
    /// positive referential density.
    pub fn validate(&self, grid: &Grid, require_mixture: bool) -> Result<(), SimError> {
        let e = &self.energy;
        if !(e.eps_phi > 0.0) {
            return Err(SimError::config("material.eps_phi", "must be positive"));
        }
        if !(e.alpha > 1.0) {
            return Err(SimError::config(
                "material.alpha",
                format!("need alpha > 1, got {}", e.alpha),
            ));
        }
        if e.kappa < 0.0 {
            return Err(SimError::config("material.kappa", "must be nonnegative"));
        }
        if let Some(w) = e.well {
            if w.amplitude < 0.0 || !(w.j_a > 0.0) || !(w.j_b > w.j_a) {
                return Err(SimError::config(
                    "material.well",
                    "need amplitude >= 0 and 0 < j_a < j_b",
                ));
            }
        }
        // Coercivity φ₀(J) ≥ eps_phi/J^alpha, sampled over a wide J range.
        for i in 0..400 {
            let j = 0.05 + 0.02 * i as f64;
            if e.phi0(j) < e.eps_phi / j.powf(e.alpha) - 1e-12 {
                return Err(SimError::config(
                    "material",
                    format!("stored energy loses coercivity at J = {j}"),
                ));
            }
        }
        if require_mixture && !(e.chi > 0.0) {
            return Err(SimError::config(
                "material.chi",
                "mixture part must be uniformly convex (chi > 0)",
            ));
        }
        let visc = &self.viscosity;
        if !(visc.nu1 > 0.0) || !(visc.nu2 > 0.0) {
            return Err(SimError::config("material.nu", "viscosities must be positive"));
        }
        if !(visc.q > 3.0) {
            return Err(SimError::config(
                "material.q",
                format!("hyperviscous exponent must satisfy q > 3, got {}", visc.q),
            ));
        }
        for (key, blend) in [("nu1_blend", &visc.blend1), ("nu2_blend", &visc.blend2)] {
            if !blend.is_empty() && blend.iter().any(|b| !(*b > 0.0)) {
                return Err(SimError::config(
                    format!("material.{key}"),
                    "blend coefficients must be positive",
                ));
            }
        }
        if self.rho_ref.as_slice().len() != grid.len() {
            return Err(SimError::config("material.rho_ref", "wrong field size"));
        }
        if !(self.rho_ref.min() > 0.0) {
            return Err(SimError::config(
                "material.rho_ref",
                "referential density must be positive everywhere",
            ));
        }
        Ok(())
    }
}

fn composition_at<'a>(c: Option<&'a [ScalarField]>, idx: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
    match c {
        None => &[],
        Some(fields) => {
            buf.clear();
            buf.extend(fields.iter().map(|f| f.as_slice()[idx]));
            buf
        }
    }
}

/// p(x) = −∂_J φ_ref(J(x), c(x)).
pub fn pressure(
    grid: &Grid,
    law: &MaterialLaw,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> Result<ScalarField, SimError> {
    if !(j.min() > 0.0) {
        return Err(SimError::config(
            "state.J",
            format!("pressure needs min J > 0, got {}", j.min()),
        ));
    }
    let mut out = ScalarField::zeros(grid);
    let mut buf = Vec::new();
    for idx in 0..grid.len() {
        let comp = composition_at(c, idx, &mut buf);
        out.as_mut_slice()[idx] = -law.energy.dphi_dj(j.as_slice()[idx], comp);
    }
    Ok(out)
}

/// Newtonian part of the dissipative stress, ν₁(J,c)·e(v).
pub fn newtonian_stress(
    grid: &Grid,
    law: &MaterialLaw,
    v: &VectorField,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> TensorField {
    let mut e = grid::sym_grad(grid, v);
    let mut buf = Vec::new();
    for idx in 0..grid.len() {
        let comp = composition_at(c, idx, &mut buf);
        let nu = law.viscosity.nu1_at(j.as_slice()[idx], comp);
        for i in 0..grid.dim() {
            for jj in 0..grid.dim() {
                e.comp_mut(i, jj).as_mut_slice()[idx] *= nu;
            }
        }
    }
    e
}

/// Hyperstress ν₂·|∇e(v)|^(q−2)·∇e(v).
pub fn hyperstress(
    grid: &Grid,
    law: &MaterialLaw,
    v: &VectorField,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> Rank3Field {
    let e = grid::sym_grad(grid, v);
    let mut s = grid::grad_tensor(grid, &e);
    let d = grid.dim();
    let q = law.viscosity.q;
    let mut buf = Vec::new();
    for idx in 0..grid.len() {
        let comp = composition_at(c, idx, &mut buf);
        let nu = law.viscosity.nu2_at(j.as_slice()[idx], comp);
        let norm_sq = s.norm_sq_at(idx);
        // |·|^(q−2) with the zero-norm case defined as 0 for q > 2 (and 1 for
        // the linear q = 2 debug mode).
        let coeff = if (q - 2.0).abs() < 1e-14 {
            nu
        } else if norm_sq == 0.0 {
            0.0
        } else {
            nu * norm_sq.powf(0.5 * (q - 2.0))
        };
        for i in 0..d {
            for jj in 0..d {
                for k in 0..d {
                    s.comp_mut(i, jj, k).as_mut_slice()[idx] *= coeff;
                }
            }
        }
    }
    s
}

/// Force contribution of the hyperstress to the momentum balance:
/// −div(div(ν₂|∇e(v)|^(q−2)∇e(v))). The sign is pinned by the duality
/// ∫ force·v = −∫ ν₂|∇e(v)|^q on a periodic box.
pub fn hyperviscous_force(
    grid: &Grid,
    law: &MaterialLaw,
    v: &VectorField,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> VectorField {
    let s = hyperstress(grid, law, v, j, c);
    let t = grid::div_rank3(grid, &s);
    let mut f = grid::div_tensor(grid, &t);
    for a in 0..grid.dim() {
        f.comp_mut(a).scale(-1.0);
    }
    f
}

/// Actual stored energy density φ_ref(J,c)/J.
pub fn stored_energy_density(
    grid: &Grid,
    law: &MaterialLaw,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    let mut buf = Vec::new();
    for idx in 0..grid.len() {
        let comp = composition_at(c, idx, &mut buf);
        let jj = j.as_slice()[idx];
        out.as_mut_slice()[idx] = law.energy.phi(jj, comp) / jj;
    }
    out
}

/// Pointwise viscous dissipation rate density ν₁|e(v)|² + ν₂|∇e(v)|^q.
pub fn viscous_dissipation(
    grid: &Grid,
    law: &MaterialLaw,
    v: &VectorField,
    j: &ScalarField,
    c: Option<&[ScalarField]>,
) -> ScalarField {
    let e = grid::sym_grad(grid, v);
    let s = grid::grad_tensor(grid, &e);
    let d = grid.dim();
    let q = law.viscosity.q;
    let mut out = ScalarField::zeros(grid);
    let mut buf = Vec::new();
    for idx in 0..grid.len() {
        let comp = composition_at(c, idx, &mut buf);
        let jj = j.as_slice()[idx];
        let mut e_sq = 0.0;
        for i in 0..d {
            for jx in 0..d {
                let val = e.comp(i, jx).as_slice()[idx];
                e_sq += val * val;
            }
        }
        let s_sq = s.norm_sq_at(idx);
        out.as_mut_slice()[idx] = law.viscosity.nu1_at(jj, comp) * e_sq
            + law.viscosity.nu2_at(jj, comp) * s_sq.powf(0.5 * q);
    }
    out
}
