//! Multicomponent concentrations on the Gibbs simplex: exterior
//! penalization, chemical potentials, mobility, reactions, and the
//! advection-diffusion-reaction step.
//!
//! The simplex constraint is enforced by the smooth exterior penalty
//! P_ε(c) = (1/2ε)·Σ min(0,c_i)² + (1/2ε)·(Σc_i − 1)², whose violation
//! scales like √ε in energy-saturated regimes. Reactions use a symmetric
//! matrix K assembled from mean-free difference channels, so K·1 = 0 holds
//! exactly and species totals telescope to round-off.
//!
//! The diffusion substep is semi-implicit: coefficients are lagged at the
//! previous state and the linear solve runs conjugate gradients in the
//! H-weighted inner product (H = φ''_cc/J + P″_ε), in which the frozen
//! operator is self-adjoint and positive definite.

use crate::constitutive::MaterialLaw;
use crate::error::{Monitor, SimError};
use crate::grid::{self, Boundary, Grid, ScalarField, VectorField};
use crate::kinematics::{advect_scalar, AdvectionScheme};

/// Mobility model relating species flux to chemical-potential gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum Mobility {
    /// Constant symmetric positive definite n×n matrix, row-major.
    Constant(Vec<f64>),
    /// Maxwell-Stefan m·(diag(c) − c⊗c): kernel spanned by the all-ones
    /// vector, hence only positive semidefinite (degenerate mode).
    MaxwellStefan { m: f64 },
}

/// One reaction channel: a mean-free direction d with rate k ≥ 0.
/// K = Σ k·d⊗d is symmetric, annihilates the all-ones vector exactly, and is
/// positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionChannel {
    pub rate: f64,
    pub basis: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n: usize,
    pub mobility: Mobility,
    pub reactions: Vec<ReactionChannel>,
    pub eps_pen: f64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::config("mixture.n", "need at least 2 species"));
        }
        if !(self.eps_pen > 0.0) {
            return Err(SimError::config(
                "mixture.eps_pen",
                "penalization strength must be positive",
            ));
        }
        match &self.mobility {
            Mobility::Constant(m) => {
                if m.len() != self.n * self.n {
                    return Err(SimError::config("mixture.mobility", "matrix size mismatch"));
                }
                for i in 0..self.n {
                    for j in 0..i {
                        if (m[i * self.n + j] - m[j * self.n + i]).abs() > 1e-12 {
                            return Err(SimError::config(
                                "mixture.mobility",
                                "matrix must be symmetric",
                            ));
                        }
                    }
                }
                // Positive definiteness by Cholesky attempt.
                let mut a = m.clone();
                for k in 0..self.n {
                    let mut d = a[k * self.n + k];
                    for p in 0..k {
                        d -= a[k * self.n + p] * a[k * self.n + p];
                    }
                    if d <= 0.0 {
                        return Err(SimError::config(
                            "mixture.mobility",
                            "matrix must be positive definite",
                        ));
                    }
                    let d = d.sqrt();
                    a[k * self.n + k] = d;
                    for i in k + 1..self.n {
                        let mut s = a[i * self.n + k];
                        for p in 0..k {
                            s -= a[i * self.n + p] * a[k * self.n + p];
                        }
                        a[i * self.n + k] = s / d;
                    }
                }
            }
            Mobility::MaxwellStefan { m } => {
                if !(*m > 0.0) {
                    return Err(SimError::config("mixture.mobility_m", "must be positive"));
                }
            }
        }
        for (i, ch) in self.reactions.iter().enumerate() {
            if ch.rate < 0.0 {
                return Err(SimError::config(
                    format!("mixture.reaction[{i}].rate"),
                    "must be nonnegative",
                ));
            }
            if ch.basis.len() != self.n {
                return Err(SimError::config(
                    format!("mixture.reaction[{i}]"),
                    "basis length mismatch",
                ));
            }
            if ch.basis.iter().sum::<f64>().abs() > 1e-12 {
                return Err(SimError::config(
                    format!("mixture.reaction[{i}]"),
                    "basis must be mean-free so that K·1 = 0",
                ));
            }
        }
        Ok(())
    }

    /// Reaction matrix K = Σ k·d⊗d as a dense n×n (diagnostic use).
    pub fn reaction_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut k = vec![0.0; n * n];
        for ch in &self.reactions {
            for i in 0..n {
                for j in 0..n {
                    k[i * n + j] += ch.rate * ch.basis[i] * ch.basis[j];
                }
            }
        }
        k
    }

    /// Mobility applied to an n-vector at composition `c` (lagged value).
    fn apply_mobility(&self, c: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.mobility {
            Mobility::Constant(m) => {
                for i in 0..self.n {
                    let mut acc = 0.0;
                    for j in 0..self.n {
                        acc += m[i * self.n + j] * v[j];
                    }
                    out[i] = acc;
                }
            }
            Mobility::MaxwellStefan { m } => {
                let dot: f64 = c.iter().zip(v).map(|(ci, vi)| ci * vi).sum();
                for i in 0..self.n {
                    out[i] = m * (c[i] * v[i] - c[i] * dot);
                }
            }
        }
    }

    /// Largest mobility eigenvalue estimate (for stability bookkeeping).
    pub fn mobility_scale(&self) -> f64 {
        match &self.mobility {
            Mobility::Constant(m) => {
                // Gershgorin bound.
                let mut bound = 0.0f64;
                for i in 0..self.n {
                    let row: f64 = (0..self.n).map(|j| m[i * self.n + j].abs()).sum();
                    bound = bound.max(row);
                }
                bound
            }
            Mobility::MaxwellStefan { m } => *m,
        }
    }

    /// Largest reaction eigenvalue estimate.
    pub fn reaction_scale(&self) -> f64 {
        self.reactions
            .iter()
            .map(|ch| ch.rate * ch.basis.iter().map(|d| d * d).sum::<f64>())
            .sum()
    }
}

/// Concentrations and chemical potentials.
#[derive(Debug, Clone)]
pub struct SpeciesState {
    pub c: Vec<ScalarField>,
    pub mu: Vec<ScalarField>,
}

impl SpeciesState {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|f| f.is_finite()) && self.mu.iter().all(|f| f.is_finite())
    }
}

/// Exact value, gradient, and Hessian of the exterior penalty P_ε
/// (piecewise quadratic). The Hessian is returned dense row-major.
pub fn penalty(c: &[f64], eps: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = c.len();
    let mut value = penalty_value(c, eps);
    let mut gradient = vec![0.0; n];
    penalty_grad(c, eps, &mut gradient);
    let mut hessian = vec![0.0; n * n];
    let inv = 1.0 / eps;
    for i in 0..n {
        for j in 0..n {
            hessian[i * n + j] = inv;
        }
        if c[i] < 0.0 {
            hessian[i * n + i] += inv;
        }
    }
    // Guard against negative zero surprises in the reported value.
    if value == 0.0 {
        value = 0.0;
    }
    (value, gradient, hessian)
}

pub fn penalty_value(c: &[f64], eps: f64) -> f64 {
    let neg: f64 = c.iter().map(|ci| ci.min(0.0).powi(2)).sum();
    let sum: f64 = c.iter().sum::<f64>() - 1.0;
    (neg + sum * sum) / (2.0 * eps)
}

pub fn penalty_grad(c: &[f64], eps: f64, out: &mut [f64]) {
    let sum: f64 = c.iter().sum::<f64>() - 1.0;
    for (o, ci) in out.iter_mut().zip(c) {
        *o = (ci.min(0.0) + sum) / eps;
    }
}

/// Pointwise orthogonal projection onto the mean-free subspace:
/// (Pμ)_i = μ_i − (1/n)Σμ_j.
pub fn projection_p(mu: &[f64], out: &mut [f64]) {
    let mean = mu.iter().sum::<f64>() / mu.len() as f64;
    for (o, m) in out.iter_mut().zip(mu) {
        *o = m - mean;
    }
}

/// Field-level projection removing the global spatial mean of μ·1:
/// Qμ = μ − (1/(n|Ω|)) ∫ μ·1 dx · 1, so ∫ (Qμ)·1 dx = 0.
pub fn projection_q(grid: &Grid, mu: &[ScalarField]) -> Vec<ScalarField> {
    let n = mu.len();
    let volume = grid.cell_volume() * grid.len() as f64;
    let total: f64 = mu.iter().map(|f| grid::integrate(grid, f)).sum();
    let shift = total / (n as f64 * volume);
    mu.iter()
        .map(|f| {
            let mut g = f.clone();
            for v in g.as_mut_slice() {
                *v -= shift;
            }
            g
        })
        .collect()
}

/// μ = ∂_c φ_ref(J,c)/J + P′_ε(c), evaluated pointwise (no spatial
/// coupling).
pub fn chemical_potential(
    grid: &Grid,
    c: &[ScalarField],
    j: &ScalarField,
    law: &MaterialLaw,
    spec: &MixtureSpec,
) -> Result<Vec<ScalarField>, SimError> {
    if !(j.min() > 0.0) {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::JacobianFloor,
            t: 0.0,
            step: 0,
            details: format!("chemical potential needs min J > 0, got {}", j.min()),
        });
    }
    let n = spec.n;
    let mut out: Vec<ScalarField> = (0..n).map(|_| ScalarField::zeros(grid)).collect();
    let mut cv = vec![0.0; n];
    let mut dphi = vec![0.0; n];
    let mut pen = vec![0.0; n];
    for idx in 0..grid.len() {
        for (i, f) in c.iter().enumerate() {
            cv[i] = f.as_slice()[idx];
        }
        let jj = j.as_slice()[idx];
        law.energy.dphi1_dc(jj, &cv, &mut dphi);
        penalty_grad(&cv, spec.eps_pen, &mut pen);
        for i in 0..n {
            out[i].as_mut_slice()[idx] = dphi[i] / jj + pen[i];
        }
    }
    Ok(out)
}

/// Regularized reaction rate r = K·μ with μ = ∂_cφ/J + P′_ε(c), assembled
/// channel by channel so that r·1 = 0 exactly.
pub fn reaction_rate(
    grid: &Grid,
    c: &[ScalarField],
    j: &ScalarField,
    law: &MaterialLaw,
    spec: &MixtureSpec,
) -> Result<Vec<ScalarField>, SimError> {
    let mu = chemical_potential(grid, c, j, law, spec)?;
    let n = spec.n;
    let mut out: Vec<ScalarField> = (0..n).map(|_| ScalarField::zeros(grid)).collect();
    for idx in 0..grid.len() {
        for ch in &spec.reactions {
            let mut proj = 0.0;
            for i in 0..n {
                proj += ch.basis[i] * mu[i].as_slice()[idx];
            }
            let s = ch.rate * proj;
            for i in 0..n {
                out[i].as_mut_slice()[idx] += s * ch.basis[i];
            }
        }
    }
    Ok(out)
}

/// Penalty energy ∫ P_ε(c) dx.
pub fn penalty_energy(grid: &Grid, c: &[ScalarField], eps: f64) -> f64 {
    let n = c.len();
    let mut cv = vec![0.0; n];
    let mut sum = 0.0;
    for idx in 0..grid.len() {
        for (i, f) in c.iter().enumerate() {
            cv[i] = f.as_slice()[idx];
        }
        sum += penalty_value(&cv, eps);
    }
    sum * grid.cell_volume()
}

/// Simplex-violation report: (‖Σc−1‖_L², max_i ‖min(0,c_i)‖_L²).
pub fn simplex_violation(grid: &Grid, c: &[ScalarField]) -> (f64, f64) {
    let mut sum_sq = 0.0;
    let mut neg_sq = vec![0.0; c.len()];
    for idx in 0..grid.len() {
        let s: f64 = c.iter().map(|f| f.as_slice()[idx]).sum::<f64>() - 1.0;
        sum_sq += s * s;
        for (i, f) in c.iter().enumerate() {
            let v = f.as_slice()[idx].min(0.0);
            neg_sq[i] += v * v;
        }
    }
    let vol = grid.cell_volume();
    let worst_neg = neg_sq.iter().fold(0.0f64, |m, v| m.max(*v));
    ((sum_sq * vol).sqrt(), (worst_neg * vol).sqrt())
}

/// Dissipation rates in manifestly nonnegative form:
/// (∫ M∇μ:∇μ by face quadrature, ∫ r·μ = Σ k(d·μ)²).
pub fn dissipation_rates(
    grid: &Grid,
    c: &[ScalarField],
    mu: &[ScalarField],
    spec: &MixtureSpec,
) -> (f64, f64) {
    let n = spec.n;
    let mut diffusive = 0.0;
    let mut dmu = vec![0.0; n];
    let mut flux = vec![0.0; n];
    let mut cbar = vec![0.0; n];
    for_each_face(grid, |lo, hi, axis| {
        let h = grid.spacing()[axis];
        for i in 0..n {
            dmu[i] = (mu[i].as_slice()[hi] - mu[i].as_slice()[lo]) / h;
            cbar[i] = 0.5 * (c[i].as_slice()[lo] + c[i].as_slice()[hi]);
        }
        spec.apply_mobility(&cbar, &dmu, &mut flux);
        let mut q = 0.0;
        for i in 0..n {
            q += flux[i] * dmu[i];
        }
        diffusive += q;
    });
    diffusive *= grid.cell_volume();

    let mut reactive = 0.0;
    for idx in 0..grid.len() {
        for ch in &spec.reactions {
            let mut proj = 0.0;
            for i in 0..n {
                proj += ch.basis[i] * mu[i].as_slice()[idx];
            }
            reactive += ch.rate * proj * proj;
        }
    }
    reactive *= grid.cell_volume();
    (diffusive, reactive)
}

/// Visit every interior/periodic face once as (low cell, high cell, axis).
/// Wall faces carry zero flux and are skipped.
fn for_each_face(grid: &Grid, mut f: impl FnMut(usize, usize, usize)) {
    for axis in 0..grid.dim() {
        let n = grid.cells();
        for idx in 0..grid.len() {
            let c = grid.coords(idx);
            let last = c[axis] + 1 == n[axis];
            if last && grid.boundary(axis) == Boundary::SlipWall {
                continue;
            }
            let mut cc = c;
            cc[axis] = if last { 0 } else { c[axis] + 1 };
            f(idx, grid.index(cc), axis);
        }
    }
}

/// Per-cell frozen Hessian H = φ''_cc/J + P″_ε(c): the apply is
/// (chi/J + ind_i/ε)·v_i + (Σv)/ε with ind the negative-part indicator.
struct FrozenHessian {
    chi_over_j: Vec<f64>,
    neg_mask: Vec<u8>,
    inv_eps: f64,
    n: usize,
}

impl FrozenHessian {
    fn build(grid: &Grid, c: &[ScalarField], j: &ScalarField, law: &MaterialLaw, spec: &MixtureSpec) -> Self {
        let n = spec.n;
        let chi = law.energy.d2phi1_dcc();
        let mut chi_over_j = Vec::with_capacity(grid.len());
        let mut neg_mask = vec![0u8; grid.len() * n];
        for idx in 0..grid.len() {
            chi_over_j.push(chi / j.as_slice()[idx]);
            for (i, f) in c.iter().enumerate() {
                // The penalty kink sits exactly at 0; round-off-scale
                // negatives carry no meaningful force, and flagging them
                // would poison the solve with spurious stiff cells. Values
                // and gradients elsewhere keep the exact piecewise formula.
                if f.as_slice()[idx] < -1e-12 {
                    neg_mask[idx * n + i] = 1;
                }
            }
        }
        FrozenHessian {
            chi_over_j,
            neg_mask,
            inv_eps: 1.0 / spec.eps_pen,
            n,
        }
    }

    #[inline]
    fn apply(&self, idx: usize, v: &[f64], out: &mut [f64]) {
        let sum: f64 = v.iter().sum();
        for i in 0..self.n {
            let ind = self.neg_mask[idx * self.n + i] as f64;
            out[i] = (self.chi_over_j[idx] + ind * self.inv_eps) * v[i] + sum * self.inv_eps;
        }
    }
}

/// Closed-form per-cell half-weight B = H^(1/2) for
/// H = a·I + (1/ε)(1⊗1 + D_neg). Cells without active negative parts use
/// the sum/deviation eigenstructure directly; penalized cells get a small
/// dense eigendecomposition reached through a flat index map.
struct HalfWeight {
    n: usize,
    sqrt_dev: Vec<f64>,
    sqrt_sum: Vec<f64>,
    /// u32::MAX marks a regular cell; otherwise an index into `special`.
    special_at: Vec<u32>,
    special: Vec<SmallEig>,
}

struct SmallEig {
    q: Vec<f64>,
    sqrt: Vec<f64>,
}

impl HalfWeight {
    fn build(hess: &FrozenHessian, cells: usize) -> Self {
        let n = hess.n;
        let beta = hess.inv_eps;
        let mut sqrt_dev = Vec::with_capacity(cells);
        let mut sqrt_sum = Vec::with_capacity(cells);
        let mut special_at = vec![u32::MAX; cells];
        let mut special = Vec::new();
        for idx in 0..cells {
            let a = hess.chi_over_j[idx];
            sqrt_dev.push(a.sqrt());
            sqrt_sum.push((a + n as f64 * beta).sqrt());
            if (0..n).any(|i| hess.neg_mask[idx * n + i] == 1) {
                // Dense H for this cell.
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        m[i * n + k] = beta;
                    }
                    m[i * n + i] += a + beta * hess.neg_mask[idx * n + i] as f64;
                }
                let (q, lam) = jacobi_eigh(&m, n);
                special_at[idx] = special.len() as u32;
                special.push(SmallEig {
                    q,
                    sqrt: lam.iter().map(|l| l.max(1e-300).sqrt()).collect(),
                });
            }
        }
        HalfWeight {
            n,
            sqrt_dev,
            sqrt_sum,
            special_at,
            special,
        }
    }

    fn special_count(&self) -> usize {
        self.special.len()
    }

    #[inline]
    fn apply(&self, idx: usize, v: &[f64], out: &mut [f64], inverse: bool) {
        let n = self.n;
        let tag = self.special_at[idx];
        if tag != u32::MAX {
            let eig = &self.special[tag as usize];
            // out = Q f(Λ) Qᵀ v
            for i in 0..n {
                out[i] = 0.0;
            }
            for k in 0..n {
                let mut proj = 0.0;
                for i in 0..n {
                    proj += eig.q[i * n + k] * v[i];
                }
                let f = if inverse { proj / eig.sqrt[k] } else { proj * eig.sqrt[k] };
                for i in 0..n {
                    out[i] += eig.q[i * n + k] * f;
                }
            }
            return;
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let (sd, ss) = if inverse {
            (1.0 / self.sqrt_dev[idx], 1.0 / self.sqrt_sum[idx])
        } else {
            (self.sqrt_dev[idx], self.sqrt_sum[idx])
        };
        for i in 0..n {
            out[i] = sd * v[i] + (ss - sd) * mean;
        }
    }
}

/// Cyclic Jacobi eigendecomposition for tiny symmetric matrices.
fn jacobi_eigh(m: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = m.to_vec();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for _sweep in 0..30 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = a[p * n + r];
                if apr.abs() < 1e-30 {
                    continue;
                }
                let theta = 0.5 * (a[r * n + r] - a[p * n + p]) / apr;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akr = a[k * n + r];
                    a[k * n + p] = c * akp - s * akr;
                    a[k * n + r] = s * akp + c * akr;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let ark = a[r * n + k];
                    a[p * n + k] = c * apk - s * ark;
                    a[r * n + k] = s * apk + c * ark;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkr = q[k * n + r];
                    q[k * n + p] = c * qkp - s * qkr;
                    q[k * n + r] = s * qkp + c * qkr;
                }
            }
        }
    }
    let lam = (0..n).map(|i| a[i * n + i]).collect();
    (q, lam)
}

/// Constant-coefficient inverse of w − dt·m·H̄·Δ applied by FFT: wall axes
/// are mirror-extended, which realizes the no-flux condition exactly by the
/// reflection principle.
struct SpectralPreconditioner {
    grid: Grid,
    n: usize,
    ext_cells: [usize; 3],
    factor_dev: Vec<f64>,
    factor_sum: Vec<f64>,
    /// Pointwise Jacobi half-weights 1/√diag(T) per cell and species;
    /// normalizes the locally stiff penalized cells that the uniform
    /// spectral model cannot see.
    jacobi_half: Vec<f64>,
    planner: rustfft::FftPlanner<f64>,
    /// Interior source index for every extended cell (mirror extension).
    gather: Vec<u32>,
    /// Extended index of every interior cell (restriction).
    scatter: Vec<u32>,
    buf: Vec<rustfft::num_complex::Complex64>,
    line: Vec<rustfft::num_complex::Complex64>,
}

impl SpectralPreconditioner {
    fn build(
        grid: &Grid,
        spec: &MixtureSpec,
        hess: &FrozenHessian,
        dt: f64,
    ) -> SpectralPreconditioner {
        let n = spec.n;
        let dim = grid.dim();
        let mut ext = [1usize; 3];
        for a in 0..dim {
            ext[a] = match grid.boundary(a) {
                Boundary::Periodic => grid.cells()[a],
                Boundary::SlipWall => 2 * grid.cells()[a],
            };
        }
        // Mean curvature coefficient and channel mobilities.
        let a_bar =
            hess.chi_over_j.iter().sum::<f64>() / hess.chi_over_j.len() as f64;
        let h_sum = a_bar + n as f64 * hess.inv_eps;
        let (m_sum, m_dev) = match &spec.mobility {
            Mobility::Constant(m) => {
                let row: f64 = (0..n)
                    .map(|i| (0..n).map(|j| m[i * n + j]).sum::<f64>())
                    .sum::<f64>()
                    / n as f64;
                let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
                let dev = if n > 1 {
                    ((trace - row) / (n - 1) as f64).max(1e-12)
                } else {
                    row
                };
                (row.max(0.0), dev)
            }
            Mobility::MaxwellStefan { m } => (0.0, 0.25 * m),
        };
        // Jacobi half-weights from the diagonal of T: at cell idx and
        // species i the face-flux diagonal is 1 + dt·(Σ_a 2/h_a²)·m_ii·H_ii.
        let h = grid.spacing();
        let lam_diag: f64 = (0..dim).map(|a| 2.0 / (h[a] * h[a])).sum();
        let m_diag: Vec<f64> = match &spec.mobility {
            Mobility::Constant(m) => (0..n).map(|i| m[i * n + i]).collect(),
            Mobility::MaxwellStefan { m } => vec![0.25 * m; n],
        };
        let cells_total = grid.len();
        let mut jacobi_half = Vec::with_capacity(cells_total * n);
        for idx in 0..cells_total {
            let a = hess.chi_over_j[idx];
            for i in 0..n {
                let h_ii = a + hess.inv_eps * (1.0 + hess.neg_mask[idx * n + i] as f64);
                let diag = 1.0 + dt * lam_diag * m_diag[i] * h_ii;
                jacobi_half.push(1.0 / diag.sqrt());
            }
        }
        // Reference diagonal of the channel model, so that the sandwich
        // J^(1/2)·S·J^(1/2) stays an exact inverse in the uniform case.
        let total: usize = ext[0] * ext[1] * ext[2];
        let mut factor_dev = Vec::with_capacity(total);
        let mut factor_sum = Vec::with_capacity(total);
        let mut idx3 = [0usize; 3];
        for i in 0..ext[0] {
            for j in 0..ext[1] {
                for k in 0..ext[2] {
                    idx3 = [i, j, k];
                    let mut lam = 0.0;
                    for a in 0..dim {
                        let theta =
                            2.0 * std::f64::consts::PI * idx3[a] as f64 / ext[a] as f64;
                        lam += (2.0 - 2.0 * theta.cos()) / (h[a] * h[a]);
                    }
                    // Pre/post Jacobi sandwiching supplies two factors of
                    // the model diagonal; compensate so regular cells see
                    // exactly 1/(1 + dt·m·h·λ).
                    let m_ii = m_diag.iter().sum::<f64>() / n as f64;
                    let diag_model = 1.0 + dt * lam_diag * m_ii * (a_bar + hess.inv_eps);
                    factor_dev.push(diag_model / (1.0 + dt * m_dev * a_bar * lam));
                    factor_sum.push(diag_model / (1.0 + dt * m_sum * h_sum * lam));
                }
            }
        }
        let _ = idx3;
        let ext_index =
            |c: [usize; 3]| (c[0] * ext[1] + c[1]) * ext[2] + c[2];
        let cells = grid.cells();
        let mut gather = vec![0u32; total];
        for e0 in 0..ext[0] {
            for e1 in 0..ext[1] {
                for e2 in 0..ext[2] {
                    let e = [e0, e1, e2];
                    let mut c = [0usize; 3];
                    for a in 0..3 {
                        let na = cells[a];
                        c[a] = if e[a] < na { e[a] } else { 2 * na - 1 - e[a] };
                    }
                    gather[ext_index(e)] = grid.index(c) as u32;
                }
            }
        }
        let mut scatter = vec![0u32; grid.len()];
        for idx in 0..grid.len() {
            scatter[idx] = ext_index(grid.coords(idx)) as u32;
        }
        SpectralPreconditioner {
            grid: grid.clone(),
            n,
            ext_cells: ext,
            factor_dev,
            factor_sum,
            jacobi_half,
            planner: rustfft::FftPlanner::new(),
            gather,
            scatter,
            buf: vec![rustfft::num_complex::Complex64::new(0.0, 0.0); total],
            line: Vec::new(),
        }
    }

    fn fft_ext(&mut self, data: &mut [rustfft::num_complex::Complex64], inverse: bool) {
        let dim = self.grid.dim();
        let ext = self.ext_cells;
        let strides = [ext[1] * ext[2], ext[2], 1usize];
        for axis in 0..dim {
            let len = ext[axis];
            let fft = if inverse {
                self.planner.plan_fft_inverse(len)
            } else {
                self.planner.plan_fft_forward(len)
            };
            let others: Vec<usize> = (0..3).filter(|a| *a != axis).collect();
            let stride = strides[axis];
            self.line.resize(len, rustfft::num_complex::Complex64::new(0.0, 0.0));
            for i in 0..ext[others[0]] {
                for j in 0..ext[others[1]] {
                    let base = i * strides[others[0]] + j * strides[others[1]];
                    let mut pos = base;
                    for v in self.line.iter_mut() {
                        *v = data[pos];
                        pos += stride;
                    }
                    fft.process(&mut self.line);
                    let mut pos = base;
                    for v in self.line.iter() {
                        data[pos] = *v;
                        pos += stride;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0
                / (0..dim).map(|a| ext[a] as f64).product::<f64>();
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Solve the constant-coefficient model for one scalar field.
    fn scalar_solve(&mut self, field: &[f64], sum_channel: bool, out: &mut [f64]) {
        let mut buf = std::mem::take(&mut self.buf);
        for (v, src) in buf.iter_mut().zip(&self.gather) {
            v.re = field[*src as usize];
            v.im = 0.0;
        }
        self.fft_ext(&mut buf, false);
        let factors = if sum_channel {
            &self.factor_sum
        } else {
            &self.factor_dev
        };
        for (v, f) in buf.iter_mut().zip(factors) {
            *v *= *f;
        }
        self.fft_ext(&mut buf, true);
        for (o, e) in out.iter_mut().zip(&self.scatter) {
            *o = buf[*e as usize].re;
        }
        self.buf = buf;
    }

    /// z = J^(1/2)·S·J^(1/2) r with S acting in sum/deviation channels.
    fn apply(&mut self, r: &[Vec<f64>], z: &mut [Vec<f64>], scratch: &mut Vec<f64>) {
        let n = self.n;
        let cells = self.grid.len();
        // Jacobi pre-scale into z as staging.
        for i in 0..n {
            for idx in 0..cells {
                z[i][idx] = r[i][idx] * self.jacobi_half[idx * n + i];
            }
        }
        // Sum channel.
        scratch.resize(cells, 0.0);
        for idx in 0..cells {
            let mut s = 0.0;
            for comp in z.iter() {
                s += comp[idx];
            }
            scratch[idx] = s / n as f64;
        }
        let mut sum_solved = vec![0.0; cells];
        self.scalar_solve(scratch, true, &mut sum_solved);
        // Deviation channels.
        let mut dev = vec![0.0; cells];
        for i in 0..n {
            for idx in 0..cells {
                dev[idx] = z[i][idx] - scratch[idx];
            }
            self.scalar_solve(&dev, false, &mut z[i]);
            for idx in 0..cells {
                z[i][idx] = (z[i][idx] + sum_solved[idx]) * self.jacobi_half[idx * n + i];
            }
        }
    }
}

/// Workspace for the semi-implicit diffusion solve in the symmetrized
/// variables w = B c.
struct DiffusionSolver<'a> {
    grid: &'a Grid,
    spec: &'a MixtureSpec,
    hess: FrozenHessian,
    half: HalfWeight,
    c_lag: Vec<Vec<f64>>,
    dt: f64,
}

impl<'a> DiffusionSolver<'a> {
    /// y = Div(M ∇u) by face fluxes with no-flux walls, stride-swept.
    fn flux_div(&self, u: &[Vec<f64>], out: &mut [Vec<f64>]) {
        let n = self.spec.n;
        for comp in out.iter_mut() {
            for v in comp.iter_mut() {
                *v = 0.0;
            }
        }
        let mut du = vec![0.0; n];
        let mut flux = vec![0.0; n];
        let mut cbar = vec![0.0; n];
        let cells = self.grid.cells();
        let strides = self.grid.strides();
        for axis in 0..self.grid.dim() {
            let inv_h2 = 1.0 / (self.grid.spacing()[axis] * self.grid.spacing()[axis]);
            let count = cells[axis];
            let stride = strides[axis] as isize;
            let wall = self.grid.boundary(axis) == Boundary::SlipWall;
            let wrap_delta = -((count as isize - 1) * stride);
            let mut idx = 0usize;
            for i in 0..cells[0] {
                for j in 0..cells[1] {
                    for k in 0..cells[2] {
                        let ca = [i, j, k][axis];
                        let last = ca + 1 == count;
                        if !(last && wall) {
                            let hi = if last {
                                (idx as isize + wrap_delta) as usize
                            } else {
                                (idx as isize + stride) as usize
                            };
                            for s in 0..n {
                                du[s] = u[s][hi] - u[s][idx];
                                cbar[s] = 0.5 * (self.c_lag[s][hi] + self.c_lag[s][idx]);
                            }
                            self.spec.apply_mobility(&cbar, &du, &mut flux);
                            for s in 0..n {
                                let f = flux[s] * inv_h2;
                                out[s][idx] += f;
                                out[s][hi] -= f;
                            }
                        }
                        idx += 1;
                    }
                }
            }
        }
    }

    /// Symmetrized operator T(w) = w − dt·B·Div(M∇(B w)).
    fn operator(&self, w: &[Vec<f64>], bw: &mut [Vec<f64>], out: &mut [Vec<f64>]) {
        let n = self.spec.n;
        let cells = self.grid.len();
        let mut v = vec![0.0; n];
        let mut bv = vec![0.0; n];
        for idx in 0..cells {
            for i in 0..n {
                v[i] = w[i][idx];
            }
            self.half.apply(idx, &v, &mut bv, false);
            for i in 0..n {
                bw[i][idx] = bv[i];
            }
        }
        self.flux_div(bw, out);
        for idx in 0..cells {
            for i in 0..n {
                v[i] = out[i][idx];
            }
            self.half.apply(idx, &v, &mut bv, false);
            for i in 0..n {
                out[i][idx] = w[i][idx] - self.dt * bv[i];
            }
        }
    }

    fn dot(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for (uc, vc) in u.iter().zip(v) {
            for (a, b) in uc.iter().zip(vc) {
                acc += a * b;
            }
        }
        acc * self.grid.cell_volume()
    }
}

/// Scratch carried between diffusion solves: the previous correction warm
/// starts the next PCG.
#[derive(Default)]
pub struct MixtureWorkspace {
    correction: Option<Vec<Vec<f64>>>,
}

/// Advance the species state by operator splitting:
/// (i) advection by v (upwind), (ii) semi-implicit diffusion of
/// div(M∇μ) solved by preconditioned conjugate gradients on the
/// symmetrized system, (iii) reaction −r with the stiff negative-part
/// penalty treated implicitly. No-flux walls throughout.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_reaction_step(
    grid: &Grid,
    state: &SpeciesState,
    v: Option<&VectorField>,
    j: &ScalarField,
    dt: f64,
    spec: &MixtureSpec,
    law: &MaterialLaw,
    scheme: AdvectionScheme,
    t: f64,
) -> Result<SpeciesState, SimError> {
    let mut ws = MixtureWorkspace::default();
    diffusion_reaction_step_ws(grid, state, v, j, dt, spec, law, scheme, t, &mut ws)
}

/// `diffusion_reaction_step` with a persistent workspace for warm starts.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_reaction_step_ws(
    grid: &Grid,
    state: &SpeciesState,
    v: Option<&VectorField>,
    j: &ScalarField,
    dt: f64,
    spec: &MixtureSpec,
    law: &MaterialLaw,
    scheme: AdvectionScheme,
    t: f64,
    ws: &mut MixtureWorkspace,
) -> Result<SpeciesState, SimError> {
    let n = spec.n;
    let cells = grid.len();

    // (i) advection
    let c_adv: Vec<ScalarField> = match v {
        Some(vel) => state
            .c
            .iter()
            .map(|f| advect_scalar(grid, f, vel, dt, scheme, None))
            .collect(),
        None => state.c.clone(),
    };

    // (ii) semi-implicit diffusion. In c-variables the scheme solves
    // (I − dt·Div(M∇(H·)))c' = c_adv + dt·Div(M∇(μ_old − H c_adv)); in the
    // symmetrized variables w = B c (B = H^(1/2)) the operator is
    // self-adjoint positive definite in L², and the constant-coefficient
    // spectral inverse is an effective preconditioner because the stiff
    // penalty channel is spatially uniform.
    let mu_old = chemical_potential(grid, &c_adv, j, law, spec)?;
    let hess = FrozenHessian::build(grid, &c_adv, j, law, spec);
    let half = HalfWeight::build(&hess, cells);
    let c_lag: Vec<Vec<f64>> = c_adv.iter().map(|f| f.as_slice().to_vec()).collect();
    let solver = DiffusionSolver {
        grid,
        spec,
        hess,
        half,
        c_lag,
        dt,
    };
    let mut pre = SpectralPreconditioner::build(grid, spec, &solver.hess, dt);

    // rhs_c = c_adv + dt·Div(M∇(μ_old − H c_adv)), then rhs_w = B rhs_c.
    let mut resid_src = vec![vec![0.0; cells]; n];
    {
        let mut cv = vec![0.0; n];
        let mut hv = vec![0.0; n];
        for idx in 0..cells {
            for i in 0..n {
                cv[i] = c_adv[i].as_slice()[idx];
            }
            solver.hess.apply(idx, &cv, &mut hv);
            for i in 0..n {
                resid_src[i][idx] = mu_old[i].as_slice()[idx] - hv[i];
            }
        }
    }
    let mut rhs = vec![vec![0.0; cells]; n];
    solver.flux_div(&resid_src, &mut rhs);
    {
        let mut cv = vec![0.0; n];
        let mut bv = vec![0.0; n];
        for idx in 0..cells {
            for i in 0..n {
                cv[i] = c_adv[i].as_slice()[idx] + dt * rhs[i][idx];
            }
            solver.half.apply(idx, &cv, &mut bv, false);
            for i in 0..n {
                rhs[i][idx] = bv[i];
            }
        }
    }

    // PCG on T w = rhs_w, warm-started at w = B c_adv plus the previous
    // step's correction.
    let mut x = vec![vec![0.0; cells]; n];
    {
        let mut cv = vec![0.0; n];
        let mut bv = vec![0.0; n];
        for idx in 0..cells {
            for i in 0..n {
                cv[i] = c_adv[i].as_slice()[idx];
            }
            solver.half.apply(idx, &cv, &mut bv, false);
            for i in 0..n {
                x[i][idx] = bv[i];
            }
        }
    }
    let x0 = x.clone();
    if let Some(corr) = &ws.correction {
        if corr.len() == n && corr[0].len() == cells {
            for i in 0..n {
                for idx in 0..cells {
                    x[i][idx] += corr[i][idx];
                }
            }
        }
    }
    let mut bw = vec![vec![0.0; cells]; n];
    let mut tx = vec![vec![0.0; cells]; n];
    solver.operator(&x, &mut bw, &mut tx);
    let mut r = vec![vec![0.0; cells]; n];
    for i in 0..n {
        for idx in 0..cells {
            r[i][idx] = rhs[i][idx] - tx[i][idx];
        }
    }
    let mut z = vec![vec![0.0; cells]; n];
    let mut scratch = Vec::new();
    pre.apply(&r, &mut z, &mut scratch);
    let mut pdir = z.clone();
    let mut rz = solver.dot(&r, &z);
    let rhs_norm = solver.dot(&rhs, &rhs).max(1e-300);
    let tol_sq = 1e-16 * rhs_norm;
    let max_iter = 200;
    let mut iter = 0;
    let mut rr = solver.dot(&r, &r);
    while rr > tol_sq && iter < max_iter {
        solver.operator(&pdir, &mut bw, &mut tx);
        let p_tp = solver.dot(&pdir, &tx);
        if !(p_tp > 0.0) {
            break;
        }
        let alpha = rz / p_tp;
        for i in 0..n {
            for idx in 0..cells {
                x[i][idx] += alpha * pdir[i][idx];
                r[i][idx] -= alpha * tx[i][idx];
            }
        }
        rr = solver.dot(&r, &r);
        if rr <= tol_sq {
            break;
        }
        pre.apply(&r, &mut z, &mut scratch);
        let rz_new = solver.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            for idx in 0..cells {
                pdir[i][idx] = z[i][idx] + beta * pdir[i][idx];
            }
        }
        iter += 1;
    }
    if std::env::var("SGDIFF_CG_TRACE").is_ok() {
        let mins: Vec<f64> = c_adv.iter().map(|f| f.min()).collect();
        eprintln!(
            "mixture pcg iters {iter}, penalized cells {}, min c {mins:?}",
            solver.half.special_count()
        );
    }
    if !(rr <= tol_sq * 1e6) {
        return Err(SimError::MonitorTripped {
            monitor: Monitor::StepRejected,
            t,
            step: 0,
            details: format!(
                "diffusion solve stalled: residual {rr:.3e} after {iter} iterations"
            ),
        });
    }
    // Remember the correction for the next warm start.
    {
        let mut corr = x.clone();
        for i in 0..n {
            for idx in 0..cells {
                corr[i][idx] -= x0[i][idx];
            }
        }
        ws.correction = Some(corr);
    }
    // Back to concentrations: c = B⁻¹ w.
    {
        let mut cv = vec![0.0; n];
        let mut bv = vec![0.0; n];
        for idx in 0..cells {
            for i in 0..n {
                cv[i] = x[i][idx];
            }
            solver.half.apply(idx, &cv, &mut bv, true);
            for i in 0..n {
                x[i][idx] = bv[i];
            }
        }
    }

    // (iii) reaction: c ← c − dt·K(∂_cφ/J + P′(c)). The sum-penalty part of
    // P′ lies in span{1} = ker K and drops identically; the negative-part
    // term is stiff (rate k/ε) and is treated implicitly with a per-cell
    // active-set solve. The update is reconstructed channel-wise so species
    // totals telescope exactly.
    let mut c_new: Vec<ScalarField> = x
        .iter()
        .map(|data| ScalarField::from_vec(grid, data.clone()))
        .collect();
    if !spec.reactions.is_empty() {
        let inv_eps = 1.0 / spec.eps_pen;
        let n_ch = spec.reactions.len();
        let mut cv = vec![0.0; n];
        let mut gv = vec![0.0; n];
        let mut base = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut mat = vec![0.0; n * n];
        let mut rhs_cell = vec![0.0; n];
        let mut coeffs = vec![0.0; n_ch];
        for idx in 0..cells {
            let jj = j.as_slice()[idx];
            for i in 0..n {
                cv[i] = c_new[i].as_slice()[idx];
            }
            law.energy.dphi1_dc(jj, &cv, &mut gv);
            for g in gv.iter_mut() {
                *g /= jj;
            }
            // Explicit smooth part.
            for (i, b) in base.iter_mut().enumerate() {
                *b = cv[i];
            }
            for ch in &spec.reactions {
                let proj: f64 = ch.basis.iter().zip(&gv).map(|(d, g)| d * g).sum();
                let s = dt * ch.rate * proj;
                for i in 0..n {
                    base[i] -= s * ch.basis[i];
                }
            }
            // Implicit negative-part penalty: solve
            // (I + (dt/ε)·K·D_A)·c = base with active set A = {c_i < 0},
            // iterating the active set to a fixed point.
            trial.copy_from_slice(&base);
            let mut solved = trial.clone();
            for _sweep in 0..8 {
                let active: Vec<bool> = trial.iter().map(|v| *v < 0.0).collect();
                if active.iter().all(|a| !a) {
                    solved.copy_from_slice(&base);
                    break;
                }
                // Assemble I + (dt/ε) K D_A.
                for i in 0..n {
                    for k in 0..n {
                        let mut kik = 0.0;
                        for ch in &spec.reactions {
                            kik += ch.rate * ch.basis[i] * ch.basis[k];
                        }
                        mat[i * n + k] =
                            if i == k { 1.0 } else { 0.0 } + dt * inv_eps * kik * active[k] as u8 as f64;
                    }
                    rhs_cell[i] = base[i];
                }
                solve_dense(&mut mat, &mut rhs_cell, n);
                solved.copy_from_slice(&rhs_cell);
                let new_active: Vec<bool> = solved.iter().map(|v| *v < 0.0).collect();
                let stable = new_active == active;
                trial.copy_from_slice(&solved);
                if stable {
                    break;
                }
            }
            // Channel-wise reconstruction keeps the update mean-free in
            // floating point: c = base + Σ t_m d_m.
            for (m, ch) in spec.reactions.iter().enumerate() {
                let mut proj = 0.0;
                for i in 0..n {
                    proj += ch.basis[i] * solved[i].min(0.0);
                }
                coeffs[m] = -dt * inv_eps * ch.rate * proj;
            }
            for i in 0..n {
                let mut val = base[i];
                for (m, ch) in spec.reactions.iter().enumerate() {
                    val += coeffs[m] * ch.basis[i];
                }
                c_new[i].as_mut_slice()[idx] = val;
            }
        }
    }

    for f in &c_new {
        if !f.is_finite() {
            return Err(SimError::MonitorTripped {
                monitor: Monitor::NonFinite,
                t,
                step: 0,
                details: "species step produced non-finite concentrations".into(),
            });
        }
    }
    let mu = chemical_potential(grid, &c_new, j, law, spec)?;
    Ok(SpeciesState { c: c_new, mu })
}

/// In-place Gaussian elimination with partial pivoting for tiny systems.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{StoredEnergy, Viscosity};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec2(eps: f64, k: f64) -> MixtureSpec {
        MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![1.0, 0.0, 0.0, 1.0]),
            reactions: if k > 0.0 {
                vec![ReactionChannel {
                    rate: k,
                    basis: vec![1.0, -1.0],
                }]
            } else {
                Vec::new()
            },
            eps_pen: eps,
        }
    }

    fn mixture_law(grid: &Grid, chi: f64, a: Vec<f64>) -> MaterialLaw {
        let mut energy = StoredEnergy::power_law(1.0, 2.0, 0.0);
        energy.chi = chi;
        energy.c_star = a;
        MaterialLaw {
            energy,
            rho_ref: ScalarField::constant(grid, 1.0),
            viscosity: Viscosity::uniform(1.0, 1.0, 4.0),
        }
    }

    #[test]
    fn penalty_examples() {
        // On the simplex: zero value and gradient.
        let (v, g, _) = penalty(&[0.5, 0.5], 1e-3);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);

        // Direct evaluation of the formula off the simplex.
        let eps = 0.01;
        let (v, g, _) = penalty(&[1.2, 0.3], eps);
        assert!((v - 0.125 / eps).abs() < 1e-12 / eps);
        assert!((g[0] - 0.5 / eps).abs() < 1e-12 / eps);
        assert!((g[1] - 0.5 / eps).abs() < 1e-12 / eps);

        let (v, g, h) = penalty(&[-0.1, 0.9], eps);
        assert!((v - 0.025 / eps).abs() < 1e-12 / eps);
        assert!((g[0] - -0.3 / eps).abs() < 1e-12 / eps);
        assert!((g[1] - -0.2 / eps).abs() < 1e-12 / eps);
        // Hessian: ones/ε plus the active negative-part diagonal.
        assert!((h[0] - 2.0 / eps).abs() < 1e-12 / eps);
        assert!((h[1] - 1.0 / eps).abs() < 1e-12 / eps);
        assert!((h[3] - 1.0 / eps).abs() < 1e-12 / eps);
    }

    #[test]
    fn penalty_zero_iff_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let c = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
            let v = penalty_value(&c, 1e-4);
            assert!(v >= 0.0);
            let on_simplex = c[0] >= 0.0 && c[1] >= 0.0 && (c[0] + c[1] - 1.0).abs() < 1e-14;
            if on_simplex {
                assert!(v <= 1e-14);
            } else {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn projection_p_examples_and_properties() {
        let mut out = vec![0.0; 3];
        projection_p(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);

        let mut out = vec![0.0; 2];
        projection_p(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![1.0, -1.0]);
        projection_p(&[3.0, 1.0], &mut out);
        assert_eq!(out, vec![1.0, -1.0]);

        // Idempotent and self-adjoint on random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut px = vec![0.0; 4];
            let mut ppx = vec![0.0; 4];
            let mut py = vec![0.0; 4];
            projection_p(&x, &mut px);
            projection_p(&px, &mut ppx);
            projection_p(&y, &mut py);
            for i in 0..4 {
                assert!((px[i] - ppx[i]).abs() < 1e-14);
            }
            let lhs: f64 = x.iter().zip(&py).map(|(a, b)| a * b).sum();
            let rhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_q_examples() {
        let g = Grid::new(2, [8, 8, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        // Constant α·1 maps to zero.
        let mu = vec![
            ScalarField::constant(&g, 2.5),
            ScalarField::constant(&g, 2.5),
        ];
        let q = projection_q(&g, &mu);
        for f in &q {
            assert!(f.max_abs() < 1e-13);
        }

        // A field with ∫μ·1 = 0 passes through unchanged.
        let mu = vec![
            ScalarField::from_fn(&g, |x| x[0] - 0.5),
            ScalarField::from_fn(&g, |x| 0.5 - x[0]),
        ];
        let q = projection_q(&g, &mu);
        for (a, b) in mu.iter().zip(&q) {
            for idx in 0..g.len() {
                assert!((a.as_slice()[idx] - b.as_slice()[idx]).abs() < 1e-13);
            }
        }

        // Random field: ∫(Qμ)·1 = 0 to round-off.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut mu = vec![ScalarField::zeros(&g), ScalarField::zeros(&g)];
        for f in &mut mu {
            for v in f.as_mut_slice() {
                *v = rng.gen_range(-3.0..3.0);
            }
        }
        let q = projection_q(&g, &mu);
        let total: f64 = q.iter().map(|f| grid::integrate(&g, f)).sum();
        assert!(total.abs() < 1e-12);
    }

    #[test]
    fn chemical_potential_quadratic_closed_form() {
        let g = Grid::new(2, [8, 8, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let chi = 1.7;
        let law = mixture_law(&g, chi, vec![0.3, 0.7]);
        let spec = spec2(1e-4, 0.0);
        let c = vec![
            ScalarField::constant(&g, 0.6),
            ScalarField::constant(&g, 0.4),
        ];
        let j = ScalarField::constant(&g, 1.0);
        let mu = chemical_potential(&g, &c, &j, &law, &spec).unwrap();
        // On the simplex the penalty is silent: μ = χ(c − a).
        assert!((mu[0].as_slice()[0] - chi * 0.3).abs() < 1e-12);
        assert!((mu[1].as_slice()[0] - chi * -0.3).abs() < 1e-12);

        // Off-simplex c picks up the penalty gradient additively.
        let c_off = vec![
            ScalarField::constant(&g, 1.2),
            ScalarField::constant(&g, 0.3),
        ];
        let mu_off = chemical_potential(&g, &c_off, &j, &law, &spec).unwrap();
        let want0 = chi * (1.2 - 0.3) + 0.5 / spec.eps_pen;
        assert!((mu_off[0].as_slice()[0] - want0).abs() < 1e-9);
    }

    /// Numerical minimization oracle on the simplex: at the constrained
    /// minimizer of φ₁ the chemical potential lies in span{1}.
    #[test]
    fn chemical_potential_span_one_at_minimizer() {
        let g = Grid::new(2, [4, 4, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let chi = 2.0;
        // Off-simplex target: the constrained minimizer differs from a.
        let a = vec![0.8, 0.4, 0.1];
        let mut law = mixture_law(&g, chi, a.clone());
        law.energy.c_star = a.clone();
        let spec = MixtureSpec {
            n: 3,
            mobility: Mobility::Constant(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            reactions: Vec::new(),
            eps_pen: 1e-6,
        };

        // Projected-gradient minimization of φ₁ over the simplex.
        let project = |c: &[f64]| -> Vec<f64> {
            // Euclidean projection onto the simplex (sorting method).
            let mut u: Vec<f64> = c.to_vec();
            u.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let mut css = 0.0;
            let mut rho = 0;
            for (i, ui) in u.iter().enumerate() {
                css += ui;
                if ui - (css - 1.0) / (i as f64 + 1.0) > 0.0 {
                    rho = i + 1;
                }
            }
            let theta = (u[..rho].iter().sum::<f64>() - 1.0) / rho as f64;
            c.iter().map(|ci| (ci - theta).max(0.0)).collect()
        };
        let mut c = project(&vec![1.0 / 3.0; 3]);
        for _ in 0..500 {
            let step: Vec<f64> = c
                .iter()
                .zip(&a)
                .map(|(ci, ai)| ci - 0.1 * chi * (ci - ai))
                .collect();
            c = project(&step);
        }

        let cf: Vec<ScalarField> = c.iter().map(|v| ScalarField::constant(&g, *v)).collect();
        let j = ScalarField::constant(&g, 1.0);
        let mu = chemical_potential(&g, &cf, &j, &law, &spec).unwrap();
        let muv: Vec<f64> = mu.iter().map(|f| f.as_slice()[0]).collect();
        let mut p = vec![0.0; 3];
        projection_p(&muv, &mut p);
        let norm: f64 = p.iter().map(|v| v * v).sum::<f64>();
        assert!(
            norm.sqrt() < 1e-5,
            "μ at minimizer must be in span(1), got P μ = {p:?}"
        );
    }

    #[test]
    fn reaction_rate_examples() {
        let g = Grid::new(2, [4, 4, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let law = mixture_law(&g, 1.0, vec![0.5, 0.5]);
        let spec = spec2(1e-4, 2.0);
        let j = ScalarField::constant(&g, 1.0);

        // r·1 = 0 exactly, whatever the input.
        let c = vec![
            ScalarField::from_fn(&g, |x| 0.3 + 0.2 * x[0]),
            ScalarField::from_fn(&g, |x| 0.8 - 0.3 * x[1]),
        ];
        let r = reaction_rate(&g, &c, &j, &law, &spec).unwrap();
        for idx in 0..g.len() {
            let sum = r[0].as_slice()[idx] + r[1].as_slice()[idx];
            assert_eq!(sum, 0.0, "K·1 = 0 must hold exactly");
        }

        // μ in span{1} lies in the kernel of K.
        let c_eq = vec![
            ScalarField::constant(&g, 0.5),
            ScalarField::constant(&g, 0.5),
        ];
        let r = reaction_rate(&g, &c_eq, &j, &law, &spec).unwrap();
        assert!(r[0].max_abs() == 0.0 && r[1].max_abs() == 0.0);
    }

    /// Root-finding oracle: on the simplex line c = (s, 1−s) the reaction
    /// driving force d·μ has its unique zero at c = a.
    #[test]
    fn reaction_equilibrium_is_unique_on_simplex() {
        let chi = 1.3;
        let a = [0.65, 0.35];
        let eps = 1e-4;
        let f = |s: f64| -> f64 {
            let c = [s, 1.0 - s];
            let mut pen = [0.0; 2];
            penalty_grad(&c, eps, &mut pen);
            let mu0 = chi * (c[0] - a[0]) + pen[0];
            let mu1 = chi * (c[1] - a[1]) + pen[1];
            mu0 - mu1
        };
        // Bisection on (0,1).
        let (mut lo, mut hi) = (1e-6, 1.0 - 1e-6);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - a[0]).abs() < 1e-10, "equilibrium at {root}");
    }

    #[test]
    fn step_fixed_point_at_equilibrium() {
        let g = Grid::new(2, [8, 8, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let law = mixture_law(&g, 1.0, vec![0.5, 0.5]);
        let spec = spec2(1e-4, 1.0);
        let j = ScalarField::constant(&g, 1.0);
        let c = vec![
            ScalarField::constant(&g, 0.5),
            ScalarField::constant(&g, 0.5),
        ];
        let mu = chemical_potential(&g, &c, &j, &law, &spec).unwrap();
        let state = SpeciesState { c, mu };
        let next = diffusion_reaction_step(
            &g,
            &state,
            None,
            &j,
            0.01,
            &spec,
            &law,
            AdvectionScheme::Upwind1,
            0.0,
        )
        .unwrap();
        for i in 0..2 {
            for idx in 0..g.len() {
                assert_eq!(next.c[i].as_slice()[idx], state.c[i].as_slice()[idx]);
            }
        }
    }

    /// Linear stability oracle: without reactions, a small (1,−1) cosine
    /// perturbation obeys a heat equation whose lowest-mode decay rate is
    /// m·χ·(π/L)².
    #[test]
    fn lowest_mode_decay_rate() {
        let n = 64;
        let g = Grid::new(
            2,
            [n, 4, 1],
            [1.0, 1.0, 1.0],
            [Boundary::SlipWall, Boundary::SlipWall, Boundary::Periodic],
        )
        .unwrap();
        let chi = 1.0;
        let m = 0.01;
        let law = mixture_law(&g, chi, vec![0.5, 0.5]);
        let spec = MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![m, 0.0, 0.0, m]),
            reactions: Vec::new(),
            eps_pen: 1e-4,
        };
        let j = ScalarField::constant(&g, 1.0);
        let amp0 = 0.05;
        let pi = std::f64::consts::PI;
        let c = vec![
            ScalarField::from_fn(&g, |x| 0.5 + amp0 * (pi * x[0]).cos()),
            ScalarField::from_fn(&g, |x| 0.5 - amp0 * (pi * x[0]).cos()),
        ];
        let mu = chemical_potential(&g, &c, &j, &law, &spec).unwrap();
        let mut state = SpeciesState { c, mu };
        let dt = 0.05;
        let steps = 200;
        for _ in 0..steps {
            state = diffusion_reaction_step(
                &g,
                &state,
                None,
                &j,
                dt,
                &spec,
                &law,
                AdvectionScheme::Upwind1,
                0.0,
            )
            .unwrap();
        }
        let mut amp = 0.0f64;
        for idx in 0..g.len() {
            amp = amp.max((state.c[0].as_slice()[idx] - 0.5).abs());
        }
        let rate = -(amp / amp0).ln() / (dt * steps as f64);
        let predicted = m * chi * pi * pi;
        assert!(
            (rate - predicted).abs() <= 0.05 * predicted,
            "decay rate {rate} vs predicted {predicted}"
        );
    }

    #[test]
    fn species_total_conserved_per_step() {
        let g = Grid::new(2, [12, 12, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let law = mixture_law(&g, 1.5, vec![0.6, 0.4]);
        let spec = spec2(1e-4, 3.0);
        let j = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * (x[0] - 0.5));
        // Sharp off-equilibrium layered start on the simplex.
        let c = vec![
            ScalarField::from_fn(&g, |x| if x[1] < 0.5 { 0.9 } else { 0.1 }),
            ScalarField::from_fn(&g, |x| if x[1] < 0.5 { 0.1 } else { 0.9 }),
        ];
        let mu = chemical_potential(&g, &c, &j, &law, &spec).unwrap();
        let mut state = SpeciesState { c, mu };
        let total0: f64 = state.c.iter().map(|f| grid::integrate(&g, f)).sum();
        for _ in 0..20 {
            state = diffusion_reaction_step(
                &g,
                &state,
                None,
                &j,
                0.01,
                &spec,
                &law,
                AdvectionScheme::Upwind1,
                0.0,
            )
            .unwrap();
            let total: f64 = state.c.iter().map(|f| grid::integrate(&g, f)).sum();
            assert!(
                (total - total0).abs() <= 1e-12 * total0.abs(),
                "species total drifted: {total} vs {total0}"
            );
        }
        // And uniform advection on a periodic box also telescopes.
        let gp = Grid::new(2, [12, 12, 1], [1.0, 1.0, 1.0], [Boundary::Periodic; 3]).unwrap();
        let cpe = vec![
            ScalarField::from_fn(&gp, |x| 0.5 + 0.3 * (2.0 * pi_f() * x[0]).sin()),
            ScalarField::from_fn(&gp, |x| 0.5 - 0.3 * (2.0 * pi_f() * x[0]).sin()),
        ];
        let v = VectorField::from_fn(&gp, |_, a| if a == 0 { 0.7 } else { -0.2 });
        let t0: f64 = cpe.iter().map(|f| grid::integrate(&gp, f)).sum();
        let adv: Vec<ScalarField> = cpe
            .iter()
            .map(|f| advect_scalar(&gp, f, &v, 0.01, AdvectionScheme::Upwind1, None))
            .collect();
        let t1: f64 = adv.iter().map(|f| grid::integrate(&gp, f)).sum();
        assert!((t1 - t0).abs() < 1e-13 * t0.abs());
    }

    fn pi_f() -> f64 {
        std::f64::consts::PI
    }

    #[test]
    fn dissipation_rates_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = Grid::new(2, [10, 10, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let spec = MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![1.0, 0.3, 0.3, 0.8]),
            reactions: vec![ReactionChannel {
                rate: 2.0,
                basis: vec![1.0, -1.0],
            }],
            eps_pen: 1e-3,
        };
        for _ in 0..10 {
            let mut c = vec![ScalarField::zeros(&g), ScalarField::zeros(&g)];
            let mut mu = vec![ScalarField::zeros(&g), ScalarField::zeros(&g)];
            for f in c.iter_mut().chain(mu.iter_mut()) {
                for v in f.as_mut_slice() {
                    *v = rng.gen_range(-1.0..1.5);
                }
            }
            let (diff, react) = dissipation_rates(&g, &c, &mu, &spec);
            assert!(diff >= 0.0 && react >= 0.0);
        }

        // Uniform μ on the simplex: both rates vanish.
        let g2 = Grid::new(2, [6, 6, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        let c = vec![
            ScalarField::constant(&g2, 0.5),
            ScalarField::constant(&g2, 0.5),
        ];
        let mu = vec![
            ScalarField::constant(&g2, 1.0),
            ScalarField::constant(&g2, 1.0),
        ];
        let (diff, react) = dissipation_rates(&g2, &c, &mu, &spec);
        assert_eq!(diff, 0.0);
        // μ ∈ span{1} is in ker K, so the reactive rate vanishes exactly.
        assert_eq!(react, 0.0);
    }

    /// The stiff negative-part penalty in the reaction is handled implicitly:
    /// a cell pushed below zero relaxes back without oscillation even when
    /// dt·k/ε ≫ 1.
    #[test]
    fn implicit_penalty_reaction_is_stable() {
        let g = Grid::new(2, [4, 4, 1], [1.0, 1.0, 1.0], [Boundary::SlipWall; 3]).unwrap();
        // Equilibrium target outside the positive orthant drives c₂ negative.
        let law = mixture_law(&g, 1.0, vec![1.3, -0.3]);
        let spec = spec2(1e-6, 1.0); // dt·k/ε = 1e4
        let j = ScalarField::constant(&g, 1.0);
        let c = vec![
            ScalarField::constant(&g, 0.9),
            ScalarField::constant(&g, 0.1),
        ];
        let mu = chemical_potential(&g, &c, &j, &law, &spec).unwrap();
        let mut state = SpeciesState { c, mu };
        for _ in 0..200 {
            state = diffusion_reaction_step(
                &g,
                &state,
                None,
                &j,
                0.01,
                &spec,
                &law,
                AdvectionScheme::Upwind1,
                0.0,
            )
            .unwrap();
        }
        // Bounded, nearly feasible steady state rather than a blow-up.
        let c1 = state.c[1].as_slice()[0];
        assert!(c1.abs() < 0.05, "penalized species stuck at {c1}");
        assert!(state.c[0].as_slice()[0] < 1.3 + 1e-6);
    }

    #[test]
    fn validate_catches_bad_specs() {
        let mut s = spec2(1e-4, 1.0);
        s.validate().unwrap();
        s.eps_pen = -1.0;
        assert!(s.validate().is_err());

        let asym = MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![1.0, 0.5, -0.5, 1.0]),
            reactions: Vec::new(),
            eps_pen: 1e-4,
        };
        assert!(asym.validate().is_err());

        let not_mean_free = MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![1.0, 0.0, 0.0, 1.0]),
            reactions: vec![ReactionChannel {
                rate: 1.0,
                basis: vec![1.0, 0.5],
            }],
            eps_pen: 1e-4,
        };
        assert!(not_mean_free.validate().is_err());

        // Maxwell-Stefan matrix annihilates the all-ones vector for every c.
        let ms = MixtureSpec {
            n: 3,
            mobility: Mobility::MaxwellStefan { m: 2.0 },
            reactions: Vec::new(),
            eps_pen: 1e-4,
        };
        ms.validate().unwrap();
        let c = [0.2, 0.5, 0.3];
        let ones = [1.0, 1.0, 1.0];
        let mut out = [0.0; 3];
        ms.apply_mobility(&c, &ones, &mut out);
        for v in out {
            assert!(v.abs() < 1e-15);
        }
    }
}

#[cfg(test)]
mod precond_tests {
    use super::*;
    use crate::constitutive::{StoredEnergy, Viscosity};
    use crate::grid::Boundary;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// With constant coefficients (uniform J, no negative parts) the
    /// spectral preconditioner must invert the symmetrized operator to
    /// round-off: T(P(r)) = r.
    #[test]
    fn preconditioner_inverts_constant_coefficient_operator() {
        let g = Grid::new(
            2,
            [16, 12, 1],
            [1.0, 0.75, 1.0],
            [Boundary::Periodic, Boundary::SlipWall, Boundary::Periodic],
        )
        .unwrap();
        let mut energy = StoredEnergy::power_law(1.0, 2.0, 0.0);
        energy.chi = 1.3;
        energy.c_star = vec![0.5, 0.5];
        let law = MaterialLaw {
            energy,
            rho_ref: ScalarField::constant(&g, 1.0),
            viscosity: Viscosity::uniform(1.0, 1.0, 4.0),
        };
        let spec = MixtureSpec {
            n: 2,
            mobility: Mobility::Constant(vec![0.002, 0.0, 0.0, 0.002]),
            reactions: Vec::new(),
            eps_pen: 1e-4,
        };
        let j = ScalarField::constant(&g, 1.0);
        let c = vec![
            ScalarField::constant(&g, 0.5),
            ScalarField::constant(&g, 0.5),
        ];
        let dt = 1e-3;
        let cells = g.len();
        let hess = FrozenHessian::build(&g, &c, &j, &law, &spec);
        let half = HalfWeight::build(&hess, cells);
        let c_lag: Vec<Vec<f64>> = c.iter().map(|f| f.as_slice().to_vec()).collect();
        let solver = DiffusionSolver {
            grid: &g,
            spec: &spec,
            hess,
            half,
            c_lag,
            dt,
        };
        let mut pre = SpectralPreconditioner::build(&g, &spec, &solver.hess, dt);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut z = vec![vec![0.0; cells]; 2];
        let mut scratch = Vec::new();
        pre.apply(&r, &mut z, &mut scratch);
        let mut bw = vec![vec![0.0; cells]; 2];
        let mut tz = vec![vec![0.0; cells]; 2];
        solver.operator(&z, &mut bw, &mut tz);
        let mut worst = 0.0f64;
        for i in 0..2 {
            for idx in 0..cells {
                worst = worst.max((tz[i][idx] - r[i][idx]).abs());
            }
        }
        assert!(worst < 1e-9, "T(P(r)) must reproduce r, worst {worst}");
    }
}
