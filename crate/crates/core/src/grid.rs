//! Uniform Cartesian grid in 2 or 3 dimensions, cell-centered field storage,
//! and the discrete differential operators used by every other module.
//!
//! All stencils are second-order centered differences. Wall ghosts are
//! populated by mirror rules: a sample reflected across a slip wall carries a
//! sign determined by how many of its tensor indices are normal to that wall
//! (velocity normal components flip, tangential components and scalars do
//! not). This realizes free slip, v·n = 0, without storing ghost layers.

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    SlipWall,
}

/// Mirror class of a sample reflected across a slip wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

/// Parity of tensor component `indices` along `axis`: odd iff an odd number
/// of indices are normal to the wall.
pub fn tensor_parity(indices: &[usize], axis: usize) -> Parity {
    let normals = indices.iter().filter(|&&i| i == axis).count();
    if normals % 2 == 1 {
        Parity::Odd
    } else {
        Parity::Even
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    length: [f64; 3],
    spacing: [f64; 3],
    bc: [Boundary; 3],
}

impl Grid {
    /// `cells` and `lengths` beyond `dim` are ignored; the trailing axis of a
    /// 2-d grid is collapsed to a single cell.
    pub fn new(
        dim: usize,
        cells: [usize; 3],
        lengths: [f64; 3],
        bc: [Boundary; 3],
    ) -> Result<Grid, SimError> {
        if dim != 2 && dim != 3 {
            return Err(SimError::config("grid.dim", "dimension must be 2 or 3"));
        }
        let mut n = [1usize; 3];
        let mut length = [1.0f64; 3];
        let mut spacing = [1.0f64; 3];
        for a in 0..dim {
            if cells[a] < 4 {
                return Err(SimError::config(
                    format!("grid.n[{a}]"),
                    format!("need at least 4 cells per axis, got {}", cells[a]),
                ));
            }
            if !(lengths[a] > 0.0) || !lengths[a].is_finite() {
                return Err(SimError::config(
                    format!("grid.l[{a}]"),
                    format!("box length must be positive and finite, got {}", lengths[a]),
                ));
            }
            n[a] = cells[a];
            length[a] = lengths[a];
            spacing[a] = lengths[a] / cells[a] as f64;
        }
        Ok(Grid {
            dim,
            n,
            length,
            spacing,
            bc,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> [usize; 3] {
        self.n
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.length
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn boundary(&self, axis: usize) -> Boundary {
        self.bc[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing[a]).fold(f64::MAX, f64::min)
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing[a]).product()
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        debug_assert!(c[0] < self.n[0] && c[1] < self.n[1] && c[2] < self.n[2]);
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n[2];
        let rest = idx / self.n[2];
        let j = rest % self.n[1];
        let i = rest / self.n[1];
        [i, j, k]
    }

    /// Cell-center position.
    #[inline]
    pub fn position(&self, c: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    /// Resolve an index along one axis that may stick out of the box by up to
    /// `n` cells. Returns the in-range index and the mirror sign.
    #[inline]
    pub fn resolve(&self, axis: usize, i: isize, parity: Parity) -> (usize, f64) {
        let n = self.n[axis] as isize;
        if i >= 0 && i < n {
            return (i as usize, 1.0);
        }
        match self.bc[axis] {
            Boundary::Periodic => (i.rem_euclid(n) as usize, 1.0),
            Boundary::SlipWall => {
                // Reflect about the wall face: ghost -1 mirrors cell 0, ghost n mirrors n-1.
                let j = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
                debug_assert!(j >= 0 && j < n, "stencil reaches beyond one mirror layer");
                (j as usize, parity.sign())
            }
        }
    }

    /// Value at an offset of `off` cells along `axis` from cell `c`.
    #[inline]
    pub fn sample(&self, data: &[f64], c: [usize; 3], axis: usize, off: isize, parity: Parity) -> f64 {
        let (j, sign) = self.resolve(axis, c[axis] as isize + off, parity);
        let mut cc = c;
        cc[axis] = j;
        sign * data[self.index(cc)]
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.n[1] * self.n[2], self.n[2], 1]
    }

    /// Per-coordinate neighbor map along one axis: flat-index delta and
    /// mirror sign for an `off`-cell hop. Lets sweeps run branch-free.
    pub fn axis_map(&self, axis: usize, off: isize, parity: Parity) -> AxisMap {
        let stride = self.strides()[axis] as isize;
        let n = self.n[axis];
        let mut delta = Vec::with_capacity(n);
        let mut sign = Vec::with_capacity(n);
        for i in 0..n {
            let (j, s) = self.resolve(axis, i as isize + off, parity);
            delta.push((j as isize - i as isize) * stride);
            sign.push(s);
        }
        AxisMap { delta, sign }
    }

    /// Centered first derivative along `axis`.
    #[inline]
    pub fn deriv(&self, data: &[f64], c: [usize; 3], axis: usize, parity: Parity) -> f64 {
        let plus = self.sample(data, c, axis, 1, parity);
        let minus = self.sample(data, c, axis, -1, parity);
        (plus - minus) / (2.0 * self.spacing[axis])
    }

    /// Centered-difference sweep: dst op= scale·∂_axis src over all cells.
    pub fn deriv_sweep(
        &self,
        src: &[f64],
        axis: usize,
        parity: Parity,
        scale: f64,
        accumulate: bool,
        dst: &mut [f64],
    ) {
        let plus = self.axis_map(axis, 1, parity);
        let minus = self.axis_map(axis, -1, parity);
        let factor = scale / (2.0 * self.spacing[axis]);
        let n = self.n;
        let mut idx = 0usize;
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let ca = [i, j, k][axis];
                    let up = (idx as isize + plus.delta[ca]) as usize;
                    let dn = (idx as isize + minus.delta[ca]) as usize;
                    let val = factor * (plus.sign[ca] * src[up] - minus.sign[ca] * src[dn]);
                    if accumulate {
                        dst[idx] += val;
                    } else {
                        dst[idx] = val;
                    }
                    idx += 1;
                }
            }
        }
    }
}

/// Neighbor lookup table for one axis and hop.
pub struct AxisMap {
    pub delta: Vec<isize>,
    pub sign: Vec<f64>,
}

/// Grid-sampled scalar quantity. The unit tag is documentation-level: fields
/// carry SI values and the name says what they are.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        ScalarField {
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            data.push(f(grid.position(grid.coords(idx))));
        }
        ScalarField { data }
    }

    pub fn from_vec(grid: &Grid, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.len(), "field length does not match grid");
        ScalarField { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &ScalarField, s: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Multilinear interpolation at physical point `x`. Out-of-box samples on
    /// wall axes are clamped to the box; `clamped` counts such events.
    /// Periodic axes wrap.
    pub fn interp(&self, grid: &Grid, x: [f64; 3], clamped: &mut u64) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut wrap = [false; 3];
        for a in 0..grid.dim {
            let mut u = x[a] / grid.spacing[a] - 0.5;
            match grid.bc[a] {
                Boundary::Periodic => {
                    let n = grid.n[a] as f64;
                    u = u.rem_euclid(n);
                    wrap[a] = true;
                }
                Boundary::SlipWall => {
                    let top = (grid.n[a] - 1) as f64;
                    if u < 0.0 || u > top {
                        *clamped += 1;
                        u = u.clamp(0.0, top);
                    }
                }
            }
            let i0 = (u.floor() as usize).min(grid.n[a] - 1);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let mut acc = 0.0;
        let corners = 1usize << grid.dim;
        for corner in 0..corners {
            let mut c = [0usize; 3];
            let mut w = 1.0;
            for a in 0..grid.dim {
                let hi = (corner >> a) & 1 == 1;
                let mut i = base[a] + hi as usize;
                if i >= grid.n[a] {
                    i = if wrap[a] { 0 } else { grid.n[a] - 1 };
                }
                c[a] = i;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            acc += w * self.data[grid.index(c)];
        }
        acc
    }
}

/// d-component vector quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            comps: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3], usize) -> f64) -> Self {
        VectorField {
            comps: (0..grid.dim())
                .map(|a| ScalarField::from_fn(grid, |x| f(x, a)))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, a: usize) -> &ScalarField {
        &self.comps[a]
    }

    pub fn comp_mut(&mut self, a: usize) -> &mut ScalarField {
        &mut self.comps[a]
    }

    pub fn max_norm(&self) -> f64 {
        let n = self.comps[0].data.len();
        let mut m = 0.0f64;
        for idx in 0..n {
            let s: f64 = self.comps.iter().map(|c| c.data[idx] * c.data[idx]).sum();
            m = m.max(s);
        }
        m.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.is_finite())
    }

    pub fn add_scaled(&mut self, other: &VectorField, s: f64) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.add_scaled(b, s);
        }
    }
}

/// d×d tensor quantity, row-major component order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    dim: usize,
    comps: Vec<ScalarField>,
}

impl TensorField {
    pub fn zeros(grid: &Grid) -> Self {
        let d = grid.dim();
        TensorField {
            dim: d,
            comps: (0..d * d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn comp(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[i * self.dim + j]
    }

    pub fn comp_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.comps[i * self.dim + j]
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.is_finite())
    }
}

/// Rank-3 quantity such as ∇e(v); component (i, j, k) holds ∂_k T_ij.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank3Field {
    dim: usize,
    comps: Vec<ScalarField>,
}

impl Rank3Field {
    pub fn zeros(grid: &Grid) -> Self {
        let d = grid.dim();
        Rank3Field {
            dim: d,
            comps: (0..d * d * d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn comp(&self, i: usize, j: usize, k: usize) -> &ScalarField {
        &self.comps[(i * self.dim + j) * self.dim + k]
    }

    pub fn comp_mut(&mut self, i: usize, j: usize, k: usize) -> &mut ScalarField {
        &mut self.comps[(i * self.dim + j) * self.dim + k]
    }

    /// Pointwise Frobenius norm squared.
    pub fn norm_sq_at(&self, idx: usize) -> f64 {
        self.comps.iter().map(|c| {
            let v = c.data[idx];
            v * v
        }).sum()
    }
}

/// ∇f by centered differences; scalars mirror evenly at walls.
pub fn gradient(grid: &Grid, f: &ScalarField) -> VectorField {
    let mut out = VectorField::zeros(grid);
    gradient_into(grid, f, &mut out);
    out
}

pub fn gradient_into(grid: &Grid, f: &ScalarField, out: &mut VectorField) {
    assert_eq!(f.data.len(), grid.len(), "field does not live on this grid");
    for a in 0..grid.dim() {
        grid.deriv_sweep(&f.data, a, Parity::Even, 1.0, false, &mut out.comps[a].data);
    }
}

/// div u = Σ_a ∂_a u_a; the component normal to a wall is odd-mirrored there,
/// which encodes u·n = 0 on the wall face.
pub fn divergence(grid: &Grid, u: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(grid);
    divergence_into(grid, u, &mut out);
    out
}

pub fn divergence_into(grid: &Grid, u: &VectorField, out: &mut ScalarField) {
    assert_eq!(u.dim(), grid.dim(), "vector field does not live on this grid");
    for a in 0..grid.dim() {
        grid.deriv_sweep(&u.comps[a].data, a, Parity::Odd, 1.0, a != 0, &mut out.data);
    }
}

/// Symmetric velocity gradient e(v) = ½(∇v + ∇vᵀ) with the same stencils as
/// `gradient`.
pub fn sym_grad(grid: &Grid, v: &VectorField) -> TensorField {
    let mut out = TensorField::zeros(grid);
    sym_grad_into(grid, v, &mut out);
    out
}

pub fn sym_grad_into(grid: &Grid, v: &VectorField, out: &mut TensorField) {
    let d = grid.dim();
    assert_eq!(v.dim(), d, "vector field does not live on this grid");
    for i in 0..d {
        for j in i..d {
            // ∂_i v_j + ∂_j v_i; v_j is odd across walls normal to axis j.
            let dst = &mut out.comps[i * d + j];
            grid.deriv_sweep(
                &v.comps[j].data,
                i,
                tensor_parity(&[j], i),
                0.5,
                false,
                &mut dst.data,
            );
            grid.deriv_sweep(
                &v.comps[i].data,
                j,
                tensor_parity(&[i], j),
                0.5,
                true,
                &mut dst.data,
            );
            if i != j {
                let lower = out.comps[i * d + j].clone();
                out.comps[j * d + i] = lower;
            }
        }
    }
}

/// Componentwise gradient of a symmetric 2-tensor: (∇T)_ijk = ∂_k T_ij.
pub fn grad_tensor(grid: &Grid, t: &TensorField) -> Rank3Field {
    let mut out = Rank3Field::zeros(grid);
    grad_tensor_into(grid, t, &mut out);
    out
}

pub fn grad_tensor_into(grid: &Grid, t: &TensorField, out: &mut Rank3Field) {
    let d = grid.dim();
    assert_eq!(t.dim(), d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                grid.deriv_sweep(
                    &t.comps[i * d + j].data,
                    k,
                    tensor_parity(&[i, j], k),
                    1.0,
                    false,
                    &mut out.comps[(i * d + j) * d + k].data,
                );
            }
        }
    }
}

/// Contraction over the last index: (div S)_ij = Σ_k ∂_k S_ijk.
pub fn div_rank3(grid: &Grid, s: &Rank3Field) -> TensorField {
    let mut out = TensorField::zeros(grid);
    div_rank3_into(grid, s, &mut out);
    out
}

pub fn div_rank3_into(grid: &Grid, s: &Rank3Field, out: &mut TensorField) {
    let d = grid.dim();
    assert_eq!(s.dim(), d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                grid.deriv_sweep(
                    &s.comps[(i * d + j) * d + k].data,
                    k,
                    tensor_parity(&[i, j, k], k),
                    1.0,
                    k != 0,
                    &mut out.comps[i * d + j].data,
                );
            }
        }
    }
}

/// (div T)_i = Σ_j ∂_j T_ij.
pub fn div_tensor(grid: &Grid, t: &TensorField) -> VectorField {
    let mut out = VectorField::zeros(grid);
    div_tensor_into(grid, t, &mut out);
    out
}

pub fn div_tensor_into(grid: &Grid, t: &TensorField, out: &mut VectorField) {
    let d = grid.dim();
    assert_eq!(t.dim(), d);
    for i in 0..d {
        for j in 0..d {
            grid.deriv_sweep(
                &t.comps[i * d + j].data,
                j,
                tensor_parity(&[i, j], j),
                1.0,
                j != 0,
                &mut out.comps[i].data,
            );
        }
    }
}

/// Midpoint-rule integral over the box.
pub fn integrate(grid: &Grid, f: &ScalarField) -> f64 {
    assert_eq!(f.data.len(), grid.len());
    f.data.iter().sum::<f64>() * grid.cell_volume()
}

/// L² norm: sqrt(∫ f²).
pub fn l2_norm(grid: &Grid, f: &ScalarField) -> f64 {
    (f.data.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt()
}
