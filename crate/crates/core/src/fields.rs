//! Regular-grid representations of the domain, tensor images and
//! time-dependent velocity fields, plus the third-order operator that defines
//! the velocity regularizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd3::{mat_norm, norm2, vsub, Mat3, Spd3, Vec3};

/// Fractional grid coordinates this close to an integer are treated as nodes,
/// so positions computed as `origin + i·h` interpolate exactly.
const NODE_SNAP: f64 = 1e-10;

/// Axis-aligned box domain sampled at `dims` nodes, plus the time horizon
/// `[0, tau]` sampled at `nt` instants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub tau: f64,
    pub nt: usize,
}

impl GridSpec {
    /// Unit time horizon with two time samples and the origin at zero.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self {
            dims,
            spacing,
            origin: [0.0; 3],
            tau: 1.0,
            nt: 2,
        }
        .validated()
    }

    pub fn with_time(mut self, tau: f64, nt: usize) -> Result<Self> {
        self.tau = tau;
        self.nt = nt;
        self.validated()
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Result<Self> {
        self.origin = origin;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.dims.iter().any(|&n| n < 4) {
            return Err(Error::GridTooSmall(self.dims));
        }
        if !self.spacing.iter().all(|&h| h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing {:?}", self.spacing)));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin {:?}", self.origin)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidGrid(format!("tau {}", self.tau)));
        }
        if self.nt < 2 {
            return Err(Error::InvalidGrid(format!(
                "nt {} (need at least 2)",
                self.nt
            )));
        }
        Ok(self)
    }

    #[inline]
    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn position(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        [
            self.origin[0] + c[0] as f64 * self.spacing[0],
            self.origin[1] + c[1] as f64 * self.spacing[1],
            self.origin[2] + c[2] as f64 * self.spacing[2],
        ]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).any(|a| c[a] == 0 || c[a] == self.dims[a] - 1)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Share of the node's voxel cell inside the domain: halved once for each
    /// axis on which the node sits on a face.
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        (0..3)
            .filter(|&a| c[a] == 0 || c[a] == self.dims[a] - 1)
            .fold(1.0, |w, _| w * 0.5)
    }

    /// Upper corner of the domain box.
    pub fn upper(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a])
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let hi = self.upper();
        (0..3).all(|a| x[a] >= self.origin[a] && x[a] <= hi[a])
    }

    /// Largest per-axis distance from `x` to the box, in units of that axis'
    /// spacing. Zero inside.
    pub fn overshoot_voxels(&self, x: Vec3) -> f64 {
        let hi = self.upper();
        (0..3)
            .map(|a| {
                let d = (self.origin[a] - x[a]).max(x[a] - hi[a]).max(0.0);
                d / self.spacing[a]
            })
            .fold(0.0, f64::max)
    }

    pub fn clamp(&self, x: Vec3) -> Vec3 {
        let hi = self.upper();
        [0, 1, 2].map(|a| x[a].clamp(self.origin[a], hi[a]))
    }

    /// Time of sample `ti`.
    pub fn time_of(&self, ti: usize) -> f64 {
        self.tau * ti as f64 / (self.nt - 1) as f64
    }

    /// Same spatial sampling (dims, spacing, origin). Time settings are ignored.
    pub fn same_space(&self, other: &GridSpec) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    /// Cell containing `x` and the fractional offsets inside it, or `None`
    /// outside the closed box.
    #[inline]
    pub(crate) fn locate(&self, x: Vec3) -> Option<([usize; 3], Vec3)> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let (i0, f) = axis_cell((x[a] - self.origin[a]) / self.spacing[a], self.dims[a])?;
            base[a] = i0;
            frac[a] = f;
        }
        Some((base, frac))
    }

    /// Like [`locate`](Self::locate) but clamps `x` into the box first.
    #[inline]
    pub(crate) fn locate_clamped(&self, x: Vec3) -> ([usize; 3], Vec3) {
        self.locate(self.clamp(x))
            .unwrap_or_else(|| self.locate(self.origin).expect("origin lies in the grid"))
    }

    /// Interval index and weight of `t` between time samples.
    pub(crate) fn time_weights(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= 0.0 && t <= self.tau) {
            return Err(Error::TimeOutOfRange { t, tau: self.tau });
        }
        let mut s = t / self.tau * (self.nt - 1) as f64;
        let r = s.round();
        if (s - r).abs() <= NODE_SNAP {
            s = r;
        }
        let k0 = (s.floor() as usize).min(self.nt - 2);
        Ok((k0, s - k0 as f64))
    }
}

/// Trilinear interpolation of per-node arrays inside cell `base`.
#[inline]
pub(crate) fn trilinear<const N: usize>(
    grid: &GridSpec,
    data: &[[f64; N]],
    base: [usize; 3],
    f: Vec3,
) -> [f64; N] {
    let nx = grid.dims[0];
    let nxy = nx * grid.dims[1];
    let i000 = base[0] + nx * base[1] + nxy * base[2];
    let wx = [1.0 - f[0], f[0]];
    let wy = [1.0 - f[1], f[1]];
    let wz = [1.0 - f[2], f[2]];
    let mut out = [0.0; N];
    for (dz, wz) in wz.iter().enumerate() {
        for (dy, wy) in wy.iter().enumerate() {
            let wyz = wy * wz;
            for (dx, wx) in wx.iter().enumerate() {
                let w = wx * wyz;
                let node = &data[i000 + dx + nx * dy + nxy * dz];
                for c in 0..N {
                    out[c] += w * node[c];
                }
            }
        }
    }
    out
}

/// Tensor-valued image on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorImage {
    grid: GridSpec,
    voxels: Vec<Spd3>,
}

impl TensorImage {
    pub fn new(grid: GridSpec, voxels: Vec<Spd3>) -> Result<Self> {
        let grid = grid.validated()?;
        if voxels.len() != grid.n_voxels() {
            return Err(Error::InvalidGrid(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                grid.dims
            )));
        }
        Ok(Self { grid, voxels })
    }

    pub fn constant(grid: GridSpec, value: Spd3) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_voxels()])
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(Vec3) -> Result<Spd3>) -> Result<Self> {
        let voxels = (0..grid.n_voxels())
            .map(|idx| f(grid.position(idx)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, voxels)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn voxels(&self) -> &[Spd3] {
        &self.voxels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Spd3 {
        self.voxels[self.grid.index(i, j, k)]
    }

    pub(crate) fn components(&self) -> Vec<[f64; 6]> {
        self.voxels.iter().map(Spd3::components).collect()
    }
}

/// Time-dependent velocity samples, zero on the domain boundary.
///
/// Samples are stored time-major: `samples[ti * n_voxels + idx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    grid: GridSpec,
    samples: Vec<Vec3>,
}

impl VelocityField {
    pub fn zeros(grid: GridSpec) -> Result<Self> {
        let grid = grid.validated()?;
        Ok(Self {
            grid,
            samples: vec![[0.0; 3]; grid.n_voxels() * grid.nt],
        })
    }

    /// Samples `f(x, t)` at every node and time sample; boundary nodes are set
    /// to zero regardless of `f`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(Vec3, f64) -> Vec3) -> Result<Self> {
        let grid = grid.validated()?;
        let n = grid.n_voxels();
        let mut samples = Vec::with_capacity(n * grid.nt);
        for ti in 0..grid.nt {
            let t = grid.time_of(ti);
            for idx in 0..n {
                samples.push(if grid.is_boundary(idx) {
                    [0.0; 3]
                } else {
                    f(grid.position(idx), t)
                });
            }
        }
        let v = Self { grid, samples };
        v.check_finite()?;
        Ok(v)
    }

    /// Validates length, finiteness and the zero boundary.
    pub fn from_samples(grid: GridSpec, samples: Vec<Vec3>) -> Result<Self> {
        let grid = grid.validated()?;
        let n = grid.n_voxels();
        if samples.len() != n * grid.nt {
            return Err(Error::InvalidGrid(format!(
                "{} velocity samples, expected {}",
                samples.len(),
                n * grid.nt
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if grid.is_boundary(i % n) && *s != [0.0; 3] {
                return Err(Error::NonZeroBoundary { index: i % n });
            }
        }
        let v = Self { grid, samples };
        v.check_finite()?;
        Ok(v)
    }

    fn check_finite(&self) -> Result<()> {
        if self.samples.iter().flatten().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("velocity field"))
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn samples(&self) -> &[Vec3] {
        &self.samples
    }

    /// Node values at time sample `ti`.
    pub fn slice(&self, ti: usize) -> &[Vec3] {
        let n = self.grid.n_voxels();
        &self.samples[ti * n..(ti + 1) * n]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            samples: self.samples.iter().map(|s| s.map(|x| x * c)).collect(),
        }
    }

    /// `self + c · other`; boundary stays zero since both operands vanish there.
    pub fn axpy(&self, c: f64, other: &VelocityField) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]])
            .collect();
        Ok(Self {
            grid: self.grid,
            samples,
        })
    }

    /// Largest Euclidean sample norm over all nodes and times.
    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm2(*s)).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|s| *s == [0.0; 3])
    }

    /// View of the field at time `t`, linearly blended between time samples.
    pub fn at_time(&self, t: f64) -> Result<FieldView<'_>> {
        let (k0, a) = self.grid.time_weights(t)?;
        Ok(if a == 0.0 {
            FieldView::single(&self.grid, self.slice(k0))
        } else if a == 1.0 {
            FieldView::single(&self.grid, self.slice(k0 + 1))
        } else {
            FieldView {
                grid: &self.grid,
                lo: self.slice(k0),
                hi: Some((self.slice(k0 + 1), a)),
            }
        })
    }

    /// Samples of the field blended to time `t` at every node.
    pub fn blended_slice(&self, t: f64) -> Result<Vec<Vec3>> {
        let (k0, a) = self.grid.time_weights(t)?;
        if a == 0.0 {
            return Ok(self.slice(k0).to_vec());
        }
        let (lo, hi) = (self.slice(k0), self.slice(k0 + 1));
        Ok(lo
            .iter()
            .zip(hi)
            .map(|(p, q)| [0, 1, 2].map(|c| (1.0 - a) * p[c] + a * q[c]))
            .collect())
    }
}

/// Spatial view of a velocity field at one instant.
#[derive(Clone, Copy, Debug)]
pub struct FieldView<'a> {
    grid: &'a GridSpec,
    lo: &'a [Vec3],
    hi: Option<(&'a [Vec3], f64)>,
}

impl<'a> FieldView<'a> {
    pub fn single(grid: &'a GridSpec, nodes: &'a [Vec3]) -> Self {
        Self {
            grid,
            lo: nodes,
            hi: None,
        }
    }

    /// Trilinear value; zero outside the domain.
    #[inline]
    pub fn value(&self, x: Vec3) -> Vec3 {
        match self.grid.locate(x) {
            None => [0.0; 3],
            Some((base, f)) => self.eval_cell(base, f),
        }
    }

    #[inline]
    fn eval_cell(&self, base: [usize; 3], f: Vec3) -> Vec3 {
        let a = trilinear(self.grid, self.lo, base, f);
        match self.hi {
            None => a,
            Some((hi, w)) => {
                let b = trilinear(self.grid, hi, base, f);
                [0, 1, 2].map(|c| (1.0 - w) * a[c] + w * b[c])
            }
        }
    }

    /// `∂vᵢ/∂xⱼ` by central differences of the interpolated field with a
    /// half-voxel step on each side.
    #[inline]
    pub fn gradient(&self, x: Vec3) -> Mat3 {
        self.value_and_gradient(x).1
    }

    /// Value and half-voxel central-difference gradient in one pass; the
    /// stencil points share the cell lookup of `x` on the untouched axes.
    #[inline]
    pub fn value_and_gradient(&self, x: Vec3) -> (Vec3, Mat3) {
        let g = self.grid;
        let u = [0, 1, 2].map(|a| (x[a] - g.origin[a]) / g.spacing[a]);
        let cells = [0, 1, 2].map(|a| axis_cell(u[a], g.dims[a]));
        let value = match cells {
            [Some(cx), Some(cy), Some(cz)] => {
                self.eval_cell([cx.0, cy.0, cz.0], [cx.1, cy.1, cz.1])
            }
            _ => [0.0; 3],
        };
        let mut grad = Mat3::zeros();
        for j in 0..3 {
            let (o1, o2) = ((j + 1) % 3, (j + 2) % 3);
            let (Some(c1), Some(c2)) = (cells[o1], cells[o2]) else {
                continue;
            };
            let side = |du: f64| -> Vec3 {
                match axis_cell(u[j] + du, g.dims[j]) {
                    None => [0.0; 3],
                    Some(cj) => {
                        let mut base = [0; 3];
                        let mut f = [0.0; 3];
                        base[j] = cj.0;
                        f[j] = cj.1;
                        base[o1] = c1.0;
                        f[o1] = c1.1;
                        base[o2] = c2.0;
                        f[o2] = c2.1;
                        self.eval_cell(base, f)
                    }
                }
            };
            let d = vsub(side(0.5), side(-0.5));
            let h = g.spacing[j];
            for i in 0..3 {
                grad.0[i][j] = d[i] / h;
            }
        }
        (value, grad)
    }
}

/// Cell index and fraction along one axis for index-space coordinate `u`,
/// snapping to nodes within [`NODE_SNAP`].
#[inline]
fn axis_cell(mut u: f64, n: usize) -> Option<(usize, f64)> {
    let r = u.round();
    if (u - r).abs() <= NODE_SNAP {
        u = r;
    }
    if !(u >= 0.0 && u <= (n - 1) as f64) {
        return None;
    }
    let i0 = (u.floor() as usize).min(n - 2);
    Some((i0, u - i0 as f64))
}

/// Continuum evaluation of `v(x, t)`: trilinear in space, linear in time, zero
/// outside the domain.
pub fn sample_velocity(v: &VelocityField, x: Vec3, t: f64) -> Result<Vec3> {
    Ok(v.at_time(t)?.value(x))
}

/// Multi-indices `α` with `|α| = 3`, in the order the jet stores them.
pub const THIRD_ORDER_MULTI_INDICES: [[usize; 3]; 10] = [
    [3, 0, 0],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [1, 1, 1],
    [1, 0, 2],
    [0, 3, 0],
    [0, 2, 1],
    [0, 1, 2],
    [0, 0, 3],
];

/// All third-order partial derivatives of a vector field at every voxel:
/// `values[idx][i][m] = D^{α_m} vᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThirdJet {
    pub grid: GridSpec,
    pub values: Vec<[[f64; 10]; 3]>,
}

impl ThirdJet {
    /// `Σ_voxels w Σᵢ Σ_α |D^α vᵢ|²` with `w` the node weight.
    pub fn sum_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn dot(&self, other: &ThirdJet) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(idx, (a, b))| {
                let s: f64 = a
                    .iter()
                    .flatten()
                    .zip(b.iter().flatten())
                    .map(|(x, y)| x * y)
                    .sum();
                self.grid.node_weight(idx) * s
            })
            .sum()
    }
}

/// Finite-difference weights for the `order`-th derivative at offset 0 from
/// samples at `offsets` (Fornberg's recursion).
fn fd_weights(offsets: &[f64], order: usize) -> Vec<f64> {
    let n = offsets.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = offsets[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i];
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// Per-index stencils `(start, weights)` for one axis: centered in the
/// interior, one-sided where the centered stencil would leave the grid.
fn axis_stencils(n: usize, h: f64, order: usize) -> Vec<(usize, Vec<f64>)> {
    let half = order.div_ceil(2);
    let one_sided = (order + 2).min(n);
    (0..n)
        .map(|i| {
            let (start, len) = if i >= half && i + half < n {
                (i - half, 2 * half + 1)
            } else if i < half {
                (0, one_sided)
            } else {
                (n - one_sided, one_sided)
            };
            let offsets: Vec<f64> = (start..start + len).map(|p| p as f64 - i as f64).collect();
            let scale = h.powi(order as i32);
            let w = fd_weights(&offsets, order)
                .into_iter()
                .map(|w| w / scale)
                .collect();
            (start, w)
        })
        .collect()
}

fn apply_axis(grid: &GridSpec, f: &[f64], axis: usize, order: usize) -> Vec<f64> {
    if order == 0 {
        return f.to_vec();
    }
    let n = grid.dims[axis];
    let stencils = axis_stencils(n, grid.spacing[axis], order);
    let stride = match axis {
        0 => 1,
        1 => grid.dims[0],
        _ => grid.dims[0] * grid.dims[1],
    };
    let mut out = vec![0.0; f.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let c = grid.coords(idx)[axis];
        let line0 = idx - c * stride;
        let (start, w) = &stencils[c];
        *o = w
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * f[line0 + (start + k) * stride])
            .sum();
    }
    out
}

/// Third-order jet of a scalar node field.
pub(crate) fn scalar_third_jet(grid: &GridSpec, f: &[f64]) -> Vec<[f64; 10]> {
    let mut out = vec![[0.0; 10]; f.len()];
    let dx: Vec<Vec<f64>> = (0..=3).map(|a| apply_axis(grid, f, 0, a)).collect();
    for (m, alpha) in THIRD_ORDER_MULTI_INDICES.iter().enumerate() {
        let dxy = apply_axis(grid, &dx[alpha[0]], 1, alpha[1]);
        let dxyz = apply_axis(grid, &dxy, 2, alpha[2]);
        for (o, v) in out.iter_mut().zip(dxyz) {
            o[m] = v;
        }
    }
    out
}

/// Applies the stacked third-derivative operator to time sample `ti`.
pub fn apply_l(v: &VelocityField, ti: usize) -> Result<ThirdJet> {
    let grid = *v.grid();
    if grid.dims.iter().any(|&n| n < 4) {
        return Err(Error::GridTooSmall(grid.dims));
    }
    if ti >= grid.nt {
        return Err(Error::TimeOutOfRange {
            t: ti as f64,
            tau: (grid.nt - 1) as f64,
        });
    }
    let slice = v.slice(ti);
    let mut values = vec![[[0.0; 10]; 3]; grid.n_voxels()];
    for comp in 0..3 {
        let f: Vec<f64> = slice.iter().map(|s| s[comp]).collect();
        for (o, jet) in values.iter_mut().zip(scalar_third_jet(&grid, &f)) {
            o[comp] = jet;
        }
    }
    Ok(ThirdJet { grid, values })
}

fn trapezoid_weights(grid: &GridSpec) -> Vec<f64> {
    let dt = grid.tau / (grid.nt - 1) as f64;
    (0..grid.nt)
        .map(|ti| {
            if ti == 0 || ti == grid.nt - 1 {
                0.5 * dt
            } else {
                dt
            }
        })
        .collect()
}

/// `‖v‖²_F = ∫₀^τ ‖Lv(·,t)‖² dt`: trapezoid in time, voxel sum times cell
/// volume in space with boundary cells clipped to the domain.
pub fn f_norm_sq(v: &VelocityField) -> f64 {
    let grid = v.grid();
    let vol = grid.cell_volume();
    trapezoid_weights(grid)
        .iter()
        .enumerate()
        .map(|(ti, w)| {
            let jet = apply_l(v, ti).expect("validated grid");
            w * vol * jet.sum_sq()
        })
        .sum()
}

/// The inner product matching [`f_norm_sq`].
pub fn f_inner(u: &VelocityField, w: &VelocityField) -> Result<f64> {
    if u.grid() != w.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid();
    let vol = grid.cell_volume();
    let mut total = 0.0;
    for (ti, wt) in trapezoid_weights(grid).iter().enumerate() {
        total += wt * vol * apply_l(u, ti)?.dot(&apply_l(w, ti)?);
    }
    Ok(total)
}

/// Empirical continuity quotients of a field over random point pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// `max ‖v(x) - v(y)‖ / ‖x - y‖`
    pub lipschitz: f64,
    /// `max ‖∇v(x) - ∇v(y)‖ / ‖x - y‖^{1/2}`, gradient difference in the
    /// entrywise absolute-sum norm.
    pub holder_half: f64,
}

/// Random-pair probe of the Lipschitz and Hölder-1/2 quotients of `v(·, t_ti)`
/// over the whole domain.
pub fn lipschitz_probe(
    v: &VelocityField,
    ti: usize,
    npairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    let g = v.grid();
    lipschitz_probe_in(v, ti, npairs, seed, g.origin, g.upper())
}

/// Same as [`lipschitz_probe`] with both points of each pair drawn from the
/// box `[lo, hi]`.
pub fn lipschitz_probe_in(
    v: &VelocityField,
    ti: usize,
    npairs: usize,
    seed: u64,
    lo: Vec3,
    hi: Vec3,
) -> Result<LipschitzEstimate> {
    if npairs == 0 {
        return Err(Error::BadParams("npairs must be at least 1".into()));
    }
    let grid = v.grid();
    if ti >= grid.nt {
        return Err(Error::TimeOutOfRange {
            t: ti as f64,
            tau: (grid.nt - 1) as f64,
        });
    }
    let view = FieldView::single(grid, v.slice(ti));
    Ok(probe_quotients(
        |x| view.value(x),
        |x| view.gradient(x),
        npairs,
        seed,
        lo,
        hi,
    ))
}

pub(crate) fn probe_quotients(
    value: impl Fn(Vec3) -> Vec3,
    gradient: impl Fn(Vec3) -> Mat3,
    npairs: usize,
    seed: u64,
    lo: Vec3,
    hi: Vec3,
) -> LipschitzEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec3 {
        [0, 1, 2].map(|a| {
            if hi[a] > lo[a] {
                rng.gen_range(lo[a]..=hi[a])
            } else {
                lo[a]
            }
        })
    };
    let mut est = LipschitzEstimate {
        lipschitz: 0.0,
        holder_half: 0.0,
    };
    for _ in 0..npairs {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let d = norm2(vsub(x, y));
        if d == 0.0 {
            continue;
        }
        let dv = norm2(vsub(value(x), value(y)));
        let dg = mat_norm(&(gradient(x) - gradient(y)));
        est.lipschitz = est.lipschitz.max(dv / d);
        est.holder_half = est.holder_half.max(dg / d.sqrt());
    }
    est
}
