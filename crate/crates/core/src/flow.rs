//! Particle flow of a time-dependent velocity field.
//!
//! `η(s; t, x)` solves `dη/ds = v(η, s)` with `η(t; t, x) = x`. The spatial
//! Jacobian `Θ = ∇ₓη` obeys `dΘ/ds = ∇v(η, s) Θ` with `Θ(t) = I`, and its
//! determinant equals `exp ∫ div v(η(s), s) ds`. [`flow_map`] integrates the
//! position, the Jacobian and the divergence integral together with classical
//! RK4 so both sides of that identity are available per voxel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{trilinear, FieldView, GridSpec, VelocityField};
use crate::spd3::{norm2, vadd, vscale, vsub, Mat3, Vec3};

/// Largest tolerated exit from the domain per step, in voxels.
const MAX_OVERSHOOT_VOXELS: f64 = 1.0;

/// Quadrature intervals used by [`picard_trajectory`].
pub const PICARD_INTERVALS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: Vec3,
    pub t_from: f64,
    pub t_to: f64,
    /// `(s, η(s; t_from, start))`, ordered from `t_from` to `t_to`.
    pub samples: Vec<(f64, Vec3)>,
}

impl Trajectory {
    pub fn endpoint(&self) -> Vec3 {
        self.samples.last().map(|s| s.1).unwrap_or(self.start)
    }

    /// Position at time `s`, linear between stored samples.
    pub fn position_at(&self, s: f64) -> Vec3 {
        let n = self.samples.len();
        if n == 1 {
            return self.samples[0].1;
        }
        let span = self.t_to - self.t_from;
        let u = ((s - self.t_from) / span * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let k = (u.floor() as usize).min(n - 2);
        let a = u - k as f64;
        let (p, q) = (self.samples[k].1, self.samples[k + 1].1);
        if a == 0.0 {
            return p;
        }
        [0, 1, 2].map(|c| (1.0 - a) * p[c] + a * q[c])
    }
}

fn check_times(grid: &GridSpec, t_from: f64, t_to: f64) -> Result<()> {
    for t in [t_from, t_to] {
        if !(t >= 0.0 && t <= grid.tau) {
            return Err(Error::TimeOutOfRange { t, tau: grid.tau });
        }
    }
    Ok(())
}

fn check_start(grid: &GridSpec, x: Vec3) -> Result<()> {
    if !x.iter().all(|c| c.is_finite()) || !grid.contains(x) {
        return Err(Error::LeftDomain {
            start: x,
            position: x,
        });
    }
    Ok(())
}

/// Clamps a post-step position into the domain, or fails if it left by more
/// than one voxel.
#[inline]
fn settle(grid: &GridSpec, start: Vec3, x: Vec3) -> Result<Vec3> {
    if !x.iter().all(|c| c.is_finite()) || grid.overshoot_voxels(x) > MAX_OVERSHOOT_VOXELS {
        return Err(Error::LeftDomain { start, position: x });
    }
    Ok(grid.clamp(x))
}

/// Time of step node `m` on a uniform grid of `nsteps` steps, landing exactly
/// on `t_to` at the end.
#[inline]
fn node_time(t_from: f64, t_to: f64, m: usize, nsteps: usize) -> f64 {
    if m == nsteps {
        t_to
    } else {
        t_from + (t_to - t_from) * (m as f64 / nsteps as f64)
    }
}

/// Classical RK4 on `dη/ds = v(η, s)` with `nsteps` uniform steps; backward
/// when `t_to < t_from`.
pub fn integrate_trajectory(
    v: &VelocityField,
    t_from: f64,
    x: Vec3,
    t_to: f64,
    nsteps: usize,
) -> Result<Trajectory> {
    let grid = v.grid();
    check_times(grid, t_from, t_to)?;
    check_start(grid, x)?;
    if nsteps == 0 {
        return Err(Error::BadParams("nsteps must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(nsteps + 1);
    samples.push((t_from, x));
    let mut pos = x;
    for m in 0..nsteps {
        let s0 = node_time(t_from, t_to, m, nsteps);
        let s1 = node_time(t_from, t_to, m + 1, nsteps);
        let sh = 0.5 * (s0 + s1);
        let dt = s1 - s0;
        let (v0, vh, v1) = (v.at_time(s0)?, v.at_time(sh)?, v.at_time(s1)?);
        let k1 = v0.value(pos);
        let k2 = vh.value(vadd(pos, vscale(k1, 0.5 * dt)));
        let k3 = vh.value(vadd(pos, vscale(k2, 0.5 * dt)));
        let k4 = v1.value(vadd(pos, vscale(k3, dt)));
        let incr = [0, 1, 2].map(|c| dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
        pos = settle(grid, x, vadd(pos, incr))?;
        samples.push((s1, pos));
    }
    Ok(Trajectory {
        start: x,
        t_from,
        t_to,
        samples,
    })
}

/// Outcome of the fixed-point iteration in [`picard_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct PicardSolution {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// Sup-distance between consecutive iterates, one entry per iteration.
    pub distances: Vec<f64>,
}

/// Solves the trajectory as the fixed point of
/// `φ ↦ x + ∫_{t_from}^{s} v(φ(r), r) dr`, starting from `φ₀ ≡ x`.
///
/// The integral is a cumulative trapezoid rule on [`PICARD_INTERVALS`]
/// uniform intervals. Iteration stops once consecutive iterates are within
/// `tol` in the sup norm.
pub fn picard_trajectory(
    v: &VelocityField,
    t_from: f64,
    x: Vec3,
    t_to: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    picard_trajectory_with(v, t_from, x, t_to, tol, max_iter, PICARD_INTERVALS)
}

pub fn picard_trajectory_with(
    v: &VelocityField,
    t_from: f64,
    x: Vec3,
    t_to: f64,
    tol: f64,
    max_iter: usize,
    intervals: usize,
) -> Result<PicardSolution> {
    let grid = v.grid();
    check_times(grid, t_from, t_to)?;
    check_start(grid, x)?;
    if !(tol > 0.0) || max_iter == 0 || intervals == 0 {
        return Err(Error::BadParams(
            "picard needs tol > 0, max_iter >= 1 and intervals >= 1".into(),
        ));
    }
    let times: Vec<f64> = (0..=intervals)
        .map(|m| node_time(t_from, t_to, m, intervals))
        .collect();
    let views = times
        .iter()
        .map(|&t| v.at_time(t))
        .collect::<Result<Vec<FieldView<'_>>>>()?;

    let mut phi = vec![x; intervals + 1];
    let mut distances = Vec::new();
    for iter in 1..=max_iter {
        let f: Vec<Vec3> = phi
            .iter()
            .zip(&views)
            .map(|(p, view)| view.value(*p))
            .collect();
        let mut next = Vec::with_capacity(intervals + 1);
        next.push(x);
        let mut acc = x;
        for j in 1..=intervals {
            let ds = times[j] - times[j - 1];
            acc = [0, 1, 2].map(|c| acc[c] + 0.5 * ds * (f[j - 1][c] + f[j][c]));
            next.push(acc);
        }
        let dist = next
            .iter()
            .zip(&phi)
            .map(|(a, b)| norm2(vsub(*a, *b)))
            .fold(0.0, f64::max);
        distances.push(dist);
        phi = next;
        if dist <= tol {
            let mut samples = Vec::with_capacity(intervals + 1);
            for (t, p) in times.iter().zip(&phi) {
                samples.push((*t, settle(grid, x, *p)?));
            }
            samples[0] = (t_from, x);
            return Ok(PicardSolution {
                trajectory: Trajectory {
                    start: x,
                    t_from,
                    t_to,
                    samples,
                },
                iterations: iter,
                distances,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        distance: distances.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Per-voxel endpoint, Jacobian and determinant diagnostics of a flow from
/// `t_from` to `t_to`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult {
    pub grid: GridSpec,
    pub t_from: f64,
    pub t_to: f64,
    /// `η(t_to; t_from, x)` for each voxel position `x`.
    pub endpoints: Vec<Vec3>,
    /// `Θ(t_to; t_from, x)`.
    pub jacobians: Vec<Mat3>,
    /// `det Θ`, computed from the integrated Jacobian.
    pub det_theta: Vec<f64>,
    /// `exp ∫ div v(η(s), s) ds` along the same trajectory.
    pub exp_div: Vec<f64>,
}

impl FlowResult {
    /// The identity map with `Θ = I`.
    pub fn identity(grid: GridSpec) -> Self {
        let n = grid.n_voxels();
        Self {
            grid,
            t_from: 0.0,
            t_to: 0.0,
            endpoints: (0..n).map(|i| grid.position(i)).collect(),
            jacobians: vec![Mat3::identity(); n],
            det_theta: vec![1.0; n],
            exp_div: vec![1.0; n],
        }
    }

    /// `η(t_to) - x` per voxel.
    pub fn displacements(&self) -> Vec<Vec3> {
        self.endpoints
            .iter()
            .enumerate()
            .map(|(i, e)| vsub(*e, self.grid.position(i)))
            .collect()
    }

    /// Evaluates the map at an arbitrary point by trilinear interpolation of
    /// the displacement field; points outside are clamped first.
    pub fn interpolate(&self, x: Vec3) -> Vec3 {
        self.interpolator()(x)
    }

    fn interpolator(&self) -> impl Fn(Vec3) -> Vec3 + '_ {
        let disp = self.displacements();
        move |x: Vec3| {
            let xc = self.grid.clamp(x);
            let (base, f) = self.grid.locate_clamped(xc);
            vadd(xc, trilinear(&self.grid, &disp, base, f))
        }
    }

    pub fn min_det(&self) -> f64 {
        self.det_theta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Fails with [`Error::NonPositiveJacobian`] at the first voxel whose
    /// determinant is not positive.
    pub fn check_positive(&self) -> Result<()> {
        match self.det_theta.iter().position(|d| !(*d > 0.0)) {
            None => Ok(()),
            Some(voxel) => Err(Error::NonPositiveJacobian {
                voxel,
                det: self.det_theta[voxel],
            }),
        }
    }
}

#[derive(Clone, Copy)]
struct State {
    x: Vec3,
    theta: Mat3,
    log_det: f64,
}

#[inline]
fn rhs(view: &FieldView<'_>, s: &State) -> (Vec3, Mat3, f64) {
    let (v, g) = view.value_and_gradient(s.x);
    (v, g * s.theta, g.trace())
}

#[inline]
fn advance(s: &State, d: &(Vec3, Mat3, f64), h: f64) -> State {
    State {
        x: vadd(s.x, vscale(d.0, h)),
        theta: s.theta + d.1 * h,
        log_det: s.log_det + d.2 * h,
    }
}

/// Integrates every voxel's trajectory together with its Jacobian and the
/// divergence integral.
///
/// The three quantities share one RK4 state so `det Θ` and
/// `exp ∫ div v ds` are computed at identical nodes.
pub fn flow_map(v: &VelocityField, t_from: f64, t_to: f64, nsteps: usize) -> Result<FlowResult> {
    let grid = *v.grid();
    check_times(&grid, t_from, t_to)?;
    if nsteps == 0 {
        return Err(Error::BadParams("nsteps must be at least 1".into()));
    }

    // velocity blended at every node and half-step time, shared by all voxels
    let slices = (0..=2 * nsteps)
        .map(|m| v.blended_slice(node_time(t_from, t_to, m, 2 * nsteps)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<FieldView<'_>> = slices.iter().map(|s| FieldView::single(&grid, s)).collect();

    let per_voxel = (0..grid.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let x0 = grid.position(idx);
            let mut st = State {
                x: x0,
                theta: Mat3::identity(),
                log_det: 0.0,
            };
            for m in 0..nsteps {
                let dt =
                    node_time(t_from, t_to, m + 1, nsteps) - node_time(t_from, t_to, m, nsteps);
                let (va, vh, vb) = (&views[2 * m], &views[2 * m + 1], &views[2 * m + 2]);
                let k1 = rhs(va, &st);
                let k2 = rhs(vh, &advance(&st, &k1, 0.5 * dt));
                let k3 = rhs(vh, &advance(&st, &k2, 0.5 * dt));
                let k4 = rhs(vb, &advance(&st, &k3, dt));
                let w = dt / 6.0;
                let dx = [0, 1, 2].map(|c| w * (k1.0[c] + 2.0 * k2.0[c] + 2.0 * k3.0[c] + k4.0[c]));
                let dtheta = (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * w;
                st.x = settle(&grid, x0, vadd(st.x, dx))?;
                st.theta += dtheta;
                st.log_det += w * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
            }
            Ok((st.x, st.theta, st.theta.det(), st.log_det.exp()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = per_voxel.len();
    let mut out = FlowResult {
        grid,
        t_from,
        t_to,
        endpoints: Vec::with_capacity(n),
        jacobians: Vec::with_capacity(n),
        det_theta: Vec::with_capacity(n),
        exp_div: Vec::with_capacity(n),
    };
    for (e, j, d, x) in per_voxel {
        out.endpoints.push(e);
        out.jacobians.push(j);
        out.det_theta.push(d);
        out.exp_div.push(x);
    }
    Ok(out)
}

/// Endpoints only, with the same position arithmetic as [`flow_map`], so the
/// result matches its `endpoints` bitwise.
pub fn flow_endpoints(
    v: &VelocityField,
    t_from: f64,
    t_to: f64,
    nsteps: usize,
) -> Result<Vec<Vec3>> {
    let grid = *v.grid();
    check_times(&grid, t_from, t_to)?;
    if nsteps == 0 {
        return Err(Error::BadParams("nsteps must be at least 1".into()));
    }
    let slices = (0..=2 * nsteps)
        .map(|m| v.blended_slice(node_time(t_from, t_to, m, 2 * nsteps)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<FieldView<'_>> = slices.iter().map(|s| FieldView::single(&grid, s)).collect();
    (0..grid.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let x0 = grid.position(idx);
            let mut x = x0;
            for m in 0..nsteps {
                let dt =
                    node_time(t_from, t_to, m + 1, nsteps) - node_time(t_from, t_to, m, nsteps);
                let (va, vh, vb) = (&views[2 * m], &views[2 * m + 1], &views[2 * m + 2]);
                let k1 = va.value(x);
                let k2 = vh.value(vadd(x, vscale(k1, 0.5 * dt)));
                let k3 = vh.value(vadd(x, vscale(k2, 0.5 * dt)));
                let k4 = vb.value(vadd(x, vscale(k3, dt)));
                let w = dt / 6.0;
                let dx = [0, 1, 2].map(|c| w * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
                x = settle(&grid, x0, vadd(x, dx))?;
            }
            Ok(x)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetIdentityReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Voxelwise relative gap between `det Θ` and `exp ∫ div v ds`.
pub fn det_identity_report(fr: &FlowResult) -> DetIdentityReport {
    let errs: Vec<f64> = fr
        .det_theta
        .iter()
        .zip(&fr.exp_div)
        .map(|(d, e)| (d - e).abs() / e.abs())
        .collect();
    let n = errs.len().max(1) as f64;
    DetIdentityReport {
        max_rel_error: errs.iter().copied().fold(0.0, f64::max),
        mean_rel_error: errs.iter().sum::<f64>() / n,
    }
}

/// The deformation `h = η(0; τ, ·)` and its inverse `h⁻¹ = η(τ; 0, ·)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationPair {
    pub h: FlowResult,
    pub h_inv: FlowResult,
}

impl DeformationPair {
    /// `J_x = ∇ₓ h⁻¹(x)`, the Jacobian field of the forward flow.
    pub fn jacobian_field(&self) -> &[Mat3] {
        &self.h_inv.jacobians
    }
}

/// Builds `h` by integrating from `τ` back to `0` and `h⁻¹` from `0` to `τ`.
pub fn build_h_and_inverse(v: &VelocityField, nsteps: usize) -> Result<DeformationPair> {
    let tau = v.grid().tau;
    let h = flow_map(v, tau, 0.0, nsteps)?;
    h.check_positive()?;
    let h_inv = flow_map(v, 0.0, tau, nsteps)?;
    h_inv.check_positive()?;
    Ok(DeformationPair { h, h_inv })
}

/// `‖h(h⁻¹(x)) - x‖` per voxel in units of the smallest spacing, with the outer
/// map evaluated by integrating the backward flow from each `h⁻¹(x)`.
pub fn inverse_consistency(
    v: &VelocityField,
    h_inv: &FlowResult,
    nsteps: usize,
) -> Result<Vec<f64>> {
    let grid = *v.grid();
    let hmin = grid.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    (0..grid.n_voxels())
        .into_par_iter()
        .map(|idx| {
            let back =
                integrate_trajectory(v, h_inv.t_to, h_inv.endpoints[idx], h_inv.t_from, nsteps)?;
            Ok(norm2(vsub(back.endpoint(), grid.position(idx))) / hmin)
        })
        .collect()
}

/// `outer(inner(x))` at every voxel, the outer map evaluated by interpolation.
pub fn compose_interpolated(outer: &FlowResult, inner: &FlowResult) -> Result<Vec<Vec3>> {
    if !outer.grid.same_space(&inner.grid) {
        return Err(Error::GridMismatch);
    }
    let f = outer.interpolator();
    Ok(inner.endpoints.iter().map(|p| f(*p)).collect())
}
