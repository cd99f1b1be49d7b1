//! Finite-strain transport of tensor images: resample through `h`, then
//! rotate each voxel by the polar factor of the local Jacobian.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{trilinear, TensorImage};
use crate::flow::FlowResult;
use crate::spd3::{polar_rotation, sym_eig, Mat3, Spd3};

/// Where a reoriented image came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Caller-supplied name of the source image, if any.
    pub source: Option<String>,
    /// Identifies the deformation, e.g. `flow 1→0`.
    pub deformation: String,
}

/// `T ⋄ h`: a tensor image plus a note on how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ReorientedImage {
    pub image: TensorImage,
    pub provenance: Provenance,
}

impl ReorientedImage {
    pub fn voxels(&self) -> &[Spd3] {
        self.image.voxels()
    }

    pub fn with_source(mut self, name: impl Into<String>) -> Self {
        self.provenance.source = Some(name.into());
        self
    }
}

/// Componentwise trilinear interpolation of `t` at `x`, clamped to the box.
fn sample_tensor(t: &TensorImage, comps: &[[f64; 6]], x: [f64; 3]) -> Spd3 {
    let g = t.grid();
    let (base, f) = g.locate_clamped(g.clamp(x));
    let c = trilinear(g, comps, base, f);
    let out = Spd3::from_components_unchecked(c);
    if out.sylvester_positive() {
        out
    } else {
        // a convex combination of SPD nodes only leaves the cone by roundoff
        Spd3::project(c, out.eps_spd().max(f64::MIN_POSITIVE))
    }
}

/// `(T ∘ h)(x)` at every voxel.
pub fn pullback(t: &TensorImage, h: &FlowResult) -> Result<TensorImage> {
    if !t.grid().same_space(&h.grid) {
        return Err(Error::GridMismatch);
    }
    let comps = t.components();
    let voxels = h
        .endpoints
        .par_iter()
        .map(|p| sample_tensor(t, &comps, *p))
        .collect();
    TensorImage::new(*t.grid(), voxels)
}

/// `(T ⋄ h)(x) = R (T ∘ h)(x) Rᵀ` with `R = Jₓᵀ (Jₓ Jₓᵀ)^{-1/2}`.
pub fn fs_transform(
    t: &TensorImage,
    h: &FlowResult,
    jacobians: &[Mat3],
) -> Result<ReorientedImage> {
    let g = *t.grid();
    if !g.same_space(&h.grid) || jacobians.len() != g.n_voxels() {
        return Err(Error::GridMismatch);
    }
    let comps = t.components();
    let voxels = h
        .endpoints
        .par_iter()
        .zip(jacobians.par_iter())
        .enumerate()
        .map(|(idx, (p, j))| {
            let pulled = sample_tensor(t, &comps, *p);
            if *j == Mat3::identity() {
                return Ok(pulled);
            }
            let r = polar_rotation(j)?;
            let out = pulled.conjugate(&r);
            if out.sylvester_positive() {
                Ok(out)
            } else {
                Err(Error::NotSpd {
                    index: idx,
                    min_eigenvalue: sym_eig(&out.to_mat3())
                        .map(|e| e.values[2])
                        .unwrap_or(f64::NAN),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReorientedImage {
        image: TensorImage::new(g, voxels)?,
        provenance: Provenance {
            source: None,
            deformation: format!("flow {}→{}", h.t_from, h.t_to),
        },
    })
}

/// `Σ ‖A(x) − B(x)‖²_F · cell volume`, summing all nine matrix entries.
pub fn ssd_images(a: &TensorImage, b: &TensorImage) -> Result<f64> {
    if !a.grid().same_space(b.grid()) {
        return Err(Error::GridMismatch);
    }
    let sum: f64 = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .map(|(p, q)| {
            let (p, q) = (p.components(), q.components());
            let d: [f64; 6] = std::array::from_fn(|i| p[i] - q[i]);
            d[0] * d[0]
                + d[3] * d[3]
                + d[5] * d[5]
                + 2.0 * (d[1] * d[1] + d[2] * d[2] + d[4] * d[4])
        })
        .sum();
    Ok(sum * a.grid().cell_volume())
}

/// Data term between a transported image and the target.
pub fn ssd(tt: &ReorientedImage, d: &TensorImage) -> Result<f64> {
    ssd_images(&tt.image, d)
}
