//! Synthetic tensor images for tests and demos.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridSpec, TensorImage, VelocityField};
use crate::objective::FourierBasis;
use crate::spd3::{dot, norm2, vscale, vsub, Mat3, Spd3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Every voxel equals `params.tensor`.
    Uniform,
    /// A ball oriented along `direction` inside a background oriented along
    /// an orthogonal axis.
    TwoCompartment,
    /// A cylinder of fibers along `direction` whose anisotropy decays from
    /// the axis to the rim, in an isotropic background.
    FiberBundle,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "two-compartment" => Ok(Self::TwoCompartment),
            "fiber-bundle" => Ok(Self::FiberBundle),
            other => Err(Error::BadParams(format!("unknown phantom kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    /// Tensor of the uniform phantom, `(xx, xy, xz, yy, yz, zz)`.
    pub tensor: [f64; 6],
    /// Transverse diffusivity.
    pub diffusivity: f64,
    /// Largest eigenvalue ratio in the image.
    pub max_aniso: f64,
    /// Principal direction of the ball or the fiber bundle.
    pub direction: Vec3,
    /// Ball or bundle radius as a fraction of the smallest half extent.
    pub radius: f64,
    /// Amplitude of a symmetric uniform perturbation, relative to
    /// `diffusivity`. Zero disables noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            tensor: [1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            diffusivity: 1.0,
            max_aniso: 4.0,
            direction: [1.0, 0.0, 0.0],
            radius: 0.5,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// `λ (I + (a − 1) d dᵀ)` for unit `d`.
fn prolate(lambda: f64, aniso: f64, d: Vec3) -> Result<Spd3> {
    let m = (Mat3::identity() + Mat3::outer(d, d) * (aniso - 1.0)) * lambda;
    Spd3::from_matrix(&m)
}

/// A unit vector orthogonal to `d`.
fn orthogonal(d: Vec3) -> Vec3 {
    let a = if d[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let p = vsub(a, vscale(d, dot(a, d)));
    vscale(p, 1.0 / norm2(p))
}

pub fn phantom(kind: PhantomKind, grid: GridSpec, params: &PhantomParams) -> Result<TensorImage> {
    let grid = grid.validated()?;
    let p = params;
    if !(p.diffusivity > 0.0 && p.diffusivity.is_finite()) {
        return Err(Error::BadParams("diffusivity must be positive".into()));
    }
    if !(p.max_aniso >= 1.0 && p.max_aniso.is_finite()) {
        return Err(Error::BadParams("max_aniso must be at least 1".into()));
    }
    if !(p.radius > 0.0 && p.radius.is_finite()) {
        return Err(Error::BadParams("radius must be positive".into()));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::BadParams("noise must be nonnegative".into()));
    }
    let dn = norm2(p.direction);
    if !(dn > 0.0 && dn.is_finite()) {
        return Err(Error::BadParams(
            "direction must be a nonzero vector".into(),
        ));
    }
    let d = vscale(p.direction, 1.0 / dn);
    let lo = grid.origin;
    let hi = grid.upper();
    let center: Vec3 = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let half = (0..3)
        .map(|a| 0.5 * (hi[a] - lo[a]))
        .fold(f64::INFINITY, f64::min);
    let r = p.radius * half;

    let base = match kind {
        PhantomKind::Uniform => {
            let t = Spd3::from_components(p.tensor)
                .map_err(|e| Error::BadParams(format!("tensor: {e}")))?;
            let e = t.eig().values;
            if e[0] / e[2] > p.max_aniso * (1.0 + 1e-12) {
                return Err(Error::BadParams(
                    "tensor anisotropy exceeds max_aniso".into(),
                ));
            }
            TensorImage::constant(grid, t)?
        }
        PhantomKind::TwoCompartment => {
            let inner = prolate(p.diffusivity, p.max_aniso, d)?;
            let outer = prolate(p.diffusivity, p.max_aniso.sqrt(), orthogonal(d))?;
            TensorImage::from_fn(grid, |x| {
                Ok(if norm2(vsub(x, center)) <= r {
                    inner
                } else {
                    outer
                })
            })?
        }
        PhantomKind::FiberBundle => {
            let iso = Spd3::IDENTITY * p.diffusivity;
            TensorImage::from_fn(grid, |x| {
                let rel = vsub(x, center);
                let rho = norm2(vsub(rel, vscale(d, dot(rel, d))));
                if rho >= r {
                    return Ok(iso);
                }
                let q = rho / r;
                prolate(p.diffusivity, 1.0 + (p.max_aniso - 1.0) * (1.0 - q * q), d)
            })?
        }
    };
    if p.noise == 0.0 {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let amp = p.noise * p.diffusivity;
    let voxels = base
        .voxels()
        .iter()
        .map(|t| {
            let mut c = t.components();
            for x in c.iter_mut() {
                *x += amp * rng.gen_range(-1.0..=1.0);
            }
            Spd3::project(c, 1e-3 * p.diffusivity)
        })
        .collect();
    TensorImage::new(grid, voxels)
}

/// A smooth, time-constant velocity built from the two lowest sine modes,
/// scaled so its largest nodal speed is `max_speed`. Over a unit horizon this
/// moves interior points by roughly `max_speed`.
pub fn smooth_velocity(grid: GridSpec, max_speed: f64) -> Result<VelocityField> {
    let basis = FourierBasis::new(grid, 2)?;
    let mut c = vec![0.0; basis.n_coeffs()];
    for ti in 0..grid.nt {
        c[basis.coeff_index(ti, 0, [0, 0, 0])] = 1.0;
        c[basis.coeff_index(ti, 1, [0, 0, 0])] = -0.6;
        c[basis.coeff_index(ti, 2, [0, 0, 0])] = 0.5;
        c[basis.coeff_index(ti, 0, [1, 0, 0])] = 0.25;
        c[basis.coeff_index(ti, 1, [0, 1, 0])] = 0.2;
        c[basis.coeff_index(ti, 2, [0, 0, 1])] = -0.15;
    }
    let unit = basis.synthesize(&c)?;
    let peak = unit.max_norm();
    Ok(unit.scaled(max_speed / peak))
}
