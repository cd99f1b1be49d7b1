//! Sine-series parameterization of velocity fields.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GridSpec, VelocityField};

/// Products of `sin(k π u)` along each axis, `u ∈ [0, 1]` the normalized grid
/// coordinate and `k = 1..=modes`. Every basis field vanishes on the boundary,
/// and synthesized fields have their boundary nodes set to exactly zero.
///
/// Coefficients are laid out as `[ti][component][kz][ky][kx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    grid: GridSpec,
    modes: usize,
    tables: [Vec<Vec<f64>>; 3],
}

impl FourierBasis {
    pub fn new(grid: GridSpec, modes: usize) -> Result<Self> {
        let grid = grid.validated()?;
        if modes == 0 {
            return Err(Error::BadConfig("modes must be at least 1".into()));
        }
        if let Some(n) = grid.dims.iter().find(|&&n| modes > n / 2) {
            return Err(Error::BadConfig(format!(
                "{modes} modes exceed half of the {n} samples on an axis"
            )));
        }
        let tables = [0, 1, 2].map(|a| {
            let n = grid.dims[a];
            (1..=modes)
                .map(|k| {
                    (0..n)
                        .map(|i| (k as f64 * PI * i as f64 / (n - 1) as f64).sin())
                        .collect()
                })
                .collect()
        });
        Ok(Self {
            grid,
            modes,
            tables,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn modes_per_component(&self) -> usize {
        self.modes.pow(3)
    }

    pub fn n_coeffs(&self) -> usize {
        self.grid.nt * 3 * self.modes_per_component()
    }

    pub fn coeff_index(&self, ti: usize, comp: usize, k: [usize; 3]) -> usize {
        let m = self.modes;
        (((ti * 3 + comp) * m + k[2]) * m + k[1]) * m + k[0]
    }

    /// Velocity field with the given coefficients.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<VelocityField> {
        if coeffs.len() != self.n_coeffs() {
            return Err(Error::BadParams(format!(
                "{} coefficients, basis has {}",
                coeffs.len(),
                self.n_coeffs()
            )));
        }
        let g = &self.grid;
        let [nx, ny, nz] = g.dims;
        let n = g.n_voxels();
        let m = self.modes;
        let mut samples = vec![[0.0; 3]; n * g.nt];
        for ti in 0..g.nt {
            let out = &mut samples[ti * n..(ti + 1) * n];
            for comp in 0..3 {
                // collapse x, then y, then z
                let mut fy = vec![0.0; m * m * nx]; // [kz][ky][i]
                for kz in 0..m {
                    for ky in 0..m {
                        let row = &mut fy[(kz * m + ky) * nx..(kz * m + ky + 1) * nx];
                        for kx in 0..m {
                            let c = coeffs[self.coeff_index(ti, comp, [kx, ky, kz])];
                            if c == 0.0 {
                                continue;
                            }
                            for (r, s) in row.iter_mut().zip(&self.tables[0][kx]) {
                                *r += c * s;
                            }
                        }
                    }
                }
                let mut fz = vec![0.0; m * nx * ny]; // [kz][j][i]
                for kz in 0..m {
                    for ky in 0..m {
                        let row = &fy[(kz * m + ky) * nx..(kz * m + ky + 1) * nx];
                        if row.iter().all(|x| *x == 0.0) {
                            continue;
                        }
                        for j in 1..ny - 1 {
                            let sy = self.tables[1][ky][j];
                            let dst = &mut fz[(kz * ny + j) * nx..(kz * ny + j + 1) * nx];
                            for (d, r) in dst.iter_mut().zip(row) {
                                *d += sy * r;
                            }
                        }
                    }
                }
                for kz in 0..m {
                    for k in 1..nz - 1 {
                        let sz = self.tables[2][kz][k];
                        for j in 1..ny - 1 {
                            let src = &fz[(kz * ny + j) * nx..(kz * ny + j + 1) * nx];
                            for i in 1..nx - 1 {
                                out[g.index(i, j, k)][comp] += sz * src[i];
                            }
                        }
                    }
                }
            }
        }
        VelocityField::from_samples(*g, samples)
    }

    /// The single basis field for coefficient `index`.
    pub fn basis_field(&self, index: usize) -> Result<VelocityField> {
        let mut c = vec![0.0; self.n_coeffs()];
        *c.get_mut(index)
            .ok_or_else(|| Error::BadParams(format!("coefficient {index} out of range")))? = 1.0;
        self.synthesize(&c)
    }
}
