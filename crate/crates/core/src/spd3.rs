//! Small dense linear algebra for 3×3 real matrices.
//!
//! Everything here works on stack values. The symmetric eigensolver is a cyclic
//! Jacobi iteration; the SVD, inverse square root and polar factor are built on
//! top of it.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Row-major 3×3 real matrix.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const fn zeros() -> Self {
        Mat3([[0.0; 3]; 3])
    }

    pub const fn identity() -> Self {
        Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub const fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Mat3(rows)
    }

    pub fn from_cols(cols: [Vec3; 3]) -> Self {
        Mat3::from_rows(cols).transpose()
    }

    pub const fn diag(d: Vec3) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: Vec3, b: Vec3) -> Self {
        let mut m = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = a[i] * b[j];
            }
        }
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        self.0[i]
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Mat3([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, x: Vec3) -> Vec3 {
        [dot(self.0[0], x), dot(self.0[1], x), dot(self.0[2], x)]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Entrywise absolute sum, `Σᵢⱼ |aᵢⱼ|`.
    pub fn norm(&self) -> f64 {
        mat_norm(self)
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Signed cofactor `(-1)^(i+j) · minor_ij`.
    pub fn cofactor(&self, i: usize, j: usize) -> f64 {
        let r = [(i + 1) % 3, (i + 2) % 3];
        let c = [(j + 1) % 3, (j + 2) % 3];
        // cyclic index order already carries the checkerboard sign
        let a = &self.0;
        a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]]
    }

    /// Matrix of cofactors. Its transpose is the adjugate.
    pub fn cofactor_matrix(&self) -> Mat3 {
        let mut m = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.cofactor(i, j);
            }
        }
        m
    }

    pub fn det(&self) -> f64 {
        det3(self)
    }

    /// Inverse by the adjugate; `None` when the determinant is exactly zero.
    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.cofactor_matrix().transpose() * (1.0 / d))
    }

    /// Largest entrywise asymmetry `max |aᵢⱼ - aⱼᵢ|`.
    pub fn asymmetry(&self) -> f64 {
        let a = &self.0;
        (a[0][1] - a[1][0])
            .abs()
            .max((a[0][2] - a[2][0]).abs())
            .max((a[1][2] - a[2][1]).abs())
    }

    /// `A Aᵀ`, exactly symmetric.
    pub fn gram_outer(&self) -> Spd3 {
        let r = &self.0;
        Spd3::from_components_unchecked([
            dot(r[0], r[0]),
            dot(r[0], r[1]),
            dot(r[0], r[2]),
            dot(r[1], r[1]),
            dot(r[1], r[2]),
            dot(r[2], r[2]),
        ])
    }

    /// `Aᵀ A`, exactly symmetric.
    pub fn gram_inner(&self) -> Spd3 {
        self.transpose().gram_outer()
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(mut self, rhs: Mat3) -> Mat3 {
        self += rhs;
        self
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, rhs: Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(mut self, rhs: Mat3) -> Mat3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self * -1.0
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(mut self, s: f64) -> Mat3 {
        for x in self.0.iter_mut().flatten() {
            *x *= s;
        }
        self
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let mut m = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i][0] * rhs.0[0][j]
                    + self.0[i][1] * rhs.0[1][j]
                    + self.0[i][2] * rhs.0[2][j];
            }
        }
        m
    }
}

/// Entrywise absolute-sum matrix norm.
pub fn mat_norm(a: &Mat3) -> f64 {
    a.0.iter().flatten().map(|x| x.abs()).sum()
}

/// Determinant by cofactor expansion along the first row.
pub fn det3(a: &Mat3) -> f64 {
    a.0[0][0] * a.cofactor(0, 0) + a.0[0][1] * a.cofactor(0, 1) + a.0[0][2] * a.cofactor(0, 2)
}

/// Singularity cutoff for determinants: `1e-12 · ‖B‖³`.
pub fn eps_det(b: &Mat3) -> f64 {
    1e-12 * mat_norm(b).powi(3)
}

/// Symmetric positive definite 3×3 tensor stored as its upper triangle
/// `(xx, xy, xz, yy, yz, zz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spd3([f64; 6]);

impl Spd3 {
    pub const IDENTITY: Spd3 = Spd3([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

    pub fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Result<Self> {
        Self::from_components([xx, xy, xz, yy, yz, zz])
    }

    /// Validates finiteness and positive definiteness (`λ₃ ≥ eps_spd`).
    pub fn from_components(c: [f64; 6]) -> Result<Self> {
        if !c.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        let s = Spd3(c);
        let min = s.eig().values[2];
        if !(min >= s.eps_spd()) || s.trace() <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(s)
    }

    /// Symmetrizes `(A + Aᵀ)/2` and validates.
    pub fn from_matrix(a: &Mat3) -> Result<Self> {
        Self::from_components(symmetric_part(a))
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Skips the positivity check. Callers must guarantee the invariant.
    pub(crate) const fn from_components_unchecked(c: [f64; 6]) -> Self {
        Spd3(c)
    }

    /// Nearest SPD tensor by clamping eigenvalues at `floor`.
    pub fn project(c: [f64; 6], floor: f64) -> Spd3 {
        let m = Spd3(c).to_mat3();
        let eig = match sym_eig(&m) {
            Ok(e) => e,
            Err(_) => return Spd3::IDENTITY * floor.max(f64::MIN_POSITIVE),
        };
        let mut out = Mat3::zeros();
        for (lam, v) in eig.values.iter().zip(eig.vectors.iter()) {
            out += Mat3::outer(*v, *v) * lam.max(floor);
        }
        Spd3(symmetric_part(&out))
    }

    #[inline]
    pub fn components(&self) -> [f64; 6] {
        self.0
    }

    pub fn to_mat3(&self) -> Mat3 {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Mat3([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[3] + self.0[5]
    }

    /// Positivity cutoff `1e-12 · trace`.
    pub fn eps_spd(&self) -> f64 {
        1e-12 * self.trace()
    }

    pub fn eig(&self) -> EigenTriple {
        // symmetric by construction, so the check in sym_eig cannot fail
        jacobi_eig(&self.to_mat3())
    }

    /// Leading principal minors all positive. Cheap definiteness test.
    pub fn sylvester_positive(&self) -> bool {
        let [xx, xy, _, yy, _, _] = self.0;
        let m2 = xx * yy - xy * xy;
        let m3 = self.to_mat3().det();
        xx > 0.0 && m2 > 0.0 && m3 > 0.0
    }

    /// `R S Rᵀ`, symmetrized.
    pub fn conjugate(&self, r: &Mat3) -> Spd3 {
        let m = *r * self.to_mat3() * r.transpose();
        Spd3(symmetric_part(&m))
    }
}

impl Mul<f64> for Spd3 {
    type Output = Spd3;
    fn mul(self, s: f64) -> Spd3 {
        Spd3(self.0.map(|x| x * s))
    }
}

fn symmetric_part(a: &Mat3) -> [f64; 6] {
    let m = &a.0;
    [
        m[0][0],
        0.5 * (m[0][1] + m[1][0]),
        0.5 * (m[0][2] + m[2][0]),
        m[1][1],
        0.5 * (m[1][2] + m[2][1]),
        m[2][2],
    ]
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl EigenTriple {
    /// `Σ λᵢ vᵢ vᵢᵀ`
    pub fn reconstruct(&self) -> Mat3 {
        let mut m = Mat3::zeros();
        for (lam, v) in self.values.iter().zip(self.vectors.iter()) {
            m += Mat3::outer(*v, *v) * *lam;
        }
        m
    }

    /// Eigenvectors as matrix columns.
    pub fn vector_matrix(&self) -> Mat3 {
        Mat3::from_cols(self.vectors)
    }
}

const JACOBI_MAX_SWEEPS: usize = 30;
const JACOBI_OFF_TOL: f64 = 1e-13;

/// Eigendecomposition of a symmetric matrix.
///
/// Fails with [`Error::NonSymmetric`] when entries disagree with their mirror
/// by more than `1e-12` (scaled by the largest entry when that exceeds one).
pub fn sym_eig(s: &Mat3) -> Result<EigenTriple> {
    if !s.is_finite() {
        return Err(Error::NonFinite("matrix"));
    }
    let asym = s.asymmetry();
    if asym > 1e-12 * s.max_abs().max(1.0) {
        return Err(Error::NonSymmetric { asymmetry: asym });
    }
    let sym = Spd3(symmetric_part(s)).to_mat3();
    Ok(jacobi_eig(&sym))
}

// Off-diagonal below rounding of the geometric mean of its diagonal pair.
fn negligible(a: &Mat3, p: usize, q: usize) -> bool {
    a.0[p][q].abs() <= f64::EPSILON * (a.0[p][p] * a.0[q][q]).abs().sqrt()
}

fn jacobi_eig(s: &Mat3) -> EigenTriple {
    let mut a = *s;
    let mut v = Mat3::identity();
    let scale = a.frobenius();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (2.0 * (a.0[0][1].powi(2) + a.0[0][2].powi(2) + a.0[1][2].powi(2))).sqrt();
        let settled = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .all(|&(p, q)| negligible(&a, p, q));
        if off <= JACOBI_OFF_TOL * scale && settled {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a.0[p][q];
            if apq == 0.0 || negligible(&a, p, q) {
                continue;
            }
            let theta = (a.0[q][q] - a.0[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::identity();
            rot.0[p][p] = c;
            rot.0[q][q] = c;
            rot.0[p][q] = s;
            rot.0[q][p] = -s;
            a = rot.transpose() * a * rot;
            a.0[p][q] = 0.0;
            a.0[q][p] = 0.0;
            v = v * rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a.0[j][j].total_cmp(&a.0[i][i]));
    let values = order.map(|i| a.0[i][i]);
    let vectors = order.map(|i| {
        let c = v.col(i);
        vscale(c, 1.0 / norm2(c))
    });
    EigenTriple { values, vectors }
}

/// `A = U · diag(s) · Vᵀ` with `s` nonnegative and descending.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    pub s: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Mat3 {
        self.u * Mat3::diag(self.s) * self.v.transpose()
    }
}

/// Singular value decomposition from the eigenvectors of `AᵀA`.
///
/// Left vectors are `A vᵢ / σᵢ`, re-orthonormalized in order of decreasing σ;
/// columns for zero singular values are completed to an orthonormal basis.
pub fn svd3(a: &Mat3) -> Svd3 {
    let eig = jacobi_eig(&a.gram_inner().to_mat3());

    let mut triples: Vec<(f64, Vec3, Vec3)> = eig
        .vectors
        .iter()
        .map(|&vi| {
            let av = a.mul_vec(vi);
            (norm2(av), av, vi)
        })
        .collect();
    triples.sort_by(|x, y| y.0.total_cmp(&x.0));

    let smax = triples[0].0;
    let zero_cut = 16.0 * f64::EPSILON * smax;
    let mut ucols: Vec<Vec3> = Vec::with_capacity(3);
    let mut s = [0.0; 3];
    for (k, (sigma, av, _)) in triples.iter().enumerate() {
        if smax == 0.0 || *sigma <= zero_cut {
            break;
        }
        let mut u = vscale(*av, 1.0 / sigma);
        for prev in &ucols {
            u = vsub(u, vscale(*prev, dot(*prev, u)));
        }
        let n = norm2(u);
        if n < 0.5 {
            // direction lost to cancellation; complete it below instead
            break;
        }
        ucols.push(vscale(u, 1.0 / n));
        s[k] = *sigma;
    }
    complete_basis(&mut ucols);

    let vcols = [triples[0].2, triples[1].2, triples[2].2];
    Svd3 {
        u: Mat3::from_cols([ucols[0], ucols[1], ucols[2]]),
        s,
        v: Mat3::from_cols(vcols),
    }
}

fn complete_basis(cols: &mut Vec<Vec3>) {
    const AXES: [Vec3; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if cols.is_empty() {
        cols.push(AXES[0]);
    }
    if cols.len() == 1 {
        let u0 = cols[0];
        let k = (0..3)
            .min_by(|&i, &j| u0[i].abs().total_cmp(&u0[j].abs()))
            .unwrap_or(0);
        let w = vsub(AXES[k], vscale(u0, u0[k]));
        cols.push(vscale(w, 1.0 / norm2(w)));
    }
    if cols.len() == 2 {
        let w = cross(cols[0], cols[1]);
        cols.push(vscale(w, 1.0 / norm2(w)));
    }
}

/// `P^{-1/2}` from the eigendecomposition, `U S^{-1} Uᵀ` with `S = diag(√λᵢ)`.
pub fn inv_sqrt_sym(p: &Spd3) -> Result<Spd3> {
    let eig = p.eig();
    let cutoff = p.eps_spd();
    let min = eig.values[2];
    if !(min >= cutoff) || cutoff <= 0.0 {
        return Err(Error::NearSingular {
            what: "smallest eigenvalue",
            value: min,
            cutoff,
        });
    }
    let mut b = Mat3::zeros();
    for (lam, v) in eig.values.iter().zip(eig.vectors.iter()) {
        b += Mat3::outer(*v, *v) * (1.0 / lam.sqrt());
    }
    Ok(Spd3(symmetric_part(&b)))
}

/// `(A Aᵀ)^{-1/2}` computed from the SVD of `A` as `U S⁻¹ Uᵀ`.
pub fn inv_sqrt_gram(a: &Mat3) -> Result<Spd3> {
    let svd = svd3(a);
    let cutoff = 1e-12 * svd.s[0];
    if !(svd.s[2] > cutoff) {
        return Err(Error::NearSingular {
            what: "smallest singular value",
            value: svd.s[2],
            cutoff,
        });
    }
    let mut b = Mat3::zeros();
    for k in 0..3 {
        let u = svd.u.col(k);
        b += Mat3::outer(u, u) * (1.0 / svd.s[k]);
    }
    Ok(Spd3(symmetric_part(&b)))
}

/// Finite-strain rotation `R = Jᵀ (J Jᵀ)^{-1/2}`.
///
/// The closed-form product is polished with Newton's polar iteration
/// `R ← (R + R⁻ᵀ)/2`, which leaves the exact polar factor fixed and removes the
/// orthogonality loss of forming `J Jᵀ` for poorly conditioned `J`.
pub fn polar_rotation(j: &Mat3) -> Result<Mat3> {
    if !j.is_finite() {
        return Err(Error::NonFinite("jacobian"));
    }
    let d = j.det();
    let cutoff = eps_det(j);
    if !(d.abs() >= cutoff) || d == 0.0 {
        return Err(Error::NearSingular {
            what: "|det J|",
            value: d.abs(),
            cutoff,
        });
    }
    let b = inv_sqrt_sym(&j.gram_outer())?;
    let mut r = j.transpose() * b.to_mat3();
    for _ in 0..4 {
        let dr = r.det();
        if dr == 0.0 {
            break;
        }
        let inv_t = r.cofactor_matrix() * (1.0 / dr);
        let next = (r + inv_t) * 0.5;
        let change = mat_norm(&(next - r));
        r = next;
        if change <= 8.0 * f64::EPSILON {
            break;
        }
    }
    Ok(r)
}

/// Solves `B x = b` by Cramer's rule, `xᵢ = det(Bᵢ) / det(B)` where `Bᵢ` has
/// column `i` replaced by `b`.
pub fn cramer_solve(bm: &Mat3, rhs: Vec3) -> Result<Vec3> {
    let d = bm.det();
    let cutoff = eps_det(bm);
    if !(d.abs() >= cutoff) || d == 0.0 {
        return Err(Error::NearSingular {
            what: "|det B|",
            value: d.abs(),
            cutoff,
        });
    }
    let mut x = [0.0; 3];
    for (i, xi) in x.iter_mut().enumerate() {
        let mut bi = *bm;
        for r in 0..3 {
            bi.0[r][i] = rhs[r];
        }
        *xi = bi.det() / d;
    }
    // one refinement step on the residual
    let r = vsub(rhs, bm.mul_vec(x));
    let mut dx = [0.0; 3];
    for (i, di) in dx.iter_mut().enumerate() {
        let mut bi = *bm;
        for row in 0..3 {
            bi.0[row][i] = r[row];
        }
        *di = bi.det() / d;
    }
    Ok(std::array::from_fn(|i| x[i] + dx[i]))
}
