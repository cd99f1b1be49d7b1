//! Self-check suites run by `dtreg verify`: randomized property checks of the
//! matrix kernels and of the flow integrators, each reduced to one residual
//! compared against a fixed threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::{GridSpec, VelocityField};
use crate::flow::{
    det_identity_report, flow_map, integrate_trajectory, inverse_consistency, picard_trajectory,
};
use crate::objective::FourierBasis;
use crate::spd3::{
    cramer_solve, det3, eps_det, inv_sqrt_sym, mat_norm, norm2, polar_rotation, svd3, sym_eig,
    vsub, Mat3, Spd3, Vec3,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Spd3,
    Flow,
    All,
}

impl std::str::FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spd3" => Ok(Self::Spd3),
            "flow" => Ok(Self::Flow),
            "all" => Ok(Self::All),
            other => Err(crate::Error::BadParams(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: String,
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl PropertyResult {
    fn new(suite: &str, name: &str, residual: f64, threshold: f64) -> Self {
        Self {
            suite: suite.into(),
            name: name.into(),
            residual,
            threshold,
            passed: residual <= threshold,
        }
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Spd3 | Suite::All) {
        out.extend(spd3_suite(seed));
    }
    if matches!(suite, Suite::Flow | Suite::All) {
        out.extend(flow_suite(seed)?);
    }
    Ok(out)
}

/// Uniformly distributed rotation from a random unit quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let q: [f64; 4] = loop {
        let q = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            break q.map(|x| x / n);
        }
    };
    let [w, x, y, z] = q;
    Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Log-uniform singular values with largest/smallest ratio up to `max_cond`.
fn spectrum(rng: &mut impl Rng, max_cond: f64) -> [f64; 3] {
    let lc = rng.gen_range(0.0..=max_cond.ln());
    let scale = rng.gen_range(-2.0f64..2.0).exp();
    let mid = rng.gen_range(0.0..=1.0);
    [scale, scale * (-mid * lc).exp(), scale * (-lc).exp()]
}

/// `Q diag(s) Qᵀ` with condition number at most `max_cond`.
pub fn random_spd(rng: &mut impl Rng, max_cond: f64) -> Spd3 {
    let q = random_rotation(rng);
    let s = spectrum(rng, max_cond);
    let m = q * Mat3::diag(s) * q.transpose();
    Spd3::from_matrix(&m).expect("well-conditioned spectrum")
}

/// `U diag(s) Vᵀ` with condition number at most `max_cond` and `det > 0`.
pub fn random_matrix(rng: &mut impl Rng, max_cond: f64) -> Mat3 {
    let u = random_rotation(rng);
    let v = random_rotation(rng);
    u * Mat3::diag(spectrum(rng, max_cond)) * v.transpose()
}

pub fn random_entries(rng: &mut impl Rng) -> Mat3 {
    Mat3([0; 3].map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))))
}

/// Gaussian elimination with partial pivoting.
pub fn eliminate(b: &Mat3, rhs: Vec3) -> Vec3 {
    let mut a = [[0.0; 4]; 3];
    for r in 0..3 {
        a[r][..3].copy_from_slice(&b.0[r]);
        a[r][3] = rhs[r];
    }
    for col in 0..3 {
        let p = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        a.swap(col, p);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][3] - s) / a[r][r];
    }
    x
}

fn permutation_det(a: &Mat3) -> f64 {
    const PERMS: [([usize; 3], f64); 6] = [
        ([0, 1, 2], 1.0),
        ([1, 2, 0], 1.0),
        ([2, 0, 1], 1.0),
        ([0, 2, 1], -1.0),
        ([2, 1, 0], -1.0),
        ([1, 0, 2], -1.0),
    ];
    PERMS
        .iter()
        .map(|(p, s)| s * a.0[0][p[0]] * a.0[1][p[1]] * a.0[2][p[2]])
        .sum()
}

fn spd3_suite(seed: u64) -> Vec<PropertyResult> {
    const S: &str = "spd3";
    const N: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = Vec::new();

    let mut norm_axioms = 0.0f64;
    let mut submult = 0.0f64;
    let mut cofactor = 0.0f64;
    let mut det_err = 0.0f64;
    for _ in 0..N {
        let a = random_entries(&mut rng) * rng.gen_range(0.1..10.0);
        let b = random_entries(&mut rng);
        let c = rng.gen_range(-3.0..3.0);
        let (na, nb) = (mat_norm(&a), mat_norm(&b));
        norm_axioms = norm_axioms
            .max((mat_norm(&(a + b)) - na - nb).max(0.0) / (na + nb))
            .max((mat_norm(&(a * c)) - c.abs() * na).abs() / (c.abs() * na).max(1e-300));
        submult = submult.max((mat_norm(&(a * b)) - na * nb).max(0.0) / (na * nb));
        for i in 0..3 {
            for j in 0..3 {
                cofactor = cofactor.max(a.cofactor(i, j).abs() / (2.0 * na * na));
            }
        }
        let oracle = permutation_det(&a);
        det_err = det_err.max((det3(&a) - oracle).abs() / (na * na * na));
    }
    res.push(PropertyResult::new(
        S,
        "mat_norm axioms (relative violation)",
        norm_axioms,
        1e-14,
    ));
    res.push(PropertyResult::new(
        S,
        "mat_norm submultiplicative excess (relative)",
        submult,
        1e-15,
    ));
    res.push(PropertyResult::new(
        S,
        "cofactor bound |C_ij| / 2‖B‖²",
        cofactor,
        1.0,
    ));
    res.push(PropertyResult::new(
        S,
        "det3 vs permutation sum",
        det_err,
        1e-12,
    ));

    let mut eig_res = 0.0f64;
    let mut eig_order = 0.0f64;
    let mut svd_res = 0.0f64;
    let mut svd_orth = 0.0f64;
    let mut isqrt = 0.0f64;
    let mut isqrt_spd = 0.0f64;
    for _ in 0..N {
        let p = random_spd(&mut rng, 1e6);
        let m = p.to_mat3();
        let e = sym_eig(&m).expect("symmetric");
        for (l, v) in e.values.iter().zip(&e.vectors) {
            let r = vsub(m.mul_vec(*v), v.map(|x| x * l));
            eig_res = eig_res.max(norm2(r) / mat_norm(&m));
        }
        eig_order = eig_order.max(
            (e.values[1] - e.values[0])
                .max(e.values[2] - e.values[1])
                .max(0.0),
        );

        let a = random_entries(&mut rng);
        let s = svd3(&a);
        svd_res = svd_res.max(mat_norm(&(s.reconstruct() - a)) / mat_norm(&a));
        let eye = Mat3::identity();
        svd_orth = svd_orth
            .max(mat_norm(&(s.u * s.u.transpose() - eye)))
            .max(mat_norm(&(s.v * s.v.transpose() - eye)));

        let b = inv_sqrt_sym(&p).expect("SPD input");
        let bm = b.to_mat3();
        isqrt = isqrt.max(mat_norm(&(bm * bm * m - eye)) / mat_norm(&m));
        isqrt_spd = isqrt_spd.max(if b.eig().values[2] > 0.0 { 0.0 } else { 1.0 });
    }
    res.push(PropertyResult::new(
        S,
        "sym_eig residual / ‖S‖",
        eig_res,
        1e-9,
    ));
    res.push(PropertyResult::new(
        S,
        "sym_eig descending order violation",
        eig_order,
        0.0,
    ));
    res.push(PropertyResult::new(
        S,
        "svd3 reconstruction / ‖A‖",
        svd_res,
        1e-9,
    ));
    res.push(PropertyResult::new(
        S,
        "svd3 orthogonality",
        svd_orth,
        1e-10,
    ));
    res.push(PropertyResult::new(
        S,
        "inv_sqrt_sym ‖BBP − I‖ / ‖P‖ (cond ≤ 1e6)",
        isqrt,
        1e-8,
    ));
    res.push(PropertyResult::new(
        S,
        "inv_sqrt_sym output not SPD",
        isqrt_spd,
        0.0,
    ));

    let mut polar_orth = 0.0f64;
    let mut polar_det = 0.0f64;
    let mut polar_cont = 0.0f64;
    for _ in 0..N {
        let j = random_matrix(&mut rng, 1e4);
        let r = polar_rotation(&j).expect("nonsingular");
        polar_orth = polar_orth.max(mat_norm(&(r * r.transpose() - Mat3::identity())));
        polar_det = polar_det.max((r.det() - 1.0).abs());
        let e = random_entries(&mut rng);
        let rk = polar_rotation(&(j + e * 1e-8)).expect("nonsingular");
        polar_cont = polar_cont
            .max(mat_norm(&(rk - r)) / 1e-8 / j.inverse().map_or(1.0, |ji| mat_norm(&ji)));
    }
    res.push(PropertyResult::new(
        S,
        "polar_rotation ‖RRᵀ − I‖ (cond ≤ 1e4)",
        polar_orth,
        1e-9,
    ));
    res.push(PropertyResult::new(
        S,
        "polar_rotation |det R − 1|",
        polar_det,
        1e-9,
    ));
    res.push(PropertyResult::new(
        S,
        "polar_rotation continuity ‖ΔR‖ / (ε‖J⁻¹‖)",
        polar_cont,
        100.0,
    ));

    let mut eig_cont = 0.0f64;
    for _ in 0..100 {
        let p = random_spd(&mut rng, 1e3);
        let base = p.eig().values;
        for eps in [1e-4, 1e-6, 1e-8] {
            let e = random_entries(&mut rng);
            let e = e * (eps / mat_norm(&e));
            let sym = (e + e.transpose()) * 0.5;
            let q = sym_eig(&(p.to_mat3() + sym)).expect("symmetric").values;
            let dev = (0..3).map(|i| (q[i] - base[i]).abs()).fold(0.0, f64::max);
            eig_cont = eig_cont.max(dev / eps);
        }
    }
    res.push(PropertyResult::new(
        S,
        "eigenvalue deviation / ε",
        eig_cont,
        100.0,
    ));

    let mut cramer = 0.0f64;
    let mut cramer_res = 0.0f64;
    let mut limit = 0.0f64;
    for _ in 0..N {
        let b = loop {
            // condition 1e6 with two small singular values can fall below eps_det
            let b = random_matrix(&mut rng, 1e6);
            if b.det().abs() >= eps_det(&b) {
                break b;
            }
        };
        let rhs = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let x = cramer_solve(&b, rhs).expect("nonsingular");
        let y = eliminate(&b, rhs);
        cramer = cramer.max(norm2(vsub(x, y)) / norm2(y));
        let r = vsub(b.mul_vec(x), rhs);
        cramer_res = cramer_res.max(norm2(r) / (mat_norm(&b) * norm2(x) + norm2(rhs)));

        // C_m B → 0 forces C_m → 0 at the rate of the cofactor bound
        let bw = random_matrix(&mut rng, 10.0);
        let binv = bw.inverse().expect("nonsingular");
        for m in 1..=4 {
            let c = random_entries(&mut rng) * 10f64.powi(-2 * m);
            let cb = c * bw;
            let recovered = cb * binv;
            let bound = 2.0 * mat_norm(&bw).powi(2) * mat_norm(&cb) / bw.det().abs() * 3.0;
            limit = limit.max(mat_norm(&recovered) / bound);
        }
    }
    res.push(PropertyResult::new(
        S,
        "cramer_solve vs elimination (cond ≤ 1e6)",
        cramer,
        1e-10,
    ));
    res.push(PropertyResult::new(
        S,
        "cramer_solve backward residual",
        cramer_res,
        1e-10,
    ));
    res.push(PropertyResult::new(
        S,
        "matrix limit ‖C‖ / cofactor bound",
        limit,
        1.0,
    ));
    res
}

/// Band-limited field on the unit cube with peak speed `sup`.
pub fn smooth_test_field(
    n: usize,
    modes: usize,
    nt: usize,
    sup: f64,
    seed: u64,
) -> Result<VelocityField> {
    let grid = GridSpec::new([n; 3], [1.0 / (n - 1) as f64; 3])?.with_time(1.0, nt)?;
    let basis = FourierBasis::new(grid, modes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..basis.n_coeffs())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let v = basis.synthesize(&c)?;
    let peak = v.max_norm();
    Ok(v.scaled(sup / peak))
}

fn flow_suite(seed: u64) -> Result<Vec<PropertyResult>> {
    const S: &str = "flow";
    let mut res = Vec::new();
    let v = smooth_test_field(12, 2, 3, 0.05, seed)?;
    let g = *v.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);

    let zero = VelocityField::zeros(g)?;
    let fz = flow_map(&zero, 0.0, 1.0, 4)?;
    let mut zero_err = 0.0f64;
    for i in 0..g.n_voxels() {
        zero_err = zero_err
            .max(norm2(vsub(fz.endpoints[i], g.position(i))))
            .max(mat_norm(&(fz.jacobians[i] - Mat3::identity())));
    }
    res.push(PropertyResult::new(
        S,
        "zero velocity gives identity",
        zero_err,
        1e-14,
    ));

    let fr = flow_map(&v, 0.0, 1.0, 32)?;
    let rep = det_identity_report(&fr);
    res.push(PropertyResult::new(
        S,
        "det identity max relative error (32 steps)",
        rep.max_rel_error,
        1e-3,
    ));
    res.push(PropertyResult::new(
        S,
        "min det Θ > 0 (reported as −min det)",
        -fr.min_det(),
        0.0,
    ));

    let mut twin = 0.0f64;
    let mut picard_iters = 0usize;
    let mut semigroup = 0.0f64;
    for _ in 0..50 {
        let x: Vec3 = [0; 3].map(|_| rng.gen_range(0.0..=1.0));
        let (t0, t1) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let rk = integrate_trajectory(&v, t0, x, t1, 64)?.endpoint();
        let p = picard_trajectory(&v, t0, x, t1, 1e-8, 50)?;
        twin = twin.max(norm2(vsub(p.trajectory.endpoint(), rk)));
        picard_iters = picard_iters.max(p.iterations);
        let s = rng.gen_range(0.0..=1.0);
        let mid = integrate_trajectory(&v, t0, x, s, 64)?.endpoint();
        let two_leg = integrate_trajectory(&v, s, mid, t1, 64)?.endpoint();
        semigroup = semigroup.max(norm2(vsub(two_leg, rk)));
    }
    res.push(PropertyResult::new(
        S,
        "picard vs RK4 endpoint distance",
        twin,
        1e-5,
    ));
    res.push(PropertyResult::new(
        S,
        "picard iterations",
        picard_iters as f64,
        20.0,
    ));
    res.push(PropertyResult::new(S, "semigroup defect", semigroup, 1e-5));

    let mut sorted = inverse_consistency(&v, &fr, 32)?;
    sorted.sort_by(f64::total_cmp);
    let p99 = sorted[(0.99 * (sorted.len() - 1) as f64).round() as usize];
    res.push(PropertyResult::new(
        S,
        "inverse consistency 99th percentile (voxels)",
        p99,
        1e-2,
    ));
    Ok(res)
}
