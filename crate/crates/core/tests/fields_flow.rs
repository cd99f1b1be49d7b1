#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use dtreg_core::fields::{
    apply_l, f_norm_sq, lipschitz_probe, lipschitz_probe_in, sample_velocity, GridSpec,
    VelocityField, THIRD_ORDER_MULTI_INDICES,
};
use dtreg_core::flow::{build_h_and_inverse, flow_map, integrate_trajectory, picard_trajectory};
use dtreg_core::spd3::{mat_norm, norm2, vsub, Mat3, Vec3};
use dtreg_core::verify::smooth_test_field;
use dtreg_core::Error;

fn unit_grid(n: usize) -> GridSpec {
    GridSpec::new([n; 3], [1.0 / (n - 1) as f64; 3]).unwrap()
}

// Truncated Taylor series; fine for the small norms used here.
fn expm(a: &Mat3) -> Mat3 {
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for k in 1..40 {
        term = term * *a * (1.0 / k as f64);
        sum += term;
    }
    sum
}

fn linear_field(grid: GridSpec, a: Mat3, c: Vec3) -> VelocityField {
    VelocityField::from_fn(grid, |x, _| a.mul_vec(vsub(x, c))).unwrap()
}

#[test]
fn sampling_reproduces_nodes_and_vanishes_outside() {
    let v = smooth_test_field(8, 2, 3, 0.1, 1).unwrap();
    let g = *v.grid();
    for ti in 0..g.nt {
        let t = g.time_of(ti);
        for idx in (0..g.n_voxels()).step_by(7) {
            assert_eq!(
                sample_velocity(&v, g.position(idx), t).unwrap(),
                v.slice(ti)[idx]
            );
        }
    }
    for x in [[-0.01, 0.5, 0.5], [0.5, 1.2, 0.5], [0.5, 0.5, -3.0]] {
        assert_eq!(sample_velocity(&v, x, 0.3).unwrap(), [0.0; 3]);
    }
    assert!(matches!(
        sample_velocity(&v, [0.5; 3], 1.5),
        Err(Error::TimeOutOfRange { .. })
    ));
}

#[test]
fn midpoint_sample_is_the_average() {
    let v = smooth_test_field(8, 2, 2, 0.1, 2).unwrap();
    let g = *v.grid();
    let (a, b) = (g.index(3, 4, 2), g.index(4, 4, 2));
    let mid = [0, 1, 2].map(|c| 0.5 * (g.position(a)[c] + g.position(b)[c]));
    let want = [0, 1, 2].map(|c| 0.5 * (v.slice(0)[a][c] + v.slice(0)[b][c]));
    let got = sample_velocity(&v, mid, 0.0).unwrap();
    assert!(norm2(vsub(got, want)) < 1e-16);
}

#[test]
fn interpolation_stays_within_node_range() {
    let v = smooth_test_field(6, 2, 2, 1.0, 3).unwrap();
    let g = *v.grid();
    let h = g.spacing[0];
    for k in 0..500 {
        let x = [
            0.137 * k as f64 % 1.0,
            0.291 * k as f64 % 1.0,
            0.713 * k as f64 % 1.0,
        ];
        let s = sample_velocity(&v, x, 0.0).unwrap();
        let base = x.map(|u| ((u / h).floor() as usize).min(g.dims[0] - 2));
        for c in 0..3 {
            let corners: Vec<f64> = (0..8)
                .map(|m| {
                    let i = base[0] + (m & 1);
                    let j = base[1] + ((m >> 1) & 1);
                    let l = base[2] + ((m >> 2) & 1);
                    v.slice(0)[g.index(i, j, l)][c]
                })
                .collect();
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(s[c] >= lo - 1e-15 && s[c] <= hi + 1e-15);
        }
    }
}

#[test]
fn third_derivative_of_a_sine() {
    let errs: Vec<f64> = [41usize, 81]
        .iter()
        .map(|&n| {
            let h = 1.0 / (n - 1) as f64;
            let g = GridSpec::new([n, 6, 6], [h, 1.0, 1.0]).unwrap();
            let v = VelocityField::from_fn(g, |x, _| [(2.0 * PI * x[0]).sin(), 0.0, 0.0]).unwrap();
            let jet = apply_l(&v, 0).unwrap();
            let mut worst = 0.0f64;
            for idx in 0..g.n_voxels() {
                let [i, j, k] = g.coords(idx);
                if j == 0 || j == 5 || k == 0 || k == 5 {
                    continue;
                }
                let exact = -(2.0 * PI).powi(3) * (2.0 * PI * i as f64 * h).cos();
                worst = worst.max((jet.values[idx][0][0] - exact).abs());
            }
            worst / (2.0 * PI).powi(3)
        })
        .collect();
    assert!(errs[0] < 0.05, "{errs:?}");
    // second order: halving h cuts the error about four times
    assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
}

#[test]
fn third_differences_vanish_on_quadratics() {
    let g = unit_grid(9);
    let v = VelocityField::from_fn(g, |x, _| {
        [
            x[0] * x[1] + 2.0 * x[2] * x[2],
            x[0] * x[0] - x[1] * x[2],
            3.0 * x[1] * x[1],
        ]
    })
    .unwrap();
    let jet = apply_l(&v, 0).unwrap();
    for idx in 0..g.n_voxels() {
        if g.coords(idx).iter().all(|&c| (3..=5).contains(&c)) {
            assert!(jet.values[idx].iter().flatten().all(|d| d.abs() < 1e-8));
        }
    }
}

#[test]
fn apply_l_is_linear() {
    let u = smooth_test_field(8, 2, 2, 0.3, 4).unwrap();
    let w = smooth_test_field(8, 2, 2, 0.7, 5).unwrap();
    let combo = u.scaled(2.0).axpy(-0.5, &w).unwrap();
    let (ju, jw, jc) = (
        apply_l(&u, 1).unwrap(),
        apply_l(&w, 1).unwrap(),
        apply_l(&combo, 1).unwrap(),
    );
    for idx in 0..ju.values.len() {
        for c in 0..3 {
            for m in 0..10 {
                let want = 2.0 * ju.values[idx][c][m] - 0.5 * jw.values[idx][c][m];
                assert!((jc.values[idx][c][m] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            }
        }
    }
}

#[test]
fn norm_of_a_single_sine_mode() {
    // v₀ = sin πx sin πy sin πz; each of the ten third derivatives squares to π⁶/8 on average
    let g = unit_grid(32);
    let v = VelocityField::from_fn(g, |x, _| {
        [
            (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin(),
            0.0,
            0.0,
        ]
    })
    .unwrap();
    let exact = THIRD_ORDER_MULTI_INDICES.len() as f64 * PI.powi(6) / 8.0;
    let got = f_norm_sq(&v);
    assert!((got - exact).abs() / exact <= 0.05, "{got} vs {exact}");
    assert_eq!(f_norm_sq(&VelocityField::zeros(g).unwrap()), 0.0);
    let scaled = f_norm_sq(&v.scaled(3.0));
    assert!((scaled - 9.0 * got).abs() <= 1e-12 * scaled);
}

#[test]
fn zero_norm_forces_zero_field() {
    for seed in 0..5 {
        let v = smooth_test_field(8, 2, 2, 1e-9, seed).unwrap();
        assert!(f_norm_sq(&v) > 0.0);
        let z = v.scaled(0.0);
        assert_eq!(f_norm_sq(&z), 0.0);
        assert!(z.max_norm() <= 1e-10);
    }
}

#[test]
fn lipschitz_probe_on_linear_patch() {
    let g = unit_grid(21);
    let a = Mat3([[0.2, 0.1, 0.0], [-0.1, 0.05, 0.0], [0.0, 0.0, -0.15]]);
    let v = linear_field(g, a, [0.5; 3]);
    let est = lipschitz_probe_in(&v, 0, 4000, 7, [0.2; 3], [0.8; 3]).unwrap();
    let sigma = dtreg_core::spd3::svd3(&a).s[0];
    assert!(est.lipschitz <= sigma * (1.0 + 1e-9));
    assert!(est.lipschitz >= 0.9 * sigma);
    assert!(est.holder_half < 1e-9);

    let zero = lipschitz_probe(&VelocityField::zeros(g).unwrap(), 0, 100, 1).unwrap();
    assert_eq!((zero.lipschitz, zero.holder_half), (0.0, 0.0));
}

#[test]
fn lipschitz_probe_is_stable_under_resampling() {
    let v = smooth_test_field(12, 2, 2, 0.05, 8).unwrap();
    let a = lipschitz_probe(&v, 1, 4000, 1).unwrap();
    let b = lipschitz_probe(&v, 1, 8000, 2).unwrap();
    assert!((a.lipschitz - b.lipschitz).abs() <= 0.1 * b.lipschitz);
    assert!(a.lipschitz.is_finite() && a.holder_half.is_finite());
}

#[test]
fn zero_velocity_flow_is_identity() {
    let g = unit_grid(6);
    let v = VelocityField::zeros(g).unwrap();
    let x = [0.2, 0.3, 0.9];
    assert_eq!(
        integrate_trajectory(&v, 0.0, x, 1.0, 8).unwrap().endpoint(),
        x
    );
    let p = picard_trajectory(&v, 0.0, x, 1.0, 1e-10, 10).unwrap();
    assert_eq!(p.iterations, 1);
    let fr = flow_map(&v, 0.0, 1.0, 4).unwrap();
    assert!(fr.det_theta.iter().chain(&fr.exp_div).all(|&d| d == 1.0));
}

#[test]
fn constant_patch_translates() {
    // unit plateau on [5, 15]³, ramping to zero over four voxels
    let g = GridSpec::new([21; 3], [1.0; 3]).unwrap();
    let c = [0.5, -0.25, 0.125];
    let ramp = |u: f64| {
        ((u - 1.0) / 4.0)
            .clamp(0.0, 1.0)
            .min(((19.0 - u) / 4.0).clamp(0.0, 1.0))
    };
    let v = VelocityField::from_fn(g, |x, _| {
        let w = ramp(x[0]) * ramp(x[1]) * ramp(x[2]);
        c.map(|ci| w * ci)
    })
    .unwrap();
    let x = [10.0, 9.0, 11.0];
    let tr = integrate_trajectory(&v, 0.25, x, 1.0, 16).unwrap();
    for (got, want) in tr.endpoint().iter().zip([10.375, 8.8125, 11.09375]) {
        assert!((got - want).abs() < 1e-12);
    }

    let pair = build_h_and_inverse(&v, 8).unwrap();
    let idx = g.index(10, 10, 10);
    let p = g.position(idx);
    let shift = integrate_trajectory(&v, 0.0, p, 1.0, 8).unwrap().endpoint();
    for k in 0..3 {
        assert!((pair.h_inv.endpoints[idx][k] - shift[k]).abs() < 1e-12);
        assert!((pair.h_inv.endpoints[idx][k] - (p[k] + c[k])).abs() < 1e-12);
        assert!((pair.h.endpoints[idx][k] - (p[k] - c[k])).abs() < 1e-12);
    }
    assert!(mat_norm(&(pair.h.jacobians[idx] - Mat3::identity())) < 1e-12);
}

#[test]
fn linear_field_matches_matrix_exponential() {
    let g = unit_grid(21);
    let a = Mat3([[0.3, -0.2, 0.1], [0.25, -0.1, 0.0], [0.05, 0.15, 0.2]]);
    let c = [0.5; 3];
    let v = linear_field(g, a, c);
    let e = expm(&a);
    let x = [0.55, 0.45, 0.5];
    let got = integrate_trajectory(&v, 0.0, x, 1.0, 64)
        .unwrap()
        .endpoint();
    let want = [0, 1, 2].map(|k| c[k] + e.mul_vec(vsub(x, c))[k]);
    assert!(norm2(vsub(got, want)) < 1e-6);

    let fr = flow_map(&v, 0.0, 1.0, 64).unwrap();
    let idx = g.index(10, 10, 10);
    assert!(mat_norm(&(fr.jacobians[idx] - e)) < 1e-6);
    let tr = 0.3 - 0.1 + 0.2;
    assert!((fr.det_theta[idx] - f64::exp(tr)).abs() < 1e-6);
    assert!((fr.exp_div[idx] - f64::exp(tr)).abs() < 1e-6);
}

#[test]
fn divergence_free_flow_preserves_volume() {
    // v = curl (0, 0, ψ) with ψ = sin²πx sin²πy sin πz
    let g = unit_grid(32);
    let v = VelocityField::from_fn(g, |x, _| {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let sz = (PI * x[2]).sin();
        [sx * sx * sy * cy * sz, -sx * cx * sy * sy * sz, 0.0]
    })
    .unwrap();
    let v = v.scaled(0.01 / v.max_norm());
    let fr = flow_map(&v, 0.0, 1.0, 32).unwrap();
    // boundary nodes see the zero extension in their half-voxel differences
    let worst = (0..g.n_voxels())
        .filter(|&i| !g.is_boundary(i))
        .map(|i| (fr.det_theta[i] - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn picard_agrees_with_rk4_on_small_fields() {
    let v = smooth_test_field(10, 2, 3, 0.02, 9).unwrap();
    for k in 0..20 {
        let x = [0.1 + 0.04 * k as f64, 0.5, 0.9 - 0.03 * k as f64];
        let rk = integrate_trajectory(&v, 0.0, x, 1.0, 64)
            .unwrap()
            .endpoint();
        let p = picard_trajectory(&v, 0.0, x, 1.0, 1e-9, 30).unwrap();
        assert!(norm2(vsub(p.trajectory.endpoint(), rk)) <= 1e-5);
    }
}

#[test]
fn flow_rejects_times_outside_the_horizon() {
    let v = smooth_test_field(6, 1, 2, 0.1, 1).unwrap();
    assert!(matches!(
        flow_map(&v, 0.0, 1.5, 4),
        Err(Error::TimeOutOfRange { .. })
    ));
}
