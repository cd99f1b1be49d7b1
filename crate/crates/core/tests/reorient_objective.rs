use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtreg_core::fields::{f_norm_sq, GridSpec, TensorImage, VelocityField};
use dtreg_core::flow::{build_h_and_inverse, FlowResult};
use dtreg_core::objective::{
    evaluate, fd_gradient, grad_check, gram_matrix, max_relative_gap, minimize, BasisSpec,
    ObjectiveConfig, Problem, Status,
};
use dtreg_core::phantom::{phantom, PhantomKind, PhantomParams};
use dtreg_core::reorient::{fs_transform, pullback, ssd, ssd_images};
use dtreg_core::spd3::{mat_norm, sym_eig, Mat3, Spd3};
use dtreg_core::verify::{random_rotation, random_spd};
use dtreg_core::Error;

fn grid(n: usize) -> GridSpec {
    GridSpec::new([n; 3], [1.0; 3]).unwrap()
}

fn random_image(g: GridSpec, seed: u64) -> TensorImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voxels = (0..g.n_voxels())
        .map(|_| random_spd(&mut rng, 50.0))
        .collect();
    TensorImage::new(g, voxels).unwrap()
}

// All nine entries of the full matrices.
fn ssd_oracle(a: &TensorImage, b: &TensorImage) -> f64 {
    let s: f64 = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .map(|(p, q)| {
            (p.to_mat3() - q.to_mat3())
                .0
                .iter()
                .flatten()
                .map(|x| x * x)
                .sum::<f64>()
        })
        .sum();
    s * a.grid().cell_volume()
}

fn shifted(g: GridSpec, by: [f64; 3]) -> FlowResult {
    let mut h = FlowResult::identity(g);
    for (idx, e) in h.endpoints.iter_mut().enumerate() {
        let p = g.position(idx);
        *e = [0, 1, 2].map(|k| p[k] + by[k]);
    }
    h
}

#[test]
fn identity_deformation_returns_the_image_bitwise() {
    let g = grid(6);
    let t = random_image(g, 1);
    let id = FlowResult::identity(g);
    assert_eq!(pullback(&t, &id).unwrap(), t);
    let out = fs_transform(&t, &id, &id.jacobians).unwrap();
    assert_eq!(out.image, t);
    assert_eq!(ssd(&out, &t).unwrap(), 0.0);
}

#[test]
fn one_voxel_shift_moves_interior_values() {
    let g = grid(7);
    let t = random_image(g, 2);
    let h = shifted(g, [1.0, 0.0, 0.0]);
    let moved = fs_transform(&t, &h, &h.jacobians).unwrap().image;
    for i in 0..6 {
        for j in 0..7 {
            for k in 0..7 {
                assert_eq!(moved.get(i, j, k), t.get(i + 1, j, k));
            }
        }
    }
}

#[test]
fn constant_image_survives_any_pullback() {
    let g = grid(6);
    let p = Spd3::new(2.0, 0.3, -0.1, 1.5, 0.2, 1.0).unwrap();
    let t = TensorImage::constant(g, p).unwrap();
    let h = shifted(g, [0.37, -1.9, 2.4]);
    for v in pullback(&t, &h).unwrap().voxels() {
        assert!(mat_norm(&(v.to_mat3() - p.to_mat3())) <= 1e-14);
    }
}

#[test]
fn global_rotation_conjugates_by_the_transpose() {
    // h(x) = Qᵀx, so h⁻¹(y) = Qy, J = Q and R = Qᵀ
    let g = grid(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let q = random_rotation(&mut rng);
        let p = random_spd(&mut rng, 20.0);
        let t = TensorImage::constant(g, p).unwrap();
        let mut h = FlowResult::identity(g);
        for (idx, e) in h.endpoints.iter_mut().enumerate() {
            *e = q.transpose().mul_vec(g.position(idx));
        }
        let jac = vec![q; g.n_voxels()];
        let out = fs_transform(&t, &h, &jac).unwrap();
        let want = q.transpose() * p.to_mat3() * q;
        for v in out.voxels() {
            assert!(mat_norm(&(v.to_mat3() - want)) <= 1e-12 * mat_norm(&want));
        }
    }
}

#[test]
fn reorientation_keeps_eigenvalues() {
    let g = grid(8);
    let t = random_image(g, 4);
    let v = dtreg_core::verify::smooth_test_field(8, 2, 2, 0.8, 4).unwrap();
    let v = VelocityField::from_samples(g, v.samples().to_vec()).unwrap();
    let pair = build_h_and_inverse(&v, 4).unwrap();
    let pulled = pullback(&t, &pair.h).unwrap();
    let out = fs_transform(&t, &pair.h, pair.jacobian_field()).unwrap();
    for (a, b) in pulled.voxels().iter().zip(out.voxels()) {
        let (ea, eb) = (a.eig().values, sym_eig(&b.to_mat3()).unwrap().values);
        for k in 0..3 {
            assert!((ea[k] - eb[k]).abs() <= 1e-9 * ea[0]);
        }
        assert!(b.sylvester_positive());
    }
}

#[test]
fn ssd_matches_the_nine_entry_sum() {
    for seed in 0..5 {
        let g = GridSpec::new([5, 6, 7], [0.5, 1.0, 2.0]).unwrap();
        let (a, b) = (random_image(g, seed), random_image(g, seed + 100));
        let got = ssd_images(&a, &b).unwrap();
        let want = ssd_oracle(&a, &b);
        assert!((got - want).abs() <= 1e-12 * want);
        assert_eq!(got, ssd_images(&b, &a).unwrap());
        assert_eq!(ssd_images(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn ssd_single_voxel_difference() {
    let g = grid(4);
    let a = TensorImage::constant(g, Spd3::IDENTITY).unwrap();
    let mut voxels = a.voxels().to_vec();
    voxels[g.index(1, 2, 3)] = Spd3::diag(2.0, 1.0, 1.0).unwrap();
    let b = TensorImage::new(g, voxels).unwrap();
    assert_eq!(ssd_images(&a, &b).unwrap(), 1.0);
}

#[test]
fn grid_mismatch_is_reported() {
    let (a, b) = (random_image(grid(5), 1), random_image(grid(6), 1));
    assert!(matches!(ssd_images(&a, &b), Err(Error::GridMismatch)));
    let h = FlowResult::identity(grid(6));
    assert!(matches!(pullback(&a, &h), Err(Error::GridMismatch)));
}

fn small_cfg() -> ObjectiveConfig {
    ObjectiveConfig {
        coeff_basis: BasisSpec {
            modes: 2,
            nt: 2,
            tau: 1.0,
        },
        max_iter: 4,
        ..ObjectiveConfig::default()
    }
}

#[test]
fn total_recomposes_from_components() {
    let g = grid(10);
    let t = phantom(PhantomKind::TwoCompartment, g, &PhantomParams::default()).unwrap();
    let d = phantom(PhantomKind::FiberBundle, g, &PhantomParams::default()).unwrap();
    let cfg = small_cfg();
    let p = Problem::new(&t, &d, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let c: Vec<f64> = (0..p.n_coeffs())
            .map(|_| rng.gen_range(-0.3..0.3))
            .collect();
        let v = p.velocity(&c).unwrap();
        let e = evaluate(&v, &t, &d, &cfg).unwrap();
        let pair = build_h_and_inverse(&v, cfg.nsteps_flow).unwrap();
        let data = ssd_oracle(
            &fs_transform(&t, &pair.h, pair.jacobian_field())
                .unwrap()
                .image,
            &d,
        );
        let want = f_norm_sq(&v) + data;
        assert!((e.total - want).abs() <= 1e-12 * want);
        assert_eq!(e.total, e.reg + e.data);
        assert!((p.total(&c).unwrap() - e.total).abs() <= 1e-12 * e.total);
    }
}

#[test]
fn quadratic_gradient_matches_the_gram_matrix() {
    // isotropic constant images make the data term vanish for every flow
    let g = grid(8);
    let t = TensorImage::constant(g, Spd3::IDENTITY * 0.7).unwrap();
    let cfg = small_cfg();
    let p = Problem::new(&t, &t, cfg).unwrap();
    let gram = gram_matrix(&p.basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let c: Vec<f64> = (0..p.n_coeffs())
        .map(|_| rng.gen_range(-0.1..0.1))
        .collect();
    let exact: Vec<f64> = gram
        .iter()
        .map(|row| 2.0 * row.iter().zip(&c).map(|(g, x)| g * x).sum::<f64>())
        .collect();
    let fd = p.gradient(&c, cfg.grad_eps).unwrap();
    assert!(max_relative_gap(&exact, &fd) <= 1e-6);
    let quad: f64 = c
        .iter()
        .zip(&gram)
        .map(|(ci, row)| ci * row.iter().zip(&c).map(|(g, x)| g * x).sum::<f64>())
        .sum();
    assert!((p.regularizer(&c) - quad).abs() <= 1e-10 * quad);
    assert!(grad_check(&p, &c).unwrap() <= 1e-6);
}

#[test]
fn central_differences_are_second_order() {
    let f = |c: &[f64]| Ok(c[0].sin() * c[1].exp() + c[2].powi(3));
    let c = [0.4f64, -0.3, 0.7];
    let exact = [
        c[0].cos() * c[1].exp(),
        c[0].sin() * c[1].exp(),
        3.0 * c[2] * c[2],
    ];
    let gap = |eps: f64| max_relative_gap(&exact, &fd_gradient(f, &c, eps).unwrap());
    let ratio = gap(1e-2) / gap(5e-3);
    assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
}

#[test]
fn identical_images_converge_at_zero() {
    let g = grid(8);
    let t = phantom(PhantomKind::TwoCompartment, g, &PhantomParams::default()).unwrap();
    let (v, rep) = minimize(&t, &t, &small_cfg()).unwrap();
    assert_eq!(rep.status, Status::Converged);
    assert!(rep.total <= 1e-10);
    assert!(f_norm_sq(&v) <= rep.stop_tol.max(1e-10));
}

#[test]
fn descent_trace_is_monotone_and_flows_stay_invertible() {
    let g = grid(10);
    let t = phantom(PhantomKind::TwoCompartment, g, &PhantomParams::default()).unwrap();
    let h = shifted(g, [0.6, -0.4, 0.3]);
    let d = fs_transform(&t, &h, &h.jacobians).unwrap().image;
    let (_, rep) = minimize(&t, &d, &small_cfg()).unwrap();
    assert!(rep.total < rep.initial_total);
    assert!(rep.trace.windows(2).all(|w| w[1].total <= w[0].total));
    assert!(rep.trace.iter().all(|e| e.min_det > 0.0));
    assert_eq!(rep.total, rep.reg + rep.data);
    let probe = rep.displacement_probe.unwrap();
    assert!(probe.lipschitz.is_finite() && probe.holder_half.is_finite());
}

#[test]
fn rotation_is_not_touched_when_jacobian_is_identity() {
    let g = grid(5);
    let t = random_image(g, 11);
    let h = shifted(g, [0.25, 0.5, 0.0]);
    let a = fs_transform(&t, &h, &vec![Mat3::identity(); g.n_voxels()])
        .unwrap()
        .image;
    assert_eq!(a, pullback(&t, &h).unwrap());
}
