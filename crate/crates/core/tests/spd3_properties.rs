use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtreg_core::spd3::{
    cramer_solve, det3, inv_sqrt_sym, mat_norm, norm2, polar_rotation, svd3, sym_eig, vsub, Mat3,
    Spd3,
};
use dtreg_core::verify::{random_matrix, random_rotation, random_spd};
use dtreg_core::Error;

fn entry() -> impl Strategy<Value = f64> {
    -10.0f64..10.0
}

fn matrix() -> impl Strategy<Value = Mat3> {
    prop::array::uniform3(prop::array::uniform3(entry())).prop_map(Mat3)
}

fn rotation_z(t: f64) -> Mat3 {
    Mat3([
        [t.cos(), -t.sin(), 0.0],
        [t.sin(), t.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ])
}

// Leibniz expansion over the six permutations.
fn det_leibniz(a: &Mat3) -> f64 {
    let perms = [
        ([0, 1, 2], 1.0),
        ([1, 2, 0], 1.0),
        ([2, 0, 1], 1.0),
        ([0, 2, 1], -1.0),
        ([2, 1, 0], -1.0),
        ([1, 0, 2], -1.0),
    ];
    perms
        .iter()
        .map(|(p, s)| s * a.0[0][p[0]] * a.0[1][p[1]] * a.0[2][p[2]])
        .sum()
}

fn close_mat(a: &Mat3, b: &Mat3, tol: f64) -> bool {
    mat_norm(&(*a - *b)) <= tol
}

#[test]
fn mat_norm_examples() {
    assert_eq!(mat_norm(&Mat3::identity()), 3.0);
    assert_eq!(mat_norm(&Mat3::zeros()), 0.0);
    assert_eq!(
        mat_norm(&Mat3([[1.0, -2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 3.0]])),
        6.0
    );
}

#[test]
fn det_examples() {
    assert_eq!(det3(&Mat3::identity()), 1.0);
    assert_eq!(det3(&Mat3::diag([2.0, 3.0, 4.0])), 24.0);
}

#[test]
fn eig_examples() {
    let e = sym_eig(&Mat3::diag([3.0, 2.0, 1.0])).unwrap();
    assert_eq!(e.values, [3.0, 2.0, 1.0]);
    for (i, v) in e.vectors.iter().enumerate() {
        assert!((v[i].abs() - 1.0).abs() < 1e-15);
    }
    assert_eq!(sym_eig(&Mat3::identity()).unwrap().values, [1.0; 3]);

    // (λ − 3)²(λ − 1)
    let a = Mat3([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]);
    let e = sym_eig(&a).unwrap();
    for (got, want) in e.values.iter().zip([3.0, 3.0, 1.0]) {
        assert!((got - want).abs() < 1e-14, "{:?}", e.values);
    }
    assert!(close_mat(&e.reconstruct(), &a, 1e-13));
}

#[test]
fn eig_rejects_asymmetric() {
    let a = Mat3([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    assert!(matches!(sym_eig(&a), Err(Error::NonSymmetric { .. })));
}

#[test]
fn svd_examples() {
    assert_eq!(svd3(&Mat3::identity()).s, [1.0; 3]);
    let s = svd3(&Mat3::diag([2.0, 1.0, 0.5])).s;
    for (got, want) in s.iter().zip([2.0, 1.0, 0.5]) {
        assert!((got - want).abs() < 1e-14);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let q = random_rotation(&mut rng);
        let d = svd3(&q);
        assert!(d.s.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(close_mat(&(d.u * d.v.transpose()), &q, 1e-12));
    }
}

#[test]
fn inv_sqrt_examples() {
    let i = inv_sqrt_sym(&Spd3::diag(1.0, 1.0, 1.0).unwrap()).unwrap();
    assert!(close_mat(&i.to_mat3(), &Mat3::identity(), 1e-15));
    let b = inv_sqrt_sym(&Spd3::diag(4.0, 9.0, 16.0).unwrap()).unwrap();
    assert!(close_mat(
        &b.to_mat3(),
        &Mat3::diag([0.5, 1.0 / 3.0, 0.25]),
        1e-15
    ));
}

#[test]
fn polar_examples() {
    assert!(close_mat(
        &polar_rotation(&Mat3::identity()).unwrap(),
        &Mat3::identity(),
        1e-15
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let q = random_rotation(&mut rng);
        assert!(close_mat(
            &polar_rotation(&q).unwrap(),
            &q.transpose(),
            1e-12
        ));
        assert!(close_mat(
            &polar_rotation(&(q * 7.5)).unwrap(),
            &q.transpose(),
            1e-12
        ));
    }
    let q = rotation_z(0.3);
    assert!(close_mat(
        &polar_rotation(&(q * 1e-3)).unwrap(),
        &q.transpose(),
        1e-12
    ));
}

#[test]
fn polar_rejects_singular() {
    let j = Mat3::diag([1.0, 1.0, 0.0]);
    assert!(matches!(
        polar_rotation(&j),
        Err(Error::NearSingular { .. })
    ));
}

#[test]
fn cramer_examples() {
    assert_eq!(
        cramer_solve(&Mat3::identity(), [0.3, -2.0, 7.0]).unwrap(),
        [0.3, -2.0, 7.0]
    );
    assert_eq!(
        cramer_solve(&Mat3::diag([2.0, 4.0, 5.0]), [2.0, 4.0, 5.0]).unwrap(),
        [1.0; 3]
    );
    assert!(matches!(
        cramer_solve(&Mat3::diag([1.0, 1.0, 0.0]), [1.0; 3]),
        Err(Error::NearSingular { .. })
    ));
}

#[test]
fn polar_continuity_along_a_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let theta = random_matrix(&mut rng, 1e3);
        let e = random_matrix(&mut rng, 10.0);
        let r = polar_rotation(&theta).unwrap();
        let gaps: Vec<f64> = (1..=8)
            .map(|k| mat_norm(&(polar_rotation(&(theta + e * 10f64.powi(-k))).unwrap() - r)))
            .collect();
        assert!(gaps.last().unwrap() < &1e-3, "{gaps:?}");
        // linear rate once the perturbation is small
        assert!(
            gaps[3..].windows(2).all(|w| w[1] <= w[0] * 0.2 + 1e-13),
            "{gaps:?}"
        );
    }
}

#[test]
fn eigenvalues_of_random_spd_are_positive_and_reconstruct() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let p = random_spd(&mut rng, 1e6);
        let e = p.eig();
        assert!(e.values[2] > 0.0);
        let scale = mat_norm(&p.to_mat3());
        assert!(mat_norm(&(e.reconstruct() - p.to_mat3())) <= 1e-12 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn submultiplicative(a in matrix(), b in matrix()) {
        let lhs = mat_norm(&(a * b));
        let rhs = mat_norm(&a) * mat_norm(&b);
        prop_assert!(lhs <= rhs * (1.0 + 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn norm_axioms(a in matrix(), b in matrix(), c in -5.0f64..5.0) {
        prop_assert!(mat_norm(&a) >= 0.0);
        prop_assert!(mat_norm(&(a + b)) <= (mat_norm(&a) + mat_norm(&b)) * (1.0 + 1e-15));
        prop_assert!((mat_norm(&(a * c)) - c.abs() * mat_norm(&a)).abs() <= 1e-13 * mat_norm(&a).max(1.0));
    }

    #[test]
    fn det_matches_leibniz(a in matrix()) {
        let scale = a.0.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max).powi(3).max(1e-300);
        prop_assert!((det3(&a) - det_leibniz(&a)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn cramer_residual_is_small(seed in 0u64..u64::MAX, b in prop::array::uniform3(-1.0f64..1.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 1e3);
        let x = cramer_solve(&m, b).unwrap();
        let r = norm2(vsub(m.mul_vec(x), b));
        prop_assert!(r <= 1e-12 * (mat_norm(&m) * norm2(x) + norm2(b)));
    }

    #[test]
    fn svd_reconstructs(a in matrix()) {
        let d = svd3(&a);
        prop_assert!(d.s[0] >= d.s[1] && d.s[1] >= d.s[2] && d.s[2] >= 0.0);
        prop_assert!(mat_norm(&(d.reconstruct() - a)) <= 1e-10 * mat_norm(&a).max(1e-300));
    }
}
