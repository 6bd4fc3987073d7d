//! Monte-Carlo and brute-force oracles for the sync and alignment routines.

use multialign::simulate::{gen_ground_truth, gen_shapes, random_orthogonal, trial_rng};
use multialign::sync::extract_null_basis;
use multialign::{
    add_gaussian_noise, append_homogeneous_row, apply, build_z, gpa_reference, gpa_sync,
    project_orthogonal, reconstruct_pairwise, shape_error, solve_aop, synchronise,
    transform_error, Kind, PointCloud, ScaleMode, Transform, TransformClass,
};
use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn z_tilde(set: &multialign::PairwiseTransformSet) -> DMatrix<f64> {
    let z = build_z(set).unwrap();
    if set.kind() == Kind::Homogeneous {
        append_homogeneous_row(&z, set.k(), set.dim()).unwrap()
    } else {
        z
    }
}

#[test]
fn stacked_absolutes_are_eigenvectors_of_w() {
    let mut rng = trial_rng(21, &[]);
    for class in [TransformClass::Linear, TransformClass::Similarity] {
        let (k, d) = (7, 3);
        let truth = gen_ground_truth(k, d, class, &mut rng).unwrap();
        let z = build_z(&truth.pairwise).unwrap();
        let b = truth.pairwise.kind().size(d);
        let w = &z + DMatrix::identity(k * b, k * b) * k as f64;
        let mut u = DMatrix::zeros(k * b, b);
        for (i, t) in truth.absolute.iter().enumerate() {
            u.view_mut((i * b, 0), (b, b)).copy_from(t.matrix());
        }
        let lhs = &w * &u;
        assert!((&lhs - &u * k as f64).norm() < 1e-8 * lhs.norm());
    }
}

#[test]
fn clean_round_trip_for_every_class() {
    let mut rng = trial_rng(22, &[]);
    for class in TransformClass::ALL {
        let truth = gen_ground_truth(10, 4, class, &mut rng).unwrap();
        let res = synchronise(&truth.pairwise, class, ScaleMode::Geometric).unwrap();
        let rec = reconstruct_pairwise(&res).unwrap();
        assert!(transform_error(&rec, &truth.pairwise).unwrap() < 1e-8, "{class}");
        if class == TransformClass::Rigid {
            for t in &res.absolute {
                assert!((t.linear_block().determinant() - 1.0).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn sync_denoises_in_expectation() {
    for (ci, class) in TransformClass::ALL.into_iter().enumerate() {
        let (mut noisy_sum, mut synced_sum) = (0.0, 0.0);
        for trial in 0..100u64 {
            let mut rng = trial_rng(23, &[ci as u64, trial]);
            let truth = gen_ground_truth(30, 3, class, &mut rng).unwrap();
            let noisy = add_gaussian_noise(&truth.pairwise, 0.1, &mut rng).unwrap();
            let synced =
                reconstruct_pairwise(&synchronise(&noisy, class, ScaleMode::Geometric).unwrap()).unwrap();
            noisy_sum += transform_error(&noisy, &truth.pairwise).unwrap();
            synced_sum += transform_error(&synced, &truth.pairwise).unwrap();
        }
        assert!(synced_sum < noisy_sum, "{class}: {synced_sum} vs {noisy_sum}");
    }
}

/// Random orthonormal `n × d` frame.
fn random_frame(n: usize, d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    normal(n, d, rng).qr().q()
}

fn frame_search(z: &DMatrix<f64>, d: usize, samples: usize, rng: &mut impl Rng) -> f64 {
    (0..samples)
        .map(|_| (z * random_frame(z.ncols(), d, rng)).norm())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn null_basis_beats_random_frames_on_6x6() {
    let mut rng = trial_rng(24, &[]);
    let truth = gen_ground_truth(3, 2, TransformClass::Linear, &mut rng).unwrap();
    let noisy = add_gaussian_noise(&truth.pairwise, 0.1, &mut rng).unwrap();
    let z = z_tilde(&noisy);
    assert_eq!(z.shape(), (6, 6));
    let basis = extract_null_basis(&z, 2).unwrap();
    let ours = (&z * &basis.basis).norm();
    let searched = frame_search(&z, 2, 200_000, &mut rng);
    assert!(ours <= searched * (1.0 + 1e-12), "{ours} vs {searched}");
    let gram = basis.basis.transpose() * &basis.basis;
    assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-12);
}

#[test]
fn two_frame_consensus_is_minimal() {
    let mut rng = trial_rng(25, &[]);
    for class in [TransformClass::Linear, TransformClass::Affine] {
        let truth = gen_ground_truth(2, 2, class, &mut rng).unwrap();
        let noisy = add_gaussian_noise(&truth.pairwise, 0.2, &mut rng).unwrap();
        let z = z_tilde(&noisy);
        let basis = extract_null_basis(&z, 2).unwrap();
        let ours = (&z * &basis.basis).norm();
        let searched = frame_search(&z, 2, 200_000, &mut rng);
        assert!(ours <= searched * (1.0 + 1e-12), "{class}: {ours} vs {searched}");
        let rec = reconstruct_pairwise(&synchronise(&noisy, class, ScaleMode::Geometric).unwrap()).unwrap();
        assert!(multialign::consistency_residual(&rec).unwrap() < 1e-9);
    }
}

#[test]
fn orthogonal_projection_is_nearest() {
    let mut rng = trial_rng(26, &[]);
    for _ in 0..5 {
        let a = normal(3, 3, &mut rng);
        let q = project_orthogonal(&a).unwrap();
        let ours = (&q - &a).norm();
        for _ in 0..10_000 {
            let other = random_orthogonal(3, &mut rng).unwrap();
            assert!(ours <= (&other - &a).norm() + 1e-12);
        }
    }
}

fn residual(x: &PointCloud, y: &PointCloud, t: &Transform) -> f64 {
    (apply(t, x).unwrap().points() - y.points()).norm_squared()
}

#[test]
fn rigid_aop_beats_random_rigid_transforms() {
    let mut rng = trial_rng(27, &[]);
    for _ in 0..3 {
        let n = 12;
        let x = PointCloud::full(normal(n, 3, &mut rng)).unwrap();
        let y = PointCloud::full(normal(n, 3, &mut rng) + x.points() * 0.5).unwrap();
        let ours = residual(&x, &y, &solve_aop(&x, &y, TransformClass::Rigid).unwrap());
        for _ in 0..10_000 {
            let mut r = random_orthogonal(3, &mut rng).unwrap();
            if r.determinant() < 0.0 {
                r.row_mut(0).neg_mut();
            }
            let t = RowDVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let cand = Transform::homogeneous(&r, &t).unwrap();
            assert!(ours <= residual(&x, &y, &cand) + 1e-12);
        }
    }
}

#[test]
fn apply_round_trip() {
    let mut rng = trial_rng(28, &[]);
    let x = PointCloud::new(normal(20, 3, &mut rng), (0..20).map(|i| i % 3 != 0).collect()).unwrap();
    let t = Transform::homogeneous(&normal(3, 3, &mut rng), &RowDVector::from_fn(3, |_, _| 1.5)).unwrap();
    let back = apply(&t.invert().unwrap(), &apply(&t, &x).unwrap()).unwrap();
    for r in 0..20 {
        if x.is_present(r) {
            assert!((back.points().row(r) - x.points().row(r)).norm() < 1e-10);
        }
    }
    assert_eq!(back.present(), x.present());
}

#[test]
fn sync_matches_reference_on_exact_copies() {
    let mut rng = trial_rng(29, &[]);
    let base = gen_shapes(1, 30, 2, 0.0, 0.0, &mut rng).unwrap().remove(0);
    let truth = gen_ground_truth(6, 2, TransformClass::Similarity, &mut rng).unwrap();
    let shapes: Vec<PointCloud> = truth.absolute.iter().map(|t| apply(t, &base).unwrap()).collect();
    let reference = gpa_reference(&shapes, 0, TransformClass::Similarity).unwrap();
    let sync = gpa_sync(&shapes, TransformClass::Similarity).unwrap();
    let (re, se) = (reference.error.unwrap(), sync.error.unwrap());
    assert!(se < 1e-6);
    assert!((re - se).abs() < 1e-8);
    for (a, b) in reference.aligned.iter().zip(&sync.aligned) {
        assert!((a.points() - b.points()).norm() < 1e-8);
    }
}

#[test]
fn shape_error_is_a_pseudometric() {
    let mut rng = trial_rng(30, &[]);
    let shapes = gen_shapes(5, 10, 2, 2.0, 0.01, &mut rng).unwrap();
    let e = shape_error(&shapes).unwrap();
    assert!(e > 0.0);
    let mut relabelled = shapes.clone();
    relabelled.reverse();
    relabelled.swap(0, 2);
    assert!((shape_error(&relabelled).unwrap() - e).abs() < 1e-14);
    let same = vec![shapes[0].clone(); 4];
    assert_eq!(shape_error(&same).unwrap(), 0.0);
}
