//! Library outputs checked against independent reference computations.

mod common;

use common::{brute_chamfer, quaternion_rotation, random_cloud};
use jointreg::completion::{init_latent, LATENT_DIM, LATENT_INIT_STD};
use jointreg::datagen::{add_noise, crop_indices, default_shape_bank, make_sdf_samples, sample_mesh, sample_shape, SDF_CLAMP};
use jointreg::eval::{best_fit_rigid, icp_register, IcpConfig};
use jointreg::geometry::io::parse_off;
use jointreg::geometry::{apply_transform, clipped_chamfer_points, dist_sq, rotation_from_angles, Point, PointSet, RigidTransform, SetTag};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rotation_agrees_with_quaternion_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let a = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let r = rotation_from_angles(&a).unwrap();
        let q = quaternion_rotation(a.x, a.y, a.z);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[(i, j)] - q[i][j]).abs() < 1e-12, "{a:?}");
            }
        }
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn chamfer_matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..80), rng.random_range(1..80));
        let a = random_cloud(n, 1.0, &mut rng);
        let b = random_cloud(m, 1.0, &mut rng);
        for sigma in [f64::INFINITY, 0.1, 0.01] {
            assert_eq!(clipped_chamfer_points(&a, &b, sigma).unwrap(), brute_chamfer(&a, &b, sigma));
        }
    }
}

/// Standard deviation of `clamp(X, -c, c)` for `X ~ N(0, s^2)` by Simpson integration.
fn clipped_gaussian_std(s: f64, c: f64) -> f64 {
    let density = |x: f64| (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let n = 20_000;
    let h = c / n as f64;
    let mut inner = 0.0;
    let mut mass = 0.0;
    for k in 0..=n {
        let x = k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        inner += w * x * x * density(x);
        mass += w * density(x);
    }
    inner *= h / 3.0;
    mass *= h / 3.0;
    // Both tails sit at +-c; each has mass 1/2 - mass.
    (2.0 * inner + 2.0 * (0.5 - mass) * c * c).sqrt()
}

#[test]
fn noise_std_matches_clipped_gaussian() {
    let n = 333_334;
    let ps = PointSet::new(vec![Point::zeros(); n], SetTag::Full, "zeros").unwrap();
    for (sigma, clip) in [(0.01, 0.05), (0.04, 0.05)] {
        let noisy = add_noise(&ps, sigma, clip, 9).unwrap();
        let comps: Vec<f64> = noisy.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        assert!(comps.iter().all(|c| c.abs() <= clip));
        let mean = comps.iter().sum::<f64>() / comps.len() as f64;
        let std = (comps.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / comps.len() as f64).sqrt();
        let want = clipped_gaussian_std(sigma, clip);
        assert!((std / want - 1.0).abs() < 0.05, "sigma {sigma}: {std} vs {want}");
    }
    // The heavier clip really bites: the oracle is well below sigma.
    assert!(clipped_gaussian_std(0.04, 0.05) < 0.037);
}

#[test]
fn latent_init_moments() {
    let vals: Vec<f64> = (0..200).flat_map(|s| init_latent(s).values.to_vec()).collect();
    assert_eq!(vals.len(), 200 * LATENT_DIM);
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 4.0 * LATENT_INIT_STD / n.sqrt(), "mean {mean}");
    assert!((std / LATENT_INIT_STD - 1.0).abs() < 0.02, "std {std}");
}

#[test]
fn tetrahedron_samples_lie_on_its_faces() {
    let mesh = parse_off("OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n").unwrap();
    let (pts, centroid) = sample_mesh(&mesh, 2000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut on_slanted = 0;
    for p in &pts {
        // Inside the closed tetrahedron and on at least one of its four planes.
        let planes = [p.x, p.y, p.z, 1.0 - p.x - p.y - p.z];
        assert!(planes.iter().all(|&d| d >= -1e-12), "{p:?}");
        assert!(planes.iter().any(|&d| d.abs() < 1e-12), "{p:?}");
        if planes[3].abs() < 1e-12 {
            on_slanted += 1;
        }
    }
    // The slanted face has sqrt(3) times the area of each axis face.
    let share = on_slanted as f64 / pts.len() as f64;
    let want = 3f64.sqrt() / (3.0 + 3f64.sqrt());
    assert!((share - want).abs() < 0.04, "{share} vs {want}");
    // Area-weighted centroid of the face centroids.
    let axis = 0.5;
    let slanted = 3f64.sqrt() / 2.0;
    let faces = [
        (Point::new(1.0, 1.0, 0.0) / 3.0, axis),
        (Point::new(1.0, 0.0, 1.0) / 3.0, axis),
        (Point::new(0.0, 1.0, 1.0) / 3.0, axis),
        (Point::new(1.0, 1.0, 1.0) / 3.0, slanted),
    ];
    let want = faces.iter().map(|(c, a)| c * *a).sum::<Point>() / (3.0 * axis + slanted);
    assert!((centroid - want).norm() < 1e-12);
}

#[test]
fn crop_keeps_the_nearest_points_by_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let pts = random_cloud(rng.random_range(1..200), 1.0, &mut rng);
        let seed = Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let keep = rng.random_range(1..=pts.len());
        let mut d: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| ((p - seed).norm_squared(), i)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<usize> = d[..keep].iter().map(|x| x.1).collect();
        want.sort();
        assert_eq!(crop_indices(&pts, &seed, keep), want);
    }
}

#[test]
fn sdf_samples_match_brute_force_distances() {
    let target = sample_shape(&default_shape_bank()[2], 150).unwrap();
    let samples = make_sdf_samples(&target, 5);
    assert_eq!(samples.len(), 4 * 150);
    for s in &samples {
        let brute = target.points().iter().map(|p| dist_sq(p, &s.location)).fold(f64::INFINITY, f64::min).sqrt();
        assert_eq!(s.distance, brute.min(SDF_CLAMP));
    }
    assert!(samples.iter().step_by(4).all(|s| s.distance == 0.0));
}

#[test]
fn icp_recovers_small_rotations_on_full_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for spec in default_shape_bank() {
        let source = sample_shape(&spec, 400).unwrap();
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let gt = RigidTransform::new(dir * 5f64.to_radians(), Vector3::new(0.02, -0.01, 0.015));
        let target = apply_transform(&source, &gt).unwrap();
        let r = icp_register(&source, &target, &IcpConfig::default()).unwrap();
        let err = r.map.geodesic_deg(&gt.to_map().unwrap());
        assert!(err < 0.1, "{}: {err} deg", spec.id);
    }
}

fn mse(src: &[Point], dst: &[Point], r: &Matrix3<f64>) -> f64 {
    // Optimal translation for a fixed rotation is the centroid difference.
    let n = src.len() as f64;
    let t = dst.iter().sum::<Point>() / n - r * (src.iter().sum::<Point>() / n);
    src.iter().zip(dst).map(|(s, d)| (r * s + t - d).norm_squared()).sum::<f64>() / n
}

#[test]
fn best_fit_beats_a_rotation_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src = random_cloud(5, 1.0, &mut rng);
    let gt = RigidTransform::new(Vector3::new(0.05, -0.08, 0.12), Vector3::new(0.3, 0.1, -0.2));
    let dst: Vec<Point> = src
        .iter()
        .map(|p| {
            gt.to_map().unwrap().apply_point(p)
                + Point::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))
        })
        .collect();
    let fit = best_fit_rigid(&src, &dst).unwrap();
    let fit_mse = src.iter().zip(&dst).map(|(s, d)| (fit.apply_point(s) - d).norm_squared()).sum::<f64>() / 5.0;
    let step = 0.25f64.to_radians();
    let (mut best, mut best_r) = (f64::INFINITY, Matrix3::identity());
    for i in -60..=60 {
        for j in -60..=60 {
            for k in -60..=60 {
                let r = rotation_from_angles(&(gt.angles + Vector3::new(i as f64, j as f64, k as f64) * step)).unwrap();
                let e = mse(&src, &dst, &r);
                if e < best {
                    (best, best_r) = (e, r);
                }
            }
        }
    }
    assert!(fit_mse <= best + 1e-12, "{fit_mse} vs grid {best}");
    let angle = ((fit.rotation.transpose() * best_r).trace() - 1.0) / 2.0;
    assert!(angle.clamp(-1.0, 1.0).acos() < 2.0 * step, "grid optimum far from closed form");
}
