mod common;

use common::brute_chamfer;
use jointreg::eval::compute_metrics;
use jointreg::geometry::io::{parse_ply, ply_string};
use jointreg::geometry::{
    apply_transform, clipped_chamfer_points, dist_sq, nearest_in, rotation_from_angles, KdTree, Point, PointSet, RigidTransform, SetTag,
};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Point::new(x, y, z))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(point(), 1..max)
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-3.2..3.2f64), prop::array::uniform3(-1.0..1.0f64))
        .prop_map(|(a, t)| RigidTransform::new(Vector3::from(a), Vector3::from(t)))
}

proptest! {
    #[test]
    fn rotations_are_proper(a in prop::array::uniform3(-10.0..10.0f64)) {
        let r = rotation_from_angles(&Vector3::from(a)).unwrap();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transforms_are_isometries(pts in cloud(30), t in transform()) {
        let ps = PointSet::new(pts.clone(), SetTag::Full, "p").unwrap();
        let moved = apply_transform(&ps, &t).unwrap();
        for i in 0..pts.len() {
            for j in 0..i {
                let before = dist_sq(&pts[i], &pts[j]);
                let after = dist_sq(&moved.points()[i], &moved.points()[j]);
                prop_assert!((before - after).abs() < 1e-12 * before.max(1.0));
            }
        }
    }

    #[test]
    fn euler_extraction_round_trips_the_matrix(t in transform()) {
        let map = t.to_map().unwrap();
        let back = map.to_transform().to_map().unwrap();
        prop_assert!((back.rotation - map.rotation).abs().max() < 1e-9);
        prop_assert_eq!(back.translation, map.translation);
    }

    #[test]
    fn chamfer_symmetric_monotone_and_exact(a in cloud(60), b in cloud(60), s1 in 1e-6..2.0f64, s2 in 1e-6..2.0f64) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let ab = clipped_chamfer_points(&a, &b, lo).unwrap();
        prop_assert_eq!(ab, clipped_chamfer_points(&b, &a, lo).unwrap());
        prop_assert!(ab <= clipped_chamfer_points(&a, &b, hi).unwrap());
        prop_assert!(clipped_chamfer_points(&a, &b, hi).unwrap() <= clipped_chamfer_points(&a, &b, f64::INFINITY).unwrap());
        prop_assert_eq!(ab, brute_chamfer(&a, &b, lo));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn kdtree_matches_linear_scan(pts in cloud(200), queries in cloud(20)) {
        let tree = KdTree::new(&pts);
        for q in &queries {
            prop_assert_eq!(tree.nearest(q).unwrap(), nearest_in(q, &pts).unwrap());
        }
    }

    #[test]
    fn kdtree_ties_on_a_lattice(n in 1usize..6, q in prop::array::uniform3(-1i32..5)) {
        // Integer lattices are full of exactly equidistant neighbors.
        let pts: Vec<Point> = (0..n * n * n)
            .map(|i| Point::new((i % n) as f64, ((i / n) % n) as f64, (i / (n * n)) as f64))
            .collect();
        let q = Point::new(q[0] as f64 + 0.5, q[1] as f64 + 0.5, q[2] as f64);
        prop_assert_eq!(KdTree::new(&pts).nearest(&q).unwrap(), nearest_in(&q, &pts).unwrap());
    }

    #[test]
    fn metrics_ignore_pair_order(pairs in prop::collection::vec((transform(), transform()), 1..12), seed in any::<u64>()) {
        let (pred, gt): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let a = compute_metrics(&pred, &gt).unwrap();
        let mut order: Vec<usize> = (0..pred.len()).collect();
        // Deterministic shuffle from the seed.
        let mut s = seed | 1;
        for i in (1..order.len()).rev() {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let p2: Vec<_> = order.iter().map(|&i| pred[i]).collect();
        let g2: Vec<_> = order.iter().map(|&i| gt[i]).collect();
        let b = compute_metrics(&p2, &g2).unwrap();
        for (x, y) in [(a.mse_r, b.mse_r), (a.rmse_r, b.rmse_r), (a.mae_r, b.mae_r), (a.mse_t, b.mse_t), (a.rmse_t, b.rmse_t), (a.mae_t, b.mae_t)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        prop_assert!(a.rmse_r * a.rmse_r - a.mse_r <= 1e-9 * a.mse_r.max(1.0));
        prop_assert!(a.mae_r <= a.rmse_r + 1e-12);
    }

    #[test]
    fn ply_round_trip_is_bit_exact(pts in prop::collection::vec(prop::array::uniform3(any::<f64>().prop_filter("finite", |v| v.is_finite())), 0..40)) {
        let pts: Vec<Point> = pts.into_iter().map(Point::from).collect();
        prop_assert_eq!(parse_ply(&ply_string(&pts)).unwrap(), pts);
    }
}
