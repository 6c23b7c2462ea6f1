//! Independent oracles shared by the integration and acceptance suites.

#![allow(dead_code)]

use jointreg::geometry::{dist_sq, Point};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub mod gradsuite;

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` over whole vectors, with a tiny floor for all-zero gradients.
/// Norm-relative error. The denominator is floored at 1e-5 so tensors whose true gradient is
/// exactly zero (a bias feeding batch normalization) compare as absolute error.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-5)
}

pub type SliceFn<N> = fn(&mut N) -> Vec<(String, &mut [f64])>;

/// Central finite differences on a random subset of every tensor exposed by `slices`.
///
/// Returns `(tensor name, relative error)` per tensor.
pub fn fd_check<N>(
    model: &mut N,
    slices: SliceFn<N>,
    analytic: &[Vec<f64>],
    loss: &dyn Fn(&N) -> f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(String, f64)> {
    let shapes: Vec<(String, usize)> = slices(model).into_iter().map(|(n, s)| (n, s.len())).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient buffer not congruent");
    let mut out = Vec::new();
    for (t, (name, len)) in shapes.into_iter().enumerate() {
        assert_eq!(len, analytic[t].len(), "{name}");
        let picks: Vec<usize> =
            if len <= per_tensor { (0..len).collect() } else { (0..per_tensor).map(|_| rng.random_range(0..len)).collect() };
        let mut fd = Vec::with_capacity(picks.len());
        let mut an = Vec::with_capacity(picks.len());
        for &i in &picks {
            let orig = slices(model)[t].1[i];
            slices(model)[t].1[i] = orig + FD_STEP;
            let lp = loss(model);
            slices(model)[t].1[i] = orig - FD_STEP;
            let lm = loss(model);
            slices(model)[t].1[i] = orig;
            fd.push((lp - lm) / (2.0 * FD_STEP));
            an.push(analytic[t][i]);
        }
        out.push((name, rel_err(&an, &fd)));
    }
    out
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_vector(x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_STEP;
            let lp = f(&v);
            v[i] = orig - FD_STEP;
            let lm = f(&v);
            v[i] = orig;
            (lp - lm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Brute-force double loop: `sum_b min(s, min_a d) + sum_a min(s, min_b d)`, each sum in
/// index order.
pub fn brute_chamfer(a: &[Point], b: &[Point], sigma: f64) -> f64 {
    let nearest = |p: &Point, set: &[Point]| set.iter().map(|q| dist_sq(p, q)).fold(f64::INFINITY, f64::min);
    let mut to_a = 0.0;
    for y in b {
        to_a += nearest(y, a).min(sigma);
    }
    let mut to_b = 0.0;
    for x in a {
        to_b += nearest(x, b).min(sigma);
    }
    to_a + to_b
}

/// Nearest-neighbor indices of both directions, used to detect assignment flips.
pub fn assignment(a: &[Point], b: &[Point]) -> Vec<usize> {
    let arg = |p: &Point, set: &[Point]| {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in set.iter().enumerate() {
            let d = dist_sq(p, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    };
    b.iter().map(|y| arg(y, a)).chain(a.iter().map(|x| arg(x, b))).collect()
}

pub fn random_cloud(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))).collect()
}

/// 3x3 rotation from Euler angles via unit-quaternion composition `qz * qy * qx`.
pub fn quaternion_rotation(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    type Quat = [f64; 4];
    fn axis(angle: f64, k: usize) -> Quat {
        let (s, c) = (angle / 2.0).sin_cos();
        let mut q = [c, 0.0, 0.0, 0.0];
        q[k + 1] = s;
        q
    }
    fn mul(a: Quat, b: Quat) -> Quat {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }
    let [w, x, y, z] = mul(axis(rz, 2), mul(axis(ry, 1), axis(rx, 0)));
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}
