//! Procedural and mesh-based shape sampling, registration-pair synthesis,
//! partiality cropping, clipped Gaussian noise and truncated-distance samples.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::io::{read_off, TriMesh};
use crate::geometry::{apply_transform, dist_sq, KdTree, Point, PointSet, RigidTransform, SetTag};

/// Truncation distance shared by the sample generator and the completion loss.
pub const SDF_CLAMP: f64 = 0.03;
/// Spatial perturbation used around every observed point.
pub const SDF_PERTURB_STD: f64 = 0.2;
pub const SDF_SAMPLES_PER_POINT: usize = 3;

/// RNG for stream `stream` of a master seed. Streams are independent, so pair
/// `i` of a corpus is the same whether it is generated alone or in bulk.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        radius: f64,
    },
    /// Axis-aligned box given by its half extents.
    Box {
        half_extents: [f64; 3],
    },
    /// Closed z-aligned cylinder.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Torus in the xy plane.
    Torus {
        major: f64,
        minor: f64,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => 4.0 * PI * radius * radius,
            Primitive::Box { half_extents: [x, y, z] } => 8.0 * (x * y + y * z + x * z),
            Primitive::Cylinder { radius, half_height } => 4.0 * PI * radius * half_height + 2.0 * PI * radius * radius,
            Primitive::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius } => radius > 0.0,
            Primitive::Box { half_extents } => {
                half_extents.iter().filter(|&&h| h > 0.0).count() >= 2 && half_extents.iter().all(|&h| h >= 0.0)
            }
            Primitive::Cylinder { radius, half_height } => radius > 0.0 && half_height >= 0.0,
            Primitive::Torus { major, minor } => minor > 0.0 && major >= minor,
        };
        if ok && self.area().is_finite() && self.area() > 0.0 {
            Ok(())
        } else {
            invalid(format!("degenerate primitive {self:?}"))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        match *self {
            Primitive::Sphere { radius } => loop {
                let v = Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let n = v.norm();
                if n > 1e-12 {
                    break v * (radius / n);
                }
            },
            Primitive::Box { half_extents: [hx, hy, hz] } => {
                // Face pairs normal to x, y, z.
                let areas = [hy * hz, hx * hz, hx * hy];
                let axis = pick_weighted(&areas, rng);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let h = [hx, hy, hz];
                let mut p = Point::zeros();
                for k in 0..3 {
                    p[k] = if k == axis { sign * h[k] } else { rng.random_range(-1.0..=1.0) * h[k] };
                }
                p
            }
            Primitive::Cylinder { radius, half_height } => {
                let side = 4.0 * PI * radius * half_height;
                let cap = PI * radius * radius;
                let theta = rng.random_range(0.0..2.0 * PI);
                match pick_weighted(&[side, cap, cap], rng) {
                    0 => Point::new(radius * theta.cos(), radius * theta.sin(), rng.random_range(-half_height..=half_height)),
                    face => {
                        let r = radius * rng.random::<f64>().sqrt();
                        let z = if face == 1 { half_height } else { -half_height };
                        Point::new(r * theta.cos(), r * theta.sin(), z)
                    }
                }
            }
            Primitive::Torus { major, minor } => loop {
                // Area element is proportional to (R + r cos v); rejection-sample it.
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                let w = (major + minor * v.cos()) / (major + minor);
                if rng.random::<f64>() <= w {
                    let ring = major + minor * v.cos();
                    break Point::new(ring * u.cos(), ring * u.sin(), minor * v.sin());
                }
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedPrimitive {
    pub primitive: Primitive,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum ShapeKind {
    Primitive(Primitive),
    Composite { parts: [PlacedPrimitive; 2] },
    MeshFile { path: PathBuf },
}

/// A shape generator plus the seed used by [`sample_shape`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub id: String,
    pub shape: ShapeKind,
    #[serde(default)]
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(id: impl Into<String>, shape: ShapeKind, seed: u64) -> Self {
        Self { id: id.into(), shape, seed }
    }
}

fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn triangle_area(m: &TriMesh, t: &[usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| m.vertices[i]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Draws `n` area-uniform surface points; raw coordinates, no normalization.
/// Also returns the area-weighted surface centroid.
fn sample_raw<R: Rng>(shape: &ShapeKind, n: usize, rng: &mut R) -> Result<(Vec<Point>, Point)> {
    match shape {
        ShapeKind::Primitive(p) => {
            p.validate()?;
            Ok(((0..n).map(|_| p.sample(rng)).collect(), Point::zeros()))
        }
        ShapeKind::Composite { parts } => {
            for part in parts {
                part.primitive.validate()?;
            }
            let areas = [parts[0].primitive.area(), parts[1].primitive.area()];
            let offsets = parts.clone().map(|p| Point::from(p.offset));
            let centroid = (offsets[0] * areas[0] + offsets[1] * areas[1]) / (areas[0] + areas[1]);
            let pts = (0..n)
                .map(|_| {
                    let k = pick_weighted(&areas, rng);
                    parts[k].primitive.sample(rng) + offsets[k]
                })
                .collect();
            Ok((pts, centroid))
        }
        ShapeKind::MeshFile { path } => {
            let mesh = read_off(path)?;
            sample_mesh(&mesh, n, rng)
        }
    }
}

/// Area-weighted triangle choice with uniform barycentric sampling.
pub fn sample_mesh<R: Rng>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<(Vec<Point>, Point)> {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| triangle_area(mesh, t)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return invalid("mesh has zero surface area");
    }
    let mut centroid = Point::zeros();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for (t, a) in mesh.triangles.iter().zip(&areas) {
        let [p, q, r] = t.map(|i| mesh.vertices[i]);
        centroid += (p + q + r) * (a / 3.0);
        acc += a;
        cumulative.push(acc);
    }
    centroid /= total;
    let pts = (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangles[k].map(|i| mesh.vertices[i]);
            let s = rng.random::<f64>().sqrt();
            let t = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - t)) + c * (s * t)
        })
        .collect();
    Ok((pts, centroid))
}

/// Scale factor and centroid that map a raw sample into the unit ball.
fn normalize(points: &mut [Point], centroid: Point) {
    let mut max_norm = 0.0f64;
    for p in points.iter_mut() {
        *p -= centroid;
        max_norm = max_norm.max(p.norm());
    }
    if max_norm > 0.0 {
        for p in points.iter_mut() {
            *p /= max_norm;
        }
    }
}

pub fn sample_shape_with<R: Rng>(spec: &ShapeSpec, n: usize, rng: &mut R) -> Result<PointSet> {
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    let (mut pts, centroid) = sample_raw(&spec.shape, n, rng)?;
    normalize(&mut pts, centroid);
    PointSet::new(pts, SetTag::Full, spec.id.clone())
}

/// `n` area-uniform surface samples, centered on the surface centroid and scaled
/// so the farthest sample has norm 1.
pub fn sample_shape(spec: &ShapeSpec, n: usize) -> Result<PointSet> {
    sample_shape_with(spec, n, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub max_angle_deg: f64,
    pub max_translation: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self { max_angle_deg: 45.0, max_translation: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub clip: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.0, clip: 0.05 }
    }
}

impl NoiseConfig {
    /// Per-coordinate N(0, 0.01) clipped to [-0.05, 0.05].
    pub fn gaussian() -> Self {
        Self { sigma: 0.01, clip: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub points: usize,
    pub keep: usize,
    pub transform: TransformConfig,
    pub noise: NoiseConfig,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { points: 1024, keep: 768, transform: TransformConfig::default(), noise: NoiseConfig::default() }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.keep == 0 || self.keep > self.points {
            return invalid(format!("need 1 <= keep ({}) <= points ({})", self.keep, self.points));
        }
        let t = &self.transform;
        if !(t.max_angle_deg >= 0.0 && t.max_translation >= 0.0) {
            return invalid("transform ranges must be nonnegative");
        }
        if !(self.noise.sigma >= 0.0 && self.noise.clip > 0.0) {
            return invalid("noise needs sigma >= 0 and clip > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationPair {
    pub source: PointSet,
    pub target_full: PointSet,
    pub target_partial: PointSet,
    pub gt: RigidTransform,
    pub noise_sigma: f64,
    /// Seed of the pair's private stream; reused for its SDF samples.
    pub seed: u64,
}

pub fn random_transform<R: Rng>(cfg: &TransformConfig, rng: &mut R) -> RigidTransform {
    let max_a = cfg.max_angle_deg.to_radians();
    let mut angle = || if max_a > 0.0 { rng.random_range(0.0..=max_a) } else { 0.0 };
    let angles = Vector3::new(angle(), angle(), angle());
    let m = cfg.max_translation;
    let mut shift = || if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let translation = Vector3::new(shift(), shift(), shift());
    RigidTransform::new(angles, translation)
}

/// Indices of the `keep` points nearest to `seed_point`, returned in ascending index order.
pub fn crop_indices(points: &[Point], seed_point: &Point, keep: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist_sq(p, seed_point), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = order.into_iter().take(keep).map(|(_, i)| i).collect();
    kept.sort_unstable();
    kept
}

/// Source sample, ground-truth transform, full and cropped targets, then noise.
pub fn make_pair<R: Rng>(spec: &ShapeSpec, cfg: &PairConfig, rng: &mut R) -> Result<RegistrationPair> {
    cfg.validate()?;
    let pair_seed: u64 = rng.random();
    let source = sample_shape_with(spec, cfg.points, rng)?;
    let gt = random_transform(&cfg.transform, rng);
    let mut target_full = apply_transform(&source, &gt)?;
    target_full.tag = SetTag::Full;
    let crop_seed = Point::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
    let kept = crop_indices(target_full.points(), &crop_seed, cfg.keep);
    let partial_pts = kept.iter().map(|&i| target_full.points()[i]).collect();
    let mut target_partial = PointSet::new(partial_pts, SetTag::Partial, spec.id.clone())?;
    let mut source = source;
    if cfg.noise.sigma > 0.0 {
        source = add_noise_with(&source, cfg.noise.sigma, cfg.noise.clip, rng)?;
        target_partial = add_noise_with(&target_partial, cfg.noise.sigma, cfg.noise.clip, rng)?;
    }
    Ok(RegistrationPair { source, target_full, target_partial, gt, noise_sigma: cfg.noise.sigma, seed: pair_seed })
}

pub fn make_pair_seeded(spec: &ShapeSpec, cfg: &PairConfig, seed: u64) -> Result<RegistrationPair> {
    make_pair(spec, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn add_noise_with<R: Rng>(ps: &PointSet, sigma: f64, clip: f64, rng: &mut R) -> Result<PointSet> {
    if !(sigma >= 0.0 && clip > 0.0) {
        return invalid("noise needs sigma >= 0 and clip > 0");
    }
    if sigma == 0.0 {
        return Ok(ps.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let pts = ps.points().iter().map(|p| p.map(|c| c + normal.sample(rng).clamp(-clip, clip))).collect();
    Ok(ps.with_points(pts, ps.tag))
}

/// I.i.d. per-coordinate Gaussian displacement, each component clipped to `[-clip, clip]`.
pub fn add_noise(ps: &PointSet, sigma: f64, clip: f64, seed: u64) -> Result<PointSet> {
    add_noise_with(ps, sigma, clip, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfSample {
    pub location: Point,
    pub distance: f64,
}

/// One on-surface sample plus three Gaussian-perturbed samples per observed point.
///
/// Distances are unsigned nearest-point distances to `target`, truncated at [`SDF_CLAMP`].
pub fn make_sdf_samples(target: &PointSet, seed: u64) -> Vec<SdfSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, SDF_PERTURB_STD).expect("valid std");
    let tree = KdTree::new(target.points());
    let mut out = Vec::with_capacity(target.len() * (SDF_SAMPLES_PER_POINT + 1));
    for p in target.points() {
        out.push(SdfSample { location: *p, distance: 0.0 });
        for _ in 0..SDF_SAMPLES_PER_POINT {
            let q = p.map(|c| c + normal.sample(&mut rng));
            let d = tree.nearest(&q).expect("nonempty target").dist_sq.sqrt();
            out.push(SdfSample { location: q, distance: d.min(SDF_CLAMP) });
        }
    }
    out
}

/// Eight asymmetric two-part shapes with well-separated parts, used as the desk-scale corpus.
pub fn default_shape_bank() -> Vec<ShapeSpec> {
    use Primitive::*;
    let part = |primitive, offset| PlacedPrimitive { primitive, offset };
    let composite = |a, b| ShapeKind::Composite { parts: [a, b] };
    let shapes = vec![
        composite(part(Box { half_extents: [0.8, 0.3, 0.15] }, [0.0, 0.0, 0.0]), part(Sphere { radius: 0.3 }, [0.6, 0.45, 0.2])),
        composite(
            part(Box { half_extents: [0.25, 0.6, 0.25] }, [0.0, 0.0, 0.0]),
            part(Cylinder { radius: 0.15, half_height: 0.4 }, [0.5, -0.4, 0.3]),
        ),
        composite(
            part(Cylinder { radius: 0.35, half_height: 0.5 }, [0.0, 0.0, 0.0]),
            part(Box { half_extents: [0.45, 0.15, 0.1] }, [0.5, 0.2, 0.5]),
        ),
        composite(part(Torus { major: 0.5, minor: 0.15 }, [0.0, 0.0, 0.0]), part(Sphere { radius: 0.25 }, [0.55, 0.3, 0.35])),
        composite(
            part(Box { half_extents: [0.6, 0.6, 0.1] }, [0.0, 0.0, 0.0]),
            part(Box { half_extents: [0.1, 0.1, 0.45] }, [0.4, -0.3, 0.5]),
        ),
        composite(part(Sphere { radius: 0.45 }, [0.0, 0.0, 0.0]), part(Box { half_extents: [0.5, 0.12, 0.12] }, [0.55, 0.35, -0.1])),
        composite(
            part(Cylinder { radius: 0.2, half_height: 0.7 }, [0.0, 0.0, 0.0]),
            part(Torus { major: 0.35, minor: 0.1 }, [0.25, 0.0, 0.55]),
        ),
        composite(
            part(Box { half_extents: [0.4, 0.25, 0.35] }, [0.0, 0.0, 0.0]),
            part(Cylinder { radius: 0.1, half_height: 0.35 }, [-0.45, 0.4, 0.4]),
        ),
    ];
    shapes.into_iter().enumerate().map(|(i, s)| ShapeSpec::new(format!("shape{i}"), s, 1000 + i as u64)).collect()
}
