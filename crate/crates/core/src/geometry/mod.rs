//! Point sets, Euler-angle rigid transforms and the Chamfer-family alignment losses.

mod chamfer;
pub mod io;
mod kdtree;

pub use chamfer::{chamfer_match, clipped_chamfer, clipped_chamfer_grad, clipped_chamfer_points, ChamferMatch, Neighbor};
pub use kdtree::KdTree;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point = Vector3<f64>;

/// Provenance of a point set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetTag {
    Full,
    Partial,
    Transformed,
}

/// Ordered, nonempty list of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<Point>,
    pub tag: SetTag,
    pub source_id: String,
}

impl PointSet {
    pub fn new(points: Vec<Point>, tag: SetTag, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return invalid("point set must be nonempty");
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return invalid(format!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { points, tag, source_id: source_id.into() })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Same metadata, new points. Callers guarantee the replacement is finite and nonempty.
    pub(crate) fn with_points(&self, points: Vec<Point>, tag: SetTag) -> Self {
        debug_assert!(!points.is_empty());
        Self { points, tag, source_id: self.source_id.clone() }
    }
}

/// Rigid transform parameterized by Euler angles (radians) and a translation.
///
/// The rotation is `Rz * Ry * Rx`, so a point is rotated about x first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angles: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(angles: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { angles, translation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Six raw parameters in `(rx, ry, rz, tx, ty, tz)` order.
    pub fn from_params(p: &[f64]) -> Result<Self> {
        if p.len() != 6 {
            return invalid(format!("expected 6 transform parameters, got {}", p.len()));
        }
        Ok(Self::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5])))
    }

    pub fn params(&self) -> [f64; 6] {
        let (a, t) = (self.angles, self.translation);
        [a.x, a.y, a.z, t.x, t.y, t.z]
    }

    pub fn rotation(&self) -> Result<Matrix3<f64>> {
        rotation_from_angles(&self.angles)
    }

    pub fn to_map(&self) -> Result<RigidMap> {
        if !self.translation.iter().all(|c| c.is_finite()) {
            return invalid("translation must be finite");
        }
        Ok(RigidMap { rotation: self.rotation()?, translation: self.translation })
    }

    pub fn inverse(&self) -> Result<RigidMap> {
        Ok(self.to_map()?.inverse())
    }

    pub fn angles_deg(&self) -> [f64; 3] {
        [self.angles.x.to_degrees(), self.angles.y.to_degrees(), self.angles.z.to_degrees()]
    }
}

/// Rigid motion in matrix form, `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMap {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidMap {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    /// `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// The map applying `self` after `first`.
    pub fn after(&self, first: &RigidMap) -> Self {
        Self { rotation: self.rotation * first.rotation, translation: self.rotation * first.translation + self.translation }
    }

    pub fn apply(&self, ps: &PointSet) -> PointSet {
        let pts = ps.points().iter().map(|p| self.apply_point(p)).collect();
        ps.with_points(pts, SetTag::Transformed)
    }

    /// Euler angles in the `Rz * Ry * Rx` convention with `ry` in `[-pi/2, pi/2]`.
    pub fn to_transform(&self) -> RigidTransform {
        let r = &self.rotation;
        let ry = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let (rx, rz) = if r[(2, 0)].abs() < 1.0 - 1e-12 {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        } else {
            // Gimbal lock: only rx - rz (or rx + rz) is determined; put it all in rx.
            ((-r[(1, 2)]).atan2(r[(1, 1)]), 0.0)
        };
        RigidTransform { angles: Vector3::new(rx, ry, rz), translation: self.translation }
    }

    /// Angle of the relative rotation `R_self * R_other^T`, in degrees.
    pub fn geodesic_deg(&self, other: &RigidMap) -> f64 {
        let rel = self.rotation * other.rotation.transpose();
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

fn axis_rotations(angles: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (sx, cx) = angles.x.sin_cos();
    let (sy, cy) = angles.y.sin_cos();
    let (sz, cz) = angles.z.sin_cos();
    #[rustfmt::skip]
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, cx, -sx,
        0.0, sx, cx,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
        cy, 0.0, sy,
        0.0, 1.0, 0.0,
        -sy, 0.0, cy,
    );
    #[rustfmt::skip]
    let rz = Matrix3::new(
        cz, -sz, 0.0,
        sz, cz, 0.0,
        0.0, 0.0, 1.0,
    );
    [rx, ry, rz]
}

fn check_angles(angles: &Vector3<f64>) -> Result<()> {
    if angles.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        invalid("rotation angles must be finite")
    }
}

/// `Rz(rz) * Ry(ry) * Rx(rx)` with right-handed single-axis rotations.
pub fn rotation_from_angles(angles: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_angles(angles)?;
    let [rx, ry, rz] = axis_rotations(angles);
    Ok(rz * ry * rx)
}

/// Partial derivatives of [`rotation_from_angles`] with respect to `rx`, `ry`, `rz`.
pub fn rotation_jacobian(angles: &Vector3<f64>) -> Result<[Matrix3<f64>; 3]> {
    check_angles(angles)?;
    let [rx, ry, rz] = axis_rotations(angles);
    let (sx, cx) = angles.x.sin_cos();
    let (sy, cy) = angles.y.sin_cos();
    let (sz, cz) = angles.z.sin_cos();
    #[rustfmt::skip]
    let drx = Matrix3::new(
        0.0, 0.0, 0.0,
        0.0, -sx, -cx,
        0.0, cx, -sx,
    );
    #[rustfmt::skip]
    let dry = Matrix3::new(
        -sy, 0.0, cy,
        0.0, 0.0, 0.0,
        -cy, 0.0, -sy,
    );
    #[rustfmt::skip]
    let drz = Matrix3::new(
        -sz, -cz, 0.0,
        cz, -sz, 0.0,
        0.0, 0.0, 0.0,
    );
    Ok([rz * ry * drx, rz * dry * rx, drz * ry * rx])
}

/// Maps every point through `t`, preserving order; the result is tagged `Transformed`.
pub fn apply_transform(ps: &PointSet, t: &RigidTransform) -> Result<PointSet> {
    Ok(t.to_map()?.apply(ps))
}

#[inline]
pub fn dist_sq(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Exact squared distance from `query` to the closest point of `target`.
pub fn nearest_distance_sq(query: &Point, target: &PointSet) -> Result<f64> {
    nearest_in(query, target.points()).map(|n| n.dist_sq)
}

/// Linear scan; ties go to the lowest index.
pub fn nearest_in(query: &Point, target: &[Point]) -> Result<Neighbor> {
    if target.is_empty() {
        return invalid("nearest-neighbor target is empty");
    }
    let mut best = Neighbor { index: 0, dist_sq: f64::INFINITY };
    for (i, p) in target.iter().enumerate() {
        let d = dist_sq(query, p);
        if d < best.dist_sq {
            best = Neighbor { index: i, dist_sq: d };
        }
    }
    Ok(best)
}
