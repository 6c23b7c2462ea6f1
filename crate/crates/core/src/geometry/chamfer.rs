use super::{KdTree, Point, PointSet};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

/// Nearest neighbors in both directions between two point slices.
#[derive(Clone, Debug)]
pub struct ChamferMatch {
    /// For each point of `a`, its nearest point in `b`.
    pub a_to_b: Vec<Neighbor>,
    /// For each point of `b`, its nearest point in `a`.
    pub b_to_a: Vec<Neighbor>,
}

impl ChamferMatch {
    /// `sum_b min(sigma, d) + sum_a min(sigma, d)`, each direction accumulated in
    /// index order. Adding the two partial sums last makes swapping `a` and `b` exact.
    pub fn clipped_sum(&self, sigma_t: f64) -> f64 {
        let half = |ns: &[Neighbor]| ns.iter().fold(0.0, |acc, n| acc + n.dist_sq.min(sigma_t));
        half(&self.b_to_a) + half(&self.a_to_b)
    }
}

pub fn chamfer_match(a: &[Point], b: &[Point]) -> Result<ChamferMatch> {
    if a.is_empty() || b.is_empty() {
        return invalid("chamfer distance needs two nonempty sets");
    }
    let tree_a = KdTree::new(a);
    let tree_b = KdTree::new(b);
    let a_to_b = a.iter().map(|p| tree_b.nearest(p).expect("nonempty")).collect();
    let b_to_a = b.iter().map(|p| tree_a.nearest(p).expect("nonempty")).collect();
    Ok(ChamferMatch { a_to_b, b_to_a })
}

fn check_sigma(sigma_t: f64) -> Result<()> {
    if sigma_t > 0.0 {
        Ok(())
    } else {
        invalid(format!("clip threshold must be positive or infinite, got {sigma_t}"))
    }
}

/// Symmetric Chamfer distance with every squared nearest distance capped at `sigma_t`.
///
/// `sigma_t = f64::INFINITY` gives the plain Chamfer distance.
pub fn clipped_chamfer(a: &PointSet, b: &PointSet, sigma_t: f64) -> Result<f64> {
    clipped_chamfer_points(a.points(), b.points(), sigma_t)
}

pub fn clipped_chamfer_points(a: &[Point], b: &[Point], sigma_t: f64) -> Result<f64> {
    check_sigma(sigma_t)?;
    Ok(chamfer_match(a, b)?.clipped_sum(sigma_t))
}

/// Clipped Chamfer value and its gradient with respect to every point of `a`.
///
/// Nearest-neighbor assignments are held fixed; terms at or above `sigma_t`
/// contribute zero gradient.
pub fn clipped_chamfer_grad(a: &[Point], b: &[Point], sigma_t: f64) -> Result<(f64, Vec<Point>)> {
    check_sigma(sigma_t)?;
    let m = chamfer_match(a, b)?;
    let mut grad = vec![Point::zeros(); a.len()];
    for (j, n) in m.b_to_a.iter().enumerate() {
        if n.dist_sq < sigma_t {
            grad[n.index] += 2.0 * (a[n.index] - b[j]);
        }
    }
    for (i, n) in m.a_to_b.iter().enumerate() {
        if n.dist_sq < sigma_t {
            grad[i] += 2.0 * (a[i] - b[n.index]);
        }
    }
    Ok((m.clipped_sum(sigma_t), grad))
}
