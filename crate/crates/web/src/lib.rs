//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Point clouds cross the boundary as flat `[x0, y0, z0, x1, ...]` arrays.

use jointreg::datagen::{default_shape_bank, make_pair_seeded, NoiseConfig, PairConfig, TransformConfig};
use jointreg::eval::{icp_register, IcpConfig};
use jointreg::geometry::{clipped_chamfer_points, Point, PointSet, RigidMap, SetTag};
use jointreg::{Error, Result};
use nalgebra::{Rotation3, Vector3};
use wasm_bindgen::prelude::*;

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten(flat: &[f64]) -> Result<Vec<Point>> {
    if flat.is_empty() || !flat.len().is_multiple_of(3) {
        return Err(Error::InvalidArgument(format!("{} coordinates do not form 3D points", flat.len())));
    }
    Ok(flat.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn shape_names() -> Vec<String> {
    default_shape_bank().into_iter().map(|s| s.id).collect()
}

/// A generated pair with its ground truth.
#[wasm_bindgen]
pub struct DemoPair {
    source: Vec<f64>,
    target: Vec<f64>,
    target_full: Vec<f64>,
    angles_deg: Vec<f64>,
    translation: Vec<f64>,
}

#[wasm_bindgen]
impl DemoPair {
    #[wasm_bindgen(getter)]
    pub fn source(&self) -> Vec<f64> {
        self.source.clone()
    }
    /// The cropped target.
    #[wasm_bindgen(getter)]
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn target_full(&self) -> Vec<f64> {
        self.target_full.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn angles_deg(&self) -> Vec<f64> {
        self.angles_deg.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn translation(&self) -> Vec<f64> {
        self.translation.clone()
    }
}

pub fn make_demo_pair(shape: usize, points: usize, keep_fraction: f64, max_angle_deg: f64, noise: bool, seed: u32) -> Result<DemoPair> {
    let bank = default_shape_bank();
    let spec = bank.get(shape).ok_or_else(|| Error::InvalidArgument(format!("no shape {shape}")))?;
    let keep = ((points as f64 * keep_fraction).round() as usize).clamp(1, points.max(1));
    let cfg = PairConfig {
        points,
        keep,
        transform: TransformConfig { max_angle_deg, ..Default::default() },
        noise: if noise { NoiseConfig::gaussian() } else { NoiseConfig::default() },
    };
    let pair = make_pair_seeded(spec, &cfg, u64::from(seed))?;
    let t = &pair.gt.translation;
    Ok(DemoPair {
        source: flatten(pair.source.points()),
        target: flatten(pair.target_partial.points()),
        target_full: flatten(pair.target_full.points()),
        angles_deg: pair.gt.angles_deg().to_vec(),
        translation: vec![t.x, t.y, t.z],
    })
}

#[wasm_bindgen]
pub fn generate_pair(
    shape: usize,
    points: usize,
    keep_fraction: f64,
    max_angle_deg: f64,
    noise: bool,
    seed: u32,
) -> std::result::Result<DemoPair, JsError> {
    make_demo_pair(shape, points, keep_fraction, max_angle_deg, noise, seed).map_err(js)
}

/// Outcome of one ICP run.
#[wasm_bindgen]
pub struct IcpRun {
    aligned: Vec<f64>,
    angles_deg: Vec<f64>,
    translation: Vec<f64>,
    mse_log: Vec<f64>,
}

#[wasm_bindgen]
impl IcpRun {
    #[wasm_bindgen(getter)]
    pub fn aligned(&self) -> Vec<f64> {
        self.aligned.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn angles_deg(&self) -> Vec<f64> {
        self.angles_deg.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn translation(&self) -> Vec<f64> {
        self.translation.clone()
    }
    /// Correspondence MSE before the first iteration and after each one.
    #[wasm_bindgen(getter)]
    pub fn mse_log(&self) -> Vec<f64> {
        self.mse_log.clone()
    }
}

pub fn icp(source: &[f64], target: &[f64], max_iterations: usize) -> Result<IcpRun> {
    let src = PointSet::new(unflatten(source)?, SetTag::Full, "source")?;
    let dst = PointSet::new(unflatten(target)?, SetTag::Partial, "target")?;
    let r = icp_register(&src, &dst, &IcpConfig { max_iterations, ..Default::default() })?;
    let t = r.map.to_transform();
    Ok(IcpRun {
        aligned: flatten(r.map.apply(&src).points()),
        angles_deg: t.angles_deg().to_vec(),
        translation: vec![t.translation.x, t.translation.y, t.translation.z],
        mse_log: r.mse_log,
    })
}

#[wasm_bindgen]
pub fn run_icp(source: &[f64], target: &[f64], max_iterations: usize) -> std::result::Result<IcpRun, JsError> {
    icp(source, target, max_iterations).map_err(js)
}

/// Clipped Chamfer distance between `target` and `source` turned about its centroid
/// by each of `samples` angles evenly spaced over `[-max_deg, max_deg]`.
pub fn chamfer_curve_values(source: &[f64], target: &[f64], axis: usize, max_deg: f64, samples: usize, sigma_t: f64) -> Result<Vec<f64>> {
    let src = unflatten(source)?;
    let dst = unflatten(target)?;
    let dir = match axis {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        2 => Vector3::z_axis(),
        _ => return Err(Error::InvalidArgument(format!("axis {axis} is not 0, 1 or 2"))),
    };
    if samples < 2 {
        return Err(Error::InvalidArgument("a curve needs at least two samples".into()));
    }
    let centroid = src.iter().sum::<Point>() / src.len() as f64;
    (0..samples)
        .map(|k| {
            let deg = -max_deg + 2.0 * max_deg * k as f64 / (samples - 1) as f64;
            let rotation = Rotation3::from_axis_angle(&dir, deg.to_radians()).into_inner();
            let map = RigidMap { rotation, translation: centroid - rotation * centroid };
            let moved: Vec<Point> = src.iter().map(|p| map.apply_point(p)).collect();
            clipped_chamfer_points(&moved, &dst, sigma_t)
        })
        .collect()
}

#[wasm_bindgen]
pub fn chamfer_curve(
    source: &[f64],
    target: &[f64],
    axis: usize,
    max_deg: f64,
    samples: usize,
    sigma_t: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    chamfer_curve_values(source, target, axis, max_deg, samples, sigma_t).map_err(js)
}
