//! Truncated-distance auto-decoder: `(latent code, query location) -> distance`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{SdfSample, SDF_CLAMP};
use crate::error::{invalid, Result};
use crate::geometry::{Point, PointSet, SetTag};
use crate::netcore::{BatchStats, LayerKind, NetGrads, NetParams, StackInput, StackOptions};

pub const LATENT_DIM: usize = 256;
/// Standard deviation of freshly drawn latent entries.
pub const LATENT_INIT_STD: f64 = 0.06;

/// Learnable code attached to one target shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub values: Array1<f64>,
    pub shape_id: String,
}

impl LatentCode {
    pub fn new(values: Array1<f64>, shape_id: impl Into<String>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return invalid(format!("latent codes have {LATENT_DIM} entries, got {}", values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return invalid("latent code has non-finite entries");
        }
        Ok(Self { values, shape_id: shape_id.into() })
    }

    pub fn zeros(shape_id: impl Into<String>) -> Self {
        Self { values: Array1::zeros(LATENT_DIM), shape_id: shape_id.into() }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.dot(&self.values)
    }

    pub(crate) fn as_row(&self) -> ArrayView2<'_, f64> {
        self.values.view().insert_axis(Axis(0))
    }
}

pub fn init_latent_with(rng: &mut ChaCha8Rng, shape_id: impl Into<String>) -> LatentCode {
    let normal = Normal::new(0.0, LATENT_INIT_STD).expect("valid std");
    LatentCode { values: Array1::from_shape_simple_fn(LATENT_DIM, || normal.sample(rng)), shape_id: shape_id.into() }
}

/// `LATENT_DIM` i.i.d. draws from N(0, 0.06^2).
pub fn init_latent(seed: u64) -> LatentCode {
    init_latent_with(&mut ChaCha8Rng::seed_from_u64(seed), "")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub batch_norm: bool,
    pub dropout: Option<f64>,
    /// Initial weight multiplier of the output layer; small values start every
    /// prediction inside the truncation band where the loss has gradient.
    pub output_gain: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { hidden_layers: 7, width: 512, batch_norm: false, dropout: None, output_gain: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionNet {
    pub params: NetParams,
}

impl CompletionNet {
    pub fn new(cfg: &CompletionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.hidden_layers == 0 {
            return invalid("completion decoder needs at least one hidden layer");
        }
        let mut dims = vec![LATENT_DIM + 3];
        dims.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
        dims.push(1);
        let opts = StackOptions { batch_norm: cfg.batch_norm, dropout: cfg.dropout, output_gain: cfg.output_gain };
        Ok(Self { params: NetParams::new(LayerKind::FullyConnected, &dims, true, &opts, rng)? })
    }

    /// Predicted distances for a batch of queries under one code.
    pub fn sdf_batch(&self, z: &LatentCode, queries: &[Point]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let coords = points_matrix(queries);
        #[allow(clippy::single_range_in_vec_init)]
        let segments = [0..queries.len()];
        let out = self.params.evaluate(
            StackInput::Latent { codes: z.as_row(), coords: coords.view(), segments: &segments },
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        Ok(out.column(0).to_vec())
    }

    pub fn sdf_forward(&self, z: &LatentCode, query: &Point) -> Result<f64> {
        Ok(self.sdf_batch(z, std::slice::from_ref(query))?[0])
    }
}

pub(crate) fn points_matrix(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(r, c)| points[r][c])
}

#[inline]
fn clamp_sdf(v: f64) -> f64 {
    v.clamp(-SDF_CLAMP, SDF_CLAMP)
}

/// Per-item completion losses and gradients for a batch of codes.
pub struct CompletionBatch {
    pub losses: Vec<f64>,
    /// Gradient of `sum_b weight_b * loss_b` with respect to each code, one row per item.
    pub code_grads: Array2<f64>,
    /// Batch-normalization statistics, empty in evaluation mode.
    pub stats: BatchStats,
}

/// Batched loss `mean_j |clamp(pred_j) - clamp(s_j)| + |z|^2 / sigma_prior^2` per item.
///
/// Gradients of `sum_b weights[b] * loss_b` accumulate into `grads`.
pub fn completion_batch(
    net: &CompletionNet,
    codes: ArrayView2<'_, f64>,
    samples: &[&[SdfSample]],
    sigma_prior: f64,
    weights: &[f64],
    grads: &mut NetGrads,
    rng: &mut ChaCha8Rng,
) -> Result<CompletionBatch> {
    let b = codes.nrows();
    if samples.len() != b || weights.len() != b {
        return invalid("completion batch needs one sample list and weight per code");
    }
    if samples.iter().any(|s| s.is_empty()) {
        return invalid("completion loss needs at least one sample");
    }
    if !(sigma_prior > 0.0) {
        return invalid("prior scale must be positive");
    }
    let mut segments = Vec::with_capacity(b);
    let mut locations = Vec::new();
    for s in samples {
        let start = locations.len();
        locations.extend(s.iter().map(|x| x.location));
        segments.push(start..locations.len());
    }
    let coords = points_matrix(&locations);
    let (pred, mut trace) = net.params.forward(StackInput::Latent { codes, coords: coords.view(), segments: &segments }, rng)?;
    let inv_var = 1.0 / (sigma_prior * sigma_prior);
    let mut losses = Vec::with_capacity(b);
    let mut grad_out = Array2::<f64>::zeros(pred.raw_dim());
    for (k, seg) in segments.iter().enumerate() {
        let count = seg.len() as f64;
        let mut data = 0.0;
        for (row, sample) in seg.clone().zip(samples[k].iter()) {
            let p = pred[[row, 0]];
            let diff = clamp_sdf(p) - clamp_sdf(sample.distance);
            data += diff.abs();
            // Both clamped: flat, no gradient. A prediction that left the band while its target
            // is inside it still gets the sign of the error, otherwise on-surface samples could
            // never pull it back. An exact match is a kink with subgradient 0.
            let active = p.abs() < SDF_CLAMP || sample.distance.abs() < SDF_CLAMP;
            if active && diff != 0.0 {
                grad_out[[row, 0]] = weights[k] * diff.signum() / count;
            }
        }
        let code = codes.row(k);
        losses.push(data / count + inv_var * code.dot(&code));
    }
    let stats = trace.batch_stats()?;
    let mut code_grads = net.params.backward(&mut trace, grad_out, grads)?.into_array();
    for (k, w) in weights.iter().enumerate().take(b) {
        code_grads.row_mut(k).scaled_add(2.0 * inv_var * w, &codes.row(k));
    }
    Ok(CompletionBatch { losses, code_grads, stats })
}

pub fn completion_loss(net: &CompletionNet, z: &LatentCode, samples: &[SdfSample], sigma_prior: f64) -> Result<f64> {
    let mut scratch = net.params.zero_grads();
    let out = completion_batch(net, z.as_row(), &[samples], sigma_prior, &[1.0], &mut scratch, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(out.losses[0])
}

/// Loss, parameter gradients and the gradient with respect to `z`.
pub fn completion_loss_grad(
    net: &CompletionNet,
    z: &LatentCode,
    samples: &[SdfSample],
    sigma_prior: f64,
) -> Result<(f64, NetGrads, Array1<f64>)> {
    let mut grads = net.params.zero_grads();
    let out = completion_batch(net, z.as_row(), &[samples], sigma_prior, &[1.0], &mut grads, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok((out.losses[0], grads, out.code_grads.row(0).to_owned()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub resolution: usize,
    pub bound: f64,
    pub iso_eps: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 64, bound: 1.2, iso_eps: 0.01 }
    }
}

/// Centers of the grid cells over `[-bound, bound]^3` whose predicted distance is below `iso_eps`.
///
/// Returns `None` when no cell qualifies.
pub fn extract_completed_points(net: &CompletionNet, z: &LatentCode, grid: &GridConfig) -> Result<Option<PointSet>> {
    if grid.resolution == 0 || !(grid.bound > 0.0) {
        return invalid("grid needs a positive resolution and bound");
    }
    let n = grid.resolution;
    let cell = 2.0 * grid.bound / n as f64;
    let center = |i: usize| -grid.bound + (i as f64 + 0.5) * cell;
    let mut kept = Vec::new();
    let mut chunk = Vec::with_capacity(n * n);
    for i in 0..n {
        chunk.clear();
        for j in 0..n {
            for k in 0..n {
                chunk.push(Point::new(center(i), center(j), center(k)));
            }
        }
        for (p, d) in chunk.iter().zip(net.sdf_batch(z, &chunk)?) {
            if d < grid.iso_eps {
                kept.push(*p);
            }
        }
    }
    if kept.is_empty() {
        log::warn!("grid extraction found no cells below {}", grid.iso_eps);
        return Ok(None);
    }
    Ok(Some(PointSet::new(kept, SetTag::Full, z.shape_id.clone())?))
}
