//! Transform-regression auto-decoder and the clipped-Chamfer registration loss.
//!
//! Every source point is stacked with the target's latent code, passed through
//! shared per-point layers, max-pooled, and mapped by a small fully connected
//! head to `(rx, ry, rz, tx, ty, tz)`.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::completion::{points_matrix, LatentCode, LATENT_DIM};
use crate::error::{invalid, Result};
use crate::geometry::{clipped_chamfer_grad, rotation_jacobian, Point, PointSet, RigidTransform};
use crate::netcore::{
    max_pool_backward, max_pool_points, BatchStats, LayerKind, NetGrads, NetParams, StackInput, StackOptions, StackTrace,
};

/// Euler angles plus translation.
pub const HEAD_WIDTH: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub batch_norm: bool,
    pub dropout: Option<f64>,
    pub output_gain: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { point_widths: vec![256, 128], head_widths: vec![128, 64], batch_norm: false, dropout: None, output_gain: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationNet {
    /// Per-point layers before pooling.
    pub features: NetParams,
    /// Fully connected layers after pooling, ending in the 6-wide linear output.
    pub head: NetParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationGrads {
    pub features: NetGrads,
    pub head: NetGrads,
}

impl RegistrationNet {
    pub fn new(cfg: &RegistrationConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.point_widths.is_empty() {
            return invalid("registration decoder needs at least one per-point layer");
        }
        let mut point_dims = vec![LATENT_DIM + 3];
        point_dims.extend(&cfg.point_widths);
        let mut head_dims = vec![*cfg.point_widths.last().expect("nonempty")];
        head_dims.extend(&cfg.head_widths);
        head_dims.push(HEAD_WIDTH);
        let point_opts = StackOptions::default();
        let head_opts = StackOptions { batch_norm: cfg.batch_norm, dropout: cfg.dropout, output_gain: cfg.output_gain };
        Ok(Self {
            features: NetParams::new(LayerKind::PointwiseLinear, &point_dims, false, &point_opts, rng)?,
            head: NetParams::new(LayerKind::FullyConnected, &head_dims, true, &head_opts, rng)?,
        })
    }

    pub fn zero_grads(&self) -> RegistrationGrads {
        RegistrationGrads { features: self.features.zero_grads(), head: self.head.zero_grads() }
    }

    pub fn set_mode(&mut self, mode: crate::netcore::Mode) {
        self.features.set_mode(mode);
        self.head.set_mode(mode);
    }

    /// Raw head outputs, one row per `(code, source)` item.
    pub fn forward_batch(
        &self,
        codes: ArrayView2<'_, f64>,
        sources: &[&[Point]],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, RegistrationTrace)> {
        if codes.nrows() != sources.len() {
            return invalid("one latent code per source is required");
        }
        if sources.iter().any(|s| s.is_empty()) {
            return invalid("source point sets must be nonempty");
        }
        let mut segments: Vec<Range<usize>> = Vec::with_capacity(sources.len());
        let mut all = Vec::new();
        for s in sources {
            let start = all.len();
            all.extend_from_slice(s);
            segments.push(start..all.len());
        }
        let coords = points_matrix(&all);
        let (feats, feat_trace) = self.features.forward(StackInput::Latent { codes, coords: coords.view(), segments: &segments }, rng)?;
        let mut pooled = Array2::zeros((sources.len(), feats.ncols()));
        let mut argmax = Vec::with_capacity(sources.len());
        for (b, seg) in segments.iter().enumerate() {
            let (v, idx) = max_pool_points(feats.slice(s![seg.clone(), ..]))?;
            pooled.row_mut(b).assign(&v);
            argmax.push(idx);
        }
        let (out, head_trace) = self.head.forward(StackInput::Dense(pooled.view()), rng)?;
        Ok((out, RegistrationTrace { feat_trace, head_trace, segments, argmax, feat_width: feats.ncols() }))
    }

    /// Accumulates parameter gradients and returns the gradient for each code.
    pub fn backward(&self, trace: &mut RegistrationTrace, grad_out: Array2<f64>, grads: &mut RegistrationGrads) -> Result<Array2<f64>> {
        let dpooled = self.head.backward(&mut trace.head_trace, grad_out, &mut grads.head)?.into_array();
        let total = trace.segments.last().map_or(0, |s| s.end);
        let mut dfeat = Array2::zeros((total, trace.feat_width));
        for (b, seg) in trace.segments.iter().enumerate() {
            let local = max_pool_backward(&dpooled.row(b).to_owned(), &trace.argmax[b], seg.len());
            dfeat.slice_mut(s![seg.clone(), ..]).assign(&local);
        }
        Ok(self.features.backward(&mut trace.feat_trace, dfeat, &mut grads.features)?.into_array())
    }

    /// Trainable tensors of both stacks.
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut v = self.features.param_slices_mut("registration.features");
        v.extend(self.head.param_slices_mut("registration.head"));
        v
    }
}

impl RegistrationGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.features.slices();
        v.extend(self.head.slices());
        v
    }

    pub fn scale(&mut self, factor: f64) {
        self.features.scale(factor);
        self.head.scale(factor);
    }
}

pub struct RegistrationTrace {
    feat_trace: StackTrace,
    head_trace: StackTrace,
    segments: Vec<Range<usize>>,
    argmax: Vec<Vec<usize>>,
    feat_width: usize,
}

/// Rigid transform predicted for `source` under code `z` (evaluation mode, no trace kept).
pub fn predict_transform(net: &RegistrationNet, z: &LatentCode, source: &PointSet) -> Result<RigidTransform> {
    let (out, _) = net.forward_batch(z.as_row(), &[source.points()], &mut ChaCha8Rng::seed_from_u64(0))?;
    RigidTransform::from_params(out.row(0).as_slice().expect("contiguous row"))
}

/// Clipped Chamfer loss of `source` moved by the transform `params`, and its
/// gradient with respect to those six parameters.
pub fn transform_loss_grad(params: &[f64], source: &[Point], target: &[Point], sigma_t: f64) -> Result<(f64, [f64; 6])> {
    let t = RigidTransform::from_params(params)?;
    let map = t.to_map()?;
    let moved: Vec<Point> = source.iter().map(|x| map.apply_point(x)).collect();
    let (loss, point_grads) = clipped_chamfer_grad(&moved, target, sigma_t)?;
    let jac = rotation_jacobian(&t.angles)?;
    let mut g = [0.0; 6];
    for (x, gp) in source.iter().zip(&point_grads) {
        for k in 0..3 {
            g[k] += gp.dot(&(jac[k] * x));
            g[3 + k] += gp[k];
        }
    }
    Ok((loss, g))
}

pub struct RegistrationBatch {
    pub losses: Vec<f64>,
    pub transforms: Vec<RigidTransform>,
    pub code_grads: Array2<f64>,
    /// Batch-normalization statistics of the head, empty in evaluation mode.
    pub head_stats: BatchStats,
}

/// Per-item registration losses; gradients of `sum_b weights[b] * loss_b` accumulate into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn registration_batch(
    net: &RegistrationNet,
    codes: ArrayView2<'_, f64>,
    sources: &[&[Point]],
    targets: &[&[Point]],
    sigma_t: f64,
    weights: &[f64],
    grads: &mut RegistrationGrads,
    rng: &mut ChaCha8Rng,
) -> Result<RegistrationBatch> {
    if targets.len() != sources.len() || weights.len() != sources.len() {
        return invalid("registration batch needs one target and weight per source");
    }
    let (out, mut trace) = net.forward_batch(codes, sources, rng)?;
    let mut grad_out = Array2::zeros(out.raw_dim());
    let mut losses = Vec::with_capacity(sources.len());
    let mut transforms = Vec::with_capacity(sources.len());
    for (b, row) in out.axis_iter(Axis(0)).enumerate() {
        let params = row.as_slice().expect("contiguous row");
        let (loss, g) = transform_loss_grad(params, sources[b], targets[b], sigma_t)?;
        losses.push(loss);
        transforms.push(RigidTransform::from_params(params)?);
        grad_out.row_mut(b).assign(&(Array1::from(g.to_vec()) * weights[b]));
    }
    let head_stats = trace.head_trace.batch_stats()?;
    let code_grads = net.backward(&mut trace, grad_out, grads)?;
    Ok(RegistrationBatch { losses, transforms, code_grads, head_stats })
}

/// `clipped_chamfer(apply(source, predict_transform(z, source)), target, sigma_t)`.
pub fn registration_loss(net: &RegistrationNet, z: &LatentCode, source: &PointSet, target: &PointSet, sigma_t: f64) -> Result<f64> {
    let t = predict_transform(net, z, source)?;
    let params = t.params();
    Ok(transform_loss_grad(&params, source.points(), target.points(), sigma_t)?.0)
}

/// Loss, parameter gradients and the gradient with respect to `z`.
pub fn registration_loss_grad(
    net: &RegistrationNet,
    z: &LatentCode,
    source: &PointSet,
    target: &PointSet,
    sigma_t: f64,
) -> Result<(f64, RegistrationGrads, Array1<f64>)> {
    let mut grads = net.zero_grads();
    let out = registration_batch(
        net,
        z.as_row(),
        &[source.points()],
        &[target.points()],
        sigma_t,
        &[1.0],
        &mut grads,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    Ok((out.losses[0], grads, out.code_grads.row(0).to_owned()))
}
