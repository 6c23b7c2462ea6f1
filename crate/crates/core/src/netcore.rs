//! Layer stacks with hand-written reverse-mode gradients, per-point max pooling
//! and the Adam optimizer.
//!
//! A stack maps each input row independently (apart from batch normalization in
//! training mode, which couples rows through the batch statistics). The first
//! layer may take a *latent* input: row `r` is the concatenation of the code of
//! its segment and the row's own coordinates. The code block of the product is
//! computed once per segment rather than once per row.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Kernel-size-1 convolution: one weight matrix shared by every point.
    PointwiseLinear,
    FullyConnected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
    pub dropout: Option<f64>,
    pub relu: bool,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Options applied when building a stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackOptions {
    pub batch_norm: bool,
    pub dropout: Option<f64>,
    /// Multiplier on the initial weights of the final layer.
    pub output_gain: f64,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self { batch_norm: false, dropout: None, output_gain: 1.0 }
    }
}

/// Ordered layer stack; hidden layers use ReLU, the last layer is linear unless
/// the stack is built as a feature extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub layers: Vec<Layer>,
    pub mode: Mode,
}

/// Input of the first layer.
#[derive(Clone, Copy, Debug)]
pub enum StackInput<'a> {
    Dense(ArrayView2<'a, f64>),
    /// Row `r` of the logical input is `[codes[b] | coords[r]]` where `r` lies in `segments[b]`.
    Latent {
        codes: ArrayView2<'a, f64>,
        coords: ArrayView2<'a, f64>,
        segments: &'a [Range<usize>],
    },
}

impl StackInput<'_> {
    fn rows(&self) -> usize {
        match self {
            StackInput::Dense(x) => x.nrows(),
            StackInput::Latent { coords, .. } => coords.nrows(),
        }
    }

    fn width(&self) -> usize {
        match self {
            StackInput::Dense(x) => x.ncols(),
            StackInput::Latent { codes, coords, .. } => codes.ncols() + coords.ncols(),
        }
    }
}

enum CachedInput {
    Dense(Array2<f64>),
    Latent { codes: Array2<f64>, coords: Array2<f64>, segments: Vec<Range<usize>> },
}

struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    batch_stats: bool,
}

struct LayerCache {
    input: CachedInput,
    norm: Option<NormCache>,
    /// Post-normalization pre-activation, used for the ReLU mask.
    pre_act: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
}

/// Forward record needed by [`NetParams::backward`]; consumed by the first backward pass.
pub struct StackTrace {
    layers: Option<Vec<LayerCache>>,
}

impl StackTrace {
    pub fn is_consumed(&self) -> bool {
        self.layers.is_none()
    }

    /// Per-layer batch mean and variance of normalized layers that used batch statistics.
    pub fn batch_stats(&self) -> Result<BatchStats> {
        let caches = self.layers.as_ref().ok_or_else(|| Error::State("trace already consumed".into()))?;
        let layers =
            caches.iter().map(|c| c.norm.as_ref().filter(|n| n.batch_stats).map(|n| (n.batch_mean.clone(), n.batch_var.clone()))).collect();
        Ok(BatchStats { layers })
    }
}

/// Batch-normalization statistics captured from one training-mode forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub layers: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

impl BatchStats {
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Option<Array1<f64>>,
    pub shift: Option<Array1<f64>>,
}

/// Gradient buffer congruent with a [`NetParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

/// Gradient with respect to the stack's input.
pub enum InputGrad {
    Dense(Array2<f64>),
    /// Gradient for each segment's code (coordinates are treated as constants).
    Latent(Array2<f64>),
}

impl InputGrad {
    pub fn into_array(self) -> Array2<f64> {
        match self {
            InputGrad::Dense(a) | InputGrad::Latent(a) => a,
        }
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })
}

impl NetParams {
    /// Builds a stack with widths `dims[0] -> dims[1] -> ...`.
    ///
    /// Weights are uniform with fan-in scaling `sqrt(6 / fan_in)`, biases zero.
    /// When `linear_output` is set the final layer has no activation, normalization or dropout.
    pub fn new(kind: LayerKind, dims: &[usize], linear_output: bool, opts: &StackOptions, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return invalid(format!("bad layer widths {dims:?}"));
        }
        if let Some(p) = opts.dropout {
            if !(0.0..1.0).contains(&p) {
                return invalid(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        let count = dims.len() - 1;
        let layers = (0..count)
            .map(|i| {
                let last = i + 1 == count;
                let plain = last && linear_output;
                let fan_in = dims[i];
                let gain = if last { opts.output_gain } else { 1.0 };
                let bound = gain * (6.0 / fan_in as f64).sqrt();
                Layer {
                    kind,
                    weight: uniform_matrix(dims[i + 1], fan_in, bound, rng),
                    bias: Array1::zeros(dims[i + 1]),
                    norm: (opts.batch_norm && !plain && kind == LayerKind::FullyConnected).then(|| BatchNorm::new(dims[i + 1])),
                    dropout: if plain || kind != LayerKind::FullyConnected { None } else { opts.dropout },
                    relu: !plain,
                }
            })
            .collect();
        Ok(Self { layers, mode: Mode::Eval })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty stack").out_dim()
    }

    /// Checks the invariants: chained widths, finite parameters, positive variances.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return invalid("empty layer stack");
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return invalid(format!("layer {i} outputs {} but layer {} takes {}", pair[0].out_dim(), i + 1, pair[1].in_dim()));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return invalid(format!("layer {i} bias width mismatch"));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            if let Some(n) = &l.norm {
                if n.running_var.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                    return invalid(format!("layer {i} running variance must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    scale: l.norm.as_ref().map(|n| Array1::zeros(n.scale.len())),
                    shift: l.norm.as_ref().map(|n| Array1::zeros(n.shift.len())),
                })
                .collect(),
        }
    }

    /// Forward pass. `rng` is only drawn from for dropout masks in training mode.
    pub fn forward(&self, input: StackInput<'_>, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, StackTrace)> {
        if input.width() != self.in_dim() {
            return invalid(format!("input width {} does not match layer width {}", input.width(), self.in_dim()));
        }
        if input.rows() == 0 {
            return invalid("forward pass needs at least one row");
        }
        if let StackInput::Latent { segments, codes, coords } = input {
            if segments.len() != codes.nrows() || segments.last().map(|s| s.end) != Some(coords.nrows()) {
                return invalid("latent segments do not cover the coordinate rows");
            }
        }
        let train = self.mode == Mode::Train;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current: Option<Array2<f64>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let cached_input = match (i, &current) {
                (0, _) => match input {
                    StackInput::Dense(x) => CachedInput::Dense(x.to_owned()),
                    StackInput::Latent { codes, coords, segments } => {
                        CachedInput::Latent { codes: codes.to_owned(), coords: coords.to_owned(), segments: segments.to_vec() }
                    }
                },
                (_, Some(x)) => CachedInput::Dense(x.clone()),
                _ => unreachable!(),
            };
            let mut pre = linear(layer, &cached_input);
            let norm_cache = layer.norm.as_ref().map(|bn| normalize(bn, &mut pre, train));
            let mut out = if layer.relu { pre.mapv(|v| v.max(0.0)) } else { pre.clone() };
            let dropout_mask = match layer.dropout {
                Some(p) if train && p > 0.0 => {
                    let keep = 1.0 - p;
                    let mask = Array2::from_shape_simple_fn(out.raw_dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    out *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            caches.push(LayerCache { input: cached_input, norm: norm_cache, pre_act: pre, dropout_mask });
            current = Some(out);
        }
        Ok((current.expect("nonempty stack"), StackTrace { layers: Some(caches) }))
    }

    /// Forward pass without keeping a trace.
    pub fn evaluate(&self, input: StackInput<'_>, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        self.forward(input, rng).map(|(out, _)| out)
    }

    /// Reverse pass for a recorded forward. Accumulates into `grads` and returns the input gradient.
    pub fn backward(&self, trace: &mut StackTrace, grad_out: Array2<f64>, grads: &mut NetGrads) -> Result<InputGrad> {
        let caches = trace.layers.take().ok_or_else(|| Error::State("backward called twice for one forward pass".into()))?;
        let mut g = grad_out;
        let mut input_grad = None;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            if let Some(mask) = &cache.dropout_mask {
                g *= mask;
            }
            if layer.relu {
                ndarray::Zip::from(&mut g).and(&cache.pre_act).for_each(|gv, &p| {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let lg = &mut grads.layers[i];
            if let (Some(bn), Some(nc)) = (&layer.norm, &cache.norm) {
                g = normalize_backward(bn, nc, g, lg);
            }
            lg.bias += &g.sum_axis(Axis(0));
            match &cache.input {
                CachedInput::Dense(x) => {
                    lg.weight += &g.t().dot(x);
                    if i > 0 {
                        g = g.dot(&layer.weight);
                    } else {
                        input_grad = Some(InputGrad::Dense(g.dot(&layer.weight)));
                    }
                }
                CachedInput::Latent { codes, coords, segments } => {
                    let p = codes.ncols();
                    let mut seg_sum = Array2::<f64>::zeros((segments.len(), g.ncols()));
                    for (b, seg) in segments.iter().enumerate() {
                        seg_sum.row_mut(b).assign(&g.slice(s![seg.clone(), ..]).sum_axis(Axis(0)));
                    }
                    lg.weight.slice_mut(s![.., ..p]).scaled_add(1.0, &seg_sum.t().dot(codes));
                    lg.weight.slice_mut(s![.., p..]).scaled_add(1.0, &g.t().dot(coords));
                    input_grad = Some(InputGrad::Latent(seg_sum.dot(&layer.weight.slice(s![.., ..p]))));
                }
            }
        }
        Ok(input_grad.expect("first layer visited"))
    }

    /// Folds batch statistics recorded by a training-mode forward into the running estimates.
    pub fn absorb_batch_stats(&mut self, stats: &BatchStats) -> Result<()> {
        if stats.layers.len() != self.layers.len() {
            return invalid("batch statistics do not match the layer count");
        }
        for (layer, entry) in self.layers.iter_mut().zip(&stats.layers) {
            if let (Some(bn), Some((mean, var))) = (&mut layer.norm, entry) {
                let m = bn.momentum;
                bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
                bn.running_var = &bn.running_var * (1.0 - m) + var * m;
            }
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order, named for error messages.
    pub fn param_slices_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.layer{i}.weight"), l.weight.as_slice_mut().expect("standard layout")));
            out.push((format!("{prefix}.layer{i}.bias"), l.bias.as_slice_mut().expect("standard layout")));
            if let Some(n) = &mut l.norm {
                out.push((format!("{prefix}.layer{i}.scale"), n.scale.as_slice_mut().expect("standard layout")));
                out.push((format!("{prefix}.layer{i}.shift"), n.shift.as_slice_mut().expect("standard layout")));
            }
        }
        out
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}

impl NetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            if let (Some(a), Some(b)) = (&l.scale, &l.shift) {
                out.push(a.as_slice().expect("standard layout"));
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
            for v in [&mut l.scale, &mut l.shift].into_iter().flatten() {
                *v *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

fn linear(layer: &Layer, input: &CachedInput) -> Array2<f64> {
    match input {
        CachedInput::Dense(x) => {
            let mut y = x.dot(&layer.weight.t());
            y += &layer.bias;
            y
        }
        CachedInput::Latent { codes, coords, segments } => {
            let p = codes.ncols();
            let mut y = coords.dot(&layer.weight.slice(s![.., p..]).t());
            let mut shared = codes.dot(&layer.weight.slice(s![.., ..p]).t());
            shared += &layer.bias;
            for (b, seg) in segments.iter().enumerate() {
                y.slice_mut(s![seg.clone(), ..]).scaled_add(1.0, &shared.row(b));
            }
            y
        }
    }
}

fn normalize(bn: &BatchNorm, pre: &mut Array2<f64>, train: bool) -> NormCache {
    let (mean, var, batch_stats) = if train && pre.nrows() > 1 {
        let mean = pre.mean_axis(Axis(0)).expect("rows");
        let var = pre.var_axis(Axis(0), 0.0);
        (mean, var, true)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone(), false)
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let normalized = (&*pre - &mean) * &inv_std;
    *pre = &normalized * &bn.scale + &bn.shift;
    NormCache { normalized, inv_std, batch_mean: mean, batch_var: var, batch_stats }
}

fn normalize_backward(bn: &BatchNorm, nc: &NormCache, g: Array2<f64>, lg: &mut LayerGrads) -> Array2<f64> {
    if let Some(s) = &mut lg.scale {
        *s += &(&g * &nc.normalized).sum_axis(Axis(0));
    }
    if let Some(s) = &mut lg.shift {
        *s += &g.sum_axis(Axis(0));
    }
    let dxhat = g * &bn.scale;
    if !nc.batch_stats {
        return dxhat * &nc.inv_std;
    }
    let n = dxhat.nrows() as f64;
    let sum_d = dxhat.sum_axis(Axis(0));
    let sum_dx = (&dxhat * &nc.normalized).sum_axis(Axis(0));
    let mut out = dxhat * n;
    out -= &sum_d;
    out -= &(&nc.normalized * &sum_dx);
    out * &(&nc.inv_std / n)
}

/// Column-wise maximum with the arg-max row of each column; ties go to the lowest row.
pub fn max_pool_points(inputs: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Vec<usize>)> {
    if inputs.nrows() == 0 {
        return invalid("max pooling needs at least one row");
    }
    let mut best = inputs.row(0).to_owned();
    let mut idx = vec![0; inputs.ncols()];
    for (r, row) in inputs.outer_iter().enumerate().skip(1) {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                idx[c] = r;
            }
        }
    }
    Ok((best, idx))
}

/// Routes a pooled gradient back to the arg-max rows.
pub fn max_pool_backward(grad: &Array1<f64>, argmax: &[usize], rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, grad.len()));
    for (c, (&g, &r)) in grad.iter().zip(argmax).enumerate() {
        out[[r, c]] += g;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Moment estimates for a fixed, ordered list of tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// One Adam update of `params` from `grads` (same order and shapes).
    ///
    /// All gradients are checked for finiteness before anything is modified.
    pub fn step(&mut self, params: Vec<(String, &mut [f64])>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return invalid(format!("{} parameter tensors but {} gradient tensors", params.len(), grads.len()));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return invalid(format!("gradient for {name} has {} entries, expected {}", g.len(), p.len()));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() || self.first.iter().zip(&params).any(|(m, (_, p))| m.len() != p.len()) {
            return invalid("optimizer state does not match the parameter shapes");
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((_, p), g), (m, v)) in params.into_iter().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                p[i] -= c.lr * (update + c.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn naive_matmul(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), w.nrows()));
        for r in 0..x.nrows() {
            for o in 0..w.nrows() {
                let mut acc = b[o];
                for k in 0..x.ncols() {
                    acc += w[[o, k]] * x[[r, k]];
                }
                out[[r, o]] = acc;
            }
        }
        out
    }

    fn single_layer(w: Array2<f64>, relu: bool) -> NetParams {
        let out = w.nrows();
        NetParams {
            layers: vec![Layer { kind: LayerKind::PointwiseLinear, weight: w, bias: Array1::zeros(out), norm: None, dropout: None, relu }],
            mode: Mode::Eval,
        }
    }

    #[test]
    fn identity_layer_passes_positive_rows() {
        let net = single_layer(Array2::eye(3), true);
        let x = array![[0.5, 1.0, 2.0], [3.0, 0.25, 0.125]];
        let y = net.evaluate(StackInput::Dense(x.view()), &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_computed_row() {
        let net = single_layer(array![[1.0, 1.0], [0.0, 1.0]], false);
        let y = net.evaluate(StackInput::Dense(array![[1.0, 2.0]].view()), &mut rng()).unwrap();
        assert_eq!(y, array![[3.0, 2.0]]);
    }

    #[test]
    fn layer_matches_naive_matmul() {
        let mut r = rng();
        let net = NetParams::new(LayerKind::PointwiseLinear, &[7, 5], true, &StackOptions::default(), &mut r).unwrap();
        let mut layer = net.layers[0].clone();
        layer.bias = Array1::from_shape_simple_fn(5, || r.random_range(-1.0..1.0));
        let net = NetParams { layers: vec![layer.clone()], mode: Mode::Eval };
        let x = Array2::from_shape_simple_fn((11, 7), || r.random_range(-1.0..1.0));
        let y = net.evaluate(StackInput::Dense(x.view()), &mut r).unwrap();
        let oracle = naive_matmul(&x, &layer.weight, &layer.bias);
        assert!((&y - &oracle).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn latent_input_equals_concatenated_rows() {
        let mut r = rng();
        let net = NetParams::new(LayerKind::PointwiseLinear, &[6, 4, 2], true, &StackOptions::default(), &mut r).unwrap();
        let codes = Array2::from_shape_simple_fn((2, 3), || r.random_range(-1.0..1.0));
        let coords = Array2::from_shape_simple_fn((5, 3), || r.random_range(-1.0..1.0));
        let segments = vec![0..2, 2..5];
        let latent = net.evaluate(StackInput::Latent { codes: codes.view(), coords: coords.view(), segments: &segments }, &mut r).unwrap();
        let mut dense = Array2::zeros((5, 6));
        for row in 0..5 {
            let b = if row < 2 { 0 } else { 1 };
            dense.slice_mut(s![row, ..3]).assign(&codes.row(b));
            dense.slice_mut(s![row, 3..]).assign(&coords.row(row));
        }
        let reference = net.evaluate(StackInput::Dense(dense.view()), &mut r).unwrap();
        assert!((&latent - &reference).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = single_layer(Array2::eye(3), false);
        assert!(net.evaluate(StackInput::Dense(Array2::zeros((2, 4)).view()), &mut rng()).is_err());
        assert!(NetParams::new(LayerKind::FullyConnected, &[3], true, &StackOptions::default(), &mut rng()).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let (v, i) = max_pool_points(array![[1.0, 5.0], [3.0, 2.0]].view()).unwrap();
        assert_eq!(v, array![3.0, 5.0]);
        assert_eq!(i, vec![1, 0]);
        let (v, _) = max_pool_points(array![[4.0, -1.0]].view()).unwrap();
        assert_eq!(v, array![4.0, -1.0]);
        let (_, i) = max_pool_points(array![[2.0], [2.0]].view()).unwrap();
        assert_eq!(i, vec![0]);
        assert!(max_pool_points(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn backward_twice_is_a_state_error() {
        let net = single_layer(Array2::eye(2), true);
        let x = array![[1.0, 2.0]];
        let (_, mut trace) = net.forward(StackInput::Dense(x.view()), &mut rng()).unwrap();
        let mut g = net.zero_grads();
        net.backward(&mut trace, Array2::ones((1, 2)), &mut g).unwrap();
        assert!(trace.is_consumed());
        assert!(matches!(net.backward(&mut trace, Array2::ones((1, 2)), &mut g), Err(Error::State(_))));
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        // d/dz of 0.5 |W z| ^ 2 with W = I is z itself.
        let net = single_layer(Array2::eye(4), false);
        let z = array![[0.3, -1.2, 2.5, 0.0]];
        let (out, mut trace) = net.forward(StackInput::Dense(z.view()), &mut rng()).unwrap();
        let mut g = net.zero_grads();
        let dz = net.backward(&mut trace, out.clone(), &mut g).unwrap().into_array();
        assert_eq!(dz, z);
    }

    #[test]
    fn adam_zero_gradient_is_noop_without_decay() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        st.step(vec![("p".into(), &mut p[..])], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(AdamConfig { lr: 0.0, ..Default::default() });
        st.step(vec![("p".into(), &mut p[..])], &[&[0.7, -3.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_against_gradient() {
        let mut p = [0.5, 0.5, 0.5];
        let g = [2.0, -0.001, 40.0];
        let mut st = AdamState::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        st.step(vec![("p".into(), &mut p[..])], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert_eq!((pi - 0.5).signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut w = [1.0];
        let mut st = AdamState::new(AdamConfig { weight_decay: 0.0, lr: 1e-2, ..Default::default() });
        let mut prev = w[0] * w[0];
        for _ in 0..100 {
            let g = [2.0 * w[0]];
            st.step(vec![("w".into(), &mut w[..])], &[&g]).unwrap();
            let f = w[0] * w[0];
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient_by_name() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(AdamConfig::default());
        let err = st.step(vec![("head.bias".into(), &mut p[..])], &[&[f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("head.bias"));
        assert_eq!(p, vec![1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn validate_catches_broken_chains() {
        let mut net = NetParams::new(LayerKind::FullyConnected, &[3, 4, 2], true, &StackOptions::default(), &mut rng()).unwrap();
        net.validate().unwrap();
        net.layers[1].weight = Array2::zeros((2, 5));
        assert!(net.validate().is_err());
    }
}
