//! Joint training of both decoders with one latent code per target shape, and
//! per-pair latent optimization with the decoders frozen.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::completion::{
    completion_batch, extract_completed_points, init_latent_with, CompletionConfig, CompletionNet, GridConfig, LatentCode, LATENT_DIM,
};
use crate::datagen::{make_sdf_samples, stream_rng, RegistrationPair, SdfSample};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point, PointSet, RigidTransform};
use crate::netcore::{AdamConfig, AdamState, Mode};
use crate::registration::{registration_batch, RegistrationConfig, RegistrationNet};

/// Checkpoint format revision.
pub const CHECKPOINT_VERSION: u32 = 1;

const STREAM_INIT: u64 = 0x1a7e_0001;
const STREAM_SHUFFLE: u64 = 0x1a7e_0002;
const STREAM_STEP: u64 = 0x1a7e_0003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub sigma_t: f64,
    pub sigma_prior: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_net: f64,
    pub lr_latent: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub batch_norm: bool,
    pub dropout: Option<f64>,
    /// Selects the two-step variant when the trained model is used for inference.
    pub two_step: bool,
    /// SDF samples drawn per item and step; `None` uses all of them.
    pub sdf_per_step: Option<usize>,
    pub registration: RegistrationConfig,
    pub completion: CompletionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            sigma_t: 0.1,
            sigma_prior: 100.0,
            epochs: 2000,
            batch_size: 50,
            lr_net: 1e-3,
            lr_latent: 1e-3,
            weight_decay: 1e-5,
            seed: 0,
            batch_norm: false,
            dropout: None,
            two_step: false,
            sdf_per_step: None,
            registration: RegistrationConfig::default(),
            completion: CompletionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return invalid(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if !(self.sigma_t > 0.0) || !(self.sigma_prior > 0.0) {
            return invalid("clip threshold and prior scale must be positive");
        }
        if !(self.lr_net >= 0.0 && self.lr_latent >= 0.0 && self.weight_decay >= 0.0) {
            return invalid("learning rates and weight decay must be nonnegative");
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return invalid(format!("dropout rate must lie in [0, 1), got {p}"));
            }
        }
        if self.sdf_per_step == Some(0) {
            return invalid("at least one SDF sample per step is needed");
        }
        Ok(())
    }
}

/// Both decoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub registration: RegistrationNet,
    pub completion: CompletionNet,
}

impl Model {
    pub fn new(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut reg = cfg.registration.clone();
        let mut com = cfg.completion.clone();
        reg.batch_norm |= cfg.batch_norm;
        com.batch_norm |= cfg.batch_norm;
        if cfg.dropout.is_some() {
            reg.dropout = cfg.dropout;
            com.dropout = cfg.dropout;
        }
        Ok(Self { registration: RegistrationNet::new(&reg, rng)?, completion: CompletionNet::new(&com, rng)? })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.registration.set_mode(mode);
        self.completion.params.set_mode(mode);
    }

    fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut v = self.registration.param_slices_mut();
        v.extend(self.completion.params.param_slices_mut("completion"));
        v
    }
}

/// One training or evaluation pair as seen by the optimizer.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub source: PointSet,
    /// Registration target; the full target during training.
    pub target: PointSet,
    /// Distance samples of the same target.
    pub sdf: Vec<SdfSample>,
}

impl TrainItem {
    /// Training view of a pair: the full target and its distance samples.
    pub fn training(pair: &RegistrationPair) -> Self {
        Self { source: pair.source.clone(), target: pair.target_full.clone(), sdf: make_sdf_samples(&pair.target_full, pair.seed) }
    }

    /// Evaluation view of a pair: only the partial target is observed.
    pub fn observed(pair: &RegistrationPair) -> Self {
        Self { source: pair.source.clone(), target: pair.target_partial.clone(), sdf: make_sdf_samples(&pair.target_partial, pair.seed) }
    }
}

/// One row of the training or inference log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    #[serde(rename = "L_reg")]
    pub l_reg: f64,
    #[serde(rename = "L_com")]
    pub l_com: f64,
    pub total: f64,
}

/// Everything needed to resume training bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub model: Model,
    /// One code per training target, in item order.
    pub latents: Vec<LatentCode>,
    pub net_optimizer: AdamState,
    pub latent_optimizer: AdamState,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.model.registration.features.validate()?;
        ck.model.registration.head.validate()?;
        ck.model.completion.params.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Training state. Holds the last good state if a step fails.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub state: Checkpoint,
    pub log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, targets: usize) -> Result<Self> {
        cfg.validate()?;
        if targets == 0 {
            return invalid("training needs at least one pair");
        }
        let mut rng = stream_rng(cfg.seed, STREAM_INIT);
        let model = Model::new(&cfg, &mut rng)?;
        let latents = (0..targets).map(|i| init_latent_with(&mut rng, format!("target{i}"))).collect();
        let net_optimizer = AdamState::new(AdamConfig { lr: cfg.lr_net, weight_decay: cfg.weight_decay, ..Default::default() });
        let latent_optimizer = AdamState::new(AdamConfig { lr: cfg.lr_latent, weight_decay: 0.0, ..Default::default() });
        let seed = cfg.seed;
        Ok(Self {
            state: Checkpoint { version: CHECKPOINT_VERSION, config: cfg, model, latents, net_optimizer, latent_optimizer, seed, step: 0 },
            log: Vec::new(),
        })
    }

    pub fn resume(state: Checkpoint) -> Self {
        Self { state, log: Vec::new() }
    }

    fn batches_per_epoch(&self) -> usize {
        self.state.latents.len().div_ceil(self.state.config.batch_size)
    }

    /// Item indices of the batch used by optimizer step `step`.
    fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.state.latents.len();
        let per_epoch = self.batches_per_epoch() as u64;
        let epoch = step / per_epoch;
        let k = (step % per_epoch) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        if per_epoch > 1 {
            order.shuffle(&mut stream_rng(self.state.seed ^ STREAM_SHUFFLE, epoch));
        }
        let bs = self.state.config.batch_size;
        let mut batch = order[k * bs..((k + 1) * bs).min(n)].to_vec();
        batch.sort_unstable();
        batch
    }

    /// One optimizer step on the next batch. On error the state is left unchanged.
    pub fn step(&mut self, items: &[TrainItem]) -> Result<LogRow> {
        if items.len() != self.state.latents.len() {
            return invalid(format!("{} items for {} latent codes", items.len(), self.state.latents.len()));
        }
        let step = self.state.step;
        let batch = self.batch_indices(step);
        let cfg = self.state.config.clone();
        let mut rng = stream_rng(self.state.seed ^ STREAM_STEP, step);
        let mut model = self.state.model.clone();
        model.set_mode(Mode::Train);

        let b = batch.len();
        let mut codes = Array2::zeros((b, LATENT_DIM));
        for (row, &i) in batch.iter().enumerate() {
            codes.row_mut(row).assign(&self.state.latents[i].values);
        }
        let sources: Vec<&[Point]> = batch.iter().map(|&i| items[i].source.points()).collect();
        let targets: Vec<&[Point]> = batch.iter().map(|&i| items[i].target.points()).collect();
        let sdf: Vec<Vec<SdfSample>> = batch.iter().map(|&i| subsample(&items[i].sdf, cfg.sdf_per_step, &mut rng)).collect();
        let sdf_refs: Vec<&[SdfSample]> = sdf.iter().map(Vec::as_slice).collect();

        let mean_w = vec![1.0 / b as f64; b];
        let com_w = vec![cfg.lambda / b as f64; b];
        let mut reg_grads = model.registration.zero_grads();
        let reg =
            registration_batch(&model.registration, codes.view(), &sources, &targets, cfg.sigma_t, &mean_w, &mut reg_grads, &mut rng)?;
        let mut com_grads = model.completion.params.zero_grads();
        let com = completion_batch(&model.completion, codes.view(), &sdf_refs, cfg.sigma_prior, &com_w, &mut com_grads, &mut rng)?;

        let l_reg = reg.losses.iter().sum::<f64>() / b as f64;
        let l_com = com.losses.iter().sum::<f64>() / b as f64;
        let total = l_reg + cfg.lambda * l_com;
        if !total.is_finite() {
            return Err(Error::Diverged { step: step as usize });
        }

        let mut grads: Vec<&[f64]> = reg_grads.slices();
        grads.extend(com_grads.slices());
        model.registration.head.absorb_batch_stats(&reg.head_stats)?;
        model.completion.params.absorb_batch_stats(&com.stats)?;
        let mut net_opt = self.state.net_optimizer.clone();
        net_opt.step(model.param_slices_mut(), &grads)?;

        let mut latent_grad = Array2::<f64>::zeros((self.state.latents.len(), LATENT_DIM));
        for (row, &i) in batch.iter().enumerate() {
            let mut g = latent_grad.row_mut(i);
            g += &reg.code_grads.row(row);
            g += &com.code_grads.row(row);
        }
        let mut table = Array2::<f64>::zeros(latent_grad.raw_dim());
        for (i, z) in self.state.latents.iter().enumerate() {
            table.row_mut(i).assign(&z.values);
        }
        let mut latent_opt = self.state.latent_optimizer.clone();
        latent_opt.step(
            vec![("latent_codes".to_string(), table.as_slice_mut().expect("standard layout"))],
            &[latent_grad.as_slice().expect("standard layout")],
        )?;

        model.set_mode(Mode::Eval);
        self.state.model = model;
        self.state.net_optimizer = net_opt;
        self.state.latent_optimizer = latent_opt;
        for (i, z) in self.state.latents.iter_mut().enumerate() {
            z.values.assign(&table.row(i));
        }
        self.state.step += 1;
        let row = LogRow { step, l_reg, l_com, total };
        self.log.push(row);
        Ok(row)
    }

    /// Runs `epochs` passes over the items, calling `on_step` after every step.
    pub fn run(&mut self, items: &[TrainItem], epochs: usize, mut on_step: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let steps = epochs * self.batches_per_epoch();
        for _ in 0..steps {
            self.step(items)?;
            on_step(self)?;
        }
        Ok(())
    }
}

fn subsample(samples: &[SdfSample], count: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<SdfSample> {
    match count {
        Some(k) if k < samples.len() => {
            let mut idx = rand::seq::index::sample(rng, samples.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| samples[i]).collect()
        }
        _ => samples.to_vec(),
    }
}

/// Trains both decoders and one latent code per item for `cfg.epochs` passes.
pub fn train_joint(items: &[TrainItem], cfg: TrainConfig) -> Result<Trainer> {
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(cfg, items.len())?;
    trainer.run(items, epochs, |_| Ok(()))?;
    Ok(trainer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStop {
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { window: 100, min_improvement: 1e-7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda: f64,
    pub sigma_t: f64,
    pub sigma_prior: f64,
    /// Independent latent initializations; the one with the lowest final objective wins.
    pub restarts: usize,
    pub early_stop: Option<EarlyStop>,
    pub sdf_per_step: Option<usize>,
    pub seed: u64,
    /// Grid used by the two-step variant to extract the completed target.
    pub grid: GridConfig,
    /// Steps after which the current prediction is recorded. Steps past an early stop
    /// record the final prediction.
    pub snapshot_steps: Vec<usize>,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 1e-3,
            lambda: 0.1,
            sigma_t: 0.1,
            sigma_prior: 100.0,
            restarts: 3,
            early_stop: Some(EarlyStop::default()),
            sdf_per_step: None,
            seed: 0,
            grid: GridConfig::default(),
            snapshot_steps: Vec::new(),
        }
    }
}

impl InferConfig {
    /// Settings that mirror the original single-run behavior: no restarts, no early stop.
    pub fn reference(steps: usize) -> Self {
        Self { steps, restarts: 1, early_stop: None, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return invalid("at least one latent initialization is needed");
        }
        if !(self.lambda >= 0.0 && self.lr >= 0.0) || !(self.sigma_t > 0.0 && self.sigma_prior > 0.0) {
            return invalid("invalid inference loss settings");
        }
        if self.sdf_per_step == Some(0) {
            return invalid("at least one SDF sample per step is needed");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub latent: LatentCode,
    /// Prediction at `latent`.
    pub transform: RigidTransform,
    /// Objective evaluated at the latent each step started from.
    pub trajectory: Vec<LogRow>,
    pub steps: usize,
    pub diverged: bool,
    /// Objective at the returned latent.
    pub final_loss: f64,
    pub restart: usize,
    /// `(step, prediction after that many updates)` for each requested snapshot step.
    pub snapshots: Vec<(usize, RigidTransform)>,
}

/// What the latent is optimized against.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Objective<'a> {
    /// `L_reg + lambda * L_com`.
    Joint { lambda: f64 },
    /// `L_com` only; registration is still logged.
    CompletionOnly,
    /// Chamfer to a fixed reconstruction; no completion term.
    RegistrationTo(&'a [Point]),
}

struct LatentRun<'a> {
    model: &'a Model,
    source: &'a [Point],
    target: &'a [Point],
    sdf: &'a [SdfSample],
    cfg: &'a InferConfig,
}

impl LatentRun<'_> {
    /// Objective, log row and latent gradient at `z`.
    fn evaluate(
        &self,
        z: &LatentCode,
        objective: Objective<'_>,
        rng: &mut ChaCha8Rng,
        step: u64,
    ) -> Result<(LogRow, ndarray::Array1<f64>)> {
        let code = z.as_row();
        let reg_target = match objective {
            Objective::RegistrationTo(t) => t,
            _ => self.target,
        };
        let (w_reg, w_com) = match objective {
            Objective::Joint { lambda } => (1.0, lambda),
            Objective::CompletionOnly => (0.0, 1.0),
            Objective::RegistrationTo(_) => (1.0, 0.0),
        };
        let mut reg_grads = self.model.registration.zero_grads();
        let reg = registration_batch(
            &self.model.registration,
            code,
            &[self.source],
            &[reg_target],
            self.cfg.sigma_t,
            &[w_reg],
            &mut reg_grads,
            rng,
        )?;
        let samples = subsample(self.sdf, self.cfg.sdf_per_step, rng);
        let mut com_grads = self.model.completion.params.zero_grads();
        let com = completion_batch(&self.model.completion, code, &[&samples], self.cfg.sigma_prior, &[w_com], &mut com_grads, rng)?;
        let (l_reg, l_com) = (reg.losses[0], com.losses[0]);
        let total = w_reg * l_reg + w_com * l_com;
        let grad = &reg.code_grads.row(0) + &com.code_grads.row(0);
        Ok((LogRow { step, l_reg, l_com, total }, grad))
    }

    fn predict(&self, z: &LatentCode, rng: &mut ChaCha8Rng) -> Result<RigidTransform> {
        let (out, _) = self.model.registration.forward_batch(z.as_row(), &[self.source], rng)?;
        RigidTransform::from_params(out.row(0).as_slice().expect("contiguous row"))
    }

    /// Adam on the latent alone for `steps` steps, continuing the given trajectory.
    #[allow(clippy::too_many_arguments)]
    fn optimize(
        &self,
        z: &mut LatentCode,
        objective: Objective<'_>,
        steps: usize,
        early_stop: Option<EarlyStop>,
        trajectory: &mut Vec<LogRow>,
        snapshots: &mut Vec<(usize, RigidTransform)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool> {
        let mut adam = AdamState::new(AdamConfig { lr: self.cfg.lr, weight_decay: 0.0, ..Default::default() });
        let mut best_so_far: Vec<f64> = Vec::with_capacity(steps);
        for k in 0..steps {
            if self.cfg.snapshot_steps.contains(&trajectory.len()) {
                snapshots.push((trajectory.len(), self.predict(z, rng)?));
            }
            let (row, grad) = match self.evaluate(z, objective, rng, trajectory.len() as u64) {
                Ok(v) => v,
                // The previous update produced an unusable transform.
                Err(Error::InvalidArgument(_) | Error::NonFinite(_)) if k > 0 => return Ok(true),
                Err(e) => return Err(e),
            };
            if !row.total.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Ok(true);
            }
            trajectory.push(row);
            let best = best_so_far.last().map_or(row.total, |b: &f64| b.min(row.total));
            best_so_far.push(best);
            if let Some(es) = early_stop {
                if k >= es.window && best_so_far[k - es.window] - best < es.min_improvement {
                    return Ok(false);
                }
            }
            let mut values = z.values.clone();
            adam.step(vec![("latent".to_string(), values.as_slice_mut().expect("contiguous"))], &[grad.as_slice().expect("contiguous")])?;
            z.values = values;
        }
        Ok(false)
    }
}

fn frozen(model: &Model) -> Model {
    let mut m = model.clone();
    m.set_mode(Mode::Eval);
    m
}

#[allow(clippy::too_many_arguments)]
fn finish(
    run: &LatentRun<'_>,
    z: LatentCode,
    objective: Objective<'_>,
    trajectory: Vec<LogRow>,
    mut snapshots: Vec<(usize, RigidTransform)>,
    diverged: bool,
    restart: usize,
    rng: &mut ChaCha8Rng,
) -> Result<InferenceResult> {
    let transform = run.predict(&z, rng)?;
    let final_loss = run.evaluate(&z, objective, rng, trajectory.len() as u64).map_or(f64::NAN, |(r, _)| r.total);
    for &s in &run.cfg.snapshot_steps {
        if !snapshots.iter().any(|(k, _)| *k == s) {
            snapshots.push((s, transform));
        }
    }
    snapshots.sort_by_key(|(k, _)| *k);
    snapshots.dedup_by_key(|(k, _)| *k);
    Ok(InferenceResult { steps: trajectory.len(), latent: z, transform, trajectory, diverged, final_loss, restart, snapshots })
}

/// Keeps the lowest finite final objective; ties keep the earlier run.
fn better(best: Option<InferenceResult>, candidate: InferenceResult) -> Option<InferenceResult> {
    match best {
        Some(b) if !(candidate.final_loss < b.final_loss) && (b.final_loss.is_finite() || !candidate.final_loss.is_finite()) => Some(b),
        _ => Some(candidate),
    }
}

/// MAP estimate of the target's latent for one pair; the decoders are not modified.
///
/// `target` is the observed (partial) target and `sdf` its distance samples.
pub fn infer_pair(model: &Model, source: &PointSet, target: &PointSet, sdf: &[SdfSample], cfg: &InferConfig) -> Result<InferenceResult> {
    cfg.validate()?;
    if sdf.is_empty() {
        return invalid("inference needs distance samples of the target");
    }
    let model = frozen(model);
    let run = LatentRun { model: &model, source: source.points(), target: target.points(), sdf, cfg };
    let objective = Objective::Joint { lambda: cfg.lambda };
    let mut best = None;
    for r in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let mut z = init_latent_with(&mut rng, target.source_id.clone());
        let mut trajectory = Vec::with_capacity(cfg.steps);
        let mut snaps = Vec::new();
        let diverged = run.optimize(&mut z, objective, cfg.steps, cfg.early_stop, &mut trajectory, &mut snaps, &mut rng)?;
        best = better(best, finish(&run, z, objective, trajectory, snaps, diverged, r, &mut rng)?);
    }
    Ok(best.expect("at least one restart"))
}

/// Two-step variant: the first half of the budget fits the latent to the distance samples
/// alone, the second half registers the source against the extracted reconstruction.
pub fn infer_two_step(
    model: &Model,
    source: &PointSet,
    target: &PointSet,
    sdf: &[SdfSample],
    cfg: &InferConfig,
) -> Result<InferenceResult> {
    cfg.validate()?;
    if sdf.is_empty() {
        return invalid("inference needs distance samples of the target");
    }
    let model = frozen(model);
    let run = LatentRun { model: &model, source: source.points(), target: target.points(), sdf, cfg };
    let first = cfg.steps / 2;
    let mut best = None;
    for r in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let mut z = init_latent_with(&mut rng, target.source_id.clone());
        let mut trajectory = Vec::with_capacity(cfg.steps);
        let mut snaps = Vec::new();
        let mut diverged = run.optimize(&mut z, Objective::CompletionOnly, first, None, &mut trajectory, &mut snaps, &mut rng)?;
        let completed = if diverged { None } else { extract_completed_points(&model.completion, &z, &cfg.grid)? };
        let result = match completed {
            Some(points) => {
                let points = points.into_points();
                let objective = Objective::RegistrationTo(&points);
                diverged = run.optimize(&mut z, objective, cfg.steps - first, None, &mut trajectory, &mut snaps, &mut rng)?;
                finish(&run, z, objective, trajectory, snaps, diverged, r, &mut rng)?
            }
            // Nothing to register against: keep the completion-only latent.
            None => finish(&run, z, Objective::CompletionOnly, trajectory, snaps, diverged, r, &mut rng)?,
        };
        best = better(best, result);
    }
    Ok(best.expect("at least one restart"))
}
