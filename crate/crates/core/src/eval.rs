//! Rotation and translation error metrics, a point-to-point ICP baseline, and the
//! experiment drivers that produce the report tables.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_pair_seeded, stream_rng, NoiseConfig, PairConfig, RegistrationPair, ShapeSpec};
use crate::error::{invalid, Error, Result};
use crate::geometry::{KdTree, Point, PointSet, RigidMap, RigidTransform};
use crate::trainer::{infer_pair, infer_two_step, InferConfig, Model, TrainItem};

/// Errors of one predicted transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    /// `pred - gt` per Euler angle, degrees.
    pub angles_deg: [f64; 3],
    /// `pred - gt` per translation component.
    pub translation: [f64; 3],
    /// Angle of `R_pred * R_gt^T`, degrees.
    pub geodesic_deg: f64,
}

impl PairError {
    /// Root mean square of the three angle errors.
    pub fn rotation_rms(&self) -> f64 {
        (self.angles_deg.iter().map(|e| e * e).sum::<f64>() / 3.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse_r: f64,
    pub rmse_r: f64,
    pub mae_r: f64,
    pub mse_t: f64,
    pub rmse_t: f64,
    pub mae_t: f64,
    pub pairs: Vec<PairError>,
}

impl MetricsReport {
    pub fn median_rotation_error(&self) -> f64 {
        median(self.pairs.iter().map(PairError::rotation_rms).collect())
    }

    pub fn median_geodesic(&self) -> f64 {
        median(self.pairs.iter().map(|p| p.geodesic_deg).collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(errors: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for e in errors {
        sq += e * e;
        abs += e.abs();
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mse = sq / n as f64;
    (mse, mse.sqrt(), abs / n as f64)
}

/// Componentwise Euler-angle errors in degrees and translation errors, aggregated over
/// every component of every pair.
pub fn compute_metrics(predictions: &[RigidTransform], gts: &[RigidTransform]) -> Result<MetricsReport> {
    if predictions.len() != gts.len() {
        return invalid(format!("{} predictions for {} ground truths", predictions.len(), gts.len()));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for (p, g) in predictions.iter().zip(gts) {
        let (pd, gd) = (p.angles_deg(), g.angles_deg());
        let geodesic_deg = p.to_map()?.geodesic_deg(&g.to_map()?);
        pairs.push(PairError {
            angles_deg: [pd[0] - gd[0], pd[1] - gd[1], pd[2] - gd[2]],
            translation: [p.translation.x - g.translation.x, p.translation.y - g.translation.y, p.translation.z - g.translation.z],
            geodesic_deg,
        });
    }
    let (mse_r, rmse_r, mae_r) = aggregate(pairs.iter().flat_map(|p| p.angles_deg));
    let (mse_t, rmse_t, mae_t) = aggregate(pairs.iter().flat_map(|p| p.translation));
    Ok(MetricsReport { mse_r, rmse_r, mae_r, mse_t, rmse_t, mae_t, pairs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the correspondence MSE drops by less than this.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub map: RigidMap,
    /// Correspondence MSE at the start of each iteration, then after the final update.
    pub mse_log: Vec<f64>,
    pub iterations: usize,
}

/// Least-squares rigid map taking `src[i]` to `dst[i]`, with the determinant sign
/// corrected so the result is never a reflection.
pub fn best_fit_rigid(src: &[Point], dst: &[Point]) -> Result<RigidMap> {
    if src.len() != dst.len() || src.is_empty() {
        return invalid("best fit needs two equally sized nonempty sets");
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Point>() / n;
    let cd = dst.iter().sum::<Point>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NonFinite("cross-covariance decomposition".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v * fix * u.transpose();
    Ok(RigidMap { rotation, translation: cd - rotation * cs })
}

fn correspondences(tree: &KdTree, target: &[Point], moved: &[Point]) -> (Vec<Point>, f64) {
    let mut matched = Vec::with_capacity(moved.len());
    let mut sum = 0.0;
    for p in moved {
        let nb = tree.nearest(p).expect("nonempty target");
        matched.push(target[nb.index]);
        sum += nb.dist_sq;
    }
    (matched, sum / moved.len() as f64)
}

/// Point-to-point ICP from the identity: nearest-neighbor correspondences from `source`
/// into `target`, closed-form rigid update, repeat.
pub fn icp_register(source: &PointSet, target: &PointSet, cfg: &IcpConfig) -> Result<IcpResult> {
    let tree = KdTree::new(target.points());
    let mut map = RigidMap::identity();
    let mut mse_log = Vec::new();
    let mut iterations = 0;
    let mut moved: Vec<Point> = source.points().to_vec();
    let (mut matched, mut mse) = correspondences(&tree, target.points(), &moved);
    mse_log.push(mse);
    while iterations < cfg.max_iterations {
        let fit = best_fit_rigid(source.points(), &matched)?;
        iterations += 1;
        moved = source.points().iter().map(|p| fit.apply_point(p)).collect();
        let (next_matched, next_mse) = correspondences(&tree, target.points(), &moved);
        map = fit;
        mse_log.push(next_mse);
        let done = (mse - next_mse).abs() < cfg.tolerance;
        matched = next_matched;
        mse = next_mse;
        if done {
            break;
        }
    }
    Ok(IcpResult { map, mse_log, iterations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clean,
    GaussianNoise,
    MissingSweep,
    #[serde(rename = "ablation_lambda0")]
    AblationLambda0,
    TwoStep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [Self::Clean, Self::GaussianNoise, Self::MissingSweep, Self::AblationLambda0, Self::TwoStep];

    pub fn name(self) -> &'static str {
        match self {
            Self::Clean => "clean",
            Self::GaussianNoise => "gaussian_noise",
            Self::MissingSweep => "missing_sweep",
            Self::AblationLambda0 => "ablation_lambda0",
            Self::TwoStep => "two_step",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::InvalidArgument(format!("unknown experiment {s}")))
    }
}

/// How transforms are produced for a set of pairs.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    /// Returns the ground truth; a self-test of the harness.
    Oracle,
    Icp(IcpConfig),
    Joint(&'a Model, &'a InferConfig),
    TwoStep(&'a Model, &'a InferConfig),
}

/// Outcome for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub transform: RigidTransform,
    pub diverged: bool,
    pub final_loss: f64,
}

pub fn predict(pair: &RegistrationPair, predictor: Predictor<'_>) -> Result<Prediction> {
    match predictor {
        Predictor::Oracle => Ok(Prediction { transform: pair.gt, diverged: false, final_loss: 0.0 }),
        Predictor::Icp(cfg) => {
            let r = icp_register(&pair.source, &pair.target_partial, &cfg)?;
            let final_loss = *r.mse_log.last().expect("initial entry");
            Ok(Prediction { transform: r.map.to_transform(), diverged: false, final_loss })
        }
        Predictor::Joint(model, cfg) | Predictor::TwoStep(model, cfg) => {
            let item = TrainItem::observed(pair);
            let run = if matches!(predictor, Predictor::Joint(..)) { infer_pair } else { infer_two_step };
            let r = run(model, &item.source, &item.target, &item.sdf, cfg)?;
            Ok(Prediction { transform: r.transform, diverged: r.diverged, final_loss: r.final_loss })
        }
    }
}

/// Predictions for every pair, in order. Pairs are split over up to `threads` workers;
/// the result does not depend on the thread count.
pub fn predict_all(pairs: &[RegistrationPair], predictor: Predictor<'_>, threads: usize) -> Result<Vec<Prediction>> {
    let threads = threads.clamp(1, pairs.len().max(1));
    if threads == 1 {
        return pairs.iter().map(|p| predict(p, predictor)).collect();
    }
    let chunk = pairs.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            pairs.chunks(chunk).map(|c| scope.spawn(move || c.iter().map(|p| predict(p, predictor)).collect::<Result<Vec<_>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(pairs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// One line of a report table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub metrics: MetricsReport,
    /// Pairs whose optimization diverged; their predictions still enter the metrics.
    pub failures: usize,
}

pub fn score(label: impl Into<String>, pairs: &[RegistrationPair], predictions: &[Prediction]) -> Result<ReportRow> {
    let preds: Vec<RigidTransform> = predictions.iter().map(|p| p.transform).collect();
    let gts: Vec<RigidTransform> = pairs.iter().map(|p| p.gt).collect();
    Ok(ReportRow {
        label: label.into(),
        metrics: compute_metrics(&preds, &gts)?,
        failures: predictions.iter().filter(|p| p.diverged).count(),
    })
}

pub const REPORT_COLUMNS: [&str; 6] = ["MSE(R)", "RMSE(R)", "MAE(R)", "MSE(t)", "RMSE(t)", "MAE(t)"];

fn row_values(m: &MetricsReport) -> [f64; 6] {
    [m.mse_r, m.rmse_r, m.mae_r, m.mse_t, m.rmse_t, m.mae_t]
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method"];
    header.extend(REPORT_COLUMNS);
    header.push("failures");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(row_values(&r.metrics).iter().map(|v| v.to_string()));
        rec.push(r.failures.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn report_table(rows: &[ReportRow]) -> String {
    let label_w = rows.iter().map(|r| r.label.len()).chain(["method".len()]).max().unwrap_or(6);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "method");
    for c in REPORT_COLUMNS {
        let _ = write!(out, " {c:>12}");
    }
    let _ = writeln!(out, " {:>8}", "failures");
    for r in rows {
        let _ = write!(out, "{:<label_w$}", r.label);
        for v in row_values(&r.metrics) {
            let _ = write!(out, " {v:>12.6}");
        }
        let _ = writeln!(out, " {:>8}", r.failures);
    }
    out
}

/// Evaluation corpus settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pairs: PairConfig,
    /// Evaluation pairs; pair `i` uses shape `i % shapes.len()`.
    pub count: usize,
    pub seed: u64,
    pub infer: InferConfig,
    /// Append an ICP row computed on the same pairs.
    pub icp_baseline: bool,
    pub icp: IcpConfig,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pairs: PairConfig::default(),
            count: 16,
            seed: 1,
            infer: InferConfig::default(),
            icp_baseline: false,
            icp: IcpConfig::default(),
            threads: 1,
        }
    }
}

/// `count` pairs drawn from `shapes` with per-pair streams of `seed`.
pub fn make_pairs(shapes: &[ShapeSpec], cfg: &PairConfig, count: usize, seed: u64) -> Result<Vec<RegistrationPair>> {
    if shapes.is_empty() {
        return invalid("at least one shape is required");
    }
    use rand::Rng;
    (0..count).map(|i| make_pair_seeded(&shapes[i % shapes.len()], cfg, stream_rng(seed, i as u64).random())).collect()
}

/// Trained decoders available to an experiment.
#[derive(Clone, Copy, Debug)]
pub struct Models<'a> {
    /// The joint model (lambda as trained, normally 0.1).
    pub joint: Option<&'a Model>,
    /// A model trained with lambda = 0.
    pub lambda0: Option<&'a Model>,
}

/// Oracle predictions in place of the trained model, for self-tests of the harness.
pub const ORACLE: Models<'static> = Models { joint: None, lambda0: None };

fn require<'a>(m: Option<&'a Model>, what: &str) -> Result<&'a Model> {
    m.ok_or_else(|| Error::State(format!("{what} checkpoint is required for this experiment")))
}

fn joint_predictor<'a>(models: Models<'a>, infer: &'a InferConfig, oracle: bool) -> Result<Predictor<'a>> {
    Ok(if oracle { Predictor::Oracle } else { Predictor::Joint(require(models.joint, "trained")?, infer) })
}

/// Generates the corpus for `kind`, runs every predictor it calls for, and returns one row each.
///
/// With `oracle` set the trained model is replaced by ground-truth predictions.
pub fn run_experiment(
    kind: ExperimentKind,
    models: Models<'_>,
    shapes: &[ShapeSpec],
    cfg: &ExperimentConfig,
    oracle: bool,
) -> Result<Vec<ReportRow>> {
    let joint = |infer| joint_predictor(models, infer, oracle);
    let mut rows = Vec::new();
    let mut corpus_for_icp = None;
    match kind {
        ExperimentKind::Clean | ExperimentKind::GaussianNoise => {
            let mut pc = cfg.pairs.clone();
            let label = if kind == ExperimentKind::GaussianNoise {
                pc.noise = NoiseConfig::gaussian();
                "ours (noise)"
            } else {
                "ours"
            };
            let pairs = make_pairs(shapes, &pc, cfg.count, cfg.seed)?;
            let preds = predict_all(&pairs, joint(&cfg.infer)?, cfg.threads)?;
            rows.push(score(label, &pairs, &preds)?);
            corpus_for_icp = Some(pairs);
        }
        ExperimentKind::MissingSweep => {
            for frac in [0.75, 0.625, 0.5] {
                let keep = (cfg.pairs.points as f64 * frac).round() as usize;
                let pc = PairConfig { keep, ..cfg.pairs.clone() };
                let pairs = make_pairs(shapes, &pc, cfg.count, cfg.seed)?;
                let preds = predict_all(&pairs, joint(&cfg.infer)?, cfg.threads)?;
                rows.push(score(keep.to_string(), &pairs, &preds)?);
                if cfg.icp_baseline {
                    let icp = predict_all(&pairs, Predictor::Icp(cfg.icp), cfg.threads)?;
                    rows.push(score(format!("icp {keep}"), &pairs, &icp)?);
                }
            }
        }
        ExperimentKind::AblationLambda0 => {
            let pairs = make_pairs(shapes, &cfg.pairs, cfg.count, cfg.seed)?;
            let base_cfg = InferConfig { lambda: 0.0, ..cfg.infer.clone() };
            let base = if oracle { Predictor::Oracle } else { Predictor::Joint(require(models.lambda0, "lambda = 0")?, &base_cfg) };
            rows.push(score("lambda=0", &pairs, &predict_all(&pairs, base, cfg.threads)?)?);
            let preds = predict_all(&pairs, joint(&cfg.infer)?, cfg.threads)?;
            rows.push(score(format!("lambda={}", cfg.infer.lambda), &pairs, &preds)?);
            corpus_for_icp = Some(pairs);
        }
        ExperimentKind::TwoStep => {
            let pairs = make_pairs(shapes, &cfg.pairs, cfg.count, cfg.seed)?;
            rows.push(score("joint", &pairs, &predict_all(&pairs, joint(&cfg.infer)?, cfg.threads)?)?);
            let two = if oracle { Predictor::Oracle } else { Predictor::TwoStep(require(models.joint, "trained")?, &cfg.infer) };
            rows.push(score("two-step", &pairs, &predict_all(&pairs, two, cfg.threads)?)?);
            corpus_for_icp = Some(pairs);
        }
    }
    if let (true, Some(pairs)) = (cfg.icp_baseline, corpus_for_icp) {
        let icp = predict_all(&pairs, Predictor::Icp(cfg.icp), cfg.threads)?;
        rows.push(score("icp", &pairs, &icp)?);
    }
    Ok(rows)
}
