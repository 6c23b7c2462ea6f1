use std::fs;
use std::path::{Path, PathBuf};

use jointreg::completion::extract_completed_points;
use jointreg::corpus::{log_csv, read_corpus, read_json, read_pair, write_corpus, write_json, CorpusConfig, TransformRecord, CORPUS_FILE};
use jointreg::datagen::NoiseConfig;
use jointreg::eval::{report_csv, report_table, run_experiment, ExperimentConfig, Models};
use jointreg::geometry::apply_transform;
use jointreg::geometry::io::ply_string;
use jointreg::geometry::{Point, RigidTransform};
use jointreg::netcore::Mode;
use jointreg::trainer::{infer_pair, infer_two_step, Checkpoint, InferConfig, InferenceResult, LogRow, TrainConfig, TrainItem, Trainer};
use jointreg::{Error, Result};

use crate::manifest::RunManifest;
use crate::{Cli, Command, CompleteArgs, EvalArgs, GenerateArgs, InferArgs, RegisterArgs, TrainArgs};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Settings shared by every command.
struct Run {
    root: PathBuf,
    threads: usize,
    reference: bool,
}

impl Run {
    fn out_dir(&self, explicit: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let dir = explicit.unwrap_or_else(|| self.root.join(default));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads =
        if cli.reference { 1 } else { cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())) };
    if threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let run = Run { root: cli.out_root, threads, reference: cli.reference };
    match cli.command {
        Command::Generate(a) => generate(&run, a),
        Command::Train(a) => train(&run, a),
        Command::Register(a) => register(&run, a),
        Command::Complete(a) => complete(&run, a),
        Command::Eval(a) => eval(&run, a),
    }
}

/// Runs `body`, then writes the manifest whether or not it succeeded.
fn with_manifest(dir: &Path, mut manifest: RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<()> {
    let outcome = body(&mut manifest);
    manifest.finish(dir, outcome.as_ref().err())?;
    outcome
}

fn write_text(manifest: &mut RunManifest, dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text)?;
    manifest.add(dir, &path);
    Ok(path)
}

fn generate(run: &Run, a: GenerateArgs) -> Result<()> {
    let mut cfg: CorpusConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.points {
        cfg.pairs.points = n;
    }
    if let Some(k) = a.keep {
        cfg.pairs.keep = k;
    }
    if let Some(t) = a.transforms_per_shape {
        cfg.transforms_per_shape = t;
    }
    if a.noise {
        cfg.pairs.noise = NoiseConfig::gaussian();
    }
    cfg.validate()?;
    let dir = run.out_dir(a.out, "corpus")?;
    let manifest = RunManifest::start("generate", &cfg, cfg.seed, run.reference, run.threads)?;
    with_manifest(&dir, manifest, |m| {
        let written = write_corpus(&dir, &cfg)?;
        m.add_all(&dir, &written);
        log::info!("wrote {} pairs to {}", cfg.count(), dir.display());
        Ok(())
    })
}

fn train(run: &Run, a: TrainArgs) -> Result<()> {
    let (_, pairs) = read_corpus(&a.corpus)?;
    let items: Vec<TrainItem> = pairs.iter().map(TrainItem::training).collect();
    let dir = run.out_dir(a.out, "train")?;
    let log_path = dir.join(TRAIN_LOG_FILE);

    let (mut trainer, mut history) = match &a.resume {
        Some(path) => {
            let state = Checkpoint::load(path)?;
            // Earlier rows are kept when the log of the resumed run is in the same directory.
            let history: Vec<LogRow> = match fs::read_to_string(&log_path) {
                Ok(text) => jointreg::corpus::parse_log_csv(&text)?.into_iter().filter(|r| r.step < state.step).collect(),
                Err(_) => Vec::new(),
            };
            (Trainer::resume(state), history)
        }
        None => {
            let mut cfg: TrainConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            override_opt(&mut cfg.lambda, a.lambda);
            override_opt(&mut cfg.seed, a.seed);
            override_opt(&mut cfg.sigma_t, a.sigma_t);
            override_opt(&mut cfg.sigma_prior, a.sigma_prior);
            override_opt(&mut cfg.lr_net, a.lr);
            override_opt(&mut cfg.lr_latent, a.lr_latent);
            override_opt(&mut cfg.batch_size, a.batch_size);
            override_opt(&mut cfg.epochs, a.epochs);
            (Trainer::new(cfg, items.len())?, Vec::new())
        }
    };
    let epochs = a.epochs.unwrap_or(trainer.state.config.epochs);
    let config = serde_json::json!({
        "corpus": a.corpus,
        "resume": a.resume,
        "epochs": epochs,
        "checkpoint_every": a.checkpoint_every,
        "train": trainer.state.config,
    });
    let manifest = RunManifest::start("train", &config, trainer.state.seed, run.reference, run.threads)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let every = a.checkpoint_every.filter(|&n| n > 0);

    with_manifest(&dir, manifest, |m| {
        let outcome = trainer.run(&items, epochs, |t| {
            if every.is_some_and(|n| t.state.step % n == 0) {
                t.state.save(&ckpt_path)?;
            }
            Ok(())
        });
        // A diverged step leaves the trainer at the last good state, which is saved either way.
        history.append(&mut trainer.log);
        trainer.state.save(&ckpt_path)?;
        m.add(&dir, &ckpt_path);
        write_text(m, &dir, TRAIN_LOG_FILE, &log_csv(&history)?)?;
        if let Some(last) = history.last() {
            m.summary = serde_json::json!({ "steps": trainer.state.step, "final": last });
            log::info!("step {}: L_reg {:.6} L_com {:.6} total {:.6}", last.step, last.l_reg, last.l_com, last.total);
        }
        outcome
    })
}

fn override_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Inference settings: the config file or the checkpoint's loss settings, then flags.
fn infer_config(a: &InferArgs, ckpt: &Checkpoint) -> Result<InferConfig> {
    let mut cfg = match &a.infer_config {
        Some(p) => read_json(p)?,
        None => {
            let t = &ckpt.config;
            InferConfig {
                lambda: t.lambda,
                sigma_t: t.sigma_t,
                sigma_prior: t.sigma_prior,
                sdf_per_step: t.sdf_per_step,
                ..Default::default()
            }
        }
    };
    override_opt(&mut cfg.steps, a.steps);
    override_opt(&mut cfg.lr, a.lr);
    override_opt(&mut cfg.lambda, a.lambda);
    override_opt(&mut cfg.sigma_t, a.sigma_t);
    override_opt(&mut cfg.sigma_prior, a.sigma_prior);
    override_opt(&mut cfg.restarts, a.restarts);
    override_opt(&mut cfg.seed, a.infer_seed);
    if a.sdf_per_step.is_some() {
        cfg.sdf_per_step = a.sdf_per_step;
    }
    if a.no_early_stop {
        cfg.early_stop = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::load(path)?;
    ckpt.model.set_mode(Mode::Eval);
    Ok(ckpt)
}

fn transformed_ply(points: &jointreg::geometry::PointSet, t: &RigidTransform) -> Result<String> {
    Ok(ply_string(apply_transform(points, t)?.points()))
}

/// Writes transform.json and trajectory.csv; a diverged run becomes an error after writing.
fn write_inference(m: &mut RunManifest, dir: &Path, r: &InferenceResult) -> Result<()> {
    write_json(&dir.join("transform.json"), &TransformRecord::from(&r.transform))?;
    m.add(dir, &dir.join("transform.json"));
    write_text(m, dir, "trajectory.csv", &log_csv(&r.trajectory)?)?;
    m.summary = serde_json::json!({
        "steps": r.steps,
        "restart": r.restart,
        "final_loss": r.final_loss,
        "diverged": r.diverged,
    });
    log::info!("angles (deg) {:?}, translation {:?}", TransformRecord::from(&r.transform).angles_deg, r.transform.translation.as_slice());
    Ok(())
}

fn diverged_error(r: &InferenceResult) -> Result<()> {
    if r.diverged {
        return Err(Error::Diverged { step: r.steps });
    }
    Ok(())
}

fn register(run: &Run, a: RegisterArgs) -> Result<()> {
    let ckpt = load_model(&a.checkpoint)?;
    let mut cfg = infer_config(&a.infer, &ckpt)?;
    cfg.snapshot_steps = a.snapshot_steps.clone();
    let (pair, sdf) = read_pair(&a.pair)?;
    let dir = run.out_dir(a.out, "register")?;
    let config = serde_json::json!({
        "checkpoint": a.checkpoint,
        "pair": a.pair,
        "two_step": a.two_step,
        "infer": cfg,
    });
    let manifest = RunManifest::start("register", &config, cfg.seed, run.reference, run.threads)?;
    with_manifest(&dir, manifest, |m| {
        let infer = if a.two_step { infer_two_step } else { infer_pair };
        let r = infer(&ckpt.model, &pair.source, &pair.target_partial, &sdf, &cfg)?;
        write_inference(m, &dir, &r)?;
        write_text(m, &dir, "aligned.ply", &transformed_ply(&pair.source, &r.transform)?)?;
        for (step, t) in &r.snapshots {
            write_text(m, &dir, &format!("snapshots/aligned_step_{step:05}.ply"), &transformed_ply(&pair.source, t)?)?;
        }
        diverged_error(&r)
    })
}

fn complete(run: &Run, a: CompleteArgs) -> Result<()> {
    let ckpt = load_model(&a.checkpoint)?;
    let mut cfg = infer_config(&a.infer, &ckpt)?;
    override_opt(&mut cfg.grid.resolution, a.grid_res);
    override_opt(&mut cfg.grid.iso_eps, a.iso_eps);
    let (pair, sdf) = read_pair(&a.pair)?;
    let dir = run.out_dir(a.out, "complete")?;
    let config = serde_json::json!({ "checkpoint": a.checkpoint, "pair": a.pair, "infer": cfg });
    let manifest = RunManifest::start("complete", &config, cfg.seed, run.reference, run.threads)?;
    with_manifest(&dir, manifest, |m| {
        let r = infer_pair(&ckpt.model, &pair.source, &pair.target_partial, &sdf, &cfg)?;
        write_inference(m, &dir, &r)?;
        let completed = extract_completed_points(&ckpt.model.completion, &r.latent, &cfg.grid)?;
        let points: &[Point] = completed.as_ref().map_or(&[], |ps| ps.points());
        if points.is_empty() {
            log::warn!("no grid cell fell below the iso threshold; completed.ply is empty");
        }
        write_text(m, &dir, "completed.ply", &ply_string(points))?;
        if let serde_json::Value::Object(s) = &mut m.summary {
            s.insert("completed_points".into(), points.len().into());
        }
        diverged_error(&r)
    })
}

fn eval(run: &Run, a: EvalArgs) -> Result<()> {
    let corpus: CorpusConfig = match &a.corpus {
        Some(dir) => read_json(&dir.join(CORPUS_FILE))?,
        None => CorpusConfig::default(),
    };
    let mut cfg: ExperimentConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig { pairs: corpus.pairs.clone(), seed: corpus.seed.wrapping_add(1), ..Default::default() },
    };
    override_opt(&mut cfg.count, a.count);
    override_opt(&mut cfg.seed, a.seed);
    cfg.icp_baseline |= a.baseline.is_some();
    cfg.threads = run.threads;

    let load = |p: &Option<PathBuf>| p.as_deref().map(load_model).transpose();
    let joint = if a.oracle { None } else { load(&a.checkpoint)? };
    let lambda0 = if a.oracle { None } else { load(&a.lambda0_checkpoint)? };
    if !a.oracle && joint.is_none() {
        return Err(Error::InvalidArgument("--checkpoint is required unless --oracle is given".into()));
    }
    if let Some(ck) = &joint {
        cfg.infer = infer_config(&a.infer, ck)?;
    }
    let dir = run.out_dir(a.out, &format!("eval-{}", a.experiment.name()))?;
    let config = serde_json::json!({
        "experiment": a.experiment.name(),
        "checkpoint": a.checkpoint,
        "lambda0_checkpoint": a.lambda0_checkpoint,
        "oracle": a.oracle,
        "shapes": corpus.shapes,
        "experiment_config": cfg,
    });
    let manifest = RunManifest::start("eval", &config, cfg.seed, run.reference, run.threads)?;
    with_manifest(&dir, manifest, |m| {
        let models = Models { joint: joint.as_ref().map(|c| &c.model), lambda0: lambda0.as_ref().map(|c| &c.model) };
        let rows = run_experiment(a.experiment, models, &corpus.shapes, &cfg, a.oracle)?;
        write_text(m, &dir, "report.csv", &report_csv(&rows)?)?;
        let table = report_table(&rows);
        write_text(m, &dir, "report.txt", &table)?;
        write_json(&dir.join("report.json"), &rows)?;
        m.add(&dir, &dir.join("report.json"));
        println!("{table}");
        Ok(())
    })
}
