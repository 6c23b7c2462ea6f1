//! On-disk layout of generated corpora and of per-pair results.
//!
//! A corpus root holds `corpus.json` (the generating config) and one directory per
//! pair with `source.ply`, `target_full.ply`, `target_partial.ply`, `gt.json` and
//! `sdf_samples.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::datagen::{default_shape_bank, make_sdf_samples, PairConfig, RegistrationPair, SdfSample, ShapeSpec};
use crate::error::{invalid, Error, Result};
use crate::eval::make_pairs;
use crate::geometry::io::{parse_ply, ply_string};
use crate::geometry::{Point, PointSet, RigidTransform, SetTag};
use crate::trainer::LogRow;

pub const CORPUS_FILE: &str = "corpus.json";

/// Everything that determines a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub shapes: Vec<ShapeSpec>,
    /// Transforms drawn per shape.
    pub transforms_per_shape: usize,
    pub pairs: PairConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { shapes: default_shape_bank(), transforms_per_shape: 4, pairs: PairConfig::default(), seed: 0 }
    }
}

impl CorpusConfig {
    pub fn count(&self) -> usize {
        self.shapes.len() * self.transforms_per_shape
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.transforms_per_shape == 0 {
            return invalid("corpus needs at least one shape and one transform per shape");
        }
        self.pairs.validate()
    }

    /// The pairs of this corpus, in directory order.
    pub fn generate(&self) -> Result<Vec<RegistrationPair>> {
        self.validate()?;
        make_pairs(&self.shapes, &self.pairs, self.count(), self.seed)
    }
}

/// Angles in degrees plus translation, as written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub angles_deg: [f64; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        Self { angles_deg: t.angles_deg(), translation: [t.translation.x, t.translation.y, t.translation.z] }
    }
}

impl TransformRecord {
    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform { angles: Vector3::from(self.angles_deg.map(f64::to_radians)), translation: Vector3::from(self.translation) }
    }
}

/// Contents of `gt.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub angles_deg: [f64; 3],
    pub translation: [f64; 3],
    /// Exact angles, since the degree values do not round-trip through radians bit for bit.
    pub angles_rad: [f64; 3],
    pub shape_id: String,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn pair_dir_name(index: usize) -> String {
    format!("pair_{index:04}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn sdf_csv(samples: &[SdfSample]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "z", "distance"])?;
    for s in samples {
        w.write_record([s.location.x, s.location.y, s.location.z, s.distance].map(|v| v.to_string()))?;
    }
    into_string(w)
}

pub fn parse_sdf_csv(text: &str) -> Result<Vec<SdfSample>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (x, y, z, distance): (f64, f64, f64, f64) = rec?;
        out.push(SdfSample { location: Point::new(x, y, z), distance });
    }
    Ok(out)
}

/// `step,L_reg,L_com,total`.
pub fn log_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["step", "L_reg", "L_com", "total"])?;
    }
    into_string(w)
}

pub fn parse_log_csv(text: &str) -> Result<Vec<LogRow>> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes one pair directory; returns the files written.
pub fn write_pair(dir: &Path, pair: &RegistrationPair) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, ps) in [("source.ply", &pair.source), ("target_full.ply", &pair.target_full), ("target_partial.ply", &pair.target_partial)] {
        let path = dir.join(name);
        fs::write(&path, ply_string(ps.points()))?;
        written.push(path);
    }
    let rec = TransformRecord::from(&pair.gt);
    let gt = GroundTruth {
        angles_deg: rec.angles_deg,
        translation: rec.translation,
        angles_rad: [pair.gt.angles.x, pair.gt.angles.y, pair.gt.angles.z],
        shape_id: pair.source.source_id.clone(),
        noise_sigma: pair.noise_sigma,
        seed: pair.seed,
    };
    let path = dir.join("gt.json");
    write_json(&path, &gt)?;
    written.push(path);
    let path = dir.join("sdf_samples.csv");
    fs::write(&path, sdf_csv(&make_sdf_samples(&pair.target_partial, pair.seed))?)?;
    written.push(path);
    Ok(written)
}

/// Reads a pair directory written by [`write_pair`], with its stored distance samples.
pub fn read_pair(dir: &Path) -> Result<(RegistrationPair, Vec<SdfSample>)> {
    let gt: GroundTruth = read_json(&dir.join("gt.json"))?;
    let load =
        |name: &str, tag| -> Result<PointSet> { PointSet::new(parse_ply(&fs::read_to_string(dir.join(name))?)?, tag, gt.shape_id.clone()) };
    let pair = RegistrationPair {
        source: load("source.ply", SetTag::Full)?,
        target_full: load("target_full.ply", SetTag::Full)?,
        target_partial: load("target_partial.ply", SetTag::Partial)?,
        gt: RigidTransform { angles: Vector3::from(gt.angles_rad), translation: Vector3::from(gt.translation) },
        noise_sigma: gt.noise_sigma,
        seed: gt.seed,
    };
    let sdf = parse_sdf_csv(&fs::read_to_string(dir.join("sdf_samples.csv"))?)?;
    Ok((pair, sdf))
}

/// Writes `corpus.json` and every pair directory under `root`.
pub fn write_corpus(root: &Path, cfg: &CorpusConfig) -> Result<Vec<PathBuf>> {
    let pairs = cfg.generate()?;
    fs::create_dir_all(root)?;
    let path = root.join(CORPUS_FILE);
    write_json(&path, cfg)?;
    let mut written = vec![path];
    for (i, pair) in pairs.iter().enumerate() {
        written.extend(write_pair(&root.join(pair_dir_name(i)), pair)?);
    }
    Ok(written)
}

/// The corpus config and all pairs under `root`, in directory order.
pub fn read_corpus(root: &Path) -> Result<(CorpusConfig, Vec<RegistrationPair>)> {
    let cfg: CorpusConfig = read_json(&root.join(CORPUS_FILE))?;
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir() && p.join("gt.json").is_file()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::State(format!("no pair directories under {}", root.display())));
    }
    let pairs = dirs.iter().map(|d| read_pair(d).map(|(p, _)| p)).collect::<Result<_>>()?;
    Ok((cfg, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            shapes: default_shape_bank()[..2].to_vec(),
            transforms_per_shape: 2,
            pairs: PairConfig { points: 40, keep: 30, ..Default::default() },
            seed: 4,
        }
    }

    #[test]
    fn pair_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let pair = small().generate().unwrap().remove(0);
        write_pair(dir.path(), &pair).unwrap();
        let (back, sdf) = read_pair(dir.path()).unwrap();
        assert_eq!(back.source, pair.source);
        assert_eq!(back.target_partial.points(), pair.target_partial.points());
        assert_eq!(back.gt, pair.gt);
        assert_eq!(sdf, make_sdf_samples(&pair.target_partial, pair.seed));
        assert_eq!(sdf.len(), 4 * 30);
    }

    #[test]
    fn corpus_is_byte_identical_across_runs() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = write_corpus(a.path(), &small()).unwrap();
        let fb = write_corpus(b.path(), &small()).unwrap();
        assert_eq!(fa.len(), 1 + 4 * 5);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        let (cfg, pairs) = read_corpus(a.path()).unwrap();
        assert_eq!(cfg, small());
        assert_eq!(pairs.len(), 4);
    }

    #[test]
    fn log_csv_header_and_round_trip() {
        let rows = vec![LogRow { step: 0, l_reg: 1.5, l_com: 0.25, total: 1.525 }];
        let text = log_csv(&rows).unwrap();
        assert!(text.starts_with("step,L_reg,L_com,total\n"));
        assert_eq!(parse_log_csv(&text).unwrap(), rows);
        assert_eq!(log_csv(&[]).unwrap(), "step,L_reg,L_com,total\n");
    }

    #[test]
    fn transform_record_uses_degrees() {
        let t = RigidTransform { angles: Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), translation: Vector3::new(1.0, 2.0, 3.0) };
        let json = serde_json::to_string(&TransformRecord::from(&t)).unwrap();
        assert_eq!(json, r#"{"angles_deg":[90.0,0.0,0.0],"translation":[1.0,2.0,3.0]}"#);
    }

    #[test]
    fn missing_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_corpus(dir.path()).is_err());
    }
}
