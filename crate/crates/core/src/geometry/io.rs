//! ASCII PLY / XYZ point-set files and ASCII OFF meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point, PointSet, SetTag};
use crate::error::{Error, Result};

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_f64(tok: &str, what: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(format!("bad {what}: {tok:?}")))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| parse_err(format!("bad {what}: {tok:?}")))
}

/// Serializes points as an ASCII PLY with double `x y z` vertex properties.
///
/// Floats use Rust's shortest round-trip formatting, so writing is deterministic
/// and reading back restores every coordinate exactly.
pub fn ply_string(points: &[Point]) -> String {
    let mut s = String::with_capacity(64 + points.len() * 48);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_ply(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err("missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    loop {
        let line = lines.next().ok_or_else(|| parse_err("unterminated PLY header"))?.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(format!("unsupported PLY format {fmt}")));
                }
                ascii = true;
            }
            ["element", "vertex", n] => {
                vertex_count = Some(parse_usize(n, "vertex count")?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {}
            ["property", _ty, name] if in_vertex => props.push((*name).to_string()),
            _ => {}
        }
    }
    if !ascii {
        return Err(parse_err("PLY format line missing"));
    }
    let n = vertex_count.ok_or_else(|| parse_err("PLY has no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name).ok_or_else(|| parse_err(format!("PLY vertex lacks property {name}")));
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(n);
    for line in lines.filter(|l| !l.trim().is_empty()).take(n) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < props.len() {
            return Err(parse_err(format!("short PLY vertex line: {line:?}")));
        }
        points.push(Point::new(parse_f64(toks[ix], "x")?, parse_f64(toks[iy], "y")?, parse_f64(toks[iz], "z")?));
    }
    if points.len() != n {
        return Err(parse_err(format!("PLY declares {n} vertices, found {}", points.len())));
    }
    Ok(points)
}

pub fn xyz_string(points: &[Point]) -> String {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_xyz(text: &str) -> Result<Vec<Point>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() < 3 {
                return Err(parse_err(format!("XYZ line needs three values: {l:?}")));
            }
            Ok(Point::new(parse_f64(toks[0], "x")?, parse_f64(toks[1], "y")?, parse_f64(toks[2], "z")?))
        })
        .collect()
}

fn is_xyz(path: &Path) -> Result<bool> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ply") => Ok(false),
        Some("xyz") | Some("txt") => Ok(true),
        other => Err(parse_err(format!("unsupported point-set extension {other:?}"))),
    }
}

/// Writes a point set; `.ply` gives ASCII PLY, `.xyz`/`.txt` plain coordinates.
pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    let text = if is_xyz(path)? { xyz_string(points) } else { ply_string(points) };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_points(path: &Path, tag: SetTag) -> Result<PointSet> {
    let text = fs::read_to_string(path)?;
    let points = if is_xyz(path)? { parse_xyz(&text)? } else { parse_ply(&text)? };
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("points");
    PointSet::new(points, tag, id)
}

/// Triangle mesh as read from an OFF file.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
}

/// Parses ASCII OFF, including the `OFF<nv> <nf> <ne>` single-line header variant.
/// Polygons are fan-triangulated.
pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let first = lines.next().ok_or_else(|| parse_err("empty OFF file"))?;
    let rest = first.strip_prefix("OFF").ok_or_else(|| parse_err("missing 'OFF' magic"))?.trim();
    let counts_line = if rest.is_empty() { lines.next().ok_or_else(|| parse_err("missing OFF counts"))? } else { rest };
    let counts: Vec<&str> = counts_line.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(parse_err(format!("bad OFF counts line {counts_line:?}")));
    }
    let nv = parse_usize(counts[0], "vertex count")?;
    let nf = parse_usize(counts[1], "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let l = lines.next().ok_or_else(|| parse_err("OFF ended inside vertex list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(parse_err(format!("bad OFF vertex {l:?}")));
        }
        vertices.push(Point::new(parse_f64(t[0], "x")?, parse_f64(t[1], "y")?, parse_f64(t[2], "z")?));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let l = lines.next().ok_or_else(|| parse_err("OFF ended inside face list"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let k = parse_usize(t.first().copied().unwrap_or(""), "face arity")?;
        if k < 3 || t.len() < k + 1 {
            return Err(parse_err(format!("bad OFF face {l:?}")));
        }
        let idx = t[1..=k].iter().map(|s| parse_usize(s, "face index")).collect::<Result<Vec<_>>>()?;
        if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(format!("face index {bad} out of range")));
        }
        for j in 1..k - 1 {
            triangles.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(TriMesh { vertices, triangles })
}

pub fn read_off(path: &Path) -> Result<TriMesh> {
    parse_off(&fs::read_to_string(path)?)
}
