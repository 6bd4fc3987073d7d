//! File formats: JSON transform sets and sync results, CSV point clouds,
//! shape-set directories and result tables.
//!
//! Every writer stages its output next to the target and renames it into
//! place, so a failed write never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procrustes::PointCloud;
use crate::simulate::ResultRow;
use crate::sync::{PairwiseTransformSet, SyncResult};
use crate::transform::Transform;

pub const MANIFEST: &str = "manifest.json";

/// 17 significant digits, enough for an exact round trip.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_transform_set(path: &Path) -> Result<PairwiseTransformSet> {
    read_json(path)
}

pub fn write_transform_set(path: &Path, set: &PairwiseTransformSet) -> Result<()> {
    write_json(path, set)
}

pub fn read_sync_result(path: &Path) -> Result<SyncResult> {
    read_json(path)
}

pub fn write_sync_result(path: &Path, result: &SyncResult) -> Result<()> {
    write_json(path, result)
}

pub fn read_transforms(path: &Path) -> Result<Vec<Transform>> {
    read_json(path)
}

pub fn write_transforms(path: &Path, transforms: &[Transform]) -> Result<()> {
    write_json(path, transforms)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

fn parse_present(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "True" | "TRUE" => Some(true),
        "0" | "false" | "False" | "FALSE" => Some(false),
        _ => None,
    }
}

pub fn point_cloud_to_csv(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = cloud.dim();
    let mut header: Vec<String> = (0..d).map(|c| format!("x{c}")).collect();
    header.push("present".into());
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for r in 0..cloud.n() {
        let mut rec: Vec<String> = cloud.points().row(r).iter().map(|&v| format_f64(v)).collect();
        rec.push(if cloud.is_present(r) { "1" } else { "0" }.into());
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn point_cloud_from_csv(text: &[u8], origin: &Path) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text);
    let header = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let cols = header.len();
    if cols < 2 {
        return Err(csv_err(origin, "expected header x0,...,x{d-1},present"));
    }
    let d = cols - 1;
    for (c, name) in header.iter().take(d).enumerate() {
        if name != format!("x{c}") {
            return Err(csv_err(origin, format!("column {c} is '{name}', expected 'x{c}'")));
        }
    }
    if &header[d] != "present" {
        return Err(csv_err(origin, "last column must be 'present'"));
    }
    let mut values = Vec::new();
    let mut present = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        for c in 0..d {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| csv_err(origin, format!("row {line}: bad number '{}'", &rec[c])))?;
            values.push(v);
        }
        present.push(
            parse_present(&rec[d])
                .ok_or_else(|| csv_err(origin, format!("row {line}: bad present flag '{}'", &rec[d])))?,
        );
    }
    let points = DMatrix::from_row_slice(present.len(), d, &values);
    PointCloud::new(points, present).map_err(|e| csv_err(origin, e))
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    point_cloud_from_csv(&fs::read(path)?, path)
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &point_cloud_to_csv(cloud)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n: usize,
    pub d: usize,
    pub files: Vec<String>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::Parse(format!("{}: manifest not found", path.display())));
    }
    read_json(&path)
}

/// Reads the shapes listed in `dir/manifest.json`, in manifest order.
pub fn read_shape_set(dir: &Path) -> Result<Vec<PointCloud>> {
    let manifest = read_manifest(dir)?;
    manifest
        .files
        .iter()
        .map(|f| {
            let path = dir.join(f);
            let cloud = read_point_cloud(&path)?;
            if cloud.n() != manifest.n || cloud.dim() != manifest.d {
                return Err(Error::Parse(format!(
                    "{}: {}×{} points, manifest says {}×{}",
                    path.display(),
                    cloud.n(),
                    cloud.dim(),
                    manifest.n,
                    manifest.d
                )));
            }
            Ok(cloud)
        })
        .collect()
}

/// Replaces `dir` by a fully written directory built by `fill`.
pub fn write_dir_atomic<F>(dir: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let parent = parent_dir(dir);
    fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent)?;
    fill(staging.path())?;
    let staged = staging.keep();
    if dir.exists() {
        let backup = tempfile::Builder::new().prefix(".old-").tempdir_in(parent)?.keep();
        let old = backup.join("old");
        fs::rename(dir, &old)?;
        if let Err(e) = fs::rename(&staged, dir) {
            fs::rename(&old, dir)?;
            let _ = fs::remove_dir_all(&staged);
            return Err(e.into());
        }
        fs::remove_dir_all(&backup)?;
    } else if let Err(e) = fs::rename(&staged, dir) {
        let _ = fs::remove_dir_all(&staged);
        return Err(e.into());
    }
    Ok(())
}

pub fn shape_file_name(i: usize) -> String {
    format!("shape_{i:04}.csv")
}

fn write_shapes_into(dir: &Path, shapes: &[PointCloud]) -> Result<Manifest> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Contract("empty shape set".into()))?;
    let mut files = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        if s.n() != first.n() || s.dim() != first.dim() {
            return Err(Error::Contract("shapes differ in point count or dimension".into()));
        }
        let name = shape_file_name(i);
        fs::write(dir.join(&name), point_cloud_to_csv(s)?)?;
        files.push(name);
    }
    let manifest = Manifest {
        n: first.n(),
        d: first.dim(),
        files,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Writes a shape set directory with a manifest, replacing `dir`.
pub fn write_shape_set(dir: &Path, shapes: &[PointCloud]) -> Result<()> {
    write_dir_atomic(dir, |staged| write_shapes_into(staged, shapes).map(|_| ()))
}

/// Writes a shape set plus extra files produced by `extra` into the same
/// staged directory.
pub fn write_shape_set_with<F>(dir: &Path, shapes: &[PointCloud], extra: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    write_dir_atomic(dir, |staged| {
        write_shapes_into(staged, shapes)?;
        extra(staged)
    })
}

pub const RESULT_COLUMNS: [&str; 5] =
    ["grid_value", "method_or_signal", "mean_error", "std_error", "trials"];

pub fn results_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.write_record([
            format_f64(r.grid_value),
            r.method_or_signal.clone(),
            format_f64(r.mean_error),
            format_f64(r.std_error),
            r.trials.to_string(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_atomic(path, &results_to_csv(rows)?)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(csv_err(path, "unexpected result table header"));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| csv_err(path, format!("bad number '{}'", &rec[i])))
            };
            Ok(ResultRow {
                grid_value: num(0)?,
                method_or_signal: rec[1].to_string(),
                mean_error: num(2)?,
                std_error: num(3)?,
                trials: rec[4].parse().map_err(|_| csv_err(path, "bad trial count"))?,
            })
        })
        .collect()
}

/// Path with the extension replaced, e.g. the metadata file next to a
/// result table.
pub fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{Kind, TransformClass};

    #[test]
    fn point_cloud_round_trip_is_exact() {
        let pts = DMatrix::from_row_slice(3, 2, &[0.1, -2.0 / 3.0, 1e-300, 7.0, f64::NAN, 1.0]);
        let cloud = PointCloud::new(pts, vec![true, true, false]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_point_cloud(&path, &cloud).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,present\n"));
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back.present(), cloud.present());
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(back.points()[(r, c)], cloud.points()[(r, c)]);
            }
        }
    }

    #[test]
    fn bad_header_rejected() {
        let err = point_cloud_from_csv(b"a,b,present\n1,2,1\n", Path::new("t")).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(point_cloud_from_csv(b"x0,x1,present\n1,2,maybe\n", Path::new("t")).is_err());
    }

    #[test]
    fn shape_set_round_trip_and_replace() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("set");
        let a = PointCloud::full(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        write_shape_set(&target, &[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(read_shape_set(&target).unwrap().len(), 3);
        write_shape_set(&target, &[a.clone(), a.clone()]).unwrap();
        assert_eq!(read_manifest(&target).unwrap().files.len(), 2);
        assert!(!target.join(shape_file_name(2)).exists());
        let leftovers = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn missing_manifest_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_shape_set(dir.path()), Err(Error::Parse(_))));
    }

    #[test]
    fn transform_set_json_round_trip() {
        let mut set = PairwiseTransformSet::new(2, 2, Kind::Homogeneous, TransformClass::Affine).unwrap();
        let t = Transform::from_matrix(
            2,
            Kind::Homogeneous,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, -0.3, 0.9, 0.0, 0.1, 1.0 / 3.0, 1.0]),
        )
        .unwrap();
        set.set(0, 1, t.clone()).unwrap();
        set.set(1, 0, t.invert().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        write_transform_set(&path, &set).unwrap();
        let back = read_transform_set(&path).unwrap();
        let diff = (back.get(0, 1).unwrap().matrix() - t.matrix()).norm();
        assert!(diff <= 1e-15 * t.matrix().norm());
    }

    #[test]
    fn results_round_trip_with_17_digits() {
        let rows = vec![ResultRow {
            grid_value: 0.35,
            method_or_signal: "sync".into(),
            mean_error: 1.0 / 3.0,
            std_error: 0.0,
            trials: 50,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(read_results(&path).unwrap(), rows);
    }
}
