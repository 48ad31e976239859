//! File formats: headered CSV matrices and labels, JSON-lines trajectories,
//! versioned JSON checkpoints.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Version written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    malformed(path, e.to_string())
}

/// Writes `rows` under `header`; numbers use the shortest round-trip form.
pub fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Matrix with a header of `{prefix}{j}` column names.
pub fn write_matrix(path: &Path, m: &Matrix, prefix: &str) -> Result<()> {
    let header: Vec<String> = (0..m.cols()).map(|j| format!("{prefix}{j}")).collect();
    write_csv(
        path,
        &header,
        m.row_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect()),
    )
}

/// Header names and numeric body of a CSV matrix.
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header.is_empty() {
        return Err(malformed(path, "empty header"));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                malformed(path, format!("row {}: {field:?} is not a number", i + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok((header.clone(), Matrix::from_vec(rows, header.len(), data)?))
}

/// Per-cell labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub cell_id: usize,
    pub timepoint: usize,
    pub branch: usize,
    pub time: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub growth: Option<f64>,
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let with_growth = rows.iter().any(|r| r.growth.is_some());
    let mut header: Vec<String> = ["cell_id", "timepoint", "branch", "time"]
        .map(String::from)
        .to_vec();
    if with_growth {
        header.push("growth".into());
    }
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut v = vec![
                r.cell_id.to_string(),
                r.timepoint.to_string(),
                r.branch.to_string(),
                r.time.to_string(),
            ];
            if with_growth {
                v.push(r.growth.map_or(String::new(), |g| g.to_string()));
            }
            v
        }),
    )
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let row: LabelRow = rec.map_err(|e| csv_err(path, e))?;
        out.push(row);
    }
    Ok(out)
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub cell_id: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub branch: Option<usize>,
    pub times: Vec<f64>,
    pub path: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

pub fn write_trajectories(path: &Path, recs: &[TrajectoryRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in recs {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| malformed(path, format!("line {}: {e}", i + 1)))?;
        if rec.path.len() != rec.times.len() || rec.mass.len() != rec.times.len() {
            return Err(malformed(
                path,
                format!("line {}: times, path and mass lengths differ", i + 1),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct Header {
    version: u32,
    kind: String,
}

/// Writes `body` with a version and kind tag.
pub fn write_checkpoint<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Envelope {
        version: CHECKPOINT_VERSION,
        kind,
        body,
    })?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads a checkpoint, checking its version and kind first.
pub fn read_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let h: Header = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if h.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: h.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if h.kind != kind {
        return Err(malformed(
            path,
            format!("expected a {kind} checkpoint, found {}", h.kind),
        ));
    }
    let mut v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if let Some(o) = v.as_object_mut() {
        o.remove("version");
        o.remove("kind");
    }
    serde_json::from_value(v).map_err(|e| malformed(path, e.to_string()))
}

/// Writes `text` and returns the path, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, text)?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = Matrix::from_rows(&[vec![0.1, -2.5e-9], vec![1.0 / 3.0, 12345.678]]).unwrap();
        write_matrix(&p, &m, "z").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("z0,z1\n"));
        let (h, back) = read_matrix(&p).unwrap();
        assert_eq!(h, vec!["z0", "z1"]);
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Malformed { .. })));
        fs::write(&p, "a,b\n1\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Malformed { .. })));
        assert!(matches!(
            read_matrix(&dir.path().join("none.csv")),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn checkpoint_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        write_checkpoint(&p, "thing", &serde_json::json!({"x": 1})).unwrap();
        let v: serde_json::Value = read_checkpoint(&p, "thing").unwrap();
        assert_eq!(v, serde_json::json!({"x": 1}));
        assert!(matches!(
            read_checkpoint::<serde_json::Value>(&p, "other"),
            Err(Error::Malformed { .. })
        ));
        fs::write(&p, r#"{"version": 99, "kind": "thing", "x": 1}"#).unwrap();
        assert!(matches!(
            read_checkpoint::<serde_json::Value>(&p, "thing"),
            Err(Error::CheckpointVersion { found: 99, .. })
        ));
    }

    #[test]
    fn trajectories_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        let recs = vec![
            TrajectoryRecord {
                cell_id: 3,
                branch: Some(1),
                times: vec![0.0, 0.5],
                path: vec![vec![1.0, 2.0], vec![1.5, 2.5]],
                mass: vec![1.0, 1.2],
            },
            TrajectoryRecord {
                cell_id: 4,
                branch: None,
                times: vec![0.0],
                path: vec![vec![0.0, 0.0]],
                mass: vec![1.0],
            },
        ];
        write_trajectories(&p, &recs).unwrap();
        assert_eq!(read_trajectories(&p).unwrap(), recs);
        let l = dir.path().join("l.csv");
        let rows = vec![LabelRow {
            cell_id: 0,
            timepoint: 1,
            branch: 2,
            time: 0.25,
            growth: Some(1.5),
        }];
        write_labels(&l, &rows).unwrap();
        assert_eq!(read_labels(&l).unwrap(), rows);
    }
}
