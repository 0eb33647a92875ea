//! Pose CSV files and dataset manifests.
//!
//! Pose CSV layout: header `frame,time_ms,j0_x,j0_y,j0_c,...,j{N-1}_c`, one
//! row per frame, comma separated, UTF-8, values written with six decimals.
//! The `frame` column counts up from 0. Datasets live under
//! `<exercise>/<class>/<clip_id>.csv` with a `manifest.json` at the exercise
//! root.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::pose::{ClipSequence, KeypointFrame, PoseError, SkeletonProfile};

/// Coordinates read from CSV are clamped into this range.
pub const COORD_CLAMP: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("time_ms does not increase at row {row}")]
    NonMonotonicTime { row: usize },
    #[error("file has no frames")]
    EmptyFile,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn csv_header(joint_count: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(2 + 3 * joint_count);
    cols.push("frame".to_string());
    cols.push("time_ms".to_string());
    for j in 0..joint_count {
        cols.push(format!("j{j}_x"));
        cols.push(format!("j{j}_y"));
        cols.push(format!("j{j}_c"));
    }
    cols
}

/// Parsed clip plus the number of coordinates that had to be clamped.
#[derive(Debug, Clone)]
pub struct ParsedClip {
    pub clip: ClipSequence,
    pub clamped: usize,
}

pub fn parse_clip<R: Read>(
    reader: R,
    profile: Arc<SkeletonProfile>,
    exercise: &str,
) -> Result<ParsedClip, DatasetError> {
    let n = profile.joint_count();
    let expected = csv_header(n);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != expected.len() {
        return Err(DatasetError::SchemaMismatch(format!(
            "{} columns, profile {} needs {}",
            header.len(),
            profile.name(),
            expected.len()
        )));
    }
    if let Some((got, want)) = header.iter().zip(&expected).find(|(g, w)| g.trim() != w.as_str()) {
        return Err(DatasetError::SchemaMismatch(format!(
            "column {got:?} where {want:?} was expected"
        )));
    }

    let mut frames: Vec<KeypointFrame> = Vec::new();
    let mut clamped = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(DatasetError::SchemaMismatch(format!(
                "row {row} has {} columns, expected {}",
                record.len(),
                expected.len()
            )));
        }
        let num = |col: usize| -> Result<f64, DatasetError> {
            record[col].trim().parse::<f64>().map_err(|_| {
                DatasetError::SchemaMismatch(format!(
                    "row {row} column {}: {:?} is not a number",
                    expected[col], &record[col]
                ))
            })
        };
        let frame_no: usize = record[0].trim().parse().map_err(|_| {
            DatasetError::SchemaMismatch(format!("row {row}: frame {:?} is not an integer", &record[0]))
        })?;
        if frame_no != row {
            return Err(DatasetError::SchemaMismatch(format!(
                "row {row}: frame column is {frame_no}, expected {row}"
            )));
        }
        let time_ms = num(1)?;
        if !time_ms.is_finite() || time_ms < 0.0 {
            return Err(DatasetError::SchemaMismatch(format!("row {row}: bad time_ms")));
        }
        if let Some(prev) = frames.last() {
            if !(time_ms > prev.time_ms) {
                return Err(DatasetError::NonMonotonicTime { row });
            }
        }
        let mut points = Vec::with_capacity(n);
        let mut confidence = Vec::with_capacity(n);
        for j in 0..n {
            let mut p = [num(2 + 3 * j)?, num(3 + 3 * j)?];
            for v in &mut p {
                if !v.is_finite() {
                    return Err(DatasetError::SchemaMismatch(format!(
                        "row {row}: non-finite coordinate"
                    )));
                }
                let c = v.clamp(COORD_CLAMP.0, COORD_CLAMP.1);
                if c != *v {
                    clamped += 1;
                    *v = c;
                }
            }
            points.push(p);
            confidence.push(num(4 + 3 * j)?.clamp(0.0, 1.0));
        }
        frames.push(KeypointFrame::new(time_ms, points, confidence));
    }
    if frames.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} coordinates outside {COORD_CLAMP:?}");
    }
    let clip = ClipSequence::new(profile, frames, None, exercise)?;
    Ok(ParsedClip { clip, clamped })
}

/// Exercise name implied by `<exercise>/<class>/<clip>.csv`.
pub fn exercise_from_path(path: &Path) -> Option<String> {
    path.parent()?
        .parent()?
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
}

pub fn read_clip(path: &Path, profile: Arc<SkeletonProfile>) -> Result<ClipSequence, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let exercise = exercise_from_path(path).unwrap_or_default();
    Ok(parse_clip(file, profile, &exercise)?.clip)
}

pub fn format_clip<W: Write>(clip: &ClipSequence, writer: W) -> Result<(), DatasetError> {
    let n = clip.profile.joint_count();
    let mut wtr = csv::WriterBuilder::new().from_writer(writer);
    wtr.write_record(csv_header(n))?;
    let mut row: Vec<String> = Vec::with_capacity(2 + 3 * n);
    for (idx, frame) in clip.frames.iter().enumerate() {
        row.clear();
        row.push(idx.to_string());
        row.push(format!("{:.6}", frame.time_ms));
        for (p, c) in frame.points.iter().zip(&frame.confidence) {
            row.push(format!("{:.6}", p[0]));
            row.push(format!("{:.6}", p[1]));
            row.push(format!("{:.6}", c));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| DatasetError::Io {
        path: PathBuf::new(),
        source: e,
    })?;
    Ok(())
}

pub fn write_clip(clip: &ClipSequence, path: &Path) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut buf = std::io::BufWriter::new(file);
    format_clip(clip, &mut buf)?;
    buf.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub class_index: usize,
    pub subject_id: String,
}

/// Clips of one exercise with their class labels. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub exercise: String,
    pub classes: Vec<String>,
    pub clips: Vec<ManifestEntry>,
    pub profile: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.classes.len() != 3 {
            return Err(DatasetError::InvalidManifest(format!(
                "expected 3 classes, found {}",
                self.classes.len()
            )));
        }
        if self.classes[0] != "correct" {
            return Err(DatasetError::InvalidManifest(
                "class 0 must be \"correct\"".into(),
            ));
        }
        if let Some(bad) = self.clips.iter().find(|c| c.class_index > 2) {
            return Err(DatasetError::InvalidManifest(format!(
                "{}: class_index {} out of range",
                bad.path, bad.class_index
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        self.validate()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }

    /// Reads every listed clip, labels attached, in manifest order.
    pub fn read_clips(
        &self,
        root: &Path,
        profile: Arc<SkeletonProfile>,
    ) -> Result<Vec<(String, ClipSequence)>, DatasetError> {
        self.clips
            .iter()
            .map(|entry| {
                let mut clip = read_clip(&root.join(&entry.path), Arc::clone(&profile))?;
                clip.label = Some(entry.class_index);
                clip.exercise = self.exercise.clone();
                Ok((clip_id(&entry.path), clip))
            })
            .collect()
    }
}

/// Stable clip identifier: the manifest path without extension.
pub fn clip_id(path: &str) -> String {
    path.strip_suffix(".csv").unwrap_or(path).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> Arc<SkeletonProfile> {
        Arc::new(SkeletonProfile::coco17())
    }

    fn zeros_csv(joints: usize, rows: usize) -> String {
        let mut s = csv_header(joints).join(",");
        s.push('\n');
        for r in 0..rows {
            let mut cols = vec![r.to_string(), format!("{}", r * 33)];
            cols.extend(std::iter::repeat("0".to_string()).take(3 * joints));
            s.push_str(&cols.join(","));
            s.push('\n');
        }
        s
    }

    #[test]
    fn reads_all_zero_file() {
        let parsed = parse_clip(zeros_csv(17, 2).as_bytes(), profile(), "x").unwrap();
        assert_eq!(parsed.clip.len(), 2);
        assert!(parsed.clip.frames.iter().all(|f| f.points.len() == 17));
        assert_eq!(parsed.clamped, 0);
    }

    #[test]
    fn wrong_column_count_is_schema_mismatch() {
        let err = parse_clip(zeros_csv(16, 2).as_bytes(), profile(), "x").unwrap_err();
        assert!(matches!(err, DatasetError::SchemaMismatch(_)));
    }

    #[test]
    fn header_only_is_empty() {
        let err = parse_clip(zeros_csv(17, 0).as_bytes(), profile(), "x").unwrap_err();
        assert!(matches!(err, DatasetError::EmptyFile));
    }

    #[test]
    fn repeated_time_is_rejected() {
        let text = zeros_csv(17, 3).replace("\n1,33,", "\n1,0,");
        let err = parse_clip(text.as_bytes(), profile(), "x").unwrap_err();
        assert!(matches!(err, DatasetError::NonMonotonicTime { row: 1 }));
    }

    #[test]
    fn frame_column_must_count_from_zero() {
        let text = zeros_csv(17, 2).replace("\n0,0,", "\n5,0,");
        assert!(matches!(
            parse_clip(text.as_bytes(), profile(), "x").unwrap_err(),
            DatasetError::SchemaMismatch(_)
        ));
    }

    #[test]
    fn out_of_range_coordinates_are_clamped_and_counted() {
        let mut text = csv_header(17).join(",");
        text.push('\n');
        let mut cols = vec!["0".to_string(), "0".to_string()];
        for j in 0..17 {
            let x = if j == 3 { "2.5" } else { "0.5" };
            let y = if j == 4 { "-1.0" } else { "0.5" };
            cols.extend([x.to_string(), y.to_string(), "1".to_string()]);
        }
        text.push_str(&cols.join(","));
        let parsed = parse_clip(text.as_bytes(), profile(), "x").unwrap();
        assert_eq!(parsed.clamped, 2);
        assert_eq!(parsed.clip.frames[0].points[3][0], 1.5);
        assert_eq!(parsed.clip.frames[0].points[4][1], -0.5);
    }

    #[test]
    fn manifest_rules() {
        let mut m = DatasetManifest {
            exercise: "tree".into(),
            classes: vec!["correct".into(), "a".into(), "b".into()],
            clips: vec![ManifestEntry {
                path: "correct/c0.csv".into(),
                class_index: 0,
                subject_id: "s0".into(),
            }],
            profile: "coco17".into(),
        };
        assert!(m.validate().is_ok());
        m.clips[0].class_index = 3;
        assert!(m.validate().is_err());
        m.clips[0].class_index = 1;
        m.classes.swap(0, 1);
        assert!(m.validate().is_err());
        m.classes.swap(0, 1);
        m.classes.pop();
        assert!(m.validate().is_err());
    }

    #[test]
    fn exercise_taken_from_directory_convention() {
        let p = Path::new("/data/tree/correct/clip_0001.csv");
        assert_eq!(exercise_from_path(p).as_deref(), Some("tree"));
        assert_eq!(clip_id("correct/clip_0001.csv"), "correct/clip_0001");
    }
}
