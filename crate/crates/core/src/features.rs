//! Angle-histogram features: for each configured joint angle, the centre of
//! the most populated histogram bin over a rep.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::pose::{angle_series, AngleTriplet, ClipSequence, PoseError};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("malformed feature table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub bin_count: usize,
    pub triplets: Vec<AngleTriplet>,
    /// Scale model inputs to `[0, 1)` by dividing degrees by 360.
    pub normalize_for_model: bool,
}

impl FeatureConfig {
    pub fn new(triplets: Vec<AngleTriplet>) -> Self {
        Self {
            bin_count: 36,
            triplets,
            normalize_for_model: true,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.bin_count < 4 {
            return Err(FeatureError::InvalidConfig("bin_count must be >= 4".into()));
        }
        if self.triplets.is_empty() {
            return Err(FeatureError::InvalidConfig("no angle triplets".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        360.0 / self.bin_count as f64
    }

    pub fn dim(&self) -> usize {
        self.triplets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub label: String,
    pub counts: Vec<usize>,
}

impl AngleHistogram {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Edge `B_k`, for `k` in `0..=bin_count`.
    pub fn edge(&self, k: usize) -> f64 {
        bin_edge(k, self.counts.len())
    }

    pub fn center(&self, k: usize) -> f64 {
        bin_center(k, self.counts.len())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Most populated bin; the lowest index wins ties.
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = k;
            }
        }
        best
    }
}

pub fn bin_edge(k: usize, bins: usize) -> f64 {
    k as f64 * 360.0 / bins as f64
}

pub fn bin_center(k: usize, bins: usize) -> f64 {
    (bin_edge(k, bins) + bin_edge(k + 1, bins)) / 2.0
}

/// Bin `k` with `B_k <= theta < B_{k+1}`, for `theta` in `[0, 360)`.
pub fn bin_index(theta: f64, bins: usize) -> usize {
    let mut k = ((theta / 360.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    // the division can land one bin off near an edge
    while k > 0 && theta < bin_edge(k, bins) {
        k -= 1;
    }
    while k + 1 < bins && theta >= bin_edge(k + 1, bins) {
        k += 1;
    }
    k
}

pub fn histogram_of(label: &str, angles: &[f64], bins: usize) -> AngleHistogram {
    let mut counts = vec![0usize; bins];
    for &theta in angles {
        counts[bin_index(theta, bins)] += 1;
    }
    AngleHistogram {
        label: label.to_string(),
        counts,
    }
}

/// Histogram of one triplet's angle over all frames of a rep.
pub fn histogram(
    rep: &ClipSequence,
    triplet: &AngleTriplet,
    config: &FeatureConfig,
) -> Result<AngleHistogram, FeatureError> {
    config.validate()?;
    let series = angle_series(rep, triplet)?;
    let angles: Vec<f64> = series.into_iter().map(|(_, a)| a).collect();
    Ok(histogram_of(&triplet.label, &angles, config.bin_count))
}

/// Per-rep feature vector, one bin centre (degrees) per triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleFeatureVector {
    pub values: Vec<f64>,
}

impl AngleFeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn model_input(&self, config: &FeatureConfig) -> Vec<f64> {
        if config.normalize_for_model {
            self.values.iter().map(|v| v / 360.0).collect()
        } else {
            self.values.clone()
        }
    }
}

pub fn feature_vector(
    rep: &ClipSequence,
    config: &FeatureConfig,
) -> Result<AngleFeatureVector, FeatureError> {
    config.validate()?;
    let values = config
        .triplets
        .iter()
        .map(|t| {
            let h = histogram(rep, t, config)?;
            Ok(h.center(h.mode_bin()))
        })
        .collect::<Result<_, FeatureError>>()?;
    Ok(AngleFeatureVector { values })
}

/// Row of the feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub clip_id: String,
    pub rep_idx: usize,
    pub class_idx: usize,
    pub values: Vec<f64>,
}

pub fn write_feature_table<W: Write>(rows: &[FeatureRow], dim: usize, writer: W) -> Result<(), FeatureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["clip_id".to_string(), "rep_idx".into(), "class_idx".into()];
    header.extend((1..=dim).map(|i| format!("f_{i}")));
    wtr.write_record(&header)?;
    for row in rows {
        if row.values.len() != dim {
            return Err(FeatureError::Malformed(format!(
                "{} rep {} has {} features, expected {dim}",
                row.clip_id,
                row.rep_idx,
                row.values.len()
            )));
        }
        let mut rec = vec![row.clip_id.clone(), row.rep_idx.to_string(), row.class_idx.to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_feature_table<R: Read>(reader: R) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "clip_id" || &header[1] != "rep_idx" || &header[2] != "class_idx" {
        return Err(FeatureError::Malformed("expected clip_id,rep_idx,class_idx,f_1..".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| FeatureError::Malformed(format!("row {line}: bad {what}"));
        let rep_idx = rec[1].parse().map_err(|_| bad("rep_idx"))?;
        let class_idx = rec[2].parse().map_err(|_| bad("class_idx"))?;
        let values = (3..rec.len())
            .map(|c| rec[c].parse::<f64>().map_err(|_| bad("feature value")))
            .collect::<Result<_, _>>()?;
        rows.push(FeatureRow {
            clip_id: rec[0].to_string(),
            rep_idx,
            class_idx,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{KeypointFrame, SkeletonProfile};
    use std::sync::Arc;

    #[test]
    fn constant_angle_lands_in_one_bin() {
        let h = histogram_of("x", &[95.0; 20], 36);
        assert_eq!(h.counts[9], 20);
        assert_eq!(h.total(), 20);
        assert_eq!(h.center(h.mode_bin()), 95.0);
    }

    #[test]
    fn uniform_sweep_fills_every_bin_equally() {
        let angles: Vec<f64> = (0..360).map(|d| d as f64).collect();
        let h = histogram_of("x", &angles, 36);
        assert!(h.counts.iter().all(|&c| c == 10));
    }

    #[test]
    fn ties_go_to_the_lower_bin() {
        let mut angles = vec![85.0; 40];
        angles.extend(vec![175.0; 40]);
        let h = histogram_of("x", &angles, 36);
        assert_eq!(h.center(h.mode_bin()), 85.0);
    }

    #[test]
    fn edges_belong_to_the_upper_bin() {
        assert_eq!(bin_index(0.0, 36), 0);
        assert_eq!(bin_index(10.0, 36), 1);
        assert_eq!(bin_index(359.999_999, 36), 35);
        for k in 0..7 {
            assert_eq!(bin_index(bin_edge(k, 7), 7), k);
        }
    }

    #[test]
    fn feature_of_a_static_right_angle() {
        let profile = Arc::new(SkeletonProfile::coco17());
        let mut points = vec![[0.5, 0.5]; 17];
        points[5] = [0.0, 0.0];
        points[7] = [1.0, 0.0];
        points[9] = [1.0, 1.0];
        let frames = (0..10)
            .map(|i| KeypointFrame::with_points(i as f64 * 33.0, points.clone()))
            .collect();
        let clip = ClipSequence::new(profile.clone(), frames, None, "t").unwrap();
        let cfg = FeatureConfig::new(vec![profile.triplet("left_elbow").unwrap().clone()]);
        let f = feature_vector(&clip, &cfg).unwrap();
        assert_eq!(f.values, vec![95.0]);
        assert_eq!(f.model_input(&cfg), vec![95.0 / 360.0]);
    }

    #[test]
    fn feature_table_round_trip() {
        let rows = vec![
            FeatureRow {
                clip_id: "tree/correct/a".into(),
                rep_idx: 0,
                class_idx: 0,
                values: vec![95.0, 265.0],
            },
            FeatureRow {
                clip_id: "tree/x/b".into(),
                rep_idx: 3,
                class_idx: 2,
                values: vec![5.0, 355.0],
            },
        ];
        let mut buf = Vec::new();
        write_feature_table(&rows, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("clip_id,rep_idx,class_idx,f_1,f_2\n"));
        assert_eq!(read_feature_table(buf.as_slice()).unwrap(), rows);
    }
}
