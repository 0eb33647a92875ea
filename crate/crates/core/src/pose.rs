//! Skeleton topology, keypoint frames and joint-angle geometry.
//!
//! Angles are turn angles: for a triplet `(i, j, k)` the angle is the signed
//! rotation from `p_j - p_i` to `p_k - p_j`, reported in `[0, 360)`. A
//! straight limb measures 0°.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Vectors shorter than this are treated as coincident joints.
pub const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("degenerate triplet {label}: coincident joints")]
    DegenerateTriplet { label: String },
    #[error("no frame yields a valid angle for triplet {label}")]
    AllFramesDegenerate { label: String },
    #[error("invalid skeleton profile: {0}")]
    InvalidProfile(String),
    #[error("frame has {got} joints, profile {profile} expects {expected}")]
    JointCount {
        profile: String,
        expected: usize,
        got: usize,
    },
    #[error("frame time {time_ms} ms does not advance past {previous_ms} ms")]
    NonMonotonicTime { previous_ms: f64, time_ms: f64 },
    #[error("clip has no frames")]
    EmptyClip,
}

/// An ordered joint triplet `(i, j, k)` whose two connecting vectors define
/// a body angle. Serialized as `[i, j, k, label]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize, String)", into = "(usize, usize, usize, String)")]
pub struct AngleTriplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub label: String,
}

impl AngleTriplet {
    pub fn new(i: usize, j: usize, k: usize, label: impl Into<String>) -> Self {
        Self {
            i,
            j,
            k,
            label: label.into(),
        }
    }
}

impl From<(usize, usize, usize, String)> for AngleTriplet {
    fn from((i, j, k, label): (usize, usize, usize, String)) -> Self {
        Self { i, j, k, label }
    }
}

impl From<AngleTriplet> for (usize, usize, usize, String) {
    fn from(t: AngleTriplet) -> Self {
        (t.i, t.j, t.k, t.label)
    }
}

impl fmt::Display for AngleTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{},{})", self.label, self.i, self.j, self.k)
    }
}

/// Skeleton manifest: joint names plus the angle triplets defined over them.
///
/// The JSON form is `{name, joint_names[], angle_triplets[[i,j,k,label]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileManifest", into = "ProfileManifest")]
pub struct SkeletonProfile {
    name: String,
    joint_names: Vec<String>,
    angle_triplets: Vec<AngleTriplet>,
}

#[derive(Serialize, Deserialize)]
struct ProfileManifest {
    name: String,
    joint_names: Vec<String>,
    angle_triplets: Vec<AngleTriplet>,
}

impl TryFrom<ProfileManifest> for SkeletonProfile {
    type Error = PoseError;

    fn try_from(m: ProfileManifest) -> Result<Self, Self::Error> {
        SkeletonProfile::new(m.name, m.joint_names, m.angle_triplets)
    }
}

impl From<SkeletonProfile> for ProfileManifest {
    fn from(p: SkeletonProfile) -> Self {
        ProfileManifest {
            name: p.name,
            joint_names: p.joint_names,
            angle_triplets: p.angle_triplets,
        }
    }
}

impl SkeletonProfile {
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        angle_triplets: Vec<AngleTriplet>,
    ) -> Result<Self, PoseError> {
        let name = name.into();
        if joint_names.is_empty() {
            return Err(PoseError::InvalidProfile(format!("{name}: no joints")));
        }
        let mut seen = HashSet::new();
        for joint in &joint_names {
            if !seen.insert(joint.as_str()) {
                return Err(PoseError::InvalidProfile(format!(
                    "{name}: duplicate joint name {joint}"
                )));
            }
        }
        let n = joint_names.len();
        for t in &angle_triplets {
            if t.i >= n || t.j >= n || t.k >= n {
                return Err(PoseError::InvalidProfile(format!(
                    "{name}: triplet {t} out of range for {n} joints"
                )));
            }
            if t.i == t.j || t.j == t.k || t.i == t.k {
                return Err(PoseError::InvalidProfile(format!(
                    "{name}: triplet {t} repeats a joint"
                )));
            }
        }
        Ok(Self {
            name,
            joint_names,
            angle_triplets,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|j| j == name)
    }

    pub fn angle_triplets(&self) -> &[AngleTriplet] {
        &self.angle_triplets
    }

    pub fn triplet(&self, label: &str) -> Option<&AngleTriplet> {
        self.angle_triplets.iter().find(|t| t.label == label)
    }

    /// 17-joint COCO ordering. Besides the eight joint angles, the profile
    /// carries four "line" triplets that read 180° when a body segment is
    /// straight (knee or hip), which keeps straight-limb features away from
    /// the 0°/360° seam.
    pub fn coco17() -> Self {
        let names = [
            "nose",
            "left_eye",
            "right_eye",
            "left_ear",
            "right_ear",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hip",
            "right_hip",
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
        ];
        let triplets = vec![
            AngleTriplet::new(5, 7, 9, "left_elbow"),
            AngleTriplet::new(6, 8, 10, "right_elbow"),
            AngleTriplet::new(11, 5, 7, "left_shoulder"),
            AngleTriplet::new(12, 6, 8, "right_shoulder"),
            AngleTriplet::new(5, 11, 13, "left_hip"),
            AngleTriplet::new(6, 12, 14, "right_hip"),
            AngleTriplet::new(11, 13, 15, "left_knee"),
            AngleTriplet::new(12, 14, 16, "right_knee"),
            AngleTriplet::new(13, 11, 15, "left_knee_line"),
            AngleTriplet::new(14, 12, 16, "right_knee_line"),
            AngleTriplet::new(11, 5, 13, "left_hip_line"),
            AngleTriplet::new(12, 6, 14, "right_hip_line"),
        ];
        Self::new("coco17", names.iter().map(|s| s.to_string()).collect(), triplets)
            .expect("builtin profile is valid")
    }

    /// 33-landmark ordering used by BlazePose-style estimators.
    pub fn landmarks33() -> Self {
        let names = [
            "nose",
            "left_eye_inner",
            "left_eye",
            "left_eye_outer",
            "right_eye_inner",
            "right_eye",
            "right_eye_outer",
            "left_ear",
            "right_ear",
            "mouth_left",
            "mouth_right",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_pinky",
            "right_pinky",
            "left_index",
            "right_index",
            "left_thumb",
            "right_thumb",
            "left_hip",
            "right_hip",
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
            "left_heel",
            "right_heel",
            "left_foot_index",
            "right_foot_index",
        ];
        let triplets = vec![
            AngleTriplet::new(11, 13, 15, "left_elbow"),
            AngleTriplet::new(12, 14, 16, "right_elbow"),
            AngleTriplet::new(23, 11, 13, "left_shoulder"),
            AngleTriplet::new(24, 12, 14, "right_shoulder"),
            AngleTriplet::new(11, 23, 25, "left_hip"),
            AngleTriplet::new(12, 24, 26, "right_hip"),
            AngleTriplet::new(23, 25, 27, "left_knee"),
            AngleTriplet::new(24, 26, 28, "right_knee"),
            AngleTriplet::new(25, 23, 27, "left_knee_line"),
            AngleTriplet::new(26, 24, 28, "right_knee_line"),
            AngleTriplet::new(23, 11, 25, "left_hip_line"),
            AngleTriplet::new(24, 12, 26, "right_hip_line"),
        ];
        Self::new(
            "landmarks33",
            names.iter().map(|s| s.to_string()).collect(),
            triplets,
        )
        .expect("builtin profile is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "coco17" => Some(Self::coco17()),
            "landmarks33" => Some(Self::landmarks33()),
            _ => None,
        }
    }
}

/// One timestamped pose: normalized image coordinates and per-joint confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub time_ms: f64,
    pub points: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

impl KeypointFrame {
    pub fn new(time_ms: f64, points: Vec<[f64; 2]>, confidence: Vec<f64>) -> Self {
        Self {
            time_ms,
            points,
            confidence,
        }
    }

    /// Frame with every joint at full confidence.
    pub fn with_points(time_ms: f64, points: Vec<[f64; 2]>) -> Self {
        let confidence = vec![1.0; points.len()];
        Self::new(time_ms, points, confidence)
    }

    pub fn joint_count(&self) -> usize {
        self.points.len()
    }

    pub fn check(&self, profile: &SkeletonProfile) -> Result<(), PoseError> {
        let expected = profile.joint_count();
        if self.points.len() != expected || self.confidence.len() != expected {
            return Err(PoseError::JointCount {
                profile: profile.name().to_string(),
                expected,
                got: self.points.len().min(self.confidence.len()),
            });
        }
        Ok(())
    }
}

/// A recorded clip (or a slice of one) under a single skeleton profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSequence {
    pub profile: Arc<SkeletonProfile>,
    pub frames: Vec<KeypointFrame>,
    pub label: Option<usize>,
    pub exercise: String,
}

impl ClipSequence {
    pub fn new(
        profile: Arc<SkeletonProfile>,
        frames: Vec<KeypointFrame>,
        label: Option<usize>,
        exercise: impl Into<String>,
    ) -> Result<Self, PoseError> {
        if frames.is_empty() {
            return Err(PoseError::EmptyClip);
        }
        let mut previous: Option<f64> = None;
        for frame in &frames {
            frame.check(&profile)?;
            if let Some(prev) = previous {
                if !(frame.time_ms > prev) {
                    return Err(PoseError::NonMonotonicTime {
                        previous_ms: prev,
                        time_ms: frame.time_ms,
                    });
                }
            }
            previous = Some(frame.time_ms);
        }
        Ok(Self {
            profile,
            frames,
            label,
            exercise: exercise.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time_ms).collect()
    }

    /// Frames `start..=end` as a new clip sharing profile, label and exercise.
    pub fn slice(&self, start: usize, end: usize) -> ClipSequence {
        ClipSequence {
            profile: Arc::clone(&self.profile),
            frames: self.frames[start..=end].to_vec(),
            label: self.label,
            exercise: self.exercise.clone(),
        }
    }
}

/// Turn angle in degrees from `p_j - p_i` to `p_k - p_j`, in `[0, 360)`.
pub fn angle_between(pi: [f64; 2], pj: [f64; 2], pk: [f64; 2]) -> Option<f64> {
    let v1 = [pj[0] - pi[0], pj[1] - pi[1]];
    let v2 = [pk[0] - pj[0], pk[1] - pj[1]];
    if v1[0].hypot(v1[1]) <= DEGENERATE_NORM || v2[0].hypot(v2[1]) <= DEGENERATE_NORM {
        return None;
    }
    let cross = v1[0] * v2[1] - v1[1] * v2[0];
    let dot = v1[0] * v2[0] + v1[1] * v2[1];
    Some(wrap_degrees(cross.atan2(dot).to_degrees()))
}

/// Maps any finite angle into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed shortest difference `a - b` in degrees, in `[-180, 180)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + 180.0).rem_euclid(360.0) - 180.0
}

pub fn joint_angle(frame: &KeypointFrame, triplet: &AngleTriplet) -> Result<f64, PoseError> {
    angle_between(
        frame.points[triplet.i],
        frame.points[triplet.j],
        frame.points[triplet.k],
    )
    .ok_or_else(|| PoseError::DegenerateTriplet {
        label: triplet.label.clone(),
    })
}

/// Per-frame angle series for one triplet. Degenerate frames are filled by
/// interpolating along the shorter arc between the nearest valid neighbours,
/// weighted by time; leading and trailing gaps hold the nearest valid value.
pub fn angle_series(
    clip: &ClipSequence,
    triplet: &AngleTriplet,
) -> Result<Vec<(f64, f64)>, PoseError> {
    if clip.frames.is_empty() {
        return Err(PoseError::EmptyClip);
    }
    let raw: Vec<Option<f64>> = clip
        .frames
        .iter()
        .map(|f| joint_angle(f, triplet).ok())
        .collect();
    let valid: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_some()).collect();
    if valid.is_empty() {
        return Err(PoseError::AllFramesDegenerate {
            label: triplet.label.clone(),
        });
    }

    let mut out = Vec::with_capacity(raw.len());
    let mut next_valid = 0usize;
    for (idx, frame) in clip.frames.iter().enumerate() {
        while next_valid < valid.len() && valid[next_valid] < idx {
            next_valid += 1;
        }
        let value = match raw[idx] {
            Some(v) => v,
            None => {
                let before = next_valid.checked_sub(1).map(|p| valid[p]);
                let after = valid.get(next_valid).copied();
                match (before, after) {
                    (Some(a), Some(b)) => {
                        let (ta, tb) = (clip.frames[a].time_ms, clip.frames[b].time_ms);
                        let (va, vb) = (raw[a].unwrap(), raw[b].unwrap());
                        let w = (frame.time_ms - ta) / (tb - ta);
                        wrap_degrees(va + w * angle_diff(vb, va))
                    }
                    (Some(a), None) => raw[a].unwrap(),
                    (None, Some(b)) => raw[b].unwrap(),
                    (None, None) => unreachable!("at least one valid frame"),
                }
            }
        };
        out.push((frame.time_ms, value));
    }
    Ok(out)
}
