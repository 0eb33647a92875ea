//! Per-exercise configuration: classes, feature angles and the signal used to
//! find repetitions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::pose::{AngleTriplet, SkeletonProfile};
use crate::segment::{Axis, CoordinateTerm, SignalSource};
use crate::synth::{skeleton_points, Archetype, BodyDims};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExerciseError {
    #[error("unknown exercise {0:?}")]
    UnknownExercise(String),
    #[error("profile {profile} has no angle triplet {label:?}")]
    MissingTriplet { profile: String, label: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseConfig {
    pub name: String,
    pub profile: String,
    /// Class labels; index 0 is "correct".
    pub classes: Vec<String>,
    /// Angle triplets that make up the feature vector, in order.
    pub triplets: Vec<AngleTriplet>,
    pub signal: SignalSource,
}

impl ExerciseConfig {
    /// Configuration of a built-in archetype on the COCO-17 profile.
    pub fn builtin(archetype: Archetype) -> Self {
        let profile = SkeletonProfile::coco17();
        let spec = archetype.spec();
        let triplets = spec
            .features
            .iter()
            .map(|label| {
                profile
                    .triplet(label)
                    .cloned()
                    .expect("archetype features exist in coco17")
            })
            .collect();
        Self {
            name: archetype.id().to_string(),
            profile: profile.name().to_string(),
            classes: archetype.class_labels().to_vec(),
            triplets,
            signal: motion_source(archetype),
        }
    }

    pub fn by_name(name: &str) -> Result<Self, ExerciseError> {
        name.parse::<Archetype>()
            .map(Self::builtin)
            .map_err(|_| ExerciseError::UnknownExercise(name.to_string()))
    }

    pub fn all() -> Vec<Self> {
        Archetype::ALL.into_iter().map(Self::builtin).collect()
    }

    /// Resolves feature triplet labels against a profile.
    pub fn with_labels(
        name: &str,
        profile: &SkeletonProfile,
        classes: Vec<String>,
        labels: &[&str],
        signal: SignalSource,
    ) -> Result<Self, ExerciseError> {
        let triplets = labels
            .iter()
            .map(|label| {
                profile.triplet(label).cloned().ok_or_else(|| ExerciseError::MissingTriplet {
                    profile: profile.name().to_string(),
                    label: label.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: name.to_string(),
            profile: profile.name().to_string(),
            classes,
            triplets,
            signal,
        })
    }

    pub fn skeleton(&self) -> Option<Arc<SkeletonProfile>> {
        SkeletonProfile::builtin(&self.profile).map(Arc::new)
    }

    pub fn feature_labels(&self) -> Vec<String> {
        self.triplets.iter().map(|t| t.label.clone()).collect()
    }
}

/// Segmentation signal for a built-in archetype: the sign-aligned joint
/// coordinates that move monotonically from rest to hold in every class,
/// combined into the subset whose summed motion stands out most against
/// per-joint noise. A coordinate that doubles back would show two peaks per
/// rep, so it never qualifies.
pub fn motion_source(archetype: Archetype) -> SignalSource {
    const STEPS: usize = 200;
    let dims = BodyDims::default();
    let rest = archetype.rest_pose();
    let trajectories: Vec<Vec<Vec<[f64; 2]>>> = (0..3)
        .map(|c| {
            let hold = archetype.hold_pose(c);
            (0..=STEPS)
                .map(|i| skeleton_points(&rest.lerp(&hold, i as f64 / STEPS as f64), &dims))
                .collect()
        })
        .collect();

    // (term, rest-to-hold rise per class)
    let mut candidates: Vec<(CoordinateTerm, Vec<f64>)> = Vec::new();
    for joint in 0..trajectories[0][0].len() {
        for axis in [Axis::X, Axis::Y] {
            for invert in [false, true] {
                let term = CoordinateTerm { joint, axis, invert };
                let source = SignalSource::Combined { terms: vec![term] };
                let value = |p: &[[f64; 2]]| source.coordinate_value(p).expect("coordinate source");
                let monotone = trajectories
                    .iter()
                    .all(|path| path.windows(2).all(|w| value(&w[1]) >= value(&w[0])));
                let rises: Vec<f64> = trajectories
                    .iter()
                    .map(|path| value(&path[STEPS]) - value(&path[0]))
                    .collect();
                if monotone && rises.iter().all(|&r| r > 1e-9) {
                    candidates.push((term, rises));
                }
            }
        }
    }
    let weakest = |rises: &[f64]| rises.iter().copied().fold(f64::INFINITY, f64::min);
    candidates.sort_by(|a, b| weakest(&b.1).total_cmp(&weakest(&a.1)));

    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..=candidates.len() {
        let score = (0..3)
            .map(|c| candidates[..k].iter().map(|(_, r)| r[c]).sum::<f64>() / (k as f64).sqrt())
            .fold(f64::INFINITY, f64::min);
        if score > best.0 {
            best = (score, k);
        }
    }
    let mut terms: Vec<CoordinateTerm> = candidates[..best.1].iter().map(|(t, _)| *t).collect();
    terms.sort_by_key(|t| (t.joint, t.axis == Axis::Y));
    SignalSource::Combined { terms }
}

/// Smallest rest-to-hold rise of the segmentation signal across classes.
pub fn motion_amplitude(archetype: Archetype) -> f64 {
    let source = motion_source(archetype);
    let dims = BodyDims::default();
    let value = |pose| source.coordinate_value(&skeleton_points(&pose, &dims)).expect("coordinate source");
    let rest = value(archetype.rest_pose());
    (0..3)
        .map(|c| value(archetype.hold_pose(c)) - rest)
        .fold(f64::INFINITY, f64::min)
}
