//! Synthetic pose-sequence generator.
//!
//! Each rep drives a parametric 2D skeleton (COCO-17 layout) from a rest pose
//! into an archetype's hold pose and back. The skeleton is built by forward
//! kinematics from turn angles, so the hold-phase joint angles measured by
//! [`crate::pose::joint_angle`] equal the archetype targets exactly when no
//! noise is added. Mistake classes shift designated joint angles.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pose::{ClipSequence, KeypointFrame, SkeletonProfile};

/// Joint-angle slots driven by the kinematic model, in COCO-17 triplet order.
pub const ANGLE_SLOTS: [&str; 8] = [
    "left_elbow",
    "right_elbow",
    "left_shoulder",
    "right_shoulder",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
];

const L_ELBOW: usize = 0;
const R_ELBOW: usize = 1;
const L_SHOULDER: usize = 2;
const R_SHOULDER: usize = 3;
const L_HIP: usize = 4;
const R_HIP: usize = 5;
const L_KNEE: usize = 6;
const R_KNEE: usize = 7;

/// Default mistake delta in degrees.
pub const MISTAKE_DELTA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("unknown exercise archetype {0:?}")]
    UnknownArchetype(String),
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Cobra,
    Triangle,
    Warrior2,
    Plank,
    Tree,
    Superman,
}

impl Archetype {
    pub const ALL: [Archetype; 6] = [
        Archetype::Cobra,
        Archetype::Triangle,
        Archetype::Warrior2,
        Archetype::Plank,
        Archetype::Tree,
        Archetype::Superman,
    ];

    pub fn id(self) -> &'static str {
        self.spec().id
    }

    pub fn spec(self) -> &'static ArchetypeSpec {
        match self {
            Archetype::Cobra => &COBRA,
            Archetype::Triangle => &TRIANGLE,
            Archetype::Warrior2 => &WARRIOR2,
            Archetype::Plank => &PLANK,
            Archetype::Tree => &TREE,
            Archetype::Superman => &SUPERMAN,
        }
    }

    /// Class labels, index 0 always "correct".
    pub fn class_labels(self) -> [String; 3] {
        let s = self.spec();
        [
            "correct".to_string(),
            s.mistakes[0].label.to_string(),
            s.mistakes[1].label.to_string(),
        ]
    }

    /// Hold pose for a class, mistake offsets applied.
    pub fn hold_pose(self, class_index: usize) -> PoseParams {
        let s = self.spec();
        let mut pose = s.hold;
        if class_index > 0 {
            for &(slot, delta) in s.mistakes[class_index - 1].offsets {
                pose.angles[slot] += delta;
            }
        }
        pose
    }

    pub fn rest_pose(self) -> PoseParams {
        if self.spec().standing {
            STANDING_REST
        } else {
            LYING_REST
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Archetype {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        Archetype::ALL
            .into_iter()
            .find(|a| a.id() == key || key == format!("{}pose", a.id()))
            .ok_or_else(|| SynthError::UnknownArchetype(s.to_string()))
    }
}

/// Kinematic pose: mid-hip root position, torso direction (mid-hip to
/// mid-shoulder, degrees in image coordinates) and signed turn angles per
/// [`ANGLE_SLOTS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub root: [f64; 2],
    pub torso_dir: f64,
    pub angles: [f64; 8],
}

impl PoseParams {
    /// Linear blend toward `other`; `c = 0` is `self`, `c = 1` is `other`.
    pub fn lerp(&self, other: &PoseParams, c: f64) -> PoseParams {
        let mix = |a: f64, b: f64| a + (b - a) * c;
        let mut angles = [0.0; 8];
        for (k, a) in angles.iter_mut().enumerate() {
            *a = mix(self.angles[k], other.angles[k]);
        }
        PoseParams {
            root: [mix(self.root[0], other.root[0]), mix(self.root[1], other.root[1])],
            torso_dir: mix(self.torso_dir, other.torso_dir),
            angles,
        }
    }
}

#[derive(Debug)]
pub struct MistakeSpec {
    pub label: &'static str,
    /// `(angle slot, delta degrees)` pairs.
    pub offsets: &'static [(usize, f64)],
}

#[derive(Debug)]
pub struct ArchetypeSpec {
    pub id: &'static str,
    pub standing: bool,
    pub hold: PoseParams,
    /// Triplet labels (COCO-17 profile) used as classification features.
    pub features: &'static [&'static str],
    pub mistakes: [MistakeSpec; 2],
}

const D: f64 = MISTAKE_DELTA;

const STANDING_REST: PoseParams = PoseParams {
    root: [0.5, 0.55],
    torso_dir: -90.0,
    angles: [10.0, -10.0, 170.0, -170.0, 0.0, 0.0, 0.0, 0.0],
};

const LYING_REST: PoseParams = PoseParams {
    root: [0.55, 0.78],
    torso_dir: 180.0,
    angles: [0.0, 0.0, 180.0, 180.0, 0.0, 0.0, 0.0, 0.0],
};

static COBRA: ArchetypeSpec = ArchetypeSpec {
    id: "cobra",
    standing: false,
    hold: PoseParams {
        root: [0.6, 0.76],
        torso_dir: 225.0,
        angles: [75.0, 75.0, -135.0, -135.0, -45.0, -45.0, 0.0, 0.0],
    },
    features: &[
        "left_elbow",
        "right_elbow",
        "left_shoulder",
        "right_shoulder",
        "left_hip",
        "right_hip",
    ],
    mistakes: [
        MistakeSpec {
            label: "rising_on_hands",
            offsets: &[(L_ELBOW, -D), (R_ELBOW, -D)],
        },
        MistakeSpec {
            label: "feet_above_ground",
            offsets: &[(L_HIP, -D), (R_HIP, -D)],
        },
    ],
};

static TRIANGLE: ArchetypeSpec = ArchetypeSpec {
    id: "triangle",
    standing: true,
    hold: PoseParams {
        root: [0.5, 0.6],
        torso_dir: -135.0,
        angles: [0.0, 0.0, 95.0, -85.0, 15.0, 75.0, 0.0, 0.0],
    },
    features: &["left_shoulder", "right_shoulder", "right_hip", "right_knee_line"],
    mistakes: [
        MistakeSpec {
            label: "right_hand_not_reaching_ankle",
            offsets: &[(R_SHOULDER, D)],
        },
        MistakeSpec {
            label: "right_knee_bending",
            offsets: &[(R_KNEE, -D)],
        },
    ],
};

static WARRIOR2: ArchetypeSpec = ArchetypeSpec {
    id: "warrior2",
    standing: true,
    hold: PoseParams {
        root: [0.5, 0.62],
        torso_dir: -90.0,
        angles: [0.0, 0.0, 95.0, -95.0, -30.0, 55.0, 0.0, -65.0],
    },
    features: &["left_shoulder", "right_shoulder", "right_hip", "right_knee"],
    mistakes: [
        MistakeSpec {
            label: "hands_not_parallel_to_ground",
            offsets: &[(L_SHOULDER, D), (R_SHOULDER, -D)],
        },
        MistakeSpec {
            label: "right_knee_bending_forward",
            offsets: &[(R_KNEE, -D)],
        },
    ],
};

static PLANK: ArchetypeSpec = ArchetypeSpec {
    id: "plank",
    standing: false,
    hold: PoseParams {
        root: [0.5, 0.62],
        torso_dir: 180.0,
        angles: [95.0, 95.0, -85.0, -85.0, 5.0, 5.0, 0.0, 0.0],
    },
    features: &[
        "left_shoulder",
        "right_shoulder",
        "left_hip_line",
        "right_hip_line",
        "left_elbow",
        "right_elbow",
    ],
    mistakes: [
        MistakeSpec {
            label: "hips_too_high",
            offsets: &[(L_HIP, D), (R_HIP, D), (L_SHOULDER, D), (R_SHOULDER, D)],
        },
        MistakeSpec {
            label: "hips_too_low",
            offsets: &[(L_HIP, -D), (R_HIP, -D), (L_SHOULDER, -D), (R_SHOULDER, -D)],
        },
    ],
};

static TREE: ArchetypeSpec = ArchetypeSpec {
    id: "tree",
    standing: true,
    hold: PoseParams {
        root: [0.5, 0.55],
        torso_dir: -90.0,
        angles: [-45.0, 45.0, 45.0, -45.0, 0.0, 75.0, 0.0, -135.0],
    },
    features: &[
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "right_hip",
        "right_knee",
    ],
    mistakes: [
        MistakeSpec {
            label: "hands_not_above_head",
            offsets: &[(L_SHOULDER, D), (R_SHOULDER, -D)],
        },
        MistakeSpec {
            label: "right_foot_not_reaching_left_knee",
            offsets: &[(R_KNEE, D), (R_HIP, -D)],
        },
    ],
};

static SUPERMAN: ArchetypeSpec = ArchetypeSpec {
    id: "superman",
    standing: false,
    hold: PoseParams {
        root: [0.5, 0.74],
        torso_dir: 195.0,
        angles: [0.0, 0.0, 45.0, 45.0, -30.0, -30.0, 0.0, 0.0],
    },
    features: &["left_shoulder", "right_shoulder", "left_knee_line", "right_knee_line"],
    mistakes: [
        MistakeSpec {
            label: "knees_bending",
            offsets: &[(L_KNEE, -D), (R_KNEE, -D)],
        },
        MistakeSpec {
            label: "hands_not_at_same_level",
            offsets: &[(R_SHOULDER, D)],
        },
    ],
};

/// Segment lengths of the kinematic body, normalized image units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyDims {
    pub torso: f64,
    pub shoulder_half: f64,
    pub hip_half: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub neck: f64,
}

impl Default for BodyDims {
    fn default() -> Self {
        Self {
            torso: 0.25,
            shoulder_half: 0.085,
            hip_half: 0.06,
            upper_arm: 0.13,
            forearm: 0.12,
            thigh: 0.2,
            shin: 0.19,
            neck: 0.07,
        }
    }
}

impl BodyDims {
    fn scaled(&self, s: f64) -> Self {
        Self {
            torso: self.torso * s,
            shoulder_half: self.shoulder_half * s,
            hip_half: self.hip_half * s,
            upper_arm: self.upper_arm * s,
            forearm: self.forearm * s,
            thigh: self.thigh * s,
            shin: self.shin * s,
            neck: self.neck * s,
        }
    }
}

fn unit(deg: f64) -> [f64; 2] {
    let r = deg.to_radians();
    [r.cos(), r.sin()]
}

fn step(p: [f64; 2], len: f64, deg: f64) -> [f64; 2] {
    let u = unit(deg);
    [p[0] + len * u[0], p[1] + len * u[1]]
}

fn direction(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0]).to_degrees()
}

/// Forward kinematics: COCO-17 joint positions for a pose.
pub fn skeleton_points(pose: &PoseParams, dims: &BodyDims) -> Vec<[f64; 2]> {
    let hip_mid = pose.root;
    let sh_mid = step(hip_mid, dims.torso, pose.torso_dir);
    let left = pose.torso_dir + 90.0;
    let right = pose.torso_dir - 90.0;

    let l_sh = step(sh_mid, dims.shoulder_half, left);
    let r_sh = step(sh_mid, dims.shoulder_half, right);
    let l_hip = step(hip_mid, dims.hip_half, left);
    let r_hip = step(hip_mid, dims.hip_half, right);

    let nose = step(sh_mid, dims.neck, pose.torso_dir);
    let eye_base = step(nose, dims.neck * 0.25, pose.torso_dir);
    let l_eye = step(eye_base, dims.shoulder_half * 0.25, left);
    let r_eye = step(eye_base, dims.shoulder_half * 0.25, right);
    let l_ear = step(nose, dims.shoulder_half * 0.5, left);
    let r_ear = step(nose, dims.shoulder_half * 0.5, right);

    let a = &pose.angles;
    let arm = |hip: [f64; 2], sh: [f64; 2], sh_angle: f64, el_angle: f64| {
        let upper = direction(hip, sh) + sh_angle;
        let elbow = step(sh, dims.upper_arm, upper);
        let wrist = step(elbow, dims.forearm, upper + el_angle);
        (elbow, wrist)
    };
    let leg = |sh: [f64; 2], hip: [f64; 2], hip_angle: f64, knee_angle: f64| {
        let thigh = direction(sh, hip) + hip_angle;
        let knee = step(hip, dims.thigh, thigh);
        let ankle = step(knee, dims.shin, thigh + knee_angle);
        (knee, ankle)
    };
    let (l_el, l_wr) = arm(l_hip, l_sh, a[L_SHOULDER], a[L_ELBOW]);
    let (r_el, r_wr) = arm(r_hip, r_sh, a[R_SHOULDER], a[R_ELBOW]);
    let (l_kn, l_an) = leg(l_sh, l_hip, a[L_HIP], a[L_KNEE]);
    let (r_kn, r_an) = leg(r_sh, r_hip, a[R_HIP], a[R_KNEE]);

    vec![
        nose, l_eye, r_eye, l_ear, r_ear, l_sh, r_sh, l_el, r_el, l_wr, r_wr, l_hip, r_hip, l_kn,
        r_kn, l_an, r_an,
    ]
}

/// Generator parameters for one synthetic recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub archetype: Archetype,
    pub class_index: usize,
    pub reps: usize,
    pub hold_ms: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub fps: f64,
    /// Mean duration of each entry/exit ramp.
    pub transition_ms: f64,
    /// Mean rest between reps, also used before the first and after the last.
    pub rest_ms: f64,
}

impl SynthSpec {
    pub fn new(archetype: Archetype, class_index: usize) -> Self {
        Self {
            archetype,
            class_index,
            reps: 5,
            hold_ms: 2000.0,
            noise_sigma: 0.0,
            seed: 0,
            fps: 30.0,
            transition_ms: 1000.0,
            rest_ms: 1000.0,
        }
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.class_index > 2 {
            return bad("class_index must be 0, 1 or 2");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be a finite value >= 0");
        }
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return bad("fps must be > 0");
        }
        if !(self.hold_ms > 0.0 && self.transition_ms > 0.0 && self.rest_ms > 0.0) {
            return bad("durations must be > 0");
        }
        Ok(())
    }
}

/// Ground truth for one generated rep, as frame indices into the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepTruth {
    /// Last rest frame before the entry ramp.
    pub start_index: usize,
    /// Frame nearest the middle of the hold.
    pub peak_index: usize,
    /// First rest frame after the exit ramp.
    pub end_index: usize,
    pub hold_start_index: usize,
    pub hold_end_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: ClipSequence,
    pub reps: Vec<RepTruth>,
    pub class_index: usize,
}

impl SynthClip {
    /// One clip per rep, spanning its ground-truth boundaries.
    pub fn rep_clips(&self) -> Vec<ClipSequence> {
        self.reps
            .iter()
            .map(|r| self.clip.slice(r.start_index, r.end_index))
            .collect()
    }
}

struct RepTiming {
    entry_start: f64,
    hold_start: f64,
    hold_end: f64,
    exit_end: f64,
}

fn jitter(rng: &mut ChaCha8Rng, mean: f64, frac: f64) -> f64 {
    mean * (1.0 + rng.random_range(-frac..=frac))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn control_at(t: f64, reps: &[RepTiming]) -> f64 {
    for r in reps {
        if t <= r.entry_start {
            return 0.0;
        }
        if t < r.hold_start {
            return smoothstep((t - r.entry_start) / (r.hold_start - r.entry_start));
        }
        if t <= r.hold_end {
            return 1.0;
        }
        if t < r.exit_end {
            return 1.0 - smoothstep((t - r.hold_end) / (r.exit_end - r.hold_end));
        }
    }
    0.0
}

/// Generates one recording of `spec.reps` repetitions. Deterministic in the
/// spec (seed included).
pub fn synthesize(spec: &SynthSpec) -> Result<SynthClip, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let dims = BodyDims::default().scaled(rng.random_range(0.9..=1.1));
    let shift = [rng.random_range(-0.03..=0.03), rng.random_range(-0.03..=0.03)];

    let mut timings = Vec::with_capacity(spec.reps);
    let mut t = jitter(&mut rng, spec.rest_ms, 0.2);
    for _ in 0..spec.reps {
        let entry = jitter(&mut rng, spec.transition_ms, 0.15);
        let hold = jitter(&mut rng, spec.hold_ms, 0.2);
        let exit = jitter(&mut rng, spec.transition_ms, 0.15);
        let r = RepTiming {
            entry_start: t,
            hold_start: t + entry,
            hold_end: t + entry + hold,
            exit_end: t + entry + hold + exit,
        };
        t = r.exit_end + jitter(&mut rng, spec.rest_ms, 0.2);
        timings.push(r);
    }
    let total_ms = t;
    let period = 1000.0 / spec.fps;
    let n_frames = (total_ms / period).ceil() as usize + 1;

    let rest = spec.archetype.rest_pose();
    let hold = spec.archetype.hold_pose(spec.class_index);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).expect("finite sigma"))
    } else {
        None
    };

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let time_ms = i as f64 * period;
        let c = control_at(time_ms, &timings);
        let mut pose = rest.lerp(&hold, c);
        pose.root[0] += shift[0];
        pose.root[1] += shift[1];
        let mut points = skeleton_points(&pose, &dims);
        if let Some(dist) = &noise {
            for p in &mut points {
                p[0] += dist.sample(&mut rng);
                p[1] += dist.sample(&mut rng);
            }
        }
        frames.push(KeypointFrame::with_points(time_ms, points));
    }

    let index_floor = |ms: f64| ((ms / period).floor() as usize).min(n_frames - 1);
    let index_ceil = |ms: f64| ((ms / period).ceil() as usize).min(n_frames - 1);
    let reps = timings
        .iter()
        .map(|r| RepTruth {
            start_index: index_floor(r.entry_start),
            peak_index: ((r.hold_start + r.hold_end) / 2.0 / period).round() as usize,
            end_index: index_ceil(r.exit_end),
            hold_start_index: index_ceil(r.hold_start),
            hold_end_index: index_floor(r.hold_end),
        })
        .collect();

    let profile = Arc::new(SkeletonProfile::coco17());
    let clip = ClipSequence::new(
        profile,
        frames,
        Some(spec.class_index),
        spec.archetype.id(),
    )
    .expect("generator emits valid frames");
    Ok(SynthClip {
        clip,
        reps,
        class_index: spec.class_index,
    })
}

/// Seed for the `index`-th clip of a batch derived from a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed key
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
