//! Live assessment sessions: keypoint frames in, per-rep feedback out, and a
//! summary report when the session ends.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassPrediction, GradeLevel, MlpModel, Violation};
use crate::exercise::ExerciseConfig;
use crate::features::feature_vector;
use crate::pipeline::{model_input, ModelFile, PipelineError};
use crate::pose::{ClipSequence, KeypointFrame, SkeletonProfile};
use crate::segment::{OnlineSegmenter, RepSegment, SegmentError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown exercise {0:?}")]
    UnknownExercise(String),
    #[error("no model loaded for exercise {0:?}")]
    ModelMissing(String),
    #[error("profile {requested:?} does not match the model's {model:?}")]
    ProfileMismatch { requested: String, model: String },
    #[error("frame at {time_ms} ms does not follow {previous_ms} ms; dropped")]
    OutOfOrderFrame { previous_ms: f64, time_ms: f64 },
    #[error("bad frame: {0}")]
    BadFrame(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownExercise(_) => "unknown_exercise",
            ServiceError::ModelMissing(_) => "model_missing",
            ServiceError::ProfileMismatch { .. } => "profile_mismatch",
            ServiceError::OutOfOrderFrame { .. } => "out_of_order",
            ServiceError::BadFrame(_) => "bad_frame",
            ServiceError::Internal(_) => "internal",
        }
    }
}

/// A model ready for inference. Immutable once loaded and shared by sessions.
#[derive(Debug)]
pub struct LoadedModel {
    pub file: ModelFile,
    pub mlp: MlpModel,
    pub profile: Arc<SkeletonProfile>,
}

impl LoadedModel {
    pub fn new(file: ModelFile) -> Result<Self, PipelineError> {
        let mlp = file.mlp()?;
        let profile = SkeletonProfile::builtin(&file.profile)
            .ok_or_else(|| PipelineError::InvalidModel(format!("unknown profile {:?}", file.profile)))?;
        Ok(Self {
            file,
            mlp,
            profile: Arc::new(profile),
        })
    }
}

/// Models by exercise name.
#[derive(Debug, Default, Clone)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<LoadedModel>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: LoadedModel) {
        self.models.insert(model.file.exercise.clone(), Arc::new(model));
    }

    /// Loads every `*.json` model file in a directory, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, PipelineError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut reg = Self::new();
        for path in paths {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
            let file = ModelFile::from_json(&text)
                .map_err(|e| PipelineError::InvalidModel(format!("{}: {e}", path.display())))?;
            reg.insert(LoadedModel::new(file)?);
        }
        Ok(reg)
    }

    pub fn exercises(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn get(&self, exercise: &str) -> Result<Arc<LoadedModel>, ServiceError> {
        if let Some(m) = self.models.get(exercise) {
            return Ok(Arc::clone(m));
        }
        match ExerciseConfig::by_name(exercise) {
            Ok(cfg) => match self.models.get(&cfg.name) {
                Some(m) => Ok(Arc::clone(m)),
                None => Err(ServiceError::ModelMissing(cfg.name)),
            },
            Err(_) => Err(ServiceError::UnknownExercise(exercise.to_string())),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Mistake1,
    Mistake2,
    Uncertain,
}

impl Verdict {
    /// Argmax decides; a mistake call below the confidence threshold is
    /// reported as uncertain instead.
    pub fn from_prediction(p: &ClassPrediction, tau: f64) -> Self {
        match p.argmax() {
            0 => Verdict::Correct,
            _ if p.max_incorrect() < tau => Verdict::Uncertain,
            1 => Verdict::Mistake1,
            _ => Verdict::Mistake2,
        }
    }

    pub fn class_index(self) -> Option<usize> {
        match self {
            Verdict::Correct => Some(0),
            Verdict::Mistake1 => Some(1),
            Verdict::Mistake2 => Some(2),
            Verdict::Uncertain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub rep_index: usize,
    pub verdict: Verdict,
    /// Class label behind the verdict; absent for uncertain reps.
    pub label: Option<String>,
    pub probs: [f64; 3],
    pub violations: Vec<Violation>,
    /// Stream time between the rep's last frame and the frame that confirmed it.
    pub latency_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
    pub segment: RepSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RepLogEntry {
    event: FeedbackEvent,
    deviations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerdictTotals {
    pub correct: usize,
    pub mistake_1: usize,
    pub mistake_2: usize,
    pub uncertain: usize,
}

impl VerdictTotals {
    pub fn sum(&self) -> usize {
        self.correct + self.mistake_1 + self.mistake_2 + self.uncertain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletDeviation {
    pub label: String,
    pub mean_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub idx: usize,
    pub verdict: Verdict,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: String,
    pub exercise: String,
    pub reps: usize,
    pub totals: VerdictTotals,
    /// Most frequent confident mistake; lower class index wins ties.
    pub dominant_mistake: Option<String>,
    /// Mean signed deviation from the correct-pose bands, per angle.
    pub deviations: Vec<TripletDeviation>,
    /// Share of all reps flagged uncertain, in percent.
    pub uncertain_percent: f64,
    pub timeline: Vec<TimelineEntry>,
    pub dropped_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub level: GradeLevel,
    pub tau: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            level: GradeLevel::Standard,
            tau: 0.5,
        }
    }
}

pub struct Session {
    id: String,
    model: Arc<LoadedModel>,
    options: SessionOptions,
    segmenter: OnlineSegmenter,
    /// Recent frames; `frames[0]` has stream index `frame_base`.
    frames: VecDeque<KeypointFrame>,
    frame_base: usize,
    log: Vec<RepLogEntry>,
    dropped_frames: usize,
    last_time: Option<f64>,
    report: Option<SessionReport>,
}

impl Session {
    pub fn start(
        id: impl Into<String>,
        registry: &ModelRegistry,
        exercise: &str,
        options: SessionOptions,
    ) -> Result<Self, ServiceError> {
        let model = registry.get(exercise)?;
        let segmenter = OnlineSegmenter::new(model.file.signal.clone(), model.file.segmenter.clone())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(Self {
            id: id.into(),
            model,
            options,
            segmenter,
            frames: VecDeque::new(),
            frame_base: 0,
            log: Vec::new(),
            dropped_frames: 0,
            last_time: None,
            report: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn exercise(&self) -> &str {
        &self.model.file.exercise
    }

    pub fn profile(&self) -> &SkeletonProfile {
        &self.model.profile
    }

    pub fn rep_count(&self) -> usize {
        self.log.len()
    }

    pub fn dropped_frames(&self) -> usize {
        self.dropped_frames
    }

    pub fn is_ended(&self) -> bool {
        self.report.is_some()
    }

    /// Processes one frame and returns feedback for every rep it completes.
    pub fn frame(&mut self, frame: KeypointFrame) -> Result<Vec<FeedbackEvent>, ServiceError> {
        if self.report.is_some() {
            return Err(ServiceError::Internal("session has ended".into()));
        }
        if let Err(e) = frame.check(&self.model.profile) {
            self.dropped_frames += 1;
            return Err(ServiceError::BadFrame(e.to_string()));
        }
        if frame.points.iter().flatten().any(|v| !v.is_finite()) || !frame.time_ms.is_finite() {
            self.dropped_frames += 1;
            return Err(ServiceError::BadFrame("non-finite value".into()));
        }
        if let Some(prev) = self.last_time {
            if !(frame.time_ms > prev) {
                self.dropped_frames += 1;
                return Err(ServiceError::OutOfOrderFrame {
                    previous_ms: prev,
                    time_ms: frame.time_ms,
                });
            }
        }
        let now = frame.time_ms;
        let reps = self.segmenter.step(&frame).map_err(|e| match e {
            SegmentError::OutOfOrderFrame { previous_ms, time_ms } => {
                ServiceError::OutOfOrderFrame { previous_ms, time_ms }
            }
            other => ServiceError::Internal(other.to_string()),
        })?;
        self.last_time = Some(now);
        self.frames.push_back(frame);
        let events = self.emit(reps, now)?;
        self.prune(now);
        Ok(events)
    }

    /// Ends the session, flushing reps confirmed by the end of the stream.
    /// Calling it again returns the same report.
    pub fn end(&mut self) -> SessionReport {
        if let Some(r) = &self.report {
            return r.clone();
        }
        let reps = self.segmenter.finish();
        let now = self.last_time.unwrap_or(0.0);
        if let Err(e) = self.emit(reps, now) {
            log::warn!("session {}: dropping trailing reps: {e}", self.id);
        }
        let report = self.build_report();
        self.report = Some(report.clone());
        report
    }

    /// Like [`Session::end`], also returning feedback for reps flushed at the end.
    pub fn end_with_events(&mut self) -> (Vec<FeedbackEvent>, SessionReport) {
        let before = self.log.len();
        let report = self.end();
        let events = self.log[before..].iter().map(|e| e.event.clone()).collect();
        (events, report)
    }

    fn emit(&mut self, reps: Vec<RepSegment>, now: f64) -> Result<Vec<FeedbackEvent>, ServiceError> {
        let mut out = Vec::with_capacity(reps.len());
        for rep in reps {
            let event = self.assess(&rep, now)?;
            out.push(event);
        }
        Ok(out)
    }

    fn assess(&mut self, rep: &RepSegment, now: f64) -> Result<FeedbackEvent, ServiceError> {
        if rep.start_index < self.frame_base {
            return Err(ServiceError::Internal(format!(
                "rep starting at frame {} was already discarded",
                rep.start_index
            )));
        }
        let lo = rep.start_index - self.frame_base;
        let hi = rep.end_index - self.frame_base;
        let frames: Vec<KeypointFrame> = self.frames.range(lo..=hi).cloned().collect();
        let model = &self.model;
        let clip = ClipSequence::new(Arc::clone(&model.profile), frames, None, &model.file.exercise)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let features = feature_vector(&clip, &model.file.feature_config)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let prediction = model
            .mlp
            .predict(&model_input(&features.values, &model.file.feature_config))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let grade = model
            .file
            .bands
            .grade(&features.values, self.options.level)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let deviations = model
            .file
            .bands
            .deviations(&features.values)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let verdict = Verdict::from_prediction(&prediction, self.options.tau);
        let start_ms = clip.frames[0].time_ms;
        let end_ms = clip.frames[clip.frames.len() - 1].time_ms;
        let event = FeedbackEvent {
            rep_index: self.log.len(),
            verdict,
            label: verdict.class_index().map(|c| model.file.classes[c].clone()),
            probs: prediction.probs,
            violations: grade.violations,
            latency_ms: now - end_ms,
            start_ms,
            end_ms,
            segment: *rep,
        };
        self.log.push(RepLogEntry {
            event: event.clone(),
            deviations,
        });
        Ok(event)
    }

    /// Frames up to the last emitted rep can never be needed again, nor can
    /// frames older than twice the search horizon.
    fn prune(&mut self, now: f64) {
        let keep_from_end = self.segmenter.last_end().map_or(0, |e| e + 1);
        let horizon = self.model.file.segmenter.search_horizon_ms;
        while let Some(front) = self.frames.front() {
            let stale = now - front.time_ms > 2.0 * horizon + 1000.0;
            if self.frame_base < keep_from_end || stale {
                self.frames.pop_front();
                self.frame_base += 1;
            } else {
                break;
            }
        }
    }

    fn build_report(&self) -> SessionReport {
        let mut totals = VerdictTotals::default();
        for e in &self.log {
            match e.event.verdict {
                Verdict::Correct => totals.correct += 1,
                Verdict::Mistake1 => totals.mistake_1 += 1,
                Verdict::Mistake2 => totals.mistake_2 += 1,
                Verdict::Uncertain => totals.uncertain += 1,
            }
        }
        let classes = &self.model.file.classes;
        let dominant_mistake = match (totals.mistake_1, totals.mistake_2) {
            (0, 0) => None,
            (a, b) if a >= b => Some(classes[1].clone()),
            _ => Some(classes[2].clone()),
        };
        let labels = &self.model.file.bands.labels;
        let deviations = labels
            .iter()
            .enumerate()
            .map(|(j, label)| TripletDeviation {
                label: label.clone(),
                mean_deviation: if self.log.is_empty() {
                    0.0
                } else {
                    self.log.iter().map(|e| e.deviations[j]).sum::<f64>() / self.log.len() as f64
                },
            })
            .collect();
        let reps = self.log.len();
        SessionReport {
            session: self.id.clone(),
            exercise: self.model.file.exercise.clone(),
            reps,
            uncertain_percent: if reps == 0 {
                0.0
            } else {
                100.0 * totals.uncertain as f64 / reps as f64
            },
            totals,
            dominant_mistake,
            deviations,
            timeline: self
                .log
                .iter()
                .map(|e| TimelineEntry {
                    idx: e.event.rep_index,
                    verdict: e.event.verdict,
                    start_ms: e.event.start_ms,
                    end_ms: e.event.end_ms,
                })
                .collect(),
            dropped_frames: self.dropped_frames,
        }
    }
}
