//! Batch pipeline: segment clips, extract rep features, train, evaluate.
//! Every stage returns results in input order regardless of [`Execution`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fit_bands, train_mlp, AngleBandModel, ClassifierError, Dense, Hyperparams, InputScaler, Mlp,
    MlpModel, TrainingReport,
};
use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::exec::Execution;
use crate::exercise::ExerciseConfig;
use crate::features::{feature_vector, FeatureConfig, FeatureError, FeatureRow};
use crate::metrics::EvalSet;
use crate::pose::ClipSequence;
use crate::segment::{segment_clip, RepSegment, SegmentError, SegmenterConfig, SignalSource};
use crate::synth::{derive_seed, synthesize, Archetype, SynthError, SynthSpec};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("clip {clip}: {source}")]
    Segment {
        clip: String,
        #[source]
        source: SegmentError,
    },
    #[error("clip {clip} rep {rep}: {source}")]
    Feature {
        clip: String,
        rep: usize,
        #[source]
        source: FeatureError,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("{0}")]
    Invalid(String),
}

/// A clip with its stable identifier; the class label lives on the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedClip {
    pub id: String,
    pub clip: ClipSequence,
}

pub fn segment_clips(
    clips: &[NamedClip],
    source: &SignalSource,
    config: &SegmenterConfig,
    exec: Execution,
) -> Result<Vec<Vec<RepSegment>>, PipelineError> {
    exec.try_map(clips, |c| {
        segment_clip(&c.clip, source, config).map_err(|source| PipelineError::Segment {
            clip: c.id.clone(),
            source,
        })
    })
}

/// One feature row per rep, clips in input order, reps in time order.
pub fn featurize(
    clips: &[NamedClip],
    segments: &[Vec<RepSegment>],
    config: &FeatureConfig,
    exec: Execution,
) -> Result<Vec<FeatureRow>, PipelineError> {
    if clips.len() != segments.len() {
        return Err(PipelineError::Invalid(format!(
            "{} clips but {} segment lists",
            clips.len(),
            segments.len()
        )));
    }
    let jobs: Vec<(&NamedClip, usize, &RepSegment)> = clips
        .iter()
        .zip(segments)
        .flat_map(|(c, reps)| reps.iter().enumerate().map(move |(i, r)| (c, i, r)))
        .collect();
    exec.try_map(&jobs, |&(c, rep_idx, rep)| {
        if rep.end_index >= c.clip.len() || rep.start_index > rep.end_index {
            return Err(PipelineError::Invalid(format!(
                "clip {} rep {rep_idx}: frames {}..={} outside a {}-frame clip",
                c.id,
                rep.start_index,
                rep.end_index,
                c.clip.len()
            )));
        }
        let f = feature_vector(&rep.frames(&c.clip), config).map_err(|source| PipelineError::Feature {
            clip: c.id.clone(),
            rep: rep_idx,
            source,
        })?;
        Ok(FeatureRow {
            clip_id: c.id.clone(),
            rep_idx,
            class_idx: c.clip.label.unwrap_or(0),
            values: f.values,
        })
    })
}

/// Serialized classifier with everything needed to run it on raw clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub profile: String,
    pub exercise: String,
    pub classes: Vec<String>,
    pub feature_config: FeatureConfig,
    pub segmenter: SegmenterConfig,
    pub signal: SignalSource,
    pub layer_sizes: Vec<usize>,
    /// Row-major `[out][in]` weight matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub bands: AngleBandModel,
    pub training: TrainingReport,
}

impl ModelFile {
    pub fn mlp(&self) -> Result<MlpModel, PipelineError> {
        let s = &self.layer_sizes;
        if s.len() < 2 || self.weights.len() != s.len() - 1 || self.biases.len() != s.len() - 1 {
            return Err(PipelineError::InvalidModel("layer count mismatch".into()));
        }
        let layers = s
            .windows(2)
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(w, (weights, bias))| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: weights.clone(),
                bias: bias.clone(),
            })
            .collect();
        let net = Mlp { layers };
        net.validate().map_err(|e| PipelineError::InvalidModel(e.to_string()))?;
        if net.output_dim() != 3 {
            return Err(PipelineError::InvalidModel("output layer must have 3 units".into()));
        }
        let dim = net.input_dim();
        if self.input_mean.len() != dim || self.input_std.len() != dim || self.feature_config.dim() != dim {
            return Err(PipelineError::InvalidModel("input dimension mismatch".into()));
        }
        Ok(MlpModel {
            scaler: InputScaler {
                mean: self.input_mean.clone(),
                std: self.input_std.clone(),
            },
            net,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let m: ModelFile =
            serde_json::from_str(text).map_err(|e| PipelineError::InvalidModel(e.to_string()))?;
        m.mlp()?;
        Ok(m)
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub exercise: ExerciseConfig,
    pub features: FeatureConfig,
    pub segmenter: SegmenterConfig,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl TrainSetup {
    pub fn new(exercise: ExerciseConfig) -> Self {
        let features = FeatureConfig::new(exercise.triplets.clone());
        Self {
            exercise,
            features,
            segmenter: SegmenterConfig::default(),
            hyperparams: Hyperparams::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub fn train(rows: &[FeatureRow], setup: &TrainSetup) -> Result<ModelFile, PipelineError> {
    let dim = setup.features.dim();
    if let Some(bad) = rows.iter().find(|r| r.values.len() != dim) {
        return Err(PipelineError::Invalid(format!(
            "{} rep {} has {} features, the exercise uses {dim}",
            bad.clip_id,
            bad.rep_idx,
            bad.values.len()
        )));
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| model_input(&r.values, &setup.features)).collect();
    let ys: Vec<usize> = rows.iter().map(|r| r.class_idx).collect();
    let (model, report) = train_mlp(&xs, &ys, &setup.hyperparams, setup.seed)?;

    let correct: Vec<Vec<f64>> = rows.iter().filter(|r| r.class_idx == 0).map(|r| r.values.clone()).collect();
    let bands = fit_bands(&setup.exercise.feature_labels(), &correct, setup.features.bin_width())?;

    Ok(ModelFile {
        profile: setup.exercise.profile.clone(),
        exercise: setup.exercise.name.clone(),
        classes: setup.exercise.classes.clone(),
        feature_config: setup.features.clone(),
        segmenter: setup.segmenter.clone(),
        signal: setup.exercise.signal.clone(),
        layer_sizes: model.net.sizes(),
        weights: model.net.layers.iter().map(|l| l.weights.clone()).collect(),
        biases: model.net.layers.iter().map(|l| l.bias.clone()).collect(),
        input_mean: model.scaler.mean,
        input_std: model.scaler.std,
        bands,
        training: report,
    })
}

pub fn model_input(values: &[f64], config: &FeatureConfig) -> Vec<f64> {
    if config.normalize_for_model {
        values.iter().map(|v| v / 360.0).collect()
    } else {
        values.to_vec()
    }
}

/// Line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub rep_idx: usize,
    pub truth: usize,
    pub probs: [f64; 3],
}

pub fn predict_rows(
    model: &ModelFile,
    rows: &[FeatureRow],
    exec: Execution,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    let mlp = model.mlp()?;
    exec.try_map(rows, |r| {
        let p = mlp.predict(&model_input(&r.values, &model.feature_config))?;
        Ok(PredictionRecord {
            clip_id: r.clip_id.clone(),
            rep_idx: r.rep_idx,
            truth: r.class_idx,
            probs: p.probs,
        })
    })
}

pub fn eval_set(records: &[PredictionRecord]) -> EvalSet {
    EvalSet::new(
        records
            .iter()
            .map(|r| (r.truth, crate::classifier::ClassPrediction::new(r.probs)))
            .collect(),
    )
}

/// Stratified split of rows into (train, test): within each class a seeded
/// shuffle sends `round(n · test_fraction)` rows to the test side. Both sides
/// keep the original row order.
pub fn split_rows(rows: &[FeatureRow], test_fraction: f64, seed: u64) -> (Vec<FeatureRow>, Vec<FeatureRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; rows.len()];
    for class in 0..3 {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].class_idx == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        for &i in &idx[..n_test.min(idx.len())] {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (row, t) in rows.iter().zip(is_test) {
        if t {
            test.push(row.clone());
        } else {
            train.push(row.clone());
        }
    }
    (train, test)
}

/// Result of the one-shot clips-to-metrics run.
#[derive(Debug, Clone, PartialEq)]
pub struct FromClipsRun {
    pub model: ModelFile,
    pub predictions: Vec<PredictionRecord>,
}

/// Segments, featurizes, trains and predicts in one go. Without a test
/// fraction the model is evaluated on its own training reps.
pub fn run_from_clips(
    clips: &[NamedClip],
    setup: &TrainSetup,
    test_fraction: Option<f64>,
    exec: Execution,
) -> Result<FromClipsRun, PipelineError> {
    let segments = segment_clips(clips, &setup.exercise.signal, &setup.segmenter, exec)?;
    let rows = featurize(clips, &segments, &setup.features, exec)?;
    let (train_rows, test_rows) = match test_fraction {
        Some(f) => split_rows(&rows, f, setup.seed),
        None => (rows.clone(), rows),
    };
    let model = train(&train_rows, setup)?;
    let predictions = predict_rows(&model, &test_rows, exec)?;
    Ok(FromClipsRun { model, predictions })
}

/// Parameters for a synthetic dataset of one exercise.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub archetype: Archetype,
    pub classes: Vec<usize>,
    /// Reps per class, spread over `clips_per_class` recordings.
    pub reps_per_class: usize,
    pub clips_per_class: usize,
    pub noise_sigma: f64,
    pub hold_ms: f64,
    pub fps: f64,
    pub seed: u64,
}

impl SuiteSpec {
    pub fn new(archetype: Archetype) -> Self {
        Self {
            archetype,
            classes: vec![0, 1, 2],
            reps_per_class: 5,
            clips_per_class: 1,
            noise_sigma: 0.0,
            hold_ms: 2000.0,
            fps: 30.0,
            seed: 0,
        }
    }
}

/// Relative CSV path of a generated clip: `<class label>/clip_<NNNN>.csv`.
pub fn suite_clip_path(archetype: Archetype, class: usize, clip: usize) -> String {
    format!("{}/clip_{clip:04}.csv", archetype.class_labels()[class])
}

/// Generates the clips of a synthetic dataset and its manifest. Clip seeds
/// are derived from the base seed, the exercise, the class and the clip
/// number, so any subset regenerates identically.
pub fn synth_suite(spec: &SuiteSpec, exec: Execution) -> Result<(DatasetManifest, Vec<NamedClip>), PipelineError> {
    if spec.clips_per_class == 0 || spec.reps_per_class < spec.clips_per_class {
        return Err(PipelineError::Invalid(
            "need at least one rep per clip and one clip per class".into(),
        ));
    }
    let arch_idx = Archetype::ALL.iter().position(|a| *a == spec.archetype).expect("listed") as u64;
    let mut jobs = Vec::new();
    for &class in &spec.classes {
        if class > 2 {
            return Err(PipelineError::Invalid(format!("class {class} outside 0..=2")));
        }
        for clip in 0..spec.clips_per_class {
            let reps = spec.reps_per_class / spec.clips_per_class
                + usize::from(clip < spec.reps_per_class % spec.clips_per_class);
            jobs.push((class, clip, reps));
        }
    }
    let clips = exec.try_map(&jobs, |&(class, clip, reps)| {
        let mut s = SynthSpec::new(spec.archetype, class)
            .with_reps(reps)
            .with_noise(spec.noise_sigma)
            .with_seed(derive_seed(spec.seed, arch_idx * 3 + class as u64, clip as u64));
        s.hold_ms = spec.hold_ms;
        s.fps = spec.fps;
        let generated = synthesize(&s)?;
        let path = suite_clip_path(spec.archetype, class, clip);
        Ok::<_, PipelineError>(NamedClip {
            id: crate::dataset::clip_id(&path),
            clip: generated.clip,
        })
    })?;
    let manifest = DatasetManifest {
        exercise: spec.archetype.id().to_string(),
        classes: spec.archetype.class_labels().to_vec(),
        clips: jobs
            .iter()
            .map(|&(class, clip, _)| ManifestEntry {
                path: suite_clip_path(spec.archetype, class, clip),
                class_index: class,
                subject_id: format!("synthetic-{clip:04}"),
            })
            .collect(),
        profile: "coco17".to_string(),
    };
    Ok((manifest, clips))
}
