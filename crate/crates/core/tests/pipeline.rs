use isoform_core::exercise::ExerciseConfig;
use isoform_core::features::{read_feature_table, write_feature_table};
use isoform_core::metrics::{summarize, Score};
use isoform_core::pipeline::*;
use isoform_core::synth::Archetype;
use isoform_core::Execution;

fn suite(arch: Archetype, reps: usize, noise: f64, seed: u64) -> Vec<NamedClip> {
    let mut spec = SuiteSpec::new(arch);
    spec.reps_per_class = reps;
    spec.clips_per_class = reps.div_ceil(5);
    spec.noise_sigma = noise;
    spec.seed = seed;
    synth_suite(&spec, Execution::Parallel).unwrap().1
}

#[test]
fn noise_free_train_equals_test_is_perfect() {
    let clips = suite(Archetype::Tree, 15, 0.0, 1);
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Tree)).with_seed(3);
    let run = run_from_clips(&clips, &setup, None, Execution::Parallel).unwrap();
    assert_eq!(run.predictions.len(), 45);
    let s = summarize(&eval_set(&run.predictions)).unwrap();
    assert_eq!(s.multiclass_f1, 1.0);
    assert_eq!(s.m1, 1.0);
    assert_eq!(s.m3_percent, 0.0);
    assert_eq!(s.m2, Score::Defined(1.0));
}

#[test]
fn staged_run_equals_one_shot() {
    let clips = suite(Archetype::Warrior2, 15, 0.01, 2);
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Warrior2)).with_seed(5);
    let one_shot = run_from_clips(&clips, &setup, Some(0.2), Execution::Parallel).unwrap();

    let segments = segment_clips(&clips, &setup.exercise.signal, &setup.segmenter, Execution::Parallel).unwrap();
    let rows = featurize(&clips, &segments, &setup.features, Execution::Parallel).unwrap();
    let mut table = Vec::new();
    write_feature_table(&rows, setup.features.dim(), &mut table).unwrap();
    let rows = read_feature_table(table.as_slice()).unwrap();
    let (train_rows, test_rows) = split_rows(&rows, 0.2, setup.seed);
    let model = train(&train_rows, &setup).unwrap();
    let model = ModelFile::from_json(&serde_json::to_string(&model).unwrap()).unwrap();
    let preds = predict_rows(&model, &test_rows, Execution::Parallel).unwrap();

    assert_eq!(model, one_shot.model);
    assert_eq!(preds, one_shot.predictions);
}

#[test]
fn sequential_and_parallel_agree() {
    let clips = suite(Archetype::Cobra, 15, 0.02, 4);
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Cobra)).with_seed(8);
    let a = run_from_clips(&clips, &setup, Some(0.2), Execution::Sequential).unwrap();
    let b = run_from_clips(&clips, &setup, Some(0.2), Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let mut spec = SuiteSpec::new(Archetype::Cobra);
    spec.seed = 4;
    assert_eq!(
        synth_suite(&spec, Execution::Sequential).unwrap(),
        synth_suite(&spec, Execution::Parallel).unwrap()
    );
}

#[test]
fn seeds_change_the_model() {
    let clips = suite(Archetype::Superman, 15, 0.01, 6);
    let base = TrainSetup::new(ExerciseConfig::builtin(Archetype::Superman));
    let a = run_from_clips(&clips, &base.clone().with_seed(1), None, Execution::Parallel).unwrap();
    let b = run_from_clips(&clips, &base.clone().with_seed(1), None, Execution::Parallel).unwrap();
    let c = run_from_clips(&clips, &base.with_seed(2), None, Execution::Parallel).unwrap();
    assert_eq!(
        serde_json::to_string(&a.model).unwrap(),
        serde_json::to_string(&b.model).unwrap()
    );
    assert_ne!(a.model.weights, c.model.weights);
}

#[test]
fn corrupted_model_is_rejected() {
    let clips = suite(Archetype::Plank, 15, 0.0, 0);
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Plank));
    let mut model = run_from_clips(&clips, &setup, None, Execution::Parallel).unwrap().model;
    model.biases[1].pop();
    let text = serde_json::to_string(&model).unwrap();
    assert!(matches!(ModelFile::from_json(&text), Err(PipelineError::InvalidModel(_))));
    assert!(matches!(ModelFile::from_json("{}"), Err(PipelineError::InvalidModel(_))));
}

#[test]
fn too_few_reps_to_train() {
    let clips = suite(Archetype::Tree, 5, 0.0, 0);
    let setup = TrainSetup::new(ExerciseConfig::builtin(Archetype::Tree));
    assert!(matches!(
        run_from_clips(&clips, &setup, None, Execution::Parallel),
        Err(PipelineError::Classifier(_))
    ));
}
