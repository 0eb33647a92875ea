use isoform_core::classifier::*;
use isoform_core::pose::angle_diff;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(seed: u64) -> (Mlp, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..9);
    let mut net = Mlp::init(&[m, 32, 3], &mut rng);
    let params: Vec<f64> = net.params().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params(&params);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
    (net, xs, ys)
}

/// Worst relative gap between backprop and central differences.
fn gradient_gap(net: &Mlp, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    const EPS: f64 = 1e-5;
    let (_, analytic) = net.loss_and_gradient(xs, ys);
    let base = net.params();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + EPS;
        probe.set_params(&p);
        let up = probe.loss(xs, ys);
        p[i] = base[i] - EPS;
        probe.set_params(&p);
        let down = probe.loss(xs, ys);
        let numeric = (up - down) / (2.0 * EPS);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..20 {
        let (net, xs, ys) = random_net(seed);
        let gap = gradient_gap(&net, &xs, &ys);
        assert!(gap < 1e-4, "seed {seed}: relative error {gap}");
    }
}

#[test]
fn reported_loss_matches_forward_pass() {
    let (net, xs, ys) = random_net(99);
    let (loss, _) = net.loss_and_gradient(&xs, &ys);
    let direct: f64 = xs.iter().zip(&ys).map(|(x, &y)| -net.forward(x)[y].ln()).sum::<f64>() / xs.len() as f64;
    assert!((loss - direct).abs() < 1e-12);
    assert_eq!(loss, net.loss(&xs, &ys));
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-500.0..500.0f64, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn softmax_ignores_shifts(logits in prop::collection::vec(-50.0..50.0f64, 1..10), c in -100.0..100.0f64) {
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        for (a, b) in softmax(&logits).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn looser_levels_never_add_violations(
        means in prop::collection::vec(0.0..360.0f64, 3),
        stds in prop::collection::vec(0.0..40.0f64, 3),
        feature in prop::collection::vec(0.0..360.0f64, 3),
    ) {
        let bands = AngleBandModel {
            labels: vec!["a".into(), "b".into(), "c".into()],
            means,
            stds,
            bin_width: 10.0,
        };
        let counts: Vec<usize> = GradeLevel::ALL
            .iter()
            .map(|&l| bands.grade(&feature, l).unwrap().violations.len())
            .collect();
        prop_assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{:?}", counts);
    }

    #[test]
    fn circular_mean_of_a_tight_cluster(center in 0.0..360.0f64, offs in prop::collection::vec(-40.0..40.0f64, 2..20)) {
        let angles: Vec<f64> = offs.iter().map(|o| (center + o).rem_euclid(360.0)).collect();
        let (mean, std) = circular_stats(&angles);
        prop_assert!((0.0..360.0).contains(&mean));
        // unwrapped around the cluster centre, the circular mean sits near the plain mean
        let plain = center + offs.iter().sum::<f64>() / offs.len() as f64;
        prop_assert!(angle_diff(mean, plain).abs() < 5.0, "{} vs {}", mean, plain);
        let spread = offs.iter().map(|o| (o - (plain - center)).abs()).fold(0.0, f64::max);
        prop_assert!(std <= spread + 5.0);
    }
}

#[test]
fn band_fitting_reference_values() {
    let labels = vec!["a".to_string()];
    let m = fit_bands(&labels, &[vec![85.0], vec![95.0]], 10.0).unwrap();
    assert!((m.means[0] - 90.0).abs() < 1e-9 && (m.stds[0] - 5.0).abs() < 1e-9);
    let m = fit_bands(&labels, &[vec![355.0], vec![5.0]], 10.0).unwrap();
    assert!(angle_diff(m.means[0], 0.0).abs() < 1e-9 && (m.stds[0] - 5.0).abs() < 1e-9);
    assert!(matches!(
        fit_bands(&labels, &[vec![1.0, 2.0], vec![3.0, 4.0]], 10.0),
        Err(ClassifierError::DimensionMismatch { expected: 1, got: 2 })
    ));
}

#[test]
fn zero_model_is_uniform() {
    let model = MlpModel {
        scaler: InputScaler::identity(6),
        net: Mlp::zeros(&[6, 32, 3]),
    };
    let p = model.predict(&[0.1; 6]).unwrap();
    assert!(p.probs.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    assert!(matches!(model.predict(&[0.1; 5]), Err(ClassifierError::DimensionMismatch { .. })));
}

fn three_clusters(seed: u64, per_class: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[90.0, 180.0, 45.0], [120.0, 180.0, 45.0], [90.0, 150.0, 45.0]];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..3 * per_class {
        let c = i % 3;
        xs.push(centers[c].iter().map(|v| v + rng.random_range(-5.0..5.0)).collect());
        ys.push(c);
    }
    (xs, ys)
}

#[test]
fn training_is_deterministic_and_learns() {
    let (xs, ys) = three_clusters(4, 20);
    let hp = Hyperparams::default();
    let (a, ra) = train_mlp(&xs, &ys, &hp, 42).unwrap();
    let (b, rb) = train_mlp(&xs, &ys, &hp, 42).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(ra, rb);
    assert_eq!(ra.epoch_loss.len(), hp.epochs);
    assert!(ra.epoch_loss[..10].windows(2).all(|w| w[1] < w[0]), "{:?}", &ra.epoch_loss[..10]);
    assert_eq!(ra.train_accuracy, 1.0);
    let (c, _) = train_mlp(&xs, &ys, &hp, 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_needs_ten_per_class() {
    let (xs, ys) = three_clusters(4, 9);
    assert!(matches!(
        train_mlp(&xs, &ys, &Hyperparams::default(), 0),
        Err(ClassifierError::InsufficientData(_))
    ));
    let (xs, mut ys) = three_clusters(4, 12);
    ys[0] = 3;
    assert!(matches!(
        train_mlp(&xs, &ys, &Hyperparams::default(), 0),
        Err(ClassifierError::InsufficientData(_))
    ));
}

#[test]
fn model_json_round_trip() {
    let (xs, ys) = three_clusters(1, 10);
    let hp = Hyperparams { epochs: 5, ..Hyperparams::default() };
    let (m, _) = train_mlp(&xs, &ys, &hp, 0).unwrap();
    let text = serde_json::to_string(&m).unwrap();
    let back: MlpModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict(&xs[0]).unwrap(), m.predict(&xs[0]).unwrap());
}
