use isoform_core::exercise::ExerciseConfig;
use isoform_core::features::*;
use isoform_core::pose::{angle_diff, joint_angle, KeypointFrame};
use isoform_core::synth::{skeleton_points, synthesize, Archetype, BodyDims, SynthSpec};
use proptest::prelude::*;

/// Linear scan over explicit edges; no division.
fn oracle_bin(theta: f64, bins: usize) -> usize {
    (0..bins)
        .find(|&k| {
            let lo = k as f64 * 360.0 / bins as f64;
            let hi = (k + 1) as f64 * 360.0 / bins as f64;
            lo <= theta && theta < hi
        })
        .unwrap_or(bins - 1)
}

proptest! {
    #[test]
    fn histogram_matches_linear_scan(
        angles in prop::collection::vec(0.0..360.0f64, 0..300),
        bins in 4..90usize,
    ) {
        let h = histogram_of("x", &angles, bins);
        let mut want = vec![0usize; bins];
        for &a in &angles {
            want[oracle_bin(a, bins)] += 1;
        }
        prop_assert_eq!(&h.counts, &want);
        prop_assert_eq!(h.total(), angles.len());
        let best = *want.iter().max().unwrap();
        prop_assert_eq!(h.mode_bin(), want.iter().position(|&c| c == best).unwrap());
    }

    #[test]
    fn integer_edges_go_up(k in 0..36usize) {
        prop_assert_eq!(bin_index(k as f64 * 10.0, 36), k);
    }
}

#[test]
fn constant_angle_feature_is_its_bin_center() {
    let h = histogram_of("x", &[95.0; 12], 36);
    assert_eq!(h.mode_bin(), 9);
    assert_eq!((h.edge(9), h.edge(10)), (90.0, 100.0));
    assert_eq!(h.center(h.mode_bin()), 95.0);
}

#[test]
fn bimodal_tie_takes_the_lower_bin() {
    let mut angles = vec![300.0; 7];
    angles.extend([20.0; 7]);
    let h = histogram_of("x", &angles, 36);
    assert_eq!(h.center(h.mode_bin()), 25.0);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = ExerciseConfig::builtin(Archetype::Tree);
    let mut fc = FeatureConfig::new(cfg.triplets.clone());
    fc.bin_count = 3;
    assert!(matches!(fc.validate(), Err(FeatureError::InvalidConfig(_))));
    assert!(matches!(FeatureConfig::new(vec![]).validate(), Err(FeatureError::InvalidConfig(_))));
}

#[test]
fn noise_free_reps_land_on_the_hold_angles() {
    let dims = BodyDims::default();
    for arch in Archetype::ALL {
        let cfg = ExerciseConfig::builtin(arch);
        let fc = FeatureConfig::new(cfg.triplets.clone());
        for class in 0..3 {
            let sc = synthesize(&SynthSpec::new(arch, class).with_reps(3).with_seed(class as u64)).unwrap();
            let hold = KeypointFrame::with_points(0.0, skeleton_points(&arch.hold_pose(class), &dims));
            for rep in sc.rep_clips() {
                let f = feature_vector(&rep, &fc).unwrap();
                for (t, v) in cfg.triplets.iter().zip(&f.values) {
                    let target = joint_angle(&hold, t).unwrap();
                    assert!(
                        angle_diff(*v, target).abs() <= fc.bin_width(),
                        "{arch} class {class} {}: {v} vs {target}",
                        t.label
                    );
                }
            }
        }
    }
}

#[test]
fn mistakes_move_at_least_one_feature() {
    for arch in Archetype::ALL {
        let cfg = ExerciseConfig::builtin(arch);
        let fc = FeatureConfig::new(cfg.triplets.clone());
        let feats: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let sc = synthesize(&SynthSpec::new(arch, c).with_reps(1)).unwrap();
                feature_vector(&sc.rep_clips()[0], &fc).unwrap().values
            })
            .collect();
        for c in 1..3 {
            let moved = feats[0]
                .iter()
                .zip(&feats[c])
                .map(|(a, b)| angle_diff(*a, *b).abs())
                .fold(0.0, f64::max);
            assert!(moved >= 20.0, "{arch} class {c}: largest feature shift {moved}");
        }
    }
}

#[test]
fn malformed_table_is_rejected() {
    assert!(matches!(
        read_feature_table("a,b,c\n1,2,3\n".as_bytes()),
        Err(FeatureError::Malformed(_))
    ));
    assert!(matches!(
        read_feature_table("clip_id,rep_idx,class_idx,f_1\nx,zero,0,1.0\n".as_bytes()),
        Err(FeatureError::Malformed(_))
    ));
}
