use std::collections::HashSet;

use placerec_core::cloud::{planar_distance, split_train_test, subsample_by_distance};
use placerec_core::{synth, PoseRecord, SplitSpec, Square};
use proptest::prelude::*;

fn poses(xy: &[(f64, f64)]) -> Vec<PoseRecord> {
    xy.iter()
        .enumerate()
        .map(|(i, &(x, y))| PoseRecord { cloud_id: format!("c{i:04}"), run_id: 0, timestamp: i as f64, position: [x, y] })
        .collect()
}

proptest! {
    #[test]
    fn split_partitions_input(
        xy in proptest::collection::vec((-300.0f64..300.0, -300.0f64..300.0), 1..200),
        squares in proptest::collection::vec((-200.0f64..200.0, -200.0f64..200.0), 0..4),
        buffer in 0.0f64..30.0,
    ) {
        let p = poses(&xy);
        let spec = SplitSpec { test_squares: squares.iter().map(|&(x, y)| Square { center: [x, y], side: 100.0 }).collect(), buffer_width: buffer };
        let s = split_train_test(&p, &spec).unwrap();
        let all: Vec<&String> = s.train.iter().chain(&s.test).chain(&s.dropped).collect();
        let uniq: HashSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), p.len());
        prop_assert_eq!(uniq.len(), p.len());
        prop_assert!(p.iter().all(|q| uniq.contains(&q.cloud_id)));
    }

    #[test]
    fn subsampled_poses_are_spaced(steps in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..200), spacing in 0.5f64..10.0) {
        let mut at = (0.0, 0.0);
        let xy: Vec<(f64, f64)> = steps.iter().map(|&(dx, dy)| { at = (at.0 + dx, at.1 + dy); at }).collect();
        let p = poses(&xy);
        let kept = subsample_by_distance(&p, spacing).unwrap();
        prop_assert_eq!(&kept[0], &p[0]);
        for w in kept.windows(2) {
            prop_assert!(planar_distance(w[0].position, w[1].position) >= spacing);
        }
    }
}

#[test]
fn subsample_examples() {
    let line: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64, 0.0)).collect();
    let kept = subsample_by_distance(&poses(&line), 5.0).unwrap();
    assert_eq!(kept.len(), 21);
    assert!(kept.iter().enumerate().all(|(i, p)| p.position[0] == 5.0 * i as f64));
    assert_eq!(subsample_by_distance(&poses(&[(3.0, 4.0)]), 5.0).unwrap().len(), 1);
}

#[test]
fn synthetic_world_is_pure() {
    let cfg = synth::SynthConfig { azimuth_steps: 120, ..synth::SynthConfig::new(11, 3, 2, 0.5) };
    assert_eq!(synth::generate_world(&cfg).unwrap(), synth::generate_world(&cfg).unwrap());
    let (clouds, poses) = synth::generate_synthetic_world(7, 50, 2, 0.5).unwrap();
    assert_eq!((clouds.len(), poses.len()), (100, 100));
}
