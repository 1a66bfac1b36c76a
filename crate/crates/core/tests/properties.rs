use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sogm_core::grid::max_log_odds;
use sogm_core::hmm::{
    baum_welch, forward_backward, log_likelihood, make_bakis, model_from_json, model_to_json, viterbi, DecodeConfig,
    GmmParams, HierarchicalModel, ObservationSequence, PropertyModel, TrainingConfig,
};
use sogm_core::pipeline::split_scenarios;
use sogm_core::segmentation::{extract_supercells, is_connected, SegmentationParams};
use sogm_core::{
    inverse_logit, logit, update_cell, GridIndex, GridSpec, LayerObservation, LogOdds, Probability, SemanticGrid, EPS,
};

fn model(seed: u64, s: usize, skip: usize, n: usize) -> PropertyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = make_bakis(s, skip, n).unwrap();
    for (row, mask) in m.transition.iter_mut().zip(&m.topology_mask) {
        let raw: Vec<f64> = mask.iter().map(|&a| if a { rng.random_range(0.05..1.0) } else { 0.0 }).collect();
        let total: f64 = raw.iter().sum();
        *row = raw.iter().map(|v| v / total).collect();
    }
    m.emissions = (0..s)
        .map(|_| {
            GmmParams::single((0..n).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(0.3..1.5))
        })
        .collect();
    m
}

fn frames(seed: u64, t: usize, n: usize) -> ObservationSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ObservationSequence::new((0..t).map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn probabilities_stay_clamped(p in -1.0f64..2.0) {
        let q = Probability::new(p).get();
        prop_assert!((EPS..=1.0 - EPS).contains(&q));
    }

    #[test]
    fn logit_round_trip(p in EPS..=1.0 - EPS) {
        prop_assert!((inverse_logit(logit(Probability::new(p))).get() - p).abs() <= 1e-9);
    }

    #[test]
    fn fusion_saturates(a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let l = update_cell(LogOdds(a), LogOdds(b)).get();
        prop_assert!(l.abs() <= max_log_odds());
        prop_assert_eq!(update_cell(LogOdds(a).saturate(), LogOdds(0.0)), LogOdds(a).saturate());
    }

    #[test]
    fn fusion_commutes(obs in prop::collection::vec(-1.3f64..1.3, 1..10), rot in 0usize..10) {
        let spec = GridSpec::new(2, 2, 0.01, (0.0, 0.0)).unwrap();
        let cell = GridIndex::new(1, 0);
        let fuse = |order: &[f64]| {
            let mut g = SemanticGrid::new(spec.clone(), &["x", "y"]).unwrap();
            for &l in order {
                g.apply_observation(&LayerObservation { layer: "y".into(), cells: vec![(cell, LogOdds(l))] }).unwrap();
            }
            g
        };
        let mut rotated = obs.clone();
        rotated.rotate_left(rot % obs.len());
        rotated.reverse();
        let (a, b) = (fuse(&obs), fuse(&rotated));
        prop_assert!((a.log_odds(1, cell).unwrap().get() - b.log_odds(1, cell).unwrap().get()).abs() <= 1e-12);
        prop_assert_eq!(a.log_odds(0, cell).unwrap().get(), 0.0);
    }

    #[test]
    fn inference_is_consistent(seed in any::<u64>(), s in 1usize..6, skip in 0usize..3, n in 1usize..4, t in 1usize..30) {
        let m = model(seed, s, skip, n);
        let obs = frames(seed ^ 1, t, n);
        let ll = log_likelihood(&m, &obs).unwrap();
        let post = forward_backward(&m, &obs).unwrap();
        prop_assert!((post.log_likelihood - ll).abs() <= 1e-9 * ll.abs().max(1.0));
        for row in &post.gamma {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let path = viterbi(&m, &obs).unwrap();
        prop_assert!(path.log_prob <= ll + 1e-9);
        prop_assert_eq!(path.states.len(), t);
        prop_assert_eq!(path.states[0], 0);
        for w in path.states.windows(2) {
            prop_assert!(m.topology_mask[w[0]][w[1]]);
        }
    }

    #[test]
    fn model_json_round_trips(seed in any::<u64>(), s in 1usize..6, n in 1usize..4) {
        let subs: Vec<PropertyModel> = (0..3).map(|i| model(seed.wrapping_add(i), s, 1, n)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let h = HierarchicalModel::new(
            vec!["ground".into(), "table".into(), "object".into()],
            raw.iter().map(|x| x / total).collect(),
            subs,
        ).unwrap();
        let back = model_from_json(&model_to_json(&h).unwrap()).unwrap();
        prop_assert_eq!(back, h);
    }

    #[test]
    fn splits_partition(n in 2usize..60, f in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = split_scenarios(n, f, seed).unwrap();
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn baum_welch_keeps_structure(seed in any::<u64>(), s in 2usize..6, skip in 0usize..2, n in 1usize..3) {
        let m = model(seed, s, skip, n);
        let seqs: Vec<ObservationSequence> = (0..3).map(|i| frames(seed.wrapping_add(i + 10), 12 + 4 * i as usize, n)).collect();
        let out = baum_welch(&m, &seqs, &TrainingConfig { max_iters: 15, tol: 0.0, ..Default::default() }).unwrap();
        for w in out.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6);
        }
        for (row, mask) in out.model.transition.iter().zip(&out.model.topology_mask) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for (&a, &allowed) in row.iter().zip(mask) {
                prop_assert!(allowed || a == 0.0);
            }
        }
        prop_assert_eq!(&out.model.start, &m.start);
    }

    #[test]
    fn decoded_segments_respect_constraints(seed in any::<u64>(), t in 3usize..40, min_len in 1usize..5) {
        let subs: Vec<PropertyModel> = (0..3).map(|i| model(seed.wrapping_add(i), 4, 1, 3)).collect();
        let h = HierarchicalModel::new(
            vec!["ground".into(), "table".into(), "object".into()],
            vec![0.3, 0.3, 0.4],
            subs,
        ).unwrap();
        let labels = h.decode_path(&frames(seed ^ 7, t, 3), &DecodeConfig { min_segment_len: min_len }).unwrap();
        prop_assert_eq!(labels.len(), t);
        let mut runs = vec![1usize];
        for w in labels.windows(2) {
            if w[0] == w[1] { *runs.last_mut().unwrap() += 1 } else { runs.push(1) }
        }
        if t >= min_len {
            prop_assert!(runs.iter().all(|&r| r >= min_len), "runs {:?}", runs);
        }
    }

    #[test]
    fn supercells_partition_the_grid(seed in any::<u64>(), w in 4usize..24, h in 4usize..24, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new(w, h, 0.01, (0.0, 0.0)).unwrap();
        let layers = (0..2)
            .map(|l| (format!("l{l}"), (0..w * h).map(|_| rng.random_range(0.05..0.95)).collect()))
            .collect();
        let grid = SemanticGrid::from_probabilities(spec, layers).unwrap();
        let params = SegmentationParams { num_seeds: k.min(w * h), rng_seed: seed, ..Default::default() };
        let seg = extract_supercells(&grid, &params).unwrap();
        prop_assert_eq!(seg.labels.len(), w * h);
        prop_assert!(seg.labels.iter().all(|&l| (l as usize) < seg.num_supercells()));
        prop_assert_eq!(seg.supercells.iter().map(|s| s.size).sum::<usize>(), w * h);
        prop_assert!(is_connected(&seg));
        prop_assert!(seg.supercells.iter().all(|s| s.var_l.iter().all(|&v| v >= 0.0)));
    }
}
