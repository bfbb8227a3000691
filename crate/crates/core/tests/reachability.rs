use proptest::prelude::*;
use subgoal_mpc::datastore::{collect_dataset, sample_distance_pairs, CollectConfig, Dataset, DistancePair};
use subgoal_mpc::reachability::*;
use subgoal_mpc::world2d::{EnvSpec, ObjectState, Vec2};

fn delta(bin: usize) -> Vec<f64> {
    let mut p = vec![0.0; 40];
    p[bin - 1] = 1.0;
    p
}

fn mean_bin(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, q)| (i + 1) as f64 * q).sum()
}

fn softmax_of(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Model whose output is a point mass on `bin` for every input.
fn constant_model(bin: usize) -> DistanceModel {
    let mut m = DistanceModel::new(DistanceConfig::default(), 2, 1).unwrap();
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let name = m.store.name(id).to_string();
        if name == "distance.2.weight" {
            m.store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        if name == "distance.2.bias" {
            let b = m.store.value_mut(id);
            b.iter_mut().for_each(|v| *v = 0.0);
            b[bin - 1] = 1000.0;
        }
    }
    m
}

fn point(x: f64, y: f64) -> ObjectState {
    ObjectState::new(vec![Vec2::new(x, y)])
}

#[test]
fn soft_minimum_examples() {
    assert_eq!(d_hat_from_probs(&delta(7), 1.0), 7.0);
    for bin in 1..=40 {
        assert!((d_hat_from_probs(&delta(bin), 0.37) - bin as f64).abs() < 1e-9);
    }
    let mut p = vec![0.0; 40];
    p[1] = 0.5;
    p[9] = 0.5;
    assert!((d_hat_from_probs(&p, 1.0) - 2.693).abs() < 1e-3);
    let q = softmax_of(&(0..40).map(|i| ((i * 7) % 11) as f64 * 0.3).collect::<Vec<_>>());
    assert!((d_hat_from_probs(&q, 1e6) - mean_bin(&q)).abs() < 1e-3);
}

#[test]
fn reachability_is_strict() {
    let a = point(0.0, 0.0);
    let m5 = constant_model(5);
    assert_eq!(m5.d_hat(&a, &a).unwrap(), 5.0);
    assert!(m5.is_reachable(&a, &a).unwrap());
    let m10 = constant_model(10);
    assert_eq!(m10.d_hat(&a, &a).unwrap(), 10.0);
    assert!(!m10.is_reachable(&a, &a).unwrap());
    assert!(!constant_model(40).is_reachable(&a, &a).unwrap());
}

#[test]
fn probabilities_sum_to_one_and_segments_match() {
    let m = DistanceModel::new(DistanceConfig::default(), 4, 3).unwrap();
    let chain: Vec<ObjectState> = (0..5)
        .map(|i| ObjectState::new(vec![Vec2::new(0.1 * i as f64, -0.2), Vec2::new(0.3, 0.05 * i as f64)]))
        .collect();
    let segs = m.segment_d_hats(&chain).unwrap();
    assert_eq!(segs.len(), 4);
    for (i, w) in chain.windows(2).enumerate() {
        let p = m.probabilities(&w[0], &w[1]).unwrap();
        assert_eq!(p.len(), 40);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((segs[i] - m.d_hat(&w[0], &w[1]).unwrap()).abs() < 1e-12);
    }
    assert!(m.d_hat(&point(0.0, 0.0), &chain[0]).is_err());
}

#[test]
fn constant_labels_are_learned() {
    let mut model = DistanceModel::new(
        DistanceConfig {
            train_steps: 300,
            batch_size: 32,
            ..DistanceConfig::default()
        },
        2,
        4,
    )
    .unwrap();
    let losses = fit_pairs(&mut model, |step| {
        Ok((0..32)
            .map(|i| {
                let t = (step * 32 + i) as f64 * 0.001;
                DistancePair {
                    a: point(t.sin() * 0.8, t.cos() * 0.8),
                    b: point(-t.cos() * 0.5, t.sin() * 0.3),
                    k: 5,
                    gap: 5,
                }
            })
            .collect())
    })
    .unwrap();
    assert!(losses[losses.len() - 1] < 0.5 * losses[0]);
    let p = model.probabilities(&point(0.2, 0.1), &point(-0.4, 0.0)).unwrap();
    let argmax = (0..40).max_by(|&i, &j| p[i].total_cmp(&p[j])).unwrap();
    assert_eq!(argmax + 1, 5);
}

#[test]
fn training_on_collected_data_beats_the_label_marginal() {
    let env = EnvSpec::u_trap().build().unwrap();
    let data = collect_dataset(
        &env,
        &CollectConfig {
            n_traj: 200,
            ..CollectConfig::default()
        },
        3,
    )
    .unwrap();
    let split = 180;
    let train = Dataset {
        header: data.header.clone(),
        trajectories: data.trajectories[..split].to_vec(),
    };
    let held = Dataset {
        header: data.header.clone(),
        trajectories: data.trajectories[split..].to_vec(),
    };
    let held_pairs = sample_distance_pairs(&held, 2000, 8).unwrap();
    let cfg = DistanceConfig {
        train_steps: 1500,
        ..DistanceConfig::default()
    };
    let (model, losses) = train_distance_model(&train, &cfg, 5).unwrap();
    assert_eq!(losses.len(), 1500);
    let untrained = DistanceModel::new(cfg.clone(), 2, subgoal_mpc::seeds::derive(5, &[0])).unwrap();
    let before = untrained.loss(&held_pairs);
    let after = model.loss(&held_pairs);

    // entropy of the label frequencies: what a predictor ignoring the
    // inputs achieves at best
    let mut counts = [0.0f64; 40];
    held_pairs.iter().for_each(|p| counts[p.k - 1] += 1.0);
    let n = held_pairs.len() as f64;
    let marginal: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum();
    assert!(
        after < marginal - 0.5,
        "held-out CE {after}, marginal entropy {marginal}"
    );
    assert!(after < 0.75 * before, "held-out CE {before} -> {after}");

    let (again, _) = train_distance_model(&train, &cfg, 5).unwrap();
    assert_eq!(again.loss(&held_pairs), after);

    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("distance");
    model.save(&stem).unwrap();
    let loaded = DistanceModel::load(&stem).unwrap();
    let (a, b) = (&held_pairs[0].a, &held_pairs[0].b);
    assert!((loaded.d_hat(a, b).unwrap() - model.d_hat(a, b).unwrap()).abs() < 1e-3);
    assert!(subgoal_mpc::diffusion::SubgoalDiffusion::load(&stem).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn soft_minimum_properties(logits in prop::collection::vec(-8.0f64..8.0, 40)) {
        let p = softmax_of(&logits);
        let mean = mean_bin(&p);
        let mut prev = 0.0;
        for alpha in [0.1, 1.0, 10.0] {
            let d = d_hat_from_probs(&p, alpha);
            prop_assert!((1.0..=40.0).contains(&d));
            prop_assert!(d <= mean + 1e-9);
            prop_assert!(d >= prev - 1e-9);
            prev = d;
        }
    }
}
