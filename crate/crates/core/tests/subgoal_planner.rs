mod common;

use common::planner::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subgoal_mpc::diffusion::{DiffusionConfig, SubgoalDiffusion};
use subgoal_mpc::subgoal_planner::{
    encode_latents, generate_subgoals, prune_reached, redistribute_upsample, GenerateOptions, Hierarchy, LatentChain,
    Reachability,
};
use subgoal_mpc::world2d::{ObjectState, Vec2};
use subgoal_mpc::Result;

#[test]
fn uniform_redistribution_is_equal_spacing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n = rng.random_range(2..10);
        let m = rng.random_range(n..=20);
        let chain = random_latents(&mut rng, n, 16);
        let w = rng.random_range(0.1..4.0);
        let expected = equal_spacing(&chain.latents, m);
        let uniform = redistribute_upsample(&chain, &FixedLengths(vec![w; n - 1]), m, true).unwrap();
        let off = redistribute_upsample(&chain, &FixedLengths(vec![w; n - 1]), m, false).unwrap();
        assert!(max_abs_diff(&uniform, &expected) <= 1e-9, "case {case}");
        assert!(max_abs_diff(&off, &expected) <= 1e-9, "case {case}");
    }
}

#[test]
fn nonuniform_redistribution_matches_arc_length_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let n = rng.random_range(2..10);
        let m = rng.random_range(n..=20);
        let chain = random_latents(&mut rng, n, 16);
        let lengths: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.05..40.0)).collect();
        let got = redistribute_upsample(&chain, &FixedLengths(lengths.clone()), m, true).unwrap();
        assert!(
            max_abs_diff(&got, &arc_length_oracle(&chain.latents, &lengths, m)) <= 1e-9,
            "case {case}"
        );
    }
}

#[test]
fn redistribution_examples() {
    let scalar = |v: &[f64]| LatentChain {
        latents: v.iter().map(|x| vec![*x]).collect(),
        source: v.iter().map(|_| ObjectState::new(vec![Vec2::new(0.0, 0.0)])).collect(),
    };
    // Latent values equal to their arc positions [0, .25, 1]: output is the query positions.
    let got = redistribute_upsample(&scalar(&[0.0, 0.25, 1.0]), &FixedLengths(vec![1.0, 3.0]), 5, true).unwrap();
    let flat: Vec<f64> = got.iter().map(|v| v[0]).collect();
    for (g, e) in flat.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
        assert!((g - e).abs() < 1e-12);
    }
    // Indices into the source: queries .5 and .75 fall in the second segment along with the endpoint.
    let idx = redistribute_upsample(&scalar(&[0.0, 1.0, 2.0]), &FixedLengths(vec![1.0, 3.0]), 5, true).unwrap();
    let in_second = idx.iter().filter(|v| v[0] > 1.0).count();
    assert_eq!(in_second, 3);

    let chain = scalar(&[0.3, -1.0, 2.0, 5.0]);
    let same = redistribute_upsample(&chain, &FixedLengths(vec![2.0; 3]), 4, true).unwrap();
    assert_eq!(same, chain.latents);
    let mid = redistribute_upsample(&chain, &FixedLengths(vec![2.0; 3]), 7, true).unwrap();
    let expected = [0.3, -0.35, -1.0, 0.5, 2.0, 3.5, 5.0];
    for (g, e) in mid.iter().zip(expected) {
        assert!((g[0] - e).abs() < 1e-9);
    }
    assert!(redistribute_upsample(&chain, &FixedLengths(vec![1.0; 3]), 3, true).is_err());
}

#[test]
fn chain_size_is_first_level_clearing_threshold() {
    let hierarchy = Hierarchy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sizes = Vec::new();
    for case in 0..50 {
        let k = if case % 2 == 0 { 1 } else { 3 };
        let (a, b) = random_pair(&mut rng, k);
        let d = a.distance(&b);
        let expected = hierarchy
            .levels()
            .iter()
            .copied()
            .find(|&m| d / ((m - 1) as f64) < 0.3)
            .unwrap_or(hierarchy.finest());
        let sampler = LineSampler::default();
        let out = generate_subgoals(
            &a,
            &b,
            &sampler,
            &Euclid(0.3),
            &hierarchy,
            GenerateOptions::default(),
            case,
        )
        .unwrap();
        assert_eq!(out.goals.len(), expected, "case {case}: distance {d}");
        assert_eq!(out.goals.first(), Some(&a));
        assert_eq!(out.goals.last(), Some(&b));
        assert_eq!(out.visited.last(), Some(&expected));
        assert!(out.visited.windows(2).all(|w| w[0] < w[1]));
        assert!(hierarchy.levels().contains(&out.goals.len()));
        sizes.push(expected);
    }
    sizes.sort();
    sizes.dedup();
    assert!(sizes.len() >= 4, "cases should cover several levels: {sizes:?}");
}

#[test]
fn constant_stubs_hit_the_bounds() {
    let hierarchy = Hierarchy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let (a, b) = random_pair(&mut rng, 2);
        let sampler = LineSampler::default();
        let near = generate_subgoals(
            &a,
            &b,
            &sampler,
            &Constant(true),
            &hierarchy,
            GenerateOptions::default(),
            case,
        )
        .unwrap();
        assert_eq!(near.goals, vec![a.clone(), b.clone()]);
        assert!(sampler.calls.borrow().is_empty());
        let far = generate_subgoals(
            &a,
            &b,
            &sampler,
            &Constant(false),
            &hierarchy,
            GenerateOptions::default(),
            case,
        )
        .unwrap();
        assert_eq!(far.goals.len(), 17);
        assert_eq!(far.visited, vec![2, 3, 5, 7, 9, 17]);
    }
}

#[test]
fn options_change_only_their_switch() {
    let hierarchy = Hierarchy::default();
    let a = ObjectState::new(vec![Vec2::new(-0.8, 0.0)]);
    let b = ObjectState::new(vec![Vec2::new(0.8, 0.0)]);
    let run = |opts: GenerateOptions| {
        let sampler = LineSampler::default();
        let out = generate_subgoals(&a, &b, &sampler, &Euclid(0.3), &hierarchy, opts, 1).unwrap();
        (out.goals.len(), sampler.calls.into_inner())
    };

    let (m, calls) = run(GenerateOptions::default());
    assert_eq!(m, 7);
    assert_eq!(calls.iter().map(|c| c.0).collect::<Vec<_>>(), vec![3, 5, 7]);
    assert!(calls.iter().all(|c| c.1.is_some()));

    let (m, calls) = run(GenerateOptions {
        coarse_to_fine: false,
        ..GenerateOptions::default()
    });
    assert_eq!(m, 7);
    assert!(calls.iter().all(|c| c.1.is_none()));

    let (m, calls) = run(GenerateOptions {
        adaptive: false,
        ..GenerateOptions::default()
    });
    assert_eq!(m, 17);
    assert_eq!(calls.len(), 5);

    // Unequal segments: redistribution shifts the weights, the plain variant does not.
    struct Skewed;
    impl Reachability for Skewed {
        fn segment_lengths(&self, chain: &[ObjectState]) -> Result<Vec<f64>> {
            Ok((0..chain.len() - 1)
                .map(|i| if i == 0 && chain.len() > 2 { 1.0 } else { 30.0 })
                .collect())
        }
        fn threshold(&self) -> f64 {
            10.0
        }
    }
    let weights_at_3 = |redistribute| {
        let sampler = LineSampler::default();
        let opts = GenerateOptions {
            redistribute,
            ..GenerateOptions::default()
        };
        generate_subgoals(&a, &b, &sampler, &Skewed, &hierarchy, opts, 1).unwrap();
        let calls = sampler.calls.into_inner();
        calls[1].1.clone().unwrap().1
    };
    let plain = weights_at_3(false);
    let skewed = weights_at_3(true);
    assert_eq!(plain, subgoal_mpc::interp::upsample_matrix(&[0.0, 0.5, 1.0], 5));
    assert_eq!(skewed, subgoal_mpc::interp::upsample_matrix(&[0.0, 1.0 / 31.0, 1.0], 5));
}

#[test]
fn latents_respond_locally_and_smoothly() {
    let model = SubgoalDiffusion::new(DiffusionConfig::default(), 4, 64, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, b) = random_pair(&mut rng, 2);
    let (c, _) = random_pair(&mut rng, 2);
    let chain = vec![a.clone(), b.clone(), c.clone(), a.clone()];
    let base = encode_latents(&model, &chain);
    assert_eq!(base.latents.len(), 4);
    assert_eq!(base.latents[0], base.latents[3]);
    assert_eq!(base.latents[0].len(), 16);

    let mut flat = b.to_flat();
    flat[1] += 1e-4;
    let mut moved = chain.clone();
    moved[1] = ObjectState::from_flat(&flat);
    let probe = encode_latents(&model, &moved);
    for i in [0, 2, 3] {
        assert_eq!(probe.latents[i], base.latents[i]);
    }
    let delta = base.latents[1]
        .iter()
        .zip(&probe.latents[1])
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(delta > 0.0 && delta < 1e-2, "latent moved by {delta}");
}

#[test]
fn pruning_skips_to_the_last_reached_subgoal() {
    let pts: Vec<ObjectState> = (0..6)
        .map(|i| ObjectState::new(vec![Vec2::new(i as f64 * 0.2, 0.0)]))
        .collect();
    let now = ObjectState::new(vec![Vec2::new(0.41, 0.02)]);
    assert_eq!(prune_reached(&pts, &now, 0.05), pts[3..].to_vec());
}

proptest! {
    #[test]
    fn pruning_keeps_the_goal_and_never_grows(xs in prop::collection::vec(-1.0f64..1.0, 1..12), q in -1.0f64..1.0, eps in 0.0f64..0.5) {
        let chain: Vec<ObjectState> = xs.iter().map(|&x| ObjectState::new(vec![Vec2::new(x, 0.0)])).collect();
        let now = ObjectState::new(vec![Vec2::new(q, 0.0)]);
        let out = prune_reached(&chain, &now, eps);
        prop_assert!(!out.is_empty() && out.len() <= chain.len());
        prop_assert_eq!(out.last(), chain.last());
        prop_assert_eq!(&chain[chain.len() - out.len()..], &out[..]);
        // Nothing left before the final goal is within reach.
        prop_assert!(out[..out.len() - 1].iter().all(|g| g.distance(&now) > eps));
    }
}
