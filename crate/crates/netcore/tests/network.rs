use netcore::{read_checkpoint, Adam, AdamConfig, Linear, NetError, ParamStore, Tape, TemporalUNet, UNetConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unet(seed: u64) -> (ParamStore, TemporalUNet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = TemporalUNet::new(&mut store, "unet", UNetConfig::new(6, 4, 10), &mut rng);
    (store, net)
}

fn run(store: &ParamStore, net: &TemporalUNet, x: &[f64], len: usize, ctx: &[f64]) -> netcore::Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let xv = tape.constant(len, net.config.in_dim, x.to_vec());
    let cv = tape.row(ctx.to_vec());
    let y = net.forward(&mut tape, xv, cv)?;
    Ok(tape.value(y).to_vec())
}

#[test]
fn zero_initialized_output_layer_gives_zero() {
    let (store, net) = unet(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for len in [2, 5, 17] {
        let x: Vec<f64> = (0..len * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = run(&store, &net, &x, len, &[0.3; 10]).unwrap();
        assert_eq!(out.len(), len * 4);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn shape_mismatch_is_a_configuration_error() {
    let (store, net) = unet(1);
    assert!(matches!(
        run(&store, &net, &[0.0; 6], 1, &[0.0; 10]),
        Err(NetError::Shape { .. })
    ));
    let mut tape = Tape::new(&store);
    let x = tape.constant(3, 5, vec![0.0; 15]);
    let c = tape.row(vec![0.0; 10]);
    assert!(net.forward(&mut tape, x, c).is_err());
    let x = tape.constant(3, 6, vec![0.0; 18]);
    let c = tape.row(vec![0.0; 9]);
    assert!(net.forward(&mut tape, x, c).is_err());
}

#[test]
fn linear_layer_is_linear_in_its_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 3, 2, &mut rng);
    store.value_mut(lin.bias).iter_mut().for_each(|b| *b = 0.0);
    let x = vec![0.4, -1.2, 0.7];
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let xv = tape.row(x.clone());
        let y = lin.forward(&mut tape, xv);
        tape.value(y).to_vec()
    };
    let before = eval(&store);
    store.value_mut(lin.weight).iter_mut().for_each(|w| *w *= 2.0);
    let after = eval(&store);
    for (b, a) in before.iter().zip(&after) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
}

#[test]
fn identity_network_bias_gradient_is_all_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let lin = Linear::zeroed(&mut store, "id", 3, 3, &mut rng);
    {
        let w = store.value_mut(lin.weight);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
    }
    let mut tape = Tape::new(&store);
    let x = tape.constant(4, 3, vec![0.5; 12]);
    let y = lin.forward(&mut tape, x);
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    // four rows each contribute one
    assert_eq!(grads.get(lin.bias).unwrap(), &[4.0, 4.0, 4.0]);
    let mut tape = Tape::new(&store);
    let x = tape.row(vec![0.5; 3]);
    let y = lin.forward(&mut tape, x);
    let loss = tape.sum(y);
    assert_eq!(tape.backward(loss).unwrap().get(lin.bias).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn training_is_deterministic() {
    let train = || {
        let (mut store, net) = unet(9);
        let mut adam = Adam::new(&store, AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let x: Vec<f64> = (0..9 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grads = {
                let mut tape = Tape::new(&store);
                let xv = tape.constant(9, 6, x);
                let cv = tape.row(vec![0.1; 10]);
                let y = net.forward(&mut tape, xv, cv).unwrap();
                let target = tape.constant(9, 4, vec![0.5; 36]);
                let d = tape.sub(y, target);
                let sq = tape.square(d);
                let loss = tape.sum(sq);
                tape.backward(loss).unwrap()
            };
            store.accumulate(&grads, 1.0);
            adam.step(&mut store);
        }
        store.ids().flat_map(|id| store.value(id).to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(train(), train());
}

#[test]
fn checkpoint_round_trip() {
    let (store, net) = unet(5);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("ckpt/denoiser");
    store
        .save(&stem, "denoiser", serde_json::to_value(&net.config).unwrap())
        .unwrap();
    let (manifest, blob) = read_checkpoint(&stem).unwrap();
    assert_eq!(manifest.model_name, "denoiser");
    assert_eq!(blob.len(), store.num_scalars() * 4);
    let cfg: UNetConfig = serde_json::from_value(manifest.hyperparams.clone()).unwrap();
    let (mut fresh, _) = unet(6);
    assert_eq!(cfg, net.config);
    fresh.load_values(&manifest, &blob).unwrap();
    for id in store.ids() {
        for (a, b) in store.value(id).iter().zip(fresh.value(id)) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
    assert!(fresh.load_values(&manifest, &blob[..blob.len() - 4]).is_err());
}

#[test]
fn parameter_budget() {
    let (store, _) = unet(0);
    assert!(store.num_scalars() <= 200_000, "{}", store.num_scalars());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn unet_preserves_sequence_length(len in 2usize..24, seed in 0u64..1000) {
        let (mut store, net) = unet(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.value_mut(id) {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x: Vec<f64> = (0..len * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = run(&store, &net, &x, len, &[0.2; 10]).unwrap();
        prop_assert_eq!(out.len(), len * 4);
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }
}
