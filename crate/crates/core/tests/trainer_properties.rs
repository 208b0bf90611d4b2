use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regsynth::acds::synthesize_s2t;
use regsynth::losses::{LeastSquares, LossWeights};
use regsynth::nn::{Graph, ParamStore, Tensor};
use regsynth::trainer::{
    discriminator_step, generator_pass, infer, is_discriminator_param, train_step, Batch, Checkpoint, CheckpointMeta,
    DiscriminatorInputs, Model, TrainerState, VariantRegistry,
};
use regsynth::volume::{denormalize_intensity, Modality, Units, Volume};

fn model(variant: &str) -> Model {
    Model::new(VariantRegistry::default().get(variant).unwrap(), 0.125, LossWeights::default())
}

fn patches(seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![2, 1, 16, 16, 16], (0..2 * 4096).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn batch(seed: u64) -> Batch {
    Batch {
        source: patches(seed),
        target: patches(seed + 1000),
        seed,
    }
}

fn split(store: &ParamStore<f32>) -> (Vec<(String, Vec<f32>)>, Vec<(String, Vec<f32>)>) {
    store
        .iter()
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .partition(|(n, _)| is_discriminator_param(n))
}

/// Real and translated patches as the step itself would build them.
fn disc_inputs(model: &Model, params: &ParamStore<f32>, b: &Batch) -> DiscriminatorInputs {
    let mut g = Graph::new();
    let i_s = g.input(b.source.clone());
    let i_t = g.input(b.target.clone());
    let pass = generator_pass(model, &mut g, params, i_s, i_t).unwrap();
    let mut domains = vec![(Modality::Target, b.target.clone(), g.value(pass.o_t).clone())];
    if let Some(o_s) = pass.o_s {
        domains.push((Modality::Source, b.source.clone(), g.value(o_s).clone()));
    }
    DiscriminatorInputs { domains }
}

#[test]
fn discriminator_update_leaves_other_networks_untouched() {
    for variant in ["BOTH+ACDS", "BASELINE"] {
        let m = model(variant);
        let mut state = TrainerState::new(m.init(3));
        let before = split(&state.params);
        let inputs = disc_inputs(&m, &state.params, &batch(1));
        discriminator_step(&m, &mut state, &inputs, 1e-3, &LeastSquares).unwrap();
        let after = split(&state.params);
        assert_eq!(before.1, after.1, "{variant}");
        assert_ne!(before.0, after.0, "{variant}: discriminators did not move");
    }
}

#[test]
fn generator_update_leaves_discriminators_where_their_own_step_put_them() {
    let m = model("BOTH+ACDS");
    let mut state = TrainerState::new(m.init(4));
    let b = batch(2);
    let mut disc_only = state.clone();
    let inputs = disc_inputs(&m, &disc_only.params, &b);
    discriminator_step(&m, &mut disc_only, &inputs, 1e-3, &LeastSquares).unwrap();

    let out = train_step(&m, &mut state, &b, 1e-3, &LeastSquares).unwrap();
    let (joint, alone) = (split(&state.params), split(&disc_only.params));
    assert_eq!(joint.0, alone.0);
    assert_ne!(joint.1, alone.1);
    assert!(out.report.total_is_consistent(&m.weights));
    assert_eq!(state.iteration, 1);
}

fn checkpoint(m: &Model, variant: &str) -> Checkpoint {
    let meta = CheckpointMeta {
        config: String::new(),
        config_hash: String::new(),
        variant: variant.into(),
        channel_scale: 0.125,
        window: (-1000.0, 1000.0),
        seed: 0,
        epoch: 0,
        iteration: 0,
        val_mae: None,
        tensors: Vec::new(),
    };
    Checkpoint::new(meta, m.init(5))
}

fn hu_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    Volume::new(dims, [1.0; 3], (0..n).map(|_| rng.gen_range(-1000.0..1000.0)).collect(), Units::Hu, Modality::Source)
        .unwrap()
}

#[test]
fn infer_is_the_denormalized_translation() {
    let m = model("BOTH+ACDS");
    let ckpt = checkpoint(&m, "BOTH+ACDS");
    let v = hu_volume([16, 16, 16], 7);
    let out = infer(&v, &ckpt).unwrap();
    assert!(out.padded.is_none());
    let norm = regsynth::volume::normalize_intensity(&v, -1000.0, 1000.0).unwrap();
    let direct = synthesize_s2t(&m.synth, &ckpt.params, &norm).unwrap();
    let direct = denormalize_intensity(&direct, -1000.0, 1000.0).unwrap();
    assert_eq!(out.volume.voxels(), direct.voxels());
    assert_eq!(out.volume.units(), Units::Hu);
}

#[test]
fn odd_dims_are_padded_then_cropped_back() {
    let m = model("BASELINE");
    let ckpt = checkpoint(&m, "BASELINE");
    let v = hu_volume([13, 16, 9], 8);
    let out = infer(&v, &ckpt).unwrap();
    assert_eq!(out.padded, Some([16, 16, 16]));
    assert_eq!(out.volume.dims(), [13, 16, 9]);
    assert!(out.volume.voxels().iter().all(|x| x.is_finite()));
}
