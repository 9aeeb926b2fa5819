#![allow(dead_code)]

use msplic::{Model, ModelConfig, MspProfile, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A freshly initialised model with a randomised parameter-network output
/// layer and a randomly amplified analysis output, so latents span several
/// integers and predictions depend on context.
pub fn random_model(profile: MspProfile, channels: usize, filters: usize, seed: u64) -> Model {
    let mut m = Model::new(ModelConfig::new(profile, channels, filters, 0.013).unwrap(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let last_hp = m.prob.hp.weights[5];
    let t = Tensor::uniform(m.store.get(last_hp).shape(), -0.05, 0.05, &mut rng);
    *m.store.get_mut(last_hp) = t;
    let gain = rng.gen_range(2.0..12.0f32);
    let last_ga = m.transforms.analysis[3].0;
    let t = m.store.get(last_ga).map(|v| v * gain);
    *m.store.get_mut(last_ga) = t;
    m
}

pub fn desk_profiles() -> [MspProfile; 3] {
    [MspProfile::baseline().with_filters(8), MspProfile::normal().with_filters(8), MspProfile::extra().with_filters(8)]
}
