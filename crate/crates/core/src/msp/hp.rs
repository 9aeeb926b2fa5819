//! The parameter network: six 3×3 convolutions mapping the mixture
//! `(ȳ, m)` to Gaussian means and scales.

use rand::Rng;

use super::gaussian::{SIGMA_MAX, SIGMA_MIN};
use super::mixture::MixtureState;
use crate::autodiff::{Binder, Graph, ParamId, ParamStore, Var};
use crate::error::{config, numeric, Result};
use crate::tensor::Tensor;

const LAYERS: usize = 6;
const SLOPE: f32 = 0.2;

#[derive(Clone, Debug)]
pub struct HpIds {
    pub weights: [ParamId; LAYERS],
    pub biases: [ParamId; LAYERS],
}

fn weight_name(k: usize) -> String {
    format!("h_p.conv{k}.weight")
}
fn bias_name(k: usize) -> String {
    format!("h_p.conv{k}.bias")
}

/// He-uniform hidden layers and a zero output layer, so a fresh network
/// predicts `μ = ȳ, σ = 1`.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, filters: usize, rng: &mut R) -> HpIds {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for k in 0..LAYERS {
        let c_in = if k == 0 { 2 * channels } else { filters };
        let c_out = if k == LAYERS - 1 { 2 * channels } else { filters };
        let w = if k == LAYERS - 1 {
            Tensor::zeros(&[c_out, c_in, 3, 3])
        } else {
            let bound = (6.0 / (9 * c_in) as f32).sqrt();
            Tensor::uniform(&[c_out, c_in, 3, 3], -bound, bound, rng)
        };
        weights.push(store.insert(weight_name(k), w));
        biases.push(store.insert(bias_name(k), Tensor::zeros(&[c_out])));
    }
    HpIds { weights: weights.try_into().unwrap(), biases: biases.try_into().unwrap() }
}

impl HpIds {
    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let get = |n: String| store.id(&n).ok_or_else(|| config!("weights lack {n}"));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..LAYERS {
            weights.push(get(weight_name(k))?);
            biases.push(get(bias_name(k))?);
        }
        Ok(Self { weights: weights.try_into().unwrap(), biases: biases.try_into().unwrap() })
    }

    /// Latent channel count the network was built for.
    pub fn channels(&self, store: &ParamStore) -> usize {
        store.get(self.weights[0]).shape()[1] / 2
    }

    pub fn all(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }
}

/// Records the network on `g` and returns `(μ, σ)`. `what` names the
/// decoding unit in error messages.
pub fn predict_params(g: &mut Graph, bind: &mut Binder, ids: &HpIds, ybar: Var, mask: Var, what: &str) -> Result<(Var, Var)> {
    let (c, _, _) = g.value(ybar).chw();
    let expected = ids.channels(bind.store());
    if c != expected {
        return Err(config!("parameter network expects {expected} channels, mixture has {c}"));
    }
    let mut conv = |g: &mut Graph, k: usize, x: Var| -> Result<Var> {
        let w = bind.var(g, ids.weights[k]);
        let b = bind.var(g, ids.biases[k]);
        g.conv2d(x, w, Some(b), 1, 1)
    };
    let input = g.concat_channels(ybar, mask)?;
    let p = conv(g, 0, input)?;
    let mut h = p;
    for k in 1..4 {
        let z = conv(g, k, h)?;
        h = g.leaky_relu(z, SLOPE);
    }
    let z = conv(g, 4, h)?;
    let z = g.add(z, p)?;
    h = g.leaky_relu(z, SLOPE);
    let out = conv(g, 5, h)?;
    let delta = g.slice_channels(out, 0, c)?;
    let log_sigma = g.slice_channels(out, c, 2 * c)?;
    let mu = g.add(ybar, delta)?;
    // clamp before exp so huge outputs cannot overflow
    let ls = g.clamp(log_sigma, SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let sigma = g.exp(ls);
    let sigma = g.clamp(sigma, SIGMA_MIN, SIGMA_MAX);
    if !g.value(mu).all_finite() || !g.value(sigma).all_finite() {
        return Err(numeric!("parameter network produced a non-finite value for {what}"));
    }
    Ok((mu, sigma))
}

/// Inference-only evaluation on a plain mixture state.
pub fn predict_tensors(store: &ParamStore, ids: &HpIds, state: &MixtureState, what: &str) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let mut bind = Binder::new(store, false);
    let ybar = g.constant(state.ybar.clone());
    let mask = g.constant(state.mask.clone());
    let (mu, sigma) = predict_params(&mut g, &mut bind, ids, ybar, mask, what)?;
    Ok((g.value(mu).clone(), g.value(sigma).clone()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn net(c: usize, nf: usize) -> (ParamStore, HpIds) {
        let mut store = ParamStore::new();
        let ids = init_params(&mut store, c, nf, &mut ChaCha8Rng::seed_from_u64(5));
        (store, ids)
    }

    fn state(c: usize, seed: u64) -> MixtureState {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let ybar = Tensor::uniform(&[c, 6, 5], -20.0, 20.0, &mut r).map(f32::round);
        let mask = Tensor::uniform(&[c, 6, 5], 0.0, 1.0, &mut r).map(|v| (v > 0.5) as u8 as f32);
        MixtureState { ybar, mask }
    }

    #[test]
    fn fresh_network_is_identity_with_unit_scale() {
        let (store, ids) = net(3, 8);
        let s = state(3, 1);
        let (mu, sigma) = predict_tensors(&store, &ids, &s, "test").unwrap();
        assert_eq!(mu, s.ybar);
        assert!(sigma.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let (mut store, ids) = net(3, 8);
        let last = ids.weights[5];
        let t = Tensor::uniform(store.get(last).shape(), -0.3, 0.3, &mut ChaCha8Rng::seed_from_u64(9));
        *store.get_mut(last) = t;
        let s = state(3, 2);
        let a = predict_tensors(&store, &ids, &s, "a").unwrap();
        let b = predict_tensors(&store, &ids, &s.clone(), "b").unwrap();
        assert_eq!(a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn sigma_stays_in_range_for_extreme_weights() {
        let (mut store, ids) = net(2, 4);
        for (scale, seed) in [(50.0, 1), (-50.0, 2)] {
            for id in ids.all() {
                let t = Tensor::uniform(store.get(id).shape(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + id.index() as u64));
                *store.get_mut(id) = t.map(|v| v * scale);
            }
            let (_, sigma) = predict_tensors(&store, &ids, &state(2, 3), "x").unwrap();
            assert!(sigma.data().iter().all(|&v| (SIGMA_MIN..=SIGMA_MAX).contains(&v)));
        }
    }

    #[test]
    fn non_finite_output_names_the_unit() {
        let (mut store, ids) = net(2, 4);
        store.get_mut(ids.biases[5]).data_mut()[0] = f32::NAN;
        let err = predict_tensors(&store, &ids, &state(2, 4), "scale 1 subgroup 2").unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("scale 1 subgroup 2")), "{err}");
    }

    #[test]
    fn channel_mismatch() {
        let (store, ids) = net(2, 4);
        assert!(matches!(predict_tensors(&store, &ids, &state(3, 1), "u"), Err(Error::Config(_))));
    }
}
