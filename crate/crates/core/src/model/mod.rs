//! A complete codec model: transforms plus probability model, with its
//! configuration stored alongside the weights.

pub mod weights;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binder, Graph, ParamStore};
use crate::error::{config, format_err, usage, Result};
use crate::msp::{MspProfile, ProbabilityModel};
use crate::tensor::Tensor;
use crate::transforms::{self, TransformIds};

/// Distortion weights of the seven-model rate ladder.
pub const LAMBDA_GRID: [f64; 7] = [0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.048, 0.093];

/// Position of `lambda` in [`LAMBDA_GRID`], or 255.
pub fn lambda_index(lambda: f64) -> u8 {
    LAMBDA_GRID.iter().position(|&l| ((l - lambda) / l).abs() < 1e-6).map_or(255, |i| i as u8)
}

const META: &str = "meta.config";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub transform_filters: usize,
    pub profile: MspProfile,
    pub lambda: f64,
}

impl ModelConfig {
    pub fn new(profile: MspProfile, channels: usize, transform_filters: usize, lambda: f64) -> Result<Self> {
        if channels <= profile.seeds() {
            return Err(config!("{channels} latent channels cannot hold {} seed channels plus a tail", profile.seeds()));
        }
        if transform_filters == 0 {
            return Err(config!("transform filter count must be positive"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(config!("lambda must be positive, got {lambda}"));
        }
        // stored as f32 in the weights file
        Ok(Self { channels, transform_filters, profile, lambda: lambda as f32 as f64 })
    }

    fn to_tensor(self) -> Tensor {
        let p = self.profile;
        let v = [
            self.channels,
            self.transform_filters,
            p.scales(),
            p.block().0,
            p.block().1,
            p.seeds(),
            p.filters(),
        ];
        let mut data: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        data.push(self.lambda as f32);
        Tensor::new(&[8], data).unwrap()
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 8 {
            return Err(format_err!("{META} must hold 8 values, has {}", d.len()));
        }
        let int = |x: f32| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && x < 1e7 {
                Ok(x as usize)
            } else {
                Err(format_err!("{META} holds a non-integer field {x}"))
            }
        };
        let profile = MspProfile::new(int(d[2])?, int(d[3])?, int(d[4])?, int(d[5])?, int(d[6])?)?;
        Self::new(profile, int(d[0])?, int(d[1])?, d[7] as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub transforms: TransformIds,
    pub prob: ProbabilityModel,
}

impl Model {
    /// Freshly initialised weights, reproducible per seed.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let transforms = transforms::init_params(&mut store, config.channels, config.transform_filters, &mut rng);
        let prob = ProbabilityModel::init(&mut store, config.profile, config.channels, &mut rng);
        Self { config, store, transforms, prob }
    }

    fn from_store(store: ParamStore, config: ModelConfig) -> Result<Self> {
        let reference = Self::new(config, 0);
        for (_, name, t) in reference.store.iter() {
            match store.by_name(name) {
                Some(have) if have.shape() == t.shape() => {}
                Some(have) => return Err(config!("{name} has shape {:?}, expected {:?}", have.shape(), t.shape())),
                None => return Err(config!("weights lack {name}")),
            }
        }
        if store.len() != reference.store.len() {
            return Err(config!("weights hold {} tensors, expected {}", store.len(), reference.store.len()));
        }
        // re-insert in canonical order so ids match a fresh model
        let mut ordered = ParamStore::new();
        for (_, name, _) in reference.store.iter() {
            ordered.insert(name, store.by_name(name).unwrap().clone());
        }
        Ok(Self {
            transforms: TransformIds::lookup(&ordered)?,
            prob: ProbabilityModel::lookup(&ordered, config.profile)?,
            config,
            store: ordered,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = self.store.clone();
        s.insert(META, self.config.to_tensor());
        weights::serialize(&s)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parsed = weights::parse(bytes)?;
        let meta = parsed.by_name(META).ok_or_else(|| format_err!("weights file lacks {META}"))?;
        let config = ModelConfig::from_tensor(meta)?;
        let mut store = ParamStore::new();
        for (_, name, t) in parsed.iter().filter(|(_, n, _)| *n != META) {
            store.insert(name, t.clone());
        }
        Self::from_store(store, config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// FNV-1a-64 of the serialized weights file.
    pub fn digest(&self) -> u64 {
        weights::fnv1a64(&self.to_bytes())
    }

    pub fn profile(&self) -> MspProfile {
        self.config.profile
    }

    /// Continuous latent of a padded image.
    pub fn analyze(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w) = x.chw();
        let m = self.profile().pad_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(usage!("image {h}x{w} is not padded to a multiple of {m}"));
        }
        let mut g = Graph::new();
        let mut bind = Binder::new(&self.store, false);
        let xv = g.constant(x.clone());
        let y = transforms::analyze(&mut g, &mut bind, &self.transforms, xv)?;
        Ok(g.value(y).clone())
    }

    /// Clamped reconstruction of a (padded) latent.
    pub fn synthesize(&self, y: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut bind = Binder::new(&self.store, false);
        let yv = g.constant(y.clone());
        let x = transforms::synthesize(&mut g, &mut bind, &self.transforms, yv)?;
        Ok(g.value(x).clone())
    }
}
