//! Helpers shared by unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Keeps samples at least `gap` away from `kinks` so a finite-difference
/// step never straddles a non-differentiable point.
pub fn away_from(t: Tensor, kinks: &[f32], gap: f32) -> Tensor {
    t.map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < gap {
                v = k + gap.copysign(v - k + f32::EPSILON);
            }
        }
        v
    })
}

/// Central differences (step 1e-3, `f64` loss) against `backward` for every
/// coordinate of every input. Returns the worst error of each input relative
/// to that input's largest gradient entry.
pub fn fd_check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.scalar(l)
    };
    let h = 1e-3f32;
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let mut max_diff = 0.0f64;
        let mut scale = 1e-6f64;
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let step = (plus[k].data()[i] - minus[k].data()[i]) as f64;
            let numeric = (eval(&plus) - eval(&minus)) / step;
            let a = analytic.data()[i] as f64;
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        worst = worst.max(max_diff / scale);
    }
    worst
}

