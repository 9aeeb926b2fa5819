use super::params::{GradStore, ParamStore};
use crate::error::{numeric, usage, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// treated as having a zero gradient. A non-finite gradient aborts the
    /// step before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(usage!("adam: {} params, {} grads, {} moments", params.len(), grads.len(), self.first.len()));
        }
        for (id, name, t) in params.iter() {
            if let Some(g) = grads.get(id) {
                if g.shape() != t.shape() {
                    return Err(usage!("adam: gradient shape {:?} for {name} {:?}", g.shape(), t.shape()));
                }
                if !g.all_finite() {
                    return Err(numeric!("adam: non-finite gradient for {name}"));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let gd = gv as f64;
                let m1 = self.beta1 * *mv as f64 + (1.0 - self.beta1) * gd;
                let v1 = self.beta2 * *vv as f64 + (1.0 - self.beta2) * gd * gd;
                *mv = m1 as f32;
                *vv = v1 as f32;
                let update = lr * (m1 / bc1) / ((v1 / bc2).sqrt() + self.eps);
                *pv = (*pv as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
