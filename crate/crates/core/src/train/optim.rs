use crate::nn::Module;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay. Moments are stored flat, in the
/// module's canonical tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new<M: Module>(params: &M, weight_decay: f64) -> Self {
        let n = params.num_parameters();
        Self {
            weight_decay,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One update at learning rate `lr`. Tensors for which `trainable(name)`
    /// is false are left untouched, decay included.
    pub fn step<M: Module>(&mut self, params: &mut M, grads: &M, lr: f64, trainable: impl Fn(&str) -> bool) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        let shrink = 1.0 - lr * self.weight_decay;
        let grads = grads.tensors();
        let mut offset = 0;
        for (p, g) in params.tensors_mut().into_iter().zip(&grads) {
            debug_assert_eq!(p.name, g.name);
            let n = p.data.len();
            if trainable(&p.name) {
                let m = &mut self.m[offset..offset + n];
                let v = &mut self.v[offset..offset + n];
                for i in 0..n {
                    let gi = g.data[i];
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                    let update = (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    p.data[i] = p.data[i] * shrink - lr * update;
                }
            }
            offset += n;
        }
    }
}
