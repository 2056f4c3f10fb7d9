//! Pooling plus comparison head: layer stacks of a pair in, 34 probabilities out.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::astp::{AstpCache, AstpConfig, AstpParams, Mode};
use crate::dataset::PairExample;
use crate::diffnet::{probability, DiffNetCache, DiffNetConfig, DiffNetParams, Variant};
use crate::error::{Error, Result};
use crate::nn::{Module, TensorView, TensorViewMut};

#[derive(Debug, Clone, PartialEq)]
pub struct VtadModel {
    pub astp: AstpParams,
    pub diffnet: DiffNetParams,
}

/// Layer stacks keyed by utterance id, already widened to `f64`.
pub type StackCache = HashMap<String, Array2<f64>>;

/// Train-mode intermediates for one batch.
pub struct BatchCache {
    astp: Vec<(AstpCache, AstpCache)>,
    diffnet: DiffNetCache,
}

impl VtadModel {
    pub fn init(dim: usize, heads: usize, variant: Variant, seed: u64) -> Result<Self> {
        let astp = AstpParams::init(AstpConfig::with_heads(dim, heads), seed)?;
        let diffnet = DiffNetParams::init(DiffNetConfig::new(variant, 2 * astp.config.output_dim()), seed)?;
        Self::from_parts(astp, diffnet)
    }

    pub fn from_parts(astp: AstpParams, diffnet: DiffNetParams) -> Result<Self> {
        if diffnet.config.input_dim != 2 * astp.config.output_dim() {
            return Err(Error::contract(format!(
                "diff-net input {} does not match pooled pair width {}",
                diffnet.config.input_dim,
                2 * astp.config.output_dim()
            )));
        }
        Ok(Self { astp, diffnet })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            astp: self.astp.zeros_like(),
            diffnet: self.diffnet.zeros_like(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.diffnet.config.outputs
    }

    fn stack<'a>(stacks: &'a StackCache, id: &str) -> Result<ArrayView2<'a, f64>> {
        stacks
            .get(id)
            .map(|a| a.view())
            .ok_or_else(|| Error::input(format!("no layer stack for utterance '{id}'")))
    }

    /// Eval-mode `e_A | e_B` rows for a batch.
    pub fn pair_embeddings(&self, pairs: &[&PairExample], stacks: &StackCache) -> Result<Array2<f64>> {
        let w = self.astp.config.output_dim();
        let mut x = Array2::zeros((pairs.len(), 2 * w));
        for (i, p) in pairs.iter().enumerate() {
            let a = self.astp.forward(Self::stack(stacks, &p.utt_a)?)?;
            let b = self.astp.forward(Self::stack(stacks, &p.utt_b)?)?;
            x.slice_mut(s![i, ..w]).assign(&a.0);
            x.slice_mut(s![i, w..]).assign(&b.0);
        }
        Ok(x)
    }

    /// Eval-mode probabilities, shape `(pairs, 34)`.
    pub fn predict(&self, pairs: &[&PairExample], stacks: &StackCache) -> Result<Array2<f64>> {
        self.diffnet.forward_eval(&self.pair_embeddings(pairs, stacks)?)
    }

    /// Eval-mode probabilities for one ordered pair of stacks.
    pub fn predict_stacks(&self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let w = self.astp.config.output_dim();
        let mut x = Array2::zeros((1, 2 * w));
        x.slice_mut(s![0, ..w]).assign(&self.astp.forward(a)?.0);
        x.slice_mut(s![0, w..]).assign(&self.astp.forward(b)?.0);
        Ok(self.diffnet.forward_eval(&x)?.row(0).to_owned())
    }

    /// Train-mode forward. Returns logits.
    pub fn forward_train(
        &self,
        pairs: &[&PairExample],
        stacks: &StackCache,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, BatchCache)> {
        let w = self.astp.config.output_dim();
        let mut x = Array2::zeros((pairs.len(), 2 * w));
        let mut astp = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let (a, ca) = self
                .astp
                .forward_mode(Self::stack(stacks, &p.utt_a)?, Mode::Train, rng)?;
            let (b, cb) = self
                .astp
                .forward_mode(Self::stack(stacks, &p.utt_b)?, Mode::Train, rng)?;
            x.slice_mut(s![i, ..w]).assign(&a.0);
            x.slice_mut(s![i, w..]).assign(&b.0);
            astp.push((ca, cb));
        }
        let (logits, diffnet) = self.diffnet.forward_train(&x, rng)?;
        Ok((logits, BatchCache { astp, diffnet }))
    }

    /// Backpropagate `dL/dlogits` into `grad`. Pooling gradients are skipped
    /// when `through_astp` is false.
    pub fn backward(&self, cache: &BatchCache, g_logits: &Array2<f64>, grad: &mut VtadModel, through_astp: bool) {
        let gx = self.diffnet.backward(&cache.diffnet, g_logits, &mut grad.diffnet);
        if !through_astp {
            return;
        }
        let w = self.astp.config.output_dim();
        for (i, (ca, cb)) in cache.astp.iter().enumerate() {
            self.astp.backward(ca, &gx.slice(s![i, ..w]).to_owned(), &mut grad.astp);
            self.astp.backward(cb, &gx.slice(s![i, w..]).to_owned(), &mut grad.astp);
        }
    }

    pub fn update_running_stats(&mut self, cache: &BatchCache) {
        self.diffnet.update_running_stats(&cache.diffnet);
    }
}

/// Eval-mode probabilities from logits.
pub fn probabilities(logits: &Array2<f64>) -> Array2<f64> {
    logits.mapv(probability)
}

impl Module for VtadModel {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = self.astp.tensors();
        v.extend(self.diffnet.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut v = self.astp.tensors_mut();
        v.extend(self.diffnet.tensors_mut());
        v
    }

    fn buffers(&self) -> Vec<TensorView<'_>> {
        self.diffnet.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        self.diffnet.buffers_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gender;
    use crate::seed::rng_for;

    fn stacks() -> StackCache {
        let mut m = StackCache::new();
        m.insert(
            "a".into(),
            Array2::from_shape_fn((3, 8), |(l, c)| (l * 8 + c) as f64 * 0.1),
        );
        m.insert(
            "b".into(),
            Array2::from_shape_fn((3, 8), |(l, c)| ((l + c) % 5) as f64 - 2.0),
        );
        m
    }

    #[test]
    fn predict_shapes_and_determinism() {
        let m = VtadModel::init(8, 2, Variant::Ffn, 42).unwrap();
        let p = PairExample::new("a".into(), "b".into(), Gender::Male, 0, 1).unwrap();
        let y1 = m.predict(&[&p, &p], &stacks()).unwrap();
        assert_eq!(y1.dim(), (2, 34));
        assert_eq!(y1.row(0), y1.row(1));
        assert_eq!(y1, m.predict(&[&p, &p], &stacks()).unwrap());
        let single = m.predict_stacks(stacks()["a"].view(), stacks()["b"].view()).unwrap();
        assert_eq!(single, y1.row(0));
    }

    #[test]
    fn missing_stack_is_an_input_error() {
        let m = VtadModel::init(8, 2, Variant::SeResFfn, 1).unwrap();
        let p = PairExample::new("a".into(), "zz".into(), Gender::Male, 0, 1).unwrap();
        assert!(matches!(m.predict(&[&p], &stacks()), Err(Error::Input(_))));
        let mut rng = rng_for(0, "x");
        assert!(m.forward_train(&[&p, &p], &stacks(), &mut rng).is_err());
    }
}
