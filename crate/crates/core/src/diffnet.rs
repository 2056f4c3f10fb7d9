//! Comparison heads mapping a pair embedding `e_A | e_B` to per-attribute
//! probabilities that the second utterance is stronger.
//!
//! * FFN: blocks of `FC -> BN -> ReLU -> Dropout` at widths `[512, 256, 128, 64]`,
//!   then `FC -> 34` and a sigmoid.
//! * SE-ResFFN: squeeze-and-excitation residual blocks at widths
//!   `[1024, 1024, 512, 256]`, then `BN -> FC 192 -> ReLU -> FC 64 -> FC 34` and
//!   a sigmoid.
//!
//! A residual block computes
//! `relu(se(bn2(fc2(relu(bn1(fc1 x))))) + shortcut(x))`, with an identity
//! shortcut when widths match and `bn(fc(x))` otherwise. The SE gate is
//! `x * sigmoid(fc_b(relu(fc_a x)))` with bottleneck width `d / r`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::RngCore;

use crate::dataset::NUM_ATTRIBUTES;
use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, relu, relu_backward, sigmoid, BatchNorm, BatchNormCache, Linear, Module, TensorView, TensorViewMut,
};
use crate::seed::rng_for;

pub const FFN_WIDTHS: [usize; 4] = [512, 256, 128, 64];
pub const SE_WIDTHS: [usize; 4] = [1024, 1024, 512, 256];
pub const SE_HEAD_WIDTHS: [usize; 2] = [192, 64];
pub const FFN_DROPOUT: f64 = 0.3;
pub const SE_REDUCTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ffn,
    SeResFfn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ffn => "ffn",
            Variant::SeResFfn => "se-resffn",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ffn" => Ok(Variant::Ffn),
            "se-resffn" | "se_resffn" | "seresffn" => Ok(Variant::SeResFfn),
            other => Err(Error::config(format!("unknown diff-net variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffNetConfig {
    pub variant: Variant,
    pub input_dim: usize,
    /// Block widths.
    pub widths: Vec<usize>,
    /// SE-ResFFN only: FC widths after the final BN.
    pub head_widths: Vec<usize>,
    pub outputs: usize,
    /// FFN block dropout rate.
    pub dropout: f64,
    /// SE bottleneck reduction ratio.
    pub se_reduction: usize,
}

impl DiffNetConfig {
    /// Full-size schedule for `variant`.
    pub fn new(variant: Variant, input_dim: usize) -> Self {
        match variant {
            Variant::Ffn => Self {
                variant,
                input_dim,
                widths: FFN_WIDTHS.to_vec(),
                head_widths: Vec::new(),
                outputs: NUM_ATTRIBUTES,
                dropout: FFN_DROPOUT,
                se_reduction: SE_REDUCTION,
            },
            Variant::SeResFfn => Self {
                variant,
                input_dim,
                widths: SE_WIDTHS.to_vec(),
                head_widths: SE_HEAD_WIDTHS.to_vec(),
                outputs: NUM_ATTRIBUTES,
                dropout: 0.0,
                se_reduction: SE_REDUCTION,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.outputs == 0 {
            return Err(Error::config("input and output widths must be >= 1"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.head_widths.contains(&0) {
            return Err(Error::config("block widths must be non-empty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.variant == Variant::SeResFfn {
            let r = self.se_reduction;
            if r == 0 {
                return Err(Error::config("SE reduction ratio must be >= 1"));
            }
            if let Some(w) = self.widths.iter().find(|&&w| w % r != 0) {
                return Err(Error::config(format!("SE reduction {r} does not divide width {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnBlock {
    pub fc: Linear,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeGate {
    pub squeeze: Linear,
    pub excite: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub fc: Linear,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeResBlock {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: BatchNorm,
    pub se: SeGate,
    /// `None` means identity shortcut.
    pub shortcut: Option<Projection>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Body {
    Ffn(Vec<FfnBlock>),
    SeRes {
        blocks: Vec<SeResBlock>,
        norm: BatchNorm,
        head: Vec<Linear>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffNetParams {
    pub config: DiffNetConfig,
    pub body: Body,
    pub output: Linear,
}

impl SeGate {
    fn new(d: usize, r: usize, linear: &mut dyn FnMut(usize, usize) -> Linear) -> Self {
        let hidden = (d / r).max(1);
        Self {
            squeeze: linear(d, hidden),
            excite: linear(hidden, d),
        }
    }

    /// `x * sigmoid(excite(relu(squeeze x)))`
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.run(x).0
    }

    fn run(&self, x: &Array2<f64>) -> (Array2<f64>, SeCache) {
        let hidden = relu(&self.squeeze.forward(x));
        let gate = self.excite.forward(&hidden).mapv(sigmoid);
        (
            x * &gate,
            SeCache {
                input: x.clone(),
                hidden,
                gate,
            },
        )
    }

    fn backward(&self, c: &SeCache, gy: &Array2<f64>, grad: &mut SeGate) -> Array2<f64> {
        let mut gx = gy * &c.gate;
        let g_gate = gy * &c.input;
        let g_pre = Zip::from(&g_gate).and(&c.gate).map_collect(|&g, &s| g * s * (1.0 - s));
        let g_hidden = self.excite.backward(&c.hidden, &g_pre, &mut grad.excite);
        let g_sq = relu_backward(&c.hidden, &g_hidden);
        gx += &self.squeeze.backward(&c.input, &g_sq, &mut grad.squeeze);
        gx
    }
}

fn norm(n: usize, zero: bool) -> BatchNorm {
    if zero {
        BatchNorm::zeros(n)
    } else {
        BatchNorm::new(n)
    }
}

impl DiffNetParams {
    /// Deterministic initialisation: every `Linear` draws `U(±1/sqrt(fan_in))`
    /// weights with zero bias in construction order from the stream
    /// `(seed, "diffnet")`; BN starts at scale 1, shift 0, running mean 0, var 1.
    pub fn init(config: DiffNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "diffnet");
        Ok(Self::build(config, false, &mut |i, o| Linear::init(i, o, &mut rng)))
    }

    /// Same structure with every tensor zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self::build(self.config.clone(), true, &mut Linear::zeros)
    }

    fn build(config: DiffNetConfig, zero: bool, linear: &mut dyn FnMut(usize, usize) -> Linear) -> Self {
        let mut prev = config.input_dim;
        let body = match config.variant {
            Variant::Ffn => Body::Ffn(
                config
                    .widths
                    .iter()
                    .map(|&w| {
                        let block = FfnBlock {
                            fc: linear(prev, w),
                            bn: norm(w, zero),
                        };
                        prev = w;
                        block
                    })
                    .collect(),
            ),
            Variant::SeResFfn => {
                let blocks = config
                    .widths
                    .iter()
                    .map(|&w| {
                        let fc1 = linear(prev, w);
                        let fc2 = linear(w, w);
                        let se = SeGate::new(w, config.se_reduction, linear);
                        let shortcut = (prev != w).then(|| Projection {
                            fc: linear(prev, w),
                            bn: norm(w, zero),
                        });
                        prev = w;
                        SeResBlock {
                            fc1,
                            bn1: norm(w, zero),
                            fc2,
                            bn2: norm(w, zero),
                            se,
                            shortcut,
                        }
                    })
                    .collect();
                let norm_out = norm(prev, zero);
                let head = config
                    .head_widths
                    .iter()
                    .map(|&w| {
                        let l = linear(prev, w);
                        prev = w;
                        l
                    })
                    .collect();
                Body::SeRes {
                    blocks,
                    norm: norm_out,
                    head,
                }
            }
        };
        let output = linear(prev, config.outputs);
        Self { config, body, output }
    }

    /// `(name, shape)` of every trainable tensor, in canonical order.
    pub fn shape_inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors().into_iter().map(|t| (t.name, t.shape)).collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim || x.nrows() == 0 {
            return Err(Error::contract(format!(
                "diff-net expects (batch, {}) input, got {:?}",
                self.config.input_dim,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Eval-mode probabilities, shape `(batch, outputs)`. Uses running BN statistics.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.run(x, None).0.mapv(probability))
    }

    /// Train-mode forward: batch statistics and active dropout drawn from `rng`.
    /// Returns logits and the cache for [`backward`](Self::backward).
    pub fn forward_train(&self, x: &Array2<f64>, rng: &mut dyn RngCore) -> Result<(Array2<f64>, DiffNetCache)> {
        self.check_input(x)?;
        if x.nrows() < 2 {
            return Err(Error::input(
                "train-mode forward needs a batch of at least 2 for batch statistics",
            ));
        }
        let (logits, cache) = self.run(x, Some(rng));
        Ok((logits, cache.expect("train mode records a cache")))
    }

    fn run(&self, x: &Array2<f64>, mut rng: Option<&mut dyn RngCore>) -> (Array2<f64>, Option<DiffNetCache>) {
        let train = rng.is_some();
        let bn = |bn: &BatchNorm, x: &Array2<f64>| -> (Array2<f64>, Option<BatchNormCache>) {
            if train {
                let (y, c) = bn.forward_train(x);
                (y, Some(c))
            } else {
                (bn.forward_eval(x), None)
            }
        };
        let mut h = x.clone();
        let body = match &self.body {
            Body::Ffn(blocks) => {
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let input = h;
                    let (normed, bn_cache) = bn(&b.bn, &b.fc.forward(&input));
                    let act = relu(&normed);
                    let mask = match rng.as_deref_mut() {
                        Some(r) if self.config.dropout > 0.0 => {
                            Some(dropout_mask(act.raw_dim(), self.config.dropout, r))
                        }
                        _ => None,
                    };
                    h = match &mask {
                        Some(m) => &act * m,
                        None => act.clone(),
                    };
                    caches.push(FfnCache {
                        input,
                        bn: bn_cache,
                        act,
                        mask,
                    });
                }
                BodyCache::Ffn(caches)
            }
            Body::SeRes { blocks, norm, head } => {
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let input = h;
                    let (n1, bn1) = bn(&b.bn1, &b.fc1.forward(&input));
                    let act1 = relu(&n1);
                    let (n2, bn2) = bn(&b.bn2, &b.fc2.forward(&act1));
                    let (main, se) = b.se.run(&n2);
                    let (short, short_bn) = match &b.shortcut {
                        Some(p) => {
                            let (s, c) = bn(&p.bn, &p.fc.forward(&input));
                            (s, c)
                        }
                        None => (input.clone(), None),
                    };
                    let out = relu(&(main + short));
                    h = out.clone();
                    caches.push(SeResCache {
                        input,
                        bn1,
                        act1,
                        bn2,
                        se,
                        short_bn,
                        out,
                    });
                }
                let (normed, norm_cache) = bn(norm, &h);
                h = normed;
                let mut head_inputs = Vec::with_capacity(head.len());
                for (i, l) in head.iter().enumerate() {
                    head_inputs.push(h.clone());
                    h = l.forward(&h);
                    if i + 1 < head.len() {
                        h = relu(&h);
                    }
                }
                BodyCache::SeRes {
                    blocks: caches,
                    norm: norm_cache,
                    head_inputs,
                }
            }
        };
        let logits = self.output.forward(&h);
        let cache = train.then(|| DiffNetCache { body, output_input: h });
        (logits, cache)
    }

    /// Backpropagate `dL/dlogits`; parameter gradients accumulate into `grad`.
    /// Returns `dL/dx`.
    pub fn backward(&self, cache: &DiffNetCache, g_logits: &Array2<f64>, grad: &mut DiffNetParams) -> Array2<f64> {
        let mut g = self.output.backward(&cache.output_input, g_logits, &mut grad.output);
        match (&self.body, &cache.body, &mut grad.body) {
            (Body::Ffn(blocks), BodyCache::Ffn(caches), Body::Ffn(gblocks)) => {
                for ((b, c), gb) in blocks.iter().zip(caches).zip(gblocks).rev() {
                    if let Some(m) = &c.mask {
                        g *= m;
                    }
                    let g_norm = relu_backward(&c.act, &g);
                    let g_fc = b.bn.backward(c.bn.as_ref().expect("train cache"), &g_norm, &mut gb.bn);
                    g = b.fc.backward(&c.input, &g_fc, &mut gb.fc);
                }
            }
            (
                Body::SeRes { blocks, norm, head },
                BodyCache::SeRes {
                    blocks: caches,
                    norm: norm_cache,
                    head_inputs,
                },
                Body::SeRes {
                    blocks: gblocks,
                    norm: gnorm,
                    head: ghead,
                },
            ) => {
                for i in (0..head.len()).rev() {
                    if i + 1 < head.len() {
                        // ReLU sits between head layer i and i + 1; its output is head_inputs[i + 1]
                        g = relu_backward(&head_inputs[i + 1], &g);
                    }
                    g = head[i].backward(&head_inputs[i], &g, &mut ghead[i]);
                }
                g = norm.backward(norm_cache.as_ref().expect("train cache"), &g, gnorm);
                for ((b, c), gb) in blocks.iter().zip(caches).zip(gblocks.iter_mut()).rev() {
                    let g_sum = relu_backward(&c.out, &g);
                    let g_n2 = b.se.backward(&c.se, &g_sum, &mut gb.se);
                    let g_h2 = b.bn2.backward(c.bn2.as_ref().expect("train cache"), &g_n2, &mut gb.bn2);
                    let g_act1 = b.fc2.backward(&c.act1, &g_h2, &mut gb.fc2);
                    let g_n1 = relu_backward(&c.act1, &g_act1);
                    let g_h1 = b.bn1.backward(c.bn1.as_ref().expect("train cache"), &g_n1, &mut gb.bn1);
                    let mut gx = b.fc1.backward(&c.input, &g_h1, &mut gb.fc1);
                    match (&b.shortcut, gb.shortcut.as_mut()) {
                        (Some(p), Some(gp)) => {
                            let g_fc =
                                p.bn.backward(c.short_bn.as_ref().expect("train cache"), &g_sum, &mut gp.bn);
                            gx += &p.fc.backward(&c.input, &g_fc, &mut gp.fc);
                        }
                        _ => gx += &g_sum,
                    }
                    g = gx;
                }
            }
            _ => unreachable!("cache and gradient built from the same parameters"),
        }
        g
    }

    /// Fold a train-mode batch's statistics into the BN running estimates.
    pub fn update_running_stats(&mut self, cache: &DiffNetCache) {
        let upd = |bn: &mut BatchNorm, c: &Option<BatchNormCache>| {
            if let Some(c) = c {
                bn.update_running(c);
            }
        };
        match (&mut self.body, &cache.body) {
            (Body::Ffn(blocks), BodyCache::Ffn(caches)) => {
                for (b, c) in blocks.iter_mut().zip(caches) {
                    upd(&mut b.bn, &c.bn);
                }
            }
            (
                Body::SeRes { blocks, norm, .. },
                BodyCache::SeRes {
                    blocks: caches,
                    norm: nc,
                    ..
                },
            ) => {
                for (b, c) in blocks.iter_mut().zip(caches) {
                    upd(&mut b.bn1, &c.bn1);
                    upd(&mut b.bn2, &c.bn2);
                    if let Some(p) = b.shortcut.as_mut() {
                        upd(&mut p.bn, &c.short_bn);
                    }
                }
                upd(norm, nc);
            }
            _ => unreachable!("cache built from the same parameters"),
        }
    }
}

/// Sigmoid, kept strictly inside `(0, 1)` even for saturated logits.
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone)]
struct FfnCache {
    input: Array2<f64>,
    bn: Option<BatchNormCache>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct SeCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    gate: Array2<f64>,
}

#[derive(Debug, Clone)]
struct SeResCache {
    input: Array2<f64>,
    bn1: Option<BatchNormCache>,
    act1: Array2<f64>,
    bn2: Option<BatchNormCache>,
    se: SeCache,
    short_bn: Option<BatchNormCache>,
    out: Array2<f64>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum BodyCache {
    Ffn(Vec<FfnCache>),
    SeRes {
        blocks: Vec<SeResCache>,
        norm: Option<BatchNormCache>,
        head_inputs: Vec<Array2<f64>>,
    },
}

/// Train-mode intermediates for one batch.
#[derive(Debug, Clone)]
pub struct DiffNetCache {
    body: BodyCache,
    output_input: Array2<f64>,
}

impl Module for DiffNetParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        match &self.body {
            Body::Ffn(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.fc.push_views(&format!("ffn.{i}.fc"), &mut out);
                    b.bn.push_views(&format!("ffn.{i}.bn"), &mut out);
                }
            }
            Body::SeRes { blocks, norm, head } => {
                for (i, b) in blocks.iter().enumerate() {
                    let p = format!("se.{i}");
                    b.fc1.push_views(&format!("{p}.fc1"), &mut out);
                    b.bn1.push_views(&format!("{p}.bn1"), &mut out);
                    b.fc2.push_views(&format!("{p}.fc2"), &mut out);
                    b.bn2.push_views(&format!("{p}.bn2"), &mut out);
                    b.se.squeeze.push_views(&format!("{p}.se.squeeze"), &mut out);
                    b.se.excite.push_views(&format!("{p}.se.excite"), &mut out);
                    if let Some(s) = &b.shortcut {
                        s.fc.push_views(&format!("{p}.shortcut.fc"), &mut out);
                        s.bn.push_views(&format!("{p}.shortcut.bn"), &mut out);
                    }
                }
                norm.push_views("se.norm", &mut out);
                for (i, l) in head.iter().enumerate() {
                    l.push_views(&format!("se.head.{i}"), &mut out);
                }
            }
        }
        self.output.push_views("output", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        match &mut self.body {
            Body::Ffn(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.fc.push_views_mut(&format!("ffn.{i}.fc"), &mut out);
                    b.bn.push_views_mut(&format!("ffn.{i}.bn"), &mut out);
                }
            }
            Body::SeRes { blocks, norm, head } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    let p = format!("se.{i}");
                    b.fc1.push_views_mut(&format!("{p}.fc1"), &mut out);
                    b.bn1.push_views_mut(&format!("{p}.bn1"), &mut out);
                    b.fc2.push_views_mut(&format!("{p}.fc2"), &mut out);
                    b.bn2.push_views_mut(&format!("{p}.bn2"), &mut out);
                    b.se.squeeze.push_views_mut(&format!("{p}.se.squeeze"), &mut out);
                    b.se.excite.push_views_mut(&format!("{p}.se.excite"), &mut out);
                    if let Some(s) = &mut b.shortcut {
                        s.fc.push_views_mut(&format!("{p}.shortcut.fc"), &mut out);
                        s.bn.push_views_mut(&format!("{p}.shortcut.bn"), &mut out);
                    }
                }
                norm.push_views_mut("se.norm", &mut out);
                for (i, l) in head.iter_mut().enumerate() {
                    l.push_views_mut(&format!("se.head.{i}"), &mut out);
                }
            }
        }
        self.output.push_views_mut("output", &mut out);
        out
    }

    fn buffers(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        match &self.body {
            Body::Ffn(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.bn.push_buffers(&format!("ffn.{i}.bn"), &mut out);
                }
            }
            Body::SeRes { blocks, norm, .. } => {
                for (i, b) in blocks.iter().enumerate() {
                    b.bn1.push_buffers(&format!("se.{i}.bn1"), &mut out);
                    b.bn2.push_buffers(&format!("se.{i}.bn2"), &mut out);
                    if let Some(s) = &b.shortcut {
                        s.bn.push_buffers(&format!("se.{i}.shortcut.bn"), &mut out);
                    }
                }
                norm.push_buffers("se.norm", &mut out);
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        match &mut self.body {
            Body::Ffn(blocks) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.bn.push_buffers_mut(&format!("ffn.{i}.bn"), &mut out);
                }
            }
            Body::SeRes { blocks, norm, .. } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.bn1.push_buffers_mut(&format!("se.{i}.bn1"), &mut out);
                    b.bn2.push_buffers_mut(&format!("se.{i}.bn2"), &mut out);
                    if let Some(s) = &mut b.shortcut {
                        s.bn.push_buffers_mut(&format!("se.{i}.shortcut.bn"), &mut out);
                    }
                }
                norm.push_buffers_mut("se.norm", &mut out);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn toy(variant: Variant) -> DiffNetConfig {
        DiffNetConfig {
            variant,
            input_dim: 8,
            widths: vec![4, 4, 2, 2],
            head_widths: if variant == Variant::SeResFfn {
                vec![3, 2]
            } else {
                vec![]
            },
            outputs: NUM_ATTRIBUTES,
            dropout: if variant == Variant::Ffn { 0.3 } else { 0.0 },
            se_reduction: 2,
        }
    }

    fn dims(p: &DiffNetParams) -> Vec<(String, Vec<usize>)> {
        p.shape_inventory()
            .into_iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .collect()
    }

    #[test]
    fn ffn_schedule() {
        let p = DiffNetParams::init(DiffNetConfig::new(Variant::Ffn, 4096), 42).unwrap();
        let w: Vec<Vec<usize>> = dims(&p).into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            w,
            vec![
                vec![512, 4096],
                vec![256, 512],
                vec![128, 256],
                vec![64, 128],
                vec![34, 64]
            ]
        );
    }

    #[test]
    fn se_schedule() {
        let p = DiffNetParams::init(DiffNetConfig::new(Variant::SeResFfn, 4096), 42).unwrap();
        let Body::SeRes { blocks, head, .. } = &p.body else {
            panic!()
        };
        let io: Vec<(usize, usize)> = blocks.iter().map(|b| (b.fc1.input_dim(), b.fc1.output_dim())).collect();
        assert_eq!(io, vec![(4096, 1024), (1024, 1024), (1024, 512), (512, 256)]);
        // projection shortcut exactly where widths change
        let proj: Vec<bool> = blocks.iter().map(|b| b.shortcut.is_some()).collect();
        assert_eq!(proj, vec![true, false, true, true]);
        let s = blocks[0].shortcut.as_ref().unwrap();
        assert_eq!(s.fc.weight.dim(), (1024, 4096));
        assert_eq!(blocks[0].se.squeeze.weight.dim(), (64, 1024));
        let head_io: Vec<(usize, usize)> = head.iter().map(|l| (l.input_dim(), l.output_dim())).collect();
        assert_eq!(head_io, vec![(256, 192), (192, 64)]);
        assert_eq!(p.output.weight.dim(), (34, 64));
    }

    #[test]
    fn init_is_deterministic_and_bn_starts_at_identity() {
        let cfg = toy(Variant::SeResFfn);
        let a = DiffNetParams::init(cfg.clone(), 42).unwrap();
        assert_eq!(a, DiffNetParams::init(cfg.clone(), 42).unwrap());
        assert_ne!(a, DiffNetParams::init(cfg, 7).unwrap());
        let Body::SeRes { blocks, .. } = &a.body else { panic!() };
        assert!(blocks[0].bn1.scale.iter().all(|&v| v == 1.0));
        assert!(blocks[0].bn1.running_var.iter().all(|&v| v == 1.0));
        assert_eq!(
            a.shape_inventory(),
            DiffNetParams::init(toy(Variant::SeResFfn), 1)
                .unwrap()
                .shape_inventory()
        );
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!("mlp".parse::<Variant>().is_err());
        let mut c = toy(Variant::SeResFfn);
        c.se_reduction = 3;
        assert!(matches!(DiffNetParams::init(c, 0), Err(Error::Config(_))));
        let mut c = toy(Variant::Ffn);
        c.input_dim = 0;
        assert!(DiffNetParams::init(c, 0).is_err());
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        for v in [Variant::Ffn, Variant::SeResFfn] {
            let mut p = DiffNetParams::init(toy(v), 3).unwrap();
            p.output.weight.fill(0.0);
            p.output.bias.fill(0.0);
            let x = Array2::from_shape_fn((3, 8), |(i, j)| (i * 8 + j) as f64 - 10.0);
            assert!(p.forward_eval(&x).unwrap().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut p = DiffNetParams::init(toy(Variant::Ffn), 3).unwrap();
        p.output.bias.fill(1e4);
        p.output.bias[0] = -1e4;
        let x = Array2::from_elem((1, 8), 1.0);
        let y = p.forward_eval(&x).unwrap();
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn batch_of_one_cannot_train() {
        let p = DiffNetParams::init(toy(Variant::Ffn), 0).unwrap();
        let mut rng = rng_for(0, "t");
        let x = Array2::zeros((1, 8));
        assert!(matches!(p.forward_train(&x, &mut rng), Err(Error::Input(_))));
        assert!(p.forward_eval(&x).is_ok());
        assert!(matches!(
            p.forward_eval(&Array2::zeros((2, 7))),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn se_gate_with_zero_excitation_halves_input() {
        let mut rng = rng_for(0, "se");
        let mut mk = |i, o| Linear::init(i, o, &mut rng);
        let mut g = SeGate::new(4, 2, &mut mk);
        g.excite.weight.fill(0.0);
        g.excite.bias.fill(0.0);
        let x = Array2::from_shape_vec((1, 4), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(g.forward(&x), &x * 0.5);
        let z = Array2::zeros((1, 4));
        let g = SeGate::new(4, 2, &mut mk);
        assert!(g.forward(&z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_gate_hand_set_case() {
        // d = 4, r = 2
        let g = SeGate {
            squeeze: Linear {
                weight: Array2::from_shape_vec((2, 4), vec![0.5, -1.0, 0.25, 0.0, 1.0, 1.0, -0.5, 2.0]).unwrap(),
                bias: Array1::from(vec![0.1, -0.2]),
            },
            excite: Linear {
                weight: Array2::from_shape_vec((4, 2), vec![1.0, 0.0, -1.0, 0.5, 0.3, 0.3, 0.0, -2.0]).unwrap(),
                bias: Array1::from(vec![0.0, 0.1, -0.1, 0.2]),
            },
        };
        let x = [1.0, 2.0, -1.0, 0.5];
        // straight-line oracle
        let h0 = (0.5 * 1.0 - 1.0 * 2.0 - 0.25 * 1.0 + 0.0 * 0.5 + 0.1f64).max(0.0);
        let h1 = (1.0 * 1.0 + 1.0 * 2.0 + 0.5 * 1.0 + 2.0 * 0.5 - 0.2f64).max(0.0);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gates = [
            sig(1.0 * h0 + 0.0 * h1 + 0.0),
            sig(-h0 + 0.5 * h1 + 0.1),
            sig(0.3 * h0 + 0.3 * h1 - 0.1),
            sig(0.0 * h0 - 2.0 * h1 + 0.2),
        ];
        let y = g.forward(&Array2::from_shape_vec((1, 4), x.to_vec()).unwrap());
        for c in 0..4 {
            assert!((y[[0, c]] - x[c] * gates[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_main_path_reduces_block_to_relu_of_input() {
        let mut p = DiffNetParams::init(toy(Variant::SeResFfn), 5).unwrap();
        let Body::SeRes { blocks, .. } = &mut p.body else {
            panic!()
        };
        let b = &mut blocks[1]; // 4 -> 4, identity shortcut
        assert!(b.shortcut.is_none());
        b.bn2.scale.fill(0.0);
        b.bn2.shift.fill(0.0);
        let x = Array2::from_shape_vec((2, 4), vec![1.0, -2.0, 0.5, -0.1, 3.0, 0.0, -1.0, 2.0]).unwrap();
        let n1 = b.bn1.forward_eval(&b.fc1.forward(&x));
        let n2 = b.bn2.forward_eval(&b.fc2.forward(&relu(&n1)));
        let out = relu(&(b.se.forward(&n2) + &x));
        assert_eq!(out, relu(&x));
    }
}
