//! Multi-head attentive statistics pooling across encoder layers.
//!
//! The `D` channels are split into `H` contiguous slices of width `d = D / H`.
//! For head `h` and layer row `x_l` (its slice):
//!
//! ```text
//! e_l   = v_h . tanh(W_h x_l + b_h) + k_h
//! alpha = softmax_l(e)
//! mu    = sum_l alpha_l x_l
//! sigma = sqrt(max(sum_l alpha_l (x_l - mu)^2, eps))
//! ```
//!
//! The embedding is `[mu_1 .. mu_H | sigma_1 .. sigma_H]`, length `2D`. In train
//! mode, dropout is applied to the tanh activations and to the pooled embedding.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dropout_mask, uniform_array, view, view_mut, Module, TensorView, TensorViewMut};
use crate::seed::rng_for;

pub const DEFAULT_HEADS: usize = 8;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstpConfig {
    pub dim: usize,
    pub heads: usize,
    /// Attention hidden width `A`.
    pub hidden: usize,
    pub dropout: f64,
    pub eps: f64,
}

impl AstpConfig {
    /// Defaults: 8 heads, hidden width `D / H`, dropout 0.1, floor 1e-8.
    pub fn new(dim: usize) -> Self {
        Self::with_heads(dim, DEFAULT_HEADS)
    }

    pub fn with_heads(dim: usize, heads: usize) -> Self {
        Self {
            dim,
            heads,
            hidden: dim.checked_div(heads).unwrap_or(1).max(1),
            dropout: DEFAULT_DROPOUT,
            eps: VARIANCE_FLOOR,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dim
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated so NaN is rejected too
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "{} heads do not divide {} channels",
                self.heads, self.dim
            )));
        }
        if self.hidden == 0 {
            return Err(Error::config("attention hidden width must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("variance floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstpParams {
    pub config: AstpConfig,
    /// `(H, A, d)`
    pub w: Array3<f64>,
    /// `(H, A)`
    pub b: Array2<f64>,
    /// `(H, A)`
    pub v: Array2<f64>,
    /// `(H,)`
    pub k: Array1<f64>,
}

/// `(mean part | std part)`, length `2D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(pub Array1<f64>);

impl SpeakerEmbedding {
    pub fn mean_part(&self) -> ndarray::ArrayView1<'_, f64> {
        let d = self.0.len() / 2;
        self.0.slice(s![..d])
    }

    pub fn std_part(&self) -> ndarray::ArrayView1<'_, f64> {
        let d = self.0.len() / 2;
        self.0.slice(s![d..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl AstpParams {
    /// Weights `W ~ U(±1/sqrt(d))`, `v ~ U(±1/sqrt(A))`; `b` and `k` zero.
    pub fn init(config: AstpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "astp");
        let (h, a, d) = (config.heads, config.hidden, config.head_dim());
        let w = uniform_array((h, a, d), 1.0 / (d as f64).sqrt(), &mut rng);
        let v = uniform_array((h, a), 1.0 / (a as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            w,
            b: Array2::zeros((h, a)),
            v,
            k: Array1::zeros(h),
        })
    }

    pub fn zeros(config: AstpConfig) -> Self {
        let (h, a, d) = (config.heads, config.hidden, config.head_dim());
        Self {
            config,
            w: Array3::zeros((h, a, d)),
            b: Array2::zeros((h, a)),
            v: Array2::zeros((h, a)),
            k: Array1::zeros(h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.dim || x.nrows() == 0 {
            return Err(Error::contract(format!(
                "pooling expects (L, {}) input, got {:?}",
                self.config.dim,
                x.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite value in layer stack"));
        }
        Ok(())
    }

    /// Eval-mode pooling (no dropout, deterministic).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<SpeakerEmbedding> {
        self.check_input(&x)?;
        Ok(SpeakerEmbedding(self.run(x, None).0))
    }

    /// Pooling in the given mode. Train mode draws dropout masks from `rng`.
    pub fn forward_mode<R: Rng>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(SpeakerEmbedding, AstpCache)> {
        self.check_input(&x)?;
        let rng = match mode {
            Mode::Train if self.config.dropout > 0.0 => Some(rng),
            _ => None,
        };
        let (out, cache) = self.run(x, rng.map(|r| r as &mut dyn rand::RngCore));
        Ok((SpeakerEmbedding(out), cache))
    }

    /// Attention weights per head, shape `(H, L)`.
    pub fn attention(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let (_, cache) = self.run(x, None);
        let mut out = Array2::zeros((self.config.heads, x.nrows()));
        for (h, head) in cache.heads.iter().enumerate() {
            out.row_mut(h).assign(&head.alpha);
        }
        Ok(out)
    }

    fn run(&self, x: ArrayView2<'_, f64>, mut rng: Option<&mut dyn rand::RngCore>) -> (Array1<f64>, AstpCache) {
        let cfg = &self.config;
        let (layers, d) = (x.nrows(), cfg.head_dim());
        let mut out = Array1::zeros(cfg.output_dim());
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let xs = x.slice(s![.., h * d..(h + 1) * d]);
            let w = self.w.index_axis(Axis(0), h);
            let act = (xs.dot(&w.t()) + self.b.row(h)).mapv(f64::tanh);
            let mask = rng
                .as_deref_mut()
                .map(|r| dropout_mask((layers, cfg.hidden), cfg.dropout, r));
            let dropped = match &mask {
                Some(m) => &act * m,
                None => act.clone(),
            };
            let scores = dropped.dot(&self.v.row(h)) + self.k[h];
            let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let exp = scores.mapv(|v| (v - max).exp());
            let alpha = &exp / exp.sum();

            // mean shifted by the first row so identical rows pool exactly
            let base = xs.row(0);
            let mut mu = base.to_owned();
            for (l, row) in xs.rows().into_iter().enumerate() {
                mu.scaled_add(alpha[l], &(&row - &base));
            }
            let mut var = Array1::zeros(d);
            for (l, row) in xs.rows().into_iter().enumerate() {
                var.scaled_add(alpha[l], &(&row - &mu).mapv(|v| v * v));
            }
            let sigma = var.mapv(|v: f64| v.max(cfg.eps).sqrt());
            out.slice_mut(s![h * d..(h + 1) * d]).assign(&mu);
            out.slice_mut(s![cfg.dim + h * d..cfg.dim + (h + 1) * d]).assign(&sigma);
            heads.push(HeadCache {
                act,
                mask,
                alpha,
                mu,
                var,
                sigma,
            });
        }
        let out_mask = rng.map(|r| dropout_mask(cfg.output_dim(), cfg.dropout, r));
        if let Some(m) = &out_mask {
            out *= m;
        }
        (
            out,
            AstpCache {
                x: x.to_owned(),
                heads,
                out_mask,
            },
        )
    }

    /// Accumulate parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, cache: &AstpCache, g_out: &Array1<f64>, grad: &mut AstpParams) -> Array2<f64> {
        let cfg = &self.config;
        let d = cfg.head_dim();
        let g = match &cache.out_mask {
            Some(m) => g_out * m,
            None => g_out.clone(),
        };
        let mut gx = Array2::zeros(cache.x.raw_dim());
        for (h, hc) in cache.heads.iter().enumerate() {
            let xs = cache.x.slice(s![.., h * d..(h + 1) * d]);
            let g_mu = g.slice(s![h * d..(h + 1) * d]);
            let g_sigma = g.slice(s![cfg.dim + h * d..cfg.dim + (h + 1) * d]);
            let g_var = ndarray::Zip::from(&g_sigma)
                .and(&hc.sigma)
                .and(&hc.var)
                .map_collect(|&gs, &s, &v| if v > cfg.eps { gs / (2.0 * s) } else { 0.0 });

            // dL/dalpha_l, up to a constant that the softmax Jacobian removes
            let mut g_alpha = Array1::zeros(xs.nrows());
            let mut gxs = Array2::zeros(xs.raw_dim());
            for (l, row) in xs.rows().into_iter().enumerate() {
                let dev = &row - &hc.mu;
                g_alpha[l] = g_mu.dot(&dev) + g_var.dot(&dev.mapv(|v| v * v));
                let direct = (&g_mu + &(&g_var * &dev * 2.0)) * hc.alpha[l];
                gxs.row_mut(l).assign(&direct);
            }
            let mean_g = hc.alpha.dot(&g_alpha);
            let g_score = &hc.alpha * &(g_alpha - mean_g);

            grad.k[h] += g_score.sum();
            let dropped = match &hc.mask {
                Some(m) => &hc.act * m,
                None => hc.act.clone(),
            };
            let mut gv = grad.v.row_mut(h);
            gv += &dropped.t().dot(&g_score);
            let v = self.v.row(h);
            let mut g_act = Array2::from_shape_fn(hc.act.raw_dim(), |(l, a)| g_score[l] * v[a]);
            if let Some(m) = &hc.mask {
                g_act *= m;
            }
            let g_pre = &g_act * &hc.act.mapv(|t| 1.0 - t * t);
            let mut gw = grad.w.index_axis_mut(Axis(0), h);
            gw += &g_pre.t().dot(&xs);
            let mut gb = grad.b.row_mut(h);
            gb += &g_pre.sum_axis(Axis(0));
            gxs += &g_pre.dot(&self.w.index_axis(Axis(0), h));
            gx.slice_mut(s![.., h * d..(h + 1) * d]).assign(&gxs);
        }
        gx
    }
}

#[derive(Debug, Clone)]
struct HeadCache {
    /// tanh activations before dropout, `(L, A)`
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
    alpha: Array1<f64>,
    mu: Array1<f64>,
    var: Array1<f64>,
    sigma: Array1<f64>,
}

/// Intermediate values from one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct AstpCache {
    x: Array2<f64>,
    heads: Vec<HeadCache>,
    out_mask: Option<Array1<f64>>,
}

impl Module for AstpParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        vec![
            view("astp.w".into(), &self.w),
            view("astp.b".into(), &self.b),
            view("astp.v".into(), &self.v),
            view("astp.k".into(), &self.k),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        vec![
            view_mut("astp.w".into(), &mut self.w),
            view_mut("astp.b".into(), &mut self.b),
            view_mut("astp.v".into(), &mut self.v),
            view_mut("astp.k".into(), &mut self.k),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let cfg = AstpConfig::new(1024);
        assert_eq!(cfg.hidden, 128);
        let a = AstpParams::init(cfg, 42).unwrap();
        let b = AstpParams::init(cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, AstpParams::init(cfg, 43).unwrap());
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = AstpConfig::with_heads(1024, 7);
        assert!(matches!(AstpParams::init(cfg, 42), Err(Error::Config(_))));
    }

    #[test]
    fn toy_shapes() {
        let cfg = AstpConfig {
            hidden: 4,
            ..AstpConfig::with_heads(8, 2)
        };
        let p = AstpParams::init(cfg, 0).unwrap();
        assert_eq!(cfg.head_dim(), 4);
        assert_eq!(p.w.index_axis(Axis(0), 0).dim(), (4, 4));
        assert_eq!(p.b.row(0).len(), 4);
        assert_eq!(p.v.row(0).len(), 4);
        assert_eq!(p.k.len(), 2);
        assert!(p.b.iter().chain(p.k.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn full_scale_output_length() {
        let p = AstpParams::init(AstpConfig::new(1024), 1).unwrap();
        let x = Array2::from_shape_fn((25, 1024), |(l, c)| ((l * 31 + c * 7) % 13) as f64 / 13.0);
        assert_eq!(p.forward(x.view()).unwrap().0.len(), 2048);
    }

    #[test]
    fn hand_set_two_layer_case() {
        let cfg = AstpConfig {
            dim: 2,
            heads: 1,
            hidden: 1,
            dropout: 0.1,
            eps: VARIANCE_FLOOR,
        };
        let p = AstpParams {
            config: cfg,
            w: Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap(),
            b: array![[0.0]],
            v: array![[1.0]],
            k: array![0.0],
        };
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let out = p.forward(x.view()).unwrap().0;
        // straight-line evaluation at 64-bit, frozen before the implementation
        let (mu, sigma) = (0.6816997421945262, 0.46581670610492565);
        for c in 0..2 {
            assert!((out[c] - mu).abs() < 1e-15);
            assert!((out[2 + c] - sigma).abs() < 1e-15);
        }
        let alpha = p.attention(x.view()).unwrap();
        assert!((alpha[[0, 0]] - 0.3183002578054738).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let p = AstpParams::init(AstpConfig::with_heads(4, 2), 0).unwrap();
        assert!(matches!(
            p.forward(Array2::zeros((3, 5)).view()),
            Err(Error::Contract(_))
        ));
        let mut x = Array2::zeros((3, 4));
        x[[1, 1]] = f64::NAN;
        assert!(matches!(p.forward(x.view()), Err(Error::Input(_))));
    }

    #[test]
    fn train_mode_dropout_zeroes_some_outputs() {
        let p = AstpParams::init(AstpConfig::with_heads(64, 8), 0).unwrap();
        let x = Array2::from_shape_fn((5, 64), |(l, c)| (l as f64 - 2.0) * (c as f64 + 1.0) / 64.0);
        let mut rng = rng_for(1, "t");
        let (e, _) = p.forward_mode(x.view(), Mode::Train, &mut rng).unwrap();
        assert!(e.0.iter().any(|&v| v == 0.0));
        assert!(e.std_part().iter().all(|&v| v >= 0.0));
        let (e1, _) = p.forward_mode(x.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(e1, p.forward(x.view()).unwrap());
    }
}
