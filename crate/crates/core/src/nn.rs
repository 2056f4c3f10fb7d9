//! Dense layers, batch normalisation and dropout with explicit backward passes.
//!
//! Activations are row-major `(batch, features)` matrices of `f64`.

use ndarray::{Array, Array1, Array2, Axis, Dimension, Zip};
use rand::Rng;

/// Read-only view of one named tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

pub(crate) fn view<'a, D: Dimension>(name: String, a: &'a Array<f64, D>) -> TensorView<'a> {
    TensorView {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are contiguous"),
    }
}

pub(crate) fn view_mut<D: Dimension>(name: String, a: &mut Array<f64, D>) -> TensorViewMut<'_> {
    TensorViewMut {
        name,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    }
}

/// A collection of trainable tensors plus non-trainable buffers, both listed
/// in a fixed canonical order.
pub trait Module {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>>;

    fn buffers(&self) -> Vec<TensorView<'_>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        Vec::new()
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

pub(crate) fn uniform_array<R: Rng + ?Sized, D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    bound: f64,
    rng: &mut R,
) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

/// `y = x W^T + b`, `W: (out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Weights `U(-1/sqrt(in), 1/sqrt(in))`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform_array((output, input), bound, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &gy.t().dot(x);
        grad.bias += &gy.sum_axis(Axis(0));
        gy.dot(&self.weight)
    }

    pub(crate) fn push_views<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(view(format!("{prefix}.weight"), &self.weight));
        out.push(view(format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn push_views_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        out.push(view_mut(format!("{prefix}.weight"), &mut self.weight));
        out.push(view_mut(format!("{prefix}.bias"), &mut self.bias));
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature batch normalisation over the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    /// Unbiased batch variance, folded into the running estimate.
    var_unbiased: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            scale: Array1::ones(features),
            shift: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    pub fn zeros(features: usize) -> Self {
        Self {
            scale: Array1::zeros(features),
            shift: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::zeros(features),
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }

    /// Normalise with the batch's own statistics (biased variance).
    pub fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let x_hat = &centered * &inv_std;
        let y = &x_hat * &self.scale + &self.shift;
        let var_unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var };
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                mean,
                var_unbiased,
            },
        )
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        (x - &self.running_mean) * &inv_std * &self.scale + &self.shift
    }

    pub fn backward(&self, cache: &BatchNormCache, gy: &Array2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let n = gy.nrows() as f64;
        grad.scale += &(gy * &cache.x_hat).sum_axis(Axis(0));
        grad.shift += &gy.sum_axis(Axis(0));
        let g_hat = gy * &self.scale;
        let sum_g = g_hat.sum_axis(Axis(0));
        let sum_gx = (&g_hat * &cache.x_hat).sum_axis(Axis(0));
        let mut gx = g_hat * n - &sum_g - &(&cache.x_hat * &sum_gx);
        gx *= &(&cache.inv_std / n);
        gx
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        Zip::from(&mut self.running_mean)
            .and(&cache.mean)
            .for_each(|r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
        Zip::from(&mut self.running_var)
            .and(&cache.var_unbiased)
            .for_each(|r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v);
    }

    pub(crate) fn push_views<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(view(format!("{prefix}.scale"), &self.scale));
        out.push(view(format!("{prefix}.shift"), &self.shift));
    }

    pub(crate) fn push_views_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        out.push(view_mut(format!("{prefix}.scale"), &mut self.scale));
        out.push(view_mut(format!("{prefix}.shift"), &mut self.shift));
    }

    pub(crate) fn push_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(view(format!("{prefix}.running_mean"), &self.running_mean));
        out.push(view(format!("{prefix}.running_var"), &self.running_var));
    }

    pub(crate) fn push_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        out.push(view_mut(format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push(view_mut(format!("{prefix}.running_var"), &mut self.running_var));
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized, D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    p: f64,
    rng: &mut R,
) -> Array<f64, D> {
    let keep = 1.0 / (1.0 - p);
    Array::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward(out: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut g = gy.clone();
    Zip::from(&mut g).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
