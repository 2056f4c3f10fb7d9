//! Per-utterance layer stacks: frame-averaged embeddings from every encoder layer.
//!
//! Backends produce stacks behind [`FeatureBackend`]; [`Provider`] enforces the
//! shape contract. None of the backends expose trainable state.

mod external;
pub mod format;
mod store;
mod synthetic;

use std::path::{Path, PathBuf};

use ndarray::Array2;

pub use external::ExternalEncoder;
pub use format::{read_layer_stack, write_layer_stack};
pub use store::{feature_file_name, FeatureStore, FEATURE_MANIFEST};
pub use synthetic::{speaker_signal, synth_layer_stack, SyntheticBackend, SyntheticProfile};

use crate::audio::Waveform;
use crate::dataset::Gender;
use crate::error::{Error, Result};

/// Layer count of the full-scale encoder (convolutional front end + 24 blocks).
pub const ENCODER_LAYERS: usize = 25;
/// Channel width of the full-scale encoder.
pub const ENCODER_DIM: usize = 1024;

/// `num_layers x dim` matrix of frame-averaged layer outputs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    utterance_id: String,
    num_layers: usize,
    dim: usize,
    values: Vec<f32>,
}

impl LayerStack {
    pub fn new(utterance_id: &str, num_layers: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if num_layers == 0 || dim == 0 {
            return Err(Error::contract("layer stack needs at least one layer and one channel"));
        }
        if values.len() != num_layers * dim {
            return Err(Error::contract(format!(
                "layer stack {num_layers}x{dim} needs {} values, got {}",
                num_layers * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite value in layer stack {utterance_id}")));
        }
        Ok(Self {
            utterance_id: utterance_id.to_owned(),
            num_layers,
            dim,
            values,
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major (layer-major) values.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, layer: usize) -> &[f32] {
        &self.values[layer * self.dim..(layer + 1) * self.dim]
    }

    /// Values widened to `f64`, shape `(num_layers, dim)`.
    pub fn to_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.num_layers, self.dim), |(l, c)| {
            f64::from(self.values[l * self.dim + c])
        })
    }

    /// Mean over layers, per channel.
    pub fn layer_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for l in 0..self.num_layers {
            for (m, &v) in mean.iter_mut().zip(self.row(l)) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.num_layers as f64);
        mean
    }
}

/// Which backend a [`Provider`] wraps.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    /// Runs an external program per utterance; see [`ExternalEncoder`].
    ExternalEncoder { program: PathBuf, args: Vec<String> },
    /// Reads previously extracted stacks from a feature directory.
    File { dir: PathBuf },
    /// Deterministic pseudo-random stacks carrying a known attribute signal.
    Synthetic { seed: u64, profile: SyntheticProfile },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub backend: BackendConfig,
    pub expected_layers: usize,
    pub expected_dim: usize,
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expected_layers == 0 || self.expected_dim == 0 {
            return Err(Error::config("expected_layers and expected_dim must be >= 1"));
        }
        Ok(())
    }
}

/// Everything a backend may need to produce one utterance's stack.
#[derive(Debug, Clone, Copy)]
pub struct ExtractRequest<'a> {
    pub utterance_id: &'a str,
    pub speaker_id: &'a str,
    pub gender: Gender,
    /// Audio, already trimmed, when the caller has loaded it.
    pub waveform: Option<&'a Waveform>,
    pub audio_path: Option<&'a Path>,
}

impl<'a> ExtractRequest<'a> {
    /// Request carrying only the utterance id (enough for file lookups).
    pub fn by_id(utterance_id: &'a str) -> Self {
        Self {
            utterance_id,
            speaker_id: "",
            gender: Gender::Male,
            waveform: None,
            audio_path: None,
        }
    }
}

pub trait FeatureBackend: Send + Sync {
    fn extract(&self, request: &ExtractRequest<'_>) -> Result<LayerStack>;

    /// Whether `extract` may be called concurrently on one instance.
    fn reentrant(&self) -> bool {
        true
    }
}

/// A backend plus the shape it has promised to deliver.
pub struct Provider {
    backend: Box<dyn FeatureBackend>,
    expected_layers: usize,
    expected_dim: usize,
}

impl Provider {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self> {
        cfg.validate()?;
        let backend: Box<dyn FeatureBackend> = match &cfg.backend {
            BackendConfig::ExternalEncoder { program, args } => {
                Box::new(ExternalEncoder::new(program.clone(), args.clone())?)
            }
            BackendConfig::File { dir } => Box::new(FeatureStore::open(dir)?),
            BackendConfig::Synthetic { seed, profile } => Box::new(SyntheticBackend::new(
                *seed,
                cfg.expected_layers,
                cfg.expected_dim,
                *profile,
            )?),
        };
        Ok(Self::new(backend, cfg.expected_layers, cfg.expected_dim))
    }

    pub fn new(backend: Box<dyn FeatureBackend>, expected_layers: usize, expected_dim: usize) -> Self {
        Self {
            backend,
            expected_layers,
            expected_dim,
        }
    }

    pub fn expected_shape(&self) -> (usize, usize) {
        (self.expected_layers, self.expected_dim)
    }

    pub fn reentrant(&self) -> bool {
        self.backend.reentrant()
    }

    /// Produce a stack, failing if the backend returns any other shape.
    pub fn extract(&self, request: &ExtractRequest<'_>) -> Result<LayerStack> {
        let stack = self.backend.extract(request)?;
        if (stack.num_layers(), stack.dim()) != (self.expected_layers, self.expected_dim) {
            return Err(Error::contract(format!(
                "backend produced {}x{} for {}, expected {}x{}",
                stack.num_layers(),
                stack.dim(),
                request.utterance_id,
                self.expected_layers,
                self.expected_dim
            )));
        }
        Ok(stack)
    }
}

/// One-shot convenience: build the configured provider and extract.
pub fn extract_layer_stack(request: &ExtractRequest<'_>, cfg: &ProviderConfig) -> Result<LayerStack> {
    Provider::from_config(cfg)?.extract(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(LayerStack);

    impl FeatureBackend for Fixed {
        fn extract(&self, _: &ExtractRequest<'_>) -> Result<LayerStack> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn provider_rejects_wrong_shape() {
        let stack = LayerStack::new("u", 3, 4, vec![0.0; 12]).unwrap();
        let provider = Provider::new(Box::new(Fixed(stack.clone())), 25, 1024);
        assert!(matches!(
            provider.extract(&ExtractRequest::by_id("u")),
            Err(Error::Contract(_))
        ));
        let provider = Provider::new(Box::new(Fixed(stack.clone())), 3, 4);
        assert_eq!(provider.extract(&ExtractRequest::by_id("u")).unwrap(), stack);
    }

    #[test]
    fn stack_constructor_checks_shape_and_finiteness() {
        assert!(LayerStack::new("u", 2, 2, vec![0.0; 3]).is_err());
        assert!(LayerStack::new("u", 0, 2, vec![]).is_err());
        assert!(LayerStack::new("u", 1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn layer_mean_averages_rows() {
        let s = LayerStack::new("u", 2, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(s.layer_mean(), vec![2.0, 4.0]);
        assert_eq!(s.to_matrix()[[1, 1]], 6.0);
    }

    #[test]
    fn zero_expected_shape_is_a_config_error() {
        let cfg = ProviderConfig {
            backend: BackendConfig::Synthetic {
                seed: 0,
                profile: SyntheticProfile::default(),
            },
            expected_layers: 0,
            expected_dim: 64,
        };
        assert!(matches!(Provider::from_config(&cfg), Err(Error::Config(_))));
    }
}
