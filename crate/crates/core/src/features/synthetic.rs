//! Synthetic layer stacks with a planted, linearly decodable attribute signal.
//!
//! Construction for a `layers x dim` stack and a 34-entry signal `s`:
//!
//! 1. Draw `noise[l][c] ~ N(0, noise_std^2)` from a stream keyed by
//!    `(seed, utterance_id)`.
//! 2. Attribute `n` owns channel `c_n = n * (dim / 34)`. On those channels the
//!    noise is re-centred so its mean over layers is exactly zero, then
//!    `gain * s[n]` is added to every layer.
//!
//! The mean over layers therefore equals `gain * s[n]` on channel `c_n`
//! (up to `f32` rounding), and two signals only ever change the owned channels.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ExtractRequest, FeatureBackend, LayerStack};
use crate::dataset::{Gender, NUM_ATTRIBUTES, NUM_DESCRIPTORS};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticProfile {
    pub gain: f64,
    pub noise_std: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            gain: 2.0,
            noise_std: 1.0,
        }
    }
}

/// Channel carrying attribute `n`.
pub fn signal_channel(attribute: usize, dim: usize) -> usize {
    attribute * (dim / NUM_ATTRIBUTES)
}

pub fn synth_layer_stack(
    utterance_id: &str,
    seed: u64,
    signal: &[f64; NUM_ATTRIBUTES],
    layers: usize,
    dim: usize,
    profile: SyntheticProfile,
) -> Result<LayerStack> {
    if dim < NUM_ATTRIBUTES {
        return Err(Error::config(format!(
            "synthetic stacks need dim >= {NUM_ATTRIBUTES}, got {dim}"
        )));
    }
    if layers == 0 {
        return Err(Error::config("synthetic stacks need at least one layer"));
    }
    let mut rng = rng_for(seed, &format!("synth-stack:{utterance_id}"));
    let mut values: Vec<f64> = (0..layers * dim)
        .map(|_| profile.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    for (n, &s) in signal.iter().enumerate() {
        let c = signal_channel(n, dim);
        let mean = (0..layers).map(|l| values[l * dim + c]).sum::<f64>() / layers as f64;
        for l in 0..layers {
            values[l * dim + c] += profile.gain * s - mean;
        }
    }
    LayerStack::new(
        utterance_id,
        layers,
        dim,
        values.into_iter().map(|v| v as f32).collect(),
    )
}

/// Latent attribute intensities of a synthetic speaker: uniform in `[-1, 1]`
/// on the speaker's gender block, zero elsewhere.
pub fn speaker_signal(seed: u64, speaker_id: &str, gender: Gender) -> [f64; NUM_ATTRIBUTES] {
    let mut rng = rng_for(seed, &format!("synth-speaker:{speaker_id}"));
    let mut signal = [0.0; NUM_ATTRIBUTES];
    let offset = gender.block_offset();
    for v in &mut signal[offset..offset + NUM_DESCRIPTORS] {
        *v = rng.random_range(-1.0..=1.0);
    }
    signal
}

/// Backend that ignores audio and synthesizes from the speaker's latent signal.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    seed: u64,
    layers: usize,
    dim: usize,
    profile: SyntheticProfile,
}

impl SyntheticBackend {
    pub fn new(seed: u64, layers: usize, dim: usize, profile: SyntheticProfile) -> Result<Self> {
        if dim < NUM_ATTRIBUTES || layers == 0 {
            return Err(Error::config(format!(
                "synthetic backend needs layers >= 1 and dim >= {NUM_ATTRIBUTES}"
            )));
        }
        Ok(Self {
            seed,
            layers,
            dim,
            profile,
        })
    }
}

impl FeatureBackend for SyntheticBackend {
    fn extract(&self, request: &ExtractRequest<'_>) -> Result<LayerStack> {
        let signal = speaker_signal(self.seed, request.speaker_id, request.gender);
        synth_layer_stack(
            request.utterance_id,
            self.seed,
            &signal,
            self.layers,
            self.dim,
            self.profile,
        )
    }
}
