//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use vtad::astp::{AstpConfig, AstpParams, Mode};
use vtad::dataset::{build_pairs, AttributeRegistry, PairExample, PairOptions, UtteranceRecord};
use vtad::diffnet::{DiffNetConfig, DiffNetParams, Variant};
use vtad::features::{BackendConfig, Provider, ProviderConfig, SyntheticProfile, ENCODER_DIM, ENCODER_LAYERS};
use vtad::fixture::{synth_fixture, FixtureSpec};
use vtad::nn::Module;
use vtad::seed::rng_for;

pub type Check = std::result::Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn random_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Array2<f64> {
    let mut rng = rng_for(seed, tag);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|)` over one tensor. The floor covers tensors whose
/// true gradient is zero (a bias feeding batch norm, the attention score
/// offset), where both sides are rounding noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-4)
}

fn check_module<M: Module + Clone>(params: &M, analytic: &M, loss: impl Fn(&M) -> f64, label: &str) -> Check {
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len()))
        .collect();
    let grads = analytic.tensors();
    for (ti, (name, len)) in names.iter().enumerate() {
        let mut numeric = vec![0.0; *len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[i] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[i] -= FD_STEP;
            *slot = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        }
        let err = relative_error(grads[ti].data, &numeric);
        ensure(err <= GRAD_TOLERANCE, || {
            format!("{label}: {name} relative error {err:e}")
        })?;
    }
    Ok(())
}

fn check_input(x: &Array2<f64>, analytic: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64, label: &str) -> Check {
    let mut numeric = Array2::zeros(x.raw_dim());
    for ((r, c), slot) in numeric.indexed_iter_mut() {
        let mut p = x.clone();
        p[[r, c]] += FD_STEP;
        let mut m = x.clone();
        m[[r, c]] -= FD_STEP;
        *slot = (loss(&p) - loss(&m)) / (2.0 * FD_STEP);
    }
    let err = relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap());
    ensure(err <= GRAD_TOLERANCE, || {
        format!("{label}: input relative error {err:e}")
    })
}

/// Pooling with L=5, D=8, H=2 and dropout masks held fixed.
pub fn astp_gradcheck(seed: u64) -> Check {
    let mut params = AstpParams::init(AstpConfig::with_heads(8, 2), seed).map_err(|e| e.to_string())?;
    let mut rng = rng_for(seed, "astp-bias");
    params.b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    params.k.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let x = random_matrix(5, 8, seed, "astp-x");
    let r = Array1::from_iter(random_matrix(1, 16, seed, "astp-r"));

    let loss_of = |p: &AstpParams, x: &Array2<f64>| -> f64 {
        let (out, _) = p
            .forward_mode(x.view(), Mode::Train, &mut rng_for(seed, "astp-dropout"))
            .unwrap();
        out.0.dot(&r)
    };
    let (_, cache) = params
        .forward_mode(x.view(), Mode::Train, &mut rng_for(seed, "astp-dropout"))
        .map_err(|e| e.to_string())?;
    let mut grad = params.zeros_like();
    let gx = params.backward(&cache, &r, &mut grad);
    let label = format!("astp seed {seed}");
    check_module(&params, &grad, |p| loss_of(p, &x), &label)?;
    check_input(&x, &gx, |x| loss_of(&params, x), &label)
}

pub fn toy_diffnet_config(variant: Variant) -> DiffNetConfig {
    DiffNetConfig {
        widths: vec![4, 4, 2, 2],
        head_widths: if variant == Variant::SeResFfn {
            vec![3, 2]
        } else {
            Vec::new()
        },
        outputs: 3,
        se_reduction: 2,
        ..DiffNetConfig::new(variant, 8)
    }
}

/// Toy comparison head in train mode (batch statistics, fixed dropout masks).
pub fn diffnet_gradcheck(variant: Variant, seed: u64) -> Check {
    let params = DiffNetParams::init(toy_diffnet_config(variant), seed).map_err(|e| e.to_string())?;
    let x = random_matrix(6, 8, seed, "diffnet-x");
    let r = random_matrix(6, 3, seed, "diffnet-r");
    let loss_of = |p: &DiffNetParams, x: &Array2<f64>| -> f64 {
        let (logits, _) = p.forward_train(x, &mut rng_for(seed, "diffnet-dropout")).unwrap();
        (&logits * &r).sum()
    };
    let (_, cache) = params
        .forward_train(&x, &mut rng_for(seed, "diffnet-dropout"))
        .map_err(|e| e.to_string())?;
    let mut grad = params.zeros_like();
    let gx = params.backward(&cache, &r, &mut grad);
    let label = format!("{variant} seed {seed}");
    check_module(&params, &grad, |p| loss_of(p, &x), &label)?;
    check_input(&x, &gx, |x| loss_of(&params, x), &label)
}

// ---------------------------------------------------------------- synthetic training data

/// One clearly separated descriptor, full-size stacks, strong signal.
pub const OVERFIT_GAIN: f64 = 16.0;
pub const OVERFIT_PAIRS: usize = 64;

pub struct OverfitData {
    pub records: Vec<UtteranceRecord>,
    pub train: Vec<PairExample>,
    pub held_out: Vec<PairExample>,
}

fn utterance_index(r: &UtteranceRecord) -> usize {
    r.utterance_id.rsplit("_u").next().and_then(|k| k.parse().ok()).unwrap()
}

/// Train pairs use utterances 0-2 of each speaker, held-out pairs 3-5.
pub fn overfit_data(seed: u64) -> OverfitData {
    let reg = AttributeRegistry::default();
    let spec = FixtureSpec {
        seed,
        descriptors: vec!["Bright".into()],
        descriptors_per_pair: 1,
        margin: 0.5,
        ..FixtureSpec::default()
    };
    let f = synth_fixture(&spec, &reg).unwrap();
    let opts = PairOptions {
        pairs_per_speaker_pair: 12,
        seed,
        ..PairOptions::default()
    };
    let side = |held_out: bool| -> Vec<PairExample> {
        let recs: Vec<UtteranceRecord> = f
            .records
            .iter()
            .filter(|r| (utterance_index(r) >= 3) == held_out)
            .cloned()
            .collect();
        let mut pairs = build_pairs(&f.annotations, &recs, &reg, &opts).unwrap();
        pairs.truncate(OVERFIT_PAIRS);
        pairs
    };
    OverfitData {
        train: side(false),
        held_out: side(true),
        records: f.records,
    }
}

pub fn synthetic_provider(seed: u64, gain: f64) -> Provider {
    Provider::from_config(&ProviderConfig {
        backend: BackendConfig::Synthetic {
            seed,
            profile: SyntheticProfile { gain, noise_std: 1.0 },
        },
        expected_layers: ENCODER_LAYERS,
        expected_dim: ENCODER_DIM,
    })
    .unwrap()
}
