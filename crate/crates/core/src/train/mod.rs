//! Masked BCE, cosine schedule, AdamW and the seeded training loop.
//!
//! Randomness per run: shuffle order for epoch `e` comes from
//! `(seed, "shuffle:e")`, dropout for global step `t` from `(seed, "dropout:t")`.
//! Neither depends on earlier draws, so a checkpoint needs no RNG state and a
//! resumed run replays exactly.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{config_fingerprint, load_checkpoint, save_checkpoint, Checkpoint, LoadOptions};
pub use config::{LossReduction, Scheduler, TrainConfig};
pub use optim::AdamW;

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeRegistry, PairExample, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{ExtractRequest, Provider};
use crate::model::{probabilities, StackCache, VtadModel};
use crate::seed::rng_for;

pub const PROB_CLAMP: f64 = 1e-7;

fn check_shapes(pred: &ArrayView2<'_, f64>, labels: &ArrayView2<'_, f64>, mask: &ArrayView2<'_, f64>) -> Result<()> {
    if pred.dim() != labels.dim() || pred.dim() != mask.dim() || pred.nrows() == 0 {
        return Err(Error::contract(format!(
            "loss inputs disagree: pred {:?}, labels {:?}, mask {:?}",
            pred.dim(),
            labels.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// Masked binary cross-entropy.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]`. `Sample` reduction averages
/// over masked entries within each row, then over rows; `Pooled` averages over
/// every masked entry of the batch.
pub fn masked_bce(
    pred: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, f64>,
    reduction: LossReduction,
) -> Result<f64> {
    check_shapes(&pred, &labels, &mask)?;
    let mut total = 0.0;
    let mut pooled_n = 0.0;
    for ((p, y), m) in pred.rows().into_iter().zip(labels.rows()).zip(mask.rows()) {
        let n: f64 = m.sum();
        if n < 1.0 {
            return Err(Error::input("pair with an empty attribute mask reached the loss"));
        }
        let mut s = 0.0;
        for ((&p, &y), &m) in p.iter().zip(&y).zip(&m) {
            if m != 0.0 {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        match reduction {
            LossReduction::Sample => total += s / n,
            LossReduction::Pooled => {
                total += s;
                pooled_n += n;
            }
        }
    }
    Ok(match reduction {
        LossReduction::Sample => total / pred.nrows() as f64,
        LossReduction::Pooled => total / pooled_n,
    })
}

/// `dL/dlogit` of [`masked_bce`] through the sigmoid; zero where the clamp is active.
pub fn masked_bce_grad_logits(
    pred: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, f64>,
    reduction: LossReduction,
) -> Result<Array2<f64>> {
    check_shapes(&pred, &labels, &mask)?;
    let rows = pred.nrows() as f64;
    let pooled: f64 = mask.sum();
    let mut g = Array2::zeros(pred.raw_dim());
    for (i, m) in mask.rows().into_iter().enumerate() {
        let n: f64 = m.sum();
        if n < 1.0 {
            return Err(Error::input("pair with an empty attribute mask reached the loss"));
        }
        let scale = match reduction {
            LossReduction::Sample => 1.0 / (n * rows),
            LossReduction::Pooled => 1.0 / pooled,
        };
        for j in 0..pred.ncols() {
            let p = pred[[i, j]];
            if m[j] != 0.0 && p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                g[[i, j]] = (p - labels[[i, j]]) * scale;
            }
        }
    }
    Ok(g)
}

/// `eta_min + (lr0 - eta_min) * (1 + cos(pi * step / total)) / 2`
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, eta_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::input("cosine schedule needs total_steps >= 1"));
    }
    if step > total_steps {
        return Err(Error::input(format!(
            "step {step} beyond schedule length {total_steps}"
        )));
    }
    if step == total_steps {
        return Ok(eta_min);
    }
    Ok(eta_min + (lr0 - eta_min) * (1.0 + (PI * step as f64 / total_steps as f64).cos()) / 2.0)
}

/// One record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed so far.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialise")
    }
}

/// Knobs that do not change the result of a full run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub resume: Option<Checkpoint>,
    /// Stop after this epoch (1-based) without changing the schedule.
    pub stop_after_epoch: Option<usize>,
    /// Each epoch record is written here as one JSON line when produced.
    pub log_sink: Option<&'a mut dyn Write>,
    /// Speaker/gender lookup passed to the feature provider.
    pub manifest: Option<&'a [UtteranceRecord]>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Load every stack referenced by `pairs` once. The provider is frozen, so
/// the same values are reused for every epoch.
///
/// `manifest`, when given, supplies speaker and gender for backends that need
/// them (the synthetic one); file-backed stores only need the id.
pub fn load_stacks<'a, I>(pairs: I, provider: &Provider, manifest: Option<&[UtteranceRecord]>) -> Result<StackCache>
where
    I: IntoIterator<Item = &'a PairExample>,
{
    let lookup: HashMap<&str, &UtteranceRecord> = manifest
        .unwrap_or_default()
        .iter()
        .map(|r| (r.utterance_id.as_str(), r))
        .collect();
    let mut ids: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for p in pairs {
        for u in [p.utt_a.as_str(), p.utt_b.as_str()] {
            if seen.insert(u) {
                ids.push(u);
            }
        }
    }
    let mut out = StackCache::with_capacity(ids.len());
    for id in ids {
        let mut req = ExtractRequest::by_id(id);
        if let Some(r) = lookup.get(id) {
            req.speaker_id = &r.speaker_id;
            req.gender = r.gender;
        } else if manifest.is_some() {
            return Err(Error::input(format!("utterance '{id}' is not in the manifest")));
        }
        out.insert(id.to_owned(), provider.extract(&req)?.to_matrix());
    }
    Ok(out)
}

fn targets(pairs: &[&PairExample]) -> (Array2<f64>, Array2<f64>) {
    let n = pairs.len();
    let k = crate::dataset::NUM_ATTRIBUTES;
    let mut y = Array2::zeros((n, k));
    let mut m = Array2::zeros((n, k));
    for (i, p) in pairs.iter().enumerate() {
        for (j, (lv, mv)) in p.label_vector().iter().zip(p.mask_vector()).enumerate() {
            y[[i, j]] = *lv;
            m[[i, j]] = mv;
        }
    }
    (y, m)
}

/// Eval-mode loss and pooled accuracy (percent, positive iff score >= 0.5).
pub fn evaluate_loss(
    model: &VtadModel,
    pairs: &[PairExample],
    stacks: &StackCache,
    reduction: LossReduction,
) -> Result<(f64, f64)> {
    let refs: Vec<&PairExample> = pairs.iter().collect();
    let mut loss = 0.0;
    let (mut correct, mut total) = (0usize, 0usize);
    let mut weight = 0.0;
    for chunk in refs.chunks(256) {
        let pred = model.predict(chunk, stacks)?;
        let (y, m) = targets(chunk);
        // chunked means recombine exactly only with matching weights
        let w = match reduction {
            LossReduction::Sample => chunk.len() as f64,
            LossReduction::Pooled => m.sum(),
        };
        loss += masked_bce(pred.view(), y.view(), m.view(), reduction)? * w;
        weight += w;
        Zip::from(&pred).and(&y).and(&m).for_each(|&p, &y, &m| {
            if m != 0.0 {
                total += 1;
                if (p >= 0.5) == (y == 1.0) {
                    correct += 1;
                }
            }
        });
    }
    Ok((loss / weight, 100.0 * correct as f64 / total as f64))
}

/// Train per `config`. `val_pairs` may be empty (no validation records).
pub fn train(
    config: &TrainConfig,
    registry: &AttributeRegistry,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    provider: &Provider,
    mut options: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::input("no training pairs"));
    }
    let (_, dim) = provider.expected_shape();
    let stacks = load_stacks(train_pairs.iter().chain(val_pairs), provider, options.manifest)?;
    let fingerprint = config_fingerprint(config, registry);

    let steps_per_epoch = steps_per_epoch(train_pairs.len(), config.batch_size);
    if steps_per_epoch == 0 {
        return Err(Error::input("training set too small for one batch of two"));
    }
    let total_steps = steps_per_epoch * config.epochs;

    let (mut model, mut opt, mut epoch, mut step) = match options.resume.take() {
        Some(ck) => {
            if ck.fingerprint != fingerprint && !ck.forced {
                return Err(Error::config("checkpoint was produced by a different configuration"));
            }
            if ck.model.astp.config.dim != dim {
                return Err(Error::contract(format!(
                    "checkpoint pools {}-dim layers, provider delivers {dim}",
                    ck.model.astp.config.dim
                )));
            }
            if ck.step != ck.epoch * steps_per_epoch {
                return Err(Error::config(format!(
                    "checkpoint at step {} does not sit on an epoch boundary of this data",
                    ck.step
                )));
            }
            (ck.model, ck.optimizer, ck.epoch, ck.step)
        }
        None => {
            let model = VtadModel::init(dim, config.astp_heads, config.variant, config.seed)?;
            let opt = AdamW::new(&model, config.weight_decay);
            (model, opt, 0, 0)
        }
    };

    let last_epoch = options.stop_after_epoch.unwrap_or(config.epochs).min(config.epochs);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    while epoch < last_epoch {
        epoch += 1;
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &format!("shuffle:{epoch}")));
        let mut loss_sum = 0.0;
        let mut lr = config.learning_rate;
        for batch in order.chunks(config.batch_size).take(steps_per_epoch) {
            let pairs: Vec<&PairExample> = batch.iter().map(|&i| &train_pairs[i]).collect();
            let mut rng = rng_for(config.seed, &format!("dropout:{step}"));
            let (logits, cache) = model.forward_train(&pairs, &stacks, &mut rng)?;
            let probs = probabilities(&logits);
            let (y, m) = targets(&pairs);
            let loss = masked_bce(probs.view(), y.view(), m.view(), config.loss_reduction)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} at epoch {epoch}, step {step} (lr {lr:e})"
                )));
            }
            let g = masked_bce_grad_logits(probs.view(), y.view(), m.view(), config.loss_reduction)?;
            let mut grad = model.zeros_like();
            model.backward(&cache, &g, &mut grad, config.astp_trainable);
            model.update_running_stats(&cache);

            lr = match config.scheduler {
                Scheduler::Cosine => cosine_lr(step, total_steps, config.learning_rate, config.eta_min)?,
                Scheduler::Constant => config.learning_rate,
            };
            opt.step(&mut model, &grad, lr, |name| {
                config.astp_trainable || !name.starts_with("astp.")
            });
            step += 1;
            loss_sum += loss;
        }
        let (val_loss, val_acc) = if val_pairs.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(&model, val_pairs, &stacks, config.loss_reduction)?;
            (Some(l), Some(a))
        };
        let record = EpochLog {
            epoch,
            step,
            lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_loss,
            val_acc,
        };
        if let Some(sink) = options.log_sink.as_deref_mut() {
            writeln!(sink, "{}", record.to_json_line())
                .map_err(|e| Error::Environment(format!("cannot write training log: {e}")))?;
        }
        log.push(record);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            registry: registry.names().iter().map(|s| s.to_string()).collect(),
            fingerprint,
            forced: false,
            epoch,
            step,
            model,
            optimizer: opt,
        },
        log,
    })
}

/// Full batches per epoch; a trailing batch of one is dropped because batch
/// statistics need two rows.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    let full = n / batch_size;
    if n % batch_size >= 2 {
        full + 1
    } else {
        full
    }
}
