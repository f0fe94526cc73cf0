//! Training loop: Adam with inverse-sqrt decay, gradient clipping, token
//! budget batching, EMA weight averaging, dev-set validation, and early
//! stopping on dev cross-entropy.
//!
//! Parameter updates are strictly sequential, so two runs with the same
//! config and data produce bit-identical models and logs. Validation BLEU
//! decodes sentences in parallel; the reduction order is fixed, so it does
//! not disturb determinism.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::decode::beam_decode;
use super::transformer::{Model, ModelError};
use crate::bleu::{corpus_bleu, BleuError};
use crate::vocab::TokenId;

/// Dropout draws come from stream 1 of the model seed, batch-order
/// shuffling from stream 2. Stream 0 initialized the parameters.
const DROPOUT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Dev-set quality at one validation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub epoch: usize,
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Dev cross-entropy failed to improve for `early_stop_patience`
    /// consecutive validations.
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<ValidationRecord>,
    pub stop: StopReason,
    pub best_step: usize,
    pub best_ce: f64,
    pub steps: usize,
    pub epochs: usize,
}

/// Inverse-sqrt schedule: flat at `base_lr` until `lr_decay_start` steps,
/// then decays as sqrt(lr_decay_start / step).
pub fn learning_rate(base_lr: f64, lr_decay_start: u64, step: usize) -> f64 {
    base_lr * (lr_decay_start as f64 / step.max(1) as f64).sqrt().min(1.0)
}

/// Sequential greedy fill: a batch grows while the padded token footprint
/// `rows * max(src_len, tgt_len)` stays within the budget. Contents depend
/// only on the pair order, never on the epoch.
fn plan_batches(pairs: &[(Vec<TokenId>, Vec<TokenId>)], batch_tokens: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut widest = 0usize;
    for (i, (s, t)) in pairs.iter().enumerate() {
        let w = widest.max(s.len().max(t.len()).max(1));
        if !current.is_empty() && (current.len() + 1) * w > batch_tokens {
            batches.push(std::mem::take(&mut current));
            widest = 0;
        }
        widest = widest.max(s.len().max(t.len()).max(1));
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &Model) -> Adam {
        let shapes: Vec<Vec<f64>> =
            (0..model.num_tensors()).map(|i| vec![0.0; model.tensor(i).len()]).collect();
        Adam { m: shapes.clone(), v: shapes }
    }
}

/// Exponential moving average of the f64 parameter views, warmed up so the
/// shadow tracks the plain running mean until 1/t drops below 1 - decay.
struct Ema {
    shadow: Vec<Vec<f64>>,
    decay: f64,
    t: usize,
}

impl Ema {
    fn new(model: &Model, decay: f64) -> Ema {
        let shadow = (0..model.num_tensors()).map(|i| model.tensor(i).w().to_vec()).collect();
        Ema { shadow, decay, t: 0 }
    }

    fn update(&mut self, model: &Model) {
        self.t += 1;
        let alpha = (1.0 - self.decay).max(1.0 / self.t as f64);
        for (p, sh) in self.shadow.iter_mut().enumerate() {
            for (s, &w) in sh.iter_mut().zip(model.tensor(p).w()) {
                *s += alpha * (w - *s);
            }
        }
    }
}

fn snapshot_weights(model: &Model) -> Vec<Vec<f32>> {
    (0..model.num_tensors()).map(|i| model.tensor(i).w32().to_vec()).collect()
}

fn install_weights(model: &mut Model, weights: &[Vec<f32>]) {
    for (i, w) in weights.iter().enumerate() {
        model.tensor_mut(i).fill_from_f32(w);
    }
}

fn install_f64(model: &mut Model, weights: &[Vec<f64>]) {
    for (i, w) in weights.iter().enumerate() {
        let cast: Vec<f32> = w.iter().map(|&x| x as f32).collect();
        model.tensor_mut(i).fill_from_f32(&cast);
    }
}

/// Unsmoothed cross-entropy, perplexity, and corpus BLEU of beam decodes
/// against the references. Hypothesis and reference token ids below the
/// first regular id are dropped before scoring.
pub fn evaluate(model: &Model, pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> EvalMetrics {
    if pairs.is_empty() {
        return EvalMetrics { cross_entropy: 0.0, perplexity: 1.0, bleu: 0.0 };
    }
    let mut ce_sum = 0.0;
    let mut tokens = 0usize;
    for batch in plan_batches(pairs, model.cfg.batch_tokens) {
        let slice: Vec<(&[TokenId], &[TokenId])> =
            batch.iter().map(|&i| (pairs[i].0.as_slice(), pairs[i].1.as_slice())).collect();
        let n: usize = batch.iter().map(|&i| pairs[i].1.len().max(1)).sum();
        ce_sum += model.cross_entropy(&slice) * n as f64;
        tokens += n;
    }
    let ce = ce_sum / tokens as f64;

    let strip = |ids: &[TokenId]| -> Vec<String> {
        ids.iter().filter(|&&t| t >= crate::vocab::SPECIALS.len()).map(|t| t.to_string()).collect()
    };
    let hyps: Vec<Vec<String>> = pairs
        .par_iter()
        .map(|(s, _)| {
            let out = beam_decode(
                model,
                s,
                model.cfg.beam_size,
                model.cfg.length_norm_alpha,
                model.cfg.max_length,
            );
            strip(&out)
        })
        .collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, t)| strip(t)).collect();
    let bleu = match corpus_bleu(&hyps, &refs) {
        Ok(report) => report.bleu,
        Err(BleuError::UndefinedDenominator { .. }) => 0.0,
        Err(_) => 0.0,
    };
    EvalMetrics { cross_entropy: ce, perplexity: ce.exp(), bleu }
}

/// Trains in place until early stopping or `max_epochs`, then restores the
/// weights of the best validation point. Pairs longer than `max_length` on
/// either side are skipped up front.
pub fn train(
    model: &mut Model,
    train_pairs: &[(Vec<TokenId>, Vec<TokenId>)],
    dev_pairs: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<TrainLog, TrainError> {
    let cfg = model.cfg.clone();
    let usable: Vec<(Vec<TokenId>, Vec<TokenId>)> = train_pairs
        .iter()
        .filter(|(s, t)| s.len() <= cfg.max_length && t.len() <= cfg.max_length && !t.is_empty())
        .cloned()
        .collect();
    let batches = plan_batches(&usable, cfg.batch_tokens);

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(ORDER_STREAM);

    let mut adam = Adam::new(model);
    let mut ema = if cfg.ema { Some(Ema::new(model, cfg.ema_decay)) } else { None };

    let mut log = TrainLog {
        records: Vec::new(),
        stop: StopReason::MaxEpochs,
        best_step: 0,
        best_ce: f64::INFINITY,
        steps: 0,
        epochs: 0,
    };
    let mut best_weights: Option<Vec<Vec<f32>>> = None;
    let mut patience = 0usize;
    let mut stopped = false;

    let validate = |model: &mut Model,
                        log: &mut TrainLog,
                        ema: &Option<Ema>,
                        patience: &mut usize,
                        best_weights: &mut Option<Vec<Vec<f32>>>,
                        step: usize,
                        epoch: usize|
     -> bool {
        let stash = ema.as_ref().map(|e| {
            let raw = snapshot_weights(model);
            install_f64(model, &e.shadow);
            raw
        });
        let metrics = evaluate(model, dev_pairs);
        let eval_weights = snapshot_weights(model);
        if let Some(raw) = stash {
            install_weights(model, &raw);
        }
        log.records.push(ValidationRecord {
            step,
            epoch,
            cross_entropy: metrics.cross_entropy,
            perplexity: metrics.perplexity,
            bleu: metrics.bleu,
        });
        if metrics.cross_entropy < log.best_ce {
            log.best_ce = metrics.cross_entropy;
            log.best_step = step;
            *best_weights = Some(eval_weights);
            *patience = 0;
            false
        } else {
            *patience += 1;
            *patience >= cfg.early_stop_patience
        }
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        log.epochs = epoch;
        let mut order: Vec<usize> = (0..batches.len()).collect();
        order.shuffle(&mut order_rng);
        for bi in order {
            let slice: Vec<(&[TokenId], &[TokenId])> = batches[bi]
                .iter()
                .map(|&i| (usable[i].0.as_slice(), usable[i].1.as_slice()))
                .collect();
            let step = log.steps + 1;
            let rng = if cfg.dropout > 0.0 { Some(&mut dropout_rng) } else { None };
            let loss = model.forward_backward(&slice, rng)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }

            let mut norm_sq = 0.0;
            for p in 0..model.num_tensors() {
                for &g in model.gradient(p) {
                    norm_sq += g * g;
                }
            }
            if !norm_sq.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            let scale =
                if norm_sq.sqrt() > cfg.clip_norm { cfg.clip_norm / norm_sq.sqrt() } else { 1.0 };

            let lr = learning_rate(cfg.base_lr, cfg.lr_decay_start, step);
            let bc1 = 1.0 - cfg.adam_beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.adam_beta2.powi(step as i32);
            for p in 0..model.num_tensors() {
                let grad: Vec<f64> = model.gradient(p).iter().map(|g| g * scale).collect();
                let (m, v) = (&mut adam.m[p], &mut adam.v[p]);
                let param = model.tensor_mut(p);
                for (i, &g) in grad.iter().enumerate() {
                    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
                    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
                    let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
                    param.set(i, param.get(i) - update);
                }
            }
            let overflowed = (0..model.num_tensors())
                .any(|p| model.tensor(p).w32().iter().any(|x| !x.is_finite()));
            if overflowed {
                return Err(TrainError::Diverged { step });
            }
            if let Some(e) = ema.as_mut() {
                e.update(model);
            }
            log.steps = step;

            if step as u64 % cfg.valid_every == 0
                && validate(model, &mut log, &ema, &mut patience, &mut best_weights, step, epoch)
            {
                log.stop = StopReason::EarlyStop;
                stopped = true;
                break 'epochs;
            }
        }
    }

    let unvalidated = log.records.last().map(|r| r.step != log.steps).unwrap_or(true);
    if !stopped && unvalidated {
        let (step, epoch) = (log.steps, log.epochs.max(1));
        validate(model, &mut log, &ema, &mut patience, &mut best_weights, step, epoch);
    }
    if let Some(best) = best_weights {
        install_weights(model, &best);
    } else if let Some(e) = ema {
        install_f64(model, &e.shadow);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::vocab::EOS;

    #[test]
    fn schedule_is_flat_then_inverse_sqrt() {
        assert!((learning_rate(0.0003, 16000, 8000) - 0.0003).abs() < 1e-15);
        assert!((learning_rate(0.0003, 16000, 16000) - 0.0003).abs() < 1e-15);
        assert!((learning_rate(0.0003, 16000, 64000) - 0.00015).abs() < 1e-15);
        let lr = learning_rate(0.0003, 16000, 32000);
        assert!((lr - 0.0003 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batches_respect_token_budget_and_order() {
        let mk = |n: usize| (vec![5; n], vec![6; n]);
        let pairs: Vec<_> = [3usize, 4, 2, 9, 1, 1, 1].iter().map(|&n| mk(n)).collect();
        let batches = plan_batches(&pairs, 8);
        // widest member decides the footprint of every row in the batch
        assert_eq!(batches, vec![vec![0, 1], vec![2], vec![3], vec![4, 5, 6]]);
    }

    #[test]
    fn single_oversized_pair_still_forms_a_batch() {
        let pairs = vec![(vec![5; 40], vec![6; 40])];
        assert_eq!(plan_batches(&pairs, 8), vec![vec![0]]);
    }

    #[test]
    fn uniform_model_has_vocab_sized_perplexity() {
        let cfg = ModelConfig {
            model_dim: 8,
            ff_dim: 16,
            heads: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let mut m = init_model(&cfg, 12, 12).unwrap();
        for i in 0..m.num_tensors() {
            let n = m.tensor(i).len();
            m.tensor_mut(i).fill_from_f32(&vec![0.0; n]);
        }
        let pairs = vec![(vec![5, 6, EOS], vec![7, 8, EOS])];
        let metrics = evaluate(&m, &pairs);
        assert!((metrics.cross_entropy - 12f64.ln()).abs() < 1e-9);
        assert!((metrics.perplexity - 12.0).abs() < 1e-6);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = ModelConfig {
            model_dim: 16,
            ff_dim: 32,
            heads: 2,
            dropout: 0.1,
            base_lr: 0.01,
            lr_decay_start: 1000,
            batch_tokens: 64,
            valid_every: 10,
            max_epochs: 8,
            early_stop_patience: 50,
            beam_size: 2,
            max_length: 16,
            seed: 5,
            ..ModelConfig::default()
        };
        // toy copy task over ids 5..9
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..24)
            .map(|i| {
                let seq: Vec<usize> = (0..4).map(|j| 5 + (i + j) % 5).collect();
                let mut with_eos = seq.clone();
                with_eos.push(EOS);
                (with_eos.clone(), with_eos)
            })
            .collect();
        let dev = pairs[..6].to_vec();

        let mut m1 = init_model(&cfg, 12, 12).unwrap();
        let log1 = train(&mut m1, &pairs, &dev).unwrap();
        let mut m2 = init_model(&cfg, 12, 12).unwrap();
        let log2 = train(&mut m2, &pairs, &dev).unwrap();
        assert_eq!(log1, log2);
        for i in 0..m1.num_tensors() {
            assert_eq!(m1.tensor(i).w32(), m2.tensor(i).w32(), "tensor {i} differs");
        }
        let first = log1.records.first().unwrap().cross_entropy;
        let best = log1.best_ce;
        assert!(best < first, "no improvement: first {first}, best {best}");
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = ModelConfig {
            model_dim: 8,
            ff_dim: 16,
            heads: 2,
            dropout: 0.0,
            base_lr: 1e39,
            max_epochs: 2,
            valid_every: 1000,
            ..ModelConfig::default()
        };
        let mut m = init_model(&cfg, 12, 12).unwrap();
        let pairs = vec![(vec![5, EOS], vec![6, EOS]); 4];
        match train(&mut m, &pairs, &pairs) {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
