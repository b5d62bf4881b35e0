use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_lm_batches, LmBatches, Vocabulary};
use crate::net::{LmNetwork, LstmState, Mode, GRAD_CLIP_NORM};
use crate::numkit::{adam_step, clip_grad_norm, AdamConfig, ParamSet};

use super::{derive_seed, EpochRecord, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmStageSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Parallel lanes per corpus stream.
    pub batch_size: usize,
}

impl Default for LmStageSettings {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 2e-3, batch_size: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    /// Weights from the epoch with the lowest validation loss.
    pub network: LmNetwork<f32>,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
    pub train_tokens: usize,
}

/// Deterministic held-out split: `max(1, round(fraction·n))` sentences go to
/// validation. Needs at least two sentences.
pub fn holdout(sentences: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>), PipelineError> {
    if sentences.len() < 2 {
        return Err(PipelineError::Input(format!("corpus has {} sentence(s), need at least 2", sentences.len())));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(PipelineError::Input(format!("valid fraction {fraction} not in [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..sentences.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_valid = ((fraction * sentences.len() as f64).round() as usize).clamp(1, sentences.len() - 1);
    let (v, t) = idx.split_at(n_valid);
    let mut v = v.to_vec();
    let mut t = t.to_vec();
    v.sort_unstable();
    t.sort_unstable();
    Ok((t.iter().map(|&i| sentences[i].clone()).collect(), v.iter().map(|&i| sentences[i].clone()).collect()))
}

fn stream_of(sentences: &[String], vocab: &Vocabulary) -> Vec<usize> {
    sentences.iter().flat_map(|s| vocab.encode_sentence(s)).collect()
}

/// Token-weighted mean loss over `batches`, carrying state between windows.
fn evaluate(net: &LmNetwork<f32>, batches: &LmBatches) -> Result<f64, PipelineError> {
    let mut state: Option<Vec<LstmState<f32>>> = None;
    let (mut total, mut count) = (0.0, 0usize);
    for b in &batches.batches {
        let init = carried(&state, b.starts_stream(), b.inputs.batch());
        let out = net.forward_lm_batch(&b.inputs, init.as_deref(), Mode::Eval)?;
        let n = b.targets.valid_count();
        total += net.lm_loss(&out, &b.targets)? * n as f64;
        count += n;
        state = Some(out.final_state);
    }
    Ok(total / count.max(1) as f64)
}

fn carried(state: &Option<Vec<LstmState<f32>>>, fresh: bool, rows: usize) -> Option<Vec<LstmState<f32>>> {
    match state {
        Some(s) if !fresh => Some(s.iter().map(|l| l.truncated(rows)).collect()),
        _ => None,
    }
}

/// Trains `init` as a language model on `train`, logging validation
/// perplexity after every epoch and once before the first.
pub fn run_pretrain_stage(
    stage_id: &str,
    init: LmNetwork<f32>,
    train: &[String],
    valid: &[String],
    vocab: &Vocabulary,
    settings: &LmStageSettings,
    seed: u64,
) -> Result<StageResult, PipelineError> {
    if train.is_empty() || valid.is_empty() {
        return Err(PipelineError::Input(format!("stage {stage_id}: empty training or validation corpus")));
    }
    if init.config.vocab_size != vocab.len() {
        return Err(PipelineError::Input(format!(
            "stage {stage_id}: network vocabulary {} differs from shared vocabulary {}",
            init.config.vocab_size,
            vocab.len()
        )));
    }
    let window = init.config.bptt_window;
    let train_batches = make_lm_batches(&[stream_of(train, vocab)], settings.batch_size, window);
    let valid_batches = make_lm_batches(&[stream_of(valid, vocab)], settings.batch_size, window);
    let train_tokens = train_batches.target_count();
    let adam = AdamConfig::with_lr(settings.learning_rate);

    let mut net = init;
    for p in net.params_mut() {
        p.reset_optimizer();
    }
    let started = Instant::now();
    let v0 = evaluate(&net, &valid_batches)?;
    let mut records = vec![record(stage_id, 0, None, v0, &started)];
    let (mut best, mut best_loss, mut best_epoch) = (net.clone(), v0, 0);

    for epoch in 1..=settings.epochs {
        let mut state: Option<Vec<LstmState<f32>>> = None;
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, b) in train_batches.batches.iter().enumerate() {
            let init = carried(&state, b.starts_stream(), b.inputs.batch());
            let mode = Mode::Train { seed: derive_seed(seed, ((epoch as u64) << 32) | bi as u64) };
            let out = net.forward_lm_batch(&b.inputs, init.as_deref(), mode)?;
            let loss = net.backward_lm(&out, &b.targets)?;
            let mut params = net.params_mut();
            clip_grad_norm(&mut params, GRAD_CLIP_NORM);
            for p in params {
                adam_step(p, &adam);
                p.zero_grad();
            }
            let n = b.targets.valid_count();
            total += loss * n as f64;
            count += n;
            state = Some(out.final_state);
        }
        let vl = evaluate(&net, &valid_batches)?;
        records.push(record(stage_id, epoch, Some(total / count.max(1) as f64), vl, &started));
        ::log::info!("{stage_id} epoch {epoch}: valid ppl {:.3}", vl.exp());
        if vl < best_loss {
            best = net.clone();
            best_loss = vl;
            best_epoch = epoch;
        }
    }
    Ok(StageResult { network: best, best_epoch, records, train_tokens })
}

fn record(stage: &str, epoch: usize, train_loss: Option<f64>, valid_loss: f64, started: &Instant) -> EpochRecord {
    EpochRecord {
        stage: stage.to_string(),
        epoch,
        train_loss,
        valid_loss,
        valid_perplexity: Some(valid_loss.exp()),
        valid_macro_f1: None,
        wall_ms: started.elapsed().as_millis() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_deterministic_and_disjoint() {
        let s: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let (t, v) = holdout(&s, 0.1, 4).unwrap();
        assert_eq!((t.len(), v.len()), (18, 2));
        assert!(v.iter().all(|x| !t.contains(x)));
        assert_eq!(holdout(&s, 0.1, 4).unwrap(), (t, v));
        assert!(holdout(&s[..1], 0.1, 0).is_err());
    }
}
