use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_cls_batches, DatasetSplit, EncodedSentence, Label};
use crate::metrics::{confusion, full_report, prf, Averaging, EvalReport};
use crate::net::{attach_classifier_head, ClassifierNetwork, LmNetwork, Mode, ModelConfig, GRAD_CLIP_NORM};
use crate::numkit::{adam_step, clip_grad_norm, AdamConfig, ParamSet, PROB_FLOOR};

use super::{derive_seed, init_seed, EpochRecord, PipelineError, TAG_SHUFFLE};

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneSettings {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a validation macro-F1 improvement before stopping.
    pub patience: usize,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self { max_epochs: 40, learning_rate: 2e-3, batch_size: 16, patience: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    /// Weights from the epoch with the best validation macro-F1.
    pub network: ClassifierNetwork<f32>,
    /// Scores on the test partition.
    pub report: EvalReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub records: Vec<EpochRecord>,
}

/// Class distributions in input order.
pub fn predict(net: &ClassifierNetwork<f32>, items: &[EncodedSentence]) -> Result<Vec<Vec<f64>>, PipelineError> {
    let mut out = Vec::with_capacity(items.len());
    for b in make_cls_batches(items, EVAL_BATCH) {
        let o = net.forward_batch(&b.tokens, Mode::Eval)?;
        for r in 0..o.probs.rows() {
            out.push(o.probs.row(r).iter().map(|&p| p as f64).collect());
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// (mean cross-entropy, macro-F1)
fn score(net: &ClassifierNetwork<f32>, items: &[EncodedSentence]) -> Result<(f64, f64), PipelineError> {
    let probs = predict(net, items)?;
    let golds: Vec<usize> = items.iter().map(|s| s.label.index()).collect();
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let loss = golds.iter().zip(&probs).map(|(&g, p)| -p[g].max(PROB_FLOOR).ln()).sum::<f64>() / items.len() as f64;
    let cm = confusion(&golds, &preds, &Label::names())?;
    Ok((loss, prf(&cm, Averaging::Macro)?.f1))
}

pub fn test_report(net: &ClassifierNetwork<f32>, items: &[EncodedSentence]) -> Result<EvalReport, PipelineError> {
    let probs = predict(net, items)?;
    let golds: Vec<usize> = items.iter().map(|s| s.label.index()).collect();
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok(full_report(&golds, &preds, &probs, &Label::names())?)
}

/// Attaches a zeroed class head to `lm`, freezes the LM softmax and trains
/// everything else on the training partition. Stops once validation macro-F1
/// has not improved for `patience` epochs.
pub fn finetune_classifier(
    lm: LmNetwork<f32>,
    split: &DatasetSplit<EncodedSentence>,
    settings: &FinetuneSettings,
    seed: u64,
) -> Result<FinetuneResult, PipelineError> {
    let net = attach_classifier_head(lm, Label::COUNT)?;
    train_classifier("finetune", net, split, settings, seed)
}

/// Same training as [`finetune_classifier`] from randomly initialized weights
/// (drawn from `init_seed(seed)`) with the LM softmax left trainable.
pub fn ablate_no_pretrain(
    config: ModelConfig,
    split: &DatasetSplit<EncodedSentence>,
    settings: &FinetuneSettings,
    seed: u64,
) -> Result<FinetuneResult, PipelineError> {
    let config = ModelConfig { num_classes: 0, ..config };
    let mut net = attach_classifier_head(LmNetwork::new(config, init_seed(seed))?, Label::COUNT)?;
    net.lm_head_frozen = false;
    train_classifier("no-pretrain", net, split, settings, seed)
}

fn head_bits(net: &ClassifierNetwork<f32>) -> Vec<u32> {
    let b = &net.backbone;
    b.lm_head.value.data().iter().chain(b.lm_bias.value.data()).map(|v| v.to_bits()).collect()
}

fn train_classifier(
    stage_id: &str,
    mut net: ClassifierNetwork<f32>,
    split: &DatasetSplit<EncodedSentence>,
    settings: &FinetuneSettings,
    seed: u64,
) -> Result<FinetuneResult, PipelineError> {
    split.require_all_classes()?;
    if split.valid.is_empty() || split.test.is_empty() {
        return Err(PipelineError::Input("validation and test partitions must be non-empty".into()));
    }
    let frozen = net.lm_head_frozen.then(|| head_bits(&net));
    let adam = AdamConfig::with_lr(settings.learning_rate);
    for p in net.params_mut() {
        p.reset_optimizer();
    }
    let started = Instant::now();
    let (vl, vf) = score(&net, &split.valid)?;
    let mut records = vec![record(stage_id, 0, None, vl, vf, &started)];
    let (mut best, mut best_f1, mut best_epoch) = (net.clone(), vf, 0);
    let mut epochs_run = 0;

    for epoch in 1..=settings.max_epochs {
        let mut order: Vec<&EncodedSentence> = split.train.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SHUFFLE | epoch as u64)));
        let order: Vec<EncodedSentence> = order.into_iter().cloned().collect();
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, b) in make_cls_batches(&order, settings.batch_size).iter().enumerate() {
            let mode = Mode::Train { seed: derive_seed(seed, ((epoch as u64) << 32) | (1 << 31) | bi as u64) };
            let out = net.forward_batch(&b.tokens, mode)?;
            let loss = net.backward_classifier(&out, &b.labels)?;
            let mut params = net.params_mut();
            clip_grad_norm(&mut params, GRAD_CLIP_NORM);
            for p in params {
                adam_step(p, &adam);
                p.zero_grad();
            }
            total += loss * b.labels.len() as f64;
            count += b.labels.len();
        }
        epochs_run = epoch;
        if frozen.as_ref().is_some_and(|bits| *bits != head_bits(&net)) {
            return Err(PipelineError::Freeze { epoch });
        }
        let (vl, vf) = score(&net, &split.valid)?;
        records.push(record(stage_id, epoch, Some(total / count as f64), vl, vf, &started));
        ::log::info!("{stage_id} epoch {epoch}: valid macro-F1 {vf:.4}");
        if vf > best_f1 {
            best = net.clone();
            best_f1 = vf;
            best_epoch = epoch;
        } else if epoch - best_epoch >= settings.patience {
            break;
        }
    }
    let report = test_report(&best, &split.test)?;
    Ok(FinetuneResult { network: best, report, best_epoch, epochs_run, records })
}

fn record(stage: &str, epoch: usize, train_loss: Option<f64>, vl: f64, vf: f64, started: &Instant) -> EpochRecord {
    EpochRecord {
        stage: stage.to_string(),
        epoch,
        train_loss,
        valid_loss: vl,
        valid_perplexity: None,
        valid_macro_f1: Some(vf),
        wall_ms: started.elapsed().as_millis() as u64,
    }
}
