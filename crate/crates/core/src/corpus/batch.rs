use crate::net::TokenBatch;

use super::{EncodedSentence, Label};

/// One truncated-BPTT window. Row `b` continues row `b` of the previous
/// window of the same stream; rows only ever drop off the end.
#[derive(Debug, Clone, PartialEq)]
pub struct LmBatch {
    pub stream: usize,
    pub window: usize,
    pub inputs: TokenBatch,
    pub targets: TokenBatch,
}

impl LmBatch {
    /// True for the first window of a stream, where recurrent state resets.
    pub fn starts_stream(&self) -> bool {
        self.window == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmBatches {
    pub batches: Vec<LmBatch>,
    /// Streams shorter than two tokens.
    pub skipped: usize,
}

impl LmBatches {
    pub fn target_count(&self) -> usize {
        self.batches.iter().map(|b| b.targets.valid_count()).sum()
    }
}

/// Cuts each stream into `batch_size` contiguous lanes of equal length (the
/// last lane may be shorter) and walks them in windows of `bptt_window`
/// steps. Targets are the inputs shifted by one token; across all windows
/// every stream position after the first is a target exactly once.
pub fn make_lm_batches(streams: &[Vec<usize>], batch_size: usize, bptt_window: usize) -> LmBatches {
    assert!(batch_size > 0 && bptt_window > 0, "batch_size and bptt_window must be positive");
    let mut out = LmBatches::default();
    for (si, stream) in streams.iter().enumerate() {
        if stream.len() < 2 {
            out.skipped += 1;
            continue;
        }
        let m = stream.len() - 1;
        let lane_len = m.div_ceil(batch_size);
        let lanes: Vec<(usize, usize)> = (0..m.div_ceil(lane_len))
            .map(|k| (k * lane_len, ((k + 1) * lane_len).min(m)))
            .collect();
        for (w, off) in (0..lane_len).step_by(bptt_window).enumerate() {
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for &(start, end) in &lanes {
                let lo = start + off;
                if lo >= end {
                    break;
                }
                let hi = (lo + bptt_window).min(end);
                inputs.push(&stream[lo..hi]);
                targets.push(&stream[lo + 1..hi + 1]);
            }
            out.batches.push(LmBatch {
                stream: si,
                window: w,
                inputs: TokenBatch::from_rows(&inputs).expect("rows are non-empty"),
                targets: TokenBatch::from_rows(&targets).expect("rows are non-empty"),
            });
        }
    }
    if out.skipped > 0 {
        log::warn!("skipped {} stream(s) shorter than two tokens", out.skipped);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
}

/// Consecutive batches in partition order, padded to each batch's longest row.
pub fn make_cls_batches(items: &[EncodedSentence], batch_size: usize) -> Vec<ClsBatch> {
    assert!(batch_size > 0, "batch_size must be positive");
    items
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&[usize]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
            ClsBatch {
                tokens: TokenBatch::from_rows(&rows).expect("encoded sentences are non-empty"),
                labels: chunk.iter().map(|s| Label::index(s.label)).collect(),
            }
        })
        .collect()
}
