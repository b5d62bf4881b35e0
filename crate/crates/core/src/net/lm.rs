use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkit::{softmax_in_place, Dense2D, ParamSet, Parameter, Real, PROB_FLOOR};

use super::lstm::LstmCache;
use super::{LstmLayer, LstmState, Mode, ModelConfig, NetError, TokenBatch};

/// Next-token language model: embedding, stacked LSTM, vocabulary softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LmNetwork<T: Real = f32> {
    pub config: ModelConfig,
    pub embedding: Parameter<T>,
    pub layers: Vec<LstmLayer<T>>,
    pub lm_head: Parameter<T>,
    pub lm_bias: Parameter<T>,
}

/// Activations of the shared embedding + LSTM stack.
#[derive(Debug, Clone)]
pub(crate) struct BackboneTrace<T: Real> {
    pub batch: TokenBatch,
    pub layers: Vec<LstmCache<T>>,
    /// Inverted-dropout multipliers applied to the outputs of every layer but the last.
    pub masks: Vec<Option<Vec<T>>>,
}

impl<T: Real> BackboneTrace<T> {
    pub fn top(&self) -> &Dense2D<T> {
        &self.layers.last().expect("at least one layer").h
    }
}

/// Output of [`LmNetwork::forward_lm_batch`].
#[derive(Debug, Clone)]
pub struct LmOutput<T: Real = f32> {
    /// Next-token distributions, time-major (`t * batch + b`).
    pub probs: Dense2D<T>,
    /// State after each row's last real token, one entry per layer.
    pub final_state: Vec<LstmState<T>>,
    pub(crate) trace: Option<BackboneTrace<T>>,
    batch: usize,
}

impl<T: Real> LmOutput<T> {
    pub fn distribution(&self, b: usize, t: usize) -> &[T] {
        self.probs.row(t * self.batch + b)
    }

    pub fn has_trace(&self) -> bool {
        self.trace.is_some()
    }
}

impl<T: Real> LmNetwork<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Parameter::glorot("embedding", config.vocab_size, config.embed_dim, &mut rng);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let input = if l == 0 { config.embed_dim } else { config.hidden_dim };
            layers.push(LstmLayer::new(&format!("lstm{l}"), input, config.hidden_dim, &mut rng));
        }
        let lm_head = Parameter::glorot("lm_head.weight", config.hidden_dim, config.vocab_size, &mut rng);
        let lm_bias = Parameter::zeros("lm_head.bias", 1, config.vocab_size);
        Ok(Self { config: ModelConfig { num_classes: 0, ..config }, embedding, layers, lm_head, lm_bias })
    }

    pub fn cast<U: Real>(&self) -> LmNetwork<U> {
        LmNetwork {
            config: self.config,
            embedding: self.embedding.cast(),
            layers: self.layers.iter().map(LstmLayer::cast).collect(),
            lm_head: self.lm_head.cast(),
            lm_bias: self.lm_bias.cast(),
        }
    }

    pub fn zero_state(&self, batch: usize) -> Vec<LstmState<T>> {
        (0..self.layers.len()).map(|_| LstmState::zeros(batch, self.config.hidden_dim)).collect()
    }

    pub(crate) fn backbone_params(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend(l.params());
        }
        out
    }

    pub(crate) fn forward_backbone(
        &self,
        batch: &TokenBatch,
        init: Option<&[LstmState<T>]>,
        mode: Mode,
    ) -> Result<(BackboneTrace<T>, Vec<LstmState<T>>), NetError> {
        batch.check_vocab(self.config.vocab_size)?;
        let (bsz, steps) = (batch.batch(), batch.steps());
        if let Some(init) = init {
            if init.len() != self.layers.len() || init.iter().any(|s| s.batch() != bsz) {
                return Err(NetError::Dimension("initial state does not match batch".into()));
            }
        }
        let n = bsz * steps;
        let ed = self.config.embed_dim;
        let mut x = Dense2D::zeros(n, ed);
        for (row, &tok) in batch.time_major().iter().enumerate() {
            x.row_mut(row).copy_from_slice(self.embedding.value.row(tok));
        }

        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let keep = self.config.dropout_keep;
        let zeros = self.zero_state(bsz);
        let init = init.unwrap_or(&zeros);

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let cache = layer.forward_seq(&x, bsz, steps, &init[l]);
            finals.push(final_state(&cache, batch));
            let last = l + 1 == self.layers.len();
            let mut next = cache.h.clone();
            let mask = match rng.as_mut() {
                Some(rng) if !last && keep < 1.0 => {
                    let scale = T::from_f64c(1.0 / keep);
                    let m: Vec<T> = (0..next.len())
                        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    for (v, k) in next.data_mut().iter_mut().zip(&m) {
                        *v = *v * *k;
                    }
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            caches.push(cache);
            x = next;
        }
        Ok((BackboneTrace { batch: batch.clone(), layers: caches, masks }, finals))
    }

    /// Propagates `d_top` (gradient w.r.t. the top layer outputs) down the stack.
    pub(crate) fn backward_backbone(&mut self, trace: &BackboneTrace<T>, d_top: Dense2D<T>) {
        let mut dh = d_top;
        for l in (0..self.layers.len()).rev() {
            let dx = self.layers[l].backward_seq(&trace.layers[l], &dh);
            if l > 0 {
                dh = dx;
                if let Some(mask) = &trace.masks[l - 1] {
                    for (v, k) in dh.data_mut().iter_mut().zip(mask) {
                        *v = *v * *k;
                    }
                }
            } else {
                for (row, &tok) in trace.batch.time_major().iter().enumerate() {
                    if !trace.batch.is_valid(row) {
                        continue;
                    }
                    let g = self.embedding.grad.row_mut(tok);
                    for (a, d) in g.iter_mut().zip(dx.row(row)) {
                        *a = *a + *d;
                    }
                }
            }
        }
    }

    /// Next-token distributions for a single sequence.
    pub fn forward_lm(&self, tokens: &[usize], mode: Mode) -> Result<LmOutput<T>, NetError> {
        self.forward_lm_batch(&TokenBatch::single(tokens)?, None, mode)
    }

    pub fn forward_lm_batch(
        &self,
        batch: &TokenBatch,
        init: Option<&[LstmState<T>]>,
        mode: Mode,
    ) -> Result<LmOutput<T>, NetError> {
        let (trace, final_state) = self.forward_backbone(batch, init, mode)?;
        let top = trace.top();
        let v = self.config.vocab_size;
        let mut probs = Dense2D::zeros(top.rows(), v);
        crate::numkit::gemm_into(&mut probs, top, false, &self.lm_head.value, false, T::one(), T::zero())?;
        probs.add_row(self.lm_bias.value.data());
        for r in 0..probs.rows() {
            softmax_in_place(probs.row_mut(r));
        }
        let trace = matches!(mode, Mode::Train { .. }).then_some(trace);
        Ok(LmOutput { probs, final_state, trace, batch: batch.batch() })
    }

    /// Mean next-token cross-entropy over the real (non-pad) positions.
    pub fn lm_loss(&self, out: &LmOutput<T>, targets: &TokenBatch) -> Result<f64, NetError> {
        check_targets(out, targets)?;
        let mut total = 0.0;
        for row in 0..out.probs.rows() {
            if targets.is_valid(row) {
                let t = targets.time_major()[row];
                if t >= self.config.vocab_size {
                    return Err(NetError::TokenIndex { token: t, position: row / out.batch, vocab: self.config.vocab_size });
                }
                total -= out.probs.get(row, t).to_f64c().max(PROB_FLOOR).ln();
            }
        }
        Ok(total / targets.valid_count() as f64)
    }

    /// Accumulates gradients of the mean cross-entropy into every parameter
    /// and returns the loss. Gradients are not clipped here.
    pub fn backward_lm(&mut self, out: &LmOutput<T>, targets: &TokenBatch) -> Result<f64, NetError> {
        let trace = out.trace.as_ref().ok_or(NetError::State)?;
        let loss = self.lm_loss(out, targets)?;
        let scale = T::from_f64c(1.0 / targets.valid_count() as f64);
        let mut dlogits = out.probs.clone();
        for row in 0..dlogits.rows() {
            let r = dlogits.row_mut(row);
            if targets.is_valid(row) {
                let t = targets.time_major()[row];
                r[t] = r[t] - T::one();
                r.iter_mut().for_each(|v| *v = *v * scale);
            } else {
                r.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        let top = trace.top();
        crate::numkit::gemm_into(&mut self.lm_head.grad, top, true, &dlogits, false, T::one(), T::one())?;
        dlogits.sum_rows_into(self.lm_bias.grad.data_mut());
        let mut d_top = Dense2D::zeros(top.rows(), self.config.hidden_dim);
        crate::numkit::gemm_into(&mut d_top, &dlogits, false, &self.lm_head.value, true, T::one(), T::zero())?;
        self.backward_backbone(trace, d_top);
        Ok(loss)
    }
}

fn check_targets<T: Real>(out: &LmOutput<T>, targets: &TokenBatch) -> Result<(), NetError> {
    if targets.batch() * targets.steps() != out.probs.rows() || targets.batch() != out.batch {
        return Err(NetError::Dimension(format!(
            "targets {}x{} do not match outputs with {} rows",
            targets.steps(),
            targets.batch(),
            out.probs.rows()
        )));
    }
    Ok(())
}

fn final_state<T: Real>(cache: &LstmCache<T>, batch: &TokenBatch) -> LstmState<T> {
    let hd = cache.h.cols();
    let mut st = LstmState::zeros(batch.batch(), hd);
    for (b, &len) in batch.lengths().iter().enumerate() {
        let row = (len - 1) * batch.batch() + b;
        st.h.row_mut(b).copy_from_slice(cache.h.row(row));
        st.c.row_mut(b).copy_from_slice(cache.c.row(row));
    }
    st
}

impl<T: Real> ParamSet<T> for LmNetwork<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = self.backbone_params();
        out.push(&self.lm_head);
        out.push(&self.lm_bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.push(&mut self.lm_head);
        out.push(&mut self.lm_bias);
        out
    }
}
