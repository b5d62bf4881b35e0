use crate::numkit::{gemm_into, softmax_in_place, Dense2D, ParamSet, Parameter, Real, PROB_FLOOR};

use super::lm::BackboneTrace;
use super::{LmNetwork, Mode, NetError, TokenBatch};

/// Language-model backbone with a linear + class-softmax head on top of the
/// last layer's hidden state at each sentence's final token.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNetwork<T: Real = f32> {
    pub backbone: LmNetwork<T>,
    pub class_linear: Parameter<T>,
    pub class_bias: Parameter<T>,
    pub lm_head_frozen: bool,
}

#[derive(Debug, Clone)]
pub struct ClsOutput<T: Real = f32> {
    /// `batch x num_classes` distributions.
    pub probs: Dense2D<T>,
    /// `batch x hidden` features fed to the head.
    pub features: Dense2D<T>,
    pub(crate) trace: Option<BackboneTrace<T>>,
}

/// Moves `lm` under a freshly zeroed class head and freezes the LM softmax.
pub fn attach_classifier_head<T: Real>(lm: LmNetwork<T>, num_classes: usize) -> Result<ClassifierNetwork<T>, NetError> {
    if !(2..=64).contains(&num_classes) {
        return Err(NetError::Config(format!("num_classes {num_classes} not in [2, 64]")));
    }
    let hd = lm.config.hidden_dim;
    let mut backbone = lm;
    backbone.config.num_classes = num_classes;
    Ok(ClassifierNetwork {
        backbone,
        class_linear: Parameter::zeros("class.weight", hd, num_classes),
        class_bias: Parameter::zeros("class.bias", 1, num_classes),
        lm_head_frozen: true,
    })
}

impl<T: Real> ClassifierNetwork<T> {
    pub fn num_classes(&self) -> usize {
        self.class_linear.shape().1
    }

    pub fn cast<U: Real>(&self) -> ClassifierNetwork<U> {
        ClassifierNetwork {
            backbone: self.backbone.cast(),
            class_linear: self.class_linear.cast(),
            class_bias: self.class_bias.cast(),
            lm_head_frozen: self.lm_head_frozen,
        }
    }

    /// Class distribution for a single sentence.
    pub fn forward_classifier(&self, tokens: &[usize], mode: Mode) -> Result<Vec<T>, NetError> {
        if tokens.is_empty() {
            return Err(NetError::Input("empty token sequence".into()));
        }
        let out = self.forward_batch(&TokenBatch::single(tokens)?, mode)?;
        Ok(out.probs.row(0).to_vec())
    }

    pub fn forward_batch(&self, batch: &TokenBatch, mode: Mode) -> Result<ClsOutput<T>, NetError> {
        let (trace, finals) = self.backbone.forward_backbone(batch, None, mode)?;
        let features = finals.last().expect("layers").h.clone();
        let mut probs = Dense2D::zeros(batch.batch(), self.num_classes());
        gemm_into(&mut probs, &features, false, &self.class_linear.value, false, T::one(), T::zero())?;
        probs.add_row(self.class_bias.value.data());
        for r in 0..probs.rows() {
            softmax_in_place(probs.row_mut(r));
        }
        let trace = matches!(mode, Mode::Train { .. }).then_some(trace);
        Ok(ClsOutput { probs, features, trace })
    }

    pub fn class_loss(&self, out: &ClsOutput<T>, labels: &[usize]) -> Result<f64, NetError> {
        if labels.len() != out.probs.rows() {
            return Err(NetError::Dimension(format!("{} labels for {} rows", labels.len(), out.probs.rows())));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= self.num_classes() {
                return Err(NetError::Input(format!("label {y} outside {} classes", self.num_classes())));
            }
            total -= out.probs.get(r, y).to_f64c().max(PROB_FLOOR).ln();
        }
        Ok(total / labels.len() as f64)
    }

    /// Accumulates gradients of the mean class cross-entropy into the
    /// trainable parameters. The LM softmax head is never touched.
    pub fn backward_classifier(&mut self, out: &ClsOutput<T>, labels: &[usize]) -> Result<f64, NetError> {
        let trace = out.trace.as_ref().ok_or(NetError::State)?;
        let loss = self.class_loss(out, labels)?;
        let bsz = labels.len();
        let scale = T::from_f64c(1.0 / bsz as f64);
        let mut dlogits = out.probs.clone();
        for (r, &y) in labels.iter().enumerate() {
            let row = dlogits.row_mut(r);
            row[y] = row[y] - T::one();
            row.iter_mut().for_each(|v| *v = *v * scale);
        }
        gemm_into(&mut self.class_linear.grad, &out.features, true, &dlogits, false, T::one(), T::one())?;
        dlogits.sum_rows_into(self.class_bias.grad.data_mut());
        let mut dfeat = Dense2D::zeros(bsz, self.backbone.config.hidden_dim);
        gemm_into(&mut dfeat, &dlogits, false, &self.class_linear.value, true, T::one(), T::zero())?;

        let top = trace.top();
        let mut d_top = Dense2D::zeros(top.rows(), top.cols());
        for (b, &len) in trace.batch.lengths().iter().enumerate() {
            d_top.row_mut((len - 1) * bsz + b).copy_from_slice(dfeat.row(b));
        }
        self.backbone.backward_backbone(trace, d_top);
        Ok(loss)
    }
}

impl<T: Real> ParamSet<T> for ClassifierNetwork<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = self.backbone.backbone_params();
        if !self.lm_head_frozen {
            out.push(&self.backbone.lm_head);
            out.push(&self.backbone.lm_bias);
        }
        out.push(&self.class_linear);
        out.push(&self.class_bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let frozen = self.lm_head_frozen;
        let ClassifierNetwork { backbone, class_linear, class_bias, .. } = self;
        let LmNetwork { embedding, layers, lm_head, lm_bias, .. } = backbone;
        let mut out = vec![embedding];
        for l in layers.iter_mut() {
            out.extend(l.params_mut());
        }
        if !frozen {
            out.push(lm_head);
            out.push(lm_bias);
        }
        out.push(class_linear);
        out.push(class_bias);
        out
    }
}
