use crate::corpus::ReasoningSample;
use crate::error::{Error, Result};
use crate::losses::{GradientTerm, SequenceNll, StudentModel};

/// Parameter-free student whose loss on perspective `k` is always
/// `base[k]`. Combined with the trainer's loss noise it yields a noisy loss
/// stream with a fixed underlying ranking.
#[derive(Debug, Clone)]
pub struct LossStream {
    pub base: Vec<f64>,
    pub answer_vocab_size: usize,
}

impl LossStream {
    /// `base[k] = start + k * spacing`.
    pub fn linear(slots: usize, start: f64, spacing: f64) -> Self {
        Self {
            base: (0..slots).map(|k| start + k as f64 * spacing).collect(),
            answer_vocab_size: 2,
        }
    }
}

impl StudentModel for LossStream {
    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn answer_vocab_size(&self) -> usize {
        self.answer_vocab_size
    }

    fn sequence_nll(&self, _question: &str, _rationale: &str) -> Result<SequenceNll> {
        Err(Error::Contract("a loss stream is addressed by perspective id".into()))
    }

    fn answer_distribution(&self, _question: &str, _rationale: &str) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.answer_vocab_size as f64; self.answer_vocab_size])
    }

    fn objective_gradient(&self, _question: &str, _terms: &[GradientTerm<'_>]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn perspective_nll(&self, sample: &ReasoningSample, perspective_id: usize) -> Result<SequenceNll> {
        if sample.rationale(perspective_id).is_none() {
            return Err(Error::Alignment(format!("no rationale {perspective_id}")));
        }
        let value = *self
            .base
            .get(perspective_id)
            .ok_or_else(|| Error::Alignment(format!("no base loss for perspective {perspective_id}")))?;
        Ok(SequenceNll {
            value,
            tokens: 1,
            truncated: false,
        })
    }
}
