//! Student-side objectives and the student model contract.

mod toy;
mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::LossVector;
use crate::corpus::ReasoningSample;
use crate::error::{Error, Result};
use crate::fusion::FusionSelection;

pub use toy::{StudentConfig, ToyStudent};
pub use vocab::{
    default_answer_tokens, detokenize, tokenize, Vocab, ANSWER_DELIMITER, BOS, EOS, MAX_VOCAB,
    SEP, UNK,
};

/// Tolerance on the total mass of an input distribution.
const NORMALIZATION_TOL: f64 = 1e-6;

/// Mean per-token NLL of one rationale given its question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceNll {
    pub value: f64,
    pub tokens: usize,
    pub truncated: bool,
}

/// One supervised rationale inside a student objective. The contribution is
/// `nll_weight * NLL(rationale) + <answer_grad, P(rationale)>`, so
/// `answer_grad` carries the upstream gradient w.r.t. the answer
/// distribution.
#[derive(Debug, Clone, Copy)]
pub struct GradientTerm<'a> {
    pub rationale: &'a str,
    pub nll_weight: f64,
    pub answer_grad: Option<&'a [f64]>,
}

pub trait StudentModel {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn answer_vocab_size(&self) -> usize;

    fn sequence_nll(&self, question: &str, rationale: &str) -> Result<SequenceNll>;

    /// Next-token distribution after the answer delimiter, restricted to the
    /// answer vocabulary and averaged over answer positions.
    fn answer_distribution(&self, question: &str, rationale: &str) -> Result<Vec<f64>>;

    /// Gradient w.r.t. [`StudentModel::params`] of the summed terms.
    fn objective_gradient(&self, question: &str, terms: &[GradientTerm<'_>]) -> Result<Vec<f64>>;

    fn perspective_nll(&self, sample: &ReasoningSample, perspective_id: usize) -> Result<SequenceNll> {
        let rationale = sample.rationale(perspective_id).ok_or_else(|| {
            Error::Alignment(format!(
                "sample {} has no rationale for perspective {perspective_id}",
                sample.sample_id
            ))
        })?;
        self.sequence_nll(&sample.question, rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub perspective_id: usize,
    pub probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(perspective_id: usize, probs: Vec<f64>) -> Result<Self> {
        check_distribution(&probs)?;
        Ok(Self { perspective_id, probs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    pub fn problems(&self) -> Vec<Error> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return vec![Error::config("lambda", "must be finite and non-negative")];
        }
        Vec::new()
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain("empty distribution".into()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain("distribution has a negative or non-finite entry".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Domain(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// `L_real` for every present perspective, plus which ones were truncated.
pub fn per_perspective_nll(
    student: &dyn StudentModel,
    sample: &ReasoningSample,
    num_slots: usize,
) -> Result<(LossVector, Vec<usize>)> {
    if sample.rationales.is_empty() {
        return Err(Error::Domain(format!("sample {} has no rationales", sample.sample_id)));
    }
    let mut values = vec![None; num_slots];
    let mut truncated = Vec::new();
    for k in sample.perspective_ids() {
        if k >= num_slots {
            return Err(Error::Alignment(format!(
                "perspective {k} outside {num_slots} slots"
            )));
        }
        let nll = student.perspective_nll(sample, k)?;
        if nll.truncated {
            truncated.push(k);
        }
        values[k] = Some(nll.value);
    }
    Ok((LossVector::new(sample.sample_id.clone(), values)?, truncated))
}

/// `sum_{k in I} alpha_k L_k`.
pub fn weighted_sft(losses: &LossVector, selection: &FusionSelection) -> Result<f64> {
    let mut total = 0.0;
    for (&k, &a) in &selection.weights {
        let l = losses.values.get(k).copied().flatten().ok_or_else(|| {
            Error::Alignment(format!("selected perspective {k} has no loss"))
        })?;
        total += a * l;
    }
    Ok(total)
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd", p.len(), q.len()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        total += 0.5 * (kl_term(a, m) + kl_term(b, m));
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

/// `d JSD(P, Q) / d P_i = 0.5 ln(P_i / M_i)`; zero entries get the limit of
/// a vanishing but positive mass.
pub fn jsd_grad(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::shape("jsd_grad", p.len(), q.len()));
    }
    Ok(p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            if m == 0.0 {
                0.0
            } else {
                0.5 * (a.max(f64::MIN_POSITIVE) / m).ln()
            }
        })
        .collect())
}

fn selected_distributions<'a>(
    distributions: &'a BTreeMap<usize, AnswerDistribution>,
    selection: &FusionSelection,
) -> Result<Vec<(usize, f64, &'a [f64])>> {
    selection
        .weights
        .iter()
        .map(|(&k, &a)| {
            distributions
                .get(&k)
                .map(|d| (k, a, d.probs.as_slice()))
                .ok_or_else(|| Error::Alignment(format!("no answer distribution for perspective {k}")))
        })
        .collect()
}

/// `sum_{i<j in I} alpha_i alpha_j JSD(P_i, P_j)`.
pub fn consistency_loss(
    distributions: &BTreeMap<usize, AnswerDistribution>,
    selection: &FusionSelection,
) -> Result<f64> {
    let sel = selected_distributions(distributions, selection)?;
    let mut total = 0.0;
    for (i, &(_, ai, pi)) in sel.iter().enumerate() {
        for &(_, aj, pj) in &sel[i + 1..] {
            total += ai * aj * jsd(pi, pj)?;
        }
    }
    Ok(total)
}

/// Gradient of [`consistency_loss`] w.r.t. each selected distribution.
pub fn consistency_grad(
    distributions: &BTreeMap<usize, AnswerDistribution>,
    selection: &FusionSelection,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let sel = selected_distributions(distributions, selection)?;
    let mut out = BTreeMap::new();
    for &(i, ai, pi) in &sel {
        let mut g = vec![0.0; pi.len()];
        for &(j, aj, pj) in &sel {
            if i == j {
                continue;
            }
            for (gv, d) in g.iter_mut().zip(jsd_grad(pi, pj)?) {
                *gv += ai * aj * d;
            }
        }
        out.insert(i, g);
    }
    Ok(out)
}

pub fn total_loss(sft: f64, cons: f64, config: &ObjectiveConfig) -> f64 {
    sft + config.lambda * cons
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub sft: f64,
    pub cons: f64,
    pub total: f64,
}

/// Evaluates `L_total` for the selected rationales of `sample` and its
/// gradient w.r.t. the student parameters, with the weights held fixed.
pub fn student_objective(
    student: &dyn StudentModel,
    sample: &ReasoningSample,
    selection: &FusionSelection,
    config: &ObjectiveConfig,
) -> Result<(ObjectiveValue, Vec<f64>)> {
    let mut values = vec![None; selection.selected.iter().max().map_or(0, |m| m + 1)];
    for &k in &selection.selected {
        values[k] = Some(student.perspective_nll(sample, k)?.value);
    }
    let losses = LossVector::new(sample.sample_id.clone(), values)?;
    let sft = weighted_sft(&losses, selection)?;

    let use_cons = config.lambda > 0.0 && selection.selected.len() >= 2;
    let mut cons = 0.0;
    let mut answer_grads = BTreeMap::new();
    if use_cons {
        let mut dists = BTreeMap::new();
        for &k in &selection.selected {
            let r = rationale_of(sample, k)?;
            let p = student.answer_distribution(&sample.question, r)?;
            dists.insert(k, AnswerDistribution::new(k, p)?);
        }
        cons = consistency_loss(&dists, selection)?;
        answer_grads = consistency_grad(&dists, selection)?;
        for g in answer_grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= config.lambda);
        }
    }

    let mut terms = Vec::with_capacity(selection.selected.len());
    for &k in &selection.selected {
        terms.push(GradientTerm {
            rationale: rationale_of(sample, k)?,
            nll_weight: selection.weight(k),
            answer_grad: answer_grads.get(&k).map(|g| g.as_slice()),
        });
    }
    let grad = student.objective_gradient(&sample.question, &terms)?;
    Ok((
        ObjectiveValue {
            sft,
            cons,
            total: total_loss(sft, cons, config),
        },
        grad,
    ))
}

fn rationale_of(sample: &ReasoningSample, k: usize) -> Result<&str> {
    sample.rationale(k).ok_or_else(|| {
        Error::Alignment(format!("sample {} has no rationale {k}", sample.sample_id))
    })
}

/// Straightforward re-implementations used as test oracles.
pub mod oracle {
    pub fn weighted_sft(losses: &[f64], weights: &[(usize, f64)]) -> f64 {
        let mut total = 0.0;
        for &(k, a) in weights {
            total += a * losses[k];
        }
        total
    }

    pub fn kl(p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..p.len() {
            if p[i] > 0.0 {
                total += p[i] * (p[i].ln() - q[i].ln());
            }
        }
        total
    }

    pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
        (kl(p, &m) + kl(q, &m)) / 2.0
    }

    /// Sums over ordered pairs and halves.
    pub fn consistency(dists: &[(usize, f64, Vec<f64>)]) -> f64 {
        let mut total = 0.0;
        for (i, (_, ai, pi)) in dists.iter().enumerate() {
            for (j, (_, aj, pj)) in dists.iter().enumerate() {
                if i != j {
                    total += ai * aj * jsd(pi, pj);
                }
            }
        }
        total / 2.0
    }
}

/// Student that assigns uniform probability to every token; a fixed point
/// for loss identities.
#[derive(Debug, Clone)]
pub struct UniformStudent {
    pub vocab_size: usize,
    pub answer_vocab_size: usize,
}

impl StudentModel for UniformStudent {
    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn answer_vocab_size(&self) -> usize {
        self.answer_vocab_size
    }

    fn sequence_nll(&self, _question: &str, rationale: &str) -> Result<SequenceNll> {
        Ok(SequenceNll {
            value: (self.vocab_size as f64).ln(),
            tokens: tokenize(rationale).len() + 1,
            truncated: false,
        })
    }

    fn answer_distribution(&self, _question: &str, rationale: &str) -> Result<Vec<f64>> {
        if !rationale.contains(ANSWER_DELIMITER) {
            return Err(Error::Contract("rationale has no answer delimiter".into()));
        }
        Ok(vec![1.0 / self.answer_vocab_size as f64; self.answer_vocab_size])
    }

    fn objective_gradient(&self, _question: &str, _terms: &[GradientTerm<'_>]) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}
