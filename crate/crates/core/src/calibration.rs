//! Feedback calibration of the meta-gating network: temperature softmax,
//! the listwise KL ranking loss against the student's per-perspective
//! losses, the reactive-weighting baseline, and the differential update
//! schedule that makes the MetaNet lag the student.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metanet::CompatibilityScores;
use crate::optim::{Optimizer, UpdateRule};

/// Per-perspective student NLL (nats). `None` marks a filtered-out slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    pub question_id: String,
    pub values: Vec<Option<f64>>,
}

impl LossVector {
    pub fn new(question_id: impl Into<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if values.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("losses must be finite and non-negative".into()));
        }
        Ok(Self {
            question_id: question_id.into(),
            values,
        })
    }

    pub fn dense(question_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Self::new(question_id, values.iter().map(|&v| Some(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
    }

    pub fn active_ids(&self) -> Vec<usize> {
        self.active().map(|(k, _)| k).collect()
    }
}

/// `p_i = exp(v_i / tau - m) / sum_j exp(v_j / tau - m)` with `m = max(v / tau)`.
pub fn temperature_softmax(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("softmax input has a non-finite entry".into()));
    }
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let mut p: Vec<f64> = v.iter().map(|x| x / tau).collect();
    crate::numeric::softmax_in_place(&mut p);
    Ok(p)
}

fn log_softmax(v: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = v.iter().map(|x| x / tau).collect();
    let lse = crate::numeric::log_sum_exp(&scaled);
    scaled.into_iter().map(|x| x - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListNetOutput {
    pub loss: f64,
    /// Gradient w.r.t. every score slot; zero on absent slots.
    pub grad: Vec<f64>,
}

/// `KL(softmax(s / tau) || softmax(-L_real / tau))` over the active slots,
/// with the target treated as a constant.
pub fn listnet_loss(scores: &CompatibilityScores, losses: &LossVector, tau: f64) -> Result<ListNetOutput> {
    if scores.scores.len() != losses.len() {
        return Err(Error::Alignment(format!(
            "{} scores vs {} loss slots",
            scores.scores.len(),
            losses.len()
        )));
    }
    let active: Vec<(usize, f64)> = losses.active().collect();
    if active.len() < 2 {
        return Err(Error::Degenerate(format!(
            "ranking loss needs at least 2 active slots, got {}",
            active.len()
        )));
    }
    let s: Vec<f64> = active.iter().map(|&(k, _)| scores.scores[k]).collect();
    let neg_l: Vec<f64> = active.iter().map(|&(_, l)| -l).collect();
    // validates tau and finiteness
    let p = temperature_softmax(&s, tau)?;
    temperature_softmax(&neg_l, tau)?;
    let ln_p = log_softmax(&s, tau);
    let ln_q = log_softmax(&neg_l, tau);
    let ratio: Vec<f64> = ln_p.iter().zip(&ln_q).map(|(a, b)| a - b).collect();
    let loss = p.iter().zip(&ratio).map(|(pi, r)| pi * r).sum::<f64>().max(0.0);
    let mut grad = vec![0.0; scores.scores.len()];
    for (i, &(k, _)) in active.iter().enumerate() {
        grad[k] = p[i] * (ratio[i] - loss) / tau;
    }
    Ok(ListNetOutput { loss, grad })
}

/// Ablation baseline: `alpha_k ∝ exp(-L_real_k)` over the active slots.
pub fn reactive_weights(losses: &LossVector) -> Result<Vec<(usize, f64)>> {
    let active: Vec<(usize, f64)> = losses.active().collect();
    if active.is_empty() {
        return Err(Error::Domain("reactive weights need at least one active slot".into()));
    }
    let neg: Vec<f64> = active.iter().map(|&(_, l)| -l).collect();
    let w = temperature_softmax(&neg, 1.0)?;
    Ok(active.iter().map(|&(k, _)| k).zip(w).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateSchedule {
    pub student_lr: f64,
    pub meta_lr: f64,
    pub student_accum_steps: usize,
    pub meta_accum_steps: usize,
    /// May be fractional.
    pub warmup_epochs: f64,
    pub warmup_lr: f64,
    /// Questions per micro-batch.
    pub batch_size: usize,
    pub student_rule: UpdateRule,
    pub meta_rule: UpdateRule,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        make_schedule(false)
    }
}

impl UpdateSchedule {
    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    /// Every violated constraint, one error per offending field.
    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        for (field, v) in [
            ("student_lr", self.student_lr),
            ("meta_lr", self.meta_lr),
            ("warmup_lr", self.warmup_lr),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                out.push(Error::config(field, "must be a positive finite number"));
            }
        }
        if self.student_accum_steps == 0 {
            out.push(Error::config("student_accum_steps", "must be at least 1"));
        }
        if self.meta_accum_steps == 0 {
            out.push(Error::config("meta_accum_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            out.push(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.warmup_epochs >= 0.0) || !self.warmup_epochs.is_finite() {
            out.push(Error::config("warmup_epochs", "must be finite and non-negative"));
        }
        if self.meta_lr > self.student_lr {
            out.push(Error::config("meta_lr", "must not exceed student_lr"));
        }
        if self.meta_accum_steps < self.student_accum_steps {
            out.push(Error::config(
                "meta_accum_steps",
                "must be at least student_accum_steps",
            ));
        }
        out
    }

    pub fn accum_steps(&self, role: Role) -> usize {
        match role {
            Role::Student => self.student_accum_steps,
            Role::Meta => self.meta_accum_steps,
        }
    }

    pub fn lr(&self, role: Role) -> f64 {
        match role {
            Role::Student => self.student_lr,
            Role::Meta => self.meta_lr,
        }
    }
}

/// Large-scale values (`paper_scale = true`) or the desk-scale default.
pub fn make_schedule(paper_scale: bool) -> UpdateSchedule {
    if paper_scale {
        UpdateSchedule {
            student_lr: 1e-4,
            meta_lr: 5e-5,
            student_accum_steps: 4,
            meta_accum_steps: 4,
            warmup_epochs: 1.0,
            warmup_lr: 1e-4,
            batch_size: 4,
            student_rule: UpdateRule::adam(),
            meta_rule: UpdateRule::adam(),
        }
    } else {
        UpdateSchedule {
            student_lr: 1e-3,
            meta_lr: 2.5e-4,
            student_accum_steps: 1,
            meta_accum_steps: 4,
            warmup_epochs: 1.0,
            warmup_lr: 1e-3,
            batch_size: 1,
            student_rule: UpdateRule::adam(),
            meta_rule: UpdateRule::adam(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Meta,
}

/// Gradient buffer for one parameter stream.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    role: Role,
    buffer: Vec<f64>,
    pending: usize,
    updates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedUpdate {
    /// 1-based count of updates applied through this accumulator.
    pub update_index: usize,
    pub lr: f64,
}

impl GradAccumulator {
    pub fn new(role: Role, n_params: usize) -> Self {
        Self {
            role,
            buffer: vec![0.0; n_params],
            pending: 0,
            updates: 0,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Adds `grads`; once `accum_steps` contributions are buffered, applies
    /// their mean with `lr` and clears the buffer.
    pub fn push(
        &mut self,
        grads: &[f64],
        params: &mut [f64],
        accum_steps: usize,
        lr: f64,
        optimizer: &mut Optimizer,
    ) -> Result<Option<AppliedUpdate>> {
        if grads.len() != self.buffer.len() || params.len() != self.buffer.len() {
            return Err(Error::shape(
                "gradient accumulation",
                self.buffer.len(),
                format!("grads {} / params {}", grads.len(), params.len()),
            ));
        }
        for (b, g) in self.buffer.iter_mut().zip(grads) {
            *b += g;
        }
        self.pending += 1;
        if self.pending < accum_steps.max(1) {
            return Ok(None);
        }
        let scale = 1.0 / self.pending as f64;
        self.buffer.iter_mut().for_each(|b| *b *= scale);
        optimizer.apply(params, &self.buffer, lr);
        self.buffer.iter_mut().for_each(|b| *b = 0.0);
        self.pending = 0;
        self.updates += 1;
        Ok(Some(AppliedUpdate {
            update_index: self.updates,
            lr,
        }))
    }
}

/// Accumulates with the role's accumulation count and learning rate.
pub fn accumulate_and_step(
    acc: &mut GradAccumulator,
    new_grads: &[f64],
    params: &mut [f64],
    schedule: &UpdateSchedule,
    optimizer: &mut Optimizer,
) -> Result<Option<AppliedUpdate>> {
    let role = acc.role();
    acc.push(new_grads, params, schedule.accum_steps(role), schedule.lr(role), optimizer)
}
