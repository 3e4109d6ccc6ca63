//! Dynamic perspective selection and fusion weights.
//!
//! Selection keeps every perspective whose score is within a tolerance `beta`
//! of the best one. By default the rule is applied to temperature-softmax
//! probabilities, which are always positive; the literal raw-score rule is
//! available as [`ThresholdMode::RawScores`] and is rejected when the best
//! raw score is not positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::temperature_softmax;
use crate::error::{Error, Result};
use crate::metanet::CompatibilityScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Probabilities,
    RawScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub beta: f64,
    pub tau_student: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            tau_student: 0.5,
            threshold_mode: ThresholdMode::Probabilities,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.beta) {
            out.push(Error::config("beta", "must lie in [0, 1]"));
        }
        if !(self.tau_student > 0.0) || !self.tau_student.is_finite() {
            out.push(Error::config("tau_student", "must be positive"));
        }
        out
    }
}

/// Selected perspective ids (ascending) and their normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSelection {
    pub selected: Vec<usize>,
    pub weights: BTreeMap<usize, f64>,
}

impl FusionSelection {
    /// Uniform weights over `ids`.
    pub fn uniform(ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Domain("empty selection".into()));
        }
        let w = 1.0 / ids.len() as f64;
        Ok(Self {
            selected: ids.to_vec(),
            weights: ids.iter().map(|&k| (k, w)).collect(),
        })
    }

    /// Builds a selection from explicit `(id, weight)` pairs.
    pub fn from_weights(pairs: &[(usize, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Domain("empty selection".into()));
        }
        let weights: BTreeMap<usize, f64> = pairs.iter().copied().collect();
        Ok(Self {
            selected: weights.keys().copied().collect(),
            weights,
        })
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }

    /// Dense weight vector of length `k`, zero for unselected slots.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.weight(i)).collect()
    }
}

fn checked_active(scores: &CompatibilityScores, active: &[usize]) -> Result<Vec<f64>> {
    if active.is_empty() {
        return Err(Error::Domain("no active perspectives to select from".into()));
    }
    active
        .iter()
        .map(|&k| {
            scores.scores.get(k).copied().ok_or_else(|| {
                Error::Alignment(format!("perspective {k} has no score"))
            })
        })
        .collect()
}

/// Selection over every score slot.
pub fn select_perspectives(scores: &CompatibilityScores, config: &FusionConfig) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..scores.scores.len()).collect();
    select_among(scores, &all, config)
}

/// Selection restricted to the `active` perspective ids.
pub fn select_among(
    scores: &CompatibilityScores,
    active: &[usize],
    config: &FusionConfig,
) -> Result<Vec<usize>> {
    let s = checked_active(scores, active)?;
    let values = match config.threshold_mode {
        ThresholdMode::Probabilities => temperature_softmax(&s, config.tau_student)?,
        ThresholdMode::RawScores => {
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max <= 0.0 {
                return Err(Error::IllPosedThreshold { max });
            }
            s
        }
    };
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max * config.beta;
    let mut selected: Vec<usize> = active
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= threshold || v == max)
        .map(|(&k, _)| k)
        .collect();
    selected.sort_unstable();
    Ok(selected)
}

/// `alpha_k = exp(s_k / tau) / sum_{j in selected} exp(s_j / tau)`.
pub fn fusion_weights(
    scores: &CompatibilityScores,
    selected: &[usize],
    config: &FusionConfig,
) -> Result<FusionSelection> {
    if selected.is_empty() {
        return Err(Error::Domain("cannot weight an empty selection".into()));
    }
    let s = checked_active(scores, selected)?;
    let w = temperature_softmax(&s, config.tau_student)?;
    let pairs: Vec<(usize, f64)> = selected.iter().copied().zip(w).collect();
    FusionSelection::from_weights(&pairs)
}

/// Test oracles: literal re-implementations kept deliberately naive.
pub mod oracle {
    use super::*;

    /// Log-space loop form of the selection rule over all slots.
    pub fn brute_force_selection(scores: &CompatibilityScores, config: &FusionConfig) -> Vec<usize> {
        let s = &scores.scores;
        let mut best = f64::NEG_INFINITY;
        for &v in s {
            if v > best {
                best = v;
            }
        }
        let mut out = Vec::new();
        for (k, &v) in s.iter().enumerate() {
            let keep = match config.threshold_mode {
                // p_k >= beta * p_max  <=>  (s_k - s_max) / tau >= ln(beta)
                ThresholdMode::Probabilities => {
                    v == best || (v - best) / config.tau_student >= config.beta.ln()
                }
                ThresholdMode::RawScores => v >= best * config.beta,
            };
            if keep {
                out.push(k);
            }
        }
        out
    }

    /// Unshifted exponentials, normalized by a plain sum.
    pub fn brute_force_weights(scores: &CompatibilityScores, selected: &[usize], tau: f64) -> Vec<f64> {
        let mut z = 0.0;
        for &k in selected {
            z += (scores.scores[k] / tau).exp();
        }
        selected.iter().map(|&k| (scores.scores[k] / tau).exp() / z).collect()
    }

    /// Fixed-size alternative used only in ablation plots.
    pub fn top_k_selection(scores: &CompatibilityScores, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..scores.scores.len()).collect();
        idx.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]).then(a.cmp(&b)));
        let mut top: Vec<usize> = idx.into_iter().take(k).collect();
        top.sort_unstable();
        top
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::numeric::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn cs(v: &[f64]) -> CompatibilityScores {
        CompatibilityScores {
            question_id: "q".into(),
            scores: v.to_vec(),
        }
    }

    fn cfg(beta: f64) -> FusionConfig {
        FusionConfig {
            beta,
            ..Default::default()
        }
    }

    #[test]
    fn beta_boundaries() {
        let s = cs(&[0.3, -1.0, 2.0, 2.0, -5.0]);
        assert_eq!(select_perspectives(&s, &cfg(0.0)).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_perspectives(&s, &cfg(1.0)).unwrap(), vec![2, 3]);
    }

    #[test]
    fn hand_threshold_on_probabilities() {
        // tau = 1 and s = ln p reproduces p exactly.
        let p = [0.40, 0.35, 0.25];
        let s = cs(&p.map(f64::ln));
        let config = FusionConfig {
            beta: 0.8,
            tau_student: 1.0,
            ..Default::default()
        };
        assert_eq!(select_perspectives(&s, &config).unwrap(), vec![0, 1]);
    }

    #[test]
    fn raw_mode_is_ill_posed_without_a_positive_max() {
        let config = FusionConfig {
            threshold_mode: ThresholdMode::RawScores,
            ..Default::default()
        };
        assert!(matches!(
            select_perspectives(&cs(&[-1.0, -0.5]), &config),
            Err(Error::IllPosedThreshold { .. })
        ));
        assert_eq!(select_perspectives(&cs(&[1.0, 0.85, 0.5]), &config).unwrap(), vec![0, 1]);
    }

    #[test]
    fn weight_hand_values() {
        let config = FusionConfig {
            tau_student: 1.0,
            ..Default::default()
        };
        let sel = fusion_weights(&cs(&[2.0, 1.0]), &[0, 1], &config).unwrap();
        let e = std::f64::consts::E;
        assert!((sel.weights[&0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((sel.weights[&1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let single = fusion_weights(&cs(&[2.0, 1.0]), &[1], &config).unwrap();
        assert_eq!(single.weights[&1], 1.0);
        let flat = fusion_weights(&cs(&[0.5; 4]), &[0, 2, 3], &config).unwrap();
        assert!(flat.weights.values().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        assert!(fusion_weights(&cs(&[0.5; 4]), &[], &config).is_err());
    }

    #[test]
    fn brute_force_agrees_on_random_inputs() {
        let mut rng = seeded_rng(4, 0);
        for _ in 0..1000 {
            let s = cs(&(0..8).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let config = FusionConfig {
                beta: rng.random_range(0.0..=1.0),
                tau_student: rng.random_range(0.1..2.0),
                ..Default::default()
            };
            assert_eq!(
                select_perspectives(&s, &config).unwrap(),
                brute_force_selection(&s, &config)
            );
        }
        let tie = cs(&[1.0, 1.0, 0.0]);
        assert_eq!(select_perspectives(&tie, &cfg(1.0)).unwrap(), vec![0, 1]);
        assert_eq!(brute_force_selection(&tie, &cfg(1.0)), vec![0, 1]);
        assert_eq!(select_perspectives(&cs(&[0.3]), &cfg(0.5)).unwrap(), vec![0]);
        assert_eq!(brute_force_selection(&cs(&[0.3]), &cfg(0.5)), vec![0]);
    }

    #[test]
    fn small_temperature_goes_one_hot() {
        let config = FusionConfig {
            tau_student: 1e-3,
            ..Default::default()
        };
        let sel = fusion_weights(&cs(&[0.0, 0.1, -0.2]), &[0, 1, 2], &config).unwrap();
        assert!(sel.weights[&1] >= 1.0 - 1e-6);
    }

    #[test]
    fn top_k_helper() {
        assert_eq!(top_k_selection(&cs(&[0.1, 0.9, 0.5, 0.7]), 2), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn argmax_always_selected_and_size_monotone(
            s in proptest::collection::vec(-5.0f64..5.0, 1..9),
            b1 in 0.0f64..=1.0,
            b2 in 0.0f64..=1.0,
        ) {
            let scores = cs(&s);
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let a = select_perspectives(&scores, &cfg(lo)).unwrap();
            let b = select_perspectives(&scores, &cfg(hi)).unwrap();
            prop_assert!(a.len() >= b.len());
            let argmax = (0..s.len()).max_by(|&i, &j| s[i].total_cmp(&s[j]).then(j.cmp(&i))).unwrap();
            prop_assert!(a.contains(&argmax) && b.contains(&argmax));
        }

        #[test]
        fn shift_invariance_and_normalization(
            s in proptest::collection::vec(-5.0f64..5.0, 2..9),
            shift in -10.0f64..10.0,
            beta in 0.0f64..=1.0,
        ) {
            let config = cfg(beta);
            let base = cs(&s);
            let moved = cs(&s.iter().map(|x| x + shift).collect::<Vec<_>>());
            let sel = select_perspectives(&base, &config).unwrap();
            prop_assert_eq!(&sel, &select_perspectives(&moved, &config).unwrap());
            let w = fusion_weights(&base, &sel, &config).unwrap();
            let w2 = fusion_weights(&moved, &sel, &config).unwrap();
            prop_assert!((w.weights.values().sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, v) in &w.weights {
                prop_assert!(*v > 0.0);
                prop_assert!((v - w2.weights[k]).abs() < 1e-12);
            }
        }
    }
}
