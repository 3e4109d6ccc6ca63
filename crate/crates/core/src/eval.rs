//! Exact-match evaluation by greedy decoding.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{answers_match, extract_answer, ReasoningSample};
use crate::error::{Error, Result};
use crate::losses::ToyStudent;

pub const DEFAULT_MAX_NEW_TOKENS: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub sample_id: String,
    pub difficulty_level: u8,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LevelScore {
    pub correct: usize,
    pub total: usize,
}

impl LevelScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub by_level: BTreeMap<u8, LevelScore>,
    pub predictions: Vec<Prediction>,
}

/// Answer text of a generated continuation. Token spacing inside the
/// answer is dropped so that `- 3 / 4` reads as `-3/4`.
pub fn predicted_answer(generated: &str) -> String {
    extract_answer(generated).split_whitespace().collect()
}

pub fn evaluate(student: &ToyStudent, samples: &[ReasoningSample], max_new_tokens: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    let mut by_level: BTreeMap<u8, LevelScore> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let predicted = predicted_answer(&student.greedy_decode(&s.question, max_new_tokens));
        let correct = answers_match(&predicted, &s.gold_answer);
        let level = by_level.entry(s.difficulty_level).or_default();
        level.total += 1;
        level.correct += usize::from(correct);
        predictions.push(Prediction {
            sample_id: s.sample_id.clone(),
            difficulty_level: s.difficulty_level,
            predicted,
            gold: s.gold_answer.clone(),
            correct,
        });
    }
    let correct = predictions.iter().filter(|p| p.correct).count();
    Ok(EvalReport {
        correct,
        total: samples.len(),
        accuracy: correct as f64 / samples.len() as f64,
        by_level,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_spacing_is_removed() {
        assert_eq!(predicted_answer("so 3 + 4 #### - 3 / 4"), "-3/4");
        assert_eq!(predicted_answer("no marker here"), "");
        assert_eq!(predicted_answer("#### 12 #### 7 . 5"), "7.5");
    }

    #[test]
    fn level_accuracy() {
        let s = LevelScore { correct: 1, total: 4 };
        assert_eq!(s.accuracy(), 0.25);
        assert_eq!(LevelScore::default().accuracy(), 0.0);
    }
}
