//! Multi-perspective rationale corpus: prompting, answer extraction,
//! correctness filtering, difficulty stratification, persistence and an
//! offline synthetic generator.

mod answer;
mod filter;
mod io;
mod prompts;
mod synthetic;
mod teacher;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use answer::{answers_match, canonical_answer, extract_answer, extract_answer_with, DEFAULT_MARKER};
pub use filter::{
    filter_dataset, filter_sample, stratify, CorpusStats, FilterConfig, FilterOutcome,
    FilteredDataset, DEFAULT_KEEP_FRACTION_EASY, DEFAULT_MIN_PERSPECTIVES,
};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use prompts::{builtin_prompts, PerspectivePrompt, NUM_PERSPECTIVES};
pub use synthetic::make_synthetic_corpus;
pub use teacher::{
    generate_multi_perspective, load_question_records, DecodingParams, FixtureTeacher,
    GenerationFailure, GenerationOutcome, GenerationRequest, LiveTeacher, TeacherClient,
    TeacherMode, FIXTURE_QUESTIONS_FILE,
};

/// One question with its gold answer and the surviving per-perspective
/// rationales and extracted predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub sample_id: String,
    pub question: String,
    pub gold_answer: String,
    pub rationales: BTreeMap<usize, String>,
    pub predictions: BTreeMap<usize, String>,
    pub difficulty_level: u8,
    pub subject: String,
}

impl ReasoningSample {
    pub fn perspective_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.rationales.keys().copied()
    }

    pub fn num_perspectives(&self) -> usize {
        self.rationales.len()
    }

    pub fn rationale(&self, perspective_id: usize) -> Option<&str> {
        self.rationales.get(&perspective_id).map(String::as_str)
    }

    /// Checks the structural invariants of a sample.
    pub fn validate(&self) -> crate::Result<()> {
        if !(1..=5).contains(&self.difficulty_level) {
            return Err(crate::Error::Domain(format!(
                "sample {}: difficulty_level {} outside 1..=5",
                self.sample_id, self.difficulty_level
            )));
        }
        if !self.rationales.keys().eq(self.predictions.keys()) {
            return Err(crate::Error::Alignment(format!(
                "sample {}: rationale and prediction keys differ",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// A question before teacher generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub sample_id: String,
    pub question: String,
    pub gold_answer: String,
    pub difficulty_level: u8,
    #[serde(default)]
    pub subject: String,
}
