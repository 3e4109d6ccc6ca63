use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::{answers_match, ReasoningSample};
use crate::numeric::seeded_rng;

pub const DEFAULT_KEEP_FRACTION_EASY: f64 = 0.5;
pub const DEFAULT_MIN_PERSPECTIVES: usize = 2;

/// Extra acceptance predicate applied to rationale text after the
/// correctness check (the "judge" hook).
pub type JudgeFn = Arc<dyn Fn(&str) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct FilterConfig {
    /// Samples with fewer surviving perspectives are dropped from the dataset.
    pub min_perspectives: usize,
    pub judge: Option<JudgeFn>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_perspectives: DEFAULT_MIN_PERSPECTIVES,
            judge: None,
        }
    }
}

impl fmt::Debug for FilterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterConfig")
            .field("min_perspectives", &self.min_perspectives)
            .field("judge", &self.judge.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub sample: ReasoningSample,
    pub discarded: Vec<usize>,
    /// Set when no rationale survived.
    pub remove: bool,
}

/// Keeps exactly the (rationale, prediction) pairs whose prediction
/// matches the gold answer (and that the judge accepts, when set).
pub fn filter_sample(sample: &ReasoningSample, config: &FilterConfig) -> FilterOutcome {
    let mut out = sample.clone();
    let mut discarded = Vec::new();
    for (&k, pred) in &sample.predictions {
        let judged_ok = match (&config.judge, sample.rationales.get(&k)) {
            (Some(judge), Some(text)) => judge(text),
            _ => true,
        };
        if !answers_match(pred, &sample.gold_answer) || !judged_ok {
            out.rationales.remove(&k);
            out.predictions.remove(&k);
            discarded.push(k);
        }
    }
    let remove = out.rationales.is_empty();
    FilterOutcome {
        sample: out,
        discarded,
        remove,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilteredDataset {
    pub samples: Vec<ReasoningSample>,
    pub discarded_rationales: usize,
    pub dropped_samples: Vec<String>,
}

pub fn filter_dataset(samples: &[ReasoningSample], config: &FilterConfig) -> FilteredDataset {
    let mut result = FilteredDataset::default();
    for s in samples {
        let outcome = filter_sample(s, config);
        result.discarded_rationales += outcome.discarded.len();
        let kept = outcome.sample.num_perspectives();
        if outcome.remove || kept < config.min_perspectives.max(1) {
            result.dropped_samples.push(s.sample_id.clone());
        } else {
            result.samples.push(outcome.sample);
        }
    }
    result
}

/// Keeps every level 3-5 sample and each level 1-2 sample with
/// probability `keep_fraction_easy`. Output is ordered by `sample_id`.
///
/// One uniform draw is consumed per easy sample in `sample_id` order, so
/// for a fixed seed the kept set grows monotonically with the fraction.
pub fn stratify(
    dataset: &[ReasoningSample],
    keep_fraction_easy: f64,
    seed: u64,
) -> Vec<ReasoningSample> {
    let mut sorted: Vec<&ReasoningSample> = dataset.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut rng = seeded_rng(seed, 0x5742);
    sorted
        .into_iter()
        .filter(|s| {
            if s.difficulty_level <= 2 {
                rng.random::<f64>() < keep_fraction_easy
            } else {
                true
            }
        })
        .cloned()
        .collect()
}

/// Retained counts per difficulty level and per perspective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub samples: usize,
    pub per_level: BTreeMap<u8, usize>,
    pub per_perspective: BTreeMap<usize, usize>,
    pub per_subject: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_samples(samples: &[ReasoningSample]) -> Self {
        let mut stats = CorpusStats {
            samples: samples.len(),
            ..Default::default()
        };
        for s in samples {
            *stats.per_level.entry(s.difficulty_level).or_default() += 1;
            *stats.per_subject.entry(s.subject.clone()).or_default() += 1;
            for k in s.perspective_ids() {
                *stats.per_perspective.entry(k).or_default() += 1;
            }
        }
        stats
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |n: usize| 100.0 * n as f64 / self.samples.max(1) as f64;
        writeln!(f, "{:<18} {:>6} {:>8}", "difficulty level", "size", "share")?;
        for (level, n) in &self.per_level {
            writeln!(f, "{:<18} {:>6} {:>7.1}%", format!("level {level}"), n, pct(*n))?;
        }
        writeln!(f, "{:<18} {:>6}", "total", self.samples)?;
        writeln!(f)?;
        writeln!(f, "{:<18} {:>6}", "perspective", "kept")?;
        for (k, n) in &self.per_perspective {
            writeln!(f, "{:<18} {:>6}", k, n)?;
        }
        Ok(())
    }
}
