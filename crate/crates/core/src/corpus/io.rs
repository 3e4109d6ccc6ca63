use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReasoningSample;
use crate::error::{Error, Result};

/// On-disk record: perspective ids are decimal-string keys.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    sample_id: String,
    question: String,
    gold_answer: String,
    difficulty_level: u8,
    subject: String,
    rationales: BTreeMap<String, String>,
    predictions: BTreeMap<String, String>,
}

fn keyed<T: Clone>(map: &BTreeMap<usize, T>) -> BTreeMap<String, T> {
    map.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn unkeyed(map: BTreeMap<String, String>, line: usize, field: &str) -> Result<BTreeMap<usize, String>> {
    map.into_iter()
        .map(|(k, v)| {
            k.parse::<usize>().map(|k| (k, v)).map_err(|_| Error::Parse {
                line,
                message: format!("field `{field}` has non-numeric perspective key `{k}`"),
            })
        })
        .collect()
}

pub fn write_dataset<W: Write>(dataset: &[ReasoningSample], mut out: W) -> Result<()> {
    for s in dataset {
        let record = DatasetRecord {
            sample_id: s.sample_id.clone(),
            question: s.question.clone(),
            gold_answer: s.gold_answer.clone(),
            difficulty_level: s.difficulty_level,
            subject: s.subject.clone(),
            rationales: keyed(&s.rationales),
            predictions: keyed(&s.predictions),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &[ReasoningSample], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<Vec<ReasoningSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let sample = ReasoningSample {
            sample_id: record.sample_id,
            question: record.question,
            gold_answer: record.gold_answer,
            rationales: unkeyed(record.rationales, line_no, "rationales")?,
            predictions: unkeyed(record.predictions, line_no, "predictions")?,
            difficulty_level: record.difficulty_level,
            subject: record.subject,
        };
        sample.validate().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<ReasoningSample>> {
    parse_dataset(&fs::read_to_string(path)?)
}
