use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{extract_answer_with, PerspectivePrompt, QuestionRecord, ReasoningSample};
use crate::error::{Error, Result};

/// File listing the questions of a fixture directory (one JSON record per line).
pub const FIXTURE_QUESTIONS_FILE: &str = "questions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub sample_id: &'a str,
    pub perspective_id: usize,
    pub prompt: &'a str,
    pub params: &'a DecodingParams,
}

/// Text generation backend for rationales.
pub trait TeacherClient: Sync {
    fn mode(&self) -> TeacherMode;

    /// Returns the raw completion. Transport problems surface as
    /// [`Error::Teacher`].
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String>;
}

/// Reads completions from `{dir}/{sample_id}.{perspective_id}`. A missing
/// file behaves like an empty completion.
#[derive(Debug, Clone)]
pub struct FixtureTeacher {
    dir: PathBuf,
}

impl FixtureTeacher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, sample_id: &str, perspective_id: usize) -> PathBuf {
        self.dir.join(format!("{sample_id}.{perspective_id}"))
    }
}

impl TeacherClient for FixtureTeacher {
    fn mode(&self) -> TeacherMode {
        TeacherMode::Fixture
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let path = self.path_for(request.sample_id, request.perspective_id);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(Error::Teacher {
                perspective_id: request.perspective_id,
                message: format!("{}: {e}", path.display()),
                retriable: false,
            }),
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct LiveTeacher {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl LiveTeacher {
    pub const ENDPOINT_VAR: &'static str = "COTFUSE_TEACHER_ENDPOINT";
    pub const KEY_VAR: &'static str = "COTFUSE_TEACHER_API_KEY";
    pub const MODEL_VAR: &'static str = "COTFUSE_TEACHER_MODEL";

    /// Builds a client from the environment; `None` when no endpoint is set.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let endpoint = std::env::var(Self::ENDPOINT_VAR).ok()?;
        Some(Self {
            endpoint,
            api_key: std::env::var(Self::KEY_VAR).ok(),
            model: std::env::var(Self::MODEL_VAR).unwrap_or_else(|_| "teacher".to_string()),
            timeout,
        })
    }
}

impl TeacherClient for LiveTeacher {
    fn mode(&self) -> TeacherMode {
        TeacherMode::Live
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let transport = |message: String| Error::Teacher {
            perspective_id: request.perspective_id,
            message,
            retriable: true,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        let mut call = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| transport(e.to_string()))?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| transport(e.to_string()))?;
        Ok(value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationFailure {
    /// The request itself failed; `retriable` mirrors the teacher error.
    Transport {
        perspective_id: usize,
        message: String,
        retriable: bool,
    },
    /// The teacher answered with an empty completion.
    Empty { perspective_id: usize },
}

impl GenerationFailure {
    pub fn perspective_id(&self) -> usize {
        match self {
            GenerationFailure::Transport { perspective_id, .. }
            | GenerationFailure::Empty { perspective_id } => *perspective_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub sample: ReasoningSample,
    pub failures: Vec<GenerationFailure>,
}

/// Queries the teacher once per prompt (concurrently) and assembles the
/// sample by perspective id. Failed slots are left absent and reported.
pub fn generate_multi_perspective(
    record: &QuestionRecord,
    teacher: &dyn TeacherClient,
    prompts: &[PerspectivePrompt],
    params: &DecodingParams,
    marker: &str,
) -> Result<GenerationOutcome> {
    if prompts.is_empty() {
        return Err(Error::Domain("no perspective prompts given".into()));
    }
    let completions: Vec<(usize, Result<String>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = prompts
            .iter()
            .map(|p| {
                let prompt = p.render(&record.question);
                scope.spawn(move || {
                    let request = GenerationRequest {
                        sample_id: &record.sample_id,
                        perspective_id: p.perspective_id,
                        prompt: &prompt,
                        params,
                    };
                    (p.perspective_id, teacher.generate(&request))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("teacher worker panicked"))
            .collect()
    });

    let mut sample = ReasoningSample {
        sample_id: record.sample_id.clone(),
        question: record.question.clone(),
        gold_answer: record.gold_answer.clone(),
        rationales: Default::default(),
        predictions: Default::default(),
        difficulty_level: record.difficulty_level,
        subject: record.subject.clone(),
    };
    let mut failures = Vec::new();
    for (perspective_id, completion) in completions {
        match completion {
            Ok(text) if text.trim().is_empty() => {
                failures.push(GenerationFailure::Empty { perspective_id });
            }
            Ok(text) => {
                let text = text.trim().to_string();
                sample
                    .predictions
                    .insert(perspective_id, extract_answer_with(&text, marker));
                sample.rationales.insert(perspective_id, text);
            }
            Err(Error::Teacher {
                message, retriable, ..
            }) => failures.push(GenerationFailure::Transport {
                perspective_id,
                message,
                retriable,
            }),
            Err(other) => return Err(other),
        }
    }
    failures.sort_by_key(GenerationFailure::perspective_id);
    Ok(GenerationOutcome { sample, failures })
}

/// Reads `questions.jsonl` from a fixture directory.
pub fn load_question_records(dir: &Path) -> Result<Vec<QuestionRecord>> {
    let path = dir.join(FIXTURE_QUESTIONS_FILE);
    let text = fs::read_to_string(&path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::builtin_prompts;

    struct FlakyTeacher {
        failing: usize,
    }

    impl TeacherClient for FlakyTeacher {
        fn mode(&self) -> TeacherMode {
            TeacherMode::Live
        }

        fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
            if request.perspective_id == self.failing {
                return Err(Error::Teacher {
                    perspective_id: request.perspective_id,
                    message: "timed out".into(),
                    retriable: true,
                });
            }
            Ok(format!("p{} reasoning #### 4", request.perspective_id))
        }
    }

    fn record() -> QuestionRecord {
        QuestionRecord {
            sample_id: "q0".into(),
            question: "2+2?".into(),
            gold_answer: "4".into(),
            difficulty_level: 1,
            subject: "arithmetic".into(),
        }
    }

    #[test]
    fn fixture_round_trip_fills_every_slot() {
        let dir = tempfile::tempdir().unwrap();
        for k in 0..8 {
            fs::write(dir.path().join(format!("q0.{k}")), format!("style {k} gives #### 4\n")).unwrap();
        }
        let teacher = FixtureTeacher::new(dir.path());
        let out = generate_multi_perspective(
            &record(),
            &teacher,
            &builtin_prompts(),
            &DecodingParams::default(),
            "####",
        )
        .unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.sample.rationales.len(), 8);
        assert_eq!(out.sample.predictions.len(), 8);
        assert!(out.sample.predictions.values().all(|p| p == "4"));
        assert_eq!(out.sample.rationales[&3], "style 3 gives #### 4");
    }

    #[test]
    fn transport_failure_leaves_slot_absent() {
        let out = generate_multi_perspective(
            &record(),
            &FlakyTeacher { failing: 3 },
            &builtin_prompts(),
            &DecodingParams::default(),
            "####",
        )
        .unwrap();
        assert_eq!(out.sample.rationales.len(), 7);
        assert!(!out.sample.rationales.contains_key(&3));
        assert_eq!(
            out.failures,
            vec![GenerationFailure::Transport {
                perspective_id: 3,
                message: "timed out".into(),
                retriable: true
            }]
        );
    }

    #[test]
    fn missing_fixture_is_an_empty_completion() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("q0.0"), "#### 4").unwrap();
        let out = generate_multi_perspective(
            &record(),
            &FixtureTeacher::new(dir.path()),
            &builtin_prompts()[..2],
            &DecodingParams::default(),
            "####",
        )
        .unwrap();
        assert_eq!(out.sample.rationales.len(), 1);
        assert_eq!(out.failures, vec![GenerationFailure::Empty { perspective_id: 1 }]);
    }

    #[test]
    fn empty_prompt_list_is_rejected() {
        let err = generate_multi_perspective(
            &record(),
            &FlakyTeacher { failing: 9 },
            &[],
            &DecodingParams::default(),
            "####",
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn live_teacher_times_out_instead_of_blocking() {
        // A listener that accepts but never answers.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let _guard = std::thread::spawn(move || {
            let _conns: Vec<_> = listener.incoming().take(1).collect();
            std::thread::sleep(Duration::from_secs(5));
        });
        let teacher = LiveTeacher {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            api_key: None,
            model: "m".into(),
            timeout: Duration::from_millis(300),
        };
        let params = DecodingParams::default();
        let started = std::time::Instant::now();
        let err = teacher
            .generate(&GenerationRequest {
                sample_id: "q0",
                perspective_id: 2,
                prompt: "hi",
                params: &params,
            })
            .unwrap_err();
        assert!(started.elapsed() < Duration::from_secs(4));
        assert!(matches!(
            err,
            Error::Teacher {
                perspective_id: 2,
                retriable: true,
                ..
            }
        ));
    }
}
