//! The declarative config file: every section has defaults, unknown keys are
//! rejected up front and the resolved document is echoed next to outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cotfuse_core::analysis::AnalysisConfig;
use cotfuse_core::corpus::{TeacherMode, DEFAULT_KEEP_FRACTION_EASY, DEFAULT_MARKER, DEFAULT_MIN_PERSPECTIVES};
use cotfuse_core::eval::DEFAULT_MAX_NEW_TOKENS;
use cotfuse_core::trainer::{Mode, RunConfig};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSettings {
    pub teacher: TeacherMode,
    pub keep_fraction_easy: f64,
    pub min_perspectives: usize,
    pub marker: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub timeout_secs: u64,
}

impl Default for BuildSettings {
    fn default() -> Self {
        Self {
            teacher: TeacherMode::Fixture,
            keep_fraction_easy: DEFAULT_KEEP_FRACTION_EASY,
            min_perspectives: DEFAULT_MIN_PERSPECTIVES,
            marker: DEFAULT_MARKER.to_string(),
            temperature: 0.7,
            max_tokens: 2048,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSettings {
    pub modes: Vec<Mode>,
    /// Rolling window (steps) for the weight-volatility table.
    pub volatility_window: usize,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            modes: vec![Mode::Full, Mode::Reactive],
            volatility_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub max_new_tokens: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub paths: Paths,
    pub run: RunConfig,
    pub build: BuildSettings,
    pub ablate: AblateSettings,
    pub analysis: AnalysisConfig,
    pub eval: EvalSettings,
}

/// Default document with every optional field filled, used as the key schema.
fn schema() -> toml::Value {
    let mut c = CliConfig::default();
    c.paths.out = Some(PathBuf::new());
    c.paths.fixtures = Some(PathBuf::new());
    c.run.corpus.path = Some(PathBuf::new());
    c.analysis.tsne.learning_rate = Some(1.0);
    toml::Value::try_from(&c).expect("default config serializes")
}

fn unknown_keys(doc: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in doc {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, schema.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(d), Some(toml::Value::Table(s))) => unknown_keys(d, s, &path, out),
            _ => {}
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        let mut unknown = Vec::new();
        if let toml::Value::Table(s) = schema() {
            unknown_keys(&doc, &s, "", &mut unknown);
        }
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!(
                "{origin}: unknown configuration keys: {}",
                unknown.join(", ")
            )));
        }
        toml::from_str(text).map_err(|e| CliError::Usage(format!("{origin}: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Checks every section and lists each offending key.
    pub fn check(&self) -> Result<(), CliError> {
        let mut problems: Vec<String> = self
            .run
            .problems()
            .into_iter()
            .map(|e| format!("run.{}", config_message(&e)))
            .collect();
        let b = &self.build;
        if !(0.0..=1.0).contains(&b.keep_fraction_easy) {
            problems.push("build.keep_fraction_easy: must lie in [0, 1]".into());
        }
        if b.marker.is_empty() {
            problems.push("build.marker: must not be empty".into());
        }
        if !(b.temperature >= 0.0) || !b.temperature.is_finite() {
            problems.push("build.temperature: must be finite and non-negative".into());
        }
        if self.ablate.volatility_window < 2 {
            problems.push("ablate.volatility_window: must be at least 2".into());
        }
        let a = &self.analysis;
        if a.projection.d_z == 0 {
            problems.push("analysis.projection.d_z: must be at least 1".into());
        }
        if !(a.projection.lr > 0.0) {
            problems.push("analysis.projection.lr: must be positive".into());
        }
        if a.dpmm.truncation < 2 {
            problems.push("analysis.dpmm.truncation: must be at least 2".into());
        }
        if !(a.dpmm.concentration > 0.0) {
            problems.push("analysis.dpmm.concentration: must be positive".into());
        }
        if !(a.tsne.perplexity > 1.0) {
            problems.push("analysis.tsne.perplexity: must exceed 1".into());
        }
        if a.max_embed_points < 5 {
            problems.push("analysis.max_embed_points: must be at least 5".into());
        }
        if self.eval.max_new_tokens == 0 {
            problems.push("eval.max_new_tokens: must be at least 1".into());
        }
        if self.run.seed > i64::MAX as u64 || self.analysis.seed > i64::MAX as u64 {
            problems.push(format!("run.seed: must not exceed {}", i64::MAX));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("invalid configuration:\n  {}", problems.join("\n  "))))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_toml())?;
        Ok(())
    }
}

fn config_message(e: &cotfuse_core::Error) -> String {
    match e {
        cotfuse_core::Error::Config { field, reason } => format!("{field}: {reason}"),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = CliConfig::default();
        assert_eq!(CliConfig::parse(&c.to_toml(), "echo").unwrap(), c);
        c.check().unwrap();
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let text = "bogus = 1\n[run]\nepochz = 3\n[run.fusion]\nbeta = 0.5\ntau = 1\n[analysis.dpmm]\nT = 4\n";
        match CliConfig::parse(text, "cfg") {
            Err(CliError::Usage(msg)) => {
                for key in ["bogus", "run.epochz", "run.fusion.tau", "analysis.dpmm.T"] {
                    assert!(msg.contains(key), "{msg}");
                }
                assert!(!msg.contains("beta"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_invalid_value_is_listed() {
        let text = "[run.fusion]\nbeta = 2.0\ntau_student = -1.0\n[run.schedule]\nmeta_lr = 1.0\n";
        let c = CliConfig::parse(text, "cfg").unwrap();
        match c.check() {
            Err(CliError::Usage(msg)) => {
                for key in ["run.fusion.beta", "run.fusion.tau_student", "run.schedule.meta_lr"] {
                    assert!(msg.contains(key), "{msg}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = CliConfig::parse("[run]\nmode = \"single_perspective:3\"\nepochs = 2\n", "cfg").unwrap();
        assert_eq!(c.run.mode, Mode::SinglePerspective(3));
        assert_eq!(c.run.epochs, 2);
        assert_eq!(c.run.fusion, Default::default());
        assert_eq!(c.analysis, AnalysisConfig::default());
    }

    #[test]
    fn tagged_update_rules_parse() {
        let c = CliConfig::parse("[run.schedule.student_rule]\nkind = \"sgd\"\n", "cfg").unwrap();
        assert_eq!(c.run.schedule.student_rule, cotfuse_core::optim::UpdateRule::Sgd);
    }
}
