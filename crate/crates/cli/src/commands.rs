use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use cotfuse_core::analysis::{self, ProbeRun};
use cotfuse_core::corpus::{
    builtin_prompts, filter_dataset, generate_multi_perspective, load_dataset, load_question_records,
    make_synthetic_corpus, save_dataset, stratify, CorpusStats, DecodingParams, FilterConfig, FixtureTeacher,
    LiveTeacher, ReasoningSample, TeacherClient, TeacherMode, FIXTURE_QUESTIONS_FILE,
};
use cotfuse_core::eval::evaluate;
use cotfuse_core::losses::{ToyStudent, Vocab};
use cotfuse_core::params::Checkpoint;
use cotfuse_core::trainer::{
    self, mean_total_loss, weight_volatility, Mode, RunConfig, StepRecord, RUN_CONFIG_FILE, STUDENT_FILE,
};

use crate::config::CliConfig;
use crate::{CliError, Common};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const ABLATION_REPORT_FILE: &str = "report.json";
pub const LOSS_CURVES_FILE: &str = "loss_curves.csv";
pub const VOLATILITY_FILE: &str = "volatility.csv";
pub const ANALYSIS_SUMMARY_FILE: &str = "summary.json";
pub const EVAL_REPORT_FILE: &str = "eval.json";

type CmdResult = Result<(), CliError>;

fn resolve(common: &Common, default_out: &str) -> Result<(CliConfig, PathBuf), CliError> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
        cfg.analysis.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from(default_out));
    cfg.paths.out = Some(out.clone());
    Ok((cfg, out))
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Args)]
pub struct BuildCorpusArgs {
    #[command(flatten)]
    common: Common,
    /// Emit an N-question synthetic corpus instead of querying a teacher
    #[arg(long, value_name = "N", conflicts_with_all = ["fixtures", "live"])]
    synthetic: Option<usize>,
    /// Directory with questions.jsonl and, in fixture mode, one completion
    /// file per `<sample_id>.<perspective_id>` [default: paths.fixtures]
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
    /// Query the live endpoint named by COTFUSE_TEACHER_ENDPOINT [default: build.teacher]
    #[arg(long)]
    live: bool,
}

pub fn build_corpus(args: BuildCorpusArgs) -> CmdResult {
    let (mut cfg, out) = resolve(&args.common, "corpus")?;
    if args.live {
        cfg.build.teacher = TeacherMode::Live;
    }
    if let Some(dir) = &args.fixtures {
        cfg.paths.fixtures = Some(dir.clone());
    }
    cfg.check()?;

    let dataset = if let Some(n) = args.synthetic {
        if n == 0 {
            return Err(CliError::Usage("--synthetic needs at least 1 question".into()));
        }
        let samples = make_synthetic_corpus(n, cfg.run.seed)?;
        println!("synthetic corpus: {n} questions, seed {}", cfg.run.seed);
        samples
    } else {
        let dir = cfg
            .paths
            .fixtures
            .clone()
            .ok_or_else(|| CliError::Usage("give --synthetic N or --fixtures DIR".into()))?;
        require_file(&dir.join(FIXTURE_QUESTIONS_FILE), "question list")?;
        let records = load_question_records(&dir)?;
        let teacher: Box<dyn TeacherClient> = match cfg.build.teacher {
            TeacherMode::Fixture => Box::new(FixtureTeacher::new(&dir)),
            TeacherMode::Live => Box::new(
                LiveTeacher::from_env(Duration::from_secs(cfg.build.timeout_secs)).ok_or_else(|| {
                    CliError::Usage(format!("live mode needs {} to be set", LiveTeacher::ENDPOINT_VAR))
                })?,
            ),
        };
        let prompts = builtin_prompts();
        let params = DecodingParams {
            temperature: cfg.build.temperature,
            max_tokens: cfg.build.max_tokens,
        };
        let mut generated = Vec::with_capacity(records.len());
        let mut failures = 0;
        for r in &records {
            let outcome = generate_multi_perspective(r, teacher.as_ref(), &prompts, &params, &cfg.build.marker)?;
            failures += outcome.failures.len();
            generated.push(outcome.sample);
        }
        let filtered = filter_dataset(
            &generated,
            &FilterConfig {
                min_perspectives: cfg.build.min_perspectives,
                judge: None,
            },
        );
        let kept = stratify(&filtered.samples, cfg.build.keep_fraction_easy, cfg.run.seed);
        println!("questions: {}", records.len());
        println!("failed generations: {failures}");
        println!("discarded: {}", filtered.discarded_rationales);
        println!("dropped samples: {}", filtered.dropped_samples.len());
        println!("removed by stratification: {}", filtered.samples.len() - kept.len());
        kept
    };

    std::fs::create_dir_all(&out)?;
    let path = out.join(CORPUS_FILE);
    save_dataset(&dataset, &path)?;
    cfg.echo(&out)?;
    println!("retained: {}", dataset.len());
    println!();
    print!("{}", CorpusStats::from_samples(&dataset));
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training mode: full, reactive, no_synergy, fixed_uniform or
    /// single_perspective:<k> [default: full]
    #[arg(long, value_name = "M")]
    mode: Option<Mode>,
    /// Training epochs after the warmup [default: 5]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Dataset file [default: run.corpus.path, else a 64-question synthetic corpus]
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

fn apply_run_flags(cfg: &mut CliConfig, epochs: Option<usize>, corpus: &Option<PathBuf>) -> CmdResult {
    if let Some(e) = epochs {
        cfg.run.epochs = e;
    }
    if let Some(c) = corpus {
        cfg.run.corpus.path = Some(c.clone());
    }
    if let Some(p) = &cfg.run.corpus.path {
        require_file(p, "corpus")?;
    }
    Ok(())
}

fn summarize(records: &[StepRecord], epochs: usize) -> String {
    let used = records.iter().filter(|r| r.skipped.is_none()).count();
    let last = epochs
        .checked_sub(1)
        .and_then(|e| mean_total_loss(records, e))
        .map_or("n/a".to_string(), |v| format!("{v:.4}"));
    format!("{} steps ({used} used), final-epoch mean L_total {last}", records.len())
}

pub fn train(args: TrainArgs) -> CmdResult {
    let (mut cfg, out) = resolve(&args.common, "train")?;
    if let Some(m) = args.mode {
        cfg.run.mode = m;
    }
    apply_run_flags(&mut cfg, args.epochs, &args.corpus)?;
    cfg.check()?;
    cfg.echo(&out)?;
    let result = trainer::run(&cfg.run, Some(&out))?;
    println!("mode {}: {}", cfg.run.mode, summarize(&result.records, cfg.run.epochs));
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated modes to compare, at least two [default: full,reactive]
    #[arg(long, value_name = "M,M,...", value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    /// Training epochs after the warmup [default: 5]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Dataset file [default: run.corpus.path, else a 64-question synthetic corpus]
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ModeSummary {
    mode: Mode,
    dir: String,
    steps: usize,
    final_epoch_mean_total: Option<f64>,
    /// Mean over slots of the rolling-window alpha std over the whole run.
    rolling_volatility: Option<f64>,
    /// Mean over slots of the alpha std across final-epoch steps.
    final_epoch_volatility: Option<f64>,
    /// `final_epoch_volatility` relative to the reference mode.
    volatility_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct AblationReport {
    seed: u64,
    epochs: usize,
    reference: Mode,
    volatility_window: usize,
    modes: Vec<ModeSummary>,
}

fn mode_dir(mode: Mode) -> String {
    mode.to_string().replace(':', "_")
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ablate(args: AblateArgs) -> CmdResult {
    let (mut cfg, out) = resolve(&args.common, "ablate")?;
    if let Some(m) = args.modes {
        cfg.ablate.modes = m;
    }
    apply_run_flags(&mut cfg, args.epochs, &args.corpus)?;
    let modes = cfg.ablate.modes.clone();
    if modes.len() < 2 {
        return Err(CliError::Usage("ablate needs at least two modes".into()));
    }
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(CliError::Usage(format!("mode {m} requested twice")));
        }
    }
    let mut probe = cfg.clone();
    for &m in &modes {
        probe.run.mode = m;
        probe.check()?;
    }
    cfg.echo(&out)?;

    let corpus = cfg.run.corpus.load()?;
    let window = cfg.ablate.volatility_window;
    let last_epoch = cfg.run.epochs.checked_sub(1);
    let mut curves = csv_header("mode,step,epoch,l_sft,l_cons,l_total");
    let mut vol_table = csv_header("mode,slot,rolling,final_epoch");
    let mut summaries = Vec::new();
    for &mode in &modes {
        let run_cfg = RunConfig { mode, ..cfg.run.clone() };
        let dir = out.join(mode_dir(mode));
        let result = trainer::run_on(&run_cfg, corpus.clone(), Some(&dir))?;
        let records = &result.records;
        for r in records.iter().filter(|r| r.skipped.is_none()) {
            let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            writeln!(curves, "{mode},{},{},{},{},{}", r.step, r.epoch, f(r.l_sft), f(r.l_cons), f(r.l_total))
                .expect("string write");
        }
        let rolling = weight_volatility(records, window).ok();
        let final_epoch: Option<Vec<f64>> = last_epoch.and_then(|e| {
            let last: Vec<StepRecord> = records.iter().filter(|r| r.epoch == e).cloned().collect();
            let n = last.iter().filter(|r| r.skipped.is_none()).count();
            weight_volatility(&last, n).ok()
        });
        let slots = rolling.as_ref().or(final_epoch.as_ref()).map_or(0, Vec::len);
        for k in 0..slots {
            let cell = |v: &Option<Vec<f64>>| v.as_ref().map_or(String::new(), |v| v[k].to_string());
            writeln!(vol_table, "{mode},{k},{},{}", cell(&rolling), cell(&final_epoch)).expect("string write");
        }
        summaries.push(ModeSummary {
            mode,
            dir: mode_dir(mode),
            steps: records.len(),
            final_epoch_mean_total: last_epoch.and_then(|e| mean_total_loss(records, e)),
            rolling_volatility: rolling.as_deref().map(mean_of),
            final_epoch_volatility: final_epoch.as_deref().map(mean_of),
            volatility_ratio: None,
        });
        println!("mode {mode}: {}", summarize(records, cfg.run.epochs));
    }
    let reference = if modes.contains(&Mode::Full) { Mode::Full } else { modes[0] };
    let base = summaries
        .iter()
        .find(|s| s.mode == reference)
        .and_then(|s| s.final_epoch_volatility);
    for s in &mut summaries {
        s.volatility_ratio = match (s.final_epoch_volatility, base) {
            (Some(v), Some(b)) if b > 0.0 => Some(v / b),
            _ => None,
        };
    }

    std::fs::write(out.join(LOSS_CURVES_FILE), curves)?;
    std::fs::write(out.join(VOLATILITY_FILE), vol_table)?;
    let report = AblationReport {
        seed: cfg.run.seed,
        epochs: cfg.run.epochs,
        reference,
        volatility_window: window,
        modes: summaries,
    };
    write_json(&out.join(ABLATION_REPORT_FILE), &report)?;

    println!();
    println!("{:<22} {:>14} {:>12} {:>12}", "mode", "final L_total", "volatility", "ratio");
    let cell = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
    for s in &report.modes {
        println!(
            "{:<22} {:>14} {:>12} {:>12}",
            s.mode.to_string(),
            cell(s.final_epoch_mean_total, 4),
            cell(s.final_epoch_volatility, 5),
            cell(s.volatility_ratio, 3),
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn csv_header(h: &str) -> String {
    format!("{h}\n")
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Training output directory holding student.ckpt and run_config.json;
    /// repeat for every student to compare (at least two)
    #[arg(long = "run", value_name = "DIR", required = true)]
    runs: Vec<PathBuf>,
    /// Dataset whose rationales are encoded [default: the first run's corpus]
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

struct LoadedRun {
    label: String,
    student: ToyStudent,
    perspectives: Option<Vec<usize>>,
}

fn load_run(dir: &Path) -> Result<(RunConfig, ToyStudent), CliError> {
    let cfg_path = dir.join(RUN_CONFIG_FILE);
    require_file(&cfg_path, "run config")?;
    let ckpt_path = dir.join(STUDENT_FILE);
    require_file(&ckpt_path, "student checkpoint")?;
    let text = std::fs::read_to_string(&cfg_path)?;
    let run: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", cfg_path.display())))?;
    let student = ToyStudent::from_checkpoint(&Checkpoint::load(&ckpt_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?;
    Ok((run, student))
}

#[derive(Serialize)]
struct AnalysisSummary {
    seed: u64,
    points: usize,
    active_components: Vec<usize>,
    component_weights: Vec<f64>,
    coverage_counts: BTreeMap<String, usize>,
    elbo_iterations: usize,
    converged: bool,
    warnings: Vec<String>,
}

pub fn analyze(args: AnalyzeArgs) -> CmdResult {
    let (cfg, out) = resolve(&args.common, "analysis")?;
    cfg.check()?;
    if args.runs.len() < 2 {
        return Err(CliError::Usage("analyze needs at least two --run directories".into()));
    }
    let mut loaded = Vec::new();
    let mut first_source = None;
    for dir in &args.runs {
        let (run, student) = load_run(dir)?;
        first_source.get_or_insert(run.corpus.clone());
        let perspectives = match run.mode {
            Mode::SinglePerspective(k) => Some(vec![k]),
            _ => None,
        };
        loaded.push(LoadedRun {
            label: run.mode.to_string(),
            student,
            perspectives,
        });
    }
    // repeated modes fall back to directory names
    let labels: Vec<String> = loaded.iter().map(|r| r.label.clone()).collect();
    for (i, r) in loaded.iter_mut().enumerate() {
        if labels.iter().filter(|l| **l == labels[i]).count() > 1 {
            r.label = format!("{}@{}", r.label, args.runs[i].display());
        }
    }

    let corpus: Vec<ReasoningSample> = match &args.corpus {
        Some(p) => {
            require_file(p, "corpus")?;
            load_dataset(p)?
        }
        None => {
            let src = first_source.expect("at least two runs");
            if let Some(p) = &src.path {
                require_file(p, "corpus")?;
            }
            src.load()?
        }
    };
    for (r, dir) in loaded.iter().zip(&args.runs) {
        let vocab = Vocab::build(&corpus, r.student.answer_tokens())?;
        if &vocab != r.student.vocab() {
            return Err(CliError::Usage(format!(
                "vocabulary of {} does not match the corpus ({} vs {} tokens)",
                dir.display(),
                r.student.vocab().len(),
                vocab.len()
            )));
        }
    }

    let probes: Vec<ProbeRun> = loaded
        .iter()
        .map(|r| ProbeRun {
            label: r.label.clone(),
            student: &r.student,
            perspectives: r.perspectives.clone(),
        })
        .collect();
    let report = analysis::analyze(&probes, &corpus, &cfg.analysis)?;
    report.write_csv(&out)?;
    cfg.echo(&out)?;
    let summary = AnalysisSummary {
        seed: cfg.analysis.seed,
        points: report.points.values().map(Vec::len).sum(),
        active_components: report.model.active.clone(),
        component_weights: report.model.weights.clone(),
        coverage_counts: report.coverage.iter().map(|(k, c)| (k.clone(), c.coverage_count)).collect(),
        elbo_iterations: report.model.elbo_trace.len(),
        converged: report.model.converged,
        warnings: report.model.warnings.clone(),
    };
    write_json(&out.join(ANALYSIS_SUMMARY_FILE), &summary)?;

    println!("active components: {}", report.model.num_active());
    for w in &report.model.warnings {
        println!("warning: {w}");
    }
    println!("{:<40} {:>8} {:>9}", "run", "points", "coverage");
    for (label, c) in &report.coverage {
        println!("{label:<40} {:>8} {:>9}", c.points, c.coverage_count);
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Student checkpoint file, or a training output directory
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Dataset to score [default: run.corpus from the config]
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Score an N-question synthetic set generated with --seed
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Longest greedy continuation [default: 96]
    #[arg(long, value_name = "N")]
    max_new_tokens: Option<usize>,
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let explicit_out = args.common.out.is_some();
    let (mut cfg, out) = resolve(&args.common, "eval")?;
    if let Some(n) = args.max_new_tokens {
        cfg.eval.max_new_tokens = n;
    }
    cfg.check()?;
    let ckpt_path = if args.checkpoint.is_dir() {
        args.checkpoint.join(STUDENT_FILE)
    } else {
        args.checkpoint.clone()
    };
    require_file(&ckpt_path, "checkpoint")?;
    let student = ToyStudent::from_checkpoint(&Checkpoint::load(&ckpt_path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", ckpt_path.display())))?;

    let samples = match (&args.data, args.synthetic) {
        (Some(p), _) => {
            require_file(p, "dataset")?;
            load_dataset(p)?
        }
        (None, Some(0)) => Vec::new(),
        (None, Some(n)) => make_synthetic_corpus(n, cfg.run.seed)?,
        (None, None) => {
            if let Some(p) = &cfg.run.corpus.path {
                require_file(p, "dataset")?;
            }
            cfg.run.corpus.load()?
        }
    };
    if samples.is_empty() {
        return Err(CliError::Usage("evaluation set is empty".into()));
    }
    let report = evaluate(&student, &samples, cfg.eval.max_new_tokens)?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.total);
    for (level, s) in &report.by_level {
        println!("  level {level}: {:.4} ({}/{})", s.accuracy(), s.correct, s.total);
    }
    if explicit_out || cfg.paths.out.is_some() && args.common.config.is_some() {
        std::fs::create_dir_all(&out)?;
        write_json(&out.join(EVAL_REPORT_FILE), &report)?;
        cfg.echo(&out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
