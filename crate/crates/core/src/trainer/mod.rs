//! Warmup and joint training of the student and the meta-gating network,
//! with the ablation modes and the per-step metrics log.

mod stream;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{listnet_loss, reactive_weights, GradAccumulator, LossVector, Role, UpdateSchedule};
use crate::corpus::{load_dataset, make_synthetic_corpus, ReasoningSample};
use crate::error::{Error, Result};
use crate::fusion::{fusion_weights, select_among, FusionConfig, FusionSelection};
use crate::losses::{
    default_answer_tokens, student_objective, ObjectiveConfig, StudentConfig, StudentModel, ToyStudent, Vocab,
};
use crate::metanet::{CompatibilityScores, EmbeddingProvider, HashedBagEmbedder, MetaNet, MetaNetConfig, Tape};
use crate::numeric::{mean, seeded_rng, spearman, std_dev};
use crate::optim::Optimizer;

pub use stream::LossStream;

/// Seed of the frozen embedding provider; fixed so every run sees the same
/// question and rationale features.
pub const EMBEDDER_SEED: u64 = 0xe3b;
/// Metrics are flushed at least this often.
pub const FLUSH_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Reactive,
    NoSynergy,
    FixedUniform,
    SinglePerspective(usize),
}

impl Mode {
    pub const NAMES: &'static str = "full, reactive, no_synergy, fixed_uniform, single_perspective:<k>";

    fn uses_metanet(self) -> bool {
        matches!(self, Mode::Full | Mode::NoSynergy)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Full => f.write_str("full"),
            Mode::Reactive => f.write_str("reactive"),
            Mode::NoSynergy => f.write_str("no_synergy"),
            Mode::FixedUniform => f.write_str("fixed_uniform"),
            Mode::SinglePerspective(k) => write!(f, "single_perspective:{k}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::config("mode", format!("unknown mode `{s}`; valid modes: {}", Mode::NAMES));
        Ok(match s {
            "full" => Mode::Full,
            "reactive" => Mode::Reactive,
            "no_synergy" => Mode::NoSynergy,
            "fixed_uniform" => Mode::FixedUniform,
            _ => {
                let k = s
                    .strip_prefix("single_perspective:")
                    .or_else(|| s.strip_prefix("single_perspective(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(unknown)?;
                Mode::SinglePerspective(k.parse().map_err(|_| unknown())?)
            }
        })
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the training questions come from. A `path` takes precedence over
/// the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSource {
    pub path: Option<PathBuf>,
    pub synthetic: usize,
    pub synthetic_seed: u64,
}

impl Default for CorpusSource {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: 64,
            synthetic_seed: 0,
        }
    }
}

impl CorpusSource {
    pub fn load(&self) -> Result<Vec<ReasoningSample>> {
        match &self.path {
            Some(p) => load_dataset(p),
            None => make_synthetic_corpus(self.synthetic, self.synthetic_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Drives student and MetaNet initialization, shuffling and loss noise.
    pub seed: u64,
    pub epochs: usize,
    /// ListNet temperature.
    pub tau_meta: f64,
    /// Standard deviation of zero-mean noise added to every observed loss.
    pub loss_noise_sigma: f64,
    pub corpus: CorpusSource,
    pub student: StudentConfig,
    pub metanet: MetaNetConfig,
    pub fusion: FusionConfig,
    pub objective: ObjectiveConfig,
    pub schedule: UpdateSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
            epochs: 5,
            tau_meta: 1.0,
            loss_noise_sigma: 0.0,
            corpus: CorpusSource::default(),
            student: StudentConfig::default(),
            metanet: MetaNetConfig::default(),
            fusion: FusionConfig::default(),
            objective: ObjectiveConfig::default(),
            schedule: UpdateSchedule::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    /// Every violated constraint, with fields named by their dotted path.
    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let sections = [
            ("student", self.student.problems()),
            ("metanet", self.metanet.problems()),
            ("fusion", self.fusion.problems()),
            ("objective", self.objective.problems()),
            ("schedule", self.schedule.problems()),
        ];
        for (section, errors) in sections {
            for e in errors {
                out.push(match e {
                    Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
                    other => other,
                });
            }
        }
        if !(self.tau_meta > 0.0) || !self.tau_meta.is_finite() {
            out.push(Error::config("tau_meta", "must be positive"));
        }
        if !(self.loss_noise_sigma >= 0.0) || !self.loss_noise_sigma.is_finite() {
            out.push(Error::config("loss_noise_sigma", "must be finite and non-negative"));
        }
        if let Mode::SinglePerspective(k) = self.mode {
            if k >= self.metanet.num_perspectives {
                out.push(Error::config(
                    "mode",
                    format!("perspective {k} outside 0..{}", self.metanet.num_perspectives),
                ));
            }
        }
        out
    }

    /// The configuration actually used: sub-component seeds follow the run
    /// seed and the synergy flag follows the mode.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.student.seed = self.seed;
        c.metanet.seed = self.seed;
        if self.mode == Mode::NoSynergy {
            c.metanet.synergy = false;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub question_id: String,
    pub l_real: Vec<Option<f64>>,
    pub scores: Option<Vec<f64>>,
    pub selected: Vec<usize>,
    pub weights: Vec<f64>,
    pub l_sft: Option<f64>,
    pub l_cons: Option<f64>,
    pub l_total: Option<f64>,
    pub l_meta: Option<f64>,
    /// Spearman correlation between scores and negated losses.
    pub probe: Option<f64>,
    pub student_updated: bool,
    pub meta_updated: bool,
    pub skipped: Option<String>,
}

impl StepRecord {
    fn empty(step: usize, epoch: usize, question_id: &str, slots: usize) -> Self {
        Self {
            step,
            epoch,
            question_id: question_id.to_string(),
            l_real: vec![None; slots],
            scores: None,
            selected: Vec::new(),
            weights: vec![0.0; slots],
            l_sft: None,
            l_cons: None,
            l_total: None,
            l_meta: None,
            probe: None,
            student_updated: false,
            meta_updated: false,
            skipped: None,
        }
    }
}

/// Line-delimited JSON writer flushing every [`FLUSH_EVERY`] records.
pub struct MetricsWriter<W: Write> {
    out: BufWriter<W>,
    unflushed: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out: BufWriter::new(out),
            unflushed: 0,
        }
    }

    pub fn write(&mut self, record: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::State(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.unflushed += 1;
        if self.unflushed >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        self.unflushed = 0;
        Ok(())
    }
}

pub fn read_metrics(text: &str) -> Result<Vec<StepRecord>> {
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

/// Frozen embeddings of one sample: the question and every slot (absent
/// slots embed the empty string).
#[derive(Debug, Clone)]
pub struct EmbeddedSample {
    pub question: Vec<f64>,
    pub rationales: Vec<Vec<f64>>,
}

pub fn embed_corpus(
    corpus: &[ReasoningSample],
    provider: &dyn EmbeddingProvider,
    slots: usize,
) -> Vec<EmbeddedSample> {
    corpus
        .iter()
        .map(|s| EmbeddedSample {
            question: provider.embed(&s.question),
            rationales: (0..slots).map(|k| provider.embed(s.rationale(k).unwrap_or(""))).collect(),
        })
        .collect()
}

/// Sample order for `epoch`; identical across modes for a given seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed, 0x5f1e_0000 + epoch as u64));
    idx
}

fn active_slots(sample: &ReasoningSample, slots: usize) -> Vec<usize> {
    sample.perspective_ids().filter(|&k| k < slots).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub steps: usize,
    pub updates: usize,
    /// Mean ranking loss per (possibly partial) warmup epoch.
    pub epoch_mean_loss: Vec<f64>,
}

/// Trains `metanet` against the frozen student's losses for
/// `schedule.warmup_epochs` passes at `schedule.warmup_lr`.
pub fn warmup_metanet(
    corpus: &[ReasoningSample],
    embedded: &[EmbeddedSample],
    student: &dyn StudentModel,
    metanet: &mut MetaNet,
    schedule: &UpdateSchedule,
    tau_meta: f64,
    seed: u64,
) -> Result<WarmupReport> {
    if corpus.is_empty() {
        return Err(Error::Domain("warmup needs a non-empty corpus".into()));
    }
    if embedded.len() != corpus.len() {
        return Err(Error::shape("warmup embeddings", corpus.len(), embedded.len()));
    }
    let n = corpus.len();
    let total_steps = (schedule.warmup_epochs * n as f64).round() as usize;
    let slots = metanet.config().num_perspectives;
    let accum = schedule.meta_accum_steps * schedule.batch_size;
    let mut acc = GradAccumulator::new(Role::Meta, metanet.params().len());
    let mut opt = Optimizer::new(schedule.meta_rule, metanet.params().len());
    // the frozen student's losses never change, so compute them once
    let mut cached: Vec<Option<LossVector>> = vec![None; n];
    let mut tape = Tape::default();
    let mut epoch_losses: Vec<Vec<f64>> = Vec::new();
    for step in 0..total_steps {
        let epoch = step / n;
        if step % n == 0 {
            epoch_losses.push(Vec::new());
        }
        let order = epoch_order(n, seed ^ 0x3a7e, epoch);
        let i = order[step % n];
        let sample = &corpus[i];
        let active = active_slots(sample, slots);
        if active.len() < 2 {
            continue;
        }
        if cached[i].is_none() {
            let mut values = vec![None; slots];
            for &k in &active {
                values[k] = Some(student.perspective_nll(sample, k)?.value);
            }
            cached[i] = Some(LossVector::new(sample.sample_id.clone(), values)?);
        }
        let losses = cached[i].as_ref().expect("filled above");
        let scores = metanet.forward_embedded(
            &sample.sample_id,
            &embedded[i].question,
            &embedded[i].rationales,
            &mut tape,
        )?;
        let out = listnet_loss(&scores, losses, tau_meta)?;
        epoch_losses.last_mut().expect("pushed at epoch start").push(out.loss);
        let grads = metanet.backward(&out.grad, &tape)?;
        acc.push(grads.data(), metanet.params_mut().data_mut(), accum, schedule.warmup_lr, &mut opt)?;
    }
    Ok(WarmupReport {
        steps: total_steps,
        updates: acc.updates(),
        epoch_mean_loss: epoch_losses.iter().filter(|v| !v.is_empty()).map(|v| mean(v)).collect(),
    })
}

/// Mutable training state for one run.
pub struct Trainer<S: StudentModel> {
    config: RunConfig,
    corpus: Vec<ReasoningSample>,
    embedded: Vec<EmbeddedSample>,
    student: S,
    metanet: MetaNet,
    student_opt: Optimizer,
    meta_opt: Optimizer,
    student_acc: GradAccumulator,
    meta_acc: GradAccumulator,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
    step: usize,
}

impl<S: StudentModel> Trainer<S> {
    pub fn new(config: &RunConfig, corpus: Vec<ReasoningSample>, student: S) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Domain("training corpus is empty".into()));
        }
        let config = config.resolved();
        let metanet = MetaNet::init(&config.metanet)?;
        let embedder = HashedBagEmbedder::new(config.metanet.embed_dim, EMBEDDER_SEED);
        let embedded = embed_corpus(&corpus, &embedder, config.metanet.num_perspectives);
        let n_student = student.params().len();
        let n_meta = metanet.params().len();
        let noise = if config.loss_noise_sigma > 0.0 {
            let normal = Normal::new(0.0, config.loss_noise_sigma)
                .map_err(|e| Error::config("loss_noise_sigma", e.to_string()))?;
            Some((normal, seeded_rng(config.seed, 0x401e)))
        } else {
            None
        };
        Ok(Self {
            student_opt: Optimizer::new(config.schedule.student_rule, n_student),
            meta_opt: Optimizer::new(config.schedule.meta_rule, n_meta),
            student_acc: GradAccumulator::new(Role::Student, n_student),
            meta_acc: GradAccumulator::new(Role::Meta, n_meta),
            config,
            corpus,
            embedded,
            student,
            metanet,
            noise,
            step: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn corpus(&self) -> &[ReasoningSample] {
        &self.corpus
    }

    pub fn student(&self) -> &S {
        &self.student
    }

    pub fn metanet(&self) -> &MetaNet {
        &self.metanet
    }

    pub fn student_updates(&self) -> usize {
        self.student_acc.updates()
    }

    pub fn meta_updates(&self) -> usize {
        self.meta_acc.updates()
    }

    pub fn into_parts(self) -> (S, MetaNet) {
        (self.student, self.metanet)
    }

    pub fn warmup(&mut self) -> Result<WarmupReport> {
        warmup_metanet(
            &self.corpus,
            &self.embedded,
            &self.student,
            &mut self.metanet,
            &self.config.schedule,
            self.config.tau_meta,
            self.config.seed,
        )
    }

    fn observe_losses(&mut self, sample_idx: usize, active: &[usize]) -> Result<LossVector> {
        let sample = &self.corpus[sample_idx];
        let mut values = vec![None; self.config.metanet.num_perspectives];
        for &k in active {
            let mut v = self.student.perspective_nll(sample, k)?.value;
            if let Some((normal, rng)) = self.noise.as_mut() {
                v = (v + normal.sample(rng)).max(0.0);
            }
            values[k] = Some(v);
        }
        LossVector::new(sample.sample_id.clone(), values)
    }

    /// One question: gate, supervise the student, calibrate the MetaNet.
    pub fn train_step(&mut self, sample_idx: usize, epoch: usize) -> Result<StepRecord> {
        let slots = self.config.metanet.num_perspectives;
        let mode = self.config.mode;
        let step = self.step;
        self.step += 1;
        let sample_id = self.corpus[sample_idx].sample_id.clone();
        let mut rec = StepRecord::empty(step, epoch, &sample_id, slots);

        let all = active_slots(&self.corpus[sample_idx], slots);
        let active = match mode {
            Mode::SinglePerspective(k) => all.iter().copied().filter(|&j| j == k).collect(),
            _ => all,
        };
        if active.is_empty() {
            rec.skipped = Some("no usable rationale".into());
            return Ok(rec);
        }
        if mode.uses_metanet() && active.len() < 2 {
            rec.skipped = Some(format!("{} perspective(s); ranking loss needs 2", active.len()));
            return Ok(rec);
        }

        let losses = self.observe_losses(sample_idx, &active)?;
        rec.l_real = losses.values.clone();

        let mut tape = Tape::default();
        let scores: Option<CompatibilityScores> = if mode.uses_metanet() {
            let e = &self.embedded[sample_idx];
            Some(self.metanet.forward_embedded(&sample_id, &e.question, &e.rationales, &mut tape)?)
        } else {
            None
        };

        let selection = match (mode, &scores) {
            (Mode::Full | Mode::NoSynergy, Some(s)) => {
                let chosen = select_among(s, &active, &self.config.fusion)?;
                fusion_weights(s, &chosen, &self.config.fusion)?
            }
            (Mode::Reactive, _) => FusionSelection::from_weights(&reactive_weights(&losses)?)?,
            _ => FusionSelection::uniform(&active)?,
        };
        rec.selected = selection.selected.clone();
        rec.weights = selection.dense(slots);

        let sample = &self.corpus[sample_idx];
        let (value, grad) = student_objective(&self.student, sample, &selection, &self.config.objective)?;
        rec.l_sft = Some(value.sft);
        rec.l_cons = Some(value.cons);
        rec.l_total = Some(value.total);
        let sched = &self.config.schedule;
        rec.student_updated = self
            .student_acc
            .push(
                &grad,
                self.student.params_mut(),
                sched.student_accum_steps * sched.batch_size,
                sched.student_lr,
                &mut self.student_opt,
            )?
            .is_some();

        if let Some(scores) = scores {
            let out = listnet_loss(&scores, &losses, self.config.tau_meta)?;
            rec.l_meta = Some(out.loss);
            let (s_active, neg_l): (Vec<f64>, Vec<f64>) =
                losses.active().map(|(k, l)| (scores.scores[k], -l)).unzip();
            rec.probe = spearman(&s_active, &neg_l);
            let grads = self.metanet.backward(&out.grad, &tape)?;
            rec.meta_updated = self
                .meta_acc
                .push(
                    grads.data(),
                    self.metanet.params_mut().data_mut(),
                    sched.meta_accum_steps * sched.batch_size,
                    sched.meta_lr,
                    &mut self.meta_opt,
                )?
                .is_some();
            rec.scores = Some(scores.scores);
        }
        Ok(rec)
    }

    /// Runs one shuffled pass, handing each record to `sink`.
    pub fn train_epoch(
        &mut self,
        epoch: usize,
        sink: &mut dyn FnMut(&StepRecord) -> Result<()>,
    ) -> Result<()> {
        for i in epoch_order(self.corpus.len(), self.config.seed, epoch) {
            let rec = self.train_step(i, epoch)?;
            sink(&rec)?;
        }
        Ok(())
    }

    /// Warmup followed by `config.epochs` epochs; records go to `log`.
    pub fn fit<W: Write>(&mut self, log: &mut MetricsWriter<W>) -> Result<(WarmupReport, Vec<StepRecord>)> {
        let warm = self.warmup()?;
        let mut records = Vec::new();
        let result = (0..self.config.epochs).try_for_each(|epoch| {
            self.train_epoch(epoch, &mut |r| {
                log.write(r)?;
                records.push(r.clone());
                Ok(())
            })
        });
        log.flush()?;
        result?;
        Ok((warm, records))
    }
}

/// Builds the vocabulary and a seeded student for `corpus`.
pub fn build_student(config: &StudentConfig, corpus: &[ReasoningSample]) -> Result<ToyStudent> {
    let answer = default_answer_tokens();
    let vocab = Vocab::build(corpus, &answer)?;
    ToyStudent::new(config, vocab, &answer)
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STUDENT_FILE: &str = "student.ckpt";
pub const METANET_FILE: &str = "metanet.ckpt";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const WARMUP_FILE: &str = "warmup.json";

pub struct RunOutput {
    pub student: ToyStudent,
    pub metanet: MetaNet,
    pub records: Vec<StepRecord>,
    pub warmup: WarmupReport,
    pub metrics_path: Option<PathBuf>,
}

/// Full pipeline on the configured corpus. With `out_dir`, writes the
/// metrics log, both checkpoints, the resolved config and the warmup
/// summary there.
pub fn run(config: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    let corpus = config.corpus.load()?;
    run_on(config, corpus, out_dir)
}

pub fn run_on(config: &RunConfig, corpus: Vec<ReasoningSample>, out_dir: Option<&Path>) -> Result<RunOutput> {
    let resolved = config.resolved();
    let student = build_student(&resolved.student, &corpus)?;
    let mut trainer = Trainer::new(config, corpus, student)?;
    let (warmup, records, metrics_path) = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let json = serde_json::to_string_pretty(&resolved).map_err(|e| Error::State(e.to_string()))?;
            std::fs::write(dir.join(RUN_CONFIG_FILE), json + "\n")?;
            let path = dir.join(METRICS_FILE);
            let mut log = MetricsWriter::new(File::create(&path)?);
            let (w, r) = trainer.fit(&mut log)?;
            (w, r, Some(path))
        }
        None => {
            let (w, r) = trainer.fit(&mut MetricsWriter::new(std::io::sink()))?;
            (w, r, None)
        }
    };
    let (student, metanet) = trainer.into_parts();
    if let Some(dir) = out_dir {
        student.to_checkpoint()?.save(&dir.join(STUDENT_FILE))?;
        metanet.to_checkpoint().save(&dir.join(METANET_FILE))?;
        let json = serde_json::to_string_pretty(&warmup).map_err(|e| Error::State(e.to_string()))?;
        std::fs::write(dir.join(WARMUP_FILE), json + "\n")?;
    }
    Ok(RunOutput {
        student,
        metanet,
        records,
        warmup,
        metrics_path,
    })
}

/// Trailing moving average; entry `i` averages `series[i + 1 - window ..= i]`
/// (fewer at the start).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..series.len())
        .map(|i| mean(&series[(i + 1).saturating_sub(w)..=i]))
        .collect()
}

/// Per-slot weight volatility: the population standard deviation of each
/// `alpha_k` series inside every length-`window` rolling window, averaged
/// over windows. Skipped steps are ignored.
pub fn weight_volatility(log: &[StepRecord], window: usize) -> Result<Vec<f64>> {
    let rows: Vec<&Vec<f64>> = log.iter().filter(|r| r.skipped.is_none()).map(|r| &r.weights).collect();
    if window < 2 {
        return Err(Error::Domain("volatility window must be at least 2".into()));
    }
    if rows.len() < window {
        return Err(Error::Domain(format!(
            "{} usable steps is shorter than the window {window}",
            rows.len()
        )));
    }
    let slots = rows[0].len();
    let mut out = vec![0.0; slots];
    for (k, o) in out.iter_mut().enumerate() {
        let series: Vec<f64> = rows.iter().map(|w| w.get(k).copied().unwrap_or(0.0)).collect();
        let stds: Vec<f64> = series.windows(window).map(std_dev).collect();
        *o = mean(&stds);
    }
    Ok(out)
}

/// Mean of the non-missing `probe` values of the records from `epoch`.
pub fn mean_probe(log: &[StepRecord], epoch: usize) -> Option<f64> {
    let v: Vec<f64> = log.iter().filter(|r| r.epoch == epoch).filter_map(|r| r.probe).collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Mean `L_total` over the records from `epoch`.
pub fn mean_total_loss(log: &[StepRecord], epoch: usize) -> Option<f64> {
    let v: Vec<f64> = log.iter().filter(|r| r.epoch == epoch).filter_map(|r| r.l_total).collect();
    (!v.is_empty()).then(|| mean(&v))
}

#[cfg(test)]
mod tests;
