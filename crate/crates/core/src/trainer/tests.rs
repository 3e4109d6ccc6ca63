use super::*;
use crate::corpus::make_synthetic_corpus;

fn small_config(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        seed: 11,
        epochs: 1,
        student: StudentConfig::tiny(),
        metanet: MetaNetConfig {
            latent_dim: 16,
            align_hidden: 16,
            score_hidden: 8,
            ..MetaNetConfig::default()
        },
        ..RunConfig::default()
    }
}

fn trainer(mode: Mode, n: usize) -> Trainer<ToyStudent> {
    let cfg = small_config(mode);
    let corpus = make_synthetic_corpus(n, 4).unwrap();
    let student = build_student(&cfg.resolved().student, &corpus).unwrap();
    Trainer::new(&cfg, corpus, student).unwrap()
}

fn record_with_weights(w: &[f64]) -> StepRecord {
    let mut r = StepRecord::empty(0, 0, "q", w.len());
    r.weights = w.to_vec();
    r
}

#[test]
fn mode_names_round_trip() {
    for m in [
        Mode::Full,
        Mode::Reactive,
        Mode::NoSynergy,
        Mode::FixedUniform,
        Mode::SinglePerspective(3),
    ] {
        assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
    }
    assert_eq!("single_perspective(5)".parse::<Mode>().unwrap(), Mode::SinglePerspective(5));
    let err = "greedy".parse::<Mode>().unwrap_err().to_string();
    assert!(err.contains("fixed_uniform"), "{err}");
    assert!(small_config(Mode::SinglePerspective(8)).validate().is_err());
}

#[test]
fn fixed_uniform_weights_are_one_eighth() {
    let mut t = trainer(Mode::FixedUniform, 2);
    let rec = t.train_step(0, 0).unwrap();
    assert_eq!(rec.selected, (0..8).collect::<Vec<_>>());
    for w in rec.weights {
        assert!((w - 0.125).abs() < 1e-15);
    }
    assert!(rec.scores.is_none() && rec.l_meta.is_none());
}

#[test]
fn single_perspective_reduces_to_plain_sft() {
    let mut t = trainer(Mode::SinglePerspective(3), 2);
    let sample = t.corpus()[1].clone();
    let ce = t.student().perspective_nll(&sample, 3).unwrap().value;
    let rec = t.train_step(1, 0).unwrap();
    assert_eq!(rec.selected, vec![3]);
    assert_eq!(rec.l_cons, Some(0.0));
    assert!((rec.l_total.unwrap() - ce).abs() < 1e-12);
    assert_eq!(rec.l_real.iter().flatten().count(), 1);
}

#[test]
fn full_mode_records_are_complete() {
    let mut t = trainer(Mode::Full, 3);
    let rec = t.train_step(2, 0).unwrap();
    assert!(rec.skipped.is_none());
    assert_eq!(rec.scores.as_ref().unwrap().len(), 8);
    assert!((rec.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(rec.l_meta.unwrap() >= 0.0);
    assert!(rec.student_updated);
    assert!(!rec.meta_updated, "first of four accumulated meta steps");
    assert!(rec.probe.is_some());
}

#[test]
fn full_mode_skips_single_perspective_samples() {
    let cfg = small_config(Mode::Full);
    let mut corpus = make_synthetic_corpus(2, 4).unwrap();
    corpus[0].rationales.retain(|&k, _| k == 2);
    corpus[0].predictions.retain(|&k, _| k == 2);
    let student = build_student(&cfg.resolved().student, &corpus).unwrap();
    let mut t = Trainer::new(&cfg, corpus, student).unwrap();
    let before = t.student().params().to_vec();
    let rec = t.train_step(0, 0).unwrap();
    assert!(rec.skipped.is_some());
    assert!(!rec.student_updated && !rec.meta_updated);
    assert_eq!(t.student().params(), &before[..]);
}

#[test]
fn identical_configs_give_identical_logs() {
    let cfg = small_config(Mode::Full);
    let corpus = make_synthetic_corpus(6, 4).unwrap();
    let a = run_on(&cfg, corpus.clone(), None).unwrap();
    let b = run_on(&cfg, corpus, None).unwrap();
    let ja: Vec<String> = a.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let jb: Vec<String> = b.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    assert_eq!(ja, jb);
    assert_eq!(a.student.params(), b.student.params());
}

#[test]
fn modes_share_question_order() {
    let corpus = make_synthetic_corpus(6, 4).unwrap();
    let full = run_on(&small_config(Mode::Full), corpus.clone(), None).unwrap();
    let reactive = run_on(&small_config(Mode::Reactive), corpus, None).unwrap();
    let ids = |o: &RunOutput| o.records.iter().map(|r| r.question_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&full), ids(&reactive));
}

#[test]
fn warmup_leaves_the_student_untouched() {
    let mut t = trainer(Mode::Full, 4);
    let student_before = t.student().params().to_vec();
    let meta_before = t.metanet().params().data().to_vec();
    let report = t.warmup().unwrap();
    assert_eq!(t.student().params(), &student_before[..]);
    assert_ne!(t.metanet().params().data(), &meta_before[..]);
    assert_eq!(report.steps, 4);
    assert_eq!(report.updates, 1);
}

#[test]
fn zero_warmup_is_identity() {
    let mut cfg = small_config(Mode::Full);
    cfg.schedule.warmup_epochs = 0.0;
    let corpus = make_synthetic_corpus(3, 4).unwrap();
    let student = build_student(&cfg.resolved().student, &corpus).unwrap();
    let mut t = Trainer::new(&cfg, corpus, student).unwrap();
    let before = t.metanet().params().data().to_vec();
    let report = t.warmup().unwrap();
    assert_eq!(report.steps, 0);
    assert_eq!(t.metanet().params().data(), &before[..]);
}

#[test]
fn warmup_loss_does_not_increase() {
    let mut cfg = small_config(Mode::Full);
    cfg.schedule.warmup_epochs = 4.0;
    let corpus = make_synthetic_corpus(16, 6).unwrap();
    let student = build_student(&cfg.resolved().student, &corpus).unwrap();
    let mut t = Trainer::new(&cfg, corpus, student).unwrap();
    let report = t.warmup().unwrap();
    assert_eq!(report.epoch_mean_loss.len(), 4);
    for w in report.epoch_mean_loss.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{:?}", report.epoch_mean_loss);
    }
}

#[test]
fn zero_epochs_returns_the_warmed_up_state() {
    let mut cfg = small_config(Mode::Full);
    cfg.epochs = 0;
    let corpus = make_synthetic_corpus(4, 4).unwrap();
    let out = run_on(&cfg, corpus.clone(), None).unwrap();
    assert!(out.records.is_empty());
    let mut t = Trainer::new(&cfg, corpus.clone(), build_student(&cfg.resolved().student, &corpus).unwrap()).unwrap();
    t.warmup().unwrap();
    assert_eq!(out.metanet.params().data(), t.metanet().params().data());
    assert_eq!(out.student.params(), t.student().params());
}

#[test]
fn update_counts_follow_the_schedule() {
    let mut cfg = small_config(Mode::Full);
    cfg.epochs = 2;
    let corpus = make_synthetic_corpus(8, 4).unwrap();
    let out = run_on(&cfg, corpus, None).unwrap();
    let student = out.records.iter().filter(|r| r.student_updated).count();
    let meta = out.records.iter().filter(|r| r.meta_updated).count();
    assert_eq!(student, 16);
    assert_eq!(meta, 4);
    assert_eq!(student, meta * 4);
}

#[test]
fn reactive_mode_never_touches_the_metanet() {
    let cfg = small_config(Mode::Reactive);
    let corpus = make_synthetic_corpus(4, 4).unwrap();
    let student = build_student(&cfg.resolved().student, &corpus).unwrap();
    let mut t = Trainer::new(&cfg, corpus, student).unwrap();
    t.warmup().unwrap();
    let after_warmup = t.metanet().params().data().to_vec();
    t.train_epoch(0, &mut |r| {
        assert!(r.scores.is_none());
        assert!(!r.meta_updated);
        Ok(())
    })
    .unwrap();
    assert_eq!(t.metanet().params().data(), &after_warmup[..]);
}

#[test]
fn single_perspective_has_no_consistency_term() {
    let mut cfg = small_config(Mode::SinglePerspective(6));
    cfg.epochs = 2;
    let out = run_on(&cfg, make_synthetic_corpus(5, 4).unwrap(), None).unwrap();
    assert!(out.records.iter().all(|r| r.l_cons == Some(0.0)));
}

#[test]
fn no_synergy_mode_disables_attention() {
    let cfg = small_config(Mode::NoSynergy);
    assert!(!cfg.resolved().metanet.synergy);
    assert!(small_config(Mode::Full).resolved().metanet.synergy);
}

#[test]
fn volatility_examples() {
    let constant: Vec<StepRecord> = (0..6).map(|_| record_with_weights(&[0.3, 0.7])).collect();
    assert!(weight_volatility(&constant, 3).unwrap().iter().all(|v| v.abs() < 1e-12));

    let alternating: Vec<StepRecord> = (0..6)
        .map(|i| record_with_weights(if i % 2 == 0 { &[1.0, 0.0] } else { &[0.0, 1.0] }))
        .collect();
    let v = weight_volatility(&alternating, 2).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);

    let mixed: Vec<StepRecord> = (0..7)
        .map(|i| record_with_weights(&[0.1 * i as f64, 0.5, 1.0 - 0.1 * (i % 3) as f64]))
        .collect();
    let permuted: Vec<StepRecord> = mixed
        .iter()
        .map(|r| record_with_weights(&[r.weights[2], r.weights[0], r.weights[1]]))
        .collect();
    let a = weight_volatility(&mixed, 3).unwrap();
    let b = weight_volatility(&permuted, 3).unwrap();
    assert_eq!(vec![a[2], a[0], a[1]], b);

    assert!(matches!(weight_volatility(&constant[..2], 3), Err(Error::Domain(_))));
}

#[test]
fn moving_average_smooths() {
    assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
}

#[test]
fn metrics_round_trip_through_text() {
    let mut t = trainer(Mode::Full, 2);
    let recs = vec![t.train_step(0, 0).unwrap(), t.train_step(1, 0).unwrap()];
    let mut buf = Vec::new();
    {
        let mut w = MetricsWriter::new(&mut buf);
        for r in &recs {
            w.write(r).unwrap();
        }
        w.flush().unwrap();
    }
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_metrics(&text).unwrap(), recs);
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Mode::Full);
    let out = run_on(&cfg, make_synthetic_corpus(3, 4).unwrap(), Some(dir.path())).unwrap();
    for f in [METRICS_FILE, STUDENT_FILE, METANET_FILE, RUN_CONFIG_FILE, WARMUP_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(out.metrics_path.unwrap()).unwrap();
    assert_eq!(read_metrics(&text).unwrap(), out.records);
    let echoed: RunConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(RUN_CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(echoed, cfg.resolved());
    let student = ToyStudent::from_checkpoint(&crate::params::Checkpoint::load(&dir.path().join(STUDENT_FILE)).unwrap()).unwrap();
    assert_eq!(student.params(), out.student.params());
}

#[test]
fn loss_stream_noise_is_seeded() {
    let mut cfg = small_config(Mode::Reactive);
    cfg.loss_noise_sigma = 0.3;
    let corpus = make_synthetic_corpus(4, 4).unwrap();
    let stream = LossStream::linear(8, 1.0, 0.2);
    let mut a = Trainer::new(&cfg, corpus.clone(), stream.clone()).unwrap();
    let mut b = Trainer::new(&cfg, corpus, stream).unwrap();
    let ra = a.train_step(0, 0).unwrap();
    let rb = b.train_step(0, 0).unwrap();
    assert_eq!(ra, rb);
    let noisy: Vec<f64> = ra.l_real.iter().flatten().copied().collect();
    assert!(noisy.iter().zip(&[1.0, 1.2, 1.4]).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn every_problem_is_reported_with_its_section() {
    let mut cfg = small_config(Mode::SinglePerspective(9));
    cfg.student.num_heads = 3;
    cfg.fusion.beta = 1.5;
    cfg.schedule.meta_lr = 0.0;
    cfg.tau_meta = -1.0;
    let fields: Vec<String> = cfg
        .problems()
        .into_iter()
        .map(|e| match e {
            Error::Config { field, .. } => field,
            other => panic!("{other:?}"),
        })
        .collect();
    for f in ["student.num_heads", "fusion.beta", "schedule.meta_lr", "tau_meta", "mode"] {
        assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
    }
    assert!(small_config(Mode::Full).problems().is_empty());
}
