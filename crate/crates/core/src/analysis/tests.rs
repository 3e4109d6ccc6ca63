use super::*;
use crate::corpus::make_synthetic_corpus;
use crate::losses::{StudentConfig, Vocab};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

/// `k` unit-variance Gaussian blobs in `dim` dimensions whose means sit
/// `sep` apart pairwise (scaled basis vectors).
pub(crate) fn planted(k: usize, per: usize, dim: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded_rng(seed, 77);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        for _ in 0..per {
            let mut p: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
            p[c] += sep / std::f64::consts::SQRT_2;
            pts.push(p);
            labels.push(c);
        }
    }
    (pts, labels)
}

fn fit(points: &[Vec<f64>], seed: u64) -> DpmmModel {
    fit_dpmm(points, &DpmmConfig { seed, ..Default::default() }).unwrap()
}

#[test]
fn two_separated_blobs_give_two_components() {
    let mut hits = 0;
    for seed in 0..20 {
        let (pts, _) = planted(2, 100, 2, 10.0, seed);
        if fit(&pts, seed).num_active() == 2 {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn one_tight_blob_gives_one_component() {
    for seed in 0..5 {
        let (pts, _) = planted(1, 200, 3, 0.0, seed);
        assert_eq!(fit(&pts, seed).num_active(), 1, "seed {seed}");
    }
}

#[test]
fn evidence_bound_is_monotone() {
    for seed in 0..5 {
        let (pts, _) = planted(3, 60, 4, 6.0, seed);
        let m = fit(&pts, seed);
        for w in m.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn weights_and_responsibilities_are_normalized() {
    let (pts, _) = planted(3, 40, 3, 8.0, 4);
    let m = fit(&pts, 4);
    assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(m.weights.iter().all(|&w| w >= 0.0));
    assert!(m.variances.iter().flatten().all(|&v| v > 0.0));
    assert!((m.mass.iter().sum::<f64>() - pts.len() as f64).abs() < 1e-6);
    for p in &pts {
        let r = m.responsibilities(p);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(m.num_active() <= m.truncation);
}

#[test]
fn identical_points_hit_the_variance_floor() {
    let pts = vec![vec![1.5, -2.0]; 40];
    let m = fit(&pts, 0);
    assert_eq!(m.num_active(), 1);
    assert!(m.warnings.iter().any(|w| w.contains("floored")));
    assert!(m.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR * 0.999));
}

#[test]
fn dpmm_rejects_bad_inputs() {
    let (pts, _) = planted(1, 10, 2, 0.0, 0);
    assert!(matches!(fit_dpmm(&pts, &DpmmConfig::default()), Err(Error::Domain(_))));
    let cfg = DpmmConfig { truncation: 1, ..Default::default() };
    assert!(matches!(fit_dpmm(&pts, &cfg), Err(Error::Config { .. })));
}

#[test]
fn deserialized_model_assigns_like_the_original() {
    let (pts, labels) = planted(2, 50, 2, 10.0, 9);
    let m = fit(&pts, 9);
    let back: DpmmModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    let agree = pts.iter().filter(|p| m.assign(p) == back.assign(p)).count();
    assert!(agree as f64 >= 0.98 * pts.len() as f64);
    // and both separate the planted blobs
    let a = m.assign(&pts[0]);
    assert!(pts.iter().zip(&labels).all(|(p, &l)| (m.assign(p) == a) == (l == 0)));
}

fn batches(seed: u64) -> Vec<HiddenStateBatch> {
    let (pts, _) = planted(3, 30, 12, 6.0, seed);
    pts.chunks(45)
        .map(|c| HiddenStateBatch::new(c.to_vec(), None).unwrap())
        .collect()
}

#[test]
fn projection_is_finite_deterministic_and_beats_zero_map() {
    let b = batches(1);
    let cfg = ProjectionConfig { d_z: 4, epochs: 300, ..Default::default() };
    let p = train_projection(&b, &cfg).unwrap();
    let q = train_projection(&b, &cfg).unwrap();
    assert_eq!(p, q);
    let z = p.project_all(&b[0].rows).unwrap();
    assert!(z.iter().all(|v| v.len() == 4 && v.iter().all(|x| x.is_finite())));
    assert!(*p.loss_trace.last().unwrap() < zero_map_error(&b));
    assert!(p.loss_trace.last().unwrap() < &p.loss_trace[0]);
}

#[test]
fn projection_preconditions() {
    let b = batches(2);
    let wide = ProjectionConfig { d_z: 12, ..Default::default() };
    assert!(matches!(train_projection(&b, &wide), Err(Error::Config { .. })));
    assert!(matches!(train_projection(&b[..1], &ProjectionConfig::default()), Err(Error::Domain(_))));
    assert!(HiddenStateBatch::new(vec![vec![0.0]], None).is_err());
    assert!(HiddenStateBatch::new(vec![vec![0.0], vec![f64::NAN]], None).is_err());
    let p = train_projection(&b, &ProjectionConfig { epochs: 2, ..Default::default() }).unwrap();
    assert!(p.project(&[0.0; 3]).is_err());
}

fn small_tsne(seed: u64) -> TsneConfig {
    TsneConfig { perplexity: 10.0, iters: 500, seed, ..Default::default() }
}

#[test]
fn tsne_separates_two_clusters() {
    let (pts, labels) = planted(2, 40, 8, 10.0, 3);
    let xy = embed_2d(&pts, &small_tsne(3)).unwrap();
    assert_eq!(xy.len(), pts.len());
    assert!(xy.iter().flatten().all(|v| v.is_finite()));
    let coords: Vec<Vec<f64>> = xy.iter().map(|p| p.to_vec()).collect();
    assert!(silhouette(&coords, &labels) >= 0.5);
}

#[test]
fn tsne_keeps_nearest_neighbours() {
    let (pts, _) = planted(2, 40, 8, 10.0, 5);
    let xy = embed_2d(&pts, &small_tsne(5)).unwrap();
    let nn = |rows: &dyn Fn(usize, usize) -> f64, i: usize| {
        (0..pts.len()).filter(|&j| j != i).min_by(|&a, &b| rows(i, a).total_cmp(&rows(i, b))).unwrap()
    };
    let hi = |i: usize, j: usize| euclidean(&pts[i], &pts[j]);
    let lo = |i: usize, j: usize| euclidean(&xy[i], &xy[j]);
    // same cluster is the figure of merit for exact identity on noise blobs
    let kept = (0..pts.len()).filter(|&i| (nn(&hi, i) < 40) == (nn(&lo, i) < 40)).count();
    assert!(kept as f64 >= 0.7 * pts.len() as f64);
}

#[test]
fn tsne_duplicates_coincide_and_runs_repeat() {
    let (mut pts, _) = planted(2, 20, 4, 10.0, 6);
    pts.push(pts[3].clone());
    let a = embed_2d(&pts, &TsneConfig { perplexity: 5.0, ..Default::default() }).unwrap();
    let b = embed_2d(&pts, &TsneConfig { perplexity: 5.0, ..Default::default() }).unwrap();
    assert_eq!(a, b);
    assert!(euclidean(&a[3], &a[40]) < 1e-3);
}

#[test]
fn tsne_rejects_infeasible_perplexity() {
    let (pts, _) = planted(1, 12, 2, 0.0, 0);
    assert!(matches!(embed_2d(&pts, &TsneConfig::default()), Err(Error::Domain(_))));
    assert!(matches!(embed_2d(&pts[..4], &small_tsne(0)), Err(Error::Domain(_))));
}

#[test]
fn silhouette_reference_values() {
    let c = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
    // a = 1, b = 10 for the outer points, 9.5/avg for inner ones
    let s = silhouette(&c, &[0, 0, 1, 1]);
    let expect = ((1.0 - 1.0 / 10.5) * 2.0 + (1.0 - 1.0 / 9.5) * 2.0) / 4.0;
    assert!((s - expect).abs() < 1e-12);
}

#[test]
fn inclination_distances() {
    let (pts, _) = planted(2, 60, 3, 10.0, 2);
    let m = fit(&pts, 2);
    let k = m.active[0];
    let inc = inclination(&m.means[k], &m);
    assert_eq!(inc.distances[&k], 0.0);
    assert_eq!(inc.nearest, k);
    // planted point 3 from A and 10 from B
    let (a, b) = (m.active[0], m.active[1]);
    let dir: Vec<f64> = m.means[b].iter().zip(&m.means[a]).map(|(y, x)| y - x).collect();
    let len = euclidean(&m.means[a], &m.means[b]);
    let off: Vec<f64> = m.means[a].iter().zip(&dir).map(|(x, d)| x + 0.3 * d).collect();
    let inc = inclination(&off, &m);
    assert_eq!(inc.nearest, a);
    assert!((inc.distances[&a] - 0.3 * len).abs() < 1e-9);
}

#[test]
fn inclination_is_relabeling_covariant() {
    let (pts, _) = planted(3, 40, 3, 10.0, 11);
    let m = fit(&pts, 11);
    let mut swapped = m.clone();
    let (a, b) = (m.active[0], m.active[1]);
    swapped.means.swap(a, b);
    let z = &pts[7];
    let (x, y) = (inclination(z, &m), inclination(z, &swapped));
    assert_eq!(x.distances[&a], y.distances[&b]);
    assert_eq!(x.distances[&b], y.distances[&a]);
}

fn lp(z: Vec<f64>) -> LatentPoint {
    LatentPoint { z, component_id: 0, tag: String::new() }
}

#[test]
fn coverage_counts() {
    let (pts, labels) = planted(4, 50, 4, 10.0, 8);
    let m = fit(&pts, 8);
    assert_eq!(m.num_active(), 4);
    let mut runs = BTreeMap::new();
    runs.insert("spread".to_string(), pts.iter().cloned().map(lp).collect::<Vec<_>>());
    runs.insert(
        "collapsed".to_string(),
        pts.iter().zip(&labels).filter(|(_, &l)| l == 2).map(|(p, _)| lp(p.clone())).collect(),
    );
    let cov = coverage_report(&runs, &m).unwrap();
    assert_eq!(cov["spread"].coverage_count, 4);
    assert_eq!(cov["collapsed"].coverage_count, 1);
    for c in cov.values() {
        assert!((c.occupancy.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    runs.insert("empty".into(), Vec::new());
    assert!(coverage_report(&runs, &m).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn inclination_triangle_inequality(seed in 0u64..1000, x in -8.0f64..8.0, y in -8.0f64..8.0) {
        let (pts, _) = planted(2, 30, 2, 10.0, seed);
        let m = fit(&pts, seed);
        let z = vec![x, y];
        let inc = inclination(&z, &m);
        for (&a, &da) in &inc.distances {
            for (&b, &db) in &inc.distances {
                let ab = euclidean(&m.means[a], &m.means[b]);
                prop_assert!(da <= db + ab + 1e-9);
            }
        }
    }
}

fn tiny_corpus() -> (Vec<ReasoningSample>, ToyStudent, ToyStudent) {
    let corpus = make_synthetic_corpus(6, 1).unwrap();
    let vocab = Vocab::build(&corpus, &crate::losses::default_answer_tokens()).unwrap();
    let mk = |seed| {
        ToyStudent::new(
            &StudentConfig { seed, ..StudentConfig::tiny() },
            vocab.clone(),
            &crate::losses::default_answer_tokens(),
        )
        .unwrap()
    };
    (corpus, mk(1), mk(2))
}

fn small_analysis() -> AnalysisConfig {
    AnalysisConfig {
        projection: ProjectionConfig { d_z: 3, epochs: 100, ..Default::default() },
        dpmm: DpmmConfig { truncation: 4, ..Default::default() },
        tsne: TsneConfig { iters: 200, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn pipeline_writes_schema_valid_tables() {
    let (corpus, a, b) = tiny_corpus();
    let runs = [
        ProbeRun { label: "full".into(), student: &a, perspectives: None },
        ProbeRun { label: "single_perspective:2".into(), student: &b, perspectives: Some(vec![2]) },
    ];
    let report = analyze(&runs, &corpus, &small_analysis()).unwrap();
    assert_eq!(report.points["single_perspective:2"].len(), corpus.len());
    assert!(report.points["single_perspective:2"].iter().all(|p| p.tag == "2"));
    assert_eq!(report.coverage.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    report.write_csv(dir.path()).unwrap();
    let coords = std::fs::read_to_string(dir.path().join(COORDS_FILE)).unwrap();
    assert!(coords.starts_with("run,tag,x,y,component\n"));
    let total: usize = report.points.values().map(Vec::len).sum();
    assert_eq!(coords.lines().count(), total + 1);
    let occ = std::fs::read_to_string(dir.path().join(OCCUPANCY_FILE)).unwrap();
    assert_eq!(occ.lines().count(), 3);
    assert!(occ.starts_with("run,points,coverage_count,c"));
    let inc = std::fs::read_to_string(dir.path().join(INCLINATION_FILE)).unwrap();
    assert!(inc.starts_with("run,tag,component,mean_distance,min_distance,nearest_share\n"));

    let again = analyze(&runs, &corpus, &small_analysis()).unwrap();
    assert_eq!(again.coords, report.coords);
    assert_eq!(again.inclination, report.inclination);
}

#[test]
fn pipeline_rejects_duplicate_labels() {
    let (corpus, a, _) = tiny_corpus();
    let runs = [
        ProbeRun { label: "x".into(), student: &a, perspectives: None },
        ProbeRun { label: "x".into(), student: &a, perspectives: None },
    ];
    assert!(analyze(&runs, &corpus, &small_analysis()).is_err());
}
