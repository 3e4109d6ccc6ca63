//! Latent-space analysis of student hidden states: a learned projection to
//! a small manifold, a DPMM over it, a planar embedding for plotting, and
//! distance/occupancy reports against the inferred components.

mod dpmm;
mod projection;
mod tsne;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::ReasoningSample;
use crate::error::{Error, Result};
use crate::losses::ToyStudent;
use crate::numeric::{euclidean, seeded_rng};

pub use dpmm::{fit_dpmm, DpmmConfig, DpmmModel, VARIANCE_FLOOR};
pub use projection::{train_projection, zero_map_error, Projection, ProjectionConfig};
pub use tsne::{embed_2d, silhouette, TsneConfig, MAX_POINTS};

pub const COORDS_FILE: &str = "coords.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const INCLINATION_FILE: &str = "inclination.csv";

/// Minimum share of a run's points for a component to count toward coverage.
pub const COVERAGE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateBatch {
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

impl HiddenStateBatch {
    pub fn new(rows: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Domain(format!("a batch needs at least 2 rows, got {}", rows.len())));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Domain("batch rows must be non-empty and share one width".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("batch contains non-finite entries".into()));
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::shape("batch labels", rows.len(), l.len()));
            }
        }
        Ok(Self { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn label(&self, i: usize) -> &str {
        self.labels.as_ref().map_or("", |l| l[i].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub z: Vec<f64>,
    pub component_id: usize,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inclination {
    /// Distance to each active component mean.
    pub distances: BTreeMap<usize, f64>,
    pub nearest: usize,
}

pub fn inclination(z: &[f64], model: &DpmmModel) -> Inclination {
    let ids: Vec<usize> = if model.active.is_empty() {
        (0..model.truncation).collect()
    } else {
        model.active.clone()
    };
    let distances: BTreeMap<usize, f64> = ids.iter().map(|&k| (k, euclidean(z, &model.means[k]))).collect();
    let nearest = distances
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(&k, _)| k)
        .expect("at least one component");
    Inclination { distances, nearest }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunCoverage {
    /// Share of the run's points nearest to each active component.
    pub occupancy: BTreeMap<usize, f64>,
    pub coverage_count: usize,
    pub points: usize,
}

pub fn coverage_report(
    runs: &BTreeMap<String, Vec<LatentPoint>>,
    model: &DpmmModel,
) -> Result<BTreeMap<String, RunCoverage>> {
    let mut out = BTreeMap::new();
    for (label, points) in runs {
        if points.is_empty() {
            return Err(Error::Domain(format!("run `{label}` has no points")));
        }
        let mut counts: BTreeMap<usize, usize> = inclination(&points[0].z, model)
            .distances
            .keys()
            .map(|&k| (k, 0))
            .collect();
        for p in points {
            *counts.entry(inclination(&p.z, model).nearest).or_default() += 1;
        }
        let n = points.len() as f64;
        let occupancy: BTreeMap<usize, f64> = counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
        let coverage_count = occupancy.values().filter(|&&s| s >= COVERAGE_SHARE).count();
        out.insert(
            label.clone(),
            RunCoverage {
                occupancy,
                coverage_count,
                points: points.len(),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub dpmm: DpmmConfig,
    pub tsne: TsneConfig,
    /// Points beyond this count are subsampled before the planar embedding.
    pub max_embed_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            projection: ProjectionConfig::default(),
            dpmm: DpmmConfig::default(),
            tsne: TsneConfig::default(),
            max_embed_points: 1000,
        }
    }
}

/// A student to probe, and which perspectives' rationales it encodes
/// (`None` means every perspective present in a sample).
pub struct ProbeRun<'a> {
    pub label: String,
    pub student: &'a ToyStudent,
    pub perspectives: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordRow {
    pub run: String,
    pub tag: String,
    pub x: f64,
    pub y: f64,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclinationRow {
    pub run: String,
    pub tag: String,
    pub component: usize,
    pub mean_distance: f64,
    pub min_distance: f64,
    pub nearest_share: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub projection: Projection,
    pub model: DpmmModel,
    pub points: BTreeMap<String, Vec<LatentPoint>>,
    pub coords: Vec<CoordRow>,
    pub coverage: BTreeMap<String, RunCoverage>,
    pub inclination: Vec<InclinationRow>,
}

/// Pooled hidden states of one run, tagged by perspective id.
pub fn hidden_states(run: &ProbeRun<'_>, corpus: &[ReasoningSample]) -> Result<HiddenStateBatch> {
    let mut rows = Vec::new();
    let mut tags = Vec::new();
    for sample in corpus {
        for (&k, rationale) in &sample.rationales {
            if run.perspectives.as_ref().is_some_and(|p| !p.contains(&k)) {
                continue;
            }
            rows.push(run.student.pooled_hidden(&sample.question, rationale));
            tags.push(k.to_string());
        }
    }
    HiddenStateBatch::new(rows, Some(tags)).map_err(|e| Error::Domain(format!("run `{}`: {e}", run.label)))
}

/// Projection, DPMM, embedding and reports over a shared latent space for
/// all runs.
pub fn analyze(runs: &[ProbeRun<'_>], corpus: &[ReasoningSample], config: &AnalysisConfig) -> Result<AnalysisReport> {
    if runs.len() < 2 {
        return Err(Error::Domain("analysis needs at least 2 runs".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in runs {
        if !seen.insert(r.label.as_str()) {
            return Err(Error::Domain(format!("duplicate run label `{}`", r.label)));
        }
    }
    let batches: Vec<HiddenStateBatch> = runs.iter().map(|r| hidden_states(r, corpus)).collect::<Result<_>>()?;

    let projection = train_projection(
        &batches,
        &ProjectionConfig {
            seed: config.seed,
            ..config.projection.clone()
        },
    )?;
    let projected: Vec<Vec<Vec<f64>>> = batches.iter().map(|b| projection.project_all(&b.rows)).collect::<Result<_>>()?;
    let all: Vec<Vec<f64>> = projected.iter().flatten().cloned().collect();
    let model = fit_dpmm(
        &all,
        &DpmmConfig {
            seed: config.seed,
            ..config.dpmm.clone()
        },
    )?;

    let mut points = BTreeMap::new();
    for ((run, batch), zs) in runs.iter().zip(&batches).zip(projected) {
        let pts: Vec<LatentPoint> = zs
            .into_iter()
            .enumerate()
            .map(|(i, z)| LatentPoint {
                component_id: model.assign(&z),
                z,
                tag: batch.label(i).to_string(),
            })
            .collect();
        points.insert(run.label.clone(), pts);
    }

    let mut flat: Vec<(&str, &LatentPoint)> = points
        .iter()
        .flat_map(|(run, pts)| pts.iter().map(move |p| (run.as_str(), p)))
        .collect();
    if flat.len() > config.max_embed_points {
        let mut rng = seeded_rng(config.seed, 0x5ab);
        let mut keep = sample(&mut rng, flat.len(), config.max_embed_points).into_vec();
        keep.sort_unstable();
        flat = keep.into_iter().map(|i| flat[i]).collect();
    }
    let zs: Vec<Vec<f64>> = flat.iter().map(|(_, p)| p.z.clone()).collect();
    let xy = embed_2d(
        &zs,
        &TsneConfig {
            seed: config.seed,
            perplexity: config.tsne.perplexity.min((zs.len() as f64 / 3.0 - 1.0).max(2.0)),
            ..config.tsne.clone()
        },
    )?;
    let coords = flat
        .iter()
        .zip(xy)
        .map(|((run, p), [x, y])| CoordRow {
            run: run.to_string(),
            tag: p.tag.clone(),
            x,
            y,
            component: p.component_id,
        })
        .collect();

    let coverage = coverage_report(&points, &model)?;
    let inclination = inclination_table(&points, &model);
    Ok(AnalysisReport {
        projection,
        model,
        points,
        coords,
        coverage,
        inclination,
    })
}

/// Per (run, tag, component): mean and minimum distance from the tag's
/// points to the component mean, plus the share of points nearest to it.
pub fn inclination_table(points: &BTreeMap<String, Vec<LatentPoint>>, model: &DpmmModel) -> Vec<InclinationRow> {
    let mut rows = Vec::new();
    for (run, pts) in points {
        let mut by_tag: BTreeMap<&str, Vec<Inclination>> = BTreeMap::new();
        for p in pts {
            by_tag.entry(p.tag.as_str()).or_default().push(inclination(&p.z, model));
        }
        for (tag, incs) in by_tag {
            let n = incs.len() as f64;
            for &k in incs[0].distances.keys() {
                let d: Vec<f64> = incs.iter().map(|i| i.distances[&k]).collect();
                rows.push(InclinationRow {
                    run: run.clone(),
                    tag: tag.to_string(),
                    component: k,
                    mean_distance: d.iter().sum::<f64>() / n,
                    min_distance: d.iter().cloned().fold(f64::INFINITY, f64::min),
                    nearest_share: incs.iter().filter(|i| i.nearest == k).count() as f64 / n,
                });
            }
        }
    }
    rows
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Domain(format!("csv: {other:?}")),
    }
}

impl AnalysisReport {
    /// Writes the three plot-data tables into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(COORDS_FILE)).map_err(csv_err)?;
        for row in &self.coords {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;

        let components: Vec<usize> = self
            .coverage
            .values()
            .next()
            .map(|c| c.occupancy.keys().copied().collect())
            .unwrap_or_default();
        let mut w = csv::Writer::from_path(dir.join(OCCUPANCY_FILE)).map_err(csv_err)?;
        let mut header = vec!["run".to_string(), "points".to_string(), "coverage_count".to_string()];
        header.extend(components.iter().map(|k| format!("c{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (run, cov) in &self.coverage {
            let mut rec = vec![run.clone(), cov.points.to_string(), cov.coverage_count.to_string()];
            rec.extend(components.iter().map(|k| cov.occupancy[k].to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(INCLINATION_FILE)).map_err(csv_err)?;
        for row in &self.inclination {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
