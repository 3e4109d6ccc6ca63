//! Exact t-SNE. Quadratic in N, meant for a few thousand points at most.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    /// Step size; `None` picks `N / exaggeration / 4`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

pub const MAX_POINTS: usize = 2000;

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional affinities with per-row bandwidth found by bisection on the
/// entropy, then symmetrized and normalized.
fn affinities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let d = sq_distances(x);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut cond = vec![0.0; n];
        for _ in 0..200 {
            // shift by the nearest neighbour distance so exp never underflows entirely
            let dmin = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                cond[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += cond[j];
                weighted += cond[j] * (row[j] - dmin);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            cond.iter_mut().for_each(|c| *c /= sum);
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&cond);
    }
    let norm = 2.0 * n as f64;
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / norm).max(1e-12);
        }
        sym[i * n + i] = 0.0;
    }
    sym
}

/// Embeds `points` into the plane. Returns one `[x, y]` row per point.
pub fn embed_2d(points: &[Vec<f64>], config: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n < 5 {
        return Err(Error::Domain(format!("need at least 5 points, got {n}")));
    }
    if n > MAX_POINTS {
        return Err(Error::Domain(format!("exact embedding is limited to {MAX_POINTS} points, got {n}")));
    }
    if !(config.perplexity > 1.0) || config.perplexity * 3.0 >= n as f64 {
        return Err(Error::Domain(format!(
            "perplexity {} is infeasible for {n} points (need 1 < perplexity < N/3)",
            config.perplexity
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("points must be finite and share one dimension".into()));
    }

    let lr = config
        .learning_rate
        .unwrap_or_else(|| n as f64 / config.exaggeration.max(1.0) / 4.0);
    if !(lr > 0.0) {
        return Err(Error::config("learning_rate", "must be positive"));
    }
    let p = affinities(points, config.perplexity);
    let mut rng = seeded_rng(config.seed, 0x75e);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    // identical inputs get identical rows of P, so the exact optimum puts them
    // on one spot; tie them together to keep the pairwise step from ringing
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        groups.entry(p.iter().map(|v| v.to_bits()).collect()).or_default().push(i);
    }
    let ties: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > 1).collect();
    tie(&mut y, &ties);
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    for it in 0..config.iters {
        let exaggerate = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = 4.0 * (exaggerate * p[i * n + j] - q / z) * q;
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8_f64).max(0.01)
            };
            velocity[k] = momentum * velocity[k] - lr * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        tie(&mut y, &ties);
        tie(&mut velocity, &ties);
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
    }
    Ok((0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect())
}

fn tie(v: &mut [f64], groups: &[Vec<usize>]) {
    for g in groups {
        for c in 0..2 {
            let mean = g.iter().map(|&i| v[2 * i + c]).sum::<f64>() / g.len() as f64;
            g.iter().for_each(|&i| v[2 * i + c] = mean);
        }
    }
}

/// Mean silhouette of `coords` under `labels`, Euclidean distance.
pub fn silhouette(coords: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = coords.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut by_label: BTreeMap<usize, (f64, usize)> = Default::default();
        for j in 0..n {
            if i != j {
                let e = by_label.entry(labels[j]).or_default();
                e.0 += dist(&coords[i], &coords[j]);
                e.1 += 1;
            }
        }
        let a = match by_label.get(&labels[i]) {
            Some(&(s, c)) if c > 0 => s / c as f64,
            _ => continue,
        };
        let b = by_label
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, &(s, c))| s / c as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}
