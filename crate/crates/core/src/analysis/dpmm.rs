//! Truncated stick-breaking variational inference for a Dirichlet process
//! mixture of diagonal Gaussians, with a Normal-Gamma prior per dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::numeric::{euclidean, log_sum_exp, seeded_rng};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpmmConfig {
    pub truncation: usize,
    pub concentration: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Minimum share of responsibility mass for a component to count as active.
    pub active_threshold: f64,
    pub seed: u64,
}

impl Default for DpmmConfig {
    fn default() -> Self {
        Self {
            truncation: 16,
            concentration: 1.0,
            max_iters: 500,
            tol: 1e-6,
            active_threshold: 0.02,
            seed: 0,
        }
    }
}

/// Normal-Gamma parameters, one entry per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormalGamma {
    m: Vec<f64>,
    kappa: f64,
    a: f64,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpmmModel {
    pub truncation: usize,
    pub concentration: f64,
    /// Expected stick-breaking weights.
    pub weights: Vec<f64>,
    /// Posterior mean of each component's mean.
    pub means: Vec<Vec<f64>>,
    /// Posterior expected variance (`b / a`) per dimension.
    pub variances: Vec<Vec<f64>>,
    /// Responsibility mass per component (sums to the number of points).
    pub mass: Vec<f64>,
    pub active: Vec<usize>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    state: Option<State>,
}

#[derive(Debug, Clone, PartialEq)]
struct State {
    prior: NormalGamma,
    comps: Vec<NormalGamma>,
    gamma: Vec<(f64, f64)>,
}

struct Fit<'a> {
    x: &'a [Vec<f64>],
    dim: usize,
    alpha: f64,
    prior: NormalGamma,
    comps: Vec<NormalGamma>,
    gamma: Vec<(f64, f64)>,
    resp: Vec<Vec<f64>>,
    floored: bool,
}

impl<'a> Fit<'a> {
    fn t(&self) -> usize {
        self.comps.len()
    }

    /// `E[ln pi_t]` under the current stick posteriors; the last stick is 1.
    fn expected_log_weights(&self) -> Vec<f64> {
        let t = self.t();
        let mut out = vec![0.0; t];
        let mut rest = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            if i + 1 == t {
                *o = rest;
            } else {
                let (g1, g2) = self.gamma[i];
                let s = digamma(g1 + g2);
                *o = rest + digamma(g1) - s;
                rest += digamma(g2) - s;
            }
        }
        out
    }

    fn expected_log_lik(c: &NormalGamma, x: &[f64]) -> f64 {
        let e_ln_lambda = digamma(c.a);
        let mut total = 0.0;
        for d in 0..x.len() {
            let e_lambda = c.a / c.b[d];
            let diff = x[d] - c.m[d];
            total += 0.5 * (e_ln_lambda - c.b[d].ln() - LN_2PI - e_lambda * diff * diff - 1.0 / c.kappa);
        }
        total
    }

    fn update_resp(&mut self) {
        let elw = self.expected_log_weights();
        for (n, x) in self.x.iter().enumerate() {
            let mut row: Vec<f64> = (0..self.t())
                .map(|t| elw[t] + Self::expected_log_lik(&self.comps[t], x))
                .collect();
            let lse = log_sum_exp(&row);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
            self.resp[n] = row;
        }
    }

    fn update_params(&mut self) {
        let (t, dim) = (self.t(), self.dim);
        let mut counts = vec![0.0; t];
        for row in &self.resp {
            for (c, r) in counts.iter_mut().zip(row) {
                *c += r;
            }
        }
        for k in 0..t {
            let nk = counts[k];
            let mut xbar = vec![0.0; dim];
            if nk > 0.0 {
                for (row, x) in self.resp.iter().zip(self.x) {
                    for d in 0..dim {
                        xbar[d] += row[k] * x[d];
                    }
                }
                xbar.iter_mut().for_each(|v| *v /= nk);
            }
            let mut s = vec![0.0; dim];
            for (row, x) in self.resp.iter().zip(self.x) {
                for d in 0..dim {
                    let diff = x[d] - xbar[d];
                    s[d] += row[k] * diff * diff;
                }
            }
            let p = &self.prior;
            let kappa = p.kappa + nk;
            let a = p.a + 0.5 * nk;
            let mut m = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            for d in 0..dim {
                m[d] = (p.kappa * p.m[d] + nk * xbar[d]) / kappa;
                let shift = xbar[d] - p.m[d];
                b[d] = p.b[d] + 0.5 * s[d] + p.kappa * nk * shift * shift / (2.0 * kappa);
                if b[d] < a * VARIANCE_FLOOR {
                    b[d] = a * VARIANCE_FLOOR;
                    self.floored = true;
                }
            }
            self.comps[k] = NormalGamma { m, kappa, a, b };
        }
        let mut tail = 0.0;
        for k in (0..t).rev() {
            self.gamma[k] = (1.0 + counts[k], self.alpha + tail);
            tail += counts[k];
        }
    }

    /// Expected log of the Normal-Gamma density `p` under `q`.
    fn cross_entropy_term(q: &NormalGamma, p: &NormalGamma) -> f64 {
        let e_ln_lambda_base = digamma(q.a);
        let mut total = 0.0;
        for d in 0..q.m.len() {
            let e_ln_lambda = e_ln_lambda_base - q.b[d].ln();
            let e_lambda = q.a / q.b[d];
            let diff = q.m[d] - p.m[d];
            total += p.a * p.b[d].ln() - ln_gamma(p.a) + (p.a - 1.0) * e_ln_lambda - p.b[d] * e_lambda
                + 0.5 * (p.kappa.ln() + e_ln_lambda - LN_2PI)
                - 0.5 * p.kappa * (e_lambda * diff * diff + 1.0 / q.kappa);
        }
        total
    }

    fn elbo(&self) -> f64 {
        let elw = self.expected_log_weights();
        let mut total = 0.0;
        for (row, x) in self.resp.iter().zip(self.x) {
            for (t, &r) in row.iter().enumerate() {
                if r > 0.0 {
                    total += r * (elw[t] + Self::expected_log_lik(&self.comps[t], x) - r.ln());
                }
            }
        }
        for &(g1, g2) in &self.gamma[..self.t() - 1] {
            let s = digamma(g1 + g2);
            let (e_ln_v, e_ln_1v) = (digamma(g1) - s, digamma(g2) - s);
            let log_p = self.alpha.ln() + (self.alpha - 1.0) * e_ln_1v;
            let log_beta = ln_gamma(g1) + ln_gamma(g2) - ln_gamma(g1 + g2);
            let log_q = -log_beta + (g1 - 1.0) * e_ln_v + (g2 - 1.0) * e_ln_1v;
            total += log_p - log_q;
        }
        for c in &self.comps {
            total += Self::cross_entropy_term(c, &self.prior) - Self::cross_entropy_term(c, c);
        }
        total
    }

    fn sweep(&mut self) -> f64 {
        self.update_resp();
        self.update_params();
        self.elbo()
    }

    fn counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.t()];
        for row in &self.resp {
            for (c, r) in counts.iter_mut().zip(row) {
                *c += r;
            }
        }
        counts
    }

    /// Moves all responsibility of `from` onto `into`.
    fn merge_resp(&mut self, into: usize, from: usize) {
        for row in &mut self.resp {
            row[into] += row[from];
            row[from] = 0.0;
        }
    }
}

/// k-means++ style seeding: the first centre is a random point, later ones
/// are drawn proportionally to squared distance from the chosen set.
fn seed_centres(x: &[Vec<f64>], t: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(seed, 0xd9);
    let mut centres = vec![rng.random_range(0..x.len())];
    let mut d2: Vec<f64> = x.iter().map(|p| euclidean(p, &x[centres[0]]).powi(2)).collect();
    while centres.len() < t {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..x.len())
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut pick = x.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centres.push(next);
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(euclidean(p, &x[next]).powi(2));
        }
    }
    centres
}

pub fn fit_dpmm(points: &[Vec<f64>], config: &DpmmConfig) -> Result<DpmmModel> {
    let n = points.len();
    let t = config.truncation;
    if t < 2 {
        return Err(Error::config("truncation", "must be at least 2"));
    }
    if n < t {
        return Err(Error::Domain(format!("{n} points is fewer than the truncation level {t}")));
    }
    if !(config.concentration > 0.0) {
        return Err(Error::config("concentration", "must be positive"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("points must be finite and share one dimension".into()));
    }

    let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
    let var: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    // weakly informative prior centred on the data, expecting components
    // narrower than the whole cloud
    let a0 = 1.0;
    let prior = NormalGamma {
        m: mean.clone(),
        kappa: 1e-2,
        a: a0,
        b: var.iter().map(|v| a0 * (0.1 * v).max(VARIANCE_FLOOR)).collect(),
    };

    let centres = seed_centres(points, t, config.seed);
    let resp: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let nearest = (0..t)
                .min_by(|&i, &j| {
                    euclidean(p, &points[centres[i]]).total_cmp(&euclidean(p, &points[centres[j]]))
                })
                .expect("t >= 2");
            let mut row = vec![0.0; t];
            row[nearest] = 1.0;
            row
        })
        .collect();
    let mut fit = Fit {
        x: points,
        dim,
        alpha: config.concentration,
        comps: vec![prior.clone(); t],
        prior,
        gamma: vec![(1.0, config.concentration); t],
        resp,
        floored: false,
    };
    fit.update_params();

    let mut trace = vec![fit.elbo()];
    let mut converged = false;
    let mut iters = 0;
    let run_to_convergence = |fit: &mut Fit, trace: &mut Vec<f64>, iters: &mut usize| -> bool {
        while *iters < config.max_iters {
            *iters += 1;
            let e = fit.sweep();
            let prev = *trace.last().expect("seeded");
            trace.push(e);
            if (e - prev).abs() < config.tol * prev.abs().max(1.0) {
                return true;
            }
        }
        false
    };
    converged |= run_to_convergence(&mut fit, &mut trace, &mut iters);

    // merge moves: fold the smaller of two nearby components into the larger
    // and keep the result only if the evidence bound improves
    loop {
        let counts = fit.counts();
        let live: Vec<usize> = (0..t).filter(|&k| counts[k] > 1e-8).collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, &a) in live.iter().enumerate() {
            for &b in &live[i + 1..] {
                pairs.push((euclidean(&fit.comps[a].m, &fit.comps[b].m), a, b));
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let current = *trace.last().expect("seeded");
        let mut accepted = false;
        for &(_, a, b) in pairs.iter().take(3 * live.len()) {
            let (into, from) = if counts[a] >= counts[b] { (a, b) } else { (b, a) };
            let mut trial = Fit {
                x: fit.x,
                dim,
                alpha: fit.alpha,
                prior: fit.prior.clone(),
                comps: fit.comps.clone(),
                gamma: fit.gamma.clone(),
                resp: fit.resp.clone(),
                floored: fit.floored,
            };
            trial.merge_resp(into, from);
            trial.update_params();
            let mut e = trial.elbo();
            for _ in 0..5 {
                e = trial.sweep();
            }
            if e > current + config.tol * current.abs().max(1.0) {
                fit = trial;
                trace.push(e);
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
        converged = run_to_convergence(&mut fit, &mut trace, &mut iters);
    }

    let counts = fit.counts();
    let mut weights = vec![0.0; t];
    let mut rest = 1.0;
    for k in 0..t {
        if k + 1 == t {
            weights[k] = rest;
        } else {
            let (g1, g2) = fit.gamma[k];
            let v = g1 / (g1 + g2);
            weights[k] = rest * v;
            rest *= 1.0 - v;
        }
    }
    let active: Vec<usize> = (0..t)
        .filter(|&k| counts[k] / n as f64 >= config.active_threshold)
        .collect();
    let mut warnings = Vec::new();
    if fit.floored {
        warnings.push(format!("component variance floored at {VARIANCE_FLOOR}"));
    }
    if !converged {
        warnings.push(format!("stopped after {} iterations without converging", config.max_iters));
    }
    Ok(DpmmModel {
        truncation: t,
        concentration: config.concentration,
        weights,
        means: fit.comps.iter().map(|c| c.m.clone()).collect(),
        variances: fit
            .comps
            .iter()
            .map(|c| c.b.iter().map(|b| b / c.a).collect())
            .collect(),
        mass: counts,
        active,
        elbo_trace: trace,
        converged,
        warnings,
        state: Some(State {
            prior: fit.prior,
            comps: fit.comps,
            gamma: fit.gamma,
        }),
    })
}

impl DpmmModel {
    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    /// Posterior responsibilities of every component for `z`.
    pub fn responsibilities(&self, z: &[f64]) -> Vec<f64> {
        match &self.state {
            Some(s) => {
                let fit = Fit {
                    x: &[],
                    dim: z.len(),
                    alpha: self.concentration,
                    prior: s.prior.clone(),
                    comps: s.comps.clone(),
                    gamma: s.gamma.clone(),
                    resp: Vec::new(),
                    floored: false,
                };
                let elw = fit.expected_log_weights();
                let mut row: Vec<f64> = (0..self.truncation)
                    .map(|t| elw[t] + Fit::expected_log_lik(&s.comps[t], z))
                    .collect();
                let lse = log_sum_exp(&row);
                row.iter_mut().for_each(|v| *v = (*v - lse).exp());
                row
            }
            // deserialized models keep only summary statistics
            None => {
                let mut row: Vec<f64> = (0..self.truncation)
                    .map(|t| {
                        let ll: f64 = z
                            .iter()
                            .zip(&self.means[t])
                            .zip(&self.variances[t])
                            .map(|((x, m), v)| -0.5 * ((x - m).powi(2) / v + v.ln() + LN_2PI))
                            .sum();
                        self.weights[t].max(f64::MIN_POSITIVE).ln() + ll
                    })
                    .collect();
                let lse = log_sum_exp(&row);
                row.iter_mut().for_each(|v| *v = (*v - lse).exp());
                row
            }
        }
    }

    /// Most responsible active component.
    pub fn assign(&self, z: &[f64]) -> usize {
        let r = self.responsibilities(z);
        let candidates: Vec<usize> = if self.active.is_empty() {
            (0..self.truncation).collect()
        } else {
            self.active.clone()
        };
        candidates
            .into_iter()
            .max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
            .expect("truncation >= 2")
    }
}
