//! Nonlinear autoencoder used to squash pooled hidden states to `d_z`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{affine, affine_backward, seeded_rng};
use crate::optim::{Optimizer, UpdateRule};

use super::HiddenStateBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    pub d_z: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            d_z: 8,
            epochs: 400,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Encoder half of the trained autoencoder: `z = tanh(W ((x - mu) / sd) + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub d_h: usize,
    pub d_z: usize,
    pub mu: Vec<f64>,
    pub sd: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Mean squared reconstruction error per epoch, on standardized inputs.
    pub loss_trace: Vec<f64>,
}

impl Projection {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mu)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_h {
            return Err(Error::shape("projection input", self.d_h, x.len()));
        }
        let xs = self.standardize(x);
        let mut z = vec![0.0; self.d_z];
        affine(&self.w, &self.b, &xs, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        Ok(z)
    }

    pub fn project_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.project(r)).collect()
    }
}

/// Reconstruction error of the zero map in standardized units, i.e. the
/// baseline any trained projection must beat.
pub fn zero_map_error(batches: &[HiddenStateBatch]) -> f64 {
    let rows: Vec<&Vec<f64>> = batches.iter().flat_map(|b| &b.rows).collect();
    let (mu, sd) = moments(&rows);
    let mut total = 0.0;
    for r in &rows {
        for d in 0..r.len() {
            total += ((r[d] - mu[d]) / sd[d]).powi(2);
        }
    }
    total / (rows.len() * mu.len()) as f64
}

fn moments(rows: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd = (0..d)
        .map(|j| {
            let v = rows.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n;
            // constant features are left unscaled
            if v > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mu, sd)
}

/// Full-batch Adam on mean squared reconstruction error through
/// `x -> tanh(W1 x + b1) -> W2 z + b2`. Only the encoder is kept.
pub fn train_projection(batches: &[HiddenStateBatch], config: &ProjectionConfig) -> Result<Projection> {
    if batches.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 batches, got {}", batches.len())));
    }
    let d_h = batches[0].dim();
    if batches.iter().any(|b| b.dim() != d_h) {
        return Err(Error::Domain("hidden-state batches disagree on width".into()));
    }
    let d_z = config.d_z;
    if d_z == 0 || d_z >= d_h {
        return Err(Error::config("d_z", format!("must be in 1..{d_h}, got {d_z}")));
    }
    if !(config.lr > 0.0) {
        return Err(Error::config("lr", "must be positive"));
    }
    let rows: Vec<&Vec<f64>> = batches.iter().flat_map(|b| &b.rows).collect();
    let (mu, sd) = moments(&rows);
    let xs: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut rng = seeded_rng(config.seed, 0xa0e);
    let s1 = 1.0 / (d_h as f64).sqrt();
    let s2 = 1.0 / (d_z as f64).sqrt();
    // layout: w1 | b1 | w2 | b2
    let (o_b1, o_w2) = (d_z * d_h, d_z * d_h + d_z);
    let o_b2 = o_w2 + d_h * d_z;
    let n_params = o_b2 + d_h;
    let mut params: Vec<f64> = (0..n_params)
        .map(|i| {
            if i < o_b1 {
                rng.random_range(-s1..s1)
            } else if (o_w2..o_b2).contains(&i) {
                rng.random_range(-s2..s2)
            } else {
                0.0
            }
        })
        .collect();
    let mut opt = Optimizer::new(UpdateRule::adam(), n_params);
    let mut grad = vec![0.0; n_params];
    let mut z = vec![0.0; d_z];
    let mut xhat = vec![0.0; d_h];
    let mut dz = vec![0.0; d_z];
    let scale = 1.0 / (xs.len() * d_h) as f64;
    let mut trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let (w1, rest) = params.split_at(o_b1);
        let (b1, rest) = rest.split_at(d_z);
        let (w2, b2) = rest.split_at(d_h * d_z);
        let (gw1, grest) = grad.split_at_mut(o_b1);
        let (gb1, grest) = grest.split_at_mut(d_z);
        let (gw2, gb2) = grest.split_at_mut(d_h * d_z);
        for x in &xs {
            affine(w1, b1, x, &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            affine(w2, b2, &z, &mut xhat);
            let dy: Vec<f64> = xhat
                .iter()
                .zip(x)
                .map(|(p, t)| {
                    loss += (p - t).powi(2);
                    2.0 * (p - t) * scale
                })
                .collect();
            dz.iter_mut().for_each(|v| *v = 0.0);
            affine_backward(w2, &z, &dy, gw2, gb2, Some(&mut dz));
            for (d, zv) in dz.iter_mut().zip(&z) {
                *d *= 1.0 - zv * zv;
            }
            affine_backward(w1, x, &dz, gw1, gb1, None);
        }
        trace.push(loss * scale);
        opt.apply(&mut params, &grad, config.lr);
    }

    Ok(Projection {
        d_h,
        d_z,
        mu,
        sd,
        w: params[..o_b1].to_vec(),
        b: params[o_b1..o_w2].to_vec(),
        loss_trace: trace,
    })
}
