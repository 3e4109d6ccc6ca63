//! Meta-gating network: scores how compatible each perspective's rationale
//! is with the student's current state.
//!
//! Three stages, all with hand-written exact gradients:
//!
//! 1. alignment MLP on `[h_x ; h_r_k]` producing one latent vector `e_k` per slot,
//! 2. unmasked multi-head self-attention across the `K` slots (no positional
//!    encoding, so slot order carries no meaning),
//! 3. `K` parameter-disjoint scoring heads, head `k` reading only slot `k`.

mod embed;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use embed::{EmbeddingProvider, HashedBagEmbedder, DEFAULT_EMBED_DIM};

use crate::error::{Error, Result};
use crate::numeric::{affine, affine_backward, dot, seeded_rng, softmax_in_place};
use crate::params::{Checkpoint, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaNetConfig {
    pub num_perspectives: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub num_heads: usize,
    pub align_hidden: usize,
    pub score_hidden: usize,
    /// When false the attention layer is replaced by the identity map.
    pub synergy: bool,
    pub seed: u64,
}

impl Default for MetaNetConfig {
    fn default() -> Self {
        Self {
            num_perspectives: crate::corpus::NUM_PERSPECTIVES,
            embed_dim: DEFAULT_EMBED_DIM,
            latent_dim: 32,
            num_heads: 4,
            align_hidden: 64,
            score_hidden: 32,
            synergy: true,
            seed: 0,
        }
    }
}

impl MetaNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let positive = [
            ("embed_dim", self.embed_dim),
            ("latent_dim", self.latent_dim),
            ("num_heads", self.num_heads),
            ("align_hidden", self.align_hidden),
            ("score_hidden", self.score_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                out.push(Error::config(field, "must be at least 1"));
            }
        }
        if self.num_perspectives < 2 {
            out.push(Error::config("num_perspectives", "must be at least 2"));
        }
        if self.num_heads > 0 && self.latent_dim % self.num_heads != 0 {
            out.push(Error::config(
                "num_heads",
                format!(
                    "latent_dim {} is not divisible by num_heads {}",
                    self.latent_dim, self.num_heads
                ),
            ));
        }
        out
    }

    fn head_dim(&self) -> usize {
        self.latent_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityScores {
    pub question_id: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Layout {
    align_w1: usize,
    align_b1: usize,
    align_w2: usize,
    align_b2: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    head_w1: Vec<usize>,
    head_b1: Vec<usize>,
    head_w2: Vec<usize>,
    head_b2: Vec<usize>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    record: Option<TapeRecord>,
}

#[derive(Debug, Clone)]
struct TapeRecord {
    slots: usize,
    synergy: bool,
    inputs: Vec<f64>,
    align_act: Vec<f64>,
    e: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    o: Vec<f64>,
    z: Vec<f64>,
    head_act: Vec<f64>,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.record.is_some()
    }

    pub fn clear(&mut self) {
        self.record = None;
    }

    /// Attention weights `[head][query slot][key slot]` of the recorded pass.
    pub fn attention(&self) -> Option<&[f64]> {
        self.record
            .as_ref()
            .filter(|r| r.synergy)
            .map(|r| r.attn.as_slice())
    }

    /// Largest absolute activation seen in the recorded pass.
    pub fn max_abs_activation(&self) -> Option<f64> {
        let r = self.record.as_ref()?;
        let all = [
            &r.align_act, &r.e, &r.q, &r.k, &r.v, &r.o, &r.z, &r.head_act,
        ];
        Some(
            all.iter()
                .flat_map(|v| v.iter())
                .fold(0.0f64, |m, x| m.max(x.abs())),
        )
    }
}

#[derive(Debug, Clone)]
pub struct MetaNet {
    config: MetaNetConfig,
    params: ParamSet,
    layout: Layout,
}

impl MetaNet {
    /// Seeded uniform init scaled by `1/sqrt(fan_in)`; biases are zero.
    pub fn init(config: &MetaNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = seeded_rng(c.seed, 0xe7a);
        let mut params = ParamSet::new();
        let mut weight = |params: &mut ParamSet, name: &str, rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            params.push(name, &[rows, cols], || rng.random_range(-bound..bound))
        };
        let zero = |params: &mut ParamSet, name: &str, len: usize| params.push(name, &[len], || 0.0);

        let d = c.latent_dim;
        let align_w1 = weight(&mut params, "align.w1", c.align_hidden, 2 * c.embed_dim);
        let align_b1 = zero(&mut params, "align.b1", c.align_hidden);
        let align_w2 = weight(&mut params, "align.w2", d, c.align_hidden);
        let align_b2 = zero(&mut params, "align.b2", d);
        let wq = weight(&mut params, "attn.wq", d, d);
        let bq = zero(&mut params, "attn.bq", d);
        let wk = weight(&mut params, "attn.wk", d, d);
        let bk = zero(&mut params, "attn.bk", d);
        let wv = weight(&mut params, "attn.wv", d, d);
        let bv = zero(&mut params, "attn.bv", d);
        let wo = weight(&mut params, "attn.wo", d, d);
        let bo = zero(&mut params, "attn.bo", d);
        let (mut head_w1, mut head_b1, mut head_w2, mut head_b2) = (vec![], vec![], vec![], vec![]);
        for k in 0..c.num_perspectives {
            head_w1.push(weight(&mut params, &format!("head{k}.w1"), c.score_hidden, d));
            head_b1.push(zero(&mut params, &format!("head{k}.b1"), c.score_hidden));
            head_w2.push(weight(&mut params, &format!("head{k}.w2"), 1, c.score_hidden));
            head_b2.push(zero(&mut params, &format!("head{k}.b2"), 1));
        }
        Ok(Self {
            config: config.clone(),
            params,
            layout: Layout {
                align_w1,
                align_b1,
                align_w2,
                align_b2,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
        })
    }

    pub fn config(&self) -> &MetaNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_synergy(&mut self, enabled: bool) {
        self.config.synergy = enabled;
    }

    fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.params.data()[offset..offset + len]
    }

    fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::shape(context, expected, actual));
        }
        Ok(())
    }

    /// `e_k = MLP_align([h_x ; h_r_k])` for every slot. Returns the stacked
    /// inputs, hidden activations and outputs (row-major, one row per slot).
    fn align_rows(
        &self,
        question_emb: &[f64],
        rationale_embs: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let c = &self.config;
        let l = &self.layout;
        Self::check_dim("question embedding", c.embed_dim, question_emb.len())?;
        let (h, d, de) = (c.align_hidden, c.latent_dim, c.embed_dim);
        let slots = rationale_embs.len();
        let mut inputs = vec![0.0; slots * 2 * de];
        let mut act = vec![0.0; slots * h];
        let mut e = vec![0.0; slots * d];
        for (k, r) in rationale_embs.iter().enumerate() {
            Self::check_dim("rationale embedding", de, r.len())?;
            let x = &mut inputs[k * 2 * de..(k + 1) * 2 * de];
            x[..de].copy_from_slice(question_emb);
            x[de..].copy_from_slice(r);
            let a = &mut act[k * h..(k + 1) * h];
            affine(self.slice(l.align_w1, h * 2 * de), self.slice(l.align_b1, h), x, a);
            a.iter_mut().for_each(|v| *v = v.tanh());
            affine(
                self.slice(l.align_w2, d * h),
                self.slice(l.align_b2, d),
                a,
                &mut e[k * d..(k + 1) * d],
            );
        }
        Ok((inputs, act, e))
    }

    pub fn align_features(&self, question_emb: &[f64], rationale_embs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (_, _, e) = self.align_rows(question_emb, rationale_embs)?;
        Ok(e.chunks(self.config.latent_dim).map(<[f64]>::to_vec).collect())
    }

    /// Returns (q, k, v, attention, concatenated head outputs, z).
    #[allow(clippy::type_complexity)]
    fn attend(&self, e: &[f64], slots: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let l = &self.layout;
        let d = c.latent_dim;
        let (nh, dh) = (c.num_heads, c.head_dim());
        let project = |w: usize, b: usize| {
            let mut out = vec![0.0; slots * d];
            for k in 0..slots {
                affine(
                    self.slice(w, d * d),
                    self.slice(b, d),
                    &e[k * d..(k + 1) * d],
                    &mut out[k * d..(k + 1) * d],
                );
            }
            out
        };
        let q = project(l.wq, l.bq);
        let kk = project(l.wk, l.bk);
        let v = project(l.wv, l.bv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; nh * slots * slots];
        let mut o = vec![0.0; slots * d];
        for hd in 0..nh {
            let cols = hd * dh..(hd + 1) * dh;
            for i in 0..slots {
                let row = &mut attn[(hd * slots + i) * slots..(hd * slots + i + 1) * slots];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = dot(&q[i * d..][cols.clone()], &kk[j * d..][cols.clone()]) * scale;
                }
                softmax_in_place(row);
                for j in 0..slots {
                    let w = row[j];
                    for col in cols.clone() {
                        o[i * d + col] += w * v[j * d + col];
                    }
                }
            }
        }
        let mut z = vec![0.0; slots * d];
        for k in 0..slots {
            affine(
                self.slice(l.wo, d * d),
                self.slice(l.bo, d),
                &o[k * d..(k + 1) * d],
                &mut z[k * d..(k + 1) * d],
            );
        }
        (q, kk, v, attn, o, z)
    }

    /// Self-attention over any number of slots. Returns `Z` and the
    /// attention weights `[head][query][key]`. Honors the synergy switch.
    pub fn synergy(&self, e: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let d = self.config.latent_dim;
        for row in e {
            Self::check_dim("synergy input", d, row.len())?;
        }
        if !self.config.synergy {
            return Ok((e.to_vec(), Vec::new()));
        }
        let flat: Vec<f64> = e.iter().flatten().copied().collect();
        let (_, _, _, attn, _, z) = self.attend(&flat, e.len());
        Ok((z.chunks(d).map(<[f64]>::to_vec).collect(), attn))
    }

    fn score_rows(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let l = &self.layout;
        let (d, hs) = (c.latent_dim, c.score_hidden);
        let mut act = vec![0.0; c.num_perspectives * hs];
        let mut scores = vec![0.0; c.num_perspectives];
        for k in 0..c.num_perspectives {
            let a = &mut act[k * hs..(k + 1) * hs];
            affine(
                self.slice(l.head_w1[k], hs * d),
                self.slice(l.head_b1[k], hs),
                &z[k * d..(k + 1) * d],
                a,
            );
            a.iter_mut().for_each(|v| *v = v.tanh());
            scores[k] = dot(self.slice(l.head_w2[k], hs), a) + self.params.data()[l.head_b2[k]];
        }
        (act, scores)
    }

    /// `s_k = MLP_score^(k)(z_k)`.
    pub fn score(&self, z: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_dim("score slots", self.config.num_perspectives, z.len())?;
        for row in z {
            Self::check_dim("score input", self.config.latent_dim, row.len())?;
        }
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        Ok(self.score_rows(&flat).1)
    }

    /// Full pass from precomputed embeddings, recording activations on `tape`.
    pub fn forward_embedded(
        &self,
        question_id: &str,
        question_emb: &[f64],
        rationale_embs: &[Vec<f64>],
        tape: &mut Tape,
    ) -> Result<CompatibilityScores> {
        let slots = self.config.num_perspectives;
        Self::check_dim("rationale count", slots, rationale_embs.len())?;
        let (inputs, align_act, e) = self.align_rows(question_emb, rationale_embs)?;
        let (q, k, v, attn, o, z) = if self.config.synergy {
            self.attend(&e, slots)
        } else {
            (vec![], vec![], vec![], vec![], vec![], e.clone())
        };
        let (head_act, scores) = self.score_rows(&z);
        tape.record = Some(TapeRecord {
            slots,
            synergy: self.config.synergy,
            inputs,
            align_act,
            e,
            q,
            k,
            v,
            attn,
            o,
            z,
            head_act,
        });
        Ok(CompatibilityScores {
            question_id: question_id.to_string(),
            scores,
        })
    }

    pub fn forward(
        &self,
        question_id: &str,
        question: &str,
        rationales: &[&str],
        provider: &dyn EmbeddingProvider,
        tape: &mut Tape,
    ) -> Result<CompatibilityScores> {
        if rationales.len() != self.config.num_perspectives {
            return Err(Error::Contract(format!(
                "expected {} rationales, got {}",
                self.config.num_perspectives,
                rationales.len()
            )));
        }
        let hx = provider.embed(question);
        let hr: Vec<Vec<f64>> = rationales.iter().map(|r| provider.embed(r)).collect();
        self.forward_embedded(question_id, &hx, &hr, tape)
    }

    /// Exact parameter gradients of `sum_k upstream[k] * s_k`.
    pub fn backward(&self, upstream: &[f64], tape: &Tape) -> Result<ParamSet> {
        let rec = tape
            .record
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let c = &self.config;
        let l = &self.layout;
        Self::check_dim("score gradient", c.num_perspectives, upstream.len())?;
        if rec.slots != c.num_perspectives || rec.synergy != c.synergy {
            return Err(Error::State("tape was recorded by a different configuration".into()));
        }
        let (d, hs, h, de) = (c.latent_dim, c.score_hidden, c.align_hidden, c.embed_dim);
        let slots = rec.slots;
        let mut grads = self.params.zeros_like();
        let g = grads.data_mut();
        let p = self.params.data();

        // scoring heads
        let mut dz = vec![0.0; slots * d];
        for k in 0..slots {
            let ds = upstream[k];
            if ds == 0.0 {
                continue;
            }
            let a = &rec.head_act[k * hs..(k + 1) * hs];
            g[l.head_b2[k]] += ds;
            let w2 = &p[l.head_w2[k]..l.head_w2[k] + hs];
            let mut dpre = vec![0.0; hs];
            for i in 0..hs {
                g[l.head_w2[k] + i] += ds * a[i];
                dpre[i] = ds * w2[i] * (1.0 - a[i] * a[i]);
            }
            let (w1g, rest) = g.split_at_mut(l.head_b1[k]);
            affine_backward(
                &p[l.head_w1[k]..l.head_w1[k] + hs * d],
                &rec.z[k * d..(k + 1) * d],
                &dpre,
                &mut w1g[l.head_w1[k]..l.head_w1[k] + hs * d],
                &mut rest[..hs],
                Some(&mut dz[k * d..(k + 1) * d]),
            );
        }

        // attention
        let de_rows = if rec.synergy {
            let (nh, dh) = (c.num_heads, c.head_dim());
            let scale = 1.0 / (dh as f64).sqrt();
            let mut d_o = vec![0.0; slots * d];
            for k in 0..slots {
                let (wg, bg) = g.split_at_mut(l.bo);
                affine_backward(
                    &p[l.wo..l.wo + d * d],
                    &rec.o[k * d..(k + 1) * d],
                    &dz[k * d..(k + 1) * d],
                    &mut wg[l.wo..l.wo + d * d],
                    &mut bg[..d],
                    Some(&mut d_o[k * d..(k + 1) * d]),
                );
            }
            let mut dq = vec![0.0; slots * d];
            let mut dk = vec![0.0; slots * d];
            let mut dv = vec![0.0; slots * d];
            for hd in 0..nh {
                let cols = hd * dh..(hd + 1) * dh;
                for i in 0..slots {
                    let a = &rec.attn[(hd * slots + i) * slots..(hd * slots + i + 1) * slots];
                    let doi = &d_o[i * d..][cols.clone()];
                    let mut da = vec![0.0; slots];
                    for j in 0..slots {
                        da[j] = dot(doi, &rec.v[j * d..][cols.clone()]);
                        for (t, col) in cols.clone().enumerate() {
                            dv[j * d + col] += a[j] * doi[t];
                        }
                    }
                    let inner = dot(a, &da);
                    for j in 0..slots {
                        let dsc = a[j] * (da[j] - inner) * scale;
                        if dsc == 0.0 {
                            continue;
                        }
                        for col in cols.clone() {
                            dq[i * d + col] += dsc * rec.k[j * d + col];
                            dk[j * d + col] += dsc * rec.q[i * d + col];
                        }
                    }
                }
            }
            let mut de = vec![0.0; slots * d];
            for (w, b, dy) in [(l.wq, l.bq, &dq), (l.wk, l.bk, &dk), (l.wv, l.bv, &dv)] {
                for k in 0..slots {
                    let (wg, bg) = g.split_at_mut(b);
                    affine_backward(
                        &p[w..w + d * d],
                        &rec.e[k * d..(k + 1) * d],
                        &dy[k * d..(k + 1) * d],
                        &mut wg[w..w + d * d],
                        &mut bg[..d],
                        Some(&mut de[k * d..(k + 1) * d]),
                    );
                }
            }
            de
        } else {
            dz
        };

        // alignment MLP
        for k in 0..slots {
            let a = &rec.align_act[k * h..(k + 1) * h];
            let mut da = vec![0.0; h];
            {
                let (wg, bg) = g.split_at_mut(l.align_b2);
                affine_backward(
                    &p[l.align_w2..l.align_w2 + d * h],
                    a,
                    &de_rows[k * d..(k + 1) * d],
                    &mut wg[l.align_w2..l.align_w2 + d * h],
                    &mut bg[..d],
                    Some(&mut da),
                );
            }
            for i in 0..h {
                da[i] *= 1.0 - a[i] * a[i];
            }
            let (wg, bg) = g.split_at_mut(l.align_b1);
            affine_backward(
                &p[l.align_w1..l.align_w1 + h * 2 * de],
                &rec.inputs[k * 2 * de..(k + 1) * 2 * de],
                &da,
                &mut wg[l.align_w1..l.align_w1 + h * 2 * de],
                &mut bg[..h],
                None,
            );
        }
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint {
            params: self.params.clone(),
            ..Default::default()
        };
        ckpt.meta.insert("kind".into(), "metanet".into());
        ckpt.meta.insert(
            "config".into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").map(String::as_str) != Some("metanet") {
            return Err(Error::Checkpoint("not a metanet checkpoint".into()));
        }
        let config: MetaNetConfig = serde_json::from_str(
            ckpt.meta
                .get("config")
                .ok_or_else(|| Error::Checkpoint("missing config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut net = Self::init(&config)?;
        if !net.params.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint("tensor layout does not match config".into()));
        }
        net.params = ckpt.params.clone();
        Ok(net)
    }
}
