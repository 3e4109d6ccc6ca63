//! A small causal transformer used as the reference student: token and
//! position embeddings, pre-norm attention/MLP blocks, and an output
//! projection tied to the token embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::{GradientTerm, SequenceNll, StudentModel};
use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, softmax_in_place};
use crate::params::{Checkpoint, ParamSet};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            num_heads: 2,
            num_layers: 2,
            d_ff: 64,
            context_len: 128,
            seed: 0,
        }
    }
}

impl StudentConfig {
    /// Few-thousand-parameter configuration for gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            num_heads: 2,
            num_layers: 2,
            d_ff: 12,
            context_len: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problems().into_iter().next().map_or(Ok(()), Err)
    }

    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if self.d_model == 0 {
            out.push(Error::config("d_model", "must be at least 1"));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            out.push(Error::config(
                "num_heads",
                format!("must divide d_model = {}", self.d_model),
            ));
        }
        if self.num_layers == 0 {
            out.push(Error::config("num_layers", "must be at least 1"));
        }
        if self.d_ff == 0 {
            out.push(Error::config("d_ff", "must be at least 1"));
        }
        if !(8..=128).contains(&self.context_len) {
            out.push(Error::config("context_len", "must lie in [8, 128]"));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerLayout>,
    lnf_g: usize,
    lnf_b: usize,
}

#[derive(Debug, Clone)]
pub struct ToyStudent {
    config: StudentConfig,
    vocab: Vocab,
    answer_tokens: Vec<String>,
    answer_ids: Vec<usize>,
    params: ParamSet,
    layout: Layout,
}

/// Token ids of `[bos] question [sep] rationale [eos]` after truncation, and
/// the index of the separator.
#[derive(Debug, Clone)]
struct Sequence {
    ids: Vec<usize>,
    sep: usize,
    truncated: bool,
}

impl Sequence {
    /// Positions whose next token is a rationale token (or the final eos).
    fn target_positions(&self) -> std::ops::Range<usize> {
        self.sep..self.ids.len() - 1
    }
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    f: Vec<f64>,
}

struct Forward {
    layers: Vec<LayerCache>,
    /// Residual stream after the last block.
    hidden: Vec<f64>,
    lnf: LnCache,
    xf: Vec<f64>,
    logits: Vec<f64>,
}

/// `y[r] = W x[r]` for row-major `x` (rows x cols) and `w` (out x cols).
fn matmul_wt(x: &[f64], w: &[f64], rows: usize, cols: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        for o in 0..out {
            y[r * out + o] = crate::numeric::dot(&w[o * cols..(o + 1) * cols], xr);
        }
    }
    y
}

/// Accumulates `dw += dy^T x` and `dx += dy W`.
fn matmul_wt_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
    out: usize,
    dw: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let dxr = &mut dx[r * cols..(r + 1) * cols];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == 0.0 {
                continue;
            }
            let wrow = &w[o * cols..(o + 1) * cols];
            let dwrow = &mut dw[o * cols..(o + 1) * cols];
            for c in 0..cols {
                dwrow[c] += g * xr[c];
                dxr[c] += g * wrow[c];
            }
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (xr[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * g[c] + b[c];
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// Returns `dx`; accumulates `dg`, `db` into `grad` at the given offsets.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    grad: &mut [f64],
    g_off: usize,
    b_off: usize,
    d: usize,
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for c in 0..d {
            grad[g_off + c] += dyr[c] * xh[c];
            grad[b_off + c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

impl ToyStudent {
    pub fn new(config: &StudentConfig, vocab: Vocab, answer_tokens: &[String]) -> Result<Self> {
        config.validate()?;
        let answer_ids = answer_tokens
            .iter()
            .map(|t| {
                vocab.lookup(t).ok_or_else(|| {
                    Error::config("answer_tokens", format!("`{t}` is not in the vocabulary"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if answer_ids.len() < 2 {
            return Err(Error::config("answer_tokens", "need at least two answer tokens"));
        }
        let d = config.d_model;
        let f = config.d_ff;
        let mut rng = seeded_rng(config.seed, 0x570d);
        let mut params = ParamSet::new();
        let uniform = |bound: f64| move |rng: &mut rand_chacha::ChaCha8Rng| rng.random_range(-bound..bound);
        let tok = {
            let u = uniform(0.5);
            params.push("tok_emb", &[vocab.len(), d], || u(&mut rng))
        };
        let pos = {
            let u = uniform(0.1);
            params.push("pos_emb", &[config.context_len, d], || u(&mut rng))
        };
        let bound_d = 1.0 / (d as f64).sqrt();
        let bound_f = 1.0 / (f as f64).sqrt();
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let name = |s: &str| format!("block{l}.{s}");
            let ud = uniform(bound_d);
            let uf = uniform(bound_f);
            let ln1_g = params.push(&name("ln1.g"), &[d], || 1.0);
            let ln1_b = params.push(&name("ln1.b"), &[d], || 0.0);
            let wq = params.push(&name("attn.wq"), &[d, d], || ud(&mut rng));
            let wk = params.push(&name("attn.wk"), &[d, d], || ud(&mut rng));
            let wv = params.push(&name("attn.wv"), &[d, d], || ud(&mut rng));
            let wo = params.push(&name("attn.wo"), &[d, d], || ud(&mut rng));
            let ln2_g = params.push(&name("ln2.g"), &[d], || 1.0);
            let ln2_b = params.push(&name("ln2.b"), &[d], || 0.0);
            let w1 = params.push(&name("mlp.w1"), &[f, d], || ud(&mut rng));
            let b1 = params.push(&name("mlp.b1"), &[f], || 0.0);
            let w2 = params.push(&name("mlp.w2"), &[d, f], || uf(&mut rng));
            let b2 = params.push(&name("mlp.b2"), &[d], || 0.0);
            layers.push(LayerLayout {
                ln1_g,
                ln1_b,
                wq,
                wk,
                wv,
                wo,
                ln2_g,
                ln2_b,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let lnf_g = params.push("lnf.g", &[d], || 1.0);
        let lnf_b = params.push("lnf.b", &[d], || 0.0);
        Ok(Self {
            config: config.clone(),
            vocab,
            answer_tokens: answer_tokens.to_vec(),
            answer_ids,
            params,
            layout: Layout {
                tok,
                pos,
                layers,
                lnf_g,
                lnf_b,
            },
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn answer_tokens(&self) -> &[String] {
        &self.answer_tokens
    }

    pub fn param_set(&self) -> &ParamSet {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn p(&self, off: usize, len: usize) -> &[f64] {
        &self.params.data()[off..off + len]
    }

    fn sequence(&self, question: &str, rationale: &str) -> Sequence {
        let ctx = self.config.context_len;
        let mut q = self.vocab.encode(question);
        let r = self.vocab.encode(rationale);
        let mut truncated = false;
        let q_keep = ctx / 2 - 2;
        if q.len() > q_keep {
            q.drain(..q.len() - q_keep);
            truncated = true;
        }
        let mut ids = Vec::with_capacity(q.len() + r.len() + 3);
        ids.push(self.vocab.bos());
        ids.extend(&q);
        let sep = ids.len();
        ids.push(self.vocab.sep());
        ids.extend(&r);
        ids.push(self.vocab.eos());
        if ids.len() > ctx {
            ids.truncate(ctx);
            truncated = true;
        }
        Sequence { ids, sep, truncated }
    }

    /// Positions predicting the answer tokens that follow the final
    /// delimiter of the rationale.
    fn answer_positions(&self, seq: &Sequence, rationale: &str) -> Result<std::ops::Range<usize>> {
        let r = self.vocab.encode(rationale);
        let delim = r
            .iter()
            .rposition(|&t| t == self.vocab.delimiter())
            .ok_or_else(|| Error::Contract("rationale has no answer delimiter".into()))?;
        let n_answer = r.len() - delim - 1;
        if n_answer == 0 {
            return Err(Error::Contract("rationale has no answer after the delimiter".into()));
        }
        let start = seq.sep + 1 + delim;
        let end = start + n_answer;
        // the last answer token must itself be inside the window
        if end >= seq.ids.len() {
            return Err(Error::Contract(
                "answer tokens fall outside the context window".into(),
            ));
        }
        Ok(start..end)
    }

    fn forward(&self, ids: &[usize]) -> Forward {
        let d = self.config.d_model;
        let f = self.config.d_ff;
        let h = self.config.num_heads;
        let dh = d / h;
        let t = ids.len();
        let v_size = self.vocab.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let tok = self.p(self.layout.tok, v_size * d);
        let pos = self.p(self.layout.pos, self.config.context_len * d);

        let mut x = vec![0.0; t * d];
        for (i, &id) in ids.iter().enumerate() {
            for c in 0..d {
                x[i * d + c] = tok[id * d + c] + pos[i * d + c];
            }
        }
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for ll in &self.layout.layers {
            let (h1, ln1) = layer_norm(&x, self.p(ll.ln1_g, d), self.p(ll.ln1_b, d), d);
            let q = matmul_wt(&h1, self.p(ll.wq, d * d), t, d, d);
            let k = matmul_wt(&h1, self.p(ll.wk, d * d), t, d, d);
            let v = matmul_wt(&h1, self.p(ll.wv, d * d), t, d, d);
            let mut attn = vec![0.0; h * t * t];
            let mut o = vec![0.0; t * d];
            for head in 0..h {
                let c0 = head * dh;
                for i in 0..t {
                    let row = &mut attn[(head * t + i) * t..(head * t + i) * t + i + 1];
                    for (j, a) in row.iter_mut().enumerate() {
                        *a = crate::numeric::dot(
                            &q[i * d + c0..i * d + c0 + dh],
                            &k[j * d + c0..j * d + c0 + dh],
                        ) * scale;
                    }
                    softmax_in_place(row);
                    for j in 0..=i {
                        let a = attn[(head * t + i) * t + j];
                        for c in 0..dh {
                            o[i * d + c0 + c] += a * v[j * d + c0 + c];
                        }
                    }
                }
            }
            let proj = matmul_wt(&o, self.p(ll.wo, d * d), t, d, d);
            for (xv, pv) in x.iter_mut().zip(&proj) {
                *xv += pv;
            }
            let (h2, ln2) = layer_norm(&x, self.p(ll.ln2_g, d), self.p(ll.ln2_b, d), d);
            let mut fa = matmul_wt(&h2, self.p(ll.w1, f * d), t, d, f);
            let b1 = self.p(ll.b1, f);
            for r in 0..t {
                for c in 0..f {
                    fa[r * f + c] = (fa[r * f + c] + b1[c]).tanh();
                }
            }
            let out = matmul_wt(&fa, self.p(ll.w2, d * f), t, f, d);
            let b2 = self.p(ll.b2, d);
            for r in 0..t {
                for c in 0..d {
                    x[r * d + c] += out[r * d + c] + b2[c];
                }
            }
            layers.push(LayerCache {
                ln1,
                h1,
                q,
                k,
                v,
                attn,
                o,
                ln2,
                h2,
                f: fa,
            });
        }
        let (xf, lnf) = layer_norm(
            &x,
            self.p(self.layout.lnf_g, d),
            self.p(self.layout.lnf_b, d),
            d,
        );
        let logits = matmul_wt(&xf, tok, t, d, v_size);
        Forward {
            layers,
            hidden: x,
            lnf,
            xf,
            logits,
        }
    }

    fn backward(&self, ids: &[usize], fw: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let d = self.config.d_model;
        let f = self.config.d_ff;
        let h = self.config.num_heads;
        let dh = d / h;
        let t = ids.len();
        let v_size = self.vocab.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let tok_off = self.layout.tok;
        let tok = self.p(tok_off, v_size * d);

        let mut dxf = vec![0.0; t * d];
        matmul_wt_backward(
            &fw.xf,
            tok,
            dlogits,
            t,
            d,
            v_size,
            &mut grad[tok_off..tok_off + v_size * d],
            &mut dxf,
        );
        let mut dx = layer_norm_backward(
            &dxf,
            &fw.lnf,
            self.p(self.layout.lnf_g, d),
            grad,
            self.layout.lnf_g,
            self.layout.lnf_b,
            d,
        );

        for (ll, c) in self.layout.layers.iter().zip(&fw.layers).rev() {
            // MLP branch
            for r in 0..t {
                for cc in 0..d {
                    grad[ll.b2 + cc] += dx[r * d + cc];
                }
            }
            let mut df = vec![0.0; t * f];
            matmul_wt_backward(
                &c.f,
                self.p(ll.w2, d * f),
                &dx,
                t,
                f,
                d,
                &mut grad[ll.w2..ll.w2 + d * f],
                &mut df,
            );
            for (g, a) in df.iter_mut().zip(&c.f) {
                *g *= 1.0 - a * a;
            }
            for r in 0..t {
                for cc in 0..f {
                    grad[ll.b1 + cc] += df[r * f + cc];
                }
            }
            let mut dh2 = vec![0.0; t * d];
            matmul_wt_backward(
                &c.h2,
                self.p(ll.w1, f * d),
                &df,
                t,
                d,
                f,
                &mut grad[ll.w1..ll.w1 + f * d],
                &mut dh2,
            );
            let dmid = layer_norm_backward(&dh2, &c.ln2, self.p(ll.ln2_g, d), grad, ll.ln2_g, ll.ln2_b, d);
            for (a, b) in dx.iter_mut().zip(&dmid) {
                *a += b;
            }

            // attention branch
            let mut d_o = vec![0.0; t * d];
            matmul_wt_backward(
                &c.o,
                self.p(ll.wo, d * d),
                &dx,
                t,
                d,
                d,
                &mut grad[ll.wo..ll.wo + d * d],
                &mut d_o,
            );
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut da = vec![0.0; t];
            for head in 0..h {
                let c0 = head * dh;
                for i in 0..t {
                    let arow = &c.attn[(head * t + i) * t..(head * t + i) * t + i + 1];
                    let doi = &d_o[i * d + c0..i * d + c0 + dh];
                    for j in 0..=i {
                        da[j] = crate::numeric::dot(doi, &c.v[j * d + c0..j * d + c0 + dh]);
                        for cc in 0..dh {
                            dv[j * d + c0 + cc] += arow[j] * doi[cc];
                        }
                    }
                    let inner: f64 = (0..=i).map(|j| arow[j] * da[j]).sum();
                    for j in 0..=i {
                        let ds = arow[j] * (da[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for cc in 0..dh {
                            dq[i * d + c0 + cc] += ds * c.k[j * d + c0 + cc];
                            dk[j * d + c0 + cc] += ds * c.q[i * d + c0 + cc];
                        }
                    }
                }
            }
            let mut dh1 = vec![0.0; t * d];
            for (w_off, dy) in [(ll.wq, &dq), (ll.wk, &dk), (ll.wv, &dv)] {
                matmul_wt_backward(
                    &c.h1,
                    self.p(w_off, d * d),
                    dy,
                    t,
                    d,
                    d,
                    &mut grad[w_off..w_off + d * d],
                    &mut dh1,
                );
            }
            let din = layer_norm_backward(&dh1, &c.ln1, self.p(ll.ln1_g, d), grad, ll.ln1_g, ll.ln1_b, d);
            for (a, b) in dx.iter_mut().zip(&din) {
                *a += b;
            }
        }

        let pos_off = self.layout.pos;
        for (i, &id) in ids.iter().enumerate() {
            for cc in 0..d {
                grad[tok_off + id * d + cc] += dx[i * d + cc];
                grad[pos_off + i * d + cc] += dx[i * d + cc];
            }
        }
    }

    fn log_probs_at(&self, fw: &Forward, pos: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let row = &fw.logits[pos * v..(pos + 1) * v];
        let lse = crate::numeric::log_sum_exp(row);
        row.iter().map(|x| x - lse).collect()
    }

    fn restricted_probs_at(&self, fw: &Forward, pos: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let mut p: Vec<f64> = self.answer_ids.iter().map(|&a| fw.logits[pos * v + a]).collect();
        softmax_in_place(&mut p);
        p
    }

    /// Mean-pooled last-block hidden state over the rationale positions.
    pub fn pooled_hidden(&self, question: &str, rationale: &str) -> Vec<f64> {
        let seq = self.sequence(question, rationale);
        let fw = self.forward(&seq.ids);
        let d = self.config.d_model;
        let rows: Vec<usize> = (seq.sep + 1..seq.ids.len()).collect();
        let rows = if rows.is_empty() { vec![seq.sep] } else { rows };
        let mut out = vec![0.0; d];
        for &r in &rows {
            for c in 0..d {
                out[c] += fw.hidden[r * d + c];
            }
        }
        out.iter_mut().for_each(|v| *v /= rows.len() as f64);
        out
    }

    /// Greedy continuation after `[bos] question [sep]`, stopping at eos or
    /// the context limit.
    pub fn greedy_decode(&self, question: &str, max_new_tokens: usize) -> String {
        let seq = self.sequence(question, "");
        let mut ids = seq.ids[..=seq.sep].to_vec();
        let v = self.vocab.len();
        let mut generated = Vec::new();
        while generated.len() < max_new_tokens && ids.len() < self.config.context_len {
            let fw = self.forward(&ids);
            let last = ids.len() - 1;
            let row = &fw.logits[last * v..(last + 1) * v];
            let mut best = 0;
            for (i, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = i;
                }
            }
            if best == self.vocab.eos() {
                break;
            }
            ids.push(best);
            generated.push(best);
        }
        self.vocab.decode(&generated)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("kind".into(), "toy_student".into());
        meta.insert(
            "config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        meta.insert(
            "vocab".into(),
            serde_json::to_string(&self.vocab).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        meta.insert(
            "answer_tokens".into(),
            serde_json::to_string(&self.answer_tokens).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        Ok(Checkpoint {
            meta,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.get("kind").map(String::as_str) != Some("toy_student") {
            return Err(Error::Checkpoint("not a student checkpoint".into()));
        }
        let field = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing meta `{k}`")))
        };
        let bad = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let config: StudentConfig = serde_json::from_str(field("config")?).map_err(bad)?;
        let vocab: Vocab = serde_json::from_str(field("vocab")?).map_err(bad)?;
        let answer: Vec<String> = serde_json::from_str(field("answer_tokens")?).map_err(bad)?;
        let mut student = Self::new(&config, vocab, &answer)?;
        if !student.params.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint("parameter layout does not match the config".into()));
        }
        student.params = ckpt.params.clone();
        Ok(student)
    }
}

impl StudentModel for ToyStudent {
    fn params(&self) -> &[f64] {
        self.params.data()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.params.data_mut()
    }

    fn answer_vocab_size(&self) -> usize {
        self.answer_ids.len()
    }

    fn sequence_nll(&self, question: &str, rationale: &str) -> Result<SequenceNll> {
        let seq = self.sequence(question, rationale);
        let fw = self.forward(&seq.ids);
        let positions = seq.target_positions();
        let n = positions.len();
        let mut total = 0.0;
        for p in positions {
            total -= self.log_probs_at(&fw, p)[seq.ids[p + 1]];
        }
        Ok(SequenceNll {
            value: (total / n as f64).max(0.0),
            tokens: n,
            truncated: seq.truncated,
        })
    }

    fn answer_distribution(&self, question: &str, rationale: &str) -> Result<Vec<f64>> {
        let seq = self.sequence(question, rationale);
        let positions = self.answer_positions(&seq, rationale)?;
        let fw = self.forward(&seq.ids);
        let n = positions.len() as f64;
        let mut out = vec![0.0; self.answer_ids.len()];
        for p in positions {
            for (o, q) in out.iter_mut().zip(self.restricted_probs_at(&fw, p)) {
                *o += q / n;
            }
        }
        Ok(out)
    }

    fn objective_gradient(&self, question: &str, terms: &[GradientTerm<'_>]) -> Result<Vec<f64>> {
        let v = self.vocab.len();
        let mut grad = vec![0.0; self.params.len()];
        for term in terms {
            let seq = self.sequence(question, term.rationale);
            let answer_positions = match term.answer_grad {
                Some(g) => {
                    if g.len() != self.answer_ids.len() {
                        return Err(Error::shape(
                            "answer gradient",
                            self.answer_ids.len(),
                            g.len(),
                        ));
                    }
                    Some(self.answer_positions(&seq, term.rationale)?)
                }
                None => None,
            };
            let fw = self.forward(&seq.ids);
            let mut dlogits = vec![0.0; seq.ids.len() * v];
            if term.nll_weight != 0.0 {
                let positions = seq.target_positions();
                let scale = term.nll_weight / positions.len() as f64;
                for p in positions {
                    let row = &mut dlogits[p * v..(p + 1) * v];
                    for (dst, lp) in row.iter_mut().zip(self.log_probs_at(&fw, p)) {
                        *dst += scale * lp.exp();
                    }
                    row[seq.ids[p + 1]] -= scale;
                }
            }
            if let (Some(g), Some(positions)) = (term.answer_grad, answer_positions) {
                let n = positions.len() as f64;
                for p in positions {
                    let q = self.restricted_probs_at(&fw, p);
                    let inner: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (i, &a) in self.answer_ids.iter().enumerate() {
                        dlogits[p * v + a] += q[i] * (g[i] - inner) / n;
                    }
                }
            }
            self.backward(&seq.ids, &fw, &dlogits, &mut grad);
        }
        Ok(grad)
    }
}
