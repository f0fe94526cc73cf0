//! Greedy and beam decoding with incremental state.
//!
//! The source sentence is encoded once; decoding then feeds one token at a
//! time, caching decoder self-attention keys/values and the cross-attention
//! projections so each step costs O(current length) attention work. `<pad>`
//! and `<s>` are banned from the output distribution (their logits drop to
//! negative infinity before normalization), so decoder output never
//! contains them.

use super::tensor::{log_softmax_row, softmax_row, Param};
use super::transformer::Model;
use crate::vocab::{TokenId, BOS, EOS, PAD};

/// Encoder output and per-layer cross-attention projections for one source.
pub struct EncodedSource {
    src_t: usize,
    /// Per decoder layer: projected keys/values, src_t x d each.
    cross_k: Vec<Vec<f64>>,
    cross_v: Vec<Vec<f64>>,
}

/// Grows by one position per generated token.
#[derive(Clone)]
struct DecodeState {
    self_k: Vec<Vec<f64>>,
    self_v: Vec<Vec<f64>>,
    len: usize,
}

impl DecodeState {
    fn new(layers: usize) -> DecodeState {
        DecodeState { self_k: vec![Vec::new(); layers], self_v: vec![Vec::new(); layers], len: 0 }
    }
}

fn single_linear(params: &[Param], w: usize, b: usize, x: &[f64]) -> Vec<f64> {
    let (k, n) = (params[w].dims[0], params[w].dims[1]);
    let wv = params[w].w();
    let mut y = params[b].w().to_vec();
    for (kk, &a) in x.iter().enumerate().take(k) {
        if a == 0.0 {
            continue;
        }
        for (yj, &wj) in y.iter_mut().zip(&wv[kk * n..(kk + 1) * n]) {
            *yj += a * wj;
        }
    }
    y
}

fn single_ln(params: &[Param], gamma: usize, beta: usize, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let g = params[gamma].w();
    let bt = params[beta].w();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv = 1.0 / (var + super::transformer::LN_EPS).sqrt();
    (0..d).map(|c| g[c] * (x[c] - mean) * inv + bt[c]).collect()
}

/// Attention of a single query over `t` cached key/value rows.
fn single_attention(q: &[f64], keys: &[f64], values: &[f64], t: usize, heads: usize) -> Vec<f64> {
    let d = q.len();
    let dk = d / heads;
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    let mut ctx = vec![0.0; d];
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let off = h * dk;
        for (ik, s) in scores.iter_mut().enumerate() {
            let krow = &keys[ik * d + off..ik * d + off + dk];
            let mut dot = 0.0;
            for (qa, ka) in q[off..off + dk].iter().zip(krow) {
                dot += qa * ka;
            }
            *s = dot * inv_sqrt_dk;
        }
        softmax_row(&mut scores, |_| true);
        let crow = &mut ctx[off..off + dk];
        for (ik, &p) in scores.iter().enumerate() {
            let vrow = &values[ik * d + off..ik * d + off + dk];
            for (ca, &va) in crow.iter_mut().zip(vrow) {
                *ca += p * va;
            }
        }
    }
    ctx
}

impl Model {
    /// Runs the encoder on one source sequence and precomputes everything
    /// decoding needs from it.
    pub fn encode_source(&self, src: &[TokenId]) -> EncodedSource {
        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let params = &self.params;
        let t = src.len().max(1);
        let scale = (d as f64).sqrt();
        let table = params[self.layout.src_emb].w();
        let mut x = vec![0.0; t * d];
        for (pos, &tok) in src.iter().enumerate() {
            for c in 0..d {
                x[pos * d + c] =
                    table[tok * d + c] * scale + super::transformer::position_signal(pos, c, d);
            }
        }
        for layer in &self.layout.enc {
            // self-attention sublayer
            let q = batched_proj(params, layer.attn.wq, layer.attn.bq, &x, t);
            let k = batched_proj(params, layer.attn.wk, layer.attn.bk, &x, t);
            let v = batched_proj(params, layer.attn.wv, layer.attn.bv, &x, t);
            let mut ctx = vec![0.0; t * d];
            for iq in 0..t {
                let c = single_attention(&q[iq * d..(iq + 1) * d], &k, &v, t, heads);
                ctx[iq * d..(iq + 1) * d].copy_from_slice(&c);
            }
            let a = batched_proj(params, layer.attn.wo, layer.attn.bo, &ctx, t);
            let mut z: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| xi + ai).collect();
            for row in 0..t {
                let y = single_ln(
                    params,
                    layer.ln_attn.gamma,
                    layer.ln_attn.beta,
                    &z[row * d..(row + 1) * d],
                );
                z[row * d..(row + 1) * d].copy_from_slice(&y);
            }
            // feed-forward sublayer
            let mut hidden = batched_proj(params, layer.ffn.w1, layer.ffn.b1, &z, t);
            for h in hidden.iter_mut() {
                if *h < 0.0 {
                    *h = 0.0;
                }
            }
            let f = batched_proj(params, layer.ffn.w2, layer.ffn.b2, &hidden, t);
            let mut z2: Vec<f64> = z.iter().zip(&f).map(|(zi, fi)| zi + fi).collect();
            for row in 0..t {
                let y = single_ln(
                    params,
                    layer.ln_ffn.gamma,
                    layer.ln_ffn.beta,
                    &z2[row * d..(row + 1) * d],
                );
                z2[row * d..(row + 1) * d].copy_from_slice(&y);
            }
            x = z2;
        }
        let cross_k = self
            .layout
            .dec
            .iter()
            .map(|l| batched_proj(params, l.cross_attn.wk, l.cross_attn.bk, &x, t))
            .collect();
        let cross_v = self
            .layout
            .dec
            .iter()
            .map(|l| batched_proj(params, l.cross_attn.wv, l.cross_attn.bv, &x, t))
            .collect();
        EncodedSource { src_t: t, cross_k, cross_v }
    }

    /// Feeds one token, advances the cache, and returns banned, normalized
    /// log-probabilities for the next position.
    fn step_logprobs(&self, enc: &EncodedSource, state: &mut DecodeState, token: TokenId) -> Vec<f64> {
        let d = self.cfg.model_dim;
        let heads = self.cfg.heads;
        let params = &self.params;
        let pos = state.len;
        let scale = (d as f64).sqrt();
        let table = params[self.layout.tgt_emb].w();
        let mut y: Vec<f64> = (0..d)
            .map(|c| table[token * d + c] * scale + super::transformer::position_signal(pos, c, d))
            .collect();
        for (li, layer) in self.layout.dec.iter().enumerate() {
            let q = single_linear(params, layer.self_attn.wq, layer.self_attn.bq, &y);
            let k = single_linear(params, layer.self_attn.wk, layer.self_attn.bk, &y);
            let v = single_linear(params, layer.self_attn.wv, layer.self_attn.bv, &y);
            state.self_k[li].extend_from_slice(&k);
            state.self_v[li].extend_from_slice(&v);
            let ctx = single_attention(&q, &state.self_k[li], &state.self_v[li], pos + 1, heads);
            let a = single_linear(params, layer.self_attn.wo, layer.self_attn.bo, &ctx);
            let z: Vec<f64> = y.iter().zip(&a).map(|(yi, ai)| yi + ai).collect();
            let y1 = single_ln(params, layer.ln_self.gamma, layer.ln_self.beta, &z);

            let q = single_linear(params, layer.cross_attn.wq, layer.cross_attn.bq, &y1);
            let ctx = single_attention(&q, &enc.cross_k[li], &enc.cross_v[li], enc.src_t, heads);
            let c = single_linear(params, layer.cross_attn.wo, layer.cross_attn.bo, &ctx);
            let z: Vec<f64> = y1.iter().zip(&c).map(|(yi, ci)| yi + ci).collect();
            let y2 = single_ln(params, layer.ln_cross.gamma, layer.ln_cross.beta, &z);

            let mut hidden = single_linear(params, layer.ffn.w1, layer.ffn.b1, &y2);
            for h in hidden.iter_mut() {
                if *h < 0.0 {
                    *h = 0.0;
                }
            }
            let f = single_linear(params, layer.ffn.w2, layer.ffn.b2, &hidden);
            let z: Vec<f64> = y2.iter().zip(&f).map(|(yi, fi)| yi + fi).collect();
            y = single_ln(params, layer.ln_ffn.gamma, layer.ln_ffn.beta, &z);
        }
        state.len += 1;
        let mut logits = self.output_logits(&y, 1);
        logits[PAD] = f64::NEG_INFINITY;
        logits[BOS] = f64::NEG_INFINITY;
        log_softmax_row(&mut logits);
        logits
    }
}

fn batched_proj(params: &[Param], w: usize, b: usize, x: &[f64], rows: usize) -> Vec<f64> {
    let d = params[w].dims[0];
    let mut out = Vec::with_capacity(rows * params[w].dims[1]);
    for r in 0..rows {
        out.extend(single_linear(params, w, b, &x[r * d..(r + 1) * d]));
    }
    out
}

/// Argmax decoding: emits the most probable token each step (lowest id on
/// ties) until `</s>` or `max_len` tokens. The returned sequence excludes
/// the terminating `</s>`.
pub fn greedy_decode(model: &Model, src: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let enc = model.encode_source(src);
    let mut state = DecodeState::new(model.cfg.dec_depth);
    let mut out = Vec::new();
    let mut last = BOS;
    for _ in 0..max_len {
        let logprobs = model.step_logprobs(&enc, &mut state, last);
        let mut best = 0;
        for (j, &lp) in logprobs.iter().enumerate() {
            if lp > logprobs[best] {
                best = j;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        last = best;
    }
    out
}

struct Hyp {
    ids: Vec<TokenId>,
    logp: f64,
    state: DecodeState,
}

struct Finished {
    ids: Vec<TokenId>,
    logp: f64,
    /// Generated tokens including the terminating `</s>` when present.
    gen_len: usize,
}

impl Finished {
    fn score(&self, alpha: f64) -> f64 {
        self.logp / (self.gen_len as f64).powf(alpha)
    }
}

/// Beam search with length-normalized scoring: finished hypotheses are
/// ranked by logp / length^alpha, ties by the lexicographically smaller
/// token-id sequence. `beam = 1` reproduces greedy decoding.
pub fn beam_decode(
    model: &Model,
    src: &[TokenId],
    beam: usize,
    alpha: f64,
    max_len: usize,
) -> Vec<TokenId> {
    assert!(beam >= 1, "beam must be at least 1");
    let enc = model.encode_source(src);
    let mut live = vec![Hyp { ids: Vec::new(), logp: 0.0, state: DecodeState::new(model.cfg.dec_depth) }];
    let mut finished: Vec<Finished> = Vec::new();
    let max_norm = (max_len.max(1) as f64).powf(alpha);
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        // Nothing still alive can beat the best finished score: every
        // extension only lowers logp, and dividing a non-positive logp by
        // the largest possible normalizer bounds the reachable score.
        if let Some(best_done) = finished
            .iter()
            .map(|f| f.score(alpha))
            .max_by(|a, b| a.partial_cmp(b).unwrap())
        {
            let bound = live
                .iter()
                .map(|h| if h.logp < 0.0 { h.logp / max_norm } else { 0.0 })
                .fold(f64::NEG_INFINITY, f64::max);
            if bound <= best_done {
                break;
            }
        }
        // (parent index, token, cumulative logp)
        let mut cands: Vec<(usize, TokenId, f64)> = Vec::new();
        let mut stepped: Vec<(Vec<f64>, DecodeState)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let mut state = hyp.state.clone();
            let last = *hyp.ids.last().unwrap_or(&BOS);
            let logprobs = model.step_logprobs(&enc, &mut state, last);
            for (tok, &lp) in logprobs.iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((hi, tok, hyp.logp + lp));
                }
            }
            stepped.push((logprobs, state));
        }
        cands.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then_with(|| (live[a.0].ids.as_slice(), a.1).cmp(&(live[b.0].ids.as_slice(), b.1)))
        });
        cands.truncate(beam);
        let mut next: Vec<Hyp> = Vec::with_capacity(beam);
        for (hi, tok, logp) in cands {
            let parent = &live[hi];
            if tok == EOS {
                finished.push(Finished {
                    ids: parent.ids.clone(),
                    logp,
                    gen_len: parent.ids.len() + 1,
                });
            } else {
                let mut ids = parent.ids.clone();
                ids.push(tok);
                next.push(Hyp { ids, logp, state: stepped[hi].1.clone() });
            }
        }
        live = next;
    }
    // Out of budget: surviving hypotheses compete as-is.
    for hyp in live {
        if !hyp.ids.is_empty() {
            finished.push(Finished { gen_len: hyp.ids.len(), ids: hyp.ids, logp: hyp.logp });
        }
    }
    finished
        .into_iter()
        .max_by(|a, b| {
            a.score(alpha)
                .partial_cmp(&b.score(alpha))
                .unwrap()
                .then_with(|| b.ids.cmp(&a.ids))
        })
        .map(|f| f.ids)
        .unwrap_or_default()
}
