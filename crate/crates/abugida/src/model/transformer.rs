//! Model structure, initialization, and the batched forward/backward pass.
//!
//! Layers follow the post-norm arrangement: every sublayer computes
//! x = LayerNorm(x + Dropout(Sublayer(x))). Embeddings are scaled by
//! sqrt(model_dim) and given sinusoidal position signals. The output
//! projection shares storage with the target embedding when tied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_row, Param};
use super::{ConfigError, ModelConfig};
use crate::vocab::{TokenId, BOS, PAD};

pub(crate) const LN_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds max_length {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    BadToken { id: usize, vocab: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LnIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerIdx {
    pub attn: AttnIdx,
    pub ln_attn: LnIdx,
    pub ffn: FfnIdx,
    pub ln_ffn: LnIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerIdx {
    pub self_attn: AttnIdx,
    pub ln_self: LnIdx,
    pub cross_attn: AttnIdx,
    pub ln_cross: LnIdx,
    pub ffn: FfnIdx,
    pub ln_ffn: LnIdx,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub src_emb: usize,
    pub tgt_emb: usize,
    pub enc: Vec<EncLayerIdx>,
    pub dec: Vec<DecLayerIdx>,
    pub out_bias: usize,
    /// Separate output projection; absent when tied to the target embedding.
    pub out_proj: Option<usize>,
}

/// Encoder-decoder transformer with all parameters in one flat store.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub(crate) params: Vec<Param>,
    pub(crate) grads: Vec<Vec<f64>>,
    pub(crate) layout: Layout,
}

struct Builder {
    params: Vec<Param>,
}

impl Builder {
    fn add(&mut self, name: String, dims: Vec<usize>) -> usize {
        self.params.push(Param::zeros(name, dims));
        self.params.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            wq: self.add(format!("{prefix}.wq"), vec![d, d]),
            bq: self.add(format!("{prefix}.bq"), vec![d]),
            wk: self.add(format!("{prefix}.wk"), vec![d, d]),
            bk: self.add(format!("{prefix}.bk"), vec![d]),
            wv: self.add(format!("{prefix}.wv"), vec![d, d]),
            bv: self.add(format!("{prefix}.bv"), vec![d]),
            wo: self.add(format!("{prefix}.wo"), vec![d, d]),
            bo: self.add(format!("{prefix}.bo"), vec![d]),
        }
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx {
            gamma: self.add(format!("{prefix}.gamma"), vec![d]),
            beta: self.add(format!("{prefix}.beta"), vec![d]),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, ff: usize) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d, ff]),
            b1: self.add(format!("{prefix}.b1"), vec![ff]),
            w2: self.add(format!("{prefix}.w2"), vec![ff, d]),
            b2: self.add(format!("{prefix}.b2"), vec![d]),
        }
    }
}

/// Builds a model with parameters drawn from a scaled uniform distribution
/// keyed by `cfg.seed`; layer-norm gains start at one, biases at zero.
pub fn init_model(cfg: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Result<Model, ModelError> {
    cfg.validate()?;
    let d = cfg.model_dim;
    let ff = cfg.ff_dim;
    let mut b = Builder { params: Vec::new() };
    let src_emb = b.add("src_emb".to_string(), vec![src_vocab, d]);
    let tgt_emb = b.add("tgt_emb".to_string(), vec![tgt_vocab, d]);
    let enc = (0..cfg.enc_depth)
        .map(|l| EncLayerIdx {
            attn: b.attn(&format!("enc.{l}.attn"), d),
            ln_attn: b.ln(&format!("enc.{l}.ln_attn"), d),
            ffn: b.ffn(&format!("enc.{l}.ffn"), d, ff),
            ln_ffn: b.ln(&format!("enc.{l}.ln_ffn"), d),
        })
        .collect();
    let dec = (0..cfg.dec_depth)
        .map(|l| DecLayerIdx {
            self_attn: b.attn(&format!("dec.{l}.self"), d),
            ln_self: b.ln(&format!("dec.{l}.ln_self"), d),
            cross_attn: b.attn(&format!("dec.{l}.cross"), d),
            ln_cross: b.ln(&format!("dec.{l}.ln_cross"), d),
            ffn: b.ffn(&format!("dec.{l}.ffn"), d, ff),
            ln_ffn: b.ln(&format!("dec.{l}.ln_ffn"), d),
        })
        .collect();
    let out_bias = b.add("out_bias".to_string(), vec![tgt_vocab]);
    let out_proj = if cfg.tied_output {
        None
    } else {
        Some(b.add("out_proj".to_string(), vec![d, tgt_vocab]))
    };
    let layout = Layout { src_emb, tgt_emb, enc, dec, out_bias, out_proj };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for p in &mut b.params {
        match p.dims.len() {
            // Matrices: uniform in +-sqrt(6/(fan_in+fan_out)).
            2 => {
                let limit = (6.0 / (p.dims[0] + p.dims[1]) as f64).sqrt();
                for i in 0..p.len() {
                    p.set(i, (2.0 * rng.gen::<f64>() - 1.0) * limit);
                }
            }
            // Vectors: layer-norm gains to one, every bias to zero.
            _ => {
                if p.name.ends_with(".gamma") {
                    for i in 0..p.len() {
                        p.set(i, 1.0);
                    }
                }
            }
        }
    }

    let grads = b.params.iter().map(|p| vec![0.0; p.len()]).collect();
    Ok(Model { cfg: cfg.clone(), src_vocab, tgt_vocab, params: b.params, grads, layout })
}

impl Model {
    pub fn num_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    /// Accumulated gradient of tensor `i`, filled by the last
    /// [`Model::forward_backward`] call.
    pub fn gradient(&self, i: usize) -> &[f64] {
        &self.grads[i]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn check_ids(&self, ids: &[TokenId], vocab: usize) -> Result<(), ModelError> {
        if ids.len() > self.cfg.max_length {
            return Err(ModelError::TooLong { len: ids.len(), max: self.cfg.max_length });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
            return Err(ModelError::BadToken { id, vocab });
        }
        Ok(())
    }

    /// Inference-mode forward for one pair: per-position logits over the
    /// target vocabulary and the label-smoothed per-token loss. `src` and
    /// `tgt` are encoded lines (both end with `</s>`).
    pub fn forward(&self, src: &[TokenId], tgt: &[TokenId]) -> Result<(Vec<Vec<f64>>, f64), ModelError> {
        self.check_ids(src, self.src_vocab)?;
        self.check_ids(tgt, self.tgt_vocab)?;
        let batch = Batch::new(&[(src, tgt)]);
        let (_, _, logits) = self.run_forward(&batch, &mut None);
        let (loss, _) = self.loss_and_dlogits(&logits, &batch, self.cfg.label_smoothing, false);
        let v = self.tgt_vocab;
        let rows = logits.len() / v;
        let per_pos = (0..rows).map(|r| logits[r * v..(r + 1) * v].to_vec()).collect();
        Ok((per_pos, loss))
    }

    /// Training-mode step over a batch of encoded pairs: accumulates fresh
    /// gradients into the model and returns the smoothed per-token loss.
    /// Dropout fires only when an RNG is supplied and `cfg.dropout > 0`.
    pub fn forward_backward(
        &mut self,
        pairs: &[(&[TokenId], &[TokenId])],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64, ModelError> {
        for (s, t) in pairs {
            self.check_ids(s, self.src_vocab)?;
            self.check_ids(t, self.tgt_vocab)?;
        }
        self.zero_grads();
        let batch = Batch::new(pairs);
        let (tape, enc_out, logits) = self.run_forward(&batch, &mut rng);
        let (loss, dlogits) =
            self.loss_and_dlogits(&logits, &batch, self.cfg.label_smoothing, true);
        self.run_backward(&batch, &tape, &enc_out, dlogits.expect("grad requested"));
        Ok(loss)
    }

    /// Unsmoothed mean cross-entropy per gold token, inference mode.
    pub fn cross_entropy(&self, pairs: &[(&[TokenId], &[TokenId])]) -> f64 {
        let batch = Batch::new(pairs);
        let (_, _, logits) = self.run_forward(&batch, &mut None);
        let (ce, _) = self.loss_and_dlogits(&logits, &batch, 0.0, false);
        ce
    }
}

/// Padded batch of encoded pairs. Decoder input rows are the targets
/// shifted right behind `<s>`; gold rows are the targets as encoded
/// (ending in `</s>`).
pub(crate) struct Batch {
    pub bsz: usize,
    pub src_t: usize,
    pub tgt_t: usize,
    pub src: Vec<TokenId>,
    pub src_len: Vec<usize>,
    pub dec_in: Vec<TokenId>,
    pub gold: Vec<TokenId>,
    pub tgt_len: Vec<usize>,
    /// Total gold (non-pad) tokens.
    pub tokens: usize,
}

impl Batch {
    pub fn new(pairs: &[(&[TokenId], &[TokenId])]) -> Batch {
        let bsz = pairs.len();
        let src_t = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0).max(1);
        let tgt_t = pairs.iter().map(|(_, t)| t.len()).max().unwrap_or(0).max(1);
        let mut batch = Batch {
            bsz,
            src_t,
            tgt_t,
            src: vec![PAD; bsz * src_t],
            src_len: Vec::with_capacity(bsz),
            dec_in: vec![PAD; bsz * tgt_t],
            gold: vec![PAD; bsz * tgt_t],
            tgt_len: Vec::with_capacity(bsz),
            tokens: 0,
        };
        for (b, (s, t)) in pairs.iter().enumerate() {
            batch.src[b * src_t..b * src_t + s.len()].copy_from_slice(s);
            batch.src_len.push(s.len().max(1));
            batch.dec_in[b * tgt_t] = BOS;
            if t.len() > 1 {
                batch.dec_in[b * tgt_t + 1..b * tgt_t + t.len()].copy_from_slice(&t[..t.len() - 1]);
            }
            batch.gold[b * tgt_t..b * tgt_t + t.len()].copy_from_slice(t);
            batch.tgt_len.push(t.len().max(1));
            batch.tokens += t.len().max(1);
        }
        batch
    }
}

/// Key-visibility rule for one attention site.
enum MaskRule<'a> {
    /// Key position must fall inside the per-row length.
    Keys(&'a [usize]),
    /// Causal: key position must not exceed the query position.
    Causal,
}

impl MaskRule<'_> {
    #[inline]
    fn allowed(&self, b: usize, tq: usize, tk: usize) -> bool {
        match self {
            MaskRule::Keys(lens) => tk < lens[b],
            MaskRule::Causal => tk <= tq,
        }
    }
}

pub(crate) struct LnTape {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

pub(crate) struct AttnTape {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// [bsz, heads, tq, tk]
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

struct SublayerTape {
    drop: Option<Vec<f64>>,
    ln: LnTape,
}

struct EncLayerTape {
    x_in: Vec<f64>,
    attn: AttnTape,
    post_attn: SublayerTape,
    y_mid: Vec<f64>,
    ffn_hidden: Vec<f64>,
    post_ffn: SublayerTape,
}

struct DecLayerTape {
    x_in: Vec<f64>,
    self_attn: AttnTape,
    post_self: SublayerTape,
    y_self: Vec<f64>,
    cross_attn: AttnTape,
    post_cross: SublayerTape,
    y_cross: Vec<f64>,
    ffn_hidden: Vec<f64>,
    post_ffn: SublayerTape,
}

pub(crate) struct Tape {
    src_drop: Option<Vec<f64>>,
    tgt_drop: Option<Vec<f64>>,
    enc: Vec<EncLayerTape>,
    dec: Vec<DecLayerTape>,
    dec_out: Vec<f64>,
}

/// Sinusoidal position signal for position `t`, dimension `c`.
pub(crate) fn position_signal(t: usize, c: usize, d: usize) -> f64 {
    let i = (c / 2) as f64;
    let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
    if c % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn embed(params: &[Param], emb: usize, tokens: &[TokenId], bsz: usize, t_max: usize, d: usize) -> Vec<f64> {
    let table = params[emb].w();
    let scale = (d as f64).sqrt();
    let mut x = vec![0.0; bsz * t_max * d];
    for (pos, &tok) in tokens.iter().enumerate() {
        let t = pos % t_max;
        let row = &mut x[pos * d..(pos + 1) * d];
        let erow = &table[tok * d..(tok + 1) * d];
        for (c, xc) in row.iter_mut().enumerate() {
            *xc = erow[c] * scale + position_signal(t, c, d);
        }
    }
    x
}

fn embed_bwd(grads: &mut [Vec<f64>], emb: usize, tokens: &[TokenId], d: usize, dx: &[f64]) {
    let scale = (d as f64).sqrt();
    let g = &mut grads[emb];
    for (pos, &tok) in tokens.iter().enumerate() {
        let drow = &dx[pos * d..(pos + 1) * d];
        let grow = &mut g[tok * d..(tok + 1) * d];
        for (gc, &dc) in grow.iter_mut().zip(drow) {
            *gc += dc * scale;
        }
    }
}

/// Inverted dropout applied in place; the kept-mask (already scaled) is
/// returned for the backward pass.
fn dropout(x: &mut [f64], p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = match rng {
        Some(r) if p > 0.0 => r,
        _ => return None,
    };
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> =
        x.iter().map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    for (xi, &mi) in x.iter_mut().zip(&mask) {
        *xi *= mi;
    }
    Some(mask)
}

fn dropout_bwd(dy: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (di, &mi) in dy.iter_mut().zip(m) {
            *di *= mi;
        }
    }
}

fn linear(params: &[Param], w: usize, b: usize, x: &[f64], m: usize) -> Vec<f64> {
    let (k, n) = (params[w].dims[0], params[w].dims[1]);
    let mut y = vec![0.0; m * n];
    for row in y.chunks_mut(n) {
        row.copy_from_slice(&params[b].w()[..n]);
    }
    matmul_acc(&mut y, x, params[w].w(), m, k, n);
    y
}

/// dx += dy @ w^T; dw += x^T @ dy; db += column sums of dy.
fn linear_bwd(
    params: &[Param],
    grads: &mut [Vec<f64>],
    w: usize,
    b: usize,
    x: &[f64],
    dy: &[f64],
    m: usize,
    dx: &mut [f64],
) {
    let (k, n) = (params[w].dims[0], params[w].dims[1]);
    matmul_bt_acc(dx, dy, params[w].w(), m, n, k);
    matmul_at_acc(&mut grads[w], x, dy, m, k, n);
    let db = &mut grads[b];
    for row in dy.chunks(n) {
        for (dbj, &dj) in db.iter_mut().zip(row) {
            *dbj += dj;
        }
    }
}

fn layer_norm(params: &[Param], idx: LnIdx, x: &[f64], rows: usize, d: usize) -> (Vec<f64>, LnTape) {
    let gamma = params[idx.gamma].w();
    let beta = params[idx.beta].w();
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (xr[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma[c] * h + beta[c];
        }
    }
    (y, LnTape { xhat, inv_std })
}

fn layer_norm_bwd(
    params: &[Param],
    grads: &mut [Vec<f64>],
    idx: LnIdx,
    tape: &LnTape,
    dy: &[f64],
    rows: usize,
    d: usize,
) -> Vec<f64> {
    let gamma = params[idx.gamma].w();
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xhr = &tape.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            let dxhat = dyr[c] * gamma[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhr[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = tape.inv_std[r];
        for c in 0..d {
            let dxhat = dyr[c] * gamma[c];
            dx[r * d + c] = is * (dxhat - mean_dxhat - xhr[c] * mean_dxhat_xhat);
        }
    }
    {
        let dgamma = &mut grads[idx.gamma];
        for r in 0..rows {
            for c in 0..d {
                dgamma[c] += dy[r * d + c] * tape.xhat[r * d + c];
            }
        }
    }
    {
        let dbeta = &mut grads[idx.beta];
        for r in 0..rows {
            for c in 0..d {
                dbeta[c] += dy[r * d + c];
            }
        }
    }
    dx
}

#[derive(Clone, Copy)]
struct AttnShape {
    bsz: usize,
    tq: usize,
    tk: usize,
    d: usize,
    heads: usize,
}

fn attention(
    params: &[Param],
    idx: AttnIdx,
    xq: &[f64],
    xkv: &[f64],
    shape: &AttnShape,
    rule: &MaskRule<'_>,
) -> (AttnTape, Vec<f64>) {
    let AttnShape { bsz, tq, tk, d, heads } = *shape;
    let dk = d / heads;
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    let q = linear(params, idx.wq, idx.bq, xq, bsz * tq);
    let k = linear(params, idx.wk, idx.bk, xkv, bsz * tk);
    let v = linear(params, idx.wv, idx.bv, xkv, bsz * tk);
    let mut probs = vec![0.0; bsz * heads * tq * tk];
    let mut ctx = vec![0.0; bsz * tq * d];
    let mut row = vec![0.0; tk];
    for b in 0..bsz {
        for h in 0..heads {
            let off = h * dk;
            for iq in 0..tq {
                let qrow = &q[(b * tq + iq) * d + off..(b * tq + iq) * d + off + dk];
                for (ik, rv) in row.iter_mut().enumerate() {
                    if rule.allowed(b, iq, ik) {
                        let krow = &k[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                        let mut dot = 0.0;
                        for (qa, ka) in qrow.iter().zip(krow) {
                            dot += qa * ka;
                        }
                        *rv = dot * inv_sqrt_dk;
                    } else {
                        *rv = 0.0;
                    }
                }
                softmax_row(&mut row, |j| rule.allowed(b, iq, j));
                let pbase = ((b * heads + h) * tq + iq) * tk;
                probs[pbase..pbase + tk].copy_from_slice(&row);
                let crow = &mut ctx[(b * tq + iq) * d + off..(b * tq + iq) * d + off + dk];
                for (ik, &p) in row.iter().enumerate() {
                    if p != 0.0 {
                        let vrow = &v[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                        for (ca, &va) in crow.iter_mut().zip(vrow) {
                            *ca += p * va;
                        }
                    }
                }
            }
        }
    }
    let out = linear(params, idx.wo, idx.bo, &ctx, bsz * tq);
    (AttnTape { q, k, v, probs, ctx }, out)
}

/// Returns (dxq, dxkv); for self-attention the caller adds both into the
/// same upstream buffer.
fn attention_bwd(
    params: &[Param],
    grads: &mut [Vec<f64>],
    idx: AttnIdx,
    xq: &[f64],
    xkv: &[f64],
    tape: &AttnTape,
    shape: &AttnShape,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let AttnShape { bsz, tq, tk, d, heads } = *shape;
    let dk = d / heads;
    let inv_sqrt_dk = 1.0 / (dk as f64).sqrt();
    let mut dctx = vec![0.0; bsz * tq * d];
    linear_bwd(params, grads, idx.wo, idx.bo, &tape.ctx, dout, bsz * tq, &mut dctx);
    let mut dq = vec![0.0; bsz * tq * d];
    let mut dkm = vec![0.0; bsz * tk * d];
    let mut dv = vec![0.0; bsz * tk * d];
    let mut dp = vec![0.0; tk];
    for b in 0..bsz {
        for h in 0..heads {
            let off = h * dk;
            for iq in 0..tq {
                let dcrow = &dctx[(b * tq + iq) * d + off..(b * tq + iq) * d + off + dk];
                let pbase = ((b * heads + h) * tq + iq) * tk;
                let prow = &tape.probs[pbase..pbase + tk];
                let mut dot_pdp = 0.0;
                for ik in 0..tk {
                    let p = prow[ik];
                    if p != 0.0 {
                        let vrow = &tape.v[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                        let mut acc = 0.0;
                        for (da, va) in dcrow.iter().zip(vrow) {
                            acc += da * va;
                        }
                        dp[ik] = acc;
                        dot_pdp += p * acc;
                        // dV += p * dctx
                        let dvrow =
                            &mut dv[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                        for (dva, &da) in dvrow.iter_mut().zip(dcrow) {
                            *dva += p * da;
                        }
                    } else {
                        dp[ik] = 0.0;
                    }
                }
                let qrow_base = (b * tq + iq) * d + off;
                for ik in 0..tk {
                    let p = prow[ik];
                    if p == 0.0 {
                        continue;
                    }
                    let ds = p * (dp[ik] - dot_pdp) * inv_sqrt_dk;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = &tape.k[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                    let qrow = &tape.q[qrow_base..qrow_base + dk];
                    let dqrow = &mut dq[qrow_base..qrow_base + dk];
                    for (c, dqa) in dqrow.iter_mut().enumerate() {
                        *dqa += ds * krow[c];
                    }
                    let dkrow = &mut dkm[(b * tk + ik) * d + off..(b * tk + ik) * d + off + dk];
                    for (c, dka) in dkrow.iter_mut().enumerate() {
                        *dka += ds * qrow[c];
                    }
                }
            }
        }
    }
    let mut dxq = vec![0.0; bsz * tq * d];
    linear_bwd(params, grads, idx.wq, idx.bq, xq, &dq, bsz * tq, &mut dxq);
    let mut dxkv = vec![0.0; bsz * tk * d];
    linear_bwd(params, grads, idx.wk, idx.bk, xkv, &dkm, bsz * tk, &mut dxkv);
    linear_bwd(params, grads, idx.wv, idx.bv, xkv, &dv, bsz * tk, &mut dxkv);
    (dxq, dxkv)
}

fn ffn(params: &[Param], idx: FfnIdx, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
    let mut hidden = linear(params, idx.w1, idx.b1, x, rows);
    for h in hidden.iter_mut() {
        if *h < 0.0 {
            *h = 0.0;
        }
    }
    let out = linear(params, idx.w2, idx.b2, &hidden, rows);
    (hidden, out)
}

fn ffn_bwd(
    params: &[Param],
    grads: &mut [Vec<f64>],
    idx: FfnIdx,
    x: &[f64],
    hidden: &[f64],
    dout: &[f64],
    rows: usize,
    dx: &mut [f64],
) {
    let ff = params[idx.w1].dims[1];
    let mut dhidden = vec![0.0; rows * ff];
    linear_bwd(params, grads, idx.w2, idx.b2, hidden, dout, rows, &mut dhidden);
    for (dh, &h) in dhidden.iter_mut().zip(hidden) {
        if h == 0.0 {
            *dh = 0.0;
        }
    }
    linear_bwd(params, grads, idx.w1, idx.b1, x, &dhidden, rows, dx);
}

impl Model {
    /// Full forward pass over a batch. Returns the tape (for backward), the
    /// final encoder states, and the output logits (bsz*tgt_t rows of
    /// tgt_vocab).
    pub(crate) fn run_forward(
        &self,
        batch: &Batch,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Tape, Vec<f64>, Vec<f64>) {
        let d = self.cfg.model_dim;
        let p = self.cfg.dropout;
        let params = &self.params;
        let (bsz, src_t, tgt_t) = (batch.bsz, batch.src_t, batch.tgt_t);

        // Encoder.
        let mut x = embed(params, self.layout.src_emb, &batch.src, bsz, src_t, d);
        let src_drop = dropout(&mut x, p, rng);
        let enc_rule = MaskRule::Keys(&batch.src_len);
        let enc_shape = AttnShape { bsz, tq: src_t, tk: src_t, d, heads: self.cfg.heads };
        let rows_e = bsz * src_t;
        let mut enc_tapes = Vec::with_capacity(self.layout.enc.len());
        for layer in &self.layout.enc {
            let x_in = x;
            let (attn_tape, mut a) = attention(params, layer.attn, &x_in, &x_in, &enc_shape, &enc_rule);
            let attn_drop = dropout(&mut a, p, rng);
            for (ai, &xi) in a.iter_mut().zip(&x_in) {
                *ai += xi;
            }
            let (y_mid, ln1) = layer_norm(params, layer.ln_attn, &a, rows_e, d);
            let (ffn_hidden, mut f) = ffn(params, layer.ffn, &y_mid, rows_e);
            let ffn_drop = dropout(&mut f, p, rng);
            for (fi, &yi) in f.iter_mut().zip(&y_mid) {
                *fi += yi;
            }
            let (y_out, ln2) = layer_norm(params, layer.ln_ffn, &f, rows_e, d);
            x = y_out;
            enc_tapes.push(EncLayerTape {
                x_in,
                attn: attn_tape,
                post_attn: SublayerTape { drop: attn_drop, ln: ln1 },
                y_mid,
                ffn_hidden,
                post_ffn: SublayerTape { drop: ffn_drop, ln: ln2 },
            });
        }
        let enc_out = x;

        // Decoder.
        let mut y = embed(params, self.layout.tgt_emb, &batch.dec_in, bsz, tgt_t, d);
        let tgt_drop = dropout(&mut y, p, rng);
        let self_shape = AttnShape { bsz, tq: tgt_t, tk: tgt_t, d, heads: self.cfg.heads };
        let cross_shape = AttnShape { bsz, tq: tgt_t, tk: src_t, d, heads: self.cfg.heads };
        let cross_rule = MaskRule::Keys(&batch.src_len);
        let rows_d = bsz * tgt_t;
        let mut dec_tapes = Vec::with_capacity(self.layout.dec.len());
        for layer in &self.layout.dec {
            let x_in = y;
            let (self_tape, mut a) =
                attention(params, layer.self_attn, &x_in, &x_in, &self_shape, &MaskRule::Causal);
            let self_drop = dropout(&mut a, p, rng);
            for (ai, &xi) in a.iter_mut().zip(&x_in) {
                *ai += xi;
            }
            let (y_self, ln1) = layer_norm(params, layer.ln_self, &a, rows_d, d);
            let (cross_tape, mut c) =
                attention(params, layer.cross_attn, &y_self, &enc_out, &cross_shape, &cross_rule);
            let cross_drop = dropout(&mut c, p, rng);
            for (ci, &yi) in c.iter_mut().zip(&y_self) {
                *ci += yi;
            }
            let (y_cross, ln2) = layer_norm(params, layer.ln_cross, &c, rows_d, d);
            let (ffn_hidden, mut f) = ffn(params, layer.ffn, &y_cross, rows_d);
            let ffn_drop = dropout(&mut f, p, rng);
            for (fi, &yi) in f.iter_mut().zip(&y_cross) {
                *fi += yi;
            }
            let (y_out, ln3) = layer_norm(params, layer.ln_ffn, &f, rows_d, d);
            y = y_out;
            dec_tapes.push(DecLayerTape {
                x_in,
                self_attn: self_tape,
                post_self: SublayerTape { drop: self_drop, ln: ln1 },
                y_self,
                cross_attn: cross_tape,
                post_cross: SublayerTape { drop: cross_drop, ln: ln2 },
                y_cross,
                ffn_hidden,
                post_ffn: SublayerTape { drop: ffn_drop, ln: ln3 },
            });
        }
        let dec_out = y;

        let logits = self.output_logits(&dec_out, rows_d);
        let tape = Tape {
            src_drop,
            tgt_drop,
            enc: enc_tapes,
            dec: dec_tapes,
            dec_out,
        };
        (tape, enc_out, logits)
    }

    pub(crate) fn output_logits(&self, states: &[f64], rows: usize) -> Vec<f64> {
        let d = self.cfg.model_dim;
        let v = self.tgt_vocab;
        let mut logits = vec![0.0; rows * v];
        for row in logits.chunks_mut(v) {
            row.copy_from_slice(&self.params[self.layout.out_bias].w()[..v]);
        }
        match self.layout.out_proj {
            Some(w) => matmul_acc(&mut logits, states, self.params[w].w(), rows, d, v),
            None => matmul_bt_acc(&mut logits, states, self.params[self.layout.tgt_emb].w(), rows, d, v),
        }
        logits
    }

    /// Label-smoothed cross-entropy averaged over gold tokens, with the
    /// matching logit gradient when requested. Padded positions contribute
    /// nothing to either.
    pub(crate) fn loss_and_dlogits(
        &self,
        logits: &[f64],
        batch: &Batch,
        smoothing: f64,
        want_grad: bool,
    ) -> (f64, Option<Vec<f64>>) {
        let v = self.tgt_vocab;
        let eps = smoothing;
        let mut loss = 0.0;
        let mut dlogits = if want_grad { Some(vec![0.0; logits.len()]) } else { None };
        let inv_tokens = 1.0 / batch.tokens as f64;
        for b in 0..batch.bsz {
            for t in 0..batch.tgt_len[b] {
                let r = b * batch.tgt_t + t;
                let row = &logits[r * v..(r + 1) * v];
                let gold = batch.gold[r];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum_exp = 0.0;
                let mut sum_logits = 0.0;
                for &x in row {
                    sum_exp += (x - max).exp();
                    sum_logits += x;
                }
                let log_z = max + sum_exp.ln();
                let gold_logp = row[gold] - log_z;
                let mean_logp = sum_logits / v as f64 - log_z;
                loss += -(1.0 - eps) * gold_logp - eps * mean_logp;
                if let Some(dl) = dlogits.as_mut() {
                    let drow = &mut dl[r * v..(r + 1) * v];
                    let uniform = eps / v as f64;
                    for (j, dj) in drow.iter_mut().enumerate() {
                        let p = (row[j] - log_z).exp();
                        *dj = (p - uniform) * inv_tokens;
                    }
                    drow[gold] -= (1.0 - eps) * inv_tokens;
                }
            }
        }
        (loss * inv_tokens, dlogits)
    }

    pub(crate) fn run_backward(
        &mut self,
        batch: &Batch,
        tape: &Tape,
        enc_out: &[f64],
        dlogits: Vec<f64>,
    ) {
        let d = self.cfg.model_dim;
        let v = self.tgt_vocab;
        let (bsz, src_t, tgt_t) = (batch.bsz, batch.src_t, batch.tgt_t);
        let rows_d = bsz * tgt_t;
        let rows_e = bsz * src_t;
        let heads = self.cfg.heads;
        let layout = self.layout.clone();
        let params = &self.params;
        let grads = &mut self.grads;

        // Output layer.
        let mut dy = vec![0.0; rows_d * d];
        match layout.out_proj {
            Some(w) => {
                matmul_bt_acc(&mut dy, &dlogits, params[w].w(), rows_d, v, d);
                matmul_at_acc(&mut grads[w], &tape.dec_out, &dlogits, rows_d, d, v);
            }
            None => {
                matmul_acc(&mut dy, &dlogits, params[layout.tgt_emb].w(), rows_d, v, d);
                matmul_at_acc(&mut grads[layout.tgt_emb], &dlogits, &tape.dec_out, rows_d, v, d);
            }
        }
        {
            let dbias = &mut grads[layout.out_bias];
            for row in dlogits.chunks(v) {
                for (bj, &dj) in dbias.iter_mut().zip(row) {
                    *bj += dj;
                }
            }
        }

        // Decoder layers, reversed.
        let self_shape = AttnShape { bsz, tq: tgt_t, tk: tgt_t, d, heads };
        let cross_shape = AttnShape { bsz, tq: tgt_t, tk: src_t, d, heads };
        let mut denc_out = vec![0.0; rows_e * d];
        for (layer, lt) in layout.dec.iter().zip(&tape.dec).rev() {
            // x = LN(y_cross + drop(ffn_out))
            let dz = layer_norm_bwd(params, grads, layer.ln_ffn, &lt.post_ffn.ln, &dy, rows_d, d);
            let mut dffn = dz.clone();
            dropout_bwd(&mut dffn, &lt.post_ffn.drop);
            let mut dy_cross = dz;
            ffn_bwd(params, grads, layer.ffn, &lt.y_cross, &lt.ffn_hidden, &dffn, rows_d, &mut dy_cross);
            // y_cross = LN(y_self + drop(cross_out))
            let dz = layer_norm_bwd(params, grads, layer.ln_cross, &lt.post_cross.ln, &dy_cross, rows_d, d);
            let mut dcross = dz.clone();
            dropout_bwd(&mut dcross, &lt.post_cross.drop);
            let mut dy_self = dz;
            let (dxq, dxkv) = attention_bwd(
                params, grads, layer.cross_attn, &lt.y_self, enc_out, &lt.cross_attn,
                &cross_shape, &dcross,
            );
            for (a, &b_) in dy_self.iter_mut().zip(&dxq) {
                *a += b_;
            }
            for (a, &b_) in denc_out.iter_mut().zip(&dxkv) {
                *a += b_;
            }
            // y_self = LN(x_in + drop(self_out))
            let dz = layer_norm_bwd(params, grads, layer.ln_self, &lt.post_self.ln, &dy_self, rows_d, d);
            let mut dself = dz.clone();
            dropout_bwd(&mut dself, &lt.post_self.drop);
            let mut dx_in = dz;
            let (dxq, dxkv) = attention_bwd(
                params, grads, layer.self_attn, &lt.x_in, &lt.x_in, &lt.self_attn,
                &self_shape, &dself,
            );
            for ((a, &b1), &b2) in dx_in.iter_mut().zip(&dxq).zip(&dxkv) {
                *a += b1 + b2;
            }
            dy = dx_in;
        }
        dropout_bwd(&mut dy, &tape.tgt_drop);
        embed_bwd(grads, layout.tgt_emb, &batch.dec_in, d, &dy);

        // Encoder layers, reversed.
        let enc_shape = AttnShape { bsz, tq: src_t, tk: src_t, d, heads };
        let mut dx = denc_out;
        for (layer, lt) in layout.enc.iter().zip(&tape.enc).rev() {
            let dz = layer_norm_bwd(params, grads, layer.ln_ffn, &lt.post_ffn.ln, &dx, rows_e, d);
            let mut dffn = dz.clone();
            dropout_bwd(&mut dffn, &lt.post_ffn.drop);
            let mut dy_mid = dz;
            ffn_bwd(params, grads, layer.ffn, &lt.y_mid, &lt.ffn_hidden, &dffn, rows_e, &mut dy_mid);
            let dz = layer_norm_bwd(params, grads, layer.ln_attn, &lt.post_attn.ln, &dy_mid, rows_e, d);
            let mut dattn = dz.clone();
            dropout_bwd(&mut dattn, &lt.post_attn.drop);
            let mut dx_in = dz;
            let (dxq, dxkv) = attention_bwd(
                params, grads, layer.attn, &lt.x_in, &lt.x_in, &lt.attn, &enc_shape, &dattn,
            );
            for ((a, &b1), &b2) in dx_in.iter_mut().zip(&dxq).zip(&dxkv) {
                *a += b1 + b2;
            }
            dx = dx_in;
        }
        dropout_bwd(&mut dx, &tape.src_drop);
        embed_bwd(grads, layout.src_emb, &batch.src, d, &dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::EOS as VEOS;

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            ff_dim: 32,
            heads: 2,
            dropout: 0.0,
            label_smoothing: 0.1,
            max_length: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = micro_cfg();
        let a = init_model(&cfg, 12, 12).unwrap();
        let b = init_model(&cfg, 12, 12).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.w32(), pb.w32(), "{} differs", pa.name);
        }
        let c = init_model(&ModelConfig { seed: 2222, ..cfg }, 12, 12).unwrap();
        assert_ne!(a.params[0].w32(), c.params[0].w32());
    }

    #[test]
    fn divisibility_violation_is_an_error() {
        let cfg = ModelConfig { heads: 3, model_dim: 8, ..ModelConfig::default() };
        assert!(init_model(&cfg, 12, 12).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let m = init_model(&micro_cfg(), 12, 12).unwrap();
        let (v, d, ff) = (12usize, 8usize, 32usize);
        let attn = 4 * d * d + 4 * d;
        let ln = 2 * d;
        let ffn = d * ff + ff + ff * d + d;
        let enc_layer = attn + ln + ffn + ln;
        let dec_layer = 2 * (attn + ln) + ffn + ln;
        let expected = 2 * v * d + 2 * enc_layer + 2 * dec_layer + v;
        assert_eq!(m.parameter_count(), expected);
        assert_eq!(expected, 4300);
    }

    #[test]
    fn all_equal_logits_cost_ln_v() {
        let mut m = init_model(&micro_cfg(), 12, 12).unwrap();
        for i in 0..m.num_tensors() {
            let n = m.tensor(i).len();
            let p = m.tensor_mut(i);
            for j in 0..n {
                p.set(j, 0.0);
            }
        }
        let src = vec![5, 6, VEOS];
        let tgt = vec![7, 8, 9, VEOS];
        let (logits, loss) = m.forward(&src, &tgt).unwrap();
        assert_eq!(logits.len(), 4);
        assert_eq!(logits[0].len(), 12);
        assert!((loss - (12f64).ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn length_and_vocab_bounds_are_checked() {
        let m = init_model(&micro_cfg(), 12, 12).unwrap();
        let long: Vec<usize> = (0..40).map(|_| 5).collect();
        assert!(matches!(m.forward(&long, &[VEOS]), Err(ModelError::TooLong { .. })));
        assert!(matches!(m.forward(&[99], &[VEOS]), Err(ModelError::BadToken { .. })));
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let m = init_model(&micro_cfg(), 12, 12).unwrap();
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![5, 6, VEOS], vec![6, 5, VEOS]),
            (vec![7, VEOS], vec![7, 8, 9, 10, VEOS]),
            (vec![11, 9, 8, 7, VEOS], vec![5, VEOS]),
        ];
        // batched loss equals the token-weighted mean of single losses
        let refs: Vec<(&[usize], &[usize])> =
            pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
        let batch = Batch::new(&refs);
        let (_, _, logits) = m.run_forward(&batch, &mut None);
        let (batch_loss, _) = m.loss_and_dlogits(&logits, &batch, 0.1, false);
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        for (s, t) in &pairs {
            let (_, l) = m.forward(s, t).unwrap();
            weighted += l * t.len() as f64;
            tokens += t.len();
        }
        assert!((batch_loss - weighted / tokens as f64).abs() < 1e-9);
    }

    #[test]
    fn padding_does_not_leak_into_valid_positions() {
        let m = init_model(&micro_cfg(), 12, 12).unwrap();
        // same pair alone vs padded next to a longer one
        let (src, tgt): (Vec<usize>, Vec<usize>) = (vec![5, 6, VEOS], vec![6, VEOS]);
        let (alone, _) = m.forward(&src, &tgt).unwrap();
        let long: (Vec<usize>, Vec<usize>) =
            (vec![7, 8, 9, 10, 11, VEOS], vec![9, 8, 7, 6, 5, VEOS]);
        let batch = Batch::new(&[(&src, &tgt), (&long.0, &long.1)]);
        let (_, _, logits) = m.run_forward(&batch, &mut None);
        let v = 12;
        for t in 0..2 {
            for j in 0..v {
                let padded = logits[(t) * v + j];
                assert!((padded - alone[t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn untied_output_has_its_own_projection() {
        let cfg = ModelConfig { tied_output: false, ..micro_cfg() };
        let m = init_model(&cfg, 12, 12).unwrap();
        assert!(m.layout.out_proj.is_some());
        assert_eq!(m.parameter_count(), 4300 + 8 * 12);
    }
}
