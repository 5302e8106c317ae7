//! Joint text/patch transformer: embeddings, pre-norm blocks with full
//! self-attention, and a classifier on the start-token output.
//!
//! Only the start token feeds the classifier, so the final block computes
//! queries, the residual stream and the feed-forward for that one row; keys
//! and values still cover the whole sequence. Results are identical to running
//! the block on every row and discarding the rest.

use crate::motion_image::{MotionImage, CHANNELS};

use super::params::{LayerParams, ModelConfig, Parameters};
use super::tensor::{accumulate_col_sums, add_row_bias, gemm, MatMut, MatRef};
use super::tokenizer::TokenSequence;
use super::ModelError;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Image patches in model input order, with all-zero patches elided.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub num_patches: usize,
    pub patch_dim: usize,
    /// Patch indices (row-major over the patch grid) holding a nonzero value.
    pub indices: Vec<usize>,
    /// One `patch_dim` row per entry of `indices`, laid out (dy, dx, channel).
    pub data: Vec<f64>,
}

impl PatchGrid {
    pub fn from_image(image: &MotionImage, cfg: &ModelConfig) -> Result<Self, ModelError> {
        if image.height != cfg.image_height || image.width != cfg.image_width {
            return Err(ModelError::Config(format!(
                "image is {}x{}, model expects {}x{}",
                image.height, image.width, cfg.image_height, cfg.image_width
            )));
        }
        let ps = cfg.patch_size;
        let patch_dim = cfg.patch_dim();
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut buf = vec![0.0; patch_dim];
        for pr in 0..cfg.patch_rows() {
            for pc in 0..cfg.patch_cols() {
                for dy in 0..ps {
                    let start = image.offset(pr * ps + dy, pc * ps);
                    buf[dy * ps * CHANNELS..(dy + 1) * ps * CHANNELS]
                        .copy_from_slice(&image.pixels[start..start + ps * CHANNELS]);
                }
                if buf.iter().any(|&v| v != 0.0) {
                    indices.push(pr * cfg.patch_cols() + pc);
                    data.extend_from_slice(&buf);
                }
            }
        }
        Ok(PatchGrid { num_patches: cfg.num_patches(), patch_dim, indices, data })
    }
}

struct LayerCache {
    /// Number of query rows computed by this block.
    rows: usize,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    ln1_out: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    ln2_out: Vec<f64>,
    ffn_pre: Vec<f64>,
    ffn_act: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`backward_from_cache`].
pub struct ForwardCache {
    pub text_len: usize,
    pub seq_len: usize,
    layers: Vec<LayerCache>,
    final_xhat: Vec<f64>,
    final_rstd: f64,
    final_out: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// Attention weights of block `layer`, shape `[heads, query_rows, seq_len]`.
    pub fn attention(&self, layer: usize) -> (&[f64], usize) {
        let c = &self.layers[layer];
        (&c.probs, c.rows)
    }
}

fn layer_norm(
    x: &[f64],
    d: usize,
    g: &[f64],
    b: &[f64],
    out: &mut [f64],
    xhat: &mut [f64],
    rstd: &mut [f64],
) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    d: usize,
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for (r, dy_row) in dy.chunks_exact(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean1 = 0.0;
        let mut mean2 = 0.0;
        for j in 0..d {
            dxhat[j] = dy_row[j] * g[j];
            mean1 += dxhat[j];
            mean2 += dxhat[j] * xh[j];
            dg[j] += dy_row[j] * xh[j];
            db[j] += dy_row[j];
        }
        mean1 /= d as f64;
        mean2 /= d as f64;
        let dx_row = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            dx_row[j] += rstd[r] * (dxhat[j] - mean1 - xh[j] * mean2);
        }
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `out = x * w + b` for a row-major `rows x in` input.
fn linear(x: &[f64], rows: usize, w: &super::tensor::Tensor, b: &[f64]) -> Vec<f64> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let mut out = vec![0.0; rows * dout];
    gemm(1.0, MatRef::new(x, rows, din), MatRef::new(&w.data, din, dout), 0.0, MatMut::new(&mut out, rows, dout));
    add_row_bias(&mut out, dout, b);
    out
}

/// `dw += x^T dy`, `db += colsum(dy)` and returns `dy w^T` when `want_dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &super::tensor::Tensor,
    dw: &mut super::tensor::Tensor,
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    gemm(
        1.0,
        MatRef::new(x, rows, din).t(),
        MatRef::new(dy, rows, dout),
        1.0,
        MatMut::new(&mut dw.data, din, dout),
    );
    accumulate_col_sums(dy, dout, db);
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * din];
        gemm(1.0, MatRef::new(dy, rows, dout), MatRef::new(&w.data, din, dout).t(), 0.0, MatMut::new(&mut dx, rows, din));
        dx
    })
}

fn layer_forward(
    p: &LayerParams,
    cfg: &ModelConfig,
    x: &[f64],
    seq_len: usize,
    rows: usize,
) -> (Vec<f64>, LayerCache) {
    let d = cfg.embed_dim;
    let f = cfg.ffn_dim();
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut ln1_out = vec![0.0; seq_len * d];
    let mut ln1_xhat = vec![0.0; seq_len * d];
    let mut ln1_rstd = vec![0.0; seq_len];
    layer_norm(x, d, &p.ln1_g.data, &p.ln1_b.data, &mut ln1_out, &mut ln1_xhat, &mut ln1_rstd);

    let q = linear(&ln1_out[..rows * d], rows, &p.wq, &p.bq.data);
    let k = linear(&ln1_out, seq_len, &p.wk, &p.bk.data);
    let v = linear(&ln1_out, seq_len, &p.wv, &p.bv.data);

    let mut probs = vec![0.0; heads * rows * seq_len];
    let mut ctx = vec![0.0; rows * d];
    for h in 0..heads {
        let scores = &mut probs[h * rows * seq_len..(h + 1) * rows * seq_len];
        gemm(
            scale,
            MatRef::cols_of(&q, rows, d, h * dh, dh),
            MatRef::cols_of(&k, seq_len, d, h * dh, dh).t(),
            0.0,
            MatMut::new(scores, rows, seq_len),
        );
        for row in scores.chunks_exact_mut(seq_len) {
            softmax_in_place(row);
        }
        gemm(
            1.0,
            MatRef::new(scores, rows, seq_len),
            MatRef::cols_of(&v, seq_len, d, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut ctx, rows, d, h * dh, dh),
        );
    }

    let mut hidden = linear(&ctx, rows, &p.wo, &p.bo.data);
    for (hv, xv) in hidden.iter_mut().zip(&x[..rows * d]) {
        *hv += xv;
    }

    let mut ln2_out = vec![0.0; rows * d];
    let mut ln2_xhat = vec![0.0; rows * d];
    let mut ln2_rstd = vec![0.0; rows];
    layer_norm(&hidden, d, &p.ln2_g.data, &p.ln2_b.data, &mut ln2_out, &mut ln2_xhat, &mut ln2_rstd);

    let ffn_pre = linear(&ln2_out, rows, &p.w1, &p.b1.data);
    let ffn_act: Vec<f64> = ffn_pre.iter().map(|&u| gelu(u)).collect();
    let mut out = linear(&ffn_act, rows, &p.w2, &p.b2.data);
    debug_assert_eq!(out.len(), rows * d);
    debug_assert_eq!(ffn_act.len(), rows * f);
    for (o, hv) in out.iter_mut().zip(&hidden) {
        *o += hv;
    }

    let cache = LayerCache {
        rows,
        ln1_xhat,
        ln1_rstd,
        ln1_out,
        q,
        k,
        v,
        probs,
        ctx,
        ln2_xhat,
        ln2_rstd,
        ln2_out,
        ffn_pre,
        ffn_act,
    };
    (out, cache)
}

/// Returns the gradient with respect to the block input (`seq_len x d`).
fn layer_backward(
    p: &LayerParams,
    g: &mut LayerParams,
    cfg: &ModelConfig,
    cache: &LayerCache,
    dout: &[f64],
    seq_len: usize,
) -> Vec<f64> {
    let d = cfg.embed_dim;
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let rows = cache.rows;

    // feed-forward branch
    let dact = linear_backward(&cache.ffn_act, dout, rows, &p.w2, &mut g.w2, &mut g.b2.data, true)
        .expect("requested");
    let dpre: Vec<f64> =
        dact.iter().zip(&cache.ffn_pre).map(|(&da, &u)| da * gelu_grad(u)).collect();
    let dln2 = linear_backward(&cache.ln2_out, &dpre, rows, &p.w1, &mut g.w1, &mut g.b1.data, true)
        .expect("requested");
    let mut dhidden = dout.to_vec();
    layer_norm_backward(
        &dln2,
        &cache.ln2_xhat,
        &cache.ln2_rstd,
        &p.ln2_g.data,
        d,
        &mut dhidden,
        &mut g.ln2_g.data,
        &mut g.ln2_b.data,
    );

    // attention branch
    let mut dx = vec![0.0; seq_len * d];
    dx[..rows * d].copy_from_slice(&dhidden);
    let dctx = linear_backward(&cache.ctx, &dhidden, rows, &p.wo, &mut g.wo, &mut g.bo.data, true)
        .expect("requested");

    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; seq_len * d];
    let mut dv = vec![0.0; seq_len * d];
    let mut dscores = vec![0.0; rows * seq_len];
    for h in 0..heads {
        let probs = &cache.probs[h * rows * seq_len..(h + 1) * rows * seq_len];
        // dP = dctx_h v_h^T
        gemm(
            1.0,
            MatRef::cols_of(&dctx, rows, d, h * dh, dh),
            MatRef::cols_of(&cache.v, seq_len, d, h * dh, dh).t(),
            0.0,
            MatMut::new(&mut dscores, rows, seq_len),
        );
        // dv_h = P^T dctx_h
        gemm(
            1.0,
            MatRef::new(probs, rows, seq_len).t(),
            MatRef::cols_of(&dctx, rows, d, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dv, seq_len, d, h * dh, dh),
        );
        for (ds_row, p_row) in dscores.chunks_exact_mut(seq_len).zip(probs.chunks_exact(seq_len)) {
            let dot: f64 = ds_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
            for (ds, &pv) in ds_row.iter_mut().zip(p_row) {
                *ds = pv * (*ds - dot);
            }
        }
        gemm(
            scale,
            MatRef::new(&dscores, rows, seq_len),
            MatRef::cols_of(&cache.k, seq_len, d, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dq, rows, d, h * dh, dh),
        );
        gemm(
            scale,
            MatRef::new(&dscores, rows, seq_len).t(),
            MatRef::cols_of(&cache.q, rows, d, h * dh, dh),
            0.0,
            MatMut::cols_of(&mut dk, seq_len, d, h * dh, dh),
        );
    }

    let mut dln1 = linear_backward(&cache.ln1_out, &dk, seq_len, &p.wk, &mut g.wk, &mut g.bk.data, true)
        .expect("requested");
    let dln1_v = linear_backward(&cache.ln1_out, &dv, seq_len, &p.wv, &mut g.wv, &mut g.bv.data, true)
        .expect("requested");
    for (a, b) in dln1.iter_mut().zip(&dln1_v) {
        *a += b;
    }
    let dln1_q = linear_backward(&cache.ln1_out[..rows * d], &dq, rows, &p.wq, &mut g.wq, &mut g.bq.data, true)
        .expect("requested");
    for (a, b) in dln1.iter_mut().zip(&dln1_q) {
        *a += b;
    }
    layer_norm_backward(
        &dln1,
        &cache.ln1_xhat,
        &cache.ln1_rstd,
        &p.ln1_g.data,
        d,
        &mut dx,
        &mut g.ln1_g.data,
        &mut g.ln1_b.data,
    );
    dx
}

fn embed(
    cfg: &ModelConfig,
    params: &Parameters,
    patches: &PatchGrid,
    tokens: &TokenSequence,
) -> Result<Vec<f64>, ModelError> {
    let d = cfg.embed_dim;
    let text_len = tokens.len();
    if text_len == 0 || text_len > cfg.max_text_len {
        return Err(ModelError::Config(format!(
            "token sequence length {text_len} outside 1..={}",
            cfg.max_text_len
        )));
    }
    if let Some(&bad) = tokens.0.iter().find(|&&t| t as usize >= cfg.text_vocab_size) {
        return Err(ModelError::Config(format!(
            "token id {bad} exceeds text vocabulary size {}",
            cfg.text_vocab_size
        )));
    }
    if patches.num_patches != cfg.num_patches() || patches.patch_dim != cfg.patch_dim() {
        return Err(ModelError::Config("patch grid does not match model config".into()));
    }

    let seq_len = cfg.sequence_len(text_len);
    let mut x = vec![0.0; seq_len * d];
    let type_text = params.type_embed.row(0);
    let type_image = params.type_embed.row(1);
    for (i, &tok) in tokens.0.iter().enumerate() {
        let emb = params.text_embed.row(tok as usize);
        let pos = params.text_pos.row(i);
        let row = &mut x[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] = emb[j] + pos[j] + type_text[j];
        }
    }

    let n_active = patches.indices.len();
    let mut projected = vec![0.0; n_active * d];
    gemm(
        1.0,
        MatRef::new(&patches.data, n_active, patches.patch_dim),
        MatRef::new(&params.patch_w.data, patches.patch_dim, d),
        0.0,
        MatMut::new(&mut projected, n_active, d),
    );
    for k in 0..patches.num_patches {
        let pos = params.patch_pos.row(k);
        let row = &mut x[(text_len + k) * d..(text_len + k + 1) * d];
        for j in 0..d {
            row[j] = params.patch_b.data[j] + pos[j] + type_image[j];
        }
    }
    for (a, &k) in patches.indices.iter().enumerate() {
        let row = &mut x[(text_len + k) * d..(text_len + k + 1) * d];
        for (r, v) in row.iter_mut().zip(&projected[a * d..(a + 1) * d]) {
            *r += v;
        }
    }
    Ok(x)
}

/// Runs the model and keeps every intermediate needed for backpropagation.
pub fn forward_with_cache(
    cfg: &ModelConfig,
    params: &Parameters,
    patches: &PatchGrid,
    tokens: &TokenSequence,
) -> Result<ForwardCache, ModelError> {
    let d = cfg.embed_dim;
    let text_len = tokens.len();
    let seq_len = cfg.sequence_len(text_len);
    let mut x = embed(cfg, params, patches, tokens)?;

    let mut layers = Vec::with_capacity(params.layers.len());
    let n_layers = params.layers.len();
    for (i, layer) in params.layers.iter().enumerate() {
        let rows = if i + 1 == n_layers { 1 } else { seq_len };
        let (out, cache) = layer_forward(layer, cfg, &x, seq_len, rows);
        x = out;
        layers.push(cache);
    }

    let mut final_out = vec![0.0; d];
    let mut final_xhat = vec![0.0; d];
    let mut rstd = [0.0];
    layer_norm(
        &x[..d],
        d,
        &params.final_ln_g.data,
        &params.final_ln_b.data,
        &mut final_out,
        &mut final_xhat,
        &mut rstd,
    );
    let logits = linear(&final_out, 1, &params.head_w, &params.head_b.data);
    Ok(ForwardCache {
        text_len,
        seq_len,
        layers,
        final_xhat,
        final_rstd: rstd[0],
        final_out,
        logits,
    })
}

/// Accumulates parameter gradients of a scalar whose gradient with respect to
/// the logits is `dlogits`.
pub fn backward_from_cache(
    cfg: &ModelConfig,
    params: &Parameters,
    patches: &PatchGrid,
    tokens: &TokenSequence,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut Parameters,
) {
    let d = cfg.embed_dim;
    let seq_len = cache.seq_len;
    let text_len = cache.text_len;

    let dfinal = linear_backward(
        &cache.final_out,
        dlogits,
        1,
        &params.head_w,
        &mut grads.head_w,
        &mut grads.head_b.data,
        true,
    )
    .expect("requested");
    let mut dx = vec![0.0; d];
    layer_norm_backward(
        &dfinal,
        &cache.final_xhat,
        &[cache.final_rstd],
        &params.final_ln_g.data,
        d,
        &mut dx,
        &mut grads.final_ln_g.data,
        &mut grads.final_ln_b.data,
    );

    if params.layers.is_empty() {
        let mut full = vec![0.0; seq_len * d];
        full[..d].copy_from_slice(&dx);
        dx = full;
    }
    for (i, layer) in params.layers.iter().enumerate().rev() {
        dx = layer_backward(layer, &mut grads.layers[i], cfg, &cache.layers[i], &dx, seq_len);
    }

    for (i, &tok) in tokens.0.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        for (dst, v) in grads.text_embed.row_mut(tok as usize).iter_mut().zip(row) {
            *dst += v;
        }
        for (dst, v) in grads.text_pos.row_mut(i).iter_mut().zip(row) {
            *dst += v;
        }
        for (dst, v) in grads.type_embed.row_mut(0).iter_mut().zip(row) {
            *dst += v;
        }
    }
    let dpatch = &dx[text_len * d..];
    grads.patch_pos.add_assign(&super::tensor::Tensor::from_vec(&[cfg.num_patches(), d], dpatch.to_vec()));
    accumulate_col_sums(dpatch, d, &mut grads.patch_b.data);
    let mut image_type = vec![0.0; d];
    accumulate_col_sums(dpatch, d, &mut image_type);
    for (dst, v) in grads.type_embed.row_mut(1).iter_mut().zip(&image_type) {
        *dst += v;
    }

    let n_active = patches.indices.len();
    if n_active > 0 {
        let mut dproj = vec![0.0; n_active * d];
        for (a, &k) in patches.indices.iter().enumerate() {
            dproj[a * d..(a + 1) * d].copy_from_slice(&dpatch[k * d..(k + 1) * d]);
        }
        gemm(
            1.0,
            MatRef::new(&patches.data, n_active, patches.patch_dim).t(),
            MatRef::new(&dproj, n_active, d),
            1.0,
            MatMut::new(&mut grads.patch_w.data, patches.patch_dim, d),
        );
    }
}
