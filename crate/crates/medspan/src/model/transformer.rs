//! Post-norm transformer encoder with a tweet-level sigmoid head on the CLS
//! position and a per-token softmax head, plus the matching hand-written
//! backward pass.
//!
//! Per layer, for input `X` (`T x d`):
//!
//! ```text
//! A  = MultiHead(X) Wo + bo          heads: softmax(Qh Kh^T / sqrt(dh)) Vh
//! Y1 = LayerNorm(X + Dropout(A))
//! F  = GELU(Y1 W1 + b1) W2 + b2
//! Y2 = LayerNorm(Y1 + Dropout(F))
//! ```

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use super::params::{LayerSlots, Layout};
use super::{ForwardOutput, ModelConfig};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub layout: Layout,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    ln1: LnCache,
    y1: Array2<f64>,
    hidden: Array2<f64>,
    activated: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln2: LnCache,
}

pub(crate) struct Cache {
    ids: Vec<usize>,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    output: Array2<f64>,
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w) + &b
}

/// Accumulates weight and bias gradients of `y = x W + b`; returns dL/dx.
fn linear_backward(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    dy: &Array2<f64>,
    mut dw: ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    dw += &x.t().dot(dy);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

pub(crate) fn softmax_vec(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

pub(crate) fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    let y = &xhat * &gain + &bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: ArrayView1<f64>,
    mut dgain: ArrayViewMut1<f64>,
    mut dbias: ArrayViewMut1<f64>,
) -> Array2<f64> {
    dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    dbias += &dy.sum_axis(Axis(0));
    let mut dx = dy * &gain;
    let d = dx.ncols() as f64;
    for ((mut row, xhat), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| *g = is * (*g - m1 - xh * m2));
    }
    dx
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

impl Network {
    pub fn new(config: ModelConfig, vocab_size: usize) -> Self {
        let layout = Layout::new(&config, vocab_size);
        Network {
            config,
            vocab_size,
            layout,
        }
    }

    fn head_dim(&self) -> usize {
        self.config.d_model / self.config.n_heads
    }

    /// Runs the encoder and both heads. Dropout is applied only when an RNG
    /// is supplied.
    pub fn forward<R: Rng>(
        &self,
        params: &[f64],
        ids: &[usize],
        mut rng: Option<&mut R>,
    ) -> Result<(ForwardOutput, Cache)> {
        let t = ids.len();
        if t == 0 || t > self.config.max_seq_len {
            return Err(Error::LengthMismatch {
                expected: self.config.max_seq_len,
                actual: t,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        let lay = &self.layout;
        let d = self.config.d_model;
        let rate = self.config.dropout;

        let tok = lay.token_emb.mat(params);
        let pos = lay.pos_emb.mat(params);
        let mut x = Array2::zeros((t, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &tok.row(id);
            row += &pos.row(i);
        }
        let mut mask_for = |shape| match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(shape, rate, r)),
            _ => None,
        };
        let emb_mask = mask_for((t, d));
        if let Some(m) = &emb_mask {
            x *= m;
        }

        let mut layers = Vec::with_capacity(lay.layers.len());
        for slots in &lay.layers {
            let (y, cache) = self.layer_forward(params, slots, x, &mut mask_for);
            layers.push(cache);
            x = y;
        }

        let h_cls = x.row(0);
        let binary_logit = h_cls.dot(&lay.cls_w.mat(params).column(0)) + params[lay.cls_b.offset];
        let body = x.slice(s![1.., ..]);
        let tag_logits = body.dot(&lay.tag_w.mat(params)) + &lay.tag_b.vec(params);
        let mut tag_dists = tag_logits.clone();
        softmax_rows(&mut tag_dists);

        let out = ForwardOutput {
            binary_logit,
            binary_prob: 1.0 / (1.0 + (-binary_logit).exp()),
            tag_logits,
            tag_dists,
        };
        let cache = Cache {
            ids: ids.to_vec(),
            emb_mask,
            layers,
            output: x,
        };
        Ok((out, cache))
    }

    fn layer_forward(
        &self,
        p: &[f64],
        l: &LayerSlots,
        x: Array2<f64>,
        mask_for: &mut impl FnMut((usize, usize)) -> Option<Array2<f64>>,
    ) -> (Array2<f64>, LayerCache) {
        let (t, d) = x.dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let q = linear(&x, l.wq.mat(p), l.bq.vec(p));
        let k = linear(&x, l.wk.mat(p), l.bk.vec(p));
        let v = linear(&x, l.wv.mat(p), l.bv.vec(p));
        let mut heads = Array2::zeros((t, d));
        let mut probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            heads.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let mut attn = linear(&heads, l.wo.mat(p), l.bo.vec(p));
        let attn_mask = mask_for((t, d));
        if let Some(m) = &attn_mask {
            attn *= m;
        }
        let (y1, ln1) = layer_norm(&(&x + &attn), l.ln1_gain.vec(p), l.ln1_bias.vec(p));

        let hidden = linear(&y1, l.w1.mat(p), l.b1.vec(p));
        let activated = hidden.mapv(gelu);
        let mut ffn = linear(&activated, l.w2.mat(p), l.b2.vec(p));
        let ffn_mask = mask_for((t, d));
        if let Some(m) = &ffn_mask {
            ffn *= m;
        }
        let (y2, ln2) = layer_norm(&(&y1 + &ffn), l.ln2_gain.vec(p), l.ln2_bias.vec(p));

        let cache = LayerCache {
            input: x,
            q,
            k,
            v,
            probs,
            heads,
            attn_mask,
            ln1,
            y1,
            hidden,
            activated,
            ffn_mask,
            ln2,
        };
        (y2, cache)
    }

    /// Accumulates dL/dparams into `grad` given the loss gradients with
    /// respect to the binary logit and the tag logits.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &Cache,
        d_binary_logit: f64,
        d_tag_logits: &Array2<f64>,
        grad: &mut [f64],
    ) {
        let lay = &self.layout;
        let x = &cache.output;
        let mut dx = Array2::zeros(x.dim());

        // Heads.
        {
            let h_cls = x.row(0);
            lay.cls_w.mat_mut(grad).column_mut(0).scaled_add(d_binary_logit, &h_cls);
            grad[lay.cls_b.offset] += d_binary_logit;
            dx.row_mut(0).scaled_add(d_binary_logit, &lay.cls_w.mat(params).column(0));

            let body = x.slice(s![1.., ..]);
            let mut dw = lay.tag_w.mat_mut(grad);
            dw += &body.t().dot(d_tag_logits);
            let mut db = lay.tag_b.vec_mut(grad);
            db += &d_tag_logits.sum_axis(Axis(0));
            let mut d_body = dx.slice_mut(s![1.., ..]);
            d_body += &d_tag_logits.dot(&lay.tag_w.mat(params).t());
        }

        for (slots, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(params, slots, lc, dx, grad);
        }

        if let Some(m) = &cache.emb_mask {
            dx *= m;
        }
        let mut dtok = lay.token_emb.mat_mut(grad);
        for (i, &id) in cache.ids.iter().enumerate() {
            let mut row = dtok.row_mut(id);
            row += &dx.row(i);
        }
        let mut dpos = lay.pos_emb.mat_mut(grad);
        for i in 0..cache.ids.len() {
            let mut row = dpos.row_mut(i);
            row += &dx.row(i);
        }
    }

    fn layer_backward(
        &self,
        p: &[f64],
        l: &LayerSlots,
        c: &LayerCache,
        dy2: Array2<f64>,
        g: &mut [f64],
    ) -> Array2<f64> {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let dr2 = {
            let (gain, bias) = split_two(g, l.ln2_gain, l.ln2_bias);
            layer_norm_backward(&dy2, &c.ln2, l.ln2_gain.vec(p), gain, bias)
        };
        let mut dffn = dr2.clone();
        if let Some(m) = &c.ffn_mask {
            dffn *= m;
        }
        let dact = {
            let (w, b) = split_two(g, l.w2, l.b2);
            linear_backward(&c.activated, l.w2.mat(p), &dffn, w.into_shape_with_order((l.w2.rows, l.w2.cols)).unwrap(), b)
        };
        let dhidden = &dact * &c.hidden.mapv(gelu_grad);
        let mut dy1 = dr2;
        {
            let (w, b) = split_two(g, l.w1, l.b1);
            dy1 += &linear_backward(&c.y1, l.w1.mat(p), &dhidden, w.into_shape_with_order((l.w1.rows, l.w1.cols)).unwrap(), b);
        }

        let dr1 = {
            let (gain, bias) = split_two(g, l.ln1_gain, l.ln1_bias);
            layer_norm_backward(&dy1, &c.ln1, l.ln1_gain.vec(p), gain, bias)
        };
        let mut dattn = dr1.clone();
        if let Some(m) = &c.attn_mask {
            dattn *= m;
        }
        let dheads = {
            let (w, b) = split_two(g, l.wo, l.bo);
            linear_backward(&c.heads, l.wo.mat(p), &dattn, w.into_shape_with_order((l.wo.rows, l.wo.cols)).unwrap(), b)
        };

        let mut dq = Array2::zeros(c.q.dim());
        let mut dk = Array2::zeros(c.k.dim());
        let mut dv = Array2::zeros(c.v.dim());
        for (h, probs) in c.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dheads.slice(cols);
            let dprobs = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&dout));
            let row_dot = (&dprobs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dscores = probs * &(&dprobs - &row_dot) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
        }

        let mut dx = dr1;
        for (slot_w, slot_b, dproj) in [(l.wq, l.bq, &dq), (l.wk, l.bk, &dk), (l.wv, l.bv, &dv)] {
            let (w, b) = split_two(g, slot_w, slot_b);
            dx += &linear_backward(
                &c.input,
                slot_w.mat(p),
                dproj,
                w.into_shape_with_order((slot_w.rows, slot_w.cols)).unwrap(),
                b,
            );
        }
        dx
    }
}

/// Disjoint mutable views of two slots; `first` must precede `second`.
fn split_two(
    g: &mut [f64],
    first: super::params::Slot,
    second: super::params::Slot,
) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
    debug_assert!(first.offset + first.len() <= second.offset);
    let (a, b) = g.split_at_mut(second.offset);
    (
        ArrayViewMut1::from(&mut a[first.range()]),
        ArrayViewMut1::from(&mut b[..second.len()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let numeric = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((numeric - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = Array2::from_shape_vec((2, 4), vec![1.0, 2.0, 3.0, 4.0, -2.0, 0.0, 0.0, 10.0]).unwrap();
        let ones = Array1::ones(4);
        let zeros = Array1::zeros(4);
        let (y, _) = layer_norm(&x, ones.view(), zeros.view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
