//! Flat parameter storage. Every tensor lives in one `Vec<f64>` at a fixed
//! offset so optimizers and finite-difference checks can treat the model as
//! a single vector.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.range()]).expect("slot shape")
    }

    /// Row vector view of a `1 x n` slot.
    pub fn vec<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.range()])
    }

    pub fn vec_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.range()])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub token_emb: Slot,
    pub pos_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub cls_w: Slot,
    pub cls_b: Slot,
    pub tag_w: Slot,
    pub tag_b: Slot,
    pub total: usize,
}

struct Allocator(usize);

impl Allocator {
    fn take(&mut self, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        slot
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, vocab_size: usize) -> Layout {
        let d = cfg.d_model;
        let mut a = Allocator(0);
        let token_emb = a.take(vocab_size, d);
        let pos_emb = a.take(cfg.max_seq_len, d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerSlots {
                wq: a.take(d, d),
                bq: a.take(1, d),
                wk: a.take(d, d),
                bk: a.take(1, d),
                wv: a.take(d, d),
                bv: a.take(1, d),
                wo: a.take(d, d),
                bo: a.take(1, d),
                ln1_gain: a.take(1, d),
                ln1_bias: a.take(1, d),
                w1: a.take(d, cfg.d_ff),
                b1: a.take(1, cfg.d_ff),
                w2: a.take(cfg.d_ff, d),
                b2: a.take(1, d),
                ln2_gain: a.take(1, d),
                ln2_bias: a.take(1, d),
            })
            .collect();
        let cls_w = a.take(d, 1);
        let cls_b = a.take(1, 1);
        let tag_w = a.take(d, cfg.tag_set_size);
        let tag_b = a.take(1, cfg.tag_set_size);
        Layout {
            token_emb,
            pos_emb,
            layers,
            cls_w,
            cls_b,
            tag_w,
            tag_b,
            total: a.0,
        }
    }

    /// Weight matrices and embeddings get N(0, std^2); biases 0; layer-norm
    /// gains 1.
    pub fn init(&self, std: f64, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut fill = |slot: Slot, p: &mut [f64]| {
            for x in &mut p[slot.range()] {
                *x = normal.sample(rng);
            }
        };
        fill(self.token_emb, &mut p);
        fill(self.pos_emb, &mut p);
        for l in &self.layers {
            for w in [l.wq, l.wk, l.wv, l.wo, l.w1, l.w2] {
                fill(w, &mut p);
            }
            for g in [l.ln1_gain, l.ln2_gain] {
                p[g.range()].fill(1.0);
            }
        }
        fill(self.cls_w, &mut p);
        fill(self.tag_w, &mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_tile_the_buffer() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_layers: 2,
            max_seq_len: 5,
            ..ModelConfig::default()
        };
        let layout = Layout::new(&cfg, 7);
        let mut slots = vec![layout.token_emb, layout.pos_emb, layout.cls_w, layout.cls_b, layout.tag_w, layout.tag_b];
        for l in &layout.layers {
            slots.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_gain, l.ln1_bias, l.w1, l.b1, l.w2,
                l.b2, l.ln2_gain, l.ln2_bias,
            ]);
        }
        slots.sort_by_key(|s| s.offset);
        let mut next = 0;
        for s in slots {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, layout.total);
    }
}
