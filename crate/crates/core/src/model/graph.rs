//! Forward pass of the gain predictor recorded on a [`Tape`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::params::{Bound, EncoderBlock, GainHead, Layout, Linear, CONV1_CH, CONV2_CH, D_MODEL, HEADS, MEL_BINS};
use crate::autodiff::{SparseMap, Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum MapKind {
    Im2col,
    Pool,
}

/// `(kind, height, width, channels)`.
type MapKey = (MapKind, usize, usize, usize);

/// Cached im2col and pooling index maps keyed by feature-map geometry.
#[derive(Default)]
pub(crate) struct MapCache {
    maps: Mutex<HashMap<MapKey, Arc<SparseMap>>>,
}

impl MapCache {
    fn get(&self, kind: MapKind, h: usize, w: usize, c: usize) -> Arc<SparseMap> {
        let mut maps = self.maps.lock().expect("map cache poisoned");
        maps.entry((kind, h, w, c))
            .or_insert_with(|| {
                Arc::new(match kind {
                    MapKind::Im2col => im2col_map(h, w, c),
                    MapKind::Pool => pool_map(h, w, c),
                })
            })
            .clone()
    }
}

/// 3x3, stride 1, zero padding 1. Input rows are positions `h*W + w`, columns
/// channels; output columns are `(kh*3 + kw)*C + c`.
fn im2col_map(h: usize, w: usize, c: usize) -> SparseMap {
    let cols = 9 * c;
    let mut entries = Vec::with_capacity(h * w * cols);
    for y in 0..h {
        for x in 0..w {
            let row = y * w + x;
            for kh in 0..3 {
                for kw in 0..3 {
                    let (sy, sx) = (y + kh, x + kw);
                    if sy < 1 || sx < 1 || sy > h || sx > w {
                        continue;
                    }
                    let src = ((sy - 1) * w + (sx - 1)) * c;
                    for ch in 0..c {
                        let o = row * cols + (kh * 3 + kw) * c + ch;
                        entries.push((o as u32, (src + ch) as u32, 1.0));
                    }
                }
            }
        }
    }
    SparseMap {
        out_rows: h * w,
        out_cols: cols,
        in_len: h * w * c,
        entries,
    }
}

/// 2x2 average pooling; odd trailing rows/columns are dropped.
fn pool_map(h: usize, w: usize, c: usize) -> SparseMap {
    let (oh, ow) = (h / 2, w / 2);
    let mut entries = Vec::with_capacity(oh * ow * c * 4);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let o = (y * ow + x) * c + ch;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                    entries.push((o as u32, i as u32, 0.25));
                }
            }
        }
    }
    SparseMap {
        out_rows: oh * ow,
        out_cols: c,
        in_len: h * w * c,
        entries,
    }
}

/// Parameters bound to one tape plus the layout to address them.
pub struct ModelGraph<'a> {
    pub(crate) layout: &'a Layout,
    pub(crate) bound: &'a Bound,
    pub(crate) maps: &'a MapCache,
}

impl ModelGraph<'_> {
    fn p(&self, i: usize) -> Var {
        self.bound.var(i)
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Var {
        let y = tape.matmul(x, self.p(l.w));
        tape.add_row_bias(y, self.p(l.b))
    }

    /// One channel's standardized log-mel matrix (`T × 64`) to a `1×128` embedding.
    fn embed_one(&self, tape: &mut Tape, features: &Matrix) -> Var {
        let t = features.rows();
        debug_assert_eq!(features.cols(), MEL_BINS);
        let x = tape.constant_vec(t * MEL_BINS, 1, features.data().to_vec());

        let cols = tape.sparse(x, self.maps.get(MapKind::Im2col, t, MEL_BINS, 1));
        let h = self.linear(tape, cols, self.layout.conv1);
        let h = tape.tanh(h);
        let h = tape.sparse(h, self.maps.get(MapKind::Pool, t, MEL_BINS, CONV1_CH));
        let (t2, m2) = (t / 2, MEL_BINS / 2);

        let cols = tape.sparse(h, self.maps.get(MapKind::Im2col, t2, m2, CONV1_CH));
        let h = self.linear(tape, cols, self.layout.conv2);
        let h = tape.tanh(h);
        let h = tape.sparse(h, self.maps.get(MapKind::Pool, t2, m2, CONV2_CH));
        let (t4, m4) = (t2 / 2, m2 / 2);

        let h = tape.reshape(h, t4, m4 * CONV2_CH);
        let pooled = tape.mean_rows(h);
        self.linear(tape, pooled, self.layout.embed_proj)
    }

    /// `C × 128` embeddings, one row per channel.
    pub fn embed(&self, tape: &mut Tape, features: &[Matrix]) -> Var {
        let rows: Vec<Var> = features.iter().map(|f| self.embed_one(tape, f)).collect();
        tape.concat_rows(&rows)
    }

    /// Multi-head self-attention across channels, before the output projection.
    pub(crate) fn attention_heads(&self, tape: &mut Tape, x: Var, block: &EncoderBlock) -> Var {
        let q = self.linear(tape, x, block.q);
        let k = self.linear(tape, x, block.k);
        let v = self.linear(tape, x, block.v);
        let hd = D_MODEL / HEADS;
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<Var> = (0..HEADS)
            .map(|h| {
                let (s, e) = (h * hd, (h + 1) * hd);
                let qh = tape.slice_cols(q, s, e);
                let kh = tape.slice_cols(k, s, e);
                let vh = tape.slice_cols(v, s, e);
                let scores = tape.matmul_bt(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                tape.matmul(attn, vh)
            })
            .collect();
        tape.concat_cols(&heads)
    }

    /// Post-norm encoder layer over the channel axis; no mask, no positions.
    pub fn encoder(&self, tape: &mut Tape, x: Var, index: usize) -> Var {
        let block = self.layout.blocks[index];
        let heads = self.attention_heads(tape, x, &block);
        let attn = self.linear(tape, heads, block.o);
        let r = tape.add(x, attn);
        let h = tape.layer_norm(r, self.p(block.ln1_g), self.p(block.ln1_b));
        let f = self.linear(tape, h, block.ff1);
        let f = tape.gelu(f);
        let f = self.linear(tape, f, block.ff2);
        let r = tape.add(h, f);
        tape.layer_norm(r, self.p(block.ln2_g), self.p(block.ln2_b))
    }

    /// `PReLU(e + rms·W + b)` with `rms` as a `C×1` column.
    pub fn condition_rms(&self, tape: &mut Tape, embeddings: Var, rms: Var) -> Var {
        let proj = self.linear(tape, rms, self.layout.rms);
        let s = tape.add(embeddings, proj);
        tape.prelu(s, self.p(self.layout.rms_slope))
    }

    pub fn gru_step(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let g = self.layout.gru;
        let gx = tape.matmul(x, self.p(g.w_ih));
        let gx = tape.add_row_bias(gx, self.p(g.b_ih));
        let gh = tape.matmul(h, self.p(g.w_hh));
        let gh = tape.add_row_bias(gh, self.p(g.b_hh));
        let d = D_MODEL;
        let xz = tape.slice_cols(gx, 0, d);
        let hz = tape.slice_cols(gh, 0, d);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let xr = tape.slice_cols(gx, d, 2 * d);
        let hr = tape.slice_cols(gh, d, 2 * d);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let xn = tape.slice_cols(gx, 2 * d, 3 * d);
        let hn = tape.slice_cols(gh, 2 * d, 3 * d);
        let rh = tape.mul(r, hn);
        let n = tape.add(xn, rh);
        let n = tape.tanh(n);
        // h' = (1 - z)⊙n + z⊙h = n + z⊙(h - n)
        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    fn head(&self, tape: &mut Tape, x: Var, head: &GainHead) -> Var {
        let mut h = x;
        for (l, &s) in head.hidden.iter().zip(&head.slopes) {
            h = self.linear(tape, h, *l);
            h = tape.prelu(h, self.p(s));
        }
        let out = self.linear(tape, h, head.out);
        tape.relu(out)
    }

    pub fn gain_mlp(&self, tape: &mut Tape, x: Var) -> Var {
        self.head(tape, x, &self.layout.mlp)
    }

    /// F1-rate path: embeddings through the first encoder.
    pub fn f1_context(&self, tape: &mut Tape, features: &[Matrix]) -> Var {
        let e = self.embed(tape, features);
        self.encoder(tape, e, 0)
    }

    /// F2-rate path. Returns `(gains C×1, new hidden C×128)`.
    pub fn predict(&self, tape: &mut Tape, context: Var, rms: Var, hidden: Var) -> (Var, Var) {
        let c = self.condition_rms(tape, context, rms);
        let c = self.encoder(tape, c, 1);
        let h = self.gru_step(tape, c, hidden);
        let t = self.encoder(tape, h, 2);
        (self.gain_mlp(tape, t), h)
    }

    /// Mean-context baseline: `[e_c ‖ mean_c e]` through its own head.
    pub fn predict_dmc(&self, tape: &mut Tape, embeddings: Var) -> Var {
        let (c, _) = tape.shape(embeddings);
        let m = tape.mean_rows(embeddings);
        let m = tape.broadcast_rows(m, c);
        let x = tape.concat_cols(&[embeddings, m]);
        self.head(tape, x, &self.layout.dmc)
    }
}
