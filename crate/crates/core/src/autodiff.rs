//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape from the loss node towards the leaves in reverse
//! insertion order, which is a reverse topological order because nodes can
//! only reference earlier nodes. Kinked primitives (ReLU, PReLU, abs) use a
//! subgradient of 0 at 0.

use std::ops::Deref;
use std::sync::Arc;

use rustfft::num_complex::Complex;

use crate::dsp::hann_window;
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Storage {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl Deref for Storage {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(v) => v,
        }
    }
}

/// Linear index map `out[o] += coef * in[i]`, used for im2col and pooling.
#[derive(Debug)]
pub struct SparseMap {
    pub out_rows: usize,
    pub out_cols: usize,
    pub in_len: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    MatMulAt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Prelu(Var, Var),
    Abs(Var),
    Ln(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    BroadcastRows(Var),
    SumAll(Var),
    Sparse(Var, Arc<SparseMap>),
    StftMag {
        x: Var,
        window: usize,
        hop: usize,
        fft: usize,
        spectrum: Vec<Complex<f64>>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Storage,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Storage::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn to_matrix(&self, v: Var) -> Matrix {
        let (r, c) = self.shape(v);
        Matrix::from_vec(r, c, self.value(v).to_vec()).expect("node shape")
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        let (r, c) = m.shape();
        self.push(r, c, m.into_vec(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, rows: usize, cols: usize, v: Vec<f64>) -> Var {
        self.push(rows, cols, v, Op::Leaf, false)
    }

    /// Leaf sharing storage with a parameter tensor.
    pub fn leaf_shared(&mut self, rows: usize, cols: usize, v: Arc<Vec<f64>>, requires_grad: bool) -> Var {
        assert_eq!(rows * cols, v.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Storage::Shared(v),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        let (r, c) = m.shape();
        self.push(r, c, m.into_vec(), Op::Leaf, true)
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(m, n, out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, d) = self.shape(a);
        let (n, d2) = self.shape(b);
        assert_eq!(d, d2, "matmul_bt inner dims");
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(self.value(a), self.value(b), &mut out, m, d, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(m, n, out, Op::MatMulBt(a, b), rg)
    }

    /// `aᵀ · b`.
    pub fn matmul_at(&mut self, a: Var, b: Var) -> Var {
        let (k, m) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul_at inner dims");
        let mut out = vec![0.0; m * n];
        matmul_at_acc(self.value(a), self.value(b), &mut out, k, m, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(m, n, out, Op::MatMulAt(a, b), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes");
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(r, c, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (1, c), "bias shape");
        let b = self.value(bias);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(a) || self.rg(bias);
        self.push(r, c, out, Op::AddRowBias(a, bias), rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(r, c, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    // ----- nonlinearities -----

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(
            a,
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    /// PReLU with a single shared `1×1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Var {
        assert_eq!(self.shape(slope), (1, 1), "prelu slope");
        let s = self.value(slope)[0];
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { s * x })
            .collect();
        let rg = self.rg(a) || self.rg(slope);
        self.push(r, c, out, Op::Prelu(a, slope), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(a);
        self.push(r, c, out, Op::SoftmaxRows(a), rg)
    }

    /// Per-row layer normalization with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    // ----- reshaping -----

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.value(a).len(), rows * cols, "reshape size");
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        self.push(rows, cols, out, Op::Reshape(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start <= end && end <= c);
        let w = end - start;
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let rg = self.rg(a);
        self.push(r, w, out, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, r, "concat_cols rows");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(r, total, out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows cols");
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Column means, `1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.rg(a);
        self.push(1, c, out, Op::MeanRows(a), rg)
    }

    /// Repeats a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r, 1);
        let out = self.value(a).repeat(rows);
        let rg = self.rg(a);
        self.push(rows, c, out, Op::BroadcastRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(1, 1, vec![s], Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Frobenius norm.
    pub fn norm(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        let s = self.sum_all(sq);
        self.sqrt(s)
    }

    pub fn sparse(&mut self, a: Var, map: Arc<SparseMap>) -> Var {
        assert_eq!(self.value(a).len(), map.in_len, "sparse map input length");
        let mut out = vec![0.0; map.out_rows * map.out_cols];
        let x = self.value(a);
        for &(o, i, w) in &map.entries {
            out[o as usize] += w * x[i as usize];
        }
        let rg = self.rg(a);
        self.push(map.out_rows, map.out_cols, out, Op::Sparse(a, map), rg)
    }

    /// STFT magnitude of a `1×N` signal, `frames × (fft/2+1)`.
    pub fn stft_mag(&mut self, x: Var, window: usize, hop: usize, fft: usize) -> Result<Var> {
        let (r, _) = self.shape(x);
        if r != 1 {
            return Err(Error::InvalidConfig("stft input must be a single row".into()));
        }
        let (frames, bins, spectrum) = crate::dsp::stft::stft_complex(self.value(x), window, hop, fft)?;
        let mags = spectrum.iter().map(|c| c.norm()).collect();
        let rg = self.rg(x);
        Ok(self.push(
            frames,
            bins,
            mags,
            Op::StftMag {
                x,
                window,
                hop,
                fft,
                spectrum,
            },
            rg,
        ))
    }

    // ----- reverse pass -----

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::NoForward(format!("node {} not on tape", loss.0)))?;
        if node.rows * node.cols != 1 {
            return Err(Error::NoForward(format!(
                "loss must be scalar, got {}x{}",
                node.rows, node.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let n = &self.nodes[idx];
            if n.requires_grad {
                self.propagate(n, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, n: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y: &[f64] = &n.value;
        match &n.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let nn = n.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_bt_acc(g, self.value(*b), ga, m, nn, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_at_acc(self.value(*a), g, gb, m, k, nn);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, d) = self.shape(*a);
                let nn = n.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_acc(g, self.value(*b), ga, m, nn, d);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_at_acc(g, self.value(*a), gb, m, nn, d);
                }
            }
            Op::MatMulAt(a, b) => {
                let (k, m) = self.shape(*a);
                let nn = n.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    matmul_bt_acc(self.value(*b), g, ga, k, nn, m);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_acc(self.value(*a), g, gb, k, m, nn);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(self.value(*b)) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(self.value(*a)) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddRowBias(a, bias) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in g.chunks(n.cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (o, v) in ga.iter_mut().zip(g) {
                        *o += v * s;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::Tanh(a) => self.unary(grads, *a, g, |_, yv| 1.0 - yv * yv, y),
            Op::Sigmoid(a) => self.unary(grads, *a, g, |_, yv| yv * (1.0 - yv), y),
            Op::Relu(a) => self.unary(grads, *a, g, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, y),
            Op::Gelu(a) => self.unary(
                grads,
                *a,
                g,
                |x, _| {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                },
                y,
            ),
            Op::Prelu(a, slope) => {
                let s = self.value(*slope)[0];
                self.unary(
                    grads,
                    *a,
                    g,
                    |x, _| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            s
                        } else {
                            0.0
                        }
                    },
                    y,
                );
                if let Some(gs) = self.acc(grads, *slope) {
                    let x = self.value(*a);
                    gs[0] += x
                        .iter()
                        .zip(g)
                        .filter(|(&xv, _)| xv < 0.0)
                        .map(|(xv, gv)| xv * gv)
                        .sum::<f64>();
                }
            }
            Op::Abs(a) => self.unary(grads, *a, g, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 }, y),
            Op::Ln(a) => self.unary(grads, *a, g, |x, _| 1.0 / x, y),
            Op::Sqrt(a) => self.unary(grads, *a, g, |_, yv| if yv > 0.0 { 0.5 / yv } else { 0.0 }, y),
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let c = n.cols;
                    for ((grow, yrow), orow) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = n.cols;
                if let Some(gb) = self.acc(grads, *beta) {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, gv), h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *o += gv * h;
                        }
                    }
                }
                let gam = self.value(*gamma).to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    for (i, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let gh: Vec<f64> = grow.iter().zip(&gam).map(|(a, b)| a * b).collect();
                        let m1 = gh.iter().sum::<f64>() / c as f64;
                        let m2 = gh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let orow = &mut gx[i * c..(i + 1) * c];
                        for j in 0..c {
                            orow[j] += inv_std[i] * (gh[j] - m1 - hrow[j] * m2);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::SliceCols(a, start) => {
                let (_, ac) = self.shape(*a);
                let w = n.cols;
                if let Some(ga) = self.acc(grads, *a) {
                    for (grow, orow) in g.chunks(w).zip(ga.chunks_mut(ac)) {
                        add_into(&mut orow[*start..*start + w], grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = n.cols;
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for (grow, orow) in g.chunks(total).zip(gp.chunks_mut(w)) {
                            add_into(orow, &grow[off..off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                if let Some(ga) = self.acc(grads, *a) {
                    for orow in ga.chunks_mut(c) {
                        for (o, gv) in orow.iter_mut().zip(g) {
                            *o += gv / r as f64;
                        }
                    }
                }
            }
            Op::BroadcastRows(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for grow in g.chunks(n.cols) {
                        add_into(ga, grow);
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Sparse(a, map) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for &(o, i, w) in &map.entries {
                        ga[i as usize] += w * g[o as usize];
                    }
                }
            }
            Op::StftMag {
                x,
                window,
                hop,
                fft,
                spectrum,
            } => {
                if let Some(gx) = self.acc(grads, *x) {
                    stft_mag_backward(g, y, spectrum, *window, *hop, *fft, n.cols, gx);
                }
            }
        }
    }

    fn unary(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        d: impl Fn(f64, f64) -> f64,
        y: &[f64],
    ) {
        let x = self.value(a);
        if let Some(ga) = self.acc(grads, a) {
            for (((o, gv), xv), yv) in ga.iter_mut().zip(g).zip(x).zip(y) {
                *o += gv * d(*xv, *yv);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d|X_k|/dx_n = w_n Re(conj(X_k)/|X_k| e^{-2πikn/N}); summed over bins with
/// one forward transform per frame.
#[allow(clippy::too_many_arguments)]
fn stft_mag_backward(
    g: &[f64],
    mags: &[f64],
    spectrum: &[Complex<f64>],
    window: usize,
    hop: usize,
    fft: usize,
    bins: usize,
    gx: &mut [f64],
) {
    let win = hann_window(window);
    let plan = crate::dsp::stft::plan_forward(fft);
    let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); fft];
    let frames = g.len() / bins;
    for t in 0..frames {
        buf.iter_mut().for_each(|b| *b = Complex::default());
        let mut any = false;
        for k in 0..bins {
            let i = t * bins + k;
            let m = mags[i];
            if m > 0.0 && g[i] != 0.0 {
                buf[k] = spectrum[i].conj() * (g[i] / m);
                any = true;
            }
        }
        if !any {
            continue;
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        let dst = &mut gx[t * hop..t * hop + window];
        for ((d, b), w) in dst.iter_mut().zip(&buf).zip(&win) {
            *d += w * b.re;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences on every input element of a scalar function
    /// built on a fresh tape.
    fn check_grad(inputs: Vec<Matrix>, f: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|m| tape.param(m)).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let h = 1e-5;
        for (vi, m) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[vi]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; m.data().len()]);
            for e in 0..m.data().len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, mm)| {
                            let mut mm = mm.clone();
                            if j == vi {
                                mm.data_mut()[e] += delta;
                            }
                            t.param(mm)
                        })
                        .collect();
                    let o = f(&mut t, &vs);
                    t.scalar(o)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[e];
                assert!(
                    (fd - a).abs() <= tol * fd.abs().max(1.0),
                    "input {vi} elem {e}: fd {fd} analytic {a}"
                );
            }
        }
    }

    /// Reduces a tensor to a scalar with fixed non-uniform weights so every
    /// element receives a distinct upstream gradient.
    fn weighted_sum(t: &mut Tape, v: Var) -> Var {
        let (r, c) = t.shape(v);
        let w: Vec<f64> = (0..r * c).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let w = t.constant_vec(r, c, w);
        let p = t.mul(v, w);
        t.sum_all(p)
    }

    #[test]
    fn matmul_family_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 4, 2);
        check_grad(vec![a.clone(), b], |t, v| { let y = t.matmul(v[0], v[1]); weighted_sum(t, y) }, 1e-7);
        let b2 = rand_matrix(&mut rng, 5, 4);
        check_grad(vec![a.clone(), b2], |t, v| { let y = t.matmul_bt(v[0], v[1]); weighted_sum(t, y) }, 1e-7);
        let b3 = rand_matrix(&mut rng, 3, 2);
        check_grad(vec![a, b3], |t, v| { let y = t.matmul_at(v[0], v[1]); weighted_sum(t, y) }, 1e-7);
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_matrix(&mut rng, 2, 5);
        let b = rand_matrix(&mut rng, 2, 5);
        let bias = rand_matrix(&mut rng, 1, 5);
        check_grad(vec![a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let m = t.mul(d, v[1]);
            let m = t.scale(m, 1.7);
            let m = t.add_scalar(m, 0.3);
            weighted_sum(t, m)
        }, 1e-7);
        check_grad(vec![a.clone(), bias], |t, v| { let y = t.add_row_bias(v[0], v[1]); weighted_sum(t, y) }, 1e-7);
        for op in 0..5 {
            check_grad(vec![a.clone()], |t, v| {
                let y = match op {
                    0 => t.tanh(v[0]),
                    1 => t.sigmoid(v[0]),
                    2 => t.gelu(v[0]),
                    3 => t.relu(v[0]),
                    _ => t.abs(v[0]),
                };
                weighted_sum(t, y)
            }, 1e-6);
        }
        let pos = Matrix::from_vec(1, 4, vec![0.3, 1.2, 2.0, 0.7]).unwrap();
        check_grad(vec![pos.clone()], |t, v| { let y = t.ln(v[0]); weighted_sum(t, y) }, 1e-6);
        check_grad(vec![pos], |t, v| { let y = t.sqrt(v[0]); weighted_sum(t, y) }, 1e-6);
    }

    #[test]
    fn prelu_gradient_and_definition() {
        let mut t = Tape::new();
        let x = t.constant_vec(1, 2, vec![-1.0, 2.0]);
        let a = t.constant_vec(1, 1, vec![0.25]);
        let y = t.prelu(x, a);
        assert_eq!(t.value(y), &[-0.25, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_matrix(&mut rng, 3, 3);
        let s = Matrix::from_vec(1, 1, vec![0.2]).unwrap();
        check_grad(vec![x, s], |t, v| { let y = t.prelu(v[0], v[1]); weighted_sum(t, y) }, 1e-7);
    }

    #[test]
    fn kinks_use_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(1, 3, vec![0.0, 0.0, 0.0]).unwrap());
        let s = t.constant_vec(1, 1, vec![0.5]);
        let r = t.relu(x);
        let p = t.prelu(x, s);
        let a = t.abs(x);
        let sum1 = t.add(r, p);
        let sum = t.add(sum1, a);
        let out = t.sum_all(sum);
        let g = t.backward(out).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_layernorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_matrix(&mut rng, 3, 6);
        check_grad(vec![x.clone()], |t, v| { let y = t.softmax_rows(v[0]); weighted_sum(t, y) }, 1e-7);
        let g = rand_matrix(&mut rng, 1, 6);
        let b = rand_matrix(&mut rng, 1, 6);
        check_grad(vec![x, g, b], |t, v| { let y = t.layer_norm(v[0], v[1], v[2]); weighted_sum(t, y) }, 1e-6);
    }

    #[test]
    fn reshape_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_matrix(&mut rng, 2, 4);
        let b = rand_matrix(&mut rng, 2, 3);
        check_grad(vec![a.clone(), b], |t, v| {
            let c = t.concat_cols(&[v[0], v[1], v[0]]);
            let s = t.slice_cols(c, 2, 6);
            let m = t.mean_rows(s);
            let br = t.broadcast_rows(m, 3);
            let cr = t.concat_rows(&[br, s]);
            let y = t.mul(cr, cr);
            weighted_sum(t, y)
        }, 1e-6);
        let map = Arc::new(SparseMap {
            out_rows: 1,
            out_cols: 3,
            in_len: 8,
            entries: vec![(0, 1, 0.5), (0, 7, 0.25), (2, 3, -1.0), (1, 1, 2.0)],
        });
        check_grad(vec![a], |t, v| { let y = t.sparse(v[0], map.clone()); weighted_sum(t, y) }, 1e-7);
    }

    #[test]
    fn stft_magnitude_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_matrix(&mut rng, 1, 200);
        check_grad(vec![x.clone()], |t, v| {
            let s = t.stft_mag(v[0], 64, 16, 80).unwrap();
            weighted_sum(t, s)
        }, 1e-6);
        check_grad(vec![x], |t, v| {
            let s = t.stft_mag(v[0], 50, 25, 64).unwrap();
            let l = t.add_scalar(s, 1e-7);
            let l = t.ln(l);
            weighted_sum(t, l)
        }, 1e-5);
    }

    #[test]
    fn backward_requires_scalar_on_tape() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::NoForward(_))));
        assert!(matches!(t.backward(Var(99)), Err(Error::NoForward(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant_vec(1, 2, vec![1.0, 2.0]);
        let p = t.param(Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        let y = t.mul(c, p);
        let s = t.sum_all(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn rms_gradient_matches_closed_form() {
        // d rms / dx_i at a constant frame x = c is 1/N * c / rms = 1/N.
        let n = 64;
        let c = 0.3;
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(1, n, c));
        let sq = t.mul(x, x);
        let m = t.mean_all(sq);
        let r = t.sqrt(m);
        let g = t.backward(r).unwrap();
        let h = 1e-5;
        let rms_of = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
        for (i, &gi) in g.get(x).unwrap().iter().enumerate() {
            let mut p = vec![c; n];
            let mut q = vec![c; n];
            p[i] += h;
            q[i] -= h;
            let fd = (rms_of(&p) - rms_of(&q)) / (2.0 * h);
            assert!((gi - fd).abs() <= 1e-5 * fd.abs());
            assert!((gi - 1.0 / n as f64).abs() < 1e-12);
        }
    }
}
