use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const D_MODEL: usize = 128;
pub const HEADS: usize = 2;
pub const FF_DIM: usize = 256;
pub const MEL_BINS: usize = 64;
pub const CONV1_CH: usize = 8;
pub const CONV2_CH: usize = 16;
/// Mel axis after two 2x poolings, times conv2 channels.
pub const EMBED_FEATURES: usize = (MEL_BINS / 4) * CONV2_CH;
pub const MLP_HIDDEN: [usize; 3] = [128, 64, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Embedder,
    Alm,
    Dmc,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f64),
    Const(f64),
}

#[derive(Clone, Debug)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Gru {
    pub w_ih: usize,
    pub b_ih: usize,
    pub w_hh: usize,
    pub b_hh: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GainHead {
    pub hidden: [Linear; 3],
    pub slopes: [usize; 3],
    pub out: Linear,
}

/// Tensor indices of every trainable block.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub conv1: Linear,
    pub conv2: Linear,
    pub embed_proj: Linear,
    pub blocks: [EncoderBlock; 3],
    pub rms: Linear,
    pub rms_slope: usize,
    pub gru: Gru,
    pub mlp: GainHead,
    pub dmc: GainHead,
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn tensor(&mut self, name: &str, rows: usize, cols: usize, group: ParamGroup, init: Init) -> usize {
        self.specs.push(TensorSpec {
            name: name.to_string(),
            rows,
            cols,
            group,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: self.tensor(&format!("{name}.weight"), fan_in, fan_out, group, Init::Uniform(bound)),
            b: self.tensor(&format!("{name}.bias"), 1, fan_out, group, Init::Const(0.0)),
        }
    }

    fn block(&mut self, name: &str) -> EncoderBlock {
        let g = ParamGroup::Alm;
        EncoderBlock {
            q: self.linear(&format!("{name}.attn.q"), D_MODEL, D_MODEL, g),
            k: self.linear(&format!("{name}.attn.k"), D_MODEL, D_MODEL, g),
            v: self.linear(&format!("{name}.attn.v"), D_MODEL, D_MODEL, g),
            o: self.linear(&format!("{name}.attn.out"), D_MODEL, D_MODEL, g),
            ln1_g: self.tensor(&format!("{name}.norm1.gain"), 1, D_MODEL, g, Init::Const(1.0)),
            ln1_b: self.tensor(&format!("{name}.norm1.bias"), 1, D_MODEL, g, Init::Const(0.0)),
            ff1: self.linear(&format!("{name}.ff1"), D_MODEL, FF_DIM, g),
            ff2: self.linear(&format!("{name}.ff2"), FF_DIM, D_MODEL, g),
            ln2_g: self.tensor(&format!("{name}.norm2.gain"), 1, D_MODEL, g, Init::Const(1.0)),
            ln2_b: self.tensor(&format!("{name}.norm2.bias"), 1, D_MODEL, g, Init::Const(0.0)),
        }
    }

    fn head(&mut self, name: &str, input: usize, group: ParamGroup) -> GainHead {
        let l1 = self.linear(&format!("{name}.fc1"), input, MLP_HIDDEN[0], group);
        let s1 = self.tensor(&format!("{name}.act1.slope"), 1, 1, group, Init::Const(0.25));
        let l2 = self.linear(&format!("{name}.fc2"), MLP_HIDDEN[0], MLP_HIDDEN[1], group);
        let s2 = self.tensor(&format!("{name}.act2.slope"), 1, 1, group, Init::Const(0.25));
        let l3 = self.linear(&format!("{name}.fc3"), MLP_HIDDEN[1], MLP_HIDDEN[2], group);
        let s3 = self.tensor(&format!("{name}.act3.slope"), 1, 1, group, Init::Const(0.25));
        // Small output weights and a unit bias: an untrained head passes audio through.
        let out = Linear {
            w: self.tensor(&format!("{name}.out.weight"), MLP_HIDDEN[2], 1, group, Init::Uniform(0.02)),
            b: self.tensor(&format!("{name}.out.bias"), 1, 1, group, Init::Const(1.0)),
        };
        GainHead {
            hidden: [l1, l2, l3],
            slopes: [s1, s2, s3],
            out,
        }
    }
}

pub(crate) fn build_layout() -> (Layout, Vec<TensorSpec>) {
    let mut b = Builder { specs: Vec::new() };
    let e = ParamGroup::Embedder;
    let conv1 = b.linear("embedder.conv1", 9, CONV1_CH, e);
    let conv2 = b.linear("embedder.conv2", 9 * CONV1_CH, CONV2_CH, e);
    let embed_proj = b.linear("embedder.proj", EMBED_FEATURES, D_MODEL, e);
    let b1 = b.block("encoder1");
    let rms = Linear {
        w: b.tensor("rms.proj.weight", 1, D_MODEL, ParamGroup::Alm, Init::Uniform(1.0)),
        b: b.tensor("rms.proj.bias", 1, D_MODEL, ParamGroup::Alm, Init::Const(0.0)),
    };
    let rms_slope = b.tensor("rms.act.slope", 1, 1, ParamGroup::Alm, Init::Const(0.25));
    let b2 = b.block("encoder2");
    let gb = 1.0 / (D_MODEL as f64).sqrt();
    let gru = Gru {
        w_ih: b.tensor("gru.weight_ih", D_MODEL, 3 * D_MODEL, ParamGroup::Alm, Init::Uniform(gb)),
        b_ih: b.tensor("gru.bias_ih", 1, 3 * D_MODEL, ParamGroup::Alm, Init::Uniform(gb)),
        w_hh: b.tensor("gru.weight_hh", D_MODEL, 3 * D_MODEL, ParamGroup::Alm, Init::Uniform(gb)),
        b_hh: b.tensor("gru.bias_hh", 1, 3 * D_MODEL, ParamGroup::Alm, Init::Uniform(gb)),
    };
    let b3 = b.block("encoder3");
    let mlp = b.head("gain", D_MODEL, ParamGroup::Alm);
    let dmc = b.head("dmc", 2 * D_MODEL, ParamGroup::Dmc);
    (
        Layout {
            conv1,
            conv2,
            embed_proj,
            blocks: [b1, b2, b3],
            rms,
            rms_slope,
            gru,
            mlp,
            dmc,
        },
        b.specs,
    )
}

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    name: String,
    rows: usize,
    cols: usize,
    group: ParamGroup,
    data: Arc<Vec<f64>>,
    frozen: bool,
}

impl ParamTensor {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy-on-write access.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Every trainable tensor of the gain predictor plus the freeze mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Seeded random initialization.
    pub fn init(seed: u64) -> Self {
        let (_, specs) = build_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .into_iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = match s.init {
                    Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
                    Init::Const(c) => vec![c; n],
                };
                ParamTensor {
                    name: s.name,
                    rows: s.rows,
                    cols: s.cols,
                    group: s.group,
                    data: Arc::new(data),
                    frozen: false,
                }
            })
            .collect();
        Self::from_tensors(tensors)
    }

    fn from_tensors(tensors: Vec<ParamTensor>) -> Self {
        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        Self { tensors, index }
    }

    /// Builds a parameter set from named tensors, validating every name and
    /// shape against the model layout.
    pub fn from_named(named: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let (_, specs) = build_layout();
        let mut by_name: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for (name, shape, data) in named {
            by_name.insert(name, (shape, data));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let (shape, data) = by_name
                .remove(&s.name)
                .ok_or_else(|| Error::WeightFormat(format!("missing tensor {}", s.name)))?;
            if shape != [s.rows, s.cols] || data.len() != s.rows * s.cols {
                return Err(Error::ShapeMismatch {
                    name: s.name,
                    expected: vec![s.rows, s.cols],
                    actual: shape,
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(s.name));
            }
            tensors.push(ParamTensor {
                name: s.name,
                rows: s.rows,
                cols: s.cols,
                group: s.group,
                data: Arc::new(data),
                frozen: false,
            });
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::UnknownTensor(extra.clone()));
        }
        Ok(Self::from_tensors(tensors))
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &ParamTensor {
        &self.tensors[i]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn set_group_frozen(&mut self, group: ParamGroup, frozen: bool) {
        for t in &mut self.tensors {
            if t.group == group {
                t.frozen = frozen;
            }
        }
    }

    pub fn freeze_mask(&self) -> Vec<bool> {
        self.tensors.iter().map(|t| t.frozen).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Places every tensor on the tape. Tensors in `trainable` that are not
    /// frozen become differentiable leaves; everything else is constant.
    pub fn bind(&self, tape: &mut Tape, trainable: &[ParamGroup]) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let rg = !t.frozen && trainable.contains(&t.group);
                tape.leaf_shared(t.rows, t.cols, t.data.clone(), rg)
            })
            .collect();
        Bound { vars }
    }

    pub fn as_matrix(&self, i: usize) -> Matrix {
        let t = &self.tensors[i];
        Matrix::from_vec(t.rows, t.cols, t.data.to_vec()).expect("tensor shape")
    }
}

/// Tape handles for every parameter tensor, in layout order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
