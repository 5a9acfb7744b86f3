//! Channel attention, the head attention module and the lesion-aware module.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, sigmoid, Conv2d, ConvBnRelu, Scope};

/// Channel reduction ratio inside every channel-attention block.
pub const ATTENTION_REDUCTION: usize = 4;

/// Per-channel gate of shape (N, C, 1, 1) with entries in [0, 1].
#[derive(Debug, Clone)]
pub struct AttentionVector(Tensor);

impl AttentionVector {
    /// Wraps a gate tensor, checking its rank and range.
    pub fn new(t: Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 4 || dims[2] != 1 || dims[3] != 1 {
            return Err(Error::Shape(format!("attention vector must be (N, C, 1, 1), got {dims:?}")));
        }
        let v: Vec<f64> = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidValue(format!("attention entry {bad} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    /// Gates produced by a sigmoid are in range by construction.
    pub(crate) fn from_gate(t: Tensor) -> Self {
        Self(t)
    }

    pub fn ones(n: usize, c: usize, dtype: DType, dev: &Device) -> Result<Self> {
        Ok(Self(Tensor::ones((n, c, 1, 1), dtype, dev)?))
    }

    pub fn zeros(n: usize, c: usize, dtype: DType, dev: &Device) -> Result<Self> {
        Ok(Self(Tensor::zeros((n, c, 1, 1), dtype, dev)?))
    }

    pub fn filled(n: usize, c: usize, value: f64, dtype: DType, dev: &Device) -> Result<Self> {
        Self::new(Tensor::full(value, (n, c, 1, 1), dev)?.to_dtype(dtype)?)
    }

    /// Unit vector selecting channel `k`.
    pub fn one_hot(n: usize, c: usize, k: usize, dtype: DType, dev: &Device) -> Result<Self> {
        if k >= c {
            return Err(Error::InvalidValue(format!("channel {k} out of range for {c} channels")));
        }
        let mut v = vec![0f64; n * c];
        for b in 0..n {
            v[b * c + k] = 1.0;
        }
        Ok(Self(Tensor::from_vec(v, (n, c, 1, 1), dev)?.to_dtype(dtype)?))
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    /// `out(n, c, i, j) = x(n, c, i, j) * a(n, c)`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.0)?)
    }
}

/// Pool, reduce, ReLU, expand, sigmoid.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    reduce: Conv2d,
    expand: Conv2d,
}

impl ChannelAttention {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        let hidden = (channels / ATTENTION_REDUCTION).max(1);
        Ok(Self {
            reduce: Conv2d::new(&scope.pp("reduce"), channels, hidden, (1, 1), 1, true)?,
            expand: Conv2d::new(&scope.pp("expand"), hidden, channels, (1, 1), 1, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<AttentionVector> {
        self.forward_traced(x, &mut None)
    }

    fn forward_traced(&self, x: &Tensor, trace: &mut Option<&mut Vec<usize>>) -> Result<AttentionVector> {
        let pooled = global_avg_pool(x)?;
        let hidden = self.reduce.forward(&pooled)?.relu()?;
        let gate = sigmoid(&self.expand.forward(&hidden)?)?;
        if let Some(t) = trace.as_deref_mut() {
            t.extend([pooled.elem_count(), hidden.elem_count(), gate.elem_count()]);
        }
        Ok(AttentionVector::from_gate(gate))
    }
}

/// Head attention module: 1×1 channel reduction of the deepest encoder feature
/// followed by channel attention. No position-by-position affinity matrix is formed.
#[derive(Debug, Clone)]
pub struct Ham {
    reduce: ConvBnRelu,
    attention: ChannelAttention,
}

impl Ham {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            reduce: ConvBnRelu::new(&scope.pp("reduce"), in_ch, out_ch, (1, 1))?,
            attention: ChannelAttention::new(&scope.pp("attention"), out_ch)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.forward_traced(x, train, None)
    }

    /// Forward pass that records the element count of every intermediate activation.
    pub fn forward_traced(&self, x: &Tensor, train: bool, trace: Option<&mut Vec<usize>>) -> Result<Tensor> {
        let mut trace = trace;
        let reduced = self.reduce.forward(x, train)?;
        let att = self.attention.forward_traced(&reduced, &mut trace)?;
        let out = att.apply(&reduced)?;
        if let Some(t) = trace {
            t.extend([reduced.elem_count(), out.elem_count()]);
        }
        Ok(out)
    }
}

/// Intermediate results of a lesion-aware module pass.
#[derive(Debug, Clone)]
pub struct LamParts {
    pub x_ort: Tensor,
    pub x_att: AttentionVector,
    pub output: Tensor,
}

/// Lesion-aware module: orientation-aware features from one branch, gated
/// channel-wise by attention computed from a second branch.
///
/// The attention vector is channel attention over the second branch. This is an
/// interpretation: the exact form of that gate is not pinned down beyond being
/// one weight per channel.
#[derive(Debug, Clone)]
pub struct Lam {
    branch1: ConvBnRelu,
    branch2: ConvBnRelu,
    horizontal: Conv2d,
    vertical: Conv2d,
    orient: ConvBnRelu,
    attention: ChannelAttention,
}

impl Lam {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            branch1: ConvBnRelu::new(&scope.pp("x1"), channels, channels, (1, 1))?,
            branch2: ConvBnRelu::new(&scope.pp("x2"), channels, channels, (1, 1))?,
            horizontal: Conv2d::new(&scope.pp("f_h"), channels, channels, (1, 3), 1, true)?,
            vertical: Conv2d::new(&scope.pp("f_v"), channels, channels, (3, 1), 1, true)?,
            orient: ConvBnRelu::new(&scope.pp("f_ort"), channels, channels, (1, 1))?,
            attention: ChannelAttention::new(&scope.pp("attention"), channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.forward_parts(x, train, None)?.output)
    }

    /// Full pass; `att_override` replaces the computed attention vector.
    pub fn forward_parts(&self, x: &Tensor, train: bool, att_override: Option<&AttentionVector>) -> Result<LamParts> {
        let x1 = self.branch1.forward(x, train)?;
        let x2 = self.branch2.forward(x, train)?;
        let oriented = (self.horizontal.forward(&x1)? + self.vertical.forward(&x1)?)?;
        let x_ort = self.orient.forward(&oriented, train)?;
        let x_att = match att_override {
            Some(a) => {
                if a.channels() != x_ort.dim(1)? {
                    return Err(Error::Shape(format!(
                        "attention has {} channels, feature has {}",
                        a.channels(),
                        x_ort.dim(1)?
                    )));
                }
                a.clone()
            }
            None => self.attention.forward(&x2)?,
        };
        let output = x_att.apply(&x_ort)?;
        Ok(LamParts { x_ort, x_att, output })
    }
}
