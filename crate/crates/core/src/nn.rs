//! Small neural-network toolkit on top of `candle-core`: a named parameter
//! store with seeded initialization, and the handful of layers the model needs.
//!
//! Parameters are keyed by dotted hierarchical names (`decoder.stage1.lam.x1.conv.weight`).
//! Each parameter's initial value depends only on the store seed and its name, so
//! two models that share a block name start from identical weights regardless of
//! construction order.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// He-normal with the given fan-in.
    KaimingNormal { fan_in: usize },
    Uniform { bound: f64 },
}

/// Shared, ordered map of every parameter and buffer of a model.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Arc<Mutex<BTreeMap<String, Param>>>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            params: Arc::new(Mutex::new(BTreeMap::new())),
            dtype,
            device,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            path: Vec::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, BTreeMap<String, Param>> {
        self.params.lock().expect("parameter store poisoned")
    }

    /// Snapshot of all entries, sorted by name.
    pub fn entries(&self) -> Vec<(String, Param)> {
        self.lock()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.lock()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k.clone(), p.var.clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        self.lock().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.lock().keys().cloned().collect()
    }

    /// Number of scalar entries in trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.lock()
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.var.elem_count())
            .sum()
    }

    /// Overwrite the value of an existing entry in place.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let guard = self.lock();
        let param = guard
            .get(name)
            .ok_or_else(|| Error::Incompatible(format!("unknown parameter `{name}`")))?;
        if param.var.dims() != value.dims() {
            return Err(Error::Incompatible(format!(
                "parameter `{name}` has shape {:?}, value has {:?}",
                param.var.dims(),
                value.dims()
            )));
        }
        let value = value.to_dtype(self.dtype)?.to_device(&self.device)?;
        param.var.set(&value)?;
        Ok(())
    }

    fn create(&self, name: String, shape: &[usize], init: Init, trainable: bool) -> Result<Var> {
        let mut guard = self.lock();
        if guard.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, &name));
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Uniform { bound } => {
                let dist =
                    Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        guard.insert(
            name,
            Param {
                var: var.clone(),
                trainable,
            },
        );
        Ok(var)
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A position in the parameter hierarchy.
#[derive(Debug, Clone)]
pub struct Scope {
    store: ParamStore,
    path: Vec<String>,
}

impl Scope {
    pub fn pp(&self, name: impl ToString) -> Scope {
        let mut path = self.path.clone();
        path.push(name.to_string());
        Scope {
            store: self.store.clone(),
            path,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn prefix(&self) -> String {
        self.path.join(".")
    }

    fn full(&self, leaf: &str) -> String {
        if self.path.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix())
        }
    }

    pub fn param(&self, leaf: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.store.create(self.full(leaf), shape, init, true)
    }

    pub fn buffer(&self, leaf: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.store.create(self.full(leaf), shape, init, false)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: (usize, usize),
}

impl Conv2d {
    /// `kernel` is (height, width); padding defaults to "same" for odd kernels.
    pub fn new(
        scope: &Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let weight = scope.param(
            "weight",
            &[out_ch, in_ch, kh, kw],
            Init::KaimingNormal {
                fan_in: in_ch * kh * kw,
            },
        )?;
        let bias = if bias {
            Some(scope.param("bias", &[out_ch], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: (kh / 2, kw / 2),
        })
    }

    pub fn square(scope: &Scope, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Result<Self> {
        Self::new(scope, in_ch, out_ch, (k, k), stride, false)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (ph, pw) = self.padding;
        let y = if ph == pw {
            x.conv2d(self.weight.as_tensor(), ph, self.stride, 1, 1)?
        } else {
            let x = x.pad_with_zeros(2, ph, ph)?.pad_with_zeros(3, pw, pw)?;
            x.conv2d(self.weight.as_tensor(), 0, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", &[channels], Init::Const(1.0))?,
            bias: scope.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", &[channels], Init::Const(0.0))?,
            running_var: scope.buffer("running_var", &[channels], Init::Const(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;

            let n = (x.elem_count() / c) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let normed = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let w = self.weight.as_tensor().reshape((1, c, 1, 1))?;
        let b = self.bias.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
    }
}

/// Convolution, batch normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new(scope: &Scope, in_ch: usize, out_ch: usize, kernel: (usize, usize)) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&scope.pp("conv"), in_ch, out_ch, kernel, 1, false)?,
            bn: BatchNorm::new(&scope.pp("bn"), out_ch)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Ok(Self {
            weight: scope.param("weight", &[out_dim, in_dim], Init::Uniform { bound })?,
            bias: scope.param("bias", &[out_dim], Init::Uniform { bound })?,
        })
    }

    /// `x` is (batch, in_dim).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

/// Logistic function with a numerically safe backward pass.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Mean over the spatial axes, keeping them as size-1 dims.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?)
}

/// Row-stochastic interpolation matrix (out × in) for half-pixel-centred
/// linear resampling of one axis.
fn interp_matrix(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        let w = src - i0 as f64;
        m[o * inp + i0] += 1.0 - w;
        m[o * inp + i1] += w;
    }
    m
}

/// Bilinear resize of an (N, C, H, W) tensor, expressed as two matrix products
/// so that it is differentiable.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let dev = x.device();
    let dt = x.dtype();
    let aw = Tensor::from_vec(interp_matrix(out_w, w), (out_w, w), dev)?.to_dtype(dt)?;
    let ah = Tensor::from_vec(interp_matrix(out_h, h), (out_h, h), dev)?.to_dtype(dt)?;
    let x = x.broadcast_matmul(&aw.t()?)?;
    Ok(ah.broadcast_matmul(&x)?)
}

/// 3×3 / stride-2 / pad-1 max pooling for non-negative inputs (zero padding
/// is then equivalent to -inf padding). Requires even spatial dims.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pool expects even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let p = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    // padded index 2*o + d for d in 0..3
    let pick = |t: &Tensor, axis: usize, d: usize, len: usize| -> Result<Tensor> {
        let (start, phase) = if d == 2 { (2, 0) } else { (0, d) };
        let s = t.narrow(axis, start, 2 * len)?;
        let mut shape = s.dims().to_vec();
        shape[axis] = len;
        shape.insert(axis + 1, 2);
        let s = s.reshape(shape)?.narrow(axis + 1, phase, 1)?.squeeze(axis + 1)?;
        Ok(s)
    };
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        let rows = pick(&p, 2, dy, oh)?;
        for dx in 0..3 {
            let v = pick(&rows, 3, dx, ow)?;
            out = Some(match out {
                None => v,
                Some(o) => o.maximum(&v)?,
            });
        }
    }
    let out = out.expect("nine windows");
    debug_assert_eq!(out.dims(), &[n, c, oh, ow]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, Device::Cpu, 7)
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = store();
        let b = store();
        a.root().pp("x").param("w", &[3, 2], Init::KaimingNormal { fan_in: 2 }).unwrap();
        b.root().pp("other").param("w", &[1], Init::Const(0.0)).unwrap();
        b.root().pp("x").param("w", &[3, 2], Init::KaimingNormal { fan_in: 2 }).unwrap();
        let va: Vec<f64> = a.get("x.w").unwrap().var.flatten_all().unwrap().to_vec1().unwrap();
        let vb: Vec<f64> = b.get("x.w").unwrap().var.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = store();
        s.root().param("w", &[1], Init::Const(0.0)).unwrap();
        assert!(s.root().param("w", &[1], Init::Const(0.0)).is_err());
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu).unwrap().reshape((1, 1, 4, 4)).unwrap();
        let same = bilinear_resize(&x, 4, 4).unwrap();
        assert_eq!(same.flatten_all().unwrap().to_vec1::<f64>().unwrap(), x.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        let c = Tensor::full(0.3f64, (1, 2, 3, 5), &Device::Cpu).unwrap();
        let up = bilinear_resize(&c, 6, 10).unwrap();
        assert_eq!(up.dims(), &[1, 2, 6, 10]);
        for v in up.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn bilinear_matches_half_pixel_convention() {
        // 1D: [0, 1] upsampled to 4 -> [0, 0.25, 0.75, 1]
        let x = Tensor::new(&[[[[0f64, 1.0]]]], &Device::Cpu).unwrap();
        let up = bilinear_resize(&x, 1, 4).unwrap();
        let v: Vec<f64> = up.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn max_pool_matches_loop() {
        let vals: Vec<f64> = (0..2 * 6 * 8).map(|i| ((i * 37) % 11) as f64).collect();
        let x = Tensor::from_vec(vals.clone(), (1, 2, 6, 8), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 3, 4]);
        let got: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        let mut k = 0;
        for c in 0..2 {
            for oy in 0..3i64 {
                for ox in 0..4i64 {
                    let mut m = 0.0f64;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                            if (0..6).contains(&yy) && (0..8).contains(&xx) {
                                m = m.max(vals[c * 48 + yy as usize * 8 + xx as usize]);
                            }
                        }
                    }
                    assert_eq!(got[k], m);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn asymmetric_conv_keeps_size() {
        let s = store();
        let conv = Conv2d::new(&s.root().pp("h"), 3, 4, (1, 3), 1, true).unwrap();
        let x = Tensor::ones((2, 3, 5, 7), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 4, 5, 7]);
    }
}
