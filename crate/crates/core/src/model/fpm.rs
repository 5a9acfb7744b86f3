//! Feature-preserve module: the preserve block (FPB) emits a channel gate from the
//! deepest encoder feature and the previous decoder feature; the fusion block (FFB)
//! gates and fuses the encoder skip, a convolved upsampled copy of the previous
//! decoder feature, and a plainly upsampled copy.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::attention::AttentionVector;
use crate::nn::{bilinear_resize, global_avg_pool, sigmoid, Conv2d, ConvBnRelu, Scope};

#[derive(Debug, Clone)]
pub struct Fpb {
    enc_proj: Conv2d,
    dec_proj: Conv2d,
}

impl Fpb {
    pub fn new(scope: &Scope, enc_ch: usize, dec_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            enc_proj: Conv2d::new(&scope.pp("enc_proj"), enc_ch, out_ch, (1, 1), 1, true)?,
            dec_proj: Conv2d::new(&scope.pp("dec_proj"), dec_ch, out_ch, (1, 1), 1, true)?,
        })
    }

    pub fn forward(&self, x_enc4: &Tensor, x_dec_prev: &Tensor) -> Result<AttentionVector> {
        let e = self.enc_proj.forward(&global_avg_pool(x_enc4)?)?;
        let d = self.dec_proj.forward(&global_avg_pool(x_dec_prev)?)?;
        Ok(AttentionVector::from_gate(sigmoid(&(e + d)?)?))
    }
}

#[derive(Debug, Clone)]
pub struct Ffb {
    conv1: ConvBnRelu,
    conv2: ConvBnRelu,
    up1: ConvBnRelu,
    conv3: ConvBnRelu,
}

impl Ffb {
    /// The three branches run at the previous decoder width `prev_ch`, which is
    /// also the length of the gate; `conv3` maps the concatenation to `out_ch`.
    pub fn new(scope: &Scope, skip_ch: usize, prev_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv1: ConvBnRelu::new(&scope.pp("conv1"), skip_ch, prev_ch, (3, 3))?,
            conv2: ConvBnRelu::new(&scope.pp("conv2"), prev_ch, prev_ch, (3, 3))?,
            up1: ConvBnRelu::new(&scope.pp("up1"), prev_ch, prev_ch, (3, 3))?,
            conv3: ConvBnRelu::new(&scope.pp("conv3"), 3 * prev_ch, out_ch, (3, 3))?,
        })
    }

    /// The three gated branches `z_m * x_fpb` before concatenation.
    pub fn gated_branches(
        &self,
        x_enc_skip: &Tensor,
        x_dec_prev: &Tensor,
        x_fpb: &AttentionVector,
        train: bool,
    ) -> Result<[Tensor; 3]> {
        let (_, _, sh, sw) = x_enc_skip.dims4()?;
        let (_, _, ph, pw) = x_dec_prev.dims4()?;
        if sh != 2 * ph || sw != 2 * pw {
            return Err(Error::Shape(format!(
                "skip feature {sh}x{sw} must be twice the previous decoder feature {ph}x{pw}"
            )));
        }
        let z1 = self.conv1.forward(x_enc_skip, train)?;
        let z2 = self
            .up1
            .forward(&bilinear_resize(&self.conv2.forward(x_dec_prev, train)?, sh, sw)?, train)?;
        let z3 = bilinear_resize(x_dec_prev, sh, sw)?;
        if x_fpb.channels() != z1.dim(1)? {
            return Err(Error::Shape(format!(
                "gate has {} channels, fusion width is {}",
                x_fpb.channels(),
                z1.dim(1)?
            )));
        }
        Ok([x_fpb.apply(&z1)?, x_fpb.apply(&z2)?, x_fpb.apply(&z3)?])
    }

    pub fn forward(
        &self,
        x_enc_skip: &Tensor,
        x_dec_prev: &Tensor,
        x_fpb: &AttentionVector,
        train: bool,
    ) -> Result<Tensor> {
        let [a, b, c] = self.gated_branches(x_enc_skip, x_dec_prev, x_fpb, train)?;
        let cat = Tensor::cat(&[&a, &b, &c], 1)?;
        self.conv3.forward(&cat, train)
    }
}
