//! Residual encoder producing the four stage features at strides 4, 8, 16, 32.
//!
//! Parameter names follow the torchvision ResNet layout (`conv1`, `bn1`,
//! `layer{1..4}.{block}.conv1`, ...) so converted classification weights can be
//! loaded directly into the `encoder.` scope.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{max_pool_3x3_s2, BatchNorm, Conv2d, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Bottleneck ResNet-50, stage widths 256/512/1024/2048.
    Resnet50,
    /// One basic block per stage, widths 16/32/64/128. For desk-scale runs.
    ResnetSmall,
}

impl Backbone {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "resnet50" => Ok(Backbone::Resnet50),
            "resnet-small" => Ok(Backbone::ResnetSmall),
            other => Err(Error::Config(format!(
                "unsupported backbone `{other}` (expected `resnet50` or `resnet-small`)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Resnet50 => "resnet50",
            Backbone::ResnetSmall => "resnet-small",
        }
    }

    /// Output channels of the four stages.
    pub fn stage_channels(self) -> [usize; 4] {
        match self {
            Backbone::Resnet50 => [256, 512, 1024, 2048],
            Backbone::ResnetSmall => [16, 32, 64, 128],
        }
    }

    fn stem_channels(self) -> usize {
        match self {
            Backbone::Resnet50 => 64,
            Backbone::ResnetSmall => 16,
        }
    }

    fn blocks(self) -> [usize; 4] {
        match self {
            Backbone::Resnet50 => [3, 4, 6, 3],
            Backbone::ResnetSmall => [1, 1, 1, 1],
        }
    }
}

/// Output strides of the four encoder stages.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone)]
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
enum Block {
    Basic {
        conv1: Conv2d,
        bn1: BatchNorm,
        conv2: Conv2d,
        bn2: BatchNorm,
        downsample: Option<Downsample>,
    },
    Bottleneck {
        conv1: Conv2d,
        bn1: BatchNorm,
        conv2: Conv2d,
        bn2: BatchNorm,
        conv3: Conv2d,
        bn3: BatchNorm,
        downsample: Option<Downsample>,
    },
}

fn downsample(scope: &Scope, in_ch: usize, out_ch: usize, stride: usize) -> Result<Option<Downsample>> {
    if stride == 1 && in_ch == out_ch {
        return Ok(None);
    }
    Ok(Some(Downsample {
        conv: Conv2d::square(&scope.pp("downsample").pp(0), in_ch, out_ch, 1, stride)?,
        bn: BatchNorm::new(&scope.pp("downsample").pp(1), out_ch)?,
    }))
}

impl Block {
    fn basic(scope: &Scope, in_ch: usize, planes: usize, stride: usize) -> Result<Self> {
        Ok(Block::Basic {
            conv1: Conv2d::square(&scope.pp("conv1"), in_ch, planes, 3, stride)?,
            bn1: BatchNorm::new(&scope.pp("bn1"), planes)?,
            conv2: Conv2d::square(&scope.pp("conv2"), planes, planes, 3, 1)?,
            bn2: BatchNorm::new(&scope.pp("bn2"), planes)?,
            downsample: downsample(scope, in_ch, planes, stride)?,
        })
    }

    fn bottleneck(scope: &Scope, in_ch: usize, planes: usize, stride: usize) -> Result<Self> {
        let out = planes * 4;
        Ok(Block::Bottleneck {
            conv1: Conv2d::square(&scope.pp("conv1"), in_ch, planes, 1, 1)?,
            bn1: BatchNorm::new(&scope.pp("bn1"), planes)?,
            conv2: Conv2d::square(&scope.pp("conv2"), planes, planes, 3, stride)?,
            bn2: BatchNorm::new(&scope.pp("bn2"), planes)?,
            conv3: Conv2d::square(&scope.pp("conv3"), planes, out, 1, 1)?,
            bn3: BatchNorm::new(&scope.pp("bn3"), out)?,
            downsample: downsample(scope, in_ch, out, stride)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (y, ds) = match self {
            Block::Basic {
                conv1,
                bn1,
                conv2,
                bn2,
                downsample,
            } => {
                let y = bn1.forward(&conv1.forward(x)?, train)?.relu()?;
                (bn2.forward(&conv2.forward(&y)?, train)?, downsample)
            }
            Block::Bottleneck {
                conv1,
                bn1,
                conv2,
                bn2,
                conv3,
                bn3,
                downsample,
            } => {
                let y = bn1.forward(&conv1.forward(x)?, train)?.relu()?;
                let y = bn2.forward(&conv2.forward(&y)?, train)?.relu()?;
                (bn3.forward(&conv3.forward(&y)?, train)?, downsample)
            }
        };
        let identity = match ds {
            Some(d) => d.bn.forward(&d.conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + identity)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    backbone: Backbone,
    conv1: Conv2d,
    bn1: BatchNorm,
    layers: Vec<Vec<Block>>,
}

impl Encoder {
    pub fn new(scope: &Scope, backbone: Backbone) -> Result<Self> {
        let stem = backbone.stem_channels();
        let conv1 = Conv2d::square(&scope.pp("conv1"), 3, stem, 7, 2)?;
        let bn1 = BatchNorm::new(&scope.pp("bn1"), stem)?;
        let mut layers = Vec::with_capacity(4);
        let mut in_ch = stem;
        for (li, (&n_blocks, &out_ch)) in backbone
            .blocks()
            .iter()
            .zip(backbone.stage_channels().iter())
            .enumerate()
        {
            let layer_scope = scope.pp(format!("layer{}", li + 1));
            let first_stride = if li == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(n_blocks);
            for b in 0..n_blocks {
                let stride = if b == 0 { first_stride } else { 1 };
                let block = match backbone {
                    Backbone::Resnet50 => Block::bottleneck(&layer_scope.pp(b), in_ch, out_ch / 4, stride)?,
                    Backbone::ResnetSmall => Block::basic(&layer_scope.pp(b), in_ch, out_ch, stride)?,
                };
                blocks.push(block);
                in_ch = out_ch;
            }
            layers.push(blocks);
        }
        Ok(Self {
            backbone,
            conv1,
            bn1,
            layers,
        })
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    /// Returns the four stage features `x_enc^1..x_enc^4`.
    pub fn forward(&self, image: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "encoder expects 3 channels and sides divisible by 32, got {c}x{h}x{w}"
            )));
        }
        let x = self.bn1.forward(&self.conv1.forward(image)?, train)?.relu()?;
        let mut x = max_pool_3x3_s2(&x)?;
        let mut feats = Vec::with_capacity(4);
        for layer in &self.layers {
            for block in layer {
                x = block.forward(&x, train)?;
            }
            feats.push(x.clone());
        }
        Ok(feats)
    }
}
