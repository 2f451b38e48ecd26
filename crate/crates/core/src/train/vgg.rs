//! Frozen VGG-19 feature extractor for the perceptual loss.
//!
//! Weights are read from a safetensors file using the torchvision naming
//! (`features.{i}.weight`, `features.{i}.bias`). Only the layers up to the
//! requested stage are loaded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::conv;
use crate::models::layers::{Conv2d, ParamStore};

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// `(torchvision index, in, out)` of the convolutions in `features`, with
/// `None` marking a 2×2 max pool.
const LAYOUT: [Option<(usize, usize, usize)>; 9] = [
    Some((0, 3, 64)),
    Some((2, 64, 64)),
    None,
    Some((5, 64, 128)),
    Some((7, 128, 128)),
    None,
    Some((10, 128, 256)),
    Some((12, 256, 256)),
    Some((14, 256, 256)),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VggStage {
    Relu1_2,
    Relu2_2,
    #[default]
    Relu3_3,
}

impl VggStage {
    /// Number of entries of [`LAYOUT`] needed to reach this stage.
    fn depth(self) -> usize {
        match self {
            VggStage::Relu1_2 => 2,
            VggStage::Relu2_2 => 5,
            VggStage::Relu3_3 => 9,
        }
    }
}

impl fmt::Display for VggStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VggStage::Relu1_2 => "relu1_2",
            VggStage::Relu2_2 => "relu2_2",
            VggStage::Relu3_3 => "relu3_3",
        })
    }
}

impl FromStr for VggStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu1_2" => Ok(VggStage::Relu1_2),
            "relu2_2" => Ok(VggStage::Relu2_2),
            "relu3_3" => Ok(VggStage::Relu3_3),
            other => Err(Error::Config(format!("unknown VGG stage {other:?}"))),
        }
    }
}

enum Layer {
    Conv { weight: Tensor, bias: Tensor },
    Pool,
}

pub struct Vgg19Features {
    layers: Vec<Layer>,
    stage: VggStage,
    mean: Tensor,
    std: Tensor,
}

impl Vgg19Features {
    /// Loads pre-trained weights. A missing or incomplete file is a
    /// configuration error.
    pub fn load(path: &Path, stage: VggStage, dtype: DType) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Config(format!(
                "perceptual loss needs pre-trained VGG-19 weights, {} not found",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)
            .map_err(|e| Error::Config(format!("cannot read VGG-19 weights {}: {e}", path.display())))?;
        Self::from_tensors(&tensors, stage, dtype)
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>, stage: VggStage, dtype: DType) -> Result<Self> {
        let mut layers = Vec::new();
        for spec in &LAYOUT[..stage.depth()] {
            layers.push(match spec {
                Some((idx, cin, cout)) => {
                    let get = |suffix: &str, dims: &[usize]| -> Result<Tensor> {
                        let name = format!("features.{idx}.{suffix}");
                        let t = tensors
                            .get(&name)
                            .ok_or_else(|| Error::Config(format!("VGG-19 weights lack {name}")))?;
                        if t.dims() != dims {
                            return Err(Error::Config(format!("{name} has shape {:?}, expected {dims:?}", t.dims())));
                        }
                        Ok(t.to_dtype(dtype)?)
                    };
                    Layer::Conv {
                        weight: get("weight", &[*cout, *cin, 3, 3])?,
                        bias: get("bias", &[*cout])?.reshape((1, *cout, 1, 1))?,
                    }
                }
                None => Layer::Pool,
            });
        }
        let mean = Tensor::from_vec(IMAGENET_MEAN.to_vec(), (1, 3, 1, 1), &Device::Cpu)?.to_dtype(dtype)?;
        let std = Tensor::from_vec(IMAGENET_STD.to_vec(), (1, 3, 1, 1), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Vgg19Features {
            layers,
            stage,
            mean,
            std,
        })
    }

    /// Seeded random weights with the VGG-19 layout. Only for tests and
    /// demos; a random extractor is not a perceptual metric.
    pub fn with_random_weights(seed: u64, stage: VggStage, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(seed, dtype);
        for (idx, cin, cout) in LAYOUT.iter().flatten() {
            Conv2d::new(&mut store, &format!("features.{idx}"), *cin, *cout, 3, 1)?;
        }
        let tensors: HashMap<String, Tensor> = store.snapshot()?.into_iter().collect();
        Self::from_tensors(&tensors, stage, dtype)
    }

    pub fn stage(&self) -> VggStage {
        self.stage
    }

    /// `(B, C, H, W)` with `C ∈ {1, 3}` in `[0, 1]` → activations at the stage.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        let x = match c {
            1 => Tensor::cat(&[x, x, x], 1)?,
            3 => x.clone(),
            _ => return Err(Error::Shape(format!("VGG input needs 1 or 3 channels, got {c}"))),
        };
        let mut h = x
            .to_dtype(self.mean.dtype())?
            .broadcast_sub(&self.mean)?
            .broadcast_div(&self.std)?;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { weight, bias } => conv::conv2d(&h, weight, 1, 1)?.broadcast_add(bias)?.relu()?,
                Layer::Pool => max_pool2(&h)?,
            };
        }
        Ok(h)
    }
}

/// 2×2 max pool, stride 2, dropping an odd last row/column. Built from
/// reshape + max because candle's `max_pool2d` backward scales the gradient
/// by the tie fraction instead of dividing by the tie count.
fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let x = if h % 2 == 1 || w % 2 == 1 {
        x.narrow(2, 0, 2 * ho)?.narrow(3, 0, 2 * wo)?.contiguous()?
    } else {
        x.contiguous()?
    };
    Ok(x.reshape((b, c, ho, 2, wo, 2))?.max(5)?.max(3)?)
}
