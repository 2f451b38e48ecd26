//! Wide model and the 1×1 merge of the two branches.

use candle_core::{Device, Tensor};

use super::layers::{self, Conv2d, ConvTranspose2d, ParamStore, ResBlock};
use crate::error::{Error, Result};

/// Shallow full-resolution branch fed with `cat(I_t, P)`: three convolutions,
/// one transposed convolution and one residual block.
pub struct WideModel {
    down: Conv2d,
    mid: Conv2d,
    res: ResBlock,
    up: ConvTranspose2d,
    out: Conv2d,
    channels: usize,
}

impl WideModel {
    pub fn new(store: &mut ParamStore, in_channels: usize, channels: usize) -> Result<Self> {
        Ok(WideModel {
            down: Conv2d::new(store, "wide.down", in_channels + 1, channels, 3, 2)?,
            mid: Conv2d::new(store, "wide.mid", channels, channels, 3, 1)?,
            res: ResBlock::new(store, "wide.res", channels)?,
            up: ConvTranspose2d::new(store, "wide.up", channels, channels)?,
            out: Conv2d::new(store, "wide.out", channels, in_channels, 3, 1)?,
            channels,
        })
    }

    /// `target`: `(B, C, H, W)`, `pmap`: `(B, 1, H, W)`; returns the residual `Y² - I_t`.
    pub fn forward(&self, target: &Tensor, pmap: &Tensor) -> Result<Tensor> {
        let (tb, _, th, tw) = target.dims4()?;
        let (pb, pc, ph, pw) = pmap.dims4()?;
        if (tb, th, tw) != (pb, ph, pw) || pc != 1 {
            return Err(Error::Shape(format!(
                "wide model input {:?} vs parameter map {:?}",
                target.dims(),
                pmap.dims()
            )));
        }
        let mut x = layers::leaky_relu(&self.down.forward(&Tensor::cat(&[target, pmap], 1)?)?)?;
        x = layers::leaky_relu(&self.mid.forward(&x)?)?;
        x = self.res.forward(&x)?;
        x = layers::leaky_relu(&self.up.forward(&x)?)?;
        self.out.forward(&x)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (hh, hw) = self.down.out_size(h, w);
        let half = (hh * hw * self.channels) as u64;
        let full = (4 * hh * hw * self.channels) as u64;
        self.down.flops(h, w)
            + half
            + self.mid.flops(hh, hw)
            + half
            + self.res.flops(hh, hw)
            + self.up.flops(hh, hw)
            + full
            + self.out.flops(2 * hh, 2 * hw)
    }
}

/// `Y = conv1x1(cat(Y¹, Y²))`, initialized to the branch average.
pub struct Merge {
    conv: Conv2d,
}

impl Merge {
    pub fn new(store: &mut ParamStore, channels: usize) -> Result<Self> {
        let mut w = vec![0f64; channels * 2 * channels];
        for c in 0..channels {
            w[c * 2 * channels + c] = 0.5;
            w[c * 2 * channels + channels + c] = 0.5;
        }
        let weight = Tensor::from_vec(w, (channels, 2 * channels, 1, 1), &Device::Cpu)?;
        Ok(Merge {
            conv: Conv2d::with_weights(store, "merge", weight)?,
        })
    }

    pub fn forward(&self, y1: &Tensor, y2: &Tensor) -> Result<Tensor> {
        if y1.dims() != y2.dims() {
            return Err(Error::Shape(format!("merge inputs {:?} vs {:?}", y1.dims(), y2.dims())));
        }
        self.conv.forward(&Tensor::cat(&[y1, y2], 1)?)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        self.conv.flops(h, w)
    }
}
