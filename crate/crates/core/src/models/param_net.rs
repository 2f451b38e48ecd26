//! Parameter prediction network.
//!
//! Encoder–decoder over the temporal mean of the degraded sequence: three
//! stride-2 convolutions, two residual blocks, three stride-2 transposed
//! convolutions and a sigmoid, giving one normalized parameter per pixel.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv2d, ConvTranspose2d, ParamStore, ResBlock};
use super::tensor;
use crate::error::{Error, Result};
use crate::frame::{Sequence, MIN_MODEL_SIZE};
use crate::pmap::{DegradationKind, ParamMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamNetConfig {
    pub in_channels: usize,
    pub channels: usize,
}

impl Default for ParamNetConfig {
    fn default() -> Self {
        ParamNetConfig {
            in_channels: 1,
            channels: 32,
        }
    }
}

pub struct ParamNet {
    pub config: ParamNetConfig,
    pub store: ParamStore,
    down: [Conv2d; 3],
    res: [ResBlock; 2],
    up: [ConvTranspose2d; 3],
}

impl ParamNet {
    pub fn new(config: ParamNetConfig, seed: u64, dtype: DType) -> Result<Self> {
        if config.channels == 0 || !(config.in_channels == 1 || config.in_channels == 3) {
            return Err(Error::Config(format!("invalid parameter net config {config:?}")));
        }
        let mut s = ParamStore::new(seed, dtype);
        let (c, ch) = (config.in_channels, config.channels);
        let down = [
            Conv2d::new(&mut s, "down0", c, ch, 3, 2)?,
            Conv2d::new(&mut s, "down1", ch, ch, 3, 2)?,
            Conv2d::new(&mut s, "down2", ch, ch, 3, 2)?,
        ];
        let res = [ResBlock::new(&mut s, "res0", ch)?, ResBlock::new(&mut s, "res1", ch)?];
        let up = [
            ConvTranspose2d::new(&mut s, "up0", ch, ch)?,
            ConvTranspose2d::new(&mut s, "up1", ch, ch)?,
            ConvTranspose2d::new(&mut s, "up2", ch, 1)?,
        ];
        Ok(ParamNet {
            config,
            store: s,
            down,
            res,
            up,
        })
    }

    /// `mean_frame`: `(B, C, H, W)` → `(B, 1, H, W)` in `[0, 1]`.
    pub fn forward(&self, mean_frame: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = mean_frame.dims4()?;
        let mut x = layers::pad_to_multiple(&mean_frame.to_dtype(self.store.dtype())?, 8)?;
        for conv in &self.down {
            x = layers::leaky_relu(&conv.forward(&x)?)?;
        }
        for block in &self.res {
            x = block.forward(&x)?;
        }
        x = layers::leaky_relu(&self.up[0].forward(&x)?)?;
        x = layers::leaky_relu(&self.up[1].forward(&x)?)?;
        x = candle_nn::ops::sigmoid(&self.up[2].forward(&x)?)?;
        layers::crop_to(&x, h, w)
    }

    /// Temporal mean of each sequence, stacked into `(B, C, H, W)`.
    pub fn mean_input(seqs: &[&Sequence], dtype: DType) -> Result<Tensor> {
        let means: Vec<_> = seqs.iter().map(|s| s.temporal_mean()).collect();
        tensor::frames_to_tensor(&means.iter().collect::<Vec<_>>(), dtype)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }
}

/// Predicts the parameter map of a degraded sequence.
pub fn param_net_forward(net: &ParamNet, degraded: &Sequence, kind: DegradationKind) -> Result<ParamMap> {
    let (h, w, _) = degraded.shape();
    if h < MIN_MODEL_SIZE || w < MIN_MODEL_SIZE {
        return Err(Error::InvalidArgument(format!(
            "frames of {h}x{w} are below the {MIN_MODEL_SIZE}x{MIN_MODEL_SIZE} model minimum"
        )));
    }
    let x = ParamNet::mean_input(&[degraded], net.store.dtype())?;
    let y = net.forward(&x)?.detach();
    let values = tensor::tensor_to_plane(&y)?;
    ParamMap::new(h, w, values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(), kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;

    fn seq(h: usize, w: usize, k: f32) -> Sequence {
        let frames = (0..3)
            .map(|t| Frame::from_fn(h, w, 1, |_, y, x| (x as f32 * k + y as f32 * 0.1 + t as f32).sin() * 0.5 + 0.5))
            .collect();
        Sequence::new("s", frames).unwrap()
    }

    #[test]
    fn output_shape_and_range_with_odd_size() {
        let net = ParamNet::new(ParamNetConfig { channels: 8, ..Default::default() }, 0, DType::F32).unwrap();
        let m = param_net_forward(&net, &seq(70, 66, 0.3), DegradationKind::Noise).unwrap();
        assert_eq!((m.height(), m.width()), (70, 66));
        assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(m.phys_max, 100.0);
    }

    #[test]
    fn not_constant() {
        let net = ParamNet::new(ParamNetConfig { channels: 8, ..Default::default() }, 1, DType::F32).unwrap();
        let a = param_net_forward(&net, &seq(64, 64, 0.3), DegradationKind::Noise).unwrap();
        let b = param_net_forward(&net, &seq(64, 64, 1.7), DegradationKind::Noise).unwrap();
        assert_ne!(a.values(), b.values());
    }

    #[test]
    fn rejects_small_frames() {
        let net = ParamNet::new(ParamNetConfig::default(), 0, DType::F32).unwrap();
        assert!(param_net_forward(&net, &seq(32, 64, 0.3), DegradationKind::Noise).is_err());
    }
}
