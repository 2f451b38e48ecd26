//! Conversions between frames / parameter maps and `(B, C, H, W)` tensors.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::pmap::ParamMap;

pub fn frames_to_tensor(frames: &[&Frame], dtype: DType) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to batch".into()))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(frames.len() * h * w * c);
    for f in frames {
        first.check_same_shape(f)?;
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::from_vec(data, (frames.len(), c, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn pmaps_to_tensor(maps: &[&ParamMap], dtype: DType) -> Result<Tensor> {
    let frames: Vec<Frame> = maps.iter().map(|m| m.as_frame()).collect();
    frames_to_tensor(&frames.iter().collect::<Vec<_>>(), dtype)
}

/// Flattens every value (any shape) into `f32`.
pub fn tensor_to_plane(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
}

/// `(1, C, H, W)` → frame.
pub fn tensor_to_frame(t: &Tensor) -> Result<Frame> {
    let (b, c, h, w) = t.dims4()?;
    if b != 1 {
        return Err(Error::Shape(format!("expected batch of one, got {b}")));
    }
    Frame::new(h, w, c, tensor_to_plane(t)?)
}

/// Splits a `(B, C, H, W)` tensor into frames.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Frame>> {
    let b = t.dim(0)?;
    (0..b).map(|i| tensor_to_frame(&t.narrow(0, i, 1)?)).collect()
}
