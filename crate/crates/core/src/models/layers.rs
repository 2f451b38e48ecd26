//! Parameter storage and the convolutional building blocks.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv;
use crate::error::{Error, Result};
use crate::rng;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Named trainable variables with deterministic seeded initialization.
///
/// Names are dot-separated paths (`brnn.fwd.rdb0.dense1.weight`); iteration
/// order is lexicographic, which keeps optimizer state and checkpoint files
/// stable across runs.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: rng::stream(seed, 0x1417),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Adds a variable drawn from `U(-bound, bound)`.
    pub fn uniform(&mut self, name: String, dims: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(data, dims, &self.device)?)
    }

    pub fn constant(&mut self, name: String, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.insert(name, Tensor::from_vec(vec![value; n], dims, &self.device)?)
    }

    pub fn insert(&mut self, name: String, init: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&init.to_dtype(self.dtype)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    /// Overwrites every variable from `values`, which must match names and shapes exactly.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in values.keys() {
            if !self.vars.contains_key(name) {
                return Err(Error::Format(format!("unexpected weight {name}")));
            }
        }
        for (name, var) in &self.vars {
            let src = values
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing weight {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::Format(format!(
                    "weight {name} has shape {:?}, config expects {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

/// Spatial output size of a padded strided convolution.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// `kernel × kernel` convolution with "same"-style padding `kernel / 2`.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Self> {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[cout, cin, kernel, kernel], bound)?;
        let bias = store.uniform(format!("{name}.bias"), &[cout], bound)?;
        Ok(Conv2d {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding: kernel / 2,
        })
    }

    /// Like [`Conv2d::new`] but starting from given weights (bias zero).
    pub fn with_weights(store: &mut ParamStore, name: &str, weight: Tensor) -> Result<Self> {
        let (cout, cin, kernel, _) = weight.dims4()?;
        let weight = store.insert(format!("{name}.weight"), weight)?;
        let bias = store.constant(format!("{name}.bias"), &[cout], 0.0)?;
        Ok(Conv2d {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: 1,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv::conv2d(x, &self.weight, self.padding, self.stride)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.out_channels, 1, 1))?)?)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.padding),
            conv_out(w, self.kernel, self.stride, self.padding),
        )
    }

    /// Multiply-accumulates counted twice plus one bias add per output value.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_size(h, w);
        let out = (oh * ow * self.out_channels) as u64;
        out * (2 * (self.in_channels * self.kernel * self.kernel) as u64 + 1)
    }
}

/// 4×4 stride-2 transposed convolution doubling the spatial size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    pub const KERNEL: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let k = Self::KERNEL;
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[cin, cout, k, k], bound)?;
        let bias = store.uniform(format!("{name}.bias"), &[cout], bound)?;
        Ok(ConvTranspose2d {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv::conv_transpose2d_x2(x, &self.weight)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.out_channels, 1, 1))?)?)
    }

    /// Input `h × w`; every input value scatters `k² · cout` products.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let k = Self::KERNEL;
        let macs = (h * w * self.in_channels * k * k * self.out_channels) as u64;
        2 * macs + (4 * h * w * self.out_channels) as u64
    }
}

/// `x + conv(lrelu(conv(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&leaky_relu(&self.conv1.forward(x)?)?)?;
        Ok((x + y)?)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let elems = (h * w * self.conv1.out_channels) as u64;
        self.conv1.flops(h, w) + self.conv2.flops(h, w) + 2 * elems
    }
}

/// Residual dense block: densely connected 3×3 layers, 1×1 local fusion, skip.
#[derive(Clone, Debug)]
pub struct ResidualDenseBlock {
    dense: Vec<Conv2d>,
    fuse: Conv2d,
    channels: usize,
}

impl ResidualDenseBlock {
    pub const LAYERS: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize, growth: usize) -> Result<Self> {
        let dense = (0..Self::LAYERS)
            .map(|i| {
                Conv2d::new(store, &format!("{name}.dense{i}"), channels + i * growth, growth, 3, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv2d::new(
            store,
            &format!("{name}.fuse"),
            channels + Self::LAYERS * growth,
            channels,
            1,
            1,
        )?;
        Ok(ResidualDenseBlock { dense, fuse, channels })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut feats = vec![x.clone()];
        for conv in &self.dense {
            let inp = Tensor::cat(&feats.iter().collect::<Vec<_>>(), 1)?;
            feats.push(leaky_relu(&conv.forward(&inp)?)?);
        }
        let all = Tensor::cat(&feats.iter().collect::<Vec<_>>(), 1)?;
        Ok((x + self.fuse.forward(&all)?)?)
    }

    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let dense: u64 = self
            .dense
            .iter()
            .map(|c| c.flops(h, w) + (h * w * c.out_channels) as u64)
            .sum();
        dense + self.fuse.flops(h, w) + (h * w * self.channels) as u64
    }
}

/// Bottom/right reflection padding so both spatial dims are multiples of `m`.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
    let mut y = x.clone();
    if ph > 0 {
        y = y.index_select(&reflect_index(h, ph, x.device())?, 2)?;
    }
    if pw > 0 {
        y = y.index_select(&reflect_index(w, pw, x.device())?, 3)?;
    }
    Ok(y)
}

fn reflect_index(n: usize, pad: usize, device: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (0..n + pad)
        .map(|i| {
            let mut j = i as i64;
            let last = n as i64 - 1;
            if last == 0 {
                return 0;
            }
            let period = 2 * last;
            j = j.rem_euclid(period);
            (if j > last { period - j } else { j }) as u32
        })
        .collect();
    Ok(Tensor::from_vec(idx, n + pad, device)?)
}

pub fn crop_to(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, xh, xw) = x.dims4()?;
    if xh == h && xw == w {
        return Ok(x.clone());
    }
    Ok(x.narrow(2, 0, h)?.narrow(3, 0, w)?)
}
