//! Deep model: bidirectional recurrent feature extractor and the
//! five-frame reconstructor.
//!
//! The recurrence runs at half resolution. Each direction keeps a hidden
//! state `h_t = RDBs(lrelu(conv(cat(feat(I_t), h_{t∓1}))))`; per-frame
//! features are `F_t = conv1x1(cat(h_t^fwd, h_t^bwd))`.

use candle_core::Tensor;

use super::layers::{self, Conv2d, ConvTranspose2d, ParamStore, ResBlock, ResidualDenseBlock};
use crate::error::{Error, Result};

/// Number of feature maps fused per restored frame.
pub const FUSION_WINDOW: usize = 5;

struct Cell {
    merge: Conv2d,
    rdbs: Vec<ResidualDenseBlock>,
}

impl Cell {
    fn new(store: &mut ParamStore, name: &str, base: usize, rdb_count: usize, growth: usize) -> Result<Self> {
        Ok(Cell {
            merge: Conv2d::new(store, &format!("{name}.merge"), 2 * base, base, 3, 1)?,
            rdbs: (0..rdb_count)
                .map(|i| ResidualDenseBlock::new(store, &format!("{name}.rdb{i}"), base, growth))
                .collect::<Result<_>>()?,
        })
    }

    fn step(&self, feat: &Tensor, hidden: &Tensor) -> Result<Tensor> {
        let mut h = layers::leaky_relu(&self.merge.forward(&Tensor::cat(&[feat, hidden], 1)?)?)?;
        for rdb in &self.rdbs {
            h = rdb.forward(&h)?;
        }
        Ok(h)
    }

    fn flops(&self, h: usize, w: usize) -> u64 {
        let elems = (h * w * self.merge.out_channels) as u64;
        self.merge.flops(h, w) + elems + self.rdbs.iter().map(|r| r.flops(h, w)).sum::<u64>()
    }
}

pub struct Brnn {
    feat: Conv2d,
    fwd: Cell,
    bwd: Cell,
    fuse: Conv2d,
    base: usize,
}

impl Brnn {
    pub fn new(
        store: &mut ParamStore,
        in_channels: usize,
        base: usize,
        rdb_count: usize,
        growth: usize,
    ) -> Result<Self> {
        Ok(Brnn {
            feat: Conv2d::new(store, "brnn.feat", in_channels, base, 3, 2)?,
            fwd: Cell::new(store, "brnn.fwd", base, rdb_count, growth)?,
            bwd: Cell::new(store, "brnn.bwd", base, rdb_count, growth)?,
            fuse: Conv2d::new(store, "brnn.fuse", 2 * base, base, 1, 1)?,
            base,
        })
    }

    /// `frames[t]`: `(B, C_in, H, W)` with even `H, W`. Returns one
    /// `(B, base, H/2, W/2)` feature map per frame. With `track = false`
    /// hidden states are detached after every step.
    pub fn extract(&self, frames: &[Tensor], track: bool) -> Result<Vec<Tensor>> {
        let t_len = frames.len();
        if t_len == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        let b = frames[0].dim(0)?;
        let stacked = Tensor::cat(&frames.iter().collect::<Vec<_>>(), 0)?;
        let feats = layers::leaky_relu(&self.feat.forward(&stacked)?)?;
        let feats: Vec<Tensor> = (0..t_len)
            .map(|t| feats.narrow(0, t * b, b))
            .collect::<candle_core::Result<_>>()?;
        let feats: Vec<Tensor> = if track { feats } else { feats.into_iter().map(|f| f.detach()).collect() };

        let zero = feats[0].zeros_like()?;
        let mut fwd = Vec::with_capacity(t_len);
        let mut h = zero.clone();
        for f in &feats {
            h = self.fwd.step(f, &h)?;
            if !track {
                h = h.detach();
            }
            fwd.push(h.clone());
        }
        let mut bwd = vec![zero.clone(); t_len];
        let mut g = zero;
        for t in (0..t_len).rev() {
            g = self.bwd.step(&feats[t], &g)?;
            if !track {
                g = g.detach();
            }
            bwd[t] = g.clone();
        }

        let pairs: Vec<Tensor> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| Tensor::cat(&[f, b], 1))
            .collect::<candle_core::Result<_>>()?;
        let fused = self.fuse.forward(&Tensor::cat(&pairs.iter().collect::<Vec<_>>(), 0)?)?;
        Ok((0..t_len)
            .map(|t| fused.narrow(0, t * b, b))
            .collect::<candle_core::Result<_>>()?)
    }

    pub fn base_channels(&self) -> usize {
        self.base
    }

    /// Per-frame cost at input size `h × w`.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (hh, hw) = self.feat.out_size(h, w);
        let half = (hh * hw * self.base) as u64;
        self.feat.flops(h, w) + half + self.fwd.flops(hh, hw) + self.bwd.flops(hh, hw) + self.fuse.flops(hh, hw)
    }
}

/// Neighbour indices `t-2 ..= t+2`, replicating the nearest valid frame at the ends.
pub fn fusion_indices(t: usize, len: usize) -> [usize; FUSION_WINDOW] {
    let half = (FUSION_WINDOW / 2) as i64;
    let mut out = [0; FUSION_WINDOW];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (t as i64 + k as i64 - half).clamp(0, len as i64 - 1) as usize;
    }
    out
}

pub struct Reconstructor {
    fuse: Conv2d,
    res: [ResBlock; 2],
    up: ConvTranspose2d,
    out: Conv2d,
    base: usize,
}

impl Reconstructor {
    pub fn new(store: &mut ParamStore, base: usize, out_channels: usize) -> Result<Self> {
        Ok(Reconstructor {
            fuse: Conv2d::new(store, "rc.fuse", FUSION_WINDOW * base, base, 3, 1)?,
            res: [ResBlock::new(store, "rc.res0", base)?, ResBlock::new(store, "rc.res1", base)?],
            up: ConvTranspose2d::new(store, "rc.up", base, base)?,
            out: Conv2d::new(store, "rc.out", base, out_channels, 3, 1)?,
            base,
        })
    }

    /// Five neighbouring feature maps → full-resolution residual.
    pub fn forward(&self, feats: &[&Tensor]) -> Result<Tensor> {
        if feats.len() != FUSION_WINDOW {
            return Err(Error::InvalidArgument(format!(
                "reconstructor fuses exactly {FUSION_WINDOW} feature maps, got {}",
                feats.len()
            )));
        }
        let mut x = layers::leaky_relu(&self.fuse.forward(&Tensor::cat(feats, 1)?)?)?;
        for r in &self.res {
            x = r.forward(&x)?;
        }
        x = layers::leaky_relu(&self.up.forward(&x)?)?;
        self.out.forward(&x)
    }

    /// Cost of one target frame at full-resolution `h × w`.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (hh, hw) = (h.div_ceil(2), w.div_ceil(2));
        let half = (hh * hw * self.base) as u64;
        let full = (4 * hh * hw * self.base) as u64;
        self.fuse.flops(hh, hw)
            + half
            + self.res.iter().map(|r| r.flops(hh, hw)).sum::<u64>()
            + self.up.flops(hh, hw)
            + full
            + self.out.flops(2 * hh, 2 * hw)
    }
}
