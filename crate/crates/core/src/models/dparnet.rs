//! The wide & deep restoration network and its ablation variants.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::deep::{fusion_indices, Brnn, Reconstructor, FUSION_WINDOW};
use super::layers::{self, ParamStore};
use super::param_net::{param_net_forward, ParamNet};
use super::tensor;
use super::wide::{Merge, WideModel};
use crate::error::{Error, Result};
use crate::frame::{Sequence, MIN_MODEL_SIZE};
use crate::pmap::{DegradationKind, ParamMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Deep branch plus wide branch fed with the parameter map.
    Full,
    /// Deep branch only.
    V1DeepOnly,
    /// Deep branch with the parameter map as an extra input channel.
    V2ParamAsInput,
    /// Full architecture, parameter map replaced by ones.
    V3WideNoParam,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::V1DeepOnly,
        Variant::V2ParamAsInput,
        Variant::V3WideNoParam,
    ];

    pub fn has_wide(self) -> bool {
        matches!(self, Variant::Full | Variant::V3WideNoParam)
    }

    /// Whether a real parameter map must be supplied.
    pub fn needs_param(self) -> bool {
        matches!(self, Variant::Full | Variant::V2ParamAsInput)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V1DeepOnly => "v1_deep_only",
            Variant::V2ParamAsInput => "v2_param_as_input",
            Variant::V3WideNoParam => "v3_wide_no_param",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the full names and the short forms `v1`, `v2`, `v3`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "v1" | "v1_deep_only" => Variant::V1DeepOnly,
            "v2" | "v2_param_as_input" => Variant::V2ParamAsInput,
            "v3" | "v3_wide_no_param" => Variant::V3WideNoParam,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub rdb_count: usize,
    pub rdb_growth: usize,
    pub wide_channels: usize,
    pub fusion_window: usize,
    pub in_channels: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 64,
            rdb_count: 2,
            rdb_growth: 32,
            wide_channels: 8,
            fusion_window: FUSION_WINDOW,
            in_channels: 1,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fusion_window != FUSION_WINDOW {
            return Err(Error::Config(format!(
                "fusion_window must be {FUSION_WINDOW}, got {}",
                self.fusion_window
            )));
        }
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(Error::Config(format!("in_channels must be 1 or 3, got {}", self.in_channels)));
        }
        if self.base_channels == 0 || self.rdb_growth == 0 || self.wide_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

pub struct DparNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    brnn: Brnn,
    recon: Reconstructor,
    wide: Option<(WideModel, Merge)>,
}

impl DparNet {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new(seed, dtype);
        let c = config.in_channels;
        let deep_in = if config.variant == Variant::V2ParamAsInput { c + 1 } else { c };
        let brnn = Brnn::new(&mut s, deep_in, config.base_channels, config.rdb_count, config.rdb_growth)?;
        let recon = Reconstructor::new(&mut s, config.base_channels, c)?;
        let wide = if config.variant.has_wide() {
            Some((WideModel::new(&mut s, c, config.wide_channels)?, Merge::new(&mut s, c)?))
        } else {
            None
        };
        Ok(DparNet {
            config,
            store: s,
            brnn,
            recon,
            wide,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Restores the frames at `targets` from a window of degraded frames.
    ///
    /// `frames[t]` is `(B, C, H, W)` with even `H, W`; `pmap` is `(B, 1, H, W)`.
    /// Outputs are unclamped. With `track = false` intermediate results are
    /// detached as soon as possible, which bounds inference memory.
    pub fn forward(&self, frames: &[Tensor], pmap: Option<&Tensor>, targets: &[usize], track: bool) -> Result<Vec<Tensor>> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty sequence".into()))?;
        let (b, c, h, w) = first.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, input has {c}",
                self.config.in_channels
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("tensor-level forward needs even sizes, got {h}x{w}")));
        }
        let dtype = self.store.dtype();
        let frames: Vec<Tensor> = frames.iter().map(|f| f.to_dtype(dtype)).collect::<candle_core::Result<_>>()?;

        let pmap = match self.config.variant {
            Variant::V1DeepOnly => None,
            Variant::V3WideNoParam => Some(Tensor::ones((b, 1, h, w), dtype, first.device())?),
            Variant::Full | Variant::V2ParamAsInput => {
                let p = pmap.ok_or_else(|| {
                    Error::Config(format!("variant {} needs a parameter map", self.config.variant))
                })?;
                Some(p.to_dtype(dtype)?)
            }
        };
        if let Some(p) = &pmap {
            if p.dims() != [b, 1, h, w] {
                return Err(Error::Shape(format!(
                    "parameter map {:?} does not match frames {:?}",
                    p.dims(),
                    first.dims()
                )));
            }
        }

        let deep_in: Vec<Tensor> = match (&pmap, self.config.variant) {
            (Some(p), Variant::V2ParamAsInput) => frames
                .iter()
                .map(|f| Tensor::cat(&[f, p], 1))
                .collect::<candle_core::Result<_>>()?,
            _ => frames.clone(),
        };
        let mut feats = self.brnn.extract(&deep_in, track)?;
        if !track {
            feats = feats.into_iter().map(|f| f.detach()).collect();
        }

        let mut out = Vec::with_capacity(targets.len());
        for &t in targets {
            if t >= frames.len() {
                return Err(Error::InvalidArgument(format!("target {t} outside {} frames", frames.len())));
            }
            let idx = fusion_indices(t, frames.len());
            let refs: Vec<&Tensor> = idx.iter().map(|&i| &feats[i]).collect();
            let target = &frames[t];
            let y1 = (target + self.recon.forward(&refs)?)?;
            let y = match (&self.wide, &pmap) {
                (Some((wide, merge)), Some(p)) => {
                    let y2 = (target + wide.forward(target, p)?)?;
                    merge.forward(&y1, &y2)?
                }
                _ => y1,
            };
            out.push(if track { y } else { y.detach() });
        }
        Ok(out)
    }

    /// Restores every frame of `degraded`, clamping to `[0, 1]`.
    ///
    /// Odd sizes are reflect-padded to even and cropped back.
    pub fn restore(&self, degraded: &Sequence, pmap: Option<&ParamMap>) -> Result<Sequence> {
        let (h, w, _) = degraded.shape();
        let dtype = self.store.dtype();
        let frames: Vec<Tensor> = degraded
            .frames()
            .iter()
            .map(|f| layers::pad_to_multiple(&tensor::frames_to_tensor(&[f], dtype)?, 2))
            .collect::<Result<_>>()?;
        let p = match pmap {
            Some(m) => {
                m.check_matches(&degraded.frames()[0])?;
                Some(layers::pad_to_multiple(&tensor::pmaps_to_tensor(&[m], dtype)?, 2)?)
            }
            None => None,
        };
        let targets: Vec<usize> = (0..degraded.len()).collect();
        let ys = self.forward(&frames, p.as_ref(), &targets, false)?;
        let restored = ys
            .iter()
            .map(|y| {
                let mut f = tensor::tensor_to_frame(&layers::crop_to(y, h, w)?)?;
                f.clamp01();
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seq = Sequence::new(degraded.id.clone(), restored)?;
        seq.frame_rate = degraded.frame_rate;
        Ok(seq)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// Analytic cost of restoring one `h × w` frame.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let mut total = self.brnn.flops(h, w) + self.recon.flops(h, w);
        let (hh, hw) = (h.div_ceil(2) * 2, w.div_ceil(2) * 2);
        let c = self.config.in_channels as u64;
        // residual add of the deep branch
        total += hh as u64 * hw as u64 * c;
        if let Some((wide, merge)) = &self.wide {
            total += wide.flops(hh, hw) + hh as u64 * hw as u64 * c + merge.flops(hh, hw);
        }
        total
    }
}

/// Output of [`dparnet_forward`]: the restored sequence and the parameter map
/// that was fed to the network (`None` for the deep-only variant).
pub struct Restoration {
    pub restored: Sequence,
    pub pmap: Option<ParamMap>,
}

/// Two-stage inference: predicts the parameter map with the frozen
/// parameter net when none is given, then restores every frame.
pub fn dparnet_forward(
    net: &DparNet,
    degraded: &Sequence,
    pmap: Option<&ParamMap>,
    param_net: Option<&ParamNet>,
    kind: DegradationKind,
) -> Result<Restoration> {
    let (h, w, _) = degraded.shape();
    if h < MIN_MODEL_SIZE || w < MIN_MODEL_SIZE {
        return Err(Error::InvalidArgument(format!(
            "frames of {h}x{w} are below the {MIN_MODEL_SIZE}x{MIN_MODEL_SIZE} model minimum"
        )));
    }
    let used = match net.variant() {
        Variant::V1DeepOnly => None,
        Variant::V3WideNoParam => Some(ParamMap::constant(h, w, 1.0, kind)?),
        Variant::Full | Variant::V2ParamAsInput => match (pmap, param_net) {
            (Some(m), _) => Some(m.clone()),
            (None, Some(pn)) => Some(param_net_forward(pn, degraded, kind)?),
            (None, None) => {
                return Err(Error::Config(format!(
                    "variant {} needs a parameter map or a parameter net",
                    net.variant()
                )))
            }
        },
    };
    let restored = net.restore(degraded, used.as_ref())?;
    Ok(Restoration { restored, pmap: used })
}

pub fn count_params(net: &DparNet) -> usize {
    net.num_params()
}

pub fn count_flops(net: &DparNet, h: usize, w: usize) -> u64 {
    net.flops(h, w)
}
