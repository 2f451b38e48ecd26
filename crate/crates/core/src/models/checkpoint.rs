//! Checkpoint directories.
//!
//! ```text
//! <dir>/checkpoint.json         config, epoch, task, training curve
//! <dir>/weights/<name>.bin      one array per trainable weight
//! <dir>/optimizer/<name>.bin    optimizer moments (optional)
//! ```
//!
//! Array file layout (little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `WARR`                   |
//! | 4      | 1    | version (1)                    |
//! | 5      | 1    | dtype (0 = f32)                |
//! | 6      | 2    | reserved, zero                 |
//! | 8      | 4    | name length `n` (u32)          |
//! | 12     | n    | name, UTF-8                    |
//! | 12+n   | 4    | rank `r` (u32)                 |
//! | 16+n   | 4·r  | dims (u32 each)                |
//! | …      | 4·N  | values (f32), row-major        |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::dparnet::{DparNet, ModelConfig};
use super::param_net::{ParamNet, ParamNetConfig};
use crate::data::Task;
use crate::error::{Error, Result};

pub const ARRAY_MAGIC: &[u8; 4] = b"WARR";
pub const ARRAY_VERSION: u8 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Architecture description stored with the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NetConfig {
    Dparnet(ModelConfig),
    ParamNet(ParamNetConfig),
}

/// One row of a training curve: mean train loss and the validation metric
/// (PSNR in dB for restoration, mean absolute error for the parameter net),
/// absent on epochs without validation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
}

/// Optimizer state. Opaque to everything except the optimizer that wrote it.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub task: Option<Task>,
    pub seed: u64,
    pub epoch: usize,
    pub weights: BTreeMap<String, Tensor>,
    pub optimizer_state: Option<OptimizerState>,
    pub train_curve: Vec<CurvePoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: NetConfig,
    task: Option<Task>,
    seed: u64,
    epoch: usize,
    optimizer_step: Option<u64>,
    train_curve: Vec<CurvePoint>,
}

impl Checkpoint {
    pub fn from_dparnet(net: &DparNet, task: Option<Task>, seed: u64) -> Result<Self> {
        Ok(Checkpoint {
            config: NetConfig::Dparnet(net.config.clone()),
            task,
            seed,
            epoch: 0,
            weights: net.store.snapshot()?,
            optimizer_state: None,
            train_curve: Vec::new(),
        })
    }

    pub fn from_param_net(net: &ParamNet, task: Option<Task>, seed: u64) -> Result<Self> {
        Ok(Checkpoint {
            config: NetConfig::ParamNet(net.config.clone()),
            task,
            seed,
            epoch: 0,
            weights: net.store.snapshot()?,
            optimizer_state: None,
            train_curve: Vec::new(),
        })
    }

    /// Builds the network described by the config and loads the weights,
    /// failing on any name or shape mismatch.
    pub fn dparnet(&self) -> Result<DparNet> {
        match &self.config {
            NetConfig::Dparnet(cfg) => {
                let net = DparNet::new(cfg.clone(), self.seed, DType::F32)?;
                net.store.load(&self.weights)?;
                Ok(net)
            }
            NetConfig::ParamNet(_) => Err(Error::Config("checkpoint holds a parameter net, not a restoration model".into())),
        }
    }

    pub fn param_net(&self) -> Result<ParamNet> {
        match &self.config {
            NetConfig::ParamNet(cfg) => {
                let net = ParamNet::new(cfg.clone(), self.seed, DType::F32)?;
                net.store.load(&self.weights)?;
                Ok(net)
            }
            NetConfig::Dparnet(_) => Err(Error::Config("checkpoint holds a restoration model, not a parameter net".into())),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let weights_dir = dir.join("weights");
        fs::create_dir_all(&weights_dir).map_err(|e| Error::io(&weights_dir, e))?;
        write_arrays(&weights_dir, &self.weights)?;
        if let Some(state) = &self.optimizer_state {
            let opt_dir = dir.join("optimizer");
            fs::create_dir_all(&opt_dir).map_err(|e| Error::io(&opt_dir, e))?;
            write_arrays(&opt_dir, &state.tensors)?;
        }
        let meta = Meta {
            config: self.config.clone(),
            task: self.task,
            seed: self.seed,
            epoch: self.epoch,
            optimizer_step: self.optimizer_state.as_ref().map(|s| s.step),
            train_curve: self.train_curve.clone(),
        };
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: Meta = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let weights = read_arrays(&dir.join("weights"))?;
        let optimizer_state = match meta.optimizer_step {
            Some(step) => Some(OptimizerState {
                step,
                tensors: read_arrays(&dir.join("optimizer"))?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            config: meta.config,
            task: meta.task,
            seed: meta.seed,
            epoch: meta.epoch,
            weights,
            optimizer_state,
            train_curve: meta.train_curve,
        })
    }
}

fn write_arrays(dir: &Path, arrays: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, t) in arrays {
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, encode_array(name, t)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_arrays(dir: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    for path in paths {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (name, t) = decode_array(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        out.insert(name, t);
    }
    Ok(out)
}

pub fn encode_array(name: &str, t: &Tensor) -> Result<Vec<u8>> {
    let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let mut buf = Vec::with_capacity(16 + name.len() + 4 * t.rank() + 4 * values.len());
    buf.extend_from_slice(ARRAY_MAGIC);
    buf.push(ARRAY_VERSION);
    buf.push(0);
    buf.extend_from_slice(&[0, 0]);
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<(String, Tensor), String> {
    let mut pos = 0;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated array file")?;
        pos += n;
        Ok(s)
    };
    if take(4)? != ARRAY_MAGIC {
        return Err("bad magic, expected \"WARR\"".into());
    }
    let head = take(4)?;
    if head[0] != ARRAY_VERSION || head[1] != 0 {
        return Err(format!("unsupported version {} / dtype {}", head[0], head[1]));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let name_len = u32_at(take(4)?);
    let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|e| e.to_string())?;
    let rank = u32_at(take(4)?);
    let dims: Vec<usize> = (0..rank).map(|_| take(4).map(u32_at)).collect::<std::result::Result<_, _>>()?;
    let n: usize = dims.iter().product();
    let data = take(4 * n)?;
    let values: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if pos != bytes.len() {
        return Err("trailing bytes after array data".into());
    }
    let t = Tensor::from_vec(values, dims, &Device::Cpu).map_err(|e| e.to_string())?;
    Ok((name, t))
}
