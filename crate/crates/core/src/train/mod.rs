//! Losses, the optimizer and the two training loops.
//!
//! The parameter net is trained first on ground-truth parameter maps and then
//! frozen. Restoration models are trained on random crops and flips of short
//! windows, supervising only the window's center frame.

pub mod adam;
pub mod loss;
pub mod vgg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::eval::metrics;
use crate::frame::Frame;
use crate::models::layers;
use crate::models::tensor::{frames_to_tensor, pmaps_to_tensor, tensor_to_frame};
use crate::models::{Checkpoint, CurvePoint, DparNet, ModelConfig, ParamNet, ParamNetConfig};
use crate::pmap::ParamMap;
use crate::rng;

pub use adam::Adam;
pub use loss::{perceptual_loss, pixel_loss, total_loss};
pub use vgg::{Vgg19Features, VggStage};

pub const LOG_FILE: &str = "train.log";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub crop: usize,
    /// Validate after every `val_every` epochs (and always after the last).
    pub val_every: usize,
    /// Frames per training window; the supervised frame is its center.
    pub window: usize,
    /// Pre-trained VGG-19 weights (safetensors); required when `alpha2 > 0`.
    pub vgg_weights: Option<PathBuf>,
    pub vgg_stage: VggStage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 100,
            alpha1: 1.0,
            alpha2: 0.05,
            batch_size: 4,
            seed: 0,
            crop: 256,
            val_every: 1,
            window: 7,
            vgg_weights: None,
            vgg_stage: VggStage::Relu3_3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return bad("alpha1 and alpha2 must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 || self.window == 0 {
            return bad("epochs, batch_size, val_every and window must be positive");
        }
        if self.crop < 8 || !self.crop.is_multiple_of(2) {
            return bad("crop must be an even size of at least 8");
        }
        Ok(())
    }

    fn is_val_epoch(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.val_every) || epoch == self.epochs
    }
}

/// Where restoration models get their parameter map from.
#[derive(Clone, Copy)]
pub enum ParamSource<'a> {
    /// No map; only valid for variants that do not need one.
    None,
    /// Ground-truth maps from the manifest.
    Oracle,
    /// Predictions of a trained, frozen parameter net.
    Net(&'a ParamNet),
}

impl ParamSource<'_> {
    /// Replaces the sample's map with a prediction when a net is given.
    pub fn apply(&self, sample: &mut Sample) -> Result<()> {
        if let ParamSource::Net(net) = self {
            sample.pmap = crate::models::param_net_forward(net, &sample.degraded, sample.pmap.kind)?;
        }
        Ok(())
    }
}

/// Loads every sample of a split with its center frame as target.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .ids(split)
        .iter()
        .map(|id| {
            let e = manifest.entry(id)?;
            data::load_sample(manifest, id, e.num_frames / 2)
        })
        .collect()
}

/// Validation samples, falling back to the training split when the
/// validation split is empty.
fn validation_samples(manifest: &DatasetManifest, train: &[Sample]) -> Result<Vec<Sample>> {
    let val = load_split(manifest, Split::Val)?;
    if val.is_empty() {
        log::warn!("validation split is empty, validating on the training split");
        return Ok(train.to_vec());
    }
    Ok(val)
}

/// Groups indices into batches of at most `size` whose samples share a shape.
fn batches(order: &[usize], samples: &[Sample], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in order {
        let key = (samples[i].degraded.shape(), samples[i].degraded.len());
        match out.last_mut() {
            Some(b)
                if b.len() < size
                    && (samples[b[0]].degraded.shape(), samples[b[0]].degraded.len()) == key =>
            {
                b.push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss} at epoch {epoch}")));
    }
    Ok(())
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Appends to `train.log` and rewrites `curve.csv` in `out`.
struct Recorder {
    out: Option<PathBuf>,
}

impl Recorder {
    fn new(out: Option<&Path>) -> Result<Self> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let log = dir.join(LOG_FILE);
            fs::write(&log, "").map_err(|e| Error::io(&log, e))?;
        }
        Ok(Recorder {
            out: out.map(Path::to_path_buf),
        })
    }

    fn line(&self, text: &str) -> Result<()> {
        log::info!("{text}");
        if let Some(dir) = &self.out {
            let path = dir.join(LOG_FILE);
            let mut f = fs::OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{text}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn curve(&self, curve: &[CurvePoint]) -> Result<()> {
        if let Some(dir) = &self.out {
            write_curve(&dir.join(CURVE_FILE), curve)?;
        }
        Ok(())
    }
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut text = String::from("epoch,loss,val_metric\n");
    for p in curve {
        let val = p.val_metric.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", p.epoch, p.loss, val));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a curve file written by [`write_curve`]. An empty curve is an error.
pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed curve row {line:?}", path.display(), i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        out.push(CurvePoint {
            epoch: cols[0].parse().map_err(|_| bad())?,
            loss: cols[1].parse().map_err(|_| bad())?,
            val_metric: if cols[2].is_empty() {
                None
            } else {
                Some(cols[2].parse().map_err(|_| bad())?)
            },
        });
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no curve rows", path.display())));
    }
    Ok(out)
}

/// Mean absolute error between predicted and true maps over `samples`.
pub fn param_mae(net: &ParamNet, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let p = crate::models::param_net_forward(net, &s.degraded, s.pmap.kind)?;
        let d: f64 = p
            .values()
            .iter()
            .zip(s.pmap.values())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        total += d / p.values().len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains the parameter prediction net with an L1 loss against the
/// ground-truth maps. Returns the best-validation checkpoint.
pub fn train_param_net(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    net_cfg: &ParamNetConfig,
    out: Option<&Path>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let train = load_split(manifest, Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let val = validation_samples(manifest, &train)?;
    let net = ParamNet::new(net_cfg.clone(), cfg.seed, DType::F32)?;
    let mut adam = Adam::new(cfg.lr);
    let rec = Recorder::new(out)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, _)> = None;

    for epoch in 1..=cfg.epochs {
        let epoch_seed = rng::mix(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(epoch_seed, 0x0da));
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in batches(&order, &train, cfg.batch_size) {
            let augmented: Vec<Sample> = batch
                .iter()
                .map(|&i| data::augment_with_crop(&train[i], rng::mix(epoch_seed, i as u64), cfg.crop))
                .collect::<Result<_>>()?;
            let seqs: Vec<_> = augmented.iter().map(|s| &s.degraded).collect();
            let x = ParamNet::mean_input(&seqs, DType::F32)?;
            let target = pmaps_to_tensor(&augmented.iter().map(|s| &s.pmap).collect::<Vec<_>>(), DType::F32)?;
            let loss = pixel_loss(&net.forward(&x)?, &target)?;
            let value = scalar(&loss)?;
            check_finite(value, epoch)?;
            adam.step(&net.store, &loss.backward()?)?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let loss = sum / count as f64;
        let val_metric = if cfg.is_val_epoch(epoch) { Some(param_mae(&net, &val)?) } else { None };
        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, net.store.snapshot()?));
            }
        }
        curve.push(CurvePoint { epoch, loss, val_metric });
        rec.line(&format!(
            "param_net epoch {epoch} loss {loss:.6} val_mae {}",
            val_metric.map_or("-".into(), |v| format!("{v:.6}"))
        ))?;
        rec.curve(&curve)?;
    }

    let (_, best_epoch, weights) = best.expect("last epoch always validates");
    let mut ck = Checkpoint::from_param_net(&net, Some(manifest.task), cfg.seed)?;
    ck.weights = weights;
    ck.epoch = best_epoch;
    ck.optimizer_state = Some(adam.state());
    ck.train_curve = curve;
    if let Some(dir) = out {
        ck.save(dir)?;
    }
    Ok(ck)
}

/// Restores the target frame of `sample` at full resolution, clamped.
pub fn restore_target(net: &DparNet, sample: &Sample) -> Result<Frame> {
    let (h, w, _) = sample.degraded.shape();
    let frames: Vec<Tensor> = sample
        .degraded
        .frames()
        .iter()
        .map(|f| layers::pad_to_multiple(&frames_to_tensor(&[f], DType::F32)?, 2))
        .collect::<Result<_>>()?;
    let p = layers::pad_to_multiple(&pmaps_to_tensor(&[&sample.pmap], DType::F32)?, 2)?;
    let y = net.forward(&frames, Some(&p), &[sample.target_index], false)?.remove(0);
    let mut f = tensor_to_frame(&layers::crop_to(&y, h, w)?)?;
    f.clamp01();
    Ok(f)
}

/// Mean PSNR of the restored target frames over `samples`.
pub fn validation_psnr(net: &DparNet, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let y = restore_target(net, s)?;
        total += metrics::psnr(&y, &s.clean.frames()[s.target_index])?;
    }
    Ok(total / samples.len().max(1) as f64)
}

fn training_batch(
    samples: &[&Sample],
    window: usize,
    r: &mut impl Rng,
) -> Result<(Vec<Tensor>, Tensor, Tensor, usize)> {
    let t = samples[0].degraded.len();
    let len = window.min(t);
    let start = r.random_range(0..=t - len);
    let target = len / 2;
    let frames = (0..len)
        .map(|k| {
            let fs: Vec<&Frame> = samples.iter().map(|s| &s.degraded.frames()[start + k]).collect();
            frames_to_tensor(&fs, DType::F32)
        })
        .collect::<Result<Vec<_>>>()?;
    let gt: Vec<&Frame> = samples.iter().map(|s| &s.clean.frames()[start + target]).collect();
    let maps: Vec<&ParamMap> = samples.iter().map(|s| &s.pmap).collect();
    Ok((
        frames,
        pmaps_to_tensor(&maps, DType::F32)?,
        frames_to_tensor(&gt, DType::F32)?,
        target,
    ))
}

/// Trains one restoration variant. The parameter net, when used, stays
/// frozen. Returns the best-validation checkpoint.
pub fn train_dparnet(
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    param: ParamSource,
    out: Option<&Path>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    model_cfg.validate()?;
    let variant = model_cfg.variant;
    if variant.needs_param() && matches!(param, ParamSource::None) {
        return Err(Error::Config(format!(
            "variant {variant} needs a parameter checkpoint or oracle parameter maps"
        )));
    }
    let vgg = if cfg.alpha2 > 0.0 {
        let path = cfg.vgg_weights.as_ref().ok_or_else(|| {
            Error::Config("alpha2 > 0 needs vgg_weights pointing at pre-trained VGG-19 weights".into())
        })?;
        Some(Vgg19Features::load(path, cfg.vgg_stage, DType::F32)?)
    } else {
        None
    };

    let mut train = load_split(manifest, Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut val = validation_samples(manifest, &train)?;
    if let Some(s) = train.first() {
        if s.degraded.channels() != model_cfg.in_channels {
            return Err(Error::Config(format!(
                "dataset has {} channels, model expects {}",
                s.degraded.channels(),
                model_cfg.in_channels
            )));
        }
    }
    for s in train.iter_mut().chain(val.iter_mut()) {
        param.apply(s)?;
    }

    let net = DparNet::new(model_cfg.clone(), cfg.seed, DType::F32)?;
    let mut adam = Adam::new(cfg.lr);
    let rec = Recorder::new(out)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, _)> = None;

    for epoch in 1..=cfg.epochs {
        let epoch_seed = rng::mix(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut r = rng::stream(epoch_seed, 0xd9a);
        order.shuffle(&mut r);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in batches(&order, &train, cfg.batch_size) {
            let augmented: Vec<Sample> = batch
                .iter()
                .map(|&i| data::augment_with_crop(&train[i], rng::mix(epoch_seed, i as u64), cfg.crop))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (frames, pmap, gt, target) = training_batch(&refs, cfg.window, &mut r)?;
            let pred = net.forward(&frames, Some(&pmap), &[target], true)?.remove(0);
            let loss = total_loss(&pred, &gt, cfg.alpha1, cfg.alpha2, vgg.as_ref())?;
            let value = scalar(&loss)?;
            check_finite(value, epoch)?;
            adam.step(&net.store, &loss.backward()?)?;
            sum += value * batch.len() as f64;
            count += batch.len();
        }
        let loss = sum / count as f64;
        let val_metric = if cfg.is_val_epoch(epoch) { Some(validation_psnr(&net, &val)?) } else { None };
        if let Some(v) = val_metric {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, net.store.snapshot()?));
            }
        }
        curve.push(CurvePoint { epoch, loss, val_metric });
        rec.line(&format!(
            "{variant} epoch {epoch} loss {loss:.6} val_psnr {}",
            val_metric.map_or("-".into(), |v| format!("{v:.4}"))
        ))?;
        rec.curve(&curve)?;
    }

    let (_, best_epoch, weights) = best.expect("last epoch always validates");
    let mut ck = Checkpoint::from_dparnet(&net, Some(manifest.task), cfg.seed)?;
    ck.weights = weights;
    ck.epoch = best_epoch;
    ck.optimizer_state = Some(adam.state());
    ck.train_curve = curve;
    if let Some(dir) = out {
        ck.save(dir)?;
    }
    Ok(ck)
}

