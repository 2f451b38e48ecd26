//! Quality metrics, temporal profiles, efficiency benchmarking and reports.

pub mod metrics;
pub mod report;

use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Tensor};

use crate::data::{self, DatasetManifest, Split, Task};
use crate::error::{Error, Result};
use crate::frame::{self, Frame, Sequence};
use crate::models::{self, Checkpoint, DparNet, ModelConfig, ParamNet};
use crate::pmap::ParamMap;

pub use metrics::{nrmse, psnr, row_to_row_diff, ssim, temporal_profile, vi};
pub use report::{AblationReport, AblationRow, Aggregate, EfficiencyReport, MetricsReport, SequenceMetrics};

/// Standard benchmark shape: 256×256, 3 channels.
pub const BENCH_SIZE: usize = 256;
pub const BENCH_CHANNELS: usize = 3;
pub const BENCH_ROUNDS: usize = 100;
pub const BENCH_WARMUP: usize = 10;

/// Something that maps a degraded sequence (plus its ground-truth map) to a
/// restored one.
#[allow(clippy::large_enum_variant)]
pub enum Restorer {
    /// Returns the input unchanged.
    Identity,
    Model {
        net: DparNet,
        /// Frozen parameter net; when absent the ground-truth map is used.
        param_net: Option<ParamNet>,
        task: Option<Task>,
    },
}

impl Restorer {
    /// Loads a restoration checkpoint and an optional parameter checkpoint.
    pub fn from_checkpoints(model: &Checkpoint, param: Option<&Checkpoint>) -> Result<Self> {
        if let (Some(a), Some(b)) = (model.task, param.and_then(|p| p.task)) {
            if a != b {
                return Err(Error::Config(format!("restoration checkpoint is for {a}, parameter checkpoint for {b}")));
            }
        }
        Ok(Restorer::Model {
            net: model.dparnet()?,
            param_net: param.map(Checkpoint::param_net).transpose()?,
            task: model.task,
        })
    }

    pub fn restore(&self, degraded: &Sequence, truth: &ParamMap) -> Result<Sequence> {
        match self {
            Restorer::Identity => Ok(degraded.clone()),
            Restorer::Model { net, param_net, .. } => {
                let pmap = if param_net.is_some() { None } else { Some(truth) };
                Ok(models::dparnet_forward(net, degraded, pmap, param_net.as_ref(), truth.kind)?.restored)
            }
        }
    }

    fn task(&self) -> Option<Task> {
        match self {
            Restorer::Identity => None,
            Restorer::Model { task, .. } => *task,
        }
    }
}

/// All four metrics for one sequence, averaged over its frames.
pub fn sequence_metrics(restored: &Sequence, clean: &Sequence) -> Result<SequenceMetrics> {
    if restored.len() != clean.len() {
        return Err(Error::Shape(format!("{} restored frames vs {} clean", restored.len(), clean.len())));
    }
    let mut m = SequenceMetrics {
        seq_id: clean.id.clone(),
        psnr: 0.0,
        ssim: 0.0,
        nrmse: 0.0,
        vi: 0.0,
    };
    for (r, c) in restored.frames().iter().zip(clean.frames()) {
        m.psnr += psnr(r, c)?;
        m.ssim += ssim(r, c)?;
        m.nrmse += nrmse(r, c)?;
        m.vi += vi(r, c)?;
    }
    let n = clean.len() as f64;
    m.psnr /= n;
    m.ssim /= n;
    m.nrmse /= n;
    m.vi /= n;
    Ok(m)
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Identifier written into the report.
    pub model_id: String,
    /// Report timestamp (seconds since the Unix epoch).
    pub timestamp: u64,
    /// Also write restored PNGs and profiles under `out/restored/<seq_id>/`.
    pub save_restored: bool,
    /// Column for temporal-profile images of degraded, restored and clean data.
    pub profile_column: Option<usize>,
}

/// Restores every sequence of `split` and scores it against the clean data.
/// When `out` is given, the report (and optional images) are written there.
pub fn evaluate(
    restorer: &Restorer,
    manifest: &DatasetManifest,
    split: Split,
    opts: &EvalOptions,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    if let Some(task) = restorer.task() {
        if task != manifest.task {
            return Err(Error::Config(format!("model trained for {task}, dataset is {}", manifest.task)));
        }
    }
    let ids = manifest.ids(split);
    if ids.is_empty() {
        return Err(Error::Config(format!("split {split:?} is empty")));
    }
    let mut rows = Vec::with_capacity(ids.len());
    for id in &ids {
        let sample = data::load_sample(manifest, id, 0)?;
        let restored = restorer.restore(&sample.degraded, &sample.pmap)?;
        rows.push(sequence_metrics(&restored, &sample.clean)?);
        if let Some(dir) = out {
            let seq_dir = dir.join("restored").join(id);
            if opts.save_restored {
                frame::save_sequence(&restored, &seq_dir)?;
            }
            if let Some(col) = opts.profile_column {
                let profiles = [("degraded", &sample.degraded), ("restored", &restored), ("clean", &sample.clean)];
                let prof_dir = dir.join("profiles").join(id);
                std::fs::create_dir_all(&prof_dir).map_err(|e| Error::io(&prof_dir, e))?;
                for (name, seq) in profiles {
                    let p = temporal_profile(seq, col)?;
                    frame::save_frame(&p, prof_dir.join(format!("{name}_col{col:05}.png")))?;
                }
            }
        }
    }
    let report = MetricsReport::new(manifest.task, &opts.model_id, opts.timestamp, rows);
    if let Some(dir) = out {
        report.write(dir)?;
    }
    Ok(report)
}

/// Mean row-to-row profile difference of a sequence at one column.
pub fn temporal_instability(seq: &Sequence, column: usize) -> Result<f64> {
    Ok(row_to_row_diff(&temporal_profile(seq, column)?))
}

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    pub size: usize,
    pub rounds: usize,
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            size: BENCH_SIZE,
            rounds: BENCH_ROUNDS,
            warmup: BENCH_WARMUP,
        }
    }
}

/// Parameter count of the model as configured; FLOPs and wall time of a
/// twin with the same architecture at `size × size × 3`.
///
/// One timed round restores every frame of a five-frame window; the
/// reported time is per frame, matching the per-frame FLOP count.
pub fn benchmark_efficiency(config: &ModelConfig, opts: BenchOptions) -> Result<EfficiencyReport> {
    if opts.rounds == 0 {
        return Err(Error::Config("benchmark needs at least one round".into()));
    }
    let net = DparNet::new(config.clone(), 0, DType::F32)?;
    let params = models::count_params(&net);
    let twin = if config.in_channels == BENCH_CHANNELS {
        net
    } else {
        DparNet::new(ModelConfig { in_channels: BENCH_CHANNELS, ..config.clone() }, 0, DType::F32)?
    };
    let s = opts.size;
    let flops = models::count_flops(&twin, s, s);
    let dev = twin.store.device().clone();
    let frames: Vec<Tensor> = (0..models::deep::FUSION_WINDOW)
        .map(|_| Tensor::rand(0f32, 1.0, (1, BENCH_CHANNELS, s, s), &dev))
        .collect::<candle_core::Result<_>>()?;
    let pmap = Tensor::rand(0f32, 1.0, (1, 1, s, s), &dev)?;
    let targets: Vec<usize> = (0..frames.len()).collect();
    let run = || twin.forward(&frames, Some(&pmap), &targets, false);
    for _ in 0..opts.warmup {
        run()?;
    }
    let start = Instant::now();
    for _ in 0..opts.rounds {
        run()?;
    }
    let time_s = start.elapsed().as_secs_f64() / (opts.rounds * frames.len()) as f64;
    Ok(EfficiencyReport {
        variant: config.variant,
        params_millions: params as f64 / 1e6,
        flops_e10: flops as f64 / 1e10,
        time_s,
        rounds: opts.rounds,
        height: s,
        width: s,
        channels: BENCH_CHANNELS,
    })
}

/// Frame-level metric helper used by examples: scores a single pair.
pub fn frame_metrics(pred: &Frame, gt: &Frame) -> Result<[f64; 4]> {
    Ok([psnr(pred, gt)?, ssim(pred, gt)?, nrmse(pred, gt)?, vi(pred, gt)?])
}
