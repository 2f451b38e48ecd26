#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use dparnet::data::{self, BuildOptions, CorpusSpec, DatasetManifest, Task};
use dparnet::degrade::DegradationSpec;
use dparnet::models::{ModelConfig, ParamNetConfig};
use dparnet::train::TrainConfig;

/// Writes one verdict line straight to stderr so it shows up even when the
/// harness captures test output.
pub fn verdict(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {criterion}: {tag} ({detail})");
}

/// Small restoration model that trains in minutes on one CPU core.
pub fn desk_model() -> ModelConfig {
    ModelConfig {
        base_channels: 16,
        rdb_count: 1,
        rdb_growth: 8,
        wide_channels: 8,
        ..Default::default()
    }
}

pub fn desk_param_net() -> ParamNetConfig {
    ParamNetConfig {
        channels: 16,
        ..Default::default()
    }
}

/// Pixel loss only (no VGG weights ship with the crate), batch 1 and a
/// higher learning rate so a few hundred steps make visible progress.
pub fn desk_train(epochs: usize, seed: u64, crop: usize) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        epochs,
        alpha2: 0.0,
        batch_size: 1,
        crop,
        window: 5,
        seed,
        ..Default::default()
    }
}

/// Synthetic corpus plus degraded dataset under `dir`.
pub fn synthetic_dataset(
    dir: &Path,
    task: Task,
    corpus: &CorpusSpec,
    opts: &BuildOptions,
    seed: u64,
) -> DatasetManifest {
    let clean = dir.join("clean");
    data::write_synthetic_corpus(corpus, &clean).unwrap();
    let spec = match task {
        Task::Denoise => DegradationSpec::noise(),
        Task::Deturbulence => DegradationSpec::turbulence(),
    };
    data::build_dataset_with(&clean, task, &spec, dir.join("ds"), seed, opts).unwrap()
}

pub fn best_val(curve: &[dparnet::models::CurvePoint]) -> f64 {
    curve.iter().filter_map(|p| p.val_metric).fold(f64::NEG_INFINITY, f64::max)
}
