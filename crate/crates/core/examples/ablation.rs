//! Desk-scale ablation on synthetic denoising data.
//!
//! Trains the four variants with identical budgets and seeds and prints the
//! mean best validation PSNR of each. The restoration variants that need a
//! parameter map get predictions from a parameter net trained first.
//!
//! ```text
//! cargo run --release --example ablation -- [sequences] [size] [epochs] [seeds]
//! ```

use dparnet::data::{self, BuildOptions, CorpusSpec, DatasetManifest, Task};
use dparnet::degrade::DegradationSpec;
use dparnet::models::{ModelConfig, ParamNetConfig, Variant};
use dparnet::train::{self, ParamSource, TrainConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dparnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (sequences, size, epochs, seeds) = (arg(1, 40), arg(2, 64), arg(3, 5), arg(4, 1));
    let dir = tempfile::tempdir().map_err(|e| dparnet::Error::io(std::env::temp_dir(), e))?;

    let corpus = CorpusSpec { sequences, frames: 7, height: size, width: size, ..Default::default() };
    data::write_synthetic_corpus(&corpus, dir.path().join("clean"))?;
    let manifest: DatasetManifest = data::build_dataset_with(
        dir.path().join("clean"),
        Task::Denoise,
        &DegradationSpec::noise(),
        dir.path().join("ds"),
        1,
        &BuildOptions::default(),
    )?;

    let model = ModelConfig { base_channels: 16, rdb_count: 1, rdb_growth: 8, wide_channels: 8, ..Default::default() };
    let mut totals = [0.0f64; 4];
    for seed in 0..seeds as u64 {
        let cfg = TrainConfig { lr: 2e-3, epochs, alpha2: 0.0, batch_size: 1, crop: size, window: 5, seed, ..Default::default() };
        let pnet_cfg = ParamNetConfig { channels: 16, ..Default::default() };
        let pnet = train::train_param_net(&manifest, &cfg, &pnet_cfg, None)?.param_net()?;
        for (k, variant) in Variant::ALL.into_iter().enumerate() {
            let source = if variant.needs_param() { ParamSource::Net(&pnet) } else { ParamSource::None };
            let ck = train::train_dparnet(&manifest, &cfg, &ModelConfig { variant, ..model.clone() }, source, None)?;
            let best = ck.train_curve.iter().filter_map(|p| p.val_metric).fold(f64::NEG_INFINITY, f64::max);
            println!("seed {seed} {variant:<18} best val PSNR {best:.4}");
            totals[k] += best;
        }
    }
    println!();
    for (k, variant) in Variant::ALL.into_iter().enumerate() {
        println!("{variant:<18} mean {:.4}", totals[k] / seeds as f64);
    }
    Ok(())
}
