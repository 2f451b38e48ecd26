//! Trains the full model with ground-truth parameter maps on synthetic
//! denoising data, then scores it against the unrestored input and saves
//! temporal profiles of the first test sequence.
//!
//! ```text
//! cargo run --release --example restore -- [sequences] [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use dparnet::data::{self, BuildOptions, CorpusSpec, Split, Task};
use dparnet::degrade::DegradationSpec;
use dparnet::eval::{self, EvalOptions, Restorer};
use dparnet::models::ModelConfig;
use dparnet::train::{self, ParamSource, TrainConfig};

fn main() -> dparnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let sequences = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = PathBuf::from(args.get(3).cloned().unwrap_or_else(|| "restore_demo".into()));

    let corpus = CorpusSpec { sequences, frames: 7, ..Default::default() };
    data::write_synthetic_corpus(&corpus, out.join("clean"))?;
    let manifest = data::build_dataset_with(
        out.join("clean"),
        Task::Denoise,
        &DegradationSpec::noise(),
        out.join("data"),
        1,
        &BuildOptions::default(),
    )?;

    let cfg = TrainConfig { lr: 2e-3, epochs, alpha2: 0.0, batch_size: 1, crop: 64, window: 5, ..Default::default() };
    let model = ModelConfig { base_channels: 16, rdb_count: 1, rdb_growth: 8, wide_channels: 8, ..Default::default() };
    let ck = train::train_dparnet(&manifest, &cfg, &model, ParamSource::Oracle, Some(&out.join("model")))?;

    let baseline = eval::evaluate(&Restorer::Identity, &manifest, Split::Test, &EvalOptions::default(), None)?;
    let opts = EvalOptions { model_id: "full".into(), profile_column: Some(32), ..Default::default() };
    let restored = eval::evaluate(&Restorer::from_checkpoints(&ck, None)?, &manifest, Split::Test, &opts, Some(&out.join("eval")))?;
    println!("degraded input\n{}", baseline.table());
    println!("restored\n{}", restored.table());
    println!("temporal profiles in {}", out.join("eval/profiles").display());
    Ok(())
}
