//! Deturbulence end to end: synthesize turbulent sequences, train the
//! parameter net and the full model, then compare the temporal stability of
//! degraded and restored test sequences along one pixel column.
//!
//! ```text
//! cargo run --release --example deturbulence -- [sequences] [epochs]
//! ```

use dparnet::data::{self, BuildOptions, CorpusSpec, Split, Task};
use dparnet::degrade::DegradationSpec;
use dparnet::eval::{self, Restorer};
use dparnet::models::{ModelConfig, ParamNetConfig};
use dparnet::train::{self, ParamSource, TrainConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dparnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (sequences, epochs) = (arg(1, 30), arg(2, 25));
    let dir = tempfile::tempdir().map_err(|e| dparnet::Error::io(std::env::temp_dir(), e))?;

    let corpus = CorpusSpec { sequences, frames: 12, max_speed: 0.5, ..Default::default() };
    data::write_synthetic_corpus(&corpus, dir.path().join("clean"))?;
    let opts = BuildOptions { train_frames: Some(7), ..Default::default() };
    let manifest = data::build_dataset_with(
        dir.path().join("clean"),
        Task::Deturbulence,
        &DegradationSpec::turbulence(),
        dir.path().join("ds"),
        5,
        &opts,
    )?;

    let cfg = TrainConfig { lr: 5e-4, epochs, alpha2: 0.0, batch_size: 1, crop: 64, window: 5, ..Default::default() };
    let pcfg = TrainConfig { epochs: 4 * epochs, ..cfg.clone() };
    let param_ck = train::train_param_net(&manifest, &pcfg, &ParamNetConfig { channels: 16, ..Default::default() }, None)?;
    let pnet = param_ck.param_net()?;
    let model = ModelConfig { base_channels: 16, rdb_count: 1, rdb_growth: 8, ..Default::default() };
    let ck = train::train_dparnet(&manifest, &cfg, &model, ParamSource::Net(&pnet), None)?;
    let restorer = Restorer::from_checkpoints(&ck, Some(&param_ck))?;

    let column = 32;
    let mut stable = 0;
    let ids = manifest.ids(Split::Test);
    for id in &ids {
        let sample = data::load_sample(&manifest, id, 0)?;
        let restored = restorer.restore(&sample.degraded, &sample.pmap)?;
        let before = eval::temporal_instability(&sample.degraded, column)?;
        let after = eval::temporal_instability(&restored, column)?;
        let clean = eval::temporal_instability(&sample.clean, column)?;
        println!("{id}: degraded {before:.5}  restored {after:.5}  clean {clean:.5}");
        stable += usize::from(after < before);
    }
    println!("restored more stable on {stable}/{} test sequences", ids.len());
    Ok(())
}
