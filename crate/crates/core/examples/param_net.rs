//! Trains the parameter net on constant-level noise data and checks that it
//! recovers the noise level of held-out sequences.
//!
//! ```text
//! cargo run --release --example param_net -- [sequences] [epochs]
//! ```

use dparnet::data::{self, BuildOptions, CorpusSpec, SpanMode, Task};
use dparnet::degrade::{self, DegradationSpec};
use dparnet::models::{self, ParamNetConfig};
use dparnet::pmap::{DegradationKind, ParamMap};
use dparnet::train::{self, TrainConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> dparnet::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (sequences, epochs) = (arg(1, 60), arg(2, 30));
    let dir = tempfile::tempdir().map_err(|e| dparnet::Error::io(std::env::temp_dir(), e))?;

    let corpus = CorpusSpec { sequences, frames: 7, ..Default::default() };
    data::write_synthetic_corpus(&corpus, dir.path().join("clean"))?;
    let opts = BuildOptions { span: SpanMode::Constant, ..Default::default() };
    let manifest =
        data::build_dataset_with(dir.path().join("clean"), Task::Denoise, &DegradationSpec::noise(), dir.path().join("ds"), 3, &opts)?;

    let cfg = TrainConfig { lr: 1e-3, epochs, alpha2: 0.0, crop: 64, ..Default::default() };
    let net = train::train_param_net(&manifest, &cfg, &ParamNetConfig { channels: 16, ..Default::default() }, None)?.param_net()?;

    // fresh content the net has never seen
    let held_out = CorpusSpec { sequences: 4, frames: 7, seed: 999, ..Default::default() };
    for sigma in [25.0f32, 50.0, 75.0] {
        let mut mean = 0.0;
        for i in 0..held_out.sequences {
            let clean = data::synthetic_sequence(&held_out, i)?;
            let pmap = ParamMap::constant(64, 64, sigma / 100.0, DegradationKind::Noise)?;
            let noisy = degrade::apply_noise(&clean, &pmap, 7 + i as u64)?;
            mean += models::param_net_forward(&net, &noisy, DegradationKind::Noise)?.mean_phys();
        }
        mean /= held_out.sequences as f64;
        println!("sigma {sigma:>5.1}  predicted {mean:>7.3}  rel err {:.3}", (mean - sigma as f64).abs() / sigma as f64);
    }
    Ok(())
}
