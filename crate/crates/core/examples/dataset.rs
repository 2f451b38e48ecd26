//! Builds a denoising dataset from a synthetic corpus, then loads and
//! augments one training sample.
//!
//! ```text
//! cargo run --release --example dataset -- [sequences]
//! ```

use dparnet::data::{self, BuildOptions, CorpusSpec, Split, Task};
use dparnet::degrade::DegradationSpec;

fn main() -> dparnet::Result<()> {
    let sequences = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let dir = tempfile::tempdir().map_err(|e| dparnet::Error::io(std::env::temp_dir(), e))?;
    let corpus = CorpusSpec { sequences, frames: 9, ..Default::default() };
    data::write_synthetic_corpus(&corpus, dir.path().join("clean"))?;
    let manifest = data::build_dataset_with(
        dir.path().join("clean"),
        Task::Denoise,
        &DegradationSpec::noise(),
        dir.path().join("ds"),
        7,
        &BuildOptions::default(),
    )?;

    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {:?}", manifest.ids(split));
    }
    let id = &manifest.ids(Split::Train)[0];
    let sample = data::load_sample(&manifest, id, 3)?;
    println!(
        "{id}: {} frames of {}x{}, target frame {}, mean sigma {:.2}",
        sample.degraded.len(),
        sample.degraded.height(),
        sample.degraded.width(),
        sample.target_index,
        sample.pmap.mean_phys()
    );
    let crop = data::augment_with_crop(&sample, 1, 32)?;
    println!(
        "augmented crop: {}x{}, map {}x{}",
        crop.degraded.height(),
        crop.degraded.width(),
        crop.pmap.height(),
        crop.pmap.width()
    );
    Ok(())
}
