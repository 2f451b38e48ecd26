//! Degrades one synthetic sequence with a spatially varying noise map and a
//! turbulence map, and writes clean, degraded and map images.
//!
//! ```text
//! cargo run --release --example degrade -- [out_dir]
//! ```

use std::path::PathBuf;

use dparnet::data::{self, CorpusSpec};
use dparnet::degrade::{self, DegradationSpec};
use dparnet::frame;

fn main() -> dparnet::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "degrade_demo".into()));
    let clean = data::synthetic_sequence(&CorpusSpec { frames: 8, height: 128, width: 128, ..Default::default() }, 0)?;
    frame::save_sequence(&clean, out.join("clean"))?;

    for mut spec in [DegradationSpec::noise(), DegradationSpec::turbulence()] {
        spec.field.seed = 21;
        spec.seed = 5;
        let pmap = degrade::gen_param_map(&spec, clean.height(), clean.width())?;
        let degraded = degrade::degrade(&clean, &pmap, &spec)?;
        let name = format!("{:?}", spec.kind).to_lowercase();
        frame::save_sequence(&degraded, out.join(&name))?;
        frame::save_frame(&pmap.as_frame(), out.join(format!("{name}_pmap.png")))?;
        let mad: f64 = degraded
            .frames()
            .iter()
            .zip(clean.frames())
            .map(|(d, c)| d.mean_abs_diff(c))
            .sum::<dparnet::Result<f64>>()?
            / clean.len() as f64;
        println!("{name:<11} mean parameter {:>10.3e}  mean |D-C| {mad:.4}", pmap.mean_phys());
    }
    println!("images written to {}", out.display());
    Ok(())
}
