//! Parameter count, FLOPs and per-frame CPU time at 256×256×3 for the four
//! variants of a given width.
//!
//! ```text
//! cargo run --release --example efficiency -- [base_channels] [rounds]
//! ```

use dparnet::eval::{self, BenchOptions};
use dparnet::models::{ModelConfig, Variant};

fn main() -> dparnet::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (base, rounds) = (arg(1, 16), arg(2, 10));
    let opts = BenchOptions { rounds, warmup: 2, ..Default::default() };
    for variant in Variant::ALL {
        let cfg = ModelConfig { base_channels: base, rdb_growth: base / 2, variant, ..Default::default() };
        let report = eval::benchmark_efficiency(&cfg, opts)?;
        println!(
            "{variant:<18} {:>8.4} M params  {:>8.4}e10 FLOPs  {:>8.4} s/frame",
            report.params_millions, report.flops_e10, report.time_s
        );
    }
    Ok(())
}
