//! Acceptance suite: one test per criterion, each printing a verdict line.
//!
//! Training-based criteria run at desk scale (64×64 synthetic data, small
//! models, pixel loss only). The full-scale ablation is `#[ignore]`d; run it
//! with `cargo test --release --test acceptance -- --ignored`.

// the brute-force oracles index windows directly on purpose
#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::{best_val, desk_model, desk_param_net, desk_train, synthetic_dataset, verdict};
use dparnet::cli::{self, RunConfig};
use dparnet::data::{self, BuildOptions, CorpusSpec, SpanMode, Split, Task};
use dparnet::degrade::{self, DegradationSpec};
use dparnet::eval::{self, BenchOptions, EvalOptions, Restorer};
use dparnet::models::{self, Checkpoint, DparNet, ModelConfig, Variant};
use dparnet::pmap::{DegradationKind, ParamMap};
use dparnet::train::{self, ParamSource, Vgg19Features, VggStage};
use dparnet::{rng, Frame, Sequence};

// ---------------------------------------------------------------- criterion 1

fn bf_mse(a: &Frame, b: &Frame) -> f64 {
    let mut s = 0.0;
    for i in 0..a.data().len() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        s += d * d;
    }
    s / a.data().len() as f64
}

fn bf_psnr(a: &Frame, b: &Frame) -> f64 {
    -10.0 * bf_mse(a, b).log10()
}

fn bf_nrmse(a: &Frame, gt: &Frame) -> f64 {
    let hi = gt.data().iter().cloned().fold(f32::MIN, f32::max) as f64;
    let lo = gt.data().iter().cloned().fold(f32::MAX, f32::min) as f64;
    bf_mse(a, gt).sqrt() / (hi - lo)
}

/// Direct 2-D windowed SSIM with two-pass moments.
fn bf_ssim(a: &Frame, b: &Frame) -> f64 {
    let (h, w, _) = a.shape();
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            win[i][j] = g[i] * g[j];
            total += win[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let px = |f: &Frame, i: usize, j: usize| f.get(0, y0 + i, x0 + j) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] / total * px(a, i, j);
                    mb += win[i][j] / total * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = win[i][j] / total;
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn bf_entropy<K: std::hash::Hash + Eq>(counts: &HashMap<K, usize>, n: f64) -> f64 {
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

fn bf_vi(a: &Frame, b: &Frame) -> f64 {
    let q = |v: f32| (v as f64 * 255.0).round() as u8;
    let (mut ca, mut cb, mut cj) = (HashMap::new(), HashMap::new(), HashMap::new());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        *ca.entry(q(x)).or_insert(0) += 1;
        *cb.entry(q(y)).or_insert(0) += 1;
        *cj.entry((q(x), q(y))).or_insert(0) += 1;
    }
    let n = a.data().len() as f64;
    let (ha, hb, hj) = (bf_entropy(&ca, n), bf_entropy(&cb, n), bf_entropy(&cj, n));
    ha + hb - 2.0 * (ha + hb - hj)
}

#[test]
fn criterion_01_metric_oracles() {
    let start = std::time::Instant::now();
    let mut r = rng::seeded(2024);
    let (mut worst_psnr, mut worst_ssim, mut worst_nrmse, mut worst_vi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let gt = Frame::from_fn(16, 16, 1, |_, _, _| r.random::<f32>());
        let sigma: f64 = r.random_range(0.01..0.3);
        let noise = Normal::new(0.0, sigma).unwrap();
        let pred = Frame::from_fn(16, 16, 1, |_, y, x| {
            (gt.get(0, y, x) as f64 + noise.sample(&mut r)).clamp(0.0, 1.0) as f32
        });
        worst_psnr = worst_psnr.max((eval::psnr(&pred, &gt).unwrap() - bf_psnr(&pred, &gt)).abs());
        worst_ssim = worst_ssim.max((eval::ssim(&pred, &gt).unwrap() - bf_ssim(&pred, &gt)).abs());
        worst_nrmse = worst_nrmse.max((eval::nrmse(&pred, &gt).unwrap() - bf_nrmse(&pred, &gt)).abs());
        let want = bf_vi(&pred, &gt);
        worst_vi = worst_vi.max((eval::vi(&pred, &gt).unwrap() - want).abs() / want.abs().max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_psnr <= 1e-6 && worst_ssim <= 1e-6 && worst_nrmse <= 1e-7 && worst_vi <= 0.05 && secs < 10.0;
    verdict(
        "criterion 1 metric oracles",
        pass,
        &format!("max |Δ| psnr {worst_psnr:.2e} dB, ssim {worst_ssim:.2e}, nrmse {worst_nrmse:.2e}, vi rel {worst_vi:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn mean_abs_diff(a: &Sequence, b: &Sequence) -> f64 {
    a.frames().iter().zip(b.frames()).map(|(x, y)| x.mean_abs_diff(y).unwrap()).sum::<f64>() / a.len() as f64
}

#[test]
fn criterion_02_degradation_identity_and_monotonicity() {
    let start = std::time::Instant::now();
    let clean = data::synthetic_sequence(&CorpusSpec { frames: 6, ..Default::default() }, 3).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (kind, spec) in [
        (DegradationKind::Noise, DegradationSpec::noise()),
        (DegradationKind::Turbulence, DegradationSpec::turbulence()),
    ] {
        let zero = ParamMap::constant(64, 64, 0.0, kind).unwrap();
        let identical = degrade::degrade(&clean, &zero, &spec).unwrap() == clean;
        let diffs: Vec<f64> = [0.25f32, 0.5, 1.0]
            .iter()
            .map(|&l| {
                let p = ParamMap::constant(64, 64, l, kind).unwrap();
                mean_abs_diff(&degrade::degrade(&clean, &p, &spec).unwrap(), &clean)
            })
            .collect();
        let monotone = diffs.windows(2).all(|w| w[1] >= w[0]);
        pass &= identical && monotone;
        detail.push(format!("{kind:?}: identity {identical}, mean|D-C| {:.4}/{:.4}/{:.4}", diffs[0], diffs[1], diffs[2]));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    verdict("criterion 2 degradation identity & monotonicity", pass, &format!("{}; {secs:.2}s", detail.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_noise_calibration() {
    let start = std::time::Instant::now();
    let frames = vec![Frame::filled(64, 64, 1, 0.5); 25];
    let clean = Sequence::new("gray", frames).unwrap();
    let pmap = ParamMap::constant(64, 64, 0.51, DegradationKind::Noise).unwrap();
    let noisy = degrade::apply_noise(&clean, &pmap, 11).unwrap();
    let res: Vec<f64> = noisy.frames().iter().flat_map(|f| f.data().iter().map(|&v| v as f64 - 0.5)).collect();
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let std = (res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let rel = (std - 0.2).abs() / 0.2;
    let secs = start.elapsed().as_secs_f64();
    let pass = res.len() >= 100_000 && rel <= 0.05 && secs < 10.0;
    verdict(
        "criterion 3 noise calibration",
        pass,
        &format!("std {std:.5} vs 0.2 (rel {rel:.4}) over {} samples, {secs:.2}s", res.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn loss_value(net: &DparNet, frames: &[Tensor], pmap: &Tensor, gt: &Tensor, vgg: &Vgg19Features) -> (Tensor, f64) {
    let pred = net.forward(frames, Some(pmap), &[2], true).unwrap().remove(0);
    let loss = train::total_loss(&pred, gt, 1.0, 0.05, Some(vgg)).unwrap();
    let v = loss.to_scalar::<f64>().unwrap();
    (loss, v)
}

#[test]
fn criterion_04_gradient_checks() {
    let start = std::time::Instant::now();
    let dev = candle_core::Device::Cpu;
    let cfg = ModelConfig { base_channels: 4, rdb_count: 1, rdb_growth: 2, wide_channels: 2, ..Default::default() };
    let net = DparNet::new(cfg, 5, DType::F64).unwrap();
    let vgg = Vgg19Features::with_random_weights(1, VggStage::Relu3_3, DType::F64).unwrap();
    let mut r = rng::seeded(77);
    let mut image = || Tensor::from_vec((0..256).map(|_| r.random::<f64>()).collect::<Vec<_>>(), (1, 1, 16, 16), &dev).unwrap();
    let frames: Vec<Tensor> = (0..5).map(|_| image()).collect();
    let pmap = image();
    let gt = image();

    let (loss, _) = loss_value(&net, &frames, &pmap, &gt, &vgg);
    let grads = loss.backward().unwrap();
    let names: Vec<String> = net.store.vars().keys().cloned().collect();
    let mut r = rng::seeded(78);
    // large enough that f64 rounding of the loss stays far below the
    // smallest sampled gradients, small enough that truncation is negligible
    let eps = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10 {
        let name = &names[r.random_range(0..names.len())];
        let var = &net.store.vars()[name];
        let orig = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let k = r.random_range(0..orig.len());
        let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[k];
        let eval_at = |delta: f64| {
            let mut v = orig.clone();
            v[k] += delta;
            var.set(&Tensor::from_vec(v, var.as_tensor().dims(), &dev).unwrap()).unwrap();
            loss_value(&net, &frames, &pmap, &gt, &vgg).1
        };
        let numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
        var.set(&Tensor::from_vec(orig, var.as_tensor().dims(), &dev).unwrap()).unwrap();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-3 && secs < 60.0;
    verdict(
        "criterion 4 gradient checks",
        pass,
        &format!("10 weights, worst relative error {worst:.2e}, 16x16, {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_wide_model_overhead() {
    let full = DparNet::new(ModelConfig::default(), 0, DType::F32).unwrap();
    let v1 = DparNet::new(ModelConfig { variant: Variant::V1DeepOnly, ..Default::default() }, 0, DType::F32).unwrap();
    let (pf, p1) = (models::count_params(&full), models::count_params(&v1));
    let overhead = pf as f64 / p1 as f64 - 1.0;
    let pass = overhead < 0.02;
    verdict("criterion 5 wide-model overhead", pass, &format!("full {pf} vs v1 {p1} params, +{:.3}%", 100.0 * overhead));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

/// Mean best validation PSNR per variant over `seeds`.
fn desk_ablation(dir: &Path, sequences: usize, size: usize, epochs: usize, seeds: u64, variants: &[Variant]) -> Vec<f64> {
    let corpus = CorpusSpec { sequences, frames: 7, height: size, width: size, ..Default::default() };
    let manifest = synthetic_dataset(dir, Task::Denoise, &corpus, &BuildOptions::default(), 1);
    let mut totals = vec![0.0; variants.len()];
    for seed in 0..seeds {
        let cfg = desk_train(epochs, seed, size);
        let pnet = train::train_param_net(&manifest, &cfg, &desk_param_net(), None).unwrap().param_net().unwrap();
        for (k, &variant) in variants.iter().enumerate() {
            let source = if variant.needs_param() { ParamSource::Net(&pnet) } else { ParamSource::None };
            let model = ModelConfig { variant, ..desk_model() };
            let ck = train::train_dparnet(&manifest, &cfg, &model, source, None).unwrap();
            totals[k] += best_val(&ck.train_curve);
        }
    }
    totals.iter().map(|t| t / seeds as f64).collect()
}

#[test]
fn criterion_06_desk_ablation_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let v = desk_ablation(dir.path(), 40, 64, 5, 1, &[Variant::Full, Variant::V1DeepOnly]);
    let pass = v[0] >= v[1];
    verdict(
        "criterion 6 ablation trend (CPU smoke, 64x64, 5 epochs)",
        pass,
        &format!("val PSNR full {:.3} dB vs v1 {:.3} dB", v[0], v[1]),
    );
    assert!(pass);
}

#[test]
#[ignore = "full-scale ablation: hours of compute"]
fn criterion_06_full_scale_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let v = desk_ablation(dir.path(), 200, 128, 20, 3, &Variant::ALL);
    let pass = v[0] - v[1] >= 0.2 && v[0] > v[2] && v[0] > v[3];
    verdict(
        "criterion 6 ablation trend (200 sequences, 128x128, 20 epochs, 3 seeds)",
        pass,
        &format!("val PSNR full {:.3}, v1 {:.3}, v2 {:.3}, v3 {:.3}", v[0], v[1], v[2], v[3]),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_param_net_identifiability() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusSpec { sequences: 60, frames: 7, ..Default::default() };
    let opts = BuildOptions { span: SpanMode::Constant, ..Default::default() };
    let manifest = synthetic_dataset(dir.path(), Task::Denoise, &corpus, &opts, 3);
    let cfg = dparnet::train::TrainConfig { lr: 1e-3, epochs: 150, alpha2: 0.0, crop: 64, ..Default::default() };
    let net = train::train_param_net(&manifest, &cfg, &desk_param_net(), None).unwrap().param_net().unwrap();

    let held_out = CorpusSpec { sequences: 4, frames: 7, seed: 999, ..Default::default() };
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for sigma in [25.0f64, 50.0, 75.0] {
        let mut mean = 0.0;
        for i in 0..held_out.sequences {
            let clean = data::synthetic_sequence(&held_out, i).unwrap();
            let pmap = ParamMap::constant(64, 64, (sigma / 100.0) as f32, DegradationKind::Noise).unwrap();
            let noisy = degrade::apply_noise(&clean, &pmap, 7 + i as u64).unwrap();
            mean += models::param_net_forward(&net, &noisy, DegradationKind::Noise).unwrap().mean_phys();
        }
        mean /= held_out.sequences as f64;
        let rel = (mean - sigma).abs() / sigma;
        worst = worst.max(rel);
        detail.push(format!("σ {sigma}: {mean:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 0.15 && secs <= 1800.0;
    verdict(
        "criterion 7 parameter-net identifiability",
        pass,
        &format!("{}; worst rel err {worst:.3}; {secs:.0}s", detail.join(", ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_temporal_stability() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusSpec { sequences: 40, frames: 12, max_speed: 0.5, ..Default::default() };
    let opts = BuildOptions { train_frames: Some(7), ..Default::default() };
    let manifest = synthetic_dataset(dir.path(), Task::Deturbulence, &corpus, &opts, 5);
    // the desk lr of 2e-3 is too noisy on turbulence; 5e-4 learns steadily
    let cfg = dparnet::train::TrainConfig { lr: 5e-4, ..desk_train(25, 0, 64) };
    let pcfg = dparnet::train::TrainConfig { epochs: 100, ..cfg.clone() };
    let param_ck = train::train_param_net(&manifest, &pcfg, &desk_param_net(), None).unwrap();
    let pnet = param_ck.param_net().unwrap();
    let ck = train::train_dparnet(&manifest, &cfg, &desk_model(), ParamSource::Net(&pnet), None).unwrap();
    let restorer = Restorer::from_checkpoints(&ck, Some(&param_ck)).unwrap();

    let ids = manifest.ids(Split::Test);
    let mut stable = 0;
    for id in &ids {
        let sample = data::load_sample(&manifest, id, 0).unwrap();
        let restored = restorer.restore(&sample.degraded, &sample.pmap).unwrap();
        let before = eval::temporal_instability(&sample.degraded, 32).unwrap();
        let after = eval::temporal_instability(&restored, 32).unwrap();
        stable += usize::from(after < before);
    }
    let frac = stable as f64 / ids.len() as f64;
    let pass = !ids.is_empty() && frac >= 0.8;
    verdict(
        "criterion 8 temporal stability",
        pass,
        &format!("restored profile steadier on {stable}/{} test sequences", ids.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_09_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: 4,
        corpus: CorpusSpec { sequences: 6, frames: 7, ..Default::default() },
        ..Default::default()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cli::cmd_simulate(&cfg, true, &a).unwrap();
    cli::cmd_simulate(&cfg, true, &b).unwrap();
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    let simulate_same = !ta.is_empty() && ta == tb;

    let manifest = data::DatasetManifest::load(&a).unwrap();
    let opts = EvalOptions { model_id: "identity".into(), timestamp: 1, ..Default::default() };
    let (ea, eb) = (dir.path().join("ea"), dir.path().join("eb"));
    eval::evaluate(&Restorer::Identity, &manifest, Split::Test, &opts, Some(&ea)).unwrap();
    eval::evaluate(&Restorer::Identity, &manifest, Split::Test, &opts, Some(&eb)).unwrap();
    let eval_same = tree_bytes(&ea) == tree_bytes(&eb);

    let train_cfg = desk_train(1, 0, 64);
    let model = ModelConfig { variant: Variant::V1DeepOnly, ..desk_model() };
    let ck = train::train_dparnet(&manifest, &train_cfg, &model, ParamSource::None, None).unwrap();
    let val = train::load_split(&manifest, Split::Val).unwrap();
    let val = if val.is_empty() { train::load_split(&manifest, Split::Train).unwrap() } else { val };
    let before = train::validation_psnr(&ck.dparnet().unwrap(), &val).unwrap();
    ck.save(&dir.path().join("ck")).unwrap();
    let after = train::validation_psnr(&Checkpoint::load(&dir.path().join("ck")).unwrap().dparnet().unwrap(), &val).unwrap();
    let psnr_same = (before - after).abs() <= 1e-6;

    let pass = simulate_same && eval_same && psnr_same;
    verdict(
        "criterion 9 reproducibility",
        pass,
        &format!(
            "simulate byte-identical {simulate_same} ({} files), eval byte-identical {eval_same}, val PSNR {before:.6} -> {after:.6}",
            ta.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_efficiency_conventions() {
    let big = DparNet::new(ModelConfig { in_channels: 3, ..Default::default() }, 0, DType::F32).unwrap();
    let ratio = models::count_flops(&big, 512, 512) as f64 / models::count_flops(&big, 256, 256) as f64;
    let scale_ok = (ratio - 4.0).abs() <= 0.2;

    // small model so 100 timed rounds at 256×256×3 stay cheap on a CPU
    let cfg = ModelConfig { base_channels: 4, rdb_count: 1, rdb_growth: 2, wide_channels: 2, ..Default::default() };
    let report = eval::benchmark_efficiency(&cfg, BenchOptions::default()).unwrap();
    let net = DparNet::new(cfg.clone(), 0, DType::F32).unwrap();
    let twin = DparNet::new(ModelConfig { in_channels: 3, ..cfg }, 0, DType::F32).unwrap();
    let units_ok = report.rounds == 100
        && (report.height, report.width, report.channels) == (256, 256, 3)
        && report.params_millions == models::count_params(&net) as f64 / 1e6
        && report.flops_e10 == models::count_flops(&twin, 256, 256) as f64 / 1e10
        && report.time_s.is_finite()
        && report.time_s > 0.0;
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(eval::report::EFFICIENCY_FILE)).unwrap()).unwrap();
    let keys_ok = ["params_millions", "flops_e10", "time_s", "rounds"].iter().all(|k| json.get(k).is_some());

    let pass = scale_ok && units_ok && keys_ok;
    verdict(
        "criterion 10 efficiency conventions",
        pass,
        &format!(
            "FLOPs 512²/256² = {ratio:.4}; report {:.4} M params, {:.4}e10 FLOPs, {:.4} s/frame over {} rounds",
            report.params_millions, report.flops_e10, report.time_s, report.rounds
        ),
    );
    assert!(pass);
}
