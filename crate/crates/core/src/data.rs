//! Paired dataset synthesis, manifests, splits and sample augmentation.
//!
//! On-disk layout under the dataset root:
//!
//! ```text
//! manifest.json
//! clean/<seq_id>/frame_00000.png ...
//! degraded/<seq_id>/frame_00000.png ...
//! pmaps/<seq_id>.pmap
//! ```
//!
//! Paths inside the manifest are relative to the root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{self, DegradationSpec};
use crate::error::{Error, Result};
use crate::frame::{self, Frame, Sequence};
use crate::pmap::{self, DegradationKind, ParamMap};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Training sequence length for deturbulence.
pub const DETURBULENCE_TRAIN_FRAMES: usize = 15;
/// Sequence length for denoising.
pub const DENOISE_FRAMES: usize = 7;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Deturbulence,
    Denoise,
}

impl Task {
    pub fn kind(self) -> DegradationKind {
        match self {
            Task::Deturbulence => DegradationKind::Turbulence,
            Task::Denoise => DegradationKind::Noise,
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "deturbulence" => Ok(Task::Deturbulence),
            "denoise" => Ok(Task::Denoise),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected deturbulence or denoise)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Deturbulence => "deturbulence",
            Task::Denoise => "denoise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq_id: String,
    pub clean_dir: PathBuf,
    pub degraded_dir: PathBuf,
    pub pmap_path: PathBuf,
    pub num_frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C")]
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Directory holding `manifest.json`; set on load, never serialized, so
    /// datasets can be moved.
    #[serde(skip)]
    pub root: PathBuf,
    pub task: Task,
    pub entries: Vec<ManifestEntry>,
    pub split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    /// Reads `manifest.json` from `dir`; relative entry paths resolve against `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.root = dir.to_path_buf();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn entry(&self, seq_id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.seq_id == seq_id)
            .ok_or_else(|| Error::Lookup(format!("sequence {seq_id:?} not in manifest")))
    }

    /// Sequence ids of one split, in manifest order.
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| self.split.get(&e.seq_id) == Some(&split))
            .map(|e| e.seq_id.clone())
            .collect()
    }
}

/// How per-sequence intensity spans are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanMode {
    /// `min ~ U(0, 0.5)`, `max ~ U(min, 1)`.
    Random,
    /// One level `~ U(0, 1)` for the whole map.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    pub test_fraction: f64,
    /// Fraction of the non-test sequences used for validation.
    pub val_fraction: f64,
    /// Train/val length; `None` picks the task default (15 or 7).
    pub train_frames: Option<usize>,
    /// Test length; `None` keeps the full sequence for deturbulence and 7 for denoising.
    pub test_frames: Option<usize>,
    pub span: SpanMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction: DEFAULT_VAL_FRACTION,
            train_frames: None,
            test_frames: None,
            span: SpanMode::Random,
        }
    }
}

impl BuildOptions {
    fn frames_for(&self, task: Task, split: Split) -> Option<usize> {
        match (split, task) {
            (Split::Test, Task::Deturbulence) => self.test_frames,
            (Split::Test, Task::Denoise) => Some(self.test_frames.unwrap_or(DENOISE_FRAMES)),
            (_, Task::Deturbulence) => Some(self.train_frames.unwrap_or(DETURBULENCE_TRAIN_FRAMES)),
            (_, Task::Denoise) => Some(self.train_frames.unwrap_or(DENOISE_FRAMES)),
        }
    }
}

/// Deterministic disjoint split of `n` items.
pub fn assign_splits(n: usize, test_fraction: f64, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0x5_0117));
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let n_rest = n - n_test;
    let n_val = ((n_rest as f64 * val_fraction).round() as usize).min(n_rest.saturating_sub(1));
    let mut out = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
    out
}

/// Lists sequence directories (subdirectories holding PNGs) of `clean_root`.
pub fn list_sequence_dirs(clean_root: &Path) -> Result<Vec<PathBuf>> {
    if !clean_root.is_dir() {
        return Err(Error::io(
            clean_root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "clean root is not a directory"),
        ));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(clean_root).map_err(|e| Error::io(clean_root, e))? {
        let p = entry.map_err(|e| Error::io(clean_root, e))?.path();
        if p.is_dir() && !frame::list_pngs(&p)?.is_empty() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn build_dataset(
    clean_root: impl AsRef<Path>,
    task: Task,
    template: &DegradationSpec,
    out_root: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    build_dataset_with(clean_root, task, template, out_root, seed, &BuildOptions::default())
}

/// Degrades every clean sequence under `clean_root` and writes the dataset.
pub fn build_dataset_with(
    clean_root: impl AsRef<Path>,
    task: Task,
    template: &DegradationSpec,
    out_root: impl AsRef<Path>,
    seed: u64,
    options: &BuildOptions,
) -> Result<DatasetManifest> {
    let clean_root = clean_root.as_ref();
    let out_root = out_root.as_ref();
    let dirs = list_sequence_dirs(clean_root)?;
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no sequence directories",
            clean_root.display()
        )));
    }
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let splits = assign_splits(dirs.len(), options.test_fraction, options.val_fraction, seed);

    let mut entries = Vec::with_capacity(dirs.len());
    let mut split_map = BTreeMap::new();
    for (i, (dir, split)) in dirs.iter().zip(&splits).enumerate() {
        let mut clean = frame::load_sequence(dir)?;
        if let Some(n) = options.frames_for(task, *split) {
            clean = clean.truncated(n);
        }
        let spec = draw_spec(template, task, seed, i as u64, options.span);
        let (h, w, c) = clean.shape();
        let pmap = degrade::gen_param_map(&spec, h, w)?;
        let degraded = degrade::degrade(&clean, &pmap, &spec)?;

        let id = clean.id.clone();
        let entry = ManifestEntry {
            seq_id: id.clone(),
            clean_dir: PathBuf::from("clean").join(&id),
            degraded_dir: PathBuf::from("degraded").join(&id),
            pmap_path: PathBuf::from("pmaps").join(format!("{id}.pmap")),
            num_frames: clean.len(),
            height: h,
            width: w,
            channels: c,
        };
        let clean_out = out_root.join(&entry.clean_dir);
        let degraded_out = out_root.join(&entry.degraded_dir);
        for d in [&clean_out, &degraded_out] {
            if d.exists() {
                fs::remove_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
        }
        frame::save_sequence(&clean, &clean_out)?;
        frame::save_sequence(&degraded, &degraded_out)?;
        let pmap_dir = out_root.join("pmaps");
        fs::create_dir_all(&pmap_dir).map_err(|e| Error::io(&pmap_dir, e))?;
        pmap::write_parammap(&pmap, out_root.join(&entry.pmap_path))?;
        log::debug!("{id}: {} frames, split {split:?}", clean.len());
        split_map.insert(id, *split);
        entries.push(entry);
    }

    let manifest = DatasetManifest {
        root: out_root.to_path_buf(),
        task,
        entries,
        split: split_map,
    };
    manifest.save()?;
    Ok(manifest)
}

fn draw_spec(template: &DegradationSpec, task: Task, seed: u64, index: u64, span: SpanMode) -> DegradationSpec {
    let mut r = rng::stream(seed, index);
    let mut spec = template.clone();
    spec.kind = task.kind();
    match span {
        SpanMode::Random => {
            let lo = r.random_range(0.0..0.5);
            spec.field.min_frac = lo;
            spec.field.max_frac = r.random_range(lo..1.0);
        }
        SpanMode::Constant => {
            let v = r.random_range(0.0..1.0);
            spec.field.min_frac = v;
            spec.field.max_frac = v;
        }
    }
    spec.field.seed = r.random();
    spec.seed = r.random();
    spec
}

/// Aligned `(D, C, P)` triple with the supervised frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub degraded: Sequence,
    pub clean: Sequence,
    pub pmap: ParamMap,
    pub target_index: usize,
}

impl Sample {
    pub fn new(degraded: Sequence, clean: Sequence, pmap: ParamMap, target_index: usize) -> Result<Self> {
        if degraded.shape() != clean.shape() || degraded.len() != clean.len() {
            return Err(Error::Shape(format!(
                "degraded {:?}x{} vs clean {:?}x{}",
                degraded.shape(),
                degraded.len(),
                clean.shape(),
                clean.len()
            )));
        }
        pmap.check_matches(&degraded.frames()[0])?;
        let target_index = target_index.min(degraded.len() - 1);
        Ok(Sample {
            degraded,
            clean,
            pmap,
            target_index,
        })
    }

    /// Frames `start..start+len` of both sequences; the target index is
    /// shifted accordingly and clamped into the window.
    pub fn window(&self, start: usize, len: usize) -> Sample {
        let degraded = self.degraded.window(start, len);
        let clean = self.clean.window(start, len);
        let start = start.min(self.degraded.len() - 1);
        let target = self.target_index.saturating_sub(start).min(degraded.len() - 1);
        Sample {
            degraded,
            clean,
            pmap: self.pmap.clone(),
            target_index: target,
        }
    }
}

/// Loads a sample; `target_index` is clamped to `[0, T)`.
pub fn load_sample(manifest: &DatasetManifest, seq_id: &str, target_index: usize) -> Result<Sample> {
    let entry = manifest.entry(seq_id)?;
    let degraded = frame::load_sequence(manifest.resolve(&entry.degraded_dir))?;
    let mut clean = frame::load_sequence(manifest.resolve(&entry.clean_dir))?;
    clean.id = degraded.id.clone();
    let pmap = pmap::read_parammap(manifest.resolve(&entry.pmap_path))?;
    if pmap.kind != manifest.task.kind() {
        return Err(Error::Format(format!(
            "{seq_id}: parameter map kind {:?} does not match task {}",
            pmap.kind, manifest.task
        )));
    }
    Sample::new(degraded, clean, pmap, target_index)
}

/// Crop edge actually used for a `height × width` input.
pub fn crop_size_for(height: usize, width: usize, crop: usize) -> usize {
    if height >= crop && width >= crop {
        crop
    } else {
        (height.min(width) / 8 * 8).max(8).min(height.min(width))
    }
}

/// One random crop window and flip decision, applied to all three members.
pub fn augment(sample: &Sample, seed: u64) -> Result<Sample> {
    augment_with_crop(sample, seed, 256)
}

pub fn augment_with_crop(sample: &Sample, seed: u64, crop: usize) -> Result<Sample> {
    let (h, w, _) = sample.degraded.shape();
    let size = crop_size_for(h, w, crop);
    let mut r = rng::seeded(seed);
    let top = r.random_range(0..=h - size);
    let left = r.random_range(0..=w - size);
    let flip_h: bool = r.random();
    let flip_v: bool = r.random();
    let tf = |f: &Frame| -> Frame {
        let mut g = f.crop(top, left, size, size).expect("window inside frame");
        if flip_h {
            g = g.flip_horizontal();
        }
        if flip_v {
            g = g.flip_vertical();
        }
        g
    };
    let mut pmap = sample.pmap.crop(top, left, size, size)?;
    if flip_h {
        pmap = pmap.flip_horizontal();
    }
    if flip_v {
        pmap = pmap.flip_vertical();
    }
    Ok(Sample {
        degraded: sample.degraded.map_frames(tf)?,
        clean: sample.clean.map_frames(tf)?,
        pmap,
        target_index: sample.target_index,
    })
}

/// Procedural clean footage: textured background plus moving shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Maximum shape speed in pixels per frame.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            sequences: 8,
            frames: 20,
            height: 64,
            width: 64,
            channels: 1,
            max_speed: 1.5,
            seed: 0,
        }
    }
}

struct Shape {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    square: bool,
    value: [f32; 3],
}

/// Renders one synthetic sequence.
pub fn synthetic_sequence(spec: &CorpusSpec, index: usize) -> Result<Sequence> {
    let mut r = rng::stream(spec.seed, index as u64);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let freq = [r.random_range(0.05..0.4), r.random_range(0.05..0.4)];
    let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let base: [f32; 3] = [r.random_range(0.2..0.6), r.random_range(0.2..0.6), r.random_range(0.2..0.6)];
    let shapes: Vec<Shape> = (0..r.random_range(3..7))
        .map(|_| Shape {
            cx: r.random_range(0.0..w),
            cy: r.random_range(0.0..h),
            vx: r.random_range(-spec.max_speed..=spec.max_speed),
            vy: r.random_range(-spec.max_speed..=spec.max_speed),
            radius: r.random_range(0.08..0.25) * h.min(w),
            square: r.random(),
            value: [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
        })
        .collect();
    let frames = (0..spec.frames)
        .map(|t| {
            let t = t as f64;
            Frame::from_fn(spec.height, spec.width, spec.channels, |c, y, x| {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = base[c] as f64
                    + 0.15 * (xf * freq[0] + phase).sin() * (yf * freq[1]).cos()
                    + 0.1 * yf / h;
                for s in &shapes {
                    let (dx, dy) = (xf - (s.cx + s.vx * t), yf - (s.cy + s.vy * t));
                    let inside = if s.square {
                        dx.abs() < s.radius && dy.abs() < s.radius
                    } else {
                        dx * dx + dy * dy < s.radius * s.radius
                    };
                    if inside {
                        v = s.value[c] as f64 + 0.08 * ((dx + dy) * 0.5).sin();
                    }
                }
                v.clamp(0.0, 1.0) as f32
            })
        })
        .collect();
    Sequence::new(format!("seq_{index:04}"), frames)
}

/// Writes `spec.sequences` clean sequences as `out/seq_NNNN/frame_NNNNN.png`.
pub fn write_synthetic_corpus(spec: &CorpusSpec, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    (0..spec.sequences)
        .map(|i| {
            let seq = synthetic_sequence(spec, i)?;
            let dir = out.join(&seq.id);
            frame::save_sequence(&seq, &dir)?;
            Ok(dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_corpus(dir: &Path, n: usize, frames: usize) {
        let spec = CorpusSpec {
            sequences: n,
            frames,
            height: 32,
            width: 40,
            ..Default::default()
        };
        write_synthetic_corpus(&spec, dir).unwrap();
    }

    #[test]
    fn splits_disjoint_and_deterministic() {
        let a = assign_splits(50, 0.2, 0.1, 3);
        assert_eq!(a, assign_splits(50, 0.2, 0.1, 3));
        assert_eq!(a.iter().filter(|s| **s == Split::Test).count(), 10);
        assert_eq!(a.iter().filter(|s| **s == Split::Val).count(), 4);
        let one = assign_splits(1, 0.2, 0.1, 0);
        assert_eq!(one, vec![Split::Train]);
    }

    #[test]
    fn two_sequences_two_entries() {
        let tmp = tempfile::tempdir().unwrap();
        small_corpus(&tmp.path().join("clean"), 2, 9);
        let m = build_dataset(
            tmp.path().join("clean"),
            Task::Denoise,
            &DegradationSpec::noise(),
            tmp.path().join("ds"),
            5,
        )
        .unwrap();
        assert_eq!(m.entries.len(), 2);
        for e in &m.entries {
            assert!(m.resolve(&e.pmap_path).exists());
            assert_eq!(e.num_frames, DENOISE_FRAMES);
            assert_eq!(frame::list_pngs(m.resolve(&e.degraded_dir)).unwrap().len(), e.num_frames);
            assert_eq!(frame::list_pngs(m.resolve(&e.clean_dir)).unwrap().len(), e.num_frames);
        }
        let loaded = DatasetManifest::load(tmp.path().join("ds")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        assert_eq!(loaded.split, m.split);
    }

    #[test]
    fn deturbulence_train_clipped_to_fifteen() {
        let tmp = tempfile::tempdir().unwrap();
        small_corpus(&tmp.path().join("clean"), 1, 40);
        let m = build_dataset(
            tmp.path().join("clean"),
            Task::Deturbulence,
            &DegradationSpec::turbulence(),
            tmp.path().join("ds"),
            1,
        )
        .unwrap();
        assert_eq!(m.split.values().next(), Some(&Split::Train));
        assert_eq!(m.entries[0].num_frames, 15);
    }

    #[test]
    fn empty_root_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let r = build_dataset(tmp.path(), Task::Denoise, &DegradationSpec::noise(), tmp.path().join("o"), 0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = build_dataset(tmp.path().join("nope"), Task::Denoise, &DegradationSpec::noise(), tmp.path().join("o"), 0);
        assert_eq!(r.unwrap_err().exit_code(), 3);
    }

    #[test]
    fn load_sample_contract() {
        let tmp = tempfile::tempdir().unwrap();
        small_corpus(&tmp.path().join("clean"), 1, 7);
        let m = build_dataset(
            tmp.path().join("clean"),
            Task::Denoise,
            &DegradationSpec::noise(),
            tmp.path().join("ds"),
            2,
        )
        .unwrap();
        let s = load_sample(&m, "seq_0000", 12).unwrap();
        assert_eq!(s.target_index, 6);
        assert_eq!(s.degraded.shape(), s.clean.shape());
        assert_eq!((s.pmap.height(), s.pmap.width()), (32, 40));
        assert_eq!(s.pmap.kind, DegradationKind::Noise);
        assert!(matches!(load_sample(&m, "missing", 0), Err(Error::Lookup(_))));
    }

    fn synthetic_sample(h: usize, w: usize) -> Sample {
        let frames: Vec<Frame> = (0..3)
            .map(|t| Frame::from_fn(h, w, 1, |_, y, x| ((y * w + x + t) % 251) as f32 / 250.0))
            .collect();
        let clean = Sequence::new("s", frames).unwrap();
        let pmap = ParamMap::new(
            h,
            w,
            (0..h * w).map(|i| (i % 1000) as f32 / 999.0).collect(),
            DegradationKind::Noise,
        )
        .unwrap();
        Sample::new(clean.clone(), clean, pmap, 1).unwrap()
    }

    #[test]
    fn augment_crop_size_and_determinism() {
        let s = synthetic_sample(480, 640);
        let a = augment(&s, 11).unwrap();
        assert_eq!(a.degraded.shape(), (256, 256, 1));
        assert_eq!((a.pmap.height(), a.pmap.width()), (256, 256));
        assert_eq!(a, augment(&s, 11).unwrap());
        assert_eq!(crop_size_for(100, 70, 256), 64);
    }

    #[test]
    fn augment_keeps_alignment() {
        // Frame and pmap carry the same pixel index pattern, so any
        // misaligned crop or flip shows up as a mismatch.
        let (h, w) = (40, 48);
        let frames = vec![Frame::from_fn(h, w, 1, |_, y, x| (y * w + x) as f32 / (h * w) as f32)];
        let seq = Sequence::new("s", frames).unwrap();
        let pmap = ParamMap::new(h, w, seq.frames()[0].data().to_vec(), DegradationKind::Noise).unwrap();
        let s = Sample::new(seq.clone(), seq, pmap, 0).unwrap();
        for seed in 0..16 {
            let a = augment_with_crop(&s, seed, 24).unwrap();
            assert_eq!(a.degraded.frames()[0].data(), a.pmap.values());
            assert_eq!(a.clean.frames()[0].data(), a.pmap.values());
        }
    }
}
