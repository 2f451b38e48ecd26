//! Frames, sequences and their PNG storage.
//!
//! Pixel data is held channel-planar (`C × H × W`, row-major inside each
//! plane) as `f32` in `[0, 1]`; 8-bit sources are divided by 255 and 16-bit
//! sources by 65535 on load.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Smallest spatial size accepted by the restoration models.
pub const MIN_MODEL_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions {height}x{width}x{channels} are not valid"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "frame buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Frame {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a frame from `f(channel, y, x)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Frame {
            height,
            width,
            channels,
            data,
        }
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Frame {
        Frame {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean of `|self - other|` over every sample.
    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        self.check_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn check_same_shape(&self, other: &Frame) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "frame {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Copies the window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Frame::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn flip_horizontal(&self) -> Frame {
        Frame::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Frame {
        Frame::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, self.height - 1 - y, x)
        })
    }
}

/// Bit depth used when writing PNGs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(buf) => (
            1,
            buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb8(buf) => (
            3,
            interleaved_to_planar(&buf.into_raw(), h * w, |v| v as f32 / 255.0),
        ),
        DynamicImage::ImageRgb16(buf) => (
            3,
            interleaved_to_planar(&buf.into_raw(), h * w, |v| v as f32 / 65535.0),
        ),
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    Frame::new(h, w, channels, data)
}

fn interleaved_to_planar<T: Copy>(raw: &[T], n: usize, f: impl Fn(T) -> f32) -> Vec<f32> {
    let mut out = vec![0.0; n * 3];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = f(px[c]);
        }
    }
    out
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Saves at 16 bits per sample.
pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    save_frame_with_depth(frame, path, BitDepth::Sixteen)
}

pub fn save_frame_with_depth(frame: &Frame, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = (frame.height as u32, frame.width as u32);
    let n = frame.height * frame.width;
    let interleave = |scale: f32| -> Vec<f32> {
        let mut out = Vec::with_capacity(n * frame.channels);
        for i in 0..n {
            for c in 0..frame.channels {
                out.push((frame.data[c * n + i].clamp(0.0, 1.0) * scale).round());
            }
        }
        out
    };
    let img = match (depth, frame.channels) {
        (BitDepth::Eight, 1) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, interleave(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (BitDepth::Eight, _) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleave(255.0).iter().map(|&v| v as u8).collect())
                .expect("buffer size"),
        ),
        (BitDepth::Sixteen, 1) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w,
                h,
                interleave(65535.0).iter().map(|&v| v as u16).collect(),
            )
            .expect("buffer size"),
        ),
        (BitDepth::Sixteen, _) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(
                w,
                h,
                interleave(65535.0).iter().map(|&v| v as u16).collect(),
            )
            .expect("buffer size"),
        ),
    };
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Ordered frames sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
    pub frame_rate: Option<f64>,
    pub id: String,
}

impl Sequence {
    pub fn new(id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("sequence needs at least one frame".into()))?;
        let shape = first.shape();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::Shape(format!(
                "frame {i} has shape {:?}, expected {:?}",
                f.shape(),
                shape
            )));
        }
        Ok(Sequence {
            frames,
            frame_rate: None,
            id: id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width, channels)` shared by every frame.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// Keeps the first `n` frames.
    pub fn truncated(&self, n: usize) -> Sequence {
        let n = n.clamp(1, self.len());
        Sequence {
            frames: self.frames[..n].to_vec(),
            frame_rate: self.frame_rate,
            id: self.id.clone(),
        }
    }

    /// Frames `start..start+len`, clamped to the sequence.
    pub fn window(&self, start: usize, len: usize) -> Sequence {
        let start = start.min(self.len() - 1);
        let end = (start + len.max(1)).min(self.len());
        Sequence {
            frames: self.frames[start..end].to_vec(),
            frame_rate: self.frame_rate,
            id: self.id.clone(),
        }
    }

    pub fn map_frames(&self, f: impl FnMut(&Frame) -> Frame) -> Result<Sequence> {
        let mut seq = Sequence::new(self.id.clone(), self.frames.iter().map(f).collect())?;
        seq.frame_rate = self.frame_rate;
        Ok(seq)
    }

    /// Pixelwise temporal mean.
    pub fn temporal_mean(&self) -> Frame {
        let (h, w, c) = self.shape();
        let mut acc = vec![0.0f64; h * w * c];
        for f in &self.frames {
            for (a, v) in acc.iter_mut().zip(f.data()) {
                *a += *v as f64;
            }
        }
        let n = self.len() as f64;
        Frame {
            height: h,
            width: w,
            channels: c,
            data: acc.into_iter().map(|v| (v / n) as f32).collect(),
        }
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Lists the PNG files of a directory in name order.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG of `dir` in name order. The sequence id is the directory name.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} contains no PNG frames",
            dir.display()
        )));
    }
    let frames = files.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Sequence::new(id, frames)
}

/// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`.
pub fn save_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        save_frame(f, dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize, c: usize) -> Frame {
        Frame::from_fn(h, w, c, |c, y, x| {
            ((x * 7 + y * 3 + c * 11) % 97) as f32 / 96.0
        })
    }

    #[test]
    fn zero_png_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.png");
        image::GrayImage::new(16, 12).save(&p).unwrap();
        let f = load_frame(&p).unwrap();
        assert_eq!(f.shape(), (12, 16, 1));
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rgb_png_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        save_frame_with_depth(&gradient(128, 128, 3), &p, BitDepth::Eight).unwrap();
        let f = load_frame(&p).unwrap();
        assert_eq!(f.shape(), (128, 128, 3));
    }

    #[test]
    fn sixteen_bit_round_trip_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let f = Frame::from_fn(33, 21, 3, |c, y, x| ((c * 31 + y * 17 + x * 5) as f32 * 0.0137).fract());
        save_frame(&f, &p).unwrap();
        let g = load_frame(&p).unwrap();
        let d = f
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(d <= 1.0 / 65535.0, "{d}");
        // second trip is exact
        save_frame(&g, &p).unwrap();
        assert_eq!(load_frame(&p).unwrap(), g);
    }

    #[test]
    fn eight_bit_round_trip_bound() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let f = gradient(20, 30, 1);
        save_frame_with_depth(&f, &p, BitDepth::Eight).unwrap();
        let g = load_frame(&p).unwrap();
        for (a, b) in f.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_frame("/definitely/not/here.png").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.png"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sequence_rejects_mixed_shapes() {
        let r = Sequence::new("s", vec![Frame::zeros(4, 4, 1), Frame::zeros(4, 5, 1)]);
        assert!(matches!(r, Err(Error::Shape(_))));
        assert!(Sequence::new("s", vec![]).is_err());
    }

    #[test]
    fn crop_and_flips() {
        let f = gradient(6, 5, 1);
        let c = f.crop(1, 2, 3, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), f.get(0, 1, 2));
        assert_eq!(f.flip_horizontal().get(0, 2, 0), f.get(0, 2, 4));
        assert_eq!(f.flip_vertical().get(0, 0, 3), f.get(0, 5, 3));
        assert!(f.crop(4, 0, 3, 1).is_err());
    }
}
