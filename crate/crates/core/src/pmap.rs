//! Per-pixel degradation parameter maps and the PMAP container.
//!
//! PMAP layout (all little-endian):
//!
//! | bytes   | content                               |
//! |---------|---------------------------------------|
//! | 0..4    | magic `PMAP`                          |
//! | 4       | version = 1                           |
//! | 5       | kind (0 = turbulence, 1 = noise)      |
//! | 6..8    | reserved, zero                        |
//! | 8..16   | `phys_max` as f64                     |
//! | 16..20  | height as u32                         |
//! | 20..24  | width as u32                          |
//! | 24..    | `height * width` f32 values, row-major |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const PMAP_VERSION: u8 = 1;
const HEADER_LEN: usize = 24;

/// Upper end of the structure constant range, Cn² in m^(-2/3).
pub const TURBULENCE_PHYS_MAX: f64 = 6e-12;
/// Upper end of the noise level range on the 0–255 scale.
pub const NOISE_PHYS_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Turbulence,
    Noise,
}

impl DegradationKind {
    pub fn phys_max(self) -> f64 {
        match self {
            DegradationKind::Turbulence => TURBULENCE_PHYS_MAX,
            DegradationKind::Noise => NOISE_PHYS_MAX,
        }
    }

    fn code(self) -> u8 {
        match self {
            DegradationKind::Turbulence => 0,
            DegradationKind::Noise => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DegradationKind::Turbulence),
            1 => Ok(DegradationKind::Noise),
            other => Err(Error::Format(format!("unknown PMAP kind byte {other}"))),
        }
    }
}

/// Normalized parameter matrix `P` with its physical scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub kind: DegradationKind,
    pub phys_max: f64,
}

impl ParamMap {
    /// `values` must be row-major `height * width` and lie in `[0, 1]`.
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        kind: DegradationKind,
    ) -> Result<Self> {
        Self::with_phys_max(height, width, values, kind, kind.phys_max())
    }

    pub fn with_phys_max(
        height: usize,
        width: usize,
        values: Vec<f32>,
        kind: DegradationKind,
        phys_max: f64,
    ) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "parameter map has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "parameter map value {v} outside [0, 1]"
            )));
        }
        Ok(ParamMap {
            height,
            width,
            values,
            kind,
            phys_max,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32, kind: DegradationKind) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], kind)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Physical parameter at `(y, x)`.
    pub fn phys(&self, y: usize, x: usize) -> f64 {
        self.value(y, x) as f64 * self.phys_max
    }

    pub fn mean_phys(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
            * self.phys_max
    }

    pub fn check_matches(&self, frame: &Frame) -> Result<()> {
        if (self.height, self.width) != (frame.height(), frame.width()) {
            return Err(Error::Shape(format!(
                "parameter map {}x{} vs frame {}x{}",
                self.height,
                self.width,
                frame.height(),
                frame.width()
            )));
        }
        Ok(())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ParamMap> {
        let f = self.as_frame().crop(top, left, height, width)?;
        Ok(Self::from_frame_unchecked(&f, self.kind, self.phys_max))
    }

    pub fn flip_horizontal(&self) -> ParamMap {
        Self::from_frame_unchecked(&self.as_frame().flip_horizontal(), self.kind, self.phys_max)
    }

    pub fn flip_vertical(&self) -> ParamMap {
        Self::from_frame_unchecked(&self.as_frame().flip_vertical(), self.kind, self.phys_max)
    }

    /// Single-channel frame view of the normalized values.
    pub fn as_frame(&self) -> Frame {
        Frame::new(self.height, self.width, 1, self.values.clone()).expect("valid map shape")
    }

    fn from_frame_unchecked(f: &Frame, kind: DegradationKind, phys_max: f64) -> ParamMap {
        ParamMap {
            height: f.height(),
            width: f.width(),
            values: f.data().to_vec(),
            kind,
            phys_max,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(PMAP_MAGIC);
        out.push(PMAP_VERSION);
        out.push(self.kind.code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.phys_max.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "PMAP needs a {HEADER_LEN}-byte header, got {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != PMAP_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"PMAP\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        if bytes[4] != PMAP_VERSION {
            return Err(Error::Format(format!("unsupported PMAP version {}", bytes[4])));
        }
        let kind = DegradationKind::from_code(bytes[5])?;
        let phys_max = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let height = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        let width = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != height * width * 4 {
            return Err(Error::Format(format!(
                "PMAP header declares {height}x{width} but carries {} bytes of data",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        ParamMap::with_phys_max(height, width, values, kind, phys_max)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn write_parammap(map: &ParamMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_parammap(path: impl AsRef<Path>) -> Result<ParamMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ParamMap::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
