//! Spatial image feature maps.
//!
//! File layout (little-endian): magic `FGRD`, u32 version = 1, u32 H, u32 W,
//! u32 C, then H·W·C f32 values in row-major (h, w, c) order.

use std::fs;
use std::path::Path;

use super::binary::{put_f32s, put_u32, Reader};
use crate::error::{Error, FormatError, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"FGRD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "feature grid extents must be positive".into(),
            ));
        }
        if values.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "feature grid {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            values,
        })
    }

    /// A flat feature vector stored as a 1×1×C grid.
    pub fn vector(values: Vec<f32>) -> Result<Self> {
        let c = values.len();
        Self::new(1, 1, c, values)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Spatial positions as rows: `[H·W, C]`.
    pub fn to_rows<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.positions(), self.channels],
            self.values.iter().map(|&x| T::of_f32(x)).collect(),
        )
        .expect("grid invariant")
    }

    /// Channel means over all positions as a `[1, C]` row.
    pub fn mean_vector<T: Scalar>(&self) -> Tensor<T> {
        let n = self.positions() as f64;
        let mut out = vec![0f64; self.channels];
        for pos in self.values.chunks_exact(self.channels) {
            for (o, &x) in out.iter_mut().zip(pos) {
                *o += x as f64;
            }
        }
        Tensor::row(out.into_iter().map(|x| T::of(x / n)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.height as u32);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.channels as u32);
        put_f32s(&mut out, &self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let c = r.u32("channels")? as usize;
        if h == 0 || w == 0 || c == 0 {
            return Err(FormatError::Inconsistent(format!(
                "zero extent in {h}x{w}x{c}"
            )));
        }
        let n = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| FormatError::Inconsistent(format!("extent overflow in {h}x{w}x{c}")))?;
        let expected = n.checked_mul(4).ok_or(FormatError::Truncated("payload"))?;
        let have = r.remaining();
        if have > expected {
            return Err(FormatError::Inconsistent(format!(
                "header declares {n} values but payload has {have} bytes"
            )));
        }
        let values = r.f32s(n, "payload")?;
        Ok(FeatureGrid {
            height: h,
            width: w,
            channels: c,
            values,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(&fs::read(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
