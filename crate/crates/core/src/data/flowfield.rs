//! Dense 2-D motion fields and their `EFLO` binary encoding:
//! magic `EFLO`, u32 height, u32 width, then `height*width*2` f32 values
//! (x then y displacement per pixel, row-major), all little-endian.

use std::path::Path;

use crate::data::frame::sample_axis;
use crate::error::{Error, Result};

pub const EFLO_MAGIC: &[u8; 4] = b"EFLO";

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    /// Interleaved `(dx, dy)` per pixel.
    vectors: Vec<f32>,
    pub source_time: usize,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize, source_time: usize) -> Self {
        Self {
            height,
            width,
            vectors: vec![0.0; height * width * 2],
            source_time,
        }
    }

    pub fn new(height: usize, width: usize, vectors: Vec<f32>, source_time: usize) -> Result<Self> {
        if vectors.len() != height * width * 2 {
            return Err(Error::Shape(format!(
                "{height}x{width} flow needs {} values, got {}",
                height * width * 2,
                vectors.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite flow value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            vectors,
            source_time,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [f32] {
        &mut self.vectors
    }

    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.vectors[i], self.vectors[i + 1])
    }

    pub fn set(&mut self, y: usize, x: usize, v: (f32, f32)) {
        let i = (y * self.width + x) * 2;
        self.vectors[i] = v.0;
        self.vectors[i + 1] = v.1;
    }

    /// Largest component magnitude.
    pub fn max_abs(&self) -> f32 {
        self.vectors.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bilinear resize (corner-aligned) with displacements rescaled by the
    /// same per-axis factor as the sampling grid.
    pub fn resize(&self, height: usize, width: usize) -> FlowField {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sx = if self.width > 1 && width > 1 {
            (width - 1) as f64 / (self.width - 1) as f64
        } else {
            width as f64 / self.width as f64
        };
        let sy = if self.height > 1 && height > 1 {
            (height - 1) as f64 / (self.height - 1) as f64
        } else {
            height as f64 / self.height as f64
        };
        let mut out = FlowField::zeros(height, width, self.source_time);
        for y in 0..height {
            let (y0, y1, ty) = sample_axis(y, height, self.height);
            for x in 0..width {
                let (x0, x1, tx) = sample_axis(x, width, self.width);
                let mut v = [0.0f64; 2];
                for (c, vc) in v.iter_mut().enumerate() {
                    let at = |yy: usize, xx: usize| self.vectors[(yy * self.width + xx) * 2 + c] as f64;
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    *vc = top * (1.0 - ty) + bot * ty;
                }
                out.set(y, x, ((v[0] * sx) as f32, (v[1] * sy) as f32));
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.vectors.len() * 4);
        out.extend_from_slice(EFLO_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse an `EFLO` buffer. The time index is not part of the encoding.
    pub fn decode(bytes: &[u8], source_time: usize) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Schema("EFLO buffer shorter than header".into()));
        }
        if &bytes[..4] != EFLO_MAGIC {
            return Err(Error::Schema("bad EFLO magic".into()));
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Error::Schema("EFLO dimensions overflow".into()))?;
        let body = &bytes[12..];
        if count.checked_mul(4) != Some(body.len()) {
            return Err(Error::Schema(format!(
                "EFLO body holds {} bytes, header implies {}x{}",
                body.len(),
                height,
                width
            )));
        }
        let vectors = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FlowField::new(height, width, vectors, source_time).map_err(|e| match e {
            Error::Numerical(m) => Error::Schema(m),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, source_time: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, source_time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let f = FlowField::new(1, 2, vec![1.0, -2.0, 0.5, 3.0], 4).unwrap();
        let b = f.encode();
        assert_eq!(&b[..4], b"EFLO");
        assert_eq!(&b[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 12 + 16);
    }

    #[test]
    fn decode_rejects_bad_input() {
        assert!(matches!(FlowField::decode(b"EFL", 0), Err(Error::Schema(_))));
        assert!(matches!(FlowField::decode(b"XFLO\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0", 0), Err(Error::Schema(_))));
        // truncated body
        assert!(matches!(FlowField::decode(b"EFLO\x01\0\0\0\x01\0\0\0\0\0\0\0", 0), Err(Error::Schema(_))));
        // NaN payload
        let mut b = FlowField::zeros(1, 1, 0).encode();
        b[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FlowField::decode(&b, 0).is_err());
    }

    #[test]
    fn resize_rescales_uniform_translation() {
        let mut f = FlowField::zeros(5, 9, 0);
        for y in 0..5 {
            for x in 0..9 {
                f.set(y, x, (2.0, -1.0));
            }
        }
        let r = f.resize(9, 17);
        let (u, v) = r.get(4, 8);
        assert!((u - 4.0).abs() < 1e-6 && (v + 2.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn eflo_roundtrip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let vals: Vec<f32> = (0..h * w * 2)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 2001) as f32 - 1000.0) / 7.0)
                .collect();
            let f = FlowField::new(h, w, vals, 3).unwrap();
            prop_assert_eq!(FlowField::decode(&f.encode(), 3).unwrap(), f);
        }
    }
}
