use std::path::Path;

use exo2ego_nn::Tensor;

use crate::error::{Error, Result};

/// Side length used by the synthesis network.
pub const SYNTHESIS_SIZE: usize = 256;

/// Luma weights applied by every grayscale conversion.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.height, self.width)
    }
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty frame {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width} frame needs {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            pixels: rgb.iter().copied().cycle().take(height * width * 3).collect(),
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        assert!(height > 0 && width > 0);
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Grayscale intensities in `[0, 255]`.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect()
    }

    /// `[1, 3, H, W]` tensor scaled to `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut data = vec![0.0; 3 * hw];
        for (i, p) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c] as f64 / 127.5 - 1.0;
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], data)
    }

    /// Inverse of [`Frame::to_tensor`] for batch item `index`; values outside
    /// `[-1, 1]` saturate.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let s = t.sample(index);
        let hw = h * w;
        let mut pixels = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for ch in 0..3 {
                pixels.push(((s[ch * hw + i] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
            }
        }
        Frame::new(h, w, pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Schema(format!("{}: {other}", path.display())),
        })?;
        let rgb = img.to_rgb8();
        Frame::new(rgb.height() as usize, rgb.width() as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Schema(other.to_string()),
        })
    }

    /// Bilinear resampling with corner-aligned sampling grids: output corner
    /// pixels take exactly the input corner values.
    pub fn resize(&self, height: usize, width: usize) -> Frame {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let (y0, y1, ty) = sample_axis(y, height, self.height);
            for x in 0..width {
                let (x0, x1, tx) = sample_axis(x, width, self.width);
                for c in 0..3 {
                    let v = |yy: usize, xx: usize| self.pixels[(yy * self.width + xx) * 3 + c] as f64;
                    let top = v(y0, x0) * (1.0 - tx) + v(y0, x1) * tx;
                    let bot = v(y1, x0) * (1.0 - tx) + v(y1, x1) * tx;
                    let val = top * (1.0 - ty) + bot * ty;
                    out.push(val.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame {
            height,
            width,
            pixels: out,
        }
    }
}

/// Source taps and weight for output index `i` on a corner-aligned grid.
pub(crate) fn sample_axis(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    if out_len <= 1 || in_len <= 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (in_len - 1)) as f64 / (out_len - 1) as f64;
    let i0 = (pos.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, pos - i0 as f64)
}

/// Resize to the synthesis network's 256×256 input.
pub fn resize_for_synthesis(f: &Frame) -> Frame {
    f.resize(SYNTHESIS_SIZE, SYNTHESIS_SIZE)
}
