//! Single-channel real-valued image planes and the filtering helpers shared
//! by the flow estimator and the metrics.

/// Row-major `height × width` grid of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at real coordinates, clamped to the border.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bot = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Unnormalized Gaussian weights `exp(-k²/2σ²)` for `k = -radius..=radius`.
pub fn gaussian_weights(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable convolution keeping the input size; near borders the kernel
/// is renormalized over the taps that fall inside the image.
pub fn blur_same(p: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let pass = |src: &Plane, horizontal: bool| {
        let mut out = Plane::zeros(src.height, src.width);
        let (n_outer, n_inner) = if horizontal { (src.height, src.width) } else { (src.width, src.height) };
        for o in 0..n_outer {
            for i in 0..n_inner {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let j = i as isize + k as isize - r;
                    if j < 0 || j >= n_inner as isize {
                        continue;
                    }
                    let v = if horizontal { src.at(o, j as usize) } else { src.at(j as usize, o) };
                    acc += w * v;
                    wsum += w;
                }
                let v = acc / wsum;
                if horizontal {
                    out.set(o, i, v);
                } else {
                    out.set(i, o, v);
                }
            }
        }
        out
    };
    pass(&pass(p, true), false)
}

/// Separable "valid" correlation with a normalized kernel: output is
/// `(h - k + 1) × (w - k + 1)`.
pub fn filter_valid(p: &Plane, kernel: &[f64]) -> Plane {
    let k = kernel.len();
    let (oh, ow) = (p.height + 1 - k, p.width + 1 - k);
    let mut tmp = Plane::zeros(p.height, ow);
    for y in 0..p.height {
        let row = &p.data[y * p.width..(y + 1) * p.width];
        for x in 0..ow {
            tmp.set(y, x, kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum());
        }
    }
    let mut out = Plane::zeros(oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                acc += w * tmp.at(y + i, x);
            }
            out.set(y, x, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constant_and_valid_shrinks() {
        let p = Plane::from_vec(5, 7, vec![3.0; 35]);
        let k = gaussian_weights(1.0, 3);
        let b = blur_same(&p, &k);
        assert!(b.data.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let s: f64 = k.iter().sum();
        let kn: Vec<f64> = k.iter().map(|w| w / s).collect();
        let v = filter_valid(&Plane::from_vec(9, 8, vec![2.0; 72]), &kn);
        assert_eq!((v.height, v.width), (3, 2));
        assert!(v.data.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_sample_interpolates() {
        let p = Plane::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        assert!((p.sample(0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(p.sample(-3.0, 9.0), 1.0);
    }
}
