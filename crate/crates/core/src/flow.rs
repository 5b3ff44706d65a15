//! Momentary optical flow and temporal smoothing of flow sequences.

use serde::{Deserialize, Serialize};

use crate::data::{FlowField, Frame};
use crate::error::{Error, Result};
use crate::imgproc::{blur_same, gaussian_weights, Plane};

/// Default temporal smoothing width, in frames.
pub const DEFAULT_SIGMA: f64 = 1.5;

/// Dense flow from `prev` to `next`: a point at `p` in `prev` appears at
/// `p + flow(p)` in `next`.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField>;
}

/// Coarse-to-fine iterative Lucas–Kanade with a Gaussian-weighted
/// neighborhood and Tikhonov damping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidLk {
    pub levels: usize,
    pub iterations: usize,
    /// Width of the Gaussian integration window, pixels.
    pub window_sigma: f64,
    /// Damping added to the structure tensor diagonal.
    pub damping: f64,
}

impl Default for PyramidLk {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 10,
            window_sigma: 2.0,
            damping: 1.0,
        }
    }
}

fn luma_plane(f: &Frame) -> Plane {
    Plane::from_vec(f.height(), f.width(), f.luma())
}

/// Blur with the 5-tap binomial kernel, then keep every other sample.
fn downsample(p: &Plane) -> Plane {
    let b = blur_same(p, &[1.0, 4.0, 6.0, 4.0, 1.0]);
    let (h, w) = (p.height.div_ceil(2), p.width.div_ceil(2));
    let mut out = Plane::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.set(y, x, b.at(2 * y, 2 * x));
        }
    }
    out
}

/// Central differences (one-sided at the border).
fn gradients(p: &Plane) -> (Plane, Plane) {
    let mut gx = Plane::zeros(p.height, p.width);
    let mut gy = Plane::zeros(p.height, p.width);
    for y in 0..p.height {
        for x in 0..p.width {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(p.width - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(p.height - 1));
            if xr > xl {
                gx.set(y, x, (p.at(y, xr) - p.at(y, xl)) / (xr - xl) as f64);
            }
            if yd > yu {
                gy.set(y, x, (p.at(yd, x) - p.at(yu, x)) / (yd - yu) as f64);
            }
        }
    }
    (gx, gy)
}

impl PyramidLk {
    fn refine(&self, prev: &Plane, next: &Plane, u: &mut Plane, v: &mut Plane) {
        let (gx, gy) = gradients(prev);
        let win = gaussian_weights(self.window_sigma, (2.0 * self.window_sigma).ceil() as usize);
        let sxx = blur_same(&gx.zip_map(&gx, |a, b| a * b), &win);
        let sxy = blur_same(&gx.zip_map(&gy, |a, b| a * b), &win);
        let syy = blur_same(&gy.zip_map(&gy, |a, b| a * b), &win);
        for _ in 0..self.iterations {
            let mut it = Plane::zeros(prev.height, prev.width);
            for y in 0..prev.height {
                for x in 0..prev.width {
                    let i = y * prev.width + x;
                    let w = next.sample(y as f64 + v.data[i], x as f64 + u.data[i]);
                    it.data[i] = w - prev.data[i];
                }
            }
            let bx = blur_same(&gx.zip_map(&it, |a, b| a * b), &win);
            let by = blur_same(&gy.zip_map(&it, |a, b| a * b), &win);
            for i in 0..u.data.len() {
                let a = sxx.data[i] + self.damping;
                let b = sxy.data[i];
                let d = syy.data[i] + self.damping;
                let det = a * d - b * b;
                if det <= 0.0 {
                    continue;
                }
                // Damping pulls the total flow (not the step) toward zero, so
                // textureless regions do not keep coarse-level estimates.
                let rx = bx.data[i] + self.damping * u.data[i];
                let ry = by.data[i] + self.damping * v.data[i];
                let du = -(d * rx - b * ry) / det;
                let dv = -(a * ry - b * rx) / det;
                u.data[i] += du;
                v.data[i] += dv;
            }
        }
    }
}

/// Bilinearly upsample a flow component to `h × w`, scaling magnitudes by
/// the size ratio.
fn upsample(p: &Plane, h: usize, w: usize, scale: f64) -> Plane {
    let mut out = Plane::zeros(h, w);
    let sy = p.height as f64 / h as f64;
    let sx = p.width as f64 / w as f64;
    for y in 0..h {
        for x in 0..w {
            let v = p.sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5);
            out.set(y, x, v * scale);
        }
    }
    out
}

impl FlowEstimator for PyramidLk {
    fn estimate(&self, prev: &Frame, next: &Frame) -> Result<FlowField> {
        if !prev.same_shape(next) {
            return Err(Error::SizeMismatch(format!(
                "{}x{} vs {}x{}",
                prev.height(),
                prev.width(),
                next.height(),
                next.width()
            )));
        }
        let mut pa = vec![luma_plane(prev)];
        let mut pb = vec![luma_plane(next)];
        for _ in 1..self.levels.max(1) {
            let (a, b) = (pa.last().unwrap(), pb.last().unwrap());
            if a.height < 8 || a.width < 8 {
                break;
            }
            pa.push(downsample(a));
            pb.push(downsample(b));
        }
        let top = pa.last().unwrap();
        let mut u = Plane::zeros(top.height, top.width);
        let mut v = Plane::zeros(top.height, top.width);
        for lvl in (0..pa.len()).rev() {
            let (a, b) = (&pa[lvl], &pb[lvl]);
            if u.height != a.height || u.width != a.width {
                let sx = a.width as f64 / u.width as f64;
                let sy = a.height as f64 / u.height as f64;
                u = upsample(&u, a.height, a.width, sx);
                v = upsample(&v, a.height, a.width, sy);
            }
            self.refine(a, b, &mut u, &mut v);
        }
        let mut vectors = Vec::with_capacity(u.data.len() * 2);
        for (du, dv) in u.data.iter().zip(&v.data) {
            vectors.push(*du as f32);
            vectors.push(*dv as f32);
        }
        FlowField::new(prev.height(), prev.width(), vectors, 0)
    }
}

pub fn compute_flow(prev: &Frame, next: &Frame) -> Result<FlowField> {
    PyramidLk::default().estimate(prev, next)
}

/// Flow fields of a video, one per frame after the first.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSequence {
    pub flows: Vec<FlowField>,
    pub smoothing_sigma: f64,
}

impl FlowSequence {
    /// Momentary flows `t-1 → t` for `t = 1..frames.len()`, tagged with `t`.
    pub fn from_frames(frames: &[Frame], estimator: &dyn FlowEstimator) -> Result<Self> {
        let mut flows = Vec::with_capacity(frames.len().saturating_sub(1));
        for t in 1..frames.len() {
            let mut f = estimator.estimate(&frames[t - 1], &frames[t])?;
            f.source_time = t;
            flows.push(f);
        }
        Ok(Self {
            flows,
            smoothing_sigma: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

/// Gaussian smoothing along time, per pixel and component, with the
/// kernel truncated at `floor(3σ)` frames. Near the ends the kernel is
/// renormalized over the frames that exist.
pub fn smooth_temporal(fs: &FlowSequence, sigma: f64) -> Result<FlowSequence> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::NegativeSigma(sigma));
    }
    if let Some(first) = fs.flows.first() {
        if let Some(bad) = fs.flows.iter().find(|f| f.height() != first.height() || f.width() != first.width()) {
            return Err(Error::SizeMismatch(format!(
                "flow at t={} is {}x{}, expected {}x{}",
                bad.source_time,
                bad.height(),
                bad.width(),
                first.height(),
                first.width()
            )));
        }
    }
    if sigma == 0.0 {
        return Ok(FlowSequence {
            flows: fs.flows.clone(),
            smoothing_sigma: fs.smoothing_sigma,
        });
    }
    let kernel = gaussian_weights(sigma, (3.0 * sigma).floor() as usize);
    let r = (kernel.len() / 2) as isize;
    let n = fs.flows.len() as isize;
    let mut flows = Vec::with_capacity(fs.flows.len());
    for t in 0..n {
        let mut acc = vec![0.0f64; fs.flows[t as usize].vectors().len()];
        let mut wsum = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            let s = t + k as isize - r;
            if s < 0 || s >= n {
                continue;
            }
            wsum += w;
            for (a, &v) in acc.iter_mut().zip(fs.flows[s as usize].vectors()) {
                *a += w * v as f64;
            }
        }
        let src = &fs.flows[t as usize];
        let vectors = acc.into_iter().map(|a| (a / wsum) as f32).collect();
        flows.push(FlowField::new(src.height(), src.width(), vectors, src.source_time)?);
    }
    Ok(FlowSequence {
        flows,
        smoothing_sigma: sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture sampled at an integer offset.
    fn texture(seed: u64, h: usize, w: usize, shift: (isize, isize)) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bh, bw) = (h + 20, w + 20);
        let noise = Plane::from_vec(bh, bw, (0..bh * bw).map(|_| rng.random_range(0.0..255.0)).collect());
        let smooth = blur_same(&noise, &gaussian_weights(1.5, 4));
        let (lo, hi) = smooth.data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        Frame::from_fn(h, w, |y, x| {
            let sy = (y as isize + 10 - shift.1) as usize;
            let sx = (x as isize + 10 - shift.0) as usize;
            let g = ((smooth.at(sy, sx) - lo) / (hi - lo) * 255.0) as u8;
            [g, g / 2 + 60, 255 - g]
        })
    }

    fn median_endpoint_error(f: &FlowField, want: (f64, f64), border: usize) -> f64 {
        let mut e = Vec::new();
        for y in border..f.height() - border {
            for x in border..f.width() - border {
                let (u, v) = f.get(y, x);
                e.push(((u as f64 - want.0).powi(2) + (v as f64 - want.1).powi(2)).sqrt());
            }
        }
        e.sort_by(f64::total_cmp);
        e[e.len() / 2]
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(1, 32, 40, (0, 0));
        let f = compute_flow(&a, &a).unwrap();
        assert!(f.vectors().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recovers_pure_translations() {
        for (dx, dy) in [(3, 0), (0, -2), (4, 1), (-4, -4)] {
            let a = texture(7, 48, 48, (0, 0));
            let b = texture(7, 48, 48, (dx, dy));
            let f = compute_flow(&a, &b).unwrap();
            let e = median_endpoint_error(&f, (dx as f64, dy as f64), 8);
            assert!(e < 0.5, "shift ({dx},{dy}): median EPE {e}");
        }
    }

    #[test]
    fn checkerboard_identity_is_zero() {
        let c = Frame::from_fn(16, 16, |y, x| if (y / 4 + x / 4) % 2 == 0 { [255; 3] } else { [0; 3] });
        assert_eq!(compute_flow(&c, &c).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = Frame::filled(8, 8, [0; 3]);
        let b = Frame::filled(8, 9, [0; 3]);
        assert!(matches!(compute_flow(&a, &b), Err(Error::SizeMismatch(_))));
    }

    fn seq(values: &[f32]) -> FlowSequence {
        FlowSequence {
            flows: values
                .iter()
                .enumerate()
                .map(|(t, &v)| FlowField::new(1, 1, vec![v, -v], t + 1).unwrap())
                .collect(),
            smoothing_sigma: 0.0,
        }
    }

    #[test]
    fn sigma_zero_is_identity_and_negative_rejected() {
        let s = seq(&[1.0, -3.0, 2.5]);
        assert_eq!(smooth_temporal(&s, 0.0).unwrap().flows, s.flows);
        assert!(matches!(smooth_temporal(&s, -0.5), Err(Error::NegativeSigma(_))));
    }

    #[test]
    fn constant_sequence_unchanged() {
        let s = seq(&[2.0; 9]);
        let out = smooth_temporal(&s, 1.5).unwrap();
        assert!(out.flows.iter().all(|f| (f.vectors()[0] - 2.0).abs() < 1e-6));
    }

    #[test]
    fn impulse_response_matches_normalized_gaussian() {
        let mut v = vec![0.0f32; 15];
        v[7] = 1.0;
        let out = smooth_temporal(&seq(&v), 1.0).unwrap();
        // independent kernel: exp(-k²/2), k = -3..=3, normalized
        let raw: Vec<f64> = (-3i32..=3).map(|k| (-(k * k) as f64 / 2.0).exp()).collect();
        let z: f64 = raw.iter().sum();
        for (k, w) in raw.iter().enumerate() {
            let t = 4 + k;
            assert!((out.flows[t].vectors()[0] as f64 - w / z).abs() < 1e-7);
        }
        assert_eq!(out.flows[3].vectors()[0], 0.0);
    }

    proptest! {
        #[test]
        fn smoothing_is_linear_and_non_expansive(
            a in prop::collection::vec(-10.0f32..10.0, 1..12),
            sigma in 0.0f64..3.0,
            ka in -2.0f32..2.0,
            kb in -2.0f32..2.0,
        ) {
            let b: Vec<f32> = a.iter().rev().map(|v| v * 0.5 + 1.0).collect();
            let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| ka * x + kb * y).collect();
            let sa = smooth_temporal(&seq(&a), sigma).unwrap();
            let sb = smooth_temporal(&seq(&b), sigma).unwrap();
            let sm = smooth_temporal(&seq(&mix), sigma).unwrap();
            for t in 0..a.len() {
                let want = ka * sa.flows[t].vectors()[0] + kb * sb.flows[t].vectors()[0];
                prop_assert!((sm.flows[t].vectors()[0] - want).abs() < 1e-3);
            }
            let max_in = a.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let max_out = sa.flows.iter().fold(0.0f32, |m, f| m.max(f.max_abs()));
            prop_assert!(max_out <= max_in * (1.0 + 1e-6));
        }
    }
}
