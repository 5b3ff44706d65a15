//! Image-quality and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::imgproc::{filter_valid, gaussian_weights, Plane};
use crate::retrieval::RankingResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub c1: f64,
    pub c2: f64,
    /// Side of the square SSIM window.
    pub window: usize,
    pub window_sigma: f64,
    /// Peak intensity for PSNR and sharpness difference.
    pub max_value: f64,
    /// Score returned when the error term is zero, dB.
    pub cap_db: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        let l = 255.0;
        Self {
            c1: (0.01 * l) * (0.01 * l),
            c2: (0.03 * l) * (0.03 * l),
            window: 11,
            window_sigma: 1.5,
            max_value: l,
            cap_db: 100.0,
        }
    }
}

/// Maps a frame to a probability vector over a fixed label set.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, frame: &Frame) -> Vec<f64>;
}

/// Deterministic 8-class classifier: the fraction of pixels falling in
/// each RGB octant (each channel above or below mid-range).
#[derive(Clone, Copy, Debug, Default)]
pub struct ColorOctantClassifier;

impl Classifier for ColorOctantClassifier {
    fn num_classes(&self) -> usize {
        8
    }

    fn predict(&self, frame: &Frame) -> Vec<f64> {
        let mut h = vec![0.0; 8];
        for p in frame.pixels().chunks_exact(3) {
            let bin = usize::from(p[0] >= 128) | usize::from(p[1] >= 128) << 1 | usize::from(p[2] >= 128) << 2;
            h[bin] += 1.0;
        }
        let n = (frame.height() * frame.width()) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DegenerateClassifier(format!("{} probabilities for {n} classes", p.len())));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::DegenerateClassifier("negative or non-finite probability".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::DegenerateClassifier(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// Keep the `k` largest entries (earlier index wins ties) and spread the
/// remaining mass evenly over the other `n - k`.
pub fn topk_smooth(p: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = p.len();
    if k >= n {
        return Err(Error::Config(format!("top-k smoothing needs k < n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let kept: f64 = order[..k].iter().map(|&i| p[i]).sum();
    let eps = (1.0 - kept) / (n - k) as f64;
    let mut out = vec![eps; n];
    for &i in &order[..k] {
        out[i] = p[i];
    }
    Ok(out)
}

/// `exp(mean_i KL(p_i ‖ p̄))` over per-sample distributions, optionally
/// top-k smoothed first.
pub fn inception_score_from_probs(probs: &[Vec<f64>], topk: Option<usize>) -> Result<f64> {
    let Some(first) = probs.first() else {
        return Err(Error::EmptyInput("no samples".into()));
    };
    let n = first.len();
    let mut ps = Vec::with_capacity(probs.len());
    for p in probs {
        check_distribution(p, n)?;
        ps.push(match topk {
            Some(k) => topk_smooth(p, k)?,
            None => p.clone(),
        });
    }
    let m = ps.len() as f64;
    let marginal: Vec<f64> = (0..n).map(|c| ps.iter().map(|p| p[c]).sum::<f64>() / m).collect();
    let mean_kl = ps
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, qi)| pi * (pi / qi).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / m;
    Ok(mean_kl.exp())
}

pub fn inception_score(frames: &[Frame], clf: &dyn Classifier, topk: Option<usize>) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames".into()));
    }
    let probs: Vec<Vec<f64>> = frames.iter().map(|f| clf.predict(f)).collect();
    for p in &probs {
        check_distribution(p, clf.num_classes())?;
    }
    inception_score_from_probs(&probs, topk)
}

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

/// Mean local SSIM of the luma channels over all window positions that
/// fit inside the image.
pub fn ssim(a: &Frame, b: &Frame, cfg: &MetricConfig) -> Result<f64> {
    same_shape(a, b)?;
    if a.height() < cfg.window || a.width() < cfg.window {
        return Err(Error::Shape(format!(
            "{}x{} image smaller than the {} px SSIM window",
            a.height(),
            a.width(),
            cfg.window
        )));
    }
    let w = gaussian_weights(cfg.window_sigma, cfg.window / 2);
    let s: f64 = w.iter().sum();
    let w: Vec<f64> = w.into_iter().map(|v| v / s).collect();
    let pa = Plane::from_vec(a.height(), a.width(), a.luma());
    let pb = Plane::from_vec(b.height(), b.width(), b.luma());
    let mu_a = filter_valid(&pa, &w);
    let mu_b = filter_valid(&pb, &w);
    let e_aa = filter_valid(&pa.zip_map(&pa, |x, y| x * y), &w);
    let e_bb = filter_valid(&pb.zip_map(&pb, |x, y| x * y), &w);
    let e_ab = filter_valid(&pa.zip_map(&pb, |x, y| x * y), &w);
    let mut total = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = e_aa.data[i] - ma * ma;
        let vb = e_bb.data[i] - mb * mb;
        let cov = e_ab.data[i] - ma * mb;
        total += ((2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2)) / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
    }
    Ok(total / mu_a.data.len() as f64)
}

fn to_db(max: f64, err: f64, cap: f64) -> f64 {
    if err == 0.0 {
        cap
    } else {
        (10.0 * (max * max / err).log10()).min(cap)
    }
}

/// Peak signal-to-noise ratio over all pixels and channels.
pub fn psnr(truth: &Frame, test: &Frame, cfg: &MetricConfig) -> Result<f64> {
    same_shape(truth, test)?;
    let n = truth.pixels().len() as f64;
    let mse = truth
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n;
    Ok(to_db(cfg.max_value, mse, cfg.cap_db))
}

/// Sum of forward differences along rows and columns; zero on the last
/// row/column.
fn gradient_sum(p: &Plane) -> Vec<f64> {
    let mut out = vec![0.0; p.data.len()];
    for y in 0..p.height {
        for x in 0..p.width {
            let gi = if y + 1 < p.height { p.at(y + 1, x) - p.at(y, x) } else { 0.0 };
            let gj = if x + 1 < p.width { p.at(y, x + 1) - p.at(y, x) } else { 0.0 };
            out[y * p.width + x] = gi + gj;
        }
    }
    out
}

/// Sharpness difference: PSNR-style score of the mean absolute difference
/// between the summed luma gradients of the two images.
pub fn sharpness_difference(truth: &Frame, test: &Frame, cfg: &MetricConfig) -> Result<f64> {
    same_shape(truth, test)?;
    let ga = gradient_sum(&Plane::from_vec(truth.height(), truth.width(), truth.luma()));
    let gb = gradient_sum(&Plane::from_vec(test.height(), test.width(), test.luma()));
    let s = ga.iter().zip(&gb).map(|(a, b)| (a - b).abs()).sum::<f64>() / ga.len() as f64;
    Ok(to_db(cfg.max_value, s, cfg.cap_db))
}

/// Cumulative matching characteristic over a gallery of `gallery_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `values[k-1]` is the fraction of queries ranked within the top `k`.
    pub values: Vec<f64>,
    pub gallery_size: usize,
    pub auc: f64,
}

impl CmcCurve {
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,cmc\n");
        for (i, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{v}\n", i + 1));
        }
        s
    }
}

pub fn cmc_from_ranks(ranks: &[usize], gallery_size: usize) -> Result<CmcCurve> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("no ranking results".into()));
    }
    if gallery_size == 0 {
        return Err(Error::EmptyInput("empty gallery".into()));
    }
    let mut hist = vec![0usize; gallery_size];
    for &r in ranks {
        if r == 0 || r > gallery_size {
            return Err(Error::Shape(format!("rank {r} outside 1..={gallery_size}")));
        }
        hist[r - 1] += 1;
    }
    let q = ranks.len() as f64;
    let mut acc = 0;
    let values: Vec<f64> = hist
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / q
        })
        .collect();
    let auc = values.iter().sum::<f64>() / gallery_size as f64;
    Ok(CmcCurve {
        values,
        gallery_size,
        auc,
    })
}

pub fn cmc(results: &[RankingResult]) -> Result<CmcCurve> {
    let Some(first) = results.first() else {
        return Err(Error::EmptyInput("no ranking results".into()));
    };
    let n = first.ranked.len();
    if let Some(r) = results.iter().find(|r| r.ranked.len() != n) {
        return Err(Error::MixedGallerySizes(n, r.ranked.len()));
    }
    let ranks: Vec<usize> = results.iter().map(|r| r.rank_of_truth).collect();
    cmc_from_ranks(&ranks, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn identical_distributions_score_one() {
        let p = vec![vec![0.1, 0.2, 0.3, 0.4]; 7];
        assert!((inception_score_from_probs(&p, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_one_hots_score_count() {
        for m in 1..=6 {
            let probs: Vec<Vec<f64>> = (0..m).map(|i| (0..8).map(|c| f64::from(c == i)).collect()).collect();
            let is = inception_score_from_probs(&probs, None).unwrap();
            assert!((is - m as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn topk_formula_example() {
        let s = topk_smooth(&[0.6, 0.2, 0.1, 0.05, 0.05], 1).unwrap();
        for (a, b) in s.iter().zip([0.6, 0.1, 0.1, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(topk_smooth(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn is_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let probs: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        // direct: exp(E_x[Σ_y p(y|x) (log p(y|x) − log p(y))])
        let mut py = [0.0; 6];
        for p in &probs {
            for y in 0..6 {
                py[y] += p[y] / 50.0;
            }
        }
        let mut e = 0.0;
        for p in &probs {
            for y in 0..6 {
                e += p[y] * (p[y].ln() - py[y].ln()) / 50.0;
            }
        }
        assert!((inception_score_from_probs(&probs, None).unwrap() - e.exp()).abs() < 1e-9);
    }

    #[test]
    fn non_distribution_rejected() {
        assert!(matches!(
            inception_score_from_probs(&[vec![0.5, 0.6]], None),
            Err(Error::DegenerateClassifier(_))
        ));
        assert!(matches!(inception_score_from_probs(&[], None), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn octant_classifier_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 9, 7);
        let p = ColorOctantClassifier.predict(&f);
        check_distribution(&p, 8).unwrap();
    }

    #[test]
    fn ssim_identity_symmetry_and_constant_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = MetricConfig::default();
        let a = random_frame(&mut rng, 20, 24);
        let b = random_frame(&mut rng, 20, 24);
        assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        let black = Frame::filled(16, 16, [0; 3]);
        let white = Frame::filled(16, 16, [255; 3]);
        let want = cfg.c1 / (255.0f64.powi(2) + cfg.c1);
        assert!((ssim(&black, &white, &cfg).unwrap() - want).abs() < 1e-9);
    }

    /// Literal per-window evaluation with explicit 2-D Gaussian weights.
    fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let (la, lb) = (a.luma(), b.luma());
        let w = a.width();
        let mut g = [[0.0; 11]; 11];
        let mut z = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                z += *v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height() - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = (y0 + i) * w + x0 + j;
                        ma += g[i][j] / z * la[k];
                        mb += g[i][j] / z * lb[k];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = (y0 + i) * w + x0 + j;
                        let wt = g[i][j] / z;
                        va += wt * (la[k] - ma).powi(2);
                        vb += wt * (lb[k] - mb).powi(2);
                        cov += wt * (la[k] - ma) * (lb[k] - mb);
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let a = random_frame(&mut rng, 32, 32);
            let b = random_frame(&mut rng, 32, 32);
            let got = ssim(&a, &b, &MetricConfig::default()).unwrap();
            assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn psnr_closed_forms() {
        let cfg = MetricConfig::default();
        let a = Frame::filled(4, 4, [10, 20, 30]);
        assert_eq!(psnr(&a, &a, &cfg).unwrap(), 100.0);
        let b = Frame::filled(4, 4, [11, 21, 31]);
        assert!((psnr(&a, &b, &cfg).unwrap() - 48.1308).abs() < 1e-3);
        assert!(matches!(psnr(&a, &Frame::filled(4, 5, [0; 3]), &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn sharpness_step_edge_by_hand() {
        // truth constant; test steps from 0 to 255 between columns 1 and 2.
        // Forward column differences are 255 at column 1 of every row and
        // zero elsewhere (row differences vanish), so S = 4·255 / 16.
        let cfg = MetricConfig::default();
        let truth = Frame::filled(4, 4, [0; 3]);
        let test = Frame::from_fn(4, 4, |_, x| if x >= 2 { [255; 3] } else { [0; 3] });
        let s = 4.0 * 255.0 / 16.0;
        let want = 10.0 * (255.0f64 * 255.0 / s).log10();
        assert!((sharpness_difference(&truth, &test, &cfg).unwrap() - want).abs() < 1e-9);
        assert_eq!(sharpness_difference(&test, &test, &cfg).unwrap(), 100.0);
    }

    #[test]
    fn errors_fall_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MetricConfig::default();
        let base = Frame::from_fn(24, 24, |y, x| [(x * 8) as u8, (y * 8) as u8, 128]);
        let noise: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noisy = |amp: f64| {
            let px = base.pixels().iter().zip(&noise).map(|(&p, n)| (p as f64 + amp * n).round().clamp(0.0, 255.0) as u8);
            Frame::new(24, 24, px.collect()).unwrap()
        };
        let (mut lp, mut ls) = (f64::INFINITY, f64::INFINITY);
        for amp in [1.0, 4.0, 16.0] {
            let f = noisy(amp);
            let (p, s) = (psnr(&base, &f, &cfg).unwrap(), sharpness_difference(&base, &f, &cfg).unwrap());
            assert!(p < lp && s < ls);
            (lp, ls) = (p, s);
        }
    }

    #[test]
    fn cmc_counting_examples() {
        let c = cmc_from_ranks(&[3], 5).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((c.auc - 0.6).abs() < 1e-12);
        let perfect = cmc_from_ranks(&[1; 10], 4).unwrap();
        assert_eq!(perfect.auc, 1.0);
        assert!(matches!(cmc_from_ranks(&[], 4), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #[test]
        fn topk_stays_a_distribution(raw in prop::collection::vec(0.0f64..1.0, 2..20), k in 0usize..19) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / s).collect();
            prop_assume!(k < p.len());
            let q = topk_smooth(&p, k).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(q.iter().all(|v| *v >= -1e-12));
            let is = inception_score_from_probs(&[p.clone(), q], None).unwrap();
            prop_assert!(is >= 1.0 - 1e-9 && is <= p.len() as f64 + 1e-9);
        }

        #[test]
        fn cmc_is_monotone_and_order_free(ranks in prop::collection::vec(1usize..=30, 1..50)) {
            let c = cmc_from_ranks(&ranks, 30).unwrap();
            prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*c.values.last().unwrap(), 1.0);
            let mut rev = ranks.clone();
            rev.reverse();
            prop_assert_eq!(cmc_from_ranks(&rev, 30).unwrap().auc, c.auc);
        }
    }
}
