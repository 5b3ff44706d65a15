//! Experiments on trained models: linear view-invariance probes over
//! embeddings and retrieval of synthesized ego frames.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Frame, Manifest, SequenceEntry, Split, View};
use crate::dataset::{frame_input, InputSet, InputSpec, Variant};
use crate::error::{Error, Result};
use crate::metrics::{cmc, CmcCurve};
use crate::retrieval::{gallery_from_set, rank_all, EmbeddingModel, Gallery, GalleryKind, SourceId, Stream};
use crate::synthesis::SynthesisModel;

/// One-vs-rest linear SVM (hinge loss, L2 penalty) fitted by dual
/// coordinate descent. The bias is learned as the weight of a constant
/// feature.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub classes: usize,
    /// Per class, `dim + 1` weights with the bias last.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 200,
            tolerance: 1e-2,
            seed: 0,
        }
    }
}

fn augment(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(1.0);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearSvm {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &SvmConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("no training features".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::MissingLabels(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::MissingLabels(format!("label {bad} outside {classes} classes")));
        }
        let xs: Vec<Vec<f64>> = features.iter().map(|f| augment(f)).collect();
        let q: Vec<f64> = xs.iter().map(|x| dot(x, x)).collect();
        let dim = xs[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights = Vec::with_capacity(classes);
        for class in 0..classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0; dim];
            let mut alpha = vec![0.0; xs.len()];
            let mut order: Vec<usize> = (0..xs.len()).collect();
            for _ in 0..cfg.max_epochs {
                order.shuffle(&mut rng);
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
                for &i in &order {
                    if q[i] <= 0.0 {
                        continue;
                    }
                    let g = y[i] * dot(&w, &xs[i]) - 1.0;
                    let pg = if alpha[i] <= 0.0 {
                        g.min(0.0)
                    } else if alpha[i] >= cfg.c {
                        g.max(0.0)
                    } else {
                        g
                    };
                    hi = hi.max(pg);
                    lo = lo.min(pg);
                    if pg.abs() > 1e-12 {
                        let old = alpha[i];
                        alpha[i] = (old - g / q[i]).clamp(0.0, cfg.c);
                        let step = (alpha[i] - old) * y[i];
                        for (wk, xk) in w.iter_mut().zip(&xs[i]) {
                            *wk += step * xk;
                        }
                    }
                }
                if hi - lo < cfg.tolerance {
                    break;
                }
            }
            weights.push(w);
        }
        Ok(Self { classes, weights })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let a = augment(x);
        self.weights.iter().map(|w| dot(w, &a)).collect()
    }

    /// Highest-scoring class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for (k, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        if features.is_empty() {
            return f64::NAN;
        }
        let hits = features.iter().zip(labels).filter(|(f, &l)| self.predict(f) == l).count();
        hits as f64 / features.len() as f64
    }
}

/// Feature sets a classifier is fitted on or evaluated with.
pub const PROBE_VIEWS: [&str; 3] = ["ego", "exo", "both"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub variant: Variant,
    pub classes: usize,
    pub chance: f64,
    /// `grid[i][j]`: classifier fitted on `PROBE_VIEWS[i]` training features,
    /// accuracy on `PROBE_VIEWS[j]` test features.
    pub grid: [[f64; 3]; 3],
    pub test_items: [usize; 3],
    pub random_labels: bool,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("classifier,ego,exo,both\n");
        for (name, row) in PROBE_VIEWS.iter().zip(&self.grid) {
            s.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", row[0], row[1], row[2]));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub svm: SvmConfig,
    /// Standardize features with training-set mean and deviation.
    pub standardize: bool,
    /// Replace every label (train and test) with an independent uniform
    /// draw from the vocabulary, seeded; a null-calibration run.
    pub random_labels: Option<u64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            svm: SvmConfig::default(),
            standardize: false,
            random_labels: None,
        }
    }
}

struct Features {
    ego: Vec<Vec<f64>>,
    exo: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

/// With `resolve` unset the true labels are only checked for presence and
/// left as class 0.
fn features(model: &EmbeddingModel, set: &InputSet, m: &Manifest, resolve: bool) -> Result<Features> {
    let vocab = m.modality;
    let mut labels = Vec::new();
    for s in &set.sequences {
        if s.labels.len() != s.len() {
            return Err(Error::MissingLabels(format!("sequence {} lacks per-frame labels", s.id)));
        }
        if !resolve {
            labels.resize(labels.len() + s.len(), 0);
            continue;
        }
        for &a in &s.labels {
            labels.push(vocab.class_index(a).ok_or_else(|| {
                Error::MissingLabels(format!("label {a} of sequence {} is outside the vocabulary", s.id))
            })?);
        }
    }
    let to_f64 = |g: &Gallery| -> Vec<Vec<f64>> {
        (0..g.len()).map(|i| g.embedding(i).iter().map(|&v| v as f64).collect()).collect()
    };
    // Galleries are sorted by id, which matches the set's sequence/time order
    // only if sequence ids sort like the manifest; reorder explicitly.
    let order = |g: &Gallery, view: View| -> Result<Vec<Vec<f64>>> {
        let all = to_f64(g);
        let mut out = Vec::with_capacity(all.len());
        for s in &set.sequences {
            for &t in &s.times {
                let i = g
                    .position(&SourceId::new(&s.id, t, view))
                    .ok_or_else(|| Error::TruthMissing(format!("{}:{t}", s.id)))?;
                out.push(all[i].clone());
            }
        }
        Ok(out)
    };
    let ego = order(&gallery_from_set(model, set, View::Ego)?, View::Ego)?;
    let exo = order(&gallery_from_set(model, set, set.exo_view)?, set.exo_view)?;
    Ok(Features { ego, exo, labels })
}

fn standardize(train: &mut [Vec<f64>], others: &mut [&mut Vec<Vec<f64>>]) {
    let Some(dim) = train.first().map(Vec::len) else { return };
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in train.iter() {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for f in train.iter() {
        for ((s, v), m) in sd.iter_mut().zip(f).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    let apply = |f: &mut Vec<f64>| {
        for ((v, m), s) in f.iter_mut().zip(&mean).zip(&sd) {
            *v = (*v - m) / s;
        }
    };
    train.iter_mut().for_each(apply);
    for o in others.iter_mut() {
        o.iter_mut().for_each(apply);
    }
}

/// Fit ego-only, exo-only and pooled classifiers on training embeddings and
/// evaluate each on ego, exo and pooled test embeddings.
pub fn view_invariance_test(
    model: &EmbeddingModel,
    m: &Manifest,
    variant: Variant,
    spec: &InputSpec,
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    let train = InputSet::load(m, Split::Train, variant, spec)?;
    let test = InputSet::load(m, Split::Test, variant, spec)?;
    view_invariance_on_sets(model, m, &train, &test, opts)
}

pub fn view_invariance_on_sets(
    model: &EmbeddingModel,
    m: &Manifest,
    train: &InputSet,
    test: &InputSet,
    opts: &ProbeOptions,
) -> Result<ProbeReport> {
    if model.trained_steps == 0 {
        return Err(Error::UntrainedModel);
    }
    if train.variant.channels() != model.config.input_channels {
        return Err(Error::Config("input variant does not match the model".into()));
    }
    let classes = m.modality.vocabulary().len();
    let resolve = opts.random_labels.is_none();
    let mut tr = features(model, train, m, resolve)?;
    let mut te = features(model, test, m, resolve)?;
    if tr.labels.is_empty() || te.labels.is_empty() {
        return Err(Error::MissingLabels("train and test splits both need labeled items".into()));
    }
    if let Some(seed) = opts.random_labels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in tr.labels.iter_mut().chain(te.labels.iter_mut()) {
            *l = rng.random_range(0..classes);
        }
    }
    if opts.standardize {
        // Pooled statistics over both training views.
        let mut pooled: Vec<Vec<f64>> = tr.ego.iter().chain(&tr.exo).cloned().collect();
        let n = tr.ego.len();
        standardize(&mut pooled, &mut [&mut te.ego, &mut te.exo]);
        tr.exo = pooled.split_off(n);
        tr.ego = pooled;
    }
    let pool = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> { a.iter().chain(b).cloned().collect() };
    let twice = |l: &[usize]| -> Vec<usize> { l.iter().chain(l).copied().collect() };
    let train_sets = [
        (tr.ego.clone(), tr.labels.clone()),
        (tr.exo.clone(), tr.labels.clone()),
        (pool(&tr.ego, &tr.exo), twice(&tr.labels)),
    ];
    let test_sets = [
        (te.ego.clone(), te.labels.clone()),
        (te.exo.clone(), te.labels.clone()),
        (pool(&te.ego, &te.exo), twice(&te.labels)),
    ];
    let mut grid = [[0.0; 3]; 3];
    for (i, (x, y)) in train_sets.iter().enumerate() {
        let svm = LinearSvm::fit(x, y, classes, &opts.svm)?;
        for (j, (tx, ty)) in test_sets.iter().enumerate() {
            grid[i][j] = svm.accuracy(tx, ty);
        }
    }
    Ok(ProbeReport {
        variant: train.variant,
        classes,
        chance: 1.0 / classes as f64,
        grid,
        test_items: [test_sets[0].1.len(), test_sets[1].1.len(), test_sets[2].1.len()],
        random_labels: opts.random_labels.is_some(),
    })
}

/// Maps an exo frame (with its source id) to a synthesized ego frame.
pub trait ExoToEgo: Sync {
    fn synthesize(&self, sequence: &str, time: usize, exo: &Frame) -> Result<Frame>;
}

impl ExoToEgo for SynthesisModel {
    fn synthesize(&self, _: &str, _: usize, exo: &Frame) -> Result<Frame> {
        self.generate(exo)
    }
}

/// Returns the true ego frame; a perfect synthesizer for calibrating the
/// retrieval pipeline.
pub struct GroundTruthEgo<'a>(pub &'a Manifest);

impl ExoToEgo for GroundTruthEgo<'_> {
    fn synthesize(&self, sequence: &str, time: usize, _: &Frame) -> Result<Frame> {
        let s = self
            .0
            .sequences
            .iter()
            .find(|s| s.id == sequence)
            .ok_or_else(|| Error::TruthMissing(sequence.to_string()))?;
        Frame::load_png(&self.0.frame_path(s, View::Ego, time))
    }
}

/// Curves of synthesized-ego queries against the exo gallery and against
/// the ground-truth ego gallery, plus the synthesized gallery itself.
#[derive(Clone, Debug)]
pub struct SynthRetrieval {
    pub vs_exo: CmcCurve,
    pub vs_ego: CmcCurve,
    pub synthesized: Gallery,
}

pub fn synthesized_retrieval_test(
    synth: &dyn ExoToEgo,
    model: &EmbeddingModel,
    m: &Manifest,
    split: Split,
    spec: &InputSpec,
) -> Result<SynthRetrieval> {
    if model.config.input_channels != Variant::Rgb.channels() {
        return Err(Error::Config("synthesized retrieval needs the RGB retrieval model".into()));
    }
    let set = InputSet::load(m, split, Variant::Rgb, spec)?;
    if set.num_items() == 0 {
        return Err(Error::DataEmpty(format!("split {} has no frames", split.as_str())));
    }
    let f_ego = gallery_from_set(model, &set, View::Ego)?;
    let f_exo = gallery_from_set(model, &set, set.exo_view)?;
    let exo_view = View::exo(m.exo_kind);
    let items: Vec<(&SequenceEntry, usize)> = m
        .sequences_in(split)
        .zip(&set.sequences)
        .flat_map(|((_, s), inputs)| inputs.times.iter().map(move |&t| (s, t)))
        .collect();
    let embedded = items
        .par_iter()
        .map(|&(s, t)| -> Result<Vec<f32>> {
            let exo = Frame::load_png(&m.frame_path(s, exo_view, t))?;
            let fake = synth.synthesize(&s.id, t, &exo)?;
            model.encode(Stream::Ego, &frame_input(&fake, spec.size))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut synthesized = Gallery::new(GalleryKind::SynthesizedEgo, model.config.embedding_dim);
    for ((s, t), e) in items.iter().zip(&embedded) {
        synthesized.push(SourceId::new(&s.id, *t, View::Ego), e)?;
    }
    synthesized.sort();
    let vs_exo = cmc(&rank_all(&synthesized, &f_exo)?)?;
    let vs_ego = cmc(&rank_all(&synthesized, &f_ego)?)?;
    Ok(SynthRetrieval {
        vs_exo,
        vs_ego,
        synthesized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.push(vec![
                centers[c][0] + rng.random_range(-1.0..1.0),
                centers[c][1] + rng.random_range(-1.0..1.0),
            ]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(90, 1);
        let svm = LinearSvm::fit(&x, &y, 3, &SvmConfig::default()).unwrap();
        let (tx, ty) = blobs(60, 2);
        assert_eq!(svm.accuracy(&tx, &ty), 1.0);
    }

    #[test]
    fn single_class_is_always_right() {
        let (x, _) = blobs(10, 3);
        let y = vec![2; 10];
        let svm = LinearSvm::fit(&x, &y, 5, &SvmConfig::default()).unwrap();
        assert_eq!(svm.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn kkt_conditions_hold_at_convergence() {
        // Binary problem: margin violators must carry positive dual weight,
        // which shows as every training point scoring ≥ 1 - tol or being
        // pinned by the box; here the data are separable so all clear 1.
        let x = vec![vec![2.0], vec![3.0], vec![-2.0], vec![-3.0]];
        let y = vec![0, 0, 1, 1];
        let cfg = SvmConfig {
            tolerance: 1e-9,
            max_epochs: 10_000,
            ..SvmConfig::default()
        };
        let svm = LinearSvm::fit(&x, &y, 2, &cfg).unwrap();
        for (f, &l) in x.iter().zip(&y) {
            let s = svm.scores(f)[0];
            let yy = if l == 0 { 1.0 } else { -1.0 };
            assert!(yy * s >= 1.0 - 1e-6, "{s}");
        }
    }

    #[test]
    fn label_checks() {
        assert!(matches!(
            LinearSvm::fit(&[vec![1.0]], &[], 2, &SvmConfig::default()),
            Err(Error::MissingLabels(_))
        ));
        assert!(matches!(
            LinearSvm::fit(&[vec![1.0]], &[4], 2, &SvmConfig::default()),
            Err(Error::MissingLabels(_))
        ));
    }
}
