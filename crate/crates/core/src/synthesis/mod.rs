//! Conditional GAN translating exocentric frames into egocentric ones: a
//! skip-connected generator, a pair-conditioned patch discriminator, the
//! adversarial and L1 objectives, training and inference.

pub mod nets;

use std::path::Path;

use exo2ego_nn::{Adam, AdamConfig, Grads, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};

use crate::checkpoint::{Checkpoint, Start};
use crate::data::{Frame, Manifest, Split, View};
use crate::error::{Error, Result};
use crate::retrieval::synthesized_path;

pub const CHECKPOINT_KIND: &str = "synthesis";
/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Weight of the L1 term.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (and after the last); 0
    /// saves only the last.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<std::path::PathBuf>,
    /// Train on at most this many aligned pairs, spread evenly over the split.
    pub max_pairs: Option<usize>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            lambda: 100.0,
            epochs: 15,
            batch_size: 1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 1,
            checkpoint_dir: None,
            max_pairs: None,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("discriminator produced no finite probabilities".into()));
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// `(loss_D, loss_G_adv)` from discriminator outputs on real and generated
/// pairs, each averaged over batch and patches. The generator term is the
/// non-saturating `-log D(fake)`.
pub fn adversarial_loss(p_real: &[f64], p_fake: &[f64]) -> Result<(f64, f64)> {
    check_probs(p_real)?;
    check_probs(p_fake)?;
    let mean = |p: &[f64], f: &dyn Fn(f64) -> f64| p.iter().map(|&v| f(clamp(v))).sum::<f64>() / p.len() as f64;
    let d = mean(p_real, &|v| -v.ln()) + mean(p_fake, &|v| -(1.0 - v).ln());
    let g = mean(p_fake, &|v| -v.ln());
    Ok((d, g))
}

/// Mean absolute difference of two normalized image batches.
pub fn l1_loss(truth: &Tensor, test: &Tensor) -> Result<f64> {
    if truth.shape() != test.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", truth.shape(), test.shape())));
    }
    let n = truth.len().max(1) as f64;
    Ok(truth.data().iter().zip(test.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

pub fn combined_loss(adv: f64, l1: f64, cfg: &SynthesisConfig) -> f64 {
    adv + cfg.lambda * l1
}

/// d(-mean log clamp(p))/dp, zero where the clamp is active.
fn neg_log_grad(p: &Tensor) -> Tensor {
    let n = p.len() as f64;
    p.map(|v| if v > EPS && v < 1.0 - EPS { -1.0 / (v * n) } else { 0.0 })
}

/// d(-mean log(1 - clamp(p)))/dp.
fn neg_log1m_grad(p: &Tensor) -> Tensor {
    let n = p.len() as f64;
    p.map(|v| if v > EPS && v < 1.0 - EPS { 1.0 / ((1.0 - v) * n) } else { 0.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub adv: f64,
    pub l1: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct SynthesisModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl SynthesisModel {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig) -> Result<Self> {
        let generator = Generator::new(g)?;
        let discriminator = Discriminator::new(d)?;
        if discriminator.min_input() > generator.config.image_size {
            return Err(Error::Config(format!(
                "a {}-layer discriminator needs inputs of at least {} px",
                discriminator.config.layers,
                discriminator.min_input()
            )));
        }
        Ok(Self { generator, discriminator })
    }

    pub fn image_size(&self) -> usize {
        self.generator.config.image_size
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let s = self.image_size();
        let [_, c, h, w] = x.shape();
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!("image batch {c}x{h}x{w}, generator expects 3x{s}x{s}")));
        }
        Ok(())
    }

    /// Generated ego batch in `[-1, 1]` for a normalized exo batch.
    pub fn generate_tensor(&self, exo: Tensor) -> Result<Tensor> {
        self.check(&exo)?;
        let mut g = Graph::new(&self.generator.store);
        let x = g.input(exo);
        let y = self.generator.forward(&mut g, x);
        Ok(g.value(y).clone())
    }

    pub fn generate(&self, exo: &Frame) -> Result<Frame> {
        let s = self.image_size();
        let out = self.generate_tensor(exo.resize(s, s).to_tensor())?;
        Frame::from_tensor(&out, 0)
    }

    /// Discriminator probabilities on `(exo, candidate)` pairs.
    pub fn discriminate(&self, exo: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        self.check(exo)?;
        self.check(candidate)?;
        let mut g = Graph::new(&self.discriminator.store);
        let a = g.input(exo.clone());
        let b = g.input(candidate.clone());
        let x = g.concat(a, b);
        let p = self.discriminator.forward(&mut g, x);
        Ok(g.value(p).clone())
    }

    /// `(loss_D, loss_G_adv)` for real ego images and generated ones.
    pub fn adversarial_loss(&self, exo: &Tensor, ego: &Tensor, fake: &Tensor) -> Result<(f64, f64)> {
        let pr = self.discriminate(exo, ego)?;
        let pf = self.discriminate(exo, fake)?;
        adversarial_loss(pr.data(), pf.data())
    }

    /// Discriminator loss and its gradients w.r.t. discriminator
    /// parameters; `fake` is treated as a constant.
    pub fn d_loss_and_grads(&self, exo: &Tensor, ego: &Tensor, fake: &Tensor) -> Result<(f64, Grads)> {
        self.check(exo)?;
        self.check(ego)?;
        self.check(fake)?;
        let mut g = Graph::new(&self.discriminator.store);
        let x = g.input(exo.clone());
        let r = g.input(ego.clone());
        let f = g.input(fake.clone());
        let real = g.concat(x, r);
        let gen = g.concat(x, f);
        let pr = self.discriminator.forward(&mut g, real);
        let pf = self.discriminator.forward(&mut g, gen);
        let (loss, _) = adversarial_loss(g.value(pr).data(), g.value(pf).data())?;
        let (sr, sf) = (neg_log_grad(g.value(pr)), neg_log1m_grad(g.value(pf)));
        Ok((loss, g.backward(&[(pr, &sr), (pf, &sf)])))
    }

    /// Generator objective `adv + λ·L1` and its gradients w.r.t. generator
    /// parameters, back-propagated through the discriminator.
    pub fn g_loss_and_grads(&self, exo: &Tensor, ego: &Tensor, lambda: f64) -> Result<(GeneratorLoss, Grads)> {
        self.check(exo)?;
        self.check(ego)?;
        let mut gg = Graph::new(&self.generator.store);
        let x = gg.input(exo.clone());
        let fake = self.generator.forward(&mut gg, x);
        let fake_val = gg.value(fake).clone();

        let mut gd = Graph::new(&self.discriminator.store);
        let xd = gd.input(exo.clone());
        let fd = gd.input_with_grad(fake_val.clone());
        let pair = gd.concat(xd, fd);
        let p = self.discriminator.forward(&mut gd, pair);
        let pv = gd.value(p).clone();
        let (_, adv) = adversarial_loss(pv.data(), pv.data())?;
        let dgrads = gd.backward(&[(p, &neg_log_grad(&pv))]);
        let d_adv = dgrads.var(fd).cloned().unwrap_or_else(|| Tensor::zeros(fake_val.shape()));

        let l1 = l1_loss(ego, &fake_val)?;
        let n = fake_val.len() as f64;
        let mut seed = d_adv;
        for ((s, f), t) in seed.data_mut().iter_mut().zip(fake_val.data()).zip(ego.data()) {
            let diff = f - t;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            *s += lambda * sign / n;
        }
        let grads = gg.backward(&[(fake, &seed)]);
        let loss = GeneratorLoss {
            adv,
            l1,
            total: adv + lambda * l1,
        };
        Ok((loss, grads))
    }

    fn config_json(&self, training: Option<&SynthesisConfig>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "generator": self.generator.config,
            "discriminator": self.discriminator.config,
        });
        if let Some(t) = training {
            v["training"] = serde_json::to_value(t).expect("config serializes");
        }
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CHECKPOINT_KIND, self.config_json(None));
        c.add_params("G/", &self.generator.store);
        c.add_params("D/", &self.discriminator.store);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let part = |k: &str| c.config.get(k).cloned().unwrap_or_default();
        let gcfg: GeneratorConfig = serde_json::from_value(part("generator"))
            .map_err(|e| Error::CheckpointIncompatible(format!("generator config: {e}")))?;
        let dcfg: DiscriminatorConfig = serde_json::from_value(part("discriminator"))
            .map_err(|e| Error::CheckpointIncompatible(format!("discriminator config: {e}")))?;
        let mut m = Self::new(gcfg, dcfg)?;
        m.load_params(c)?;
        Ok(m)
    }

    fn load_params(&mut self, c: &Checkpoint) -> Result<()> {
        c.load_params("G/", &mut self.generator.store)?;
        c.load_params("D/", &mut self.discriminator.store)
    }
}

/// Normalized `(exo, ego)` image pairs with their source ids.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub ids: Vec<(String, usize)>,
    pub exo: Vec<Tensor>,
    pub ego: Vec<Tensor>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn from_frames(ids: Vec<(String, usize)>, exo: &[Frame], ego: &[Frame], size: usize) -> Self {
        let prep = |f: &Frame| f.resize(size, size).to_tensor();
        Self {
            ids,
            exo: exo.iter().map(prep).collect(),
            ego: ego.iter().map(prep).collect(),
        }
    }

    /// Aligned pairs of `split`, keeping at most `max` spread evenly.
    pub fn load(m: &Manifest, split: Split, size: usize, max: Option<usize>) -> Result<Self> {
        let kind = m.exo_kind;
        let all: Vec<_> = m.iterate_aligned_pairs(split, kind).collect();
        let chosen: Vec<usize> = match max {
            Some(k) if k < all.len() => (0..k).map(|i| i * all.len() / k).collect(),
            _ => (0..all.len()).collect(),
        };
        let loaded = chosen
            .par_iter()
            .map(|&i| -> Result<((String, usize), Tensor, Tensor)> {
                let p = &all[i];
                let s = &m.sequences[p.sequence];
                let exo = Frame::load_png(&m.frame_path(s, View::exo(kind), p.exo.time_index))?;
                let ego = Frame::load_png(&m.frame_path(s, View::Ego, p.ego.time_index))?;
                Ok((
                    (s.id.clone(), p.ego.time_index),
                    exo.resize(size, size).to_tensor(),
                    ego.resize(size, size).to_tensor(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::default();
        for (id, x, e) in loaded {
            out.ids.push(id);
            out.exo.push(x);
            out.ego.push(e);
        }
        Ok(out)
    }

    fn batch(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let exo: Vec<&Tensor> = idx.iter().map(|&i| &self.exo[i]).collect();
        let ego: Vec<&Tensor> = idx.iter().map(|&i| &self.ego[i]).collect();
        (Tensor::stack(&exo), Tensor::stack(&ego))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEpochLog {
    pub epoch: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub total_steps: u64,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub l1: f64,
}

#[derive(Debug)]
pub struct SynthTrained {
    pub model: SynthesisModel,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub epochs: usize,
    pub steps: u64,
    pub logs: Vec<SynthEpochLog>,
}

impl SynthTrained {
    pub fn checkpoint(&self, cfg: &SynthesisConfig) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.config = self.model.config_json(Some(cfg));
        c.epoch = self.epochs;
        c.step = self.steps;
        c.add_optimizer("adam_g", &self.adam_g, &self.model.generator.store);
        c.add_optimizer("adam_d", &self.adam_d, &self.model.discriminator.store);
        c
    }
}

/// Alternate one discriminator and one generator update per batch.
pub fn train(
    data: &PairSet,
    cfg: &SynthesisConfig,
    start: Start,
    on_epoch: &mut dyn FnMut(&SynthEpochLog),
) -> Result<SynthTrained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::DataEmpty("no training pairs for synthesis".into()));
    }
    let fresh = || SynthesisModel::new(cfg.generator.clone(), cfg.discriminator.clone());
    let (model, adam_g, adam_d, epoch, steps) = match start {
        Start::Scratch => {
            let m = fresh()?;
            let (ag, ad) = (Adam::new(cfg.adam(), &m.generator.store), Adam::new(cfg.adam(), &m.discriminator.store));
            (m, ag, ad, 0, 0)
        }
        Start::Pretrained(c) => {
            c.expect_kind(CHECKPOINT_KIND)?;
            let mut m = fresh()?;
            m.load_params(c)?;
            let (ag, ad) = (Adam::new(cfg.adam(), &m.generator.store), Adam::new(cfg.adam(), &m.discriminator.store));
            (m, ag, ad, 0, 0)
        }
        Start::Resume(c) => {
            c.expect_kind(CHECKPOINT_KIND)?;
            let mut m = fresh()?;
            m.load_params(c)?;
            let mut ag = Adam::new(cfg.adam(), &m.generator.store);
            let mut ad = Adam::new(cfg.adam(), &m.discriminator.store);
            c.load_optimizer("adam_g", &mut ag, &m.generator.store)?;
            c.load_optimizer("adam_d", &mut ad, &m.discriminator.store)?;
            (m, ag, ad, c.epoch, c.step)
        }
    };
    let mut st = SynthTrained {
        model,
        adam_g,
        adam_d,
        epochs: epoch,
        steps,
        logs: Vec::new(),
    };
    if st.model.image_size() != data.exo[0].height() {
        return Err(Error::Shape(format!(
            "pairs are {} px, generator expects {}",
            data.exo[0].height(),
            st.model.image_size()
        )));
    }
    while st.epochs < cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (st.epochs as u64).wrapping_mul(0x2545_F491_4F6C_DD1D)));
        let mut log = SynthEpochLog {
            epoch: st.epochs + 1,
            d_steps: 0,
            g_steps: 0,
            total_steps: 0,
            loss_d: 0.0,
            loss_g_adv: 0.0,
            l1: 0.0,
        };
        for idx in order.chunks(cfg.batch_size) {
            let (exo, ego) = data.batch(idx);
            let fake = st.model.generate_tensor(exo.clone())?;
            let (ld, gd) = st.model.d_loss_and_grads(&exo, &ego, &fake)?;
            st.adam_d.step(&mut st.model.discriminator.store, &gd);
            log.d_steps += 1;
            let (lg, gg) = st.model.g_loss_and_grads(&exo, &ego, cfg.lambda)?;
            st.adam_g.step(&mut st.model.generator.store, &gg);
            log.g_steps += 1;
            st.steps += 1;
            let w = idx.len() as f64;
            log.loss_d += ld * w;
            log.loss_g_adv += lg.adv * w;
            log.l1 += lg.l1 * w;
        }
        let n = data.len() as f64;
        log.loss_d /= n;
        log.loss_g_adv /= n;
        log.l1 /= n;
        st.epochs += 1;
        log.total_steps = st.steps;
        on_epoch(&log);
        st.logs.push(log);
        if let Some(dir) = &cfg.checkpoint_dir {
            let due = cfg.checkpoint_every > 0 && st.epochs % cfg.checkpoint_every == 0;
            if due || st.epochs == cfg.epochs {
                let c = st.checkpoint(cfg);
                c.save(&dir.join(format!("epoch_{:03}.eckp", st.epochs)))?;
                c.save(&dir.join("last.eckp"))?;
            }
        }
    }
    Ok(st)
}

/// Synthesize an ego frame for every aligned exo frame of `split` into
/// `out/<sequence>/%06d.png`. Returns the number of frames written.
pub fn generate_split(model: &SynthesisModel, m: &Manifest, split: Split, out: &Path) -> Result<usize> {
    let kind = m.exo_kind;
    let pairs: Vec<_> = m.iterate_aligned_pairs(split, kind).collect();
    pairs
        .par_iter()
        .map(|p| -> Result<()> {
            let s = &m.sequences[p.sequence];
            let exo = Frame::load_png(&m.frame_path(s, View::exo(kind), p.exo.time_index))?;
            model.generate(&exo)?.save_png(&synthesized_path(out, &s.id, p.ego.time_index))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.len())
}
