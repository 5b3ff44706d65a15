use exo2ego_nn::layers::{Conv2d, GroupNorm, Linear};
use exo2ego_nn::{Grads, Graph, Init, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "retrieval";

/// Keeps initial embedding distances well below the margin.
const HEAD_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Ego,
    Exo,
}

impl Stream {
    pub fn prefix(self) -> &'static str {
        match self {
            Stream::Ego => "ego",
            Stream::Exo => "exo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_size: usize,
    /// Output channels of the stride-2 conv stages.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub margin: f64,
    /// Group normalization after each conv stage; 0 disables it.
    pub max_groups: usize,
    /// Start the embedding head at zero (weights and bias).
    pub zero_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 128,
            widths: vec![32, 64, 128, 256, 512],
            embedding_dim: 512,
            margin: 1.0,
            max_groups: 8,
            zero_head: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.input_channels) {
            return Err(Error::Config(format!("input_channels must be 2 or 3, got {}", self.input_channels)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.embedding_dim == 0 || self.input_size == 0 {
            return Err(Error::Config("encoder widths, embedding_dim and input_size must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    norm: Option<GroupNorm>,
}

#[derive(Clone, Debug)]
struct Encoder {
    stages: Vec<Stage>,
    head: Linear,
}

impl Encoder {
    fn new(store: &mut ParamStore, stream: Stream, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let p = stream.prefix();
        let mut cin = cfg.input_channels;
        let mut stages = Vec::with_capacity(cfg.widths.len());
        for (i, &w) in cfg.widths.iter().enumerate() {
            let init = Init::KaimingUniform { fan_in: cin * 9 };
            stages.push(Stage {
                conv: Conv2d::new(store, &format!("{p}.conv{i}"), cin, w, 3, 2, 1, true, &init, rng),
                norm: (cfg.max_groups > 0).then(|| GroupNorm::new(store, &format!("{p}.norm{i}"), w, cfg.max_groups, rng)),
            });
            cin = w;
        }
        let init = if cfg.zero_head {
            Init::Zeros
        } else {
            Init::Normal {
                std: HEAD_GAIN / (cin as f64).sqrt(),
            }
        };
        let head = Linear::new(store, &format!("{p}.head"), cin, cfg.embedding_dim, &init, rng);
        Self { stages, head }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for s in &self.stages {
            h = s.conv.forward(g, h);
            if let Some(n) = &s.norm {
                h = n.forward(g, h);
            }
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h);
        self.head.forward(g, pooled)
    }
}

/// Two weight-independent encoders mapping ego and exo inputs into a shared
/// embedding space.
#[derive(Clone, Debug)]
pub struct EmbeddingModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Optimization steps applied so far.
    pub trained_steps: u64,
    ego: Encoder,
    exo: Encoder,
}

impl EmbeddingModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let ego = Encoder::new(&mut store, Stream::Ego, &config, &mut rng);
        let exo = Encoder::new(&mut store, Stream::Exo, &config, &mut rng);
        Ok(Self {
            config,
            store,
            trained_steps: 0,
            ego,
            exo,
        })
    }

    fn encoder(&self, stream: Stream) -> &Encoder {
        match stream {
            Stream::Ego => &self.ego,
            Stream::Exo => &self.exo,
        }
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let s = self.config.input_size;
        if c != self.config.input_channels || h != s || w != s {
            return Err(Error::Shape(format!(
                "input {c}x{h}x{w}, model expects {}x{s}x{s}",
                self.config.input_channels
            )));
        }
        Ok(())
    }

    /// Embed a `[N, C, S, S]` batch; one `embedding_dim` vector per sample.
    pub fn encode_batch(&self, stream: Stream, x: Tensor) -> Result<Vec<Vec<f32>>> {
        self.check_input(&x)?;
        let mut g = Graph::new(&self.store);
        let xi = g.input(x);
        let out = self.encoder(stream).forward(&mut g, xi);
        let t = g.value(out);
        let rows: Vec<Vec<f32>> = (0..t.batch())
            .map(|i| t.sample(i).iter().map(|&v| v as f32).collect())
            .collect();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(rows)
    }

    pub fn encode(&self, stream: Stream, x: &[f32]) -> Result<Vec<f32>> {
        let s = self.config.input_size;
        let c = self.config.input_channels;
        if x.len() != c * s * s {
            return Err(Error::Shape(format!("input of {} values, model expects {c}x{s}x{s}", x.len())));
        }
        let t = Tensor::from_vec([1, c, s, s], x.iter().map(|&v| v as f64).collect());
        Ok(self.encode_batch(stream, t)?.pop().expect("one sample"))
    }

    /// Mean contrastive loss over paired batches and its parameter
    /// gradients.
    pub fn loss_and_grads(&self, ego: Tensor, exo: Tensor, labels: &[PairLabel]) -> Result<(f64, Grads)> {
        self.check_input(&ego)?;
        self.check_input(&exo)?;
        if ego.batch() != labels.len() || exo.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} ego, {} exo inputs for {} labels",
                ego.batch(),
                exo.batch(),
                labels.len()
            )));
        }
        let mut g = Graph::new(&self.store);
        let xe = g.input(ego);
        let xx = g.input(exo);
        let ee = self.ego.forward(&mut g, xe);
        let ex = self.exo.forward(&mut g, xx);
        let (loss, ge, gx) = batch_contrastive(g.value(ee), g.value(ex), labels, self.config.margin);
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite contrastive loss".into()));
        }
        let grads = g.backward(&[(ee, &ge), (ex, &gx)]);
        Ok((loss, grads))
    }

    pub fn loss(&self, ego: Tensor, exo: Tensor, labels: &[PairLabel]) -> Result<f64> {
        let e = self.encode_batch(Stream::Ego, ego)?;
        let x = self.encode_batch(Stream::Exo, exo)?;
        let mut total = 0.0;
        for ((a, b), &l) in e.iter().zip(&x).zip(labels) {
            total += contrastive_loss(a, b, l, self.config.margin)?;
        }
        Ok(total / labels.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::json!({ "model": self.config }),
        );
        c.step = self.trained_steps;
        c.add_params("", &self.store);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let raw = c.config.get("model").cloned().unwrap_or_default();
        let config: ModelConfig = serde_json::from_value(raw)
            .map_err(|e| Error::CheckpointIncompatible(format!("model config: {e}")))?;
        let mut m = Self::new(config)?;
        c.load_params("", &mut m.store)?;
        m.trained_steps = c.step;
        Ok(m)
    }
}

/// 0 marks a corresponding pair (same sequence and time), 1 a
/// non-corresponding one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    Positive = 0,
    Negative = 1,
}

pub fn contrastive_loss(a: &[f32], b: &[f32], label: PairLabel, margin: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let d2: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(match label {
        PairLabel::Positive => d2,
        PairLabel::Negative => (margin - d2.sqrt()).max(0.0).powi(2),
    })
}

/// Mean loss over rows of `[N, D, 1, 1]` embeddings and its gradients with
/// respect to both.
fn batch_contrastive(e: &Tensor, x: &Tensor, labels: &[PairLabel], margin: f64) -> (f64, Tensor, Tensor) {
    let n = labels.len();
    let mut ge = Tensor::zeros(e.shape());
    let mut gx = Tensor::zeros(x.shape());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let a = e.sample(i);
        let b = x.sample(i);
        let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        // dL/da as a multiple of (a - b).
        let coef = match label {
            PairLabel::Positive => {
                total += d * d;
                2.0
            }
            PairLabel::Negative if d < margin => {
                total += (margin - d).powi(2);
                if d > 0.0 {
                    -2.0 * (margin - d) / d
                } else {
                    0.0
                }
            }
            PairLabel::Negative => 0.0,
        } / n as f64;
        for (k, dv) in diff.iter().enumerate() {
            ge.sample_mut(i)[k] = coef * dv;
            gx.sample_mut(i)[k] = -coef * dv;
        }
    }
    (total / n as f64, ge, gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(zero_head: bool) -> EmbeddingModel {
        EmbeddingModel::new(ModelConfig {
            input_channels: 2,
            input_size: 8,
            widths: vec![4, 4],
            embedding_dim: 6,
            zero_head,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn loss_closed_forms() {
        let z = [0.0f32; 3];
        assert_eq!(contrastive_loss(&z, &z, PairLabel::Positive, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&z, &z, PairLabel::Negative, 1.0).unwrap(), 1.0);
        let far = [2.0f32, 0.0, 0.0];
        assert_eq!(contrastive_loss(&z, &far, PairLabel::Negative, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&z, &far, PairLabel::Positive, 1.0).unwrap(), 4.0);
        assert!(matches!(
            contrastive_loss(&z, &far[..2], PairLabel::Positive, 1.0),
            Err(Error::DimensionMismatch(3, 2))
        ));
    }

    #[test]
    fn embeddings_have_configured_dim_and_are_deterministic() {
        let m = tiny(false);
        let x: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
        let a = m.encode(Stream::Ego, &x).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, m.encode(Stream::Ego, &x).unwrap());
        assert_ne!(a, m.encode(Stream::Exo, &x).unwrap());
    }

    #[test]
    fn zero_head_maps_zero_input_to_zero() {
        let m = tiny(true);
        assert!(m.encode(Stream::Exo, &[0.0; 128]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_channels_is_shape_error() {
        let m = tiny(false);
        assert!(matches!(m.encode(Stream::Ego, &[0.0; 192]), Err(Error::Shape(_))));
        assert!(matches!(
            m.encode_batch(Stream::Ego, Tensor::zeros([1, 3, 8, 8])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny(false);
        let back = EmbeddingModel::from_checkpoint(&Checkpoint::decode(&m.to_checkpoint().encode()).unwrap()).unwrap();
        assert_eq!(back.store, m.store);
        let mut other = Checkpoint::new("synthesis", serde_json::Value::Null);
        other.add_params("", &m.store);
        assert!(matches!(
            EmbeddingModel::from_checkpoint(&other),
            Err(Error::CheckpointIncompatible(_))
        ));
    }

    #[test]
    fn batch_loss_matches_pointwise_loss() {
        let m = tiny(false);
        let mk = |k: f64| Tensor::from_vec([2, 2, 8, 8], (0..256).map(|i| ((i as f64) * k).cos()).collect());
        let labels = [PairLabel::Positive, PairLabel::Negative];
        let (l, _) = m.loss_and_grads(mk(0.1), mk(0.3), &labels).unwrap();
        let r = m.loss(mk(0.1), mk(0.3), &labels).unwrap();
        assert!((l - r).abs() < 1e-5 * (1.0 + l.abs()), "{l} vs {r}");
    }
}
