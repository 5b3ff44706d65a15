use std::path::PathBuf;

use exo2ego_nn::{Adam, AdamConfig};
use serde::{Deserialize, Serialize};

use super::model::{EmbeddingModel, ModelConfig};
use super::pairs::{sample_pairs_over, NegativeSource, PairSample};
use super::{evaluate, Direction};
use crate::checkpoint::{Checkpoint, Start};
use crate::data::View;
use crate::dataset::InputSet;
use crate::error::{Error, Result};

pub const OPTIMIZER: &str = "adam";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub neg_ratio: usize,
    pub negatives: NegativeSource,
    /// Cap on pairs drawn per epoch (after shuffling); all when absent.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
    /// Write `epoch_NNN.eckp` and `last.eckp` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            neg_ratio: 3,
            negatives: NegativeSource::Mixed,
            samples_per_epoch: None,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub total_steps: u64,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug)]
pub struct Trained {
    pub model: EmbeddingModel,
    pub optimizer: Adam,
    pub epochs: usize,
    pub steps: u64,
    pub logs: Vec<EpochLog>,
}

impl Trained {
    pub fn checkpoint(&self, cfg: &RetrievalConfig) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.epoch = self.epochs;
        c.step = self.steps;
        c.add_optimizer(OPTIMIZER, &self.optimizer, &self.model.store);
        if let serde_json::Value::Object(map) = &mut c.config {
            map.insert(
                "training".into(),
                serde_json::to_value(cfg).expect("config serializes"),
            );
        }
        c
    }
}

/// Usable times of every sequence in `set`.
fn positions(set: &InputSet) -> Vec<Vec<usize>> {
    set.sequences.iter().map(|s| s.times.clone()).collect()
}

fn to_items(set: &InputSet, batch: &[PairSample]) -> (Vec<(usize, usize, View)>, Vec<(usize, usize, View)>) {
    let pos = |seq: usize, t: usize| {
        set.sequences[seq]
            .times
            .binary_search(&t)
            .expect("pair sampled from the set's own times")
    };
    let ego = batch
        .iter()
        .map(|p| (p.ego.sequence, pos(p.ego.sequence, p.ego.time), View::Ego))
        .collect();
    let exo = batch
        .iter()
        .map(|p| (p.exo.sequence, pos(p.exo.sequence, p.exo.time), set.exo_view))
        .collect();
    (ego, exo)
}

/// Minimize the mean contrastive loss over pairs of `train_set`.
///
/// With `adapt`, the embedding heads stay frozen and only the convolutional
/// stages are updated; this requires a pretrained or resumed start.
/// `on_epoch` sees every epoch's log as it completes.
pub fn train(
    train_set: &InputSet,
    val_set: Option<&InputSet>,
    cfg: &RetrievalConfig,
    start: Start,
    adapt: bool,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Trained> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if train_set.variant.channels() != cfg.model.input_channels || train_set.size != cfg.model.input_size {
        return Err(Error::Config(format!(
            "{:?} inputs at {} px do not fit a model for {} channels at {} px",
            train_set.variant, train_set.size, cfg.model.input_channels, cfg.model.input_size
        )));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let (mut model, mut adam, mut epoch, mut steps) = match start {
        Start::Scratch => {
            if adapt {
                return Err(Error::Config("adaptation needs a pretrained model".into()));
            }
            let m = EmbeddingModel::new(cfg.model.clone())?;
            let a = Adam::new(adam_cfg, &m.store);
            (m, a, 0, 0)
        }
        Start::Pretrained(c) => {
            let m = EmbeddingModel::from_checkpoint(c)?;
            check_compatible(&m.config, &cfg.model)?;
            let a = Adam::new(adam_cfg, &m.store);
            (m, a, 0, 0)
        }
        Start::Resume(c) => {
            let m = EmbeddingModel::from_checkpoint(c)?;
            check_compatible(&m.config, &cfg.model)?;
            let mut a = Adam::new(adam_cfg, &m.store);
            c.load_optimizer(OPTIMIZER, &mut a, &m.store)?;
            (m, a, c.epoch, c.step)
        }
    };
    if adapt {
        model.store.set_frozen("ego.head", true);
        model.store.set_frozen("exo.head", true);
    }
    let times = positions(train_set);
    let mut logs = Vec::new();
    while epoch < cfg.epochs {
        let mut pairs = sample_pairs_over(&times, cfg.neg_ratio, cfg.negatives, epoch_seed(cfg.seed, epoch))?;
        if let Some(cap) = cfg.samples_per_epoch {
            pairs.truncate(cap.max(1));
        }
        let mut total = 0.0;
        let mut n_steps = 0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let (ei, xi) = to_items(train_set, chunk);
            let labels: Vec<_> = chunk.iter().map(|p| p.label).collect();
            let (loss, grads) = model.loss_and_grads(train_set.batch(&ei), train_set.batch(&xi), &labels)?;
            adam.step(&mut model.store, &grads);
            total += loss * chunk.len() as f64;
            n_steps += 1;
            steps += 1;
        }
        model.trained_steps = steps;
        epoch += 1;
        let val_auc = match val_set {
            Some(v) if v.num_items() > 0 => Some(evaluate(&model, v, Direction::EgoToExo)?.auc),
            _ => None,
        };
        let log = EpochLog {
            epoch,
            steps: n_steps,
            total_steps: steps,
            mean_loss: total / pairs.len() as f64,
            val_auc,
        };
        on_epoch(&log);
        logs.push(log);
        if let Some(dir) = &cfg.checkpoint_dir {
            let snapshot = Trained {
                model: model.clone(),
                optimizer: adam.clone(),
                epochs: epoch,
                steps,
                logs: Vec::new(),
            };
            let c = snapshot.checkpoint(cfg);
            c.save(&dir.join(format!("epoch_{epoch:03}.eckp")))?;
            c.save(&dir.join("last.eckp"))?;
        }
    }
    if adapt {
        model.store.set_frozen("ego.head", false);
        model.store.set_frozen("exo.head", false);
    }
    Ok(Trained {
        model,
        optimizer: adam,
        epochs: epoch,
        steps,
        logs,
    })
}

fn check_compatible(have: &ModelConfig, want: &ModelConfig) -> Result<()> {
    let same = have.input_channels == want.input_channels
        && have.input_size == want.input_size
        && have.widths == want.widths
        && have.embedding_dim == want.embedding_dim;
    if same {
        Ok(())
    } else {
        Err(Error::CheckpointIncompatible(format!(
            "checkpoint model {}ch/{}px/{:?}/{} differs from configured {}ch/{}px/{:?}/{}",
            have.input_channels,
            have.input_size,
            have.widths,
            have.embedding_dim,
            want.input_channels,
            want.input_size,
            want.widths,
            want.embedding_dim
        )))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
