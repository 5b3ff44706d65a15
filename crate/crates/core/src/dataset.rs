//! In-memory network inputs (RGB frames or flow maps) for the sequences of
//! one manifest split.

use std::path::{Path, PathBuf};

use exo2ego_nn::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Action, FlowField, Frame, Manifest, SequenceEntry, Split, View};
use crate::error::{Error, Result};
use crate::flow::{smooth_temporal, FlowEstimator, FlowSequence, PyramidLk};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rgb,
    Flow,
}

impl Variant {
    pub fn channels(self) -> usize {
        match self {
            Variant::Rgb => 3,
            Variant::Flow => 2,
        }
    }

    /// First time index with an input (flow needs a predecessor frame).
    pub fn first_time(self) -> usize {
        match self {
            Variant::Rgb => 0,
            Variant::Flow => 1,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Variant::Rgb),
            "flow" => Ok(Variant::Flow),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    /// Square side inputs are resized to.
    pub size: usize,
    /// Temporal smoothing of flow, frames.
    pub sigma: f64,
    /// Multiplier applied to flow vectors after resizing.
    pub flow_scale: f64,
    /// Precomputed `EFLO` files (`<dir>/<seq>/<ego|exo>/%06d.eflo`); flow
    /// is estimated from the frames when absent.
    pub flow_dir: Option<PathBuf>,
    pub estimator: PyramidLk,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            size: 128,
            sigma: crate::flow::DEFAULT_SIGMA,
            flow_scale: 0.25,
            flow_dir: None,
            estimator: PyramidLk::default(),
        }
    }
}

/// Network inputs of one sequence, indexed by position in `times`.
#[derive(Clone, Debug)]
pub struct SequenceInputs {
    pub id: String,
    pub times: Vec<usize>,
    pub labels: Vec<Action>,
    pub ego: Vec<Vec<f32>>,
    pub exo: Vec<Vec<f32>>,
}

#[derive(Clone, Debug)]
pub struct InputSet {
    pub variant: Variant,
    pub size: usize,
    pub exo_view: View,
    pub sequences: Vec<SequenceInputs>,
}

pub fn frame_input(f: &Frame, size: usize) -> Vec<f32> {
    f.resize(size, size).to_tensor().into_data().into_iter().map(|v| v as f32).collect()
}

pub fn flow_input(f: &FlowField, size: usize, scale: f64) -> Vec<f32> {
    let r = f.resize(size, size);
    let hw = size * size;
    let mut out = vec![0.0f32; 2 * hw];
    for (i, v) in r.vectors().chunks_exact(2).enumerate() {
        out[i] = (v[0] as f64 * scale) as f32;
        out[hw + i] = (v[1] as f64 * scale) as f32;
    }
    out
}

pub fn flow_path(dir: &Path, seq: &str, view: View, t: usize) -> PathBuf {
    let v = if view == View::Ego { "ego" } else { "exo" };
    dir.join(seq).join(v).join(format!("{t:06}.eflo"))
}

pub fn load_frames(m: &Manifest, s: &SequenceEntry, view: View) -> Result<Vec<Frame>> {
    (0..s.length).map(|t| Frame::load_png(&m.frame_path(s, view, t))).collect()
}

/// Smoothed momentary flows of one view of a sequence.
pub fn sequence_flows(frames: &[Frame], estimator: &dyn FlowEstimator, sigma: f64) -> Result<Vec<FlowField>> {
    let raw = FlowSequence::from_frames(frames, estimator)?;
    Ok(smooth_temporal(&raw, sigma)?.flows)
}

impl SequenceInputs {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn input(&self, view: View, pos: usize) -> &[f32] {
        if view == View::Ego {
            &self.ego[pos]
        } else {
            &self.exo[pos]
        }
    }

    /// Inputs from already decoded frames.
    pub fn from_frames(
        id: &str,
        labels: &[Action],
        ego: &[Frame],
        exo: &[Frame],
        variant: Variant,
        spec: &InputSpec,
    ) -> Result<Self> {
        if ego.len() != exo.len() || labels.len() != ego.len() {
            return Err(Error::Alignment(format!(
                "sequence {id}: {} ego, {} exo frames, {} labels",
                ego.len(),
                exo.len(),
                labels.len()
            )));
        }
        let times: Vec<usize> = (variant.first_time()..ego.len()).collect();
        let (e, x) = match variant {
            Variant::Rgb => (
                ego.iter().map(|f| frame_input(f, spec.size)).collect(),
                exo.iter().map(|f| frame_input(f, spec.size)).collect(),
            ),
            Variant::Flow => {
                let enc = |frames: &[Frame]| -> Result<Vec<Vec<f32>>> {
                    Ok(sequence_flows(frames, &spec.estimator, spec.sigma)?
                        .iter()
                        .map(|f| flow_input(f, spec.size, spec.flow_scale))
                        .collect())
                };
                (enc(ego)?, enc(exo)?)
            }
        };
        Ok(Self {
            id: id.to_string(),
            labels: times.iter().map(|&t| labels[t]).collect(),
            times,
            ego: e,
            exo: x,
        })
    }
}

impl InputSet {
    pub fn channels(&self) -> usize {
        self.variant.channels()
    }

    /// Load every sequence of `split`. Sequences too short to yield an
    /// input are kept with no items.
    pub fn load(m: &Manifest, split: Split, variant: Variant, spec: &InputSpec) -> Result<Self> {
        let entries: Vec<&SequenceEntry> = m.sequences_in(split).map(|(_, s)| s).collect();
        let sequences = entries
            .par_iter()
            .map(|s| load_sequence(m, s, variant, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            size: spec.size,
            exo_view: View::exo(m.exo_kind),
            sequences,
        })
    }

    pub fn num_items(&self) -> usize {
        self.sequences.iter().map(SequenceInputs::len).sum()
    }

    /// `[N, C, size, size]` batch of `(sequence, position, view)` items.
    pub fn batch(&self, items: &[(usize, usize, View)]) -> Tensor {
        let c = self.channels();
        let per = c * self.size * self.size;
        let mut data = Vec::with_capacity(items.len() * per);
        for &(s, p, v) in items {
            data.extend(self.sequences[s].input(v, p).iter().map(|&x| x as f64));
        }
        Tensor::from_vec([items.len(), c, self.size, self.size], data)
    }

    /// Keep every `k`-th item of each sequence.
    pub fn subsample(&mut self, k: usize) {
        let k = k.max(1);
        fn keep<T>(v: &mut Vec<T>, k: usize) {
            let taken = std::mem::take(v);
            *v = taken.into_iter().step_by(k).collect();
        }
        for s in &mut self.sequences {
            keep(&mut s.times, k);
            keep(&mut s.labels, k);
            keep(&mut s.ego, k);
            keep(&mut s.exo, k);
        }
    }

    /// Keep only the first `n` sequences.
    pub fn truncate(&mut self, n: usize) {
        self.sequences.truncate(n);
    }
}

fn load_sequence(m: &Manifest, s: &SequenceEntry, variant: Variant, spec: &InputSpec) -> Result<SequenceInputs> {
    if let (Variant::Flow, Some(dir)) = (variant, &spec.flow_dir) {
        let times: Vec<usize> = (1..s.length).collect();
        let mut views = [Vec::new(), Vec::new()];
        for (slot, view) in views.iter_mut().zip([View::Ego, View::exo(m.exo_kind)]) {
            for &t in &times {
                let f = FlowField::load(&flow_path(dir, &s.id, view, t), t)?;
                slot.push(flow_input(&f, spec.size, spec.flow_scale));
            }
        }
        let [ego, exo] = views;
        return Ok(SequenceInputs {
            id: s.id.clone(),
            labels: times.iter().map(|&t| s.labels[t]).collect(),
            times,
            ego,
            exo,
        });
    }
    let ego = load_frames(m, s, View::Ego)?;
    let exo = load_frames(m, s, View::exo(m.exo_kind))?;
    SequenceInputs::from_frames(&s.id, &s.labels, &ego, &exo, variant, spec)
}

/// Estimate, smooth and write `EFLO` flows for both views of every
/// sequence in `split`. Returns the number of fields written.
pub fn write_flows(m: &Manifest, split: Split, estimator: &dyn FlowEstimator, sigma: f64, out: &Path) -> Result<usize> {
    let entries: Vec<&SequenceEntry> = m.sequences_in(split).map(|(_, s)| s).collect();
    let counts = entries
        .par_iter()
        .map(|s| -> Result<usize> {
            let mut n = 0;
            for view in [View::Ego, View::exo(m.exo_kind)] {
                let frames = load_frames(m, s, view)?;
                for f in sequence_flows(&frames, estimator, sigma)? {
                    f.save(&flow_path(out, &s.id, view, f.source_time))?;
                    n += 1;
                }
            }
            Ok(n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.into_iter().sum())
}
