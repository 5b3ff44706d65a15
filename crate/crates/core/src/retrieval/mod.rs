//! Two-stream contrastive retrieval across views: the embedding network,
//! pair sampling, training and gallery ranking.

pub mod gallery;
pub mod model;
pub mod pairs;
pub mod train;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gallery::{retrieve, squared_distance, Gallery, GalleryKind, RankingResult, SourceId};
pub use model::{contrastive_loss, EmbeddingModel, ModelConfig, PairLabel, Stream};
pub use pairs::{sample_pairs, sample_pairs_over, ItemRef, NegativeSource, PairSample};
pub use train::{train, EpochLog, RetrievalConfig, Trained};

use crate::data::{Frame, Manifest, Split, View};
use crate::dataset::{frame_input, InputSet, InputSpec, Variant};
use crate::error::{Error, Result};
use crate::metrics::{cmc, CmcCurve};

const ENCODE_BATCH: usize = 16;

/// Which view queries and which view forms the gallery.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    EgoToExo,
    ExoToEgo,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego-to-exo" => Ok(Direction::EgoToExo),
            "exo-to-ego" => Ok(Direction::ExoToEgo),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GallerySource {
    GroundTruth,
    /// Synthesized ego frames laid out as `<dir>/<sequence>/%06d.png`.
    Synthesized(PathBuf),
}

pub fn synthesized_path(dir: &Path, sequence: &str, t: usize) -> PathBuf {
    dir.join(sequence).join(crate::data::manifest::frame_file_name(t))
}

fn stream_of(view: View) -> Stream {
    if view == View::Ego {
        Stream::Ego
    } else {
        Stream::Exo
    }
}

/// Embed every item of one view of `set`, in parallel, ordered by id.
pub fn gallery_from_set(model: &EmbeddingModel, set: &InputSet, view: View) -> Result<Gallery> {
    let view = if view == View::Ego { View::Ego } else { set.exo_view };
    let kind = if view == View::Ego { GalleryKind::Ego } else { GalleryKind::Exo };
    let items: Vec<(usize, usize, View)> = set
        .sequences
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..seq.len()).map(move |p| (s, p, view)))
        .collect();
    let chunks = items
        .par_chunks(ENCODE_BATCH)
        .map(|c| model.encode_batch(stream_of(view), set.batch(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut g = Gallery::new(kind, model.config.embedding_dim);
    for (&(s, p, v), e) in items.iter().zip(chunks.into_iter().flatten()) {
        let seq = &set.sequences[s];
        g.push(SourceId::new(&seq.id, seq.times[p], v), &e)?;
    }
    g.sort();
    Ok(g)
}

/// Embed synthesized ego frames of every sequence in `set` with the ego
/// stream.
pub fn synthesized_gallery(model: &EmbeddingModel, set: &InputSet, dir: &Path) -> Result<Gallery> {
    if set.variant != Variant::Rgb {
        return Err(Error::Config("synthesized galleries need the RGB variant".into()));
    }
    let items: Vec<(String, usize)> = set
        .sequences
        .iter()
        .flat_map(|s| s.times.iter().map(move |&t| (s.id.clone(), t)))
        .collect();
    let size = set.size;
    let chunks = items
        .par_chunks(ENCODE_BATCH)
        .map(|c| -> Result<Vec<Vec<f32>>> {
            let mut data = Vec::new();
            for (seq, t) in c {
                let f = Frame::load_png(&synthesized_path(dir, seq, *t))?;
                data.extend(frame_input(&f, size).into_iter().map(f64::from));
            }
            model.encode_batch(Stream::Ego, exo2ego_nn::Tensor::from_vec([c.len(), 3, size, size], data))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = Gallery::new(GalleryKind::SynthesizedEgo, model.config.embedding_dim);
    for ((seq, t), e) in items.iter().zip(chunks.into_iter().flatten()) {
        g.push(SourceId::new(seq, *t, View::Ego), &e)?;
    }
    g.sort();
    Ok(g)
}

/// Gallery of one view of a manifest split.
pub fn build_gallery(
    model: &EmbeddingModel,
    m: &Manifest,
    split: Split,
    view: View,
    variant: Variant,
    spec: &InputSpec,
    source: &GallerySource,
) -> Result<Gallery> {
    let set = InputSet::load(m, split, variant, spec)?;
    match source {
        GallerySource::GroundTruth => gallery_from_set(model, &set, view),
        GallerySource::Synthesized(dir) => synthesized_gallery(model, &set, dir),
    }
}

/// Rank every query of `queries` against `gallery`; the truth of a query is
/// the gallery entry with the same sequence and time.
pub fn rank_all(queries: &Gallery, gallery: &Gallery) -> Result<Vec<RankingResult>> {
    let gallery_view = gallery.ids().first().map(|i| i.view);
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let q = &queries.ids()[i];
            let truth = q.with_view(gallery_view.unwrap_or(q.view));
            retrieve(q, queries.embedding(i), &truth, gallery)
        })
        .collect()
}

/// CMC curve of cross-view retrieval over all items of `set`.
pub fn evaluate(model: &EmbeddingModel, set: &InputSet, direction: Direction) -> Result<CmcCurve> {
    let ego = gallery_from_set(model, set, View::Ego)?;
    let exo = gallery_from_set(model, set, set.exo_view)?;
    let results = match direction {
        Direction::EgoToExo => rank_all(&ego, &exo)?,
        Direction::ExoToEgo => rank_all(&exo, &ego)?,
    };
    cmc(&results)
}
