//! Embedding galleries, their on-disk format and brute-force ranking.
//!
//! File layout: one line of JSON header (`{"kind":..,"dim":..,"count":..}`
//! and `\n`), then the `EEMB` block: magic, u32 count, u32 dim,
//! `count × dim` f32 embeddings, then per entry a u32 byte length and the
//! UTF-8 source id. Integers and floats are little-endian.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::View;
use crate::error::{Error, Result};

pub const EEMB_MAGIC: &[u8; 4] = b"EEMB";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GalleryKind {
    /// Ground-truth egocentric inputs.
    #[serde(rename = "F_ego")]
    Ego,
    /// Synthesized egocentric images.
    #[serde(rename = "F'_ego")]
    SynthesizedEgo,
    #[serde(rename = "F_exo")]
    Exo,
}

/// Where an embedding came from. Orders by sequence, then time, then view.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceId {
    pub sequence: String,
    pub time: usize,
    pub view: View,
}

impl SourceId {
    pub fn new(sequence: &str, time: usize, view: View) -> Self {
        Self {
            sequence: sequence.to_string(),
            time,
            view,
        }
    }

    /// Same sequence and time in another view.
    pub fn with_view(&self, view: View) -> Self {
        Self {
            view,
            ..self.clone()
        }
    }
}

fn view_tag(v: View) -> &'static str {
    match v {
        View::Ego => "ego",
        View::ExoSide => "exo_side",
        View::ExoTop => "exo_top",
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.sequence, self.time, view_tag(self.view))
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema(format!("malformed source id {s:?}"));
        let mut it = s.rsplitn(3, ':');
        let view = match it.next().ok_or_else(bad)? {
            "ego" => View::Ego,
            "exo_side" => View::ExoSide,
            "exo_top" => View::ExoTop,
            _ => return Err(bad()),
        };
        let time = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let sequence = it.next().ok_or_else(bad)?;
        Ok(SourceId::new(sequence, time, view))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub kind: GalleryKind,
    dim: usize,
    embeddings: Vec<f32>,
    ids: Vec<SourceId>,
}

#[derive(Serialize, Deserialize)]
struct GalleryHeader {
    kind: GalleryKind,
    dim: usize,
    count: usize,
}

impl Gallery {
    pub fn new(kind: GalleryKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            embeddings: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SourceId] {
        &self.ids
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &SourceId) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn push(&mut self, id: SourceId, embedding: &[f32]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, embedding.len()));
        }
        if self.ids.contains(&id) {
            return Err(Error::Schema(format!("duplicate gallery id {id}")));
        }
        self.ids.push(id);
        self.embeddings.extend_from_slice(embedding);
        Ok(())
    }

    /// Reorder entries by source id.
    pub fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        let mut emb = Vec::with_capacity(self.embeddings.len());
        for &i in &order {
            emb.extend_from_slice(self.embedding(i));
        }
        self.ids = order.iter().map(|&i| self.ids[i].clone()).collect();
        self.embeddings = emb;
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = GalleryHeader {
            kind: self.kind,
            dim: self.dim,
            count: self.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend_from_slice(EEMB_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.embeddings {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            let s = id.to_string();
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Schema("gallery header line missing".into()))?;
        let header: GalleryHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Schema(format!("gallery header: {e}")))?;
        let mut r = Reader { buf: &bytes[nl + 1..] };
        if r.take(4)? != EEMB_MAGIC {
            return Err(Error::Schema("bad EEMB magic".into()));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if count != header.count || dim != header.dim {
            return Err(Error::Schema(format!(
                "header declares {}x{}, block holds {count}x{dim}",
                header.count, header.dim
            )));
        }
        let n = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Schema("gallery size overflows".into()))?;
        let embeddings: Vec<f32> = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite embedding value".into()));
        }
        let mut ids = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Schema("source id is not UTF-8".into()))?;
            let id: SourceId = s.parse()?;
            if !seen.insert(id.clone()) {
                return Err(Error::Schema(format!("duplicate gallery id {id}")));
            }
            ids.push(id);
        }
        if !r.buf.is_empty() {
            return Err(Error::Schema("trailing bytes after gallery id table".into()));
        }
        Ok(Self {
            kind: header.kind,
            dim,
            embeddings,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() {
            return Err(Error::Schema("gallery file truncated".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub query: SourceId,
    pub gallery_kind: GalleryKind,
    /// Gallery ids by ascending distance.
    pub ranked: Vec<SourceId>,
    /// 1-based position of the ground truth in `ranked`.
    pub rank_of_truth: usize,
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Rank the whole gallery by Euclidean distance to `query`; equal
/// distances fall back to source-id order.
pub fn retrieve(query_id: &SourceId, query: &[f32], truth: &SourceId, gallery: &Gallery) -> Result<RankingResult> {
    if query.len() != gallery.dim() {
        return Err(Error::DimensionMismatch(gallery.dim(), query.len()));
    }
    if gallery.position(truth).is_none() {
        return Err(Error::TruthMissing(truth.to_string()));
    }
    let dist: Vec<f64> = (0..gallery.len())
        .map(|i| squared_distance(query, gallery.embedding(i)))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| match dist[a].total_cmp(&dist[b]) {
        Ordering::Equal => gallery.ids[a].cmp(&gallery.ids[b]),
        o => o,
    });
    let ranked: Vec<SourceId> = order.iter().map(|&i| gallery.ids[i].clone()).collect();
    let rank_of_truth = ranked.iter().position(|x| x == truth).expect("truth present") + 1;
    Ok(RankingResult {
        query: query_id.clone(),
        gallery_kind: gallery.kind,
        ranked,
        rank_of_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id(t: usize) -> SourceId {
        SourceId::new("seq", t, View::ExoSide)
    }

    fn random_gallery(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Gallery {
        let mut g = Gallery::new(GalleryKind::Exo, dim);
        for t in 0..n {
            let e: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.push(id(t), &e).unwrap();
        }
        g
    }

    #[test]
    fn self_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random_gallery(&mut rng, 30, 8);
        let q = g.embedding(17).to_vec();
        let r = retrieve(&id(17).with_view(View::Ego), &q, &id(17), &g).unwrap();
        assert_eq!(r.rank_of_truth, 1);
    }

    #[test]
    fn ties_break_by_id() {
        let mut g = Gallery::new(GalleryKind::Exo, 2);
        for t in [4, 1, 3, 0, 2] {
            g.push(id(t), &[1.0, 0.0]).unwrap();
        }
        let r = retrieve(&id(9), &[0.0, 0.0], &id(3), &g).unwrap();
        assert_eq!(r.rank_of_truth, 4);
        assert_eq!(r.ranked, (0..5).map(id).collect::<Vec<_>>());
    }

    #[test]
    fn matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_gallery(&mut rng, 20, 5);
        let q: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = retrieve(&id(99), &q, &id(0), &g).unwrap();
        let mut brute: Vec<(f64, usize)> = (0..20)
            .map(|i| {
                let e = g.embedding(i);
                let d: f64 = (0..5).map(|k| ((q[k] - e[k]) as f64).powi(2)).sum::<f64>().sqrt();
                (d, i)
            })
            .collect();
        brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let want: Vec<SourceId> = brute.iter().map(|(_, i)| id(*i)).collect();
        assert_eq!(r.ranked, want);
    }

    #[test]
    fn missing_truth_and_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gallery(&mut rng, 3, 4);
        assert!(matches!(retrieve(&id(0), &[0.0; 4], &id(7), &g), Err(Error::TruthMissing(_))));
        assert!(matches!(retrieve(&id(0), &[0.0; 3], &id(0), &g), Err(Error::DimensionMismatch(4, 3))));
    }

    #[test]
    fn file_roundtrip_and_bad_magic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = random_gallery(&mut rng, 6, 3);
        g.push(SourceId::new("a:b", 2, View::Ego), &[0.5, 0.5, 0.5]).unwrap();
        let bytes = g.encode();
        assert_eq!(Gallery::decode(&bytes).unwrap(), g);
        let mut bad = bytes.clone();
        let at = bad.iter().position(|&b| b == b'\n').unwrap() + 1;
        bad[at] = b'X';
        assert!(matches!(Gallery::decode(&bad), Err(Error::Schema(_))));
        assert!(Gallery::decode(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn shuffled_gallery_ranks_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_gallery(&mut rng, 15, 4);
        let mut shuffled = Gallery::new(GalleryKind::Exo, 4);
        for i in (0..15).rev() {
            shuffled.push(g.ids()[i].clone(), g.embedding(i)).unwrap();
        }
        let q = [0.1, -0.2, 0.3, 0.0];
        let a = retrieve(&id(50), &q, &id(5), &g).unwrap();
        let b = retrieve(&id(50), &q, &id(5), &shuffled).unwrap();
        assert_eq!(a, b);
    }
}
