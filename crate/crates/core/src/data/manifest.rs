//! Paired ego/exo dataset manifest.
//!
//! A manifest is one JSON document:
//!
//! ```json
//! {
//!   "modality": "synthetic",
//!   "exo_kind": "side",
//!   "sequences": [{
//!     "id": "s0-q0", "scene_id": "s0", "actor_id": "a0", "split": "train",
//!     "ego_dir": "s0-q0/ego", "exo_dir": "s0-q0/exo", "length": 2,
//!     "labels": ["walking", "walking"],
//!     "poses_ego": [{"position": [0,0,1.7], "orientation": [1,0,0,0]}, null],
//!     "poses_exo": null,
//!     "resolution": [128, 128]
//!   }],
//!   "counts": {"train": {"videos": 1, "frames": 2}, "val": {...}, "test": {...}}
//! }
//! ```
//!
//! Directories are relative to the manifest file. Frame `i` of a view is
//! `<dir>/%06d.png`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Real,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ExoKind {
    Side,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Ego,
    ExoSide,
    ExoTop,
}

impl View {
    pub fn exo(kind: ExoKind) -> View {
        match kind {
            ExoKind::Side => View::ExoSide,
            ExoKind::Top => View::ExoTop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Action {
    #[serde(rename = "walking")]
    Walking,
    #[serde(rename = "jogging")]
    Jogging,
    #[serde(rename = "running")]
    Running,
    #[serde(rename = "waving")]
    Waving,
    #[serde(rename = "boxing")]
    Boxing,
    #[serde(rename = "clapping")]
    Clapping,
    #[serde(rename = "jumping")]
    Jumping,
    #[serde(rename = "push-ups")]
    PushUps,
    #[serde(rename = "crouching")]
    Crouching,
    #[serde(rename = "strafing")]
    Strafing,
}

/// Real-recording action classes (8; "jumping" included).
pub const REAL_ACTIONS: [Action; 8] = [
    Action::Walking,
    Action::Jogging,
    Action::Running,
    Action::Waving,
    Action::Boxing,
    Action::Clapping,
    Action::Jumping,
    Action::PushUps,
];

/// Rendered-data action classes.
pub const SYNTHETIC_ACTIONS: [Action; 5] = [
    Action::Walking,
    Action::Running,
    Action::Crouching,
    Action::Strafing,
    Action::Jumping,
];

impl Modality {
    pub fn vocabulary(self) -> &'static [Action] {
        match self {
            Modality::Real => &REAL_ACTIONS,
            Modality::Synthetic => &SYNTHETIC_ACTIONS,
        }
    }

    /// Index of `a` in this modality's vocabulary.
    pub fn class_index(self, a: Action) -> Option<usize> {
        self.vocabulary().iter().position(|&v| v == a)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("action serializes");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

/// Camera pose: position in meters and unit quaternion `(w, x, y, z)`
/// rotating camera coordinates into world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    fn validate(&self) -> Result<()> {
        let n: f64 = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n - 1.0).abs().lt(&1e-6) || self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("pose {self:?} is not a finite unit-quaternion pose")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub view: View,
    pub time_index: usize,
    pub action_label: Action,
    pub camera_pose: Option<Pose>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSequence {
    pub ego_frames: Vec<FrameRecord>,
    pub exo_frames: Vec<FrameRecord>,
    pub modality: Modality,
    pub exo_kind: ExoKind,
    pub scene_id: String,
    pub actor_id: String,
}

impl PairedSequence {
    pub fn len(&self) -> usize {
        self.ego_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ego_frames.is_empty()
    }

    /// Checks the alignment invariants: equal lengths, shared time indices
    /// and shared labels drawn from the modality's vocabulary.
    pub fn validate(&self) -> Result<()> {
        if self.ego_frames.len() != self.exo_frames.len() {
            return Err(Error::Alignment(format!(
                "{} ego frames vs {} exo frames",
                self.ego_frames.len(),
                self.exo_frames.len()
            )));
        }
        for (i, (e, x)) in self.ego_frames.iter().zip(&self.exo_frames).enumerate() {
            if e.time_index != i || x.time_index != i {
                return Err(Error::Alignment(format!("record {i} has time indices {} / {}", e.time_index, x.time_index)));
            }
            if e.action_label != x.action_label {
                return Err(Error::Alignment(format!("record {i} labels differ")));
            }
            if self.modality.class_index(e.action_label).is_none() {
                return Err(Error::Schema(format!("{} not in {:?} vocabulary", e.action_label, self.modality)));
            }
            if e.view != View::Ego || x.view != View::exo(self.exo_kind) {
                return Err(Error::Alignment(format!("record {i} has wrong views")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub id: String,
    pub scene_id: String,
    pub actor_id: String,
    pub split: Split,
    pub ego_dir: PathBuf,
    pub exo_dir: PathBuf,
    pub length: usize,
    pub labels: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses_ego: Option<Vec<Option<Pose>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses_exo: Option<Vec<Option<Pose>>>,
    /// `[height, width]` of the stored frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[u32; 2]>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tally {
    pub videos: usize,
    pub frames: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: Tally,
    pub val: Tally,
    pub test: Tally,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> Tally {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Tally {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> Tally {
        Tally {
            videos: self.train.videos + self.val.videos + self.test.videos,
            frames: self.train.frames + self.val.frames + self.test.frames,
        }
    }
}

/// Published split tallies of the released datasets, keyed by
/// (modality, exo kind).
pub fn published_counts(modality: Modality, exo_kind: ExoKind) -> SplitCounts {
    let t = |videos, frames| Tally { videos, frames };
    match (modality, exo_kind) {
        (Modality::Real, ExoKind::Side) => SplitCounts {
            train: t(124, 26_764),
            val: t(61, 13_412),
            test: t(70, 13_788),
        },
        (Modality::Real, ExoKind::Top) => SplitCounts {
            train: t(135, 28_408),
            val: t(68, 12_904),
            test: t(73, 14_064),
        },
        (Modality::Synthetic, _) => SplitCounts {
            train: t(208, 119_115),
            val: t(109, 6_702),
            test: t(95, 6_778),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub modality: Modality,
    pub exo_kind: ExoKind,
    pub sequences: Vec<SequenceEntry>,
    pub counts: SplitCounts,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One aligned (ego, exo) record pair yielded by
/// [`Manifest::iterate_aligned_pairs`].
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub sequence: usize,
    pub ego: FrameRecord,
    pub exo: FrameRecord,
}

impl Manifest {
    pub fn new(modality: Modality, exo_kind: ExoKind, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            modality,
            exo_kind,
            sequences: Vec::new(),
            counts: SplitCounts::default(),
            base_dir: base_dir.into(),
        }
    }

    pub fn recompute_counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for s in &self.sequences {
            let t = c.get_mut(s.split);
            t.videos += 1;
            t.frames += s.length;
        }
        c
    }

    /// Append a sequence and refresh the counts cache.
    pub fn push(&mut self, entry: SequenceEntry) {
        self.sequences.push(entry);
        self.counts = self.recompute_counts();
    }

    /// Parse and validate without touching the filesystem.
    pub fn parse(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
        m.base_dir = base_dir.into();
        m.validate()?;
        Ok(m)
    }

    /// Load from disk, validate every invariant and check that every
    /// referenced frame exists for both views.
    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::parse(&json, base)?;
        m.verify_media()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.sequences {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate sequence id {}", s.id)));
            }
            if s.labels.len() != s.length {
                return Err(Error::Schema(format!(
                    "sequence {}: {} labels for length {}",
                    s.id,
                    s.labels.len(),
                    s.length
                )));
            }
            for (name, poses) in [("poses_ego", &s.poses_ego), ("poses_exo", &s.poses_exo)] {
                if let Some(p) = poses {
                    if p.len() != s.length {
                        return Err(Error::Alignment(format!(
                            "sequence {}: {name} has {} entries for length {}",
                            s.id,
                            p.len(),
                            s.length
                        )));
                    }
                    for pose in p.iter().flatten() {
                        pose.validate()?;
                    }
                }
            }
            if self.modality == Modality::Synthetic {
                let all_posed = |p: &Option<Vec<Option<Pose>>>| p.as_ref().is_some_and(|v| v.iter().all(Option::is_some));
                if !all_posed(&s.poses_ego) || !all_posed(&s.poses_exo) {
                    return Err(Error::Schema(format!("synthetic sequence {} lacks camera poses", s.id)));
                }
            }
            if let Some(bad) = s.labels.iter().find(|a| self.modality.class_index(**a).is_none()) {
                return Err(Error::Schema(format!(
                    "sequence {}: label {bad} not in the {:?} vocabulary",
                    s.id, self.modality
                )));
            }
        }
        let recomputed = self.recompute_counts();
        if recomputed != self.counts {
            return Err(Error::Schema(format!(
                "counts cache {:?} does not match recomputed {:?}",
                self.counts, recomputed
            )));
        }
        Ok(())
    }

    pub fn ego_dir(&self, s: &SequenceEntry) -> PathBuf {
        self.base_dir.join(&s.ego_dir)
    }

    pub fn exo_dir(&self, s: &SequenceEntry) -> PathBuf {
        self.base_dir.join(&s.exo_dir)
    }

    pub fn frame_path(&self, s: &SequenceEntry, view: View, index: usize) -> PathBuf {
        let dir = if view == View::Ego { self.ego_dir(s) } else { self.exo_dir(s) };
        dir.join(frame_file_name(index))
    }

    /// Every declared frame must exist in both views, and the two views
    /// must hold the same number of frames.
    pub fn verify_media(&self) -> Result<()> {
        for s in &self.sequences {
            let ego = count_frames(&self.ego_dir(s))?;
            let exo = count_frames(&self.exo_dir(s))?;
            if ego != exo {
                return Err(Error::Alignment(format!(
                    "sequence {}: {ego} ego frames vs {exo} exo frames",
                    s.id
                )));
            }
            for view in [View::Ego, View::exo(self.exo_kind)] {
                for i in 0..s.length {
                    let p = self.frame_path(s, view, i);
                    if !p.is_file() {
                        return Err(Error::MissingFile(p));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn paired_sequence(&self, index: usize) -> PairedSequence {
        let s = &self.sequences[index];
        let rec = |view, poses: &Option<Vec<Option<Pose>>>| -> Vec<FrameRecord> {
            (0..s.length)
                .map(|t| FrameRecord {
                    view,
                    time_index: t,
                    action_label: s.labels[t],
                    camera_pose: poses.as_ref().and_then(|p| p[t]),
                })
                .collect()
        };
        PairedSequence {
            ego_frames: rec(View::Ego, &s.poses_ego),
            exo_frames: rec(View::exo(self.exo_kind), &s.poses_exo),
            modality: self.modality,
            exo_kind: self.exo_kind,
            scene_id: s.scene_id.clone(),
            actor_id: s.actor_id.clone(),
        }
    }

    pub fn sequences_in(&self, split: Split) -> impl Iterator<Item = (usize, &SequenceEntry)> {
        self.sequences.iter().enumerate().filter(move |(_, s)| s.split == split)
    }

    /// All aligned pairs of `split` for the requested exo kind, in sequence
    /// order then time order. A manifest holding a different exo kind, or
    /// no sequences in `split`, yields nothing.
    pub fn iterate_aligned_pairs(&self, split: Split, kind: ExoKind) -> impl Iterator<Item = AlignedPair> + '_ {
        let matches = kind == self.exo_kind;
        self.sequences_in(split)
            .filter(move |_| matches)
            .flat_map(move |(i, _)| {
                let p = self.paired_sequence(i);
                p.ego_frames
                    .into_iter()
                    .zip(p.exo_frames)
                    .map(move |(ego, exo)| AlignedPair { sequence: i, ego, exo })
            })
    }
}

/// Number of contiguous `%06d.png` frames starting at 0 in `dir`.
fn count_frames(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut n = 0;
    while dir.join(frame_file_name(n)).is_file() {
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, split: Split, length: usize) -> SequenceEntry {
        SequenceEntry {
            id: id.into(),
            scene_id: "s".into(),
            actor_id: "a".into(),
            split,
            ego_dir: format!("{id}/ego").into(),
            exo_dir: format!("{id}/exo").into(),
            length,
            labels: vec![Action::Walking; length],
            poses_ego: None,
            poses_exo: None,
            resolution: None,
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = Manifest::new(Modality::Real, ExoKind::Side, "");
        let parsed = Manifest::parse(&m.to_json(), "").unwrap();
        assert_eq!(parsed.counts.total(), Tally::default());
        assert_eq!(parsed.iterate_aligned_pairs(Split::Train, ExoKind::Side).count(), 0);
    }

    #[test]
    fn published_real_side_tallies_reproduce() {
        // 124 / 61 / 70 videos whose lengths sum to the published frame counts
        let want = published_counts(Modality::Real, ExoKind::Side);
        let mut m = Manifest::new(Modality::Real, ExoKind::Side, "");
        for split in Split::ALL {
            let t = want.get(split);
            let base = t.frames / t.videos;
            for v in 0..t.videos {
                let extra = usize::from(v < t.frames % t.videos);
                m.push(entry(&format!("{}-{v}", split.as_str()), split, base + extra));
            }
        }
        let parsed = Manifest::parse(&m.to_json(), "").unwrap();
        assert_eq!(parsed.recompute_counts(), want);
        assert_eq!(want.total(), Tally { videos: 255, frames: 53_964 });
    }

    #[test]
    fn counts_cache_mismatch_is_schema_error() {
        let mut m = Manifest::new(Modality::Real, ExoKind::Side, "");
        m.push(entry("a", Split::Train, 3));
        m.counts.train.frames = 4;
        assert!(matches!(Manifest::parse(&m.to_json(), ""), Err(Error::Schema(_))));
    }

    #[test]
    fn label_outside_vocabulary_rejected() {
        let mut m = Manifest::new(Modality::Real, ExoKind::Side, "");
        let mut e = entry("a", Split::Train, 2);
        e.labels[1] = Action::Strafing;
        m.push(e);
        assert!(matches!(Manifest::parse(&m.to_json(), ""), Err(Error::Schema(_))));
    }

    #[test]
    fn pose_length_mismatch_is_alignment_error() {
        let mut m = Manifest::new(Modality::Real, ExoKind::Side, "");
        let mut e = entry("a", Split::Train, 2);
        let p = Pose {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
        };
        e.poses_ego = Some(vec![Some(p), None]);
        e.poses_exo = Some(vec![Some(p)]);
        m.push(e);
        assert!(matches!(Manifest::parse(&m.to_json(), ""), Err(Error::Alignment(_))));
    }

    #[test]
    fn aligned_pairs_count_and_share_time() {
        let mut m = Manifest::new(Modality::Real, ExoKind::Side, "");
        m.push(entry("a", Split::Train, 5));
        m.push(entry("b", Split::Train, 5));
        m.push(entry("c", Split::Test, 4));
        let pairs: Vec<_> = m.iterate_aligned_pairs(Split::Train, ExoKind::Side).collect();
        assert_eq!(pairs.len(), 10);
        for p in &pairs {
            assert_eq!(p.ego.time_index, p.exo.time_index);
            assert_eq!(p.ego.action_label, p.exo.action_label);
            assert_eq!(p.exo.view, View::ExoSide);
        }
        assert_eq!(m.iterate_aligned_pairs(Split::Train, ExoKind::Top).count(), 0);
        assert_eq!(m.iterate_aligned_pairs(Split::Val, ExoKind::Side).count(), 0);
    }

    #[test]
    fn malformed_field_is_schema_error() {
        let bad = r#"{"modality":"real","exo_kind":"diagonal","sequences":[],"counts":{"train":{"videos":0,"frames":0},"val":{"videos":0,"frames":0},"test":{"videos":0,"frames":0}}}"#;
        assert!(matches!(Manifest::parse(bad, ""), Err(Error::Schema(_))));
    }

    #[test]
    fn action_labels_use_wire_names() {
        assert_eq!(Action::PushUps.to_string(), "push-ups");
        assert_eq!(REAL_ACTIONS.len(), 8);
        assert_eq!(SYNTHETIC_ACTIONS.len(), 5);
    }
}
