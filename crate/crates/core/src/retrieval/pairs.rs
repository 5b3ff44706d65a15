use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::PairLabel;
use crate::data::{Manifest, Split};
use crate::dataset::Variant;
use crate::error::{Error, Result};

/// One input of a pair: a sequence (index within the split) and a time
/// index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub sequence: usize,
    pub time: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub ego: ItemRef,
    pub exo: ItemRef,
    pub label: PairLabel,
}

/// Where negatives come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSource {
    /// Same sequence, another time.
    Within,
    /// Another sequence.
    Cross,
    /// Half within, half cross; falls back to whichever is available.
    #[default]
    Mixed,
}

/// Every positive pair over `times` (the usable time indices of each
/// sequence), each followed by `neg_ratio` negatives with `t1 ≠ t2`, in
/// shuffled order.
pub fn sample_pairs_over(times: &[Vec<usize>], neg_ratio: usize, source: NegativeSource, seed: u64) -> Result<Vec<PairSample>> {
    if times.iter().all(Vec::is_empty) {
        return Err(Error::DataEmpty("no aligned pairs to sample from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonempty: Vec<usize> = (0..times.len()).filter(|&s| !times[s].is_empty()).collect();
    let mut out = Vec::new();
    for (s, ts) in times.iter().enumerate() {
        let can_cross = nonempty.len() > 1;
        for &t in ts {
            let anchor = ItemRef { sequence: s, time: t };
            out.push(PairSample {
                ego: anchor,
                exo: anchor,
                label: PairLabel::Positive,
            });
            for _ in 0..neg_ratio {
                let within = match source {
                    NegativeSource::Within => true,
                    NegativeSource::Cross => false,
                    NegativeSource::Mixed => rng.random_bool(0.5),
                };
                let within = if within { ts.len() > 1 || !can_cross } else { !can_cross };
                let neg = if within {
                    draw_other_time(ts, t, &mut rng).map(|t2| ItemRef { sequence: s, time: t2 })
                } else {
                    draw_cross(times, &nonempty, s, t, &mut rng)
                };
                if let Some(exo) = neg {
                    out.push(PairSample {
                        ego: anchor,
                        exo,
                        label: PairLabel::Negative,
                    });
                }
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn draw_other_time(ts: &[usize], t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    if ts.len() < 2 {
        return None;
    }
    loop {
        let t2 = ts[rng.random_range(0..ts.len())];
        if t2 != t {
            return Some(t2);
        }
    }
}

fn draw_cross(times: &[Vec<usize>], nonempty: &[usize], s: usize, t: usize, rng: &mut ChaCha8Rng) -> Option<ItemRef> {
    // Rejection sampling; give up when the other sequences only hold `t`.
    let usable = nonempty.iter().any(|&o| o != s && times[o].iter().any(|&x| x != t));
    if !usable {
        return None;
    }
    loop {
        let o = nonempty[rng.random_range(0..nonempty.len())];
        if o == s {
            continue;
        }
        let t2 = times[o][rng.random_range(0..times[o].len())];
        if t2 != t {
            return Some(ItemRef { sequence: o, time: t2 });
        }
    }
}

/// Usable time indices per sequence of `split`, in manifest order.
pub fn split_times(m: &Manifest, split: Split, variant: Variant) -> Vec<Vec<usize>> {
    m.sequences_in(split)
        .map(|(_, s)| (variant.first_time()..s.length).collect())
        .collect()
}

pub fn sample_pairs(
    m: &Manifest,
    split: Split,
    variant: Variant,
    neg_ratio: usize,
    source: NegativeSource,
    seed: u64,
) -> Result<Vec<PairSample>> {
    sample_pairs_over(&split_times(m, split, variant), neg_ratio, source, seed)
}
