//! Static scene description.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::actor::ACTOR_MARGIN;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    /// Center of the box; its base rests at `center[2] - size[2] / 2`.
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub color: Rgb,
}

impl Obstacle {
    pub fn min(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] - self.size[i] / 2.0)
    }

    pub fn max(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] + self.size[i] / 2.0)
    }

    fn footprint_contains(&self, p: [f64; 2], pad: f64) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..2).all(|i| lo[i] - pad <= p[i] && p[i] <= hi[i] + pad)
    }
}

/// Visual domain: `A` is saturated flat color, `B` muted color with
/// per-pixel sensor noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    #[default]
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub ground: Rgb,
    /// Second color of the 1 m ground checkerboard.
    pub ground_alt: Rgb,
    pub sky: Rgb,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Bounds,
    pub rng_seed: u64,
    #[serde(default)]
    pub style: Style,
    /// Amplitude of per-pixel noise, in intensity levels.
    #[serde(default)]
    pub noise: f64,
}

/// Width of the obstacle ring around the walkable interior.
const BORDER: f64 = 1.2;

const PALETTE_A: [Rgb; 8] = [
    [220, 40, 40],
    [40, 160, 60],
    [40, 80, 220],
    [230, 200, 30],
    [200, 60, 200],
    [30, 200, 210],
    [240, 130, 20],
    [120, 70, 30],
];

fn mute(c: Rgb) -> Rgb {
    // pull towards gray and darken
    c.map(|v| ((v as f64 * 0.45 + 110.0 * 0.55) * 0.85) as u8)
}

impl SceneSpec {
    /// Flat square scene of side `size` centered at the origin.
    pub fn empty(size: f64, rng_seed: u64) -> Self {
        Self {
            ground: [110, 110, 110],
            ground_alt: [110, 110, 110],
            sky: [150, 190, 235],
            obstacles: Vec::new(),
            bounds: Bounds {
                min: [-size / 2.0; 2],
                max: [size / 2.0; 2],
            },
            rng_seed,
            style: Style::A,
            noise: 0.0,
        }
    }

    /// Random scene: square of side `size` (at least 4 m), tiled ground and
    /// 3 to 5 boxes standing in the border ring so the interior stays
    /// walkable.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, size: f64, style: Style) -> Self {
        let mut s = SceneSpec::empty(size, rng.random());
        let pick = |rng: &mut R| PALETTE_A[rng.random_range(0..PALETTE_A.len())];
        let g: Rgb = std::array::from_fn(|_| rng.random_range(60..200));
        s.ground = g;
        s.ground_alt = g.map(|v| v.saturating_sub(35));
        s.sky = [rng.random_range(120..200), rng.random_range(160..220), rng.random_range(200..255)];
        let half = size / 2.0;
        let n = rng.random_range(3..=5);
        for k in 0..n {
            let side: [f64; 3] = [rng.random_range(0.4..0.8), rng.random_range(0.4..0.8), rng.random_range(0.8..2.2)];
            // spread boxes around the border ring, centers on a square
            let ang = (k as f64 + rng.random_range(0.0..0.8)) * std::f64::consts::TAU / n as f64;
            let r = half - 0.45;
            let (c, sn) = (ang.cos(), ang.sin());
            let scale = r / c.abs().max(sn.abs());
            let (x, y) = (c * scale, sn * scale);
            s.obstacles.push(Obstacle {
                center: [x, y, side[2] / 2.0],
                size: side,
                color: pick(rng),
            });
        }
        if style == Style::B {
            s.style = Style::B;
            s.noise = 12.0;
            s.ground = mute(s.ground);
            s.ground_alt = mute(s.ground_alt);
            s.sky = mute(s.sky);
            for o in &mut s.obstacles {
                o.color = mute(o.color);
            }
        }
        s
    }

    /// Region the actor may occupy: the bounds minus the border ring used
    /// by [`SceneSpec::random`].
    pub fn walkable(&self) -> Bounds {
        let e = self.bounds.extent();
        let ring = (e[0].min(e[1]) * 0.25).min(BORDER);
        Bounds {
            min: [self.bounds.min[0] + ring, self.bounds.min[1] + ring],
            max: [self.bounds.max[0] - ring, self.bounds.max[1] - ring],
        }
    }

    /// Parse and validate a scene description.
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneSpec = serde_json::from_str(text).map_err(|e| Error::Schema(format!("scene: {e}")))?;
        s.validate(None)?;
        Ok(s)
    }

    /// Obstacles must lie within the bounds and clear of `actor_start`.
    pub fn validate(&self, actor_start: Option<[f64; 2]>) -> Result<()> {
        let b = &self.bounds;
        if !(0..2).all(|i| b.min[i].is_finite() && b.max[i].is_finite() && b.min[i] + 2.0 * ACTOR_MARGIN < b.max[i]) {
            return Err(Error::InvalidScene(format!("degenerate bounds {b:?}")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidScene(format!("noise amplitude {}", self.noise)));
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if !o.size.iter().all(|&v| v > 0.0 && v.is_finite()) || !o.center.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidScene(format!("obstacle {k} has invalid geometry")));
            }
            let (lo, hi) = (o.min(), o.max());
            if !(0..2).all(|i| lo[i] >= b.min[i] - 1e-9 && hi[i] <= b.max[i] + 1e-9) {
                return Err(Error::InvalidScene(format!("obstacle {k} extends outside the bounds")));
            }
            if let Some(p) = actor_start {
                if o.footprint_contains(p, ACTOR_MARGIN) {
                    return Err(Error::InvalidScene(format!("actor start collides with obstacle {k}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_and_rejection() {
        let s = SceneSpec::random(&mut ChaCha8Rng::seed_from_u64(4), 6.0, Style::B);
        assert_eq!(SceneSpec::from_json(&serde_json::to_string(&s).unwrap()).unwrap(), s);
        assert!(matches!(SceneSpec::from_json("{"), Err(Error::Schema(_))));
        let mut bad = s.clone();
        bad.noise = -1.0;
        assert!(matches!(
            SceneSpec::from_json(&serde_json::to_string(&bad).unwrap()),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn random_scenes_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for style in [Style::A, Style::B] {
            for _ in 0..20 {
                let s = SceneSpec::random(&mut rng, 6.0, style);
                s.validate(Some(s.bounds.center())).unwrap();
                let w = s.walkable();
                s.validate(Some(w.min)).unwrap();
                s.validate(Some(w.max)).unwrap();
            }
        }
    }

    #[test]
    fn obstacle_outside_bounds_rejected() {
        let mut s = SceneSpec::empty(4.0, 0);
        s.obstacles.push(Obstacle {
            center: [1.9, 0.0, 0.5],
            size: [0.5, 0.5, 1.0],
            color: [0, 0, 0],
        });
        assert!(matches!(s.validate(None), Err(Error::InvalidScene(_))));
        s.obstacles[0].center[0] = 0.0;
        assert!(s.validate(None).is_ok());
        assert!(matches!(s.validate(Some([0.0, 0.0])), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = SceneSpec::random(&mut rng, 6.0, Style::B);
        let back: SceneSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
