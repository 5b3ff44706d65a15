//! Ray-cast renderer: per pixel, the nearest intersection among the ground
//! plane, the obstacles and (optionally) the actor's torso and head boxes.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor::ActorState;
use super::camera::Camera;
use super::scene::{Rgb, SceneSpec};
use crate::data::Frame;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorLook {
    pub torso: Rgb,
    pub head: Rgb,
}

impl ActorLook {
    pub const CAST: [ActorLook; 3] = [
        ActorLook {
            torso: [200, 30, 30],
            head: [240, 200, 160],
        },
        ActorLook {
            torso: [30, 30, 200],
            head: [200, 150, 110],
        },
        ActorLook {
            torso: [20, 150, 40],
            head: [140, 100, 70],
        },
    ];
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
    color: Rgb,
}

/// Relative brightness of box faces by outward normal axis; the top is
/// brightest so silhouettes read under flat shading.
const FACE_SHADE: [f64; 3] = [0.82, 0.66, 1.0];

impl Aabb {
    /// Entry distance and the axis of the entered face.
    fn hit(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for i in 0..3 {
            if d[i].abs() < 1e-12 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let a = (self.min[i] - o[i]) / d[i];
            let b = (self.max[i] - o[i]) / d[i];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            if near > t0 {
                t0 = near;
                axis = i;
            }
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > 1e-9).then_some((t0, axis))
    }
}

/// Torso and head boxes for an actor state.
fn actor_boxes(a: &ActorState, look: &ActorLook) -> [Aabb; 2] {
    let [x, y] = a.position;
    let standing = (a.body_height - a.lift) * 1.1;
    let torso_top = a.lift + standing * 0.7;
    [
        Aabb {
            min: [x - 0.22, y - 0.22, a.lift],
            max: [x + 0.22, y + 0.22, torso_top],
            color: look.torso,
        },
        Aabb {
            min: [x - 0.13, y - 0.13, torso_top + 0.02],
            max: [x + 0.13, y + 0.13, a.lift + standing],
            color: look.head,
        },
    ]
}

fn shade(c: Rgb, k: f64) -> [f64; 3] {
    c.map(|v| v as f64 * k)
}

/// Render the scene seen by `camera`. The actor is drawn only when given
/// (exocentric views). `noise_seed` drives the scene's pixel noise.
pub fn render_view(scene: &SceneSpec, camera: &Camera, actor: Option<(&ActorState, &ActorLook)>, noise_seed: u64) -> Result<Frame> {
    let k = camera.intrinsics;
    k.validate()?;
    let mut boxes: Vec<Aabb> = scene
        .obstacles
        .iter()
        .map(|o| Aabb {
            min: o.min(),
            max: o.max(),
            color: o.color,
        })
        .collect();
    if let Some((a, look)) = actor {
        boxes.extend(actor_boxes(a, look));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let o = camera.position;
    let mut pixels = Vec::with_capacity(k.height * k.width * 3);
    for row in 0..k.height {
        for col in 0..k.width {
            let d = camera.ray(row, col);
            let mut best = f64::INFINITY;
            let mut color = shade(scene.sky, 1.0);
            if d.z < -1e-12 {
                let t = -o.z / d.z;
                if t > 0.0 {
                    let p = o + d * t;
                    let tile = (p.x.floor() as i64 + p.y.floor() as i64).rem_euclid(2) == 0;
                    best = t;
                    color = shade(if tile { scene.ground } else { scene.ground_alt }, 1.0);
                }
            }
            for b in &boxes {
                if let Some((t, axis)) = b.hit(&o, &d) {
                    if t < best {
                        best = t;
                        color = shade(b.color, FACE_SHADE[axis]);
                    }
                }
            }
            for c in color {
                let n = if scene.noise > 0.0 {
                    rng.random_range(-scene.noise..=scene.noise)
                } else {
                    0.0
                };
                pixels.push((c + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Frame::new(k.height, k.width, pixels).map_err(|e| Error::DegenerateCamera(e.to_string()))
}
