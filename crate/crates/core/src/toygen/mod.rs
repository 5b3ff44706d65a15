//! Procedural paired-view scene generator: a scripted box actor in a tiled
//! arena, filmed by a head-mounted egocentric camera and a static side or
//! top exocentric camera.

pub mod actor;
pub mod camera;
pub mod render;
pub mod scene;

use std::path::Path;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

pub use actor::{simulate_actor, ActionScript, ActorState, Trajectory};
pub use camera::{Camera, Intrinsics};
pub use render::{render_view, ActorLook};
pub use scene::{Bounds, Obstacle, SceneSpec, Style};

use crate::data::manifest::{frame_file_name, SYNTHETIC_ACTIONS};
use crate::data::{Action, ExoKind, Frame, Manifest, Modality, Pose, SequenceEntry, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// Horizontal field of view of the egocentric camera, radians.
    pub ego_fov: f64,
    /// Downward tilt of the egocentric camera, radians.
    pub ego_pitch: f64,
    pub exo_fov: f64,
    /// Largest per-frame egocentric jitter rotation, degrees.
    pub jitter_max: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            size: 128,
            ego_fov: 80f64.to_radians(),
            ego_pitch: 15f64.to_radians(),
            exo_fov: 60f64.to_radians(),
            jitter_max: 3.0,
        }
    }
}

/// Static exocentric camera framing the whole arena.
pub fn exo_camera(scene: &SceneSpec, kind: ExoKind, rig: &RigConfig) -> Result<Camera> {
    let k = Intrinsics::with_fov(rig.size, rig.size, rig.exo_fov);
    let [cx, cy] = scene.bounds.center();
    let [ex, ey] = scene.bounds.extent();
    let half = ex.max(ey) / 2.0;
    // distance at which the arena fills the field of view
    let dist = half / (rig.exo_fov / 2.0).tan() + half;
    match kind {
        ExoKind::Side => Camera::look_at(
            Point3::new(cx, cy - dist, 1.8 + 0.25 * half),
            Point3::new(cx, cy, 0.6),
            Vector3::z(),
            k,
        ),
        ExoKind::Top => Camera::look_at(
            Point3::new(cx, cy, half / (rig.exo_fov / 2.0).tan() + 2.0),
            Point3::new(cx, cy, 0.0),
            Vector3::y(),
            k,
        ),
    }
}

/// Egocentric camera at the actor's eye, facing its heading, rotated by
/// `jitter` in camera coordinates.
pub fn ego_camera(state: &ActorState, rig: &RigConfig, jitter: Option<UnitQuaternion<f64>>) -> Camera {
    let base = camera::heading_rotation(state.heading, rig.ego_pitch);
    Camera {
        position: Point3::new(state.position[0], state.position[1], state.body_height),
        rotation: match jitter {
            Some(j) => base * j,
            None => base,
        },
        intrinsics: Intrinsics::with_fov(rig.size, rig.size, rig.ego_fov),
    }
}

/// Random rotation about a uniformly drawn axis by at most `max_deg`.
fn draw_jitter<R: Rng + ?Sized>(rng: &mut R, max_deg: f64) -> Option<UnitQuaternion<f64>> {
    if max_deg <= 0.0 {
        return None;
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..=max_deg.to_radians());
    Some(UnitQuaternion::from_scaled_axis(Vector3::from(axis) * angle))
}

/// A rendered, not yet written, paired sequence.
#[derive(Clone, Debug)]
pub struct RenderedSequence {
    pub ego: Vec<Frame>,
    pub exo: Vec<Frame>,
    pub poses_ego: Vec<Pose>,
    pub poses_exo: Vec<Pose>,
    pub states: Vec<ActorState>,
    pub action: Action,
}

/// Simulate and render both views of one script. Reproducible from the
/// scene's and script's seeds.
pub fn render_sequence(
    scene: &SceneSpec,
    script: &ActionScript,
    exo_kind: ExoKind,
    rig: &RigConfig,
    look: &ActorLook,
) -> Result<RenderedSequence> {
    scene.validate(Some(script.start))?;
    let states = simulate_actor(script, scene)?;
    let exo_cam = exo_camera(scene, exo_kind, rig)?;
    let seed = scene.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ script.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RenderedSequence {
        ego: Vec::with_capacity(states.len()),
        exo: Vec::with_capacity(states.len()),
        poses_ego: Vec::with_capacity(states.len()),
        poses_exo: Vec::with_capacity(states.len()),
        states: states.clone(),
        action: script.action,
    };
    for s in &states {
        let cam = ego_camera(s, rig, draw_jitter(&mut rng, rig.jitter_max));
        out.ego.push(render_view(scene, &cam, None, rng.random())?);
        out.exo.push(render_view(scene, &exo_cam, Some((s, look)), rng.random())?);
        out.poses_ego.push(cam.pose());
        out.poses_exo.push(exo_cam.pose());
    }
    Ok(out)
}

/// Render one sequence, write its frames under `root/<id>/{ego,exo}` and
/// return the manifest entry.
#[allow(clippy::too_many_arguments)]
pub fn generate_pair_sequence(
    scene: &SceneSpec,
    script: &ActionScript,
    exo_kind: ExoKind,
    rig: &RigConfig,
    look: &ActorLook,
    root: &Path,
    id: &str,
    split: Split,
    scene_id: &str,
    actor_id: &str,
) -> Result<SequenceEntry> {
    let seq = render_sequence(scene, script, exo_kind, rig, look)?;
    let ego_dir = format!("{id}/ego");
    let exo_dir = format!("{id}/exo");
    for (t, (e, x)) in seq.ego.iter().zip(&seq.exo).enumerate() {
        e.save_png(&root.join(&ego_dir).join(frame_file_name(t)))?;
        x.save_png(&root.join(&exo_dir).join(frame_file_name(t)))?;
    }
    Ok(SequenceEntry {
        id: id.to_string(),
        scene_id: scene_id.to_string(),
        actor_id: actor_id.to_string(),
        split,
        ego_dir: ego_dir.into(),
        exo_dir: exo_dir.into(),
        length: script.duration,
        labels: vec![script.action; script.duration],
        poses_ego: Some(seq.poses_ego.into_iter().map(Some).collect()),
        poses_exo: Some(seq.poses_exo.into_iter().map(Some).collect()),
        resolution: Some([rig.size as u32; 2]),
    })
}

/// Dataset-level generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToygenConfig {
    pub scenes: usize,
    pub seqs: usize,
    pub len: usize,
    pub seed: u64,
    pub exo_kind: ExoKind,
    pub style: Style,
    /// Side of the square arena in meters.
    pub arena: f64,
    pub rig: RigConfig,
    /// Restrict scripts to these actions; all synthetic actions when empty.
    pub actions: Vec<Action>,
}

impl Default for ToygenConfig {
    fn default() -> Self {
        Self {
            scenes: 4,
            seqs: 5,
            len: 50,
            seed: 0,
            exo_kind: ExoKind::Side,
            style: Style::A,
            arena: 6.0,
            rig: RigConfig::default(),
            actions: Vec::new(),
        }
    }
}

/// Split of sequence `q` out of `n` in one scene: the last goes to test,
/// the one before to validation, the rest to training.
pub fn split_for(q: usize, n: usize) -> Split {
    match n {
        0 | 1 => Split::Train,
        2 => [Split::Train, Split::Test][q],
        _ if q + 1 == n => Split::Test,
        _ if q + 2 == n => Split::Val,
        _ => Split::Train,
    }
}

/// Scene and script for sequence `q` of scene `s` (scene drawn once per
/// `s`). Actions cycle through the vocabulary by `s + q`.
pub fn plan_sequence(cfg: &ToygenConfig, scene: &SceneSpec, s: usize, q: usize) -> ActionScript {
    let actions: &[Action] = if cfg.actions.is_empty() { &SYNTHETIC_ACTIONS } else { &cfg.actions };
    let action = actions[(s + q) % actions.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((s as u64) << 32 | q as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let w = scene.walkable();
    let start = [rng.random_range(w.min[0]..=w.max[0]), rng.random_range(w.min[1]..=w.max[1])];
    let mut script = ActionScript::new(action, cfg.len, start, rng.random_range(0.0..std::f64::consts::TAU));
    script.seed = rng.random();
    if rng.random_bool(0.5) {
        script.trajectory = Trajectory::Arc {
            turn_rate: rng.random_range(-0.03..0.03),
        };
    }
    script
}

pub fn scene_for(cfg: &ToygenConfig, s: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(s as u64).wrapping_mul(0xD134_2543_DE82_EF95));
    SceneSpec::random(&mut rng, cfg.arena, cfg.style)
}

/// Generate `scenes × seqs` sequences under `root` and write
/// `root/manifest.json`.
pub fn generate_dataset(cfg: &ToygenConfig, root: &Path) -> Result<Manifest> {
    if cfg.len == 0 {
        return Err(Error::InvalidScript("sequence length must be at least 1".into()));
    }
    let mut m = Manifest::new(Modality::Synthetic, cfg.exo_kind, root);
    for s in 0..cfg.scenes {
        let scene = scene_for(cfg, s);
        for q in 0..cfg.seqs {
            let script = plan_sequence(cfg, &scene, s, q);
            let look = &ActorLook::CAST[q % ActorLook::CAST.len()];
            let entry = generate_pair_sequence(
                &scene,
                &script,
                cfg.exo_kind,
                &cfg.rig,
                look,
                root,
                &format!("s{s:02}-q{q:02}"),
                split_for(q, cfg.seqs),
                &format!("scene{s:02}"),
                &format!("actor{}", q % ActorLook::CAST.len()),
            )?;
            m.push(entry);
        }
    }
    m.write(&root.join("manifest.json"))?;
    Ok(m)
}
