//! Scripted actor kinematics.

use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use crate::data::Action;
use crate::error::{Error, Result};

/// Standing eye height in meters.
pub const EYE_HEIGHT: f64 = 1.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trajectory {
    /// Straight line along the initial heading.
    Line,
    /// Constant turning rate in radians per frame.
    Arc { turn_rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionScript {
    pub action: Action,
    pub duration: usize,
    /// Meters per frame.
    pub speed: f64,
    pub start: [f64; 2],
    /// Initial heading in radians from +x towards +y.
    pub heading: f64,
    pub trajectory: Trajectory,
    #[serde(default = "default_eye_height")]
    pub eye_height: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_eye_height() -> f64 {
    EYE_HEIGHT
}

/// Default per-action speed in meters per frame.
pub fn default_speed(action: Action) -> f64 {
    match action {
        Action::Running | Action::Jogging => 0.1,
        Action::Crouching => 0.02,
        Action::Jumping => 0.03,
        _ => 0.04,
    }
}

impl ActionScript {
    pub fn new(action: Action, duration: usize, start: [f64; 2], heading: f64) -> Self {
        Self {
            action,
            duration,
            speed: default_speed(action),
            start,
            heading,
            trajectory: Trajectory::Line,
            eye_height: EYE_HEIGHT,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::InvalidScript("duration must be at least one frame".into()));
        }
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(Error::InvalidScript(format!("speed {} must be finite and nonnegative", self.speed)));
        }
        if !(self.eye_height > 0.0) || !self.eye_height.is_finite() {
            return Err(Error::InvalidScript(format!("eye height {}", self.eye_height)));
        }
        if let Trajectory::Arc { turn_rate } = self.trajectory {
            if !turn_rate.is_finite() {
                return Err(Error::InvalidScript("turn rate must be finite".into()));
            }
        }
        if !self.start.iter().chain([&self.heading]).all(|v| v.is_finite()) {
            return Err(Error::InvalidScript("start and heading must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorState {
    pub position: [f64; 2],
    /// Facing direction; strafing moves perpendicular to it.
    pub heading: f64,
    /// Eye height above the ground.
    pub body_height: f64,
    /// Height of the feet above the ground (nonzero mid-jump).
    pub lift: f64,
}

/// Jump apex height above the baseline.
const JUMP_AMPLITUDE: f64 = 0.35;
/// Fraction of eye height lost when fully crouched.
const CROUCH_DEPTH: f64 = 0.4;
/// Frames spent lowering into the crouch.
const CROUCH_RAMP: f64 = 5.0;

/// Eye height offset at frame `t` of a `duration`-frame script.
fn height_offset(action: Action, t: usize, duration: usize, base: f64) -> f64 {
    match action {
        Action::Jumping => {
            let hops = ((duration as f64 / 30.0).round() as usize).max(1);
            if duration < 2 {
                return 0.0;
            }
            let num = t * hops;
            let den = duration - 1;
            if num % den == 0 {
                return 0.0;
            }
            let f = (num % den) as f64 / den as f64;
            JUMP_AMPLITUDE * 4.0 * f * (1.0 - f)
        }
        Action::Crouching => -base * CROUCH_DEPTH * (t as f64 / CROUCH_RAMP).min(1.0),
        _ => 0.0,
    }
}

/// Per-frame actor states. Paths reflect off the scene bounds (inset by
/// the actor's half-width) so every position stays inside them.
pub fn simulate_actor(script: &ActionScript, scene: &SceneSpec) -> Result<Vec<ActorState>> {
    script.validate()?;
    let lo = [scene.bounds.min[0] + ACTOR_MARGIN, scene.bounds.min[1] + ACTOR_MARGIN];
    let hi = [scene.bounds.max[0] - ACTOR_MARGIN, scene.bounds.max[1] - ACTOR_MARGIN];
    if (0..2).any(|i| !(lo[i] <= script.start[i] && script.start[i] <= hi[i])) {
        return Err(Error::InvalidScript(format!(
            "start {:?} outside the walkable region of the scene",
            script.start
        )));
    }
    let turn = match script.trajectory {
        Trajectory::Line => 0.0,
        Trajectory::Arc { turn_rate } => turn_rate,
    };
    // strafing keeps facing the initial heading and slides to its right
    let sideways = if script.action == Action::Strafing { -std::f64::consts::FRAC_PI_2 } else { 0.0 };
    let mut pos = script.start;
    let mut heading = script.heading;
    let mut out = Vec::with_capacity(script.duration);
    for t in 0..script.duration {
        let dz = height_offset(script.action, t, script.duration, script.eye_height);
        out.push(ActorState {
            position: pos,
            heading,
            body_height: script.eye_height + dz,
            lift: dz.max(0.0),
        });
        let dir = heading + sideways;
        let mut step = [script.speed * dir.cos(), script.speed * dir.sin()];
        for i in 0..2 {
            let mut p = pos[i] + step[i];
            if p > hi[i] {
                p = 2.0 * hi[i] - p;
                step[i] = -step[i];
            } else if p < lo[i] {
                p = 2.0 * lo[i] - p;
                step[i] = -step[i];
            }
            pos[i] = p.clamp(lo[i], hi[i]);
        }
        if step[0] != 0.0 || step[1] != 0.0 {
            // the body turns to follow a reflected path
            heading = step[1].atan2(step[0]) - sideways;
        }
        heading += turn;
    }
    Ok(out)
}

/// Half-width kept between the actor and the scene bounds.
pub const ACTOR_MARGIN: f64 = 0.3;

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneSpec {
        SceneSpec::empty(20.0, 1)
    }

    #[test]
    fn zero_speed_stands_still() {
        let mut s = ActionScript::new(Action::Walking, 12, [0.5, -1.0], 0.3);
        s.speed = 0.0;
        let st = simulate_actor(&s, &scene()).unwrap();
        assert!(st.iter().all(|a| a.position == [0.5, -1.0]));
    }

    #[test]
    fn jump_profile_returns_to_baseline() {
        let s = ActionScript::new(Action::Jumping, 30, [0.0, 0.0], 0.0);
        let st = simulate_actor(&s, &scene()).unwrap();
        assert_eq!(st[0].body_height, EYE_HEIGHT);
        assert_eq!(st[29].body_height, EYE_HEIGHT);
        assert!(st[14].body_height > EYE_HEIGHT && st[15].body_height > EYE_HEIGHT);
        assert!(st.iter().all(|a| a.body_height >= EYE_HEIGHT));
    }

    #[test]
    fn straight_line_displacement() {
        let mut s = ActionScript::new(Action::Walking, 10, [-3.0, 1.0], 0.6);
        s.speed = 0.1;
        let st = simulate_actor(&s, &scene()).unwrap();
        let (a, b) = (st[0].position, st[9].position);
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        assert!((d - 0.9).abs() < 1e-12, "{d}");
    }

    #[test]
    fn crouch_lowers_and_walk_slower_than_run() {
        let s = ActionScript::new(Action::Crouching, 20, [0.0, 0.0], 0.0);
        let st = simulate_actor(&s, &scene()).unwrap();
        assert!(st[10].body_height < EYE_HEIGHT);
        assert!(default_speed(Action::Walking) < default_speed(Action::Running));
    }

    #[test]
    fn reflection_keeps_actor_in_bounds() {
        let sc = SceneSpec::empty(4.0, 1);
        let mut s = ActionScript::new(Action::Running, 300, [0.0, 0.0], 0.4);
        s.trajectory = Trajectory::Arc { turn_rate: 0.01 };
        for a in simulate_actor(&s, &sc).unwrap() {
            for i in 0..2 {
                assert!(a.position[i] >= sc.bounds.min[i] && a.position[i] <= sc.bounds.max[i]);
            }
        }
    }

    #[test]
    fn invalid_scripts_rejected() {
        let mut s = ActionScript::new(Action::Walking, 0, [0.0, 0.0], 0.0);
        assert!(matches!(simulate_actor(&s, &scene()), Err(Error::InvalidScript(_))));
        s.duration = 3;
        s.speed = -0.1;
        assert!(matches!(simulate_actor(&s, &scene()), Err(Error::InvalidScript(_))));
    }
}
