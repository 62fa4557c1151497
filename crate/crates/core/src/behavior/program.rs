use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::primitives::*;
use super::NeighborView;
use crate::kinematics::{Pose, VelocityCommand};

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("invalid program `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("cannot read program file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse program file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize program: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// A behavior primitive together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", content = "params", rename_all = "snake_case")]
pub enum Primitive {
    Aggregate(AggregateParams),
    Diffuse(DiffuseParams),
    Flock(FlockParams),
    LennardJones(LennardJonesParams),
    Pursuit(PursuitParams),
    /// Straight out from the marker, e.g. the burst and fade of a firework.
    Radial(RadialParams),
    Still,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPhase {
    /// Seconds; `inf` is allowed.
    pub duration: f64,
    #[serde(flatten)]
    pub primitive: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProgram {
    pub name: String,
    #[serde(rename = "loop", default)]
    pub looping: bool,
    pub phases: Vec<BehaviorPhase>,
}

/// Own state handed to the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfState {
    pub id: u16,
    pub pose: Pose,
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorOutput {
    /// Unclamped intent; see [`super::clamp_command`].
    pub command: VelocityCommand,
    pub phase: usize,
    /// The active phase needs the marker and none is known. The robot holds
    /// still until it reappears.
    pub cue_error: bool,
}

impl BehaviorProgram {
    pub fn validate(&self) -> Result<(), ProgramError> {
        let bad = |reason: String| ProgramError::Invalid {
            name: self.name.clone(),
            reason,
        };
        if self.phases.is_empty() {
            return Err(bad("program has no phases".into()));
        }
        for (i, ph) in self.phases.iter().enumerate() {
            if !(ph.duration > 0.0) {
                return Err(bad(format!("phases[{i}].duration must be > 0")));
            }
            let gains_ok = match &ph.primitive {
                Primitive::Aggregate(p) => {
                    p.gain >= 0.0 && p.stop_radius >= 0.0 && p.speed_limit.map_or(true, |s| s >= 0.0)
                }
                Primitive::Diffuse(p) => p.gain >= 0.0 && p.radius > 0.0,
                Primitive::Flock(p) => {
                    p.w_sep >= 0.0
                        && p.w_ali >= 0.0
                        && p.w_coh >= 0.0
                        && p.sep_radius > 0.0
                        && p.radius > 0.0
                        && p.momentum >= 0.0
                }
                Primitive::LennardJones(p) => p.delta > 0.0 && p.eps >= 0.0 && p.gain >= 0.0,
                Primitive::Pursuit(p) => p.gain >= 0.0 && p.tangential.is_finite(),
                Primitive::Radial(p) => p.speed_start >= 0.0 && p.speed_end >= 0.0,
                Primitive::Still => true,
            };
            if !gains_ok {
                return Err(bad(format!("phases[{i}] has a negative gain or non-positive radius")));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Active phase index and the time already spent in it.
    pub fn phase_at(&self, t: f64) -> (usize, f64) {
        let total = self.total_duration();
        let mut t = t.max(0.0);
        if self.looping && total.is_finite() && total > 0.0 {
            t = t.rem_euclid(total);
        }
        let mut start = 0.0;
        for (i, ph) in self.phases.iter().enumerate() {
            if t < start + ph.duration {
                return (i, t - start);
            }
            start += ph.duration;
        }
        let last = self.phases.len() - 1;
        (last, t - (start - self.phases[last].duration))
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ProgramError> {
        let p: Self = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> Result<String, ProgramError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ProgramError> {
        let s = std::fs::read_to_string(path).map_err(|e| ProgramError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&s)
    }
}

/// Content digest used to prove that every robot ran the same program text.
pub fn program_digest(program: &BehaviorProgram) -> String {
    let canonical = serde_json::to_string(program).expect("programs always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Evaluates the program for one robot at `t` seconds since it started.
pub fn step_behavior(
    program: &BehaviorProgram,
    t: f64,
    me: &SelfState,
    view: &NeighborView,
) -> BehaviorOutput {
    let (phase, t_in) = program.phase_at(t);
    let ph = &program.phases[phase];
    let pose = &me.pose;
    let mut cue_error = false;

    let command = match &ph.primitive {
        Primitive::Aggregate(p) => {
            if p.require_marker && view.marker.is_none() {
                cue_error = true;
            }
            aggregate_velocity(pose, view, p)
        }
        Primitive::Diffuse(p) => diffuse_velocity(pose, view, p),
        Primitive::Flock(p) => {
            let steer = flock_velocity(pose, me.velocity, view, p);
            VelocityCommand::planar(
                p.momentum * me.velocity.x + steer.vx,
                p.momentum * me.velocity.y + steer.vy,
            )
        }
        Primitive::LennardJones(p) => lj_velocity(pose, view, p),
        Primitive::Pursuit(p) => pursuit_velocity(me.id, pose, view, p),
        Primitive::Radial(p) => {
            let progress = if ph.duration.is_finite() {
                t_in / ph.duration
            } else {
                0.0
            };
            match radial_velocity(me.id, pose, view, p, progress) {
                Some(c) => c,
                None => {
                    cue_error = true;
                    VelocityCommand::ZERO
                }
            }
        }
        Primitive::Still => VelocityCommand::ZERO,
    };

    BehaviorOutput {
        command,
        phase,
        cue_error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FireworkParams {
    pub v_in: f64,
    pub v_out: f64,
    pub t_gather: f64,
    pub t_hold: f64,
    pub t_burst: f64,
    pub t_fade: f64,
    /// Proportional gain of the gathering phase.
    pub gather_gain: f64,
}

impl Default for FireworkParams {
    fn default() -> Self {
        Self {
            v_in: 0.3,
            v_out: 0.8,
            t_gather: 8.0,
            t_hold: 2.0,
            t_burst: 3.0,
            t_fade: 3.0,
            gather_gain: 0.5,
        }
    }
}

/// Gather at the marker, hold, burst outward, fade out.
pub fn firework_program(params: &FireworkParams) -> Result<BehaviorProgram, ProgramError> {
    if !(params.v_out > params.v_in && params.v_in > 0.0) {
        return Err(ProgramError::InvalidInput("firework needs 0 < v_in < v_out"));
    }
    let program = BehaviorProgram {
        name: "firework".into(),
        looping: false,
        phases: vec![
            BehaviorPhase {
                duration: params.t_gather,
                primitive: Primitive::Aggregate(AggregateParams {
                    gain: params.gather_gain,
                    stop_radius: 0.05,
                    speed_limit: Some(params.v_in),
                    require_marker: true,
                }),
            },
            BehaviorPhase {
                duration: params.t_hold,
                primitive: Primitive::Still,
            },
            BehaviorPhase {
                duration: params.t_burst,
                primitive: Primitive::Radial(RadialParams {
                    speed_start: params.v_out,
                    speed_end: params.v_out,
                }),
            },
            BehaviorPhase {
                duration: params.t_fade,
                primitive: Primitive::Radial(RadialParams {
                    speed_start: params.v_out,
                    speed_end: 0.0,
                }),
            },
        ],
    };
    program.validate()?;
    Ok(program)
}
