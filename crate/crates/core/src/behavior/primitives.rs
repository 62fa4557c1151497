use std::f64::consts::TAU;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{cap_norm, to_cmd, NeighborView};
use crate::kinematics::{Pose, VelocityCommand};

fn planar(p: &Pose) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

fn inf() -> f64 {
    f64::INFINITY
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateParams {
    pub gain: f64,
    #[serde(default)]
    pub stop_radius: f64,
    /// Optional cap on the command norm (the "approach speed").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
    /// When set, only the marker is a valid target and its absence is a cue error.
    #[serde(default)]
    pub require_marker: bool,
}

impl Default for AggregateParams {
    fn default() -> Self {
        Self {
            gain: 0.5,
            stop_radius: 0.1,
            speed_limit: None,
            require_marker: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffuseParams {
    pub gain: f64,
    pub radius: f64,
    #[serde(default)]
    pub repel_marker: bool,
}

impl Default for DiffuseParams {
    fn default() -> Self {
        Self {
            gain: 0.5,
            radius: 2.0,
            repel_marker: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockParams {
    pub w_sep: f64,
    pub w_ali: f64,
    pub w_coh: f64,
    pub sep_radius: f64,
    /// Neighbors farther than this are ignored.
    #[serde(default = "inf")]
    pub radius: f64,
    /// Weight of the robot's own velocity carried into the command when the
    /// phase runs inside a program; the bare steering term has none.
    #[serde(default = "one")]
    pub momentum: f64,
}

impl Default for FlockParams {
    fn default() -> Self {
        Self {
            w_sep: 0.3,
            w_ali: 0.5,
            w_coh: 0.05,
            sep_radius: 0.6,
            radius: f64::INFINITY,
            momentum: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LennardJonesParams {
    pub delta: f64,
    pub eps: f64,
    #[serde(default = "one")]
    pub gain: f64,
}

impl Default for LennardJonesParams {
    fn default() -> Self {
        Self {
            delta: 1.2,
            eps: 1.0,
            gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PursuitParams {
    pub gain: f64,
    /// Gain along the chord turned +90°; the sign picks the turning side.
    #[serde(default)]
    pub tangential: f64,
}

impl Default for PursuitParams {
    fn default() -> Self {
        Self {
            gain: 0.5,
            tangential: 0.0,
        }
    }
}

/// Motion straight away from the marker; speed ramps linearly from
/// `speed_start` to `speed_end` over the phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialParams {
    pub speed_start: f64,
    pub speed_end: f64,
}

/// Toward the marker if present, otherwise toward the neighbor centroid.
pub fn aggregate_velocity(pose: &Pose, view: &NeighborView, params: &AggregateParams) -> VelocityCommand {
    let target = match (view.marker, params.require_marker) {
        (Some(m), _) => Some(m.position - planar(pose)),
        (None, false) => view.centroid(),
        (None, true) => None,
    };
    let Some(rel) = target else {
        return VelocityCommand::ZERO;
    };
    if rel.norm() < params.stop_radius {
        return VelocityCommand::ZERO;
    }
    to_cmd(cap_norm(rel * params.gain, params.speed_limit))
}

fn linear_push(rel: Vector2<f64>) -> Option<Vector2<f64>> {
    if rel.norm_squared() == 0.0 {
        log::debug!("skipping neighbor at zero distance");
        return None;
    }
    Some(-rel)
}

fn inverse_distance_push(rel: Vector2<f64>) -> Option<Vector2<f64>> {
    let d2 = rel.norm_squared();
    if d2 == 0.0 {
        log::debug!("skipping neighbor at zero distance");
        return None;
    }
    // −û / d = −rel / d²
    Some(-rel / d2)
}

/// Away from every neighbor within `radius`, each contributing `−rel`, so
/// the command is `−gain · n · (centroid − self)`.
pub fn diffuse_velocity(pose: &Pose, view: &NeighborView, params: &DiffuseParams) -> VelocityCommand {
    let mut acc = Vector2::zeros();
    for n in &view.neighbors {
        if n.rel_pos.norm() < params.radius {
            if let Some(push) = linear_push(n.rel_pos) {
                acc += push;
            }
        }
    }
    if params.repel_marker {
        if let Some(m) = view.marker {
            let rel = m.position - planar(pose);
            if rel.norm() < params.radius {
                if let Some(push) = linear_push(rel) {
                    acc += push;
                }
            }
        }
    }
    to_cmd(acc * params.gain)
}

/// Reynolds steering: separation, alignment and cohesion. Returns the
/// steering term only; it is zero at the flock's fixed point.
pub fn flock_velocity(
    _pose: &Pose,
    self_vel: Vector2<f64>,
    view: &NeighborView,
    params: &FlockParams,
) -> VelocityCommand {
    let near: Vec<_> = view
        .neighbors
        .iter()
        .filter(|n| n.rel_pos.norm() <= params.radius)
        .collect();
    if near.is_empty() {
        return VelocityCommand::ZERO;
    }
    let count = near.len() as f64;

    let mut sep = Vector2::zeros();
    let mut mean_vel = Vector2::zeros();
    let mut centroid = Vector2::zeros();
    for n in &near {
        if n.rel_pos.norm() < params.sep_radius {
            if let Some(push) = inverse_distance_push(n.rel_pos) {
                sep += push;
            }
        }
        mean_vel += n.velocity;
        centroid += n.rel_pos;
    }
    let ali = mean_vel / count - self_vel;
    let coh = centroid / count;
    to_cmd(sep * params.w_sep + ali * params.w_ali + coh * params.w_coh)
}

/// Signed 4-2 virtual-force magnitude; positive attracts, negative repels.
pub fn lennard_jones_magnitude(d: f64, delta: f64, eps: f64) -> Result<f64, super::ProgramError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(super::ProgramError::InvalidInput("distance must be > 0"));
    }
    if !(delta > 0.0) {
        return Err(super::ProgramError::InvalidInput("delta must be > 0"));
    }
    let r = delta / d;
    let r2 = r * r;
    Ok(-(eps / d) * (r2 * r2 - r2))
}

pub fn lj_velocity(_pose: &Pose, view: &NeighborView, params: &LennardJonesParams) -> VelocityCommand {
    let mut acc = Vector2::zeros();
    for n in &view.neighbors {
        let d = n.rel_pos.norm();
        if d == 0.0 {
            log::debug!("skipping neighbor {} at zero distance", n.id);
            continue;
        }
        if let Ok(w) = lennard_jones_magnitude(d, params.delta, params.eps) {
            acc += n.rel_pos * (w / d);
        }
    }
    to_cmd(acc * params.gain)
}

/// Cyclic pursuit: chase the next id in sorted order over the known roster.
pub fn pursuit_velocity(
    self_id: u16,
    _pose: &Pose,
    view: &NeighborView,
    params: &PursuitParams,
) -> VelocityCommand {
    let mut ring: Vec<u16> = view.roster.clone();
    ring.extend(view.neighbors.iter().map(|n| n.id));
    ring.push(self_id);
    ring.sort_unstable();
    ring.dedup();
    if ring.len() < 2 {
        return VelocityCommand::ZERO;
    }
    let me = ring.iter().position(|&id| id == self_id).unwrap_or(0);
    let target = ring[(me + 1) % ring.len()];
    let Some(t) = view.get(target) else {
        return VelocityCommand::ZERO;
    };
    let chord = t.rel_pos;
    let perp = Vector2::new(-chord.y, chord.x);
    to_cmd(chord * params.gain + perp * params.tangential)
}

/// Deterministic unit vector derived from a node id; used whenever the
/// geometry leaves no preferred direction.
pub fn tie_break_direction(id: u16) -> Vector2<f64> {
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let angle = (z >> 11) as f64 / (1u64 << 53) as f64 * TAU;
    Vector2::new(angle.cos(), angle.sin())
}

/// Radial motion away from the marker. `None` when no marker is known.
pub fn radial_velocity(
    self_id: u16,
    pose: &Pose,
    view: &NeighborView,
    params: &RadialParams,
    progress: f64,
) -> Option<VelocityCommand> {
    let center = view.marker?.position;
    let away = planar(pose) - center;
    let dir = if away.norm() < 1e-9 {
        tie_break_direction(self_id)
    } else {
        away.normalize()
    };
    let frac = progress.clamp(0.0, 1.0);
    let speed = params.speed_start + (params.speed_end - params.speed_start) * frac;
    Some(to_cmd(dir * speed))
}
