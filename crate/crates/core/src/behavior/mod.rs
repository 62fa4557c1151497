//! Swarm behavior primitives and their timed composition.
//!
//! Every function here is robot-agnostic: the output depends on the program,
//! time, own pose and velocity, and the neighbor view. Class limits are applied
//! afterwards by the caller through [`clamp_command`].

mod library;
mod primitives;
mod program;
mod view;

use nalgebra::Vector2;

pub use library::{library, library_program, LIBRARY_NAMES};
pub use primitives::{
    aggregate_velocity, diffuse_velocity, flock_velocity, lennard_jones_magnitude, lj_velocity,
    pursuit_velocity, radial_velocity, tie_break_direction, AggregateParams, DiffuseParams,
    FlockParams, LennardJonesParams, PursuitParams, RadialParams,
};
pub use program::{
    firework_program, program_digest, step_behavior, BehaviorOutput, BehaviorPhase,
    BehaviorProgram, FireworkParams, Primitive, ProgramError, SelfState,
};
pub use view::{Marker, Neighbor, NeighborTable, NeighborView, PeerRecord, STALENESS_WINDOW};

use crate::kinematics::VelocityCommand;

/// Caps the planar norm of a behavior intent at the executing class's limit.
/// The sum of all terms is clamped, never the individual terms.
pub fn clamp_command(cmd: VelocityCommand, max_speed: f64) -> VelocityCommand {
    cmd.clamped(max_speed)
}

pub(crate) fn to_cmd(v: Vector2<f64>) -> VelocityCommand {
    VelocityCommand::planar(v.x, v.y)
}

pub(crate) fn cap_norm(v: Vector2<f64>, limit: Option<f64>) -> Vector2<f64> {
    match limit {
        Some(l) if v.norm() > l => {
            let n = v.norm();
            if n > 0.0 {
                v * (l / n)
            } else {
                v
            }
        }
        _ => v,
    }
}
