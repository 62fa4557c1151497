//! Motion models for the three robot classes.
//!
//! Ground robots (tabletop and human-scale) are differential-drive unicycles
//! integrated in closed form. Aerial robots are holonomic point masses that
//! track a commanded velocity under an acceleration limit; attitude control is
//! assumed to be handled by the flight controller.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angular rate below which the arc integration falls back to a straight line.
pub const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

/// Fixed simulation step used everywhere (20 Hz).
pub const SIM_DT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("operation requires a {expected} robot class, got {actual:?}")]
    WrongClass {
        expected: &'static str,
        actual: ClassKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Tabletop,
    Aerial,
    HumanScale,
}

impl ClassKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassKind::Tabletop => "tabletop",
            ClassKind::Aerial => "aerial",
            ClassKind::HumanScale => "human_scale",
        }
    }

    pub fn is_ground(self) -> bool {
        !matches!(self, ClassKind::Aerial)
    }
}

/// Dynamic envelope of one robot class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotClass {
    pub kind: ClassKind,
    /// m/s
    pub max_speed: f64,
    /// m/s²
    pub max_accel: f64,
    /// Distance between the drive wheels (m). Unused for aerial robots.
    pub wheel_track: f64,
    /// Proportional gain of the heading controller used by ground robots.
    pub heading_gain: f64,
}

impl RobotClass {
    pub fn tabletop() -> Self {
        Self {
            kind: ClassKind::Tabletop,
            max_speed: 0.5,
            max_accel: 1.0,
            wheel_track: 0.02,
            heading_gain: 2.0,
        }
    }

    pub fn human_scale() -> Self {
        Self {
            kind: ClassKind::HumanScale,
            max_speed: 1.0,
            max_accel: 0.5,
            wheel_track: 0.4,
            heading_gain: 2.0,
        }
    }

    pub fn aerial() -> Self {
        Self {
            kind: ClassKind::Aerial,
            max_speed: 1.5,
            max_accel: 2.0,
            wheel_track: 0.0,
            heading_gain: 2.0,
        }
    }

    pub fn default_for(kind: ClassKind) -> Self {
        match kind {
            ClassKind::Tabletop => Self::tabletop(),
            ClassKind::Aerial => Self::aerial(),
            ClassKind::HumanScale => Self::human_scale(),
        }
    }

    pub fn has_altitude(&self) -> bool {
        self.kind == ClassKind::Aerial
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.max_speed > 0.0 && self.max_speed.is_finite()) {
            return Err(KinematicsError::InvalidInput("max_speed must be > 0"));
        }
        if !(self.max_accel > 0.0 && self.max_accel.is_finite()) {
            return Err(KinematicsError::InvalidInput("max_accel must be > 0"));
        }
        if self.kind.is_ground() && !(self.wheel_track > 0.0 && self.wheel_track.is_finite()) {
            return Err(KinematicsError::InvalidInput(
                "wheel_track must be > 0 for ground classes",
            ));
        }
        if !(self.heading_gain >= 0.0) {
            return Err(KinematicsError::InvalidInput("heading_gain must be >= 0"));
        }
        Ok(())
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(x, y, 0.0, yaw)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl VelocityCommand {
    pub const ZERO: Self = Self {
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
    };

    pub fn planar(vx: f64, vy: f64) -> Self {
        Self { vx, vy, vz: 0.0 }
    }

    pub fn planar_norm(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Scales the planar part down so its norm does not exceed `max_speed`,
    /// and clips the vertical part to the same bound.
    pub fn clamped(self, max_speed: f64) -> Self {
        let n = self.planar_norm();
        let s = if n > max_speed && n > 0.0 {
            max_speed / n
        } else {
            1.0
        };
        Self {
            vx: self.vx * s,
            vy: self.vy * s,
            vz: self.vz.clamp(-max_speed, max_speed),
        }
    }

    fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.vz.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub left: f64,
    pub right: f64,
}

impl WheelSpeeds {
    pub fn forward_speed(&self) -> f64 {
        0.5 * (self.left + self.right)
    }

    pub fn yaw_rate(&self, track: f64) -> f64 {
        (self.right - self.left) / track
    }
}

/// Exact unicycle arc integration of one differential-drive step.
pub fn diffdrive_step(
    pose: Pose,
    wheels: WheelSpeeds,
    track: f64,
    dt: f64,
) -> Result<Pose, KinematicsError> {
    if !pose.is_finite() || !wheels.left.is_finite() || !wheels.right.is_finite() {
        return Err(KinematicsError::InvalidInput("non-finite pose or wheel speed"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KinematicsError::InvalidInput("dt must be > 0"));
    }
    if !(track > 0.0 && track.is_finite()) {
        return Err(KinematicsError::InvalidInput("track must be > 0"));
    }

    let v = wheels.forward_speed();
    let omega = wheels.yaw_rate(track);
    let yaw0 = pose.yaw;

    let (x, y, yaw) = if omega.abs() < STRAIGHT_LINE_OMEGA {
        (
            pose.x + v * yaw0.cos() * dt,
            pose.y + v * yaw0.sin() * dt,
            yaw0,
        )
    } else {
        let yaw1 = yaw0 + omega * dt;
        let r = v / omega;
        (
            pose.x + r * (yaw1.sin() - yaw0.sin()),
            pose.y - r * (yaw1.cos() - yaw0.cos()),
            yaw1,
        )
    };

    Ok(Pose {
        x,
        y,
        z: 0.0,
        yaw: normalize_angle(yaw),
    })
}

/// Unicycle tracking of a holonomic velocity command by a ground robot.
pub fn velocity_to_wheels(
    cmd: VelocityCommand,
    pose: Pose,
    class: &RobotClass,
) -> Result<WheelSpeeds, KinematicsError> {
    if !class.kind.is_ground() {
        return Err(KinematicsError::WrongClass {
            expected: "ground",
            actual: class.kind,
        });
    }
    if !cmd.is_finite() || !pose.is_finite() {
        return Err(KinematicsError::InvalidInput("non-finite command or pose"));
    }
    let speed = cmd.planar_norm();
    if speed == 0.0 {
        return Ok(WheelSpeeds::default());
    }

    let heading_error = normalize_angle(cmd.vy.atan2(cmd.vx) - pose.yaw);
    let omega = class.heading_gain * heading_error;
    let v = speed * heading_error.cos().max(0.0);
    let half = 0.5 * omega * class.wheel_track;
    let mut wheels = WheelSpeeds {
        left: v - half,
        right: v + half,
    };

    let peak = wheels.left.abs().max(wheels.right.abs());
    if peak > class.max_speed {
        let s = class.max_speed / peak;
        wheels.left *= s;
        wheels.right *= s;
    }
    Ok(wheels)
}

/// Pose plus world-frame velocity of an aerial robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AerialState {
    pub pose: Pose,
    pub velocity: VelocityCommand,
}

/// Velocity tracking under an acceleration clamp, then an Euler position
/// update. The floor is at z = 0. When the robot moves horizontally its yaw
/// follows the direction of travel.
pub fn aerial_step(
    state: AerialState,
    cmd: VelocityCommand,
    class: &RobotClass,
    dt: f64,
) -> Result<AerialState, KinematicsError> {
    if class.kind != ClassKind::Aerial {
        return Err(KinematicsError::WrongClass {
            expected: "aerial",
            actual: class.kind,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KinematicsError::InvalidInput("dt must be > 0"));
    }
    if !cmd.is_finite() || !state.pose.is_finite() || !state.velocity.is_finite() {
        return Err(KinematicsError::InvalidInput("non-finite state or command"));
    }

    let target = cmd.clamped(class.max_speed);
    let cur = state.velocity;
    let (dvx, dvy, dvz) = (target.vx - cur.vx, target.vy - cur.vy, target.vz - cur.vz);
    let dv = (dvx * dvx + dvy * dvy + dvz * dvz).sqrt();
    let budget = class.max_accel * dt;
    let s = if dv > budget { budget / dv } else { 1.0 };
    let mut vel = VelocityCommand {
        vx: cur.vx + s * dvx,
        vy: cur.vy + s * dvy,
        vz: cur.vz + s * dvz,
    };

    let mut z = state.pose.z + vel.vz * dt;
    if z <= 0.0 {
        z = 0.0;
        if vel.vz < 0.0 {
            vel.vz = 0.0;
        }
    }

    let yaw = if vel.planar_norm() > 1e-3 {
        vel.vy.atan2(vel.vx)
    } else {
        state.pose.yaw
    };

    Ok(AerialState {
        pose: Pose {
            x: state.pose.x + vel.vx * dt,
            y: state.pose.y + vel.vy * dt,
            z,
            yaw: normalize_angle(yaw),
        },
        velocity: vel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fine-step forward Euler used as an independent reference.
    fn euler_oracle(pose: Pose, wheels: WheelSpeeds, track: f64, dt: f64, n: usize) -> Pose {
        let v = wheels.forward_speed();
        let w = wheels.yaw_rate(track);
        let h = dt / n as f64;
        let (mut x, mut y, mut th) = (pose.x, pose.y, pose.yaw);
        for _ in 0..n {
            // midpoint heading keeps the oracle second order
            let mid = th + 0.5 * w * h;
            x += v * mid.cos() * h;
            y += v * mid.sin() * h;
            th += w * h;
        }
        Pose::new(x, y, 0.0, th)
    }

    #[test]
    fn equal_wheels_go_straight() {
        let p = diffdrive_step(
            Pose::default(),
            WheelSpeeds { left: 1.0, right: 1.0 },
            0.1,
            1.0,
        )
        .unwrap();
        assert_eq!(p, Pose::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn opposite_wheels_spin_in_place() {
        let w = WheelSpeeds { left: -0.5, right: 0.5 };
        let p = diffdrive_step(Pose::default(), w, 0.1, 1.0).unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));
        assert!((p.yaw - (10.0 - 4.0 * PI)).abs() < 1e-12);
        assert!((p.yaw + 2.566).abs() < 1e-3);
        let o = euler_oracle(Pose::default(), w, 0.1, 1.0, 10_000);
        assert!(o.x.hypot(o.y) < 1e-6);
        assert!((normalize_angle(o.yaw - p.yaw)).abs() < 1e-9);
    }

    #[test]
    fn unit_rate_arc() {
        let w = WheelSpeeds { left: 0.1, right: 0.2 };
        let p = diffdrive_step(Pose::default(), w, 0.1, 1.0).unwrap();
        assert!((p.x - 0.15 * 1f64.sin()).abs() < 1e-12);
        assert!((p.y - 0.15 * (1.0 - 1f64.cos())).abs() < 1e-12);
        assert!((p.x - 0.1262).abs() < 1e-4 && (p.y - 0.0690).abs() < 1e-4);
        assert!((p.yaw - 1.0).abs() < 1e-12);
        let o = euler_oracle(Pose::default(), w, 0.1, 1.0, 10_000);
        assert!((o.x - p.x).hypot(o.y - p.y) < 1e-6);
    }

    #[test]
    fn diffdrive_rejects_bad_input() {
        let w = WheelSpeeds { left: f64::NAN, right: 0.0 };
        assert!(matches!(
            diffdrive_step(Pose::default(), w, 0.1, 0.1),
            Err(KinematicsError::InvalidInput(_))
        ));
        let w = WheelSpeeds::default();
        assert!(diffdrive_step(Pose::default(), w, 0.0, 0.1).is_err());
        assert!(diffdrive_step(Pose::default(), w, 0.1, 0.0).is_err());
    }

    fn test_class() -> RobotClass {
        RobotClass {
            kind: ClassKind::HumanScale,
            max_speed: 2.0,
            max_accel: 1.0,
            wheel_track: 0.1,
            heading_gain: 2.0,
        }
    }

    #[test]
    fn zero_command_zero_wheels() {
        let w = velocity_to_wheels(VelocityCommand::ZERO, Pose::default(), &test_class()).unwrap();
        assert_eq!(w, WheelSpeeds::default());
    }

    #[test]
    fn aligned_command_drives_straight() {
        let w = velocity_to_wheels(VelocityCommand::planar(1.0, 0.0), Pose::default(), &test_class())
            .unwrap();
        assert_eq!(w, WheelSpeeds { left: 1.0, right: 1.0 });
    }

    #[test]
    fn perpendicular_command_turns_in_place() {
        let w = velocity_to_wheels(VelocityCommand::planar(0.0, 1.0), Pose::default(), &test_class())
            .unwrap();
        // v = 0, ω = 2·π/2 = π, half-track 0.05
        assert!((w.left + PI * 0.05).abs() < 1e-12);
        assert!((w.right - PI * 0.05).abs() < 1e-12);
        assert!((w.right - 0.157).abs() < 1e-3);
    }

    #[test]
    fn wheel_output_is_clamped() {
        let class = RobotClass::tabletop();
        let w = velocity_to_wheels(VelocityCommand::planar(3.0, 0.0), Pose::default(), &class)
            .unwrap();
        assert_eq!(w, WheelSpeeds { left: 0.5, right: 0.5 });
    }

    #[test]
    fn wrong_class_errors() {
        assert!(matches!(
            velocity_to_wheels(VelocityCommand::ZERO, Pose::default(), &RobotClass::aerial()),
            Err(KinematicsError::WrongClass { .. })
        ));
        assert!(matches!(
            aerial_step(
                AerialState::default(),
                VelocityCommand::ZERO,
                &RobotClass::tabletop(),
                0.05
            ),
            Err(KinematicsError::WrongClass { .. })
        ));
    }

    #[test]
    fn hover_is_stationary() {
        let s = AerialState {
            pose: Pose::new(1.0, 2.0, 1.5, 0.3),
            velocity: VelocityCommand::ZERO,
        };
        let n = aerial_step(s, VelocityCommand::ZERO, &RobotClass::aerial(), 0.05).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn aerial_acceleration_clamp() {
        let class = RobotClass {
            max_accel: 0.5,
            ..RobotClass::aerial()
        };
        let n = aerial_step(
            AerialState::default(),
            VelocityCommand::planar(1.0, 0.0),
            &class,
            1.0,
        )
        .unwrap();
        assert!((n.velocity.vx - 0.5).abs() < 1e-12);
        assert!((n.pose.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn aerial_floor_clamp() {
        let s = AerialState {
            pose: Pose::new(0.0, 0.0, 0.05, 0.0),
            velocity: VelocityCommand {
                vx: 0.0,
                vy: 0.0,
                vz: -1.0,
            },
        };
        let n = aerial_step(
            s,
            VelocityCommand {
                vx: 0.0,
                vy: 0.0,
                vz: -1.5,
            },
            &RobotClass::aerial(),
            0.1,
        )
        .unwrap();
        assert_eq!(n.pose.z, 0.0);
        assert_eq!(n.velocity.vz, 0.0);
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(0.0), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matches_euler_oracle(
                x in -5.0..5.0f64, y in -5.0..5.0f64, yaw in -PI..PI,
                l in -1.0..1.0f64, r in -1.0..1.0f64,
                track in 0.02..0.5f64, dt in 0.001..0.1f64,
            ) {
                let pose = Pose::planar(x, y, yaw);
                let w = WheelSpeeds { left: l, right: r };
                let p = diffdrive_step(pose, w, track, dt).unwrap();
                let o = euler_oracle(pose, w, track, dt, 10_000);
                prop_assert!((p.x - o.x).hypot(p.y - o.y) < 1e-6);
                prop_assert!(p.yaw > -PI && p.yaw <= PI);
            }

            #[test]
            fn equal_wheels_keep_yaw(yaw in -PI..PI, s in -1.0..1.0f64) {
                let p = diffdrive_step(Pose::planar(0.0, 0.0, yaw), WheelSpeeds { left: s, right: s }, 0.1, 0.05).unwrap();
                prop_assert_eq!(p.yaw, normalize_angle(yaw));
            }

            #[test]
            fn opposite_wheels_keep_position(x in -5.0..5.0f64, y in -5.0..5.0f64, s in -1.0..1.0f64) {
                let p = diffdrive_step(Pose::planar(x, y, 0.2), WheelSpeeds { left: -s, right: s }, 0.1, 0.05).unwrap();
                prop_assert_eq!((p.x, p.y), (x, y));
            }

            #[test]
            fn aerial_speed_and_accel_bounded(
                vx in -3.0..3.0f64, vy in -3.0..3.0f64, vz in -3.0..3.0f64,
                cx in -1.0..1.0f64, cy in -1.0..1.0f64,
            ) {
                let class = RobotClass::aerial();
                let s = AerialState {
                    pose: Pose::new(1.0, 1.0, 1.0, 0.0),
                    velocity: VelocityCommand { vx: cx, vy: cy, vz: 0.0 },
                };
                let n = aerial_step(s, VelocityCommand { vx, vy, vz }, &class, SIM_DT).unwrap();
                prop_assert!(n.velocity.planar_norm() <= class.max_speed + 1e-9);
                let dv = ((n.velocity.vx - cx).powi(2) + (n.velocity.vy - cy).powi(2) + (n.velocity.vz).powi(2)).sqrt();
                prop_assert!(dv / SIM_DT <= class.max_accel + 1e-9);
                prop_assert!(n.pose.z >= 0.0);
                prop_assert!(n.pose.yaw > -PI && n.pose.yaw <= PI);
            }

            #[test]
            fn ground_wheels_bounded(vx in -5.0..5.0f64, vy in -5.0..5.0f64, yaw in -PI..PI) {
                for class in [RobotClass::tabletop(), RobotClass::human_scale()] {
                    let w = velocity_to_wheels(VelocityCommand::planar(vx, vy), Pose::planar(0.0, 0.0, yaw), &class).unwrap();
                    prop_assert!(w.left.abs() <= class.max_speed + 1e-9);
                    prop_assert!(w.right.abs() <= class.max_speed + 1e-9);
                }
            }
        }
    }
}
