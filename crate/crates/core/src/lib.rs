//! Deterministic simulator and libraries for staging robot swarm performances.
//!
//! - [`kinematics`]: motion models for tabletop, aerial and human-scale robots.
//! - [`behavior`]: swarm behavior primitives and their timed composition.
//! - [`gossip`]: single-topic gossip bus, packet codec and bandwidth accounting.
//! - [`localization`]: gray-code projection, UWB TDOA solving, anchor
//!   calibration and Kalman fusion.
//! - [`orchestrator`]: performance scripts, the fixed-step run loop, traces,
//!   figure export, the CLI and the live console server.

pub mod behavior;
pub mod kinematics;
pub mod gossip;
pub mod localization;
pub mod orchestrator;
pub mod cli;
