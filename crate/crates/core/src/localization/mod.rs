//! Localization stacks: projected gray-code decoding for tabletop robots,
//! UWB TDOA simulation and solving, anchor self-calibration, odometry/IMU/UWB
//! Kalman fusion with lidar altitude, and error reports against truth.

mod anchors;
pub mod calibration;
pub mod fusion;
pub mod graycode;
pub mod report;
pub mod tdoa;

pub use anchors::{Anchor, AnchorConstellation, Venue};
pub use calibration::{calibrate_anchors, calibrate_anchors_from, Calibration, CalibrationConfig};
pub use fusion::{
    altitude_from_lidar, check_covariance, kf_predict, kf_update_uwb, FusedEstimate, NoiseConfig,
    Odometry, UpdateOutcome, LIDAR_MAX_RANGE,
};
pub use graycode::{
    decode_projection, gray_decode, gray_encode, simulate_projection, Axis, GrayCode, GrayFrame,
    DEFAULT_CODE_WIDTH,
};
pub use report::{error_report, ErrorReport, Residual, TrackPoint, TrackRow, TrackSource};
pub use tdoa::{simulate_tdoa, solve_position_tdoa, TdoaFix, TdoaMeasurement, TdoaSolverConfig};

#[derive(Debug, thiserror::Error)]
pub enum LocError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("cell {cell} does not fit in {width} bits")]
    CellOutOfRange { cell: u32, width: u8 },
    #[error("tag is outside the projected area")]
    OutOfCoverage,
    #[error("unknown anchor {0}")]
    UnknownAnchor(u16),
    #[error("no fix after {iterations} iterations (condition {condition:.3e}): {reason}")]
    NoFix {
        reason: String,
        iterations: usize,
        condition: f64,
    },
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("contract violation: {0}")]
    ContractViolation(&'static str),
    #[error("estimate and truth tracks do not overlap in time")]
    NoOverlap,
    #[error("io: {0}")]
    Io(String),
    #[error("bad file format: {0}")]
    Format(String),
}
