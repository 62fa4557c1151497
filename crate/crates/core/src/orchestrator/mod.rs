//! Performance scripts, the fixed-step run loop, trace files, plot-data
//! export and the live console server.

pub mod export;
pub mod script;
pub mod serve;
pub mod sim;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::kinematics::ClassKind;

pub use export::{replay_figure, ExportError, Figure};
pub use script::{
    Cue, CueCommand, FieldError, LocConfig, MarkerSpec, PerformanceScript, ProgramRef,
    ResolvedScript, ScriptError, SpawnRegion, SwarmSpec, TransferConfig,
};
pub use serve::{serve, ClientMessage, ServeHandle, ServerMessage, Snapshot, SOCKET_SCHEMA};
pub use sim::{run, PoseSource, RobotSnapshot, RobotStatus, RunStats, SimError, Simulation, SIM_RATE_HZ};
pub use trace::{EventRecord, LoadedTrace, PhaseRecord, RunTrace, TraceError, TraceMeta};

/// Which robots a Launch command addresses. The wire value is the `group`
/// byte of the command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchGroup {
    #[default]
    All,
    Tabletop,
    Aerial,
    HumanScale,
}

impl LaunchGroup {
    pub fn wire(self) -> u8 {
        match self {
            LaunchGroup::All => 0,
            LaunchGroup::Tabletop => 1,
            LaunchGroup::Aerial => 2,
            LaunchGroup::HumanScale => 3,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        Some(match b {
            0 => LaunchGroup::All,
            1 => LaunchGroup::Tabletop,
            2 => LaunchGroup::Aerial,
            3 => LaunchGroup::HumanScale,
            _ => return None,
        })
    }

    pub fn of_class(kind: ClassKind) -> Self {
        match kind {
            ClassKind::Tabletop => LaunchGroup::Tabletop,
            ClassKind::Aerial => LaunchGroup::Aerial,
            ClassKind::HumanScale => LaunchGroup::HumanScale,
        }
    }

    pub fn includes(self, kind: ClassKind) -> bool {
        self == LaunchGroup::All || self == Self::of_class(kind)
    }

    pub fn name(self) -> &'static str {
        match self {
            LaunchGroup::All => "all",
            LaunchGroup::Tabletop => "tabletop",
            LaunchGroup::Aerial => "aerial",
            LaunchGroup::HumanScale => "human_scale",
        }
    }
}
