//! Performance scripts: who is on stage, which programs they may run, and
//! the cue sheet.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LaunchGroup;
use crate::behavior::{library_program, program_digest, BehaviorProgram, LIBRARY_NAMES};
use crate::gossip::NetConfig;
use crate::kinematics::{ClassKind, RobotClass};
use crate::localization::{AnchorConstellation, NoiseConfig, DEFAULT_CODE_WIDTH};

pub const DEFAULT_MAX_NODES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpawnRegion {
    Rect {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Evenly spaced on a circle, facing counter-clockwise along it.
    Ring { cx: f64, cy: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmSpec {
    pub class: ClassKind,
    pub count: usize,
    /// Name of an entry in the program table.
    pub program: String,
    pub spawn: SpawnRegion,
    /// Overrides the class defaults (speed, acceleration, track, gain).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<RobotClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramRef {
    pub name: String,
    /// Program file, relative to the script. Library program when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum CueCommand {
    Launch {
        #[serde(default)]
        group: LaunchGroup,
    },
    Switch {
        program: String,
    },
    Stop,
    Marker {
        x: f64,
        y: f64,
    },
}

impl CueCommand {
    pub fn name(&self) -> &'static str {
        match self {
            CueCommand::Launch { .. } => "launch",
            CueCommand::Switch { .. } => "switch",
            CueCommand::Stop => "stop",
            CueCommand::Marker { .. } => "marker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    /// Seconds from the start; a cue without `at` is manual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(flatten)]
    pub command: CueCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Bytes sent to every robot of a launched group.
    pub blob_bytes: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            blob_bytes: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocConfig {
    pub sigma_tdoa: f64,
    pub lidar_sigma: f64,
    pub code_width: u8,
    /// Anchor file, relative to the script. The default 8-anchor layout
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
    pub noise: NoiseConfig,
    /// Feeds ground truth to the behaviors instead of fused estimates.
    pub behavior_uses_truth: bool,
    pub tag_height_ground: f64,
    pub cruise_altitude: f64,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self {
            sigma_tdoa: 0.15,
            lidar_sigma: 0.02,
            code_width: DEFAULT_CODE_WIDTH,
            anchors: None,
            noise: NoiseConfig::default(),
            behavior_uses_truth: false,
            tag_height_ground: 0.0,
            cruise_altitude: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceScript {
    pub name: String,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    #[serde(default = "default_stations")]
    pub stations: usize,
    #[serde(default)]
    pub markers: Vec<MarkerSpec>,
    pub swarms: Vec<SwarmSpec>,
    /// Program table; the index is the wire program id. Defaults to the
    /// built-in library.
    #[serde(default)]
    pub programs: Vec<ProgramRef>,
    #[serde(default)]
    pub cues: Vec<Cue>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub loc: LocConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
}

fn default_max_nodes() -> usize {
    DEFAULT_MAX_NODES
}

fn default_stations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot parse script: {0}")]
    Parse(String),
    #[error("invalid script:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ScriptError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        let reason = match e.kind() {
            std::io::ErrorKind::NotFound => "no such file".to_string(),
            _ => e.to_string(),
        };
        ScriptError::Io {
            path: path.display().to_string(),
            reason,
        }
    }
}

/// A script with its program table and anchors loaded and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScript {
    pub script: PerformanceScript,
    pub programs: Vec<BehaviorProgram>,
    pub anchors: AnchorConstellation,
}

impl ResolvedScript {
    pub fn program_id(&self, name: &str) -> Option<u8> {
        self.programs
            .iter()
            .position(|p| p.name == name)
            .map(|i| i as u8)
    }

    pub fn digests(&self) -> Vec<String> {
        self.programs.iter().map(program_digest).collect()
    }

    /// True when no cue carries a time, so every cue comes from an operator.
    pub fn is_manual(&self) -> bool {
        self.script.cues.iter().all(|c| c.at.is_none())
    }

    pub fn node_count(&self) -> usize {
        self.script.swarms.iter().map(|s| s.count).sum::<usize>()
            + self.script.markers.len()
            + self.script.stations
    }
}

impl PerformanceScript {
    pub fn from_toml_str(text: &str) -> Result<Self, ScriptError> {
        toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scripts always serialize")
    }

    /// Reads, parses and resolves a script file. Relative paths inside it are
    /// taken from the script's directory.
    pub fn load(path: &Path) -> Result<ResolvedScript, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::io(path, e))?;
        let script = Self::from_toml_str(&text)?;
        script.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(self, base: &Path) -> Result<ResolvedScript, ScriptError> {
        let mut errs = self.check();
        let push = |errs: &mut Vec<FieldError>, path: String, reason: String| {
            errs.push(FieldError { path, reason })
        };

        let mut programs = Vec::new();
        if self.programs.is_empty() {
            programs.extend(LIBRARY_NAMES.iter().filter_map(|n| library_program(n)));
        }
        for (i, r) in self.programs.iter().enumerate() {
            let loaded = match &r.file {
                Some(f) => BehaviorProgram::load(&base.join(f)).map_err(|e| e.to_string()),
                None => library_program(&r.name)
                    .ok_or_else(|| format!("`{}` is not a library program", r.name)),
            };
            match loaded {
                Ok(mut p) => {
                    p.name = r.name.clone();
                    programs.push(p);
                }
                Err(reason) => push(&mut errs, format!("programs[{i}]"), reason),
            }
        }
        if programs.len() > 256 {
            push(&mut errs, "programs".into(), "at most 256 programs fit the wire id".into());
        }
        let program_errs = errs.iter().any(|e| e.path.starts_with("programs"));
        let known = |name: &str| programs.iter().any(|p| p.name == name);
        for (i, s) in self.swarms.iter().enumerate() {
            if !known(&s.program) && !program_errs {
                push(
                    &mut errs,
                    format!("swarms[{i}].program"),
                    format!("unknown program `{}`", s.program),
                );
            }
        }
        for (i, c) in self.cues.iter().enumerate() {
            if let CueCommand::Switch { program } = &c.command {
                if !known(program) {
                    push(
                        &mut errs,
                        format!("cues[{i}].program"),
                        format!("unknown program `{program}`"),
                    );
                }
            }
        }

        let anchors = match &self.loc.anchors {
            None => AnchorConstellation::default_venue(),
            Some(p) => match AnchorConstellation::load(&base.join(p)) {
                Ok(c) => c,
                Err(e) => {
                    push(&mut errs, "loc.anchors".into(), e.to_string());
                    AnchorConstellation::default_venue()
                }
            },
        };
        if !errs.is_empty() {
            return Err(ScriptError::Invalid(errs));
        }
        Ok(ResolvedScript {
            script: self,
            programs,
            anchors,
        })
    }

    /// Checks that need nothing but the script itself.
    fn check(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut push = |path: String, reason: &str| {
            errs.push(FieldError {
                path,
                reason: reason.to_string(),
            })
        };
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            push("duration".into(), "must be finite and >= 0");
        }
        if self.swarms.is_empty() {
            push("swarms".into(), "at least one swarm is required");
        }
        if self.stations == 0 {
            push("stations".into(), "at least one ground station is required");
        }
        for (i, s) in self.swarms.iter().enumerate() {
            if s.count == 0 {
                push(format!("swarms[{i}].count"), "must be >= 1");
            }
            if let Some(l) = &s.limits {
                if l.kind != s.class {
                    push(format!("swarms[{i}].limits.kind"), "must match the swarm class");
                } else if let Err(e) = l.validate() {
                    push(format!("swarms[{i}].limits"), &e.to_string());
                }
            }
            match &s.spawn {
                SpawnRegion::Rect {
                    x_min,
                    x_max,
                    y_min,
                    y_max,
                } => {
                    if !(x_min <= x_max && y_min <= y_max) {
                        push(format!("swarms[{i}].spawn"), "min must not exceed max");
                    }
                }
                SpawnRegion::Ring { radius, .. } => {
                    if !(*radius >= 0.0) {
                        push(format!("swarms[{i}].spawn.radius"), "must be >= 0");
                    }
                }
            }
        }
        let nodes = self.swarms.iter().map(|s| s.count).sum::<usize>()
            + self.markers.len()
            + self.stations;
        if nodes > self.max_nodes {
            push(
                "max_nodes".into(),
                &format!("{nodes} nodes exceed the configured maximum of {}", self.max_nodes),
            );
        }
        if nodes > u16::MAX as usize {
            push("swarms".into(), "node ids must fit in 16 bits");
        }
        let mut last = f64::NEG_INFINITY;
        for (i, c) in self.cues.iter().enumerate() {
            if let Some(at) = c.at {
                if !(at >= 0.0 && at.is_finite()) {
                    push(format!("cues[{i}].at"), "must be finite and >= 0");
                } else if at < last {
                    push(format!("cues[{i}].at"), "cue times must be non-decreasing");
                } else {
                    last = at;
                }
            }
            if let CueCommand::Marker { .. } = c.command {
                if self.markers.is_empty() {
                    push(format!("cues[{i}]"), "marker cue without a marker node");
                }
            }
        }
        if let Err(e) = self.net.validate() {
            push("net".into(), &e.to_string());
        }
        if !(self.loc.sigma_tdoa >= 0.0 && self.loc.lidar_sigma >= 0.0) {
            push("loc".into(), "sigmas must be >= 0");
        }
        if self.loc.code_width == 0 || self.loc.code_width > 20 {
            push("loc.code_width".into(), "must be in 1..=20");
        }
        if self.loc.cruise_altitude < 0.0 {
            push("loc.cruise_altitude".into(), "must be >= 0");
        }
        errs
    }
}
