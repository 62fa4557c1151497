//! Run trace directories.
//!
//! ```text
//! <dir>/meta.json      run metadata, program digests, counters
//! <dir>/tracks.csv     t_s,x,y,z,yaw,source,robot
//! <dir>/bandwidth.csv  t_s,total_Bps,gossip_Bps,transfer_Bps,event
//! <dir>/events.csv     t_s,kind,node,detail
//! <dir>/phases.csv     t_s,robot,state,program,phase
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::script::PerformanceScript;
use super::sim::{RobotStatus, RunStats};
use crate::gossip::{write_bandwidth_csv, BandwidthSample};
use crate::kinematics::ClassKind;
use crate::localization::report::{read_track_csv, write_track_csv};
use crate::localization::TrackRow;

pub const TRACE_SCHEMA: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const TRACKS_FILE: &str = "tracks.csv";
pub const BANDWIDTH_FILE: &str = "bandwidth.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const PHASES_FILE: &str = "phases.csv";

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: malformed: {reason}")]
    Format { path: String, reason: String },
}

impl TraceError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        TraceError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    fn format(path: &Path, e: impl std::fmt::Display) -> Self {
        TraceError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramInfo {
    pub id: u8,
    pub name: String,
    /// SHA-256 of the canonical program text, hex.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotInfo {
    pub id: u16,
    pub class: ClassKind,
    pub program: String,
    pub program_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema: u32,
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub programs: Vec<ProgramInfo>,
    pub robots: Vec<RobotInfo>,
    pub markers: Vec<u16>,
    pub stations: Vec<u16>,
    pub stats: RunStats,
    pub script: PerformanceScript,
}

/// Cue, transfer and fault log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_s: f64,
    pub kind: String,
    pub node: u16,
    pub detail: String,
}

/// Written whenever a robot's status, program or phase changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub t_s: f64,
    pub robot: u16,
    pub state: RobotStatus,
    pub program: String,
    pub phase: usize,
}

/// One line of `bandwidth.csv` as read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub t_s: f64,
    #[serde(rename = "total_Bps")]
    pub total_bps: f64,
    #[serde(rename = "gossip_Bps")]
    pub gossip_bps: f64,
    #[serde(rename = "transfer_Bps")]
    pub transfer_bps: f64,
    pub event: String,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub meta: TraceMeta,
    pub tracks: Vec<TrackRow>,
    pub bandwidth: Vec<BandwidthSample>,
    pub events: Vec<EventRecord>,
    pub phases: Vec<PhaseRecord>,
}

fn create(path: &Path) -> Result<BufWriter<File>, TraceError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| TraceError::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_writer(create(path)?);
    if rows.is_empty() {
        w.write_record(header).map_err(|e| TraceError::io(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| TraceError::io(path, e))?;
    }
    w.flush().map_err(|e| TraceError::io(path, e))
}

impl RunTrace {
    pub fn write_dir(&self, dir: &Path) -> Result<(), TraceError> {
        std::fs::create_dir_all(dir).map_err(|e| TraceError::io(dir, e))?;
        let p = dir.join(META_FILE);
        serde_json::to_writer_pretty(create(&p)?, &self.meta).map_err(|e| TraceError::io(&p, e))?;
        let p = dir.join(TRACKS_FILE);
        write_track_csv(&self.tracks, create(&p)?).map_err(|e| TraceError::io(&p, e))?;
        let p = dir.join(BANDWIDTH_FILE);
        write_bandwidth_csv(&self.bandwidth, create(&p)?).map_err(|e| TraceError::io(&p, e))?;
        write_rows(
            &dir.join(EVENTS_FILE),
            &self.events,
            &["t_s", "kind", "node", "detail"],
        )?;
        write_rows(
            &dir.join(PHASES_FILE),
            &self.phases,
            &["t_s", "robot", "state", "program", "phase"],
        )
    }

    /// Byte-exact CSV of the tracks, convenient for comparing runs.
    pub fn tracks_csv(&self) -> String {
        let mut buf = Vec::new();
        write_track_csv(&self.tracks, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// A trace directory as found on disk. Channels whose file is absent are
/// `None`.
#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub dir: PathBuf,
    pub meta: Option<TraceMeta>,
    pub tracks: Option<Vec<TrackRow>>,
    pub bandwidth: Option<Vec<BandwidthRow>>,
    pub events: Option<Vec<EventRecord>>,
    pub phases: Option<Vec<PhaseRecord>>,
}

fn open(path: &Path) -> Result<Option<BufReader<File>>, TraceError> {
    match File::open(path) {
        Ok(f) => Ok(Some(BufReader::new(f))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(TraceError::io(path, e)),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<Vec<T>>, TraceError> {
    let Some(r) = open(path)? else {
        return Ok(None);
    };
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map(Some)
        .map_err(|e| TraceError::format(path, e))
}

impl LoadedTrace {
    pub fn read_dir(dir: &Path) -> Result<Self, TraceError> {
        if !dir.is_dir() {
            return Err(TraceError::io(dir, "no such trace directory"));
        }
        let p = dir.join(META_FILE);
        let meta = match open(&p)? {
            Some(r) => Some(serde_json::from_reader(r).map_err(|e| TraceError::format(&p, e))?),
            None => None,
        };
        let p = dir.join(TRACKS_FILE);
        let tracks = match open(&p)? {
            Some(r) => Some(read_track_csv(r).map_err(|e| TraceError::format(&p, e))?),
            None => None,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            tracks,
            bandwidth: read_rows(&dir.join(BANDWIDTH_FILE))?,
            events: read_rows(&dir.join(EVENTS_FILE))?,
            phases: read_rows(&dir.join(PHASES_FILE))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::TrackSource;

    fn sample() -> RunTrace {
        let script = PerformanceScript::from_toml_str(
            r#"
name = "t"
duration = 1.0
[[swarms]]
class = "tabletop"
count = 1
program = "still"
spawn = { kind = "ring", cx = 1.0, cy = 1.0, radius = 0.5 }
"#,
        )
        .unwrap();
        RunTrace {
            meta: TraceMeta {
                schema: TRACE_SCHEMA,
                name: "t".into(),
                seed: 4,
                dt: 0.05,
                duration: 1.0,
                programs: vec![ProgramInfo {
                    id: 0,
                    name: "still".into(),
                    digest: "ab".into(),
                }],
                robots: vec![RobotInfo {
                    id: 1,
                    class: ClassKind::Tabletop,
                    program: "still".into(),
                    program_digest: "ab".into(),
                }],
                markers: vec![],
                stations: vec![2],
                stats: RunStats::default(),
                script,
            },
            tracks: vec![TrackRow {
                t_s: 0.0,
                x: 1.5,
                y: 1.0,
                z: 0.0,
                yaw: 0.25,
                source: TrackSource::Truth,
                robot: 1,
            }],
            bandwidth: vec![],
            events: vec![EventRecord {
                t_s: 0.5,
                kind: "launch".into(),
                node: 2,
                detail: "group=all".into(),
            }],
            phases: vec![PhaseRecord {
                t_s: 0.0,
                robot: 1,
                state: RobotStatus::Idle,
                program: "still".into(),
                phase: 0,
            }],
        }
    }

    #[test]
    fn roundtrip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        t.write_dir(dir.path()).unwrap();
        let l = LoadedTrace::read_dir(dir.path()).unwrap();
        assert_eq!(l.meta.unwrap(), t.meta);
        assert_eq!(l.tracks.unwrap(), t.tracks);
        assert_eq!(l.events.unwrap(), t.events);
        assert_eq!(l.phases.unwrap(), t.phases);
        assert_eq!(l.bandwidth.unwrap(), vec![]);
        let header = std::fs::read_to_string(dir.path().join(PHASES_FILE)).unwrap();
        assert_eq!(header.lines().next().unwrap(), "t_s,robot,state,program,phase");
    }

    #[test]
    fn missing_channel_is_none() {
        let dir = tempfile::tempdir().unwrap();
        sample().write_dir(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(BANDWIDTH_FILE)).unwrap();
        let l = LoadedTrace::read_dir(dir.path()).unwrap();
        assert!(l.bandwidth.is_none());
        assert!(l.tracks.is_some());
    }

    #[test]
    fn missing_directory_is_an_error() {
        assert!(LoadedTrace::read_dir(Path::new("/nonexistent/trace")).is_err());
    }
}
