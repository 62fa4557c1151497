//! Plot-ready data from a recorded trace: a series CSV, a cue-marker CSV and
//! a small JSON plot description per figure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::trace::{LoadedTrace, TraceError, BANDWIDTH_FILE, EVENTS_FILE, TRACKS_FILE};
use crate::localization::{error_report, TrackPoint, TrackRow, TrackSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    /// Network load over time with cue markers.
    Bandwidth,
    /// Truth, raw UWB and fused track of one robot.
    Uwb,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Bandwidth => "bandwidth",
            Figure::Uwb => "uwb",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace has no {0} channel")]
    MissingChannel(&'static str),
    #[error("{0}")]
    NoRobot(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExportError {
    ExportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Marker colour per cue kind.
pub fn cue_color(kind: &str) -> Option<&'static str> {
    match kind {
        "launch" => Some("red"),
        "switch" => Some("green"),
        "stop" => Some("purple"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CueMarker {
    pub t_s: f64,
    pub kind: String,
    pub color: &'static str,
}

#[derive(Debug, Serialize)]
struct PlotSpec<'a> {
    figure: &'a str,
    data: String,
    x: &'a str,
    y: Vec<&'a str>,
    y_label: &'a str,
    markers: &'a [CueMarker],
    #[serde(skip_serializing_if = "Option::is_none")]
    robot: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<UwbSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UwbSummary {
    pub samples: usize,
    pub rmse_uwb_xy: f64,
    pub rmse_fused_xy: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ExportError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn write_markers(path: &Path, markers: &[CueMarker]) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["t_s", "kind", "color"]).map_err(|e| io_err(path, e))?;
    for m in markers {
        w.write_record([format!("{:.3}", m.t_s), m.kind.clone(), m.color.to_string()])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_plot(path: &Path, spec: &PlotSpec) -> Result<(), ExportError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), spec).map_err(|e| io_err(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Writes `<figure>_series.csv`, `<figure>_events.csv` and
/// `<figure>_plot.json` into `out_dir` and returns their paths.
pub fn replay_figure(
    trace_dir: &Path,
    figure: Figure,
    out_dir: &Path,
    robot: Option<u16>,
) -> Result<Vec<PathBuf>, ExportError> {
    let trace = LoadedTrace::read_dir(trace_dir)?;
    let events = trace.events.as_ref().ok_or(ExportError::MissingChannel(EVENTS_FILE))?;
    let markers: Vec<CueMarker> = events
        .iter()
        .filter_map(|e| {
            cue_color(&e.kind).map(|color| CueMarker {
                t_s: e.t_s,
                kind: e.kind.clone(),
                color,
            })
        })
        .collect();

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let name = figure.name();
    let series = out_dir.join(format!("{name}_series.csv"));
    let events_out = out_dir.join(format!("{name}_events.csv"));
    let plot = out_dir.join(format!("{name}_plot.json"));
    let data = series
        .file_name()
        .expect("file name")
        .to_string_lossy()
        .into_owned();

    match figure {
        Figure::Bandwidth => {
            let rows = trace
                .bandwidth
                .as_ref()
                .ok_or(ExportError::MissingChannel(BANDWIDTH_FILE))?;
            let mut w = csv_writer(&series)?;
            w.write_record(["t_s", "total_Bps", "gossip_Bps", "transfer_Bps"])
                .map_err(|e| io_err(&series, e))?;
            for r in rows {
                w.write_record([
                    format!("{:.3}", r.t_s),
                    format!("{:.3}", r.total_bps),
                    format!("{:.3}", r.gossip_bps),
                    format!("{:.3}", r.transfer_bps),
                ])
                .map_err(|e| io_err(&series, e))?;
            }
            w.flush().map_err(|e| io_err(&series, e))?;
            write_markers(&events_out, &markers)?;
            write_plot(
                &plot,
                &PlotSpec {
                    figure: name,
                    data,
                    x: "t_s",
                    y: vec!["total_Bps", "gossip_Bps", "transfer_Bps"],
                    y_label: "bytes/s",
                    markers: &markers,
                    robot: None,
                    summary: None,
                },
            )?;
        }
        Figure::Uwb => {
            let tracks = trace.tracks.as_ref().ok_or(ExportError::MissingChannel(TRACKS_FILE))?;
            let id = match robot {
                Some(id) => id,
                None => tracks
                    .iter()
                    .find(|r| r.source == TrackSource::UwbRaw)
                    .map(|r| r.robot)
                    .ok_or_else(|| ExportError::NoRobot("trace has no UWB fixes".into()))?,
            };
            let (summary, rows) = uwb_series(tracks, id)?;
            let mut w = csv_writer(&series)?;
            w.write_record([
                "t_s", "truth_x", "truth_y", "truth_z", "uwb_x", "uwb_y", "fused_x", "fused_y",
                "fused_z",
            ])
            .map_err(|e| io_err(&series, e))?;
            for (t, truth, uwb, fused) in rows {
                w.write_record([
                    format!("{t:.3}"),
                    format!("{:.4}", truth.x),
                    format!("{:.4}", truth.y),
                    format!("{:.4}", truth.z),
                    fmt_opt(uwb.map(|p| p.x)),
                    fmt_opt(uwb.map(|p| p.y)),
                    fmt_opt(fused.map(|p| p.x)),
                    fmt_opt(fused.map(|p| p.y)),
                    fmt_opt(fused.map(|p| p.z)),
                ])
                .map_err(|e| io_err(&series, e))?;
            }
            w.flush().map_err(|e| io_err(&series, e))?;
            write_markers(&events_out, &markers)?;
            write_plot(
                &plot,
                &PlotSpec {
                    figure: name,
                    data,
                    x: "t_s",
                    y: vec!["truth_x", "uwb_x", "fused_x", "truth_y", "uwb_y", "fused_y"],
                    y_label: "m",
                    markers: &markers,
                    robot: Some(id),
                    summary: Some(summary),
                },
            )?;
        }
    }
    Ok(vec![series, events_out, plot])
}

type UwbRow = (f64, TrackPoint, Option<TrackPoint>, Option<TrackPoint>);

/// Per-truth-sample alignment of the raw and fused tracks of one robot, with
/// planar RMSE of each against truth.
pub fn uwb_series(tracks: &[TrackRow], robot: u16) -> Result<(UwbSummary, Vec<UwbRow>), ExportError> {
    let of = |src: TrackSource| -> BTreeMap<i64, TrackPoint> {
        tracks
            .iter()
            .filter(|r| r.robot == robot && r.source == src)
            .map(|r| ((r.t_s * 1000.0).round() as i64, r.point()))
            .collect()
    };
    let truth = of(TrackSource::Truth);
    if truth.is_empty() {
        return Err(ExportError::NoRobot(format!("no truth track for robot {robot}")));
    }
    let uwb = of(TrackSource::UwbRaw);
    let fused = of(TrackSource::Fused);
    let truth_pts: Vec<TrackPoint> = truth.values().copied().collect();
    let rmse = |m: &BTreeMap<i64, TrackPoint>| {
        let pts: Vec<TrackPoint> = m.values().copied().collect();
        error_report(&pts, &truth_pts).map(|r| r.rmse_xy()).unwrap_or(f64::NAN)
    };
    let summary = UwbSummary {
        samples: uwb.len(),
        rmse_uwb_xy: rmse(&uwb),
        rmse_fused_xy: rmse(&fused),
    };
    let rows = truth
        .iter()
        .map(|(k, p)| (p.t, *p, uwb.get(k).copied(), fused.get(k).copied()))
        .collect();
    Ok((summary, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, x: f64, source: TrackSource) -> TrackRow {
        TrackRow {
            t_s: t,
            x,
            y: 0.0,
            z: 0.0,
            yaw: 0.0,
            source,
            robot: 1,
        }
    }

    #[test]
    fn cue_colours() {
        assert_eq!(cue_color("launch"), Some("red"));
        assert_eq!(cue_color("switch"), Some("green"));
        assert_eq!(cue_color("stop"), Some("purple"));
        assert_eq!(cue_color("transfer_done"), None);
    }

    #[test]
    fn uwb_alignment_and_rmse() {
        let mut tracks = Vec::new();
        for k in 0..10 {
            let t = k as f64 * 0.05;
            tracks.push(row(t, 1.0, TrackSource::Truth));
            if k % 2 == 0 {
                tracks.push(row(t, 1.2, TrackSource::UwbRaw));
            }
            tracks.push(row(t, 1.1, TrackSource::Fused));
        }
        let (s, rows) = uwb_series(&tracks, 1).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(s.samples, 5);
        assert!((s.rmse_uwb_xy - 0.2).abs() < 1e-9);
        assert!((s.rmse_fused_xy - 0.1).abs() < 1e-9);
        assert!(rows[1].2.is_none() && rows[1].3.is_some());
        assert!(uwb_series(&tracks, 9).is_err());
    }
}
