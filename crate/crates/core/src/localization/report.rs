use std::io::Write;

use serde::{Deserialize, Serialize};

use super::LocError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackSource {
    Truth,
    UwbRaw,
    /// Decoded projector cell (tabletop robots).
    GrayRaw,
    Fused,
}

impl TrackSource {
    pub fn name(self) -> &'static str {
        match self {
            TrackSource::Truth => "truth",
            TrackSource::UwbRaw => "uwb_raw",
            TrackSource::GrayRaw => "gray_raw",
            TrackSource::Fused => "fused",
        }
    }
}

/// One line of a track CSV: `t_s,x,y,z,yaw,source,robot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub source: TrackSource,
    pub robot: u16,
}

impl TrackRow {
    pub fn point(&self) -> TrackPoint {
        TrackPoint {
            t: self.t_s,
            x: self.x,
            y: self.y,
            z: self.z,
            yaw: self.yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Residual {
    pub fn norm(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dz * self.dz).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rmse: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
    pub max_error: f64,
    pub residuals: Vec<Residual>,
}

impl ErrorReport {
    pub fn rmse_xy(&self) -> f64 {
        (self.rmse_x * self.rmse_x + self.rmse_y * self.rmse_y).sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "dx", "dy", "dz", "error"])?;
        for r in &self.residuals {
            w.write_record([
                format!("{:.3}", r.t),
                format!("{:.6}", r.dx),
                format!("{:.6}", r.dy),
                format!("{:.6}", r.dz),
                format!("{:.6}", r.norm()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn interpolate(truth: &[TrackPoint], t: f64) -> Option<(f64, f64, f64)> {
    let k = truth.partition_point(|p| p.t < t);
    if k < truth.len() && truth[k].t == t {
        let p = truth[k];
        return Some((p.x, p.y, p.z));
    }
    if k == 0 || k == truth.len() {
        return None;
    }
    let (a, b) = (truth[k - 1], truth[k]);
    let s = (t - a.t) / (b.t - a.t);
    Some((
        a.x + s * (b.x - a.x),
        a.y + s * (b.y - a.y),
        a.z + s * (b.z - a.z),
    ))
}

/// Residuals at each estimate time inside the truth span, with truth
/// linearly interpolated. Estimates outside that span are ignored.
pub fn error_report(estimated: &[TrackPoint], truth: &[TrackPoint]) -> Result<ErrorReport, LocError> {
    if truth.windows(2).any(|w| !(w[0].t < w[1].t)) {
        return Err(LocError::InvalidInput("truth timestamps must be strictly increasing"));
    }
    let residuals: Vec<Residual> = estimated
        .iter()
        .filter_map(|e| {
            interpolate(truth, e.t).map(|(x, y, z)| Residual {
                t: e.t,
                dx: e.x - x,
                dy: e.y - y,
                dz: e.z - z,
            })
        })
        .collect();
    if residuals.is_empty() {
        return Err(LocError::NoOverlap);
    }
    let n = residuals.len() as f64;
    let ms = |f: fn(&Residual) -> f64| (residuals.iter().map(|r| f(r).powi(2)).sum::<f64>() / n).sqrt();
    let rmse_x = ms(|r| r.dx);
    let rmse_y = ms(|r| r.dy);
    let rmse_z = ms(|r| r.dz);
    Ok(ErrorReport {
        rmse: (rmse_x * rmse_x + rmse_y * rmse_y + rmse_z * rmse_z).sqrt(),
        rmse_x,
        rmse_y,
        rmse_z,
        max_error: residuals.iter().map(Residual::norm).fold(0.0, f64::max),
        residuals,
    })
}

pub fn write_track_csv<W: Write>(rows: &[TrackRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "x", "y", "z", "yaw", "source", "robot"])?;
    for r in rows {
        w.write_record([
            format!("{:.3}", r.t_s),
            format!("{:.4}", r.x),
            format!("{:.4}", r.y),
            format!("{:.4}", r.z),
            format!("{:.4}", r.yaw),
            r.source.name().to_string(),
            r.robot.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_track_csv<R: std::io::Read>(input: R) -> Result<Vec<TrackRow>, LocError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| LocError::Format(e.to_string())))
        .collect()
}
