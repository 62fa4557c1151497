use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bus::{Bus, CueKind, NodeRole, TrafficKind, TxRecord};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoleBreakdown {
    pub robot: f64,
    pub marker: f64,
    pub ground_station: f64,
}

/// Windowed wire load. `t` is the window start (s); rates are bytes/s and
/// include the 5-byte header of every packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSample {
    pub t: f64,
    pub bytes_per_s: f64,
    /// Topic traffic: gossip plus commands.
    pub gossip_bps: f64,
    pub transfer_bps: f64,
    pub by_role: RoleBreakdown,
    pub events: Vec<CueKind>,
}

impl BandwidthSample {
    pub fn event_label(&self) -> String {
        self.events
            .iter()
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Buckets packet records into fixed windows covering `[0, end)`.
pub fn bandwidth_samples(
    log: &[TxRecord],
    cues: &[(f64, CueKind)],
    window: f64,
    end: f64,
) -> Vec<BandwidthSample> {
    assert!(window > 0.0, "window must be > 0");
    let n = if end > 0.0 {
        (end / window).ceil() as usize
    } else {
        0
    };
    let mut out: Vec<BandwidthSample> = (0..n)
        .map(|k| BandwidthSample {
            t: k as f64 * window,
            bytes_per_s: 0.0,
            gossip_bps: 0.0,
            transfer_bps: 0.0,
            by_role: RoleBreakdown::default(),
            events: Vec::new(),
        })
        .collect();
    let bucket = |t: f64| -> Option<usize> {
        let k = (t / window).floor();
        (k >= 0.0 && (k as usize) < n).then_some(k as usize)
    };

    for rec in log {
        let Some(k) = bucket(rec.t) else { continue };
        let rate = rec.bytes as f64 / window;
        let s = &mut out[k];
        s.bytes_per_s += rate;
        match rec.kind {
            TrafficKind::Transfer => s.transfer_bps += rate,
            TrafficKind::Gossip | TrafficKind::Command => s.gossip_bps += rate,
        }
        match rec.role {
            NodeRole::Robot => s.by_role.robot += rate,
            NodeRole::Marker => s.by_role.marker += rate,
            NodeRole::GroundStation => s.by_role.ground_station += rate,
        }
    }
    for (t, cue) in cues {
        if let Some(k) = bucket(*t) {
            out[k].events.push(*cue);
        }
    }
    out
}

/// Samples everything the bus has carried up to its current time.
pub fn record_bandwidth(bus: &Bus, window: f64) -> Vec<BandwidthSample> {
    bandwidth_samples(bus.tx_log(), bus.cue_marks(), window, bus.now())
}

/// CSV with columns `t_s,total_Bps,gossip_Bps,transfer_Bps,event`.
pub fn write_bandwidth_csv<W: Write>(samples: &[BandwidthSample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "total_Bps", "gossip_Bps", "transfer_Bps", "event"])?;
    for s in samples {
        w.write_record([
            format!("{:.3}", s.t),
            format!("{:.3}", s.bytes_per_s),
            format!("{:.3}", s.gossip_bps),
            format!("{:.3}", s.transfer_bps),
            s.event_label(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
