//! The fixed-step performance loop. Each 20 Hz tick runs, per robot:
//! sense → gossip in → behavior → clamp → kinematics → gossip out, with
//! cues injected at their times.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix5, Vector2, Vector3, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::script::{CueCommand, ResolvedScript, SpawnRegion};
use super::trace::{EventRecord, PhaseRecord, ProgramInfo, RobotInfo, RunTrace, TraceMeta, TRACE_SCHEMA};
use super::LaunchGroup;
use crate::behavior::{clamp_command, step_behavior, NeighborTable, PeerRecord, SelfState, STALENESS_WINDOW};
use crate::gossip::{
    bandwidth_samples, decode, encode, record_bandwidth, BandwidthSample, Bus, BusError, BusEvent, CodecError,
    CommandKind, CommandMessage, GossipMessage, Message, NodeId, NodeRole, Reliability,
    TxRecord, GOSSIP_TOPIC,
};
use crate::kinematics::{
    aerial_step, diffdrive_step, normalize_angle, velocity_to_wheels, AerialState, ClassKind,
    KinematicsError, Pose, RobotClass, VelocityCommand,
};
use crate::localization::graycode::cell_pitch;
use crate::localization::{
    altitude_from_lidar, decode_projection, kf_predict, kf_update_uwb, simulate_projection,
    simulate_tdoa, solve_position_tdoa, FusedEstimate, LocError, Odometry, TrackRow, TrackSource,
    UpdateOutcome,
};

pub const SIM_RATE_HZ: f64 = 20.0;
const DT: f64 = 1.0 / SIM_RATE_HZ;
pub const BANDWIDTH_WINDOW: f64 = 1.0;

const CLIMB_GAIN: f64 = 1.0;
const MAX_CLIMB: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("network: {0}")]
    Bus(#[from] BusError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("kinematics: {0}")]
    Kinematics(#[from] KinematicsError),
    #[error("localization: {0}")]
    Loc(#[from] LocError),
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("the script has no marker node")]
    NoMarker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotStatus {
    Idle,
    Active,
    Stopped,
}

/// Where the pose handed to a behavior came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    Fused,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: u64,
    pub fixes: u64,
    pub no_fix: u64,
    pub gated: u64,
    pub skipped_updates: u64,
    pub behavior_inputs_fused: u64,
    pub behavior_inputs_truth: u64,
    pub decode_errors: u64,
    pub rejected_commands: u64,
    pub packets_published: u64,
    pub packets_delivered: u64,
    pub packets_lost: u64,
    pub wire_bytes: u64,
}

/// What a console sees of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSnapshot {
    pub id: u16,
    pub class: ClassKind,
    pub pose: Pose,
    pub estimate: Pose,
    pub status: RobotStatus,
    pub program: String,
    pub phase: usize,
    pub commanded_speed: f64,
}

struct Robot {
    id: u16,
    index: usize,
    class: RobotClass,
    truth: Pose,
    velocity: VelocityCommand,
    est: FusedEstimate,
    z_est: f64,
    last_fix: Option<Vector2<f64>>,
    table: NeighborTable,
    status: RobotStatus,
    program: u8,
    program_start: f64,
    phase: usize,
    cue_error: bool,
    next_gossip: f64,
    seq: u32,
    last_cmd: VelocityCommand,
    rng: ChaCha8Rng,
}

impl Robot {
    fn belief(&self) -> Pose {
        Pose {
            x: self.est.state[0],
            y: self.est.state[1],
            z: self.z_est,
            yaw: self.est.yaw(),
        }
    }
}

struct MarkerNode {
    id: u16,
    position: Vector2<f64>,
    next_beacon: f64,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma > 0").sample(rng)
    } else {
        0.0
    }
}

pub struct Simulation {
    resolved: ResolvedScript,
    seed: u64,
    bus: Bus,
    robots: Vec<Robot>,
    markers: Vec<MarkerNode>,
    stations: Vec<u16>,
    step: u64,
    timed: Vec<(f64, CueCommand)>,
    cue_cursor: usize,
    cmd_seq: u32,
    bus_events_seen: usize,
    period: f64,
    events: Vec<EventRecord>,
    tracks: Vec<TrackRow>,
    phases: Vec<PhaseRecord>,
    stats: RunStats,
    record_tracks: bool,
}

impl Simulation {
    pub fn new(resolved: ResolvedScript, seed: u64) -> Result<Self, SimError> {
        let script = &resolved.script;
        let mut net = script.net.clone();
        net.seed = seed;
        let period = net.gossip_period_ms / 1000.0;
        let mut bus = Bus::new(net)?;

        let mut spawn_rng = ChaCha8Rng::seed_from_u64(seed);
        spawn_rng.set_stream(1);
        let p0 = Matrix5::from_diagonal(&Vector5::new(0.01, 0.01, 0.0, 0.0, 0.0025));

        let mut robots = Vec::new();
        let mut next_id: u16 = 1;
        for swarm in &script.swarms {
            let class = swarm.limits.unwrap_or_else(|| RobotClass::default_for(swarm.class));
            let program = resolved
                .program_id(&swarm.program)
                .ok_or_else(|| SimError::UnknownProgram(swarm.program.clone()))?;
            for k in 0..swarm.count {
                let (x, y, yaw) = match swarm.spawn {
                    SpawnRegion::Rect {
                        x_min,
                        x_max,
                        y_min,
                        y_max,
                    } => (
                        x_min + (x_max - x_min) * spawn_rng.random::<f64>(),
                        y_min + (y_max - y_min) * spawn_rng.random::<f64>(),
                        spawn_rng.random_range(-PI..PI),
                    ),
                    SpawnRegion::Ring { cx, cy, radius } => {
                        let a = 2.0 * PI * k as f64 / swarm.count as f64;
                        (cx + radius * a.cos(), cy + radius * a.sin(), a + 0.5 * PI)
                    }
                };
                let id = next_id;
                next_id += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1000 + id as u64);
                let est = FusedEstimate::new(
                    x + gauss(&mut rng, 0.1),
                    y + gauss(&mut rng, 0.1),
                    yaw + gauss(&mut rng, 0.05),
                    p0,
                    0.0,
                );
                robots.push(Robot {
                    id,
                    index: robots.len(),
                    class,
                    truth: Pose::new(x, y, 0.0, yaw),
                    velocity: VelocityCommand::ZERO,
                    est,
                    z_est: 0.0,
                    last_fix: None,
                    table: NeighborTable::new(),
                    status: RobotStatus::Idle,
                    program,
                    program_start: 0.0,
                    phase: 0,
                    cue_error: false,
                    next_gossip: f64::INFINITY,
                    seq: 0,
                    last_cmd: VelocityCommand::ZERO,
                    rng,
                });
            }
        }
        let mut markers = Vec::new();
        for m in &script.markers {
            markers.push(MarkerNode {
                id: next_id,
                position: Vector2::new(m.x, m.y),
                next_beacon: 0.0,
            });
            next_id += 1;
        }
        let stations: Vec<u16> = (0..script.stations as u16).map(|k| next_id + k).collect();

        for r in &robots {
            bus.join(NodeId::new(r.id, NodeRole::Robot))?;
            bus.subscribe(r.id, GOSSIP_TOPIC)?;
        }
        for m in &markers {
            bus.join(NodeId::new(m.id, NodeRole::Marker))?;
        }
        for &s in &stations {
            bus.join(NodeId::new(s, NodeRole::GroundStation))?;
        }

        let mut timed: Vec<(f64, CueCommand)> = resolved
            .script
            .cues
            .iter()
            .filter_map(|c| c.at.map(|at| (at, c.command.clone())))
            .collect();
        timed.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut sim = Self {
            resolved,
            timed,
            seed,
            bus,
            robots,
            markers,
            stations,
            step: 0,
            cue_cursor: 0,
            cmd_seq: 0,
            bus_events_seen: 0,
            period,
            events: Vec::new(),
            tracks: Vec::new(),
            phases: Vec::new(),
            stats: RunStats::default(),
            record_tracks: true,
        };
        for i in 0..sim.robots.len() {
            sim.record_phase(i);
        }
        Ok(sim)
    }

    /// Turns off per-step trajectory recording (long live sessions).
    pub fn set_record_tracks(&mut self, on: bool) {
        self.record_tracks = on;
    }

    pub fn now(&self) -> f64 {
        self.step as f64 / SIM_RATE_HZ
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn script(&self) -> &ResolvedScript {
        &self.resolved
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn stats(&self) -> RunStats {
        let mut s = self.stats;
        let b = self.bus.stats();
        s.packets_published = b.published;
        s.packets_delivered = b.delivered;
        s.packets_lost = b.dropped_loss;
        s.wire_bytes = b.wire_bytes;
        s
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn marker_position(&self) -> Option<Vector2<f64>> {
        self.markers.first().map(|m| m.position)
    }

    /// Robots' latest marker knowledge, by robot id.
    pub fn marker_seen_by(&self, robot: u16) -> Option<Vector2<f64>> {
        let r = self.robots.iter().find(|r| r.id == robot)?;
        r.table
            .view(r.id, Vector2::zeros(), self.now(), STALENESS_WINDOW)
            .marker
            .map(|m| m.position)
    }

    pub fn robots(&self) -> Vec<RobotSnapshot> {
        self.robots
            .iter()
            .map(|r| RobotSnapshot {
                id: r.id,
                class: r.class.kind,
                pose: r.truth,
                estimate: r.belief(),
                status: r.status,
                program: self.resolved.programs[r.program as usize].name.clone(),
                phase: r.phase,
                commanded_speed: r.last_cmd.planar_norm(),
            })
            .collect()
    }

    /// Sends an operator or scripted cue from the issuing node. Launches also
    /// start the software transfer to every addressed robot.
    pub fn issue(&mut self, cmd: &CueCommand) -> Result<(), SimError> {
        let t = self.now();
        self.bus.advance_to(t);
        let station = self.stations[0];
        let (issuer, kind, detail) = match cmd {
            CueCommand::Launch { group } => (
                station,
                CommandKind::Launch { group: group.wire() },
                format!("group={}", group.name()),
            ),
            CueCommand::Switch { program } => {
                let id = self
                    .resolved
                    .program_id(program)
                    .ok_or_else(|| SimError::UnknownProgram(program.clone()))?;
                (
                    station,
                    CommandKind::Switch { program_id: id },
                    format!("program={program}"),
                )
            }
            CueCommand::Stop => (station, CommandKind::Stop, String::new()),
            CueCommand::Marker { x, y } => {
                let m = self.markers.first_mut().ok_or(SimError::NoMarker)?;
                let p = self.resolved.anchors.venue.clamp(Vector2::new(*x, *y));
                m.position = p;
                m.next_beacon = t + self.period;
                (
                    m.id,
                    CommandKind::marker_pose(p.x, p.y),
                    format!("x={:.3} y={:.3}", p.x, p.y),
                )
            }
        };
        self.publish_command(issuer, kind)?;
        self.events.push(EventRecord {
            t_s: t,
            kind: cmd.name().to_string(),
            node: issuer,
            detail,
        });
        if let CueCommand::Launch { group } = cmd {
            let blob = self.resolved.script.transfer.blob_bytes;
            let targets: Vec<u16> = self
                .robots
                .iter()
                .filter(|r| group.includes(r.class.kind))
                .map(|r| r.id)
                .collect();
            for (k, id) in targets.into_iter().enumerate() {
                let st = self.stations[k % self.stations.len()];
                self.bus.launch_transfer(st, id, blob)?;
            }
            self.collect_bus_events();
        }
        Ok(())
    }

    fn publish_command(&mut self, issuer: u16, kind: CommandKind) -> Result<(), SimError> {
        self.cmd_seq = self.cmd_seq.wrapping_add(1);
        let packet = encode(&Message::Command(CommandMessage {
            issuer,
            seq: self.cmd_seq,
            kind,
        }))?;
        self.bus
            .publish(GOSSIP_TOPIC, issuer, packet, Reliability::Reliable)?;
        Ok(())
    }

    fn collect_bus_events(&mut self) {
        let new = &self.bus.events()[self.bus_events_seen..];
        for e in new {
            let rec = match *e {
                BusEvent::TransferStarted {
                    station,
                    robot,
                    bytes,
                    t,
                    ..
                } => EventRecord {
                    t_s: t,
                    kind: "transfer_start".into(),
                    node: station,
                    detail: format!("robot={robot} bytes={bytes}"),
                },
                BusEvent::TransferCompleted {
                    robot, packets, t, ..
                } => EventRecord {
                    t_s: t,
                    kind: "transfer_done".into(),
                    node: robot,
                    detail: format!("packets={packets}"),
                },
                BusEvent::TransferAborted { robot, t, .. } => EventRecord {
                    t_s: t,
                    kind: "transfer_aborted".into(),
                    node: robot,
                    detail: String::new(),
                },
                BusEvent::PublishAfterLeave { node, t } => EventRecord {
                    t_s: t,
                    kind: "publish_after_leave".into(),
                    node,
                    detail: String::new(),
                },
            };
            self.events.push(rec);
        }
        self.bus_events_seen = self.bus.events().len();
    }

    /// Advances the whole performance by one tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.now();
        self.bus.advance_to(t);
        while let Some((at, cue)) = self.timed.get(self.cue_cursor) {
            if *at > t {
                break;
            }
            let c = cue.clone();
            self.cue_cursor += 1;
            self.issue(&c)?;
        }
        for k in 0..self.markers.len() {
            if t >= self.markers[k].next_beacon {
                let (id, p) = (self.markers[k].id, self.markers[k].position);
                self.publish_command(id, CommandKind::marker_pose(p.x, p.y))?;
                let m = &mut self.markers[k];
                while m.next_beacon <= t {
                    m.next_beacon += self.period;
                }
            }
        }
        self.collect_bus_events();

        for i in 0..self.robots.len() {
            self.sense(i)?;
            self.receive(i);
            let cmd = self.decide(i);
            self.record_phase(i);
            if self.record_tracks {
                self.record_track(i);
            }
            self.gossip_out(i)?;
            self.actuate(i, cmd)?;
        }
        self.step += 1;
        self.stats.steps = self.step;
        Ok(())
    }

    fn sense(&mut self, i: usize) -> Result<(), SimError> {
        let loc = &self.resolved.script.loc;
        let anchors = &self.resolved.anchors;
        let venue = anchors.venue;
        let r = &mut self.robots[i];
        let truth = r.truth;

        let fix = match r.class.kind {
            ClassKind::Tabletop => {
                let frames = simulate_projection(Vector2::new(truth.x, truth.y), &venue, loc.code_width);
                match frames.and_then(|f| decode_projection(&f, &venue, loc.code_width)) {
                    Ok(p) => {
                        let (px, py) = cell_pitch(&venue, loc.code_width);
                        Some((p, Matrix2::new(px * px / 12.0, 0.0, 0.0, py * py / 12.0)))
                    }
                    Err(LocError::OutOfCoverage) => None,
                    Err(e) => return Err(e.into()),
                }
            }
            kind => {
                let aerial = kind == ClassKind::Aerial;
                if aerial {
                    let range = (truth.z + gauss(&mut r.rng, loc.lidar_sigma)).max(0.0);
                    if let Some(z) = altitude_from_lidar(range, 0.0, 0.0)? {
                        r.z_est = z;
                    }
                }
                let (z_true, z_known) = if aerial {
                    (truth.z, r.z_est)
                } else {
                    (loc.tag_height_ground, loc.tag_height_ground)
                };
                let tag = Vector3::new(truth.x, truth.y, z_true);
                let mut meas = Vec::with_capacity(anchors.anchors.len());
                for pair in anchors.ring_pairs() {
                    meas.push(simulate_tdoa(anchors, pair, tag, loc.sigma_tdoa, &mut r.rng)?);
                }
                let guess = if venue.contains(r.est.position()) {
                    r.est.position()
                } else {
                    venue.center()
                };
                match solve_position_tdoa(anchors, &meas, guess, z_known) {
                    Ok(f) => Some((f.position, f.covariance)),
                    Err(LocError::NoFix { .. }) => None,
                    Err(e) => return Err(e.into()),
                }
            }
        };

        r.last_fix = fix.map(|f| f.0);
        match fix {
            None => self.stats.no_fix += 1,
            Some((p, cov)) => {
                self.stats.fixes += 1;
                let (est, outcome) = kf_update_uwb(&r.est, p, &cov, loc.noise.gate_sigma)?;
                r.est = est;
                match outcome {
                    UpdateOutcome::Applied { .. } => {}
                    UpdateOutcome::Gated { .. } => self.stats.gated += 1,
                    UpdateOutcome::Skipped => self.stats.skipped_updates += 1,
                }
            }
        }
        Ok(())
    }

    fn receive(&mut self, i: usize) {
        let t = self.now();
        let id = self.robots[i].id;
        for d in self.bus.drain(id) {
            let role = self.bus.role_of(d.from);
            match decode(d.packet.as_bytes()) {
                Ok(Message::Gossip(g)) if role == Some(NodeRole::Robot) => {
                    let p = g.pose();
                    let (vx, vy) = g.velocity();
                    self.robots[i].table.record_peer(
                        g.sender,
                        PeerRecord {
                            position: Vector2::new(p.x, p.y),
                            velocity: Vector2::new(vx, vy),
                            phase: g.phase,
                            heard_at: t,
                        },
                    );
                }
                Ok(Message::Command(c)) => {
                    let allowed = match c.kind {
                        CommandKind::MarkerPose { .. } => role == Some(NodeRole::Marker),
                        _ => role == Some(NodeRole::GroundStation),
                    };
                    if allowed {
                        self.apply_command(i, c.kind);
                    } else {
                        self.stats.rejected_commands += 1;
                    }
                }
                Ok(_) => {}
                Err(_) => self.stats.decode_errors += 1,
            }
        }
    }

    fn apply_command(&mut self, i: usize, kind: CommandKind) {
        let t = self.now();
        let period = self.period;
        let n_programs = self.resolved.programs.len();
        let r = &mut self.robots[i];
        match kind {
            CommandKind::Launch { group } => {
                if LaunchGroup::from_wire(group).is_some_and(|g| g.includes(r.class.kind)) {
                    r.status = RobotStatus::Active;
                    r.program_start = t;
                    let slots = (period * SIM_RATE_HZ).round().max(1.0) as usize;
                    r.next_gossip = t + (r.index % slots) as f64 * DT;
                }
            }
            CommandKind::Switch { program_id } => {
                if (program_id as usize) < n_programs {
                    r.program = program_id;
                    r.program_start = t;
                }
            }
            CommandKind::Stop => {
                r.status = RobotStatus::Stopped;
                r.next_gossip = f64::INFINITY;
            }
            CommandKind::MarkerPose { x_mm, y_mm } => {
                r.table
                    .record_marker(Vector2::new(x_mm as f64, y_mm as f64) / 1000.0, t);
            }
        }
    }

    fn decide(&mut self, i: usize) -> VelocityCommand {
        let t = self.now();
        let uses_truth = self.resolved.script.loc.behavior_uses_truth;
        let r = &self.robots[i];
        if r.status != RobotStatus::Active {
            self.robots[i].last_cmd = VelocityCommand::ZERO;
            return VelocityCommand::ZERO;
        }
        let (me, source) = if uses_truth {
            (
                SelfState {
                    id: r.id,
                    pose: r.truth,
                    velocity: Vector2::new(r.velocity.vx, r.velocity.vy),
                },
                PoseSource::Truth,
            )
        } else {
            (
                SelfState {
                    id: r.id,
                    pose: r.belief(),
                    velocity: Vector2::new(r.est.state[2], r.est.state[3]),
                },
                PoseSource::Fused,
            )
        };
        match source {
            PoseSource::Fused => self.stats.behavior_inputs_fused += 1,
            PoseSource::Truth => self.stats.behavior_inputs_truth += 1,
        }
        let view = r
            .table
            .view(r.id, Vector2::new(me.pose.x, me.pose.y), t, STALENESS_WINDOW);
        let program = &self.resolved.programs[r.program as usize];
        let out = step_behavior(program, t - r.program_start, &me, &view);
        let raised = out.cue_error && !r.cue_error;
        let (id, pname) = (r.id, program.name.clone());

        let r = &mut self.robots[i];
        r.cue_error = out.cue_error;
        r.phase = out.phase;
        let mut cmd = clamp_command(out.command, r.class.max_speed);
        cmd.vz = 0.0;
        r.last_cmd = cmd;
        if raised {
            self.events.push(EventRecord {
                t_s: t,
                kind: "cue_error".into(),
                node: id,
                detail: format!("program={pname} phase={}", out.phase),
            });
        }
        cmd
    }

    fn record_phase(&mut self, i: usize) {
        let r = &self.robots[i];
        let program = self.resolved.programs[r.program as usize].name.clone();
        let last = self.phases.iter().rev().find(|p| p.robot == r.id);
        let changed = match last {
            None => true,
            Some(p) => p.state != r.status || p.program != program || p.phase != r.phase,
        };
        if changed {
            self.phases.push(PhaseRecord {
                t_s: self.now(),
                robot: r.id,
                state: r.status,
                program,
                phase: r.phase,
            });
        }
    }

    fn record_track(&mut self, i: usize) {
        let t = self.now();
        let r = &self.robots[i];
        let row = |x: f64, y: f64, z: f64, yaw: f64, source: TrackSource| TrackRow {
            t_s: t,
            x,
            y,
            z,
            yaw,
            source,
            robot: r.id,
        };
        self.tracks
            .push(row(r.truth.x, r.truth.y, r.truth.z, r.truth.yaw, TrackSource::Truth));
        if let Some(p) = r.last_fix {
            let source = if r.class.kind == ClassKind::Tabletop {
                TrackSource::GrayRaw
            } else {
                TrackSource::UwbRaw
            };
            self.tracks.push(row(p.x, p.y, r.z_est, f64::NAN, source));
        }
        let b = r.belief();
        self.tracks.push(row(b.x, b.y, b.z, b.yaw, TrackSource::Fused));
    }

    fn gossip_out(&mut self, i: usize) -> Result<(), SimError> {
        let t = self.now();
        let period = self.period;
        let r = &mut self.robots[i];
        if r.status != RobotStatus::Active || t < r.next_gossip {
            return Ok(());
        }
        r.seq = r.seq.wrapping_add(1);
        let msg = GossipMessage::from_state(
            r.id,
            r.seq,
            t,
            &r.belief(),
            r.est.state[2],
            r.est.state[3],
            r.program,
            r.phase.min(u8::MAX as usize) as u8,
        );
        while r.next_gossip <= t {
            r.next_gossip += period;
        }
        let id = r.id;
        let packet = encode(&Message::Gossip(msg))?;
        self.bus
            .publish(GOSSIP_TOPIC, id, packet, Reliability::BestEffort)?;
        Ok(())
    }

    fn actuate(&mut self, i: usize, cmd: VelocityCommand) -> Result<(), SimError> {
        let loc = &self.resolved.script.loc;
        let uses_truth = loc.behavior_uses_truth;
        let r = &mut self.robots[i];
        let yaw0 = r.truth.yaw;
        let (v, omega) = match r.class.kind {
            ClassKind::Aerial => {
                let vz = match r.status {
                    RobotStatus::Active => {
                        (CLIMB_GAIN * (loc.cruise_altitude - r.z_est)).clamp(-MAX_CLIMB, MAX_CLIMB)
                    }
                    RobotStatus::Stopped => -MAX_CLIMB,
                    RobotStatus::Idle => 0.0,
                };
                let c = VelocityCommand {
                    vx: cmd.vx,
                    vy: cmd.vy,
                    vz,
                };
                let s = aerial_step(
                    AerialState {
                        pose: r.truth,
                        velocity: r.velocity,
                    },
                    c,
                    &r.class,
                    DT,
                )?;
                r.truth = s.pose;
                r.velocity = s.velocity;
                (
                    s.velocity.planar_norm(),
                    normalize_angle(s.pose.yaw - yaw0) / DT,
                )
            }
            _ => {
                let steer = if uses_truth { r.truth } else { r.belief() };
                let wheels = velocity_to_wheels(cmd, steer, &r.class)?;
                r.truth = diffdrive_step(r.truth, wheels, r.class.wheel_track, DT)?;
                let v = wheels.forward_speed();
                r.velocity = VelocityCommand::planar(v * r.truth.yaw.cos(), v * r.truth.yaw.sin());
                (v, wheels.yaw_rate(r.class.wheel_track))
            }
        };
        let n = &loc.noise;
        let odom = Odometry {
            v: v + gauss(&mut r.rng, n.odom_speed_frac * v.abs()),
            omega: omega + gauss(&mut r.rng, n.odom_yaw_rate_sigma),
        };
        let imu = omega + gauss(&mut r.rng, n.imu_yaw_rate_sigma);
        r.est = kf_predict(&r.est, odom, imu, DT, n)?;
        Ok(())
    }

    /// Bandwidth windows covering `[0, now)`.
    pub fn bandwidth(&self) -> Vec<BandwidthSample> {
        record_bandwidth(&self.bus, BANDWIDTH_WINDOW)
    }

    /// Load over the last window ending now.
    pub fn current_bandwidth(&self) -> BandwidthSample {
        let now = self.now();
        let from = (now - BANDWIDTH_WINDOW).max(0.0);
        let log = self.bus.tx_log();
        let start = log.partition_point(|r| r.t < from);
        let recent: Vec<TxRecord> = log[start..]
            .iter()
            .filter(|r| r.t < now)
            .map(|r| TxRecord { t: r.t - from, ..*r })
            .collect();
        let mut s = bandwidth_samples(&recent, &[], BANDWIDTH_WINDOW, BANDWIDTH_WINDOW)
            .pop()
            .expect("one window");
        s.t = from;
        s
    }

    /// Advances the bus to the end of the run and assembles the trace.
    pub fn finish(mut self, end: f64) -> RunTrace {
        self.bus.advance_to(end.max(self.now()));
        self.collect_bus_events();
        let stats = self.stats();
        let bandwidth = self.bandwidth();
        let digests = self.resolved.digests();
        let programs = self
            .resolved
            .programs
            .iter()
            .zip(&digests)
            .enumerate()
            .map(|(i, (p, d))| ProgramInfo {
                id: i as u8,
                name: p.name.clone(),
                digest: d.clone(),
            })
            .collect();
        let mut robots = Vec::new();
        let mut k = 0;
        for swarm in &self.resolved.script.swarms {
            let pid = self.resolved.program_id(&swarm.program).unwrap_or(0) as usize;
            for _ in 0..swarm.count {
                robots.push(RobotInfo {
                    id: self.robots[k].id,
                    class: swarm.class,
                    program: swarm.program.clone(),
                    program_digest: digests[pid].clone(),
                });
                k += 1;
            }
        }
        RunTrace {
            meta: TraceMeta {
                schema: TRACE_SCHEMA,
                name: self.resolved.script.name.clone(),
                seed: self.seed,
                dt: DT,
                duration: end,
                programs,
                robots,
                markers: self.markers.iter().map(|m| m.id).collect(),
                stations: self.stations.clone(),
                stats,
                script: self.resolved.script.clone(),
            },
            tracks: self.tracks,
            bandwidth,
            events: self.events,
            phases: self.phases,
        }
    }
}

/// Number of ticks in `[0, duration)`.
pub fn step_count(duration: f64) -> u64 {
    let n = duration * SIM_RATE_HZ;
    let r = n.round();
    if (n - r).abs() < 1e-9 {
        r as u64
    } else {
        n.ceil() as u64
    }
}

/// Runs a whole scripted performance.
pub fn run(resolved: ResolvedScript, seed: u64) -> Result<RunTrace, SimError> {
    let duration = resolved.script.duration;
    let mut sim = Simulation::new(resolved, seed)?;
    for _ in 0..step_count(duration) {
        sim.step()?;
    }
    Ok(sim.finish(duration))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::PerformanceScript;
    use std::path::Path;

    const SHOW: &str = r#"
name = "unit"
duration = 12.0
stations = 1

[[markers]]
x = 3.0
y = 6.0

[[swarms]]
class = "human_scale"
count = 3
program = "gather"
spawn = { kind = "rect", x_min = 1.0, x_max = 5.0, y_min = 2.0, y_max = 10.0 }

[[swarms]]
class = "aerial"
count = 2
program = "gather"
spawn = { kind = "ring", cx = 3.0, cy = 6.0, radius = 2.0 }

[[cues]]
at = 1.0
command = "launch"

[[cues]]
at = 6.0
command = "switch"
program = "scatter"

[[cues]]
at = 10.0
command = "stop"

[transfer]
blob_bytes = 20000
"#;

    fn resolved(text: &str) -> ResolvedScript {
        PerformanceScript::from_toml_str(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap()
    }

    #[test]
    fn step_count_matches_duration() {
        assert_eq!(step_count(0.0), 0);
        assert_eq!(step_count(300.0), 6000);
        assert_eq!(step_count(0.01), 1);
    }

    #[test]
    fn zero_duration_has_empty_tracks() {
        let mut s = PerformanceScript::from_toml_str(SHOW).unwrap();
        s.duration = 0.0;
        let trace = run(s.resolve(Path::new(".")).unwrap(), 1).unwrap();
        assert!(trace.tracks.is_empty());
        assert!(trace.bandwidth.is_empty());
        assert_eq!(trace.meta.robots.len(), 5);
    }

    #[test]
    fn lifecycle_follows_cues() {
        let trace = run(resolved(SHOW), 3).unwrap();
        let cues: Vec<_> = trace
            .events
            .iter()
            .filter(|e| ["launch", "switch", "stop"].contains(&e.kind.as_str()))
            .map(|e| (e.kind.as_str(), e.t_s))
            .collect();
        assert_eq!(cues, vec![("launch", 1.0), ("switch", 6.0), ("stop", 10.0)]);
        // every robot goes idle → active → stopped, never active before launch
        for r in &trace.meta.robots {
            let states: Vec<_> = trace.phases.iter().filter(|p| p.robot == r.id).collect();
            let first_active = states.iter().find(|p| p.state == RobotStatus::Active).unwrap();
            assert!(first_active.t_s >= 1.0);
            assert_eq!(states.last().unwrap().state, RobotStatus::Stopped);
            assert!(states.iter().any(|p| p.program == "scatter" && p.t_s >= 6.0));
        }
        assert_eq!(trace.meta.stats.behavior_inputs_truth, 0);
        assert!(trace.meta.stats.behavior_inputs_fused > 0);
        assert_eq!(
            trace.events.iter().filter(|e| e.kind == "transfer_done").count(),
            5
        );
    }

    #[test]
    fn truth_debug_flag_is_visible() {
        let mut s = PerformanceScript::from_toml_str(SHOW).unwrap();
        s.loc.behavior_uses_truth = true;
        let trace = run(s.resolve(Path::new(".")).unwrap(), 3).unwrap();
        assert_eq!(trace.meta.stats.behavior_inputs_fused, 0);
        assert!(trace.meta.stats.behavior_inputs_truth > 0);
    }

    #[test]
    fn aerial_robots_take_off_and_land() {
        let trace = run(resolved(SHOW), 5).unwrap();
        let aerial: Vec<u16> = trace
            .meta
            .robots
            .iter()
            .filter(|r| r.class == ClassKind::Aerial)
            .map(|r| r.id)
            .collect();
        for id in aerial {
            let z_at = |t: f64| {
                trace
                    .tracks
                    .iter()
                    .find(|r| r.robot == id && r.source == TrackSource::Truth && (r.t_s - t).abs() < 1e-9)
                    .unwrap()
                    .z
            };
            assert_eq!(z_at(0.5), 0.0);
            assert!(z_at(9.0) > 1.0);
            assert!(z_at(11.95) < z_at(9.0));
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let a = run(resolved(SHOW), 9).unwrap();
        let b = run(resolved(SHOW), 9).unwrap();
        assert_eq!(a.tracks_csv(), b.tracks_csv());
        assert_eq!(a.bandwidth, b.bandwidth);
        assert_eq!(a.events, b.events);
        let c = run(resolved(SHOW), 10).unwrap();
        assert_ne!(a.tracks_csv(), c.tracks_csv());
    }

    #[test]
    fn marker_cue_reaches_robots() {
        let mut sim = Simulation::new(resolved(SHOW), 1).unwrap();
        for _ in 0..10 {
            sim.step().unwrap();
        }
        sim.issue(&CueCommand::Marker { x: 1.0, y: 2.0 }).unwrap();
        let sent = sim.now();
        let latency = {
            let c = &sim.script().script.net;
            (c.latency_mean_ms + c.latency_jitter_ms) / 1000.0
        };
        let mut seen_at = None;
        while sim.now() < sent + 1.0 {
            let t = sim.now();
            sim.step().unwrap();
            if sim.marker_seen_by(1) == Some(Vector2::new(1.0, 2.0)) {
                seen_at = Some(t);
                break;
            }
        }
        let seen = seen_at.expect("marker update never arrived");
        assert!(seen - sent <= latency + DT + 1e-9, "{}", seen - sent);
    }
}
