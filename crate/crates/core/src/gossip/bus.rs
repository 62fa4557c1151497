use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::mpsc::{channel, Receiver, Sender};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{decode, Packet, MAX_PAYLOAD, MSG_CHUNK, MSG_COMMAND, MSG_GOSSIP};
use super::{CommandKind, Message};

/// The only topic. Gossip, commands and marker updates all share it.
pub const GOSSIP_TOPIC: &str = "swarm/gossip";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Robot,
    Marker,
    GroundStation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub id: u16,
    pub role: NodeRole,
}

impl NodeId {
    pub fn new(id: u16, role: NodeRole) -> Self {
        Self { id, role }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub latency_mean_ms: f64,
    pub latency_jitter_ms: f64,
    pub loss_prob: f64,
    pub seed: u64,
    pub gossip_period_ms: f64,
    /// Link rate of bulk unicast transfers (bytes/s on the wire).
    pub transfer_rate_bps: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            latency_mean_ms: 8.0,
            latency_jitter_ms: 4.0,
            loss_prob: 0.01,
            seed: 0,
            gossip_period_ms: 250.0,
            transfer_rate_bps: 2_000_000.0,
        }
    }
}

impl NetConfig {
    pub fn lossless() -> Self {
        Self {
            latency_mean_ms: 0.0,
            latency_jitter_ms: 0.0,
            loss_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(BusError::InvalidConfig("loss_prob must be in [0, 1]"));
        }
        if !(self.latency_mean_ms >= 0.0 && self.latency_jitter_ms >= 0.0) {
            return Err(BusError::InvalidConfig("latency values must be >= 0"));
        }
        if !(self.gossip_period_ms > 0.0) {
            return Err(BusError::InvalidConfig("gossip_period_ms must be > 0"));
        }
        if !(self.transfer_rate_bps > 0.0) {
            return Err(BusError::InvalidConfig("transfer_rate_bps must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("node id {0} is already on the bus")]
    IdConflict(u16),
    #[error("node id {0} is not on the bus")]
    UnknownNode(u16),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("node {0} is not a ground station")]
    NotAStation(u16),
    #[error("invalid network config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reliability {
    /// Subject to `loss_prob`.
    BestEffort,
    /// Never dropped by the medium (commands).
    Reliable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub from: u16,
    pub at: f64,
    pub packet: Packet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    Gossip,
    Command,
    Transfer,
}

/// One packet put on the medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxRecord {
    pub t: f64,
    pub bytes: u32,
    pub kind: TrafficKind,
    pub role: NodeRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Launch,
    Switch,
    Stop,
}

impl CueKind {
    pub fn name(self) -> &'static str {
        match self {
            CueKind::Launch => "launch",
            CueKind::Switch => "switch",
            CueKind::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BusEvent {
    PublishAfterLeave { node: u16, t: f64 },
    TransferStarted { id: u32, station: u16, robot: u16, bytes: u64, t: f64 },
    TransferCompleted { id: u32, robot: u16, packets: u64, t: f64 },
    TransferAborted { id: u32, robot: u16, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BusStats {
    pub published: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_departed: u64,
    pub wire_bytes: u64,
}

/// Handle of a started bulk transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferTicket {
    pub id: u32,
    pub packets: u64,
    pub wire_bytes: u64,
    /// Time the last chunk arrives at the robot.
    pub completes_at: f64,
}

#[derive(Debug, Clone)]
struct Member {
    role: NodeRole,
    subscribed: bool,
}

#[derive(Debug, Clone)]
struct Pending {
    at: f64,
    order: u64,
    from: u16,
    to: u16,
    packet: Packet,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap pops the earliest delivery first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.order.cmp(&self.order))
    }
}

#[derive(Debug, Clone)]
struct Transfer {
    id: u32,
    robot: u16,
    remaining: u64,
    next_tx: f64,
    sent_packets: u64,
    interval_per_byte: f64,
}

/// Packet handed in from another thread; published at the next advance.
#[derive(Debug, Clone)]
pub struct Injected {
    pub sender: u16,
    pub packet: Packet,
}

/// Single-topic publish/subscribe medium advanced by the simulation clock.
///
/// Deliveries keep per-(sender, receiver) FIFO order. Every random draw comes
/// from one seeded generator, in member-id order, so a given seed always yields
/// the same schedule.
pub struct Bus {
    cfg: NetConfig,
    rng: ChaCha8Rng,
    now: f64,
    order: u64,
    members: BTreeMap<u16, Member>,
    pending: BinaryHeap<Pending>,
    last_arrival: HashMap<(u16, u16), f64>,
    inboxes: BTreeMap<u16, Vec<Delivery>>,
    transfers: Vec<Transfer>,
    next_transfer_id: u32,
    tx_log: Vec<TxRecord>,
    cues: Vec<(f64, CueKind)>,
    events: Vec<BusEvent>,
    stats: BusStats,
    inject_tx: Sender<Injected>,
    inject_rx: Receiver<Injected>,
}

impl Bus {
    pub fn new(cfg: NetConfig) -> Result<Self, BusError> {
        cfg.validate()?;
        let (inject_tx, inject_rx) = channel();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            now: 0.0,
            order: 0,
            members: BTreeMap::new(),
            pending: BinaryHeap::new(),
            last_arrival: HashMap::new(),
            inboxes: BTreeMap::new(),
            transfers: Vec::new(),
            next_transfer_id: 0,
            tx_log: Vec::new(),
            cues: Vec::new(),
            events: Vec::new(),
            stats: BusStats::default(),
            inject_tx,
            inject_rx,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    pub fn events(&self) -> &[BusEvent] {
        &self.events
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.tx_log
    }

    pub fn cue_marks(&self) -> &[(f64, CueKind)] {
        &self.cues
    }

    /// Thread-safe handle for producers outside the simulation loop.
    pub fn injector(&self) -> Sender<Injected> {
        self.inject_tx.clone()
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().map(|(id, m)| NodeId::new(*id, m.role))
    }

    pub fn role_of(&self, id: u16) -> Option<NodeRole> {
        self.members.get(&id).map(|m| m.role)
    }

    /// Registers a node and subscribes it to the gossip topic.
    pub fn join(&mut self, node: NodeId) -> Result<(), BusError> {
        if self.members.contains_key(&node.id) {
            return Err(BusError::IdConflict(node.id));
        }
        self.members.insert(
            node.id,
            Member {
                role: node.role,
                subscribed: true,
            },
        );
        self.inboxes.insert(node.id, Vec::new());
        Ok(())
    }

    /// Removes a node. Anything still in flight toward it is discarded.
    pub fn leave(&mut self, id: u16) -> Result<(), BusError> {
        if self.members.remove(&id).is_none() {
            return Err(BusError::UnknownNode(id));
        }
        self.inboxes.remove(&id);
        let before = self.pending.len();
        self.pending = std::mem::take(&mut self.pending)
            .into_iter()
            .filter(|p| p.to != id)
            .collect();
        self.stats.dropped_departed += (before - self.pending.len()) as u64;
        self.last_arrival.retain(|(a, b), _| *a != id && *b != id);
        let now = self.now;
        for tr in self.transfers.iter().filter(|t| t.robot == id) {
            self.events.push(BusEvent::TransferAborted {
                id: tr.id,
                robot: id,
                t: now,
            });
        }
        self.transfers.retain(|t| t.robot != id);
        Ok(())
    }

    pub fn subscribe(&mut self, id: u16, topic: &str) -> Result<(), BusError> {
        check_topic(topic)?;
        let m = self.members.get_mut(&id).ok_or(BusError::UnknownNode(id))?;
        m.subscribed = true;
        Ok(())
    }

    pub fn unsubscribe(&mut self, id: u16, topic: &str) -> Result<(), BusError> {
        check_topic(topic)?;
        let m = self.members.get_mut(&id).ok_or(BusError::UnknownNode(id))?;
        m.subscribed = false;
        Ok(())
    }

    fn sample_latency(&mut self) -> f64 {
        let j = self.cfg.latency_jitter_ms;
        let jitter = if j > 0.0 {
            self.rng.random_range(-j..=j)
        } else {
            0.0
        };
        (self.cfg.latency_mean_ms + jitter).max(0.0) / 1000.0
    }

    /// Broadcasts `packet` to every current subscriber except the sender.
    /// Returns how many deliveries were scheduled. Publishing from a node that
    /// is not on the bus is a no-op recorded as an event.
    pub fn publish(
        &mut self,
        topic: &str,
        sender: u16,
        packet: Packet,
        reliability: Reliability,
    ) -> Result<usize, BusError> {
        check_topic(topic)?;
        let Some(role) = self.role_of(sender) else {
            log::warn!("publish from departed node {sender} ignored");
            self.events.push(BusEvent::PublishAfterLeave {
                node: sender,
                t: self.now,
            });
            return Ok(0);
        };

        let kind = match packet.msg_type() {
            Some(MSG_COMMAND) => TrafficKind::Command,
            Some(MSG_CHUNK) => TrafficKind::Transfer,
            Some(MSG_GOSSIP) | Some(_) | None => TrafficKind::Gossip,
        };
        if kind == TrafficKind::Command {
            if let Ok(Message::Command(c)) = decode(packet.as_bytes()) {
                let cue = match c.kind {
                    CommandKind::Launch { .. } => Some(CueKind::Launch),
                    CommandKind::Switch { .. } => Some(CueKind::Switch),
                    CommandKind::Stop => Some(CueKind::Stop),
                    CommandKind::MarkerPose { .. } => None,
                };
                if let Some(cue) = cue {
                    self.cues.push((self.now, cue));
                }
            }
        }
        self.record_tx(packet.len(), kind, role, self.now);
        self.stats.published += 1;

        let receivers: Vec<u16> = self
            .members
            .iter()
            .filter(|(id, m)| **id != sender && m.subscribed)
            .map(|(id, _)| *id)
            .collect();
        let mut scheduled = 0;
        for to in receivers {
            if reliability == Reliability::BestEffort
                && self.cfg.loss_prob > 0.0
                && self.rng.random::<f64>() < self.cfg.loss_prob
            {
                self.stats.dropped_loss += 1;
                continue;
            }
            let lat = self.sample_latency();
            let floor = self.last_arrival.get(&(sender, to)).copied().unwrap_or(0.0);
            let at = (self.now + lat).max(floor);
            self.last_arrival.insert((sender, to), at);
            self.order += 1;
            self.pending.push(Pending {
                at,
                order: self.order,
                from: sender,
                to,
                packet: packet.clone(),
            });
            scheduled += 1;
        }
        Ok(scheduled)
    }

    fn record_tx(&mut self, bytes: usize, kind: TrafficKind, role: NodeRole, t: f64) {
        self.stats.wire_bytes += bytes as u64;
        self.tx_log.push(TxRecord {
            t,
            bytes: bytes as u32,
            kind,
            role,
        });
    }

    /// Starts a chunked unicast bulk transfer from a ground station to a robot.
    /// Chunks are accounted on the wire at the configured link rate; their
    /// contents are not materialized.
    pub fn launch_transfer(
        &mut self,
        station: u16,
        robot: u16,
        blob_size: u64,
    ) -> Result<TransferTicket, BusError> {
        match self.role_of(station) {
            Some(NodeRole::GroundStation) => {}
            Some(_) => return Err(BusError::NotAStation(station)),
            None => return Err(BusError::UnknownNode(station)),
        }
        if !self.members.contains_key(&robot) {
            return Err(BusError::UnknownNode(robot));
        }
        let id = self.next_transfer_id;
        self.next_transfer_id += 1;

        let chunk = MAX_PAYLOAD as u64;
        let packets = blob_size.div_ceil(chunk);
        let wire_bytes = blob_size + packets * super::codec::HEADER_LEN as u64;
        let per_byte = 1.0 / self.cfg.transfer_rate_bps;
        let latency = self.cfg.latency_mean_ms / 1000.0;
        let completes_at = self.now + wire_bytes as f64 * per_byte + latency;

        self.events.push(BusEvent::TransferStarted {
            id,
            station,
            robot,
            bytes: blob_size,
            t: self.now,
        });
        if packets == 0 {
            self.events.push(BusEvent::TransferCompleted {
                id,
                robot,
                packets: 0,
                t: self.now,
            });
        } else {
            self.transfers.push(Transfer {
                id,
                robot,
                remaining: blob_size,
                next_tx: self.now,
                sent_packets: 0,
                interval_per_byte: per_byte,
            });
        }
        Ok(TransferTicket {
            id,
            packets,
            wire_bytes,
            completes_at,
        })
    }

    pub fn active_transfers(&self) -> usize {
        self.transfers.len()
    }

    fn pump_transfers(&mut self, until: f64) {
        let latency = self.cfg.latency_mean_ms / 1000.0;
        let mut done = Vec::new();
        let mut txs = Vec::new();
        for tr in &mut self.transfers {
            while tr.remaining > 0 && tr.next_tx <= until {
                let payload = tr.remaining.min(MAX_PAYLOAD as u64);
                let wire = payload + super::codec::HEADER_LEN as u64;
                txs.push((tr.next_tx, wire));
                tr.remaining -= payload;
                tr.sent_packets += 1;
                tr.next_tx += wire as f64 * tr.interval_per_byte;
            }
            // the last chunk left at next_tx - its own airtime
            if tr.remaining == 0 && tr.next_tx + latency <= until {
                done.push((tr.id, tr.robot, tr.sent_packets, tr.next_tx + latency));
            }
        }
        for (t, wire) in txs {
            self.record_tx(wire as usize, TrafficKind::Transfer, NodeRole::GroundStation, t);
        }
        for (id, robot, packets, t) in done {
            self.events.push(BusEvent::TransferCompleted {
                id,
                robot,
                packets,
                t,
            });
            self.transfers.retain(|tr| tr.id != id);
        }
    }

    /// Advances the clock to `t`: pumps transfers, publishes injected packets,
    /// and moves due packets into receiver inboxes.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.pump_transfers(t);
            self.now = t;
        }
        while let Ok(inj) = self.inject_rx.try_recv() {
            let _ = self.publish(GOSSIP_TOPIC, inj.sender, inj.packet, Reliability::Reliable);
        }
        while let Some(top) = self.pending.peek() {
            if top.at > self.now {
                break;
            }
            let p = self.pending.pop().expect("peeked");
            if let Some(inbox) = self.inboxes.get_mut(&p.to) {
                inbox.push(Delivery {
                    from: p.from,
                    at: p.at,
                    packet: p.packet,
                });
                self.stats.delivered += 1;
            } else {
                self.stats.dropped_departed += 1;
            }
        }
    }

    /// Takes everything delivered to `id` so far, in arrival order.
    pub fn drain(&mut self, id: u16) -> Vec<Delivery> {
        self.inboxes
            .get_mut(&id)
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

fn check_topic(topic: &str) -> Result<(), BusError> {
    if topic == GOSSIP_TOPIC {
        Ok(())
    } else {
        Err(BusError::UnknownTopic(topic.to_string()))
    }
}
