//! Bit-exact packet codec. See `docs/WIRE_FORMAT.md` for byte dumps.
//!
//! Every packet is a 5-byte header followed by at most 250 payload bytes:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 1    | version (= 1)                 |
//! | 1      | 1    | msg_type                      |
//! | 2      | 1    | payload_len                   |
//! | 3      | 2    | sender id, u16 little-endian  |
//!
//! All multi-byte fields are little-endian.

use thiserror::Error;

use crate::kinematics::{normalize_angle, Pose};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 5;
pub const MAX_PAYLOAD: usize = 250;

pub const MSG_GOSSIP: u8 = 0x01;
pub const MSG_COMMAND: u8 = 0x02;
pub const MSG_CHUNK: u8 = 0x03;

pub const GOSSIP_PAYLOAD_LEN: usize = 22;

const KIND_LAUNCH: u8 = 1;
const KIND_SWITCH: u8 = 2;
const KIND_STOP: u8 = 3;
const KIND_MARKER: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the 250-byte limit")]
    Oversize(usize),
    #[error("buffer of {0} bytes is shorter than the 5-byte header")]
    ShortBuffer(usize),
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    BadMsgType(u8),
    #[error("header declares {declared} payload bytes but {actual} follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload length {len} is invalid for message type {msg_type:#04x}")]
    BadPayload { msg_type: u8, len: usize },
    #[error("unknown command kind {0}")]
    BadCommandKind(u8),
    #[error("header sender {header} does not match command issuer {issuer}")]
    IssuerMismatch { header: u16, issuer: u16 },
}

/// Periodic state broadcast of one robot, in wire fixed-point units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GossipMessage {
    pub sender: u16,
    pub seq: u32,
    pub t_ms: u32,
    pub x_mm: i16,
    pub y_mm: i16,
    pub z_mm: i16,
    pub vx_mm_s: i16,
    pub vy_mm_s: i16,
    pub yaw_mrad: i16,
    pub program_id: u8,
    pub phase: u8,
}

fn to_fixed(v: f64, scale: f64) -> i16 {
    let q = (v * scale).round();
    if q.is_nan() {
        0
    } else {
        q.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
}

impl GossipMessage {
    /// Quantizes a state into wire units (mm, mm/s, mrad), saturating at the
    /// i16 range.
    #[allow(clippy::too_many_arguments)]
    pub fn from_state(
        sender: u16,
        seq: u32,
        t: f64,
        pose: &Pose,
        vx: f64,
        vy: f64,
        program_id: u8,
        phase: u8,
    ) -> Self {
        Self {
            sender,
            seq,
            t_ms: (t * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32,
            x_mm: to_fixed(pose.x, 1000.0),
            y_mm: to_fixed(pose.y, 1000.0),
            z_mm: to_fixed(pose.z, 1000.0),
            vx_mm_s: to_fixed(vx, 1000.0),
            vy_mm_s: to_fixed(vy, 1000.0),
            yaw_mrad: to_fixed(normalize_angle(pose.yaw), 1000.0),
            program_id,
            phase,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            x: self.x_mm as f64 / 1000.0,
            y: self.y_mm as f64 / 1000.0,
            z: self.z_mm as f64 / 1000.0,
            yaw: self.yaw_mrad as f64 / 1000.0,
        }
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.vx_mm_s as f64 / 1000.0, self.vy_mm_s as f64 / 1000.0)
    }

    pub fn time(&self) -> f64 {
        self.t_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommandKind {
    /// Start the software on robots of `group` (0 = all, see
    /// [`crate::orchestrator::LaunchGroup`]).
    Launch { group: u8 },
    Switch { program_id: u8 },
    Stop,
    MarkerPose { x_mm: i16, y_mm: i16 },
}

impl CommandKind {
    pub fn marker_pose(x: f64, y: f64) -> Self {
        CommandKind::MarkerPose {
            x_mm: to_fixed(x, 1000.0),
            y_mm: to_fixed(y, 1000.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Launch { .. } => "launch",
            CommandKind::Switch { .. } => "switch",
            CommandKind::Stop => "stop",
            CommandKind::MarkerPose { .. } => "marker",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandMessage {
    pub issuer: u16,
    pub seq: u32,
    pub kind: CommandKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Gossip(GossipMessage),
    Command(CommandMessage),
    /// Opaque slice of a bulk transfer.
    Chunk { sender: u16, data: Vec<u8> },
}

/// An encoded packet: header plus payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Packet(Vec<u8>);

impl Packet {
    /// Frames an arbitrary payload. Fails on oversize payloads, never truncates.
    pub fn frame(msg_type: u8, sender: u16, payload: &[u8]) -> Result<Self, CodecError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(CodecError::Oversize(payload.len()));
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
        buf.push(WIRE_VERSION);
        buf.push(msg_type);
        buf.push(payload.len() as u8);
        buf.extend_from_slice(&sender.to_le_bytes());
        buf.extend_from_slice(payload);
        Ok(Packet(buf))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Packet(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn msg_type(&self) -> Option<u8> {
        self.0.get(1).copied()
    }

    pub fn sender(&self) -> Option<u16> {
        if self.0.len() < HEADER_LEN {
            return None;
        }
        Some(u16::from_le_bytes([self.0[3], self.0[4]]))
    }

    pub fn payload(&self) -> &[u8] {
        self.0.get(HEADER_LEN..).unwrap_or(&[])
    }
}

pub fn encode(msg: &Message) -> Result<Packet, CodecError> {
    match msg {
        Message::Gossip(g) => {
            let mut p = Vec::with_capacity(GOSSIP_PAYLOAD_LEN);
            p.extend_from_slice(&g.seq.to_le_bytes());
            p.extend_from_slice(&g.t_ms.to_le_bytes());
            for v in [g.x_mm, g.y_mm, g.z_mm, g.vx_mm_s, g.vy_mm_s, g.yaw_mrad] {
                p.extend_from_slice(&v.to_le_bytes());
            }
            p.push(g.program_id);
            p.push(g.phase);
            Packet::frame(MSG_GOSSIP, g.sender, &p)
        }
        Message::Command(c) => {
            let mut p = Vec::with_capacity(11);
            p.extend_from_slice(&c.issuer.to_le_bytes());
            p.extend_from_slice(&c.seq.to_le_bytes());
            match c.kind {
                CommandKind::Launch { group } => {
                    p.push(KIND_LAUNCH);
                    p.push(group);
                }
                CommandKind::Switch { program_id } => {
                    p.push(KIND_SWITCH);
                    p.push(program_id);
                }
                CommandKind::Stop => p.push(KIND_STOP),
                CommandKind::MarkerPose { x_mm, y_mm } => {
                    p.push(KIND_MARKER);
                    p.extend_from_slice(&x_mm.to_le_bytes());
                    p.extend_from_slice(&y_mm.to_le_bytes());
                }
            }
            Packet::frame(MSG_COMMAND, c.issuer, &p)
        }
        Message::Chunk { sender, data } => Packet::frame(MSG_CHUNK, *sender, data),
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn i16_at(b: &[u8], i: usize) -> i16 {
    i16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Strict parse of one packet.
pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::ShortBuffer(bytes.len()));
    }
    if bytes[0] != WIRE_VERSION {
        return Err(CodecError::BadVersion(bytes[0]));
    }
    let msg_type = bytes[1];
    let declared = bytes[2] as usize;
    let sender = u16_at(bytes, 3);
    let payload = &bytes[HEADER_LEN..];
    if !matches!(msg_type, MSG_GOSSIP | MSG_COMMAND | MSG_CHUNK) {
        return Err(CodecError::BadMsgType(msg_type));
    }
    if payload.len() != declared {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: payload.len(),
        });
    }
    if declared > MAX_PAYLOAD {
        return Err(CodecError::Oversize(declared));
    }
    let bad_len = || CodecError::BadPayload {
        msg_type,
        len: declared,
    };

    match msg_type {
        MSG_GOSSIP => {
            if declared != GOSSIP_PAYLOAD_LEN {
                return Err(bad_len());
            }
            let p = payload;
            Ok(Message::Gossip(GossipMessage {
                sender,
                seq: u32_at(p, 0),
                t_ms: u32_at(p, 4),
                x_mm: i16_at(p, 8),
                y_mm: i16_at(p, 10),
                z_mm: i16_at(p, 12),
                vx_mm_s: i16_at(p, 14),
                vy_mm_s: i16_at(p, 16),
                yaw_mrad: i16_at(p, 18),
                program_id: p[20],
                phase: p[21],
            }))
        }
        MSG_COMMAND => {
            if declared < 7 {
                return Err(bad_len());
            }
            let p = payload;
            let issuer = u16_at(p, 0);
            if issuer != sender {
                return Err(CodecError::IssuerMismatch {
                    header: sender,
                    issuer,
                });
            }
            let seq = u32_at(p, 2);
            let args = &p[7..];
            let kind = match (p[6], args.len()) {
                (KIND_LAUNCH, 1) => CommandKind::Launch { group: args[0] },
                (KIND_SWITCH, 1) => CommandKind::Switch {
                    program_id: args[0],
                },
                (KIND_STOP, 0) => CommandKind::Stop,
                (KIND_MARKER, 4) => CommandKind::MarkerPose {
                    x_mm: i16_at(args, 0),
                    y_mm: i16_at(args, 2),
                },
                (KIND_LAUNCH | KIND_SWITCH | KIND_STOP | KIND_MARKER, _) => return Err(bad_len()),
                (k, _) => return Err(CodecError::BadCommandKind(k)),
            };
            Ok(Message::Command(CommandMessage { issuer, seq, kind }))
        }
        _ => Ok(Message::Chunk {
            sender,
            data: payload.to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_gossip() -> GossipMessage {
        GossipMessage {
            sender: 0x0102,
            seq: 7,
            t_ms: 250,
            x_mm: 1500,
            y_mm: -20,
            z_mm: 0,
            vx_mm_s: 300,
            vy_mm_s: -300,
            yaw_mrad: 3141,
            program_id: 5,
            phase: 2,
        }
    }

    #[test]
    fn stop_command_is_twelve_bytes() {
        let pkt = encode(&Message::Command(CommandMessage {
            issuer: 42,
            seq: 9,
            kind: CommandKind::Stop,
        }))
        .unwrap();
        assert_eq!(pkt.len(), 12);
        assert_eq!(
            pkt.as_bytes(),
            &[1, 2, 7, 42, 0, 42, 0, 9, 0, 0, 0, 3]
        );
    }

    #[test]
    fn gossip_length_is_schema_sum() {
        let pkt = encode(&Message::Gossip(sample_gossip())).unwrap();
        // seq 4 + t 4 + six i16 fields + program 1 + phase 1
        let schema = 4 + 4 + 6 * 2 + 1 + 1;
        assert_eq!(schema, GOSSIP_PAYLOAD_LEN);
        assert_eq!(pkt.len(), HEADER_LEN + schema);
        assert!(pkt.len() <= 255);
        assert_eq!(&pkt.as_bytes()[..5], &[1, 1, 22, 0x02, 0x01]);
    }

    #[test]
    fn roundtrips() {
        let msgs = [
            Message::Gossip(sample_gossip()),
            Message::Command(CommandMessage {
                issuer: 3,
                seq: 1,
                kind: CommandKind::Launch { group: 2 },
            }),
            Message::Command(CommandMessage {
                issuer: 3,
                seq: 2,
                kind: CommandKind::Switch { program_id: 11 },
            }),
            Message::Command(CommandMessage {
                issuer: 12,
                seq: 3,
                kind: CommandKind::marker_pose(2.5, -1.25),
            }),
            Message::Chunk {
                sender: 1,
                data: vec![0xAB; 250],
            },
        ];
        for m in msgs {
            assert_eq!(decode(encode(&m).unwrap().as_bytes()).unwrap(), m);
        }
    }

    #[test]
    fn oversize_rejected_not_truncated() {
        let m = Message::Chunk {
            sender: 1,
            data: vec![0; 251],
        };
        assert_eq!(encode(&m), Err(CodecError::Oversize(251)));
    }

    #[test]
    fn decode_errors_are_distinct() {
        assert_eq!(decode(&[1, 1, 0, 0]), Err(CodecError::ShortBuffer(4)));
        let mut good = encode(&Message::Gossip(sample_gossip())).unwrap().into_bytes();
        good[0] = 2;
        assert_eq!(decode(&good), Err(CodecError::BadVersion(2)));
        good[0] = 1;
        good[1] = 9;
        assert_eq!(decode(&good), Err(CodecError::BadMsgType(9)));
        good[1] = 1;
        good.push(0);
        assert!(matches!(decode(&good), Err(CodecError::LengthMismatch { .. })));
        assert!(matches!(
            decode(&[1, 1, 1, 0, 0, 5]),
            Err(CodecError::BadPayload { .. })
        ));
        assert!(matches!(
            decode(&[1, 2, 7, 1, 0, 1, 0, 0, 0, 0, 0, 99]),
            Err(CodecError::BadCommandKind(99))
        ));
        assert!(matches!(
            decode(&[1, 2, 7, 1, 0, 2, 0, 0, 0, 0, 0, 3]),
            Err(CodecError::IssuerMismatch { .. })
        ));
    }

    #[test]
    fn quantization_saturates() {
        let g = GossipMessage::from_state(1, 0, 1.0, &Pose::new(40.0, -40.0, 1.0, 0.5), 0.1, 0.2, 0, 0);
        assert_eq!(g.x_mm, i16::MAX);
        assert_eq!(g.y_mm, i16::MIN);
        assert_eq!(g.yaw_mrad, 500);
        assert_eq!(g.t_ms, 1000);
    }

    // the dumps in docs/WIRE_FORMAT.md
    #[test]
    fn documented_byte_dumps() {
        let g = GossipMessage {
            sender: 3,
            seq: 42,
            t_ms: 12_500,
            x_mm: 1500,
            y_mm: 6000,
            z_mm: 1500,
            vx_mm_s: 250,
            vy_mm_s: -100,
            yaw_mrad: 785,
            program_id: 2,
            phase: 1,
        };
        let cases: [(Message, &str); 6] = [
            (
                Message::Gossip(g),
                "01 01 16 03 00 2a 00 00 00 d4 30 00 00 dc 05 70 17 dc 05 fa 00 9c ff 11 03 02 01",
            ),
            (
                Message::Command(CommandMessage { issuer: 12, seq: 7, kind: CommandKind::Launch { group: 2 } }),
                "01 02 08 0c 00 0c 00 07 00 00 00 01 02",
            ),
            (
                Message::Command(CommandMessage { issuer: 12, seq: 8, kind: CommandKind::Switch { program_id: 3 } }),
                "01 02 08 0c 00 0c 00 08 00 00 00 02 03",
            ),
            (
                Message::Command(CommandMessage {
                    issuer: 11,
                    seq: 9,
                    kind: CommandKind::marker_pose(3.0, 6.0),
                }),
                "01 02 0b 0b 00 0b 00 09 00 00 00 04 b8 0b 70 17",
            ),
            (
                Message::Command(CommandMessage { issuer: 12, seq: 9, kind: CommandKind::Stop }),
                "01 02 07 0c 00 0c 00 09 00 00 00 03",
            ),
            (
                Message::Chunk { sender: 12, data: vec![0xde, 0xad, 0xbe, 0xef] },
                "01 03 04 0c 00 de ad be ef",
            ),
        ];
        for (msg, dump) in cases {
            let bytes: Vec<u8> = dump.split(' ').map(|h| u8::from_str_radix(h, 16).unwrap()).collect();
            assert_eq!(encode(&msg).unwrap().as_bytes(), &bytes[..], "{dump}");
            assert_eq!(decode(&bytes).unwrap(), msg);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_gossip() -> impl Strategy<Value = GossipMessage> {
            (
                any::<u16>(),
                any::<u32>(),
                any::<u32>(),
                any::<[i16; 6]>(),
                any::<u8>(),
                any::<u8>(),
            )
                .prop_map(|(sender, seq, t_ms, f, program_id, phase)| GossipMessage {
                    sender,
                    seq,
                    t_ms,
                    x_mm: f[0],
                    y_mm: f[1],
                    z_mm: f[2],
                    vx_mm_s: f[3],
                    vy_mm_s: f[4],
                    yaw_mrad: f[5],
                    program_id,
                    phase,
                })
        }

        proptest! {
            #[test]
            fn gossip_roundtrip(g in any_gossip()) {
                let pkt = encode(&Message::Gossip(g)).unwrap();
                prop_assert_eq!(pkt.len(), HEADER_LEN + pkt.as_bytes()[2] as usize);
                prop_assert_eq!(decode(pkt.as_bytes()).unwrap(), Message::Gossip(g));
            }

            #[test]
            fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
                if let Ok(m) = decode(&bytes) {
                    let again = encode(&m).unwrap();
                    prop_assert_eq!(again.as_bytes(), &bytes[..]);
                }
            }
        }
    }
}
