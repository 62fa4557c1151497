//! Single-topic gossip: packet codec, simulated pub/sub medium, bulk
//! transfers and bandwidth accounting.

mod bandwidth;
mod bus;
pub mod codec;

pub use bandwidth::{
    bandwidth_samples, record_bandwidth, write_bandwidth_csv, BandwidthSample, RoleBreakdown,
};
pub use bus::{
    Bus, BusError, BusEvent, BusStats, CueKind, Delivery, Injected, NetConfig, NodeId, NodeRole,
    Reliability, TrafficKind, TransferTicket, TxRecord, GOSSIP_TOPIC,
};
pub use codec::{
    decode, encode, CodecError, CommandKind, CommandMessage, GossipMessage, Message, Packet,
    HEADER_LEN, MAX_PAYLOAD,
};
