//! Deterministic discrete-event simulation of the substation network.
//!
//! The network is two shared media, the substation LAN and a
//! point-to-point WAN link between the master side and the router, with
//! ARP resolution on both, a store-and-forward router, and a minimal
//! reliable transport (per-direction byte sequence numbers, cumulative
//! acknowledgements, a fixed retransmission timer, no congestion control).
//!
//! Simulated time is in integer microseconds. Events fire in nondecreasing
//! time; events scheduled for the same instant fire in insertion order, so
//! a scenario plus its seed reproduces an identical event trace.

mod capture;
mod frame;
mod sim;

pub use capture::{CaptureKind, CaptureRecord, Direction, TransportSummary};
pub use frame::{transport_checksum, ArpOp, ArpPacket, EtherFrame, FramePayload, MacAddr, Segment};
pub use sim::{ConnId, ConnSide, Medium, NodeId, Occurrence, SegMeta, Sim, SimConfig};

use thiserror::Error;

/// Broadcast hardware address.
pub const MAC_BROADCAST: MacAddr = MacAddr([0xFF; 6]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("cannot schedule at {at_us}us, simulation clock is already at {now_us}us")]
    SchedulingInPast { at_us: u64, now_us: u64 },
    #[error("ARP resolution of {ip} timed out (no owner on the segment)")]
    ArpTimeout { ip: std::net::Ipv4Addr },
    #[error("transport connection is closed")]
    ConnClosed,
    #[error("node has no interface that can reach {ip}")]
    NoRoute { ip: std::net::Ipv4Addr },
    #[error("unknown connection id")]
    UnknownConn,
}

/// Renders microseconds of simulated time as milliseconds with three
/// decimals, e.g. `120000.123`.
pub fn ms_string(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

/// Parses the `ms_string` rendering back to microseconds.
pub fn parse_ms(text: &str) -> Option<u64> {
    let (ms, frac) = text.split_once('.')?;
    if frac.len() != 3 {
        return None;
    }
    Some(ms.parse::<u64>().ok()? * 1000 + frac.parse::<u64>().ok()?)
}
