//! Capture taps: one structured record per observed frame, serialized as
//! JSON Lines with hex-encoded raw octets.

use super::frame::{ArpOp, EtherFrame, FramePayload, MacAddr};
use crate::dnp3::{summarize_frame, to_compact_hex, Dnp3Summary};
use serde::{Deserialize, Serialize};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CaptureKind {
    Arp,
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArpSummary {
    pub op: ArpOp,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportSummary {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub payload_len: usize,
    /// 0 for an original transmission, k for the k-th retransmission.
    pub retransmission: u32,
}

/// One observed frame at a capture point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub ts_us: u64,
    /// Capture point: node name plus the interface medium.
    pub node: String,
    pub medium: String,
    pub dir: Direction,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub kind: CaptureKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src_ip: Option<Ipv4Addr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst_ip: Option<Ipv4Addr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arp: Option<ArpSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportSummary>,
    /// Raw octets, hex-encoded: the DNP3 frame bytes for transport records
    /// (empty for pure acks), the 28-octet ARP encoding for ARP records.
    pub raw: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dnp3: Option<Dnp3Summary>,
}

impl CaptureRecord {
    pub fn from_frame(
        ts_us: u64,
        node: &str,
        medium: &str,
        dir: Direction,
        frame: &EtherFrame,
    ) -> Self {
        match &frame.payload {
            FramePayload::Arp(arp) => Self {
                ts_us,
                node: node.to_string(),
                medium: medium.to_string(),
                dir,
                src_mac: frame.src_mac,
                dst_mac: frame.dst_mac,
                kind: CaptureKind::Arp,
                src_ip: Some(arp.sender_ip),
                dst_ip: Some(arp.target_ip),
                arp: Some(ArpSummary {
                    op: arp.op,
                    sender_mac: arp.sender_mac,
                    sender_ip: arp.sender_ip,
                    target_mac: arp.target_mac,
                    target_ip: arp.target_ip,
                }),
                transport: None,
                raw: to_compact_hex(&arp.to_wire()),
                dnp3: None,
            },
            FramePayload::Transport(seg) => Self {
                ts_us,
                node: node.to_string(),
                medium: medium.to_string(),
                dir,
                src_mac: frame.src_mac,
                dst_mac: frame.dst_mac,
                kind: CaptureKind::Transport,
                src_ip: Some(seg.src_ip),
                dst_ip: Some(seg.dst_ip),
                arp: None,
                transport: Some(TransportSummary {
                    src_port: seg.src_port,
                    dst_port: seg.dst_port,
                    seq: seg.seq,
                    ack: seg.ack,
                    payload_len: seg.payload.len(),
                    retransmission: seg.retransmission,
                }),
                raw: to_compact_hex(&seg.payload),
                dnp3: summarize_frame(&seg.payload),
            },
        }
    }

    /// Decodes the hex raw field back to octets.
    pub fn raw_bytes(&self) -> Vec<u8> {
        crate::dnp3::parse_hex(&self.raw).unwrap_or_default()
    }
}
