//! Link-layer frames, ARP packets and transport segments.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

/// 6-octet hardware address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            self.0[0], self.0[1], self.0[2], self.0[3], self.0[4], self.0[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("expected 6 colon-separated octets, got {s:?}"));
        }
        let mut octets = [0u8; 6];
        for (i, part) in parts.iter().enumerate() {
            octets[i] =
                u8::from_str_radix(part, 16).map_err(|_| format!("bad MAC octet {part:?}"))?;
        }
        Ok(Self(octets))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArpOp {
    Request,
    Reply,
}

/// ARP packet body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArpPacket {
    pub op: ArpOp,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

impl ArpPacket {
    /// Standard 28-octet wire encoding (Ethernet/IPv4, network byte order).
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28);
        out.extend_from_slice(&1u16.to_be_bytes()); // htype: ethernet
        out.extend_from_slice(&0x0800u16.to_be_bytes()); // ptype: ipv4
        out.push(6);
        out.push(4);
        out.extend_from_slice(
            &match self.op {
                ArpOp::Request => 1u16,
                ArpOp::Reply => 2u16,
            }
            .to_be_bytes(),
        );
        out.extend_from_slice(&self.sender_mac.0);
        out.extend_from_slice(&self.sender_ip.octets());
        out.extend_from_slice(&self.target_mac.0);
        out.extend_from_slice(&self.target_ip.octets());
        out
    }
}

/// A transport segment. Sequence and acknowledgement numbers are byte
/// stream positions, as in TCP; `retransmission` counts how many times this
/// particular segment has been re-sent (0 for the original transmission).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub retransmission: u32,
    pub checksum: u16,
    pub payload: Vec<u8>,
}

impl Segment {
    pub fn is_pure_ack(&self) -> bool {
        self.payload.is_empty()
    }

    /// Recomputes and stores the header+payload checksum. The adversary
    /// calls this after editing a payload in flight.
    pub fn refresh_checksum(&mut self) {
        self.checksum = transport_checksum(self);
    }
}

/// 16-bit ones'-complement checksum over the transport header fields and
/// payload (the retransmission counter is capture metadata, not covered).
pub fn transport_checksum(seg: &Segment) -> u16 {
    let mut words: Vec<u16> = Vec::new();
    let src = seg.src_ip.octets();
    let dst = seg.dst_ip.octets();
    words.push(u16::from_be_bytes([src[0], src[1]]));
    words.push(u16::from_be_bytes([src[2], src[3]]));
    words.push(u16::from_be_bytes([dst[0], dst[1]]));
    words.push(u16::from_be_bytes([dst[2], dst[3]]));
    words.push(seg.src_port);
    words.push(seg.dst_port);
    words.push((seg.seq >> 16) as u16);
    words.push(seg.seq as u16);
    words.push((seg.ack >> 16) as u16);
    words.push(seg.ack as u16);
    words.push(seg.payload.len() as u16);
    for pair in seg.payload.chunks(2) {
        let hi = pair[0];
        let lo = pair.get(1).copied().unwrap_or(0);
        words.push(u16::from_be_bytes([hi, lo]));
    }
    let mut sum: u32 = 0;
    for w in words {
        sum += u32::from(w);
        if sum > 0xFFFF {
            sum = (sum & 0xFFFF) + 1;
        }
    }
    !(sum as u16)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FramePayload {
    Arp(ArpPacket),
    Transport(Segment),
}

/// An Ethernet-style frame on one of the simulated media.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EtherFrame {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub payload: FramePayload,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_parse_display_round_trip() {
        let mac = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x00, 0x02]);
        assert_eq!(mac.to_string(), "00:00:00:aa:00:02");
        assert_eq!("00:00:00:aa:00:02".parse::<MacAddr>().unwrap(), mac);
        assert!("00:00:00".parse::<MacAddr>().is_err());
    }

    #[test]
    fn checksum_changes_with_payload_and_verifies_after_refresh() {
        let mut seg = Segment {
            src_ip: Ipv4Addr::new(192, 168, 0, 4),
            dst_ip: Ipv4Addr::new(192, 168, 0, 5),
            src_port: 49152,
            dst_port: 20000,
            seq: 1,
            ack: 1,
            retransmission: 0,
            checksum: 0,
            payload: vec![1, 2, 3],
        };
        seg.refresh_checksum();
        let original = seg.checksum;
        assert_eq!(transport_checksum(&seg), original);

        seg.payload[1] = 9;
        assert_ne!(transport_checksum(&seg), original);
        seg.refresh_checksum();
        assert_eq!(transport_checksum(&seg), seg.checksum);

        // retransmission counter is not covered
        seg.retransmission = 3;
        assert_eq!(transport_checksum(&seg), seg.checksum);
    }
}
