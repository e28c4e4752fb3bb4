//! Post-run analytics over capture and alert logs.
//!
//! Retransmission rate is `R_R = N_R / T_R`: the number of retransmitted
//! packets over the seconds between the first and last of them. RTT pairs
//! requests with responses at the master's tap using transport
//! sequence/acknowledgement numbers. Processing time pairs each frame's
//! ingress and egress at the adversary. The correlation report buckets ARP
//! alerts and DIRECT OPERATE packets per minute and flags the minutes
//! where they co-occur.

use crate::ids::AlertRecord;
use crate::mitm::PacketClass;
use crate::netsim::{CaptureKind, CaptureRecord, Direction, MacAddr};
use serde::Serialize;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;

// ---------------------------------------------------------------------
// Retransmission rate
// ---------------------------------------------------------------------

/// The rate is undefined when exactly one retransmission exists: the span
/// between first and last is zero and the quotient has no value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RetransRate {
    PerSecond(f64),
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetransmissionStats {
    /// Distinct retransmitted transmissions observed.
    pub count: u64,
    /// Seconds between the first and last retransmitted packet.
    pub span_s: f64,
    pub rate: RetransRate,
}

impl RetransmissionStats {
    pub fn rate_value(&self) -> Option<f64> {
        match self.rate {
            RetransRate::PerSecond(v) => Some(v),
            RetransRate::Undefined => None,
        }
    }
}

/// Counts distinct retransmitted transmissions in a capture. A single
/// retransmitted segment may appear in several records (multiple taps and
/// hops); records are deduplicated on the transmission identity
/// (endpoints, sequence number, retransmission ordinal) keeping the
/// earliest timestamp.
pub fn retransmission_rate(records: &[CaptureRecord]) -> RetransmissionStats {
    let mut first_seen: BTreeMap<(Ipv4Addr, u16, Ipv4Addr, u16, u32, u32), u64> = BTreeMap::new();
    for record in records {
        let Some(t) = record.transport else { continue };
        if t.retransmission == 0 {
            continue;
        }
        let (Some(src_ip), Some(dst_ip)) = (record.src_ip, record.dst_ip) else { continue };
        let key = (src_ip, t.src_port, dst_ip, t.dst_port, t.seq, t.retransmission);
        let entry = first_seen.entry(key).or_insert(record.ts_us);
        *entry = (*entry).min(record.ts_us);
    }
    let count = first_seen.len() as u64;
    if count == 0 {
        return RetransmissionStats { count: 0, span_s: 0.0, rate: RetransRate::PerSecond(0.0) };
    }
    let first = first_seen.values().copied().min().unwrap();
    let last = first_seen.values().copied().max().unwrap();
    let span_s = (last - first) as f64 / 1_000_000.0;
    let rate = if count == 1 || span_s == 0.0 {
        RetransRate::Undefined
    } else {
        RetransRate::PerSecond(count as f64 / span_s)
    };
    RetransmissionStats { count, span_s, rate }
}

// ---------------------------------------------------------------------
// Round trip time
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RttSample {
    /// Transport sequence number of the request segment.
    pub request_seq: u32,
    pub request_ts_us: u64,
    pub response_ts_us: u64,
    pub rtt_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnmatchedRequest {
    pub request_seq: u32,
    pub request_ts_us: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RttReport {
    pub samples: Vec<RttSample>,
    pub unmatched: Vec<UnmatchedRequest>,
    pub mean_ms: f64,
    pub max_ms: f64,
    /// Samples whose RTT exceeded the retransmission timeout.
    pub over_rto: usize,
}

/// Pairs request and response data segments seen at the master's tap.
/// A response matches the oldest outstanding request whose segment it
/// acknowledges (`response.ack >= request.seq + request.len`); RTT runs
/// from the first transmission of the request to the response's arrival.
pub fn rtt_report(records: &[CaptureRecord], master_node: &str, rto_us: u64) -> RttReport {
    struct Outstanding {
        seq: u32,
        end: u32,
        first_tx_us: u64,
    }
    // Keyed by conversation (remote ip, remote port, local port).
    let mut outstanding: BTreeMap<(Ipv4Addr, u16, u16), Vec<Outstanding>> = BTreeMap::new();
    let mut samples = Vec::new();

    for record in records {
        if record.node != master_node || record.kind != CaptureKind::Transport {
            continue;
        }
        let Some(t) = record.transport else { continue };
        if t.payload_len == 0 {
            continue;
        }
        match record.dir {
            Direction::Tx => {
                let key = (record.dst_ip.unwrap(), t.dst_port, t.src_port);
                let list = outstanding.entry(key).or_default();
                if !list.iter().any(|o| o.seq == t.seq) {
                    list.push(Outstanding {
                        seq: t.seq,
                        end: t.seq + t.payload_len as u32,
                        first_tx_us: record.ts_us,
                    });
                }
            }
            Direction::Rx => {
                let key = (record.src_ip.unwrap(), t.src_port, t.dst_port);
                if let Some(list) = outstanding.get_mut(&key) {
                    if let Some(pos) = list.iter().position(|o| t.ack >= o.end) {
                        let req = list.remove(pos);
                        samples.push(RttSample {
                            request_seq: req.seq,
                            request_ts_us: req.first_tx_us,
                            response_ts_us: record.ts_us,
                            rtt_us: record.ts_us - req.first_tx_us,
                        });
                    }
                }
            }
        }
    }

    let mut unmatched: Vec<UnmatchedRequest> = outstanding
        .into_values()
        .flatten()
        .map(|o| UnmatchedRequest { request_seq: o.seq, request_ts_us: o.first_tx_us })
        .collect();
    unmatched.sort_by_key(|u| u.request_ts_us);

    let mean_ms = if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|s| s.rtt_us as f64).sum::<f64>() / samples.len() as f64 / 1000.0
    };
    let max_ms =
        samples.iter().map(|s| s.rtt_us).max().map(|us| us as f64 / 1000.0).unwrap_or(0.0);
    let over_rto = samples.iter().filter(|s| s.rtt_us > rto_us).count();
    RttReport { samples, unmatched, mean_ms, max_ms, over_rto }
}

// ---------------------------------------------------------------------
// Processing time
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ProcessingStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

/// Derives the adversary's per-class hold times (queueing plus service)
/// from its tap: ingress arrivals paired with egress transmissions on the
/// transmission identity.
pub fn processing_report(
    records: &[CaptureRecord],
    adversary_node: &str,
) -> BTreeMap<PacketClass, ProcessingStats> {
    struct Ingress {
        ts_us: u64,
        class: PacketClass,
    }
    let mut inflight: BTreeMap<(Ipv4Addr, u16, u32, u32), Ingress> = BTreeMap::new();
    let mut per_class: BTreeMap<PacketClass, Vec<f64>> = BTreeMap::new();

    for record in records {
        if record.node != adversary_node || record.kind != CaptureKind::Transport {
            continue;
        }
        let Some(t) = record.transport else { continue };
        let key = (record.src_ip.unwrap(), t.src_port, t.seq, t.retransmission);
        match record.dir {
            Direction::Rx => {
                inflight.insert(key, Ingress { ts_us: record.ts_us, class: class_of(record) });
            }
            Direction::Tx => {
                if let Some(ingress) = inflight.remove(&key) {
                    let delay_ms = (record.ts_us - ingress.ts_us) as f64 / 1000.0;
                    per_class.entry(ingress.class).or_default().push(delay_ms);
                }
            }
        }
    }

    per_class
        .into_iter()
        .map(|(class, delays)| {
            let n = delays.len();
            let mean = delays.iter().sum::<f64>() / n as f64;
            let var = delays.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            (class, ProcessingStats { samples: n, mean_ms: mean, stddev_ms: var.sqrt() })
        })
        .collect()
}

/// Packet class of a capture record, mirroring the adversary's classifier
/// but computed from the record summary.
pub fn class_of(record: &CaptureRecord) -> PacketClass {
    let Some(t) = record.transport else {
        return PacketClass::Bypass;
    };
    if t.payload_len == 0 {
        return PacketClass::Bypass;
    }
    let Some(summary) = &record.dnp3 else {
        return PacketClass::Bypass;
    };
    if !summary.crc_ok {
        return PacketClass::Bypass;
    }
    match summary.function {
        0x05 => {
            let first =
                summary.blocks.iter().find(|(_, _, count)| *count > 0).map(|(name, _, _)| name);
            match first.map(String::as_str) {
                Some("BO") => PacketClass::BinaryDo,
                Some("AO") => PacketClass::AnalogDo,
                _ => PacketClass::Bypass,
            }
        }
        0x81 => PacketClass::ReadResponse,
        _ => PacketClass::Bypass,
    }
}

// ---------------------------------------------------------------------
// Alert correlation
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorrelationBucket {
    pub minute: u64,
    pub arp_alerts: u64,
    pub direct_operate_packets: u64,
    /// ARP alerts and DIRECT OPERATE traffic co-occurred in this minute.
    pub compromised: bool,
}

/// One-minute bucketing of ARP alerts against DIRECT OPERATE packets.
/// `records` must be an exactly-once view of the wire (the router's LAN
/// view); minutes run from 0 through the end of the run.
pub fn correlation_report(
    records: &[CaptureRecord],
    alerts: &[AlertRecord],
    run_end_us: u64,
) -> Vec<CorrelationBucket> {
    let minutes = (run_end_us / 60_000_000) + 1;
    let mut arp_counts = vec![0u64; minutes as usize];
    let mut do_counts = vec![0u64; minutes as usize];

    for alert in alerts {
        if alert.rule.is_arp() {
            let minute = (alert.ts_us / 60_000_000) as usize;
            if minute < arp_counts.len() {
                arp_counts[minute] += 1;
            }
        }
    }
    for record in records {
        let is_direct_operate = record
            .dnp3
            .as_ref()
            .map(|s| s.function == 0x05 && s.crc_ok)
            .unwrap_or(false);
        if is_direct_operate {
            let minute = (record.ts_us / 60_000_000) as usize;
            if minute < do_counts.len() {
                do_counts[minute] += 1;
            }
        }
    }

    (0..minutes)
        .map(|m| {
            let arp = arp_counts[m as usize];
            let ops = do_counts[m as usize];
            CorrelationBucket {
                minute: m,
                arp_alerts: arp,
                direct_operate_packets: ops,
                compromised: arp > 0 && ops > 0,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------
// Helpers for taps
// ---------------------------------------------------------------------

/// Records within a half-open time window.
pub fn window(
    records: &[CaptureRecord],
    from_us: u64,
    to_us: u64,
) -> impl Iterator<Item = &CaptureRecord> {
    records.iter().filter(move |r| r.ts_us >= from_us && r.ts_us < to_us)
}

/// All records captured at one node.
pub fn at_node<'a>(records: &'a [CaptureRecord], node: &'a str) -> Vec<CaptureRecord> {
    records.iter().filter(|r| r.node == node).cloned().collect()
}

/// Convenience for tests: true when the record is a frame the adversary
/// put on the wire.
pub fn from_mac(record: &CaptureRecord, mac: MacAddr) -> bool {
    record.src_mac == mac
}
