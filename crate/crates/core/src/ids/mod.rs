//! Rule-based intrusion detection at the substation router.
//!
//! Two preprocessors feed five rules. The ARP preprocessor checks every
//! ARP frame on the LAN against a whitelist of known IP→MAC bindings and
//! a shadow cache of observed bindings; the DNP3 preprocessor checks CRCs
//! on port-20000 traffic and matches function codes. Alerts are appended
//! to a fast-alert text log, one line per alert.

use crate::netsim::{CaptureKind, CaptureRecord, MacAddr};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitelistEntry {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    /// Ethernet source does not match the ARP sender binding.
    R1,
    /// Ethernet destination does not match the ARP target binding.
    R2,
    /// An ARP reply would overwrite a cached entry with a different MAC.
    R3,
    /// DNP3 DIRECT OPERATE toward an outstation.
    R4,
    /// DNP3 OPERATE toward an outstation.
    R5,
    /// DNP3 preprocessor check_crc failure.
    CrcFail,
}

impl RuleId {
    pub fn name(self) -> &'static str {
        match self {
            Self::R1 => "R1",
            Self::R2 => "R2",
            Self::R3 => "R3",
            Self::R4 => "R4",
            Self::R5 => "R5",
            Self::CrcFail => "CRC_FAIL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "R1" => Some(Self::R1),
            "R2" => Some(Self::R2),
            "R3" => Some(Self::R3),
            "R4" => Some(Self::R4),
            "R5" => Some(Self::R5),
            "CRC_FAIL" => Some(Self::CrcFail),
            _ => None,
        }
    }

    pub fn message(self) -> &'static str {
        match self {
            Self::R1 => "ARPSPOOF_ETHERFRAME_ARP_MISMATCH_SRC",
            Self::R2 => "ARPSPOOF_ETHERFRAME_ARP_MISMATCH_DST",
            Self::R3 => "ARPSPOOF_ARP_CACHE_OVERWRITE_ATTACK",
            Self::R4 => "DNP3 Snort DIRECT OPERATE",
            Self::R5 => "DNP3 Snort OPERATE",
            Self::CrcFail => "DNP3_BAD_CRC",
        }
    }

    pub fn is_arp(self) -> bool {
        matches!(self, Self::R1 | Self::R2 | Self::R3)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertRecord {
    pub ts_us: u64,
    pub rule: RuleId,
    pub message: String,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    /// Index of the originating record in the capture log. `None` only for
    /// alerts re-parsed from a log file.
    pub capture_ref: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct IdsConfig {
    pub whitelist: Vec<WhitelistEntry>,
    pub dnp3_port: u16,
    /// Destination IPs the DNP3 rules watch (the outstations).
    pub dnp3_targets: BTreeSet<Ipv4Addr>,
}

/// The IDS engine. Stateful: it maintains a shadow ARP cache built from
/// observed traffic so cache overwrites can be flagged.
pub struct Ids {
    whitelist: BTreeMap<Ipv4Addr, MacAddr>,
    shadow_cache: BTreeMap<Ipv4Addr, MacAddr>,
    dnp3_port: u16,
    dnp3_targets: BTreeSet<Ipv4Addr>,
    pub alerts: Vec<AlertRecord>,
}

impl Ids {
    pub fn new(cfg: IdsConfig) -> Self {
        Self {
            whitelist: cfg.whitelist.into_iter().map(|e| (e.ip, e.mac)).collect(),
            shadow_cache: BTreeMap::new(),
            dnp3_port: cfg.dnp3_port,
            dnp3_targets: cfg.dnp3_targets,
            alerts: Vec::new(),
        }
    }

    /// Inspects one capture record, appending and returning any alerts.
    /// `capture_ref` is the record's index in the capture log.
    pub fn inspect(&mut self, record: &CaptureRecord, capture_ref: usize) -> Vec<AlertRecord> {
        let new = match record.kind {
            CaptureKind::Arp => self.inspect_arp(record, capture_ref),
            CaptureKind::Transport => self.inspect_dnp3(record, capture_ref),
        };
        self.alerts.extend(new.iter().cloned());
        new
    }

    fn inspect_arp(&mut self, record: &CaptureRecord, capture_ref: usize) -> Vec<AlertRecord> {
        let Some(arp) = record.arp else {
            return Vec::new();
        };
        let mut alerts = Vec::new();
        let mut push = |rule: RuleId| {
            alerts.push(AlertRecord {
                ts_us: record.ts_us,
                rule,
                message: rule.message().to_string(),
                src_ip: arp.sender_ip,
                dst_ip: arp.target_ip,
                capture_ref: Some(capture_ref),
            });
        };

        if let Some(&expected) = self.whitelist.get(&arp.sender_ip) {
            if arp.sender_mac != expected || record.src_mac != expected {
                push(RuleId::R1);
            }
        }
        let is_reply = arp.op == crate::netsim::ArpOp::Reply;
        if is_reply && arp.target_mac != MacAddr([0; 6]) {
            if let Some(&expected) = self.whitelist.get(&arp.target_ip) {
                if arp.target_mac != expected || record.dst_mac != arp.target_mac {
                    push(RuleId::R2);
                }
            }
        }
        if is_reply {
            if let Some(&cached) = self.shadow_cache.get(&arp.sender_ip) {
                if cached != arp.sender_mac {
                    push(RuleId::R3);
                }
            }
        }
        self.shadow_cache.insert(arp.sender_ip, arp.sender_mac);
        alerts
    }

    fn inspect_dnp3(&mut self, record: &CaptureRecord, capture_ref: usize) -> Vec<AlertRecord> {
        let (Some(transport), Some(src_ip), Some(dst_ip)) =
            (record.transport, record.src_ip, record.dst_ip)
        else {
            return Vec::new();
        };
        if transport.dst_port != self.dnp3_port && transport.src_port != self.dnp3_port {
            return Vec::new();
        }
        let Some(summary) = &record.dnp3 else {
            return Vec::new();
        };
        let mut alerts = Vec::new();
        let mut push = |rule: RuleId| {
            alerts.push(AlertRecord {
                ts_us: record.ts_us,
                rule,
                message: rule.message().to_string(),
                src_ip,
                dst_ip,
                capture_ref: Some(capture_ref),
            });
        };

        if !summary.crc_ok {
            // check_crc gates the rules: a frame failing CRC validation is
            // alerted by the preprocessor and not matched further.
            push(RuleId::CrcFail);
            return alerts;
        }
        let toward_target =
            transport.dst_port == self.dnp3_port && self.dnp3_targets.contains(&dst_ip);
        if toward_target && summary.function == 0x05 {
            push(RuleId::R4);
        }
        if toward_target && summary.function == 0x04 {
            push(RuleId::R5);
        }
        alerts
    }
}

/// The LAN-side view Snort sees at the router: the router's own frames
/// plus everything captured promiscuously, each wire transmission exactly
/// once.
pub fn router_lan_view<'a>(
    records: &'a [CaptureRecord],
    router_node: &'a str,
) -> impl Iterator<Item = (usize, &'a CaptureRecord)> {
    records
        .iter()
        .enumerate()
        .filter(move |(_, r)| r.node == router_node && r.medium == "lan")
}

// ---------------------------------------------------------------------
// Fast-alert log format
// ---------------------------------------------------------------------

pub const ALERT_LOG_HEADER: &str = "# sublab-alerts/1";

/// `[ts_ms] [RULE] "message" src -> dst`
pub fn render_alert_line(alert: &AlertRecord) -> String {
    format!(
        "[{}] [{}] \"{}\" {} -> {}",
        crate::netsim::ms_string(alert.ts_us),
        alert.rule.name(),
        alert.message,
        alert.src_ip,
        alert.dst_ip
    )
}

pub fn render_alert_log(alerts: &[AlertRecord]) -> String {
    let mut out = String::from(ALERT_LOG_HEADER);
    out.push('\n');
    for alert in alerts {
        out.push_str(&render_alert_line(alert));
        out.push('\n');
    }
    out
}

/// Parses one fast-alert line back into a record (without a capture
/// reference, which is in-memory linkage only).
pub fn parse_alert_line(line: &str) -> Option<AlertRecord> {
    let rest = line.strip_prefix('[')?;
    let (ts, rest) = rest.split_once("] [")?;
    let (rule, rest) = rest.split_once("] \"")?;
    let (message, rest) = rest.rsplit_once("\" ")?;
    let (src, dst) = rest.split_once(" -> ")?;
    Some(AlertRecord {
        ts_us: crate::netsim::parse_ms(ts)?,
        rule: RuleId::from_name(rule)?,
        message: message.to_string(),
        src_ip: src.parse().ok()?,
        dst_ip: dst.parse().ok()?,
        capture_ref: None,
    })
}

pub fn parse_alert_log(text: &str) -> Vec<AlertRecord> {
    text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).filter_map(parse_alert_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{ArpOp, ArpPacket, Direction, EtherFrame, FramePayload};

    const ROUTER_MAC: MacAddr = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x00, 0x02]);
    const OUTSTATION_MAC: MacAddr = MacAddr([0x00, 0x50, 0x56, 0x9C, 0x9D, 0x70]);
    const ADVERSARY_MAC: MacAddr = MacAddr([0x00, 0x0C, 0x29, 0x3F, 0x19, 0x01]);
    const ROUTER_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 4);
    const OUTSTATION_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 5);

    fn ids() -> Ids {
        Ids::new(IdsConfig {
            whitelist: vec![
                WhitelistEntry { ip: ROUTER_IP, mac: ROUTER_MAC },
                WhitelistEntry { ip: OUTSTATION_IP, mac: OUTSTATION_MAC },
            ],
            dnp3_port: 20000,
            dnp3_targets: [OUTSTATION_IP].into_iter().collect(),
        })
    }

    fn arp_record(eth_src: MacAddr, eth_dst: MacAddr, arp: ArpPacket) -> CaptureRecord {
        CaptureRecord::from_frame(
            1_000_000,
            "SubRouter",
            "lan",
            Direction::Rx,
            &EtherFrame { src_mac: eth_src, dst_mac: eth_dst, payload: FramePayload::Arp(arp) },
        )
    }

    #[test]
    fn legitimate_arp_for_whitelisted_pair_is_silent() {
        let mut ids = ids();
        let request = arp_record(
            ROUTER_MAC,
            MacAddr([0xFF; 6]),
            ArpPacket {
                op: ArpOp::Request,
                sender_mac: ROUTER_MAC,
                sender_ip: ROUTER_IP,
                target_mac: MacAddr([0; 6]),
                target_ip: OUTSTATION_IP,
            },
        );
        let reply = arp_record(
            OUTSTATION_MAC,
            ROUTER_MAC,
            ArpPacket {
                op: ArpOp::Reply,
                sender_mac: OUTSTATION_MAC,
                sender_ip: OUTSTATION_IP,
                target_mac: ROUTER_MAC,
                target_ip: ROUTER_IP,
            },
        );
        assert!(ids.inspect(&request, 0).is_empty());
        assert!(ids.inspect(&reply, 1).is_empty());
    }

    #[test]
    fn poison_after_legitimate_traffic_raises_r1_and_r3() {
        let mut ids = ids();
        // the shadow cache learns the true binding first
        let legit = arp_record(
            OUTSTATION_MAC,
            ROUTER_MAC,
            ArpPacket {
                op: ArpOp::Reply,
                sender_mac: OUTSTATION_MAC,
                sender_ip: OUTSTATION_IP,
                target_mac: ROUTER_MAC,
                target_ip: ROUTER_IP,
            },
        );
        ids.inspect(&legit, 0);

        let poison = arp_record(
            ADVERSARY_MAC,
            ROUTER_MAC,
            ArpPacket {
                op: ArpOp::Reply,
                sender_mac: ADVERSARY_MAC,
                sender_ip: OUTSTATION_IP,
                target_mac: ROUTER_MAC,
                target_ip: ROUTER_IP,
            },
        );
        let alerts = ids.inspect(&poison, 1);
        let rules: Vec<RuleId> = alerts.iter().map(|a| a.rule).collect();
        assert_eq!(rules, vec![RuleId::R1, RuleId::R3]);
        assert_eq!(alerts[0].message, "ARPSPOOF_ETHERFRAME_ARP_MISMATCH_SRC");
        assert_eq!(alerts[1].message, "ARPSPOOF_ARP_CACHE_OVERWRITE_ATTACK");
    }

    #[test]
    fn arp_for_non_whitelisted_ip_is_out_of_scope() {
        let mut ids = ids();
        let other = arp_record(
            ADVERSARY_MAC,
            ROUTER_MAC,
            ArpPacket {
                op: ArpOp::Reply,
                sender_mac: ADVERSARY_MAC,
                sender_ip: Ipv4Addr::new(192, 168, 0, 100),
                target_mac: ROUTER_MAC,
                target_ip: ROUTER_IP,
            },
        );
        assert!(ids.inspect(&other, 0).is_empty());
    }

    #[test]
    fn reply_with_mismatched_target_raises_r2() {
        let mut ids = ids();
        let reply = arp_record(
            OUTSTATION_MAC,
            ADVERSARY_MAC,
            ArpPacket {
                op: ArpOp::Reply,
                sender_mac: OUTSTATION_MAC,
                sender_ip: OUTSTATION_IP,
                target_mac: ADVERSARY_MAC, // claims the router's IP maps elsewhere
                target_ip: ROUTER_IP,
            },
        );
        let rules: Vec<RuleId> = ids.inspect(&reply, 0).iter().map(|a| a.rule).collect();
        assert!(rules.contains(&RuleId::R2));
    }

    fn transport_record(payload: Vec<u8>, dst_port: u16) -> CaptureRecord {
        use crate::netsim::Segment;
        let mut seg = Segment {
            src_ip: Ipv4Addr::new(172, 16, 0, 2),
            dst_ip: OUTSTATION_IP,
            src_port: 49152,
            dst_port,
            seq: 1,
            ack: 1,
            retransmission: 0,
            checksum: 0,
            payload,
        };
        seg.refresh_checksum();
        CaptureRecord::from_frame(
            2_000_000,
            "SubRouter",
            "lan",
            Direction::Rx,
            &EtherFrame {
                src_mac: ROUTER_MAC,
                dst_mac: OUTSTATION_MAC,
                payload: FramePayload::Transport(seg),
            },
        )
    }

    #[test]
    fn direct_operate_fires_r4_exactly_once() {
        let mut ids = ids();
        let frame = crate::dnp3::encode_frame(
            &crate::dnp3::build_direct_operate_binary(1, 100, 7, 0x41).unwrap(),
        )
        .unwrap();
        let record = transport_record(frame, 20000);
        let alerts = ids.inspect(&record, 0);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].rule, RuleId::R4);
        assert_eq!(alerts[0].message, "DNP3 Snort DIRECT OPERATE");
    }

    #[test]
    fn operate_function_fires_r5() {
        use crate::dnp3::*;
        let packet = Dnp3Packet {
            link: LinkHeader { control: 0xC4, destination: 1, source: 100 },
            transport: TransportOctet::single(0),
            app: ApplicationFragment {
                app_control: 0xC0,
                function: FunctionCode::Operate,
                objects: vec![ObjectBlock::Points(
                    PointBlock::new(PointType::Bo, 7, vec![0x41]).unwrap(),
                )],
            },
        };
        let mut ids = ids();
        let record = transport_record(encode_frame(&packet).unwrap(), 20000);
        let alerts = ids.inspect(&record, 0);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].rule, RuleId::R5);
    }

    #[test]
    fn corrupted_crc_fires_crc_fail_and_suppresses_r4() {
        let mut ids = ids();
        let mut frame = crate::dnp3::encode_frame(
            &crate::dnp3::build_direct_operate_binary(1, 100, 7, 0x41).unwrap(),
        )
        .unwrap();
        let last = frame.len() - 1;
        frame[last] ^= 0xFF; // stale chunk CRC
        let record = transport_record(frame, 20000);
        let alerts = ids.inspect(&record, 0);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].rule, RuleId::CrcFail);
    }

    #[test]
    fn read_traffic_produces_no_alert() {
        let mut ids = ids();
        let frame =
            crate::dnp3::encode_frame(&crate::dnp3::build_read_request(1, 100)).unwrap();
        assert!(ids.inspect(&transport_record(frame, 20000), 0).is_empty());
    }

    #[test]
    fn other_ports_are_ignored() {
        let mut ids = ids();
        let frame = crate::dnp3::encode_frame(
            &crate::dnp3::build_direct_operate_binary(1, 100, 7, 0x41).unwrap(),
        )
        .unwrap();
        assert!(ids.inspect(&transport_record(frame, 8080), 0).is_empty());
    }

    #[test]
    fn alert_log_round_trips() {
        let alert = AlertRecord {
            ts_us: 120_000_123,
            rule: RuleId::R1,
            message: RuleId::R1.message().to_string(),
            src_ip: OUTSTATION_IP,
            dst_ip: ROUTER_IP,
            capture_ref: Some(7),
        };
        let line = render_alert_line(&alert);
        assert_eq!(
            line,
            "[120000.123] [R1] \"ARPSPOOF_ETHERFRAME_ARP_MISMATCH_SRC\" 192.168.0.5 -> 192.168.0.4"
        );
        let parsed = parse_alert_line(&line).unwrap();
        assert_eq!(parsed.ts_us, alert.ts_us);
        assert_eq!(parsed.rule, alert.rule);
        assert_eq!(parsed.message, alert.message);
        assert_eq!(parsed.src_ip, alert.src_ip);
        assert_eq!(parsed.dst_ip, alert.dst_ip);

        let log = render_alert_log(&[alert]);
        assert!(log.starts_with(ALERT_LOG_HEADER));
        assert_eq!(parse_alert_log(&log).len(), 1);
        // an empty run still yields the header line
        assert_eq!(render_alert_log(&[]), format!("{ALERT_LOG_HEADER}\n"));
    }
}
