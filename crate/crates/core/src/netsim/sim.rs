//! The event loop, nodes, ARP handling, routing and the reliable transport.

use super::capture::{CaptureRecord, Direction};
use super::frame::{transport_checksum, ArpOp, ArpPacket, EtherFrame, FramePayload, MacAddr, Segment};
use super::{NetError, MAC_BROADCAST};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Medium {
    Lan,
    Wan,
}

impl Medium {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lan => "lan",
            Self::Wan => "wan",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Interface {
    medium: Medium,
    mac: MacAddr,
    ip: Ipv4Addr,
}

#[derive(Debug, Clone, Copy)]
struct ArpEntry {
    mac: MacAddr,
    #[allow(dead_code)]
    updated_at_us: u64,
}

#[derive(Debug)]
struct Node {
    name: String,
    interfaces: Vec<Interface>,
    arp: BTreeMap<Ipv4Addr, ArpEntry>,
    gateway: Option<Ipv4Addr>,
    is_router: bool,
    /// Transport frames surface as raw occurrences instead of being
    /// processed by the transport layer (the adversary's hook).
    raw_delivery: bool,
    tapped: bool,
    promiscuous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnSide {
    A,
    B,
}

impl ConnSide {
    fn other(self) -> Self {
        match self {
            Self::A => Self::B,
            Self::B => Self::A,
        }
    }
}

#[derive(Debug)]
struct UnackedSegment {
    seq: u32,
    ack_at_send: u32,
    payload: Vec<u8>,
    retransmissions: u32,
    gen: u64,
}

#[derive(Debug)]
struct ConnEnd {
    node: NodeId,
    ip: Ipv4Addr,
    port: u16,
    /// Next byte position to send.
    snd_nxt: u32,
    /// Next byte position expected from the peer.
    rcv_nxt: u32,
    /// Highest cumulative acknowledgement received from the peer.
    peer_acked: u32,
    unacked: Vec<UnackedSegment>,
}

#[derive(Debug)]
struct Conn {
    a: ConnEnd,
    b: ConnEnd,
    closed: bool,
}

impl Conn {
    fn end(&self, side: ConnSide) -> &ConnEnd {
        match side {
            ConnSide::A => &self.a,
            ConnSide::B => &self.b,
        }
    }

    fn end_mut(&mut self, side: ConnSide) -> &mut ConnEnd {
        match side {
            ConnSide::A => &mut self.a,
            ConnSide::B => &mut self.b,
        }
    }
}

#[derive(Debug)]
enum EventKind {
    Deliver { medium: Medium, frame: EtherFrame },
    Rto { conn: ConnId, side: ConnSide, seq: u32, gen: u64 },
    ArpTimeout { node: NodeId, ip: Ipv4Addr },
    Hook { tag: u64 },
}

#[derive(Debug)]
struct QueuedEvent {
    at_us: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.at_us == other.at_us && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_us, self.seq).cmp(&(other.at_us, other.seq))
    }
}

/// Transport metadata attached to delivered application data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegMeta {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub len: u32,
}

/// An application-visible event surfaced by the simulation.
#[derive(Debug, Clone)]
pub enum Occurrence {
    /// A caller-scheduled hook fired.
    Hook { at_us: u64, tag: u64 },
    /// In-order application data arrived on a transport connection.
    AppData {
        at_us: u64,
        conn: ConnId,
        receiver: NodeId,
        meta: SegMeta,
        payload: Vec<u8>,
    },
    /// A transport frame reached a raw-delivery node (the adversary).
    RawFrame { at_us: u64, node: NodeId, frame: EtherFrame },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub lan_latency_us: u64,
    pub wan_latency_us: u64,
    pub rto_us: u64,
    pub arp_timeout_us: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lan_latency_us: 1_000,
            wan_latency_us: 1_000,
            rto_us: 7_000_000,
            arp_timeout_us: 1_000_000,
        }
    }
}

/// Pending frames waiting on an ARP resolution, keyed by resolver node and
/// the IP being resolved.
#[derive(Debug)]
struct PendingSend {
    medium: Medium,
    src_mac: MacAddr,
    segment: Segment,
}

pub struct Sim {
    cfg: SimConfig,
    now_us: u64,
    event_seq: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    nodes: Vec<Node>,
    subnets: BTreeMap<Medium, (Ipv4Addr, u32)>,
    conns: Vec<Conn>,
    captures: Vec<CaptureRecord>,
    pending_arp: BTreeMap<(NodeId, Ipv4Addr), Vec<PendingSend>>,
    buffered: VecDeque<Occurrence>,
    /// Frames dropped for want of an ARP answer.
    pub arp_drops: u64,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Self {
        let mut subnets = BTreeMap::new();
        subnets.insert(Medium::Lan, (Ipv4Addr::new(192, 168, 0, 0), 24));
        subnets.insert(Medium::Wan, (Ipv4Addr::new(172, 16, 0, 0), 24));
        Self {
            cfg,
            now_us: 0,
            event_seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            subnets,
            conns: Vec::new(),
            captures: Vec::new(),
            pending_arp: BTreeMap::new(),
            buffered: VecDeque::new(),
            arp_drops: 0,
        }
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn captures(&self) -> &[CaptureRecord] {
        &self.captures
    }

    pub fn node_name(&self, node: NodeId) -> &str {
        &self.nodes[node.0 as usize].name
    }

    /// (name, medium name, mac, ip) for every interface, in node order.
    pub fn roster(&self) -> Vec<(String, String, MacAddr, Ipv4Addr)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            for ifc in &node.interfaces {
                out.push((node.name.clone(), ifc.medium.name().to_string(), ifc.mac, ifc.ip));
            }
        }
        out
    }

    pub fn add_node(&mut self, name: &str) -> NodeId {
        self.nodes.push(Node {
            name: name.to_string(),
            interfaces: Vec::new(),
            arp: BTreeMap::new(),
            gateway: None,
            is_router: false,
            raw_delivery: false,
            tapped: false,
            promiscuous: false,
        });
        NodeId(self.nodes.len() as u32 - 1)
    }

    pub fn attach(&mut self, node: NodeId, medium: Medium, mac: MacAddr, ip: Ipv4Addr) {
        self.nodes[node.0 as usize].interfaces.push(Interface { medium, mac, ip });
    }

    pub fn set_gateway(&mut self, node: NodeId, gateway: Ipv4Addr) {
        self.nodes[node.0 as usize].gateway = Some(gateway);
    }

    pub fn set_router(&mut self, node: NodeId) {
        self.nodes[node.0 as usize].is_router = true;
    }

    pub fn set_raw_delivery(&mut self, node: NodeId) {
        self.nodes[node.0 as usize].raw_delivery = true;
    }

    /// Attaches a capture tap: the node's transmissions and receptions are
    /// recorded. With `promiscuous`, every frame on the node's media is
    /// recorded, not just addressed ones.
    pub fn tap(&mut self, node: NodeId, promiscuous: bool) {
        self.nodes[node.0 as usize].tapped = true;
        self.nodes[node.0 as usize].promiscuous = promiscuous;
    }

    pub fn mac_of(&self, node: NodeId, medium: Medium) -> Option<MacAddr> {
        self.interface(node, medium).map(|i| i.mac)
    }

    pub fn ip_of(&self, node: NodeId, medium: Medium) -> Option<Ipv4Addr> {
        self.interface(node, medium).map(|i| i.ip)
    }

    fn interface(&self, node: NodeId, medium: Medium) -> Option<Interface> {
        self.nodes[node.0 as usize].interfaces.iter().find(|i| i.medium == medium).copied()
    }

    fn in_subnet(&self, medium: Medium, ip: Ipv4Addr) -> bool {
        let (net, prefix) = self.subnets[&medium];
        let mask = u32::MAX << (32 - prefix);
        (u32::from(ip) & mask) == (u32::from(net) & mask)
    }

    fn latency(&self, medium: Medium) -> u64 {
        match medium {
            Medium::Lan => self.cfg.lan_latency_us,
            Medium::Wan => self.cfg.wan_latency_us,
        }
    }

    fn owner_of_mac(&self, medium: Medium, mac: MacAddr) -> Option<NodeId> {
        self.nodes.iter().position(|n| {
            n.interfaces.iter().any(|i| i.medium == medium && i.mac == mac)
        })
        .map(|i| NodeId(i as u32))
    }

    // ------------------------------------------------------------------
    // Scheduling
    // ------------------------------------------------------------------

    fn push_event(&mut self, at_us: u64, kind: EventKind) {
        let seq = self.event_seq;
        self.event_seq += 1;
        self.queue.push(Reverse(QueuedEvent { at_us, seq, kind }));
    }

    /// Schedules a caller-visible hook event.
    pub fn schedule_hook(&mut self, at_us: u64, tag: u64) -> Result<(), NetError> {
        if at_us < self.now_us {
            return Err(NetError::SchedulingInPast { at_us, now_us: self.now_us });
        }
        self.push_event(at_us, EventKind::Hook { tag });
        Ok(())
    }

    /// Advances the clock, processing every event up to `until_us`, and
    /// returns the next application-visible occurrence, if any. The clock
    /// never runs past `until_us`.
    pub fn next_occurrence(&mut self, until_us: u64) -> Option<Occurrence> {
        loop {
            if let Some(occ) = self.buffered.pop_front() {
                return Some(occ);
            }
            match self.queue.peek() {
                Some(Reverse(ev)) if ev.at_us <= until_us => {
                    let Reverse(ev) = self.queue.pop().expect("peeked");
                    self.now_us = ev.at_us;
                    self.dispatch(ev.kind);
                }
                _ => {
                    self.now_us = self.now_us.max(until_us);
                    return None;
                }
            }
        }
    }

    /// Processes all events up to `t_us`; surfaced occurrences stay
    /// buffered for later `next_occurrence` calls.
    pub fn run_until(&mut self, t_us: u64) {
        let mut stash = VecDeque::new();
        while let Some(occ) = self.next_occurrence(t_us) {
            stash.push_back(occ);
        }
        self.buffered = stash;
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Deliver { medium, frame } => self.deliver(medium, frame),
            EventKind::Rto { conn, side, seq, gen } => self.handle_rto(conn, side, seq, gen),
            EventKind::ArpTimeout { node, ip } => {
                if let Some(pending) = self.pending_arp.remove(&(node, ip)) {
                    self.arp_drops += pending.len() as u64;
                }
            }
            EventKind::Hook { tag } => {
                self.buffered.push_back(Occurrence::Hook { at_us: self.now_us, tag });
            }
        }
    }

    // ------------------------------------------------------------------
    // Frame transmission and delivery
    // ------------------------------------------------------------------

    /// Puts a frame on the wire from `node`. Records a Tx capture when the
    /// node is tapped and schedules delivery after the medium latency.
    pub fn transmit(&mut self, node: NodeId, medium: Medium, frame: EtherFrame) {
        if self.nodes[node.0 as usize].tapped {
            let record = CaptureRecord::from_frame(
                self.now_us,
                &self.nodes[node.0 as usize].name,
                medium.name(),
                Direction::Tx,
                &frame,
            );
            self.captures.push(record);
        }
        let at = self.now_us + self.latency(medium);
        self.push_event(at, EventKind::Deliver { medium, frame });
    }

    fn deliver(&mut self, medium: Medium, frame: EtherFrame) {
        // Promiscuous taps and the addressed recipient record on arrival;
        // the transmitter already recorded on send.
        let sender = self.owner_of_mac(medium, frame.src_mac);
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            if !node.tapped || Some(NodeId(idx as u32)) == sender {
                continue;
            }
            let attached = node.interfaces.iter().any(|i| i.medium == medium);
            if !attached {
                continue;
            }
            let addressed = frame.dst_mac == MAC_BROADCAST
                || node.interfaces.iter().any(|i| i.medium == medium && i.mac == frame.dst_mac);
            if node.promiscuous || addressed {
                let record = CaptureRecord::from_frame(
                    self.now_us,
                    &node.name,
                    medium.name(),
                    Direction::Rx,
                    &frame,
                );
                self.captures.push(record);
            }
        }

        if frame.dst_mac == MAC_BROADCAST {
            let recipients: Vec<NodeId> = (0..self.nodes.len() as u32)
                .map(NodeId)
                .filter(|&n| Some(n) != sender)
                .filter(|&n| self.interface(n, medium).is_some())
                .collect();
            for node in recipients {
                self.handle_frame(node, medium, frame.clone());
            }
        } else if let Some(node) = self.owner_of_mac(medium, frame.dst_mac) {
            self.handle_frame(node, medium, frame);
        }
        // Frames to an unknown MAC vanish on the wire.
    }

    fn handle_frame(&mut self, node: NodeId, medium: Medium, frame: EtherFrame) {
        match frame.payload {
            FramePayload::Arp(arp) => self.handle_arp(node, medium, frame.src_mac, arp),
            FramePayload::Transport(segment) => {
                if self.nodes[node.0 as usize].raw_delivery {
                    self.buffered.push_back(Occurrence::RawFrame {
                        at_us: self.now_us,
                        node,
                        frame: EtherFrame {
                            src_mac: frame.src_mac,
                            dst_mac: frame.dst_mac,
                            payload: FramePayload::Transport(segment),
                        },
                    });
                } else if self.is_local_ip(node, segment.dst_ip) {
                    self.transport_receive(node, segment);
                } else if self.nodes[node.0 as usize].is_router {
                    self.route_forward(node, segment);
                }
                // Endpoints silently drop transit traffic that is not theirs.
            }
        }
    }

    fn is_local_ip(&self, node: NodeId, ip: Ipv4Addr) -> bool {
        self.nodes[node.0 as usize].interfaces.iter().any(|i| i.ip == ip)
    }

    // ------------------------------------------------------------------
    // ARP
    // ------------------------------------------------------------------

    fn handle_arp(&mut self, node: NodeId, medium: Medium, _eth_src: MacAddr, arp: ArpPacket) {
        // Opportunistic cache update from the sender binding. Unsolicited
        // replies are accepted, which is exactly the weakness cache
        // poisoning exploits.
        if !arp.sender_ip.is_unspecified() {
            let now = self.now_us;
            self.nodes[node.0 as usize]
                .arp
                .insert(arp.sender_ip, ArpEntry { mac: arp.sender_mac, updated_at_us: now });
            self.flush_pending(node, arp.sender_ip, arp.sender_mac);
        }

        if arp.op == ArpOp::Request {
            if let Some(ifc) = self.interface(node, medium).filter(|i| i.ip == arp.target_ip) {
                let reply = ArpPacket {
                    op: ArpOp::Reply,
                    sender_mac: ifc.mac,
                    sender_ip: ifc.ip,
                    target_mac: arp.sender_mac,
                    target_ip: arp.sender_ip,
                };
                self.transmit(
                    node,
                    medium,
                    EtherFrame {
                        src_mac: ifc.mac,
                        dst_mac: arp.sender_mac,
                        payload: FramePayload::Arp(reply),
                    },
                );
            }
        }
    }

    fn flush_pending(&mut self, node: NodeId, ip: Ipv4Addr, mac: MacAddr) {
        if let Some(pending) = self.pending_arp.remove(&(node, ip)) {
            for send in pending {
                self.transmit(
                    node,
                    send.medium,
                    EtherFrame {
                        src_mac: send.src_mac,
                        dst_mac: mac,
                        payload: FramePayload::Transport(send.segment),
                    },
                );
            }
        }
    }

    fn send_arp_request(&mut self, node: NodeId, medium: Medium, ip: Ipv4Addr) {
        let ifc = self.interface(node, medium).expect("requester attached to medium");
        let request = ArpPacket {
            op: ArpOp::Request,
            sender_mac: ifc.mac,
            sender_ip: ifc.ip,
            target_mac: MacAddr([0; 6]),
            target_ip: ip,
        };
        self.transmit(
            node,
            medium,
            EtherFrame {
                src_mac: ifc.mac,
                dst_mac: MAC_BROADCAST,
                payload: FramePayload::Arp(request),
            },
        );
    }

    /// Resolves `ip` from `node`, issuing a broadcast request/reply
    /// exchange when the cache is cold. Advances simulated time while
    /// waiting; surfaced occurrences are buffered.
    pub fn arp_resolve_blocking(&mut self, node: NodeId, ip: Ipv4Addr) -> Result<MacAddr, NetError> {
        if let Some(entry) = self.nodes[node.0 as usize].arp.get(&ip) {
            return Ok(entry.mac);
        }
        let medium = self
            .nodes[node.0 as usize]
            .interfaces
            .iter()
            .map(|i| i.medium)
            .find(|&m| self.in_subnet(m, ip))
            .ok_or(NetError::NoRoute { ip })?;
        self.send_arp_request(node, medium, ip);
        let deadline = self.now_us + self.cfg.arp_timeout_us;
        loop {
            if let Some(entry) = self.nodes[node.0 as usize].arp.get(&ip) {
                return Ok(entry.mac);
            }
            match self.queue.peek() {
                Some(Reverse(ev)) if ev.at_us <= deadline => {
                    let Reverse(ev) = self.queue.pop().expect("peeked");
                    self.now_us = ev.at_us;
                    self.dispatch(ev.kind);
                }
                _ => {
                    self.now_us = self.now_us.max(deadline);
                    return Err(NetError::ArpTimeout { ip });
                }
            }
        }
    }

    /// Sends an unsolicited ARP reply binding `impersonated_ip` to the
    /// attacker's hardware address in the victim's cache.
    pub fn arp_poison(&mut self, attacker: NodeId, victim: NodeId, impersonated_ip: Ipv4Addr) {
        let attacker_if = self.interface(attacker, Medium::Lan).expect("attacker on LAN");
        let victim_if = self.interface(victim, Medium::Lan).expect("victim on LAN");
        let poison = ArpPacket {
            op: ArpOp::Reply,
            sender_mac: attacker_if.mac,
            sender_ip: impersonated_ip,
            target_mac: victim_if.mac,
            target_ip: victim_if.ip,
        };
        self.transmit(
            attacker,
            Medium::Lan,
            EtherFrame {
                src_mac: attacker_if.mac,
                dst_mac: victim_if.mac,
                payload: FramePayload::Arp(poison),
            },
        );
    }

    /// Corrective ARP reply re-binding `impersonated_ip` to its true owner,
    /// sent by the attacker when the intrusion is stopped.
    pub fn arp_restore(
        &mut self,
        attacker: NodeId,
        victim: NodeId,
        impersonated_ip: Ipv4Addr,
        true_mac: MacAddr,
    ) {
        let attacker_if = self.interface(attacker, Medium::Lan).expect("attacker on LAN");
        let victim_if = self.interface(victim, Medium::Lan).expect("victim on LAN");
        let correction = ArpPacket {
            op: ArpOp::Reply,
            sender_mac: true_mac,
            sender_ip: impersonated_ip,
            target_mac: victim_if.mac,
            target_ip: victim_if.ip,
        };
        self.transmit(
            attacker,
            Medium::Lan,
            EtherFrame {
                src_mac: attacker_if.mac,
                dst_mac: victim_if.mac,
                payload: FramePayload::Arp(correction),
            },
        );
    }

    // ------------------------------------------------------------------
    // IP send path and routing
    // ------------------------------------------------------------------

    /// Sends a transport segment from `node`, resolving the next hop. A
    /// cold ARP cache queues the segment and emits a request; resolution
    /// failures surface as dropped frames after the ARP timeout.
    fn send_segment(&mut self, node: NodeId, segment: Segment) {
        let dst_ip = segment.dst_ip;
        let local = self
            .nodes[node.0 as usize]
            .interfaces
            .iter()
            .map(|i| i.medium)
            .find(|&m| self.in_subnet(m, dst_ip));
        let (medium, nexthop) = match local {
            Some(medium) => (medium, dst_ip),
            None => {
                let Some(gateway) = self.nodes[node.0 as usize].gateway else {
                    self.arp_drops += 1;
                    return;
                };
                let Some(medium) = self
                    .nodes[node.0 as usize]
                    .interfaces
                    .iter()
                    .map(|i| i.medium)
                    .find(|&m| self.in_subnet(m, gateway))
                else {
                    self.arp_drops += 1;
                    return;
                };
                (medium, gateway)
            }
        };
        let src_mac = self.interface(node, medium).expect("attached").mac;
        if let Some(entry) = self.nodes[node.0 as usize].arp.get(&nexthop) {
            let dst_mac = entry.mac;
            self.transmit(
                node,
                medium,
                EtherFrame { src_mac, dst_mac, payload: FramePayload::Transport(segment) },
            );
        } else {
            let first = !self.pending_arp.contains_key(&(node, nexthop));
            self.pending_arp
                .entry((node, nexthop))
                .or_default()
                .push(PendingSend { medium, src_mac, segment });
            if first {
                self.send_arp_request(node, medium, nexthop);
                let at = self.now_us + self.cfg.arp_timeout_us;
                self.push_event(at, EventKind::ArpTimeout { node, ip: nexthop });
            }
        }
    }

    fn route_forward(&mut self, router: NodeId, segment: Segment) {
        // One-armed forwarding between the two media the router joins.
        self.send_segment(router, segment);
    }

    // ------------------------------------------------------------------
    // Reliable transport
    // ------------------------------------------------------------------

    /// Opens a pre-established connection (no handshake is simulated).
    pub fn open_conn(
        &mut self,
        a: (NodeId, Ipv4Addr, u16),
        b: (NodeId, Ipv4Addr, u16),
    ) -> ConnId {
        self.conns.push(Conn {
            a: ConnEnd {
                node: a.0,
                ip: a.1,
                port: a.2,
                snd_nxt: 1,
                rcv_nxt: 1,
                peer_acked: 1,
                unacked: Vec::new(),
            },
            b: ConnEnd {
                node: b.0,
                ip: b.1,
                port: b.2,
                snd_nxt: 1,
                rcv_nxt: 1,
                peer_acked: 1,
                unacked: Vec::new(),
            },
            closed: false,
        });
        ConnId(self.conns.len() as u32 - 1)
    }

    pub fn close_conn(&mut self, conn: ConnId) {
        self.conns[conn.0 as usize].closed = true;
    }

    /// The stream position the given side will assign to its next segment.
    pub fn conn_snd_nxt(&self, conn: ConnId, side: ConnSide) -> u32 {
        self.conns[conn.0 as usize].end(side).snd_nxt
    }

    /// Sends application data on a connection. The segment is tracked until
    /// a covering acknowledgement arrives; the retransmission timer re-sends
    /// it (flagged) every RTO interval until then.
    pub fn send_app_data(
        &mut self,
        conn_id: ConnId,
        side: ConnSide,
        payload: Vec<u8>,
    ) -> Result<SegMeta, NetError> {
        let conn = self.conns.get(conn_id.0 as usize).ok_or(NetError::UnknownConn)?;
        if conn.closed {
            return Err(NetError::ConnClosed);
        }
        let peer = conn.end(side.other());
        let (dst_ip, dst_port) = (peer.ip, peer.port);
        let now_gen = self.event_seq;
        let conn = &mut self.conns[conn_id.0 as usize];
        let end = conn.end_mut(side);
        let seq = end.snd_nxt;
        let ack = end.rcv_nxt;
        let len = payload.len() as u32;
        end.snd_nxt += len;
        end.unacked.push(UnackedSegment {
            seq,
            ack_at_send: ack,
            payload: payload.clone(),
            retransmissions: 0,
            gen: now_gen,
        });
        let (node, src_ip, src_port) = (end.node, end.ip, end.port);
        let mut segment = Segment {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            seq,
            ack,
            retransmission: 0,
            checksum: 0,
            payload,
        };
        segment.refresh_checksum();
        let meta = SegMeta { src_ip, dst_ip, src_port, dst_port, seq, ack, len };
        let at = self.now_us + self.cfg.rto_us;
        self.push_event(at, EventKind::Rto { conn: conn_id, side, seq, gen: now_gen });
        self.send_segment(node, segment);
        Ok(meta)
    }

    fn handle_rto(&mut self, conn_id: ConnId, side: ConnSide, seq: u32, gen: u64) {
        let next_gen = self.event_seq;
        let conn = &mut self.conns[conn_id.0 as usize];
        let peer = conn.end(side.other());
        let (dst_ip, dst_port) = (peer.ip, peer.port);
        let end = conn.end_mut(side);
        let Some(entry) = end.unacked.iter_mut().find(|u| u.seq == seq && u.gen == gen) else {
            return; // acknowledged in the meantime
        };
        entry.retransmissions += 1;
        entry.gen = next_gen;
        let mut segment = Segment {
            src_ip: end.ip,
            dst_ip,
            src_port: end.port,
            dst_port,
            seq,
            ack: entry.ack_at_send,
            retransmission: entry.retransmissions,
            checksum: 0,
            payload: entry.payload.clone(),
        };
        segment.refresh_checksum();
        let node = end.node;
        let at = self.now_us + self.cfg.rto_us;
        self.push_event(at, EventKind::Rto { conn: conn_id, side, seq, gen: next_gen });
        self.send_segment(node, segment);
    }

    fn transport_receive(&mut self, node: NodeId, segment: Segment) {
        if transport_checksum(&segment) != segment.checksum {
            return; // corrupted on the wire
        }
        let Some((conn_idx, side)) = self.conns.iter().enumerate().find_map(|(i, c)| {
            for side in [ConnSide::A, ConnSide::B] {
                let me = c.end(side);
                let peer = c.end(side.other());
                if me.node == node
                    && me.ip == segment.dst_ip
                    && me.port == segment.dst_port
                    && peer.ip == segment.src_ip
                    && peer.port == segment.src_port
                {
                    return Some((i, side));
                }
            }
            None
        }) else {
            return; // not for any open conversation
        };
        let conn_id = ConnId(conn_idx as u32);

        // Cumulative acknowledgement processing.
        {
            let end = self.conns[conn_idx].end_mut(side);
            if segment.ack > end.peer_acked {
                end.peer_acked = segment.ack;
            }
            let acked = end.peer_acked;
            end.unacked.retain(|u| u.seq + u.payload.len() as u32 > acked);
        }

        if segment.is_pure_ack() {
            return;
        }

        let len = segment.payload.len() as u32;
        let rcv_nxt = self.conns[conn_idx].end(side).rcv_nxt;
        if segment.seq == rcv_nxt {
            self.conns[conn_idx].end_mut(side).rcv_nxt += len;
            let meta = SegMeta {
                src_ip: segment.src_ip,
                dst_ip: segment.dst_ip,
                src_port: segment.src_port,
                dst_port: segment.dst_port,
                seq: segment.seq,
                ack: segment.ack,
                len,
            };
            self.send_pure_ack(conn_id, side);
            self.buffered.push_back(Occurrence::AppData {
                at_us: self.now_us,
                conn: conn_id,
                receiver: node,
                meta,
                payload: segment.payload,
            });
        } else if segment.seq < rcv_nxt {
            // Duplicate (a retransmission that crossed the original or an
            // adversary-delayed copy): acknowledge again, do not redeliver.
            self.send_pure_ack(conn_id, side);
        }
        // Out-of-order segments beyond the expected position are dropped;
        // the sender's timer recovers the gap.
    }

    fn send_pure_ack(&mut self, conn_id: ConnId, side: ConnSide) {
        let conn = &self.conns[conn_id.0 as usize];
        let peer = conn.end(side.other());
        let end = conn.end(side);
        let mut segment = Segment {
            src_ip: end.ip,
            dst_ip: peer.ip,
            src_port: end.port,
            dst_port: peer.port,
            seq: end.snd_nxt,
            ack: end.rcv_nxt,
            retransmission: 0,
            checksum: 0,
            payload: Vec::new(),
        };
        segment.refresh_checksum();
        self.send_segment(end.node, segment);
    }
}
