//! The three-phase scenario runner.

use super::config::{ScenarioConfig, ScenarioError};
use crate::dnp3::{
    build_direct_operate_analog, build_direct_operate_binary, build_read_request, decode_frame,
    encode_frame, PointType, PointValue,
};
use crate::endpoints::{
    CommandAction, MasterState, OutstationState, ResponseKind, Snapshot, Trigger, VerdictRecord,
};
use crate::ids::{router_lan_view, AlertRecord, Ids, IdsConfig, WhitelistEntry};
use crate::mitm::{Adversary, LanDirectory, PacketClass};
use crate::netsim::{
    CaptureRecord, ConnId, ConnSide, MacAddr, Medium, NodeId, Occurrence, Sim, SimConfig,
};
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

pub const MASTER_NODE: &str = "DNP3Master";
pub const ROUTER_NODE: &str = "SubRouter";
pub const ADVERSARY_NODE: &str = "Adversary";

pub const ROUTER_LAN_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 4);
pub const ROUTER_WAN_IP: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 1);
pub const MASTER_IP: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 2);
pub const ADVERSARY_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 100);

pub const MASTER_DNP3_ADDR: u16 = 100;
pub const DNP3_PORT: u16 = 20000;

const FIRST_POLL_S: f64 = 10.0;

const HOOK_POLL: u64 = 1;
const HOOK_ATTACK_START: u64 = 2;
const HOOK_ATTACK_STOP: u64 = 3;
const HOOK_REPOISON: u64 = 4;
const HOOK_ADVERSARY_SERVICE: u64 = 5;
const HOOK_RULE_BASE: u64 = 1000;

pub fn outstation_ip(addr: u16) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 0, 4 + addr as u8)
}

pub fn outstation_mac(addr: u16) -> MacAddr {
    MacAddr([0x00, 0x50, 0x56, 0x9C, 0x9D, 0x70 + (addr as u8 - 1)])
}

pub const ROUTER_LAN_MAC: MacAddr = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x00, 0x02]);
pub const ROUTER_WAN_MAC: MacAddr = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x01, 0x02]);
pub const MASTER_MAC: MacAddr = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x01, 0x01]);
pub const ADVERSARY_MAC: MacAddr = MacAddr([0x00, 0x0C, 0x29, 0x3F, 0x19, 0x01]);

#[derive(Debug, Clone, Default)]
pub struct AdversaryStats {
    pub queue_drops: u64,
    pub tampered_frames: u64,
    pub masked_responses: u64,
    pub sniffed_responses: u64,
    pub backlog_at_end: usize,
    pub service_log: Vec<(PacketClass, u64)>,
}

/// Everything a finished run leaves behind, in memory.
pub struct RunOutcome {
    pub name: String,
    pub seed: u64,
    pub use_case: u8,
    pub run_end_us: u64,
    pub attack_window_us: Option<(u64, u64)>,
    pub rto_us: u64,
    pub captures: Vec<CaptureRecord>,
    pub alerts: Vec<AlertRecord>,
    pub verdicts: Vec<VerdictRecord>,
    pub missed_polls: Vec<(u64, u16)>,
    pub polls_sent: u64,
    pub snapshots: BTreeMap<u16, Snapshot>,
    pub outstations: BTreeMap<u16, OutstationState>,
    pub master_decode_failures: u64,
    pub outstation_decode_failures: u64,
    pub uncorrelated_responses: u64,
    pub adversary: Option<AdversaryStats>,
    pub roster: Vec<(String, String, MacAddr, Ipv4Addr)>,
}

pub struct Runner {
    cfg: ScenarioConfig,
    sim: Sim,
    master_node: NodeId,
    router_node: NodeId,
    adversary_node: Option<NodeId>,
    outstation_nodes: BTreeMap<u16, NodeId>,
    conns: BTreeMap<u16, ConnId>,
    conn_addr: BTreeMap<ConnId, u16>,
    master: MasterState,
    outstations: BTreeMap<u16, OutstationState>,
    adversary: Option<Adversary>,
    directory: Option<LanDirectory>,
    attack_active: bool,
    fired_rules: BTreeSet<usize>,
    master_decode_failures: u64,
    outstation_decode_failures: u64,
    uncorrelated_responses: u64,
}

impl Runner {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let sim_cfg = SimConfig {
            lan_latency_us: ms_to_us(cfg.net.lan_latency_ms),
            wan_latency_us: ms_to_us(cfg.net.wan_latency_ms),
            rto_us: ms_to_us(cfg.net.rto_ms),
            arp_timeout_us: ms_to_us(cfg.net.arp_timeout_ms),
        };
        let mut sim = Sim::new(sim_cfg);

        let master_node = sim.add_node(MASTER_NODE);
        sim.attach(master_node, Medium::Wan, MASTER_MAC, MASTER_IP);
        sim.set_gateway(master_node, ROUTER_WAN_IP);
        sim.tap(master_node, false);

        let router_node = sim.add_node(ROUTER_NODE);
        sim.attach(router_node, Medium::Wan, ROUTER_WAN_MAC, ROUTER_WAN_IP);
        sim.attach(router_node, Medium::Lan, ROUTER_LAN_MAC, ROUTER_LAN_IP);
        sim.set_router(router_node);
        sim.tap(router_node, true);

        let mut outstation_nodes = BTreeMap::new();
        let mut outstations = BTreeMap::new();
        let mut conns = BTreeMap::new();
        let mut conn_addr = BTreeMap::new();
        for addr in 1..=cfg.outstations {
            let node = sim.add_node(&format!("Outstation{addr}"));
            sim.attach(node, Medium::Lan, outstation_mac(addr), outstation_ip(addr));
            sim.set_gateway(node, ROUTER_LAN_IP);
            outstation_nodes.insert(addr, node);
            outstations.insert(
                addr,
                OutstationState::new(addr, cfg.points.bi, cfg.points.bo, cfg.points.ai, cfg.points.ao),
            );
            let conn = sim.open_conn(
                (master_node, MASTER_IP, 49152 + (addr - 1)),
                (node, outstation_ip(addr), DNP3_PORT),
            );
            conns.insert(addr, conn);
            conn_addr.insert(conn, addr);
        }

        let (adversary_node, adversary) = if cfg.use_case > 0 {
            let node = sim.add_node(ADVERSARY_NODE);
            sim.attach(node, Medium::Lan, ADVERSARY_MAC, ADVERSARY_IP);
            sim.set_gateway(node, ROUTER_LAN_IP);
            sim.set_raw_delivery(node);
            sim.tap(node, false);
            let adv_cfg = cfg.adversary.clone().expect("validated");
            (Some(node), Some(Adversary::new(adv_cfg, cfg.seed)))
        } else {
            (None, None)
        };

        Ok(Self {
            master: MasterState::new(MASTER_DNP3_ADDR),
            cfg,
            sim,
            master_node,
            router_node,
            adversary_node,
            outstation_nodes,
            conns,
            conn_addr,
            outstations,
            adversary,
            directory: None,
            attack_active: false,
            fired_rules: BTreeSet::new(),
            master_decode_failures: 0,
            outstation_decode_failures: 0,
            uncorrelated_responses: 0,
        })
    }

    pub fn execute(mut self) -> RunOutcome {
        let end_us = s_to_us(self.cfg.run_duration_s);

        let first_poll = s_to_us(FIRST_POLL_S.min(self.cfg.polling_interval_s)).min(end_us);
        self.sim.schedule_hook(first_poll, HOOK_POLL).expect("initial poll");
        if self.cfg.use_case > 0 {
            self.sim
                .schedule_hook(s_to_us(self.cfg.attack_start_s), HOOK_ATTACK_START)
                .expect("attack start");
            self.sim
                .schedule_hook(s_to_us(self.cfg.attack_stop_s), HOOK_ATTACK_STOP)
                .expect("attack stop");
        }
        for (i, rule) in self.cfg.operator.rules.clone().iter().enumerate() {
            match rule.trigger {
                Trigger::At { t_s } => {
                    self.sim
                        .schedule_hook(s_to_us(t_s), HOOK_RULE_BASE + i as u64)
                        .expect("rule time");
                }
                Trigger::Every { start_s, .. } => {
                    self.sim
                        .schedule_hook(s_to_us(start_s), HOOK_RULE_BASE + i as u64)
                        .expect("rule start");
                }
                Trigger::SnapshotAiBelow { .. } => {}
            }
        }

        while let Some(occ) = self.sim.next_occurrence(end_us) {
            match occ {
                Occurrence::Hook { at_us, tag } => self.on_hook(at_us, tag),
                Occurrence::AppData { at_us, conn, receiver, meta, payload } => {
                    if receiver == self.master_node {
                        self.on_master_data(at_us, conn, meta.ack, &payload);
                    } else {
                        self.on_outstation_data(conn, &payload);
                    }
                }
                Occurrence::RawFrame { at_us, frame, .. } => {
                    if let Some(adv) = self.adversary.as_mut() {
                        if let Some(done_at) = adv.on_frame(at_us, frame) {
                            self.sim
                                .schedule_hook(done_at, HOOK_ADVERSARY_SERVICE)
                                .expect("service hook");
                        }
                    }
                }
            }
        }

        // Post-run IDS pass over the router's LAN view. Alerts carry the
        // originating record's timestamp, so detection remains synchronous
        // with the traffic.
        let ids_cfg = self.ids_config();
        let mut ids = Ids::new(ids_cfg);
        let captures = self.sim.captures().to_vec();
        for (index, record) in router_lan_view(&captures, ROUTER_NODE) {
            ids.inspect(record, index);
        }

        let adversary = self.adversary.as_ref().map(|adv| AdversaryStats {
            queue_drops: adv.queue_drops,
            tampered_frames: adv.tampered_frames,
            masked_responses: adv.masked_responses,
            sniffed_responses: adv.sniffed_responses,
            backlog_at_end: adv.backlog(),
            service_log: adv.service_log.clone(),
        });

        RunOutcome {
            name: self.cfg.name.clone(),
            seed: self.cfg.seed,
            use_case: self.cfg.use_case,
            run_end_us: end_us,
            attack_window_us: (self.cfg.use_case > 0)
                .then(|| (s_to_us(self.cfg.attack_start_s), s_to_us(self.cfg.attack_stop_s))),
            rto_us: ms_to_us(self.cfg.net.rto_ms),
            captures,
            alerts: ids.alerts,
            verdicts: self.master.verdicts.clone(),
            missed_polls: self.master.missed_polls.clone(),
            polls_sent: self.master.polls_sent,
            snapshots: self.master.snapshots.clone(),
            outstations: self.outstations.clone(),
            master_decode_failures: self.master_decode_failures,
            outstation_decode_failures: self.outstation_decode_failures,
            uncorrelated_responses: self.uncorrelated_responses,
            adversary,
            roster: self.sim.roster(),
        }
    }

    fn ids_config(&self) -> IdsConfig {
        let whitelist = if self.cfg.ids.whitelist == "auto" {
            let mut entries = vec![WhitelistEntry { ip: ROUTER_LAN_IP, mac: ROUTER_LAN_MAC }];
            for addr in 1..=self.cfg.outstations {
                entries.push(WhitelistEntry { ip: outstation_ip(addr), mac: outstation_mac(addr) });
            }
            entries
        } else {
            self.cfg.ids.entries.clone()
        };
        IdsConfig {
            whitelist,
            dnp3_port: self.cfg.ids.dnp3_port,
            dnp3_targets: (1..=self.cfg.outstations).map(outstation_ip).collect(),
        }
    }

    fn on_hook(&mut self, at_us: u64, tag: u64) {
        match tag {
            HOOK_POLL => {
                for addr in 1..=self.cfg.outstations {
                    self.send_poll(at_us, addr);
                }
                let next = at_us + s_to_us(self.cfg.polling_interval_s);
                self.sim.schedule_hook(next, HOOK_POLL).expect("next poll");
            }
            HOOK_ATTACK_START => self.start_attack(),
            HOOK_ATTACK_STOP => self.stop_attack(),
            HOOK_REPOISON => {
                if self.attack_active {
                    self.poison_victims();
                    let next = at_us + ms_to_us(self.cfg.net.repoison_ms);
                    self.sim.schedule_hook(next, HOOK_REPOISON).expect("repoison");
                }
            }
            HOOK_ADVERSARY_SERVICE => {
                let Some(adv) = self.adversary.as_mut() else { return };
                let dir = self.directory.as_ref().expect("directory set at attack start");
                let (out, next) = adv.on_service_done(at_us, dir);
                if let Some(frame) = out {
                    let node = self.adversary_node.expect("adversary node");
                    self.sim.transmit(node, Medium::Lan, frame);
                }
                if let Some(done_at) = next {
                    self.sim.schedule_hook(done_at, HOOK_ADVERSARY_SERVICE).expect("service hook");
                }
            }
            tag if tag >= HOOK_RULE_BASE => {
                let index = (tag - HOOK_RULE_BASE) as usize;
                let Some(rule) = self.cfg.operator.rules.get(index).copied() else { return };
                self.send_command(at_us, rule.action);
                if let Trigger::Every { period_s, until_s, .. } = rule.trigger {
                    let next = at_us + s_to_us(period_s);
                    let horizon = until_s.map(s_to_us).unwrap_or(u64::MAX);
                    if next <= horizon {
                        self.sim.schedule_hook(next, tag).expect("rule period");
                    }
                }
            }
            _ => {}
        }
    }

    fn send_poll(&mut self, at_us: u64, addr: u16) {
        let request = build_read_request(addr, MASTER_DNP3_ADDR);
        let bytes = encode_frame(&request).expect("poll encodes");
        let conn = self.conns[&addr];
        if let Ok(meta) = self.sim.send_app_data(conn, ConnSide::A, bytes) {
            self.master.note_poll_sent(at_us, addr, meta.seq + meta.len);
        }
    }

    fn send_command(&mut self, at_us: u64, action: CommandAction) {
        let (addr, packet, point_type, index, intent) = match action {
            CommandAction::Binary { outstation, index, control } => (
                outstation,
                build_direct_operate_binary(outstation, MASTER_DNP3_ADDR, index, control.octet()),
                PointType::Bo,
                index,
                PointValue::Binary(control.octet()),
            ),
            CommandAction::Analog { outstation, index, value } => (
                outstation,
                build_direct_operate_analog(outstation, MASTER_DNP3_ADDR, index, value),
                PointType::Ao,
                index,
                PointValue::Analog(value),
            ),
        };
        let Ok(packet) = packet else { return };
        let bytes = encode_frame(&packet).expect("command encodes");
        let conn = self.conns[&addr];
        if let Ok(meta) = self.sim.send_app_data(conn, ConnSide::A, bytes) {
            self.master.note_command_sent(at_us, addr, point_type, index, intent, meta.seq + meta.len);
        }
    }

    fn start_attack(&mut self) {
        let node = self.adversary_node.expect("attack requires an adversary");
        // Reconnaissance: resolve the victims' true hardware addresses.
        let router_mac = self
            .sim
            .arp_resolve_blocking(node, ROUTER_LAN_IP)
            .expect("router reachable on LAN");
        let mut outstation_macs = BTreeMap::new();
        for addr in 1..=self.cfg.outstations {
            let mac = self
                .sim
                .arp_resolve_blocking(node, outstation_ip(addr))
                .expect("outstation reachable on LAN");
            outstation_macs.insert(outstation_ip(addr), mac);
        }
        self.directory = Some(LanDirectory {
            adversary_mac: ADVERSARY_MAC,
            router_mac,
            outstation_macs,
        });
        self.attack_active = true;
        self.poison_victims();
        let next = self.sim.now_us() + ms_to_us(self.cfg.net.repoison_ms);
        self.sim.schedule_hook(next, HOOK_REPOISON).expect("repoison");
    }

    fn poison_victims(&mut self) {
        let node = self.adversary_node.expect("adversary node");
        let router = self.router_node;
        for addr in 1..=self.cfg.outstations {
            let os_node = self.outstation_nodes[&addr];
            self.sim.arp_poison(node, router, outstation_ip(addr));
            self.sim.arp_poison(node, os_node, ROUTER_LAN_IP);
        }
    }

    fn stop_attack(&mut self) {
        self.attack_active = false;
        let node = self.adversary_node.expect("adversary node");
        let router = self.router_node;
        let dir = self.directory.as_ref().expect("directory");
        for addr in 1..=self.cfg.outstations {
            let os_node = self.outstation_nodes[&addr];
            let os_mac = dir.outstation_macs[&outstation_ip(addr)];
            self.sim.arp_restore(node, router, outstation_ip(addr), os_mac);
            self.sim.arp_restore(node, os_node, ROUTER_LAN_IP, dir.router_mac);
        }
    }

    fn on_master_data(&mut self, at_us: u64, conn: ConnId, ack: u32, payload: &[u8]) {
        let Ok(packet) = decode_frame(payload) else {
            self.master_decode_failures += 1;
            return;
        };
        let addr = self.conn_addr[&conn];
        match self.master.on_response(at_us, addr, &packet, ack) {
            Ok(ResponseKind::PollSnapshot) => self.evaluate_snapshot_rules(at_us, addr),
            Ok(ResponseKind::CommandEcho(_)) => {}
            Err(_) => self.uncorrelated_responses += 1,
        }
    }

    fn evaluate_snapshot_rules(&mut self, at_us: u64, addr: u16) {
        let mut to_fire = Vec::new();
        for (i, rule) in self.cfg.operator.rules.iter().enumerate() {
            let Trigger::SnapshotAiBelow { outstation, index, threshold } = rule.trigger else {
                continue;
            };
            if outstation != addr || (!rule.repeat && self.fired_rules.contains(&i)) {
                continue;
            }
            let Some(value) = self.master.snapshot_analog(addr, PointType::Ai, index) else {
                continue;
            };
            if value < threshold {
                to_fire.push((i, rule.action));
            }
        }
        for (i, action) in to_fire {
            self.fired_rules.insert(i);
            self.send_command(at_us, action);
        }
    }

    fn on_outstation_data(&mut self, conn: ConnId, payload: &[u8]) {
        let Ok(packet) = decode_frame(payload) else {
            self.outstation_decode_failures += 1;
            return;
        };
        let addr = self.conn_addr[&conn];
        let Some(outstation) = self.outstations.get_mut(&addr) else { return };
        if let Some(response) = outstation.handle(&packet) {
            let bytes = encode_frame(&response).expect("response encodes");
            let _ = self.sim.send_app_data(conn, ConnSide::B, bytes);
        }
    }
}

impl RunOutcome {
    /// Computes the metrics bundle for this run.
    pub fn metrics(&self) -> super::artifacts::MetricsBundle {
        super::artifacts::build_metrics(self)
    }

    pub fn attack_window(&self) -> (u64, u64) {
        self.attack_window_us.unwrap_or((0, 0))
    }
}

pub(crate) fn ms_to_us(ms: f64) -> u64 {
    (ms * 1_000.0).round() as u64
}

pub(crate) fn s_to_us(s: f64) -> u64 {
    (s * 1_000_000.0).round() as u64
}
