//! DNP3 master and outstation state machines and the operator script.
//!
//! The endpoints speak through the codec and are driven by the scenario
//! runner, which owns transport and timing. An outstation holds fixed-size
//! point tables (a minimal plant model); the master keeps per-outstation
//! snapshots, correlates command echoes with pending commands by transport
//! acknowledgement number, and logs a MATCH/MISMATCH verdict per command.

use crate::dnp3::{
    build_operate_echo, build_read_response, parse_points, Dnp3Packet, Dnp3Point, FunctionCode,
    ObjectBlock, PointType, PointValue,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Status octet echoed for an operation on an index the outstation does
/// not house.
pub const STATUS_UNKNOWN_INDEX: u8 = 0x04;
/// BI encoding of a closed breaker.
pub const BI_CLOSED: u8 = 0x81;
/// BI encoding of an open (tripped) breaker.
pub const BI_OPEN: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("response does not correlate with any pending command")]
    UncorrelatedResponse,
}

// ---------------------------------------------------------------------
// Outstation
// ---------------------------------------------------------------------

/// Point tables of one outstation. Breakers are mirrored BO/BI pairs;
/// generator outputs are mirrored AO/AI pairs which adopt the setpoint at
/// the next poll.
#[derive(Debug, Clone, PartialEq)]
pub struct OutstationState {
    pub address: u16,
    pub bi: Vec<u8>,
    pub bo: Vec<u8>,
    pub ai: Vec<f32>,
    pub ao: Vec<f32>,
}

impl OutstationState {
    /// Fresh outstation with all breakers closed and analog mirrors in
    /// agreement.
    pub fn new(address: u16, bi: usize, bo: usize, ai: usize, ao: usize) -> Self {
        let ai_values: Vec<f32> = (0..ai).map(|i| 480.0 - 40.0 * i as f32).collect();
        let mut ao_values = vec![0.0; ao];
        let mirrored = ao.min(ai);
        ao_values[..mirrored].copy_from_slice(&ai_values[..mirrored]);
        Self {
            address,
            bi: vec![BI_CLOSED; bi],
            bo: vec![0x41; bo],
            ai: ai_values,
            ao: ao_values,
        }
    }

    /// All points in the canonical BI, AI, BO, AO order.
    pub fn all_points(&self) -> Vec<Dnp3Point> {
        let mut points = Vec::new();
        for (i, &status) in self.bi.iter().enumerate() {
            points.push(Dnp3Point::binary(PointType::Bi, i as u16, status));
        }
        for (i, &value) in self.ai.iter().enumerate() {
            points.push(Dnp3Point::analog(PointType::Ai, i as u16, value));
        }
        for (i, &status) in self.bo.iter().enumerate() {
            points.push(Dnp3Point::binary(PointType::Bo, i as u16, status));
        }
        for (i, &value) in self.ao.iter().enumerate() {
            points.push(Dnp3Point::analog(PointType::Ao, i as u16, value));
        }
        points
    }

    /// Handles a decoded request addressed to this outstation, producing
    /// the solicited response to send back. Unhandled functions produce
    /// no response.
    pub fn handle(&mut self, packet: &Dnp3Packet) -> Option<Dnp3Packet> {
        let master = packet.link.source;
        match packet.app.function {
            FunctionCode::Read => {
                // Analog inputs adopt their setpoints when polled.
                for i in 0..self.ai.len().min(self.ao.len()) {
                    self.ai[i] = self.ao[i];
                }
                Some(
                    build_read_response(master, self.address, &self.all_points())
                        .expect("outstation tables are non-empty"),
                )
            }
            FunctionCode::DirectOperate => {
                let block = packet.app.objects.iter().find_map(|o| match o {
                    ObjectBlock::Points(b) if b.count() > 0 => Some(b),
                    _ => None,
                })?;
                let index = block.start_index;
                match block.point_type {
                    PointType::Bo => {
                        let control = block.payload()[0];
                        if (index as usize) < self.bo.len() {
                            self.bo[index as usize] = control;
                            if (index as usize) < self.bi.len() {
                                self.bi[index as usize] =
                                    if control == 0x41 { BI_CLOSED } else { BI_OPEN };
                            }
                            Some(build_operate_echo(
                                master,
                                self.address,
                                PointType::Bo,
                                index,
                                control,
                                None,
                            ))
                        } else {
                            Some(build_operate_echo(
                                master,
                                self.address,
                                PointType::Bo,
                                index,
                                STATUS_UNKNOWN_INDEX,
                                None,
                            ))
                        }
                    }
                    PointType::Ao => {
                        let value = f32::from_le_bytes(
                            block.payload()[1..5].try_into().expect("5-octet encoding"),
                        );
                        if let Some(slot) = self.ao.get_mut(index as usize) {
                            *slot = value;
                            Some(build_operate_echo(
                                master,
                                self.address,
                                PointType::Ao,
                                index,
                                0x00,
                                Some(value),
                            ))
                        } else {
                            Some(build_operate_echo(
                                master,
                                self.address,
                                PointType::Ao,
                                index,
                                STATUS_UNKNOWN_INDEX,
                                Some(value),
                            ))
                        }
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------
// Master
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchVerdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingCommand {
    pub issued_at_us: u64,
    pub outstation: u16,
    pub point_type: PointType,
    pub index: u16,
    pub intent: PointValue,
    /// Transport acknowledgement number that the outstation's response
    /// will carry once it has received the command segment.
    pub expected_ack: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRecord {
    pub at_us: u64,
    pub outstation: u16,
    pub point_type: PointType,
    pub index: u16,
    pub intent: PointValue,
    pub echoed: PointValue,
    pub echoed_status: u8,
    pub verdict: MatchVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub at_us: u64,
    pub points: Vec<Dnp3Point>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingPoll {
    issued_at_us: u64,
    expected_ack: u32,
}

/// What a solicited response turned out to be.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    PollSnapshot,
    CommandEcho(VerdictRecord),
}

#[derive(Debug, Default)]
pub struct MasterState {
    pub address: u16,
    pub snapshots: BTreeMap<u16, Snapshot>,
    pub verdicts: Vec<VerdictRecord>,
    /// (time, outstation) pairs for polls unanswered by the next cycle.
    pub missed_polls: Vec<(u64, u16)>,
    pending_commands: Vec<PendingCommand>,
    pending_polls: BTreeMap<u16, PendingPoll>,
    pub polls_sent: u64,
    pub responses_seen: u64,
}

impl MasterState {
    pub fn new(address: u16) -> Self {
        Self { address, ..Self::default() }
    }

    /// Registers a poll request sent to `outstation`. If the previous poll
    /// is still outstanding it is logged as missed; one outstanding poll
    /// per outstation at a time.
    pub fn note_poll_sent(&mut self, now_us: u64, outstation: u16, expected_ack: u32) {
        if let Some(stale) = self
            .pending_polls
            .insert(outstation, PendingPoll { issued_at_us: now_us, expected_ack })
        {
            self.missed_polls.push((stale.issued_at_us, outstation));
        }
        self.polls_sent += 1;
    }

    pub fn note_command_sent(
        &mut self,
        now_us: u64,
        outstation: u16,
        point_type: PointType,
        index: u16,
        intent: PointValue,
        expected_ack: u32,
    ) {
        self.pending_commands.push(PendingCommand {
            issued_at_us: now_us,
            outstation,
            point_type,
            index,
            intent,
            expected_ack,
        });
    }

    pub fn pending_command_count(&self) -> usize {
        self.pending_commands.len()
    }

    /// Processes a solicited response from `outstation`. A response shaped
    /// like a command echo (a single one-point object block) that
    /// correlates with a pending command (its transport ack covers the
    /// command segment) is verified against the command's intent; anything
    /// else refreshes the poll snapshot.
    pub fn on_response(
        &mut self,
        now_us: u64,
        outstation: u16,
        packet: &Dnp3Packet,
        ack: u32,
    ) -> Result<ResponseKind, EndpointError> {
        self.responses_seen += 1;
        if let Some(echo) = echo_shape(packet) {
            let position = self.pending_commands.iter().position(|p| {
                p.outstation == outstation
                    && p.point_type == echo.point_type
                    && p.index == echo.point_index
                    && ack >= p.expected_ack
            });
            let Some(position) = position else {
                return Err(EndpointError::UncorrelatedResponse);
            };
            let pending = self.pending_commands.remove(position);
            let verdict = verify_ack(&pending, &echo);
            let record = VerdictRecord {
                at_us: now_us,
                outstation,
                point_type: pending.point_type,
                index: pending.index,
                intent: pending.intent,
                echoed: echo.value,
                echoed_status: echo.status,
                verdict,
            };
            self.verdicts.push(record.clone());
            return Ok(ResponseKind::CommandEcho(record));
        }

        let points = parse_points(packet).map_err(|_| EndpointError::UncorrelatedResponse)?;
        if let Some(pending) = self.pending_polls.get(&outstation) {
            if ack >= pending.expected_ack {
                self.pending_polls.remove(&outstation);
            }
        }
        self.snapshots.insert(outstation, Snapshot { at_us: now_us, points });
        Ok(ResponseKind::PollSnapshot)
    }

    /// Latest snapshot value of one analog point, if polled.
    pub fn snapshot_analog(
        &self,
        outstation: u16,
        point_type: PointType,
        index: u16,
    ) -> Option<f32> {
        self.snapshots.get(&outstation)?.points.iter().find_map(|p| {
            (p.point_type == point_type && p.point_index == index)
                .then(|| p.value.as_analog())
                .flatten()
        })
    }

    pub fn snapshot_binary(
        &self,
        outstation: u16,
        point_type: PointType,
        index: u16,
    ) -> Option<u8> {
        self.snapshots.get(&outstation)?.points.iter().find_map(|p| {
            (p.point_type == point_type && p.point_index == index)
                .then(|| p.value.as_binary())
                .flatten()
        })
    }
}

struct EchoShape {
    point_type: PointType,
    point_index: u16,
    value: PointValue,
    status: u8,
}

/// A command echo is a solicited response carrying exactly one object
/// block with exactly one point. Poll responses carry the full table
/// (four blocks), so the shapes never collide.
fn echo_shape(packet: &Dnp3Packet) -> Option<EchoShape> {
    if packet.app.function != FunctionCode::SolicitedResponse || packet.app.objects.len() != 1 {
        return None;
    }
    let ObjectBlock::Points(block) = &packet.app.objects[0] else {
        return None;
    };
    if block.count() != 1 {
        return None;
    }
    let status = block.payload()[0];
    let value = match block.point_type {
        PointType::Bi | PointType::Bo => PointValue::Binary(status),
        _ => PointValue::Analog(f32::from_le_bytes(block.payload()[1..5].try_into().ok()?)),
    };
    Some(EchoShape { point_type: block.point_type, point_index: block.start_index, value, status })
}

fn verify_ack(pending: &PendingCommand, echo: &EchoShape) -> MatchVerdict {
    if echo.status == STATUS_UNKNOWN_INDEX {
        return MatchVerdict::Mismatch;
    }
    let matches = match (pending.intent, echo.value) {
        (PointValue::Binary(want), PointValue::Binary(got)) => want == got,
        (PointValue::Analog(want), PointValue::Analog(got)) => want.to_bits() == got.to_bits(),
        _ => false,
    };
    if matches {
        MatchVerdict::Match
    } else {
        MatchVerdict::Mismatch
    }
}

// ---------------------------------------------------------------------
// Operator script
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryControl {
    Close,
    Trip,
}

impl BinaryControl {
    pub fn octet(self) -> u8 {
        match self {
            Self::Close => 0x41,
            Self::Trip => 0x81,
        }
    }
}

/// When an operator rule fires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Once, at a fixed time.
    At { t_s: f64 },
    /// Periodically from `start_s` (inclusive) until `until_s` (exclusive)
    /// or the end of the run.
    Every {
        start_s: f64,
        period_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until_s: Option<f64>,
    },
    /// Whenever a fresh poll snapshot shows the analog input below the
    /// threshold.
    SnapshotAiBelow { outstation: u16, index: u16, threshold: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandAction {
    Binary { outstation: u16, index: u16, control: BinaryControl },
    Analog { outstation: u16, index: u16, value: f32 },
}

impl CommandAction {
    pub fn outstation(&self) -> u16 {
        match self {
            Self::Binary { outstation, .. } | Self::Analog { outstation, .. } => *outstation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorRule {
    pub trigger: Trigger,
    pub action: CommandAction,
    /// For snapshot-predicate rules: fire on every satisfying snapshot
    /// rather than only the first.
    #[serde(default)]
    pub repeat: bool,
}

/// Ordered list of trigger/action rules, evaluated deterministically in
/// rule order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorScript {
    #[serde(default)]
    pub rules: Vec<OperatorRule>,
}
