//! DNP3 frame codec.
//!
//! Frames have three layers: a 10-octet link header (two sync octets, a
//! length octet, link control, destination and source addresses, and a
//! header CRC), one transport octet (FIR/FIN flags and a 6-bit sequence),
//! and an application fragment (control octet, function code, object
//! blocks). Everything after the link header travels as *data chunks*:
//! 16-octet blocks each followed by a 2-octet CRC, with a partial final
//! block also getting its own CRC.
//!
//! Object blocks use a simplified header instead of the full
//! group/variation catalog: a 1-octet point-type tag (0x00 = class poll
//! designator, 0x01 = BI, 0x02 = BO, 0x03 = AI, 0x04 = AO, 0x05 = counter),
//! a 2-octet little-endian start index and a 2-octet little-endian count,
//! followed by the per-point payload. Binary points are one status/control
//! octet wide; analog points are five octets (one status octet plus a
//! 4-octet little-endian IEEE-754 single-precision value). All multi-octet
//! fields are little-endian.

mod codec;
mod crc;
mod hex;
mod points;

pub use codec::{
    chunk_payload, decode_frame, encode_frame, encoded_len, summarize_frame, unchunk_payload,
    Dnp3Summary,
};
pub use crc::{crc16_dnp, push_crc, verify_crc};
pub use hex::{format_hex_dump, parse_hex, to_compact_hex};
pub use points::{locate_point, parse_points, unchunked_to_wire, PointLocation};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Link header size on the wire, including sync and header CRC.
pub const DNP_HDR_SIZE: usize = 10;
/// One data chunk on the wire: 16 data octets plus the 2-octet chunk CRC.
pub const CHUNK_SIZE: usize = 18;
/// Data octets carried per full chunk.
pub const CHUNK_DATA_SIZE: usize = 16;
/// Control code for a breaker CLOSE operation.
pub const CONTROL_CLOSE: u8 = 0x41;
/// Control code for a breaker TRIP (open) operation.
pub const CONTROL_TRIP: u8 = 0x81;
/// First sync octet.
pub const SYNC0: u8 = 0x05;
/// Second sync octet.
pub const SYNC1: u8 = 0x64;

/// Errors raised by the codec.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad sync octets {found:02x?}, expected [05, 64]")]
    BadSync { found: [u8; 2] },
    #[error("link header CRC mismatch: computed {computed:#06x}, frame carries {found:#06x}")]
    HeaderCrcMismatch { computed: u16, found: u16 },
    #[error("chunk {chunk} CRC mismatch")]
    ChunkCrcMismatch { chunk: usize },
    #[error("trailing {trailing} octet(s) cannot form a chunk (need >=1 data octet + 2 CRC octets)")]
    TruncatedChunk { trailing: usize },
    #[error("truncated frame: need {needed} octets, got {got}")]
    TruncatedFrame { needed: usize, got: usize },
    #[error("frame length mismatch: length octet implies {declared} octets, frame has {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown object layout at application offset {offset}: {reason}")]
    UnknownObjectLayout { offset: usize, reason: &'static str },
    #[error("application payload of {len} octets exceeds the 8-bit length octet range")]
    PayloadTooLarge { len: usize },
    #[error("invalid control code {control:#04x}, expected 0x41 (close) or 0x81 (trip)")]
    InvalidControlCode { control: u8 },
    #[error("analog value is not finite")]
    NonFiniteValue,
    #[error("read response requires at least one point")]
    EmptyPointSet,
    #[error("point {point_type:?}[{index}] not present in packet")]
    PointNotFound { point_type: PointType, index: u16 },
    #[error("malformed object block: {reason}")]
    MalformedObjectBlock { reason: &'static str },
    #[error("expected a response function code (0x81/0x82), found {found:#04x}")]
    UnexpectedFunction { found: u8 },
}

/// Decoded link-layer header. Sync octets, the length octet and the header
/// CRC are recomputed on encode, so only the semantic fields are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkHeader {
    pub control: u8,
    pub destination: u16,
    pub source: u16,
}

/// The transport octet: FIN (bit 7), FIR (bit 6), 6-bit sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportOctet {
    pub fir: bool,
    pub fin: bool,
    pub sequence: u8,
}

impl TransportOctet {
    /// Single-fragment transport octet (FIR and FIN both set).
    pub fn single(sequence: u8) -> Self {
        debug_assert!(sequence < 64);
        Self { fir: true, fin: true, sequence: sequence & 0x3F }
    }

    pub fn to_octet(self) -> u8 {
        (u8::from(self.fin) << 7) | (u8::from(self.fir) << 6) | (self.sequence & 0x3F)
    }

    pub fn from_octet(octet: u8) -> Self {
        Self {
            fin: octet & 0x80 != 0,
            fir: octet & 0x40 != 0,
            sequence: octet & 0x3F,
        }
    }
}

/// Application-layer function codes. Codes outside the supported set decode
/// to `Unknown` rather than being coerced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionCode {
    Confirm,
    Read,
    Write,
    Select,
    Operate,
    DirectOperate,
    DirectOperateNoAck,
    FreezeWithAck,
    ImmediateFreezeNoAck,
    FreezeAndClearWithAck,
    FreezeAndClearNoAck,
    ColdRestart,
    EnableSpontaneous,
    DisableSpontaneous,
    AssignClasses,
    DelayMeasurement,
    SolicitedResponse,
    UnsolicitedResponse,
    Unknown(u8),
}

impl FunctionCode {
    pub fn code(self) -> u8 {
        match self {
            Self::Confirm => 0x00,
            Self::Read => 0x01,
            Self::Write => 0x02,
            Self::Select => 0x03,
            Self::Operate => 0x04,
            Self::DirectOperate => 0x05,
            Self::DirectOperateNoAck => 0x06,
            Self::FreezeWithAck => 0x07,
            Self::ImmediateFreezeNoAck => 0x08,
            Self::FreezeAndClearWithAck => 0x09,
            Self::FreezeAndClearNoAck => 0x10,
            Self::ColdRestart => 0x13,
            Self::EnableSpontaneous => 0x14,
            Self::DisableSpontaneous => 0x15,
            Self::AssignClasses => 0x16,
            Self::DelayMeasurement => 0x17,
            Self::SolicitedResponse => 0x81,
            Self::UnsolicitedResponse => 0x82,
            Self::Unknown(code) => code,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0x00 => Self::Confirm,
            0x01 => Self::Read,
            0x02 => Self::Write,
            0x03 => Self::Select,
            0x04 => Self::Operate,
            0x05 => Self::DirectOperate,
            0x06 => Self::DirectOperateNoAck,
            0x07 => Self::FreezeWithAck,
            0x08 => Self::ImmediateFreezeNoAck,
            0x09 => Self::FreezeAndClearWithAck,
            0x10 => Self::FreezeAndClearNoAck,
            0x13 => Self::ColdRestart,
            0x14 => Self::EnableSpontaneous,
            0x15 => Self::DisableSpontaneous,
            0x16 => Self::AssignClasses,
            0x17 => Self::DelayMeasurement,
            0x81 => Self::SolicitedResponse,
            0x82 => Self::UnsolicitedResponse,
            other => Self::Unknown(other),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Confirm => "CONFIRM",
            Self::Read => "READ",
            Self::Write => "WRITE",
            Self::Select => "SELECT",
            Self::Operate => "OPERATE",
            Self::DirectOperate => "DIRECT OPERATE",
            Self::DirectOperateNoAck => "DIRECT OPERATE NO ACK",
            Self::FreezeWithAck => "FREEZE",
            Self::ImmediateFreezeNoAck => "IMMEDIATE FREEZE NO ACK",
            Self::FreezeAndClearWithAck => "FREEZE AND CLEAR",
            Self::FreezeAndClearNoAck => "FREEZE AND CLEAR NO ACK",
            Self::ColdRestart => "COLD RESTART",
            Self::EnableSpontaneous => "ENABLE SPONTANEOUS",
            Self::DisableSpontaneous => "DISABLE SPONTANEOUS",
            Self::AssignClasses => "ASSIGN CLASSES",
            Self::DelayMeasurement => "DELAY MEASUREMENT",
            Self::SolicitedResponse => "SOLICITED RESPONSE",
            Self::UnsolicitedResponse => "UNSOLICITED RESPONSE",
            Self::Unknown(_) => "UNKNOWN",
        }
    }
}

/// Point categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PointType {
    #[serde(rename = "BI")]
    Bi,
    #[serde(rename = "BO")]
    Bo,
    #[serde(rename = "AI")]
    Ai,
    #[serde(rename = "AO")]
    Ao,
    #[serde(rename = "Counter")]
    Counter,
}

impl PointType {
    pub fn tag(self) -> u8 {
        match self {
            Self::Bi => 0x01,
            Self::Bo => 0x02,
            Self::Ai => 0x03,
            Self::Ao => 0x04,
            Self::Counter => 0x05,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(Self::Bi),
            0x02 => Some(Self::Bo),
            0x03 => Some(Self::Ai),
            0x04 => Some(Self::Ao),
            0x05 => Some(Self::Counter),
            _ => None,
        }
    }

    /// Per-point encoding width in octets. Binary points carry one
    /// control/status octet; analog and counter points carry a status octet
    /// plus a 4-octet value.
    pub fn width(self) -> usize {
        match self {
            Self::Bi | Self::Bo => 1,
            Self::Ai | Self::Ao | Self::Counter => 5,
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Self::Bi | Self::Bo)
    }

    pub fn is_analog(self) -> bool {
        matches!(self, Self::Ai | Self::Ao)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bi => "BI",
            Self::Bo => "BO",
            Self::Ai => "AI",
            Self::Ao => "AO",
            Self::Counter => "Counter",
        }
    }
}

/// A run of points of one type, contiguous from `start_index`.
///
/// The count is derived from the payload length, so the width invariant
/// holds by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointBlock {
    pub point_type: PointType,
    pub start_index: u16,
    payload: Vec<u8>,
}

impl PointBlock {
    pub fn new(point_type: PointType, start_index: u16, payload: Vec<u8>) -> Result<Self, CodecError> {
        if !payload.len().is_multiple_of(point_type.width()) {
            return Err(CodecError::MalformedObjectBlock {
                reason: "payload length is not a multiple of the point width",
            });
        }
        Ok(Self { point_type, start_index, payload })
    }

    pub fn count(&self) -> u16 {
        (self.payload.len() / self.point_type.width()) as u16
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

/// One object block of an application fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectBlock {
    /// Class data poll designator (tag 0x00). Only Class 0 is produced.
    ClassPoll { class: u8 },
    Points(PointBlock),
}

/// Application fragment: control octet, function code, object blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplicationFragment {
    pub app_control: u8,
    pub function: FunctionCode,
    pub objects: Vec<ObjectBlock>,
}

/// Fully decoded three-layer packet. Re-encoding a decoded packet
/// reproduces the original octet sequence exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dnp3Packet {
    pub link: LinkHeader,
    pub transport: TransportOctet,
    pub app: ApplicationFragment,
}

/// The value carried by a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointValue {
    /// Control/status octet of a binary point.
    Binary(u8),
    /// IEEE-754 single-precision value of an analog point.
    Analog(f32),
}

impl PointValue {
    pub fn as_binary(self) -> Option<u8> {
        match self {
            Self::Binary(v) => Some(v),
            Self::Analog(_) => None,
        }
    }

    pub fn as_analog(self) -> Option<f32> {
        match self {
            Self::Analog(v) => Some(v),
            Self::Binary(_) => None,
        }
    }
}

/// A typed point with its location in the chunked wire layout.
///
/// `chunk_index` lists the ordinals of the data chunks containing the
/// point's mutable octets (the control octet for binary points, the four
/// value octets for analog points). It has two entries only when an analog
/// value straddles a 16-octet data block boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dnp3Point {
    pub point_type: PointType,
    pub point_index: u16,
    pub value: PointValue,
    pub chunk_index: Vec<usize>,
}

impl Dnp3Point {
    pub fn binary(point_type: PointType, point_index: u16, status: u8) -> Self {
        debug_assert!(point_type.is_binary());
        Self { point_type, point_index, value: PointValue::Binary(status), chunk_index: Vec::new() }
    }

    pub fn analog(point_type: PointType, point_index: u16, value: f32) -> Self {
        debug_assert!(point_type.is_analog());
        Self { point_type, point_index, value: PointValue::Analog(value), chunk_index: Vec::new() }
    }

    /// Type/index/value equality, ignoring the wire-layout chunk index.
    pub fn same_point(&self, other: &Self) -> bool {
        self.point_type == other.point_type
            && self.point_index == other.point_index
            && match (self.value, other.value) {
                (PointValue::Binary(a), PointValue::Binary(b)) => a == b,
                (PointValue::Analog(a), PointValue::Analog(b)) => a.to_bits() == b.to_bits(),
                _ => false,
            }
    }
}

/// Builds a binary DIRECT OPERATE packet for one BO point.
pub fn build_direct_operate_binary(
    dest: u16,
    src: u16,
    index: u16,
    control: u8,
) -> Result<Dnp3Packet, CodecError> {
    if control != CONTROL_CLOSE && control != CONTROL_TRIP {
        return Err(CodecError::InvalidControlCode { control });
    }
    Ok(Dnp3Packet {
        link: LinkHeader { control: 0xC4, destination: dest, source: src },
        transport: TransportOctet::single(0),
        app: ApplicationFragment {
            app_control: 0xC0,
            function: FunctionCode::DirectOperate,
            objects: vec![ObjectBlock::Points(
                PointBlock::new(PointType::Bo, index, vec![control]).expect("width 1"),
            )],
        },
    })
}

/// Builds an analog DIRECT OPERATE packet for one AO setpoint.
pub fn build_direct_operate_analog(
    dest: u16,
    src: u16,
    index: u16,
    value: f32,
) -> Result<Dnp3Packet, CodecError> {
    if !value.is_finite() {
        return Err(CodecError::NonFiniteValue);
    }
    let mut payload = vec![0x00];
    payload.extend_from_slice(&value.to_le_bytes());
    Ok(Dnp3Packet {
        link: LinkHeader { control: 0xC4, destination: dest, source: src },
        transport: TransportOctet::single(0),
        app: ApplicationFragment {
            app_control: 0xC0,
            function: FunctionCode::DirectOperate,
            objects: vec![ObjectBlock::Points(
                PointBlock::new(PointType::Ao, index, payload).expect("width 5"),
            )],
        },
    })
}

/// Builds a Class-0 static-data READ request.
pub fn build_read_request(dest: u16, src: u16) -> Dnp3Packet {
    Dnp3Packet {
        link: LinkHeader { control: 0xC4, destination: dest, source: src },
        transport: TransportOctet::single(0),
        app: ApplicationFragment {
            app_control: 0xC0,
            function: FunctionCode::Read,
            objects: vec![ObjectBlock::ClassPoll { class: 0 }],
        },
    }
}

/// Builds a solicited response carrying `points`, grouped into object
/// blocks in the canonical BI, AI, BO, AO order. A group that is present
/// but non-contiguous is split into one block per contiguous index run; an
/// absent group still contributes an empty block so a full poll response
/// always carries four blocks.
pub fn build_read_response(
    dest: u16,
    src: u16,
    points: &[Dnp3Point],
) -> Result<Dnp3Packet, CodecError> {
    if points.is_empty() {
        return Err(CodecError::EmptyPointSet);
    }
    let mut objects = Vec::new();
    for group in [PointType::Bi, PointType::Ai, PointType::Bo, PointType::Ao] {
        let mut members: Vec<&Dnp3Point> =
            points.iter().filter(|p| p.point_type == group).collect();
        members.sort_by_key(|p| p.point_index);
        if members.is_empty() {
            objects.push(ObjectBlock::Points(PointBlock::new(group, 0, Vec::new())?));
            continue;
        }
        let mut run_start = 0;
        for i in 0..members.len() {
            let end_of_run = i + 1 == members.len()
                || members[i + 1].point_index != members[i].point_index + 1;
            if end_of_run {
                let run = &members[run_start..=i];
                let mut payload = Vec::with_capacity(run.len() * group.width());
                for point in run {
                    match point.value {
                        PointValue::Binary(status) => payload.push(status),
                        PointValue::Analog(v) => {
                            payload.push(0x00);
                            payload.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
                objects.push(ObjectBlock::Points(PointBlock::new(
                    group,
                    run[0].point_index,
                    payload,
                )?));
                run_start = i + 1;
            }
        }
    }
    Ok(Dnp3Packet {
        link: LinkHeader { control: 0x44, destination: dest, source: src },
        transport: TransportOctet::single(0),
        app: ApplicationFragment {
            app_control: 0xC0,
            function: FunctionCode::SolicitedResponse,
            objects,
        },
    })
}

/// Builds the single-point response echoed after a DIRECT OPERATE. `status`
/// is the resulting status/control octet (0x04 for an unknown index).
pub fn build_operate_echo(
    dest: u16,
    src: u16,
    point_type: PointType,
    index: u16,
    status: u8,
    analog_value: Option<f32>,
) -> Dnp3Packet {
    let payload = match analog_value {
        Some(v) => {
            let mut p = vec![status];
            p.extend_from_slice(&v.to_le_bytes());
            p
        }
        None => vec![status],
    };
    Dnp3Packet {
        link: LinkHeader { control: 0x44, destination: dest, source: src },
        transport: TransportOctet::single(0),
        app: ApplicationFragment {
            app_control: 0xC0,
            function: FunctionCode::SolicitedResponse,
            objects: vec![ObjectBlock::Points(
                PointBlock::new(point_type, index, payload).expect("echo payload width"),
            )],
        },
    }
}
