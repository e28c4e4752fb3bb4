//! Point extraction and localization within the chunked wire layout.

use super::{
    CodecError, Dnp3Packet, Dnp3Point, FunctionCode, ObjectBlock, PointType, PointValue,
    CHUNK_DATA_SIZE, CHUNK_SIZE, DNP_HDR_SIZE,
};

/// Location of a point's mutable octets.
///
/// `offset` is relative to the unchunked data payload, where offset 0 is
/// the transport octet. For binary points the span is the single
/// control/status octet; for analog points it is the four value octets
/// (one past the status octet). `chunks` lists the data-chunk ordinals an
/// in-place edit touches, i.e. the chunks whose CRCs must be recomputed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointLocation {
    pub offset: usize,
    pub len: usize,
    pub chunks: Vec<usize>,
}

impl PointLocation {
    fn for_span(offset: usize, len: usize) -> Self {
        let first = offset / CHUNK_DATA_SIZE;
        let last = (offset + len - 1) / CHUNK_DATA_SIZE;
        let chunks = if first == last { vec![first] } else { vec![first, last] };
        Self { offset, len, chunks }
    }

    /// Maps the span to offsets in the encoded frame (one per octet; the
    /// span is split across two chunks when it straddles a block boundary).
    pub fn wire_offsets(&self) -> Vec<usize> {
        (self.offset..self.offset + self.len).map(unchunked_to_wire).collect()
    }
}

/// Maps an offset in the unchunked data payload to the corresponding octet
/// offset in the encoded frame.
pub fn unchunked_to_wire(offset: usize) -> usize {
    DNP_HDR_SIZE + (offset / CHUNK_DATA_SIZE) * CHUNK_SIZE + offset % CHUNK_DATA_SIZE
}

/// Walks the object blocks of a packet, yielding each point and the
/// unchunked offset of its first payload octet (the status/control octet).
fn walk_points(packet: &Dnp3Packet) -> Vec<(PointType, u16, usize, &[u8])> {
    // Offsets within the unchunked data payload: transport octet at 0,
    // app control at 1, function at 2, first object header at 3.
    let mut offset = 3;
    let mut out = Vec::new();
    for object in &packet.app.objects {
        match object {
            ObjectBlock::ClassPoll { .. } => offset += 5,
            ObjectBlock::Points(block) => {
                offset += 5;
                let width = block.point_type.width();
                for (i, encoding) in block.payload().chunks(width).enumerate() {
                    out.push((
                        block.point_type,
                        block.start_index + i as u16,
                        offset,
                        encoding,
                    ));
                    offset += width;
                }
            }
        }
    }
    out
}

/// Extracts every point of a response packet, computing each point's value
/// and chunk location against the chunked wire layout.
pub fn parse_points(packet: &Dnp3Packet) -> Result<Vec<Dnp3Point>, CodecError> {
    match packet.app.function {
        FunctionCode::SolicitedResponse | FunctionCode::UnsolicitedResponse => {}
        other => return Err(CodecError::UnexpectedFunction { found: other.code() }),
    }
    let mut points = Vec::new();
    for (point_type, point_index, offset, encoding) in walk_points(packet) {
        let (value, location) = decode_point_value(point_type, offset, encoding)?;
        points.push(Dnp3Point { point_type, point_index, value, chunk_index: location.chunks });
    }
    Ok(points)
}

fn decode_point_value(
    point_type: PointType,
    offset: usize,
    encoding: &[u8],
) -> Result<(PointValue, PointLocation), CodecError> {
    match point_type {
        PointType::Bi | PointType::Bo => {
            let status = *encoding.first().ok_or(CodecError::MalformedObjectBlock {
                reason: "empty binary point encoding",
            })?;
            Ok((PointValue::Binary(status), PointLocation::for_span(offset, 1)))
        }
        PointType::Ai | PointType::Ao | PointType::Counter => {
            if encoding.len() != 5 {
                return Err(CodecError::MalformedObjectBlock {
                    reason: "analog point encoding is not 5 octets",
                });
            }
            let value =
                f32::from_le_bytes([encoding[1], encoding[2], encoding[3], encoding[4]]);
            // The mutable span is the 4 value octets, one past the status.
            Ok((PointValue::Analog(value), PointLocation::for_span(offset + 1, 4)))
        }
    }
}

/// Locates one point's mutable octets within a packet.
pub fn locate_point(
    packet: &Dnp3Packet,
    point_type: PointType,
    point_index: u16,
) -> Result<PointLocation, CodecError> {
    for (pt, idx, offset, encoding) in walk_points(packet) {
        if pt == point_type && idx == point_index {
            let (_, location) = decode_point_value(pt, offset, encoding)?;
            return Ok(location);
        }
    }
    Err(CodecError::PointNotFound { point_type, index: point_index })
}
