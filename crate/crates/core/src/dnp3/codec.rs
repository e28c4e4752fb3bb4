//! Frame encoding, decoding and payload chunking.

use super::crc::{crc16_dnp, push_crc, verify_crc};
use super::{
    ApplicationFragment, CodecError, Dnp3Packet, FunctionCode, LinkHeader, ObjectBlock,
    PointBlock, PointType, TransportOctet, CHUNK_DATA_SIZE, CHUNK_SIZE, DNP_HDR_SIZE, SYNC0,
    SYNC1,
};

/// Splits `payload` into 16-octet data blocks, each followed by its 2-octet
/// CRC. A partial final block also gets a CRC.
pub fn chunk_payload(payload: &[u8]) -> Vec<u8> {
    let chunks = payload.len().div_ceil(CHUNK_DATA_SIZE);
    let mut out = Vec::with_capacity(payload.len() + 2 * chunks);
    for block in payload.chunks(CHUNK_DATA_SIZE) {
        out.extend_from_slice(block);
        push_crc(&mut out, block);
    }
    out
}

/// Strips and verifies the per-chunk CRCs, returning the concatenated data
/// blocks.
pub fn unchunk_payload(chunked: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(chunked.len());
    let mut rest = chunked;
    let mut ordinal = 0;
    while !rest.is_empty() {
        if rest.len() < 3 {
            return Err(CodecError::TruncatedChunk { trailing: rest.len() });
        }
        let data_len = (rest.len() - 2).min(CHUNK_DATA_SIZE);
        let (data, tail) = rest.split_at(data_len);
        if !verify_crc(data, [tail[0], tail[1]]) {
            return Err(CodecError::ChunkCrcMismatch { chunk: ordinal });
        }
        out.extend_from_slice(data);
        rest = &tail[2..];
        ordinal += 1;
    }
    Ok(out)
}

fn encode_app(app: &ApplicationFragment) -> Vec<u8> {
    let mut out = vec![app.app_control, app.function.code()];
    for object in &app.objects {
        match object {
            ObjectBlock::ClassPoll { class } => {
                out.push(0x00);
                out.extend_from_slice(&u16::from(*class).to_le_bytes());
                out.extend_from_slice(&0u16.to_le_bytes());
            }
            ObjectBlock::Points(block) => {
                out.push(block.point_type.tag());
                out.extend_from_slice(&block.start_index.to_le_bytes());
                out.extend_from_slice(&block.count().to_le_bytes());
                out.extend_from_slice(block.payload());
            }
        }
    }
    out
}

fn decode_app(data: &[u8]) -> Result<ApplicationFragment, CodecError> {
    if data.len() < 2 {
        return Err(CodecError::TruncatedFrame { needed: 2, got: data.len() });
    }
    let app_control = data[0];
    let function = FunctionCode::from_code(data[1]);
    let mut objects = Vec::new();
    let mut offset = 2;
    while offset < data.len() {
        if data.len() - offset < 5 {
            return Err(CodecError::UnknownObjectLayout {
                offset,
                reason: "incomplete object header",
            });
        }
        let tag = data[offset];
        let start = u16::from_le_bytes([data[offset + 1], data[offset + 2]]);
        let count = u16::from_le_bytes([data[offset + 3], data[offset + 4]]);
        offset += 5;
        if tag == 0x00 {
            if count != 0 {
                return Err(CodecError::UnknownObjectLayout {
                    offset: offset - 5,
                    reason: "class poll designator with nonzero count",
                });
            }
            if start > 3 {
                return Err(CodecError::UnknownObjectLayout {
                    offset: offset - 5,
                    reason: "class designator out of range",
                });
            }
            objects.push(ObjectBlock::ClassPoll { class: start as u8 });
            continue;
        }
        let point_type = PointType::from_tag(tag).ok_or(CodecError::UnknownObjectLayout {
            offset: offset - 5,
            reason: "unknown point-type tag",
        })?;
        let payload_len = usize::from(count) * point_type.width();
        if data.len() - offset < payload_len {
            return Err(CodecError::UnknownObjectLayout {
                offset: offset - 5,
                reason: "object payload overruns fragment",
            });
        }
        let payload = data[offset..offset + payload_len].to_vec();
        offset += payload_len;
        objects.push(ObjectBlock::Points(
            PointBlock::new(point_type, start, payload).expect("exact multiple of width"),
        ));
    }
    Ok(ApplicationFragment { app_control, function, objects })
}

/// Encodes a packet into its canonical octet sequence.
///
/// The length octet counts the non-CRC octets following it through the end
/// of the frame: link control, destination, source (5 octets) plus the
/// transport octet and application fragment.
pub fn encode_frame(packet: &Dnp3Packet) -> Result<Vec<u8>, CodecError> {
    let app = encode_app(&packet.app);
    let data_len = 1 + app.len(); // transport octet + application fragment
    let length = 5 + data_len;
    if length > 255 {
        return Err(CodecError::PayloadTooLarge { len: app.len() });
    }

    let mut header = Vec::with_capacity(DNP_HDR_SIZE);
    header.push(SYNC0);
    header.push(SYNC1);
    header.push(length as u8);
    header.push(packet.link.control);
    header.extend_from_slice(&packet.link.destination.to_le_bytes());
    header.extend_from_slice(&packet.link.source.to_le_bytes());
    let header_crc = crc16_dnp(&header);
    header.extend_from_slice(&header_crc.to_le_bytes());

    let mut payload = Vec::with_capacity(data_len);
    payload.push(packet.transport.to_octet());
    payload.extend_from_slice(&app);

    let mut frame = header;
    frame.extend_from_slice(&chunk_payload(&payload));
    Ok(frame)
}

/// Decodes and fully validates an octet sequence.
pub fn decode_frame(bytes: &[u8]) -> Result<Dnp3Packet, CodecError> {
    if bytes.len() < DNP_HDR_SIZE {
        return Err(CodecError::TruncatedFrame { needed: DNP_HDR_SIZE, got: bytes.len() });
    }
    if bytes[0] != SYNC0 || bytes[1] != SYNC1 {
        return Err(CodecError::BadSync { found: [bytes[0], bytes[1]] });
    }
    let computed = crc16_dnp(&bytes[..8]);
    let found = u16::from_le_bytes([bytes[8], bytes[9]]);
    if computed != found {
        return Err(CodecError::HeaderCrcMismatch { computed, found });
    }
    let length = bytes[2] as usize;
    if length < 6 {
        return Err(CodecError::TruncatedFrame { needed: DNP_HDR_SIZE + 3, got: bytes.len() });
    }
    let data_len = length - 5;
    let chunked_len = data_len + 2 * data_len.div_ceil(CHUNK_DATA_SIZE);
    let expected = DNP_HDR_SIZE + chunked_len;
    if bytes.len() < expected {
        return Err(CodecError::TruncatedFrame { needed: expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(CodecError::LengthMismatch { declared: expected, actual: bytes.len() });
    }

    let data = unchunk_payload(&bytes[DNP_HDR_SIZE..])?;
    debug_assert_eq!(data.len(), data_len);
    let transport = TransportOctet::from_octet(data[0]);
    let app = decode_app(&data[1..])?;
    Ok(Dnp3Packet {
        link: LinkHeader {
            control: bytes[3],
            destination: u16::from_le_bytes([bytes[4], bytes[5]]),
            source: u16::from_le_bytes([bytes[6], bytes[7]]),
        },
        transport,
        app,
    })
}

/// Best-effort decode summary for capture records and IDS preprocessing.
/// Parses structure while tolerating CRC failures, and reports overall CRC
/// validity separately.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Dnp3Summary {
    pub function: u8,
    pub function_name: String,
    /// (point type name or "Class", start index, count) per object block.
    pub blocks: Vec<(String, u16, u16)>,
    pub crc_ok: bool,
}

/// Summarizes a frame without requiring valid CRCs. Returns `None` when the
/// octets are not structurally a DNP3 frame (bad sync or shorter than a
/// link header).
pub fn summarize_frame(bytes: &[u8]) -> Option<Dnp3Summary> {
    if bytes.len() < DNP_HDR_SIZE || bytes[0] != SYNC0 || bytes[1] != SYNC1 {
        return None;
    }
    let mut crc_ok = crc16_dnp(&bytes[..8]) == u16::from_le_bytes([bytes[8], bytes[9]]);

    // Lenient unchunk: collect data blocks, noting CRC failures.
    let mut data = Vec::new();
    let mut rest = &bytes[DNP_HDR_SIZE..];
    while !rest.is_empty() {
        if rest.len() < 3 {
            crc_ok = false;
            break;
        }
        let data_len = (rest.len() - 2).min(CHUNK_DATA_SIZE);
        let (block, tail) = rest.split_at(data_len);
        if !verify_crc(block, [tail[0], tail[1]]) {
            crc_ok = false;
        }
        data.extend_from_slice(block);
        rest = &tail[2..];
    }
    if data.len() < 3 {
        return None;
    }
    let function = data[2];
    let blocks = match decode_app(&data[1..]) {
        Ok(app) => app
            .objects
            .iter()
            .map(|o| match o {
                ObjectBlock::ClassPoll { class } => ("Class".to_string(), u16::from(*class), 0),
                ObjectBlock::Points(b) => {
                    (b.point_type.name().to_string(), b.start_index, b.count())
                }
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    Some(Dnp3Summary {
        function,
        function_name: FunctionCode::from_code(function).name().to_string(),
        blocks,
        crc_ok,
    })
}

/// Total encoded frame length for a data payload of `data_len` octets
/// (transport octet + application fragment).
pub fn encoded_len(data_len: usize) -> usize {
    DNP_HDR_SIZE + data_len + 2 * data_len.div_ceil(CHUNK_DATA_SIZE)
}

const _: () = assert!(CHUNK_SIZE - 2 == CHUNK_DATA_SIZE);
