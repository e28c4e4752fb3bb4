//! Layered frame decode and capture summaries for `sublab inspect`.

use std::path::Path;
use sublab_core::dnp3::{
    crc16_dnp, format_hex_dump, parse_hex, summarize_frame, verify_crc, CodecError, Dnp3Packet,
    FunctionCode, ObjectBlock, CHUNK_SIZE, DNP_HDR_SIZE,
};
use sublab_core::netsim::{ms_string, CaptureKind, CaptureRecord, Direction};
use sublab_core::scenario::{parse_capture_file, ScenarioError};

/// Dispatches on the input: an existing file is treated as a capture log,
/// anything else must parse as hex octets.
pub fn inspect(input: &str) -> anyhow::Result<String> {
    let path = Path::new(input);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        let records = parse_capture_file(&text).map_err(|e| anyhow::anyhow!("{e}"))?;
        return Ok(render_capture_summary(&records));
    }
    let bytes = parse_hex(input)
        .map_err(|e| ScenarioError::Parse(format!("not a file and not hex: {e}")))?;
    Ok(render_frame(&bytes))
}

/// Layered decode of one frame, with per-chunk CRC verdicts. Decode errors
/// are reported with their octet offsets.
pub fn render_frame(bytes: &[u8]) -> String {
    let mut out = String::new();
    out.push_str(&format!("frame ({} octets):\n{}\n", bytes.len(), format_hex_dump(bytes)));

    if bytes.len() < DNP_HDR_SIZE {
        out.push_str(&format!(
            "ERROR: truncated at offset {}: need a 10-octet link header\n",
            bytes.len()
        ));
        return out;
    }

    // link layer
    let sync_ok = bytes[0] == 0x05 && bytes[1] == 0x64;
    let header_crc = u16::from_le_bytes([bytes[8], bytes[9]]);
    let header_crc_ok = crc16_dnp(&bytes[..8]) == header_crc;
    out.push_str(&format!(
        "link: sync {:02x} {:02x} ({}) | length {} | control {:02x} | dest {} | src {} | header crc {:04x} ({})\n",
        bytes[0],
        bytes[1],
        if sync_ok { "ok" } else { "BAD, offset 0" },
        bytes[2],
        bytes[3],
        u16::from_le_bytes([bytes[4], bytes[5]]),
        u16::from_le_bytes([bytes[6], bytes[7]]),
        header_crc,
        if header_crc_ok { "ok" } else { "MISMATCH, offset 8" },
    ));

    // chunk verdicts
    let mut chunk = 0;
    let mut offset = DNP_HDR_SIZE;
    while offset < bytes.len() {
        let remaining = bytes.len() - offset;
        if remaining < 3 {
            out.push_str(&format!(
                "chunk {chunk}: TRUNCATED at offset {offset} ({remaining} trailing octets)\n"
            ));
            break;
        }
        let data_len = (remaining - 2).min(16);
        let data = &bytes[offset..offset + data_len];
        let crc = [bytes[offset + data_len], bytes[offset + data_len + 1]];
        if verify_crc(data, crc) {
            out.push_str(&format!("chunk {chunk}: {data_len} data octets, crc ok\n"));
        } else {
            out.push_str(&format!(
                "chunk {chunk}: CRC MISMATCH at chunk {chunk} (crc octets at offset {})\n",
                offset + data_len
            ));
        }
        offset += data_len + 2;
        chunk += 1;
    }

    match sublab_core::dnp3::decode_frame(bytes) {
        Ok(packet) => out.push_str(&render_layers(&packet)),
        Err(error) => {
            out.push_str(&format!("decode: ERROR {error}{}\n", error_offset(&error)));
            // fall back to the tolerant summary when the structure allows
            if let Some(summary) = summarize_frame(bytes) {
                out.push_str(&format!(
                    "lenient summary: function {:#04x} ({}) crc_ok={}\n",
                    summary.function, summary.function_name, summary.crc_ok
                ));
            }
        }
    }
    out
}

fn error_offset(error: &CodecError) -> String {
    match error {
        CodecError::BadSync { .. } => " (offset 0)".to_string(),
        CodecError::HeaderCrcMismatch { .. } => " (offset 8)".to_string(),
        CodecError::ChunkCrcMismatch { chunk } => {
            format!(" (chunk {chunk} starts at offset {})", DNP_HDR_SIZE + chunk * CHUNK_SIZE)
        }
        CodecError::UnknownObjectLayout { offset, .. } => {
            format!(" (application offset {offset})")
        }
        _ => String::new(),
    }
}

fn render_layers(packet: &Dnp3Packet) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "transport: fir={} fin={} sequence={}\n",
        packet.transport.fir, packet.transport.fin, packet.transport.sequence
    ));
    out.push_str(&format!(
        "application: control {:02x} | function {:#04x} ({})\n",
        packet.app.app_control,
        packet.app.function.code(),
        packet.app.function.name()
    ));
    for object in &packet.app.objects {
        match object {
            ObjectBlock::ClassPoll { class } => {
                out.push_str(&format!("  object: Class {class} poll designator\n"));
            }
            ObjectBlock::Points(block) => {
                out.push_str(&format!(
                    "  object: {} start {} count {} | payload {}\n",
                    block.point_type.name(),
                    block.start_index,
                    block.count(),
                    if block.payload().is_empty() {
                        "(empty)".to_string()
                    } else {
                        format_hex_dump(block.payload()).replace('\n', " ")
                    }
                ));
            }
        }
    }
    if packet.app.function == FunctionCode::SolicitedResponse {
        if let Ok(points) = sublab_core::dnp3::parse_points(packet) {
            out.push_str(&format!("points: {}\n", points.len()));
        }
    }
    out
}

/// One line per capture record.
pub fn render_capture_summary(records: &[CaptureRecord]) -> String {
    let mut out = String::new();
    for (index, record) in records.iter().enumerate() {
        out.push_str(&render_record_line(index, record));
        out.push('\n');
    }
    out.push_str(&format!("{} records\n", records.len()));
    out
}

fn render_record_line(index: usize, record: &CaptureRecord) -> String {
    let direction = match record.dir {
        Direction::Tx => "tx",
        Direction::Rx => "rx",
    };
    let detail = match record.kind {
        CaptureKind::Arp => {
            let arp = record.arp.as_ref().expect("arp record");
            format!(
                "ARP {:?} {} is-at {}",
                arp.op, arp.sender_ip, arp.sender_mac
            )
        }
        CaptureKind::Transport => {
            let t = record.transport.expect("transport record");
            let dnp3 = match &record.dnp3 {
                Some(s) => format!(
                    " dnp3 fc={:#04x} ({}) crc_ok={}",
                    s.function, s.function_name, s.crc_ok
                ),
                None => String::new(),
            };
            let retrans = if t.retransmission > 0 {
                format!(" retransmission#{}", t.retransmission)
            } else {
                String::new()
            };
            format!(
                "{}:{} -> {}:{} seq={} ack={} len={}{}{}",
                record.src_ip.map(|ip| ip.to_string()).unwrap_or_default(),
                t.src_port,
                record.dst_ip.map(|ip| ip.to_string()).unwrap_or_default(),
                t.dst_port,
                t.seq,
                t.ack,
                t.payload_len,
                retrans,
                dnp3
            )
        }
    };
    format!(
        "#{index:<6} [{}] {}/{} {} {} -> {} {}",
        ms_string(record.ts_us),
        record.node,
        record.medium,
        direction,
        record.src_mac,
        record.dst_mac,
        detail
    )
}
