//! Adversary tampering primitives: inversion involution, forgery byte
//! scope, sniff discipline, straddling edits, masking, classification and
//! the bounded forwarding queue.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use sublab_core::dnp3::*;
use sublab_core::mitm::*;
use sublab_core::netsim::{transport_checksum, EtherFrame, FramePayload, MacAddr, Segment};

const MASTER_IP: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 2);
const OUTSTATION_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 5);
const ROUTER_MAC: MacAddr = MacAddr([0x00, 0x00, 0x00, 0xAA, 0x00, 0x02]);
const OUTSTATION_MAC: MacAddr = MacAddr([0x00, 0x50, 0x56, 0x9C, 0x9D, 0x70]);
const ADVERSARY_MAC: MacAddr = MacAddr([0x00, 0x0C, 0x29, 0x3F, 0x19, 0x01]);

fn directory() -> LanDirectory {
    LanDirectory {
        adversary_mac: ADVERSARY_MAC,
        router_mac: ROUTER_MAC,
        outstation_macs: [(OUTSTATION_IP, OUTSTATION_MAC)].into_iter().collect(),
    }
}

fn command_segment(payload: Vec<u8>, seq: u32, ack: u32) -> Segment {
    let mut seg = Segment {
        src_ip: MASTER_IP,
        dst_ip: OUTSTATION_IP,
        src_port: 49152,
        dst_port: 20000,
        seq,
        ack,
        retransmission: 0,
        checksum: 0,
        payload,
    };
    seg.refresh_checksum();
    seg
}

fn response_segment(payload: Vec<u8>, seq: u32, ack: u32) -> Segment {
    let mut seg = Segment {
        src_ip: OUTSTATION_IP,
        dst_ip: MASTER_IP,
        src_port: 20000,
        dst_port: 49152,
        seq,
        ack,
        retransmission: 0,
        checksum: 0,
        payload,
    };
    seg.refresh_checksum();
    seg
}

fn to_outstation(seg: Segment) -> EtherFrame {
    EtherFrame { src_mac: ROUTER_MAC, dst_mac: ADVERSARY_MAC, payload: FramePayload::Transport(seg) }
}

fn to_master(seg: Segment) -> EtherFrame {
    EtherFrame {
        src_mac: OUTSTATION_MAC,
        dst_mac: ADVERSARY_MAC,
        payload: FramePayload::Transport(seg),
    }
}

/// Runs one frame through an idle adversary pipeline and returns the
/// emitted frame.
fn pump(adv: &mut Adversary, now: u64, frame: EtherFrame) -> EtherFrame {
    let done_at = adv.on_frame(now, frame).expect("idle pipeline accepts");
    let (out, next) = adv.on_service_done(done_at, &directory());
    assert!(next.is_none());
    out.expect("transport frames are forwarded")
}

fn segment_of(frame: &EtherFrame) -> &Segment {
    match &frame.payload {
        FramePayload::Transport(seg) => seg,
        FramePayload::Arp(_) => panic!("expected transport"),
    }
}

#[test]
fn classify_covers_the_four_classes() {
    let close = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x41).unwrap()).unwrap();
    assert_eq!(classify(&close), PacketClass::BinaryDo);

    let setpoint = encode_frame(&build_direct_operate_analog(1, 100, 0, 480.0).unwrap()).unwrap();
    assert_eq!(classify(&setpoint), PacketClass::AnalogDo);

    let points = vec![Dnp3Point::binary(PointType::Bi, 0, 0x81)];
    let response = encode_frame(&build_read_response(100, 1, &points).unwrap()).unwrap();
    assert_eq!(classify(&response), PacketClass::ReadResponse);

    let read = encode_frame(&build_read_request(1, 100)).unwrap();
    assert_eq!(classify(&read), PacketClass::Bypass);
    assert_eq!(classify(&[]), PacketClass::Bypass);
    assert_eq!(classify(&[0xDE, 0xAD, 0xBE, 0xEF]), PacketClass::Bypass);
}

/// Inverting a binary DIRECT OPERATE twice restores the original frame
/// bytes exactly (the MAC rewrite aside), and every emitted frame passes
/// full decode.
#[test]
fn binary_inversion_is_an_involution_with_valid_crcs() {
    let close = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x41).unwrap()).unwrap();
    let original = command_segment(close, 1, 1);

    let mut adv = Adversary::new(AdversaryConfig::default(), 7);
    let once = pump(&mut adv, 0, to_outstation(original.clone()));
    let once_seg = segment_of(&once);
    assert_eq!(once.dst_mac, OUTSTATION_MAC);
    assert_eq!(once.src_mac, ADVERSARY_MAC);
    let decoded = decode_frame(&once_seg.payload).expect("tampered frame passes full decode");
    let points = decoded.app.objects.iter().find_map(|o| match o {
        ObjectBlock::Points(b) => Some(b),
        _ => None,
    });
    assert_eq!(points.unwrap().payload(), &[0x81], "close became trip");
    assert_eq!(transport_checksum(once_seg), once_seg.checksum);

    let twice = pump(&mut adv, 1_000_000, to_outstation(once_seg.clone()));
    assert_eq!(
        segment_of(&twice).payload,
        original.payload,
        "applying the inversion twice restores the original octets"
    );
    assert_eq!(segment_of(&twice).checksum, original.checksum);

    // the trip goes the other way too
    let trip = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x81).unwrap()).unwrap();
    let mut adv = Adversary::new(AdversaryConfig::default(), 7);
    let out = pump(&mut adv, 0, to_outstation(command_segment(trip, 1, 1)));
    let decoded = decode_frame(&segment_of(&out).payload).unwrap();
    let block = decoded.app.objects.iter().find_map(|o| match o {
        ObjectBlock::Points(b) => Some(b),
        _ => None,
    });
    assert_eq!(block.unwrap().payload(), &[0x41]);
}

/// The binary inversion touches exactly: the control octet, the covering
/// chunk's CRC, and the transport checksum.
#[test]
fn binary_inversion_byte_diff_is_minimal() {
    let close = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x41).unwrap()).unwrap();
    let packet = decode_frame(&close).unwrap();
    let loc = locate_point(&packet, PointType::Bo, 7).unwrap();

    let mut adv = Adversary::new(AdversaryConfig::default(), 7);
    let out = pump(&mut adv, 0, to_outstation(command_segment(close.clone(), 1, 1)));
    let out_seg = segment_of(&out);

    let mut expected: Vec<usize> = loc.wire_offsets();
    let chunk_data_len = (close[2] as usize - 5 - loc.chunks[0] * 16).min(16);
    let crc_at = 10 + loc.chunks[0] * 18 + chunk_data_len;
    expected.extend([crc_at, crc_at + 1]);
    let differing: Vec<usize> =
        (0..close.len()).filter(|&i| close[i] != out_seg.payload[i]).collect();
    for d in &differing {
        assert!(expected.contains(d), "unexpected differing octet at {d}");
    }
    assert!(differing.contains(&expected[0]), "the control octet changed");
}

/// Analog forgery rewrites exactly the 4 value octets (plus covering chunk
/// CRCs and the transport checksum).
#[test]
fn analog_forgery_touches_exactly_four_value_octets() {
    let frame = encode_frame(&build_direct_operate_analog(1, 100, 0, 480.0).unwrap()).unwrap();
    let packet = decode_frame(&frame).unwrap();
    let loc = locate_point(&packet, PointType::Ao, 0).unwrap();

    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 2, ..AdversaryConfig::default() },
        7,
    );
    let out = pump(&mut adv, 0, to_outstation(command_segment(frame.clone(), 1, 1)));
    let out_seg = segment_of(&out);

    let decoded = decode_frame(&out_seg.payload).expect("forged frame decodes");
    let points = parse_points_of_operate(&decoded);
    assert_eq!(points, vec![20.0f32]);

    let value_offsets = loc.wire_offsets();
    let differing: Vec<usize> =
        (0..frame.len()).filter(|&i| frame[i] != out_seg.payload[i]).collect();
    let value_diffs: Vec<usize> =
        differing.iter().copied().filter(|i| value_offsets.contains(i)).collect();
    assert_eq!(value_diffs.len(), differing.len() - 2, "only value octets and one chunk CRC");
    assert_eq!(transport_checksum(out_seg), out_seg.checksum);

    // forging the value already on the wire leaves the payload identical
    let same = encode_frame(&build_direct_operate_analog(1, 100, 0, 20.0).unwrap()).unwrap();
    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 2, ..AdversaryConfig::default() },
        7,
    );
    let out = pump(&mut adv, 0, to_outstation(command_segment(same.clone(), 1, 1)));
    assert_eq!(segment_of(&out).payload, same);
}

fn parse_points_of_operate(packet: &Dnp3Packet) -> Vec<f32> {
    packet
        .app
        .objects
        .iter()
        .filter_map(|o| match o {
            ObjectBlock::Points(b) if b.point_type == PointType::Ao => {
                Some(f32::from_le_bytes(b.payload()[1..5].try_into().unwrap()))
            }
            _ => None,
        })
        .collect()
}

fn full_response(seq: u32, values: &[f32]) -> (Vec<u8>, Vec<Dnp3Point>) {
    let mut points = Vec::new();
    for i in 0..10u16 {
        points.push(Dnp3Point::binary(PointType::Bi, i, 0x81));
    }
    for (i, &v) in values.iter().enumerate() {
        points.push(Dnp3Point::analog(PointType::Ai, i as u16, v));
    }
    for i in 0..10u16 {
        points.push(Dnp3Point::binary(PointType::Bo, i, 0x41));
    }
    for (i, &v) in values.iter().enumerate() {
        points.push(Dnp3Point::analog(PointType::Ao, i as u16, v));
    }
    let frame = encode_frame(&build_read_response(100, 1, &points).unwrap()).unwrap();
    let _ = seq;
    (frame, points)
}

/// Every fifth read response is stored; the stored values equal the
/// plant truth; echo-sized responses are forwarded without storing.
#[test]
fn sniff_stores_every_fifth_response_with_true_values() {
    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 3, mask_acks: false, ..AdversaryConfig::default() },
        7,
    );
    let values = [480.0f32, 440.0, 400.0, 360.0, 320.0];
    let mut seq = 1u32;
    let mut stored_after = Vec::new();
    for n in 1..=12u32 {
        let (frame, _) = full_response(seq, &values);
        let len = frame.len() as u32;
        let out = pump(&mut adv, u64::from(n) * 1_000_000, to_master(response_segment(frame, seq, 1)));
        assert!(decode_frame(&segment_of(&out).payload).is_ok());
        seq += len;
        stored_after.push(adv.sniffed_responses);
    }
    // responses 1-4 pass unsniffed, the 5th and 10th are stored
    assert_eq!(stored_after, vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2]);
    let db = adv.dnp_database.get(&1).expect("outstation 1 sniffed");
    assert_eq!(db.len(), 30);
    for entry in db.iter().filter(|e| e.point.point_type == PointType::Ai) {
        let want = values[entry.point.point_index as usize];
        assert_eq!(entry.point.value.as_analog(), Some(want));
    }

    // a short (echo-sized) response is forwarded and the database is
    // untouched even when the stride lands on it
    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 3, mask_acks: false, sniff_stride: 1, ..AdversaryConfig::default() },
        7,
    );
    let echo = encode_frame(&build_operate_echo(100, 1, PointType::Bo, 7, 0x41, None)).unwrap();
    let out = pump(&mut adv, 0, to_master(response_segment(echo.clone(), 1, 1)));
    assert_eq!(segment_of(&out).payload, echo);
    assert!(adv.dnp_database.is_empty());
    assert_eq!(adv.sniffed_responses, 0);
}

/// Alg-4 style forgery: targeted points rewritten in place using stored
/// locations, straddling analogs repaired across both chunks, full decode
/// intact, and only the located chunks' CRCs differing.
#[test]
fn read_response_forgery_handles_straddling_points() {
    let mod_points = vec![ModPoint {
        outstation: 1,
        point_type: PointType::Ai,
        index: 1, // AI[1] straddles chunks 1 and 2 in the default layout
        value: 20.0,
    }];
    let mut adv = Adversary::new(
        AdversaryConfig {
            use_case: 3,
            mask_acks: false,
            sniff_stride: 1,
            mod_points,
            ..AdversaryConfig::default()
        },
        7,
    );
    let values = [480.0f32, 440.0, 400.0, 360.0, 320.0];
    let (frame, _) = full_response(1, &values);

    let packet = decode_frame(&frame).unwrap();
    let loc = locate_point(&packet, PointType::Ai, 1).unwrap();
    assert_eq!(loc.chunks.len(), 2, "AI[1] straddles a chunk boundary");

    let out = pump(&mut adv, 0, to_master(response_segment(frame.clone(), 1, 1)));
    let out_seg = segment_of(&out);
    let forged = decode_frame(&out_seg.payload).expect("straddling forgery passes decode");
    let ai1 = parse_points(&forged)
        .unwrap()
        .into_iter()
        .find(|p| p.point_type == PointType::Ai && p.point_index == 1)
        .unwrap();
    assert_eq!(ai1.value.as_analog(), Some(20.0));
    assert_eq!(ai1.chunk_index.len(), 2);

    // byte-diff: value octets plus both located chunks' CRCs, nothing else
    let data_len = frame[2] as usize - 5;
    let mut expected = loc.wire_offsets();
    for &chunk in &loc.chunks {
        let chunk_data = (data_len - chunk * 16).min(16);
        let crc_at = 10 + chunk * 18 + chunk_data;
        expected.extend([crc_at, crc_at + 1]);
    }
    let differing: Vec<usize> =
        (0..frame.len()).filter(|&i| frame[i] != out_seg.payload[i]).collect();
    for d in &differing {
        assert!(expected.contains(d), "unexpected differing octet at {d}");
    }
    let crc_diffs: Vec<usize> = differing.iter().copied().filter(|&i| {
        loc.chunks.iter().any(|&c| {
            let chunk_data = (data_len - c * 16).min(16);
            let crc_at = 10 + c * 18 + chunk_data;
            i == crc_at || i == crc_at + 1
        })
    }).collect();
    assert!(!crc_diffs.is_empty(), "both located chunks' CRCs were refreshed");

    // empty target set leaves the frame untouched
    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 3, mask_acks: false, sniff_stride: 1, ..AdversaryConfig::default() },
        7,
    );
    let out = pump(&mut adv, 0, to_master(response_segment(frame.clone(), 1, 1)));
    assert_eq!(segment_of(&out).payload, frame);
}

#[test]
fn stale_database_is_reported() {
    let mut adv = Adversary::new(
        AdversaryConfig {
            use_case: 3,
            mod_points: vec![ModPoint {
                outstation: 1,
                point_type: PointType::Ai,
                index: 40, // not housed
                value: 20.0,
            }],
            ..AdversaryConfig::default()
        },
        7,
    );
    let values = [480.0f32];
    let mut points = vec![Dnp3Point::binary(PointType::Bi, 0, 0x81)];
    points.push(Dnp3Point::analog(PointType::Ai, 0, values[0]));
    let frame = encode_frame(&build_read_response(100, 1, &points).unwrap()).unwrap();
    let mut seg = response_segment(frame, 1, 1);
    // populate the database directly via the sniffer path
    adv.dnp_database.insert(
        1,
        decode_frame(&seg.payload)
            .ok()
            .map(|p| {
                parse_points(&p)
                    .unwrap()
                    .into_iter()
                    .map(|point| SniffedPoint {
                        location: locate_point(&p, point.point_type, point.point_index).unwrap(),
                        point,
                    })
                    .collect()
            })
            .unwrap(),
    );
    let err = adv.modify_read_response(&mut seg, 1).unwrap_err();
    assert!(matches!(err, MitmError::StaleDatabase { outstation: 1, index: 40, .. }));
}

/// Masking rewrites a tampered command's echo to the operator's intent and
/// consumes the stored acknowledgement; untampered responses pass through;
/// two commands in flight each get masked exactly once.
#[test]
fn ack_masking_consumes_stored_acks_exactly_once() {
    let mut adv = Adversary::new(AdversaryConfig::default(), 7);

    // two close commands in flight to breakers 6 and 7
    let cmd6 = encode_frame(&build_direct_operate_binary(1, 100, 6, 0x41).unwrap()).unwrap();
    let cmd7 = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x41).unwrap()).unwrap();
    let len6 = cmd6.len() as u32;
    let out6 = pump(&mut adv, 0, to_outstation(command_segment(cmd6, 1, 1)));
    let out7 = pump(&mut adv, 1_000, to_outstation(command_segment(cmd7, 1 + len6, 1)));
    for out in [&out6, &out7] {
        let decoded = decode_frame(&segment_of(out).payload).unwrap();
        let block = decoded.app.objects.iter().find_map(|o| match o {
            ObjectBlock::Points(b) => Some(b),
            _ => None,
        });
        assert_eq!(block.unwrap().payload(), &[0x81], "tampered to trip");
    }

    // the outstation echoes the tampered (trip) state for both
    let echo6 = encode_frame(&build_operate_echo(100, 1, PointType::Bo, 6, 0x81, None)).unwrap();
    let echo7 = encode_frame(&build_operate_echo(100, 1, PointType::Bo, 7, 0x81, None)).unwrap();
    let len_e6 = echo6.len() as u32;
    let masked6 = pump(&mut adv, 2_000, to_master(response_segment(echo6, 1, 0)));
    let masked7 = pump(&mut adv, 3_000, to_master(response_segment(echo7, 1 + len_e6, 0)));
    for (masked, index) in [(&masked6, 6u16), (&masked7, 7)] {
        let decoded = decode_frame(&segment_of(masked).payload).unwrap();
        let block = decoded.app.objects.iter().find_map(|o| match o {
            ObjectBlock::Points(b) => Some(b),
            _ => None,
        }).unwrap();
        assert_eq!(block.start_index, index);
        assert_eq!(block.payload(), &[0x41], "echo masked back to the close intent");
    }
    assert_eq!(adv.masked_responses, 2);

    // a retransmitted copy of a masked echo is masked again, not leaked
    let echo6_retx = encode_frame(&build_operate_echo(100, 1, PointType::Bo, 6, 0x81, None)).unwrap();
    let mut seg = response_segment(echo6_retx, 1, 0);
    seg.retransmission = 1;
    seg.refresh_checksum();
    let remasked = pump(&mut adv, 4_000, to_master(seg));
    let decoded = decode_frame(&segment_of(&remasked).payload).unwrap();
    let block = decoded.app.objects.iter().find_map(|o| match o {
        ObjectBlock::Points(b) => Some(b),
        _ => None,
    }).unwrap();
    assert_eq!(block.payload(), &[0x41]);
    assert_eq!(adv.masked_responses, 2, "remasking a wire copy is not a new consume");

    // a fresh echo without a stored ack passes through untouched
    let unrelated = encode_frame(&build_operate_echo(100, 1, PointType::Bo, 3, 0x41, None)).unwrap();
    let out = pump(&mut adv, 5_000, to_master(response_segment(unrelated.clone(), 500, 0)));
    assert_eq!(segment_of(&out).payload, unrelated);
}

#[test]
fn queue_bounds_and_overflow_drops() {
    let mut adv = Adversary::new(
        AdversaryConfig { queue_bound: 2, ..AdversaryConfig::default() },
        7,
    );
    let frame = || {
        let bytes = encode_frame(&build_read_request(1, 100)).unwrap();
        to_outstation(command_segment(bytes, 1, 1))
    };
    let done = adv.on_frame(0, frame()).expect("first enters service");
    assert!(adv.on_frame(10, frame()).is_none()); // queued
    assert!(adv.on_frame(20, frame()).is_none()); // queued
    assert!(adv.on_frame(30, frame()).is_none()); // dropped
    assert_eq!(adv.queue_drops, 1);
    assert_eq!(adv.backlog(), 3);

    // service completions drain the queue in order
    let (out, next) = adv.on_service_done(done, &directory());
    assert!(out.is_some());
    let next = next.expect("queued frame starts service");
    let (_, next2) = adv.on_service_done(next, &directory());
    assert!(next2.is_some());
}

#[test]
fn delay_model_sampling_is_positive_and_concentrated() {
    let model = DelayModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for class in PacketClass::ALL {
        let mean = model.mean_ms(class);
        let mut sum = 0.0;
        for _ in 0..2_000 {
            let sample_ms = model.sample_us(class, &mut rng) as f64 / 1000.0;
            assert!(sample_ms > 0.0);
            assert!(sample_ms >= mean * 0.899 && sample_ms <= mean * 1.101, "{class:?}: {sample_ms}");
            sum += sample_ms;
        }
        let sample_mean = sum / 2_000.0;
        assert!((sample_mean - mean).abs() / mean < 0.05, "{class:?}: {sample_mean} vs {mean}");
    }
}

/// With CRC recomputation disabled, the tampered frame keeps a stale chunk
/// CRC (detectable) but a valid transport checksum.
#[test]
fn crc_recompute_disabled_leaves_stale_crc()
{
    let close = encode_frame(&build_direct_operate_binary(1, 100, 7, 0x41).unwrap()).unwrap();
    let mut adv = Adversary::new(
        AdversaryConfig { recompute_crc: false, ..AdversaryConfig::default() },
        7,
    );
    let out = pump(&mut adv, 0, to_outstation(command_segment(close, 1, 1)));
    let seg = segment_of(&out);
    assert!(matches!(decode_frame(&seg.payload), Err(CodecError::ChunkCrcMismatch { .. })));
    assert_eq!(transport_checksum(seg), seg.checksum, "transport checksum still refreshed");
    let summary = summarize_frame(&seg.payload).unwrap();
    assert!(!summary.crc_ok);
    assert_eq!(summary.function, 0x05);
}

/// Database keyed by outstation source address: two outstations do not
/// cross-contaminate.
#[test]
fn database_is_per_outstation() {
    let mut adv = Adversary::new(
        AdversaryConfig { use_case: 3, mask_acks: false, sniff_stride: 1, ..AdversaryConfig::default() },
        7,
    );
    let os2_ip = Ipv4Addr::new(192, 168, 0, 6);
    let mut dir = directory();
    dir.outstation_macs.insert(os2_ip, MacAddr([0x00, 0x50, 0x56, 0x9C, 0x9D, 0x71]));

    let points1 = vec![Dnp3Point::analog(PointType::Ai, 0, 111.0)];
    let points2 = vec![Dnp3Point::analog(PointType::Ai, 0, 222.0)];
    for (addr, src_ip, points) in [(1u16, OUTSTATION_IP, &points1), (2, os2_ip, &points2)] {
        // pad out to a full chunk so the sniffer stores it
        let mut all: Vec<Dnp3Point> =
            (0..10).map(|i| Dnp3Point::binary(PointType::Bi, i, 0x81)).collect();
        all.extend(points.iter().cloned());
        let frame = encode_frame(&build_read_response(100, addr, &all).unwrap()).unwrap();
        let mut seg = response_segment(frame, 1, 1);
        seg.src_ip = src_ip;
        seg.refresh_checksum();
        let done = adv.on_frame(0, to_master(seg)).unwrap();
        adv.on_service_done(done, &dir);
    }
    let db1 = &adv.dnp_database[&1];
    let db2 = &adv.dnp_database[&2];
    let ai = |db: &Vec<SniffedPoint>| {
        db.iter()
            .find(|e| e.point.point_type == PointType::Ai)
            .and_then(|e| e.point.value.as_analog())
    };
    assert_eq!(ai(db1), Some(111.0));
    assert_eq!(ai(db2), Some(222.0));

    let mut counts = BTreeMap::new();
    counts.insert(1u16, db1.len());
    counts.insert(2, db2.len());
    assert_eq!(counts[&1], 11);
    assert_eq!(counts[&2], 11);
}
