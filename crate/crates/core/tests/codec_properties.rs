//! Property tests over the codec invariants.

use proptest::prelude::*;
use sublab_core::dnp3::*;

fn arb_point_type() -> impl Strategy<Value = PointType> {
    prop_oneof![
        Just(PointType::Bi),
        Just(PointType::Bo),
        Just(PointType::Ai),
        Just(PointType::Ao),
        Just(PointType::Counter),
    ]
}

fn arb_object() -> impl Strategy<Value = ObjectBlock> {
    prop_oneof![
        (0u8..4).prop_map(|class| ObjectBlock::ClassPoll { class }),
        (arb_point_type(), any::<u16>(), 0usize..8).prop_flat_map(|(pt, start, count)| {
            proptest::collection::vec(any::<u8>(), count * pt.width())
                .prop_map(move |payload| {
                    ObjectBlock::Points(PointBlock::new(pt, start, payload).unwrap())
                })
        }),
    ]
}

prop_compose! {
    fn arb_packet()(
        control in any::<u8>(),
        destination in any::<u16>(),
        source in any::<u16>(),
        fir in any::<bool>(),
        fin in any::<bool>(),
        sequence in 0u8..64,
        app_control in any::<u8>(),
        function in prop_oneof![
            Just(FunctionCode::Read),
            Just(FunctionCode::DirectOperate),
            Just(FunctionCode::SolicitedResponse),
            Just(FunctionCode::Confirm),
            Just(FunctionCode::Operate),
            (0u8..=255).prop_map(FunctionCode::from_code),
        ],
        objects in proptest::collection::vec(arb_object(), 0..3),
    ) -> Dnp3Packet {
        Dnp3Packet {
            link: LinkHeader { control, destination, source },
            transport: TransportOctet { fir, fin, sequence },
            app: ApplicationFragment { app_control, function, objects },
        }
    }
}

proptest! {
    /// decode(encode(p)) == p and encode(decode(bytes)) == bytes for every
    /// packet whose payload fits the length octet.
    #[test]
    fn round_trip_identity(packet in arb_packet()) {
        match encode_frame(&packet) {
            Ok(frame) => {
                let decoded = decode_frame(&frame).unwrap();
                prop_assert_eq!(&decoded, &packet);
                prop_assert_eq!(encode_frame(&decoded).unwrap(), frame);
            }
            Err(CodecError::PayloadTooLarge { .. }) => {} // oversized inputs are rejected, not mangled
            Err(other) => return Err(TestCaseError::fail(format!("unexpected error {other}"))),
        }
    }

    /// unchunk(chunk(payload)) == payload, and the chunked length follows
    /// the ceil arithmetic.
    #[test]
    fn chunk_round_trip(payload in proptest::collection::vec(any::<u8>(), 1..200)) {
        let chunked = chunk_payload(&payload);
        prop_assert_eq!(chunked.len(), payload.len() + 2 * payload.len().div_ceil(16));
        prop_assert_eq!(unchunk_payload(&chunked).unwrap(), payload);
    }

    /// Any single corrupted octet in a chunked payload is detected.
    #[test]
    fn chunk_corruption_detected(
        payload in proptest::collection::vec(any::<u8>(), 1..100),
        victim_seed in any::<usize>(),
        bit in 0u8..8,
    ) {
        let chunked = chunk_payload(&payload);
        let victim = victim_seed % chunked.len();
        let mut corrupted = chunked.clone();
        corrupted[victim] ^= 1 << bit;
        let detected =
            matches!(unchunk_payload(&corrupted), Err(CodecError::ChunkCrcMismatch { .. }));
        prop_assert!(detected);
    }

    /// parse_points inverts build_read_response for well-formed point sets.
    #[test]
    fn points_round_trip(
        bi in proptest::collection::vec(any::<u8>(), 0..6),
        ai in proptest::collection::vec(-1e6f32..1e6, 0..6),
        bo in proptest::collection::vec(any::<u8>(), 0..6),
        ao in proptest::collection::vec(-1e6f32..1e6, 0..6),
    ) {
        let mut points = Vec::new();
        for (i, &v) in bi.iter().enumerate() {
            points.push(Dnp3Point::binary(PointType::Bi, i as u16, v));
        }
        for (i, &v) in ai.iter().enumerate() {
            points.push(Dnp3Point::analog(PointType::Ai, i as u16, v));
        }
        for (i, &v) in bo.iter().enumerate() {
            points.push(Dnp3Point::binary(PointType::Bo, i as u16, v));
        }
        for (i, &v) in ao.iter().enumerate() {
            points.push(Dnp3Point::analog(PointType::Ao, i as u16, v));
        }
        prop_assume!(!points.is_empty());
        let response = build_read_response(1, 4, &points).unwrap();
        let parsed = parse_points(&response).unwrap();
        prop_assert_eq!(parsed.len(), points.len());
        for (a, b) in parsed.iter().zip(points.iter()) {
            prop_assert!(a.same_point(b), "{:?} vs {:?}", a, b);
        }
    }
}

/// The canonical DIRECT OPERATE close of breaker 7 encodes to these exact
/// octets (self-generated golden bytes; function 05, index 07 00, control
/// 41 visible in the application fragment).
#[test]
fn golden_direct_operate_close_frame() {
    let frame =
        encode_frame(&build_direct_operate_binary(4, 1, 7, CONTROL_CLOSE).unwrap()).unwrap();
    assert_eq!(
        format_hex_dump(&frame),
        "05 64 0e c4 04 00 01 00 88 c8 c0 c0 05 02 07 00\n01 00 41 95 15"
    );
}
