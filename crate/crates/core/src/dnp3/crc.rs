//! CRC-16/DNP: polynomial 0x3D65, reflected input/output, init 0x0000,
//! final XOR 0xFFFF. Transmitted little-endian on the wire.

/// Reflection of the 0x3D65 generator polynomial, used by the byte-wise loop.
const POLY_REFLECTED: u16 = 0xA6BC;

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ POLY_REFLECTED
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = build_table();

/// Computes the CRC-16/DNP value of `data`.
///
/// The empty input yields 0xFFFF (init 0x0000, no octets processed, final
/// complement applied).
pub fn crc16_dnp(data: &[u8]) -> u16 {
    let mut crc = 0u16;
    for &byte in data {
        crc = (crc >> 8) ^ CRC_TABLE[((crc ^ byte as u16) & 0xFF) as usize];
    }
    crc ^ 0xFFFF
}

/// Appends the CRC of `data` to `out` in wire (little-endian) order.
pub fn push_crc(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(&crc16_dnp(data).to_le_bytes());
}

/// Checks that `crc_bytes` (little-endian) is the CRC of `data`.
pub fn verify_crc(data: &[u8], crc_bytes: [u8; 2]) -> bool {
    crc16_dnp(data) == u16::from_le_bytes(crc_bytes)
}
