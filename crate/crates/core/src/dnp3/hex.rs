//! Hex renderings used by golden-file tests and the CLI inspector.

/// Renders octets as two lowercase hex digits each, space-separated,
/// sixteen octets per line.
pub fn format_hex_dump(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 3 + bytes.len() / 16 + 1);
    for (i, byte) in bytes.iter().enumerate() {
        if i > 0 {
            out.push(if i % 16 == 0 { '\n' } else { ' ' });
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Parses hex input, ignoring whitespace. Both the dump format above and
/// compact hex are accepted.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    let digits: Vec<u8> = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            c.to_digit(16)
                .map(|d| d as u8)
                .ok_or_else(|| format!("invalid hex character {c:?}"))
        })
        .collect::<Result<_, _>>()?;
    if !digits.len().is_multiple_of(2) {
        return Err(format!("odd number of hex digits ({})", digits.len()));
    }
    Ok(digits.chunks(2).map(|pair| (pair[0] << 4) | pair[1]).collect())
}

/// Compact lowercase hex, no separators. Used for raw octets in capture
/// files.
pub fn to_compact_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_wraps_at_sixteen_octets() {
        let bytes: Vec<u8> = (0..18).collect();
        let dump = format_hex_dump(&bytes);
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "00 01 02 03 04 05 06 07 08 09 0a 0b 0c 0d 0e 0f");
        assert_eq!(lines[1], "10 11");
    }

    #[test]
    fn parse_accepts_dump_and_compact_forms() {
        let bytes = vec![0x05, 0x64, 0xab];
        assert_eq!(parse_hex(&format_hex_dump(&bytes)).unwrap(), bytes);
        assert_eq!(parse_hex("0564AB").unwrap(), bytes);
        assert!(parse_hex("05 6").is_err());
        assert!(parse_hex("zz").is_err());
    }
}
