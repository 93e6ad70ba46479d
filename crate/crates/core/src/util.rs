//! Small shared helpers.

/// Serde adapter storing a `Duration` as integer milliseconds.
pub mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Duration, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(value.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(deserializer)?))
    }
}

/// Truncates `text` to at most `cap` characters at a character boundary,
/// appending `marker` when anything was cut.
pub fn truncate_chars(text: &str, cap: usize, marker: &str) -> String {
    match text.char_indices().nth(cap) {
        Some((byte_index, _)) => {
            let mut out = text[..byte_index].to_string();
            out.push_str(marker);
            out
        }
        None => text.to_string(),
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncate_respects_char_boundaries() {
        let text = "aé漢x";
        assert_eq!(truncate_chars(text, 2, "…"), "aé…");
        assert_eq!(truncate_chars(text, 10, "…"), text);
    }
}
