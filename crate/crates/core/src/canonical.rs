//! Canonical object notation: JSON objects with lexicographically sorted keys,
//! one value per line, reals in shortest round-trip decimal form.
//!
//! Every persisted artifact (spool records, model files, store logs, ERP lines,
//! config files) and every wire message goes through these two functions so
//! that byte counts and file contents are reproducible.

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Serializes `value` as a single canonical line (no trailing newline).
///
/// Struct fields are routed through `serde_json::Value`, whose object map is a
/// `BTreeMap`, so keys come out sorted regardless of declaration order.
pub fn to_line<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Same as [`to_line`], with the `\n` terminator appended.
pub fn to_framed_line<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = to_line(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_line<T: DeserializeOwned>(line: &str) -> Result<T, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
}

/// Pretty (multi-line) canonical form for human-edited config files.
pub fn to_pretty<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string_pretty(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Unsorted {
        zeta: u32,
        alpha: f64,
        mid: Vec<f64>,
    }

    #[test]
    fn keys_are_sorted() {
        let line = to_line(&Unsorted {
            zeta: 1,
            alpha: 0.1,
            mid: vec![1.0, 2.5],
        })
        .unwrap();
        assert_eq!(line, r#"{"alpha":0.1,"mid":[1.0,2.5],"zeta":1}"#);
    }

    #[test]
    fn reals_round_trip_bit_exact() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456789.123456789, f64::MAX, f64::MIN_POSITIVE] {
            let v = Unsorted {
                zeta: 0,
                alpha: x,
                mid: vec![],
            };
            let back: Unsorted = from_line(&to_line(&v).unwrap()).unwrap();
            assert_eq!(back.alpha.to_bits(), x.to_bits());
        }
    }
}
