//! Human-friendly quantities used in scenario files.
//!
//! * Byte sizes: integer bytes, or a number with a `B`, `KB`, `MB`, `GB`,
//!   `TB` (powers of 1000) or `KiB`, `MiB`, `GiB`, `TiB` (powers of 1024)
//!   suffix, e.g. `512MB`, `1.5GiB`.
//! * Durations: integer seconds, or concatenated `<n>d`, `<n>h`, `<n>m`,
//!   `<n>s` parts, e.g. `48h0m0s`, `120d`.
//! * CPU: integer millicores, or a string holding cores (`"2"`, `"0.5"`) or
//!   millicores (`"500m"`).

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {what} {input:?}: {reason}")]
pub struct UnitError {
    pub what: &'static str,
    pub input: String,
    pub reason: String,
}

fn unit_err(what: &'static str, input: &str, reason: impl Into<String>) -> UnitError {
    UnitError {
        what,
        input: input.to_string(),
        reason: reason.into(),
    }
}

/// Parses `digits[.digits]` and multiplies by `scale`, requiring an exact
/// integer result.
fn scaled(what: &'static str, input: &str, number: &str, scale: u64) -> Result<u64, UnitError> {
    let (int, frac) = number.split_once('.').unwrap_or((number, ""));
    let digits_ok = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !digits_ok(int) || !digits_ok(frac) || (number.contains('.') && frac.is_empty()) {
        return Err(unit_err(what, input, "expected a non-negative number"));
    }
    let overflow = || unit_err(what, input, "value too large");
    let whole: u128 = int.parse().map_err(|_| overflow())?;
    let mut total = whole.checked_mul(scale.into()).ok_or_else(overflow)?;
    if !frac.is_empty() {
        let denom = 10u128.checked_pow(frac.len() as u32).ok_or_else(overflow)?;
        let num: u128 = frac.parse().map_err(|_| overflow())?;
        let part = num.checked_mul(scale.into()).ok_or_else(overflow)?;
        if part % denom != 0 {
            return Err(unit_err(what, input, "fraction does not resolve to a whole unit"));
        }
        total += part / denom;
    }
    u64::try_from(total).map_err(|_| overflow())
}

pub fn parse_bytes(input: &str) -> Result<u64, UnitError> {
    let s = input.trim();
    let split = s.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(s.len());
    let (number, suffix) = s.split_at(split);
    let scale: u64 = match suffix.trim() {
        "" | "B" => 1,
        "KB" | "kB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        "TB" => 1_000_000_000_000,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        "TiB" => 1 << 40,
        other => return Err(unit_err("size", input, format!("unknown suffix {other:?}"))),
    };
    scaled("size", input, number, scale)
}

pub fn parse_duration(input: &str) -> Result<u64, UnitError> {
    let s = input.trim();
    if s.is_empty() {
        return Err(unit_err("duration", input, "empty"));
    }
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return s.parse().map_err(|_| unit_err("duration", input, "value too large"));
    }
    let mut total: u64 = 0;
    let mut rest = s;
    while !rest.is_empty() {
        let split = rest
            .find(|c: char| !c.is_ascii_digit())
            .ok_or_else(|| unit_err("duration", input, "trailing number without unit"))?;
        if split == 0 {
            return Err(unit_err("duration", input, "expected a number"));
        }
        let (number, tail) = rest.split_at(split);
        let unit = tail.chars().next().expect("non-digit present");
        let scale = match unit {
            'd' => 86_400,
            'h' => 3_600,
            'm' => 60,
            's' => 1,
            other => return Err(unit_err("duration", input, format!("unknown unit {other:?}"))),
        };
        let part = scaled("duration", input, number, scale)?;
        total = total
            .checked_add(part)
            .ok_or_else(|| unit_err("duration", input, "value too large"))?;
        rest = &tail[unit.len_utf8()..];
    }
    Ok(total)
}

/// Formats seconds as `<h>h<m>m<s>s`.
pub fn format_duration(secs: u64) -> String {
    format!("{}h{}m{}s", secs / 3600, secs % 3600 / 60, secs % 60)
}

pub fn parse_cpu(input: &str) -> Result<u64, UnitError> {
    let s = input.trim();
    match s.strip_suffix('m') {
        Some(millis) => scaled("cpu", input, millis, 1),
        None => scaled("cpu", input, s, 1000),
    }
}

struct QuantityVisitor {
    what: &'static str,
    parse: fn(&str) -> Result<u64, UnitError>,
}

impl Visitor<'_> for QuantityVisitor {
    type Value = u64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a non-negative integer or a {} string", self.what)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<u64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<u64, E> {
        u64::try_from(v).map_err(|_| E::custom(format!("{} must be non-negative, got {v}", self.what)))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<u64, E> {
        (self.parse)(v).map_err(E::custom)
    }
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $what:literal, $parse:path) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                d.deserialize_any(QuantityVisitor {
                    what: $what,
                    parse: $parse,
                })
                .map($name)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_u64(self.0)
            }
        }

        impl From<$name> for u64 {
            fn from(q: $name) -> u64 {
                q.0
            }
        }
    };
}

quantity!(
    /// A byte count.
    Bytes,
    "size",
    parse_bytes
);
quantity!(
    /// A span of simulated seconds.
    Seconds,
    "duration",
    parse_duration
);
quantity!(
    /// CPU in thousandths of a core.
    Millicores,
    "cpu",
    parse_cpu
);
