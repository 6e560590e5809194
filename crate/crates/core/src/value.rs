//! Coordinate values, dimension names and the token conventions shared by
//! every text format in the crate.
//!
//! Tokens are typed by sniffing:
//!
//! | token                         | kind        |
//! |-------------------------------|-------------|
//! | `YYYYMMDD` (valid date)       | `Date`      |
//! | `YYYYMMDDTHHMMSS` (valid)     | `Timestamp` |
//! | `-?[0-9]+` fitting in `i64`   | `Int`       |
//! | anything else                 | `Str`       |
//!
//! An eight digit token that is not a calendar date (`20201399`) is an
//! `Int`. Callers that need a fixed type per dimension pass an override
//! (see [`ValueKind::parse`]).

use std::borrow::Borrow;
use std::fmt;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};

use crate::error::{QubeError, Result};

const DATE_FMT: &str = "%Y%m%d";
const TIMESTAMP_FMT: &str = "%Y%m%dT%H%M%S";
const ISO_DATE_FMT: &str = "%Y-%m-%d";
const ISO_TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S";

/// The type tag of a [`CoordinateValue`]. Declaration order is the tag rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueKind {
    Int,
    Str,
    Date,
    Timestamp,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Int => "int",
            ValueKind::Str => "str",
            ValueKind::Date => "date",
            ValueKind::Timestamp => "timestamp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "int" => ValueKind::Int,
            "str" => ValueKind::Str,
            "date" => ValueKind::Date,
            "timestamp" => ValueKind::Timestamp,
            _ => return None,
        })
    }

    /// Parses an (already unescaped) token as this kind, bypassing sniffing.
    pub fn parse(self, token: &str) -> Option<CoordinateValue> {
        match self {
            ValueKind::Int => token.parse().ok().map(CoordinateValue::Int),
            ValueKind::Str => Some(CoordinateValue::Str(token.into())),
            ValueKind::Date => NaiveDate::parse_from_str(token, DATE_FMT)
                .ok()
                .filter(|_| token.len() == 8)
                .map(CoordinateValue::Date),
            ValueKind::Timestamp => NaiveDateTime::parse_from_str(token, TIMESTAMP_FMT)
                .ok()
                .filter(|_| token.len() == 15)
                .map(CoordinateValue::Timestamp),
        }
    }
}

/// One admissible coordinate on a dimension.
///
/// The derived ordering compares the tag rank first
/// (`Int < Str < Date < Timestamp`) and the natural order second.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoordinateValue {
    Int(i64),
    Str(Arc<str>),
    Date(NaiveDate),
    Timestamp(NaiveDateTime),
}

impl CoordinateValue {
    pub fn str(s: &str) -> Self {
        CoordinateValue::Str(s.into())
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            CoordinateValue::Int(_) => ValueKind::Int,
            CoordinateValue::Str(_) => ValueKind::Str,
            CoordinateValue::Date(_) => ValueKind::Date,
            CoordinateValue::Timestamp(_) => ValueKind::Timestamp,
        }
    }

    /// Types an unescaped token by the sniffing rules in the module docs.
    pub fn sniff(token: &str) -> Self {
        let bytes = token.as_bytes();
        let digits = |b: &[u8]| !b.is_empty() && b.iter().all(u8::is_ascii_digit);
        if bytes.len() == 8 && digits(bytes) {
            if let Some(v) = ValueKind::Date.parse(token) {
                return v;
            }
        }
        if bytes.len() == 15 && bytes[8] == b'T' && digits(&bytes[..8]) && digits(&bytes[9..]) {
            if let Some(v) = ValueKind::Timestamp.parse(token) {
                return v;
            }
        }
        let unsigned = bytes.strip_prefix(b"-").unwrap_or(bytes);
        if digits(unsigned) {
            if let Ok(i) = token.parse() {
                return CoordinateValue::Int(i);
            }
        }
        CoordinateValue::Str(token.into())
    }

    /// The unescaped token form: what [`CoordinateValue::sniff`] reads back.
    pub fn token(&self) -> String {
        match self {
            CoordinateValue::Int(i) => i.to_string(),
            CoordinateValue::Str(s) => s.to_string(),
            CoordinateValue::Date(d) => d.format(DATE_FMT).to_string(),
            CoordinateValue::Timestamp(t) => t.format(TIMESTAMP_FMT).to_string(),
        }
    }

    /// True when `sniff(token())` reproduces this value exactly.
    pub fn sniffs_back(&self) -> bool {
        &CoordinateValue::sniff(&self.token()) == self
    }

    pub(crate) fn to_iso(&self) -> String {
        match self {
            CoordinateValue::Date(d) => d.format(ISO_DATE_FMT).to_string(),
            CoordinateValue::Timestamp(t) => t.format(ISO_TIMESTAMP_FMT).to_string(),
            other => other.token(),
        }
    }

    pub(crate) fn from_iso_date(s: &str) -> Option<Self> {
        NaiveDate::parse_from_str(s, ISO_DATE_FMT)
            .ok()
            .map(CoordinateValue::Date)
    }

    pub(crate) fn from_iso_timestamp(s: &str) -> Option<Self> {
        NaiveDateTime::parse_from_str(s, ISO_TIMESTAMP_FMT)
            .ok()
            .map(CoordinateValue::Timestamp)
    }
}

impl fmt::Display for CoordinateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl From<i64> for CoordinateValue {
    fn from(i: i64) -> Self {
        CoordinateValue::Int(i)
    }
}

impl From<&str> for CoordinateValue {
    fn from(s: &str) -> Self {
        CoordinateValue::Str(s.into())
    }
}

/// A validated, case-sensitive dimension name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimensionName(Arc<str>);

impl DimensionName {
    pub fn new(name: &str) -> Result<Self> {
        if name.is_empty() {
            return Err(QubeError::EmptyDimensionName);
        }
        if name.contains([',', '=', '/', '\n']) {
            return Err(QubeError::InvalidDimensionName(name.to_string()));
        }
        Ok(DimensionName(name.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub(crate) fn root() -> Self {
        DimensionName(ROOT_DIM.into())
    }
}

pub(crate) const ROOT_DIM: &str = "root";

impl fmt::Debug for DimensionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}

impl fmt::Display for DimensionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for DimensionName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<&str> for DimensionName {
    type Error = QubeError;

    fn try_from(s: &str) -> Result<Self> {
        DimensionName::new(s)
    }
}

/// Characters percent-encoded in record, constraint and tree text.
pub(crate) const RESERVED: &[char] = &[',', '=', '/', '%', '\n', '\r'];

/// Percent-encodes every reserved character plus any in `extra`.
pub fn escape(s: &str, extra: &[char]) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if RESERVED.contains(&c) || extra.contains(&c) {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Reverses [`escape`]. On failure returns the byte offset of the bad escape.
pub fn unescape(s: &str) -> std::result::Result<String, usize> {
    if !s.contains('%') {
        return Ok(s.to_string());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = bytes.get(i + 1..i + 3).ok_or(i)?;
            let hex = std::str::from_utf8(hex).map_err(|_| i)?;
            out.push(u8::from_str_radix(hex, 16).map_err(|_| i)?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|e| e.utf8_error().valid_up_to())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_rank_orders_before_natural_order() {
        let mut vals = [
            CoordinateValue::sniff("20200101T000000"),
            CoordinateValue::sniff("20200101"),
            CoordinateValue::str("a"),
            CoordinateValue::Int(99),
            CoordinateValue::Int(-3),
        ];
        vals.sort();
        let kinds: Vec<_> = vals.iter().map(CoordinateValue::kind).collect();
        assert_eq!(
            kinds,
            [
                ValueKind::Int,
                ValueKind::Int,
                ValueKind::Str,
                ValueKind::Date,
                ValueKind::Timestamp
            ]
        );
        assert_eq!(vals[0], CoordinateValue::Int(-3));
    }

    #[test]
    fn sniffing() {
        assert_eq!(CoordinateValue::sniff("12"), CoordinateValue::Int(12));
        assert_eq!(CoordinateValue::sniff("-7"), CoordinateValue::Int(-7));
        assert_eq!(CoordinateValue::sniff("20200101").kind(), ValueKind::Date);
        assert_eq!(
            CoordinateValue::sniff("20201399"),
            CoordinateValue::Int(20201399)
        );
        assert_eq!(
            CoordinateValue::sniff("20200101T120000").kind(),
            ValueKind::Timestamp
        );
        assert_eq!(
            CoordinateValue::sniff("20200101T250000").kind(),
            ValueKind::Str
        );
        assert_eq!(CoordinateValue::sniff("2t").kind(), ValueKind::Str);
        assert_eq!(CoordinateValue::sniff("-").kind(), ValueKind::Str);
        assert_eq!(CoordinateValue::sniff("").kind(), ValueKind::Str);
        assert_eq!(
            CoordinateValue::sniff("99999999999999999999").kind(),
            ValueKind::Str
        );
        // leading zeros are not preserved by Int
        assert_eq!(CoordinateValue::sniff("0012"), CoordinateValue::Int(12));
        assert!(!CoordinateValue::str("0012").sniffs_back());
    }

    #[test]
    fn kind_override() {
        assert_eq!(
            ValueKind::Str.parse("0012"),
            Some(CoordinateValue::str("0012"))
        );
        assert_eq!(
            ValueKind::Int.parse("20200101"),
            Some(CoordinateValue::Int(20200101))
        );
        assert_eq!(ValueKind::Date.parse("2020011"), None);
    }

    #[test]
    fn dimension_names() {
        assert!(DimensionName::new("levtype").is_ok());
        assert!(matches!(
            DimensionName::new(""),
            Err(QubeError::EmptyDimensionName)
        ));
        for bad in ["a,b", "a=b", "a/b", "a\nb"] {
            assert!(matches!(
                DimensionName::new(bad),
                Err(QubeError::InvalidDimensionName(_))
            ));
        }
        assert_ne!(
            DimensionName::new("Param").unwrap(),
            DimensionName::new("param").unwrap()
        );
    }

    #[test]
    fn escaping_reverses() {
        let raw = "a,b=c/d%e\nf~g ü";
        let esc = escape(raw, &['~']);
        assert!(!esc.contains([',', '=', '/', '\n', '~']));
        assert_eq!(unescape(&esc).unwrap(), raw);
        assert_eq!(unescape("ab%2"), Err(2));
        assert_eq!(unescape("%zz"), Err(0));
    }
}
