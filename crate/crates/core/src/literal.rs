//! Primitive datatypes and their lexical rules.
//!
//! The same rules are used when the mapping engine converts XML text into
//! literal values and when the validator checks literals found in an
//! annotation document, so a mapped value can never fail validation on its
//! lexical form alone.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// The schema.org primitive datatypes understood by the toolkit.
///
/// Their names are reserved in a vocabulary: no type definition may use one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Datatype {
    Text,
    Number,
    Boolean,
    Date,
    DateTime,
    Time,
    #[serde(rename = "URL")]
    Url,
}

impl Datatype {
    pub const ALL: [Datatype; 7] = [
        Datatype::Text,
        Datatype::Number,
        Datatype::Boolean,
        Datatype::Date,
        Datatype::DateTime,
        Datatype::Time,
        Datatype::Url,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Datatype::Text => "Text",
            Datatype::Number => "Number",
            Datatype::Boolean => "Boolean",
            Datatype::Date => "Date",
            Datatype::DateTime => "DateTime",
            Datatype::Time => "Time",
            Datatype::Url => "URL",
        }
    }

    pub fn from_name(name: &str) -> Option<Datatype> {
        Datatype::ALL.into_iter().find(|d| d.name() == name)
    }

    /// Whether `lexical` is an acceptable lexical form for this datatype.
    pub fn accepts(self, lexical: &str) -> bool {
        match self {
            Datatype::Text => true,
            Datatype::Number => parse_number(lexical).is_some(),
            Datatype::Boolean => parse_boolean(lexical).is_some(),
            Datatype::Date => is_date(lexical),
            Datatype::DateTime => is_date_time(lexical),
            Datatype::Time => is_time(lexical),
            Datatype::Url => is_url(lexical),
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Datatype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Datatype::from_name(s).ok_or_else(|| format!("unknown datatype `{s}`"))
    }
}

pub fn is_primitive(name: &str) -> bool {
    Datatype::from_name(name).is_some()
}

/// Optional sign, digits, optional fractional part. `.` is the only decimal
/// separator; exponents, thousands separators and non-finite values are
/// rejected.
pub fn parse_number(s: &str) -> Option<f64> {
    let b = s.as_bytes();
    let mut i = 0;
    if matches!(b.first(), Some(b'+' | b'-')) {
        i = 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i - int_start;
    let mut frac_digits = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        frac_digits = i - frac_start;
    }
    if i != b.len() || int_digits + frac_digits == 0 {
        return None;
    }
    let value: f64 = s.trim_start_matches('+').parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    // -0 and 0 are the same number
    Some(if value == 0.0 { 0.0 } else { value })
}

pub fn parse_boolean(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn digits(s: &str, n: usize) -> Option<u32> {
    if s.len() == n && s.bytes().all(|c| c.is_ascii_digit()) {
        s.parse().ok()
    } else {
        None
    }
}

pub fn is_date(s: &str) -> bool {
    let mut parts = s.split('-');
    let (Some(y), Some(m), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    match (digits(y, 4), digits(m, 2), digits(d, 2)) {
        (Some(y), Some(m), Some(d)) => NaiveDate::from_ymd_opt(y as i32, m, d).is_some(),
        _ => false,
    }
}

/// `hh:mm[:ss[.fff]]` followed by an optional `Z` or `±hh:mm` offset.
pub fn is_time(s: &str) -> bool {
    let (clock, zone) = split_zone(s);
    if let Some(zone) = zone {
        if zone != "Z" && !is_offset(zone) {
            return false;
        }
    }
    let (hms, frac) = match clock.split_once('.') {
        Some((hms, frac)) => (hms, Some(frac)),
        None => (clock, None),
    };
    if let Some(frac) = frac {
        if frac.is_empty() || !frac.bytes().all(|c| c.is_ascii_digit()) {
            return false;
        }
    }
    let fields: Vec<&str> = hms.split(':').collect();
    let ok = match fields.as_slice() {
        [h, m] if frac.is_none() => hour_minute(h, m),
        [h, m, sec] => hour_minute(h, m) && digits(sec, 2).is_some_and(|v| v <= 60),
        _ => false,
    };
    ok
}

fn hour_minute(h: &str, m: &str) -> bool {
    digits(h, 2).is_some_and(|v| v <= 24) && digits(m, 2).is_some_and(|v| v < 60)
}

fn is_offset(s: &str) -> bool {
    let Some(rest) = s.strip_prefix('+').or_else(|| s.strip_prefix('-')) else {
        return false;
    };
    match rest.split_once(':') {
        Some((h, m)) => hour_minute(h, m),
        None => false,
    }
}

fn split_zone(s: &str) -> (&str, Option<&str>) {
    if let Some(clock) = s.strip_suffix('Z') {
        return (clock, Some("Z"));
    }
    // an offset is the last `+` or `-`; time fields never contain either
    match s.rfind(['+', '-']) {
        Some(i) => (&s[..i], Some(&s[i..])),
        None => (s, None),
    }
}

pub fn is_date_time(s: &str) -> bool {
    match s.split_once('T') {
        Some((date, time)) => is_date(date) && is_time(time),
        None => false,
    }
}

/// An absolute URL: a scheme (`ALPHA *( ALPHA / DIGIT / "+" / "-" / "." )`),
/// a colon and a non-empty remainder without whitespace.
pub fn is_url(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic());
    first_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        && !rest.is_empty()
        && !s.chars().any(char::is_whitespace)
}

/// BCP-47 shaped language tag: a 2-8 letter primary subtag followed by
/// alphanumeric subtags of 1-8 characters.
pub fn is_language_tag(s: &str) -> bool {
    let mut subtags = s.split('-');
    let primary = subtags.next().unwrap_or_default();
    (2..=8).contains(&primary.len())
        && primary.bytes().all(|c| c.is_ascii_alphabetic())
        && subtags.all(|t| (1..=8).contains(&t.len()) && t.bytes().all(|c| c.is_ascii_alphanumeric()))
}

/// Shortest decimal form that reads back as the same `f64`.
pub fn format_number(n: f64) -> String {
    if n == 0.0 {
        "0".to_owned()
    } else {
        format!("{n}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(parse_number("4.5"), Some(4.5));
        assert_eq!(parse_number("-12"), Some(-12.0));
        assert_eq!(parse_number("+3."), Some(3.0));
        assert_eq!(parse_number(".5"), Some(0.5));
        assert_eq!(parse_number("-0"), Some(0.0));
        for bad in ["", "+", ".", "1,5", "1e3", "NaN", "inf", " 1", "1.2.3", "abc"] {
            assert_eq!(parse_number(bad), None, "{bad}");
        }
    }

    #[test]
    fn booleans() {
        assert_eq!(parse_boolean("1"), Some(true));
        assert_eq!(parse_boolean("false"), Some(false));
        assert_eq!(parse_boolean("True"), None);
    }

    #[test]
    fn temporal() {
        assert!(is_date("2017-03-17"));
        assert!(!is_date("2017-02-30"));
        assert!(!is_date("17-03-2017"));
        assert!(is_time("20:30"));
        assert!(is_time("20:30:00.250+01:00"));
        assert!(!is_time("25:00"));
        assert!(!is_time("20:30.5"));
        assert!(is_date_time("2017-03-17T20:00:00Z"));
        assert!(is_date_time("2017-03-17T20:00"));
        assert!(!is_date_time("2017-03-17 20:00"));
    }

    #[test]
    fn urls_and_tags() {
        assert!(is_url("http://www.mayrhofen.at/"));
        assert!(is_url("mailto:info@mayrhofen.at"));
        assert!(!is_url("www.mayrhofen.at"));
        assert!(!is_url("http://a b"));
        assert!(is_language_tag("de"));
        assert!(is_language_tag("de-AT"));
        assert!(!is_language_tag("d"));
        assert!(!is_language_tag("de_AT"));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(120.0), "120");
        assert_eq!(format_number(4.5), "4.5");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(0.1 + 0.2), "0.30000000000000004");
    }
}
