//! Timestamps at the one-second granularity used by harvesting datestamps,
//! plus a clock abstraction so ingest and tests can pin time.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("invalid UTC timestamp `{0}`")]
pub struct TimestampError(pub String);

/// A UTC instant truncated to whole seconds. Renders as
/// `YYYY-MM-DDThh:mm:ssZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UtcTimestamp(DateTime<Utc>);

impl UtcTimestamp {
    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        UtcTimestamp(dt - chrono::Duration::nanoseconds(i64::from(dt.timestamp_subsec_nanos())))
    }

    pub fn from_unix(secs: i64) -> Self {
        UtcTimestamp(Utc.timestamp_opt(secs, 0).single().expect("valid unix time"))
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn plus_seconds(&self, secs: i64) -> Self {
        UtcTimestamp(self.0 + chrono::Duration::seconds(secs))
    }

    /// 14-digit `YYYYMMDDhhmmss` form used by the binary-container headers.
    pub fn compact(&self) -> String {
        self.0.format("%Y%m%d%H%M%S").to_string()
    }

    pub fn from_compact(s: &str) -> Result<Self, TimestampError> {
        let naive = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S")
            .map_err(|_| TimestampError(s.to_string()))?;
        Ok(UtcTimestamp(Utc.from_utc_datetime(&naive)))
    }
}

impl fmt::Display for UtcTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl FromStr for UtcTimestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%SZ")
            .map_err(|_| TimestampError(s.to_string()))?;
        Ok(UtcTimestamp(Utc.from_utc_datetime(&naive)))
    }
}

impl serde::Serialize for UtcTimestamp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for UtcTimestamp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which end of a harvesting window a date argument bounds; a date-only value
/// expands to the first or last second of that day accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateBound {
    From,
    Until,
}

/// Parses a harvesting date argument: either a full UTC second timestamp or a
/// `YYYY-MM-DD` day, expanded per `bound`.
pub fn parse_oai_date(s: &str, bound: DateBound) -> Result<UtcTimestamp, TimestampError> {
    if let Ok(ts) = s.parse::<UtcTimestamp>() {
        return Ok(ts);
    }
    let day = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| TimestampError(s.to_string()))?;
    let time = match bound {
        DateBound::From => day.and_hms_opt(0, 0, 0),
        DateBound::Until => day.and_hms_opt(23, 59, 59),
    }
    .expect("in-range time of day");
    Ok(UtcTimestamp(Utc.from_utc_datetime(&time)))
}

/// Source of the current time. Ingest stamps packages through this so tests
/// and replays can fix the clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> UtcTimestamp;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> UtcTimestamp {
        UtcTimestamp::from_datetime(Utc::now())
    }
}

/// A clock pinned to one instant.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub UtcTimestamp);

impl Clock for FixedClock {
    fn now(&self) -> UtcTimestamp {
        self.0
    }
}

pub type SharedClock = Arc<dyn Clock>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_round_trip() {
        let ts: UtcTimestamp = "2004-06-22T18:07:18Z".parse().unwrap();
        assert_eq!(ts.to_string(), "2004-06-22T18:07:18Z");
        assert_eq!(ts.compact(), "20040622180718");
        assert_eq!(UtcTimestamp::from_compact("20040622180718").unwrap(), ts);
    }

    #[test]
    fn date_only_expands_per_bound() {
        let from = parse_oai_date("2004-06-22", DateBound::From).unwrap();
        let until = parse_oai_date("2004-06-22", DateBound::Until).unwrap();
        assert_eq!(from.to_string(), "2004-06-22T00:00:00Z");
        assert_eq!(until.to_string(), "2004-06-22T23:59:59Z");
    }

    #[test]
    fn garbage_dates_rejected() {
        assert!(parse_oai_date("2004-13-99", DateBound::From).is_err());
        assert!(parse_oai_date("not-a-date", DateBound::From).is_err());
        assert!(parse_oai_date("2004-06-22T18:07:18", DateBound::From).is_err());
        assert!("2004-06-22T18:07:18.123Z".parse::<UtcTimestamp>().is_err());
    }

    #[test]
    fn ordering_is_chronological() {
        let a: UtcTimestamp = "2004-06-22T18:07:18Z".parse().unwrap();
        let b = a.plus_seconds(1);
        assert!(a < b);
        assert_eq!(b.to_string(), "2004-06-22T18:07:19Z");
    }
}
