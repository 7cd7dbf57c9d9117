//! Hourly UTC timestamps in ISO-8601 form.

use chrono::{DateTime, Duration, Timelike, Utc};

use crate::error::{Error, Result};

pub fn format(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses an RFC 3339 timestamp and normalizes it to UTC. The result must
/// fall exactly on an hour.
pub fn parse(s: &str) -> Result<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(s.trim())
        .map_err(|e| Error::InvalidArgument(format!("bad timestamp {s:?}: {e}")))?
        .with_timezone(&Utc);
    if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
        return Err(Error::InvalidArgument(format!("timestamp {s:?} is not hour-aligned")));
    }
    Ok(ts)
}

/// Hours since the Unix epoch.
pub fn hour_index(ts: DateTime<Utc>) -> i64 {
    ts.timestamp().div_euclid(3600)
}

pub fn from_hour_index(h: i64) -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH + Duration::hours(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let ts = parse("2019-07-01T13:00:00Z").unwrap();
        assert_eq!(format(ts), "2019-07-01T13:00:00Z");
        assert_eq!(parse("2019-07-01T08:00:00-05:00").unwrap(), ts);
        assert!(parse("2019-07-01T13:30:00Z").is_err());
        assert!(parse("yesterday").is_err());
        assert_eq!(from_hour_index(hour_index(ts)), ts);
    }
}
