use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default SCADA sampling cadence in minutes.
pub const DEFAULT_CADENCE_MINUTES: u32 = 15;

/// Number of 15-minute slots in an hour.
pub const MINUTE_SLOTS: u8 = 4;

const FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Naive local timestamp at minute resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Timestamp(NaiveDateTime);

/// Calendar features used by the imputer and the one-hot encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeFeatures {
    /// 1..=31
    pub day_of_month: u8,
    /// 0..=23
    pub hour: u8,
    /// 0..=3, one per quarter hour
    pub minute_slot: u8,
}

impl TimeFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [f64::from(self.day_of_month), f64::from(self.hour), f64::from(self.minute_slot)]
    }
}

impl Timestamp {
    pub fn new(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, 0))
            .map(Timestamp)
            .ok_or_else(|| {
                Error::Timestamp(format!("invalid calendar value {year:04}-{month:02}-{day:02} {hour:02}:{minute:02}"))
            })
    }

    /// Parses `YYYY-MM-DDTHH:MM`.
    pub fn parse(text: &str) -> Result<Self> {
        NaiveDateTime::parse_from_str(text.trim(), FORMAT)
            .map(Timestamp)
            .map_err(|e| Error::Timestamp(format!("cannot parse {text:?}: {e}")))
    }

    pub fn add_minutes(self, minutes: i64) -> Self {
        Timestamp(self.0 + Duration::minutes(minutes))
    }

    /// Signed minutes from `earlier` to `self`.
    pub fn minutes_since(self, earlier: Timestamp) -> i64 {
        (self.0 - earlier.0).num_minutes()
    }

    pub fn minute_of_day(self) -> u32 {
        self.0.hour() * 60 + self.0.minute()
    }

    /// True when the timestamp lies on a grid of `cadence` minutes anchored at midnight.
    /// Cadences that do not divide a day carry no grid constraint.
    pub fn on_grid(self, cadence: u32) -> bool {
        if cadence == 0 || 1440 % cadence != 0 {
            return true;
        }
        self.minute_of_day() % cadence == 0
    }

    /// Day of month, hour and quarter-hour slot.
    pub fn time_features(self) -> Result<TimeFeatures> {
        let minute = self.0.minute();
        if minute % DEFAULT_CADENCE_MINUTES != 0 {
            return Err(Error::Timestamp(format!(
                "{self}: minute {minute} is not on the {DEFAULT_CADENCE_MINUTES}-minute grid"
            )));
        }
        Ok(TimeFeatures {
            day_of_month: self.0.day() as u8,
            hour: self.0.hour() as u8,
            minute_slot: (minute / DEFAULT_CADENCE_MINUTES) as u8,
        })
    }
}

/// Free-function form of [`Timestamp::time_features`].
pub fn time_features(ts: Timestamp) -> Result<(u8, u8, u8)> {
    let f = ts.time_features()?;
    Ok((f.day_of_month, f.hour, f.minute_slot))
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(FORMAT))
    }
}

impl TryFrom<String> for Timestamp {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Timestamp::parse(&value)
    }
}

impl From<Timestamp> for String {
    fn from(value: Timestamp) -> Self {
        value.to_string()
    }
}
