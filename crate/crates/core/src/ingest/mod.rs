//! Trip ingestion: parsing, cleansing and hourly aggregation.
//!
//! Trips are reduced to pick-up and drop-off *events* per terminal. A daily
//! curve counts events per hour of day (local time, no timezone conversion)
//! for one terminal on one calendar date.

mod aggregate;
mod parse;
mod store;

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::HOURS;
use crate::TerminalId;

pub use aggregate::{aggregate_daily_curves, cleanse_trips, terminal_summary, CleanseOutcome, TerminalSummary};
pub use parse::{
    parse_stations, parse_trips, stations_from_coordinates, CoordinateObservation, ParseOutcome, RowError,
    RowErrorKind, SchemaMap, StationSchema,
};
pub use store::{curve_store_files, read_curve_store, write_curve_store};

/// Minimum trip duration kept by [`cleanse_trips`], in seconds.
pub const DEFAULT_MIN_DURATION_S: i64 = 60;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("required column `{0}` not found in header")]
    MissingColumn(String),
    #[error("date range end {end} is before start {start}")]
    InvalidDateRange { start: NaiveDate, end: NaiveDate },
    #[error("station file line {line}: {message}")]
    InvalidStation { line: u64, message: String },
    #[error("curve store: {0}")]
    Store(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One rental: picked up at `origin_terminal`, returned at `dest_terminal`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup_time: NaiveDateTime,
    pub dropoff_time: NaiveDateTime,
    pub origin_terminal: TerminalId,
    pub dest_terminal: TerminalId,
}

impl TripRecord {
    pub fn duration_seconds(&self) -> i64 {
        (self.dropoff_time - self.pickup_time).num_seconds()
    }
}

/// Which events a daily curve counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    /// Pick-ups plus drop-offs.
    Usage,
    Pickup,
    Dropoff,
}

impl CurveKind {
    pub const ALL: [CurveKind; 3] = [CurveKind::Usage, CurveKind::Pickup, CurveKind::Dropoff];

    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Usage => "usage",
            CurveKind::Pickup => "pickup",
            CurveKind::Dropoff => "dropoff",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "usage" => Ok(CurveKind::Usage),
            "pickup" | "pick-up" => Ok(CurveKind::Pickup),
            "dropoff" | "drop-off" => Ok(CurveKind::Dropoff),
            other => Err(format!("unknown curve kind `{other}`")),
        }
    }
}

/// Hourly event counts for one terminal on one date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCurve {
    pub terminal: TerminalId,
    pub date: NaiveDate,
    pub kind: CurveKind,
    pub counts: [u32; HOURS],
}

impl DailyCurve {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn to_real(&self) -> crate::Curve {
        std::array::from_fn(|h| f64::from(self.counts[h]))
    }
}

/// Inclusive calendar interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        if end < start {
            return Err(IngestError::InvalidDateRange { start, end });
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d <= self.end)
    }

    pub fn len_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }
}
