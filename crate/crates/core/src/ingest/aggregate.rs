use std::collections::{BTreeMap, HashMap};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{CurveKind, DailyCurve, DateRange, IngestError, TripRecord};
use crate::curve::HOURS;
use crate::TerminalId;

#[derive(Debug, Clone, Default)]
pub struct CleanseOutcome {
    pub trips: Vec<TripRecord>,
    /// Earliest appearance of each terminal across prior history and the
    /// retained trips.
    pub first_active: BTreeMap<TerminalId, NaiveDate>,
    pub removed_short: usize,
}

/// Drop trips shorter than `min_duration_s` and determine when each terminal
/// came into service.
///
/// A trip of exactly `min_duration_s` seconds is kept. Terminals that appear
/// in `prior_history` are dated by their earliest appearance there, so a
/// terminal that was open before the analysis window is not mistaken for a
/// new one.
pub fn cleanse_trips(
    trips: Vec<TripRecord>,
    min_duration_s: i64,
    prior_history: Option<&[TripRecord]>,
) -> CleanseOutcome {
    let before = trips.len();
    let trips: Vec<TripRecord> = trips.into_iter().filter(|t| t.duration_seconds() >= min_duration_s).collect();
    let removed_short = before - trips.len();

    let mut first_active: BTreeMap<TerminalId, NaiveDate> = BTreeMap::new();
    let mut note = |terminal: &TerminalId, date: NaiveDate| {
        first_active
            .entry(terminal.clone())
            .and_modify(|d| *d = (*d).min(date))
            .or_insert(date);
    };
    for trip in prior_history.unwrap_or(&[]).iter().chain(&trips) {
        note(&trip.origin_terminal, trip.pickup_time.date());
        note(&trip.dest_terminal, trip.dropoff_time.date());
    }
    CleanseOutcome { trips, first_active, removed_short }
}

fn events(trip: &TripRecord, kind: CurveKind) -> impl Iterator<Item = (&TerminalId, NaiveDateTime)> {
    let pickup = (&trip.origin_terminal, trip.pickup_time);
    let dropoff = (&trip.dest_terminal, trip.dropoff_time);
    let (a, b) = match kind {
        CurveKind::Usage => (Some(pickup), Some(dropoff)),
        CurveKind::Pickup => (Some(pickup), None),
        CurveKind::Dropoff => (None, Some(dropoff)),
    };
    a.into_iter().chain(b)
}

/// Count events per terminal, date and hour of day.
///
/// Every terminal listed in `first_active` gets a curve for each date in
/// `date_range` on or after its first active date, all-zero when nothing
/// happened. Dates before a terminal opened are omitted. Events at terminals
/// missing from `first_active` are ignored. Output is sorted by terminal,
/// then date.
pub fn aggregate_daily_curves(
    trips: &[TripRecord],
    first_active: &BTreeMap<TerminalId, NaiveDate>,
    kind: CurveKind,
    date_range: DateRange,
) -> Result<Vec<DailyCurve>, IngestError> {
    let date_range = DateRange::new(date_range.start, date_range.end)?;
    let mut counts: HashMap<(&TerminalId, NaiveDate), [u32; HOURS]> = HashMap::new();
    for trip in trips {
        for (terminal, at) in events(trip, kind) {
            let date = at.date();
            if !date_range.contains(date) {
                continue;
            }
            match first_active.get(terminal) {
                Some(opened) if *opened <= date => {}
                _ => continue,
            }
            counts.entry((terminal, date)).or_insert([0; HOURS])[at.hour() as usize] += 1;
        }
    }

    let mut curves = Vec::new();
    for (terminal, opened) in first_active {
        let start = date_range.start.max(*opened);
        if start > date_range.end {
            continue;
        }
        for date in start.iter_days().take_while(|d| *d <= date_range.end) {
            let counts = counts.get(&(terminal, date)).copied().unwrap_or([0; HOURS]);
            curves.push(DailyCurve { terminal: terminal.clone(), date, kind, counts });
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSummary {
    pub total_usage: u64,
    pub active_days: usize,
    pub mean_annual_usage: f64,
}

/// Per-terminal totals; annual usage is total usage over active years
/// (active days / 365.25).
pub fn terminal_summary(curves: &[DailyCurve]) -> BTreeMap<TerminalId, TerminalSummary> {
    let mut acc: BTreeMap<TerminalId, (u64, usize)> = BTreeMap::new();
    for curve in curves {
        let entry = acc.entry(curve.terminal.clone()).or_default();
        entry.0 += curve.total();
        entry.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (total, days))| {
            let years = days as f64 / 365.25;
            let mean = if days == 0 { 0.0 } else { total as f64 / years };
            (id, TerminalSummary { total_usage: total, active_days: days, mean_annual_usage: mean })
        })
        .collect()
}
