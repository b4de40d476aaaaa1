use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{IngestError, TripRecord};
use crate::curve::median;
use crate::terminal::Terminal;
use crate::TerminalId;

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
];

/// Maps the logical trip fields onto header names of a delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaMap {
    pub pickup_time: String,
    pub dropoff_time: String,
    pub origin_terminal: String,
    pub dest_terminal: String,
    /// Optional coordinate columns, as found in newer operator exports.
    pub origin_latitude: Option<String>,
    pub origin_longitude: Option<String>,
    pub dest_latitude: Option<String>,
    pub dest_longitude: Option<String>,
    /// Explicit chrono format; when absent a list of common formats is tried.
    pub timestamp_format: Option<String>,
    pub delimiter: char,
}

impl SchemaMap {
    /// Column names of the 2017–2019 Capital Bikeshare monthly trip files.
    pub fn capital_bikeshare_legacy() -> Self {
        SchemaMap {
            pickup_time: "Start date".into(),
            dropoff_time: "End date".into(),
            origin_terminal: "Start station number".into(),
            dest_terminal: "End station number".into(),
            origin_latitude: None,
            origin_longitude: None,
            dest_latitude: None,
            dest_longitude: None,
            timestamp_format: None,
            delimiter: ',',
        }
    }

    /// Column names of the post-2020 Capital Bikeshare exports, which also
    /// carry station coordinates.
    pub fn capital_bikeshare_2020() -> Self {
        SchemaMap {
            pickup_time: "started_at".into(),
            dropoff_time: "ended_at".into(),
            origin_terminal: "start_station_id".into(),
            dest_terminal: "end_station_id".into(),
            origin_latitude: Some("start_lat".into()),
            origin_longitude: Some("start_lng".into()),
            dest_latitude: Some("end_lat".into()),
            dest_longitude: Some("end_lng".into()),
            timestamp_format: None,
            delimiter: ',',
        }
    }
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap::capital_bikeshare_legacy()
    }
}

/// Column names of a station metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationSchema {
    pub id: String,
    pub latitude: String,
    pub longitude: String,
}

impl Default for StationSchema {
    fn default() -> Self {
        StationSchema { id: "id".into(), latitude: "latitude".into(), longitude: "longitude".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RowErrorKind {
    BadTimestamp { column: String, value: String },
    DropoffBeforePickup,
    EmptyTerminal { column: String },
    BadCoordinate { column: String, value: String },
    ShortRow,
}

/// A row that could not be turned into a [`TripRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source (the header is line 1).
    pub line: u64,
    pub kind: RowErrorKind,
}

/// A coordinate reading attached to a trip endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateObservation {
    pub terminal: TerminalId,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub trips: Vec<TripRecord>,
    pub errors: Vec<RowError>,
    pub coordinates: Vec<CoordinateObservation>,
}

struct Columns {
    pickup: usize,
    dropoff: usize,
    origin: usize,
    dest: usize,
    coords: Option<[usize; 4]>,
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn resolve_columns(headers: &csv::StringRecord, schema: &SchemaMap) -> Result<Columns, IngestError> {
    let coords = match (
        &schema.origin_latitude,
        &schema.origin_longitude,
        &schema.dest_latitude,
        &schema.dest_longitude,
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => {
            Some([find(headers, a)?, find(headers, b)?, find(headers, c)?, find(headers, d)?])
        }
        _ => None,
    };
    Ok(Columns {
        pickup: find(headers, &schema.pickup_time)?,
        dropoff: find(headers, &schema.dropoff_time)?,
        origin: find(headers, &schema.origin_terminal)?,
        dest: find(headers, &schema.dest_terminal)?,
        coords,
    })
}

fn parse_timestamp(value: &str, format: Option<&str>) -> Option<NaiveDateTime> {
    let value = value.trim();
    match format {
        Some(f) => NaiveDateTime::parse_from_str(value, f).ok(),
        None => TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(value, f).ok()),
    }
}

/// Parse delimited trip records.
///
/// Rows that fail validation are reported in [`ParseOutcome::errors`] with
/// their line number and excluded from the returned trips. A header missing
/// one of the mapped columns is a configuration error.
pub fn parse_trips<R: Read>(source: R, schema: &SchemaMap) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = resolve_columns(&headers, schema)?;
    let format = schema.timestamp_format.as_deref();

    let mut out = ParseOutcome::default();
    let mut record = csv::StringRecord::new();
    loop {
        if !reader.read_record(&mut record)? {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&record, &cols, format) {
            Ok((trip, coords)) => {
                if let Some([olat, olon, dlat, dlon]) = coords {
                    out.coordinates.push(CoordinateObservation {
                        terminal: trip.origin_terminal.clone(),
                        latitude: olat,
                        longitude: olon,
                    });
                    out.coordinates.push(CoordinateObservation {
                        terminal: trip.dest_terminal.clone(),
                        latitude: dlat,
                        longitude: dlon,
                    });
                }
                out.trips.push(trip);
            }
            Err(kind) => out.errors.push(RowError { line, kind }),
        }
    }
    Ok(out)
}

type ParsedRow = (TripRecord, Option<[f64; 4]>);

fn parse_row(record: &csv::StringRecord, cols: &Columns, format: Option<&str>) -> Result<ParsedRow, RowErrorKind> {
    let field = |i: usize| record.get(i).ok_or(RowErrorKind::ShortRow);
    let time = |i: usize, name: &str| -> Result<NaiveDateTime, RowErrorKind> {
        let raw = field(i)?;
        parse_timestamp(raw, format)
            .ok_or_else(|| RowErrorKind::BadTimestamp { column: name.to_string(), value: raw.to_string() })
    };
    let terminal = |i: usize, name: &str| -> Result<TerminalId, RowErrorKind> {
        let raw = field(i)?.trim();
        if raw.is_empty() {
            Err(RowErrorKind::EmptyTerminal { column: name.to_string() })
        } else {
            Ok(TerminalId::new(raw))
        }
    };

    let pickup_time = time(cols.pickup, "pickup_time")?;
    let dropoff_time = time(cols.dropoff, "dropoff_time")?;
    if dropoff_time < pickup_time {
        return Err(RowErrorKind::DropoffBeforePickup);
    }
    let trip = TripRecord {
        pickup_time,
        dropoff_time,
        origin_terminal: terminal(cols.origin, "origin_terminal")?,
        dest_terminal: terminal(cols.dest, "dest_terminal")?,
    };
    let coords = match cols.coords {
        None => None,
        Some(idx) => {
            let mut vals = [0.0; 4];
            for (slot, i) in vals.iter_mut().zip(idx) {
                let raw = field(i)?;
                *slot = raw
                    .trim()
                    .parse()
                    .map_err(|_| RowErrorKind::BadCoordinate { column: i.to_string(), value: raw.to_string() })?;
            }
            Some(vals)
        }
    };
    Ok((trip, coords))
}

/// Parse a station metadata file (`id, latitude, longitude`).
pub fn parse_stations<R: Read>(source: R, schema: &StationSchema) -> Result<Vec<Terminal>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let id = find(&headers, &schema.id)?;
    let lat = find(&headers, &schema.latitude)?;
    let lon = find(&headers, &schema.longitude)?;
    let mut stations = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| record.get(i).unwrap_or("").trim();
        let parse = |i: usize| {
            get(i).parse::<f64>().map_err(|_| IngestError::InvalidStation {
                line,
                message: format!("cannot parse coordinate `{}`", get(i)),
            })
        };
        if get(id).is_empty() {
            return Err(IngestError::InvalidStation { line, message: "empty station id".into() });
        }
        let terminal = Terminal {
            id: TerminalId::new(get(id)),
            latitude: parse(lat)?,
            longitude: parse(lon)?,
            first_active_date: None,
        };
        if !terminal.has_valid_coordinates() {
            return Err(IngestError::InvalidStation { line, message: "coordinates out of range".into() });
        }
        stations.insert(terminal.id.clone(), terminal);
    }
    Ok(stations.into_values().collect())
}

/// Station locations from per-trip coordinate readings: the componentwise
/// median of all readings for each terminal.
pub fn stations_from_coordinates(observations: &[CoordinateObservation]) -> Vec<Terminal> {
    let mut by_terminal: BTreeMap<&TerminalId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for obs in observations {
        let entry = by_terminal.entry(&obs.terminal).or_default();
        entry.0.push(obs.latitude);
        entry.1.push(obs.longitude);
    }
    by_terminal
        .into_iter()
        .filter_map(|(id, (lats, lons))| {
            let t = Terminal {
                id: id.clone(),
                latitude: median(&lats)?,
                longitude: median(&lons)?,
                first_active_date: None,
            };
            t.has_valid_coordinates().then_some(t)
        })
        .collect()
}
