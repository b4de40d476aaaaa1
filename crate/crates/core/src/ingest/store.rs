//! On-disk curve store.
//!
//! One comma-separated file per curve kind and calendar year, named
//! `curves_<kind>_<year>.csv`, with header
//! `terminal,date,h00,h01,...,h23` and rows sorted by terminal then date.
//! Dates are ISO-8601. The layout is byte-stable across runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};

use super::{CurveKind, DailyCurve, IngestError};
use crate::curve::HOURS;
use crate::TerminalId;

fn header() -> String {
    let mut h = String::from("terminal,date");
    for hour in 0..HOURS {
        h.push_str(&format!(",h{hour:02}"));
    }
    h
}

/// Write curves, grouped by kind and year. Returns the files written, sorted.
pub fn write_curve_store(dir: &Path, curves: &[DailyCurve]) -> Result<Vec<PathBuf>, IngestError> {
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(CurveKind, i32), Vec<&DailyCurve>> = BTreeMap::new();
    for c in curves {
        groups.entry((c.kind, c.date.year())).or_default().push(c);
    }
    let mut written = Vec::new();
    for ((kind, year), mut rows) in groups {
        rows.sort_by(|a, b| a.terminal.cmp(&b.terminal).then(a.date.cmp(&b.date)));
        let path = dir.join(format!("curves_{kind}_{year}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "{}", header())?;
        for row in rows {
            write!(w, "{},{}", row.terminal, row.date)?;
            for c in row.counts {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Files in `dir` holding curves of `kind`, sorted by year.
pub fn curve_store_files(dir: &Path, kind: CurveKind) -> Result<Vec<PathBuf>, IngestError> {
    let prefix = format!("curves_{kind}_");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_curve_store(dir: &Path, kind: CurveKind) -> Result<Vec<DailyCurve>, IngestError> {
    let mut curves = Vec::new();
    for path in curve_store_files(dir, kind)? {
        let mut reader = csv::Reader::from_path(&path)?;
        for record in reader.records() {
            let record = record?;
            if record.len() != HOURS + 2 {
                return Err(IngestError::Store(format!("{}: expected {} fields", path.display(), HOURS + 2)));
            }
            let date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
                .map_err(|e| IngestError::Store(format!("{}: bad date: {e}", path.display())))?;
            let mut counts = [0u32; HOURS];
            for (h, slot) in counts.iter_mut().enumerate() {
                *slot = record[h + 2]
                    .parse()
                    .map_err(|e| IngestError::Store(format!("{}: bad count: {e}", path.display())))?;
            }
            curves.push(DailyCurve { terminal: TerminalId::new(&record[0]), date, kind, counts });
        }
    }
    curves.sort_by(|a, b| a.terminal.cmp(&b.terminal).then(a.date.cmp(&b.date)));
    Ok(curves)
}
