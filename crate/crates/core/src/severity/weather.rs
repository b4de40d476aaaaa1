use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ClusterSeverity, SeverityError};
use crate::detect::Direction;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureUnit {
    #[default]
    Fahrenheit,
    Celsius,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecipitationUnit {
    #[default]
    Inches,
    Millimetres,
}

/// Column map and units of a daily weather file. Defaults follow the
/// Visual Crossing daily export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherSchema {
    pub date: String,
    pub temperature: String,
    pub precipitation: String,
    pub temperature_unit: TemperatureUnit,
    pub precipitation_unit: PrecipitationUnit,
}

impl Default for WeatherSchema {
    fn default() -> Self {
        WeatherSchema {
            date: "datetime".into(),
            temperature: "temp".into(),
            precipitation: "precip".into(),
            temperature_unit: TemperatureUnit::Fahrenheit,
            precipitation_unit: PrecipitationUnit::Inches,
        }
    }
}

/// One day of weather in °F and inches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub date: NaiveDate,
    pub mean_temperature_f: f64,
    pub precipitation_in: f64,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    ["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"].iter().find_map(|f| NaiveDate::parse_from_str(s.trim(), f).ok())
}

/// Parses a daily weather file. An empty precipitation field reads as 0.
pub fn parse_weather<R: Read>(source: R, schema: &WeatherSchema) -> Result<BTreeMap<NaiveDate, WeatherDay>, SeverityError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = rdr.headers().map_err(|e| SeverityError::Io(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| SeverityError::MissingColumn(name.to_string()))
    };
    let (ci, ti, pi) = (col(&schema.date)?, col(&schema.temperature)?, col(&schema.precipitation)?);
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| SeverityError::Io(e.to_string()))?;
        let bad = |message: String| SeverityError::BadWeatherRow { line, message };
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let date = parse_date(field(ci)).ok_or_else(|| bad(format!("bad date {:?}", field(ci))))?;
        let temp: f64 = field(ti).parse().map_err(|_| bad(format!("bad temperature {:?}", field(ti))))?;
        let precip: f64 = match field(pi) {
            "" => 0.0,
            p => p.parse().map_err(|_| bad(format!("bad precipitation {p:?}")))?,
        };
        let mean_temperature_f = match schema.temperature_unit {
            TemperatureUnit::Fahrenheit => temp,
            TemperatureUnit::Celsius => temp * 9.0 / 5.0 + 32.0,
        };
        let precipitation_in = match schema.precipitation_unit {
            PrecipitationUnit::Inches => precip,
            PrecipitationUnit::Millimetres => precip / 25.4,
        };
        if out.insert(date, WeatherDay { date, mean_temperature_f, precipitation_in }).is_some() {
            return Err(SeverityError::DuplicateDate(date));
        }
    }
    Ok(out)
}

/// Half-open bins `[e_i, e_{i+1})`. Values below the first edge fall in the
/// first bin and values at or above the last edge in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bins {
    pub edges: Vec<f64>,
}

impl Bins {
    pub fn new(edges: Vec<f64>) -> Result<Self, SeverityError> {
        if edges.len() < 2 {
            return Err(SeverityError::InvalidBins("need at least two edges".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| e.is_nan()) {
            return Err(SeverityError::InvalidBins("edges must be strictly increasing".into()));
        }
        Ok(Bins { edges })
    }

    /// 5 °F steps from 15 to 95.
    pub fn default_temperature() -> Self {
        Bins { edges: (0..=16).map(|i| 15.0 + 5.0 * i as f64).collect() }
    }

    /// 0, 0.01, 0.1, 0.5, 1 and 2+ inches.
    pub fn default_precipitation() -> Self {
        Bins { edges: vec![0.0, 0.01, 0.1, 0.5, 1.0, 2.0, f64::INFINITY] }
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|e| *e <= x);
        k.saturating_sub(1).min(self.len() - 1)
    }

    pub fn labels(&self) -> Vec<String> {
        self.edges
            .windows(2)
            .map(|w| if w[1].is_infinite() { format!("{}+", w[0]) } else { format!("[{},{})", w[0], w[1]) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstabConfig {
    pub temperature: Bins,
    pub precipitation: Bins,
    /// Severity edges; severity bins are `(e_i, e_{i+1}]` with 0 in the
    /// first bin.
    pub severity: Bins,
}

impl Default for CrosstabConfig {
    fn default() -> Self {
        CrosstabConfig {
            temperature: Bins::default_temperature(),
            precipitation: Bins::default_precipitation(),
            severity: Bins { edges: vec![0.0, 0.25, 0.5, 0.75, 1.0] },
        }
    }
}

fn severity_column(bins: &Bins, theta: f64) -> usize {
    // Right-closed bins, shifted by one for the leading "no outlier" column.
    let k = bins.edges.partition_point(|e| *e < theta);
    1 + k.saturating_sub(1).min(bins.len() - 1)
}

/// Row-stochastic matrix of day proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionMatrix {
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub row_days: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherCrosstab {
    /// Temperature bins by daily maximum severity over all outliers.
    pub temperature: ProportionMatrix,
    /// Precipitation bins by daily maximum severity over negative outliers.
    pub precipitation: ProportionMatrix,
    pub days_without_weather: usize,
    /// Outlier days whose clusters all lacked a severity model.
    pub days_without_severity: usize,
}

fn tabulate(
    row_bins: &Bins,
    sev_bins: &Bins,
    days: &[(f64, Option<Option<f64>>)],
) -> ProportionMatrix {
    let cols = sev_bins.len() + 1;
    let mut counts = vec![vec![0usize; cols]; row_bins.len()];
    for (x, sev) in days {
        let col = match sev {
            None => 0,
            Some(Some(theta)) => severity_column(sev_bins, *theta),
            Some(None) => continue,
        };
        counts[row_bins.index(*x)][col] += 1;
    }
    let mut column_labels = vec!["no outlier".to_string()];
    column_labels.extend(sev_bins.edges.windows(2).map(|w| format!("({},{}]", w[0], w[1])));
    let row_days: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let values = counts
        .iter()
        .zip(&row_days)
        .map(|(r, &n)| r.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect())
        .collect();
    ProportionMatrix { row_labels: row_bins.labels(), column_labels, values, row_days }
}

/// Weather crosstabs over `dates`.
///
/// A day's severity is the maximum over its outlier clusters (negative
/// outliers only for the precipitation matrix); days without outliers go
/// to the "no outlier" column. Outlier days with no fitted severity are left
/// out of the matrix and counted. Rows with no days are all zero.
pub fn weather_crosstab(
    severities: &[ClusterSeverity],
    weather: &BTreeMap<NaiveDate, WeatherDay>,
    dates: &[NaiveDate],
    cfg: &CrosstabConfig,
) -> WeatherCrosstab {
    // None: no outlier; Some(None): outlier without severity.
    let mut all: BTreeMap<NaiveDate, Option<Option<f64>>> = dates.iter().map(|d| (*d, None)).collect();
    let mut neg = all.clone();
    let merge = |slot: &mut Option<Option<f64>>, theta: Option<f64>| {
        *slot = Some(match (slot.flatten(), theta) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        });
    };
    for s in severities.iter().filter(|s| s.z_n > 0.0) {
        if let Some(slot) = all.get_mut(&s.date) {
            merge(slot, s.severity);
        }
        if s.direction == Some(Direction::Negative) {
            if let Some(slot) = neg.get_mut(&s.date) {
                merge(slot, s.severity);
            }
        }
    }
    let mut days_without_weather = 0;
    let mut temp_days = Vec::new();
    let mut precip_days = Vec::new();
    for d in all.keys() {
        match weather.get(d) {
            Some(w) => {
                temp_days.push((w.mean_temperature_f, all[d]));
                precip_days.push((w.precipitation_in, neg[d]));
            }
            None => days_without_weather += 1,
        }
    }
    let days_without_severity = temp_days.iter().filter(|d| d.1 == Some(None)).count();
    if days_without_weather > 0 {
        log::warn!("{days_without_weather} days without weather excluded from crosstab");
    }
    WeatherCrosstab {
        temperature: tabulate(&cfg.temperature, &cfg.severity, &temp_days),
        precipitation: tabulate(&cfg.precipitation, &cfg.severity, &precip_days),
        days_without_weather,
        days_without_severity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::ClusterId;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 7, day).unwrap()
    }

    fn w(day: u32, t: f64, p: f64) -> (NaiveDate, WeatherDay) {
        (d(day), WeatherDay { date: d(day), mean_temperature_f: t, precipitation_in: p })
    }

    fn sev(cluster: u32, day: u32, theta: Option<f64>, dir: Direction) -> ClusterSeverity {
        ClusterSeverity {
            cluster: ClusterId(cluster.into()),
            date: d(day),
            z_n: 1.0,
            size: 3,
            severity: theta,
            direction: Some(dir),
            contributors: vec![],
        }
    }

    #[test]
    fn parses_visual_crossing_columns_and_units() {
        let text = "name,datetime,tempmax,temp,precip\nDC,2018-07-01,90,25,\nDC,2018-07-02,80,20,25.4\n";
        let schema = WeatherSchema {
            temperature_unit: TemperatureUnit::Celsius,
            precipitation_unit: PrecipitationUnit::Millimetres,
            ..WeatherSchema::default()
        };
        let days = parse_weather(text.as_bytes(), &schema).unwrap();
        assert_eq!(days[&d(1)].mean_temperature_f, 77.0);
        assert_eq!(days[&d(1)].precipitation_in, 0.0);
        assert_eq!(days[&d(2)].mean_temperature_f, 68.0);
        assert!((days[&d(2)].precipitation_in - 1.0).abs() < 1e-12);

        let missing = parse_weather("date,temp\n".as_bytes(), &WeatherSchema::default()).unwrap_err();
        assert_eq!(missing, SeverityError::MissingColumn("datetime".into()));
        let dup = "datetime,temp,precip\n2018-07-01,1,0\n2018-07-01,2,0\n";
        assert_eq!(parse_weather(dup.as_bytes(), &WeatherSchema::default()).unwrap_err(), SeverityError::DuplicateDate(d(1)));
    }

    #[test]
    fn bins_clamp_and_label() {
        let b = Bins::default_temperature();
        assert_eq!(b.len(), 16);
        assert_eq!(b.index(-3.0), 0);
        assert_eq!(b.index(20.0), 1);
        assert_eq!(b.index(99.0), 15);
        let p = Bins::default_precipitation();
        assert_eq!(p.index(0.0), 0);
        assert_eq!(p.index(0.05), 1);
        assert_eq!(p.index(3.0), 5);
        assert_eq!(p.labels()[5], "2+");
        assert!(Bins::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn no_outliers_put_all_mass_in_first_column() {
        let weather: BTreeMap<_, _> = (1..=5).map(|i| w(i, 60.0 + i as f64, 0.0)).collect();
        let dates: Vec<NaiveDate> = (1..=5).map(d).collect();
        let x = weather_crosstab(&[], &weather, &dates, &CrosstabConfig::default());
        for (row, n) in x.temperature.values.iter().zip(&x.temperature.row_days) {
            if *n > 0 {
                assert_eq!(row[0], 1.0);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hand_tabulated_fixture() {
        let cfg = CrosstabConfig {
            temperature: Bins::new(vec![0.0, 50.0, 100.0]).unwrap(),
            precipitation: Bins::new(vec![0.0, 0.1, f64::INFINITY]).unwrap(),
            severity: Bins::new(vec![0.0, 0.5, 1.0]).unwrap(),
        };
        let weather: BTreeMap<_, _> = [w(1, 40.0, 0.0), w(2, 45.0, 0.3), w(3, 70.0, 0.0), w(4, 80.0, 1.2)].into();
        let dates: Vec<NaiveDate> = (1..=5).map(d).collect();
        let s = [
            sev(1, 2, Some(0.3), Direction::Negative),
            sev(2, 3, Some(0.9), Direction::Positive),
            sev(3, 3, Some(0.2), Direction::Negative),
            sev(1, 4, Some(0.6), Direction::Negative),
            sev(2, 4, Some(0.7), Direction::Positive),
        ];
        let x = weather_crosstab(&s, &weather, &dates, &cfg);
        assert_eq!(x.days_without_weather, 1);
        // Cold: day 1 none, day 2 0.3. Warm: day 3 max 0.9, day 4 max 0.7.
        assert_eq!(x.temperature.values, vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]);
        // Dry: day 1 none, day 3 negative 0.2. Wet: day 2 0.3, day 4 0.6.
        assert_eq!(x.precipitation.values, vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]]);
        assert_eq!(x.temperature.column_labels, ["no outlier", "(0,0.5]", "(0.5,1]"]);
    }

    #[test]
    fn outliers_without_severity_are_counted_not_binned() {
        let weather: BTreeMap<_, _> = [w(1, 40.0, 0.0), w(2, 60.0, 0.0)].into();
        let s = [sev(1, 1, None, Direction::Positive)];
        let x = weather_crosstab(&s, &weather, &[d(1), d(2)], &CrosstabConfig::default());
        assert_eq!(x.days_without_severity, 1);
        assert_eq!(x.temperature.row_days.iter().sum::<usize>(), 1);
    }
}
