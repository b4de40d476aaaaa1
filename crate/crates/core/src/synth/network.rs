use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Weekday};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::GaussianProcess;
use crate::detect::Direction;
use crate::ingest::TripRecord;
use crate::spatial::EARTH_RADIUS_M;
use crate::terminal::Terminal;
use crate::{TerminalId, HOURS};

/// Settings of the synthetic network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub clusters: usize,
    pub terminals_per_cluster: usize,
    /// Mean weekday pick-ups per terminal.
    pub daily_pickups: f64,
    /// Standard deviation of the shared cluster-day log-rate perturbation.
    pub cluster_noise: f64,
    /// Probability that a trip ends in its origin cluster.
    pub same_cluster_prob: f64,
    pub shock_days: usize,
    /// Rate multiplier during a positive shock.
    pub positive_multiplier: f64,
    /// Rate multiplier during a negative shock.
    pub negative_multiplier: f64,
    /// Fraction of trips shorter than a minute.
    pub short_trip_fraction: f64,
    pub center: (f64, f64),
    /// Distance of cluster centres from the network centre.
    pub ring_radius_m: f64,
    /// Distance of terminals from their cluster centre.
    pub terminal_spread_m: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2019,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2019, 12, 31).expect("valid date"),
            clusters: 5,
            terminals_per_cluster: 4,
            daily_pickups: 60.0,
            cluster_noise: 0.15,
            same_cluster_prob: 0.8,
            shock_days: 20,
            positive_multiplier: 3.0,
            negative_multiplier: 0.15,
            short_trip_fraction: 0.01,
            center: (38.9, -77.03),
            ring_radius_m: 2500.0,
            terminal_spread_m: 150.0,
        }
    }
}

/// A cluster-wide demand shock planted on one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedShock {
    pub cluster: usize,
    pub members: Vec<TerminalId>,
    pub date: NaiveDate,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNetwork {
    pub terminals: Vec<Terminal>,
    pub trips: Vec<TripRecord>,
    pub shocks: Vec<PlantedShock>,
    /// Generating cluster of every terminal.
    pub cluster_of: BTreeMap<TerminalId, usize>,
}

#[derive(Debug, Clone, Copy)]
enum Profile {
    MorningPeak,
    EveningPeak,
    Midday,
}

impl Profile {
    fn weekday(self, h: usize) -> f64 {
        let bump = |mu: f64, sd: f64| (-(h as f64 - mu).powi(2) / (2.0 * sd * sd)).exp();
        let base = if (6..=22).contains(&h) { 0.2 } else { 0.03 };
        match self {
            Profile::MorningPeak => base + 1.6 * bump(8.0, 1.2) + 0.5 * bump(17.5, 1.5),
            Profile::EveningPeak => base + 0.5 * bump(8.0, 1.2) + 1.6 * bump(17.5, 1.5),
            Profile::Midday => base + 0.6 * bump(13.0, 3.0) + 0.4 * bump(18.0, 2.0),
        }
    }

    fn weekend(self, h: usize) -> f64 {
        let bump = (-(h as f64 - 14.0).powi(2) / (2.0 * 3.0f64.powi(2))).exp();
        let base = if (7..=22).contains(&h) { 0.15 } else { 0.03 };
        base + bump
    }

    /// Hourly shape of the month and year effects, below both day shapes.
    fn seasonal(self, h: usize) -> f64 {
        self.weekday(h).min(self.weekend(h))
    }
}

fn offset(center: (f64, f64), north_m: f64, east_m: f64) -> (f64, f64) {
    let dlat = north_m / EARTH_RADIUS_M;
    let dlon = east_m / (EARTH_RADIUS_M * center.0.to_radians().cos());
    (center.0 + dlat.to_degrees(), center.1 + dlon.to_degrees())
}

fn day_factor(date: NaiveDate) -> f64 {
    match date.weekday() {
        Weekday::Mon => 0.95,
        Weekday::Tue | Weekday::Wed | Weekday::Thu => 1.0,
        Weekday::Fri => 1.05,
        Weekday::Sat => 0.9,
        Weekday::Sun => 0.8,
    }
}

fn month_factor(date: NaiveDate) -> f64 {
    let m = date.month() as f64;
    1.0 + 0.3 * ((m - 4.0) / 12.0 * 2.0 * std::f64::consts::PI).sin()
}

fn year_factor(date: NaiveDate, start_year: i32) -> f64 {
    1.0 + 0.08 * (date.year() - start_year) as f64
}

fn shock_profile(direction: Direction, h: usize, cfg: &SynthConfig) -> f64 {
    match direction {
        Direction::Positive if (9..=19).contains(&h) => cfg.positive_multiplier,
        Direction::Positive => 1.0,
        Direction::Negative => cfg.negative_multiplier,
    }
}

/// Generates terminals, trips and planted shocks.
///
/// Terminals sit in tight groups on a ring around the centre. Pick-ups per
/// terminal and hour are Poisson. The rate is a commuter profile scaled by a
/// day-of-week factor plus additive month and year effects, times a smooth
/// log-rate perturbation shared by every terminal of the cluster on that day. Shocks multiply the rate of
/// every member of one cluster on one date; half are positive.
pub fn generate_network(cfg: &SynthConfig) -> SynthNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles = [Profile::MorningPeak, Profile::EveningPeak, Profile::Midday];

    let mut terminals = Vec::new();
    let mut members: Vec<Vec<TerminalId>> = vec![Vec::new(); cfg.clusters];
    let mut cluster_of = BTreeMap::new();
    let mut terminal_profile = BTreeMap::new();
    let mut terminal_scale = BTreeMap::new();
    for c in 0..cfg.clusters {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / cfg.clusters.max(1) as f64;
        let cc = offset(cfg.center, cfg.ring_radius_m * angle.cos(), cfg.ring_radius_m * angle.sin());
        for k in 0..cfg.terminals_per_cluster {
            let id = TerminalId::from(31000 + (c * 100 + k) as u32);
            let a = 2.0 * std::f64::consts::PI * k as f64 / cfg.terminals_per_cluster.max(1) as f64;
            let r = cfg.terminal_spread_m * rng.random_range(0.6..1.0);
            let (lat, lon) = offset(cc, r * a.cos(), r * a.sin());
            terminals.push(Terminal { id: id.clone(), latitude: lat, longitude: lon, first_active_date: None });
            members[c].push(id.clone());
            cluster_of.insert(id.clone(), c);
            terminal_profile.insert(id.clone(), profiles[(c + k) % profiles.len()]);
            terminal_scale.insert(id, rng.random_range(0.8..1.25));
        }
    }
    let all_ids: Vec<TerminalId> = terminals.iter().map(|t| t.id.clone()).collect();

    let dates: Vec<NaiveDate> = cfg.start.iter_days().take_while(|d| *d <= cfg.end).collect();
    let mut shock_dates: Vec<NaiveDate> = dates.clone();
    shock_dates.shuffle(&mut rng);
    let mut shocks: Vec<PlantedShock> = shock_dates
        .into_iter()
        .take(cfg.shock_days)
        .enumerate()
        .map(|(i, date)| {
            let cluster = rng.random_range(0..cfg.clusters);
            PlantedShock {
                cluster,
                members: members[cluster].clone(),
                date,
                direction: if i % 2 == 0 { Direction::Positive } else { Direction::Negative },
            }
        })
        .collect();
    shocks.sort_by_key(|s| s.date);
    let shock_on: BTreeMap<(usize, NaiveDate), Direction> =
        shocks.iter().map(|s| ((s.cluster, s.date), s.direction)).collect();

    let gp = GaussianProcess::new(cfg.cluster_noise, 3.0);
    let start_year = cfg.start.year();
    let mut trips = Vec::new();
    let profile_norm: f64 = (0..HOURS).map(|h| Profile::MorningPeak.weekday(h)).sum();
    for &date in &dates {
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let day = day_factor(date);
        let season = month_factor(date) - 1.0 + year_factor(date, start_year) - 1.0;
        for (c, ms) in members.iter().enumerate() {
            let perturb = gp.sample(&mut rng);
            let shock = shock_on.get(&(c, date)).copied();
            for origin in ms {
                let profile = terminal_profile[origin];
                let scale = terminal_scale[origin] * cfg.daily_pickups / profile_norm;
                for h in 0..HOURS {
                    let shape = if weekend { profile.weekend(h) } else { profile.weekday(h) };
                    let mut rate = scale * (shape * day + profile.seasonal(h) * season) * perturb[h].exp();
                    if let Some(dir) = shock {
                        rate *= shock_profile(dir, h, cfg);
                    }
                    let n = if rate > 0.0 { Poisson::new(rate).map(|p| p.sample(&mut rng) as usize).unwrap_or(0) } else { 0 };
                    for _ in 0..n {
                        let same = rng.random_bool(cfg.same_cluster_prob);
                        let dest = if same { ms.choose(&mut rng) } else { all_ids.choose(&mut rng) }
                            .expect("clusters are nonempty")
                            .clone();
                        let secs_in_hour = rng.random_range(0..3600);
                        let pickup = date.and_time(
                            NaiveTime::from_num_seconds_from_midnight_opt((h * 3600 + secs_in_hour) as u32, 0)
                                .expect("seconds within a day"),
                        );
                        let duration = if rng.random_bool(cfg.short_trip_fraction) {
                            rng.random_range(5..60)
                        } else if cluster_of[&dest] == c {
                            rng.random_range(240..1500)
                        } else {
                            rng.random_range(900..2700)
                        };
                        trips.push(TripRecord {
                            pickup_time: pickup,
                            dropoff_time: pickup + Duration::seconds(duration),
                            origin_terminal: origin.clone(),
                            dest_terminal: dest,
                        });
                    }
                }
            }
        }
    }
    SynthNetwork { terminals, trips, shocks, cluster_of }
}

/// Writes trips with the legacy Capital Bikeshare header.
pub fn write_trips_csv<W: Write>(out: W, trips: &[TripRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Duration", "Start date", "End date", "Start station number", "End station number", "Member type"])?;
    for t in trips {
        w.write_record([
            t.duration_seconds().to_string(),
            t.pickup_time.format("%Y-%m-%d %H:%M:%S").to_string(),
            t.dropoff_time.format("%Y-%m-%d %H:%M:%S").to_string(),
            t.origin_terminal.to_string(),
            t.dest_terminal.to_string(),
            "Member".to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an `id,latitude,longitude` station file.
pub fn write_stations_csv<W: Write>(out: W, terminals: &[Terminal]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "latitude", "longitude"])?;
    for t in terminals {
        w.write_record([t.id.to_string(), t.latitude.to_string(), t.longitude.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
