use std::io::Write;

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{SynthConfig, SynthNetwork};
use crate::detect::Direction;
use crate::severity::WeatherDay;

/// Daily weather over the configured dates: a seasonal temperature cycle and
/// intermittent rain, with heavy rain on the dates of negative shocks.
pub fn generate_weather(cfg: &SynthConfig, network: &SynthNetwork) -> Vec<WeatherDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5745_4154_4845_5200);
    let noise = Normal::new(0.0, 6.0).expect("positive sd");
    let amount = Exp::new(4.0).expect("positive rate");
    let stormy: Vec<_> =
        network.shocks.iter().filter(|s| s.direction == Direction::Negative).map(|s| s.date).collect();
    cfg.start
        .iter_days()
        .take_while(|d| *d <= cfg.end)
        .map(|date| {
            let phase = (date.ordinal0() as f64 - 105.0) / 365.25 * std::f64::consts::TAU;
            let temp = 57.0 + 22.0 * phase.sin() + noise.sample(&mut rng);
            let precip: f64 = if stormy.contains(&date) {
                rng.random_range(0.6..2.5)
            } else if rng.random_bool(0.3) {
                amount.sample(&mut rng)
            } else {
                0.0
            };
            WeatherDay {
                date,
                mean_temperature_f: (temp * 10.0).round() / 10.0,
                precipitation_in: (precip * 100.0).round() / 100.0,
            }
        })
        .collect()
}

/// Writes weather in the Visual Crossing daily layout.
pub fn write_weather_csv<W: Write>(out: W, days: &[WeatherDay]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "datetime", "temp", "precip"])?;
    for d in days {
        w.write_record([
            "synthetic".to_string(),
            d.date.to_string(),
            d.mean_temperature_f.to_string(),
            d.precipitation_in.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
