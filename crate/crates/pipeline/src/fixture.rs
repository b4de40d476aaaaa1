//! Writes a synthetic network as a runnable dataset directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bikedepth_core::synth::{
    generate_network, generate_weather, write_stations_csv, write_trips_csv, write_weather_csv, PlantedShock,
    SynthConfig, SynthNetwork,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::tables;

pub const CONFIG_FILE: &str = "bikedepth.toml";

/// One planted shock as stored in `planted_shocks.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockRow {
    pub date: NaiveDate,
    pub cluster: usize,
    pub direction: String,
    pub members: String,
}

impl From<&PlantedShock> for ShockRow {
    fn from(s: &PlantedShock) -> Self {
        ShockRow {
            date: s.date,
            cluster: s.cluster,
            direction: s.direction.to_string(),
            members: s.members.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug)]
pub struct Fixture {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub network: SynthNetwork,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

/// Generates the network and writes trips, stations, weather, the planted
/// shocks and a config that runs the pipeline over them.
pub fn write_fixture(dir: &Path, synth: &SynthConfig) -> Result<Fixture> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let network = generate_network(synth);
    let weather = generate_weather(synth, &network);
    write_trips_csv(create(&dir.join("trips.csv"))?, &network.trips)?;
    write_stations_csv(create(&dir.join("stations.csv"))?, &network.terminals)?;
    write_weather_csv(create(&dir.join("weather.csv"))?, &weather)?;
    let shocks: Vec<ShockRow> = network.shocks.iter().map(ShockRow::from).collect();
    tables::write_rows(&dir.join("planted_shocks.csv"), &shocks)?;

    let mut cfg = PipelineConfig::new(".", vec![PathBuf::from("trips.csv")]);
    cfg.data.stations = Some(PathBuf::from("stations.csv"));
    cfg.data.weather = Some(PathBuf::from("weather.csv"));
    cfg.data.start = Some(synth.start);
    cfg.data.end = Some(synth.end);
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()?).map_err(|e| PipelineError::io(&config_path, e))?;
    Ok(Fixture { dir: dir.to_path_buf(), config_path, network })
}
