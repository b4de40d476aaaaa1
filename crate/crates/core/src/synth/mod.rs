//! Seeded synthetic generators for tests, fixtures and the acceptance suite.

mod gp;
mod network;
mod recovery;
mod weather;

pub use gp::GaussianProcess;
pub use network::{generate_network, write_stations_csv, write_trips_csv, PlantedShock, SynthConfig, SynthNetwork};
pub use recovery::{score_recovery, RecoveryReport};
pub use weather::{generate_weather, write_weather_csv};
