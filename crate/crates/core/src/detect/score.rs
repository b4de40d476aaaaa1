use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{bootstrap_threshold, functional_depth, normalize_depth, BootstrapConfig, DetectError, PoolStatus};
use crate::baseline::{PartitionLabel, ResidualCurve};
use crate::curve::Curve;
use crate::TerminalId;

/// Seed of one (terminal, partition) pool: a hash of the root seed, the
/// terminal and the partition.
pub fn pool_seed(root: u64, terminal: &TerminalId, partition: PartitionLabel) -> u64 {
    let mut h = Sha256::new();
    h.update(b"bikedepth-pool\0");
    h.update(root.to_le_bytes());
    h.update(terminal.as_str().as_bytes());
    h.update([0u8]);
    h.update(partition.to_string().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub terminal: TerminalId,
    pub date: NaiveDate,
    pub partition: PartitionLabel,
    pub depth: f64,
    /// Absent when the pool was refused.
    pub threshold: Option<f64>,
    pub z: Option<f64>,
}

impl DepthRecord {
    pub fn flagged(&self) -> bool {
        self.z.is_some_and(|z| z > 0.0)
    }

    pub fn status(&self) -> PoolStatus {
        if self.threshold.is_some() {
            PoolStatus::Scored
        } else {
            PoolStatus::InsufficientData
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub terminal: TerminalId,
    pub partition: PartitionLabel,
    pub size: usize,
    pub threshold: Option<f64>,
    pub status: PoolStatus,
    pub message: Option<String>,
}

/// Depths, thresholds and `z` for every residual day of one terminal.
///
/// Small and all-zero pools are reported as insufficient data; their days
/// keep a depth but no threshold.
pub fn score_terminal(
    terminal: &TerminalId,
    residuals: &[ResidualCurve],
    cfg: &BootstrapConfig,
    root_seed: u64,
) -> Result<(Vec<DepthRecord>, Vec<PoolSummary>), DetectError> {
    let mut pools: BTreeMap<PartitionLabel, Vec<&ResidualCurve>> = BTreeMap::new();
    for r in residuals.iter().filter(|r| &r.terminal == terminal) {
        pools.entry(r.partition).or_default().push(r);
    }
    let mut records = Vec::with_capacity(residuals.len());
    let mut summaries = Vec::with_capacity(pools.len());
    for (partition, mut days) in pools {
        days.sort_by_key(|r| r.date);
        let curves: Vec<Curve> = days.iter().map(|r| r.values).collect();
        let depths = functional_depth(&curves, cfg.method);
        let seed = pool_seed(root_seed, terminal, partition);
        let (threshold, message) = match bootstrap_threshold(&curves, cfg, seed) {
            Ok(c) => (Some(c), None),
            Err(e @ (DetectError::PoolTooSmall { .. } | DetectError::AllZeroPool)) => {
                log::warn!("terminal {terminal} partition {partition}: {e}");
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        for (r, d) in days.iter().zip(&depths) {
            let z = threshold.map(|c| normalize_depth(*d, c)).transpose()?;
            records.push(DepthRecord {
                terminal: terminal.clone(),
                date: r.date,
                partition,
                depth: *d,
                threshold,
                z,
            });
        }
        summaries.push(PoolSummary {
            terminal: terminal.clone(),
            partition,
            size: curves.len(),
            threshold,
            status: if threshold.is_some() { PoolStatus::Scored } else { PoolStatus::InsufficientData },
            message,
        });
    }
    records.sort_by_key(|r| r.date);
    Ok((records, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::PartitionScheme;
    use crate::synth::GaussianProcess;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn residuals(terminal: &TerminalId, days: u64, seed: u64) -> Vec<ResidualCurve> {
        let scheme = PartitionScheme::default();
        let gp = GaussianProcess::new(1.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2019, 3, 1).unwrap();
        (0..days)
            .map(|i| {
                let date = start + chrono::Days::new(i);
                ResidualCurve { terminal: terminal.clone(), date, values: gp.sample(&mut rng), partition: scheme.assign(date) }
            })
            .collect()
    }

    #[test]
    fn seeds_depend_on_terminal_and_partition() {
        let labels = PartitionLabel::ALL;
        let a = pool_seed(1, &TerminalId::from(5u32), labels[0]);
        assert_eq!(a, pool_seed(1, &TerminalId::from(5u32), labels[0]));
        assert_ne!(a, pool_seed(2, &TerminalId::from(5u32), labels[0]));
        assert_ne!(a, pool_seed(1, &TerminalId::from(6u32), labels[0]));
        assert_ne!(a, pool_seed(1, &TerminalId::from(5u32), labels[1]));
    }

    #[test]
    fn scores_every_day_and_refuses_small_pools() {
        let t = TerminalId::from(31000u32);
        // March 1 to April 14: winter and summer weekday pools are large,
        // the summer weekend pool has only four days.
        let res = residuals(&t, 45, 4);
        let cfg = BootstrapConfig { resamples: 20, ..BootstrapConfig::default() };
        let (records, pools) = score_terminal(&t, &res, &cfg, 7).unwrap();
        assert_eq!(records.len(), 45);
        assert!(records.windows(2).all(|w| w[0].date < w[1].date));
        let small: Vec<&PoolSummary> = pools.iter().filter(|p| p.status == PoolStatus::InsufficientData).collect();
        assert_eq!(small.len(), 1);
        assert_eq!(small[0].size, 4);
        for r in &records {
            match (r.threshold, r.z) {
                (Some(c), Some(z)) => assert!((z - (c - r.depth) / c).abs() < 1e-15),
                (None, None) => assert!(!r.flagged()),
                _ => panic!("threshold and z must agree"),
            }
        }
    }

    #[test]
    fn scoring_is_bit_reproducible() {
        let t = TerminalId::from(1u32);
        let res = residuals(&t, 60, 9);
        let cfg = BootstrapConfig { resamples: 10, ..BootstrapConfig::default() };
        let a = score_terminal(&t, &res, &cfg, 3).unwrap();
        let b = score_terminal(&t, &res, &cfg, 3).unwrap();
        assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
    }
}
