//! Scores detected cluster-days against planted shocks.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::PlantedShock;
use crate::detect::ClusterDayExceedance;
use crate::spatial::ClusterModel;
use crate::TerminalId;

/// Recovery counts for one detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub planted: usize,
    /// Planted shocks with an outlying cluster-day covering one of their members.
    pub detected: usize,
    /// Detections whose strongest covering cluster-day has the planted direction.
    pub correct_direction: usize,
    /// Cluster-days with no planted member.
    pub clean_cluster_days: usize,
    pub false_positives: usize,
}

impl RecoveryReport {
    pub fn detection_rate(&self) -> f64 {
        ratio(self.detected, self.planted)
    }

    pub fn direction_rate(&self) -> f64 {
        ratio(self.correct_direction, self.detected)
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.false_positives, self.clean_cluster_days)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Matches detected cluster-days to planted shocks by date and membership.
pub fn score_recovery(
    shocks: &[PlantedShock],
    model: &ClusterModel,
    exceedances: &[ClusterDayExceedance],
) -> RecoveryReport {
    let members = model.members();
    let mut planted_terminals: BTreeMap<NaiveDate, BTreeSet<&TerminalId>> = BTreeMap::new();
    for s in shocks {
        planted_terminals.entry(s.date).or_default().extend(s.members.iter());
    }
    let covers = |e: &ClusterDayExceedance, terminals: &BTreeSet<&TerminalId>| {
        members.get(&e.cluster).is_some_and(|ms| ms.iter().any(|m| terminals.contains(m)))
    };

    let mut report = RecoveryReport {
        planted: shocks.len(),
        detected: 0,
        correct_direction: 0,
        clean_cluster_days: 0,
        false_positives: 0,
    };
    for s in shocks {
        let own: BTreeSet<&TerminalId> = s.members.iter().collect();
        let best = exceedances
            .iter()
            .filter(|e| e.date == s.date && e.is_outlier() && covers(e, &own))
            .max_by(|a, b| a.z_n.total_cmp(&b.z_n));
        if let Some(e) = best {
            report.detected += 1;
            if e.direction == Some(s.direction) {
                report.correct_direction += 1;
            }
        }
    }
    let empty = BTreeSet::new();
    for e in exceedances {
        if covers(e, planted_terminals.get(&e.date).unwrap_or(&empty)) {
            continue;
        }
        report.clean_cluster_days += 1;
        if e.is_outlier() {
            report.false_positives += 1;
        }
    }
    report
}
