use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ClusterSeverity;
use crate::detect::Direction;
use crate::spatial::ClusterId;
use crate::TerminalId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEntry {
    pub rank: usize,
    pub date: NaiveDate,
    pub cluster: ClusterId,
    pub severity: Option<f64>,
    pub z_n: f64,
    pub direction: Option<Direction>,
    /// Flagged terminals.
    pub detected: Vec<TerminalId>,
    /// Remaining cluster members.
    pub co_cluster: Vec<TerminalId>,
}

/// Ranked alerts for one date.
///
/// Clusters with a severity come first, by severity descending; clusters
/// without one follow, by `z_n` descending. Ties go to the smaller cluster ID.
pub fn alert_list(
    date: NaiveDate,
    severities: &[ClusterSeverity],
    members: &BTreeMap<ClusterId, Vec<TerminalId>>,
) -> Vec<AlertEntry> {
    let mut day: Vec<&ClusterSeverity> = severities.iter().filter(|s| s.date == date && s.z_n > 0.0).collect();
    day.sort_by(|a, b| match (a.severity, b.severity) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.cluster.cmp(&b.cluster)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => b.z_n.total_cmp(&a.z_n).then_with(|| a.cluster.cmp(&b.cluster)),
    });
    day.into_iter()
        .enumerate()
        .map(|(i, s)| {
            let detected = s.contributors.clone();
            let co_cluster = members
                .get(&s.cluster)
                .map(|ms| ms.iter().filter(|t| !detected.contains(t)).cloned().collect())
                .unwrap_or_default();
            AlertEntry {
                rank: i + 1,
                date,
                cluster: s.cluster.clone(),
                severity: s.severity,
                z_n: s.z_n,
                direction: s.direction,
                detected,
                co_cluster,
            }
        })
        .collect()
}

/// Delimited export with the alert table columns. Terminal lists are
/// space-separated.
pub fn write_alerts_csv<W: Write>(out: W, alerts: &[AlertEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "date", "cluster", "severity", "z_n", "direction", "detected", "co_cluster"])?;
    let join = |ts: &[TerminalId]| ts.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ");
    for a in alerts {
        w.write_record([
            a.rank.to_string(),
            a.date.to_string(),
            a.cluster.to_string(),
            a.severity.map(|s| format!("{s:.3}")).unwrap_or_default(),
            format!("{:.4}", a.z_n),
            a.direction.map(|d| d.arrow().to_string()).unwrap_or_default(),
            join(&a.detected),
            join(&a.co_cluster),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 3, 30).unwrap()
    }

    fn sev(cluster: u32, theta: Option<f64>, z_n: f64, contributors: &[u32]) -> ClusterSeverity {
        ClusterSeverity {
            cluster: ClusterId(cluster.into()),
            date: date(),
            z_n,
            size: 4,
            severity: theta,
            direction: Some(Direction::Positive),
            contributors: contributors.iter().map(|c| TerminalId::from(*c)).collect(),
        }
    }

    #[test]
    fn ranks_follow_severity() {
        let s = vec![sev(3, Some(0.347), 0.5, &[3]), sev(1, Some(0.892), 2.0, &[1]), sev(2, Some(0.828), 1.0, &[2])];
        let alerts = alert_list(date(), &s, &BTreeMap::new());
        let order: Vec<(usize, f64)> = alerts.iter().map(|a| (a.rank, a.severity.unwrap())).collect();
        assert_eq!(order, vec![(1, 0.892), (2, 0.828), (3, 0.347)]);
    }

    #[test]
    fn empty_day_gives_empty_list() {
        assert!(alert_list(date(), &[], &BTreeMap::new()).is_empty());
        let other = NaiveDate::from_ymd_opt(2018, 3, 31).unwrap();
        assert!(alert_list(other, &[sev(1, Some(0.5), 1.0, &[1])], &BTreeMap::new()).is_empty());
    }

    #[test]
    fn ties_and_unavailable_severities() {
        let s = vec![
            sev(20, Some(0.5), 1.0, &[20]),
            sev(7, None, 3.0, &[7]),
            sev(10, Some(0.5), 1.0, &[10]),
            sev(5, None, 0.4, &[5]),
        ];
        let alerts = alert_list(date(), &s, &BTreeMap::new());
        let clusters: Vec<String> = alerts.iter().map(|a| a.cluster.to_string()).collect();
        assert_eq!(clusters, ["10", "20", "7", "5"]);
    }

    #[test]
    fn splits_detected_and_co_cluster_members() {
        let members = BTreeMap::from([(ClusterId(1u32.into()), (1..=4u32).map(TerminalId::from).collect())]);
        let alerts = alert_list(date(), &[sev(1, Some(0.9), 2.0, &[2, 4])], &members);
        assert_eq!(alerts[0].detected, vec![TerminalId::from(2u32), TerminalId::from(4u32)]);
        assert_eq!(alerts[0].co_cluster, vec![TerminalId::from(1u32), TerminalId::from(3u32)]);
        let mut buf = Vec::new();
        write_alerts_csv(&mut buf, &alerts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,2018-03-30,1,0.900,2.0000,↑,2 4,1 3");
    }

    proptest! {
        #[test]
        fn output_is_a_permutation(thetas in proptest::collection::vec(proptest::option::of(0.0f64..1.0), 0..15)) {
            let s: Vec<ClusterSeverity> = thetas.iter().enumerate()
                .map(|(i, t)| sev(i as u32 + 1, *t, 0.1 + i as f64, &[i as u32 + 1])).collect();
            let alerts = alert_list(date(), &s, &BTreeMap::new());
            prop_assert_eq!(alerts.len(), s.len());
            let mut got: Vec<ClusterId> = alerts.iter().map(|a| a.cluster.clone()).collect();
            got.sort();
            let mut want: Vec<ClusterId> = s.iter().map(|x| x.cluster.clone()).collect();
            want.sort();
            prop_assert_eq!(got, want);
            prop_assert!(alerts.iter().enumerate().all(|(i, a)| a.rank == i + 1));
            let sevs: Vec<f64> = alerts.iter().filter_map(|a| a.severity).collect();
            prop_assert!(sevs.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
