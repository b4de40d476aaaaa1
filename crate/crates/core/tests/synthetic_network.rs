//! Full analysis chain on the synthetic network using library calls only.

use std::collections::BTreeMap;

use bikedepth_core::baseline::{fit_regression, residuals, select_model, FitOptions, Observation, PartitionScheme, ResidualCurve};
use bikedepth_core::detect::{cluster_exceedances, score_terminal, BootstrapConfig};
use bikedepth_core::ingest::{aggregate_daily_curves, cleanse_trips, CurveKind, DateRange};
use bikedepth_core::spatial::{cluster_terminals, ClusterParams, CorrelationCache, PreparedCurves};
use bikedepth_core::synth::{generate_network, score_recovery, SynthConfig};
use bikedepth_core::TerminalId;

#[test]
fn planted_shocks_are_recovered() {
    let cfg = SynthConfig::default();
    let net = generate_network(&cfg);
    let clean = cleanse_trips(net.trips.clone(), 60, None);
    assert!(clean.removed_short > 0);
    let range = DateRange::new(cfg.start, cfg.end).unwrap();
    let curves = aggregate_daily_curves(&clean.trips, &clean.first_active, CurveKind::Usage, range).unwrap();

    let scheme = PartitionScheme::default();
    let mut by_terminal: BTreeMap<TerminalId, Vec<Observation>> = BTreeMap::new();
    for c in &curves {
        by_terminal.entry(c.terminal.clone()).or_default().push(Observation::from(c));
    }
    assert_eq!(by_terminal.len(), cfg.clusters * cfg.terminals_per_cluster);

    let mut all_res: Vec<ResidualCurve> = Vec::new();
    let mut prepared = BTreeMap::new();
    for (t, obs) in &by_terminal {
        let sel = select_model(obs, &FitOptions::default()).unwrap();
        let model = fit_regression(t, obs, sel.chosen, &FitOptions::default()).unwrap();
        let res = residuals(&model, obs, &scheme);
        prepared.insert(t.clone(), PreparedCurves::from_pairs(res.iter().map(|r| (r.date, &r.values))));
        all_res.extend(res);
    }

    let mut cache = CorrelationCache::new(prepared);
    let (_, model) = cluster_terminals(&net.terminals, &mut cache, ClusterParams::default()).unwrap();
    for ms in model.members().values() {
        let generating: Vec<usize> = ms.iter().map(|m| net.cluster_of[m]).collect();
        assert!(generating.windows(2).all(|w| w[0] == w[1]), "cluster mixes generating groups: {ms:?}");
    }

    let mut records = Vec::new();
    for t in by_terminal.keys() {
        let (r, pools) = score_terminal(t, &all_res, &BootstrapConfig::default(), 7).unwrap();
        assert!(!pools.is_empty());
        records.extend(r);
    }
    let exceedances = cluster_exceedances(&model, &records, &all_res);
    let report = score_recovery(&net.shocks, &model, &exceedances);
    assert!(report.detection_rate() >= 0.9, "{report:?}");
    assert!(report.direction_rate() >= 0.95, "{report:?}");
    assert!(report.false_positive_rate() < 0.1, "{report:?}");
}
