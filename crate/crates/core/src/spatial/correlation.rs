use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SpatialError;
use crate::curve::{grid_mean, Curve, HOURS};
use crate::TerminalId;

/// Norms below this are treated as constant curves.
const CONSTANT_NORM: f64 = 1e-9;

/// Day-indexed curves after centring and L2 normalisation. Constant days
/// are stored as `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreparedCurves {
    days: BTreeMap<NaiveDate, Option<Curve>>,
}

impl PreparedCurves {
    pub fn new(curves: &BTreeMap<NaiveDate, Curve>) -> Self {
        let days = curves.iter().map(|(d, c)| (*d, normalize(c))).collect();
        PreparedCurves { days }
    }

    pub fn from_pairs<'a>(curves: impl IntoIterator<Item = (NaiveDate, &'a Curve)>) -> Self {
        let days = curves.into_iter().map(|(d, c)| (d, normalize(c))).collect();
        PreparedCurves { days }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Average per-day correlation over shared days.
    pub fn correlate(&self, other: &PreparedCurves) -> Result<CorrelationSummary, SpatialError> {
        let (small, large) = if self.days.len() <= other.days.len() { (self, other) } else { (other, self) };
        let mut sum = 0.0;
        let mut days_used = 0usize;
        let mut days_skipped = 0usize;
        for (date, a) in &small.days {
            let Some(b) = large.days.get(date) else { continue };
            match (a, b) {
                (Some(a), Some(b)) => {
                    sum += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                    days_used += 1;
                }
                _ => days_skipped += 1,
            }
        }
        if days_used == 0 {
            return Err(SpatialError::NoSharedDays);
        }
        let rho = (sum / days_used as f64).clamp(-1.0, 1.0);
        Ok(CorrelationSummary { rho, days_used, days_skipped })
    }
}

fn normalize(c: &Curve) -> Option<Curve> {
    let m = grid_mean(c);
    let mut out = [0.0; HOURS];
    for (o, v) in out.iter_mut().zip(c) {
        *o = v - m;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > CONSTANT_NORM) {
        return None;
    }
    for o in &mut out {
        *o /= norm;
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub rho: f64,
    pub days_used: usize,
    /// Shared days where either curve was constant.
    pub days_skipped: usize,
}

/// Average dynamical correlation of two day-indexed curve sets.
pub fn dynamical_correlation(
    a: &BTreeMap<NaiveDate, Curve>,
    b: &BTreeMap<NaiveDate, Curve>,
) -> Result<CorrelationSummary, SpatialError> {
    PreparedCurves::new(a).correlate(&PreparedCurves::new(b))
}

/// Prepared curves per terminal plus memoised pair correlations.
#[derive(Debug, Default)]
pub struct CorrelationCache {
    curves: BTreeMap<TerminalId, PreparedCurves>,
    pairs: HashMap<(TerminalId, TerminalId), Option<CorrelationSummary>>,
    computed: usize,
}

impl CorrelationCache {
    pub fn new(curves: BTreeMap<TerminalId, PreparedCurves>) -> Self {
        CorrelationCache { curves, pairs: HashMap::new(), computed: 0 }
    }

    fn key(a: &TerminalId, b: &TerminalId) -> (TerminalId, TerminalId) {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    fn compute(&self, a: &TerminalId, b: &TerminalId) -> Option<CorrelationSummary> {
        let (ca, cb) = (self.curves.get(a)?, self.curves.get(b)?);
        ca.correlate(cb).ok()
    }

    /// Computes every missing pair in parallel.
    pub fn ensure(&mut self, pairs: &[(TerminalId, TerminalId)]) {
        let mut missing: Vec<(TerminalId, TerminalId)> =
            pairs.iter().map(|(a, b)| Self::key(a, b)).filter(|k| !self.pairs.contains_key(k)).collect();
        missing.sort();
        missing.dedup();
        let results: Vec<_> = missing
            .par_iter()
            .map(|(a, b)| self.compute(a, b))
            .collect();
        self.computed += missing.len();
        for (k, r) in missing.into_iter().zip(results) {
            self.pairs.insert(k, r);
        }
    }

    pub fn get(&mut self, a: &TerminalId, b: &TerminalId) -> Option<CorrelationSummary> {
        let k = Self::key(a, b);
        if let Some(r) = self.pairs.get(&k) {
            return *r;
        }
        let r = self.compute(a, b);
        self.computed += 1;
        self.pairs.insert(k, r);
        r
    }

    /// Number of pair correlations evaluated so far.
    pub fn computed(&self) -> usize {
        self.computed
    }

    /// All cached pairs with a defined correlation, sorted by pair.
    pub fn defined_pairs(&self) -> Vec<((TerminalId, TerminalId), CorrelationSummary)> {
        let mut out: Vec<_> = self.pairs.iter().filter_map(|(k, v)| v.map(|s| (k.clone(), s))).collect();
        out.sort_by(|x, y| x.0.cmp(&y.0));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    fn curve(f: impl Fn(usize) -> f64) -> Curve {
        std::array::from_fn(f)
    }

    /// Pearson correlation over the grid, written out directly.
    fn pearson(a: &Curve, b: &Curve) -> f64 {
        let n = HOURS as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for h in 0..HOURS {
            sab += (a[h] - ma) * (b[h] - mb);
            saa += (a[h] - ma).powi(2);
            sbb += (b[h] - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn self_correlation_is_one() {
        let a: BTreeMap<_, _> = (0..5).map(|i| (day(i), curve(|h| ((h as f64) * (i as f64 + 1.0)).sin()))).collect();
        let r = dynamical_correlation(&a, &a).unwrap();
        assert!((r.rho - 1.0).abs() < 1e-12);
        assert_eq!(r.days_used, 5);
    }

    #[test]
    fn anti_phase_is_minus_one() {
        let a: BTreeMap<_, _> = (0..3).map(|i| (day(i), curve(|h| (h as f64 * 0.3 + i as f64).cos()))).collect();
        let b: BTreeMap<_, _> = a.iter().map(|(d, c)| (*d, curve(|h| 7.0 - c[h]))).collect();
        let r = dynamical_correlation(&a, &b).unwrap();
        assert!((r.rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_fixed_vectors() {
        let x = curve(|h| [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0][h % 8] + h as f64 * 0.1);
        let y = curve(|h| [2.0, 7.0, 1.0, 8.0, 2.0, 8.0][h % 6] - (h as f64).sqrt());
        let a = BTreeMap::from([(day(0), x)]);
        let b = BTreeMap::from([(day(0), y)]);
        let r = dynamical_correlation(&a, &b).unwrap();
        assert!((r.rho - pearson(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn constant_days_are_skipped() {
        let x = curve(|h| h as f64);
        let a = BTreeMap::from([(day(0), x), (day(1), [0.0; HOURS]), (day(2), x)]);
        let b = BTreeMap::from([(day(0), x), (day(1), x), (day(3), x)]);
        let r = dynamical_correlation(&a, &b).unwrap();
        assert_eq!((r.days_used, r.days_skipped), (1, 1));
        assert!((r.rho - 1.0).abs() < 1e-12);

        let zero = BTreeMap::from([(day(0), [0.0; HOURS])]);
        assert_eq!(dynamical_correlation(&zero, &b).unwrap_err(), SpatialError::NoSharedDays);
        let disjoint = BTreeMap::from([(day(9), x)]);
        assert_eq!(dynamical_correlation(&disjoint, &b).unwrap_err(), SpatialError::NoSharedDays);
    }

    #[test]
    fn cache_memoises_pairs() {
        let mk = |s: f64| PreparedCurves::new(&BTreeMap::from([(day(0), curve(|h| (h as f64 * s).sin()))]));
        let mut cache = CorrelationCache::new(BTreeMap::from([
            (TerminalId::from(1u32), mk(0.2)),
            (TerminalId::from(2u32), mk(0.3)),
        ]));
        let (a, b) = (TerminalId::from(1u32), TerminalId::from(2u32));
        cache.ensure(&[(b.clone(), a.clone())]);
        let first = cache.get(&a, &b).unwrap();
        assert_eq!(cache.get(&b, &a).unwrap(), first);
        assert_eq!(cache.computed(), 1);
        assert!(cache.get(&a, &TerminalId::from(3u32)).is_none());
    }

    proptest! {
        #[test]
        fn rho_is_bounded(
            xs in proptest::collection::vec(proptest::array::uniform24(-50.0f64..50.0), 1..6),
            ys in proptest::collection::vec(proptest::array::uniform24(-50.0f64..50.0), 1..6),
        ) {
            let a: BTreeMap<_, _> = xs.iter().enumerate().map(|(i, c)| (day(i as u32), *c)).collect();
            let b: BTreeMap<_, _> = ys.iter().enumerate().map(|(i, c)| (day(i as u32), *c)).collect();
            if let Ok(r) = dynamical_correlation(&a, &b) {
                prop_assert!(r.rho >= -1.0 - 1e-9 && r.rho <= 1.0 + 1e-9);
                let n = r.days_used;
                let oracle: f64 = a.iter()
                    .filter_map(|(d, x)| b.get(d).map(|y| pearson(x, y)))
                    .filter(|v| v.is_finite())
                    .sum::<f64>() / n as f64;
                prop_assert!((r.rho - oracle).abs() < 1e-9);
            }
        }
    }
}
