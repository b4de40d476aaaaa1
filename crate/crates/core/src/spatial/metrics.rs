use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use super::SpatialError;

/// Normalised mutual information of two clusterings of the same nodes.
///
/// Returns 1 when both clusterings have zero entropy.
pub fn nmi<K, A, B>(a: &BTreeMap<K, A>, b: &BTreeMap<K, B>) -> Result<f64, SpatialError>
where
    K: Ord,
    A: Eq + Hash,
    B: Eq + Hash,
{
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(SpatialError::NodeSetMismatch);
    }
    if a.is_empty() {
        return Err(SpatialError::NodeSetMismatch);
    }
    let m = a.len() as f64;
    // Label counts plus labels in order of first occurrence.
    fn tally<L: Eq + Hash + Copy>(labels: impl Iterator<Item = L>) -> (HashMap<L, usize>, Vec<L>) {
        let mut counts: HashMap<L, usize> = HashMap::new();
        let mut order = Vec::new();
        for l in labels {
            let c = counts.entry(l).or_default();
            if *c == 0 {
                order.push(l);
            }
            *c += 1;
        }
        (counts, order)
    }
    let (ca, oa) = tally(a.values());
    let (cb, ob) = tally(b.values());
    let (joint, oj) = tally(a.values().zip(b.values()));
    let entropy = |counts: &dyn Fn(usize) -> usize, n: usize| -> f64 {
        (0..n).map(|k| counts(k) as f64 / m).map(|p| -p * p.ln()).sum()
    };
    let ha = entropy(&|k| ca[&oa[k]], oa.len());
    let hb = entropy(&|k| cb[&ob[k]], ob.len());
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let i: f64 = oj
        .iter()
        .map(|pair| {
            let n = joint[pair] as f64;
            n / m * (n * m / (ca[&pair.0] as f64 * cb[&pair.1] as f64)).ln()
        })
        .sum();
    Ok((2.0 * i / (ha + hb)).clamp(0.0, 1.0))
}

/// Standard deviation in cluster sizes with the `K - 1` denominator.
pub fn sdcs(sizes: &[usize]) -> Result<f64, SpatialError> {
    let k = sizes.len();
    if k < 2 {
        return Err(SpatialError::SingleCluster);
    }
    let s: usize = sizes.iter().sum();
    let mean = s as f64 / k as f64;
    let ss: f64 = sizes.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
    Ok((ss / (k - 1) as f64).sqrt())
}
