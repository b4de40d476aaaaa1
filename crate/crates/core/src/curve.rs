//! Fixed 24-point hourly grid shared by every curve type.

/// Number of hourly grid points in a daily curve.
pub const HOURS: usize = 24;

/// A real-valued curve on the hourly grid.
pub type Curve = [f64; HOURS];

pub fn zero_curve() -> Curve {
    [0.0; HOURS]
}

/// Sum of the curve over the grid (a discrete integral with unit spacing).
pub fn grid_sum(curve: &Curve) -> f64 {
    curve.iter().sum()
}

pub fn grid_mean(curve: &Curve) -> f64 {
    grid_sum(curve) / HOURS as f64
}

/// Euclidean distance between two curves on the grid.
pub fn l2_distance(a: &Curve, b: &Curve) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &Curve, b: &Curve) -> Curve {
    std::array::from_fn(|h| a[h] - b[h])
}

pub fn add_assign(acc: &mut Curve, other: &Curve) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Linear-interpolation quantile (the common "type 7" definition) of an
/// unsorted slice. `q` is in `[0, 1]`. Returns `None` on empty input.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

/// As [`quantile`], for data that is already sorted ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// As [`quantile`], reordering `values` in place by selection instead of
/// sorting a copy.
pub fn quantile_in_place(values: &mut [f64], q: f64) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    let frac = pos - lo as f64;
    if frac == 0.0 || upper.is_empty() {
        return Some(lo_val);
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    Some(lo_val + (hi_val - lo_val) * frac)
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert!((quantile(&v, 0.15).unwrap() - 1.45).abs() < 1e-12);
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn selection_quantile_matches_sorting() {
        let v: Vec<f64> = (0..101).map(|i| ((i * 37) % 101) as f64 * 0.5).collect();
        for q in [0.0, 0.01, 0.15, 0.5, 0.99, 1.0] {
            let mut w = v.clone();
            assert_eq!(quantile_in_place(&mut w, q), quantile(&v, q));
        }
        assert_eq!(quantile_in_place(&mut [], 0.5), None);
    }

    #[test]
    fn distance_is_euclidean() {
        let mut a = zero_curve();
        let mut b = zero_curve();
        a[0] = 3.0;
        b[1] = 4.0;
        assert_eq!(l2_distance(&a, &b), 5.0);
    }
}
