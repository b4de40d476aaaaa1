use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::digamma;

use super::SeverityError;
use crate::spatial::ClusterId;

/// Minimum number of positive exceedances needed for a fit.
pub const MIN_SEVERITY_SAMPLES: usize = 20;
/// Lower clamp for both shape parameters.
pub const MIN_SHAPE: f64 = 1e-3;

const MAX_NEWTON_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Method of moments refined by maximum likelihood.
    MomentsThenMle,
    /// Moments were invalid; likelihood maximised from α = β = 1.
    MleFromUniform,
    /// Likelihood not finite (a sample on the boundary); moments only.
    MomentsOnly,
}

/// Beta distribution scaled to `(0, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub cluster: ClusterId,
    pub alpha: f64,
    pub beta: f64,
    /// Cluster size `S`.
    pub upper: f64,
    pub samples: usize,
    pub method: FitMethod,
}

impl SeverityModel {
    /// Severity `θ = I_{z/S}(α, β)`. Values outside `[0, S]` are clamped.
    pub fn severity(&self, z: f64) -> f64 {
        severity(self.alpha, self.beta, self.upper, z)
    }

    /// Log-likelihood of `samples` on the original `(0, S)` scale.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let lb = ln_beta(self.alpha, self.beta);
        samples
            .iter()
            .map(|z| {
                let u = z / self.upper;
                (self.alpha - 1.0) * u.ln() + (self.beta - 1.0) * (1.0 - u).ln() - lb - self.upper.ln()
            })
            .sum()
    }
}

pub fn severity(alpha: f64, beta: f64, upper: f64, z: f64) -> f64 {
    if !(z > 0.0) {
        if z < 0.0 {
            log::warn!("exceedance {z} below 0 clamped");
        }
        return 0.0;
    }
    if z >= upper {
        if z > upper {
            log::warn!("exceedance {z} above {upper} clamped");
        }
        return 1.0;
    }
    beta_reg(alpha, beta, z / upper).clamp(0.0, 1.0)
}

/// Trigamma function by upward recurrence and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

struct Suff {
    n: f64,
    sum_ln_u: f64,
    sum_ln_1mu: f64,
}

impl Suff {
    fn loglik(&self, a: f64, b: f64) -> f64 {
        (a - 1.0) * self.sum_ln_u + (b - 1.0) * self.sum_ln_1mu - self.n * ln_beta(a, b)
    }
}

/// Newton ascent on the Beta log-likelihood with step halving and the
/// shape clamp.
fn mle(s: &Suff, mut a: f64, mut b: f64) -> (f64, f64) {
    let mut ll = s.loglik(a, b);
    for _ in 0..MAX_NEWTON_STEPS {
        let dab = digamma(a + b);
        let ga = s.sum_ln_u - s.n * (digamma(a) - dab);
        let gb = s.sum_ln_1mu - s.n * (digamma(b) - dab);
        let tab = trigamma(a + b);
        let haa = -s.n * (trigamma(a) - tab);
        let hbb = -s.n * (trigamma(b) - tab);
        let hab = s.n * tab;
        let det = haa * hbb - hab * hab;
        if !(det.is_finite()) || det == 0.0 {
            break;
        }
        let step_a = -(hbb * ga - hab * gb) / det;
        let step_b = -(-hab * ga + haa * gb) / det;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let na = (a + t * step_a).max(MIN_SHAPE);
            let nb = (b + t * step_b).max(MIN_SHAPE);
            let nll = s.loglik(na, nb);
            if nll.is_finite() && nll >= ll {
                let done = (na - a).abs() < 1e-10 * a.max(1.0) && (nb - b).abs() < 1e-10 * b.max(1.0);
                a = na;
                b = nb;
                ll = nll;
                improved = !done;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// Fit a Beta distribution on `(0, upper)` to positive exceedances.
///
/// Moments give the start; likelihood refines it when every sample lies
/// strictly inside the support.
pub fn fit_beta4(cluster: &ClusterId, samples: &[f64], upper: f64) -> Result<SeverityModel, SeverityError> {
    if samples.len() < MIN_SEVERITY_SAMPLES {
        return Err(SeverityError::InsufficientSamples { samples: samples.len(), min: MIN_SEVERITY_SAMPLES });
    }
    if !(upper > 0.0) || samples.iter().any(|z| !(*z > 0.0 && *z <= upper)) {
        return Err(SeverityError::SampleOutOfRange { upper });
    }
    let n = samples.len() as f64;
    let u: Vec<f64> = samples.iter().map(|z| z / upper).collect();
    let mean = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let moments = (var > 0.0 && var < mean * (1.0 - mean)).then(|| {
        let k = mean * (1.0 - mean) / var - 1.0;
        ((mean * k).max(MIN_SHAPE), ((1.0 - mean) * k).max(MIN_SHAPE))
    });
    let interior = u.iter().all(|x| *x > 0.0 && *x < 1.0);
    let (alpha, beta, method) = match (moments, interior) {
        (Some((a, b)), true) => {
            let s = suff(&u);
            let (a, b) = mle(&s, a, b);
            (a, b, FitMethod::MomentsThenMle)
        }
        (Some((a, b)), false) => (a, b, FitMethod::MomentsOnly),
        (None, true) => {
            let (a, b) = mle(&suff(&u), 1.0, 1.0);
            (a, b, FitMethod::MleFromUniform)
        }
        (None, false) => (1.0, 1.0, FitMethod::MomentsOnly),
    };
    Ok(SeverityModel { cluster: cluster.clone(), alpha, beta, upper, samples: samples.len(), method })
}

fn suff(u: &[f64]) -> Suff {
    Suff {
        n: u.len() as f64,
        sum_ln_u: u.iter().map(|x| x.ln()).sum(),
        sum_ln_1mu: u.iter().map(|x| (1.0 - x).ln()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Beta;

    fn cid() -> ClusterId {
        ClusterId(crate::TerminalId::from(31303u32))
    }

    fn scaled_beta(a: f64, b: f64, s: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Beta::new(a, b).unwrap();
        (0..n).map(|_| s * rng.sample(d)).collect()
    }

    /// Generalised Pareto log-likelihood with location 0.
    fn gpd_loglik(z: &[f64], sigma: f64, xi: f64) -> f64 {
        let mut ll = 0.0;
        for &x in z {
            let t = 1.0 + xi * x / sigma;
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += -sigma.ln() - (1.0 / xi + 1.0) * t.ln();
        }
        ll
    }

    #[test]
    fn trigamma_matches_known_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        for x in [0.01f64, 0.3, 2.5, 7.0, 40.0] {
            let h = 1e-5 * x.max(1.0);
            let numeric = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - numeric).abs() < 1e-5 * trigamma(x), "x = {x}");
        }
    }

    #[test]
    fn recovers_scaled_beta_two_five() {
        let z = scaled_beta(2.0, 5.0, 9.0, 10_000, 1);
        let m = fit_beta4(&cid(), &z, 9.0).unwrap();
        assert_eq!(m.method, FitMethod::MomentsThenMle);
        assert!((m.alpha - 2.0).abs() < 0.15, "alpha {}", m.alpha);
        assert!((m.beta - 5.0).abs() < 0.15, "beta {}", m.beta);
    }

    #[test]
    fn fitted_severities_are_uniform() {
        let z = scaled_beta(2.0, 5.0, 9.0, 10_000, 2);
        let m = fit_beta4(&cid(), &z, 9.0).unwrap();
        let mut theta: Vec<f64> = z.iter().map(|x| m.severity(*x)).collect();
        theta.sort_by(f64::total_cmp);
        let n = theta.len() as f64;
        let ks = theta
            .iter()
            .enumerate()
            .map(|(i, t)| (t - i as f64 / n).abs().max(((i + 1) as f64 / n - t).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS {ks}");
    }

    #[test]
    fn boundary_severities_are_exact() {
        let z = scaled_beta(2.0, 5.0, 9.0, 500, 3);
        let m = fit_beta4(&cid(), &z, 9.0).unwrap();
        assert_eq!(m.severity(0.0), 0.0);
        assert_eq!(m.severity(9.0), 1.0);
        assert!((severity(1.0, 1.0, 9.0, 4.5) - 0.5).abs() < 1e-12);
        assert_eq!(m.severity(-1.0), 0.0);
        assert_eq!(m.severity(10.0), 1.0);
    }

    #[test]
    fn mirrored_samples_fit_symmetric_shapes() {
        let half = scaled_beta(3.0, 1.5, 6.0, 400, 4);
        let mut z = half.clone();
        z.extend(half.iter().map(|x| 6.0 - x));
        let m = fit_beta4(&cid(), &z, 6.0).unwrap();
        assert!((m.alpha - m.beta).abs() / m.alpha.max(m.beta) < 0.05);
    }

    #[test]
    fn too_few_samples_are_refused() {
        let z = scaled_beta(2.0, 5.0, 9.0, 19, 5);
        assert_eq!(
            fit_beta4(&cid(), &z, 9.0).unwrap_err(),
            SeverityError::InsufficientSamples { samples: 19, min: 20 }
        );
        assert!(fit_beta4(&cid(), &[1.0; 25], 0.5).is_err());
    }

    #[test]
    fn boundary_sample_keeps_moment_fit() {
        let mut z = scaled_beta(2.0, 2.0, 4.0, 50, 6);
        z[0] = 4.0;
        let m = fit_beta4(&cid(), &z, 4.0).unwrap();
        assert_eq!(m.method, FitMethod::MomentsOnly);
        assert!(m.alpha > 0.0 && m.beta > 0.0);
    }

    #[test]
    fn invalid_moments_fall_back_to_likelihood() {
        // Half the mass at each end: the sample variance exceeds mean(1 - mean).
        let mut z = vec![0.001; 30];
        z.extend(vec![0.999; 30]);
        let m = fit_beta4(&cid(), &z, 1.0).unwrap();
        assert_eq!(m.method, FitMethod::MleFromUniform);
        assert!(m.alpha < 1.0 && m.beta < 1.0);
        assert!(m.alpha >= MIN_SHAPE && m.beta >= MIN_SHAPE);
    }

    #[test]
    fn beta_beats_generalised_pareto_on_bounded_data() {
        let s = 9.0;
        let z = scaled_beta(2.0, 5.0, s, 2000, 7);
        let m = fit_beta4(&cid(), &z, s).unwrap();
        let beta_ll = m.log_likelihood(&z);
        let zmax = z.iter().copied().fold(0.0, f64::max);
        let mut gpd_best = f64::NEG_INFINITY;
        for i in 1..=200 {
            let xi = -1.0 + i as f64 * 0.01;
            if xi == 0.0 {
                continue;
            }
            for j in 1..=200 {
                let sigma = j as f64 * 0.05;
                if xi < 0.0 && -sigma / xi < zmax {
                    continue;
                }
                gpd_best = gpd_best.max(gpd_loglik(&z, sigma, xi));
            }
        }
        assert!(beta_ll >= gpd_best, "beta {beta_ll} gpd {gpd_best}");
    }

    proptest! {
        #[test]
        fn severity_is_monotone(a in 0.1f64..10.0, b in 0.1f64..10.0, s in 1.0f64..30.0,
                                mut zs in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            zs.sort_by(f64::total_cmp);
            let th: Vec<f64> = zs.iter().map(|u| severity(a, b, s, u * s)).collect();
            prop_assert!(th.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            prop_assert!(th.iter().all(|t| (0.0..=1.0).contains(t)));
        }
    }
}
