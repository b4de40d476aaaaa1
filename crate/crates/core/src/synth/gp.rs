use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::curve::{Curve, HOURS};

/// Zero-mean Gaussian process on the hourly grid with a squared-exponential
/// covariance.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    sigma: f64,
    chol: DMatrix<f64>,
}

impl GaussianProcess {
    pub fn new(sigma: f64, length_scale_hours: f64) -> Self {
        let k = DMatrix::from_fn(HOURS, HOURS, |i, j| {
            let d = i as f64 - j as f64;
            let jitter = if i == j { 1e-9 } else { 0.0 };
            (-d * d / (2.0 * length_scale_hours * length_scale_hours)).exp() + jitter
        });
        let chol = k.cholesky().expect("squared-exponential kernel with jitter is positive definite").l();
        GaussianProcess { sigma, chol }
    }

    /// Pointwise standard deviation.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Curve {
        let z = DVector::from_fn(HOURS, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.chol * z;
        std::array::from_fn(|h| self.sigma * x[h])
    }

    pub fn pool<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Curve> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn marginal_variance_matches_sigma() {
        let gp = GaussianProcess::new(2.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = gp.pool(4000, &mut rng);
        let var: f64 = pool.iter().map(|c| c[10] * c[10]).sum::<f64>() / pool.len() as f64;
        assert!((var - 4.0).abs() < 0.3, "variance {var}");
        // Neighbouring hours are strongly correlated.
        let cov: f64 = pool.iter().map(|c| c[10] * c[11]).sum::<f64>() / pool.len() as f64;
        assert!(cov / var > 0.85);
    }
}
