//! Small statistical helpers shared by the simulation modules.

use statrs::distribution::{Beta, ContinuousCDF};

/// Exact (Clopper-Pearson) 99% confidence interval for a binomial
/// proportion after observing `k` successes in `n` trials.
pub fn clopper_pearson99(k: u64, n: u64) -> (f64, f64) {
    assert!(n > 0 && k <= n);
    let alpha = 0.01_f64;
    let kf = k as f64;
    let nf = n as f64;
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0)
            .expect("valid beta parameters")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf)
            .expect("valid beta parameters")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Radius of the 99% Clopper-Pearson interval around the point estimate.
pub fn ci99_radius(k: u64, n: u64) -> f64 {
    let p = k as f64 / n as f64;
    let (lo, hi) = clopper_pearson99(k, n);
    (hi - p).max(p - lo)
}

/// Neumaier compensated summation. Keeps reductions over many small terms
/// reproducible to the last bit regardless of magnitude ordering.
#[derive(Debug, Clone, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean and a 99% normal-approximation confidence radius.
pub fn mean_ci99(values_sum: f64, values_sq_sum: f64, n: u64) -> (f64, f64) {
    assert!(n > 0);
    let nf = n as f64;
    let mean = values_sum / nf;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = ((values_sq_sum - nf * mean * mean) / (nf - 1.0)).max(0.0);
    // z for 99% two-sided.
    let z = 2.5758293035489004;
    (mean, z * (var / nf).sqrt())
}
