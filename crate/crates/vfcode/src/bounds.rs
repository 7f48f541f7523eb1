//! Computable comparator formulas: the converse on the wrapped code length,
//! the fixed-to-variable second-order approximation, the lossless
//! variable-to-fixed limit, and the Gaussian tail utilities they need.

use statrs::function::erf::erfc;

use crate::rd::RdPoint;
use crate::source::SourceSpec;
use crate::{Error, Result};

/// Upper tail of the standard normal, `Q(t) = P(Z > t)`.
pub fn q_func(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_func`] on `(0, 1)`, by bisection to `1e-12`.
pub fn q_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "inverse tail needs p in (0, 1), got {p}"
        )));
    }
    let mut lo = -40.0f64;
    let mut hi = 40.0f64;
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if q_func(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Lower bound on `ln M` for any wrapped code of mean length `N` and
/// excess probability at most `epsilon`:
/// `max(0, (1 - epsilon) N R(D) - B sqrt(N))`.
///
/// The constant `B` is not pinned by the theory; callers should report it
/// next to the bound. A workable default is `2 sqrt(V(D))`.
pub fn converse_ln_m(n: f64, epsilon: f64, rdpoint: &RdPoint, b: f64) -> Result<f64> {
    if b < 0.0 {
        return Err(Error::Domain("B must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    Ok(((1.0 - epsilon) * n * rdpoint.rate - b * n.sqrt()).max(0.0))
}

/// Second-order approximation to the fixed-to-variable benchmark:
/// `(1 - eps) N R(D) - sqrt(N V(D) / (2 pi)) exp(-q_inv(eps)^2 / 2)`.
///
/// The true expansion carries an extra `O(ln N)` term whose constant is not
/// available, so this is an approximation, not a bound.
pub fn fv_ln_m_approx(n: f64, epsilon: f64, rdpoint: &RdPoint) -> Result<f64> {
    let t = q_inv(epsilon)?;
    let deduction =
        (n * rdpoint.v_disp / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * t * t).exp();
    Ok((1.0 - epsilon) * n * rdpoint.rate - deduction)
}

/// Lossless variable-to-fixed limit `(1 - epsilon) H(V)`.
pub fn lossless_vf_rate(src: &SourceSpec, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1)")));
    }
    Ok((1.0 - epsilon) * src.entropy())
}

/// One row of comparator values at `(N, epsilon, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: f64,
    pub epsilon: f64,
    pub d: f64,
    pub converse_ln_m: f64,
    pub fv_ln_m_approx: f64,
    pub lossless_rate: f64,
    /// `(1 - epsilon) R(D)`, the asymptotic per-symbol rate.
    pub limit_rate: f64,
}

impl BoundReport {
    pub fn compute(
        src: &SourceSpec,
        rdpoint: &RdPoint,
        n: f64,
        epsilon: f64,
        b: f64,
    ) -> Result<Self> {
        Ok(Self {
            n,
            epsilon,
            d: rdpoint.d,
            converse_ln_m: converse_ln_m(n, epsilon, rdpoint, b)?,
            fv_ln_m_approx: fv_ln_m_approx(n, epsilon, rdpoint)?,
            lossless_rate: lossless_vf_rate(src, epsilon)?,
            limit_rate: (1.0 - epsilon) * rdpoint.rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd::rd_at;
    use crate::source::DistortionSpec;

    #[test]
    fn tail_basics() {
        assert!((q_func(0.0) - 0.5).abs() < 1e-15);
        assert!(q_inv(0.5).unwrap().abs() < 1e-11);
        assert!((q_inv(0.1).unwrap() - 1.281552).abs() < 1e-5);
        assert!(q_inv(0.0).is_err());
        assert!(q_inv(1.0).is_err());
    }

    #[test]
    fn tail_roundtrip_grid() {
        // Independent trapezoid quadrature for Q as the oracle.
        let q_quad = |t: f64| {
            let steps = 400_000;
            let top = t + 40.0;
            let h = (top - t) / steps as f64;
            let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mut acc = 0.5 * (phi(t) + phi(top));
            for i in 1..steps {
                acc += phi(t + i as f64 * h);
            }
            acc * h
        };
        for k in 1..=9 {
            let p = k as f64 / 10.0;
            let t = q_inv(p).unwrap();
            assert!((q_func(t) - p).abs() < 1e-10, "p={p}");
            assert!((q_quad(t) - p).abs() < 1e-7, "quadrature p={p}");
        }
        for k in [1, 25, 50, 75, 99] {
            let p = k as f64 / 100.0;
            let t = q_inv(p).unwrap();
            assert!((q_func(t) - p).abs() < 1e-10);
        }
    }

    fn binary_uniform_point(d: f64) -> RdPoint {
        let src = SourceSpec::uniform(2);
        let dist = DistortionSpec::hamming(2);
        rd_at(&src, &dist, d, 1e-9).unwrap()
    }

    #[test]
    fn converse_values() {
        let point = binary_uniform_point(0.25);
        assert_eq!(converse_ln_m(1000.0, 1.0, &point, 5.0).unwrap(), 0.0);
        let b0 = converse_ln_m(1000.0, 0.2, &point, 0.0).unwrap();
        assert!((b0 - 104.650).abs() < 1e-2, "{b0}");
        let b2 = converse_ln_m(1000.0, 0.2, &point, 2.0).unwrap();
        assert!((b2 - 41.404).abs() < 1e-2, "{b2}");
    }

    #[test]
    fn fv_approx_values() {
        let point = binary_uniform_point(0.1);
        // At epsilon = 1/2 the exponential factor is exactly 1.
        let half = fv_ln_m_approx(100.0, 0.5, &point).unwrap();
        let expect =
            0.5 * 100.0 * point.rate - (100.0 * point.v_disp / (2.0 * std::f64::consts::PI)).sqrt();
        assert!((half - expect).abs() < 1e-9);

        let v = fv_ln_m_approx(1e4, 0.1, &point).unwrap();
        assert!((v - 3301.01).abs() < 0.02, "{v}");
    }

    #[test]
    fn fv_approx_degenerate_dispersion() {
        let mut point = binary_uniform_point(0.1);
        point.v_disp = 0.0;
        let v = fv_ln_m_approx(1e4, 0.3, &point).unwrap();
        assert!((v - 0.7 * 1e4 * point.rate).abs() < 1e-9);
    }

    #[test]
    fn lossless_limit() {
        let src = SourceSpec::bernoulli(0.3).unwrap();
        assert_eq!(lossless_vf_rate(&src, 0.0).unwrap(), src.entropy());
        assert!((lossless_vf_rate(&src, 0.2).unwrap() - 0.488692).abs() < 1e-6);
        assert!(lossless_vf_rate(&src, 1.0 - 1e-9).unwrap() < 1e-9);
        assert!(lossless_vf_rate(&src, 1.0).is_err());
    }

    #[test]
    fn limit_rate_monotonicity() {
        let p25 = binary_uniform_point(0.25);
        let p10 = binary_uniform_point(0.10);
        let src = SourceSpec::uniform(2);
        let r = |point: &RdPoint, e: f64| {
            BoundReport::compute(&src, point, 1e4, e, 0.0)
                .unwrap()
                .limit_rate
        };
        assert!(r(&p25, 0.1) > r(&p25, 0.2));
        assert!(r(&p10, 0.2) > r(&p25, 0.2));
    }
}
