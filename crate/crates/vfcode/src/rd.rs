//! Rate-distortion solver.
//!
//! `R(D)` is computed by alternating minimization at a fixed Lagrange slope
//! (Blahut-Arimoto) plus an outer bisection on the slope that drives the
//! achieved distortion into `[D - tol, D]`. The converged channel also
//! yields the two variances every second-order formula in this crate needs:
//! the variance of the single-letter information density and the variance
//! of the single-letter distortion, both under the joint distribution.

use crate::source::{DistortionSpec, SourceSpec};
use crate::{Error, Result};

/// Blahut-Arimoto convergence tolerance on successive rate estimates.
const BA_RATE_TOL: f64 = 1e-12;
const BA_MAX_ITER: usize = 2_000_000;
/// Reproduction letters whose marginal falls below this are treated as
/// pruned when evaluating variances (the iteration can drive columns to 0).
const PRUNE_MARGINAL: f64 = 1e-14;

/// A conditional distribution `P(w | v)` from source symbols to reproduction
/// symbols, together with its output marginal under a given source.
#[derive(Debug, Clone)]
pub struct TestChannel {
    cond: Vec<f64>,
    marginal: Vec<f64>,
    n_source: usize,
    n_repro: usize,
}

impl TestChannel {
    /// Validates row sums, non-negativity, and consistency of the marginal
    /// with the source-weighted column sums.
    pub fn new(cond: Vec<Vec<f64>>, marginal: Vec<f64>, pmf: &[f64]) -> Result<Self> {
        let n_source = cond.len();
        if n_source == 0 || n_source != pmf.len() {
            return Err(Error::InvalidChannel(
                "conditional rows must match the source alphabet".into(),
            ));
        }
        let n_repro = cond[0].len();
        if n_repro == 0 || marginal.len() != n_repro {
            return Err(Error::InvalidChannel(
                "marginal length must match the reproduction alphabet".into(),
            ));
        }
        let mut flat = Vec::with_capacity(n_source * n_repro);
        for row in &cond {
            if row.len() != n_repro {
                return Err(Error::InvalidChannel("ragged conditional rows".into()));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&c| !(0.0..=1.0 + 1e-10).contains(&c)) {
                return Err(Error::InvalidChannel("entries outside [0, 1]".into()));
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidChannel(format!(
                    "row sums to {sum}, expected 1 within 1e-10"
                )));
            }
            flat.extend_from_slice(row);
        }
        for w in 0..n_repro {
            let weighted: f64 = (0..n_source).map(|v| pmf[v] * flat[v * n_repro + w]).sum();
            if (weighted - marginal[w]).abs() > 1e-10 {
                return Err(Error::InvalidChannel(format!(
                    "marginal[{w}] = {} but source-weighted column sum is {weighted}",
                    marginal[w]
                )));
            }
        }
        Ok(Self {
            cond: flat,
            marginal,
            n_source,
            n_repro,
        })
    }

    #[inline]
    pub fn cond(&self, v: usize, w: usize) -> f64 {
        self.cond[v * self.n_repro + w]
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn n_source_symbols(&self) -> usize {
        self.n_source
    }

    pub fn n_repro_symbols(&self) -> usize {
        self.n_repro
    }
}

/// One point on the rate-distortion curve.
#[derive(Debug, Clone)]
pub struct RdPoint {
    /// Distortion level the point was requested at.
    pub d: f64,
    /// `R(D)` in nats per symbol.
    pub rate: f64,
    /// Channel achieving the point.
    pub channel: TestChannel,
    /// Variance of the single-letter information density under the joint.
    pub v_disp: f64,
    /// Variance of the single-letter distortion under the joint.
    pub d_var: f64,
    /// `E[d(V, W)]` under the joint; lies in `[d - tol, d]` for solved points.
    pub achieved_distortion: f64,
}

/// `(D_floor, D_max)`: the lowest achievable distortion and the distortion
/// at which the rate hits zero.
///
/// `D_floor = E_V[min_w d(V, w)]`, `D_max = min_w E_V[d(V, w)]`.
pub fn d_extremes(src: &SourceSpec, dist: &DistortionSpec) -> (f64, f64) {
    let floor = src
        .pmf()
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            let best = (0..dist.n_repro_symbols())
                .map(|w| dist.d(v, w))
                .fold(f64::INFINITY, f64::min);
            p * best
        })
        .sum();
    let max = (0..dist.n_repro_symbols())
        .map(|w| {
            src.pmf()
                .iter()
                .enumerate()
                .map(|(v, &p)| p * dist.d(v, w))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (floor, max)
}

fn best_column(src: &SourceSpec, dist: &DistortionSpec) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for w in 0..dist.n_repro_symbols() {
        let e: f64 = src
            .pmf()
            .iter()
            .enumerate()
            .map(|(v, &p)| p * dist.d(v, w))
            .sum();
        if e < best_val {
            best_val = e;
            best = w;
        }
    }
    best
}

/// Zero-rate endpoint: reproduction is the constant letter minimizing the
/// expected distortion, independent of the source.
fn zero_rate_channel(src: &SourceSpec, dist: &DistortionSpec) -> TestChannel {
    let w_star = best_column(src, dist);
    let nw = dist.n_repro_symbols();
    let mut row = vec![0.0; nw];
    row[w_star] = 1.0;
    let cond = vec![row.clone(); src.alphabet_size()];
    TestChannel::new(cond, row, src.pmf()).expect("point-mass channel is valid")
}

/// One Blahut-Arimoto solve at a fixed Lagrange slope `s <= 0`.
///
/// Returns `(rate, distortion, channel)` for the curve point whose slope is
/// `s`. Iteration stops when successive rate estimates differ by less than
/// `tol`; exceeding `max_iter` is reported as non-convergence together with
/// the last iterate.
pub fn ba_fixed_slope(
    src: &SourceSpec,
    dist: &DistortionSpec,
    s: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64, TestChannel)> {
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if s > 0.0 || !s.is_finite() {
        return Err(Error::Domain(format!("slope must be <= 0, got {s}")));
    }
    if s == 0.0 {
        let channel = zero_rate_channel(src, dist);
        let (_, d_max) = d_extremes(src, dist);
        return Ok((0.0, d_max, channel));
    }

    let nv = src.alphabet_size();
    let nw = dist.n_repro_symbols();
    let pmf = src.pmf();

    // Per-row minimum distortion, used to shift the exponent so that very
    // steep slopes do not underflow every weight in a row.
    let row_min: Vec<f64> = (0..nv)
        .map(|v| {
            (0..nw)
                .map(|w| dist.d(v, w))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut q = vec![1.0 / nw as f64; nw];
    let mut cond = vec![0.0; nv * nw];
    let mut last_rate = f64::INFINITY;

    for iter in 0..max_iter {
        // c(w|v) proportional to q(w) exp(s d(v,w)).
        for v in 0..nv {
            if pmf[v] == 0.0 {
                continue;
            }
            let mut z = 0.0;
            for w in 0..nw {
                let weight = q[w] * (s * (dist.d(v, w) - row_min[v])).exp();
                cond[v * nw + w] = weight;
                z += weight;
            }
            for w in 0..nw {
                cond[v * nw + w] /= z;
            }
        }
        for w in 0..nw {
            q[w] = (0..nv).map(|v| pmf[v] * cond[v * nw + w]).sum();
        }

        let mut rate = 0.0;
        for v in 0..nv {
            if pmf[v] == 0.0 {
                continue;
            }
            for w in 0..nw {
                let c = cond[v * nw + w];
                if c > 0.0 && q[w] > 0.0 {
                    rate += pmf[v] * c * (c / q[w]).ln();
                }
            }
        }
        if (rate - last_rate).abs() < tol {
            let mut distortion = 0.0;
            let mut rows = Vec::with_capacity(nv);
            for v in 0..nv {
                if pmf[v] == 0.0 {
                    // Unsupported symbols get the output marginal so that the
                    // returned object is still a valid channel.
                    rows.push(q.clone());
                    continue;
                }
                let row: Vec<f64> = (0..nw).map(|w| cond[v * nw + w]).collect();
                for w in 0..nw {
                    distortion += pmf[v] * row[w] * dist.d(v, w);
                }
                rows.push(row);
            }
            let channel = TestChannel::new(rows, q, pmf)?;
            return Ok((rate.max(0.0), distortion, channel));
        }
        last_rate = rate;
        let _ = iter;
    }
    Err(Error::NonConvergence(format!(
        "alternating minimization at slope {s} still moving after {max_iter} iterations (last rate {last_rate})"
    )))
}

fn joint_moments(pmf: &[f64], dist: &DistortionSpec, channel: &TestChannel) -> (f64, f64, f64) {
    let nw = channel.n_repro_symbols();
    let mut e_i = 0.0;
    let mut e_i2 = 0.0;
    let mut e_d = 0.0;
    let mut e_d2 = 0.0;
    for (v, &p) in pmf.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for w in 0..nw {
            let c = channel.cond(v, w);
            let mass = p * c;
            if mass == 0.0 || channel.marginal()[w] < PRUNE_MARGINAL {
                continue;
            }
            let iota = (c / channel.marginal()[w]).ln();
            let d = dist.d(v, w);
            e_i += mass * iota;
            e_i2 += mass * iota * iota;
            e_d += mass * d;
            e_d2 += mass * d * d;
        }
    }
    let v_disp = (e_i2 - e_i * e_i).max(0.0);
    let d_var = (e_d2 - e_d * e_d).max(0.0);
    (e_i, v_disp, d_var)
}

/// Solves the curve at a target distortion level.
///
/// Bisects the Lagrange slope until the achieved distortion lies in
/// `[d - tol, d]`, then fills in the dispersion quantities from the
/// converged channel. `d >= D_max` short-circuits to the zero-rate
/// endpoint; `d <= D_floor` is infeasible.
pub fn rd_at(src: &SourceSpec, dist: &DistortionSpec, d: f64, tol: f64) -> Result<RdPoint> {
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let (d_floor, d_max) = d_extremes(src, dist);
    if d <= d_floor {
        return Err(Error::InfeasibleDistortion(format!(
            "target {d} is at or below the distortion floor {d_floor}"
        )));
    }
    if d >= d_max {
        let channel = zero_rate_channel(src, dist);
        let (_, v_disp, d_var) = joint_moments(src.pmf(), dist, &channel);
        let achieved = d_extremes(src, dist).1;
        return Ok(RdPoint {
            d,
            rate: 0.0,
            channel,
            v_disp,
            d_var,
            achieved_distortion: achieved,
        });
    }

    // Bracket: distortion is non-decreasing in the slope, D_max at s = 0.
    let mut hi = 0.0_f64;
    let mut lo = -1.0_f64;
    let mut lo_solve = ba_fixed_slope(src, dist, lo, BA_RATE_TOL, BA_MAX_ITER)?;
    let mut doublings = 0;
    while lo_solve.1 > d {
        lo *= 2.0;
        doublings += 1;
        if doublings > 80 {
            return Err(Error::NonConvergence(format!(
                "could not bracket distortion {d}: slope {lo} still achieves {}",
                lo_solve.1
            )));
        }
        lo_solve = ba_fixed_slope(src, dist, lo, BA_RATE_TOL, BA_MAX_ITER)?;
    }

    for _ in 0..200 {
        if lo_solve.1 >= d - tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let mid_solve = ba_fixed_slope(src, dist, mid, BA_RATE_TOL, BA_MAX_ITER)?;
        if mid_solve.1 > d {
            hi = mid;
        } else {
            lo = mid;
            lo_solve = mid_solve;
        }
    }
    let (rate, achieved, channel) = lo_solve;
    if !(d - tol..=d).contains(&achieved) {
        return Err(Error::NonConvergence(format!(
            "slope bisection stalled: achieved distortion {achieved} outside [{} , {d}]",
            d - tol
        )));
    }
    let (e_iota, v_disp, d_var) = joint_moments(src.pmf(), dist, &channel);
    debug_assert!((e_iota - rate).abs() < 1e-8);
    Ok(RdPoint {
        d,
        rate,
        channel,
        v_disp,
        d_var,
        achieved_distortion: achieved,
    })
}

/// Closed-form rate-distortion function of a Gaussian source under squared
/// error: `max(0, 0.5 ln(sigma^2 / D))`.
pub fn gaussian_rd(sigma2: f64, d: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !(d > 0.0) {
        return Err(Error::Domain(
            "variance and distortion must be positive".into(),
        ));
    }
    Ok((0.5 * (sigma2 / d).ln()).max(0.0))
}
