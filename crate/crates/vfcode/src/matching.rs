//! The codeword acceptance rule used by the random code.
//!
//! A codeword `w` is a *hit* for a source block `v` when two per-block
//! conditions hold at once: the average distortion stays at or below the
//! budget `D`, and the multi-letter information density stays at or below
//! `n` times a per-symbol cap. The cap is the rate of the test channel
//! solved at the slightly tightened distortion `D - shift`, plus a slack
//! term; by default both the shift and the slack follow the vanishing
//! schedule `sqrt(ln n / n)`.

use crate::rd::{d_extremes, rd_at, RdPoint, TestChannel};
use crate::source::{DistortionSpec, SequenceSample, SourceSpec};
use crate::{Error, Result};

/// The vanishing slack schedule `sqrt(ln n / n)`, defined for `n > 1`.
pub fn vanishing_slack(nprime: f64) -> Result<f64> {
    if !(nprime > 1.0) {
        return Err(Error::Domain(format!(
            "slack schedule needs a block length above 1, got {nprime}"
        )));
    }
    Ok((nprime.ln() / nprime).sqrt())
}

/// Single-letter information density `ln(P(w|v) / P(w))` in nats.
///
/// Returns `-inf` when the conditional is zero. A zero output marginal makes
/// the quantity meaningless and is reported as an error.
pub fn info_density(v: usize, w: usize, channel: &TestChannel) -> Result<f64> {
    let marg = channel.marginal()[w];
    if marg <= 0.0 {
        return Err(Error::UnreachableReproduction(w));
    }
    let cond = channel.cond(v, w);
    if cond == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((cond / marg).ln())
}

/// Multi-letter information density: the sum of the single-letter values.
pub fn info_density_sum(
    v: &SequenceSample,
    w: &SequenceSample,
    channel: &TestChannel,
) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch(v.len(), w.len()));
    }
    let mut sum = 0.0;
    for (&a, &b) in v.symbols.iter().zip(&w.symbols) {
        sum += info_density(a as usize, b as usize, channel)?;
    }
    Ok(sum)
}

/// Codebook size for a block length `nprime` and a rate `shifted_rate`
/// solved at the tightened distortion, carried as `ln M`:
/// `nprime * (shifted_rate + slack) + ln ln nprime` with the default
/// vanishing slack. Requires `nprime > e` so the additive term is positive.
pub fn codebook_log_size(nprime: f64, shifted_rate: f64) -> Result<f64> {
    if !(nprime > std::f64::consts::E) {
        return Err(Error::Domain(format!(
            "codebook sizing needs a block length above e, got {nprime}"
        )));
    }
    let slack = vanishing_slack(nprime)?;
    Ok(nprime * (shifted_rate + slack) + nprime.ln().ln())
}

/// Joint distortion/density acceptance test, shared by the encoder, the
/// Monte Carlo trials, and the exact analysis.
#[derive(Debug, Clone)]
pub struct MatchRule {
    /// Distortion budget `D`.
    pub max_distortion: f64,
    /// Per-symbol cap on the information density.
    pub density_cap: f64,
    channel: TestChannel,
    dist: DistortionSpec,
    iota: Vec<f64>,
}

impl MatchRule {
    pub fn new(
        max_distortion: f64,
        density_cap: f64,
        channel: TestChannel,
        dist: DistortionSpec,
    ) -> Result<Self> {
        if !(max_distortion > 0.0) {
            return Err(Error::Domain("distortion budget must be positive".into()));
        }
        if channel.n_source_symbols() != dist.n_source_symbols()
            || channel.n_repro_symbols() != dist.n_repro_symbols()
        {
            return Err(Error::InvalidChannel(
                "channel and distortion dimensions differ".into(),
            ));
        }
        let nw = channel.n_repro_symbols();
        let mut iota = Vec::with_capacity(channel.n_source_symbols() * nw);
        for v in 0..channel.n_source_symbols() {
            for w in 0..nw {
                let cond = channel.cond(v, w);
                let marg = channel.marginal()[w];
                // ln(0/m) = -inf, ln(c/0) = +inf (the letter can never be
                // drawn), 0/0 also maps to -inf.
                let val = if cond == 0.0 {
                    f64::NEG_INFINITY
                } else if marg == 0.0 {
                    f64::INFINITY
                } else {
                    (cond / marg).ln()
                };
                iota.push(val);
            }
        }
        Ok(Self {
            max_distortion,
            density_cap,
            channel,
            dist,
            iota,
        })
    }

    pub fn channel(&self) -> &TestChannel {
        &self.channel
    }

    pub fn dist(&self) -> &DistortionSpec {
        &self.dist
    }

    #[inline]
    pub fn iota(&self, v: usize, w: usize) -> f64 {
        self.iota[v * self.channel.n_repro_symbols() + w]
    }

    /// Both clauses at once, in a single pass over the block. Distortion is
    /// non-negative, so the scan can bail out as soon as the budget is blown.
    pub fn is_hit(&self, v: &SequenceSample, w: &SequenceSample) -> bool {
        debug_assert_eq!(v.len(), w.len());
        let n = v.len();
        let d_budget = self.max_distortion * n as f64;
        let mut d_sum = 0.0;
        let mut i_sum = 0.0;
        for (&a, &b) in v.symbols.iter().zip(&w.symbols) {
            d_sum += self.dist.d(a as usize, b as usize);
            if d_sum > d_budget {
                return false;
            }
            i_sum += self.iota(a as usize, b as usize);
        }
        i_sum <= self.density_cap * n as f64
    }
}

/// How the two slack knobs of the construction are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slack {
    /// Both follow `sqrt(ln n / n)` and the codebook gets the extra
    /// `ln ln n` term.
    Schedule,
    /// Explicit `(shift, cap_slack)` pair for small-block experiments where
    /// the schedule would exceed the distortion budget itself. The codebook
    /// size is then exactly `n * (R(D - shift) + cap_slack)`.
    Fixed { shift: f64, cap: f64 },
}

/// A fully derived inner code: block length, acceptance threshold, codebook
/// size, and the tightened-distortion curve point behind them.
#[derive(Debug, Clone)]
pub struct InnerCode {
    pub n: usize,
    pub d: f64,
    /// Resolved `(shift, cap_slack)` pair.
    pub slack: (f64, f64),
    /// Per-symbol density cap `R(D - shift) + cap_slack`.
    pub threshold: f64,
    /// `ln M` for the codebook.
    pub ln_m: f64,
    /// Curve point at `D - shift`; its channel generates the codebook.
    pub shifted: RdPoint,
    dist: DistortionSpec,
}

impl InnerCode {
    /// Resolves the slack mode, re-solves the test channel at `D - shift`,
    /// and sizes the codebook.
    pub fn design(
        src: &SourceSpec,
        dist: &DistortionSpec,
        d: f64,
        n: usize,
        slack: Slack,
        tol: f64,
    ) -> Result<Self> {
        let nf = n as f64;
        let (shift, cap) = match slack {
            Slack::Schedule => {
                if !(nf > std::f64::consts::E) {
                    return Err(Error::Domain(
                        "schedule slack needs a block length above e".into(),
                    ));
                }
                let g = vanishing_slack(nf)?;
                (g, g)
            }
            Slack::Fixed { shift, cap } => (shift, cap),
        };
        let (d_floor, _) = d_extremes(src, dist);
        if d - shift <= d_floor {
            return Err(Error::InfeasibleDistortion(format!(
                "slack exceeds distortion budget: D - shift = {} is at or below the floor {d_floor}",
                d - shift
            )));
        }
        let shifted = rd_at(src, dist, d - shift, tol)?;
        let threshold = shifted.rate + cap;
        let ln_m = match slack {
            Slack::Schedule => codebook_log_size(nf, shifted.rate)?,
            Slack::Fixed { .. } => nf * threshold,
        };
        Ok(Self {
            n,
            d,
            slack: (shift, cap),
            threshold,
            ln_m,
            shifted,
            dist: dist.clone(),
        })
    }

    pub fn match_rule(&self) -> Result<MatchRule> {
        MatchRule::new(
            self.d,
            self.threshold,
            self.shifted.channel.clone(),
            self.dist.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h_b(x: f64) -> f64 {
        -x * x.ln() - (1.0 - x) * (1.0 - x).ln()
    }

    fn bsc_uniform(e: f64) -> TestChannel {
        TestChannel::new(
            vec![vec![1.0 - e, e], vec![e, 1.0 - e]],
            vec![0.5, 0.5],
            &[0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn slack_schedule_values() {
        assert!((vanishing_slack(std::f64::consts::E).unwrap() - 0.606531).abs() < 1e-6);
        assert!((vanishing_slack(100.0).unwrap() - 0.214597).abs() < 1e-6);
        assert!((vanishing_slack(5000.0).unwrap() - 0.041273).abs() < 1e-6);
        assert!(vanishing_slack(1.0).is_err());
        assert!(vanishing_slack(0.5).is_err());
    }

    #[test]
    fn slack_schedule_decreasing() {
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let grid: Vec<f64> = (0..40).map(|k| e2 + 25.0 * k as f64).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&n| vanishing_slack(n).unwrap())
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn density_product_channel_is_zero() {
        let channel = TestChannel::new(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.5, 0.5],
            &[0.5, 0.5],
        )
        .unwrap();
        for v in 0..2 {
            for w in 0..2 {
                assert_eq!(info_density(v, w, &channel).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn density_identity_channel() {
        let channel = TestChannel::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.5, 0.5],
            &[0.5, 0.5],
        )
        .unwrap();
        assert!((info_density(0, 0, &channel).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(info_density(0, 1, &channel).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn density_bsc_mismatch() {
        let channel = bsc_uniform(0.2);
        assert!((info_density(0, 1, &channel).unwrap() + 0.916291).abs() < 1e-6);
        assert!((info_density(0, 0, &channel).unwrap() - 0.470004).abs() < 1e-6);
    }

    #[test]
    fn density_zero_marginal_errors() {
        let channel = TestChannel::new(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            &[0.5, 0.5],
        )
        .unwrap();
        assert!(matches!(
            info_density(0, 1, &channel),
            Err(Error::UnreachableReproduction(1))
        ));
    }

    #[test]
    fn density_sum_hand_value() {
        let channel = bsc_uniform(0.2);
        let v = SequenceSample::new(vec![0, 0]);
        let w = SequenceSample::new(vec![0, 1]);
        let sum = info_density_sum(&v, &w, &channel).unwrap();
        assert!((sum + 0.446287).abs() < 1e-6);
    }

    #[test]
    fn hit_rule_examples() {
        let dist = DistortionSpec::hamming(2);
        let channel = bsc_uniform(0.2);

        let permissive =
            MatchRule::new(0.5, 1e9, channel.clone(), dist.clone()).unwrap();
        let v = SequenceSample::new(vec![0, 1, 1, 0]);
        assert!(permissive.is_hit(&v, &v));

        // Density clause can veto even a perfect reconstruction.
        let veto = MatchRule::new(0.5, -1.0, channel.clone(), dist.clone()).unwrap();
        assert!(!veto.is_hit(&v, &v));

        let cfg = MatchRule::new(0.5, 0.4, channel, dist).unwrap();
        let a = SequenceSample::new(vec![0, 0]);
        let b = SequenceSample::new(vec![0, 1]);
        assert!(cfg.is_hit(&a, &b));
    }

    #[test]
    fn hit_implies_distortion_within_budget_exhaustive() {
        let dist = DistortionSpec::hamming(2);
        let channel = bsc_uniform(0.2);
        let rule = MatchRule::new(0.34, 0.3, channel, dist.clone()).unwrap();
        for n in 1..=6usize {
            for v_bits in 0..(1u32 << n) {
                for w_bits in 0..(1u32 << n) {
                    let v = SequenceSample::new(
                        (0..n).map(|k| ((v_bits >> k) & 1) as u16).collect(),
                    );
                    let w = SequenceSample::new(
                        (0..n).map(|k| ((w_bits >> k) & 1) as u16).collect(),
                    );
                    if rule.is_hit(&v, &w) {
                        assert!(dist.block_distortion(&v, &w).unwrap() <= rule.max_distortion);
                    }
                }
            }
        }
    }

    #[test]
    fn mean_density_is_mutual_information() {
        let src = SourceSpec::bernoulli(0.3).unwrap();
        let dist = DistortionSpec::hamming(2);
        let point = rd_at(&src, &dist, 0.12, 1e-9).unwrap();
        let mut mean = 0.0;
        for v in 0..2 {
            for w in 0..2 {
                let mass = src.prob(v) * point.channel.cond(v, w);
                if mass > 0.0 {
                    mean += mass * info_density(v, w, &point.channel).unwrap();
                }
            }
        }
        assert!((mean - point.rate).abs() < 1e-10);
    }

    #[test]
    fn codebook_sizes() {
        // Block length 100, budget 0.35.
        let src = SourceSpec::uniform(2);
        let dist = DistortionSpec::hamming(2);
        let g = vanishing_slack(100.0).unwrap();
        let shifted = rd_at(&src, &dist, 0.35 - g, 1e-9).unwrap();
        assert!((shifted.rate - 0.296615).abs() < 1e-5);
        let ln_m = codebook_log_size(100.0, shifted.rate).unwrap();
        assert!((ln_m - 52.648).abs() < 2e-3, "ln_m={ln_m}");

        let g5k = vanishing_slack(5000.0).unwrap();
        let shifted5k = rd_at(&src, &dist, 0.25 - g5k, 1e-9).unwrap();
        let ln_m5k = codebook_log_size(5000.0, shifted5k.rate).unwrap();
        assert!((ln_m5k - 1112.9).abs() < 0.1, "ln_m={ln_m5k}");

        assert!(codebook_log_size(2.0, 0.3).is_err());
    }

    #[test]
    fn inner_code_fixed_slack() {
        let src = SourceSpec::uniform(2);
        let dist = DistortionSpec::hamming(2);
        let inner = InnerCode::design(
            &src,
            &dist,
            0.25,
            12,
            Slack::Fixed { shift: 0.05, cap: 0.3 },
            1e-9,
        )
        .unwrap();
        let r02 = std::f64::consts::LN_2 - h_b(0.2);
        assert!((inner.threshold - (r02 + 0.3)).abs() < 1e-6);
        assert!((inner.threshold - 0.492745).abs() < 1e-6);
        assert!((inner.ln_m - 12.0 * 0.492745).abs() < 1e-4);
        assert!((inner.ln_m - 5.913).abs() < 1e-3);
    }

    #[test]
    fn inner_code_slack_exceeding_budget() {
        let src = SourceSpec::uniform(2);
        let dist = DistortionSpec::hamming(2);
        // Schedule slack at n = 100 is 0.2146 > 0.05.
        let res = InnerCode::design(&src, &dist, 0.05, 100, Slack::Schedule, 1e-9);
        assert!(matches!(res, Err(Error::InfeasibleDistortion(_))));
    }

    proptest! {
        #[test]
        fn density_sum_additive_under_concatenation(
            a in proptest::collection::vec((0usize..2, 0usize..2), 1..12),
            b in proptest::collection::vec((0usize..2, 0usize..2), 1..12),
        ) {
            let channel = bsc_uniform(0.2);
            let seq = |pairs: &[(usize, usize)], pick: fn(&(usize, usize)) -> usize| {
                SequenceSample::new(pairs.iter().map(|p| pick(p) as u16).collect())
            };
            let whole: Vec<(usize, usize)> =
                a.iter().chain(b.iter()).cloned().collect();
            let lhs = info_density_sum(
                &seq(&whole, |p| p.0),
                &seq(&whole, |p| p.1),
                &channel,
            ).unwrap();
            let rhs = info_density_sum(&seq(&a, |p| p.0), &seq(&a, |p| p.1), &channel).unwrap()
                + info_density_sum(&seq(&b, |p| p.0), &seq(&b, |p| p.1), &channel).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn hit_rule_permutation_invariant(
            pairs in proptest::collection::vec((0u16..2, 0u16..2), 1..16),
            seed in 0u64..1000,
        ) {
            let dist = DistortionSpec::hamming(2);
            let channel = bsc_uniform(0.2);
            let rule = MatchRule::new(0.4, 0.35, channel, dist).unwrap();
            let (vs, ws): (Vec<u16>, Vec<u16>) = pairs.iter().cloned().unzip();
            let before = rule.is_hit(
                &SequenceSample::new(vs.clone()),
                &SequenceSample::new(ws.clone()),
            );
            // Deterministic shuffle of the coordinate order.
            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            for i in (1..idx.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (state >> 33) as usize % (i + 1));
            }
            let pv: Vec<u16> = idx.iter().map(|&i| vs[i]).collect();
            let pw: Vec<u16> = idx.iter().map(|&i| ws[i]).collect();
            let after = rule.is_hit(&SequenceSample::new(pv), &SequenceSample::new(pw));
            prop_assert_eq!(before, after);
        }
    }
}
