//! Randomized stopping-time wrapper.
//!
//! An inner fixed-length code at block length `N' = (1 - epsilon) N` is
//! stretched into a variable-to-fixed code with mean length about `N`: the
//! first `L` source symbols act as a biased coin with success probability
//! `p` in `(alpha, beta]`; on success the encoder stops at `ceil(gamma N')`
//! and spends the constant index 1 (giving up on that block), otherwise it
//! runs the inner code at length `N'`. The parameters are tied together so
//! that the mean length lands in `[N, (1 + f(delta)) N + 1]` while the
//! excess-distortion probability stays below `beta` plus the inner error.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::BTreeMap;

use crate::random_code::{run_trial, Codebook};
use crate::matching::MatchRule;
use crate::source::{SequenceSample, SourceSpec};
use crate::stats::{ci99_radius, mean_ci99};
use crate::{Error, Result};

/// All scalar knobs derived from `(N, epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapperParams {
    pub n: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Inner block length `(1 - epsilon) N` before rounding.
    pub nprime: f64,
    /// Inner block length rounded to the nearest integer.
    pub nprime_len: usize,
    /// Stretch factor for the give-up branch.
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Baseline coin block length `floor(ln N')`.
    pub coin_len_floor: usize,
    /// `(gamma beta + 1 - beta)(1 - epsilon) - 1`, the mean-length overshoot.
    pub f_delta: f64,
}

impl WrapperParams {
    /// `gamma = 1 + (e + d) / ((1 - e) e)`, `alpha = e^2 / (e + d)`,
    /// `beta = (e + alpha) / 2`. These satisfy
    /// `(gamma alpha + 1 - alpha)(1 - e) = 1` exactly.
    pub fn derive(n: f64, epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("delta must be positive, got {delta}")));
        }
        let nprime = (1.0 - epsilon) * n;
        if !(nprime > std::f64::consts::E) {
            return Err(Error::Domain(format!(
                "inner block length {nprime} must exceed e"
            )));
        }
        let gamma = 1.0 + (epsilon + delta) / ((1.0 - epsilon) * epsilon);
        let alpha = epsilon * epsilon / (epsilon + delta);
        let beta = (epsilon + alpha) / 2.0;
        let f_delta = (gamma * beta + 1.0 - beta) * (1.0 - epsilon) - 1.0;
        debug_assert!(((gamma * alpha + 1.0 - alpha) * (1.0 - epsilon) - 1.0).abs() < 1e-12);
        Ok(Self {
            n,
            epsilon,
            delta,
            nprime,
            nprime_len: nprime.round() as usize,
            gamma,
            alpha,
            beta,
            coin_len_floor: nprime.ln().floor() as usize,
            f_delta,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Take {
    All,
    First(u64),
}

/// A set of length-`L` source prefixes with total probability `p` in
/// `(alpha, beta]`, built greedily from the most probable prefixes.
///
/// Prefixes are grouped by type (equal probability within a group); groups
/// are taken whole in decreasing-probability order until the next one
/// overshoots `alpha`, and that boundary group contributes its
/// lexicographically first `m` sequences. Membership needs only the stored
/// group decisions, never the sequences themselves; for a uniform source
/// this collapses to an index threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CoinSet {
    len: usize,
    p: f64,
    alphabet: usize,
    classes: BTreeMap<Vec<u32>, Take>,
}

fn multinomial_u128(counts: &[u32]) -> u128 {
    // Product of binomials over prefix sums; saturates on overflow, which is
    // only ever compared against u64-sized thresholds.
    let mut total: u128 = 0;
    let mut acc: u128 = 1;
    for &c in counts {
        total += c as u128;
        let mut choose: u128 = 1;
        for i in 0..(c as u128) {
            choose = match choose.checked_mul(total - i) {
                Some(v) => v / (i + 1),
                None => return u128::MAX,
            };
        }
        acc = match acc.checked_mul(choose) {
            Some(v) => v,
            None => return u128::MAX,
        };
    }
    acc
}

fn atom_mass(src: &SourceSpec, counts: &[u32]) -> f64 {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(v, &c)| src.prob(v).powi(c as i32))
        .product()
}

/// Lexicographic rank of `seq` among all sequences with its symbol counts.
fn lex_rank(seq: &[u16], counts: &[u32]) -> u128 {
    let mut remaining = counts.to_vec();
    let mut rank: u128 = 0;
    for &s in seq {
        for t in 0..s {
            if remaining[t as usize] > 0 {
                remaining[t as usize] -= 1;
                rank = rank.saturating_add(multinomial_u128(&remaining));
                remaining[t as usize] += 1;
            }
        }
        remaining[s as usize] -= 1;
    }
    rank
}

impl CoinSet {
    /// Chooses the block length automatically: the larger of `min_len` and
    /// the smallest `L` with `p_max^L <= beta - alpha` (so the greedy
    /// overshoot always lands inside the target interval).
    pub fn build(src: &SourceSpec, alpha: f64, beta: f64, min_len: usize) -> Result<Self> {
        let p_max = src.max_prob();
        if p_max >= 1.0 {
            return Err(Error::DegenerateSource);
        }
        if !(0.0..1.0).contains(&alpha) || !(beta > alpha && beta <= 1.0) {
            return Err(Error::Domain(format!(
                "need 0 <= alpha < beta <= 1, got ({alpha}, {beta})"
            )));
        }
        let width = beta - alpha;
        let mut len = min_len.max(1).max((width.ln() / p_max.ln()).ceil() as usize);
        while p_max.powi(len as i32) > width {
            len += 1;
        }
        Self::with_len(src, alpha, beta, len)
    }

    /// Greedy construction at a fixed block length. Fails when a single
    /// length-`len` prefix already outweighs `beta - alpha`.
    pub fn with_len(src: &SourceSpec, alpha: f64, beta: f64, len: usize) -> Result<Self> {
        let p_max = src.max_prob();
        if p_max >= 1.0 {
            return Err(Error::DegenerateSource);
        }
        if len == 0 {
            return Err(Error::Domain("coin block length must be positive".into()));
        }
        if p_max.powi(len as i32) > beta - alpha {
            return Err(Error::Domain(format!(
                "coin atoms of mass {} exceed the interval width {}",
                p_max.powi(len as i32),
                beta - alpha
            )));
        }
        let support: Vec<usize> = (0..src.alphabet_size())
            .filter(|&v| src.prob(v) > 0.0)
            .collect();
        // Enumerate count vectors of length `len` over the support.
        let mut all: Vec<Vec<u32>> = Vec::new();
        let mut counts = vec![0u32; src.alphabet_size()];
        fn rec(
            support: &[usize],
            idx: usize,
            left: u32,
            counts: &mut Vec<u32>,
            all: &mut Vec<Vec<u32>>,
        ) {
            if idx + 1 == support.len() {
                counts[support[idx]] = left;
                all.push(counts.clone());
                counts[support[idx]] = 0;
                return;
            }
            for c in 0..=left {
                counts[support[idx]] = c;
                rec(support, idx + 1, left - c, counts, all);
            }
            counts[support[idx]] = 0;
        }
        rec(&support, 0, len as u32, &mut counts, &mut all);
        if all.len() > 4_000_000 {
            return Err(Error::Domain(format!(
                "coin construction would enumerate {} prefix groups",
                all.len()
            )));
        }
        all.sort_by(|a, b| {
            atom_mass(src, b)
                .partial_cmp(&atom_mass(src, a))
                .unwrap()
                .then_with(|| a.cmp(b))
        });

        let mut classes = BTreeMap::new();
        let mut cum = 0.0f64;
        let mut p = None;
        for class in &all {
            let mass = atom_mass(src, class);
            if mass <= 0.0 {
                continue;
            }
            let count = multinomial_u128(class);
            let total = count as f64 * mass;
            if cum + total <= alpha {
                classes.insert(class.clone(), Take::All);
                cum += total;
                continue;
            }
            let mut m = ((alpha - cum) / mass).floor() as u64 + 1;
            if (m as u128) > count {
                m = count as u64;
            }
            classes.insert(class.clone(), Take::First(m));
            p = Some(cum + m as f64 * mass);
            break;
        }
        let p = p.ok_or_else(|| {
            Error::Domain("prefix mass never crossed alpha (alpha >= 1?)".into())
        })?;
        if p <= alpha || p > beta + 1e-12 {
            return Err(Error::NonConvergence(format!(
                "coin mass {p} escaped ({alpha}, {beta}]"
            )));
        }
        Ok(Self {
            len,
            p,
            alphabet: src.alphabet_size(),
            classes,
        })
    }

    /// Single-symbol variant for sources whose letters are individually
    /// light enough (the analogue of splitting a continuous alphabet):
    /// `L = 1`, membership decided by the first symbol alone.
    pub fn single_symbol(src: &SourceSpec, alpha: f64, beta: f64) -> Result<Self> {
        Self::with_len(src, alpha, beta, 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exact probability mass of the set.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Membership test for a length-`L` prefix.
    pub fn contains(&self, prefix: &SequenceSample) -> bool {
        assert_eq!(prefix.len(), self.len, "prefix length mismatch");
        let mut counts = vec![0u32; self.alphabet];
        for &s in &prefix.symbols {
            counts[s as usize] += 1;
        }
        match self.classes.get(&counts) {
            None => false,
            Some(Take::All) => true,
            Some(Take::First(m)) => lex_rank(&prefix.symbols, &counts) < *m as u128,
        }
    }

    #[cfg(test)]
    fn test_constant(len: usize, member: bool, alphabet: usize) -> Self {
        // Test double: every type mapped to All (or nothing stored).
        let mut classes = BTreeMap::new();
        if member {
            let mut counts = vec![0u32; alphabet];
            counts[0] = len as u32;
            // Cover every possible type.
            fn rec(idx: usize, left: u32, counts: &mut Vec<u32>, out: &mut BTreeMap<Vec<u32>, Take>) {
                if idx + 1 == counts.len() {
                    counts[idx] = left;
                    out.insert(counts.clone(), Take::All);
                    counts[idx] = 0;
                    return;
                }
                for c in 0..=left {
                    counts[idx] = c;
                    rec(idx + 1, left - c, counts, out);
                }
                counts[idx] = 0;
            }
            let mut c = vec![0u32; alphabet];
            rec(0, len as u32, &mut c, &mut classes);
            let _ = counts;
        }
        Self {
            len,
            p: if member { 1.0 } else { 0.0 },
            alphabet,
            classes,
        }
    }
}

/// The inner code a wrapper runs on its keep branch.
#[derive(Debug, Clone)]
pub struct InnerHandle<'a> {
    pub codebook: &'a Codebook,
    pub rule: &'a MatchRule,
    pub ln_m: f64,
}

/// One wrapped encode/decode.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedTrial {
    /// Reported stopping time (coin symbols excluded; they are o(N) and
    /// logged separately via [`CoinSet::len`]).
    pub tau: u64,
    /// Whether the coin fired (give-up branch).
    pub h1: bool,
    pub index: u64,
    pub excess: bool,
    /// Realized distortion on the keep branch.
    pub distortion: Option<f64>,
}

/// Runs one wrapped trial: reads `L` coin symbols, then either gives up at
/// length `ceil(gamma N')` with index 1 (counted as an excess event) or
/// encodes a fresh `N'`-block with the inner code.
pub fn wrapped_trial<R: Rng + ?Sized>(
    src: &SourceSpec,
    params: &WrapperParams,
    coin: &CoinSet,
    inner: &InnerHandle,
    rng: &mut R,
) -> WrappedTrial {
    debug_assert_eq!(inner.codebook.n(), params.nprime_len);
    let prefix = src.sample_block(coin.len(), rng);
    if coin.contains(&prefix) {
        let tau = (params.gamma * params.nprime_len as f64).ceil() as u64;
        return WrappedTrial {
            tau,
            h1: true,
            index: 1,
            excess: true,
            distortion: None,
        };
    }
    let v = src.sample_block(params.nprime_len, rng);
    let rec = run_trial(&v, inner.codebook, inner.rule, false);
    WrappedTrial {
        tau: rec.tau,
        h1: false,
        index: rec.index,
        excess: rec.excess,
        distortion: Some(rec.distortion),
    }
}

/// Aggregates over wrapped trials.
#[derive(Debug, Clone, PartialEq)]
pub struct WrapperStats {
    pub trials: u64,
    pub mean_tau: f64,
    /// 99% confidence interval for the mean stopping time.
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub excess_rate: f64,
    pub excess_ci: f64,
    pub h1_rate: f64,
    pub ln_m: f64,
    /// `ln M / N`, the per-symbol rate of the wrapped code.
    pub rate: f64,
}

/// Independent wrapped trials with per-trial random streams.
pub fn wrapped_stats(
    src: &SourceSpec,
    params: &WrapperParams,
    coin: &CoinSet,
    inner: &InnerHandle,
    trials: u64,
    seed: u64,
) -> Result<WrapperStats> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let mut tau_sum = 0.0;
    let mut tau_sq = 0.0;
    let mut excess_count = 0u64;
    let mut h1_count = 0u64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t);
        let rec = wrapped_trial(src, params, coin, inner, &mut rng);
        tau_sum += rec.tau as f64;
        tau_sq += (rec.tau as f64) * (rec.tau as f64);
        if rec.excess {
            excess_count += 1;
        }
        if rec.h1 {
            h1_count += 1;
        }
    }
    let (mean_tau, tau_ci) = mean_ci99(tau_sum, tau_sq, trials);
    Ok(WrapperStats {
        trials,
        mean_tau,
        tau_lo: mean_tau - tau_ci,
        tau_hi: mean_tau + tau_ci,
        excess_rate: excess_count as f64 / trials as f64,
        excess_ci: ci99_radius(excess_count, trials),
        h1_rate: h1_count as f64 / trials as f64,
        ln_m: inner.ln_m,
        rate: inner.ln_m / params.n,
    })
}
