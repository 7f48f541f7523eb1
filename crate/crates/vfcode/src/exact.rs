//! Exact codebook-averaged analysis in the log domain.
//!
//! The probability that no codeword hits a source block `v` is
//! `(1 - q(v))^M`, with `q(v)` the per-codeword hit probability over a
//! random row. Averaged over blocks the quantity depends on `v` only
//! through its type (symbol occupation counts), so the outer sum runs over
//! types. Everything is carried as logarithms: realistic parameters put
//! `M` near `e^1000` and `q` near `e^-100000`, far outside floating-point
//! range.
//!
//! Per-codeword hit probabilities come from one of two routes:
//!
//! * a closed-form binomial tail when every source symbol sees the same
//!   two-atom distribution of `(distortion, density)` values, so both block
//!   sums are affine in a single binomial count (exact, `q_lo = q_hi`);
//! * otherwise a per-symbol convolution over a value grid of width `eta`,
//!   rounding down and up to keep a rigorous `[q_lo, q_hi]` bracket.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeMap;

use crate::matching::MatchRule;
use crate::rd::RdPoint;
use crate::source::SourceSpec;
use crate::stats::CompensatedSum;

/// Density values are clamped here before any grid or tail arithmetic; a
/// single clamped letter decides the density clause against any realistic
/// per-block bound, which is what a `-inf` value means.
const DENSITY_CLAMP: f64 = 1e9;

/// Below this the series `-ln(1-q) = q + q^2/2 + ...` is just `q`.
const TINY_Q: f64 = 1e-8;

/// Small blocks use the linear-domain binomial recurrence, which is exact
/// for dyadic probabilities.
const SMALL_N: usize = 64;

/// A symbol occupation-count class of source blocks, with the log of its
/// total probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeClass {
    pub counts: Vec<usize>,
    pub log_prob: f64,
}

impl TypeClass {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn ln_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut v = ln_gamma(n as f64 + 1.0);
    for &c in counts {
        v -= ln_gamma(c as f64 + 1.0);
    }
    v
}

/// All types of length `n` supported by the source. Symbols of probability
/// zero are pinned to count zero.
pub fn enumerate_types(src: &SourceSpec, n: usize) -> Vec<TypeClass> {
    let support: Vec<usize> = (0..src.alphabet_size())
        .filter(|&v| src.prob(v) > 0.0)
        .collect();
    let mut out = Vec::new();
    let mut counts = vec![0usize; src.alphabet_size()];
    fn rec(
        src: &SourceSpec,
        support: &[usize],
        idx: usize,
        left: usize,
        counts: &mut Vec<usize>,
        out: &mut Vec<TypeClass>,
    ) {
        if idx + 1 == support.len() {
            counts[support[idx]] = left;
            let log_prob = ln_multinomial(counts)
                + counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(v, &c)| c as f64 * src.prob(v).ln())
                    .sum::<f64>();
            out.push(TypeClass {
                counts: counts.clone(),
                log_prob,
            });
            counts[support[idx]] = 0;
            return;
        }
        for c in 0..=left {
            counts[support[idx]] = c;
            rec(src, support, idx + 1, left - c, counts, out);
        }
        counts[support[idx]] = 0;
    }
    rec(src, &support, 0, n, &mut counts, &mut out);
    out
}

/// Number of types of length `n` (saturating).
pub fn type_count(src: &SourceSpec, n: usize) -> u128 {
    let k = (0..src.alphabet_size())
        .filter(|&v| src.prob(v) > 0.0)
        .count() as u128;
    if k <= 1 {
        return 1;
    }
    // C(n + k - 1, k - 1)
    let mut acc: u128 = 1;
    for i in 0..(k - 1) {
        match acc.checked_mul(n as u128 + k - 1 - i) {
            Some(v) => acc = v,
            None => return u128::MAX,
        }
        acc /= i + 1;
    }
    acc
}

/// Bracket on a per-codeword hit probability. The endpoints coincide on the
/// binomial route; the grid route keeps them apart by the rounding slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitProbInterval {
    pub q_lo: f64,
    pub q_hi: f64,
    pub ln_q_lo: f64,
    pub ln_q_hi: f64,
}

impl HitProbInterval {
    fn exact(q: f64, ln_q: f64) -> Self {
        Self {
            q_lo: q,
            q_hi: q,
            ln_q_lo: ln_q,
            ln_q_hi: ln_q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Atom {
    d: f64,
    iota: f64,
    p: f64,
}

/// Per source symbol, the distribution of `(d(v, W), iota(v, W))` over a
/// codeword letter `W` drawn from the channel marginal. Zero-probability
/// letters are dropped and duplicate value pairs merged.
fn symbol_atoms(rule: &MatchRule) -> Vec<Vec<Atom>> {
    let channel = rule.channel();
    let nv = channel.n_source_symbols();
    let nw = channel.n_repro_symbols();
    (0..nv)
        .map(|v| {
            let mut atoms: Vec<Atom> = Vec::new();
            for w in 0..nw {
                let p = channel.marginal()[w];
                if p <= 0.0 {
                    continue;
                }
                let iota = rule.iota(v, w).max(-DENSITY_CLAMP).min(DENSITY_CLAMP);
                atoms.push(Atom {
                    d: rule.dist().d(v, w),
                    iota,
                    p,
                });
            }
            atoms.sort_by(|a, b| {
                a.d.partial_cmp(&b.d)
                    .unwrap()
                    .then(a.iota.partial_cmp(&b.iota).unwrap())
            });
            let mut merged: Vec<Atom> = Vec::new();
            for a in atoms {
                if let Some(last) = merged.last_mut() {
                    if (last.d - a.d).abs() <= 1e-12 && (last.iota - a.iota).abs() <= 1e-12 {
                        last.p += a.p;
                        continue;
                    }
                }
                merged.push(a);
            }
            merged
        })
        .collect()
}

fn atoms_equal(a: &[Atom], b: &[Atom]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            (x.d - y.d).abs() <= 1e-12
                && (x.iota - y.iota).abs() <= 1e-12
                && (x.p - y.p).abs() <= 1e-12
        })
}

/// The shared atom pair when every listed symbol sees the same distribution
/// of at most two `(d, iota)` values.
fn common_atoms<'a>(atoms: &'a [Vec<Atom>], symbols: &[usize]) -> Option<&'a [Atom]> {
    let first = &atoms[symbols[0]];
    if first.len() > 2 || first.is_empty() {
        return None;
    }
    for &v in &symbols[1..] {
        if !atoms_equal(first, &atoms[v]) {
            return None;
        }
    }
    Some(first)
}

/// Solves `{k in [0, n] : base + k * delta <= bound}` as an integer range.
fn count_range(n: usize, base: f64, delta: f64, bound: f64) -> Option<(usize, usize)> {
    let slop = 1e-9 * (1.0 + bound.abs().min(1e12) + base.abs().min(1e12));
    if delta.abs() <= 1e-15 {
        return if base <= bound + slop {
            Some((0, n))
        } else {
            None
        };
    }
    let x = (bound - base) / delta;
    if delta > 0.0 {
        let hi = ((x + slop / delta).floor()).min(n as f64);
        if hi < 0.0 {
            None
        } else {
            Some((0, hi as usize))
        }
    } else {
        let lo = ((x - slop / delta.abs()).ceil()).max(0.0);
        if lo > n as f64 {
            None
        } else {
            Some((lo as usize, n))
        }
    }
}

fn intersect(a: Option<(usize, usize)>, b: Option<(usize, usize)>) -> Option<(usize, usize)> {
    let (a0, a1) = a?;
    let (b0, b1) = b?;
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    (lo <= hi).then_some((lo, hi))
}

/// `P(klo <= K <= khi)` for `K ~ Bin(n, p)`, in both linear and log form.
fn binomial_range_prob(n: usize, p: f64, klo: usize, khi: usize) -> (f64, f64) {
    debug_assert!(klo <= khi && khi <= n);
    if p <= 0.0 {
        return if klo == 0 { (1.0, 0.0) } else { (0.0, f64::NEG_INFINITY) };
    }
    if p >= 1.0 {
        return if khi == n { (1.0, 0.0) } else { (0.0, f64::NEG_INFINITY) };
    }
    if n <= SMALL_N {
        // Linear-domain recurrence; exact when p and the pmf are dyadic.
        let mut pmf = (1.0 - p).powi(n as i32);
        let ratio = p / (1.0 - p);
        let mut q = if klo == 0 { pmf } else { 0.0 };
        for k in 0..n {
            pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
            if k + 1 >= klo && k + 1 <= khi {
                q += pmf;
            }
        }
        let q = q.min(1.0);
        return (q, q.ln());
    }
    // Log domain, summing outward from the in-range mode.
    let nf = n as f64;
    let mode = (((nf + 1.0) * p).floor()).clamp(klo as f64, khi as f64) as usize;
    let ln_pmf_mode = ln_gamma(nf + 1.0)
        - ln_gamma(mode as f64 + 1.0)
        - ln_gamma((n - mode) as f64 + 1.0)
        + mode as f64 * p.ln()
        + (n - mode) as f64 * (1.0 - p).ln();
    let mut acc = 1.0;
    let mut term = 1.0;
    let mut k = mode;
    while k > klo {
        term *= k as f64 * (1.0 - p) / (((n - k + 1) as f64) * p);
        acc += term;
        k -= 1;
        if term < 1e-18 * acc {
            break;
        }
    }
    term = 1.0;
    k = mode;
    while k < khi {
        term *= ((n - k) as f64) * p / ((k + 1) as f64 * (1.0 - p));
        acc += term;
        k += 1;
        if term < 1e-18 * acc {
            break;
        }
    }
    let ln_q = (ln_pmf_mode + acc.ln()).min(0.0);
    (ln_q.exp(), ln_q)
}

/// Binomial route: all symbols share the atom list `atoms` (one or two
/// entries), so the block sums are affine in the count of second atoms.
fn binomial_hit_probability(n: usize, atoms: &[Atom], rule: &MatchRule) -> HitProbInterval {
    let nf = n as f64;
    let d_bound = rule.max_distortion * nf;
    let i_bound = rule.density_cap * nf;
    let a = atoms[0];
    let (range_d, range_i) = if atoms.len() == 1 {
        (
            count_range(n, a.d * nf, 0.0, d_bound),
            count_range(n, a.iota * nf, 0.0, i_bound),
        )
    } else {
        let b = atoms[1];
        (
            count_range(n, a.d * nf, b.d - a.d, d_bound),
            count_range(n, a.iota * nf, b.iota - a.iota, i_bound),
        )
    };
    match intersect(range_d, range_i) {
        None => HitProbInterval::exact(0.0, f64::NEG_INFINITY),
        Some((klo, khi)) => {
            let pb = if atoms.len() == 1 { 0.0 } else { atoms[1].p };
            let (q, ln_q) = binomial_range_prob(n, pb, klo, khi);
            HitProbInterval::exact(q, ln_q)
        }
    }
}

#[derive(Clone, Copy)]
enum Rounding {
    Down,
    Up,
}

fn grid(x: f64, eta: f64, r: Rounding) -> i64 {
    let v = x / eta;
    let g = match r {
        Rounding::Down => v.floor(),
        Rounding::Up => v.ceil(),
    };
    g.clamp(-9.0e15, 9.0e15) as i64
}

/// Grid route: convolve the per-symbol `(d, iota)` distributions with both
/// values rounded in one direction, then read off the mass that satisfies
/// both clauses. Rounding down can only enlarge the acceptance region
/// (upper end), rounding up can only shrink it (lower end).
fn dp_hit_probability(ty: &TypeClass, atoms: &[Vec<Atom>], rule: &MatchRule, eta: f64) -> HitProbInterval {
    let n = ty.total();
    let nf = n as f64;
    let run = |r: Rounding| -> f64 {
        let mut states: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        states.insert((0, 0), 1.0);
        for (v, &c) in ty.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let cell: Vec<(i64, i64, f64)> = atoms[v]
                .iter()
                .map(|a| (grid(a.d, eta, r), grid(a.iota, eta, r), a.p))
                .collect();
            for _ in 0..c {
                let mut next: BTreeMap<(i64, i64), f64> = BTreeMap::new();
                for (&(di, ii), &mass) in &states {
                    for &(ad, ai, ap) in &cell {
                        *next
                            .entry((di.saturating_add(ad), ii.saturating_add(ai)))
                            .or_insert(0.0) += mass * ap;
                    }
                }
                states = next;
            }
        }
        let slop = 1e-9;
        let d_bound = ((rule.max_distortion * nf) / eta + slop).floor();
        let i_cap = rule.density_cap * nf;
        let i_bound = if i_cap.is_infinite() {
            if i_cap > 0.0 {
                i64::MAX as f64
            } else {
                i64::MIN as f64
            }
        } else {
            (i_cap / eta + slop).floor()
        };
        let mut q = CompensatedSum::new();
        for (&(di, ii), &mass) in &states {
            if (di as f64) <= d_bound && (ii as f64) <= i_bound {
                q.add(mass);
            }
        }
        q.value().clamp(0.0, 1.0)
    };
    let q_hi = run(Rounding::Down);
    let q_lo = run(Rounding::Up);
    let q_lo = q_lo.min(q_hi);
    HitProbInterval {
        q_lo,
        q_hi,
        ln_q_lo: q_lo.ln(),
        ln_q_hi: q_hi.ln(),
    }
}

/// Per-codeword hit probability for a representative block of the given
/// type: the chance that an i.i.d. draw from the channel marginal lands
/// within distortion `D` and under the density cap.
pub fn hit_probability(ty: &TypeClass, rule: &MatchRule, eta: f64) -> HitProbInterval {
    assert!(eta > 0.0, "grid width must be positive");
    let atoms = symbol_atoms(rule);
    let present: Vec<usize> = ty
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(v, _)| v)
        .collect();
    assert!(!present.is_empty(), "empty type");
    if let Some(shared) = common_atoms(&atoms, &present) {
        return binomial_hit_probability(ty.total(), shared, rule);
    }
    dp_hit_probability(ty, &atoms, rule, eta)
}

/// `(1 - q)^M` evaluated from `ln M` and `ln q` without ever forming `M`
/// or underflowing `q`.
fn no_hit_term(ln_m: f64, q: f64, ln_q: f64) -> f64 {
    if q >= 1.0 {
        return 0.0;
    }
    if ln_q == f64::NEG_INFINITY {
        return 1.0;
    }
    let w = if ln_q <= TINY_Q.ln() {
        // -ln(1-q) = q (1 + q/2 + ...); below 1e-8 the correction to the
        // exponent is under 5e-9 and invisible at this scale.
        ln_m + ln_q
    } else {
        ln_m + (-(-q).ln_1p()).ln()
    };
    (-w.exp()).exp()
}

/// Options for [`no_hit_probability`].
#[derive(Debug, Clone, Copy)]
pub struct NoHitOptions {
    /// Density/distortion grid width for the bracket route.
    pub eta: f64,
    /// Enumerate types up to this count, sample beyond it.
    pub type_cap: u128,
    /// Number of sampled types past the cap.
    pub samples: u64,
    /// Seed for the sampled route.
    pub sample_seed: u64,
}

impl Default for NoHitOptions {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            type_cap: 5_000_000,
            samples: 4096,
            sample_seed: 0,
        }
    }
}

/// Codebook-averaged no-hit probability bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoHitBound {
    pub lo: f64,
    pub hi: f64,
    /// Set when the outer type sum was sampled rather than enumerated.
    pub stderr: Option<f64>,
}

/// `sum_types P(type) (1 - q(type))^M` with `M = exp(ln_m)`, bracketed.
///
/// When every supported symbol shares the same two-atom value distribution,
/// `q` does not depend on the type at all and the sum collapses; otherwise
/// the types are enumerated (or sampled past `type_cap`, with a reported
/// standard error folded into the bracket at three sigma).
pub fn no_hit_probability(
    src: &SourceSpec,
    rule: &MatchRule,
    n: usize,
    ln_m: f64,
    opts: &NoHitOptions,
) -> NoHitBound {
    assert!(n >= 1);
    let atoms = symbol_atoms(rule);
    let support: Vec<usize> = (0..src.alphabet_size())
        .filter(|&v| src.prob(v) > 0.0)
        .collect();
    if let Some(shared) = common_atoms(&atoms, &support) {
        let mut counts = vec![0usize; src.alphabet_size()];
        counts[support[0]] = n;
        let ty = TypeClass {
            counts,
            log_prob: 0.0,
        };
        let q = binomial_hit_probability(ty.total(), shared, rule);
        return NoHitBound {
            lo: no_hit_term(ln_m, q.q_hi, q.ln_q_hi),
            hi: no_hit_term(ln_m, q.q_lo, q.ln_q_lo),
            stderr: None,
        };
    }

    if type_count(src, n) <= opts.type_cap {
        let mut lo = CompensatedSum::new();
        let mut hi = CompensatedSum::new();
        for ty in enumerate_types(src, n) {
            let q = hit_probability(&ty, rule, opts.eta);
            let w = ty.log_prob.exp();
            lo.add(w * no_hit_term(ln_m, q.q_hi, q.ln_q_hi));
            hi.add(w * no_hit_term(ln_m, q.q_lo, q.ln_q_lo));
        }
        return NoHitBound {
            lo: lo.value().clamp(0.0, 1.0),
            hi: hi.value().clamp(0.0, 1.0),
            stderr: None,
        };
    }

    // Sampled outer sum: draw types from their own distribution, so the
    // plain mean of the per-type terms is unbiased.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed);
    let mut sum_lo = 0.0;
    let mut sum_hi = 0.0;
    let mut sumsq_lo = 0.0;
    let mut sumsq_hi = 0.0;
    for _ in 0..opts.samples {
        let mut counts = vec![0usize; src.alphabet_size()];
        let mut left = n as u64;
        let mut tail = 1.0;
        for &v in &support {
            if left == 0 {
                break;
            }
            let ratio = (src.prob(v) / tail).clamp(0.0, 1.0);
            let c = if v == *support.last().unwrap() || ratio >= 1.0 {
                left
            } else {
                Binomial::new(left, ratio).expect("valid ratio").sample(&mut rng)
            };
            counts[v] = c as usize;
            left -= c;
            tail -= src.prob(v);
        }
        let ty = TypeClass {
            counts,
            log_prob: 0.0,
        };
        let q = hit_probability(&ty, rule, opts.eta);
        let t_lo = no_hit_term(ln_m, q.q_hi, q.ln_q_hi);
        let t_hi = no_hit_term(ln_m, q.q_lo, q.ln_q_lo);
        sum_lo += t_lo;
        sum_hi += t_hi;
        sumsq_lo += t_lo * t_lo;
        sumsq_hi += t_hi * t_hi;
    }
    let s = opts.samples as f64;
    let mean_lo = sum_lo / s;
    let mean_hi = sum_hi / s;
    let se = |sum: f64, sumsq: f64| {
        let mean = sum / s;
        (((sumsq - s * mean * mean) / (s - 1.0)).max(0.0) / s).sqrt()
    };
    let se_lo = se(sum_lo, sumsq_lo);
    let se_hi = se(sum_hi, sumsq_hi);
    NoHitBound {
        lo: (mean_lo - 3.0 * se_lo).max(0.0),
        hi: (mean_hi + 3.0 * se_hi).min(1.0),
        stderr: Some(se_lo.max(se_hi)),
    }
}

/// Error bound on the excess-distortion probability of the inner code at
/// block length `nprime`: two Chebyshev terms driven by the distortion and
/// density variances of the shifted curve point, plus the double-exponential
/// no-hit term `exp(-exp(ln_m - nprime * threshold))`.
///
/// With the schedule-sized codebook the last term collapses to `1/nprime`.
pub fn chebyshev_error_bound(shifted: &RdPoint, nprime: f64, threshold: f64, ln_m: f64) -> f64 {
    let ln_n = nprime.ln();
    (shifted.d_var + 1.0) / ln_n
        + (shifted.v_disp + 1.0) / ln_n
        + (-(ln_m - nprime * threshold).exp()).exp()
}
