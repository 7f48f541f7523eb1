//! Monte Carlo realization of the random coding scheme: a seeded i.i.d.
//! codebook, the max-index encoder, the prefix decoder, and trial running.
//!
//! Codebook rows are drawn i.i.d. from the reproduction marginal of a test
//! channel. Each row has its own counter-derived random stream, so a row can
//! be regenerated on demand instead of stored; whether rows are materialized
//! is purely a memory policy and never changes the symbols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matching::MatchRule;
use crate::source::{SequenceSample, SourceSpec};
use crate::stats::ci99_radius;
use crate::{Error, Result};

/// Stored codebooks are capped at this many cells; larger ones regenerate
/// rows from the seed on demand.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 26;

/// Codebooks larger than this skip per-codeword hit counting in
/// [`run_trials`] (a full scan per trial would dominate the runtime).
const FULL_SCAN_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone)]
struct CdfSampler {
    cdf: Vec<f64>,
}

impl CdfSampler {
    fn new(pmf: &[f64]) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::InvalidPmf("bad codebook marginal".into()));
        }
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPmf(format!(
                "codebook marginal sums to {sum}"
            )));
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in pmf {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { cdf })
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u16 {
        let u: f64 = rng.random();
        for (i, &c) in self.cdf.iter().enumerate() {
            if u < c {
                return i as u16;
            }
        }
        (self.cdf.len() - 1) as u16
    }
}

/// An `M x n` random codebook. Rows are indexed `1..=M`.
#[derive(Debug, Clone)]
pub struct Codebook {
    seed: u64,
    m: u64,
    n: usize,
    sampler: CdfSampler,
    rows: Option<Vec<u16>>,
}

impl Codebook {
    /// Draws `m * n` i.i.d. symbols from `marginal`, deterministically from
    /// `seed`. Stores the rows when they fit the default cell budget.
    pub fn generate(seed: u64, m: u64, n: usize, marginal: &[f64]) -> Result<Self> {
        Self::generate_with_budget(seed, m, n, marginal, DEFAULT_CELL_BUDGET)
    }

    /// Same as [`Codebook::generate`] with an explicit stored-cell budget.
    pub fn generate_with_budget(
        seed: u64,
        m: u64,
        n: usize,
        marginal: &[f64],
        cell_budget: u64,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Domain("codebook needs m >= 1 and n >= 1".into()));
        }
        let sampler = CdfSampler::new(marginal)?;
        let stored = (m as u128) * (n as u128) <= cell_budget as u128;
        let rows = if stored {
            let mut rows = Vec::with_capacity((m as usize) * n);
            let mut buf = vec![0u16; n];
            for j in 1..=m {
                fill_row(seed, j, n, &sampler, &mut buf);
                rows.extend_from_slice(&buf);
            }
            Some(rows)
        } else {
            None
        };
        Ok(Self {
            seed,
            m,
            n,
            sampler,
            rows,
        })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_stored(&self) -> bool {
        self.rows.is_some()
    }

    /// Writes row `j` (1-based) into `buf`.
    pub fn row_into(&self, j: u64, buf: &mut Vec<u16>) -> Result<()> {
        if j == 0 || j > self.m {
            return Err(Error::Domain(format!(
                "codeword index {j} outside 1..={}",
                self.m
            )));
        }
        buf.resize(self.n, 0);
        match &self.rows {
            Some(rows) => {
                let start = (j as usize - 1) * self.n;
                buf.copy_from_slice(&rows[start..start + self.n]);
            }
            None => fill_row(self.seed, j, self.n, &self.sampler, buf),
        }
        Ok(())
    }

    /// First `n` symbols of row `index`: the decoder output at time `n`.
    pub fn decode(&self, index: u64, n: usize) -> Result<SequenceSample> {
        if n == 0 || n > self.n {
            return Err(Error::Domain(format!(
                "decode length {n} outside 1..={}",
                self.n
            )));
        }
        let mut buf = Vec::new();
        self.row_into(index, &mut buf)?;
        buf.truncate(n);
        Ok(SequenceSample::new(buf))
    }
}

fn fill_row(seed: u64, j: u64, n: usize, sampler: &CdfSampler, buf: &mut Vec<u16>) {
    buf.resize(n, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    for slot in buf.iter_mut() {
        *slot = sampler.sample(&mut rng);
    }
}

/// The encoder: the largest index whose codeword is a hit for `v`, or 1
/// when nothing hits. Scans from the top so it can stop at the first hit.
pub fn encode(v: &SequenceSample, cb: &Codebook, rule: &MatchRule) -> u64 {
    debug_assert_eq!(v.len(), cb.n());
    let mut buf = Vec::with_capacity(cb.n());
    let mut w = SequenceSample::new(Vec::new());
    for j in (1..=cb.m()).rev() {
        cb.row_into(j, &mut buf).expect("index in range");
        std::mem::swap(&mut w.symbols, &mut buf);
        let hit = rule.is_hit(v, &w);
        std::mem::swap(&mut w.symbols, &mut buf);
        if hit {
            return j;
        }
    }
    1
}

/// Outcome of one encode/decode round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// Stopping time; equal to the block length for the inner code.
    pub tau: u64,
    /// Chosen codeword index in `1..=M`.
    pub index: u64,
    /// Realized per-letter distortion of the reconstruction.
    pub distortion: f64,
    /// Whether some codeword was a hit.
    pub psi_hit: bool,
    /// Whether the realized distortion exceeds the budget.
    pub excess: bool,
    /// Number of hit codewords, when the scan counted them.
    pub hits: Option<u64>,
}

/// Encodes and decodes one source block. When `count_hits` is set the scan
/// visits every codeword and reports the hit count, otherwise it stops at
/// the first (largest-index) hit.
pub fn run_trial(
    v: &SequenceSample,
    cb: &Codebook,
    rule: &MatchRule,
    count_hits: bool,
) -> TrialRecord {
    let mut buf = Vec::with_capacity(cb.n());
    let mut w = SequenceSample::new(Vec::new());
    let mut hits = 0u64;
    let mut max_hit = 0u64;
    for j in (1..=cb.m()).rev() {
        cb.row_into(j, &mut buf).expect("index in range");
        std::mem::swap(&mut w.symbols, &mut buf);
        let hit = rule.is_hit(v, &w);
        std::mem::swap(&mut w.symbols, &mut buf);
        if hit {
            hits += 1;
            if max_hit == 0 {
                max_hit = j;
            }
            if !count_hits {
                break;
            }
        }
    }
    let psi_hit = max_hit > 0;
    let index = if psi_hit { max_hit } else { 1 };
    let reconstruction = cb.decode(index, v.len()).expect("index in range");
    let distortion = rule
        .dist()
        .block_distortion(v, &reconstruction)
        .expect("equal lengths");
    let excess = distortion > rule.max_distortion;
    debug_assert!(!(psi_hit && excess));
    TrialRecord {
        tau: v.len() as u64,
        index,
        distortion,
        psi_hit,
        excess,
        hits: count_hits.then_some(hits),
    }
}

/// Aggregates over independent trials against one fixed codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialStats {
    pub trials: u64,
    pub excess_count: u64,
    pub excess_rate: f64,
    /// 99% Clopper-Pearson radius for the excess rate.
    pub excess_ci: f64,
    /// Fraction of trials where some codeword hit.
    pub psi_hit_rate: f64,
    pub mean_distortion: f64,
    /// Hits divided by `trials * M`; NaN when the codebook was too large to
    /// scan fully.
    pub per_codeword_hit_rate: f64,
}

/// Runs `trials` fresh source blocks against one codebook fixed by its seed.
/// Trial `t` uses random stream `t`, so results are a pure function of
/// `(seed, parameters)` and trials could be replayed in any order.
pub fn run_trials(
    src: &SourceSpec,
    rule: &MatchRule,
    cb: &Codebook,
    trials: u64,
    seed: u64,
) -> Result<TrialStats> {
    if trials == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    let count_hits = cb.m() <= FULL_SCAN_LIMIT;
    let mut excess_count = 0u64;
    let mut hit_trials = 0u64;
    let mut total_hits = 0u64;
    let mut dist_sum = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t);
        let v = src.sample_block(cb.n(), &mut rng);
        let rec = run_trial(&v, cb, rule, count_hits);
        if rec.excess {
            excess_count += 1;
        }
        if rec.psi_hit {
            hit_trials += 1;
        }
        if let Some(h) = rec.hits {
            total_hits += h;
        }
        dist_sum += rec.distortion;
    }
    let tf = trials as f64;
    Ok(TrialStats {
        trials,
        excess_count,
        excess_rate: excess_count as f64 / tf,
        excess_ci: ci99_radius(excess_count, trials),
        psi_hit_rate: hit_trials as f64 / tf,
        mean_distortion: dist_sum / tf,
        per_codeword_hit_rate: if count_hits {
            total_hits as f64 / (tf * cb.m() as f64)
        } else {
            f64::NAN
        },
    })
}
