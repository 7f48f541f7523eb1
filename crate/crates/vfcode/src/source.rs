//! Finite-alphabet memoryless sources and separable distortion measures.

use rand::Rng;

use crate::{Error, Result};

const PMF_SUM_TOL: f64 = 1e-12;

/// A memoryless source over a finite alphabet, given by its symbol
/// probabilities. Symbols are the indices `0..alphabet_size()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl SourceSpec {
    /// Validates and wraps a probability vector. Entries must be
    /// non-negative and sum to one within `1e-12`.
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidPmf("empty probability vector".into()));
        }
        if pmf.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidPmf(
                "entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(Error::InvalidPmf(format!(
                "entries sum to {sum}, expected 1 within {PMF_SUM_TOL}"
            )));
        }
        if !pmf.iter().any(|&p| p > 0.0) {
            return Err(Error::InvalidPmf("all entries are zero".into()));
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        // Guard the last bucket against rounding in the partial sums.
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(Self { pmf, cdf })
    }

    /// Parses the value of a `pmf = p1 p2 ...` config line.
    pub fn parse(values: &str) -> Result<Self> {
        let pmf = values
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::InvalidPmf(format!("cannot parse `{tok}` as a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(pmf)
    }

    /// Uniform source over `k` symbols.
    pub fn uniform(k: usize) -> Self {
        Self::new(vec![1.0 / k as f64; k]).expect("uniform pmf is valid")
    }

    /// Binary source with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn alphabet_size(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        self.pmf[symbol]
    }

    /// Largest single-symbol probability.
    pub fn max_prob(&self) -> f64 {
        self.pmf.iter().cloned().fold(0.0, f64::max)
    }

    /// Shannon entropy in nats, with the `0 ln 0 = 0` convention.
    pub fn entropy(&self) -> f64 {
        -self
            .pmf
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Draws one symbol.
    pub fn sample_symbol<R: Rng + ?Sized>(&self, rng: &mut R) -> u16 {
        let u: f64 = rng.random();
        // Alphabets here are small; a linear scan beats binary search.
        for (i, &c) in self.cdf.iter().enumerate() {
            if u < c {
                return i as u16;
            }
        }
        (self.cdf.len() - 1) as u16
    }

    /// Draws `n` i.i.d. symbols. Deterministic given the generator state.
    pub fn sample_block<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SequenceSample {
        let mut symbols = Vec::with_capacity(n);
        for _ in 0..n {
            symbols.push(self.sample_symbol(rng));
        }
        SequenceSample { symbols }
    }
}

/// A block of source or reproduction symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSample {
    pub symbols: Vec<u16>,
}

impl SequenceSample {
    pub fn new(symbols: Vec<u16>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// A single-letter distortion measure `d(v, w) >= 0` on source symbol `v`
/// and reproduction symbol `w`. The matrix may be rectangular: the
/// reproduction alphabet does not have to match the source alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSpec {
    entries: Vec<f64>,
    n_source: usize,
    n_repro: usize,
}

impl DistortionSpec {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_source = rows.len();
        if n_source == 0 {
            return Err(Error::InvalidDistortion("empty matrix".into()));
        }
        let n_repro = rows[0].len();
        if n_repro == 0 {
            return Err(Error::InvalidDistortion("matrix has no columns".into()));
        }
        let mut entries = Vec::with_capacity(n_source * n_repro);
        for row in &rows {
            if row.len() != n_repro {
                return Err(Error::InvalidDistortion("ragged rows".into()));
            }
            for &d in row {
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidDistortion(
                        "entries must be finite and non-negative".into(),
                    ));
                }
                entries.push(d);
            }
        }
        Ok(Self {
            entries,
            n_source,
            n_repro,
        })
    }

    /// Parses the value of a `dist = d11 d12 ...; d21 ...` config line
    /// (rows separated by `;`).
    pub fn parse(values: &str) -> Result<Self> {
        let rows = values
            .split(';')
            .map(|row| {
                row.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>().map_err(|_| {
                            Error::InvalidDistortion(format!("cannot parse `{tok}` as a number"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(rows)
    }

    /// Hamming distortion on a `k`-symbol alphabet.
    pub fn hamming(k: usize) -> Self {
        let rows = (0..k)
            .map(|v| (0..k).map(|w| if v == w { 0.0 } else { 1.0 }).collect())
            .collect();
        Self::new(rows).expect("hamming matrix is valid")
    }

    pub fn n_source_symbols(&self) -> usize {
        self.n_source
    }

    pub fn n_repro_symbols(&self) -> usize {
        self.n_repro
    }

    #[inline]
    pub fn d(&self, v: usize, w: usize) -> f64 {
        self.entries[v * self.n_repro + w]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    /// Per-letter average distortion `(1/n) sum_k d(v_k, w_k)`.
    pub fn block_distortion(&self, v: &SequenceSample, w: &SequenceSample) -> Result<f64> {
        if v.len() != w.len() {
            return Err(Error::LengthMismatch(v.len(), w.len()));
        }
        if v.is_empty() {
            return Err(Error::Domain("empty sequences".into()));
        }
        let sum: f64 = v
            .symbols
            .iter()
            .zip(&w.symbols)
            .map(|(&a, &b)| self.d(a as usize, b as usize))
            .sum();
        Ok(sum / v.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_uniform_binary_is_ln2() {
        let src = SourceSpec::uniform(2);
        assert!((src.entropy() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_degenerate_is_zero() {
        let src = SourceSpec::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(src.entropy(), 0.0);
    }

    #[test]
    fn entropy_bernoulli_03() {
        let src = SourceSpec::bernoulli(0.3).unwrap();
        let direct = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((src.entropy() - direct).abs() < 1e-15);
        assert!((src.entropy() - 0.610864).abs() < 1e-6);
    }

    #[test]
    fn entropy_uniform_k_is_ln_k() {
        for k in 2..=8 {
            let src = SourceSpec::uniform(k);
            assert!((src.entropy() - (k as f64).ln()).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn pmf_validation() {
        assert!(SourceSpec::new(vec![0.5, 0.6]).is_err());
        assert!(SourceSpec::new(vec![-0.1, 1.1]).is_err());
        assert!(SourceSpec::new(vec![]).is_err());
        assert!(SourceSpec::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn sample_block_point_mass() {
        let src = SourceSpec::new(vec![0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = src.sample_block(5, &mut rng);
        assert_eq!(block.symbols, vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn sample_block_frequency() {
        let src = SourceSpec::uniform(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let block = src.sample_block(n, &mut rng);
        let ones = block.symbols.iter().filter(|&&s| s == 1).count() as f64;
        let freq = ones / n as f64;
        // 3-sigma binomial radius at p = 1/2 is 0.0015.
        assert!((freq - 0.5).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn sample_block_deterministic() {
        let src = SourceSpec::bernoulli(0.3).unwrap();
        let a = src.sample_block(1000, &mut ChaCha8Rng::seed_from_u64(42));
        let b = src.sample_block(1000, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn block_distortion_identity_and_count() {
        let dist = DistortionSpec::hamming(2);
        let v = SequenceSample::new(vec![0, 0, 0, 0]);
        assert_eq!(dist.block_distortion(&v, &v).unwrap(), 0.0);
        let w = SequenceSample::new(vec![0, 1, 0, 1]);
        assert_eq!(dist.block_distortion(&v, &w).unwrap(), 0.5);
    }

    #[test]
    fn block_distortion_matches_hand_sum() {
        let dist = DistortionSpec::new(vec![vec![0.1, 2.0], vec![0.7, 0.3]]).unwrap();
        let v = SequenceSample::new(vec![0, 1, 1]);
        let w = SequenceSample::new(vec![1, 0, 1]);
        let hand = (2.0 + 0.7 + 0.3) / 3.0;
        assert!((dist.block_distortion(&v, &w).unwrap() - hand).abs() < 1e-15);
    }

    #[test]
    fn block_distortion_length_mismatch() {
        let dist = DistortionSpec::hamming(2);
        let v = SequenceSample::new(vec![0, 1]);
        let w = SequenceSample::new(vec![0]);
        assert!(matches!(
            dist.block_distortion(&v, &w),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn parse_config_lines() {
        let src = SourceSpec::parse("0.5 0.5").unwrap();
        assert_eq!(src.pmf(), &[0.5, 0.5]);
        let dist = DistortionSpec::parse("0 1; 1 0").unwrap();
        assert_eq!(dist.d(0, 1), 1.0);
        assert_eq!(dist.d(1, 1), 0.0);
        assert!(SourceSpec::parse("0.5 x").is_err());
        assert!(DistortionSpec::parse("0 1; 1").is_err());
        // Rectangular matrices are allowed.
        let rect = DistortionSpec::parse("0 1 0.5; 1 0 0.5").unwrap();
        assert_eq!(rect.n_repro_symbols(), 3);
    }

    proptest! {
        #[test]
        fn distortion_additive_over_splits(
            pair in proptest::collection::vec((0u16..2, 0u16..2), 2..40),
            split in 1usize..39,
        ) {
            prop_assume!(split < pair.len());
            let dist = DistortionSpec::new(vec![vec![0.2, 1.3], vec![0.9, 0.1]]).unwrap();
            let (vs, ws): (Vec<u16>, Vec<u16>) = pair.iter().cloned().unzip();
            let v = SequenceSample::new(vs.clone());
            let w = SequenceSample::new(ws.clone());
            let a = split;
            let b = pair.len() - split;
            let va = SequenceSample::new(vs[..a].to_vec());
            let wa = SequenceSample::new(ws[..a].to_vec());
            let vb = SequenceSample::new(vs[a..].to_vec());
            let wb = SequenceSample::new(ws[a..].to_vec());
            let whole = dist.block_distortion(&v, &w).unwrap();
            let da = dist.block_distortion(&va, &wa).unwrap();
            let db = dist.block_distortion(&vb, &wb).unwrap();
            let stitched = (a as f64 * da + b as f64 * db) / (a + b) as f64;
            prop_assert!((whole - stitched).abs() < 1e-12);
            prop_assert!(whole >= 0.0);
        }

        #[test]
        fn distortion_symmetric_iff_matrix_symmetric(
            pair in proptest::collection::vec((0u16..2, 0u16..2), 1..20),
        ) {
            let (vs, ws): (Vec<u16>, Vec<u16>) = pair.into_iter().unzip();
            let v = SequenceSample::new(vs);
            let w = SequenceSample::new(ws);
            let sym = DistortionSpec::hamming(2);
            prop_assert_eq!(
                sym.block_distortion(&v, &w).unwrap(),
                sym.block_distortion(&w, &v).unwrap()
            );
        }
    }
}
