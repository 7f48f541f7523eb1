//! # vfcode
//!
//! A workbench for **variable-to-fixed length lossy source coding**: codes
//! that map a source phrase to one of `M` fixed-size indices, stop after a
//! random number of symbols, and must keep the per-letter distortion of the
//! reconstruction below a budget `D` except with probability `epsilon`.
//!
//! The crate covers the whole experimental pipeline:
//!
//! | Module | What it does |
//! |--------|--------------|
//! | [`source`] | Finite-alphabet memoryless sources, separable distortion measures, sampling |
//! | [`rd`] | Blahut-Arimoto rate-distortion solver, test channels, dispersion quantities |
//! | [`matching`] | Multi-letter information density and the distortion/density hit rule |
//! | [`random_code`] | Seeded i.i.d. codebooks, max-index encoder, Monte Carlo trials |
//! | [`exact`] | Exact codebook-averaged no-hit probabilities in the log domain |
//! | [`randomizer`] | Biased-coin stopping-time wrapper trading code length for error |
//! | [`tunstall`] | Lossless variable-to-fixed baseline (greedy parse trees) |
//! | [`bounds`] | Computable converse and comparator formulas, Gaussian tail utilities |
//! | [`cli`] | Config parsing, CSV emission, and the `rd`/`simulate`/`sweep`/`tunstall`/`bounds` commands |
//!
//! All rates are in **nats** per source symbol. Codebook sizes are carried as
//! `ln M` (a real number) because realistic constructions put `M` far beyond
//! anything an integer can hold; `M` is only materialized in Monte Carlo mode
//! behind an explicit feasibility guard.
//!
//! Every stochastic routine takes an explicit seed and is deterministic given
//! it, so a rerun of any experiment reproduces its output byte for byte.
//!
//! ## Quick taste
//!
//! ```
//! use vfcode::source::{DistortionSpec, SourceSpec};
//! use vfcode::rd::rd_at;
//!
//! let src = SourceSpec::new(vec![0.5, 0.5]).unwrap();
//! let dist = DistortionSpec::hamming(2);
//! let point = rd_at(&src, &dist, 0.25, 1e-9).unwrap();
//! assert!((point.rate - 0.130812).abs() < 1e-6);
//! ```
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

use thiserror::Error;

pub mod bounds;
pub mod cli;
pub mod exact;
pub mod matching;
pub mod random_code;
pub mod randomizer;
pub mod rd;
pub mod source;
pub mod stats;
pub mod tunstall;

pub use bounds::BoundReport;
pub use exact::{HitProbInterval, TypeClass};
pub use matching::MatchRule;
pub use random_code::{Codebook, TrialRecord};
pub use randomizer::{CoinSet, WrapperParams};
pub use rd::{RdPoint, TestChannel};
pub use source::{DistortionSpec, SequenceSample, SourceSpec};
pub use tunstall::ParseTree;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("invalid distortion matrix: {0}")]
    InvalidDistortion(String),

    #[error("invalid test channel: {0}")]
    InvalidChannel(String),

    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("infeasible distortion: {0}")]
    InfeasibleDistortion(String),

    #[error("unreachable reproduction letter {0} (marginal probability is zero)")]
    UnreachableReproduction(usize),

    #[error("degenerate source cannot randomize (a symbol has probability one)")]
    DegenerateSource,

    #[error("infeasible dictionary size {m}: nearest feasible sizes are {below} and {above}")]
    InfeasibleTreeSize { m: u64, below: u64, above: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("feasibility guard: {0}")]
    FeasibilityGuard(String),
}

pub type Result<T> = std::result::Result<T, Error>;
