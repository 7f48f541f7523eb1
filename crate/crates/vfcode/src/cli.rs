//! Experiment configuration, CSV emission, and the five commands behind the
//! `vfcode` binary: `rd`, `simulate`, `sweep`, `tunstall`, `bounds`.
//!
//! Configs are flat `key = value` text with `#` comments. Every command is
//! a pure function of `(config, seed)`: output strings are assembled in a
//! fixed order with locale-independent, shortest round-trip number
//! formatting, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bounds::{converse_ln_m, fv_ln_m_approx, lossless_vf_rate};
use crate::exact::{chebyshev_error_bound, no_hit_probability, NoHitOptions};
use crate::matching::{InnerCode, Slack};
use crate::random_code::{run_trials, Codebook};
use crate::randomizer::{wrapped_stats, CoinSet, InnerHandle, WrapperParams};
use crate::rd::rd_at;
use crate::source::{DistortionSpec, SourceSpec};
use crate::tunstall::{parse_stream, ParseTree};
use crate::{Error, Result};

/// Monte Carlo feasibility guard: `ln M` above this cannot be materialized.
pub const LN_M_GUARD: f64 = 25.0;

/// A fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub src: SourceSpec,
    pub dist: DistortionSpec,
    /// Distortion levels; commands that need a single `D` require length 1.
    pub d: Vec<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n_grid: Vec<u64>,
    pub trials: u64,
    pub seed: Option<u64>,
    pub eta: f64,
    pub slack: Option<(f64, f64)>,
    pub exact_only: bool,
    pub m_grid: Vec<u64>,
    pub words: u64,
    pub b: Option<f64>,
    pub tol: f64,
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eta: Option<f64>,
    pub slack: Option<(f64, f64)>,
    pub exact_only: bool,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are fine.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn parse_slack_pair(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "slack must be two numbers `shift,cap`, got `{text}`"
        )));
    }
    let shift = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("bad slack shift `{}`", parts[0])))?;
    let cap = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("bad slack cap `{}`", parts[1])))?;
    Ok((shift, cap))
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    match map.get(key) {
        None => Ok(Vec::new()),
        Some(v) => v
            .split_whitespace()
            .map(|tok| {
                tok.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad entry in `{key}`: `{tok}`")))
            })
            .collect(),
    }
}

/// Reads a config file and applies command-line overrides (flags win).
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let map = parse_key_values(&text)?;
    let pmf = map
        .get("pmf")
        .ok_or_else(|| Error::Config("missing `pmf` key".into()))?;
    let src = SourceSpec::parse(pmf).map_err(|e| Error::Config(e.to_string()))?;
    let dist_text = map
        .get("dist")
        .ok_or_else(|| Error::Config("missing `dist` key".into()))?;
    let dist = DistortionSpec::parse(dist_text).map_err(|e| Error::Config(e.to_string()))?;
    if dist.n_source_symbols() != src.alphabet_size() {
        return Err(Error::Config(format!(
            "distortion matrix has {} rows for a {}-symbol source",
            dist.n_source_symbols(),
            src.alphabet_size()
        )));
    }
    let slack = match (&overrides.slack, map.get("slack")) {
        (Some(s), _) => Some(*s),
        (None, Some(text)) => Some(parse_slack_pair(text)?),
        (None, None) => None,
    };
    Ok(RunConfig {
        src,
        dist,
        d: parse_list(&map, "D")?,
        epsilon: parse_num(&map, "epsilon")?,
        delta: parse_num(&map, "delta")?,
        n_grid: parse_list(&map, "N")?,
        trials: parse_num(&map, "trials")?.unwrap_or(10_000),
        seed: overrides.seed.or(parse_num(&map, "seed")?),
        eta: overrides.eta.or(parse_num(&map, "eta")?).unwrap_or(1e-4),
        slack,
        exact_only: overrides.exact_only,
        m_grid: parse_list(&map, "M")?,
        words: parse_num(&map, "words")?.unwrap_or(200_000),
        b: parse_num(&map, "B")?,
        tol: parse_num(&map, "tol")?.unwrap_or(1e-9),
        out: overrides.out.clone().or_else(|| map.get("out").map(PathBuf::from)),
    })
}

/// Locale-independent full-precision formatting: shortest decimal string
/// that round-trips the value.
fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

fn require_single_d(cfg: &RunConfig) -> Result<f64> {
    match cfg.d.as_slice() {
        [d] => Ok(*d),
        [] => Err(Error::Config("missing `D` key".into())),
        _ => Err(Error::Config(
            "this command needs a single `D` value".into(),
        )),
    }
}

fn require_epsilon(cfg: &RunConfig) -> Result<f64> {
    cfg.epsilon
        .ok_or_else(|| Error::Config("missing `epsilon` key".into()))
}

fn require_seed(cfg: &RunConfig) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Error::Config("stochastic commands need `seed`".into()))
}

fn require_grid(cfg: &RunConfig) -> Result<&[u64]> {
    if cfg.n_grid.is_empty() {
        Err(Error::Config("missing `N` grid".into()))
    } else {
        Ok(&cfg.n_grid)
    }
}

/// Derives independent sub-seeds from the master seed (splitmix64 step).
fn split_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn slack_mode(cfg: &RunConfig) -> Slack {
    match cfg.slack {
        Some((shift, cap)) => Slack::Fixed { shift, cap },
        None => Slack::Schedule,
    }
}

fn slack_label(cfg: &RunConfig) -> String {
    match cfg.slack {
        Some((shift, cap)) => format!("{},{}", fmt(shift), fmt(cap)),
        None => "schedule".to_string(),
    }
}

/// `rd`: one CSV row per distortion level.
pub fn cmd_rd(cfg: &RunConfig) -> Result<String> {
    if cfg.d.is_empty() {
        return Err(Error::Config("missing `D` grid".into()));
    }
    let mut out = String::new();
    writeln!(out, "# command = rd").unwrap();
    writeln!(out, "# tol = {}", fmt(cfg.tol)).unwrap();
    writeln!(out, "D,rate,v_disp,d_var").unwrap();
    for &d in &cfg.d {
        let p = rd_at(&cfg.src, &cfg.dist, d, cfg.tol)?;
        writeln!(
            out,
            "{},{},{},{}",
            fmt(d),
            fmt(p.rate),
            fmt(p.v_disp),
            fmt(p.d_var)
        )
        .unwrap();
    }
    Ok(out)
}

/// `bounds`: comparator values per `N`.
pub fn cmd_bounds(cfg: &RunConfig) -> Result<String> {
    let d = require_single_d(cfg)?;
    let epsilon = require_epsilon(cfg)?;
    let grid = require_grid(cfg)?;
    let point = rd_at(&cfg.src, &cfg.dist, d, cfg.tol)?;
    let b = cfg.b.unwrap_or(2.0 * point.v_disp.sqrt());
    let mut out = String::new();
    writeln!(out, "# command = bounds").unwrap();
    writeln!(out, "# B = {}", fmt(b)).unwrap();
    writeln!(
        out,
        "N,epsilon,D,converse,fv_approx,achievable,theorem_rate_x_N"
    )
    .unwrap();
    for &n in grid {
        let nf = n as f64;
        let nprime = ((1.0 - epsilon) * nf).round();
        let inner = InnerCode::design(
            &cfg.src,
            &cfg.dist,
            d,
            nprime as usize,
            Slack::Schedule,
            cfg.tol,
        )?;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            n,
            fmt(epsilon),
            fmt(d),
            fmt(converse_ln_m(nf, epsilon, &point, b)?),
            fmt(fv_ln_m_approx(nf, epsilon, &point)?),
            fmt(inner.ln_m),
            fmt((1.0 - epsilon) * point.rate * nf)
        )
        .unwrap();
    }
    let _ = lossless_vf_rate(&cfg.src, epsilon.min(1.0 - 1e-12))?;
    Ok(out)
}

/// `sweep`: the headline table joining the exact analysis, the comparator
/// bounds, and the asymptotic rate across an `N` grid.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<String> {
    let d = require_single_d(cfg)?;
    let epsilon = require_epsilon(cfg)?;
    let grid = require_grid(cfg)?;
    let point = rd_at(&cfg.src, &cfg.dist, d, cfg.tol)?;
    let b = cfg.b.unwrap_or(2.0 * point.v_disp.sqrt());
    let opts = NoHitOptions {
        eta: cfg.eta,
        sample_seed: cfg.seed.unwrap_or(0),
        ..NoHitOptions::default()
    };
    let mut out = String::new();
    writeln!(out, "# command = sweep").unwrap();
    writeln!(out, "# B = {}", fmt(b)).unwrap();
    writeln!(out, "# eta = {}", fmt(cfg.eta)).unwrap();
    writeln!(
        out,
        "N,Nprime,lnM,rate_achievable,rate_converse,rate_fv,theorem_rate,q_lo,q_hi,nohit_lo,nohit_hi,cheby_bound"
    )
    .unwrap();
    for &n in grid {
        let nf = n as f64;
        let nprime = ((1.0 - epsilon) * nf).round() as usize;
        let inner = InnerCode::design(&cfg.src, &cfg.dist, d, nprime, Slack::Schedule, cfg.tol)?;
        let rule = inner.match_rule()?;
        let ty = crate::exact::TypeClass {
            counts: {
                let mut c = vec![0usize; cfg.src.alphabet_size()];
                let v0 = (0..cfg.src.alphabet_size())
                    .find(|&v| cfg.src.prob(v) > 0.0)
                    .expect("supported symbol");
                c[v0] = nprime;
                c
            },
            log_prob: 0.0,
        };
        let q = crate::exact::hit_probability(&ty, &rule, cfg.eta);
        let nohit = no_hit_probability(&cfg.src, &rule, nprime, inner.ln_m, &opts);
        let cheby = chebyshev_error_bound(&inner.shifted, nprime as f64, inner.threshold, inner.ln_m);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            n,
            nprime,
            fmt(inner.ln_m),
            fmt(inner.ln_m / nf),
            fmt(converse_ln_m(nf, epsilon, &point, b)? / nf),
            fmt(fv_ln_m_approx(nf, epsilon, &point)? / nf),
            fmt((1.0 - epsilon) * point.rate),
            fmt(q.q_lo),
            fmt(q.q_hi),
            fmt(nohit.lo),
            fmt(nohit.hi),
            fmt(cheby)
        )
        .unwrap();
    }
    Ok(out)
}

/// `simulate`: Monte Carlo of the inner code and of the wrapped code.
///
/// Emits two CSV blocks: per-`N` inner-code trial aggregates, then per-`N`
/// wrapper aggregates. With `exact_only` the Monte Carlo is replaced by the
/// exact per-`N` analysis (no codebook is ever materialized), which lifts
/// the `ln M <= 25` guard.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    let d = require_single_d(cfg)?;
    let epsilon = require_epsilon(cfg)?;
    let delta = cfg
        .delta
        .ok_or_else(|| Error::Config("missing `delta` key".into()))?;
    let grid = require_grid(cfg)?;
    let seed = require_seed(cfg)?;

    let mut out = String::new();
    writeln!(out, "# command = simulate").unwrap();
    writeln!(out, "# seed = {seed}").unwrap();
    writeln!(out, "# slack = {}", slack_label(cfg)).unwrap();
    writeln!(out, "# exact_only = {}", cfg.exact_only).unwrap();

    struct Row {
        n: u64,
        inner: InnerCode,
        params: WrapperParams,
    }
    let mut rows = Vec::new();
    for &n in grid {
        let params = WrapperParams::derive(n as f64, epsilon, delta)?;
        let inner = InnerCode::design(
            &cfg.src,
            &cfg.dist,
            d,
            params.nprime_len,
            slack_mode(cfg),
            cfg.tol,
        )?;
        if !cfg.exact_only && inner.ln_m > LN_M_GUARD {
            return Err(Error::FeasibilityGuard(format!(
                "lnM = {:.3} at N = {n} exceeds the Monte Carlo guard {LN_M_GUARD}; \
                 pass --exact-only or override the slack",
                inner.ln_m
            )));
        }
        rows.push(Row { n, inner, params });
    }

    if cfg.exact_only {
        let opts = NoHitOptions {
            eta: cfg.eta,
            sample_seed: seed,
            ..NoHitOptions::default()
        };
        writeln!(out, "# codebook = none (exact analysis)").unwrap();
        writeln!(out, "n,lnM,q_lo,q_hi,nohit_lo,nohit_hi,cheby_bound").unwrap();
        for row in &rows {
            let rule = row.inner.match_rule()?;
            let n = row.inner.n;
            let mut counts = vec![0usize; cfg.src.alphabet_size()];
            let v0 = (0..cfg.src.alphabet_size())
                .find(|&v| cfg.src.prob(v) > 0.0)
                .expect("supported symbol");
            counts[v0] = n;
            let q = crate::exact::hit_probability(
                &crate::exact::TypeClass {
                    counts,
                    log_prob: 0.0,
                },
                &rule,
                cfg.eta,
            );
            let nohit = no_hit_probability(&cfg.src, &rule, n, row.inner.ln_m, &opts);
            let cheby =
                chebyshev_error_bound(&row.inner.shifted, n as f64, row.inner.threshold, row.inner.ln_m);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                n,
                fmt(row.inner.ln_m),
                fmt(q.q_lo),
                fmt(q.q_hi),
                fmt(nohit.lo),
                fmt(nohit.hi),
                fmt(cheby)
            )
            .unwrap();
        }
        return Ok(out);
    }

    writeln!(out, "# codebook = fixed per seed, regenerated on demand past the cell budget").unwrap();
    writeln!(
        out,
        "n,lnM,D,threshold,trials,excess_rate,excess_ci,psi_hit_rate,mean_distortion,seed"
    )
    .unwrap();
    let mut wrapper_rows = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let salt = i as u64;
        let m = row.inner.ln_m.exp().ceil() as u64;
        let cb = Codebook::generate(
            split_seed(seed, salt * 4 + 1),
            m,
            row.inner.n,
            row.inner.shifted.channel.marginal(),
        )?;
        let rule = row.inner.match_rule()?;
        let stats = run_trials(&cfg.src, &rule, &cb, cfg.trials, split_seed(seed, salt * 4 + 2))?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.inner.n,
            fmt(row.inner.ln_m),
            fmt(d),
            fmt(row.inner.threshold),
            stats.trials,
            fmt(stats.excess_rate),
            fmt(stats.excess_ci),
            fmt(stats.psi_hit_rate),
            fmt(stats.mean_distortion),
            seed
        )
        .unwrap();

        let coin = CoinSet::build(
            &cfg.src,
            row.params.alpha,
            row.params.beta,
            row.params.coin_len_floor,
        )?;
        let handle = InnerHandle {
            codebook: &cb,
            rule: &rule,
            ln_m: row.inner.ln_m,
        };
        let wstats = wrapped_stats(
            &cfg.src,
            &row.params,
            &coin,
            &handle,
            cfg.trials,
            split_seed(seed, salt * 4 + 3),
        )?;
        wrapper_rows.push((row.n, row.params, coin.len(), coin.p(), wstats));
    }

    writeln!(out).unwrap();
    writeln!(
        out,
        "N,epsilon,delta,L,p,mean_tau,tau_lo,tau_hi,excess_rate,lnM,rate"
    )
    .unwrap();
    for (n, params, l, p, w) in wrapper_rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            n,
            fmt(params.epsilon),
            fmt(params.delta),
            l,
            fmt(p),
            fmt(w.mean_tau),
            fmt(w.tau_lo),
            fmt(w.tau_hi),
            fmt(w.excess_rate),
            fmt(w.ln_m),
            fmt(w.rate)
        )
        .unwrap();
    }
    Ok(out)
}

/// `tunstall`: dictionary statistics over an `M` grid.
pub fn cmd_tunstall(cfg: &RunConfig) -> Result<String> {
    if cfg.m_grid.is_empty() {
        return Err(Error::Config("missing `M` grid".into()));
    }
    let seed = require_seed(cfg)?;
    let entropy = cfg.src.entropy();
    let mut out = String::new();
    writeln!(out, "# command = tunstall").unwrap();
    writeln!(out, "# seed = {seed}").unwrap();
    writeln!(out, "# words = {}", cfg.words).unwrap();
    writeln!(out, "M,expected_len,empirical_len,rate,entropy,gap").unwrap();
    for (i, &m) in cfg.m_grid.iter().enumerate() {
        let tree = ParseTree::build(&cfg.src, m)?;
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64))
        };
        let stats = parse_stream(&tree, &cfg.src, cfg.words, &mut rng)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            m,
            fmt(tree.expected_len()),
            fmt(stats.mean_len),
            fmt(stats.rate),
            fmt(entropy),
            fmt(stats.rate - entropy)
        )
        .unwrap();
    }
    Ok(out)
}

/// Maps errors onto the documented process exit codes.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::FeasibilityGuard(_) => 3,
        Error::NonConvergence(_) => 4,
        _ => 2,
    }
}
