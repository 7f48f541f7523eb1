//! Lossless variable-to-fixed baseline: greedy parse trees.
//!
//! The dictionary is a complete `|V|`-ary tree with `M` leaves, grown by
//! repeatedly expanding the most probable leaf. Parsing walks the tree over
//! the source stream and emits one of `M` indices per completed word, so
//! the rate is `ln M / E[word length]`, which approaches the source entropy
//! as `M` grows.

use rand::Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::source::SourceSpec;
use crate::stats::mean_ci99;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Node {
    prob: f64,
    depth: u32,
    /// Index of the first of `|V|` contiguous children; `None` for leaves.
    first_child: Option<usize>,
}

/// A complete parse tree with exactly `M` leaves.
#[derive(Debug, Clone)]
pub struct ParseTree {
    nodes: Vec<Node>,
    branches: usize,
    m: u64,
    expected_len: f64,
}

struct Candidate {
    prob: f64,
    path: Vec<u16>,
    node: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.prob == other.prob && self.path == other.path
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on probability; ties go to the lexicographically
        // smallest path so the construction is reproducible.
        self.prob
            .partial_cmp(&other.prob)
            .unwrap()
            .then_with(|| other.path.cmp(&self.path))
    }
}

impl ParseTree {
    /// Greedy construction. `m` must be reachable by complete expansions:
    /// `m = |V| + k (|V| - 1)`, i.e. `m = 1 (mod |V| - 1)` for `|V| > 2`.
    pub fn build(src: &SourceSpec, m: u64) -> Result<Self> {
        let branches = src.alphabet_size();
        if branches < 2 {
            return Err(Error::Domain("parse trees need at least two symbols".into()));
        }
        if src.pmf().iter().any(|&p| p == 0.0) {
            return Err(Error::Domain(
                "parse trees need a source with no zero-probability symbol".into(),
            ));
        }
        let step = (branches - 1) as u64;
        let bv = branches as u64;
        if m < bv || (m - bv) % step != 0 {
            let k = if m < bv { 0 } else { (m - bv) / step };
            let below = bv + k * step;
            let above = below + step;
            return Err(Error::InfeasibleTreeSize {
                m,
                below: below.min(m.max(bv)),
                above,
            });
        }

        let mut nodes = vec![Node {
            prob: 1.0,
            depth: 0,
            first_child: None,
        }];
        let mut heap = BinaryHeap::new();
        heap.push(Candidate {
            prob: 1.0,
            path: Vec::new(),
            node: 0,
        });
        let mut leaves = 1u64;
        while leaves < m {
            let best = heap.pop().expect("tree always has a leaf");
            let first = nodes.len();
            nodes[best.node].first_child = Some(first);
            for s in 0..branches {
                let prob = best.prob * src.prob(s);
                let depth = nodes[best.node].depth + 1;
                nodes.push(Node {
                    prob,
                    depth,
                    first_child: None,
                });
                let mut path = best.path.clone();
                path.push(s as u16);
                heap.push(Candidate {
                    prob,
                    path,
                    node: first + s,
                });
            }
            leaves += step;
        }
        let expected_len = nodes
            .iter()
            .filter(|n| n.first_child.is_none())
            .map(|n| n.prob * n.depth as f64)
            .sum();
        Ok(Self {
            nodes,
            branches,
            m,
            expected_len,
        })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    /// Exact expected word length under the source.
    pub fn expected_len(&self) -> f64 {
        self.expected_len
    }

    /// `ln M / E[length]`, the exact per-symbol rate of the dictionary.
    pub fn rate(&self) -> f64 {
        (self.m as f64).ln() / self.expected_len
    }

    /// `(probability, depth)` of every leaf.
    pub fn leaves(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.first_child.is_none())
            .map(|n| (n.prob, n.depth))
    }

    /// Probabilities of the internal nodes.
    pub fn internal_probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.first_child.is_some())
            .map(|n| n.prob)
    }

    /// Parses one word off the stream, returning its length.
    pub fn parse_word<R: Rng + ?Sized>(&self, src: &SourceSpec, rng: &mut R) -> u32 {
        let mut node = 0usize;
        loop {
            match self.nodes[node].first_child {
                None => return self.nodes[node].depth,
                Some(first) => {
                    let s = src.sample_symbol(rng) as usize;
                    node = first + s;
                }
            }
        }
    }
}

/// Measured parsing statistics over complete words.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseStats {
    pub words: u64,
    pub symbols: u64,
    pub mean_len: f64,
    /// 99% confidence radius on the mean word length.
    pub len_ci: f64,
    /// `ln M / mean_len` from the measured mean.
    pub rate: f64,
}

/// Parses `words` complete words from an i.i.d. stream. Partial words at
/// the end of a fixed-length stream would be discarded anyway, so the walk
/// simply stops at a word boundary.
pub fn parse_stream<R: Rng + ?Sized>(
    tree: &ParseTree,
    src: &SourceSpec,
    words: u64,
    rng: &mut R,
) -> Result<ParseStats> {
    if words == 0 {
        return Err(Error::Domain("need at least one word".into()));
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut symbols = 0u64;
    for _ in 0..words {
        let len = tree.parse_word(src, rng) as f64;
        sum += len;
        sq += len * len;
        symbols += len as u64;
    }
    let (mean_len, len_ci) = mean_ci99(sum, sq, words);
    Ok(ParseStats {
        words,
        symbols,
        mean_len,
        len_ci,
        rate: (tree.m() as f64).ln() / mean_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_binary_full_tree() {
        let src = SourceSpec::uniform(2);
        let tree = ParseTree::build(&src, 4).unwrap();
        assert!((tree.expected_len() - 2.0).abs() < 1e-15);
        assert!((tree.rate() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn skewed_binary_m3() {
        let src = SourceSpec::bernoulli(0.1).unwrap(); // P(0) = 0.9
        let tree = ParseTree::build(&src, 3).unwrap();
        let mut leaves: Vec<(f64, u32)> = tree.leaves().collect();
        leaves.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Leaves 00, 01, 1 with probabilities 0.81, 0.09, 0.1.
        assert!((leaves[0].0 - 0.09).abs() < 1e-12);
        assert!((leaves[1].0 - 0.10).abs() < 1e-12);
        assert!((leaves[2].0 - 0.81).abs() < 1e-12);
        assert!((tree.expected_len() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn single_level_tree() {
        let src = SourceSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
        let tree = ParseTree::build(&src, 3).unwrap();
        assert!((tree.expected_len() - 1.0).abs() < 1e-15);
        assert!((tree.rate() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_size_names_neighbors() {
        let src = SourceSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
        match ParseTree::build(&src, 4) {
            Err(Error::InfeasibleTreeSize { m, below, above }) => {
                assert_eq!(m, 4);
                assert_eq!(below, 3);
                assert_eq!(above, 5);
            }
            other => panic!("expected infeasible size, got {other:?}"),
        }
        assert!(ParseTree::build(&src, 5).is_ok());
    }

    #[test]
    fn zero_probability_symbol_rejected() {
        let src = SourceSpec::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(ParseTree::build(&src, 5).is_err());
    }

    #[test]
    fn leaf_probs_sum_to_one_and_greedy_property() {
        for &(p, m) in &[(0.3, 64u64), (0.1, 129), (0.45, 1024)] {
            let src = SourceSpec::bernoulli(p).unwrap();
            let tree = ParseTree::build(&src, m).unwrap();
            let total: f64 = tree.leaves().map(|(pr, _)| pr).sum();
            assert!((total - 1.0).abs() < 1e-12, "m={m}: {total}");
            let min_internal = tree
                .internal_probs()
                .fold(f64::INFINITY, f64::min);
            let max_leaf = tree.leaves().map(|(pr, _)| pr).fold(0.0, f64::max);
            assert!(min_internal >= max_leaf - 1e-15);
        }
    }

    #[test]
    fn rate_never_below_entropy() {
        for &p in &[0.1, 0.3, 0.5] {
            let src = SourceSpec::bernoulli(p).unwrap();
            for &m in &[2u64, 16, 64, 256, 4096] {
                let tree = ParseTree::build(&src, m).unwrap();
                assert!(
                    tree.rate() >= src.entropy() - 1e-9,
                    "p={p} m={m}: rate {} < H {}",
                    tree.rate(),
                    src.entropy()
                );
            }
        }
    }

    #[test]
    fn rate_non_increasing_in_m() {
        let src = SourceSpec::bernoulli(0.3).unwrap();
        let rates: Vec<f64> = [16u64, 64, 256, 1024, 4096, 16384]
            .iter()
            .map(|&m| ParseTree::build(&src, m).unwrap().rate())
            .collect();
        for w in rates.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    /// Every complete binary tree shape with `m` leaves.
    enum Shape {
        Leaf,
        Node(Box<Shape>, Box<Shape>),
    }

    fn all_shapes(m: usize) -> Vec<Shape> {
        if m == 1 {
            return vec![Shape::Leaf];
        }
        let mut out = Vec::new();
        for l in 1..m {
            for left in all_shapes(l) {
                for right in all_shapes(m - l) {
                    out.push(Shape::Node(Box::new(clone(&left)), Box::new(clone(&right))));
                }
            }
        }
        out
    }

    fn clone(s: &Shape) -> Shape {
        match s {
            Shape::Leaf => Shape::Leaf,
            Shape::Node(l, r) => Shape::Node(Box::new(clone(l)), Box::new(clone(r))),
        }
    }

    fn expected_len(s: &Shape, prob: f64, depth: f64, probs: (f64, f64)) -> f64 {
        match s {
            Shape::Leaf => prob * depth,
            Shape::Node(l, r) => {
                expected_len(l, prob * probs.0, depth + 1.0, probs)
                    + expected_len(r, prob * probs.1, depth + 1.0, probs)
            }
        }
    }

    #[test]
    fn greedy_matches_brute_force_optimum() {
        for &p in &[0.3, 0.5, 0.8] {
            let src = SourceSpec::bernoulli(p).unwrap();
            for m in 2..=5u64 {
                let best = all_shapes(m as usize)
                    .iter()
                    .map(|s| expected_len(s, 1.0, 0.0, (1.0 - p, p)))
                    .fold(0.0, f64::max);
                let tree = ParseTree::build(&src, m).unwrap();
                assert!(
                    tree.expected_len() >= best - 1e-12,
                    "p={p} m={m}: greedy {} < best {best}",
                    tree.expected_len()
                );
            }
        }
    }

    #[test]
    fn parsing_matches_tree_statistics() {
        let src = SourceSpec::bernoulli(0.1).unwrap();
        let tree = ParseTree::build(&src, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = parse_stream(&tree, &src, 50_000, &mut rng).unwrap();
        assert!(
            (stats.mean_len - 1.9).abs() < 3.0 * stats.len_ci,
            "mean {} ci {}",
            stats.mean_len,
            stats.len_ci
        );

        // Uniform source with a power-of-two dictionary: every word has the
        // same length, so the measured rate is exactly ln 2.
        let u = SourceSpec::uniform(2);
        let full = ParseTree::build(&u, 1 << 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = parse_stream(&full, &u, 2_000, &mut rng).unwrap();
        assert_eq!(s.mean_len, 12.0);
        assert!((s.rate - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
