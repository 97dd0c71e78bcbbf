use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Expr, Grammar, GrammarOp, PcfgError, Program, Result, Seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub max_leaves: usize,
    pub n_examples: usize,
    /// Cap on output length; programs exceeding it are resampled.
    /// `None` means `max(2k, 16)`.
    pub max_output_len: Option<usize>,
    pub max_attempts: usize,
    pub grammar: Grammar,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_leaves: 3,
            n_examples: 4,
            max_output_len: None,
            max_attempts: 10_000,
            grammar: Grammar::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn output_cap(&self, k: usize) -> usize {
        self.max_output_len.unwrap_or((2 * k).max(16))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcfgTask {
    pub id: String,
    pub seed: u64,
    pub k: usize,
    pub w: usize,
    pub program: Program,
    pub partition: Vec<usize>,
    pub examples: Vec<(Seq, Seq)>,
    pub query: (Seq, Seq),
}

/// A uniformly random composition of `k` into `m` positive parts.
pub fn sample_composition<R: Rng>(k: usize, m: usize, rng: &mut R) -> Vec<usize> {
    assert!(m >= 1 && m <= k, "cannot split {k} into {m} positive parts");
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, k - 1, m - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(m);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(k)) {
        parts.push(c - prev);
        prev = c;
    }
    parts
}

#[derive(Clone, Copy)]
enum Kind {
    Unary,
    Binary,
}

/// Builds a random tree whose pre-order operator kinds are `kinds`;
/// returns it with leaf slots numbered left to right.
fn build_shape<R: Rng>(kinds: &[Kind], rng: &mut R, next_slot: &mut usize) -> Shape {
    match kinds.split_first() {
        None => {
            *next_slot += 1;
            Shape::Slot(*next_slot - 1)
        }
        Some((Kind::Unary, rest)) => Shape::Unary(Box::new(build_shape(rest, rng, next_slot))),
        Some((Kind::Binary, rest)) => {
            let cut = rng.random_range(0..=rest.len());
            let left = build_shape(&rest[..cut], rng, next_slot);
            let right = build_shape(&rest[cut..], rng, next_slot);
            Shape::Binary(Box::new(left), Box::new(right))
        }
    }
}

enum Shape {
    Slot(usize),
    Unary(Box<Shape>),
    Binary(Box<Shape>, Box<Shape>),
}

fn fill<R: Rng>(shape: &Shape, labels: &[usize], rng: &mut R) -> Expr {
    match shape {
        Shape::Slot(i) => Expr::Leaf(labels[*i]),
        Shape::Unary(a) => {
            let op = GrammarOp::UNARY[rng.random_range(0..GrammarOp::UNARY.len())];
            Expr::unary(op, fill(a, labels, rng))
        }
        Shape::Binary(a, b) => {
            let op = GrammarOp::BINARY[rng.random_range(0..GrammarOp::BINARY.len())];
            let left = fill(a, labels, rng);
            Expr::binary(op, left, fill(b, labels, rng))
        }
    }
}

/// Samples a program with exactly `w` operators over `m` contiguous input
/// segments, and the partition of `k` defining those segments.
///
/// `m` is uniform over `1..=min(max_leaves, k, w + 1)`: every leaf must be
/// used, and `m` leaves need at least `m - 1` binary operators.
pub fn sample_program<R: Rng>(k: usize, w: usize, cfg: &GeneratorConfig, rng: &mut R) -> Result<(Program, Vec<usize>)> {
    if k == 0 {
        return Err(PcfgError::Domain("k must be at least 1".into()));
    }
    if cfg.max_leaves == 0 {
        return Err(PcfgError::Domain("max_leaves must be at least 1".into()));
    }
    let cap = cfg.output_cap(k);
    for _ in 0..cfg.max_attempts.max(1) {
        let m = rng.random_range(1..=cfg.max_leaves.min(k).min(w + 1));
        let mut kinds = Vec::with_capacity(w);
        let mut binaries = 0;
        for slot in 0..w {
            let needed = (m - 1).saturating_sub(binaries);
            let remaining = w - slot;
            let binary = if needed >= remaining { true } else { rng.random_bool(0.5) };
            if binary {
                binaries += 1;
            }
            kinds.push(if binary { Kind::Binary } else { Kind::Unary });
        }
        let mut slots = 0;
        let shape = build_shape(&kinds, rng, &mut slots);
        let mut labels: Vec<usize> = (0..m).chain((m..slots).map(|_| rng.random_range(0..m))).collect();
        labels.shuffle(rng);
        let root = fill(&shape, &labels, rng);
        let partition = sample_composition(k, m, rng);
        if root.output_len(&partition) > cap {
            continue;
        }
        return Ok((Program::new(root)?, partition));
    }
    Err(PcfgError::Domain(format!(
        "no program with {w} operators over {k} tokens fits the output cap of {cap} after {} attempts",
        cfg.max_attempts
    )))
}

/// Samples one program and `n_examples + 1` uniformly random inputs; the
/// last pair becomes the query.
pub fn generate_task(k: usize, w: usize, seed: u64, cfg: &GeneratorConfig) -> Result<PcfgTask> {
    if cfg.n_examples == 0 {
        return Err(PcfgError::Domain("n_examples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (program, partition) = sample_program(k, w, cfg, &mut rng)?;
    let mut pairs = Vec::with_capacity(cfg.n_examples + 1);
    for _ in 0..=cfg.n_examples {
        let input: Seq = (0..k).map(|_| rng.random_range(0..=9u8)).collect();
        let output = cfg.grammar.run(&program, &partition, &input)?;
        pairs.push((input, output));
    }
    let query = pairs.pop().expect("n_examples + 1 pairs");
    Ok(PcfgTask {
        id: format!("k{k}-w{w}-{seed:016x}"),
        seed,
        k,
        w,
        program,
        partition,
        examples: pairs,
        query,
    })
}
