//! Depth-bounded enumeration over grammar programs.
//!
//! Candidates are visited in a fixed total order: fewer operators first,
//! then partitions with fewer parts, then partitions lexicographically,
//! then programs by their s-expression text. The first program consistent
//! with every example wins, so a task whose examples are all identities is
//! always answered by `s1`.

use serde::{Deserialize, Serialize};

use super::{binary, Expr, Grammar, GrammarOp, PcfgError, Program, Result, Seq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchLimits {
    pub max_ops: usize,
    pub max_leaves: usize,
    /// Maximum number of candidate expressions built before giving up.
    pub node_budget: u64,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { max_ops: 3, max_leaves: 3, node_budget: 50_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub program: Program,
    pub partition: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchOutcome {
    Found(Solution),
    /// The whole space within the limits was searched without a match.
    NotFound,
    BudgetExhausted,
}

impl SearchOutcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            SearchOutcome::Found(s) => Some(s),
            _ => None,
        }
    }

    pub fn into_solution(self) -> Option<Solution> {
        match self {
            SearchOutcome::Found(s) => Some(s),
            _ => None,
        }
    }
}

struct Entry {
    expr: Expr,
    /// One output per example.
    outs: Vec<Seq>,
    len: usize,
    used: u32,
}

struct Budget {
    left: u64,
}

impl Budget {
    fn spend(&mut self) -> bool {
        if self.left == 0 {
            return false;
        }
        self.left -= 1;
        true
    }
}

/// All compositions of `k` into at most `max_parts` positive parts, ordered
/// by part count and then lexicographically.
pub(crate) fn partitions(k: usize, max_parts: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 1..=k - (parts - 1) {
            prefix.push(first);
            rec(k - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for parts in 1..=max_parts.min(k) {
        rec(k, parts, &mut Vec::new(), &mut out);
    }
    out
}

/// Finds the first program (in the order described in the module docs)
/// mapping every example input to its output.
pub fn search(grammar: &Grammar, examples: &[(Seq, Seq)], limits: &SearchLimits) -> Result<SearchOutcome> {
    let Some((first_in, _)) = examples.first() else {
        return Err(PcfgError::Domain("search needs at least one example".into()));
    };
    let k = first_in.len();
    if k == 0 {
        return Err(PcfgError::Domain("example inputs are empty".into()));
    }
    if let Some(i) = examples.iter().position(|(x, _)| x.len() != k) {
        return Err(PcfgError::Domain(format!(
            "example {i} has input length {}, expected {k}",
            examples[i].0.len()
        )));
    }
    if limits.max_leaves > 32 {
        return Err(PcfgError::Domain("max_leaves above 32 is not supported".into()));
    }
    let targets: Vec<&Seq> = examples.iter().map(|(_, y)| y).collect();
    let target_len = targets[0].len();
    if targets.iter().any(|t| t.len() != target_len) {
        // Output length depends only on the partition and the program.
        return Ok(SearchOutcome::NotFound);
    }
    let partitions = partitions(k, limits.max_leaves);
    let mut budget = Budget { left: limits.node_budget };
    for ops in 0..=limits.max_ops {
        for partition in &partitions {
            let m = partition.len();
            if m > ops + 1 {
                continue;
            }
            match search_at(grammar, examples, &targets, partition, ops, &mut budget) {
                Some(Ok(expr)) => {
                    let program = Program::new(expr)?;
                    return Ok(SearchOutcome::Found(Solution { program, partition: partition.clone() }));
                }
                Some(Err(())) => return Ok(SearchOutcome::BudgetExhausted),
                None => {}
            }
        }
    }
    Ok(SearchOutcome::NotFound)
}

/// Searches programs with exactly `ops` operators over `partition`.
/// `Some(Err(()))` signals budget exhaustion.
fn search_at(
    grammar: &Grammar,
    examples: &[(Seq, Seq)],
    targets: &[&Seq],
    partition: &[usize],
    ops: usize,
    budget: &mut Budget,
) -> Option<std::result::Result<Expr, ()>> {
    let m = partition.len();
    let full: u32 = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    let target_len = targets[0].len();

    let mut leaves = Vec::with_capacity(m);
    let mut offset = 0;
    for (i, &len) in partition.iter().enumerate() {
        let outs = examples.iter().map(|(x, _)| x[offset..offset + len].to_vec()).collect();
        leaves.push(Entry { expr: Expr::Leaf(i), outs, len, used: 1 << i });
        offset += len;
    }

    // banks[s] holds every expression with exactly s operators.
    let mut banks: Vec<Vec<Entry>> = vec![leaves];
    for size in 1..ops {
        let mut bank = Vec::new();
        let ok = grow(&banks, size, budget, &mut |op, args, len, used| {
            let outs = compute(grammar, op, args);
            bank.push(Entry { expr: Expr::Apply(op, args.iter().map(|a| a.expr.clone()).collect()), outs, len, used });
        });
        if !ok {
            return Some(Err(()));
        }
        banks.push(bank);
    }

    let mut best: Option<(String, Expr)> = None;
    let mut consider = |expr: Expr| {
        let text = expr.to_string();
        if best.as_ref().is_none_or(|(t, _)| text < *t) {
            best = Some((text, expr));
        }
    };
    if ops == 0 {
        for leaf in &banks[0] {
            if leaf.used == full && leaf.len == target_len && leaf.outs.iter().zip(targets).all(|(o, t)| o == *t) {
                consider(leaf.expr.clone());
            }
        }
    } else {
        let ok = grow(&banks, ops, budget, &mut |op, args, len, used| {
            if used != full || len != target_len {
                return;
            }
            let matches = (0..targets.len()).all(|e| apply_one(grammar, op, args, e) == *targets[e]);
            if matches {
                consider(Expr::Apply(op, args.iter().map(|a| a.expr.clone()).collect()));
            }
        });
        if !ok {
            return Some(Err(()));
        }
    }
    best.map(|(_, e)| Ok(e))
}

/// Visits every expression with exactly `size` operators whose children
/// come from `banks`. Returns false when the budget runs out.
fn grow(
    banks: &[Vec<Entry>],
    size: usize,
    budget: &mut Budget,
    visit: &mut dyn FnMut(GrammarOp, &[&Entry], usize, u32),
) -> bool {
    for a in &banks[size - 1] {
        for op in GrammarOp::UNARY {
            if !budget.spend() {
                return false;
            }
            visit(op, &[a], op.output_len(a.len, 0), a.used);
        }
    }
    for left_size in 0..size {
        let right_size = size - 1 - left_size;
        for a in &banks[left_size] {
            for b in &banks[right_size] {
                for op in GrammarOp::BINARY {
                    if !budget.spend() {
                        return false;
                    }
                    visit(op, &[a, b], op.output_len(a.len, b.len), a.used | b.used);
                }
            }
        }
    }
    true
}

fn apply_one(grammar: &Grammar, op: GrammarOp, args: &[&Entry], example: usize) -> Seq {
    match args {
        [a] => grammar.unary(op, &a.outs[example]),
        [a, b] => binary(op, &a.outs[example], &b.outs[example]),
        _ => unreachable!(),
    }
}

fn compute(grammar: &Grammar, op: GrammarOp, args: &[&Entry]) -> Vec<Seq> {
    (0..args[0].outs.len()).map(|e| apply_one(grammar, op, args, e)).collect()
}
