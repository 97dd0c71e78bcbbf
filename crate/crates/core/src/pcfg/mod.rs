//! Sequence-transformation tasks built from a small grammar of list
//! operators, with a generator, an exact-match harness and an enumerative
//! searcher used as an offline oracle.
//!
//! Sequences are digit lists. A program's leaves `s1..sm` refer to the
//! contiguous segments of the input produced by a *partition* of its
//! length, so `remove_second(reverse(s1), s2)` with partition `[2, 1]`
//! maps `5 3 0` to `3 5`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod generate;
mod harness;
mod search;

pub use generate::{generate_task, sample_composition, sample_program, GeneratorConfig, PcfgTask};
pub use harness::{
    build_prompt, evaluate, oracle_table, parse_completion, predict_with_search, read_dataset,
    render_table, solve_suite, suite, write_dataset, CellAccuracy, DatasetRecord, EvalOptions,
    ExamplePair, PcfgRecord, PcfgReport, SearcherModel, SolveCell, SolveRecord, SolveReport,
    STANDARD_KS, STANDARD_WS,
};
pub use search::{search, SearchLimits, SearchOutcome, Solution};

pub type Seq = Vec<u8>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PcfgError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("cannot parse program {text:?}: {reason}")]
    Syntax { text: String, reason: String },
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, PcfgError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarOp {
    Copy,
    Reverse,
    Shift,
    Swap,
    Repeat,
    Echo,
    Append,
    Prepend,
    RemoveFirst,
    RemoveSecond,
}

impl GrammarOp {
    pub const UNARY: [GrammarOp; 6] = [
        GrammarOp::Copy,
        GrammarOp::Reverse,
        GrammarOp::Shift,
        GrammarOp::Swap,
        GrammarOp::Repeat,
        GrammarOp::Echo,
    ];
    pub const BINARY: [GrammarOp; 4] =
        [GrammarOp::Append, GrammarOp::Prepend, GrammarOp::RemoveFirst, GrammarOp::RemoveSecond];

    pub fn arity(self) -> usize {
        if GrammarOp::UNARY.contains(&self) {
            1
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GrammarOp::Copy => "copy",
            GrammarOp::Reverse => "reverse",
            GrammarOp::Shift => "shift",
            GrammarOp::Swap => "swap",
            GrammarOp::Repeat => "repeat",
            GrammarOp::Echo => "echo",
            GrammarOp::Append => "append",
            GrammarOp::Prepend => "prepend",
            GrammarOp::RemoveFirst => "remove_first",
            GrammarOp::RemoveSecond => "remove_second",
        }
    }

    /// Output length as a function of argument lengths.
    pub fn output_len(self, a: usize, b: usize) -> usize {
        match self {
            GrammarOp::Copy | GrammarOp::Reverse | GrammarOp::Shift | GrammarOp::Swap => a,
            GrammarOp::Repeat => 2 * a,
            GrammarOp::Echo => a + 1,
            GrammarOp::Append | GrammarOp::Prepend => a + b,
            GrammarOp::RemoveFirst => b,
            GrammarOp::RemoveSecond => a,
        }
    }
}

impl fmt::Display for GrammarOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GrammarOp {
    type Err = PcfgError;

    fn from_str(s: &str) -> Result<Self> {
        GrammarOp::UNARY
            .iter()
            .chain(GrammarOp::BINARY.iter())
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| PcfgError::Syntax { text: s.into(), reason: "unknown operator".into() })
    }
}

/// Rotation direction of `shift`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    /// `a2 .. an a1`
    #[default]
    Left,
    /// `an a1 .. an-1`
    Right,
}

/// Operator semantics. The only free choice is the direction of `shift`;
/// generator, evaluator and searcher must share one `Grammar`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    #[serde(default)]
    pub shift: ShiftDirection,
}

impl Grammar {
    pub fn apply(&self, op: GrammarOp, args: &[&[u8]]) -> Result<Seq> {
        if args.len() != op.arity() {
            return Err(PcfgError::Structural(format!(
                "{op} takes {} argument(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        if op.arity() == 1 {
            let a = args[0];
            if a.is_empty() {
                return Err(PcfgError::Domain(format!("{op} of an empty sequence")));
            }
            return Ok(self.unary(op, a));
        }
        Ok(binary(op, args[0], args[1]))
    }

    /// `op` on a non-empty argument; no arity check.
    pub(crate) fn unary(&self, op: GrammarOp, a: &[u8]) -> Seq {
        let n = a.len();
        match op {
            GrammarOp::Copy => a.to_vec(),
            GrammarOp::Reverse => a.iter().rev().copied().collect(),
            GrammarOp::Shift => {
                let mut v = a.to_vec();
                match self.shift {
                    ShiftDirection::Left => v.rotate_left(1),
                    ShiftDirection::Right => v.rotate_right(1),
                }
                v
            }
            GrammarOp::Swap => {
                let mut v = a.to_vec();
                v.swap(0, n - 1);
                v
            }
            GrammarOp::Repeat => [a, a].concat(),
            GrammarOp::Echo => {
                let mut v = a.to_vec();
                v.push(a[n - 1]);
                v
            }
            _ => unreachable!("{op} is binary"),
        }
    }

    pub fn eval(&self, expr: &Expr, leaves: &[&[u8]]) -> Result<Seq> {
        match expr {
            Expr::Leaf(i) => {
                let leaf = leaves.get(*i).ok_or_else(|| {
                    PcfgError::Structural(format!("leaf s{} out of range (have {})", i + 1, leaves.len()))
                })?;
                if leaf.is_empty() {
                    return Err(PcfgError::Domain(format!("leaf s{} is empty", i + 1)));
                }
                Ok(leaf.to_vec())
            }
            Expr::Apply(op, args) => {
                let values = args.iter().map(|a| self.eval(a, leaves)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[u8]> = values.iter().map(Vec::as_slice).collect();
                self.apply(*op, &refs)
            }
        }
    }

    /// Evaluates `program` on `input` split by `partition`.
    pub fn run(&self, program: &Program, partition: &[usize], input: &[u8]) -> Result<Seq> {
        let leaves = split(input, partition)?;
        if leaves.len() != program.leaf_count() {
            return Err(PcfgError::Structural(format!(
                "program references {} leaves, partition has {}",
                program.leaf_count(),
                leaves.len()
            )));
        }
        self.eval(&program.root, &leaves)
    }
}

pub(crate) fn binary(op: GrammarOp, a: &[u8], b: &[u8]) -> Seq {
    match op {
        GrammarOp::Append => [a, b].concat(),
        GrammarOp::Prepend => [b, a].concat(),
        GrammarOp::RemoveFirst => b.to_vec(),
        GrammarOp::RemoveSecond => a.to_vec(),
        _ => unreachable!("{op} is unary"),
    }
}

/// Applies `op` with the default grammar (left shift).
pub fn apply_op(op: GrammarOp, args: &[&[u8]]) -> Result<Seq> {
    Grammar::default().apply(op, args)
}

/// Splits `input` into contiguous segments of the given lengths.
pub fn split<'a>(input: &'a [u8], partition: &[usize]) -> Result<Vec<&'a [u8]>> {
    if partition.iter().sum::<usize>() != input.len() || partition.contains(&0) {
        return Err(PcfgError::Structural(format!(
            "partition {partition:?} does not split a length-{} input into non-empty parts",
            input.len()
        )));
    }
    let mut out = Vec::with_capacity(partition.len());
    let mut rest = input;
    for &len in partition {
        let (head, tail) = rest.split_at(len);
        out.push(head);
        rest = tail;
    }
    Ok(out)
}

/// An expression over leaf segments. Leaves are zero-based internally and
/// printed one-based (`s1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Leaf(usize),
    Apply(GrammarOp, Vec<Expr>),
}

impl Expr {
    pub fn leaf(i: usize) -> Expr {
        Expr::Leaf(i)
    }

    pub fn unary(op: GrammarOp, a: Expr) -> Expr {
        debug_assert_eq!(op.arity(), 1);
        Expr::Apply(op, vec![a])
    }

    pub fn binary(op: GrammarOp, a: Expr, b: Expr) -> Expr {
        debug_assert_eq!(op.arity(), 2);
        Expr::Apply(op, vec![a, b])
    }

    pub fn op_count(&self) -> usize {
        match self {
            Expr::Leaf(_) => 0,
            Expr::Apply(_, args) => 1 + args.iter().map(Expr::op_count).sum::<usize>(),
        }
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Leaf(i) => out.push(*i),
            Expr::Apply(_, args) => args.iter().for_each(|a| a.collect_leaves(out)),
        }
    }

    /// Output length given leaf lengths.
    pub fn output_len(&self, leaf_lens: &[usize]) -> usize {
        match self {
            Expr::Leaf(i) => leaf_lens[*i],
            Expr::Apply(op, args) => {
                let a = args[0].output_len(leaf_lens);
                let b = args.get(1).map_or(0, |e| e.output_len(leaf_lens));
                op.output_len(a, b)
            }
        }
    }

    /// Function-call notation, e.g. `remove_second(reverse(s1), s2)`.
    pub fn call_notation(&self) -> String {
        match self {
            Expr::Leaf(i) => format!("s{}", i + 1),
            Expr::Apply(op, args) => format!(
                "{op}({})",
                args.iter().map(Expr::call_notation).collect::<Vec<_>>().join(", ")
            ),
        }
    }
}

impl fmt::Display for Expr {
    /// S-expression notation, e.g. `(remove_second (reverse s1) s2)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Leaf(i) => write!(f, "s{}", i + 1),
            Expr::Apply(op, args) => {
                write!(f, "({op}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A validated expression: every leaf `s1..sm` appears at least once and
/// operator arities are respected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    root: Expr,
    leaf_count: usize,
}

impl Program {
    pub fn new(root: Expr) -> Result<Self> {
        check_arity(&root)?;
        let mut leaves = Vec::new();
        root.collect_leaves(&mut leaves);
        leaves.sort_unstable();
        leaves.dedup();
        let leaf_count = leaves.len();
        if leaves.iter().enumerate().any(|(i, &l)| i != l) {
            return Err(PcfgError::Structural(format!(
                "leaves must be exactly s1..s{leaf_count}, found {}",
                leaves.iter().map(|l| format!("s{}", l + 1)).collect::<Vec<_>>().join(",")
            )));
        }
        Ok(Program { root, leaf_count })
    }

    pub fn identity() -> Self {
        Program { root: Expr::Leaf(0), leaf_count: 1 }
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn op_count(&self) -> usize {
        self.root.op_count()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }
}

fn check_arity(expr: &Expr) -> Result<()> {
    if let Expr::Apply(op, args) = expr {
        if args.len() != op.arity() {
            return Err(PcfgError::Structural(format!(
                "{op} takes {} argument(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        args.iter().try_for_each(check_arity)?;
    }
    Ok(())
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for Program {
    type Err = PcfgError;

    /// Parses s-expression notation.
    fn from_str(text: &str) -> Result<Self> {
        let spaced = text.replace('(', " ( ").replace(')', " ) ");
        let tokens: Vec<&str> = spaced.split_whitespace().collect();
        let mut pos = 0;
        let err = |reason: &str| PcfgError::Syntax { text: text.into(), reason: reason.into() };
        let expr = parse_expr(&tokens, &mut pos).map_err(|r| err(&r))?;
        if pos != tokens.len() {
            return Err(err("trailing input"));
        }
        Program::new(expr)
    }
}

fn parse_expr(tokens: &[&str], pos: &mut usize) -> std::result::Result<Expr, String> {
    let tok = *tokens.get(*pos).ok_or("unexpected end of input")?;
    *pos += 1;
    if tok == "(" {
        let name = *tokens.get(*pos).ok_or("missing operator")?;
        *pos += 1;
        let op: GrammarOp = name.parse().map_err(|_| format!("unknown operator {name:?}"))?;
        let mut args = Vec::new();
        while tokens.get(*pos) != Some(&")") {
            if *pos >= tokens.len() {
                return Err("unbalanced parentheses".into());
            }
            args.push(parse_expr(tokens, pos)?);
        }
        *pos += 1;
        Ok(Expr::Apply(op, args))
    } else if let Some(n) = tok.strip_prefix('s').and_then(|n| n.parse::<usize>().ok()) {
        if n == 0 {
            return Err("leaves are numbered from s1".into());
        }
        Ok(Expr::Leaf(n - 1))
    } else {
        Err(format!("unexpected token {tok:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use GrammarOp::*;

    fn un(op: GrammarOp, a: &[u8]) -> Seq {
        apply_op(op, &[a]).unwrap()
    }

    fn bin(op: GrammarOp, a: &[u8], b: &[u8]) -> Seq {
        apply_op(op, &[a, b]).unwrap()
    }

    #[test]
    fn operator_definitions() {
        assert_eq!(un(Reverse, &[1, 2, 3]), [3, 2, 1]);
        assert_eq!(un(Echo, &[5, 3]), [5, 3, 3]);
        assert_eq!(un(Repeat, &[7]), [7, 7]);
        assert_eq!(un(Swap, &[1, 2, 3, 4]), [4, 2, 3, 1]);
        assert_eq!(un(Shift, &[1, 2, 3]), [2, 3, 1]);
        assert_eq!(un(Copy, &[4, 4]), [4, 4]);
        assert_eq!(bin(RemoveFirst, &[9, 9], &[1]), [1]);
        assert_eq!(bin(RemoveSecond, &[9, 9], &[1]), [9, 9]);
        assert_eq!(bin(Prepend, &[1], &[2]), [2, 1]);
        assert_eq!(bin(Append, &[1], &[2]), [1, 2]);
        let right = Grammar { shift: ShiftDirection::Right };
        assert_eq!(right.apply(Shift, &[&[1, 2, 3]]).unwrap(), [3, 1, 2]);
    }

    #[test]
    fn operator_errors() {
        assert!(matches!(apply_op(Reverse, &[&[]]), Err(PcfgError::Domain(_))));
        assert!(matches!(apply_op(Append, &[&[1]]), Err(PcfgError::Structural(_))));
        assert_eq!(bin(Append, &[], &[1]), [1]);
    }

    #[test]
    fn evaluation() {
        let g = Grammar::default();
        let id = Program::identity();
        assert_eq!(g.eval(id.root(), &[&[4, 2]]).unwrap(), [4, 2]);

        let p: Program = "(remove_second (reverse s1) s2)".parse().unwrap();
        assert_eq!(g.eval(p.root(), &[&[5, 3], &[0]]).unwrap(), [3, 5]);
        assert_eq!(g.run(&p, &[2, 1], &[5, 3, 0]).unwrap(), [3, 5]);

        // append(s1, echo(s2)) on [1], [2,3]: echo -> [2,3,3], append -> [1,2,3,3]
        let q = Program::new(Expr::binary(Append, Expr::leaf(0), Expr::unary(Echo, Expr::leaf(1)))).unwrap();
        assert_eq!(g.eval(q.root(), &[&[1], &[2, 3]]).unwrap(), [1, 2, 3, 3]);

        assert!(matches!(g.eval(q.root(), &[&[1]]), Err(PcfgError::Structural(_))));
    }

    #[test]
    fn program_validation_and_notation() {
        let p: Program = "(remove_second (swap (append s1 s2)) s3)".parse().unwrap();
        assert_eq!(p.op_count(), 3);
        assert_eq!(p.leaf_count(), 3);
        assert_eq!(p.to_string(), "(remove_second (swap (append s1 s2)) s3)");
        assert_eq!(p.root().call_notation(), "remove_second(swap(append(s1, s2)), s3)");
        assert!("(reverse s2)".parse::<Program>().is_err());
        assert!("(reverse s1 s1)".parse::<Program>().is_err());
        assert!("(frobnicate s1)".parse::<Program>().is_err());
        assert!("(reverse s1".parse::<Program>().is_err());
        assert!("s0".parse::<Program>().is_err());
    }

    #[test]
    fn split_checks_partition() {
        assert_eq!(split(&[1, 2, 3], &[2, 1]).unwrap(), vec![&[1u8, 2][..], &[3][..]]);
        assert!(split(&[1, 2, 3], &[2, 2]).is_err());
        assert!(split(&[1, 2, 3], &[3, 0]).is_err());
    }

    proptest! {
        #[test]
        fn length_laws(a in prop::collection::vec(0u8..=9, 1..20), b in prop::collection::vec(0u8..=9, 1..20)) {
            for op in [Copy, Reverse, Shift, Swap] {
                prop_assert_eq!(un(op, &a).len(), a.len());
            }
            prop_assert_eq!(un(Echo, &a).len(), a.len() + 1);
            prop_assert_eq!(un(Repeat, &a).len(), 2 * a.len());
            prop_assert_eq!(bin(Append, &a, &b).len(), a.len() + b.len());
            prop_assert_eq!(bin(Prepend, &a, &b).len(), a.len() + b.len());
            prop_assert_eq!(bin(RemoveFirst, &a, &b).len(), b.len());
            prop_assert_eq!(bin(RemoveSecond, &a, &b).len(), a.len());
            for op in GrammarOp::UNARY {
                prop_assert_eq!(un(op, &a).len(), op.output_len(a.len(), 0));
            }
            for op in GrammarOp::BINARY {
                prop_assert_eq!(bin(op, &a, &b).len(), op.output_len(a.len(), b.len()));
            }
        }

        #[test]
        fn shift_directions_are_inverse(a in prop::collection::vec(0u8..=9, 1..20)) {
            let right = Grammar { shift: ShiftDirection::Right };
            let left = un(Shift, &a);
            prop_assert_eq!(right.apply(Shift, &[&left]).unwrap(), a);
        }
    }
}
