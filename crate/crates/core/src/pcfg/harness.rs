use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    generate_task, search, GeneratorConfig, Grammar, PcfgError, PcfgTask, Program, Result, SearchLimits, SearchOutcome,
    Seq,
};
use crate::codec::{remap, unremap, Alphabet, TokenSeq};
use crate::models::{CompletionModel, CompletionRequest, ModelError};
use crate::util::{derive_seed, par_map};

/// Sequence lengths of the standard suite.
pub const STANDARD_KS: [usize; 6] = [1, 2, 4, 8, 16, 32];
/// Operator counts of the standard suite.
pub const STANDARD_WS: [usize; 6] = [0, 1, 3, 7, 15, 31];

const EXAMPLE_DELIMITER: &str = ";";
const IO_DELIMITER: &str = ",";

/// Generates `per_cell` tasks for every `(k, w)` with `w < k`.
pub fn suite(ks: &[usize], ws: &[usize], per_cell: usize, seed: u64, cfg: &GeneratorConfig) -> Result<Vec<PcfgTask>> {
    let mut tasks = Vec::new();
    for &k in ks {
        for &w in ws {
            if w >= k {
                continue;
            }
            for i in 0..per_cell {
                tasks.push(generate_task(k, w, derive_seed(seed, &[k as u64, w as u64, i as u64]), cfg)?);
            }
        }
    }
    Ok(tasks)
}

fn render(seq: &[u8], alphabet: Option<&Alphabet>) -> Result<String> {
    let tokens = TokenSeq::from_digits(seq);
    let tokens = match alphabet {
        Some(a) => remap(&tokens, a).map_err(|e| PcfgError::Domain(e.to_string()))?,
        None => tokens,
    };
    Ok(tokens.to_string())
}

/// `"<in>, <out>; <in>, <out>; <query>,"` with tokens space-separated.
pub fn build_prompt(task: &PcfgTask, alphabet: Option<&Alphabet>) -> Result<String> {
    let mut parts = Vec::with_capacity(task.examples.len() + 1);
    for (input, output) in &task.examples {
        parts.push(format!("{}{IO_DELIMITER} {}", render(input, alphabet)?, render(output, alphabet)?));
    }
    parts.push(format!("{}{IO_DELIMITER}", render(&task.query.0, alphabet)?));
    Ok(parts.join(&format!("{EXAMPLE_DELIMITER} ")))
}

/// Reads the predicted output sequence from a completion: everything up to
/// the first example delimiter or newline, unmapped through `alphabet`.
pub fn parse_completion(text: &str, alphabet: Option<&Alphabet>) -> Option<Seq> {
    let end = text.find([';', '\n']).unwrap_or(text.len());
    let body = text[..end].trim().trim_end_matches(',').trim();
    if body.is_empty() {
        return None;
    }
    let tokens = TokenSeq::parse(body).ok()?;
    let tokens = match alphabet {
        Some(a) => unremap(&tokens, a).ok()?,
        None => tokens,
    };
    tokens.to_digits()
}

/// Completion table for the oracle model: each task's prompt maps to its
/// true query output.
pub fn oracle_table(tasks: &[PcfgTask], alphabet: Option<&Alphabet>) -> Result<HashMap<String, String>> {
    tasks
        .iter()
        .map(|t| Ok((build_prompt(t, alphabet)?, format!(" {}{EXAMPLE_DELIMITER}", render(&t.query.1, alphabet)?))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfgRecord {
    pub task_id: String,
    pub k: usize,
    pub w: usize,
    pub model: String,
    pub prompt_chars: usize,
    pub completion: String,
    pub parsed: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccuracy {
    pub k: usize,
    pub w: usize,
    pub total: usize,
    pub correct: usize,
    pub errored: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfgReport {
    pub records: Vec<PcfgRecord>,
    pub cells: Vec<CellAccuracy>,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl PcfgReport {
    fn from_records(records: Vec<PcfgRecord>) -> Self {
        let mut cells: BTreeMap<(usize, usize), CellAccuracy> = BTreeMap::new();
        for r in &records {
            let c = cells.entry((r.k, r.w)).or_insert(CellAccuracy {
                k: r.k,
                w: r.w,
                total: 0,
                correct: 0,
                errored: 0,
                accuracy: 0.0,
            });
            c.total += 1;
            c.correct += r.correct as usize;
            c.errored += r.error.is_some() as usize;
        }
        let cells: Vec<CellAccuracy> = cells
            .into_values()
            .map(|mut c| {
                c.accuracy = 100.0 * c.correct as f64 / c.total as f64;
                c
            })
            .collect();
        let total = records.len();
        let correct = records.iter().filter(|r| r.correct).count();
        let accuracy = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
        PcfgReport { records, cells, total, correct, accuracy }
    }

    pub fn cell(&self, k: usize, w: usize) -> Option<&CellAccuracy> {
        self.cells.iter().find(|c| c.k == k && c.w == w)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub alphabet: Option<&'a Alphabet>,
    pub parallelism: usize,
    pub temperature: f64,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions { alphabet: None, parallelism: 1, temperature: 0.0 }
    }
}

/// Prompts `model` with every task and scores exact match of the query
/// output. Transport failures mark the task errored and unsolved.
pub fn evaluate(model: &dyn CompletionModel, tasks: &[PcfgTask], opts: &EvalOptions) -> Result<PcfgReport> {
    let prompts = tasks
        .iter()
        .map(|t| build_prompt(t, opts.alphabet))
        .collect::<Result<Vec<_>>>()?;
    let records = par_map(tasks, opts.parallelism, |i, task| {
        let prompt = &prompts[i];
        let request = CompletionRequest::new(prompt.clone(), 4 * (2 * task.k).max(16))
            .stop([EXAMPLE_DELIMITER, "\n"])
            .temperature(opts.temperature)
            .seed(task.seed);
        let result = model.complete(&request);
        let (completion, error) = match result {
            Ok(text) => (text, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        let parsed = parse_completion(&completion, opts.alphabet);
        let correct = parsed.as_ref() == Some(&task.query.1);
        PcfgRecord {
            task_id: task.id.clone(),
            k: task.k,
            w: task.w,
            model: model.name().to_string(),
            prompt_chars: prompt.chars().count(),
            completion,
            parsed: parsed.map(|p| TokenSeq::from_digits(&p).to_string()),
            correct,
            error,
        }
    });
    Ok(PcfgReport::from_records(records))
}

/// Runs the searcher on the task's examples and applies the program found
/// to the query input.
pub fn predict_with_search(task: &PcfgTask, grammar: &Grammar, limits: &SearchLimits) -> Option<Seq> {
    let solution = search(grammar, &task.examples, limits).ok()?.into_solution()?;
    grammar.run(&solution.program, &solution.partition, &task.query.0).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub task_id: String,
    pub k: usize,
    pub w: usize,
    /// `found`, `not_found` or `budget_exhausted`.
    pub outcome: String,
    pub program: Option<String>,
    pub partition: Option<Vec<usize>>,
    pub correct: bool,
}

/// Per cell: how often a consistent program was found, and how often it
/// also predicted the query output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveCell {
    pub k: usize,
    pub w: usize,
    pub total: usize,
    pub found: usize,
    pub correct: usize,
    pub found_rate: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub records: Vec<SolveRecord>,
    pub cells: Vec<SolveCell>,
}

impl SolveReport {
    pub fn cell(&self, k: usize, w: usize) -> Option<&SolveCell> {
        self.cells.iter().find(|c| c.k == k && c.w == w)
    }

    /// Query accuracy per cell, for [`render_table`].
    pub fn accuracy_cells(&self) -> Vec<CellAccuracy> {
        self.cells
            .iter()
            .map(|c| CellAccuracy { k: c.k, w: c.w, total: c.total, correct: c.correct, errored: 0, accuracy: c.accuracy })
            .collect()
    }
}

/// Runs the searcher on every task's examples and checks the program found
/// against the query.
pub fn solve_suite(tasks: &[PcfgTask], grammar: &Grammar, limits: &SearchLimits, parallelism: usize) -> SolveReport {
    let records = par_map(tasks, parallelism, |_, task| {
        let outcome = search(grammar, &task.examples, limits);
        let (label, solution) = match outcome {
            Ok(SearchOutcome::Found(s)) => ("found", Some(s)),
            Ok(SearchOutcome::NotFound) => ("not_found", None),
            Ok(SearchOutcome::BudgetExhausted) => ("budget_exhausted", None),
            Err(_) => ("not_found", None),
        };
        let correct = solution
            .as_ref()
            .and_then(|s| grammar.run(&s.program, &s.partition, &task.query.0).ok())
            .is_some_and(|p| p == task.query.1);
        SolveRecord {
            task_id: task.id.clone(),
            k: task.k,
            w: task.w,
            outcome: label.to_string(),
            program: solution.as_ref().map(|s| s.program.to_string()),
            partition: solution.map(|s| s.partition),
            correct,
        }
    });
    let mut cells: BTreeMap<(usize, usize), SolveCell> = BTreeMap::new();
    for r in &records {
        let c = cells.entry((r.k, r.w)).or_insert(SolveCell {
            k: r.k,
            w: r.w,
            total: 0,
            found: 0,
            correct: 0,
            found_rate: 0.0,
            accuracy: 0.0,
        });
        c.total += 1;
        c.found += (r.outcome == "found") as usize;
        c.correct += r.correct as usize;
    }
    let cells = cells
        .into_values()
        .map(|mut c| {
            c.found_rate = 100.0 * c.found as f64 / c.total as f64;
            c.accuracy = 100.0 * c.correct as f64 / c.total as f64;
            c
        })
        .collect();
    SolveReport { records, cells }
}

/// Accuracy table with one row per `k` and one column per `w`; cells
/// absent from the report print as `-`.
pub fn render_table(cells: &[CellAccuracy], ks: &[usize], ws: &[usize]) -> String {
    let mut out = format!("{:>4}", "k\\w");
    for w in ws {
        out.push_str(&format!("{w:>6}"));
    }
    out.push('\n');
    for &k in ks {
        out.push_str(&format!("{k:>4}"));
        for &w in ws {
            match cells.iter().find(|c| c.k == k && c.w == w) {
                Some(c) => out.push_str(&format!("{:>6.0}", c.accuracy)),
                None => out.push_str(&format!("{:>6}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

/// The completion model backed by the enumerative searcher. It reads the
/// examples back out of the prompt, so it works on any token alphabet.
#[derive(Debug, Clone, Default)]
pub struct SearcherModel {
    pub grammar: Grammar,
    pub limits: SearchLimits,
}

impl SearcherModel {
    fn answer(&self, prompt: &str) -> Option<String> {
        let body = prompt.trim_end();
        let body = body.strip_suffix(IO_DELIMITER)?;
        let mut parts: Vec<&str> = body.split(EXAMPLE_DELIMITER).collect();
        let query = parts.pop()?;
        let mut symbols: Vec<String> = Vec::new();
        let mut intern = |text: &str| -> Option<Seq> {
            text.split_whitespace()
                .map(|t| {
                    let i = symbols.iter().position(|s| s == t).unwrap_or_else(|| {
                        symbols.push(t.to_string());
                        symbols.len() - 1
                    });
                    u8::try_from(i).ok()
                })
                .collect()
        };
        let mut examples = Vec::new();
        for part in parts {
            let (input, output) = part.split_once(IO_DELIMITER)?;
            examples.push((intern(input)?, intern(output)?));
        }
        let query = intern(query)?;
        if examples.is_empty() {
            return None;
        }
        let solution = search(&self.grammar, &examples, &self.limits).ok()?.into_solution()?;
        let prediction = self.grammar.run(&solution.program, &solution.partition, &query).ok()?;
        let words: Vec<&str> = prediction.iter().map(|&i| symbols[i as usize].as_str()).collect();
        Some(format!(" {}", words.join(" ")))
    }
}

impl CompletionModel for SearcherModel {
    fn name(&self) -> &str {
        "pcfg_searcher"
    }

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, ModelError> {
        request.validate()?;
        Ok(self.answer(&request.prompt).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub input: String,
    pub output: String,
}

/// One line of a dataset file. `query_output` is present only in the
/// private split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub seed: u64,
    pub k: usize,
    pub w: usize,
    pub program: String,
    pub partition: Vec<usize>,
    pub examples: Vec<ExamplePair>,
    pub query_input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_output: Option<String>,
}

fn digits_text(seq: &[u8]) -> String {
    TokenSeq::from_digits(seq).to_string()
}

fn parse_digits(text: &str, id: &str) -> Result<Seq> {
    TokenSeq::parse(text)
        .ok()
        .and_then(|t| t.to_digits())
        .ok_or_else(|| PcfgError::Dataset(format!("{id}: {text:?} is not a digit sequence")))
}

impl DatasetRecord {
    pub fn from_task(task: &PcfgTask, private: bool) -> Self {
        DatasetRecord {
            id: task.id.clone(),
            seed: task.seed,
            k: task.k,
            w: task.w,
            program: task.program.to_string(),
            partition: task.partition.clone(),
            examples: task
                .examples
                .iter()
                .map(|(i, o)| ExamplePair { input: digits_text(i), output: digits_text(o) })
                .collect(),
            query_input: digits_text(&task.query.0),
            query_output: private.then(|| digits_text(&task.query.1)),
        }
    }

    /// Rebuilds the task, checking that the stored program reproduces every
    /// stored output.
    pub fn into_task(self, grammar: &Grammar) -> Result<PcfgTask> {
        let program: Program = self.program.parse()?;
        let query_output = self.query_output.as_deref().ok_or_else(|| {
            PcfgError::Dataset(format!("{}: no query_output (public split cannot be scored)", self.id))
        })?;
        let examples = self
            .examples
            .iter()
            .map(|e| Ok((parse_digits(&e.input, &self.id)?, parse_digits(&e.output, &self.id)?)))
            .collect::<Result<Vec<_>>>()?;
        let query = (parse_digits(&self.query_input, &self.id)?, parse_digits(query_output, &self.id)?);
        for (input, output) in examples.iter().chain(std::iter::once(&query)) {
            if &grammar.run(&program, &self.partition, input)? != output {
                return Err(PcfgError::Dataset(format!("{}: program does not reproduce a stored output", self.id)));
            }
        }
        Ok(PcfgTask { id: self.id, seed: self.seed, k: self.k, w: self.w, program, partition: self.partition, examples, query })
    }
}

pub fn write_dataset(path: &Path, tasks: &[PcfgTask], private: bool) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in tasks {
        serde_json::to_writer(&mut out, &DatasetRecord::from_task(t, private))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_dataset(path: &Path, grammar: &Grammar) -> Result<Vec<PcfgTask>> {
    let file = std::fs::File::open(path).map_err(|e| PcfgError::Dataset(format!("{}: {e}", path.display())))?;
    let mut tasks = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PcfgError::Dataset(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| PcfgError::Dataset(format!("{} line {}: {e}", path.display(), n + 1)))?;
        tasks.push(record.into_task(grammar)?);
    }
    Ok(tasks)
}
