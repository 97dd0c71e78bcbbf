//! ARC-format grid tasks: loading, prompt construction, prediction parsing
//! and exact-match scoring.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_grid_with, encode_grid_with, Alphabet, CodecError, CodecProfile, Grid};
use crate::models::{CompletionModel, CompletionRequest};
use crate::util::{par_map, sha256_hex};

#[derive(Debug, Error)]
pub enum ArcError {
    #[error("{file}: {reason}")]
    Load { file: PathBuf, reason: String },
    #[error("io error on {file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("test index {index} out of range for task {task} ({count} tests)")]
    TestIndex { task: String, index: usize, count: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, ArcError>;

pub const MAX_SIDE: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub input: Grid,
    pub output: Grid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcTask {
    pub id: String,
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
}

fn check_grid(grid: &Grid, field: &str) -> std::result::Result<(), String> {
    let h = grid.len();
    let w = grid.first().map_or(0, Vec::len);
    if !(1..=MAX_SIDE).contains(&h) || !(1..=MAX_SIDE).contains(&w) {
        return Err(format!("{field}: size {h}x{w} outside 1x1..30x30"));
    }
    if let Some(r) = grid.iter().position(|row| row.len() != w) {
        return Err(format!("{field}: row {r} has {} cells, expected {w} (ragged grid)", grid[r].len()));
    }
    if grid.iter().flatten().any(|&v| v > 9) {
        return Err(format!("{field}: cell value outside 0-9"));
    }
    Ok(())
}

impl ArcTask {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.train.is_empty() {
            return Err("train: empty".into());
        }
        if self.test.is_empty() {
            return Err("test: empty".into());
        }
        for (split, pairs) in [("train", &self.train), ("test", &self.test)] {
            for (i, p) in pairs.iter().enumerate() {
                check_grid(&p.input, &format!("{split}[{i}].input"))?;
                check_grid(&p.output, &format!("{split}[{i}].output"))?;
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct TaskFile {
    train: Vec<Pair>,
    test: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suite {
    pub tasks: Vec<ArcTask>,
    /// sha256 over the sorted relative paths and bytes of every task file.
    pub corpus_hash: String,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|source| ArcError::Io { file: dir.to_path_buf(), source })?;
    for entry in entries {
        let path = entry.map_err(|source| ArcError::Io { file: dir.to_path_buf(), source })?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every `*.json` task under `dir` (recursively); ids are file stems.
pub fn load_suite(dir: &Path) -> Result<Suite> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut hasher_input = Vec::new();
    let mut tasks = Vec::with_capacity(files.len());
    for file in &files {
        let bytes = std::fs::read(file).map_err(|source| ArcError::Io { file: file.clone(), source })?;
        let rel = file.strip_prefix(dir).unwrap_or(file);
        hasher_input.extend_from_slice(rel.to_string_lossy().as_bytes());
        hasher_input.push(0);
        hasher_input.extend_from_slice(&bytes);
        let load_err = |reason: String| ArcError::Load { file: file.clone(), reason };
        let parsed: TaskFile = serde_json::from_slice(&bytes).map_err(|e| load_err(e.to_string()))?;
        let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let task = ArcTask { id, train: parsed.train, test: parsed.test };
        task.validate().map_err(load_err)?;
        tasks.push(task);
    }
    if tasks.is_empty() {
        log::warn!("no ARC task files under {}", dir.display());
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = tasks.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(ArcError::Load { file: dir.to_path_buf(), reason: format!("duplicate task id {}", w[0].id) });
    }
    Ok(Suite { tasks, corpus_hash: sha256_hex(&hasher_input) })
}

/// Train pairs as `input:` / grid / `output:` / grid / delimiter blocks,
/// then the chosen test input and an open `output:` header.
pub fn build_prompt(task: &ArcTask, test_index: usize, profile: &CodecProfile, alphabet: Option<&Alphabet>) -> Result<String> {
    let test = task.test.get(test_index).ok_or_else(|| ArcError::TestIndex {
        task: task.id.clone(),
        index: test_index,
        count: task.test.len(),
    })?;
    let nl = &profile.row_delimiter;
    let mut out = String::new();
    for pair in &task.train {
        out.push_str(&profile.input_header);
        out.push_str(nl);
        out.push_str(&encode_grid_with(&pair.input, profile, alphabet)?);
        out.push_str(nl);
        out.push_str(&profile.output_header);
        out.push_str(nl);
        out.push_str(&encode_grid_with(&pair.output, profile, alphabet)?);
        out.push_str(nl);
        out.push_str(&profile.example_delimiter);
        out.push_str(nl);
    }
    out.push_str(&profile.input_header);
    out.push_str(nl);
    out.push_str(&encode_grid_with(&test.input, profile, alphabet)?);
    out.push_str(nl);
    out.push_str(&profile.output_header);
    out.push_str(nl);
    Ok(out)
}

/// Reads grid rows up to the first blank line, example delimiter, header
/// or end of text.
pub fn parse_prediction(text: &str, profile: &CodecProfile, alphabet: Option<&Alphabet>) -> Result<Grid> {
    let mut rows = Vec::new();
    for line in text.split(profile.row_delimiter.as_str()) {
        let line = line.trim();
        if line.is_empty() && rows.is_empty() {
            continue;
        }
        if line.is_empty()
            || line.starts_with(profile.example_delimiter.as_str())
            || line.starts_with(profile.input_header.as_str())
            || line.starts_with(profile.output_header.as_str())
        {
            break;
        }
        rows.push(line);
    }
    Ok(decode_grid_with(&rows.join(&profile.row_delimiter), profile, alphabet)?)
}

/// Completion budget: two tokens per cell of the largest grid seen in the
/// prompt, plus one per row.
fn token_budget(task: &ArcTask, test_index: usize) -> usize {
    let grids = task.train.iter().flat_map(|p| [&p.input, &p.output]).chain([&task.test[test_index].input]);
    let (h, w) = grids.fold((1, 1), |(h, w), g| (h.max(g.len()), w.max(g[0].len())));
    2 * (h * w + h)
}

pub fn oracle_table(tasks: &[ArcTask], profile: &CodecProfile, alphabet: Option<&Alphabet>) -> Result<HashMap<String, String>> {
    let mut table = HashMap::new();
    for task in tasks {
        for (i, pair) in task.test.iter().enumerate() {
            let answer = encode_grid_with(&pair.output, profile, alphabet)?;
            table.insert(build_prompt(task, i, profile, alphabet)?, format!("{answer}{}", profile.row_delimiter));
        }
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct ArcEvalOptions<'a> {
    pub profile: CodecProfile,
    pub alphabet: Option<&'a Alphabet>,
    pub alphabet_seed: Option<u64>,
    pub parallelism: usize,
    /// Predictions per test input; a test counts as solved if any matches.
    pub candidates: usize,
    pub temperature: f64,
}

impl Default for ArcEvalOptions<'_> {
    fn default() -> Self {
        ArcEvalOptions {
            profile: CodecProfile::default(),
            alphabet: None,
            alphabet_seed: None,
            parallelism: 1,
            candidates: 1,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_index: usize,
    pub completions: Vec<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transport_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub task_id: String,
    pub model: String,
    pub solved: bool,
    pub errored: bool,
    pub tests: Vec<TestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    pub solved: usize,
    pub total: usize,
    pub corpus_hash: String,
    pub alphabet_seed: Option<u64>,
    pub records: Vec<ArcRecord>,
}

/// A task is solved when every test output is predicted exactly.
pub fn run_eval(model: &dyn CompletionModel, suite: &Suite, opts: &ArcEvalOptions) -> Result<ArcReport> {
    let prompts = suite
        .tasks
        .iter()
        .map(|t| (0..t.test.len()).map(|i| build_prompt(t, i, &opts.profile, opts.alphabet)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let records = par_map(&suite.tasks, opts.parallelism, |ti, task| {
        let tests: Vec<TestRecord> = task
            .test
            .iter()
            .enumerate()
            .map(|(i, pair)| {
                let mut record = TestRecord {
                    test_index: i,
                    completions: Vec::new(),
                    correct: false,
                    parse_errors: Vec::new(),
                    transport_errors: Vec::new(),
                };
                for c in 0..opts.candidates.max(1) {
                    let request = CompletionRequest::new(prompts[ti][i].clone(), token_budget(task, i))
                        .stop([opts.profile.example_delimiter.as_str()])
                        .temperature(opts.temperature)
                        .seed(c as u64);
                    match model.complete(&request) {
                        Ok(text) => {
                            match parse_prediction(&text, &opts.profile, opts.alphabet) {
                                Ok(grid) => record.correct |= grid == pair.output,
                                Err(e) => record.parse_errors.push(e.to_string()),
                            }
                            record.completions.push(text);
                        }
                        Err(e) => record.transport_errors.push(e.to_string()),
                    }
                }
                record
            })
            .collect();
        ArcRecord {
            task_id: task.id.clone(),
            model: model.name().to_string(),
            solved: tests.iter().all(|t| t.correct),
            errored: tests.iter().any(|t| !t.transport_errors.is_empty()),
            tests,
        }
    });
    Ok(ArcReport {
        solved: records.iter().filter(|r| r.solved).count(),
        total: records.len(),
        corpus_hash: suite.corpus_hash.clone(),
        alphabet_seed: opts.alphabet_seed,
        records,
    })
}
