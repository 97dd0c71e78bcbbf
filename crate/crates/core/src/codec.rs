//! Text encodings for grids, digit sequences and trajectories.
//!
//! Every encoder here is bit-exact: prompts are built by concatenating the
//! output of these functions, and decoders accept exactly what the encoders
//! emit (plus trailing whitespace on each line).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Characters a token may never contain: they are the structural
/// punctuation of every prompt format.
pub const RESERVED_CHARS: [char; 4] = [',', '\n', ';', ':'];

const BUNDLED_POOL: &str = include_str!("../data/alphabet_pool.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at row {row} col {col}: {text:?}")]
    Parse { row: usize, col: usize, text: String },
    #[error("no mapping for token {0:?}")]
    Mapping(String),
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// A single atomic symbol of a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if is_valid_token(&text) {
            Ok(Token(text))
        } else {
            Err(CodecError::InvalidToken(text))
        }
    }

    pub fn digit(d: u8) -> Self {
        assert!(d <= 9, "digit out of range: {d}");
        Token(d.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The digit this token spells, if it is one of "0".."9".
    pub fn as_digit(&self) -> Option<u8> {
        match self.0.as_bytes() {
            [b @ b'0'..=b'9'] => Some(b - b'0'),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn is_valid_token(text: &str) -> bool {
    !text.is_empty()
        && !text.chars().any(|c| c.is_whitespace() || RESERVED_CHARS.contains(&c))
}

/// An ordered list of tokens, rendered space-separated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn from_digits(digits: &[u8]) -> Self {
        TokenSeq(digits.iter().map(|&d| Token::digit(d)).collect())
    }

    /// Splits on whitespace. Fails on any chunk that is not a valid token.
    pub fn parse(text: &str) -> Result<Self> {
        text.split_whitespace()
            .map(Token::new)
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    /// Returns the digits if every token is a single digit.
    pub fn to_digits(&self) -> Option<Vec<u8>> {
        self.0.iter().map(Token::as_digit).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

/// Delimiters used when rendering prompts.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecProfile {
    pub cell_delimiter: String,
    pub row_delimiter: String,
    pub example_delimiter: String,
    pub input_header: String,
    pub output_header: String,
    pub dim_delimiter: String,
    pub step_delimiter: String,
    pub reward_delimiter: String,
    pub part_delimiter: String,
}

impl Default for CodecProfile {
    fn default() -> Self {
        CodecProfile {
            cell_delimiter: ", ".into(),
            row_delimiter: "\n".into(),
            example_delimiter: "---".into(),
            input_header: "input:".into(),
            output_header: "output:".into(),
            dim_delimiter: " ".into(),
            step_delimiter: ", ".into(),
            reward_delimiter: ": ".into(),
            part_delimiter: "; ".into(),
        }
    }
}

impl CodecProfile {
    fn delimiters(&self) -> [&str; 9] {
        [
            &self.cell_delimiter,
            &self.row_delimiter,
            &self.example_delimiter,
            &self.input_header,
            &self.output_header,
            &self.dim_delimiter,
            &self.step_delimiter,
            &self.reward_delimiter,
            &self.part_delimiter,
        ]
    }

    /// True if `token` contains none of this profile's delimiters.
    pub fn is_token_safe(&self, token: &str) -> bool {
        self.delimiters().iter().all(|d| {
            let d = d.trim();
            d.is_empty() || !token.contains(d)
        })
    }
}

/// A partial bijection from digits to tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    forward: BTreeMap<u8, Token>,
    backward: HashMap<String, u8>,
}

impl Alphabet {
    pub fn new(pairs: impl IntoIterator<Item = (u8, Token)>) -> Result<Self> {
        let mut forward = BTreeMap::new();
        let mut backward = HashMap::new();
        for (digit, token) in pairs {
            if digit > 9 {
                return Err(CodecError::Domain(format!("digit {digit} outside 0-9")));
            }
            if backward.insert(token.0.clone(), digit).is_some() {
                return Err(CodecError::Config(format!(
                    "token {token:?} assigned to two digits"
                )));
            }
            if forward.insert(digit, token).is_some() {
                return Err(CodecError::Config(format!("digit {digit} mapped twice")));
            }
        }
        Ok(Alphabet { forward, backward })
    }

    /// Builds an alphabet from string pairs, validating every token.
    pub fn from_strs(pairs: &[(u8, &str)]) -> Result<Self> {
        let pairs = pairs
            .iter()
            .map(|&(d, t)| Token::new(t).map(|t| (d, t)))
            .collect::<Result<Vec<_>>>()?;
        Alphabet::new(pairs)
    }

    pub fn identity() -> Self {
        Alphabet::new((0..=9).map(|d| (d, Token::digit(d)))).expect("identity is bijective")
    }

    pub fn encode_digit(&self, digit: u8) -> Result<&Token> {
        self.forward
            .get(&digit)
            .ok_or_else(|| CodecError::Mapping(digit.to_string()))
    }

    pub fn decode_token(&self, token: &str) -> Result<u8> {
        self.backward
            .get(token)
            .copied()
            .ok_or_else(|| CodecError::Mapping(token.to_string()))
    }

    pub fn tokens(&self) -> impl Iterator<Item = (u8, &Token)> {
        self.forward.iter().map(|(d, t)| (*d, t))
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Checks every image token against the profile's delimiters.
    pub fn check_safe(&self, profile: &CodecProfile) -> Result<()> {
        for token in self.forward.values() {
            if !is_valid_token(&token.0) || !profile.is_token_safe(&token.0) {
                return Err(CodecError::InvalidToken(token.0.clone()));
            }
        }
        Ok(())
    }
}

/// The bundled candidate pool, one token per line.
pub fn bundled_pool() -> &'static [String] {
    static POOL: OnceLock<Vec<String>> = OnceLock::new();
    POOL.get_or_init(|| parse_pool(BUNDLED_POOL))
}

pub fn load_pool(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(parse_pool(&std::fs::read_to_string(path)?))
}

fn parse_pool(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn sample_alphabet(seed: u64, pool: &[String]) -> Result<Alphabet> {
    sample_alphabet_with(seed, pool, &CodecProfile::default())
}

/// Draws ten distinct tokens from `pool` without replacement. Candidates
/// that break the token rules or collide with a delimiter are dropped
/// first; duplicates are dropped keeping the first occurrence.
pub fn sample_alphabet_with(seed: u64, pool: &[String], profile: &CodecProfile) -> Result<Alphabet> {
    let mut seen = HashSet::new();
    let candidates: Vec<&String> = pool
        .iter()
        .filter(|t| is_valid_token(t) && profile.is_token_safe(t))
        .filter(|t| seen.insert(t.as_str()))
        .collect();
    if candidates.len() < 10 {
        return Err(CodecError::Config(format!(
            "alphabet pool has {} usable tokens, need at least 10",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, candidates.len(), 10);
    let alphabet = Alphabet::new(
        picks
            .iter()
            .enumerate()
            .map(|(d, i)| (d as u8, Token(candidates[i].clone()))),
    )?;
    alphabet.check_safe(profile)?;
    Ok(alphabet)
}

pub fn remap(seq: &TokenSeq, alphabet: &Alphabet) -> Result<TokenSeq> {
    seq.0
        .iter()
        .map(|t| {
            let d = t.as_digit().ok_or_else(|| CodecError::Mapping(t.0.clone()))?;
            alphabet.encode_digit(d).cloned()
        })
        .collect::<Result<Vec<_>>>()
        .map(TokenSeq)
}

pub fn unremap(seq: &TokenSeq, alphabet: &Alphabet) -> Result<TokenSeq> {
    seq.0
        .iter()
        .map(|t| alphabet.decode_token(&t.0).map(Token::digit))
        .collect::<Result<Vec<_>>>()
        .map(TokenSeq)
}

/// A rectangular grid of digits.
pub type Grid = Vec<Vec<u8>>;

fn check_grid(grid: &[Vec<u8>]) -> Result<()> {
    let width = grid
        .first()
        .map(Vec::len)
        .ok_or_else(|| CodecError::Structural("empty grid".into()))?;
    if width == 0 {
        return Err(CodecError::Structural("grid row 0 is empty".into()));
    }
    for (r, row) in grid.iter().enumerate() {
        if row.len() != width {
            return Err(CodecError::Structural(format!(
                "row {r} has {} cells, expected {width}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().position(|&v| v > 9) {
            return Err(CodecError::Domain(format!(
                "cell ({r}, {c}) = {} outside 0-9",
                row[c]
            )));
        }
    }
    Ok(())
}

pub fn encode_grid(grid: &[Vec<u8>], profile: &CodecProfile) -> Result<String> {
    encode_grid_with(grid, profile, None)
}

/// Row-major rendering; cells go through `alphabet` when one is given.
pub fn encode_grid_with(
    grid: &[Vec<u8>],
    profile: &CodecProfile,
    alphabet: Option<&Alphabet>,
) -> Result<String> {
    check_grid(grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for row in grid {
        let cells = row
            .iter()
            .map(|&v| match alphabet {
                Some(a) => a.encode_digit(v).map(|t| t.0.clone()),
                None => Ok(v.to_string()),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(cells.join(&profile.cell_delimiter));
    }
    Ok(rows.join(&profile.row_delimiter))
}

pub fn decode_grid(text: &str, profile: &CodecProfile) -> Result<Grid> {
    decode_grid_with(text, profile, None)
}

pub fn decode_grid_with(
    text: &str,
    profile: &CodecProfile,
    alphabet: Option<&Alphabet>,
) -> Result<Grid> {
    let mut lines: Vec<&str> = text.split(profile.row_delimiter.as_str()).map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(CodecError::Structural("empty grid".into()));
    }
    let mut grid = Vec::with_capacity(lines.len());
    for (r, line) in lines.iter().enumerate() {
        let mut row = Vec::new();
        for (c, cell) in split_cells(line, &profile.cell_delimiter).into_iter().enumerate() {
            let value = match alphabet {
                Some(a) => a.decode_token(cell).map_err(|_| parse_err(r, c, cell))?,
                None => cell.parse::<u8>().map_err(|_| parse_err(r, c, cell))?,
            };
            row.push(value);
        }
        grid.push(row);
    }
    check_grid(&grid)?;
    Ok(grid)
}

fn parse_err(row: usize, col: usize, text: &str) -> CodecError {
    CodecError::Parse { row, col, text: text.to_string() }
}

fn split_cells<'a>(line: &'a str, delimiter: &str) -> Vec<&'a str> {
    let sep = delimiter.trim();
    if sep.is_empty() {
        line.split_whitespace().collect()
    } else {
        line.split(sep).map(str::trim).collect()
    }
}

fn join_ints(values: &[i64], delimiter: &str) -> String {
    values.iter().map(i64::to_string).collect::<Vec<_>>().join(delimiter)
}

fn parse_ints(text: &str, delimiter: &str, row: usize) -> Result<Vec<i64>> {
    split_cells(text, delimiter)
        .into_iter()
        .enumerate()
        .map(|(c, v)| v.parse::<i64>().map_err(|_| parse_err(row, c, v)))
        .collect()
}

fn split_reward<'a>(text: &'a str, profile: &CodecProfile) -> Result<(i64, &'a str)> {
    let sep = profile.reward_delimiter.trim();
    let (head, body) = text
        .split_once(sep)
        .ok_or_else(|| CodecError::Structural(format!("missing reward delimiter in {text:?}")))?;
    let reward = head.trim().parse::<i64>().map_err(|_| parse_err(0, 0, head))?;
    Ok((reward, body.trim()))
}

/// `"<reward>: <s1>, <s2>, ..."`, dims space-joined inside each state.
pub fn encode_reward_states(reward: i64, states: &[Vec<i64>], profile: &CodecProfile) -> Result<String> {
    if let Some(first) = states.first() {
        if let Some(i) = states.iter().position(|s| s.len() != first.len()) {
            return Err(CodecError::Structural(format!(
                "state {i} has {} dims, expected {}",
                states[i].len(),
                first.len()
            )));
        }
    }
    let body = states
        .iter()
        .map(|s| join_ints(s, &profile.dim_delimiter))
        .collect::<Vec<_>>()
        .join(&profile.step_delimiter);
    Ok(format!("{reward}{}{body}", profile.reward_delimiter))
}

pub fn decode_reward_states(text: &str, profile: &CodecProfile) -> Result<(i64, Vec<Vec<i64>>)> {
    let (reward, body) = split_reward(text, profile)?;
    Ok((reward, decode_states(body, profile)?))
}

/// Parses a bare `s1, s2, ...` state list. A trailing step delimiter is
/// tolerated.
pub fn decode_states(body: &str, profile: &CodecProfile) -> Result<Vec<Vec<i64>>> {
    let sep = profile.step_delimiter.trim();
    let mut states = Vec::new();
    for (i, chunk) in body.split(sep).map(str::trim).enumerate() {
        if chunk.is_empty() {
            continue;
        }
        states.push(parse_ints(chunk, &profile.dim_delimiter, i)?);
    }
    if let Some(first) = states.first() {
        if states.iter().any(|s| s.len() != first.len()) {
            return Err(CodecError::Structural("states differ in dimension".into()));
        }
    }
    Ok(states)
}

/// One element of an observation/action trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Obs(Vec<i64>),
    Act(i64),
}

fn check_alternation(steps: &[Step]) -> Result<()> {
    for (i, step) in steps.iter().enumerate() {
        let expect_obs = i % 2 == 0;
        match (step, expect_obs) {
            (Step::Obs(_), true) | (Step::Act(_), false) => {}
            (Step::Act(_), true) if i == 0 => {
                return Err(CodecError::Structural("trajectory must start with an observation".into()))
            }
            (Step::Act(_), true) => {
                return Err(CodecError::Structural(format!("two consecutive actions at step {i}")))
            }
            (Step::Obs(_), false) => {
                return Err(CodecError::Structural(format!("two consecutive observations at step {i}")))
            }
        }
    }
    Ok(())
}

fn encode_steps(steps: &[Step], profile: &CodecProfile) -> Result<String> {
    check_alternation(steps)?;
    Ok(steps
        .iter()
        .map(|s| match s {
            Step::Obs(v) => join_ints(v, &profile.dim_delimiter),
            Step::Act(a) => a.to_string(),
        })
        .collect::<Vec<_>>()
        .join(&profile.step_delimiter))
}

/// `"<reward>: <obs>, <act>, <obs>, ..."`.
pub fn encode_reward_obs_actions(reward: i64, steps: &[Step], profile: &CodecProfile) -> Result<String> {
    Ok(format!("{reward}{}{}", profile.reward_delimiter, encode_steps(steps, profile)?))
}

/// Like [`encode_reward_obs_actions`], but for an episode still in
/// progress: the line ends with the step delimiter so the model's turn is
/// the next action.
pub fn encode_open_episode(reward: i64, steps: &[Step], profile: &CodecProfile) -> Result<String> {
    let mut line = encode_reward_obs_actions(reward, steps, profile)?;
    if !steps.is_empty() {
        line.push_str(&profile.step_delimiter);
    }
    Ok(line)
}

/// Observation/action body without the reward prefix.
pub fn encode_obs_actions(steps: &[Step], profile: &CodecProfile) -> Result<String> {
    encode_steps(steps, profile)
}

pub fn decode_reward_obs_actions(text: &str, profile: &CodecProfile) -> Result<(i64, Vec<Step>)> {
    let (reward, body) = split_reward(text, profile)?;
    let sep = profile.step_delimiter.trim();
    let mut steps = Vec::new();
    for (i, chunk) in body.split(sep).map(str::trim).enumerate() {
        if chunk.is_empty() {
            continue;
        }
        let values = parse_ints(chunk, &profile.dim_delimiter, i)?;
        if steps.len() % 2 == 0 {
            steps.push(Step::Obs(values));
        } else {
            match values.as_slice() {
                [a] => steps.push(Step::Act(*a)),
                _ => {
                    return Err(CodecError::Structural(format!(
                        "action at position {i} has {} values",
                        values.len()
                    )))
                }
            }
        }
    }
    Ok((reward, steps))
}

pub const CLICKER_OBS_DIMS: usize = 6;
pub const CLICKER_ACTION_DIMS: usize = 3;

/// `"<reward>: <obs comma-joined>; <action comma-joined>"`.
pub fn encode_clicker_tuple(
    reward: u8,
    observation: &[i64],
    action: &[i64],
    profile: &CodecProfile,
) -> Result<String> {
    if reward > 1 {
        return Err(CodecError::Domain(format!("clicker reward must be 0 or 1, got {reward}")));
    }
    check_dims(observation, action)?;
    Ok(format!(
        "{reward}{}{}{}{}",
        profile.reward_delimiter,
        join_ints(observation, &profile.cell_delimiter),
        profile.part_delimiter,
        join_ints(action, &profile.cell_delimiter)
    ))
}

/// The line that asks for an action: `"<reward>: <obs>; "`.
pub fn encode_clicker_query(reward: u8, observation: &[i64], profile: &CodecProfile) -> Result<String> {
    if observation.len() != CLICKER_OBS_DIMS {
        return Err(CodecError::Structural(format!(
            "observation has {} dims, expected {CLICKER_OBS_DIMS}",
            observation.len()
        )));
    }
    Ok(format!(
        "{reward}{}{}{}",
        profile.reward_delimiter,
        join_ints(observation, &profile.cell_delimiter),
        profile.part_delimiter
    ))
}

fn check_dims(observation: &[i64], action: &[i64]) -> Result<()> {
    if observation.len() != CLICKER_OBS_DIMS || action.len() != CLICKER_ACTION_DIMS {
        return Err(CodecError::Structural(format!(
            "clicker tuple needs {CLICKER_OBS_DIMS} observation and {CLICKER_ACTION_DIMS} action dims, got {} and {}",
            observation.len(),
            action.len()
        )));
    }
    Ok(())
}

pub fn decode_clicker_tuple(text: &str, profile: &CodecProfile) -> Result<(u8, Vec<i64>, Vec<i64>)> {
    let (reward, body) = split_reward(text, profile)?;
    if !(0..=1).contains(&reward) {
        return Err(CodecError::Domain(format!("clicker reward must be 0 or 1, got {reward}")));
    }
    let (obs, action) = body
        .split_once(profile.part_delimiter.trim())
        .ok_or_else(|| CodecError::Structural("missing observation/action separator".into()))?;
    let observation = parse_ints(obs.trim(), &profile.cell_delimiter, 0)?;
    let action = parse_ints(action.trim(), &profile.cell_delimiter, 1)?;
    check_dims(&observation, &action)?;
    Ok((reward as u8, observation, action))
}

/// Counts maximal runs of non-whitespace, with each of `, : ; \n` counted
/// as a unit of its own. An upper-bound proxy for model tokenizers that
/// needs no vocabulary.
pub fn estimate_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_run = false;
    for c in text.chars() {
        if RESERVED_CHARS.contains(&c) {
            count += 1;
            in_run = false;
        } else if c.is_whitespace() {
            in_run = false;
        } else if !in_run {
            count += 1;
            in_run = true;
        }
    }
    count
}
