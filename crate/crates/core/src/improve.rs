//! Return-conditioned trajectory improvement: a reward-sorted buffer of
//! encoded trajectories, context construction under a token budget, the
//! online episode loop with relabeling, offline marker extrapolation and
//! clicker context assembly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_clicker_query, encode_clicker_tuple, encode_obs_actions, estimate_tokens, CodecError, CodecProfile, Step};
use crate::environments::{marker_build_context, EnvError, Environment, MarkerScene, MARKER_FRACTIONS, MARKER_STEPS};
use crate::models::{CompletionModel, CompletionRequest, TokenCounter};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum ImproveError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, ImproveError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajRecord {
    pub reward: i64,
    /// Encoded trajectory without the reward prefix.
    pub body: String,
    pub steps: usize,
    pub env: String,
    /// Seed the environment was reset with, so the body can be replayed.
    pub seed: u64,
    /// Insertion counter, assigned by the buffer.
    pub seq: u64,
    pub fallbacks: usize,
    pub transport_failed: bool,
    #[serde(skip)]
    body_tokens: usize,
}

impl TrajRecord {
    pub fn new(reward: i64, body: impl Into<String>, steps: usize, env: impl Into<String>, seed: u64) -> Self {
        let body = body.into();
        TrajRecord {
            reward,
            body_tokens: estimate_tokens(&body),
            body,
            steps,
            env: env.into(),
            seed,
            seq: 0,
            fallbacks: 0,
            transport_failed: false,
        }
    }

    pub fn line(&self, with_reward: bool, profile: &CodecProfile) -> String {
        if with_reward {
            format!("{}{}{}", self.reward, profile.reward_delimiter, self.body)
        } else {
            self.body.clone()
        }
    }
}

/// Records kept in ascending reward order; equal rewards stay in insertion
/// order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    records: Vec<TrajRecord>,
    next_seq: u64,
}

impl Buffer {
    pub fn new() -> Self {
        Buffer::default()
    }

    /// Returns the insertion counter given to the record.
    pub fn insert(&mut self, mut record: TrajRecord) -> u64 {
        let seq = self.next_seq;
        record.seq = seq;
        self.next_seq += 1;
        if record.body_tokens == 0 {
            record.body_tokens = estimate_tokens(&record.body);
        }
        let at = self.records.partition_point(|r| r.reward <= record.reward);
        self.records.insert(at, record);
        seq
    }

    pub fn records(&self) -> &[TrajRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_reward(&self) -> Option<i64> {
        self.records.last().map(|r| r.reward)
    }

    pub fn is_sorted(&self) -> bool {
        self.records.windows(2).all(|w| w[0].reward <= w[1].reward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Ascending reward, reward-prefixed.
    #[default]
    SortedAsc,
    /// Random order, reward-prefixed.
    Shuffled,
    /// Ascending reward with the reward prefix removed.
    SortedNoRewards,
    /// Insertion order, reward-prefixed.
    UnsortedWithRewards,
}

impl Ordering {
    pub const ALL: [Ordering; 4] =
        [Ordering::SortedAsc, Ordering::Shuffled, Ordering::SortedNoRewards, Ordering::UnsortedWithRewards];

    pub fn shows_rewards(self) -> bool {
        self != Ordering::SortedNoRewards
    }
}

impl std::str::FromStr for Ordering {
    type Err = ImproveError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sorted_asc" => Ok(Ordering::SortedAsc),
            "shuffled" => Ok(Ordering::Shuffled),
            "sorted_no_rewards" => Ok(Ordering::SortedNoRewards),
            "unsorted_with_rewards" => Ok(Ordering::UnsortedWithRewards),
            _ => Err(ImproveError::Domain(format!("unknown ordering {s:?}"))),
        }
    }
}

/// Which records compete for room in the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    HighestReward,
    MostRecent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImproveConfig {
    pub token_budget: usize,
    pub target_offset_max: i64,
    pub ordering: Ordering,
    pub selection: Selection,
    pub retries_per_action: usize,
    pub temperature: f64,
    pub profile: CodecProfile,
    /// Counts tokens against `token_budget`.
    pub token_counter: TokenCounter,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        ImproveConfig {
            token_budget: 1024,
            target_offset_max: 20,
            ordering: Ordering::SortedAsc,
            selection: Selection::HighestReward,
            retries_per_action: 2,
            temperature: 0.7,
            profile: CodecProfile::default(),
            token_counter: TokenCounter::Heuristic,
        }
    }
}

impl ImproveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(ImproveError::Domain("token_budget must be positive".into()));
        }
        if self.target_offset_max < 1 {
            return Err(ImproveError::Domain("target_offset_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Best reward so far plus a uniform offset in `1..=target_offset_max`.
pub fn propose_target<R: Rng>(buffer: &Buffer, rng: &mut R, cfg: &ImproveConfig) -> Result<i64> {
    let max = buffer.max_reward().ok_or_else(|| ImproveError::Domain("cannot propose a target from an empty buffer".into()))?;
    if cfg.target_offset_max < 1 {
        return Err(ImproveError::Domain("target_offset_max must be at least 1".into()));
    }
    Ok(max + rng.random_range(1..=cfg.target_offset_max))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub prompt: String,
    /// Indices into the buffer's records, in prompt order.
    pub used: Vec<usize>,
    /// The buffer had records but none fit next to the trailer.
    pub truncated: bool,
    /// The trailer alone is over budget (it is never cut).
    pub over_budget: bool,
}

/// History lines chosen greedily (best first, per `cfg.selection`) while
/// the prompt stays within `cfg.token_budget`, arranged per `cfg.ordering`,
/// then the open trailer `<target>: <partial_body>`.
pub fn build_context<R: Rng>(buffer: &Buffer, cfg: &ImproveConfig, target: i64, partial_body: &str, rng: &mut R) -> Context {
    let p = &cfg.profile;
    let with_rewards = cfg.ordering.shows_rewards();
    let trailer = if with_rewards { format!("{target}{}{partial_body}", p.reward_delimiter) } else { partial_body.to_string() };
    let count = |text: &str| {
        cfg.token_counter.count(text).unwrap_or_else(|e| {
            log::warn!("token counter failed, using the estimate: {e}");
            estimate_tokens(text)
        })
    };
    let external = cfg.token_counter != TokenCounter::Heuristic;
    let trailer_tokens = count(&trailer);
    let newline_tokens = count(&p.row_delimiter);

    let mut candidates: Vec<usize> = (0..buffer.len()).collect();
    match cfg.selection {
        Selection::HighestReward => candidates.reverse(),
        Selection::MostRecent => candidates.sort_by_key(|&i| std::cmp::Reverse(buffer.records[i].seq)),
    }
    let mut used = Vec::new();
    let mut total = trailer_tokens;
    for i in candidates {
        let r = &buffer.records[i];
        let cost = if external {
            count(&r.line(with_rewards, p)) + newline_tokens
        } else {
            let prefix = if with_rewards { estimate_tokens(&format!("{}{}", r.reward, p.reward_delimiter)) } else { 0 };
            prefix + r.body_tokens + newline_tokens
        };
        if total + cost > cfg.token_budget {
            break;
        }
        total += cost;
        used.push(i);
    }

    let assemble = |used: &[usize]| {
        let mut lines: Vec<String> = used.iter().map(|&i| buffer.records[i].line(with_rewards, p)).collect();
        lines.push(trailer.clone());
        lines.join(&p.row_delimiter)
    };
    match cfg.ordering {
        Ordering::SortedAsc | Ordering::SortedNoRewards => used.sort_unstable(),
        Ordering::Shuffled => {
            used.sort_unstable();
            used.shuffle(rng);
        }
        Ordering::UnsortedWithRewards => used.sort_by_key(|&i| buffer.records[i].seq),
    }
    let mut prompt = assemble(&used);
    // The per-line estimate is additive for the default profile; re-check
    // the assembled text in case a custom profile breaks that.
    while count(&prompt) > cfg.token_budget && !used.is_empty() {
        let worst = (0..used.len()).min_by_key(|&k| (buffer.records[used[k]].reward, used[k])).expect("non-empty");
        used.remove(worst);
        prompt = assemble(&used);
    }
    Context {
        truncated: used.is_empty() && !buffer.is_empty(),
        over_budget: trailer_tokens > cfg.token_budget,
        prompt,
        used,
    }
}

/// First integer of the completion, split on whitespace and the step
/// delimiter.
pub fn parse_action(text: &str, profile: &CodecProfile) -> Option<i64> {
    let sep = profile.step_delimiter.trim();
    let first = text.split(|c: char| c.is_whitespace() || sep.contains(c) || c == ';').find(|t| !t.is_empty())?;
    first.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub record: TrajRecord,
    pub target: Option<i64>,
}

fn body_and_partial(steps: &[Step], profile: &CodecProfile) -> Result<String> {
    Ok(format!("{}{}", encode_obs_actions(steps, profile)?, profile.step_delimiter))
}

/// Plays one episode with actions drawn uniformly from `rng`.
pub fn random_episode<R: Rng>(env: &mut dyn Environment, seed: u64, rng: &mut R, profile: &CodecProfile) -> Result<TrajRecord> {
    let n = env.num_actions() as i64;
    play(env, seed, profile, |_, _| Ok(rng.random_range(1..=n))).map(|(r, _)| r)
}

fn play(
    env: &mut dyn Environment,
    seed: u64,
    profile: &CodecProfile,
    mut choose: impl FnMut(&[Step], usize) -> Result<i64>,
) -> Result<(TrajRecord, ())> {
    let mut obs = env.reset(seed);
    let mut steps = Vec::new();
    let mut ret = 0;
    loop {
        steps.push(Step::Obs(obs));
        let action = choose(&steps, steps.len() / 2)?;
        let tr = env.step(action)?;
        steps.push(Step::Act(action));
        ret += tr.reward;
        obs = tr.observation;
        if tr.terminal {
            break;
        }
    }
    let body = encode_obs_actions(&steps, profile)?;
    Ok((TrajRecord::new(ret, body, steps.len() / 2, env.tag(), seed), ()))
}

/// Runs one model-driven episode and inserts it into `buffer` labeled
/// with the return it actually earned.
///
/// Each step asks the model for the next action given the context and the
/// episode so far. Unparseable or illegal answers are retried, then
/// replaced by a random legal action. After a transport failure the rest
/// of the episode is random.
pub fn run_episode<R: Rng>(
    model: &dyn CompletionModel,
    env: &mut dyn Environment,
    buffer: &mut Buffer,
    cfg: &ImproveConfig,
    seed: u64,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    let target = propose_target(buffer, rng, cfg)?;
    let n = env.num_actions() as i64;
    let mut fallbacks = 0;
    let mut transport_failed = false;
    let stop = [cfg.profile.step_delimiter.trim().to_string(), cfg.profile.row_delimiter.clone()];
    let (mut record, ()) = play(env, seed, &cfg.profile, |steps, t| {
        if !transport_failed {
            let partial = body_and_partial(steps, &cfg.profile)?;
            let ctx = build_context(buffer, cfg, target, &partial, rng);
            for attempt in 0..=cfg.retries_per_action {
                let request = CompletionRequest::new(ctx.prompt.clone(), 4)
                    .stop(stop.clone())
                    .temperature(cfg.temperature)
                    .seed(derive_seed(seed, &[t as u64, attempt as u64]));
                match model.complete(&request) {
                    Ok(text) => match parse_action(&text, &cfg.profile) {
                        Some(a) if (1..=n).contains(&a) => return Ok(a),
                        _ => continue,
                    },
                    Err(e) => {
                        log::warn!("model call failed mid-episode, finishing with random actions: {e}");
                        transport_failed = true;
                        break;
                    }
                }
            }
        }
        fallbacks += 1;
        Ok(rng.random_range(1..=n))
    })?;
    record.fallbacks = fallbacks;
    record.transport_failed = transport_failed;
    record.seq = buffer.insert(record.clone());
    Ok(EpisodeOutcome { record, target: Some(target) })
}

/// Replays the actions of `record.body` from a reset with `record.seed`
/// and returns the total reward.
pub fn replay_return(env: &mut dyn Environment, record: &TrajRecord, profile: &CodecProfile) -> Result<i64> {
    let (_, steps) = crate::codec::decode_reward_obs_actions(&format!("0{}{}", profile.reward_delimiter, record.body), profile)?;
    env.reset(record.seed);
    let mut ret = 0;
    for s in steps {
        if let Step::Act(a) = s {
            ret += env.step(a)?.reward;
        }
    }
    Ok(ret)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub episodes: usize,
    pub warmup: usize,
    pub seed: u64,
    pub improve: ImproveConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { episodes: 50, warmup: 20, seed: 0, improve: ImproveConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub phase: Phase,
    pub target: Option<i64>,
    #[serde(rename = "return")]
    pub ret: i64,
    pub running_max: i64,
    pub fallback_count: usize,
    pub transport_failed: bool,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub model: String,
    pub env: String,
    pub seed: u64,
    pub rows: Vec<EpisodeRow>,
}

impl LearningCurve {
    pub fn to_jsonl(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
    }

    /// `episode,phase,return,running_max,fallback_count` per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,phase,return,running_max,fallback_count\n");
        for r in &self.rows {
            let phase = match r.phase {
                Phase::Warmup => "warmup",
                Phase::Model => "model",
            };
            out.push_str(&format!("{},{phase},{},{},{}\n", r.episode, r.ret, r.running_max, r.fallback_count));
        }
        out
    }

    pub fn model_rows(&self) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(|r| r.phase == Phase::Model)
    }
}

/// Seeds the buffer with `warmup` random episodes, then runs `episodes`
/// model-driven ones. Reproducible for a deterministic model.
pub fn run_online(model: &dyn CompletionModel, env: &mut dyn Environment, cfg: &OnlineConfig) -> Result<(LearningCurve, Buffer)> {
    if cfg.warmup == 0 {
        return Err(ImproveError::Domain("warmup must be at least 1".into()));
    }
    cfg.improve.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = Buffer::new();
    let mut rows = Vec::with_capacity(cfg.warmup + cfg.episodes);
    let mut running_max = i64::MIN;
    for i in 0..cfg.warmup + cfg.episodes {
        let seed = derive_seed(cfg.seed, &[i as u64]);
        let (record, target, phase) = if i < cfg.warmup {
            let record = random_episode(env, seed, &mut rng, &cfg.improve.profile)?;
            buffer.insert(record.clone());
            (record, None, Phase::Warmup)
        } else {
            let out = run_episode(model, env, &mut buffer, &cfg.improve, seed, &mut rng)?;
            (out.record, out.target, Phase::Model)
        };
        running_max = running_max.max(record.reward);
        rows.push(EpisodeRow {
            episode: i + 1,
            phase,
            target,
            ret: record.reward,
            running_max,
            fallback_count: record.fallbacks,
            transport_failed: record.transport_failed,
            body: record.body,
        });
    }
    let curve = LearningCurve { model: model.name().to_string(), env: env.tag().to_string(), seed: cfg.seed, rows };
    Ok((curve, buffer))
}

fn encode_states(states: &[Vec<i64>], profile: &CodecProfile) -> String {
    states
        .iter()
        .map(|s| s.iter().map(i64::to_string).collect::<Vec<_>>().join(&profile.dim_delimiter))
        .collect::<Vec<_>>()
        .join(&profile.step_delimiter)
}

/// States up to the first malformed one.
fn parse_states(text: &str, dims: usize, profile: &CodecProfile) -> Vec<Vec<i64>> {
    let line = text.lines().next().unwrap_or("");
    let mut out = Vec::new();
    for chunk in line.split(profile.step_delimiter.trim()).map(str::trim) {
        if chunk.is_empty() {
            continue;
        }
        let state: Option<Vec<i64>> = chunk.split_whitespace().map(|v| v.parse().ok()).collect();
        match state {
            Some(s) if s.len() == dims => out.push(s),
            _ => break,
        }
    }
    out
}

/// The context buffer for a scene: the full trajectory stopped at each of
/// the standard fractions.
pub fn marker_buffer(scene: &MarkerScene, profile: &CodecProfile) -> Result<Buffer> {
    let mut buffer = Buffer::new();
    for (reward, traj) in marker_build_context(&scene.full_trajectory(), scene, &MARKER_FRACTIONS)? {
        buffer.insert(TrajRecord::new(reward, encode_states(&traj, profile), traj.len(), "marker", 0));
    }
    Ok(buffer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerOutcome {
    pub prompt: String,
    pub completion: String,
    pub trajectory: Vec<Vec<i64>>,
    pub reward: i64,
    /// The completion had fewer than 50 states; the last one was held.
    pub padded: bool,
}

/// Prompts with the scene's context and `100: <start state>`, reads back a
/// 50-state trajectory and scores where it ends.
pub fn marker_improve<R: Rng>(model: &dyn CompletionModel, scene: &MarkerScene, cfg: &ImproveConfig, seed: u64, rng: &mut R) -> Result<MarkerOutcome> {
    let p = &cfg.profile;
    let buffer = marker_buffer(scene, p)?;
    let start = encode_states(&[scene.start.to_vec()], p);
    let ctx = build_context(&buffer, cfg, 100, &start, rng);
    let request = CompletionRequest::new(ctx.prompt.clone(), MARKER_STEPS * 4)
        .stop([p.row_delimiter.clone()])
        .temperature(cfg.temperature)
        .seed(seed);
    let completion = model.complete(&request).unwrap_or_else(|e| {
        log::warn!("marker completion failed: {e}");
        String::new()
    });
    let mut trajectory = parse_states(&format!("{start}{completion}"), 3, p);
    trajectory.truncate(MARKER_STEPS);
    for s in &mut trajectory {
        for v in s.iter_mut() {
            *v = (*v).clamp(0, scene.bin_hi);
        }
    }
    let padded = trajectory.len() < MARKER_STEPS;
    let last = trajectory.last().cloned().unwrap_or_else(|| scene.start.to_vec());
    trajectory.resize(MARKER_STEPS, last);
    let reward = scene.reward(&trajectory[MARKER_STEPS - 1]);
    Ok(MarkerOutcome { prompt: ctx.prompt, completion, trajectory, reward, padded })
}

/// What a perfect model completes after `100: <start>`.
pub fn marker_oracle_completion(scene: &MarkerScene, profile: &CodecProfile) -> String {
    let full = scene.full_trajectory();
    format!("{}{}", profile.step_delimiter, encode_states(&full[1..], profile))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickTuple {
    pub reward: u8,
    pub observation: Vec<i64>,
    pub action: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickerContext {
    pub prompt: String,
    /// Tuples of each reward in the context.
    pub per_class: usize,
}

/// The `n` most recent reward-0 tuples, then the `n` most recent reward-1
/// tuples (each group oldest first), then `1: <current observation>; `.
/// `n` is the largest count that keeps the prompt within `budget`; with no
/// reward-1 tuples only the trailer is emitted.
pub fn clicker_build_context(history: &[ClickTuple], current: &[i64], budget: usize, profile: &CodecProfile) -> Result<ClickerContext> {
    let trailer = encode_clicker_query(1, current, profile)?;
    let recent = |reward: u8| -> Vec<&ClickTuple> { history.iter().rev().filter(|t| t.reward == reward).collect() };
    let (neg, pos) = (recent(0), recent(1));
    let lines = |group: &[&ClickTuple], n: usize| -> Result<Vec<String>> {
        group[..n].iter().rev().map(|t| Ok(encode_clicker_tuple(t.reward, &t.observation, &t.action, profile)?)).collect()
    };
    let mut n = neg.len().min(pos.len());
    loop {
        let mut all = lines(&neg, n)?;
        all.extend(lines(&pos, n)?);
        all.push(trailer.clone());
        let prompt = all.join(&profile.row_delimiter);
        if n == 0 || estimate_tokens(&prompt) <= budget {
            return Ok(ClickerContext { prompt, per_class: n });
        }
        n -= 1;
    }
}
