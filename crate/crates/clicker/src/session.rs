use std::collections::VecDeque;

use gpm_core::codec::{CodecProfile, CLICKER_ACTION_DIMS};
use gpm_core::environments::{PushConfig, PushWorld};
use gpm_core::improve::{clicker_build_context, ClickTuple};
use gpm_core::models::{CompletionRequest, ModelKind, ModelSpec};
use gpm_core::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which tuple a click rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    /// The action executed at the most recent step boundary.
    #[default]
    CurrentStep,
    /// The action before that, for slow human reactions.
    PreviousStep,
}

impl Attribution {
    fn lag(self) -> usize {
        match self {
            Attribution::CurrentStep => 0,
            Attribution::PreviousStep => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Steps advance only on explicit `step` calls; no wall clock.
    pub batch: bool,
    pub seed: u64,
    /// Episodes driven by uniformly random actions before the model takes
    /// over.
    pub warmup_episodes: usize,
    /// Stop after this many episodes; run until reset when absent.
    pub max_episodes: Option<usize>,
    pub token_budget: usize,
    pub temperature: f64,
    pub attribution: Attribution,
    /// A model call slower than this falls back to a random action.
    pub model_timeout_ms: u64,
    pub model: ModelSpec,
    pub world: PushConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            batch: false,
            seed: 0,
            warmup_episodes: 2,
            max_episodes: None,
            token_budget: 1024,
            temperature: 0.7,
            attribution: Attribution::CurrentStep,
            model_timeout_ms: 10_000,
            model: ModelSpec::local(ModelKind::RandomPolicy),
            world: PushConfig::default(),
        }
    }
}

/// A rejected config, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let fail = |field: &str, message: &str| Err(FieldError { field: field.into(), message: message.into() });
        if self.token_budget < 16 {
            return fail("token_budget", "must be at least 16");
        }
        if !(self.temperature >= 0.0) {
            return fail("temperature", "must be non-negative");
        }
        if self.model_timeout_ms == 0 {
            return fail("model_timeout_ms", "must be positive");
        }
        if self.max_episodes == Some(0) {
            return fail("max_episodes", "must be at least 1");
        }
        if self.world.episode_steps == 0 {
            return fail("world.episode_steps", "must be at least 1");
        }
        if self.world.step_period_ms == 0 {
            return fail("world.step_period_ms", "must be positive");
        }
        if !(self.world.extent > 0.0) || !(self.world.step_scale > 0.0) {
            return fail("world", "extent and step_scale must be positive");
        }
        if matches!(self.model.kind, ModelKind::MockOracle | ModelKind::PcfgSearcher | ModelKind::PeriodRepeat) {
            return fail("model.kind", "clicker sessions take remote, mock_scripted or random_policy models");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    RandomWarmup,
    ModelDriven,
    Paused,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Random,
    Model,
    /// The model failed, timed out or answered with something unparsable.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub tuples: usize,
    pub rewarded: usize,
    /// Reward-1 tuples per episode, first episode first.
    pub rewarded_per_episode: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub phase: Phase,
    pub batch: bool,
    /// 1-based.
    pub episode: usize,
    /// Actions taken in the current episode.
    pub step: usize,
    pub total_steps: u64,
    pub step_period_ms: u64,
    pub effector: Vec<i64>,
    pub object: Vec<i64>,
    pub goal_center: [f64; 3],
    pub goal_radius: f64,
    pub object_in_goal: bool,
    pub last_action: Option<Vec<i64>>,
    pub action_source: Option<ActionSource>,
    /// The tuple a click would reward right now has already been clicked.
    pub pending_click: bool,
    pub history: HistorySummary,
    /// The prompt behind the last model-driven action.
    pub prompt: String,
    pub context_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionError {
    Paused,
    Done,
    /// The step was overtaken by a reset.
    Stale,
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionError::Paused => "session is paused",
            SessionError::Done => "session is done",
            SessionError::Stale => "step was overtaken by a reset",
        })
    }
}

impl std::error::Error for SessionError {}

/// How the next action will be chosen. The model request is run by the
/// caller without holding the session, then handed to
/// [`Session::finish_step`].
#[derive(Debug, Clone)]
pub enum Plan {
    Random,
    Model(CompletionRequest),
}

#[derive(Debug, Clone)]
pub struct PendingStep {
    epoch: u64,
    pub plan: Plan,
}

/// One clicker-training run: a push world, the labeled history and the
/// tuples still inside the click window.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    world: PushWorld,
    history: Vec<ClickTuple>,
    /// Executed tuples that a click can still reach, oldest first, with
    /// their episode number.
    open: VecDeque<(usize, ClickTuple)>,
    episode: usize,
    step: usize,
    total_steps: u64,
    running: bool,
    done: bool,
    rewarded_per_episode: Vec<usize>,
    last_action: Option<Vec<i64>>,
    action_source: Option<ActionSource>,
    prompt: String,
    context_per_class: usize,
    rng: ChaCha8Rng,
    epoch: u64,
    profile: CodecProfile,
}

impl Session {
    /// A new session starts paused at episode 1.
    pub fn new(id: String, config: SessionConfig) -> Self {
        let world = PushWorld::new(config.world.clone(), derive_seed(config.seed, &[1]));
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0]));
        Session {
            id,
            config,
            world,
            history: Vec::new(),
            open: VecDeque::new(),
            episode: 1,
            step: 0,
            total_steps: 0,
            running: false,
            done: false,
            rewarded_per_episode: vec![0],
            last_action: None,
            action_source: None,
            prompt: String::new(),
            context_per_class: 0,
            rng,
            epoch: 0,
            profile: CodecProfile::default(),
        }
    }

    pub fn phase(&self) -> Phase {
        if self.done {
            Phase::Done
        } else if !self.running {
            Phase::Paused
        } else if self.episode <= self.config.warmup_episodes {
            Phase::RandomWarmup
        } else {
            Phase::ModelDriven
        }
    }

    pub fn is_running(&self) -> bool {
        self.running && !self.done
    }

    pub fn history(&self) -> &[ClickTuple] {
        &self.history
    }

    pub fn world(&self) -> &PushWorld {
        &self.world
    }

    pub fn pause(&mut self) {
        self.running = false;
    }

    pub fn resume(&mut self) {
        self.running = true;
    }

    /// Back to episode 1 with an empty history; the session keeps running.
    pub fn reset(&mut self) {
        let (id, config) = (std::mem::take(&mut self.id), self.config.clone());
        let epoch = self.epoch + 1;
        *self = Session::new(id, config);
        self.epoch = epoch;
        self.running = true;
    }

    fn click_target(&mut self) -> Option<&mut ClickTuple> {
        let lag = self.config.attribution.lag();
        let n = self.open.len();
        if n > lag {
            Some(&mut self.open[n - 1 - lag].1)
        } else {
            None
        }
    }

    /// Marks the tuple in the click window as rewarded. Repeated clicks in
    /// one window change nothing. Returns whether a tuple was there to
    /// credit.
    pub fn click(&mut self) -> Result<bool, SessionError> {
        if self.done {
            return Err(SessionError::Done);
        }
        if !self.running {
            return Err(SessionError::Paused);
        }
        Ok(match self.click_target() {
            Some(t) => {
                t.reward = 1;
                true
            }
            None => false,
        })
    }

    fn pending_click(&self) -> bool {
        let lag = self.config.attribution.lag();
        let n = self.open.len();
        n > lag && self.open[n - 1 - lag].1.reward == 1
    }

    fn flush(&mut self, keep: usize) {
        while self.open.len() > keep {
            let (episode, tuple) = self.open.pop_front().expect("non-empty");
            if tuple.reward == 1 {
                self.rewarded_per_episode[episode - 1] += 1;
            }
            self.history.push(tuple);
        }
    }

    /// Step boundary: closes the click window of the oldest open tuple,
    /// starts a new episode if the last one ended, and plans the next
    /// action.
    pub fn begin_step(&mut self) -> Result<PendingStep, SessionError> {
        if self.done {
            return Err(SessionError::Done);
        }
        if !self.running {
            return Err(SessionError::Paused);
        }
        self.flush(self.config.attribution.lag());
        if self.world.episode_over() {
            self.flush(0);
            if self.config.max_episodes.is_some_and(|m| self.episode >= m) {
                self.done = true;
                return Err(SessionError::Done);
            }
            self.episode += 1;
            self.step = 0;
            self.rewarded_per_episode.push(0);
            self.world.reset(derive_seed(self.config.seed, &[self.episode as u64]));
        }
        let plan = if self.episode <= self.config.warmup_episodes {
            Plan::Random
        } else {
            let obs = self.world.observation();
            let ctx = clicker_build_context(&self.history, &obs, self.config.token_budget, &self.profile)
                .expect("push observations have six dims");
            self.prompt = ctx.prompt.clone();
            self.context_per_class = ctx.per_class;
            Plan::Model(
                CompletionRequest::new(ctx.prompt, 16)
                    .stop(["\n"])
                    .temperature(self.config.temperature)
                    .seed(derive_seed(self.config.seed, &[self.total_steps, 7])),
            )
        };
        Ok(PendingStep { epoch: self.epoch, plan })
    }

    fn random_action(&mut self) -> Vec<i64> {
        (0..CLICKER_ACTION_DIMS).map(|_| self.rng.random_range(0..=100)).collect()
    }

    /// Executes the planned action. `completion` is the model's answer for
    /// a model plan, or `None` if the call failed or timed out.
    pub fn finish_step(&mut self, pending: PendingStep, completion: Option<&str>) -> Result<(), SessionError> {
        if pending.epoch != self.epoch {
            return Err(SessionError::Stale);
        }
        if self.done {
            return Err(SessionError::Done);
        }
        let (action, source) = match pending.plan {
            Plan::Random => (self.random_action(), ActionSource::Random),
            Plan::Model(_) => match completion.and_then(parse_action) {
                Some(a) => (a, ActionSource::Model),
                None => (self.random_action(), ActionSource::Fallback),
            },
        };
        let observation = self.world.observation();
        self.world.step(&action).expect("actions are validated and the episode is open");
        self.open.push_back((self.episode, ClickTuple { reward: 0, observation, action: action.clone() }));
        self.step += 1;
        self.total_steps += 1;
        self.last_action = Some(action);
        self.action_source = Some(source);
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let obs = self.world.observation();
        Snapshot {
            id: self.id.clone(),
            phase: self.phase(),
            batch: self.config.batch,
            episode: self.episode,
            step: self.step,
            total_steps: self.total_steps,
            step_period_ms: self.config.world.step_period_ms,
            effector: obs[..3].to_vec(),
            object: obs[3..].to_vec(),
            goal_center: self.config.world.goal_center,
            goal_radius: self.config.world.goal_radius,
            object_in_goal: self.world.object_in_goal(),
            last_action: self.last_action.clone(),
            action_source: self.action_source,
            pending_click: self.pending_click(),
            history: HistorySummary {
                tuples: self.history.len(),
                rewarded: self.history.iter().filter(|t| t.reward == 1).count(),
                rewarded_per_episode: self.rewarded_per_episode.clone(),
            },
            prompt: self.prompt.clone(),
            context_per_class: self.context_per_class,
        }
    }
}

/// Three integers in 0..=100 before the first `;` or newline.
pub fn parse_action(text: &str) -> Option<Vec<i64>> {
    let end = text.find([';', '\n']).unwrap_or(text.len());
    let values: Option<Vec<i64>> = text[..end].split(',').map(|v| v.trim().parse().ok()).collect();
    values.filter(|v| v.len() == CLICKER_ACTION_DIMS && v.iter().all(|a| (0..=100).contains(a)))
}
