//! Function-extrapolation tasks: discretized sinusoids, whiteboard-style
//! loops and multi-dimensional motion traces, scored with dynamic time
//! warping against the held-out continuation.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecProfile;
use crate::models::{CompletionModel, CompletionRequest, ModelError};
use crate::util::{derive_seed, par_map};

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CompletionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `a sin(bx)`
    Sin,
    /// `a x sin(bx)`
    GrowSin,
    /// `a / (2x) sin(bx)`
    DecaySin,
    /// `a / (2x^2) sin(bx)`
    DecaySinSquared,
}

impl Family {
    pub fn eval(self, a: f64, b: f64, x: f64) -> f64 {
        let s = (b * x).sin();
        match self {
            Family::Sin => a * s,
            Family::GrowSin => a * x * s,
            Family::DecaySin => a / (2.0 * x) * s,
            Family::DecaySinSquared => a / (2.0 * x * x) * s,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = CompletionError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin" => Ok(Family::Sin),
            "grow_sin" => Ok(Family::GrowSin),
            "decay_sin" => Ok(Family::DecaySin),
            "decay_sin_squared" => Ok(Family::DecaySinSquared),
            _ => Err(CompletionError::Domain(format!("unknown function family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionSpec {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub points_per_period: usize,
    pub context_periods: usize,
    pub horizon_periods: f64,
    pub bin_lo: i64,
    pub bin_hi: i64,
}

impl Default for FunctionSpec {
    fn default() -> Self {
        FunctionSpec {
            family: Family::Sin,
            a: 1.0,
            b: 1.0,
            points_per_period: 20,
            context_periods: 5,
            horizon_periods: 1.0,
            bin_lo: 0,
            bin_hi: 100,
        }
    }
}

impl FunctionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_period < 4 {
            return Err(CompletionError::Domain("points_per_period must be at least 4".into()));
        }
        if self.context_periods < 1 {
            return Err(CompletionError::Domain("context_periods must be at least 1".into()));
        }
        if !(self.horizon_periods > 0.0) {
            return Err(CompletionError::Domain("horizon_periods must be positive".into()));
        }
        if self.b == 0.0 || !self.b.is_finite() || !self.a.is_finite() {
            return Err(CompletionError::Domain("a must be finite and b finite and non-zero".into()));
        }
        if self.bin_hi <= self.bin_lo {
            return Err(CompletionError::Domain("bin range is empty".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.b.abs()
    }

    pub fn step(&self) -> f64 {
        self.period() / self.points_per_period as f64
    }

    pub fn context_len(&self) -> usize {
        self.context_periods * self.points_per_period
    }

    pub fn target_len(&self) -> usize {
        ((self.horizon_periods * self.points_per_period as f64).round() as usize).max(1)
    }
}

/// Linear map from a real interval onto the integer bins `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub y_min: f64,
    pub y_max: f64,
    pub lo: i64,
    pub hi: i64,
}

impl Scale {
    pub fn new(y_min: f64, y_max: f64, lo: i64, hi: i64) -> Self {
        Scale { y_min, y_max, lo, hi }
    }

    fn width(&self) -> f64 {
        (self.y_max - self.y_min) / (self.hi - self.lo) as f64
    }

    /// Rounds to the nearest bin, clipping into range. A degenerate scale
    /// maps everything to the middle bin.
    pub fn bin(&self, y: f64) -> i64 {
        if self.y_max <= self.y_min {
            return (self.lo + self.hi) / 2;
        }
        let v = self.lo as f64 + (y - self.y_min) / self.width();
        (v.round() as i64).clamp(self.lo, self.hi)
    }

    pub fn unbin(&self, v: i64) -> f64 {
        self.y_min + (v - self.lo) as f64 * self.width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedSeries {
    pub values: Vec<i64>,
    pub scale: Scale,
}

/// Samples the function on a uniform grid of `points_per_period` steps per
/// period over the context and horizon, bins over the whole span and
/// splits at the context boundary. The seed picks the phase of the first
/// sample; the first sample is always at `x > 0`.
pub fn sample_function(spec: &FunctionSpec, seed: u64) -> Result<(DiscretizedSeries, DiscretizedSeries)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = spec.step();
    let x0 = step * (1.0 + rng.random_range(0..spec.points_per_period) as f64);
    let n = spec.context_len() + spec.target_len();
    let ys: Vec<f64> = (0..n).map(|i| spec.family.eval(spec.a, spec.b, x0 + i as f64 * step)).collect();
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = Scale::new(y_min, y_max, spec.bin_lo, spec.bin_hi);
    let mut values: Vec<i64> = ys.iter().map(|&y| scale.bin(y)).collect();
    let target = values.split_off(spec.context_len());
    Ok((DiscretizedSeries { values, scale }, DiscretizedSeries { values: target, scale }))
}

/// Classic DTW: `D(i,j) = cost(a_i, b_j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1))`
/// with no warping window.
pub fn dtw<T>(a: &[T], b: &[T], cost: impl Fn(&T, &T) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CompletionError::Domain("dtw needs two non-empty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for x in a {
        cur[0] = f64::INFINITY;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = cost(x, y) + prev[j + 1].min(cur[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

pub fn abs_cost(a: &i64, b: &i64) -> f64 {
    (a - b).abs() as f64
}

pub fn euclidean_cost(a: &Vec<i64>, b: &Vec<i64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// A frame sequence in integer bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionTrace {
    pub frames: Vec<Vec<i64>>,
    pub bin_lo: i64,
    pub bin_hi: i64,
    pub rate_hz: f64,
}

impl MotionTrace {
    pub fn dims(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        for (i, f) in self.frames.iter().enumerate() {
            if f.len() != d {
                return Err(CompletionError::Structural(format!("frame {i} has {} dims, expected {d}", f.len())));
            }
            if let Some(v) = f.iter().find(|v| !(self.bin_lo..=self.bin_hi).contains(*v)) {
                return Err(CompletionError::Domain(format!("frame {i} value {v} outside bin range")));
            }
        }
        Ok(())
    }

    /// First `numerator/denominator` of the frames, and the rest.
    pub fn split_fraction(&self, numerator: usize, denominator: usize) -> (MotionTrace, MotionTrace) {
        let cut = self.frames.len() * numerator / denominator;
        let part = |frames: &[Vec<i64>]| MotionTrace { frames: frames.to_vec(), ..self.clone() };
        (part(&self.frames[..cut]), part(&self.frames[cut..]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSpec {
    pub a_x: f64,
    pub a_y: f64,
    pub b: f64,
    pub c_y: f64,
    pub d_x: f64,
    pub d_y: f64,
    /// Nominal samples per time unit; rounded so every loop has the same
    /// whole number of samples.
    pub sample_rate: f64,
    pub loops_context: usize,
    pub bin_lo: i64,
    pub bin_hi: i64,
    /// Seeded offsets of `d_x`, `d_y` are drawn from `-jitter..=jitter`.
    pub jitter: f64,
}

impl Default for LoopSpec {
    fn default() -> Self {
        LoopSpec::preset("medium").expect("medium preset")
    }
}

impl LoopSpec {
    pub const PRESETS: [&'static str; 3] = ["narrow", "medium", "wide"];

    pub fn preset(name: &str) -> Option<Self> {
        let a_x = match name {
            "narrow" => 15.0,
            "medium" => 40.0,
            "wide" => 80.0,
            _ => return None,
        };
        Some(LoopSpec {
            a_x,
            a_y: 40.0,
            b: 1.0,
            c_y: 8.0,
            d_x: 150.0,
            d_y: 60.0,
            sample_rate: 5.0,
            loops_context: 2,
            bin_lo: 0,
            bin_hi: 300,
            jitter: 10.0,
        })
    }

    pub fn loop_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.b.abs()
    }

    pub fn samples_per_loop(&self) -> usize {
        ((self.loop_period() * self.sample_rate).round() as usize).max(1)
    }

    pub fn point(&self, t: f64) -> (f64, f64) {
        (
            self.a_x * (self.b * t).cos() + self.d_x,
            self.a_y * (self.b * t).sin() + self.c_y * t + self.d_y,
        )
    }
}

/// Samples `loops_context + 1` loops; the last loop is the target. Returns
/// the spec actually used (offsets applied) alongside the traces.
pub fn make_loop_trace(spec: &LoopSpec, seed: u64) -> Result<(LoopSpec, MotionTrace, MotionTrace)> {
    if spec.b == 0.0 || spec.sample_rate <= 0.0 || spec.loops_context == 0 || spec.bin_hi <= spec.bin_lo {
        return Err(CompletionError::Domain("loop spec needs b != 0, sample_rate > 0, loops_context >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = spec.clone();
    if spec.jitter > 0.0 {
        used.d_x += rng.random_range(-spec.jitter..=spec.jitter);
        used.d_y += rng.random_range(-spec.jitter..=spec.jitter);
    }
    let per_loop = used.samples_per_loop();
    let dt = used.loop_period() / per_loop as f64;
    let total = per_loop * (used.loops_context + 1);
    let frames: Vec<Vec<i64>> = (0..total)
        .map(|i| {
            let (x, y) = used.point(i as f64 * dt);
            vec![
                (x.round() as i64).clamp(spec.bin_lo, spec.bin_hi),
                (y.round() as i64).clamp(spec.bin_lo, spec.bin_hi),
            ]
        })
        .collect();
    let trace = MotionTrace { frames, bin_lo: spec.bin_lo, bin_hi: spec.bin_hi, rate_hz: 1.0 / dt };
    let (context, target) = trace.split_fraction(used.loops_context, used.loops_context + 1);
    Ok((used, context, target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub sweeps: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Uniform position noise, in metres.
    pub noise: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams { sweeps: 9, duration_s: 25.0, rate_hz: 3.0, noise: 0.0 }
    }
}

const WORKSPACE: [(f64, f64); 3] = [(0.2, 0.8), (-0.4, 0.4), (0.0, 0.4)];

/// A 7-dim pose trace (xyz then quaternion xyzw) of a gripper sweeping back
/// and forth across a table, binned to 0-100. Quaternions are written with
/// a non-negative scalar part.
pub fn synthesize_sweep_demo(params: &SweepParams, seed: u64) -> Result<MotionTrace> {
    if params.sweeps == 0 || params.duration_s <= 0.0 || params.rate_hz <= 0.0 {
        return Err(CompletionError::Domain("sweeps, duration and rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Whole frames per sweep, so the noise-free trace is exactly periodic.
    let per_sweep = ((params.duration_s * params.rate_hz / params.sweeps as f64).round() as usize).max(2);
    let n = per_sweep * params.sweeps;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let phase = (i % per_sweep) as f64 / per_sweep as f64;
        // Triangle wave across the table, lifting slightly at the ends.
        let tri = 1.0 - (2.0 * phase - 1.0).abs();
        let mut pos = [0.3 + 0.4 * tri, 0.1 * (2.0 * std::f64::consts::PI * phase).sin(), 0.05 + 0.1 * (1.0 - tri)];
        if params.noise > 0.0 {
            for p in &mut pos {
                *p += rng.random_range(-params.noise..=params.noise);
            }
        }
        let q = sweep_orientation(phase);
        let mut frame: Vec<i64> = pos
            .iter()
            .zip(WORKSPACE)
            .map(|(&p, (lo, hi))| Scale::new(lo, hi, 0, 100).bin(p))
            .collect();
        frame.extend(q.iter().map(|&c| Scale::new(-1.0, 1.0, 0, 100).bin(c)));
        frames.push(frame);
    }
    Ok(MotionTrace { frames, bin_lo: 0, bin_hi: 100, rate_hz: params.rate_hz })
}

/// Gripper pointing down, yawing with the sweep direction.
fn sweep_orientation(phase: f64) -> [f64; 4] {
    let yaw = 0.4 * (2.0 * std::f64::consts::PI * phase).sin();
    // Half-turn about a horizontal axis rotated by `yaw`.
    let (sy, cy) = (yaw / 2.0).sin_cos();
    [cy, sy, 0.0, 0.0]
}

/// Un-bins the quaternion columns of a sweep frame.
pub fn sweep_quaternion(frame: &[i64]) -> [f64; 4] {
    let s = Scale::new(-1.0, 1.0, 0, 100);
    [s.unbin(frame[3]), s.unbin(frame[4]), s.unbin(frame[5]), s.unbin(frame[6])]
}

/// Reads a trace file: a header line `D rate_hz bin_lo bin_hi`, then one
/// frame of `D` integers per line.
pub fn load_trace(path: &Path) -> Result<MotionTrace> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn parse_trace(text: &str) -> Result<MotionTrace> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CompletionError::Structural("empty trace file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || CompletionError::Structural(format!("bad header {header:?}, expected `D rate_hz bin_lo bin_hi`"));
    if fields.len() != 4 {
        return Err(bad_header());
    }
    let d: usize = fields[0].parse().map_err(|_| bad_header())?;
    let rate_hz: f64 = fields[1].parse().map_err(|_| bad_header())?;
    let bin_lo: i64 = fields[2].parse().map_err(|_| bad_header())?;
    let bin_hi: i64 = fields[3].parse().map_err(|_| bad_header())?;
    let mut frames = Vec::new();
    for (n, line) in lines.enumerate() {
        let frame = line
            .split_whitespace()
            .map(|v| v.parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CompletionError::Structural(format!("frame {n}: {e}")))?;
        if frame.len() != d {
            return Err(CompletionError::Structural(format!("frame {n} has {} values, expected {d}", frame.len())));
        }
        frames.push(frame);
    }
    let trace = MotionTrace { frames, bin_lo, bin_hi, rate_hz };
    trace.validate()?;
    Ok(trace)
}

pub fn save_trace(path: &Path, trace: &MotionTrace) -> Result<()> {
    let mut text = format!("{} {} {} {}\n", trace.dims(), trace.rate_hz, trace.bin_lo, trace.bin_hi);
    for f in &trace.frames {
        text.push_str(&f.iter().map(i64::to_string).collect::<Vec<_>>().join(" "));
        text.push('\n');
    }
    Ok(std::fs::write(path, text)?)
}

/// One extrapolation problem: continue `context` for `target.len()` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTask {
    pub id: String,
    pub context: Vec<Vec<i64>>,
    pub target: Vec<Vec<i64>>,
    pub bin_lo: i64,
    pub bin_hi: i64,
}

impl CompletionTask {
    pub fn dims(&self) -> usize {
        self.context.first().map_or(0, Vec::len)
    }
}

/// `trials` sampled instances of a function spec.
pub fn function_tasks(spec: &FunctionSpec, trials: usize, seed: u64) -> Result<Vec<CompletionTask>> {
    (0..trials)
        .map(|i| {
            let (context, target) = sample_function(spec, derive_seed(seed, &[i as u64]))?;
            Ok(CompletionTask {
                id: format!("{:?}-c{}-{i}", spec.family, spec.context_periods).to_lowercase(),
                context: context.values.into_iter().map(|v| vec![v]).collect(),
                target: target.values.into_iter().map(|v| vec![v]).collect(),
                bin_lo: spec.bin_lo,
                bin_hi: spec.bin_hi,
            })
        })
        .collect()
}

pub fn loop_tasks(spec: &LoopSpec, name: &str, trials: usize, seed: u64) -> Result<Vec<CompletionTask>> {
    (0..trials)
        .map(|i| {
            let (_, context, target) = make_loop_trace(spec, derive_seed(seed, &[i as u64]))?;
            Ok(trace_task(format!("loop-{name}-{i}"), &context, &target))
        })
        .collect()
}

/// The first two thirds of a trace as context, the rest as target.
pub fn sweep_task(id: impl Into<String>, trace: &MotionTrace) -> CompletionTask {
    let (context, target) = trace.split_fraction(2, 3);
    trace_task(id.into(), &context, &target)
}

fn trace_task(id: String, context: &MotionTrace, target: &MotionTrace) -> CompletionTask {
    CompletionTask {
        id,
        context: context.frames.clone(),
        target: target.frames.clone(),
        bin_lo: context.bin_lo,
        bin_hi: context.bin_hi,
    }
}

fn encode_frames(frames: &[Vec<i64>], profile: &CodecProfile) -> String {
    frames
        .iter()
        .map(|f| f.iter().map(i64::to_string).collect::<Vec<_>>().join(&profile.dim_delimiter))
        .collect::<Vec<_>>()
        .join(&profile.step_delimiter)
}

/// Context frames joined by the step delimiter, ending with its trimmed
/// form so the model continues with the next frame.
pub fn build_prompt(task: &CompletionTask, profile: &CodecProfile) -> String {
    format!("{}{}", encode_frames(&task.context, profile), profile.step_delimiter.trim_end())
}

/// Reads frames of `dims` integers up to the first malformed one.
pub fn parse_frames(text: &str, dims: usize, profile: &CodecProfile) -> Vec<Vec<i64>> {
    let end = text.find(['\n', ';']).unwrap_or(text.len());
    let step = profile.step_delimiter.trim();
    let mut frames = Vec::new();
    for piece in text[..end].split(step) {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let frame: Option<Vec<i64>> = piece.split_whitespace().map(|v| v.parse().ok()).collect();
        match frame {
            Some(f) if f.len() == dims => frames.push(f),
            _ => break,
        }
    }
    frames
}

/// Completion text a perfect model would return.
pub fn oracle_completion(task: &CompletionTask, profile: &CodecProfile) -> String {
    format!(" {}", encode_frames(&task.target, profile))
}

pub fn oracle_table(tasks: &[CompletionTask], profile: &CodecProfile) -> HashMap<String, String> {
    tasks.iter().map(|t| (build_prompt(t, profile), oracle_completion(t, profile))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: String,
    pub completion: String,
    pub parsed_frames: usize,
    /// Fewer frames than the target were parsed and the last one was
    /// repeated (or the context's last frame, when none parsed).
    pub padded: bool,
    pub dtw: f64,
    pub dtw_per_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub model: String,
    pub trials: Vec<TrialRecord>,
    pub mean_dtw: f64,
    pub var_dtw: f64,
    pub mean_dtw_per_step: f64,
    pub var_dtw_per_step: f64,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n;
    (mean, xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Asks for `target.len()` frames per task and scores them with DTW.
pub fn evaluate_completion(
    model: &dyn CompletionModel,
    tasks: &[CompletionTask],
    profile: &CodecProfile,
    parallelism: usize,
) -> Result<CompletionReport> {
    if let Some(t) = tasks.iter().find(|t| t.context.is_empty() || t.target.is_empty()) {
        return Err(CompletionError::Domain(format!("task {} has an empty context or target", t.id)));
    }
    let trials = par_map(tasks, parallelism, |i, task| {
        let dims = task.dims();
        let request = CompletionRequest::new(build_prompt(task, profile), task.target.len() * (dims + 1))
            .stop(["\n"])
            .seed(i as u64);
        let (completion, error) = match model.complete(&request) {
            Ok(text) => (text, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        let mut frames = parse_frames(&completion, dims, profile);
        let parsed_frames = frames.len();
        frames.truncate(task.target.len());
        for f in &mut frames {
            for v in f.iter_mut() {
                *v = (*v).clamp(task.bin_lo, task.bin_hi);
            }
        }
        let padded = frames.len() < task.target.len();
        let fill = frames.last().cloned().unwrap_or_else(|| task.context.last().cloned().expect("non-empty"));
        frames.resize(task.target.len(), fill);
        let dtw = dtw(&frames, &task.target, euclidean_cost).expect("non-empty");
        TrialRecord {
            task_id: task.id.clone(),
            completion,
            parsed_frames,
            padded,
            dtw,
            dtw_per_step: dtw / task.target.len() as f64,
            error,
        }
    });
    let (mean_dtw, var_dtw) = mean_var(trials.iter().map(|t| t.dtw));
    let (mean_dtw_per_step, var_dtw_per_step) = mean_var(trials.iter().map(|t| t.dtw_per_step));
    Ok(CompletionReport { model: model.name().to_string(), trials, mean_dtw, var_dtw, mean_dtw_per_step, var_dtw_per_step })
}

/// Baseline that finds the lag best explaining the context and repeats the
/// last period of that length. Emits as many frames as `max_tokens` allows
/// at `dims + 1` tokens per frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct PeriodRepeatModel;

impl PeriodRepeatModel {
    /// Smallest lag in `1..=n/2` minimizing the mean distance between each
    /// frame and the one `lag` steps earlier.
    pub fn detect_period(frames: &[Vec<i64>]) -> usize {
        let n = frames.len();
        let mut best = (f64::INFINITY, 1);
        for lag in 1..=(n / 2).max(1) {
            if lag >= n {
                break;
            }
            let err = (lag..n).map(|i| euclidean_cost(&frames[i], &frames[i - lag])).sum::<f64>() / (n - lag) as f64;
            if err < best.0 - 1e-12 {
                best = (err, lag);
            }
        }
        best.1
    }
}

impl CompletionModel for PeriodRepeatModel {
    fn name(&self) -> &str {
        "period_repeat"
    }

    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, ModelError> {
        request.validate()?;
        let profile = CodecProfile::default();
        let step = profile.step_delimiter.trim();
        let body = request.prompt.trim_end().trim_end_matches(step);
        let frames: Vec<Vec<i64>> = body
            .split(step)
            .map(|p| p.split_whitespace().map(|v| v.parse().ok()).collect::<Option<Vec<i64>>>())
            .collect::<Option<_>>()
            .ok_or_else(|| ModelError::InvalidRequest("prompt is not a frame sequence".into()))?;
        let dims = frames.first().map_or(0, Vec::len);
        if dims == 0 || frames.iter().any(|f| f.len() != dims) {
            return Err(ModelError::InvalidRequest("prompt frames are empty or ragged".into()));
        }
        let lag = Self::detect_period(&frames);
        let start = frames.len() - lag;
        let count = request.max_tokens / (dims + 1);
        let out: Vec<Vec<i64>> = (0..count).map(|j| frames[start + j % lag].clone()).collect();
        Ok(format!(" {}", encode_frames(&out, &profile)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ScriptedModel;

    #[test]
    fn binning_round_trip() {
        let s = Scale::new(-1.0, 1.0, 0, 100);
        assert_eq!(s.bin(0.0), 50);
        for v in 0..=100 {
            assert_eq!(s.bin(s.unbin(v)), v);
        }
        for i in 0..=1000 {
            let y = -1.0 + 2.0 * i as f64 / 1000.0;
            assert!((s.unbin(s.bin(y)) - y).abs() <= 0.01 + 1e-12);
        }
        assert_eq!(s.bin(5.0), 100);
        assert_eq!(Scale::new(1.0, 1.0, 0, 100).bin(1.0), 50);
    }

    #[test]
    fn dtw_basics() {
        assert_eq!(dtw(&[0i64], &[0, 0, 0], abs_cost).unwrap(), 0.0);
        assert_eq!(dtw(&[0i64, 0], &[1, 1], abs_cost).unwrap(), 2.0);
        assert_eq!(dtw(&[1i64, 2, 3], &[1, 2, 3], abs_cost).unwrap(), 0.0);
        assert!(dtw::<i64>(&[], &[1], abs_cost).is_err());
        assert_eq!(dtw(&[vec![0, 0]], &[vec![3, 4]], euclidean_cost).unwrap(), 5.0);
    }

    #[test]
    fn sampled_functions() {
        let spec = FunctionSpec::default();
        let (c, t) = sample_function(&spec, 4).unwrap();
        assert_eq!(c.values.len(), 100);
        assert_eq!(t.values.len(), 20);
        assert_eq!((c.clone(), t.clone()), sample_function(&spec, 4).unwrap());
        assert!(c.values.iter().chain(&t.values).all(|v| (0..=100).contains(v)));

        let grow = FunctionSpec { family: Family::GrowSin, ..spec.clone() };
        for seed in 0..10 {
            let (c, t) = sample_function(&grow, seed).unwrap();
            let (lo, hi) = (c.values.iter().min().unwrap(), c.values.iter().max().unwrap());
            assert!(t.values.iter().any(|v| v < lo || v > hi));
        }
        let decay = FunctionSpec { family: Family::DecaySin, ..spec.clone() };
        let (c, _) = sample_function(&decay, 0).unwrap();
        assert!(c.values.iter().all(|v| (0..=100).contains(v)));
        assert!(sample_function(&FunctionSpec { points_per_period: 3, ..spec }, 0).is_err());
    }

    #[test]
    fn loops_follow_their_equations() {
        for name in LoopSpec::PRESETS {
            let spec = LoopSpec::preset(name).unwrap();
            let (used, context, target) = make_loop_trace(&spec, 7).unwrap();
            let per_loop = used.samples_per_loop();
            assert_eq!(context.frames.len(), 2 * per_loop);
            assert_eq!(target.frames.len(), per_loop);
            let dt = used.loop_period() / per_loop as f64;
            // The boundary sample sits at two full loop periods.
            assert!((context.frames.len() as f64 * dt - 2.0 * used.loop_period()).abs() < 1e-9);
            for (i, f) in context.frames.iter().chain(&target.frames).enumerate() {
                let (x, y) = used.point(i as f64 * dt);
                assert!((f[0] as f64 - x).abs() <= 0.5 && (f[1] as f64 - y).abs() <= 0.5);
            }
            assert!((context.rate_hz - 5.0).abs() < 0.2);
        }
    }

    #[test]
    fn sweep_demo_shape() {
        let trace = synthesize_sweep_demo(&SweepParams::default(), 0).unwrap();
        assert!((60..=90).contains(&trace.frames.len()));
        assert_eq!(trace.dims(), 7);
        for f in &trace.frames {
            let q = sweep_quaternion(f);
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 0.05, "{norm}");
        }
        let lag = PeriodRepeatModel::detect_period(&trace.frames);
        assert!((lag as f64 - trace.frames.len() as f64 / 9.0).abs() <= 1.0, "{lag}");
        let noisy = synthesize_sweep_demo(&SweepParams { noise: 0.02, ..Default::default() }, 3).unwrap();
        assert_ne!(noisy.frames, trace.frames);
    }

    #[test]
    fn trace_files() {
        let trace = synthesize_sweep_demo(&SweepParams::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        save_trace(&path, &trace).unwrap();
        assert_eq!(load_trace(&path).unwrap(), trace);
        assert!(matches!(parse_trace("2 3 0 100\n1 2\n1 2 3\n"), Err(CompletionError::Structural(_))));
        assert!(parse_trace("").is_err());
    }

    #[test]
    fn prompt_and_parse() {
        let p = CodecProfile::default();
        let task = CompletionTask {
            id: "t".into(),
            context: vec![vec![1, 2], vec![3, 4]],
            target: vec![vec![5, 6]],
            bin_lo: 0,
            bin_hi: 100,
        };
        assert_eq!(build_prompt(&task, &p), "1 2, 3 4,");
        assert_eq!(parse_frames(" 5 6, 7 8, 9", 2, &p), vec![vec![5, 6], vec![7, 8]]);
        assert_eq!(parse_frames(" 5, x, 6", 1, &p), vec![vec![5]]);
    }

    #[test]
    fn oracle_closure_and_padding() {
        let p = CodecProfile::default();
        let mut tasks = function_tasks(&FunctionSpec::default(), 3, 1).unwrap();
        tasks.extend(loop_tasks(&LoopSpec::default(), "medium", 2, 1).unwrap());
        tasks.push(sweep_task("sweep", &synthesize_sweep_demo(&SweepParams::default(), 2).unwrap()));
        let oracle = ScriptedModel::oracle(oracle_table(&tasks, &p));
        let report = evaluate_completion(&oracle, &tasks, &p, 2).unwrap();
        assert_eq!(report.mean_dtw, 0.0);
        assert!(report.trials.iter().all(|t| !t.padded));

        let empty = ScriptedModel::new(HashMap::new());
        let report = evaluate_completion(&empty, &tasks, &p, 1).unwrap();
        assert!(report.trials.iter().all(|t| t.padded && t.parsed_frames == 0));
    }

    #[test]
    fn period_repeat_on_sin() {
        let p = CodecProfile::default();
        let tasks = function_tasks(&FunctionSpec::default(), 11, 0).unwrap();
        let report = evaluate_completion(&PeriodRepeatModel, &tasks, &p, 1).unwrap();
        assert!(report.mean_dtw_per_step <= 2.0);
        assert!(report.trials.iter().all(|t| !t.padded));
    }
}
