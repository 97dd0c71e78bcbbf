use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use gpm_core::arc::{self, ArcEvalOptions};
use gpm_core::codec::{bundled_pool, sample_alphabet, Alphabet, CodecProfile};
use gpm_core::completion::{
    self, evaluate_completion, function_tasks, load_trace, loop_tasks, synthesize_sweep_demo, sweep_task,
    CompletionTask, Family, LoopSpec,
};
use gpm_core::environments::{make_env, EnvKind, MarkerScene};
use gpm_core::improve::{marker_improve, marker_oracle_completion, run_online, OnlineConfig, Ordering};
use gpm_core::models::{
    build_model, BuildContext, CompletionModel, ModelError, ModelKind, ModelSpec, RandomChoices, ScriptedModel,
};
use gpm_core::pcfg::{self, render_table, solve_suite, CellAccuracy, EvalOptions, PcfgTask, SearcherModel};
use gpm_core::util::{derive_seed, sha256_hex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{ArtifactDir, Manifest};
use crate::config::{config_err, FileConfig};
use crate::{Command, ModelArgs};

pub fn dispatch(command: Command, file: &FileConfig, parallel: usize) -> anyhow::Result<String> {
    let seed = |flag: Option<u64>| flag.or(file.seed).unwrap_or(0);
    match command {
        Command::PcfgGen { k, w, n, seed: s, public, out } => pcfg_gen(file, &k, &w, n, seed(s), public, &out),
        Command::PcfgEval { dataset, model, alphabet_seed, seed: s, out } => {
            pcfg_eval(file, parallel, &dataset, &model, alphabet_seed, seed(s), &out)
        }
        Command::PcfgSolve { dataset, max_ops, max_leaves, node_budget, out } => {
            let mut limits = file.pcfg.search;
            limits.max_ops = max_ops.unwrap_or(limits.max_ops);
            limits.max_leaves = max_leaves.unwrap_or(limits.max_leaves);
            limits.node_budget = node_budget.unwrap_or(limits.node_budget);
            pcfg_solve(file, parallel, &dataset, limits, &out)
        }
        Command::ArcEval { suite, model, alphabet_seed, candidates, seed: s, out } => {
            arc_eval(file, parallel, &suite, &model, alphabet_seed, candidates, seed(s), &out)
        }
        Command::CompleteEval { task, model, trials, context_periods, preset, trace, seed: s, out } => {
            let opts = CompleteOpts { task, trials, context_periods, preset, trace };
            complete_eval(file, parallel, &model, &opts, seed(s), &out)
        }
        Command::ImproveRun { env, episodes, warmup, model, ordering, seed: s, out } => {
            improve_run(file, &env, episodes, warmup, &model, ordering.as_deref(), seed(s), &out)
        }
        Command::MarkerDemo { model, ordering, scenes, seed: s, out } => {
            marker_demo(file, &model, &ordering, scenes, seed(s), &out)
        }
    }
}

fn model_error(e: ModelError) -> anyhow::Error {
    match e {
        ModelError::Config(m) => config_err(m),
        other => other.into(),
    }
}

fn build(spec: &ModelSpec, ctx: BuildContext) -> anyhow::Result<Box<dyn CompletionModel>> {
    build_model(spec, ctx).map_err(model_error)
}

fn resolve_model(file: &FileConfig, args: &ModelArgs, default: ModelKind) -> ModelSpec {
    file.model_spec(args.model, args.script.clone(), default)
}

fn alphabet(seed: Option<u64>) -> anyhow::Result<Option<Alphabet>> {
    seed.map(|s| sample_alphabet(s, bundled_pool()).map_err(|e| config_err(e.to_string()))).transpose()
}

fn pcfg_gen(file: &FileConfig, ks: &[usize], ws: &[usize], n: usize, seed: u64, public: bool, out: &Path) -> anyhow::Result<String> {
    if ks.contains(&0) || n == 0 {
        return Err(config_err("k values and n must be positive"));
    }
    let generator = &file.pcfg.generator;
    let tasks = pcfg::suite(ks, ws, n, seed, generator).map_err(|e| config_err(e.to_string()))?;
    let dir = ArtifactDir::create(out)?;
    pcfg::write_dataset(&dir.path("dataset.jsonl"), &tasks, !public).context("writing dataset")?;
    let bytes = std::fs::read(dir.path("dataset.jsonl"))?;
    let config = json!({ "k": ks, "w": ws, "n": n, "public": public, "generator": generator });
    dir.write_json("manifest.json", &Manifest::new("pcfg-gen", seed, config).hash("dataset", sha256_hex(&bytes)))?;
    let summary = format!("wrote {} tasks over {} cells to {}\n", tasks.len(), tasks.len() / n, dir.path("dataset.jsonl").display());
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

fn load_dataset(file: &FileConfig, path: &Path) -> anyhow::Result<(Vec<PcfgTask>, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let tasks = pcfg::read_dataset(path, &file.pcfg.generator.grammar)?;
    Ok((tasks, sha256_hex(&bytes)))
}

fn grid_axes(tasks: &[PcfgTask]) -> (Vec<usize>, Vec<usize>) {
    let ks: BTreeSet<usize> = tasks.iter().map(|t| t.k).collect();
    let ws: BTreeSet<usize> = tasks.iter().map(|t| t.w).collect();
    (ks.into_iter().collect(), ws.into_iter().collect())
}

fn pcfg_eval(
    file: &FileConfig,
    parallel: usize,
    dataset: &Path,
    args: &ModelArgs,
    alphabet_seed: Option<u64>,
    seed: u64,
    out: &Path,
) -> anyhow::Result<String> {
    let spec = resolve_model(file, args, ModelKind::MockOracle);
    let (tasks, hash) = load_dataset(file, dataset)?;
    let alphabet = alphabet(alphabet_seed)?;
    let model: Box<dyn CompletionModel> = match spec.kind {
        ModelKind::PcfgSearcher => {
            Box::new(SearcherModel { grammar: file.pcfg.generator.grammar, limits: file.pcfg.search })
        }
        _ => {
            let table = if spec.kind == ModelKind::MockOracle {
                Some(pcfg::oracle_table(&tasks, alphabet.as_ref())?)
            } else {
                None
            };
            build(&spec, BuildContext { oracle_table: table, random_choices: None })?
        }
    };
    let opts = EvalOptions { alphabet: alphabet.as_ref(), parallelism: parallel, temperature: 0.0 };
    let report = pcfg::evaluate(model.as_ref(), &tasks, &opts)?;
    let dir = ArtifactDir::create(out)?;
    let config = json!({
        "dataset": dataset, "model": spec, "alphabet_seed": alphabet_seed,
        "parallel": parallel, "search": file.pcfg.search,
    });
    dir.write_json("manifest.json", &Manifest::new("pcfg-eval", seed, config).hash("dataset", hash))?;
    dir.write_jsonl("results.jsonl", &report.records)?;
    dir.write_json(
        "summary.json",
        &json!({ "model": model.name(), "total": report.total, "correct": report.correct,
                 "accuracy": report.accuracy, "cells": report.cells }),
    )?;
    let (ks, ws) = grid_axes(&tasks);
    let summary = format!(
        "model {}: {}/{} correct ({:.1}%)\naccuracy (%) by k (rows) and w (columns)\n{}",
        model.name(),
        report.correct,
        report.total,
        report.accuracy,
        render_table(&report.cells, &ks, &ws)
    );
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

fn pcfg_solve(file: &FileConfig, parallel: usize, dataset: &Path, limits: pcfg::SearchLimits, out: &Path) -> anyhow::Result<String> {
    let (tasks, hash) = load_dataset(file, dataset)?;
    let report = solve_suite(&tasks, &file.pcfg.generator.grammar, &limits, parallel);
    let dir = ArtifactDir::create(out)?;
    let config = json!({ "dataset": dataset, "limits": limits, "grammar": file.pcfg.generator.grammar, "parallel": parallel });
    dir.write_json("manifest.json", &Manifest::new("pcfg-solve", 0, config).hash("dataset", hash))?;
    dir.write_jsonl("results.jsonl", &report.records)?;
    dir.write_json("summary.json", &json!({ "cells": report.cells }))?;
    let found: Vec<CellAccuracy> = report
        .cells
        .iter()
        .map(|c| CellAccuracy { k: c.k, w: c.w, total: c.total, correct: c.found, errored: 0, accuracy: c.found_rate })
        .collect();
    let (ks, ws) = grid_axes(&tasks);
    let summary = format!(
        "consistent program found (%)\n{}\nquery accuracy (%)\n{}",
        render_table(&found, &ks, &ws),
        render_table(&report.accuracy_cells(), &ks, &ws)
    );
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn arc_eval(
    file: &FileConfig,
    parallel: usize,
    suite_dir: &Path,
    args: &ModelArgs,
    alphabet_seed: Option<u64>,
    candidates: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<String> {
    if candidates == 0 {
        return Err(config_err("--candidates must be at least 1"));
    }
    let spec = resolve_model(file, args, ModelKind::MockOracle);
    let suite = arc::load_suite(suite_dir)?;
    let alphabet = alphabet(alphabet_seed)?;
    let profile = CodecProfile::default();
    let table = match spec.kind {
        ModelKind::MockOracle => Some(arc::oracle_table(&suite.tasks, &profile, alphabet.as_ref())?),
        _ => None,
    };
    let model = build(&spec, BuildContext { oracle_table: table, random_choices: None })?;
    let opts = ArcEvalOptions {
        profile,
        alphabet: alphabet.as_ref(),
        alphabet_seed,
        parallelism: parallel,
        candidates,
        temperature: if candidates > 1 { 0.7 } else { 0.0 },
    };
    let report = arc::run_eval(model.as_ref(), &suite, &opts)?;
    let dir = ArtifactDir::create(out)?;
    let config = json!({
        "suite": suite_dir, "model": spec, "alphabet_seed": alphabet_seed,
        "candidates": candidates, "temperature": opts.temperature, "parallel": parallel,
    });
    let manifest = Manifest::new("arc-eval", seed, config).hash("arc_suite", &suite.corpus_hash);
    dir.write_json("manifest.json", &manifest)?;
    dir.write_jsonl("results.jsonl", &report.records)?;
    let errored = report.records.iter().filter(|r| r.errored).count();
    dir.write_json(
        "summary.json",
        &json!({ "model": model.name(), "solved": report.solved, "total": report.total,
                 "errored": errored, "alphabet_seed": alphabet_seed }),
    )?;
    let summary = format!("model {}: solved {}/{} ({} with transport errors)\n", model.name(), report.solved, report.total, errored);
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

struct CompleteOpts {
    task: String,
    trials: usize,
    context_periods: Option<usize>,
    preset: String,
    trace: Option<std::path::PathBuf>,
}

fn complete_eval(
    file: &FileConfig,
    parallel: usize,
    args: &ModelArgs,
    opts: &CompleteOpts,
    seed: u64,
    out: &Path,
) -> anyhow::Result<String> {
    if opts.trials == 0 {
        return Err(config_err("--trials must be at least 1"));
    }
    let spec = resolve_model(file, args, ModelKind::PeriodRepeat);
    let profile = CodecProfile::default();
    let mut hashes = Vec::new();
    let (tasks, task_config): (Vec<CompletionTask>, serde_json::Value) = match opts.task.as_str() {
        "loops" => {
            let loop_spec = match &file.completion.loops {
                Some(s) => s.clone(),
                None => LoopSpec::preset(&opts.preset)
                    .ok_or_else(|| config_err(format!("unknown loop preset {:?}", opts.preset)))?,
            };
            (loop_tasks(&loop_spec, &opts.preset, opts.trials, seed)?, json!({ "loops": loop_spec, "preset": opts.preset }))
        }
        "sweep" => {
            let trace = match &opts.trace {
                Some(path) => {
                    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                    hashes.push(("trace", sha256_hex(&bytes)));
                    load_trace(path)?
                }
                None => synthesize_sweep_demo(&file.completion.sweep, seed)?,
            };
            (vec![sweep_task("sweep-0", &trace)], json!({ "trace": opts.trace, "sweep": file.completion.sweep }))
        }
        family => {
            let family: Family = family.parse().map_err(|e: completion::CompletionError| config_err(e.to_string()))?;
            let mut fs = file.completion.function.clone();
            fs.family = family;
            fs.context_periods = opts.context_periods.unwrap_or(fs.context_periods);
            fs.validate().map_err(|e| config_err(e.to_string()))?;
            (function_tasks(&fs, opts.trials, seed)?, json!({ "function": fs }))
        }
    };
    let dims = tasks[0].dims();
    let ctx = BuildContext {
        oracle_table: (spec.kind == ModelKind::MockOracle).then(|| completion::oracle_table(&tasks, &profile)),
        random_choices: Some(RandomChoices::Vectors { dims, lo: tasks[0].bin_lo, hi: tasks[0].bin_hi }),
    };
    let model = build(&spec, ctx)?;
    let report = evaluate_completion(model.as_ref(), &tasks, &profile, parallel)?;
    let dir = ArtifactDir::create(out)?;
    let config = json!({ "task": opts.task, "trials": opts.trials, "model": spec, "parallel": parallel, "spec": task_config });
    let mut manifest = Manifest::new("complete-eval", seed, config);
    for (name, hash) in hashes {
        manifest = manifest.hash(name, hash);
    }
    dir.write_json("manifest.json", &manifest)?;
    dir.write_jsonl("results.jsonl", &report.trials)?;
    dir.write_json(
        "summary.json",
        &json!({ "model": report.model, "trials": report.trials.len(),
                 "mean_dtw": report.mean_dtw, "var_dtw": report.var_dtw,
                 "mean_dtw_per_step": report.mean_dtw_per_step, "var_dtw_per_step": report.var_dtw_per_step }),
    )?;
    let summary = format!(
        "model {} on {} ({} trials): DTW {:.3} (var {:.3}), per step {:.3} (var {:.3})\n",
        report.model,
        opts.task,
        report.trials.len(),
        report.mean_dtw,
        report.var_dtw,
        report.mean_dtw_per_step,
        report.var_dtw_per_step
    );
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn improve_run(
    file: &FileConfig,
    env_name: &str,
    episodes: usize,
    warmup: usize,
    args: &ModelArgs,
    ordering: Option<&str>,
    seed: u64,
    out: &Path,
) -> anyhow::Result<String> {
    let kind: EnvKind = env_name.parse().map_err(|e: gpm_core::environments::EnvError| config_err(e.to_string()))?;
    let spec = resolve_model(file, args, ModelKind::RandomPolicy);
    let mut improve = file.improve.clone();
    if let Some(o) = ordering {
        improve.ordering = o.parse().map_err(|e: gpm_core::improve::ImproveError| config_err(e.to_string()))?;
    }
    let cfg = OnlineConfig { episodes, warmup, seed, improve };
    if warmup == 0 {
        return Err(config_err("--warmup must be at least 1"));
    }
    cfg.improve.validate().map_err(|e| config_err(e.to_string()))?;
    let mut env = make_env(kind, &file.env, seed);
    let actions = (1..=env.num_actions()).map(|a| a.to_string()).collect();
    let model = build(&spec, BuildContext { oracle_table: None, random_choices: Some(RandomChoices::Tokens(actions)) })?;
    let (curve, buffer) = run_online(model.as_ref(), env.as_mut(), &cfg)?;
    let dir = ArtifactDir::create(out)?;
    let config = json!({ "env": env_name, "env_config": file.env, "model": spec, "online": cfg });
    dir.write_json("manifest.json", &Manifest::new("improve-run", seed, config))?;
    dir.write("results.jsonl", curve.to_jsonl())?;
    dir.write("curve.csv", curve.to_csv())?;
    let model_returns: Vec<i64> = curve.model_rows().map(|r| r.ret).collect();
    let mean = |xs: &[i64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<i64>() as f64 / xs.len() as f64 };
    let warm: Vec<i64> = curve.rows.iter().take(warmup).map(|r| r.ret).collect();
    let final_max = curve.rows.last().map_or(0, |r| r.running_max);
    let fallbacks: usize = curve.rows.iter().map(|r| r.fallback_count).sum();
    dir.write_json(
        "summary.json",
        &json!({ "model": curve.model, "env": curve.env, "episodes": episodes, "warmup": warmup,
                 "mean_return_warmup": mean(&warm), "mean_return_model": mean(&model_returns),
                 "final_running_max": final_max, "fallbacks": fallbacks, "buffer_size": buffer.len() }),
    )?;
    let summary = format!(
        "{} on {}: warmup mean {:.2}, model mean {:.2}, best {}, {} fallback actions\n",
        curve.model,
        curve.env,
        mean(&warm),
        mean(&model_returns),
        final_max,
        fallbacks
    );
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct MarkerRow {
    ordering: Ordering,
    scene: usize,
    cup: [i64; 3],
    reward: i64,
    padded: bool,
    completion: String,
}

fn marker_demo(file: &FileConfig, args: &ModelArgs, ordering: &str, scenes: usize, seed: u64, out: &Path) -> anyhow::Result<String> {
    const BIN_HI: i64 = 200;
    let arms: Vec<Ordering> = if ordering == "all" {
        vec![Ordering::SortedAsc, Ordering::Shuffled, Ordering::SortedNoRewards]
    } else {
        vec![ordering.parse().map_err(|e: gpm_core::improve::ImproveError| config_err(e.to_string()))?]
    };
    if scenes == 0 {
        return Err(config_err("--scenes must be at least 1"));
    }
    let spec = resolve_model(file, args, ModelKind::MockOracle);
    let shared = match spec.kind {
        ModelKind::MockOracle => None,
        _ => Some(build(&spec, BuildContext { oracle_table: None, random_choices: Some(RandomChoices::Vectors { dims: 3, lo: 0, hi: BIN_HI }) })?),
    };
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (a, &arm) in arms.iter().enumerate() {
        let mut cfg = file.improve.clone();
        cfg.ordering = arm;
        let mut total = 0;
        for i in 0..scenes {
            let scene = MarkerScene::sample(derive_seed(seed, &[i as u64]), BIN_HI);
            let oracle;
            let model: &dyn CompletionModel = match &shared {
                Some(m) => m.as_ref(),
                None => {
                    oracle = ScriptedModel::oracle(Default::default()).with_default(&marker_oracle_completion(&scene, &cfg.profile));
                    &oracle
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[a as u64, i as u64]));
            let outcome = marker_improve(model, &scene, &cfg, derive_seed(seed, &[i as u64, 1]), &mut rng)?;
            total += outcome.reward;
            rows.push(MarkerRow { ordering: arm, scene: i, cup: scene.cup, reward: outcome.reward, padded: outcome.padded, completion: outcome.completion });
        }
        means.push((arm, total as f64 / scenes as f64));
    }
    let dir = ArtifactDir::create(out)?;
    let config = json!({ "orderings": arms, "scenes": scenes, "bin_hi": BIN_HI, "model": spec, "improve": file.improve });
    dir.write_json("manifest.json", &Manifest::new("marker-demo", seed, config))?;
    dir.write_jsonl("results.jsonl", &rows)?;
    let summary_rows: Vec<_> = means.iter().map(|(o, m)| json!({ "ordering": o, "mean_reward": m })).collect();
    dir.write_json("summary.json", &summary_rows)?;
    let mut summary = format!("{:<24}{:>12}\n", "ordering", "mean reward");
    for (o, m) in &means {
        summary.push_str(&format!("{:<24}{:>12.2}\n", serde_json::to_value(o)?.as_str().unwrap_or_default(), m));
    }
    dir.write("summary.txt", &summary)?;
    Ok(summary)
}
