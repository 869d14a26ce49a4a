use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tailscope::eval::{self, EvalConfig};
use tailscope::intrinsic::IntrinsicMetrics;
use tailscope::perceiver::PerceiverParams;
use tailscope::pipeline::{self, RankOptions, SceneMetrics};
use tailscope::scene_csv::{parse_scene_csv_with_radius, write_scene_csv};
use tailscope::synth::{self, OracleValues, ScenarioSpec};
use tailscope::trajectory::DEFAULT_NEIGHBOR_RADIUS;
use tailscope::{batch, Scene};

use crate::config::{read_to_string, RunConfig};
use crate::{CliError, CommonArgs, EvalArgs, RankArgs};

/// Configuration file overlaid by the shared flags.
fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if !args.input.is_empty() {
        cfg.input = args.input.clone();
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    if cfg.input.is_empty() {
        return Err(CliError::Usage(
            "no input given (use --input or the config file)".into(),
        ));
    }
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn with_path(path: &Path, e: tailscope::Error) -> CliError {
    if e.is_user_error() {
        CliError::Usage(format!("{}: {e}", path.display()))
    } else {
        CliError::Core(e)
    }
}

fn load_scenes(cfg: &RunConfig) -> Result<Vec<Scene>, CliError> {
    let radius = cfg.neighbor_radius.unwrap_or(DEFAULT_NEIGHBOR_RADIUS);
    let mut scenes = Vec::new();
    let mut ids = BTreeSet::new();
    for path in &cfg.input {
        for scene in
            parse_scene_csv_with_radius(open(path)?, radius).map_err(|e| with_path(path, e))?
        {
            if !ids.insert(scene.scene_id().to_string()) {
                return Err(CliError::Usage(format!(
                    "scene {} appears in more than one input",
                    scene.scene_id()
                )));
            }
            scenes.push(scene);
        }
    }
    Ok(scenes)
}

fn write_output(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| CliError::Internal(format!("cannot write to stdout: {e}"))),
    }
}

fn write_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_output(out, text.as_bytes())
}

fn in_pool<R: Send>(
    cfg: &RunConfig,
    f: impl FnOnce() -> Result<R, CliError> + Send,
) -> Result<R, CliError> {
    batch::with_workers(cfg.workers, f)?
}

pub fn metrics(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let params = cfg.rss_params()?;
    let scenes = load_scenes(&cfg)?;
    let records = in_pool(&cfg, || Ok(pipeline::metrics_batch(&scenes, &params)?))?;
    write_json(cfg.out.as_ref(), &records)
}

fn load_metrics(cfg: &RunConfig) -> Result<Vec<SceneMetrics>, CliError> {
    let is_json = |p: &Path| p.extension().is_some_and(|e| e == "json");
    if cfg.input.iter().all(|p| is_json(p)) {
        let mut all: Vec<SceneMetrics> = Vec::new();
        for path in &cfg.input {
            let rows: Vec<SceneMetrics> = serde_json::from_str(&read_to_string(path)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            all.extend(rows);
        }
        let ids: BTreeSet<&str> = all.iter().map(|m| m.scene_id.as_str()).collect();
        if ids.len() != all.len() {
            return Err(CliError::Usage(
                "duplicate scene ids across metrics inputs".into(),
            ));
        }
        Ok(all)
    } else if cfg.input.iter().any(|p| is_json(p)) {
        Err(CliError::Usage(
            "rank inputs must be all scene CSVs or all metrics JSON".into(),
        ))
    } else {
        let scenes = load_scenes(cfg)?;
        Ok(pipeline::metrics_batch(&scenes, &cfg.rss_params()?)?)
    }
}

fn perceiver_params(cfg: &RunConfig) -> Result<PerceiverParams, CliError> {
    match (&cfg.perceiver, &cfg.perceiver_probe) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either a perceiver file or a probe, not both".into(),
        )),
        (Some(path), None) => {
            PerceiverParams::from_json(&read_to_string(path)?).map_err(|e| with_path(path, e))
        }
        (None, Some(name)) => {
            let idx = IntrinsicMetrics::NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "probe must name an intrinsic metric ({}), got {name}",
                        IntrinsicMetrics::NAMES.join(", ")
                    ))
                })?;
            Ok(PerceiverParams::monotone_probe(idx)?)
        }
        (None, None) => Ok(PerceiverParams::init_seeded(
            cfg.seed.unwrap_or(0),
            tailscope::perceiver::DEFAULT_HIDDEN,
            tailscope::perceiver::DEFAULT_LATENT,
        )),
    }
}

pub fn rank(args: &RankArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if args.perceiver.is_some() {
        cfg.perceiver = args.perceiver.clone();
        cfg.perceiver_probe = None;
    }
    if args.probe.is_some() {
        cfg.perceiver_probe = args.probe.clone();
        cfg.perceiver = None;
    }
    if args.categories.is_some() {
        cfg.memory.categories = args.categories;
    }
    cfg.validate()?;
    let params = perceiver_params(&cfg)?;
    // Weights come from the seed only when no file or probe is given; the
    // forward pass stays in mean mode then, so the seed is not reused.
    let sample_seed = if cfg.perceiver.is_some() {
        cfg.seed
    } else {
        None
    };
    let report = in_pool(&cfg, || {
        let metrics = load_metrics(&cfg)?;
        let options = RankOptions {
            seed: sample_seed,
            categories: cfg.memory.categories,
        };
        Ok(pipeline::rank_scenes(&metrics, &params, None, options)?)
    })?;
    write_json(cfg.out.as_ref(), &report)
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    let e = &mut cfg.eval;
    if args.k.is_some() {
        e.ks = args.k.clone();
    }
    if args.threshold.is_some() {
        e.threshold = args.threshold;
    }
    if args.topk.is_some() {
        e.percents = args.topk.clone();
    }
    if args.rank_metric.is_some() {
        e.rank_metric = args.rank_metric;
    }
    if args.rank_k.is_some() {
        e.rank_k = args.rank_k;
    }
    cfg.validate()?;
    let rank_metric = cfg.eval.rank_metric.ok_or_else(|| {
        CliError::Usage(
            "worst-case ranking metric is required (--rank-metric min_ade|min_fde)".into(),
        )
    })?;
    let mut eval_cfg = EvalConfig::new(rank_metric);
    if let Some(ks) = &cfg.eval.ks {
        eval_cfg.ks = ks.clone();
    }
    if let Some(t) = cfg.eval.threshold {
        eval_cfg.threshold = t;
    }
    if let Some(p) = &cfg.eval.percents {
        eval_cfg.percents = p.clone();
    }
    eval_cfg.rank_k = cfg.eval.rank_k;

    let mut samples = Vec::new();
    for path in &cfg.input {
        samples.extend(eval::parse_forecasts_jsonl(open(path)?).map_err(|e| with_path(path, e))?);
    }
    let report = in_pool(&cfg, || Ok(eval::evaluate(&samples, &eval_cfg)?))?;
    write_json(cfg.out.as_ref(), &report)
}

/// Sidecar path next to the scene CSV, e.g. `scenes.oracle.json`.
pub fn oracle_path(csv: &Path) -> PathBuf {
    csv.with_extension("oracle.json")
}

pub fn synth(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve(args)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("synth needs --out for the scene CSV".into()))?;
    let mut specs: Vec<ScenarioSpec> = Vec::new();
    for path in &cfg.input {
        let value: serde_json::Value = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let parsed = match value {
            serde_json::Value::Array(items) => {
                items.into_iter().map(serde_json::from_value).collect()
            }
            single => serde_json::from_value(single).map(|s| vec![s]),
        };
        specs.extend(parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?);
    }
    if let Some(seed) = cfg.seed {
        for (i, spec) in specs.iter_mut().enumerate() {
            spec.seed = seed.wrapping_add(i as u64);
        }
    }
    let generated = in_pool(&cfg, || Ok(batch::try_map(&specs, synth::generate)?))?;
    let mut oracle: BTreeMap<String, OracleValues> = BTreeMap::new();
    let mut scenes = Vec::with_capacity(generated.len());
    for g in generated {
        let id = g.scene.scene_id().to_string();
        if oracle.insert(id.clone(), g.oracle).is_some() {
            return Err(CliError::Usage(format!("two specs produce scene id {id}")));
        }
        scenes.push(g.scene);
    }
    scenes.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
    let mut csv = Vec::new();
    write_scene_csv(&scenes, &mut csv)?;
    write_output(Some(&out), &csv)?;
    write_json(Some(&oracle_path(&out)), &oracle)
}
