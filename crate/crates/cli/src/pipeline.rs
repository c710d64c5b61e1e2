//! Stage scheduling with a hash manifest, so unchanged stages are not recomputed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Source};
use crate::lock::RunLock;
use crate::manifest::{hash_file, is_current, InputHasher, Manifest, StageRecord, Status};
use crate::stages::{self, StageContext};

pub const STAGES: [&str; 6] = ["trend", "knots", "esn", "spde", "calibrate", "power"];
pub const SUMMARY_FILE: &str = "summary.json";

pub fn dependencies(stage: &str) -> &'static [&'static str] {
    match stage {
        "knots" => &["trend"],
        "esn" => &["trend", "knots"],
        "spde" => &["trend", "knots", "esn"],
        "calibrate" | "power" => &["trend", "spde"],
        _ => &[],
    }
}

fn run_stage(stage: &str, ctx: &StageContext) -> Result<Vec<String>> {
    match stage {
        "trend" => stages::stage_trend(ctx),
        "knots" => stages::stage_knots(ctx),
        "esn" => stages::stage_esn(ctx),
        "spde" => stages::stage_spde(ctx),
        "calibrate" => stages::stage_calibrate(ctx),
        "power" => stages::stage_power(ctx),
        other => Err(anyhow!("unknown stage {other}")),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

/// The configuration sections a stage reads, plus the external files it opens.
fn stage_inputs(stage: &str, cfg: &PipelineConfig) -> (Vec<(&'static str, String)>, Vec<PathBuf>) {
    let mut parts = vec![("forecast", json(&cfg.forecast))];
    let mut files = Vec::new();
    match stage {
        "trend" => {
            parts.push(("data", json(&cfg.data)));
            parts.push(("trend", json(&cfg.trend)));
            if cfg.data.source == Source::Files {
                files.extend(cfg.data.field.clone());
                files.extend(cfg.data.locations.clone());
            }
        }
        "knots" => parts.push(("knots", json(&cfg.knots))),
        "esn" => {
            parts.push(("esn", json(&cfg.esn)));
            files.extend(cfg.forecast.tune_grid.clone());
        }
        "spde" => {
            parts.push(("spde", json(&cfg.spde)));
            parts.push(("trend", json(&cfg.trend)));
        }
        "calibrate" => parts.push(("calibrate", json(&cfg.calibrate))),
        "power" => {
            parts.push(("power", json(&cfg.power)));
            if !cfg.power.curve.starts_with("builtin:") {
                files.push(PathBuf::from(&cfg.power.curve));
            }
            files.extend(cfg.power.hub_field.clone());
        }
        _ => {}
    }
    (parts, files)
}

fn input_hash(stage: &str, cfg: &PipelineConfig, manifest: &Manifest) -> Result<String> {
    let mut h = InputHasher::default();
    h.add("version", env!("CARGO_PKG_VERSION"))
        .add("stage", stage)
        .add("seed", &cfg.run.seed.to_string());
    let (parts, files) = stage_inputs(stage, cfg);
    for (label, value) in parts {
        h.add(label, &value);
    }
    for f in files {
        h.add(&f.display().to_string(), &hash_file(&f)?);
    }
    for dep in dependencies(stage) {
        let rec = manifest.get(dep).ok_or_else(|| anyhow!("stage {dep} has no record"))?;
        for (rel, digest) in &rec.outputs {
            h.add(rel, digest);
        }
    }
    Ok(h.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Ran,
    Cached,
    Failed,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub action: Action,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stages: Vec<StageOutcome>,
    #[serde(default)]
    pub forecasts: Vec<String>,
    #[serde(default)]
    pub metrics: Vec<stages::MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunSummary {
    pub fn action(&self, stage: &str) -> Option<Action> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.action)
    }

    pub fn ran(&self) -> Vec<&str> {
        self.stages.iter().filter(|s| s.action == Action::Ran).map(|s| s.stage.as_str()).collect()
    }
}

/// Run every stage in order, skipping those whose inputs and outputs are
/// unchanged since the last successful run. A stage is also rerun whenever
/// an ancestor reran, and a failure blocks everything after it.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<RunSummary> {
    run_until(cfg, force, None)
}

/// Like [`run_pipeline`], but stop after `last` (inclusive) when given.
/// Only a complete run writes the summary file.
pub fn run_until(cfg: &PipelineConfig, force: bool, last: Option<&str>) -> Result<RunSummary> {
    cfg.validate()?;
    let n_stages = match last {
        Some(l) => STAGES.iter().position(|s| *s == l).ok_or_else(|| anyhow!("unknown stage {l}"))? + 1,
        None => STAGES.len(),
    };
    let run_dir = cfg.run.output_dir.as_path();
    let _lock = RunLock::acquire(run_dir)?;
    let mut manifest = Manifest::load(run_dir)?;
    let ctx = StageContext { cfg, run_dir };
    let mut outcomes = Vec::new();
    let mut rerun: BTreeSet<&str> = BTreeSet::new();
    let mut failure: Option<anyhow::Error> = None;

    for stage in &STAGES[..n_stages] {
        let stage = *stage;
        if failure.is_some() {
            // Outputs from an earlier run would no longer match their inputs.
            clear_stage_dir(run_dir, stage)?;
            manifest.upsert(StageRecord {
                stage: stage.into(),
                input_hash: String::new(),
                outputs: BTreeMap::new(),
                wall_time_s: 0.0,
                status: Status::Blocked,
                error: None,
            });
            outcomes.push(StageOutcome { stage: stage.into(), action: Action::Blocked, wall_time_s: 0.0 });
            continue;
        }
        let hash = input_hash(stage, cfg, &manifest)?;
        let ancestor_reran = dependencies(stage).iter().any(|d| rerun.contains(d));
        let cached = manifest.get(stage).is_some_and(|r| is_current(r, &hash, run_dir));
        if cached && !ancestor_reran && !force {
            log::info!("{stage}: up to date");
            outcomes.push(StageOutcome { stage: stage.into(), action: Action::Cached, wall_time_s: 0.0 });
            continue;
        }
        log::info!("{stage}: running");
        clear_stage_dir(run_dir, stage)?;
        let start = Instant::now();
        let result = run_stage(stage, &ctx);
        let wall = start.elapsed().as_secs_f64();
        rerun.insert(stage);
        match result {
            Ok(files) => {
                let mut outputs = BTreeMap::new();
                for rel in files {
                    let digest = hash_file(&run_dir.join(&rel))?;
                    outputs.insert(rel, digest);
                }
                manifest.upsert(StageRecord {
                    stage: stage.into(),
                    input_hash: hash,
                    outputs,
                    wall_time_s: wall,
                    status: Status::Ok,
                    error: None,
                });
                outcomes.push(StageOutcome { stage: stage.into(), action: Action::Ran, wall_time_s: wall });
            }
            Err(e) => {
                log::error!("{stage} failed: {e:#}");
                manifest.upsert(StageRecord {
                    stage: stage.into(),
                    input_hash: hash,
                    outputs: BTreeMap::new(),
                    wall_time_s: wall,
                    status: Status::Failed,
                    error: Some(format!("{e:#}")),
                });
                outcomes.push(StageOutcome { stage: stage.into(), action: Action::Failed, wall_time_s: wall });
                failure = Some(e.context(format!("stage {stage} failed")));
            }
        }
        manifest.save(run_dir)?;
    }
    manifest.save(run_dir)?;

    let mut summary = RunSummary {
        seed: cfg.run.seed,
        stages: outcomes,
        forecasts: Vec::new(),
        metrics: Vec::new(),
        error: failure.as_ref().map(|e| format!("{e:#}")),
    };
    if n_stages < STAGES.len() {
        return match failure {
            Some(e) => Err(e),
            None => Ok(summary),
        };
    }
    if failure.is_none() {
        summary.forecasts = (1..=cfg.forecast.max_lead).map(stages::spde_forecast_csv).collect();
        summary.metrics = stages::read_json(&run_dir.join(stages::SPDE_METRICS))?;
    }
    stages::write_json(&summary, &run_dir.join(SUMMARY_FILE))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

fn clear_stage_dir(run_dir: &Path, stage: &str) -> Result<()> {
    let dir = run_dir.join(stage);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| anyhow!(e).context(format!("clearing {}", dir.display())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dependencies_precede_their_stage() {
        for (i, s) in STAGES.iter().enumerate() {
            for d in dependencies(s) {
                let j = STAGES.iter().position(|x| x == d).unwrap();
                assert!(j < i, "{d} must run before {s}");
            }
        }
    }
}
