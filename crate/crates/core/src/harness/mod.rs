//! Experiment runner: config files, multi-seed runs with persisted records,
//! the lambda grid, loss-component ablations and plot data.

mod config;
mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ComponentMask;
use crate::model::{load_checkpoint, save_checkpoint, EmbeddingModel};
use crate::retrieval::{RecallEvaluator, RetrievalReport};
use crate::trainer::{run_sequence, SequenceHook, TrainingTrace};

pub use config::{
    DatasetConfig, EvalConfig, ExperimentConfig, OutputConfig, ProtocolConfig, SplitKind, TrainSection, CONFIG_VERSION,
};
pub use plot::{emit_plot_data, parse_plot_data, write_plot_data, PlotRow};

/// Version string stored with every record.
pub const ARTIFACT_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

const RUN_FILE: &str = "run.json";
const SEED_FILE: &str = "seed.json";

/// Result of one training sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub config_hash: String,
    pub report: RetrievalReport,
    pub trace: TrainingTrace,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Seed statistics of the final-checkpoint summary row at one K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub k: usize,
    pub first: MeanStd,
    pub last: MeanStd,
    pub average: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    /// Method label used in tables and plot data.
    pub label: String,
    pub config_hash: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn checkpoints(&self) -> &[String] {
        self.seeds
            .first()
            .map(|s| s.report.checkpoints.as_slice())
            .unwrap_or(&[])
    }

    pub fn summary(&self, k: usize) -> Option<SummaryStats> {
        let rows: Option<Vec<_>> = self.seeds.iter().map(|s| s.report.summary(k)).collect();
        let rows = rows.filter(|r| !r.is_empty())?;
        let col = |f: fn(&crate::retrieval::SummaryRow) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
        Some(SummaryStats {
            k,
            first: col(|r| r.first),
            last: col(|r| r.last),
            average: col(|r| r.average),
        })
    }

    /// Seed-mean recall of one evaluation group at every checkpoint.
    pub fn mean_curve(&self, group: usize, k: usize) -> Vec<f64> {
        let n = self.seeds.len() as f64;
        let mut curve = vec![0.0; self.checkpoints().len()];
        for s in &self.seeds {
            for (acc, v) in curve.iter_mut().zip(s.report.curve(group, k)) {
                *acc += v / n;
            }
        }
        curve
    }
}

fn pct(s: MeanStd) -> String {
    format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std)
}

/// Table with one row per record: first group, last group and their average
/// at the final checkpoint, as mean ± std over seeds in percent.
pub fn summary_table(records: &[RunRecord], k: usize) -> String {
    let mut out = String::new();
    let (first, last) = records
        .first()
        .and_then(|r| r.seeds.first())
        .map(|s| {
            let g = &s.report.groups;
            (
                g.first().map(|g| g.name.clone()).unwrap_or_default(),
                g.last().map(|g| g.name.clone()).unwrap_or_default(),
            )
        })
        .unwrap_or_default();
    writeln!(out, "# Recall@{k} (%) at final checkpoint, mean ± std over seeds").unwrap();
    writeln!(out, "method\t{first}\t{last}\taverage").unwrap();
    for r in records {
        if let Some(s) = r.summary(k) {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.label,
                pct(s.first),
                pct(s.last),
                pct(s.average)
            )
            .unwrap();
        }
    }
    out
}

fn method_label(config: &ExperimentConfig) -> String {
    if config.protocol.joint {
        "joint".to_string()
    } else {
        config.components.to_string()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct CheckpointWriter {
    dir: PathBuf,
}

impl SequenceHook for CheckpointWriter {
    fn on_checkpoint(
        &mut self,
        checkpoint: usize,
        _label: &str,
        model: &EmbeddingModel,
        _: &RetrievalReport,
    ) -> Result<()> {
        save_checkpoint(
            model,
            Some(checkpoint),
            &self.dir.join(format!("stage-{checkpoint}.json")),
        )
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let started = Instant::now();
    let seq = config.task_sequence(seed)?;
    let evaluator = RecallEvaluator::from_sequence(&seq, &config.eval.k);
    let train_seq = if config.protocol.joint { seq.joint() } else { seq };
    let train_config = config.train_config(seed);
    let mut writer = dir.map(|d| CheckpointWriter {
        dir: d.join("checkpoints"),
    });
    if let Some(w) = &writer {
        fs::create_dir_all(&w.dir).map_err(|e| Error::io(&w.dir, e))?;
    }
    let mut hooks: Vec<&mut dyn SequenceHook> = writer.iter_mut().map(|w| w as &mut dyn SequenceHook).collect();
    let outcome = run_sequence(&train_seq, &train_config, Some(&evaluator), &mut hooks)?;
    let wall_clock_secs = if config.deterministic {
        0.0
    } else {
        started.elapsed().as_secs_f64()
    };
    Ok(SeedRun {
        seed,
        config_hash: config.hash(),
        report: outcome.report,
        trace: outcome.trace,
        wall_clock_secs,
    })
}

fn persist_seed(run: &SeedRun, dir: &Path) -> Result<()> {
    let mut trace = Vec::new();
    run.trace.write_jsonl(&mut trace).map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join("trace.jsonl"), trace).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.txt"), &run.report.to_text())?;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&run.report)?)?;
    write_file(&dir.join(SEED_FILE), &serde_json::to_string(run)?)
}

/// Removes what an earlier run wrote into `dir`, leaving foreign files alone.
fn clear_outputs(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if name.starts_with("seed-") && path.is_dir() {
            fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        } else if [RUN_FILE, "summary.txt", "config.toml"].contains(&name.as_str()) {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Whether a completed record in `dir` matches `hash`. A record for a
/// different config is an error unless `overwrite` is set.
fn existing_record(path: &Path, hash: &str, overwrite: bool) -> Result<Option<RunRecord>> {
    if !path.exists() || overwrite {
        return Ok(None);
    }
    let record: RunRecord = read_json(path)?;
    if record.config_hash == hash {
        Ok(Some(record))
    } else {
        Err(Error::OutputExists(path.parent().unwrap_or(path).to_path_buf()))
    }
}

/// Trains the full sequence once per seed. With an output directory every
/// seed gets `seed-<n>/` holding its trace, report and stage checkpoints,
/// and the directory gets `run.json`, `summary.txt` and the resolved config.
///
/// Rerunning into a directory that holds a completed run of the same config
/// returns the stored record without training; completed seeds of an
/// interrupted run are reused. Output from a different config is an
/// [`Error::OutputExists`] unless `overwrite` is set.
pub fn run_experiment(config: &ExperimentConfig, overwrite: bool) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let hash = config.hash();
    let dir = config.output_dir();
    if let Some(dir) = dir {
        if let Some(record) = existing_record(&dir.join(RUN_FILE), &hash, overwrite)? {
            log::info!("{}: already complete in {}", config.name, dir.display());
            return Ok(record);
        }
        if overwrite {
            clear_outputs(dir)?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("config.toml"), &config.to_toml()?)?;
    }

    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let seed_dir = dir.map(|d| d.join(format!("seed-{seed}")));
        if let Some(sd) = &seed_dir {
            let done = sd.join(SEED_FILE);
            if done.exists() {
                let run: SeedRun = read_json(&done)?;
                if run.config_hash != hash {
                    return Err(Error::OutputExists(sd.clone()));
                }
                log::info!("{}: reusing seed {seed}", config.name);
                seeds.push(run);
                continue;
            }
        }
        log::info!("{}: seed {seed}", config.name);
        let run = run_seed(config, seed, seed_dir.as_deref())?;
        if let Some(sd) = &seed_dir {
            persist_seed(&run, sd)?;
        }
        seeds.push(run);
    }

    let record = RunRecord {
        name: config.name.clone(),
        label: method_label(config),
        config_hash: hash,
        version: ARTIFACT_VERSION.to_string(),
        config: config.clone(),
        seeds,
        wall_clock_secs: if config.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        },
    };
    if let Some(dir) = dir {
        write_file(&dir.join(RUN_FILE), &serde_json::to_string(&record)?)?;
        write_file(
            &dir.join("summary.txt"),
            &summary_table(std::slice::from_ref(&record), config.eval.k[0]),
        )?;
    }
    Ok(record)
}

/// Loads the record of a completed run from its output directory.
pub fn load_record(dir: &Path) -> Result<RunRecord> {
    read_json(&dir.join(RUN_FILE))
}

fn cell_config(base: &ExperimentConfig, subdir: &str, name: String) -> ExperimentConfig {
    let mut config = base.clone();
    config.name = name;
    config.output.dir = base.output.dir.as_ref().map(|d| d.join(subdir));
    config
}

fn run_cells(configs: &[ExperimentConfig], overwrite: bool) -> Result<Vec<RunRecord>> {
    if configs.first().is_some_and(|c| c.deterministic) {
        configs.iter().map(|c| run_experiment(c, overwrite)).collect()
    } else {
        configs.par_iter().map(|c| run_experiment(c, overwrite)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda_kd: f64,
    pub lambda_csd: f64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    /// Row-major over `(lambda_kd, lambda_csd)`.
    pub cells: Vec<GridCell>,
}

impl LambdaGrid {
    pub fn cell(&self, lambda_kd: f64, lambda_csd: f64) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.lambda_kd == lambda_kd && c.lambda_csd == lambda_csd)
    }

    /// One row per cell with the seed-mean first, last and average recall
    /// in percent.
    pub fn to_table(&self, k: usize) -> String {
        let mut out = String::new();
        writeln!(out, "# Recall@{k} (%) at final checkpoint, mean over seeds").unwrap();
        writeln!(out, "lambda_kd\tlambda_csd\tfirst\tlast\taverage").unwrap();
        for c in &self.cells {
            if let Some(s) = c.record.summary(k) {
                writeln!(
                    out,
                    "{}\t{}\t{:.1}\t{:.1}\t{:.1}",
                    c.lambda_kd,
                    c.lambda_csd,
                    100.0 * s.first.mean,
                    100.0 * s.last.mean,
                    100.0 * s.average.mean
                )
                .unwrap();
            }
        }
        out
    }
}

/// Runs every `(lambda_kd, lambda_csd)` pair from `values` squared. Cells
/// write to `<output>/grid/kd=<a>_csd=<b>/`.
pub fn run_lambda_grid(base: &ExperimentConfig, values: &[f64], overwrite: bool) -> Result<LambdaGrid> {
    if values.is_empty() {
        return Err(Error::config("grid.values", "needs at least one lambda value"));
    }
    base.validate()?;
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .flat_map(|&kd| values.iter().map(move |&csd| (kd, csd)))
        .map(|(kd, csd)| {
            let tag = format!("kd={kd}_csd={csd}");
            let mut config = cell_config(base, &format!("grid/{tag}"), format!("{}-{tag}", base.name));
            config.loss.lambda_kd = kd;
            config.loss.lambda_csd = csd;
            config
        })
        .collect();
    let cells = run_cells(&configs, overwrite)?
        .into_iter()
        .zip(&configs)
        .map(|(record, c)| GridCell {
            lambda_kd: c.loss.lambda_kd,
            lambda_csd: c.loss.lambda_csd,
            record,
        })
        .collect();
    let grid = LambdaGrid {
        values: values.to_vec(),
        cells,
    };
    if let Some(dir) = base.output_dir() {
        write_file(&dir.join("grid").join("grid.txt"), &grid.to_table(base.eval.k[0]))?;
    }
    Ok(grid)
}

/// One sequence per component mask. Cells write to
/// `<output>/ablation/<mask>/` and a Recall@1 curve file per mask,
/// `<output>/ablation/curve-<mask>.csv`, plus `curves.csv` overlaying all.
pub fn run_component_ablation(
    base: &ExperimentConfig,
    masks: &[ComponentMask],
    overwrite: bool,
) -> Result<Vec<RunRecord>> {
    if masks.is_empty() {
        return Err(Error::config("ablation.masks", "needs at least one mask"));
    }
    if let Some(m) = masks.iter().find(|m| !m.ce) {
        return Err(Error::config("components.ce", format!("mask `{m}` must include ce")));
    }
    base.validate()?;
    let configs: Vec<ExperimentConfig> = masks
        .iter()
        .map(|&mask| {
            let mut config = cell_config(base, &format!("ablation/{mask}"), format!("{}-{mask}", base.name));
            config.components = mask;
            config
        })
        .collect();
    let records = run_cells(&configs, overwrite)?;
    if let Some(dir) = base.output_dir() {
        let dir = dir.join("ablation");
        write_ablation_curves(&records, &dir)?;
        write_plot_data(&records, 1, &dir.join("curves.csv"))?;
    }
    Ok(records)
}

/// Writes `curve-<label>.csv` for every record and returns the paths.
pub fn write_ablation_curves(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    records
        .iter()
        .map(|r| {
            let path = dir.join(format!("curve-{}.csv", r.label));
            write_plot_data(std::slice::from_ref(r), 1, &path)?;
            Ok(path)
        })
        .collect()
}

/// Evaluates a stored model checkpoint on every evaluation group of the
/// sequence `config` builds for `seed`.
pub fn evaluate_checkpoint(config: &ExperimentConfig, seed: u64, checkpoint: &Path) -> Result<RetrievalReport> {
    let stored = load_checkpoint(checkpoint)?;
    let seq = config.task_sequence(seed)?;
    let evaluator = RecallEvaluator::from_sequence(&seq, &config.eval.k);
    let mut report = evaluator.empty_report();
    evaluator.evaluate_into(&stored.model, &checkpoint.display().to_string(), &mut report)?;
    Ok(report)
}
