//! Command implementations behind the CLI: process, synth, tune, train,
//! evaluate, report. Each command is idempotent given identical inputs and
//! master seed, and records a manifest with the config hash.

mod config;

pub use config::{
    resolve, AlgoSection, ConfigFile, CsvSource, DataSection, DataSource, EnvSection, ExpSection,
    IlSection, MethodKey, NetSection, OptSection, RunConfig, SigmaValue, SmoothingSection,
    SplitSection, FILE_VERSION,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{self, generate_synthetic, load_csv, process_raw, GroundTruth, ProcessedSeries};
use crate::env::{EnvConfig, ObservationKind, RewardMode};
use crate::error::{Error, Result};
use crate::experiment::{
    emit_report, random_grid_search, run_replicas, tune_sigma, tune_tis, welch_one_sided,
    HyperparamSpace, MethodSpec, MethodVariant, OracleSpec, ReplicaReport, ReplicaSettings,
    ReportDocument, ReportFiles, TTestResult,
};
use crate::imitation::OracleKind;
use crate::parallel;
use crate::rl::derive_seed;

const TIS_CMD_STREAM: u64 = 0x7157;
const TRAIN_STREAM: u64 = 0x7124;

#[derive(Debug, Serialize, Deserialize)]
struct SeriesFile {
    version: u32,
    series: ProcessedSeries,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthFile {
    version: u32,
    ground_truth: GroundTruth,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: crate::rl::TrainedModel,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    master_seed: u64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    tuned: BTreeMap<String, serde_json::Value>,
    outputs: Vec<String>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    tuned: BTreeMap<String, serde_json::Value>,
    outputs: &[PathBuf],
) -> Result<()> {
    let manifest = Manifest {
        command,
        config_hash: cfg.config_hash(),
        master_seed: cfg.master_seed,
        tuned,
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

pub fn save_series_file(path: &Path, series: &ProcessedSeries) -> Result<()> {
    write_json(
        path,
        &SeriesFile {
            version: FILE_VERSION,
            series: series.clone(),
        },
    )
}

pub fn load_series_file(path: &Path) -> Result<ProcessedSeries> {
    let text = std::fs::read_to_string(path)?;
    let file: SeriesFile = serde_json::from_str(&text)?;
    if file.version != FILE_VERSION {
        return Err(Error::Validation(format!(
            "series file version {} unsupported (expected {FILE_VERSION})",
            file.version
        )));
    }
    Ok(file.series)
}

pub fn save_model_file(path: &Path, model: &crate::rl::TrainedModel) -> Result<()> {
    write_json(
        path,
        &ModelFile {
            version: FILE_VERSION,
            model: model.clone(),
        },
    )
}

pub fn load_model_file(path: &Path) -> Result<crate::rl::TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.version != FILE_VERSION {
        return Err(Error::Validation(format!(
            "model file version {} unsupported (expected {FILE_VERSION})",
            file.version
        )));
    }
    Ok(file.model)
}

/// Materializes the configured data source into a processed series with its
/// universe designated.
pub fn load_series(cfg: &RunConfig) -> Result<(Arc<ProcessedSeries>, Option<GroundTruth>)> {
    let (mut series, truth) = match &cfg.data {
        DataSource::Csv { path, kinds } => {
            let raw = load_csv(path, kinds)?;
            (process_raw(&raw)?, None)
        }
        DataSource::Synthetic(spec) => {
            let (s, g) = generate_synthetic(spec)?;
            (s, Some(g))
        }
        DataSource::Processed(path) => (load_series_file(path)?, None),
    };
    if let Some(universe) = &cfg.universe {
        series.set_universe(universe)?;
    }
    if series.universe.is_empty() {
        return Err(Error::Config(
            "no universe: set env.universe or use a source with a stored universe".into(),
        ));
    }
    Ok((Arc::new(series), truth))
}

fn env_config(cfg: &RunConfig, series: &ProcessedSeries) -> EnvConfig {
    let universe = cfg.universe.clone().unwrap_or_else(|| {
        series
            .universe
            .iter()
            .map(|&i| series.columns[i].name.clone())
            .collect()
    });
    EnvConfig {
        universe,
        state_lag: cfg.state_lag,
        gross_limit: cfg.gross_limit,
        reward: RewardMode::EnvReturn,
        linear_reward: cfg.linear_reward,
        observation: ObservationKind::Lagged,
    }
}

fn oracle_spec(cfg: &RunConfig) -> OracleSpec {
    match cfg.il.oracle {
        OracleKind::Analytic => OracleSpec::Analytic,
        OracleKind::Rl => OracleSpec::Rl {
            steps: cfg.il.oracle_steps,
        },
    }
}

/// Expands one method key into its named spec. `tuned_stages` supplies the
/// stage count for `tis` (already tuned).
fn method_spec(
    key: MethodKey,
    cfg: &RunConfig,
    n_assets: usize,
    tuned_stages: Option<u32>,
) -> Result<MethodSpec> {
    let prefix = cfg.algo.algorithm.name();
    let (name, variant) = match key {
        MethodKey::Rp => ("rp".to_string(), MethodVariant::Rp),
        MethodKey::Baseline => (prefix.to_string(), MethodVariant::Baseline),
        MethodKey::Dpd => (
            format!("{prefix}-dpd"),
            MethodVariant::Dpd {
                lgn_sigma: None,
                oracle: oracle_spec(cfg),
            },
        ),
        MethodKey::DpdLgn => {
            let sigma = cfg
                .il
                .lgn_sigma
                .as_ref()
                .ok_or_else(|| {
                    Error::Config("method dpd-lgn needs il.lgn_sigma (tune first or set it)".into())
                })?
                .broadcast(n_assets)?;
            (
                format!("{prefix}-dpd-lgn"),
                MethodVariant::Dpd {
                    lgn_sigma: Some(sigma),
                    oracle: oracle_spec(cfg),
                },
            )
        }
        MethodKey::Opd => (
            format!("{prefix}-opd"),
            MethodVariant::Opd {
                coef: cfg.il.opd_coef,
                oracle: oracle_spec(cfg),
            },
        ),
        MethodKey::Round => (
            format!("{prefix}-r"),
            MethodVariant::Round {
                decimals: cfg.smoothing.decimals,
            },
        ),
        MethodKey::Ema => (
            format!("{prefix}-ema{}", cfg.smoothing.w_l),
            MethodVariant::Ema {
                w_l: cfg.smoothing.w_l,
            },
        ),
        MethodKey::Is => (
            format!("{prefix}-is{}", cfg.smoothing.stages),
            MethodVariant::InverseSmooth {
                stages: cfg.smoothing.stages,
                mode: cfg.smoothing.mode,
            },
        ),
        MethodKey::Tis => {
            let stages = tuned_stages.ok_or_else(|| {
                Error::Config("tis method reached without a tuned stage count".into())
            })?;
            (
                format!("{prefix}-tis"),
                MethodVariant::InverseSmooth {
                    stages,
                    mode: cfg.smoothing.mode,
                },
            )
        }
    };
    Ok(MethodSpec { name, variant })
}

/// Loads (or synthesizes) the configured data and writes the processed
/// series file.
pub fn cmd_process(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let (series, _) = load_series(cfg)?;
    let path = out.join("processed.json");
    save_series_file(&path, &series)?;
    write_manifest(
        out,
        "process",
        cfg,
        BTreeMap::new(),
        std::slice::from_ref(&path),
    )?;
    Ok(path)
}

/// Generates synthetic data and writes the series plus its exact
/// signal/noise decomposition.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(Error::Config("synth needs data.synthetic".into()));
    };
    std::fs::create_dir_all(out)?;
    let (series, truth) = load_series(cfg)?;
    let truth = truth.expect("synthetic source always has ground truth");
    let series_path = out.join("series.json");
    save_series_file(&series_path, &series)?;
    let truth_path = out.join("ground_truth.json");
    write_json(
        &truth_path,
        &GroundTruthFile {
            version: FILE_VERSION,
            ground_truth: truth,
        },
    )?;
    write_manifest(
        out,
        "synth",
        cfg,
        BTreeMap::new(),
        &[series_path.clone(), truth_path.clone()],
    )?;
    Ok((series_path, truth_path))
}

/// Tunes whatever the configured methods call for (shared hyperparameters by
/// random grid search, the curriculum stage count, the label-noise scale) and
/// emits a tuned config file that `evaluate` consumes unchanged.
pub fn cmd_tune(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    parallel::with_workers(cfg.exp.workers, || cmd_tune_inner(cfg, out))
}

fn cmd_tune_inner(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let (series, _) = load_series(cfg)?;
    let split = data::split(&series, cfg.split_ratios)?;
    split.require_min_len(cfg.state_lag)?;
    let env = env_config(cfg, &series);

    let mut canonical = cfg.canonical.clone();
    let mut tuned: BTreeMap<String, serde_json::Value> = BTreeMap::new();

    let needs_learner = cfg.methods.iter().any(|m| *m != MethodKey::Rp);
    if needs_learner {
        let space = cfg.space.clone().unwrap_or_else(|| HyperparamSpace {
            state_lag: (1..=12).map(|k| 5 * k).collect(),
            ..HyperparamSpace::default()
        });
        let budget = cfg.exp.tune_samples.min(space.total_cells()).max(1);
        let outcome = random_grid_search(
            &space,
            budget,
            cfg.exp.tune_steps,
            &cfg.algo,
            &env,
            &cfg.net,
            &series,
            &split,
            cfg.master_seed,
        )?;
        canonical["env"]["state_lag"] = outcome.state_lag.into();
        let algo_json = &mut canonical["algo"];
        if !space.lr.is_empty() {
            algo_json["lr"] = outcome.algo.lr.into();
        }
        if !space.steps_per_update.is_empty() {
            algo_json["steps_per_update"] = outcome.algo.steps_per_update.into();
        }
        if !space.gamma.is_empty() {
            algo_json["gamma"] = outcome.algo.gamma.into();
        }
        if !space.lambda.is_empty() {
            algo_json["lambda"] = outcome.algo.lambda.into();
        }
        if !space.entropy_coef.is_empty() {
            algo_json["entropy_coef"] = outcome.algo.entropy_coef.into();
        }
        if !space.vf_coef.is_empty() {
            algo_json["vf_coef"] = outcome.algo.vf_coef.into();
        }
        if !space.clip_epsilon.is_empty() {
            algo_json["clip_epsilon"] = outcome.algo.clip_epsilon.into();
        }
        if !space.epochs.is_empty() {
            algo_json["epochs"] = outcome.algo.epochs.into();
        }
        if !space.partition_factor.is_empty() {
            algo_json["partition_factor"] = outcome.algo.partition_factor.into();
        }
        tuned.insert(
            "hyperparameters".into(),
            serde_json::json!({
                "state_lag": outcome.state_lag,
                "validation_return": outcome.validation_return,
                "sample_index": outcome.sample_index,
            }),
        );
    }

    if cfg.methods.contains(&MethodKey::Tis) {
        let stages = tune_tis(
            &cfg.tis_space,
            cfg.smoothing.mode,
            &cfg.algo,
            &env,
            &cfg.net,
            &series,
            &split,
            cfg.exp.total_steps,
            derive_seed(cfg.master_seed, TIS_CMD_STREAM),
        )?;
        canonical["tis_space"] = serde_json::json!([stages]);
        tuned.insert("tis_stages".into(), stages.into());
    }

    if cfg.methods.contains(&MethodKey::DpdLgn) && cfg.il.lgn_sigma.is_none() {
        let sigma = tune_sigma(
            &cfg.sigma_space,
            &cfg.algo,
            &env,
            &cfg.net,
            &series,
            &split,
            cfg.exp.tune_steps,
            cfg.master_seed,
        )?;
        canonical["il"]["lgn_sigma"] = sigma.into();
        tuned.insert("lgn_sigma".into(), sigma.into());
    }

    if tuned.is_empty() {
        return Err(Error::Config(
            "nothing to tune for the configured methods".into(),
        ));
    }

    let path = out.join("tuned_config.json");
    write_json(&path, &canonical)?;
    // the emitted file must re-parse to identical values
    let reparsed = ConfigFile::from_path(&path)?;
    resolve(&reparsed)?;
    write_manifest(out, "tune", cfg, tuned, std::slice::from_ref(&path))?;
    Ok(path)
}

/// Trains the replica models for the single configured method and writes one
/// model file per seed.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    parallel::with_workers(cfg.exp.workers, || cmd_train_inner(cfg, out))
}

fn cmd_train_inner(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.methods.len() != 1 {
        return Err(Error::Config("train expects exactly one method".into()));
    }
    if cfg.methods[0] == MethodKey::Rp {
        return Err(Error::Config(
            "the rebalanced portfolio has no model to train".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let (series, _) = load_series(cfg)?;
    let split = data::split(&series, cfg.split_ratios)?;
    split.require_min_len(cfg.state_lag)?;
    let env = env_config(cfg, &series);

    let tuned_stages = (cfg.methods[0] == MethodKey::Tis).then(|| cfg.tis_space[0]);
    let spec = method_spec(cfg.methods[0], cfg, series.n_assets(), tuned_stages)?;
    let plan = crate::experiment::build_plan(
        &spec.variant,
        &series,
        split.train,
        Some(split.validation),
        &env,
        &cfg.algo,
        &cfg.net,
        cfg.master_seed,
    )?;

    let jobs: Vec<(usize, u64)> = (0..cfg.exp.seeds)
        .map(|i| (i, derive_seed(cfg.master_seed, TRAIN_STREAM + i as u64)))
        .collect();
    let models = parallel::map(jobs, |(i, seed)| {
        plan.train_one(&cfg.algo, &cfg.net, cfg.exp.total_steps, seed)
            .map(|m| (i, m))
    });

    let mut paths = Vec::new();
    for result in models {
        let (i, model) = result?;
        let path = out.join(format!("model_seed{i}.json"));
        save_model_file(&path, &model)?;
        paths.push(path);
    }
    write_manifest(out, "train", cfg, BTreeMap::new(), &paths)?;
    Ok(paths)
}

/// Runs the full seed-replicated comparison and writes results.csv,
/// results.json and the per-method equity curves.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<ReportFiles> {
    parallel::with_workers(cfg.exp.workers, || cmd_evaluate_inner(cfg, out))
}

fn cmd_evaluate_inner(cfg: &RunConfig, out: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(out)?;
    let (series, _) = load_series(cfg)?;
    let split = data::split(&series, cfg.split_ratios)?;
    split.require_min_len(cfg.state_lag)?;
    let env = env_config(cfg, &series);
    let settings = ReplicaSettings {
        n_seeds: cfg.exp.seeds,
        total_steps: cfg.exp.total_steps,
        master_seed: cfg.master_seed,
    };

    let mut tuned: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    let mut reports: Vec<ReplicaReport> = Vec::new();
    let mut baseline_idx: Option<usize> = None;
    for &key in &cfg.methods {
        let tuned_stages = if key == MethodKey::Tis {
            let stages = tune_tis(
                &cfg.tis_space,
                cfg.smoothing.mode,
                &cfg.algo,
                &env,
                &cfg.net,
                &series,
                &split,
                cfg.exp.total_steps,
                derive_seed(cfg.master_seed, TIS_CMD_STREAM),
            )?;
            tuned.insert("tis_stages".into(), stages.into());
            Some(stages)
        } else {
            None
        };
        let spec = method_spec(key, cfg, series.n_assets(), tuned_stages)?;
        let report = run_replicas(&spec, &series, &split, &env, &cfg.algo, &cfg.net, &settings)?;
        for failure in &report.failures {
            eprintln!("warning: {} {failure}", report.method);
        }
        if key == MethodKey::Baseline {
            baseline_idx = Some(reports.len());
        }
        reports.push(report);
    }

    let mut tests: BTreeMap<String, TTestResult> = BTreeMap::new();
    if let Some(b) = baseline_idx {
        let baseline = reports[b].clone();
        if baseline.n >= 2 {
            for report in &reports {
                if report.method != baseline.method && report.n >= 2 {
                    tests.insert(
                        report.method.clone(),
                        welch_one_sided(&baseline.returns, &report.returns)?,
                    );
                }
            }
        }
    }

    let files = emit_report(&reports, &tests, out)?;
    let mut outputs = vec![files.csv.clone(), files.json.clone()];
    outputs.extend(files.curves.iter().cloned());
    write_manifest(out, "evaluate", cfg, tuned, &outputs)?;
    Ok(files)
}

/// Re-renders the tables and plots of a finished run directory from its
/// results.json and prints the summary table.
pub fn cmd_report(dir: &Path) -> Result<ReportFiles> {
    let text = std::fs::read_to_string(dir.join("results.json"))?;
    let doc: ReportDocument = serde_json::from_str(&text)?;
    let files = emit_report(&doc.methods, &doc.tests, dir)?;
    println!(
        "{:<24} {:>12} {:>12} {:>5} {:>9} {:>12}",
        "method", "mean", "std", "n", "t_stat", "p_value_pct"
    );
    for m in &doc.methods {
        let (t, p) = match doc.tests.get(&m.method) {
            Some(t) => (format!("{:.2}", t.t_stat), format!("{:.2}", t.p_value_pct)),
            None => ("-".into(), "-".into()),
        };
        println!(
            "{:<24} {:>12.3} {:>12.3} {:>5} {:>9} {:>12}",
            m.method, m.mean, m.std, m.n, t, p
        );
    }
    Ok(files)
}
