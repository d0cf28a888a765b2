//! Random grid search over learner hyperparameters plus the two dedicated
//! tuners: curriculum stage count and label-noise scale. Every candidate is
//! trained on the train range and scored by greedy validation return.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plan::{build_plan, score_model};
use super::stats::cumulative_return;
use super::{MethodVariant, OracleSpec};
use crate::data::{DataSplit, ProcessedSeries};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::parallel;
use crate::rl::{derive_seed, AlgoConfig};
use crate::smoothing::CurriculumMode;

const SEARCH_STREAM: u64 = 0x6E1D;
const TIS_STREAM: u64 = 0x715;
const SIGMA_STREAM: u64 = 0x516A;

/// Named discrete grids over the tunable fields. Empty grids keep the base
/// configuration value; at least one grid must be non-empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamSpace {
    pub lr: Vec<f64>,
    pub state_lag: Vec<usize>,
    pub steps_per_update: Vec<usize>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub entropy_coef: Vec<f64>,
    pub vf_coef: Vec<f64>,
    pub clip_epsilon: Vec<f64>,
    pub epochs: Vec<usize>,
    pub partition_factor: Vec<usize>,
}

impl HyperparamSpace {
    fn dims(&self) -> Vec<usize> {
        [
            self.lr.len(),
            self.state_lag.len(),
            self.steps_per_update.len(),
            self.gamma.len(),
            self.lambda.len(),
            self.entropy_coef.len(),
            self.vf_coef.len(),
            self.clip_epsilon.len(),
            self.epochs.len(),
            self.partition_factor.len(),
        ]
        .into_iter()
        .filter(|&d| d > 0)
        .collect()
    }

    pub fn total_cells(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().is_empty() {
            return Err(Error::Config("hyperparameter space has no grids".into()));
        }
        if self
            .state_lag
            .iter()
            .any(|&t| !(5..=60).contains(&t) || t % 5 != 0)
        {
            return Err(Error::Config(
                "state lag grid entries must be multiples of 5 in 5..=60".into(),
            ));
        }
        Ok(())
    }

    /// Decodes a mixed-radix cell index into a concrete configuration.
    fn materialize(
        &self,
        cell: usize,
        base_algo: &AlgoConfig,
        base_lag: usize,
    ) -> (AlgoConfig, usize) {
        let mut algo = base_algo.clone();
        let mut lag = base_lag;
        let mut rest = cell;
        let mut take = |len: usize| -> usize {
            if len == 0 {
                return 0;
            }
            let i = rest % len;
            rest /= len;
            i
        };
        if !self.lr.is_empty() {
            algo.lr = self.lr[take(self.lr.len())];
        }
        if !self.state_lag.is_empty() {
            lag = self.state_lag[take(self.state_lag.len())];
        }
        if !self.steps_per_update.is_empty() {
            algo.steps_per_update = self.steps_per_update[take(self.steps_per_update.len())];
        }
        if !self.gamma.is_empty() {
            algo.gamma = self.gamma[take(self.gamma.len())];
        }
        if !self.lambda.is_empty() {
            algo.lambda = self.lambda[take(self.lambda.len())];
        }
        if !self.entropy_coef.is_empty() {
            algo.entropy_coef = self.entropy_coef[take(self.entropy_coef.len())];
        }
        if !self.vf_coef.is_empty() {
            algo.vf_coef = self.vf_coef[take(self.vf_coef.len())];
        }
        if !self.clip_epsilon.is_empty() {
            algo.clip_epsilon = self.clip_epsilon[take(self.clip_epsilon.len())];
        }
        if !self.epochs.is_empty() {
            algo.epochs = self.epochs[take(self.epochs.len())];
        }
        if !self.partition_factor.is_empty() {
            algo.partition_factor = self.partition_factor[take(self.partition_factor.len())];
        }
        (algo, lag)
    }
}

/// Winning configuration of a search plus its validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub algo: AlgoConfig,
    pub state_lag: usize,
    pub validation_return: f64,
    pub sample_index: usize,
}

/// Trains one candidate on the train range and scores it by greedy
/// cumulative return on the validation range.
#[allow(clippy::too_many_arguments)]
fn tune_run(
    variant: &MethodVariant,
    algo: &AlgoConfig,
    env_cfg: &EnvConfig,
    net: &NetConfig,
    series: &Arc<ProcessedSeries>,
    split: &DataSplit,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let plan = build_plan(variant, series, split.train, None, env_cfg, algo, net, seed)?;
    let model = plan.train_one(algo, net, steps, seed)?;
    let rewards = score_model(&model, series, split.validation, env_cfg)?;
    Ok(cumulative_return(&rewards))
}

/// Samples `budget` grid cells uniformly (without replacement when the grid
/// is large enough), trains each for `tune_steps`, and returns the argmax by
/// validation return. Failed candidates score negative infinity. Ties keep
/// the earliest sample.
#[allow(clippy::too_many_arguments)]
pub fn random_grid_search(
    space: &HyperparamSpace,
    budget: usize,
    tune_steps: usize,
    base_algo: &AlgoConfig,
    env_cfg: &EnvConfig,
    net: &NetConfig,
    series: &Arc<ProcessedSeries>,
    split: &DataSplit,
    master_seed: u64,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    space.validate()?;
    let total = space.total_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, SEARCH_STREAM));
    let cells: Vec<usize> = if budget <= total {
        rand::seq::index::sample(&mut rng, total, budget).into_vec()
    } else {
        (0..budget).map(|_| rng.gen_range(0..total)).collect()
    };

    let candidates: Vec<(usize, AlgoConfig, usize)> = cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            let (algo, lag) = space.materialize(cell, base_algo, env_cfg.state_lag);
            (i, algo, lag)
        })
        .collect();

    let scores = parallel::map(candidates.clone(), |(i, algo, lag)| {
        let mut cfg = env_cfg.clone();
        cfg.state_lag = lag;
        tune_run(
            &MethodVariant::Baseline,
            &algo,
            &cfg,
            net,
            series,
            split,
            tune_steps,
            derive_seed(master_seed, SEARCH_STREAM + 1 + i as u64),
        )
        .unwrap_or(f64::NEG_INFINITY)
    });

    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::Numeric(
            "every search candidate failed to train".into(),
        ));
    }
    let (_, algo, lag) = candidates.into_iter().nth(best).unwrap();
    Ok(SearchOutcome {
        algo,
        state_lag: lag,
        validation_return: scores[best],
        sample_index: best,
    })
}

/// Tunes the inverse-smoothing stage count: one training run per candidate
/// (a single sample per stage count), argmax validation return. A singleton
/// space returns its only entry without training.
#[allow(clippy::too_many_arguments)]
pub fn tune_tis(
    s_space: &[u32],
    mode: CurriculumMode,
    algo: &AlgoConfig,
    env_cfg: &EnvConfig,
    net: &NetConfig,
    series: &Arc<ProcessedSeries>,
    split: &DataSplit,
    tune_steps: usize,
    master_seed: u64,
) -> Result<u32> {
    if s_space.is_empty() {
        return Err(Error::Config("stage search space is empty".into()));
    }
    if s_space.iter().any(|&s| !(1..=8).contains(&s)) {
        return Err(Error::Config("stage candidates must be in 1..=8".into()));
    }
    if s_space.len() == 1 {
        return Ok(s_space[0]);
    }
    let scores = parallel::map(s_space.to_vec(), |stages| {
        tune_run(
            &MethodVariant::InverseSmooth { stages, mode },
            algo,
            env_cfg,
            net,
            series,
            split,
            tune_steps,
            derive_seed(master_seed, TIS_STREAM + stages as u64),
        )
        .unwrap_or(f64::NEG_INFINITY)
    });
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::Numeric(
            "every stage candidate failed to train".into(),
        ));
    }
    Ok(s_space[best])
}

/// Tunes the label-noise scale for distillation: one student per candidate
/// sigma, argmax validation return.
#[allow(clippy::too_many_arguments)]
pub fn tune_sigma(
    sigma_space: &[f64],
    algo: &AlgoConfig,
    env_cfg: &EnvConfig,
    net: &NetConfig,
    series: &Arc<ProcessedSeries>,
    split: &DataSplit,
    tune_steps: usize,
    master_seed: u64,
) -> Result<f64> {
    if sigma_space.is_empty() {
        return Err(Error::Config("sigma search space is empty".into()));
    }
    if sigma_space.iter().any(|&s| s < 0.0) {
        return Err(Error::Config("sigma candidates must be >= 0".into()));
    }
    if sigma_space.len() == 1 {
        return Ok(sigma_space[0]);
    }
    let n_assets = series.n_assets();
    let scores = parallel::map(sigma_space.to_vec(), |sigma| {
        tune_run(
            &MethodVariant::Dpd {
                lgn_sigma: Some(vec![sigma; n_assets]),
                oracle: OracleSpec::Analytic,
            },
            algo,
            env_cfg,
            net,
            series,
            split,
            tune_steps,
            derive_seed(master_seed, SIGMA_STREAM),
        )
        .unwrap_or(f64::NEG_INFINITY)
    });
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::Numeric(
            "every sigma candidate failed to train".into(),
        ));
    }
    Ok(sigma_space[best])
}
