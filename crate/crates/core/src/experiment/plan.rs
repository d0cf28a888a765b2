//! Turns a method variant into a concrete training plan: the (possibly
//! transformed) training series, reward hook, oracle labels and curriculum.
//!
//! Curriculum transforms are applied to training data only; validation and
//! test inference always run on the raw series. Smoothing is applied per
//! split before concatenation, and oracle labels (with their optional
//! Gaussian perturbation) are built once and shared across replica seeds.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MethodVariant, OracleSpec};
use crate::data::{concat, ProcessedSeries, Span};
use crate::env::{EnvConfig, PortfolioEnv};
use crate::error::{Error, Result};
use crate::imitation::{analytic_oracle, lgn_perturb, rl_oracle, OracleTrajectory};
use crate::net::NetConfig;
use crate::rl::{derive_seed, evaluate_greedy, train, AlgoConfig, TrainSpec, TrainedModel};
use crate::smoothing::{apply, CurriculumSchedule, SmoothingMethod};

const LGN_STREAM: u64 = 0xA11CE;
const ORACLE_STREAM: u64 = 0x0AC1E;

/// A ready-to-train description shared by all replica seeds of one method.
#[derive(Debug, Clone)]
pub struct TrainingPlan {
    pub series: Arc<ProcessedSeries>,
    pub span: Span,
    pub env_cfg: EnvConfig,
    pub oracle: Option<Arc<OracleTrajectory>>,
    pub curriculum: Option<CurriculumSchedule>,
}

impl TrainingPlan {
    pub fn train_one(
        &self,
        algo: &AlgoConfig,
        net: &NetConfig,
        total_steps: usize,
        seed: u64,
    ) -> Result<TrainedModel> {
        train(&TrainSpec {
            series: &self.series,
            span: self.span,
            env_cfg: self.env_cfg.clone(),
            oracle: self.oracle.clone(),
            algo: algo.clone(),
            net: net.clone(),
            total_steps,
            seed,
            curriculum: self.curriculum,
        })
    }
}

/// Builds the training plan for a method over `train_span`, optionally
/// extended with `val_span` (the final retraining configuration). `algo` and
/// `net` are only consulted when an RL oracle has to be trained.
#[allow(clippy::too_many_arguments)]
pub fn build_plan(
    variant: &MethodVariant,
    series: &Arc<ProcessedSeries>,
    train_span: Span,
    val_span: Option<Span>,
    env_cfg: &EnvConfig,
    algo: &AlgoConfig,
    net: &NetConfig,
    master_seed: u64,
) -> Result<TrainingPlan> {
    let transform = |segment: &ProcessedSeries| -> Result<ProcessedSeries> {
        match variant {
            MethodVariant::Round { decimals } => {
                apply(segment, SmoothingMethod::Round { d: *decimals })
            }
            MethodVariant::Ema { w_l } => apply(segment, SmoothingMethod::Ema { w_l: *w_l }),
            _ => Ok(segment.clone()),
        }
    };

    let train_part = transform(&series.slice(train_span))?;
    let full = match val_span {
        Some(vs) => concat(&train_part, &transform(&series.slice(vs))?)?,
        None => train_part,
    };
    let full = Arc::new(full);
    let span = Span::new(0, full.len());

    let extract_oracle = |spec: &OracleSpec| -> Result<OracleTrajectory> {
        match spec {
            OracleSpec::Analytic => analytic_oracle(&full, span, env_cfg.gross_limit),
            OracleSpec::Rl { steps } => rl_oracle(
                &full,
                span,
                env_cfg.gross_limit,
                algo,
                net,
                *steps,
                derive_seed(master_seed, ORACLE_STREAM),
            ),
        }
    };

    let mut env_cfg = env_cfg.clone();
    let mut oracle = None;
    let mut curriculum = None;

    match variant {
        MethodVariant::Rp => {
            return Err(Error::Usage(
                "the rebalanced portfolio is not trained".into(),
            ));
        }
        MethodVariant::Baseline | MethodVariant::Round { .. } | MethodVariant::Ema { .. } => {}
        MethodVariant::InverseSmooth { stages, mode } => {
            curriculum = Some(CurriculumSchedule::new(*stages, *mode)?);
        }
        MethodVariant::Dpd {
            lgn_sigma,
            oracle: spec,
        } => {
            let mut traj = extract_oracle(spec)?;
            if let Some(sigma) = lgn_sigma {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, LGN_STREAM));
                traj = lgn_perturb(&traj, sigma, &mut rng)?;
            }
            env_cfg.reward = crate::env::RewardMode::Dpd;
            oracle = Some(Arc::new(traj));
        }
        MethodVariant::Opd { coef, oracle: spec } => {
            let traj = extract_oracle(spec)?;
            env_cfg.reward = crate::env::RewardMode::Opd { coef: *coef };
            oracle = Some(Arc::new(traj));
        }
    }

    Ok(TrainingPlan {
        series: full,
        span,
        env_cfg,
        oracle,
        curriculum,
    })
}

/// Greedy inference of a model over a raw-series range; returns per-step log
/// rewards under the plain environment reward.
pub fn score_model(
    model: &TrainedModel,
    series: &Arc<ProcessedSeries>,
    span: Span,
    env_cfg: &EnvConfig,
) -> Result<Vec<f64>> {
    let mut cfg = env_cfg.clone();
    cfg.reward = crate::env::RewardMode::EnvReturn;
    let env = PortfolioEnv::new(series.clone(), span, cfg, None)?;
    evaluate_greedy(model, &env)
}
