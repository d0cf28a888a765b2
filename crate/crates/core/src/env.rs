//! Constrained portfolio MDP: lagged-state observation construction,
//! action-to-weight normalization under a gross-exposure cap, log-return
//! reward, and episode stepping.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{ProcessedSeries, Span};
use crate::error::{Error, Result};
use crate::imitation::{dpd_reward, opd_reward, OracleTrajectory};

/// Per-asset discrete position: -1 short, 0 none, 1 long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionVector(Vec<i8>);

impl ActionVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|&a| !(-1..=1).contains(&a)) {
            return Err(Error::Validation(
                "action entries must be in {-1, 0, 1}".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of nonzero legs, i.e. the unnormalized gross exposure.
    pub fn active_legs(&self) -> usize {
        self.0.iter().filter(|&&a| a != 0).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&a| a as f64).collect()
    }
}

/// Portfolio weights after normalization; gross exposure is 0 or the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    /// Equal-weight long portfolio with unit total exposure.
    pub fn equal_weight_long(n_assets: usize) -> Self {
        Self(vec![1.0 / n_assets as f64; n_assets])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn gross(&self) -> f64 {
        self.0.iter().map(|w| w.abs()).sum()
    }
}

/// Linear normalization of a discrete action onto the gross-exposure budget:
/// `w_i = L * a_i / sum_j |a_j|`, or all zeros for the no-position action.
pub fn normalize_action(action: &ActionVector, gross_limit: f64) -> PortfolioWeights {
    let legs = action.active_legs();
    if legs == 0 {
        return PortfolioWeights(vec![0.0; action.len()]);
    }
    let per_leg = gross_limit / legs as f64;
    PortfolioWeights(action.0.iter().map(|&a| a as f64 * per_leg).collect())
}

/// Exact compounded portfolio log return: weights are applied to simple
/// returns and the mixed result is re-logged.
pub fn portfolio_log_return(weights: &PortfolioWeights, log_returns: &[f64]) -> Result<f64> {
    let simple: f64 = weights
        .0
        .iter()
        .zip(log_returns)
        .map(|(w, lr)| w * lr.exp_m1())
        .sum();
    if simple <= -1.0 {
        return Err(Error::Ruin {
            step: 0,
            message: format!("portfolio simple return {:.4} <= -100%", simple),
        });
    }
    Ok(simple.ln_1p())
}

/// First-order approximation `sum_i w_i * dsec_i`; selectable for
/// sensitivity studies.
pub fn portfolio_linear_return(weights: &PortfolioWeights, log_returns: &[f64]) -> f64 {
    weights
        .0
        .iter()
        .zip(log_returns)
        .map(|(w, lr)| w * lr)
        .sum()
}

/// Reward fed to the learner each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RewardMode {
    /// Portfolio log return (the vanilla learner).
    EnvReturn,
    /// Negative distance to the oracle action.
    Dpd,
    /// Environment return minus `coef` times the oracle distance.
    Opd { coef: f64 },
}

/// What the policy observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Lagged cumulative-return state; the deployable configuration.
    Lagged,
    /// The realized universe returns of the upcoming step. Only used to train
    /// an oracle, which by definition sees current and future data.
    FutureUniverseReturns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Names of the tradable universe columns.
    pub universe: Vec<String>,
    /// State lag T'; a positive multiple of 5 up to 60.
    pub state_lag: usize,
    /// Maximum aggregate gross exposure L.
    pub gross_limit: f64,
    pub reward: RewardMode,
    /// Use the linear return approximation instead of exact compounding.
    pub linear_reward: bool,
    pub observation: ObservationKind,
}

impl EnvConfig {
    pub fn new(universe: Vec<String>, state_lag: usize, gross_limit: f64) -> Self {
        Self {
            universe,
            state_lag,
            gross_limit,
            reward: RewardMode::EnvReturn,
            linear_reward: false,
            observation: ObservationKind::Lagged,
        }
    }
}

/// Window lengths of the per-feature lag block: 1..=5, then 10, 15, ..., T'.
fn lag_windows(state_lag: usize) -> Vec<usize> {
    let mut w: Vec<usize> = (1..=5.min(state_lag)).collect();
    let mut k = 10;
    while k <= state_lag {
        w.push(k);
        k += 5;
    }
    w
}

/// Entries per market feature: `5 + (T' - 5) / 5`.
pub fn lag_block_size(state_lag: usize) -> usize {
    lag_windows(state_lag).len()
}

/// Builds the lagged observation for a decision at row `t`: the raw
/// differenced non-market values at `t - 1`, then one block per market
/// feature of trailing return sums over the lag windows, all ending at
/// `t - 1`. Row `t` itself is never read.
pub fn build_observation(series: &ProcessedSeries, t: usize, cfg: &EnvConfig) -> Result<Vec<f64>> {
    if t < cfg.state_lag {
        return Err(Error::Usage(format!(
            "observation at t = {t} needs at least state_lag = {} rows of history",
            cfg.state_lag
        )));
    }
    if t > series.len() {
        return Err(Error::Usage(format!(
            "observation at t = {t} beyond series of length {}",
            series.len()
        )));
    }
    let windows = lag_windows(cfg.state_lag);
    let market = series.market_indices();
    let non_market = series.non_market_indices();

    let mut obs = Vec::with_capacity(non_market.len() + market.len() * windows.len());
    for &c in &non_market {
        obs.push(series.columns[c].values[t - 1]);
    }
    for &c in &market {
        let values = &series.columns[c].values;
        let mut cum = 0.0;
        let mut next = 0;
        for k in 1..=cfg.state_lag {
            cum += values[t - k];
            if next < windows.len() && windows[next] == k {
                obs.push(cum);
                next += 1;
            }
        }
    }
    Ok(obs)
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub weights: PortfolioWeights,
    pub portfolio_value: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Mutable per-episode state; one owner per episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    t: usize,
    done: bool,
    log_value: f64,
}

impl EnvState {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn portfolio_value(&self) -> f64 {
        self.log_value.exp()
    }

    pub fn log_portfolio_value(&self) -> f64 {
        self.log_value
    }
}

/// The portfolio MDP over one index range of a shared immutable series.
#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    series: Arc<ProcessedSeries>,
    span: Span,
    cfg: EnvConfig,
    universe_idx: Vec<usize>,
    oracle: Option<Arc<OracleTrajectory>>,
}

impl PortfolioEnv {
    pub fn new(
        series: Arc<ProcessedSeries>,
        span: Span,
        cfg: EnvConfig,
        oracle: Option<Arc<OracleTrajectory>>,
    ) -> Result<Self> {
        if cfg.observation == ObservationKind::Lagged
            && (cfg.state_lag < 5 || !cfg.state_lag.is_multiple_of(5) || cfg.state_lag > 60)
        {
            return Err(Error::Config(format!(
                "state_lag must be a multiple of 5 in 5..=60, got {}",
                cfg.state_lag
            )));
        }
        if cfg.gross_limit <= 0.0 {
            return Err(Error::Config("gross_limit must be positive".into()));
        }
        if span.end > series.len() {
            return Err(Error::Config(format!(
                "range {}..{} exceeds series length {}",
                span.start,
                span.end,
                series.len()
            )));
        }
        let lag = match cfg.observation {
            ObservationKind::Lagged => cfg.state_lag,
            ObservationKind::FutureUniverseReturns => 0,
        };
        if span.len() <= lag {
            return Err(Error::Config(format!(
                "range of {} rows is too short for state lag {lag}",
                span.len()
            )));
        }
        let mut universe_idx = Vec::with_capacity(cfg.universe.len());
        for name in &cfg.universe {
            let idx = series
                .column_index(name)
                .ok_or_else(|| Error::Config(format!("universe column '{name}' missing")))?;
            if series.columns[idx].kind != crate::data::FeatureKind::Market {
                return Err(Error::Config(format!(
                    "universe column '{name}' is not market kind"
                )));
            }
            universe_idx.push(idx);
        }
        if universe_idx.is_empty() {
            return Err(Error::Config("universe must not be empty".into()));
        }
        if cfg.reward != RewardMode::EnvReturn {
            let traj = oracle.as_deref().ok_or_else(|| {
                Error::Config("distillation reward requires an oracle trajectory".into())
            })?;
            if !traj.covers(span) {
                return Err(Error::Config(
                    "oracle trajectory does not cover the episode range".into(),
                ));
            }
            if traj.n_assets() != universe_idx.len() {
                return Err(Error::Config(
                    "oracle trajectory asset count mismatch".into(),
                ));
            }
        }
        Ok(Self {
            series,
            span,
            cfg,
            universe_idx,
            oracle,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn series(&self) -> &Arc<ProcessedSeries> {
        &self.series
    }

    pub fn n_assets(&self) -> usize {
        self.universe_idx.len()
    }

    fn effective_lag(&self) -> usize {
        match self.cfg.observation {
            ObservationKind::Lagged => self.cfg.state_lag,
            ObservationKind::FutureUniverseReturns => 0,
        }
    }

    /// Steps per episode: one traversal of the range after the lag warmup.
    pub fn episode_len(&self) -> usize {
        self.span.len() - self.effective_lag()
    }

    pub fn observation_dim(&self) -> usize {
        match self.cfg.observation {
            ObservationKind::Lagged => {
                self.series.non_market_indices().len()
                    + self.series.market_indices().len() * lag_block_size(self.cfg.state_lag)
            }
            ObservationKind::FutureUniverseReturns => self.universe_idx.len(),
        }
    }

    fn observe(&self, t: usize) -> Result<Vec<f64>> {
        match self.cfg.observation {
            ObservationKind::Lagged => build_observation(&self.series, t, &self.cfg),
            ObservationKind::FutureUniverseReturns => {
                // the oracle observes the returns its next step will realize;
                // past the last row it sees zeros (the episode is over anyway)
                if t < self.span.end {
                    Ok(self
                        .universe_idx
                        .iter()
                        .map(|&c| self.series.columns[c].values[t])
                        .collect())
                } else {
                    Ok(vec![0.0; self.universe_idx.len()])
                }
            }
        }
    }

    /// Starts an episode at `range.start + T'` with unit portfolio value.
    pub fn reset(&self) -> Result<(EnvState, Vec<f64>)> {
        let t = self.span.start + self.effective_lag();
        let state = EnvState {
            t,
            done: false,
            log_value: 0.0,
        };
        let obs = self.observe(t)?;
        Ok((state, obs))
    }

    /// Applies an action at the current row, realizes the reward from that
    /// row's returns and advances. Episodes end when the range is exhausted.
    pub fn step(&self, state: &mut EnvState, action: &ActionVector) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if action.len() != self.universe_idx.len() {
            return Err(Error::Usage(format!(
                "action has {} legs, universe has {}",
                action.len(),
                self.universe_idx.len()
            )));
        }
        let t = state.t;
        let returns: Vec<f64> = self
            .universe_idx
            .iter()
            .map(|&c| self.series.columns[c].values[t])
            .collect();
        let weights = normalize_action(action, self.cfg.gross_limit);
        let env_reward = if self.cfg.linear_reward {
            portfolio_linear_return(&weights, &returns)
        } else {
            portfolio_log_return(&weights, &returns).map_err(|e| match e {
                Error::Ruin { message, .. } => Error::Ruin { step: t, message },
                other => other,
            })?
        };
        let reward = match self.cfg.reward {
            RewardMode::EnvReturn => env_reward,
            RewardMode::Dpd => {
                let target = self.oracle.as_ref().unwrap().action_at(t);
                dpd_reward(action, target)
            }
            RewardMode::Opd { coef } => {
                let target = self.oracle.as_ref().unwrap().action_at(t);
                opd_reward(env_reward, action, target, coef)
            }
        };
        state.log_value += env_reward;
        state.t += 1;
        state.done = state.t == self.span.end;
        let next_observation = self.observe(state.t)?;
        Ok(StepOutcome {
            next_observation,
            reward,
            done: state.done,
            info: StepInfo {
                weights,
                portfolio_value: state.log_value.exp(),
            },
        })
    }
}
