//! Oracle construction, optimal-trajectory extraction, distillation rewards,
//! Gaussian label perturbation, and the noise-tolerance diagnostic.
//!
//! The oracle sees each step's realized returns, so its per-step optimum
//! under the gross-exposure normalization is the full budget on the asset
//! with the largest absolute simple return, signed by that return. The
//! analytic extractor computes this directly; an exhaustive enumerator over
//! all discrete actions and an RL-trained oracle are available as
//! alternatives.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ProcessedSeries, Span};
use crate::env::{
    normalize_action, portfolio_log_return, ActionVector, EnvConfig, ObservationKind, PortfolioEnv,
    RewardMode,
};
use crate::error::{Error, Result};

/// Per-step optimal action vectors over a series range. Entries are
/// `{-1, 0, 1}` as extracted; real-valued after Gaussian perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrajectory {
    start: usize,
    actions: Vec<Vec<f64>>,
}

impl OracleTrajectory {
    pub fn new(start: usize, actions: Vec<Vec<f64>>) -> Self {
        Self { start, actions }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn covers(&self, span: Span) -> bool {
        self.start <= span.start && span.end <= self.start + self.actions.len()
    }

    /// Target action for the step at series row `t`.
    pub fn action_at(&self, t: usize) -> &[f64] {
        &self.actions[t - self.start]
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Dpd,
    Opd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Analytic,
    Rl,
}

/// Distillation settings; the perturbation mean is fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub mode: DistillMode,
    /// Weight of the oracle-distance term in the combined reward.
    pub opd_coefficient: f64,
    /// Per-asset perturbation standard deviations; `None` leaves labels exact.
    pub lgn_sigma: Option<Vec<f64>>,
    pub oracle: OracleKind,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::Dpd,
            opd_coefficient: 0.5,
            lgn_sigma: None,
            oracle: OracleKind::Analytic,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.opd_coefficient < 0.0 {
            return Err(Error::Domain("opd coefficient must be >= 0".into()));
        }
        if let Some(sigma) = &self.lgn_sigma {
            if sigma.len() != n_assets {
                return Err(Error::Domain(format!(
                    "lgn sigma has {} entries for {} assets",
                    sigma.len(),
                    n_assets
                )));
            }
            if sigma.iter().any(|&s| s < 0.0) {
                return Err(Error::Domain("lgn sigma entries must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn reward_mode(&self) -> RewardMode {
        match self.mode {
            DistillMode::Dpd => RewardMode::Dpd,
            DistillMode::Opd => RewardMode::Opd {
                coef: self.opd_coefficient,
            },
        }
    }
}

/// Closed-form per-step optimum: full gross budget on the asset with the
/// largest absolute simple return, signed by the return; all zeros when every
/// return is zero; ties resolved to the lowest asset index.
pub fn analytic_oracle(
    series: &ProcessedSeries,
    span: Span,
    gross_limit: f64,
) -> Result<OracleTrajectory> {
    if gross_limit <= 0.0 {
        return Err(Error::Domain("gross limit must be positive".into()));
    }
    if span.end > series.len() {
        return Err(Error::Domain("oracle range exceeds series".into()));
    }
    let n = series.n_assets();
    if n == 0 {
        return Err(Error::Validation("series has no universe columns".into()));
    }
    let mut actions = Vec::with_capacity(span.len());
    for t in span.range() {
        let returns = series.universe_returns(t);
        let mut best: Option<(usize, f64)> = None;
        for (i, lr) in returns.iter().enumerate() {
            let mag = lr.exp_m1().abs();
            match best {
                Some((_, m)) if mag <= m => {}
                _ => best = Some((i, mag)),
            }
        }
        let mut a = vec![0.0; n];
        if let Some((i, mag)) = best {
            if mag > 0.0 {
                a[i] = returns[i].signum();
            }
        }
        actions.push(a);
    }
    Ok(OracleTrajectory::new(span.start, actions))
}

/// Preference key for equally-rewarding actions: fewer active legs first,
/// then earlier/long legs. Matches the analytic tie rule.
fn tie_key(action: &[i8]) -> (usize, Vec<u8>) {
    let legs = action.iter().filter(|&&a| a != 0).count();
    let ranks = action
        .iter()
        .map(|&a| match a {
            1 => 0u8,
            -1 => 1,
            _ => 2,
        })
        .collect();
    (legs, ranks)
}

/// Verification oracle: per step, exhaustively scores all `3^N` actions by
/// their normalized one-step portfolio log return.
pub fn brute_force_oracle(
    series: &ProcessedSeries,
    span: Span,
    gross_limit: f64,
) -> Result<OracleTrajectory> {
    let n = series.n_assets();
    if n == 0 || n > 10 {
        return Err(Error::Capacity(format!(
            "exhaustive oracle supports 1..=10 assets, got {n}"
        )));
    }
    if span.end > series.len() {
        return Err(Error::Domain("oracle range exceeds series".into()));
    }
    let total = 3usize.pow(n as u32);
    let mut actions = Vec::with_capacity(span.len());
    for t in span.range() {
        let returns = series.universe_returns(t);
        let mut best_action = vec![0i8; n];
        let mut best_reward = f64::NEG_INFINITY;
        let mut best_key = (usize::MAX, vec![u8::MAX; n]);
        for code in 0..total {
            let mut c = code;
            let mut a = vec![0i8; n];
            for leg in a.iter_mut() {
                *leg = match c % 3 {
                    0 => 0,
                    1 => 1,
                    _ => -1,
                };
                c /= 3;
            }
            let action = ActionVector::new(a.clone())?;
            let w = normalize_action(&action, gross_limit);
            let reward = portfolio_log_return(&w, &returns).unwrap_or(f64::NEG_INFINITY);
            let key = tie_key(&a);
            if reward > best_reward || (reward == best_reward && key < best_key) {
                best_reward = reward;
                best_action = a;
                best_key = key;
            }
        }
        actions.push(best_action.iter().map(|&a| a as f64).collect());
    }
    Ok(OracleTrajectory::new(span.start, actions))
}

/// Trains an oracle policy with future-seeing observations and extracts its
/// greedy trajectory. Heavier but assumption-free; the analytic extractor is
/// the default.
pub fn rl_oracle(
    series: &Arc<ProcessedSeries>,
    span: Span,
    gross_limit: f64,
    algo: &crate::rl::AlgoConfig,
    net: &crate::net::NetConfig,
    total_steps: usize,
    seed: u64,
) -> Result<OracleTrajectory> {
    let universe: Vec<String> = series
        .universe
        .iter()
        .map(|&c| series.columns[c].name.clone())
        .collect();
    let mut env_cfg = EnvConfig::new(universe, 5, gross_limit);
    env_cfg.observation = ObservationKind::FutureUniverseReturns;
    let env = PortfolioEnv::new(series.clone(), span, env_cfg, None)?;
    let model = crate::rl::train(&crate::rl::TrainSpec {
        series,
        span,
        env_cfg: env.config().clone(),
        oracle: None,
        algo: algo.clone(),
        net: net.clone(),
        total_steps,
        seed,
        curriculum: None,
    })?;
    let mut actions = Vec::with_capacity(span.len());
    for t in span.range() {
        let obs: Vec<f64> = series.universe_returns(t);
        let out = model.policy_output(&obs)?;
        actions.push(out.mode_action().as_f64());
    }
    Ok(OracleTrajectory::new(span.start, actions))
}

/// Distillation reward: negative Euclidean distance to the oracle action.
pub fn dpd_reward(action: &ActionVector, target: &[f64]) -> f64 {
    -action
        .values()
        .iter()
        .zip(target)
        .map(|(&a, &t)| {
            let d = a as f64 - t;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Combined reward: environment return minus `coef` times the oracle distance.
pub fn opd_reward(env_reward: f64, action: &ActionVector, target: &[f64], coef: f64) -> f64 {
    env_reward + coef * dpd_reward(action, target)
}

/// Perturbs every oracle label with independent zero-mean Gaussian noise,
/// once per training run; labels are fixed thereafter.
pub fn lgn_perturb<R: Rng>(
    traj: &OracleTrajectory,
    sigma: &[f64],
    rng: &mut R,
) -> Result<OracleTrajectory> {
    if sigma.len() != traj.n_assets() {
        return Err(Error::Domain(format!(
            "sigma has {} entries for {} assets",
            sigma.len(),
            traj.n_assets()
        )));
    }
    if sigma.iter().any(|&s| s < 0.0) {
        return Err(Error::Domain("sigma entries must be >= 0".into()));
    }
    let actions = traj
        .actions
        .iter()
        .map(|a| {
            a.iter()
                .zip(sigma)
                .map(|(&v, &s)| {
                    let e: f64 = rng.sample(StandardNormal);
                    v + s * e
                })
                .collect()
        })
        .collect();
    Ok(OracleTrajectory::new(traj.start, actions))
}

/// Degree of noise tolerance: gap between the largest and second-largest
/// absolute expected moves. Any smaller perturbation of the gap leaves the
/// oracle's chosen asset unchanged.
pub fn dnt(expected_moves: &[f64]) -> Result<f64> {
    if expected_moves.len() < 2 {
        return Err(Error::Domain(
            "noise tolerance needs at least 2 assets".into(),
        ));
    }
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &m in expected_moves {
        let a = m.abs();
        if a > first {
            second = first;
            first = a;
        } else if a > second {
            second = a;
        }
    }
    Ok(first - second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Column, FeatureKind, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One-row series whose universe moves by the given percentages.
    fn one_step_series(pct_moves: &[f64]) -> ProcessedSeries {
        ProcessedSeries {
            dates: vec![NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()],
            columns: pct_moves
                .iter()
                .enumerate()
                .map(|(i, &p)| Column {
                    name: format!("asset_{i}"),
                    kind: FeatureKind::Market,
                    values: vec![(p / 100.0f64).ln_1p()],
                })
                .collect(),
            universe: (0..pct_moves.len()).collect(),
        }
    }

    #[test]
    fn analytic_oracle_shorts_the_largest_expected_move() {
        let series = one_step_series(&[1.23, 1.79, 3.01, -4.02]);
        let traj = analytic_oracle(&series, Span::new(0, 1), 1.0).unwrap();
        assert_eq!(traj.action_at(0), &[0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn analytic_oracle_stays_flat_on_zero_returns() {
        let series = one_step_series(&[0.0, 0.0, 0.0]);
        let traj = analytic_oracle(&series, Span::new(0, 1), 1.0).unwrap();
        assert_eq!(traj.action_at(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn analytic_oracle_breaks_ties_to_lowest_index() {
        let series = one_step_series(&[2.0, -2.0, 1.0]);
        let traj = analytic_oracle(&series, Span::new(0, 1), 1.0).unwrap();
        assert_eq!(traj.action_at(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn brute_force_reference_cases() {
        let series = one_step_series(&[1.5]);
        let traj = brute_force_oracle(&series, Span::new(0, 1), 1.0).unwrap();
        assert_eq!(traj.action_at(0), &[1.0]);

        // concentration beats splitting
        let series = one_step_series(&[1.0, 2.0]);
        let traj = brute_force_oracle(&series, Span::new(0, 1), 1.0).unwrap();
        assert_eq!(traj.action_at(0), &[0.0, 1.0]);

        let series = one_step_series(&(0..11).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(
            brute_force_oracle(&series, Span::new(0, 1), 1.0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn analytic_agrees_with_enumeration_on_synthetic_data() {
        let (series, _) = generate_synthetic(&SyntheticSpec {
            n_assets: 4,
            length: 200,
            ar_coeff: 0.8,
            signal_scale: 0.01,
            noise_scale: 0.02,
            seed: 97,
        })
        .unwrap();
        let span = Span::new(0, 200);
        for gross in [1.0, 2.0] {
            let a = analytic_oracle(&series, span, gross).unwrap();
            let b = brute_force_oracle(&series, span, gross).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dpd_reward_reference_cases() {
        let a = ActionVector::new(vec![1, 1, 1, 1]).unwrap();
        assert_eq!(dpd_reward(&a, &[1.0, 1.0, 1.0, 1.0]), 0.0);
        assert_abs_diff_eq!(
            dpd_reward(&a, &[0.0, 0.0, 0.0, -1.0]),
            -7.0f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn opd_reward_degenerates_correctly() {
        let a = ActionVector::new(vec![1, 0]).unwrap();
        let target = [0.0, 1.0];
        // zero coefficient leaves the environment reward untouched
        assert_eq!(opd_reward(0.042, &a, &target, 0.0), 0.042);
        // matching the oracle leaves the environment reward untouched
        assert_eq!(opd_reward(0.042, &a, &[1.0, 0.0], 0.5), 0.042);
        // the tuned coefficient subtracts half the distance
        let d = dpd_reward(&a, &target);
        assert_eq!(opd_reward(0.042, &a, &target, 0.5), 0.042 + 0.5 * d);
    }

    #[test]
    fn lgn_perturbation_behaviour() {
        let traj = OracleTrajectory::new(0, vec![vec![1.0, -1.0]; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let same = lgn_perturb(&traj, &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(same, traj);

        assert!(lgn_perturb(&traj, &[-1.0, 0.0], &mut rng).is_err());
        assert!(lgn_perturb(&traj, &[1.0], &mut rng).is_err());

        // Monte-Carlo mean of the perturbation stays near zero
        let long = OracleTrajectory::new(0, vec![vec![0.0]; 100_000]);
        let sigma = 1.628;
        let perturbed = lgn_perturb(&long, &[sigma], &mut rng).unwrap();
        let mean: f64 = perturbed.actions().iter().map(|a| a[0]).sum::<f64>() / long.len() as f64;
        let bound = 3.0 * sigma / (long.len() as f64).sqrt();
        assert!(
            mean.abs() < bound,
            "perturbation mean {mean} outside {bound}"
        );
    }

    #[test]
    fn dnt_reference_cases() {
        let v = dnt(&[1.23, 1.79, 3.01, -4.02]).unwrap();
        assert_abs_diff_eq!(v, 1.01, epsilon = 1e-12);
        assert_eq!(dnt(&[2.0, -2.0, 0.5]).unwrap(), 0.0);
        assert!(dnt(&[1.0]).is_err());
    }

    #[test]
    fn oracle_choice_stable_under_sub_tolerance_noise() {
        use rand::Rng as _;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let n = rng.gen_range(2..8);
            let moves: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let tol = dnt(&moves).unwrap();
            if tol == 0.0 {
                continue;
            }
            let leader = (0..n)
                .max_by(|&i, &j| moves[i].abs().partial_cmp(&moves[j].abs()).unwrap())
                .unwrap();
            // push every non-leading asset toward the leader by less than the
            // tolerance; the favorable direction grows its absolute move
            let mut noisy = moves.clone();
            for (i, m) in noisy.iter_mut().enumerate() {
                if i != leader {
                    let delta = rng.gen_range(0.0..tol) * 0.999;
                    *m += m.signum() * delta;
                }
            }
            let new_leader = (0..n)
                .max_by(|&i, &j| noisy[i].abs().partial_cmp(&noisy[j].abs()).unwrap())
                .unwrap();
            assert_eq!(new_leader, leader);
        }
    }

    proptest! {
        #[test]
        fn dpd_reward_is_nonpositive_and_zero_iff_match(
            (raw, target) in (1usize..8).prop_flat_map(|n| (
                proptest::collection::vec(-1i8..=1, n),
                proptest::collection::vec(-1i8..=1, n),
            )),
        ) {
            let a = ActionVector::new(raw.clone()).unwrap();
            let t: Vec<f64> = target.iter().map(|&x| x as f64).collect();
            let r = dpd_reward(&a, &t);
            prop_assert!(r <= 0.0);
            prop_assert_eq!(r == 0.0, raw.iter().zip(&target).all(|(x, y)| x == y));
        }

        #[test]
        fn dnt_nonnegative_and_zero_iff_top_two_tie(
            moves in proptest::collection::vec(-10.0f64..10.0, 2..9)
        ) {
            let v = dnt(&moves).unwrap();
            prop_assert!(v >= 0.0);
            let mut mags: Vec<f64> = moves.iter().map(|m| m.abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert_eq!(v, mags[0] - mags[1]);
            prop_assert_eq!(v == 0.0, mags[0] == mags[1]);
        }
    }
}
