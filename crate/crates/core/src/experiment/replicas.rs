//! Seed-replicated training and greedy test-set inference, plus the
//! deterministic rebalanced-portfolio heuristic.

use std::sync::Arc;

use super::plan::{build_plan, score_model};
use super::stats::{cumulative_path, cumulative_return};
use super::{MethodSpec, ReplicaReport, ReplicaSettings};
use crate::data::{DataSplit, ProcessedSeries, Span};
use crate::env::{portfolio_log_return, EnvConfig, PortfolioWeights};
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::parallel;
use crate::rl::{derive_seed, AlgoConfig};

const REPLICA_STREAM: u64 = 0x5EED;

/// Equal-weight long portfolio rebalanced every step, compounded with the
/// same return arithmetic as the agents over the same post-lag test steps.
pub fn rp_baseline(series: &ProcessedSeries, span: Span, state_lag: usize) -> Result<Vec<f64>> {
    let n = series.n_assets();
    if n == 0 {
        return Err(Error::Validation("series has no universe columns".into()));
    }
    if span.len() <= state_lag || span.end > series.len() {
        return Err(Error::Config(format!(
            "range {}..{} too short for state lag {state_lag}",
            span.start, span.end
        )));
    }
    let weights = PortfolioWeights::equal_weight_long(n);
    (span.start + state_lag..span.end)
        .map(|t| portfolio_log_return(&weights, &series.universe_returns(t)))
        .collect()
}

/// Trains `n_seeds` independent replicas of a method on train+validation and
/// greedily evaluates each over the test range. Failed runs are excluded and
/// recorded; the report's `n` is the effective sample count. The rebalanced
/// portfolio shortcuts to its single deterministic path.
pub fn run_replicas(
    method: &MethodSpec,
    series: &Arc<ProcessedSeries>,
    split: &DataSplit,
    env_cfg: &EnvConfig,
    algo: &AlgoConfig,
    net: &NetConfig,
    settings: &ReplicaSettings,
) -> Result<ReplicaReport> {
    if method.variant.is_deterministic() {
        let rewards = rp_baseline(series, split.test, env_cfg.state_lag)?;
        return Ok(ReplicaReport::from_samples(
            method.name.clone(),
            vec![cumulative_return(&rewards)],
            vec![cumulative_path(&rewards)],
            Vec::new(),
        ));
    }
    if settings.n_seeds < 2 {
        return Err(Error::Config("replica runs need at least 2 seeds".into()));
    }

    let plan = build_plan(
        &method.variant,
        series,
        split.train,
        Some(split.validation),
        env_cfg,
        algo,
        net,
        settings.master_seed,
    )?;

    let jobs: Vec<(usize, u64)> = (0..settings.n_seeds)
        .map(|i| {
            (
                i,
                derive_seed(settings.master_seed, REPLICA_STREAM + i as u64),
            )
        })
        .collect();
    let outcomes = parallel::map(jobs, |(i, seed)| {
        let result = plan
            .train_one(algo, net, settings.total_steps, seed)
            .and_then(|model| score_model(&model, series, split.test, env_cfg));
        (i, result)
    });

    let mut returns = Vec::with_capacity(settings.n_seeds);
    let mut paths = Vec::with_capacity(settings.n_seeds);
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok(rewards) => {
                returns.push(cumulative_return(&rewards));
                paths.push(cumulative_path(&rewards));
            }
            Err(e) => failures.push(format!("replica {i}: {e}")),
        }
    }
    if returns.is_empty() {
        return Err(Error::Numeric(format!(
            "every replica of '{}' failed: {}",
            method.name,
            failures.join("; ")
        )));
    }
    Ok(ReplicaReport::from_samples(
        method.name.clone(),
        returns,
        paths,
        failures,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, Column, FeatureKind, SyntheticSpec};
    use crate::experiment::MethodVariant;
    use crate::rl::Algorithm;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use chrono::NaiveDate;

    #[test]
    fn rp_on_single_asset_tracks_the_asset() {
        let (series, _) = generate_synthetic(&SyntheticSpec {
            n_assets: 1,
            length: 60,
            ar_coeff: 0.5,
            signal_scale: 0.01,
            noise_scale: 0.01,
            seed: 8,
        })
        .unwrap();
        let rewards = rp_baseline(&series, Span::new(0, 60), 5).unwrap();
        let expect: Vec<f64> = series.columns[0].values[5..].to_vec();
        for (r, e) in rewards.iter().zip(&expect) {
            assert_relative_eq!(r, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn rp_zero_returns_and_offsetting_moves() {
        let dates: Vec<NaiveDate> = (0..40)
            .map(|t| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(t))
            .collect();
        // zero-return series earns exactly nothing
        let flat = ProcessedSeries {
            dates: dates.clone(),
            columns: vec![Column {
                name: "a".into(),
                kind: FeatureKind::Market,
                values: vec![0.0; 40],
            }],
            universe: vec![0],
        };
        let rewards = rp_baseline(&flat, Span::new(0, 40), 5).unwrap();
        assert!(rewards.iter().all(|&r| r == 0.0));
        assert_eq!(cumulative_return(&rewards), 0.0);

        // +10% and -10% simple moves cancel under equal weights
        let up = (1.1f64).ln();
        let down = (0.9f64).ln();
        let pair = ProcessedSeries {
            dates,
            columns: vec![
                Column {
                    name: "a".into(),
                    kind: FeatureKind::Market,
                    values: vec![up; 40],
                },
                Column {
                    name: "b".into(),
                    kind: FeatureKind::Market,
                    values: vec![down; 40],
                },
            ],
            universe: vec![0, 1],
        };
        let rewards = rp_baseline(&pair, Span::new(0, 40), 5).unwrap();
        for r in rewards {
            assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
        }
    }

    fn setup() -> (
        Arc<ProcessedSeries>,
        crate::data::DataSplit,
        EnvConfig,
        AlgoConfig,
        NetConfig,
    ) {
        let (series, _) = generate_synthetic(&SyntheticSpec {
            n_assets: 2,
            length: 160,
            ar_coeff: 0.8,
            signal_scale: 0.01,
            noise_scale: 0.005,
            seed: 19,
        })
        .unwrap();
        let series = Arc::new(series);
        let sp = split(&series, [0.6, 0.2, 0.2]).unwrap();
        let env = EnvConfig::new(vec!["asset_0".into(), "asset_1".into()], 5, 1.0);
        let mut algo = AlgoConfig::ds1(Algorithm::A2c);
        algo.steps_per_update = 32;
        let net = NetConfig {
            hidden: vec![8, 8],
            ..NetConfig::default()
        };
        (series, sp, env, algo, net)
    }

    #[test]
    fn replica_reports_are_reproducible() {
        let (series, sp, env, algo, net) = setup();
        let method = MethodSpec {
            name: "a2c".into(),
            variant: MethodVariant::Baseline,
        };
        let settings = ReplicaSettings {
            n_seeds: 3,
            total_steps: 96,
            master_seed: 401,
        };
        let a = run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).unwrap();
        let b = run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, 3);
        assert_eq!(a.returns.len(), 3);
        assert_eq!(a.paths.len(), 3);
        assert!(a.failures.is_empty());
        let expected_len = sp.test.len() - env.state_lag;
        assert!(a.paths.iter().all(|p| p.len() == expected_len));
    }

    #[test]
    fn deterministic_method_reports_zero_std() {
        let (series, sp, env, algo, net) = setup();
        let method = MethodSpec {
            name: "rp".into(),
            variant: MethodVariant::Rp,
        };
        let settings = ReplicaSettings {
            n_seeds: 50,
            total_steps: 0,
            master_seed: 0,
        };
        let report = run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).unwrap();
        assert_eq!(report.n, 1);
        assert_eq!(report.std, 0.0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (series, sp, env, algo, net) = setup();
        let method = MethodSpec {
            name: "a2c".into(),
            variant: MethodVariant::Baseline,
        };
        let settings = ReplicaSettings {
            n_seeds: 2,
            total_steps: 64,
            master_seed: 5,
        };
        let one = crate::parallel::with_workers(1, || {
            run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).unwrap()
        });
        let two = crate::parallel::with_workers(2, || {
            run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).unwrap()
        });
        assert_eq!(one, two);
    }

    #[test]
    fn too_few_seeds_rejected() {
        let (series, sp, env, algo, net) = setup();
        let method = MethodSpec {
            name: "a2c".into(),
            variant: MethodVariant::Baseline,
        };
        let settings = ReplicaSettings {
            n_seeds: 1,
            total_steps: 32,
            master_seed: 1,
        };
        assert!(run_replicas(&method, &series, &sp, &env, &algo, &net, &settings).is_err());
    }
}
