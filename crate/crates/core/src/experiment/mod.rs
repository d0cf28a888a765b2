//! Hyperparameter search, seed-replicated training/inference, the heuristic
//! baseline, statistical significance testing, and report emission.
//!
//! Replica and tuning runs are independent and fan out over the worker pool;
//! results are merged in input order so reports are reproducible bit for bit.

mod plan;
mod replicas;
mod report;
mod search;
mod stats;

pub use plan::{build_plan, score_model, TrainingPlan};
pub use replicas::{rp_baseline, run_replicas};
pub use report::{emit_report, ReportDocument, ReportFiles};
pub use search::{random_grid_search, tune_sigma, tune_tis, HyperparamSpace, SearchOutcome};
pub use stats::{
    cumulative_path, cumulative_return, sample_mean, sample_std, welch_one_sided,
    welch_one_sided_from_stats, TTestResult,
};

use serde::{Deserialize, Serialize};

use crate::smoothing::CurriculumMode;

/// How distillation targets are produced: closed form, or extracted from an
/// RL-trained future-seeing policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OracleSpec {
    Analytic,
    Rl { steps: usize },
}

/// What distinguishes one comparison row from another: the heuristic, the
/// vanilla learner, a distillation flavour, or a curriculum transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MethodVariant {
    /// Equal-weight long portfolio, rebalanced every step; deterministic.
    Rp,
    /// The plain learner on raw data.
    Baseline,
    /// Distillation against the oracle action, optionally with per-asset
    /// Gaussian label noise.
    Dpd {
        lgn_sigma: Option<Vec<f64>>,
        oracle: OracleSpec,
    },
    /// Combined environment/distance reward.
    Opd { coef: f64, oracle: OracleSpec },
    /// Training data rounded to `decimals` places.
    Round { decimals: u32 },
    /// Training data EMA-smoothed with window `w_l`.
    Ema { w_l: u32 },
    /// Inverse-smoothing curriculum over `stages` stages.
    InverseSmooth { stages: u32, mode: CurriculumMode },
}

impl MethodVariant {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, MethodVariant::Rp)
    }
}

/// One row of the comparison: a display name plus the method variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub variant: MethodVariant,
}

/// Replica-loop settings shared by every method in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSettings {
    pub n_seeds: usize,
    pub total_steps: usize,
    pub master_seed: u64,
}

/// Per-method distribution of test-set cumulative returns over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaReport {
    pub method: String,
    /// Per-seed test cumulative returns, percent.
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// Effective sample count after excluding failed runs.
    pub n: usize,
    /// Per-seed per-step cumulative return paths over the test range.
    pub paths: Vec<Vec<f64>>,
    /// Messages from excluded replica runs.
    pub failures: Vec<String>,
}

impl ReplicaReport {
    pub fn from_samples(
        method: String,
        returns: Vec<f64>,
        paths: Vec<Vec<f64>>,
        failures: Vec<String>,
    ) -> Self {
        let mean = sample_mean(&returns);
        let std = sample_std(&returns);
        let n = returns.len();
        Self {
            method,
            returns,
            mean,
            std,
            n,
            paths,
            failures,
        }
    }
}
