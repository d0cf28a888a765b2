//! Run configuration: one JSON file drives a whole experiment grid.
//!
//! Every key is optional at parse time; `resolve` applies profile defaults
//! and reports all missing or inconsistent fields in one error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiment::HyperparamSpace;
use crate::imitation::{DistillMode, OracleKind};
use crate::net::{Activation, NetConfig, OptimizerKind};
use crate::rl::{AlgoConfig, Algorithm};
use crate::smoothing::CurriculumMode;

pub const FILE_VERSION: u32 = 1;

/// Scalar sigma broadcast per asset, or a full per-asset vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaValue {
    Scalar(f64),
    PerAsset(Vec<f64>),
}

impl SigmaValue {
    pub fn broadcast(&self, n_assets: usize) -> Result<Vec<f64>> {
        match self {
            SigmaValue::Scalar(s) => Ok(vec![*s; n_assets]),
            SigmaValue::PerAsset(v) => {
                if v.len() != n_assets {
                    return Err(Error::Config(format!(
                        "il.lgn_sigma has {} entries for {} assets",
                        v.len(),
                        n_assets
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: Option<String>,
    #[serde(default)]
    pub kinds: BTreeMap<String, FeatureKind>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<CsvSource>,
    pub synthetic: Option<SyntheticSpec>,
    /// Path to a processed-series JSON file emitted by `process` or `synth`.
    pub processed: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub universe: Option<Vec<String>>,
    pub state_lag: Option<usize>,
    pub gross_limit: Option<f64>,
    pub linear_reward: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptSection {
    pub kind: Option<OptimizerKind>,
    pub lr: Option<f64>,
    /// Global gradient-norm cap; zero or negative disables clipping.
    pub max_grad_clip: Option<f64>,
    pub rmsprop_eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    pub algorithm: Option<Algorithm>,
    /// `ds1` or `ds2`; the base the field overrides apply to.
    pub profile: Option<String>,
    pub lr: Option<f64>,
    pub steps_per_update: Option<usize>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub vf_coef: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub epochs: Option<usize>,
    pub partition_factor: Option<usize>,
    pub cg_max_steps: Option<usize>,
    pub hessian_damping: Option<f64>,
    pub line_search_reduction: Option<f64>,
    pub line_search_max_iter: Option<usize>,
    pub critic_updates: Option<usize>,
    pub target_kl: Option<f64>,
    pub subsample_factor: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    /// Informational; the `methods` list selects what actually runs.
    pub method: Option<String>,
    pub w_l: u32,
    pub decimals: u32,
    #[serde(rename = "S")]
    pub stages: u32,
    pub mode: CurriculumMode,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            method: None,
            w_l: 5,
            decimals: 2,
            stages: 8,
            mode: CurriculumMode::Staged,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlSection {
    pub mode: DistillMode,
    pub opd_coef: f64,
    pub lgn_sigma: Option<SigmaValue>,
    pub oracle: OracleKind,
    pub oracle_steps: usize,
}

impl Default for IlSection {
    fn default() -> Self {
        Self {
            mode: DistillMode::Dpd,
            opd_coef: 0.5,
            lgn_sigma: None,
            oracle: OracleKind::Analytic,
            oracle_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpSection {
    pub seeds: usize,
    pub total_steps: usize,
    pub tune_steps: usize,
    pub tune_samples: usize,
    pub workers: usize,
}

impl Default for ExpSection {
    fn default() -> Self {
        Self {
            seeds: 50,
            total_steps: 1_000_000,
            tune_steps: 100_000,
            tune_samples: 150,
            workers: 0,
        }
    }
}

/// The on-disk configuration. All fields optional; `resolve` validates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub data: Option<DataSection>,
    pub split: SplitSection,
    pub env: EnvSection,
    pub net: NetSection,
    pub opt: OptSection,
    pub algo: AlgoSection,
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub smoothing: SmoothingSection,
    pub il: IlSection,
    pub exp: ExpSection,
    pub space: Option<HyperparamSpace>,
    pub tis_space: Option<Vec<u32>>,
    pub sigma_space: Option<Vec<f64>>,
    pub out: Option<String>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse config {}: {e}", path.display())))
    }
}

/// Method taxonomy of the comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKey {
    Baseline,
    Rp,
    Dpd,
    DpdLgn,
    Opd,
    Round,
    Ema,
    Is,
    Tis,
}

impl MethodKey {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "rp" => Ok(Self::Rp),
            "dpd" => Ok(Self::Dpd),
            "dpd-lgn" => Ok(Self::DpdLgn),
            "opd" => Ok(Self::Opd),
            "round" => Ok(Self::Round),
            "ema" => Ok(Self::Ema),
            "is" => Ok(Self::Is),
            "tis" => Ok(Self::Tis),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (baseline, rp, dpd, dpd-lgn, opd, round, ema, is, tis)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        kinds: BTreeMap<String, FeatureKind>,
    },
    Synthetic(SyntheticSpec),
    Processed(PathBuf),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Canonical JSON of the effective config; hashed into the manifest.
    pub canonical: serde_json::Value,
    pub data: DataSource,
    pub split_ratios: [f64; 3],
    pub universe: Option<Vec<String>>,
    pub state_lag: usize,
    pub gross_limit: f64,
    pub linear_reward: bool,
    pub net: NetConfig,
    pub algo: AlgoConfig,
    pub methods: Vec<MethodKey>,
    pub smoothing: SmoothingSection,
    pub il: IlSection,
    pub exp: ExpSection,
    pub space: Option<HyperparamSpace>,
    pub tis_space: Vec<u32>,
    pub sigma_space: Vec<f64>,
    pub out: Option<PathBuf>,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical).expect("canonical config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Validates and expands a config file. Profile defaults fill unset env and
/// learner fields; every missing required field is reported at once.
pub fn resolve(file: &ConfigFile) -> Result<RunConfig> {
    let mut missing: Vec<String> = Vec::new();
    let mut problems: Vec<String> = Vec::new();

    // data source: exactly one of csv / synthetic / processed
    let data = match &file.data {
        None => {
            missing.push("data".into());
            None
        }
        Some(section) => {
            let chosen = [
                section.csv.is_some(),
                section.synthetic.is_some(),
                section.processed.is_some(),
            ]
            .iter()
            .filter(|&&b| b)
            .count();
            if chosen != 1 {
                problems.push("data must set exactly one of csv, synthetic, processed".into());
                None
            } else if let Some(csv) = &section.csv {
                match &csv.path {
                    None => {
                        missing.push("data.csv.path".into());
                        None
                    }
                    Some(p) => {
                        if csv.kinds.is_empty() {
                            missing.push("data.csv.kinds".into());
                            None
                        } else {
                            Some(DataSource::Csv {
                                path: PathBuf::from(p),
                                kinds: csv.kinds.clone(),
                            })
                        }
                    }
                }
            } else if let Some(spec) = &section.synthetic {
                Some(DataSource::Synthetic(spec.clone()))
            } else {
                Some(DataSource::Processed(PathBuf::from(
                    section.processed.as_ref().unwrap(),
                )))
            }
        }
    };

    // universe requirement depends on the source
    if matches!(&data, Some(DataSource::Csv { .. })) && file.env.universe.is_none() {
        missing.push("env.universe".into());
    }

    // methods
    let method_names: Vec<String> = match (&file.methods, &file.method) {
        (Some(ms), _) => ms.clone(),
        (None, Some(m)) => vec![m.clone()],
        (None, None) => {
            missing.push("methods".into());
            Vec::new()
        }
    };
    let mut methods = Vec::new();
    for name in &method_names {
        match MethodKey::parse(name) {
            Ok(k) => methods.push(k),
            Err(e) => problems.push(e.to_string()),
        }
    }
    let needs_algo = methods.iter().any(|m| *m != MethodKey::Rp);

    // learner profile
    let algorithm = file.algo.algorithm;
    if needs_algo && algorithm.is_none() {
        missing.push("algo.algorithm".into());
    }
    let profile = file.algo.profile.as_deref().unwrap_or("ds1");
    let (mut algo, profile_lag, profile_gross) = match profile {
        "ds1" => (
            AlgoConfig::ds1(algorithm.unwrap_or(Algorithm::Ppo)),
            10,
            1.0,
        ),
        "ds2" => (
            AlgoConfig::ds2(algorithm.unwrap_or(Algorithm::Ppo)),
            45,
            2.0,
        ),
        other => {
            problems.push(format!("unknown profile '{other}' (ds1, ds2)"));
            (
                AlgoConfig::ds1(algorithm.unwrap_or(Algorithm::Ppo)),
                10,
                1.0,
            )
        }
    };

    // optimizer section, then explicit algo overrides
    if let Some(kind) = file.opt.kind {
        algo.optimizer = kind;
    }
    if let Some(lr) = file.opt.lr {
        algo.lr = lr;
    }
    if let Some(clip) = file.opt.max_grad_clip {
        algo.max_grad_clip = (clip > 0.0).then_some(clip);
    }
    if let Some(eps) = file.opt.rmsprop_eps {
        algo.rmsprop_eps = eps;
    }
    let a = &file.algo;
    if let Some(v) = a.lr {
        algo.lr = v;
    }
    if let Some(v) = a.steps_per_update {
        algo.steps_per_update = v;
    }
    if let Some(v) = a.gamma {
        algo.gamma = v;
    }
    if let Some(v) = a.lambda {
        algo.lambda = v;
    }
    if let Some(v) = a.entropy_coef {
        algo.entropy_coef = v;
    }
    if let Some(v) = a.vf_coef {
        algo.vf_coef = v;
    }
    if let Some(v) = a.clip_epsilon {
        algo.clip_epsilon = v;
    }
    if let Some(v) = a.epochs {
        algo.epochs = v;
    }
    if let Some(v) = a.partition_factor {
        algo.partition_factor = v;
    }
    if let Some(v) = a.cg_max_steps {
        algo.cg_max_steps = v;
    }
    if let Some(v) = a.hessian_damping {
        algo.hessian_damping = v;
    }
    if let Some(v) = a.line_search_reduction {
        algo.line_search_reduction = v;
    }
    if let Some(v) = a.line_search_max_iter {
        algo.line_search_max_iter = v;
    }
    if let Some(v) = a.critic_updates {
        algo.critic_updates = v;
    }
    if let Some(v) = a.target_kl {
        algo.target_kl = v;
    }
    if let Some(v) = a.subsample_factor {
        algo.subsample_factor = v;
    }

    // network
    let mut net = NetConfig::default();
    if let Some(hidden) = &file.net.hidden {
        net.hidden = hidden.clone();
    }
    if let Some(name) = &file.net.activation {
        match Activation::from_name(name) {
            Ok(act) => net.activation = act,
            Err(e) => problems.push(e.to_string()),
        }
    }

    // method-specific requirements
    if methods.contains(&MethodKey::DpdLgn)
        && file.il.lgn_sigma.is_none()
        && file.sigma_space.is_none()
    {
        missing.push("il.lgn_sigma (or sigma_space)".into());
    }

    if !missing.is_empty() || !problems.is_empty() {
        let mut msg = String::new();
        if !missing.is_empty() {
            msg.push_str(&format!("missing fields: {}", missing.join(", ")));
        }
        if !problems.is_empty() {
            if !msg.is_empty() {
                msg.push_str("; ");
            }
            msg.push_str(&problems.join("; "));
        }
        return Err(Error::Config(msg));
    }

    let canonical = serde_json::to_value(file)?;
    Ok(RunConfig {
        canonical,
        data: data.unwrap(),
        split_ratios: file.split.ratios,
        universe: file.env.universe.clone(),
        state_lag: file.env.state_lag.unwrap_or(profile_lag),
        gross_limit: file.env.gross_limit.unwrap_or(profile_gross),
        linear_reward: file.env.linear_reward.unwrap_or(false),
        net,
        algo,
        methods,
        smoothing: file.smoothing.clone(),
        il: file.il.clone(),
        exp: file.exp.clone(),
        space: file.space.clone(),
        tis_space: file.tis_space.clone().unwrap_or_else(|| (1..=8).collect()),
        sigma_space: file
            .sigma_space
            .clone()
            .unwrap_or_else(|| vec![0.5, 1.0, 1.5, 2.0]),
        out: file.out.as_ref().map(PathBuf::from),
        master_seed: file.seed.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "data": { "synthetic": {
                "n_assets": 2, "length": 200, "ar_coeff": 0.9,
                "signal_scale": 0.01, "noise_scale": 0.0, "seed": 3
            }},
            "algo": { "algorithm": "ppo" },
            "methods": ["baseline", "rp"],
            "seed": 42
        })
    }

    #[test]
    fn minimal_config_resolves_with_profile_defaults() {
        let file: ConfigFile = serde_json::from_value(minimal_json()).unwrap();
        let cfg = resolve(&file).unwrap();
        assert_eq!(cfg.state_lag, 10);
        assert_eq!(cfg.gross_limit, 1.0);
        assert_eq!(cfg.algo.steps_per_update, 292);
        assert_eq!(cfg.algo.clip_epsilon, 0.6);
        assert_eq!(cfg.exp.seeds, 50);
        assert_eq!(cfg.exp.total_steps, 1_000_000);
        assert_eq!(cfg.master_seed, 42);
    }

    #[test]
    fn ds2_profile_switches_env_defaults() {
        let mut json = minimal_json();
        json["algo"]["profile"] = "ds2".into();
        json["algo"]["algorithm"] = "trpo".into();
        let cfg = resolve(&serde_json::from_value(json).unwrap()).unwrap();
        assert_eq!(cfg.state_lag, 45);
        assert_eq!(cfg.gross_limit, 2.0);
        assert_eq!(cfg.algo.lr, 0.01);
        assert_eq!(cfg.algo.steps_per_update, 73);
    }

    #[test]
    fn missing_fields_are_all_reported() {
        let file: ConfigFile = serde_json::from_value(serde_json::json!({
            "methods": ["dpd-lgn"]
        }))
        .unwrap();
        match resolve(&file) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("data"), "{msg}");
                assert!(msg.contains("algo.algorithm"), "{msg}");
                assert!(msg.contains("il.lgn_sigma"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_method_and_profile_rejected() {
        let mut json = minimal_json();
        json["methods"] = serde_json::json!(["nope"]);
        assert!(resolve(&serde_json::from_value(json).unwrap()).is_err());

        let mut json = minimal_json();
        json["algo"]["profile"] = "ds3".into();
        assert!(resolve(&serde_json::from_value(json).unwrap()).is_err());
    }

    #[test]
    fn csv_source_requires_universe() {
        let json = serde_json::json!({
            "data": { "csv": { "path": "x.csv", "kinds": { "a": "market" } } },
            "algo": { "algorithm": "a2c" },
            "methods": ["baseline"]
        });
        match resolve(&serde_json::from_value(json).unwrap()) {
            Err(Error::Config(msg)) => assert!(msg.contains("env.universe")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_hash_changes_iff_fields_change() {
        let file: ConfigFile = serde_json::from_value(minimal_json()).unwrap();
        let h1 = resolve(&file).unwrap().config_hash();
        let h2 = resolve(&file).unwrap().config_hash();
        assert_eq!(h1, h2);

        let mut json = minimal_json();
        json["seed"] = 43.into();
        let h3 = resolve(&serde_json::from_value(json).unwrap())
            .unwrap()
            .config_hash();
        assert_ne!(h1, h3);
    }

    #[test]
    fn sigma_value_broadcasts() {
        assert_eq!(
            SigmaValue::Scalar(1.628).broadcast(3).unwrap(),
            vec![1.628; 3]
        );
        assert_eq!(
            SigmaValue::PerAsset(vec![1.0, 2.0]).broadcast(2).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(SigmaValue::PerAsset(vec![1.0]).broadcast(2).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut json = minimal_json();
        json["surprise"] = 1.into();
        assert!(serde_json::from_value::<ConfigFile>(json).is_err());
    }
}
