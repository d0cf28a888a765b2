//! Rollout collection, generalized advantage estimation, and the three
//! actor-critic learners (A2C, PPO, TRPO) behind a step-budgeted training
//! loop with optional staged-curriculum data switching.
//!
//! Training is strictly sequential and bit-reproducible under a fixed seed;
//! concurrency happens one level up, across independent runs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ProcessedSeries, Span};
use crate::env::{ActionVector, EnvConfig, EnvState, PortfolioEnv};
use crate::error::{Error, Result};
use crate::imitation::OracleTrajectory;
use crate::net::{
    forward_policy, forward_value, init_policy_value, Mlp, MlpSpec, NetConfig, Optimizer,
    OptimizerKind, PolicyOutput,
};
use crate::smoothing::{
    apply, stage_schedule, CurriculumMode, CurriculumSchedule, SmoothingMethod,
};

/// SplitMix64 mixing; derives independent seed streams from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    A2c,
    Ppo,
    Trpo,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::A2c => "a2c",
            Self::Ppo => "ppo",
            Self::Trpo => "trpo",
        }
    }
}

/// All learner hyperparameters. The `ds1`/`ds2` constructors mirror the two
/// tuned profiles the experiments ship with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub steps_per_update: usize,
    /// Discount factor gamma.
    pub gamma: f64,
    /// Bias-variance trade-off factor lambda for GAE.
    pub lambda: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    // PPO
    pub clip_epsilon: f64,
    pub epochs: usize,
    /// Number of minibatches per epoch.
    pub partition_factor: usize,
    // TRPO
    pub cg_max_steps: usize,
    pub hessian_damping: f64,
    pub line_search_reduction: f64,
    pub line_search_max_iter: usize,
    pub critic_updates: usize,
    pub target_kl: f64,
    pub subsample_factor: usize,
    // optimizer
    pub optimizer: OptimizerKind,
    pub max_grad_clip: Option<f64>,
    pub rmsprop_eps: f64,
}

impl AlgoConfig {
    /// Macro-ETF-style profile (gross limit 1, state lag 10 at the env level).
    pub fn ds1(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            lr: 0.0001,
            steps_per_update: 292,
            gamma: 0.956,
            lambda: 0.94,
            entropy_coef: 0.03,
            vf_coef: 4.6,
            clip_epsilon: 0.6,
            epochs: 8,
            partition_factor: 4,
            cg_max_steps: 15,
            hessian_damping: 0.1,
            line_search_reduction: 0.8,
            line_search_max_iter: 10,
            critic_updates: 10,
            target_kl: 0.01,
            subsample_factor: 1,
            optimizer: OptimizerKind::Adam,
            max_grad_clip: if algorithm == Algorithm::A2c {
                Some(0.6)
            } else {
                None
            },
            rmsprop_eps: 0.0,
        }
    }

    /// Commodity-futures-style profile (gross limit 2, state lag 45).
    pub fn ds2(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            lr: 0.01,
            steps_per_update: 73,
            gamma: 0.908,
            lambda: 0.94,
            entropy_coef: 0.02,
            vf_coef: 0.5,
            clip_epsilon: 0.35,
            epochs: 11,
            partition_factor: 2,
            cg_max_steps: 15,
            hessian_damping: 0.1,
            line_search_reduction: 0.8,
            line_search_max_iter: 10,
            critic_updates: 10,
            target_kl: 0.01,
            subsample_factor: 1,
            optimizer: OptimizerKind::Adam,
            max_grad_clip: if algorithm == Algorithm::A2c {
                Some(0.6)
            } else {
                None
            },
            rmsprop_eps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("gamma and lambda must be in (0, 1]".into()));
        }
        if self.steps_per_update == 0 {
            return Err(Error::Config("steps_per_update must be positive".into()));
        }
        if self.clip_epsilon <= 0.0 {
            return Err(Error::Config("clip epsilon must be positive".into()));
        }
        if self.partition_factor == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs and partition factor must be positive".into(),
            ));
        }
        if self.subsample_factor == 0 {
            return Err(Error::Config("subsample factor must be positive".into()));
        }
        if self.line_search_reduction <= 0.0 || self.line_search_reduction >= 1.0 {
            return Err(Error::Config(
                "line search reduction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step records for one update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<ActionVector>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// True when the step ended its episode.
    pub dones: Vec<bool>,
    /// Critic estimate for the state following the last step.
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Persistent position in the environment so consecutive rollouts continue
/// mid-episode and episodes auto-reset at the range end.
pub struct EnvCursor {
    state: EnvState,
    obs: Vec<f64>,
}

impl EnvCursor {
    pub fn new(env: &PortfolioEnv) -> Result<Self> {
        let (state, obs) = env.reset()?;
        Ok(Self { state, obs })
    }
}

/// Collects `n_steps` transitions with the current policy.
pub fn collect_rollout<R: Rng>(
    env: &PortfolioEnv,
    cursor: &mut EnvCursor,
    policy: &Mlp,
    value: &Mlp,
    n_steps: usize,
    rng: &mut R,
) -> Result<RolloutBuffer> {
    if n_steps == 0 {
        return Err(Error::Usage("rollout needs at least one step".into()));
    }
    let n_assets = env.n_assets();
    let mut buf = RolloutBuffer::default();
    for _ in 0..n_steps {
        let out = forward_policy(policy, &cursor.obs, n_assets)?;
        let (action, log_prob) = out.sample(rng);
        let v = forward_value(value, &cursor.obs)?;
        let step = env.step(&mut cursor.state, &action)?;

        buf.observations.push(std::mem::take(&mut cursor.obs));
        buf.actions.push(action);
        buf.rewards.push(step.reward);
        buf.log_probs.push(log_prob);
        buf.values.push(v);
        buf.dones.push(step.done);

        if step.done {
            let (state, obs) = env.reset()?;
            cursor.state = state;
            cursor.obs = obs;
        } else {
            cursor.obs = step.next_observation;
        }
    }
    buf.bootstrap_value = forward_value(value, &cursor.obs)?;
    Ok(buf)
}

/// Backward GAE recursion:
/// `delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`,
/// `return_t = A_t + V_t`. Advantages are left unnormalized here.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let n = buffer.len();
    buffer.advantages = vec![0.0; n];
    buffer.returns = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if buffer.dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n {
            buffer.values[t + 1]
        } else {
            buffer.bootstrap_value
        };
        let delta = buffer.rewards[t] + gamma * next_value * not_done - buffer.values[t];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        buffer.advantages[t] = next_adv;
        buffer.returns[t] = next_adv + buffer.values[t];
    }
}

/// Rescales buffer advantages to zero mean and unit (population) standard
/// deviation; degenerate buffers are only centered.
pub fn normalize_advantages(buffer: &mut RolloutBuffer) {
    let n = buffer.advantages.len();
    if n == 0 {
        return;
    }
    let mean = buffer.advantages.iter().sum::<f64>() / n as f64;
    buffer.advantages.iter_mut().for_each(|a| *a -= mean);
    let std = (buffer.advantages.iter().map(|a| a * a).sum::<f64>() / n as f64).sqrt();
    if std > 1e-8 {
        buffer.advantages.iter_mut().for_each(|a| *a /= std);
    }
}

/// Policy-objective flavour shared by the three learners.
pub enum Surrogate<'a> {
    /// `mean(log pi * A)`; the A2C objective.
    PolicyGradient,
    /// `mean(rho * A)` with `rho` against stored log probs; TRPO's objective.
    Ratio { old_log_probs: &'a [f64] },
    /// PPO's clipped objective `mean(min(rho A, clip(rho) A))`.
    Clipped {
        old_log_probs: &'a [f64],
        epsilon: f64,
    },
}

/// Borrowed batch view for loss evaluation.
pub struct LossBatch<'a> {
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [ActionVector],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

impl<'a> LossBatch<'a> {
    pub fn from_buffer(buffer: &'a RolloutBuffer) -> Self {
        Self {
            observations: &buffer.observations,
            actions: &buffer.actions,
            advantages: &buffer.advantages,
            returns: &buffer.returns,
        }
    }
}

/// Combined actor-critic loss over the index subset:
/// `L = -mean(surrogate) + vf_coef * mean((V - R)^2) - ent_coef * mean(H)`.
/// Returns the loss value with exact policy and value gradients.
#[allow(clippy::too_many_arguments)]
pub fn actor_critic_loss(
    policy: &Mlp,
    value: &Mlp,
    batch: &LossBatch,
    idx: &[usize],
    surrogate: &Surrogate,
    n_assets: usize,
    vf_coef: f64,
    ent_coef: f64,
) -> Result<(f64, Mlp, Mlp)> {
    if idx.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    let mut pol_grad = policy.zeros_like();
    let mut val_grad = value.zeros_like();

    for &i in idx {
        let obs = &batch.observations[i];
        let action = &batch.actions[i];
        let adv = batch.advantages[i];

        let cache = policy.forward_cached(obs);
        let out = PolicyOutput {
            logits: cache.output.clone(),
            n_assets,
        };
        let (log_prob, entropy) = out.log_prob_entropy(action);
        let dlogp = out.dlogp_dlogits(action);

        // surrogate value and its gradient w.r.t. the logits
        let (sur, sur_scale) = match surrogate {
            Surrogate::PolicyGradient => (log_prob * adv, adv),
            Surrogate::Ratio { old_log_probs } => {
                let rho = (log_prob - old_log_probs[i]).exp();
                (rho * adv, rho * adv)
            }
            Surrogate::Clipped {
                old_log_probs,
                epsilon,
            } => {
                let rho = (log_prob - old_log_probs[i]).exp();
                let unclipped = rho * adv;
                let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
                if unclipped <= clipped {
                    (unclipped, rho * adv)
                } else {
                    // the clipped branch is active and flat in rho
                    (clipped, 0.0)
                }
            }
        };
        loss += (-sur - ent_coef * entropy) * inv;

        let dent = out.dentropy_dlogits();
        let dlogits: Vec<f64> = dlogp
            .iter()
            .zip(&dent)
            .map(|(dp, de)| (-sur_scale * dp - ent_coef * de) * inv)
            .collect();
        policy.backward(&cache, &dlogits, &mut pol_grad);

        let vcache = value.forward_cached(obs);
        let v = vcache.output[0];
        let diff = v - batch.returns[i];
        loss += vf_coef * diff * diff * inv;
        value.backward(&vcache, &[vf_coef * 2.0 * diff * inv], &mut val_grad);
    }
    Ok((loss, pol_grad, val_grad))
}

/// Mean squared error of the critic over the batch, with its gradient.
pub fn value_mse_loss(value: &Mlp, batch: &LossBatch, idx: &[usize]) -> Result<(f64, Mlp)> {
    if idx.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    let mut grad = value.zeros_like();
    for &i in idx {
        let cache = value.forward_cached(&batch.observations[i]);
        let diff = cache.output[0] - batch.returns[i];
        loss += diff * diff * inv;
        value.backward(&cache, &[2.0 * diff * inv], &mut grad);
    }
    Ok((loss, grad))
}

/// Mean policy entropy over observations, with its gradient.
pub fn entropy_loss(
    policy: &Mlp,
    observations: &[Vec<f64>],
    n_assets: usize,
) -> Result<(f64, Mlp)> {
    if observations.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    let inv = 1.0 / observations.len() as f64;
    let mut loss = 0.0;
    let mut grad = policy.zeros_like();
    for obs in observations {
        let cache = policy.forward_cached(obs);
        let out = PolicyOutput {
            logits: cache.output.clone(),
            n_assets,
        };
        let dent = out.dentropy_dlogits();
        let h: f64 = {
            let probs = out.probs();
            -probs
                .iter()
                .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
                .sum::<f64>()
        };
        loss += h * inv;
        let dlogits: Vec<f64> = dent.iter().map(|d| d * inv).collect();
        policy.backward(&cache, &dlogits, &mut grad);
    }
    Ok((loss, grad))
}

/// Mean `KL(old || current)` against stored per-asset probabilities, with its
/// gradient w.r.t. the current policy parameters.
pub fn kl_loss(
    policy: &Mlp,
    observations: &[Vec<f64>],
    old_probs: &[Vec<f64>],
    n_assets: usize,
    idx: &[usize],
) -> Result<(f64, Mlp)> {
    if idx.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    let inv = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    let mut grad = policy.zeros_like();
    for &i in idx {
        let cache = policy.forward_cached(&observations[i]);
        let out = PolicyOutput {
            logits: cache.output.clone(),
            n_assets,
        };
        let (kl, dkl) = out.kl_from(&old_probs[i]);
        loss += kl * inv;
        let dlogits: Vec<f64> = dkl.iter().map(|d| d * inv).collect();
        policy.backward(&cache, &dlogits, &mut grad);
    }
    Ok((loss, grad))
}

/// One full-batch gradient step on the A2C loss.
pub fn a2c_update(
    policy: &mut Mlp,
    value: &mut Mlp,
    pol_opt: &mut Optimizer,
    val_opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    cfg: &AlgoConfig,
    n_assets: usize,
) -> Result<f64> {
    let batch = LossBatch::from_buffer(buffer);
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let (loss, pol_grad, val_grad) = actor_critic_loss(
        policy,
        value,
        &batch,
        &idx,
        &Surrogate::PolicyGradient,
        n_assets,
        cfg.vf_coef,
        cfg.entropy_coef,
    )?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite a2c loss {loss}")));
    }
    pol_opt.step(policy, &pol_grad, cfg.lr, cfg.max_grad_clip)?;
    val_opt.step(value, &val_grad, cfg.lr, cfg.max_grad_clip)?;
    Ok(loss)
}

/// Epochs of shuffled minibatch steps on the clipped PPO objective.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng>(
    policy: &mut Mlp,
    value: &mut Mlp,
    pol_opt: &mut Optimizer,
    val_opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    cfg: &AlgoConfig,
    n_assets: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = buffer.len();
    let chunk = n.div_ceil(cfg.partition_factor).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mini in order.chunks(chunk) {
            let batch = LossBatch::from_buffer(buffer);
            let (loss, pol_grad, val_grad) = actor_critic_loss(
                policy,
                value,
                &batch,
                mini,
                &Surrogate::Clipped {
                    old_log_probs: &buffer.log_probs,
                    epsilon: cfg.clip_epsilon,
                },
                n_assets,
                cfg.vf_coef,
                cfg.entropy_coef,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite ppo loss {loss}")));
            }
            pol_opt.step(policy, &pol_grad, cfg.lr, cfg.max_grad_clip)?;
            val_opt.step(value, &val_grad, cfg.lr, cfg.max_grad_clip)?;
            last_loss = loss;
        }
    }
    Ok(last_loss)
}

/// Conjugate gradient for `A x = b` given a matrix-vector product closure.
pub fn conjugate_gradient(
    matvec: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..max_iters {
        if rr.sqrt() <= tol {
            break;
        }
        let ap = matvec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Numeric(format!(
                "conjugate gradient hit non-positive curvature {pap}"
            )));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("conjugate gradient diverged".into()));
    }
    Ok(x)
}

/// Slack multiplier on the KL acceptance check; exact-boundary acceptance is
/// numerically brittle.
pub const TRPO_KL_SLACK: f64 = 1.5;

/// Natural-gradient policy step via CG on Fisher-vector products, scaled to
/// the KL trust region, with a backtracking line search; then `critic_updates`
/// regression steps on the value net. Returns the measured KL of the accepted
/// step (0.0 when the line search rejects every candidate).
pub fn trpo_update(
    policy: &mut Mlp,
    value: &mut Mlp,
    val_opt: &mut Optimizer,
    buffer: &RolloutBuffer,
    cfg: &AlgoConfig,
    n_assets: usize,
) -> Result<f64> {
    let n = buffer.len();
    let idx: Vec<usize> = (0..n).collect();
    let batch = LossBatch::from_buffer(buffer);

    // old distribution snapshot
    let old_probs: Vec<Vec<f64>> = buffer
        .observations
        .iter()
        .map(|obs| forward_policy(policy, obs, n_assets).map(|o| o.probs()))
        .collect::<Result<_>>()?;

    // ascent gradient of the surrogate at the old parameters (rho = 1)
    let mut g = policy.zeros_like();
    let inv = 1.0 / n as f64;
    for &i in &idx {
        let cache = policy.forward_cached(&buffer.observations[i]);
        let out = PolicyOutput {
            logits: cache.output.clone(),
            n_assets,
        };
        let dlogp = out.dlogp_dlogits(&buffer.actions[i]);
        let dlogits: Vec<f64> = dlogp
            .iter()
            .map(|d| d * buffer.advantages[i] * inv)
            .collect();
        policy.backward(&cache, &dlogits, &mut g);
    }
    let g_flat = g.flatten();
    let g_norm: f64 = g_flat.iter().map(|v| v * v).sum::<f64>().sqrt();

    let sub_idx: Vec<usize> = (0..n).step_by(cfg.subsample_factor).collect();
    let fvp = |v: &[f64]| -> Vec<f64> {
        let mut tangent = policy.zeros_like();
        tangent.set_from_flat(v).expect("tangent shape");
        let mut out_grad = policy.zeros_like();
        let sub_inv = 1.0 / sub_idx.len() as f64;
        for &i in &sub_idx {
            let obs = &buffer.observations[i];
            let dz = policy.jvp(obs, &tangent);
            let cache = policy.forward_cached(obs);
            // Gauss-Newton product through each asset's softmax:
            // u = (diag(p) - p p^T) dz, exactly the KL Hessian at the old point
            let probs = &old_probs[i];
            let mut u = vec![0.0; dz.len()];
            for a in 0..n_assets {
                let block = 3 * a..3 * a + 3;
                let p = &probs[block.clone()];
                let d = &dz[block.clone()];
                let dot: f64 = p.iter().zip(d).map(|(pi, di)| pi * di).sum();
                for k in 0..3 {
                    u[3 * a + k] = (p[k] * (d[k] - dot)) * sub_inv;
                }
            }
            policy.backward(&cache, &u, &mut out_grad);
        }
        let mut flat = out_grad.flatten();
        for (f, vi) in flat.iter_mut().zip(v) {
            *f += cfg.hessian_damping * vi;
        }
        flat
    };

    let mut accepted_kl = 0.0;
    if g_norm > 0.0 {
        let step_dir = conjugate_gradient(fvp, &g_flat, cfg.cg_max_steps, 1e-10)?;
        let shs: f64 = step_dir
            .iter()
            .zip(fvp(&step_dir))
            .map(|(s, h)| s * h)
            .sum();
        if shs > 0.0 {
            let beta = (2.0 * cfg.target_kl / shs).sqrt();
            let theta_old = policy.flatten();
            let surrogate = |pol: &Mlp| -> Result<f64> {
                let mut total = 0.0;
                for &i in &idx {
                    let out = forward_policy(pol, &buffer.observations[i], n_assets)?;
                    let (lp, _) = out.log_prob_entropy(&buffer.actions[i]);
                    total += (lp - buffer.log_probs[i]).exp() * buffer.advantages[i];
                }
                Ok(total * inv)
            };
            let kl_vs_old = |pol: &Mlp| -> Result<f64> {
                let mut total = 0.0;
                for &i in &idx {
                    let out = forward_policy(pol, &buffer.observations[i], n_assets)?;
                    let (kl, _) = out.kl_from(&old_probs[i]);
                    total += kl;
                }
                Ok(total * inv)
            };
            let surr_old = surrogate(policy)?;
            let mut scale = beta;
            let mut accepted = false;
            for _ in 0..cfg.line_search_max_iter {
                let mut candidate = theta_old.clone();
                for (c, s) in candidate.iter_mut().zip(&step_dir) {
                    *c += scale * s;
                }
                policy.set_from_flat(&candidate)?;
                let surr_new = surrogate(policy)?;
                let kl = kl_vs_old(policy)?;
                if surr_new > surr_old && kl <= TRPO_KL_SLACK * cfg.target_kl {
                    accepted = true;
                    accepted_kl = kl;
                    break;
                }
                scale *= cfg.line_search_reduction;
            }
            if !accepted {
                policy.set_from_flat(&theta_old)?;
            }
        }
    }

    for _ in 0..cfg.critic_updates {
        let (loss, grad) = value_mse_loss(value, &batch, &idx)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite critic loss {loss}")));
        }
        val_opt.step(value, &grad, cfg.lr, cfg.max_grad_clip)?;
    }
    Ok(accepted_kl)
}

/// A trained policy/value pair plus everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub policy: Mlp,
    pub value: Mlp,
    pub algo: AlgoConfig,
    pub net: NetConfig,
    pub n_assets: usize,
    pub seed: u64,
    pub steps_trained: usize,
}

impl TrainedModel {
    pub fn policy_output(&self, obs: &[f64]) -> Result<PolicyOutput> {
        forward_policy(&self.policy, obs, self.n_assets)
    }

    /// Deterministic mode action used for inference.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<ActionVector> {
        Ok(self.policy_output(obs)?.mode_action())
    }
}

/// Everything `train` needs: the unsmoothed training series and range, the
/// environment, the learner configuration and an optional curriculum.
pub struct TrainSpec<'a> {
    pub series: &'a Arc<ProcessedSeries>,
    pub span: Span,
    pub env_cfg: EnvConfig,
    pub oracle: Option<Arc<OracleTrajectory>>,
    pub algo: AlgoConfig,
    pub net: NetConfig,
    pub total_steps: usize,
    pub seed: u64,
    pub curriculum: Option<CurriculumSchedule>,
}

/// Step-budgeted training loop: collect, estimate advantages, update, until
/// the budget is exhausted. In staged-curriculum mode the training data is
/// re-smoothed per stage with a decreasing window, updates split evenly
/// across stages. Fully deterministic under the seed.
pub fn train(spec: &TrainSpec) -> Result<TrainedModel> {
    spec.algo.validate()?;
    let positional = matches!(
        spec.curriculum,
        Some(CurriculumSchedule {
            mode: CurriculumMode::Positional,
            ..
        })
    );
    // positional mode transforms the data once; staged mode switches per stage
    let base_series: Arc<ProcessedSeries> = if positional {
        let stages = spec.curriculum.unwrap().stages;
        Arc::new(crate::smoothing::inverse_smooth_positional(
            spec.series,
            stages,
        )?)
    } else {
        spec.series.clone()
    };

    let make_env = |series: Arc<ProcessedSeries>| -> Result<PortfolioEnv> {
        PortfolioEnv::new(series, spec.span, spec.env_cfg.clone(), spec.oracle.clone())
    };

    let probe_env = make_env(base_series.clone())?;
    let n_assets = probe_env.n_assets();
    let mlp_spec = MlpSpec::new(
        probe_env.observation_dim(),
        &spec.net,
        n_assets,
        derive_seed(spec.seed, 1),
    );
    let (mut policy, mut value) = init_policy_value(&mlp_spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2));

    let mut pol_opt = Optimizer::new(
        spec.algo.optimizer,
        policy.n_params(),
        spec.algo.rmsprop_eps,
    );
    let mut val_opt = Optimizer::new(spec.algo.optimizer, value.n_params(), spec.algo.rmsprop_eps);

    let mut model = TrainedModel {
        policy: policy.clone(),
        value: value.clone(),
        algo: spec.algo.clone(),
        net: spec.net.clone(),
        n_assets,
        seed: spec.seed,
        steps_trained: 0,
    };
    if spec.total_steps == 0 {
        return Ok(model);
    }

    let spu = spec.algo.steps_per_update;
    let total_updates = spec.total_steps.div_ceil(spu);

    // (window, updates) stages; a single unsmoothed stage when no curriculum
    let stages: Vec<(u32, usize)> = match (&spec.curriculum, positional) {
        (Some(c), false) => stage_schedule(c.stages, total_updates)?,
        _ => vec![(1, total_updates)],
    };

    let mut steps_done = 0usize;
    for (w_l, updates) in stages {
        let stage_series = if w_l == 1 {
            base_series.clone()
        } else {
            Arc::new(apply(&base_series, SmoothingMethod::Ema { w_l })?)
        };
        let env = make_env(stage_series)?;
        let mut cursor = EnvCursor::new(&env)?;
        for _ in 0..updates {
            let remaining = spec.total_steps - steps_done;
            if remaining == 0 {
                break;
            }
            let n_steps = remaining.min(spu);
            let mut buffer =
                collect_rollout(&env, &mut cursor, &policy, &value, n_steps, &mut rng)?;
            compute_gae(&mut buffer, spec.algo.gamma, spec.algo.lambda);
            normalize_advantages(&mut buffer);
            match spec.algo.algorithm {
                Algorithm::A2c => {
                    a2c_update(
                        &mut policy,
                        &mut value,
                        &mut pol_opt,
                        &mut val_opt,
                        &buffer,
                        &spec.algo,
                        n_assets,
                    )?;
                }
                Algorithm::Ppo => {
                    ppo_update(
                        &mut policy,
                        &mut value,
                        &mut pol_opt,
                        &mut val_opt,
                        &buffer,
                        &spec.algo,
                        n_assets,
                        &mut rng,
                    )?;
                }
                Algorithm::Trpo => {
                    trpo_update(
                        &mut policy,
                        &mut value,
                        &mut val_opt,
                        &buffer,
                        &spec.algo,
                        n_assets,
                    )?;
                }
            }
            steps_done += n_steps;
        }
    }

    model.policy = policy;
    model.value = value;
    model.steps_trained = steps_done;
    Ok(model)
}

/// Runs one greedy (mode-action) episode and returns the per-step rewards.
pub fn evaluate_greedy(model: &TrainedModel, env: &PortfolioEnv) -> Result<Vec<f64>> {
    let (mut state, mut obs) = env.reset()?;
    let mut rewards = Vec::with_capacity(env.episode_len());
    while !state.is_done() {
        let action = model.greedy_action(&obs)?;
        let out = env.step(&mut state, &action)?;
        rewards.push(out.reward);
        obs = out.next_observation;
    }
    Ok(rewards)
}
