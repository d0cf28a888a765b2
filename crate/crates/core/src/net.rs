//! From-scratch MLP policy and value networks with exact reverse-mode
//! gradients, per-asset categorical action heads, and Adam/RMSProp updates.
//!
//! Everything is `f64` and hand-rolled: the nets are tiny (two hidden layers
//! of 64 by default) and the training loop needs bit-reproducible behaviour
//! under a fixed seed, which is easier to guarantee without a tensor
//! library. Besides the usual backward pass there is a forward (tangent)
//! pass used for exact Fisher-vector products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::ActionVector;
use crate::error::{Error, Result};

/// Supported hidden-layer nonlinearities. Anything else fails at
/// construction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            other => Err(Error::Config(format!(
                "unsupported activation '{other}' (tanh, relu)"
            ))),
        }
    }

    fn apply(&self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape configuration (the `net.*` config keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

/// Shape request for one policy/value pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub n_assets: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, net: &NetConfig, n_assets: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden: net.hidden.clone(),
            activation: net.activation,
            n_assets,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_assets == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn policy_output_dim(&self) -> usize {
        3 * self.n_assets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out_dim x in_dim` weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.w[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// An MLP and, equally, the parameter-aligned container for its gradients:
/// hidden layers use the configured activation, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Intermediate activations kept for the backward pass. `inputs[l]` is the
/// vector fed into layer `l`.
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Scaled-uniform (Xavier) initialization, deterministic under the seed.
    /// `output_scale` shrinks the final layer; policy heads use 0.01 so early
    /// action distributions stay near uniform.
    pub fn init(
        dims: &[usize],
        activation: Activation,
        seed: u64,
        output_scale: f64,
    ) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::Config(
                "the network needs at least one hidden layer".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let scale = if l == dims.len() - 2 {
                output_scale
            } else {
                1.0
            };
            let w = (0..in_dim * out_dim)
                .map(|_| scale * rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                w,
                b: vec![0.0; out_dim],
                in_dim,
                out_dim,
            });
        }
        Ok(Self { layers, activation })
    }

    /// Parameter-aligned zero container for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let mut z = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.matvec(&current, &mut z);
            inputs.push(std::mem::take(&mut current));
            if l < last {
                current = z.iter().map(|&v| self.activation.apply(v)).collect();
            } else {
                current = z.clone();
            }
        }
        ForwardCache {
            inputs,
            output: current,
        }
    }

    /// Accumulates `d loss / d params` into `grad` given the loss gradient
    /// w.r.t. the network output.
    #[allow(clippy::needless_range_loop)] // indexed rows read clearer in the kernels
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grad: &mut Mlp) {
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grad.layers[l];
            for r in 0..layer.out_dim {
                g.b[r] += delta[r];
                let row = &mut g.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += delta[r] * xi;
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; layer.in_dim];
                for r in 0..layer.out_dim {
                    let row = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (dxi, wi) in dx.iter_mut().zip(row) {
                        *dxi += wi * delta[r];
                    }
                }
                // input of this layer is the activated output of the previous
                for (dxi, &yi) in dx.iter_mut().zip(input) {
                    *dxi *= self.activation.derivative_from_output(yi);
                }
                delta = dx;
            }
        }
    }

    /// Forward (tangent) pass: the directional derivative of the output with
    /// respect to the parameters along `tangent`.
    #[allow(clippy::needless_range_loop)]
    pub fn jvp(&self, x: &[f64], tangent: &Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_vec();
        let mut da = vec![0.0; x.len()];
        for (l, (layer, tlayer)) in self.layers.iter().zip(&tangent.layers).enumerate() {
            let mut z = Vec::new();
            layer.matvec(&a, &mut z);
            let mut dz = vec![0.0; layer.out_dim];
            for r in 0..layer.out_dim {
                let row = &layer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                let trow = &tlayer.w[r * layer.in_dim..(r + 1) * layer.in_dim];
                let mut acc = tlayer.b[r];
                for i in 0..layer.in_dim {
                    acc += trow[i] * a[i] + row[i] * da[i];
                }
                dz[r] = acc;
            }
            if l < last {
                a = z.iter().map(|&v| self.activation.apply(v)).collect();
                for (dzi, &yi) in dz.iter_mut().zip(&a) {
                    *dzi *= self.activation.derivative_from_output(yi);
                }
                da = dz;
            } else {
                return dz;
            }
        }
        unreachable!("network has at least one layer");
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.b);
        }
        v
    }

    /// Writes a flat vector back into the layered structure; exact inverse of
    /// [`Mlp::flatten`].
    pub fn set_from_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Usage(format!(
                "flat vector has {} entries, network has {} parameters",
                v.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&v[offset..offset + nw]);
            offset += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&v[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// `self += scale * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (w, ow) in l.w.iter_mut().zip(&o.w) {
                *w += scale * ow;
            }
            for (b, ob) in l.b.iter_mut().zip(&o.b) {
                *b += scale * ob;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|w| *w *= factor);
            l.b.iter_mut().for_each(|b| *b *= factor);
        }
    }

    /// Global L2 norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.w.iter().map(|w| w * w).sum::<f64>() + l.b.iter().map(|b| b * b).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Index of the first layer containing a non-finite entry, if any.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite()))
    }
}

/// Initializes a policy/value network pair from one spec. The policy head is
/// scaled by 0.01, the value net derives its seed from the spec seed.
pub fn init_policy_value(spec: &MlpSpec) -> Result<(Mlp, Mlp)> {
    spec.validate()?;
    let mut dims = vec![spec.input_dim];
    dims.extend_from_slice(&spec.hidden);
    let mut policy_dims = dims.clone();
    policy_dims.push(spec.policy_output_dim());
    let mut value_dims = dims;
    value_dims.push(1);
    let policy = Mlp::init(&policy_dims, spec.activation, spec.seed, 0.01)?;
    let value = Mlp::init(&value_dims, spec.activation, spec.seed.wrapping_add(1), 1.0)?;
    Ok((policy, value))
}

pub fn forward_policy(policy: &Mlp, obs: &[f64], n_assets: usize) -> Result<PolicyOutput> {
    if obs.len() != policy.input_dim() {
        return Err(Error::Usage(format!(
            "observation has {} entries, network expects {}",
            obs.len(),
            policy.input_dim()
        )));
    }
    Ok(PolicyOutput {
        logits: policy.forward(obs),
        n_assets,
    })
}

pub fn forward_value(value: &Mlp, obs: &[f64]) -> Result<f64> {
    if obs.len() != value.input_dim() {
        return Err(Error::Usage(format!(
            "observation has {} entries, network expects {}",
            obs.len(),
            value.input_dim()
        )));
    }
    Ok(value.forward(obs)[0])
}

/// Per-asset 3-way logits over the short/none/long action values.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Asset-major logits, 3 per asset ordered as actions `-1, 0, 1`.
    pub logits: Vec<f64>,
    pub n_assets: usize,
}

fn action_to_index(a: i8) -> usize {
    (a + 1) as usize
}

fn index_to_action(i: usize) -> i8 {
    i as i8 - 1
}

/// Stable per-asset log-softmax of a 3-logit block.
fn log_softmax3(block: &[f64]) -> [f64; 3] {
    let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = block.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    [block[0] - lse, block[1] - lse, block[2] - lse]
}

impl PolicyOutput {
    fn block(&self, asset: usize) -> &[f64] {
        &self.logits[3 * asset..3 * asset + 3]
    }

    /// Per-asset action probabilities, asset-major like the logits.
    pub fn probs(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.logits.len());
        for a in 0..self.n_assets {
            let lp = log_softmax3(self.block(a));
            p.extend(lp.iter().map(|&l| l.exp()));
        }
        p
    }

    /// Independent categorical draw per asset; returns the joint log
    /// probability alongside the action.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (ActionVector, f64) {
        let mut values = Vec::with_capacity(self.n_assets);
        let mut log_prob = 0.0;
        for a in 0..self.n_assets {
            let lp = log_softmax3(self.block(a));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = 2;
            for (i, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            log_prob += lp[chosen];
            values.push(index_to_action(chosen));
        }
        (
            ActionVector::new(values).expect("indices map into valid actions"),
            log_prob,
        )
    }

    /// Joint log probability of `action` and the summed per-asset entropy.
    pub fn log_prob_entropy(&self, action: &ActionVector) -> (f64, f64) {
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        for (a, &act) in action.values().iter().enumerate() {
            let lp = log_softmax3(self.block(a));
            log_prob += lp[action_to_index(act)];
            entropy -= lp.iter().map(|&l| l.exp() * l).sum::<f64>();
        }
        (log_prob, entropy)
    }

    /// Greedy per-asset action (distribution mode); ties resolve to the
    /// lowest action index for determinism.
    pub fn mode_action(&self) -> ActionVector {
        let values = (0..self.n_assets)
            .map(|a| {
                let block = self.block(a);
                let mut best = 0;
                for i in 1..3 {
                    if block[i] > block[best] {
                        best = i;
                    }
                }
                index_to_action(best)
            })
            .collect();
        ActionVector::new(values).expect("indices map into valid actions")
    }

    /// Gradient of the joint log probability w.r.t. the logits.
    pub fn dlogp_dlogits(&self, action: &ActionVector) -> Vec<f64> {
        let mut g = vec![0.0; self.logits.len()];
        for (a, &act) in action.values().iter().enumerate() {
            let lp = log_softmax3(self.block(a));
            for i in 0..3 {
                g[3 * a + i] = -lp[i].exp();
            }
            g[3 * a + action_to_index(act)] += 1.0;
        }
        g
    }

    /// Gradient of the summed entropy w.r.t. the logits.
    pub fn dentropy_dlogits(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.logits.len()];
        for a in 0..self.n_assets {
            let lp = log_softmax3(self.block(a));
            let h: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
            for i in 0..3 {
                g[3 * a + i] = -lp[i].exp() * (lp[i] + h);
            }
        }
        g
    }

    /// KL(old || self) summed over assets, and its gradient w.r.t. the
    /// current logits (`p_new - p_old`).
    pub fn kl_from(&self, old_probs: &[f64]) -> (f64, Vec<f64>) {
        let mut kl = 0.0;
        let mut g = vec![0.0; self.logits.len()];
        for a in 0..self.n_assets {
            let lp_new = log_softmax3(self.block(a));
            for i in 0..3 {
                let po = old_probs[3 * a + i];
                if po > 0.0 {
                    kl += po * (po.ln() - lp_new[i]);
                }
                g[3 * a + i] = lp_new[i].exp() - po;
            }
        }
        (kl, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

/// First/second-moment state aligned with the flattened parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    /// RMSProp denominator epsilon (Adam uses 1e-8).
    pub rmsprop_eps: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_DECAY: f64 = 0.99;

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize, rmsprop_eps: f64) -> Self {
        Self {
            kind,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            rmsprop_eps,
        }
    }

    /// Applies one update with optional global gradient-norm clipping.
    /// Non-finite gradients abort with the offending layer index.
    pub fn step(
        &mut self,
        params: &mut Mlp,
        grad: &Mlp,
        lr: f64,
        max_grad_clip: Option<f64>,
    ) -> Result<()> {
        if let Some(layer) = grad.first_non_finite_layer() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {layer}"
            )));
        }
        let mut g = grad.flatten();
        if let Some(clip) = max_grad_clip {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > clip {
                let scale = clip / norm;
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
        let mut theta = params.flatten();
        match self.kind {
            OptimizerKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..theta.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::RmsProp => {
                for i in 0..theta.len() {
                    self.v[i] = RMSPROP_DECAY * self.v[i] + (1.0 - RMSPROP_DECAY) * g[i] * g[i];
                    let denom = self.v[i].sqrt() + self.rmsprop_eps;
                    if denom > 0.0 {
                        theta[i] -= lr * g[i] / denom;
                    }
                }
            }
        }
        params.set_from_flat(&theta)
    }
}
