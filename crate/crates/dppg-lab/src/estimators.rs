//! Policy-gradient estimators as pure functions of an actor head, a critic,
//! and a batch.
//!
//! Every estimator returns an ascent direction in the actor's weight space
//! ([`GradEstimate`]); training code negates it before handing it to a
//! minimizing optimizer. Critics enter through [`DiffCritic`], which couples
//! a scalar value with its gradient with respect to the critic's action (or
//! parameter) input — the only interface the chain rules below need.
//!
//! The estimators:
//! - [`grad_lr`]: score function with a state-value baseline,
//!   `∇ log π(A|S) · (Q(S,A) − V(S))`, categorical heads;
//! - [`grad_dpg`]: deterministic-policy chain `∇_θ π(S)ᵀ ∇_A Q(S,A)`;
//! - [`grad_rp`]: reparameterized chain through `A = clip(μ + σ ε)` with the
//!   stored noise, zero wherever the clip is active;
//! - [`grad_st`]: straight-through — forward at the one-hot action, gradient
//!   through the probability vector;
//! - [`grad_dppg`]: the deterministic chain applied in parameter space,
//!   `∇_θ π̃(S)ᵀ ∇_u Q̃(S,u)`;
//! - [`grad_epg_exact`]: full enumeration of the action expectation for
//!   small discrete spaces (a zero-variance oracle).
//!
//! [`variance_study`] compares single-sample LR/RP draws against the
//! deterministic parameter-space gradient under exact critics, reporting
//! per-coordinate means, variances, and equality-of-means z-scores.

use crate::envs::{Action, Env};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};
use crate::param_mdp::{enumerate_discrete, OracleConfig, ParamMdp};
use crate::policy::{DimSpec, DistParams, PolicyHead};
use rand::Rng;

/// A differentiable action-value approximator: returns `Q(state, input)`
/// together with `∇_input Q`. The input is an action vector, a one-hot (or
/// relaxed) action encoding, or a distribution-parameter vector, depending
/// on which estimator is asking.
pub trait DiffCritic {
    fn value_and_grad(&self, state: &[f64], input: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(state, input)?.0)
    }
}

/// An Mlp critic over the concatenated `(state, input)` vector; the input
/// gradient is the tail of the network's input-space gradient.
impl DiffCritic for Mlp {
    fn value_and_grad(&self, state: &[f64], input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut x = Vec::with_capacity(state.len() + input.len());
        x.extend_from_slice(state);
        x.extend_from_slice(input);
        let (out, tape) = self.forward(&x)?;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "critic network must emit one value, emits {}",
                out.len()
            )));
        }
        let (_, input_grad) = self.backward(&tape, &[1.0])?;
        Ok((out[0], input_grad[state.len()..].to_vec()))
    }

    fn value(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(state.len() + input.len());
        x.extend_from_slice(state);
        x.extend_from_slice(input);
        let out = self.output(&x)?;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "critic network must emit one value, emits {}",
                out.len()
            )));
        }
        Ok(out[0])
    }
}

/// A closed-form critic given as a closure returning value and input grad.
pub struct FnCritic<F: Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>>(pub F);

impl<F: Fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>)>> DiffCritic for FnCritic<F> {
    fn value_and_grad(&self, state: &[f64], input: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.0)(state, input)
    }
}

/// A state-value function used as a baseline.
pub trait StateValue {
    fn value(&self, state: &[f64]) -> Result<f64>;
}

impl StateValue for Mlp {
    fn value(&self, state: &[f64]) -> Result<f64> {
        let out = self.output(state)?;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "baseline network must emit one value, emits {}",
                out.len()
            )));
        }
        Ok(out[0])
    }
}

/// A closed-form baseline given as a closure.
pub struct FnValue<F: Fn(&[f64]) -> Result<f64>>(pub F);

impl<F: Fn(&[f64]) -> Result<f64>> StateValue for FnValue<F> {
    fn value(&self, state: &[f64]) -> Result<f64> {
        (self.0)(state)
    }
}

/// An ascent direction in actor-weight space, with its provenance.
#[derive(Debug)]
pub struct GradEstimate {
    pub estimator: &'static str,
    pub batch: usize,
    /// Mean of the estimator's surrogate scalar over the batch (the quantity
    /// whose θ-gradient this is); training code logs its negation as loss.
    pub mean_value: f64,
    pub grads: MlpGrads,
}

impl GradEstimate {
    fn finish(
        estimator: &'static str,
        batch: usize,
        mean_value: f64,
        mut grads: MlpGrads,
    ) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Contract("empty estimator batch".into()));
        }
        grads.scale(1.0 / batch as f64);
        let mean_value = mean_value / batch as f64;
        if !grads.is_finite() || !mean_value.is_finite() {
            return Err(Error::Diverged(format!("non-finite {estimator} estimate")));
        }
        Ok(GradEstimate { estimator, batch, mean_value, grads })
    }
}

/// Score-function estimator with a baseline:
/// mean over the batch of `∇_θ log π(A|S) · (Q(S,A) − V(S))`.
/// The critic consumes one-hot action encodings; no gradient flows into it.
pub fn grad_lr(
    actor: &PolicyHead,
    critic: &dyn DiffCritic,
    baseline: &dyn StateValue,
    batch: &[(Vec<f64>, Action)],
) -> Result<GradEstimate> {
    let mut acc = MlpGrads::zeros_like(&actor.net);
    let mut value = 0.0;
    for (state, action) in batch {
        let eval = actor.forward(state)?;
        let encoded = actor.spec.dirac_params_for_action(action)?;
        let q = critic.value(state, &encoded.0)?;
        let v = baseline.value(state)?;
        let scale = q - v;
        let lp = actor.spec.log_prob(&eval.params, action)?;
        if !lp.is_finite() {
            return Err(Error::Diverged(format!("non-finite log probability {lp}")));
        }
        value += scale * lp;
        acc.add_scaled(&actor.log_prob_backward(&eval, action, scale)?, 1.0);
    }
    GradEstimate::finish("lr", batch.len(), value, acc)
}

/// Deterministic policy gradient: mean of `∇_θ π(S)ᵀ ∇_A Q(S, A)` at
/// `A = π(S)`, for Dirac heads.
pub fn grad_dpg(
    actor: &PolicyHead,
    critic: &dyn DiffCritic,
    states: &[Vec<f64>],
) -> Result<GradEstimate> {
    if !actor.spec.is_dirac() {
        return Err(Error::Contract("deterministic gradient requires a dirac head".into()));
    }
    let mut acc = MlpGrads::zeros_like(&actor.net);
    let mut value = 0.0;
    for state in states {
        let eval = actor.forward(state)?;
        let Action::Continuous(action) = actor.spec.deterministic_action(&eval.params)? else {
            unreachable!("dirac heads emit continuous actions");
        };
        let (q, dq_da) = critic.value_and_grad(state, &action)?;
        value += q;
        let d_params: Vec<f64> = actor
            .spec
            .dims()
            .iter()
            .zip(&dq_da)
            .map(|(d, &g)| {
                let DimSpec::Dirac { a_min, a_max } = d else { unreachable!() };
                g * (a_max - a_min) / 2.0
            })
            .collect();
        acc.add_scaled(&actor.backward_params(&eval, &d_params)?, 1.0);
    }
    GradEstimate::finish("dpg", states.len(), value, acc)
}

/// Reparameterization estimator: mean of `∇_θ g_θ(ε; S)ᵀ ∇_A Q(S, A)` at
/// `A = g_θ(ε; S)`, with the per-dimension standard normal draws stored in
/// the batch. Clipped samples contribute nothing.
pub fn grad_rp(
    actor: &PolicyHead,
    critic: &dyn DiffCritic,
    batch: &[(Vec<f64>, Vec<f64>)],
) -> Result<GradEstimate> {
    let mut acc = MlpGrads::zeros_like(&actor.net);
    let mut value = 0.0;
    for (state, eps) in batch {
        let eval = actor.forward(state)?;
        let rs = actor.spec.reparam_action(&eval.params, eps)?;
        let (q, dq_da) = critic.value_and_grad(state, &rs.action)?;
        value += q;
        let mut d_params = Vec::with_capacity(actor.spec.param_dim());
        for (j, &g) in dq_da.iter().enumerate() {
            d_params.push(g * rs.d_mu[j]);
            d_params.push(g * rs.d_sigma[j]);
        }
        acc.add_scaled(&actor.backward_params(&eval, &d_params)?, 1.0);
    }
    GradEstimate::finish("rp", batch.len(), value, acc)
}

/// Straight-through estimator: forward at the exact one-hot encoding of the
/// sampled action (the relaxation `onehot(A) + π − stopgrad(π)` is the
/// one-hot in value), gradient routed through the probability vector:
/// `∇_θ π(·|S)ᵀ ∇_x Q(S, x)`.
pub fn grad_st(
    actor: &PolicyHead,
    critic: &dyn DiffCritic,
    batch: &[(Vec<f64>, Action)],
) -> Result<GradEstimate> {
    if !actor.spec.is_categorical() {
        return Err(Error::Contract("straight-through requires a categorical head".into()));
    }
    let mut acc = MlpGrads::zeros_like(&actor.net);
    let mut value = 0.0;
    for (state, action) in batch {
        let eval = actor.forward(state)?;
        let onehot = actor.spec.dirac_params_for_action(action)?;
        let (q, dq_dx) = critic.value_and_grad(state, &onehot.0)?;
        value += q;
        acc.add_scaled(&actor.backward_params(&eval, &dq_dx)?, 1.0);
    }
    GradEstimate::finish("st", batch.len(), value, acc)
}

/// Parameter-space deterministic gradient: mean of
/// `∇_θ π̃(S)ᵀ ∇_u Q̃(S, u)` at `u = π̃(S)`, for any head kind.
pub fn grad_dppg(
    actor: &PolicyHead,
    critic: &dyn DiffCritic,
    states: &[Vec<f64>],
) -> Result<GradEstimate> {
    let mut acc = MlpGrads::zeros_like(&actor.net);
    let mut value = 0.0;
    for state in states {
        let eval = actor.forward(state)?;
        let (q, dq_du) = critic.value_and_grad(state, &eval.params.0)?;
        value += q;
        acc.add_scaled(&actor.backward_params(&eval, &dq_du)?, 1.0);
    }
    GradEstimate::finish("dppg", states.len(), value, acc)
}

/// Joint actions beyond this are refused by [`grad_epg_exact`].
pub const EPG_ENUMERATION_CAP: usize = 10_000;

/// Value and parameter-gradient of the multilinear action expectation
/// `Σ_a Π_d u_d(a_d) · q(a)` over a categorical head's joint actions:
/// the coordinate gradient is the leave-one-out probability product.
fn enumerated_value_and_grad(
    actor_spec: &crate::policy::PolicySpec,
    params: &DistParams,
    q_of: &mut dyn FnMut(&Action) -> Result<f64>,
    cap: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let mut grad = vec![0.0; actor_spec.param_dim()];
    let offsets: Vec<usize> = actor_spec
        .dims()
        .iter()
        .scan(0, |off, d| {
            let cur = *off;
            *off += match d {
                DimSpec::Categorical { arms } => *arms,
                _ => unreachable!(),
            };
            Some(cur)
        })
        .collect();
    for (action, p) in enumerate_discrete(actor_spec, params, cap)? {
        let q = q_of(&action)?;
        value += p * q;
        let Action::Discrete(arms) = &action else { unreachable!() };
        let probs: Vec<f64> = arms
            .iter()
            .zip(&offsets)
            .map(|(&arm, &off)| params.0[off + arm])
            .collect();
        // prefix[d] * suffix[d] = product of the other dimensions' factors.
        let n = probs.len();
        let mut prefix = vec![1.0; n + 1];
        for d in 0..n {
            prefix[d + 1] = prefix[d] * probs[d];
        }
        let mut suffix = vec![1.0; n + 1];
        for d in (0..n).rev() {
            suffix[d] = suffix[d + 1] * probs[d];
        }
        for (d, (&arm, &off)) in arms.iter().zip(&offsets).enumerate() {
            grad[off + arm] += q * prefix[d] * suffix[d + 1];
        }
    }
    Ok((value, grad))
}

/// Exact expected policy gradient at one state: enumerates every joint
/// action of a categorical head and differentiates `Σ_a π_θ(a|S) q(S, a)`
/// exactly. Zero-variance by construction; refuses action spaces larger
/// than [`EPG_ENUMERATION_CAP`].
pub fn grad_epg_exact(
    actor: &PolicyHead,
    q_of: &mut dyn FnMut(&Action) -> Result<f64>,
    state: &[f64],
) -> Result<GradEstimate> {
    if !actor.spec.is_categorical() {
        return Err(Error::Contract("exact enumeration requires a categorical head".into()));
    }
    let eval = actor.forward(state)?;
    let (value, d_params) =
        enumerated_value_and_grad(&actor.spec, &eval.params, q_of, EPG_ENUMERATION_CAP)?;
    let grads = actor.backward_params(&eval, &d_params)?;
    GradEstimate::finish("epg", 1, value, grads)
}

/// The exact transformed critic `Q̃(s, u) = r̃(s, u)` of a single-step
/// environment, made differentiable: enumeration for categorical heads,
/// central differences on the parameter box (step 1e-5, clamped one-sided
/// at the box edges) for continuous ones.
pub struct OracleParamCritic<'a> {
    pub pm: &'a ParamMdp,
    pub oracle: OracleConfig,
}

impl DiffCritic for OracleParamCritic<'_> {
    fn value_and_grad(&self, state: &[f64], input: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.pm.env.horizon() != 1 {
            return Err(Error::Contract(
                "the differentiable transformed-reward oracle covers single-step environments".into(),
            ));
        }
        let params = DistParams(input.to_vec());
        if self.pm.spec.is_categorical() {
            let env = &self.pm.env;
            return enumerated_value_and_grad(
                &self.pm.spec,
                &params,
                &mut |a| Ok(env.transition(state, a)?.1),
                EPG_ENUMERATION_CAP,
            );
        }
        let value = self.pm.exact_param_reward(state, &params, &self.oracle)?;
        let h = 1e-5;
        let mut grad = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let up = (input[j] + h).min(1.0);
            let dn = (input[j] - h).max(-1.0);
            let mut probe = input.to_vec();
            probe[j] = up;
            let f_up = self.pm.exact_param_reward(state, &DistParams(probe.clone()), &self.oracle)?;
            probe[j] = dn;
            let f_dn = self.pm.exact_param_reward(state, &DistParams(probe), &self.oracle)?;
            grad.push((f_up - f_dn) / (up - dn));
        }
        Ok((value, grad))
    }

    fn value(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        self.pm.exact_param_reward(state, &DistParams(input.to_vec()), &self.oracle)
    }
}

/// The exact action-value critic of a bandit. Values are the deterministic
/// rewards; gradients come from the closed-form reward slope (bimodal) or
/// the multilinear extension over one-hot encodings (K-armed).
pub struct OracleActionCritic<'a> {
    pub pm: &'a ParamMdp,
}

impl DiffCritic for OracleActionCritic<'_> {
    fn value_and_grad(&self, state: &[f64], input: &[f64]) -> Result<(f64, Vec<f64>)> {
        match &self.pm.env {
            Env::KArmed(_) | Env::Discretized(_) => {
                let env = &self.pm.env;
                enumerated_value_and_grad(
                    &self.pm.spec,
                    &DistParams(input.to_vec()),
                    &mut |a| Ok(env.transition(state, a)?.1),
                    EPG_ENUMERATION_CAP,
                )
            }
            Env::Bimodal(b) => Ok((b.reward(input[0]), vec![b.reward_slope(input[0])])),
            Env::PointMass(_) => Err(Error::Contract(
                "the analytic action critic covers the bandit environments".into(),
            )),
        }
    }
}

/// Per-estimator sample statistics over the resamples of a variance study.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EstimatorStats {
    pub id: String,
    /// Per-coordinate sample mean of the flattened actor-space gradient.
    pub mean: Vec<f64>,
    /// Per-coordinate sample variance (unbiased).
    pub variance: Vec<f64>,
    /// Total variance: the trace of the (diagonal of the) covariance.
    pub trace_variance: f64,
    /// Equality-of-means z-scores against the deterministic reference.
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
}

/// Outcome of comparing single-sample stochastic estimators against the
/// deterministic parameter-space gradient under exact critics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct VarianceReport {
    pub env: String,
    pub n_resamples: usize,
    /// The deterministic parameter-space gradient (two evaluations).
    pub reference: EstimatorStats,
    /// Single-sample LR (categorical) or RP (continuous) statistics.
    pub stochastic: Vec<EstimatorStats>,
    /// Whether the two reference evaluations were bit-identical.
    pub reference_bit_deterministic: bool,
    /// Zero reference variance and strictly positive stochastic variance.
    pub hypothesis_met: bool,
    pub note: String,
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for j in 0..x.len() {
            let d = x[j] - self.mean[j];
            self.mean[j] += d * inv;
            self.m2[j] += d * (x[j] - self.mean[j]);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }
}

fn stats_against_reference(id: &str, w: &Welford, reference: &[f64]) -> EstimatorStats {
    let variance = w.variance();
    let n = w.n as f64;
    let z_scores: Vec<f64> = w
        .mean
        .iter()
        .zip(&variance)
        .zip(reference)
        .map(|((&m, &v), &r)| {
            let se = (v / n).sqrt();
            if se > 0.0 {
                (m - r) / se
            } else if m == r {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max_abs_z = z_scores.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let trace_variance = variance.iter().sum();
    EstimatorStats { id: id.to_string(), mean: w.mean.clone(), variance, trace_variance, z_scores, max_abs_z }
}

/// Draws `n` single-sample gradient estimates of the stochastic estimator
/// matching the actor's head kind (LR for categorical, RP for Gaussian) at
/// one bandit state, under exact critics, and compares them against the
/// deterministic parameter-space gradient evaluated at the same state.
pub fn variance_study(
    pm: &ParamMdp,
    actor: &PolicyHead,
    n: usize,
    oracle: &OracleConfig,
    rng: &mut impl Rng,
) -> Result<VarianceReport> {
    if n < 1000 {
        return Err(Error::Config(format!("variance study needs >= 1000 resamples, got {n}")));
    }
    if pm.env.horizon() != 1 {
        return Err(Error::Contract("the variance study covers the bandit environments".into()));
    }
    let state = pm.env.reset(rng);

    let param_critic = OracleParamCritic { pm, oracle: *oracle };
    let first = grad_dppg(actor, &param_critic, std::slice::from_ref(&state))?;
    let second = grad_dppg(actor, &param_critic, std::slice::from_ref(&state))?;
    let reference = first.grads.flatten();
    let reference_bit_deterministic = reference
        .iter()
        .zip(second.grads.flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let action_critic = OracleActionCritic { pm };
    let exact_v = pm.exact_param_reward(&state, &actor.params(&state)?, oracle)?;
    let baseline = FnValue(move |_: &[f64]| Ok(exact_v));

    let mut w = Welford::new(reference.len());
    let stochastic_id = if pm.spec.is_categorical() { "lr" } else { "rp" };
    for _ in 0..n {
        let params = actor.params(&state)?;
        let (action, eps) = pm.spec.sample_action(&params, rng)?;
        let est = if pm.spec.is_categorical() {
            grad_lr(actor, &action_critic, &baseline, &[(state.clone(), action)])?
        } else {
            grad_rp(actor, &action_critic, &[(state.clone(), eps)])?
        };
        w.push(&est.grads.flatten());
    }

    let ref_stats = EstimatorStats {
        id: "dppg".to_string(),
        mean: reference.clone(),
        variance: vec![0.0; reference.len()],
        trace_variance: 0.0,
        z_scores: Vec::new(),
        max_abs_z: 0.0,
    };
    let stoch_stats = stats_against_reference(stochastic_id, &w, &reference);
    let strict = stoch_stats.trace_variance > 0.0;
    let hypothesis_met = reference_bit_deterministic && strict;
    let note = if !reference_bit_deterministic {
        "deterministic reference was not bit-stable".to_string()
    } else if !strict {
        "hypothesis not met: stochastic estimator has zero variance (deterministic sampling)"
            .to_string()
    } else {
        String::new()
    };
    Ok(VarianceReport {
        env: pm.env.id(),
        n_resamples: n,
        reference: ref_stats,
        stochastic: vec![stoch_stats],
        reference_bit_deterministic,
        hypothesis_met,
        note,
    })
}
