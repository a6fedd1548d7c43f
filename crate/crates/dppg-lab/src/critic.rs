//! Action-value learning for both kinds of critic input: raw actions (or
//! one-hot encodings) and distribution-parameter vectors.
//!
//! [`TwinCritic`] holds two independently initialized networks over
//! `concat(state, input)` plus Polyak-averaged target copies; bootstrap
//! targets always take the elementwise minimum of the two target networks.
//! Three update entry points share one regression core:
//!
//! - [`TwinCritic::td_update_param`]: regress at the stored parameter
//!   vector `U`, bootstrap through the actor's next-state parameters;
//! - [`TwinCritic::icl_update`]: regress at the interpolated input
//!   `û = ω·U + (1−ω)·u_A`, where `u_A` is the parameter point
//!   concentrated at the realized action and `ω ~ U[0,1]` per transition
//!   (interpolated critic learning) — this spreads training inputs along
//!   the segment between the behavior parameters and the action vertex, so
//!   the critic sees parameter space beyond the on-policy point;
//! - [`TwinCritic::td_update_action`]: regress at the encoded realized
//!   action, bootstrap at a caller-provided next action.
//!
//! The loss per network is the batch-mean squared TD error, halved, so each
//! sample contributes exactly (prediction − target) × ∇q to the gradient.
//! The reported loss is the sum over the two networks.
//!
//! The module also carries the bandit policy-evaluation protocol
//! ([`run_pe_bandit`]): train a critic for a fixed behavior-parameter
//! vector and report its values at the one-hot vertices and at the behavior
//! point against the exact transformed reward.

use crate::agents::{rng_stream, stream, Transition};
use crate::error::{Error, Result};
use crate::nn::{polyak_blend, AdamConfig, AdamState, Mlp, MlpGrads};
use crate::param_mdp::{OracleConfig, ParamMdp};
use crate::policy::{DimSpec, DistParams, PolicyHead, PolicySpec};
use rand::Rng;

/// An interpolated-training sample: behavior parameters `u`, the parameter
/// point `u_a` of the realized action, and the mixing weight.
#[derive(Debug, Clone)]
pub struct IclSample {
    pub u: DistParams,
    pub u_a: DistParams,
    pub omega: f64,
}

impl IclSample {
    pub fn new(u: DistParams, u_a: DistParams, omega: f64) -> Result<Self> {
        if u.0.len() != u_a.0.len() {
            return Err(Error::Contract(format!(
                "interpolation endpoints have {} and {} components",
                u.0.len(),
                u_a.0.len()
            )));
        }
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::Contract(format!("interpolation weight {omega} outside [0, 1]")));
        }
        Ok(IclSample { u, u_a, omega })
    }

    /// `ω·u + (1−ω)·u_a` componentwise. Simplex and box constraints are
    /// closed under this combination, so the result is again a valid
    /// parameter vector (up to rounding).
    pub fn interpolated(&self) -> DistParams {
        let w = self.omega;
        let cw = 1.0 - self.omega;
        DistParams(
            self.u.0.iter().zip(&self.u_a.0).map(|(&a, &b)| w * a + cw * b).collect(),
        )
    }
}

/// Two action-value networks with Polyak-averaged targets.
#[derive(Debug, Clone)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub t1: Mlp,
    pub t2: Mlp,
    pub tau: f64,
    state_dim: usize,
    input_dim: usize,
    opt1: AdamState,
    opt2: AdamState,
}

impl TwinCritic {
    /// Networks take `concat(state, input)` where `input` is an action
    /// encoding or a parameter vector of length `input_dim`. Targets start
    /// as exact copies of the live networks.
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        hidden: &[usize],
        adam: AdamConfig,
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("target update rate {tau} outside (0, 1]")));
        }
        if input_dim == 0 {
            return Err(Error::Config("critic input dimension must be positive".into()));
        }
        let mut sizes = vec![state_dim + input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, rng)?;
        let q2 = Mlp::new(&sizes, rng)?;
        let (t1, t2) = (q1.clone(), q2.clone());
        let (opt1, opt2) = (AdamState::new(&q1, adam), AdamState::new(&q2, adam));
        Ok(TwinCritic { q1, q2, t1, t2, tau, state_dim, input_dim, opt1, opt2 })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn concat(&self, state: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || input.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "critic got state/input dims {}/{}, expects {}/{}",
                state.len(),
                input.len(),
                self.state_dim,
                self.input_dim
            )));
        }
        let mut x = Vec::with_capacity(state.len() + input.len());
        x.extend_from_slice(state);
        x.extend_from_slice(input);
        Ok(x)
    }

    pub fn q1_value(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        Ok(self.q1.output(&self.concat(state, input)?)?[0])
    }

    pub fn q2_value(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        Ok(self.q2.output(&self.concat(state, input)?)?[0])
    }

    /// Minimum of the two target networks — the bootstrap value.
    pub fn min_target(&self, state: &[f64], input: &[f64]) -> Result<f64> {
        let x = self.concat(state, input)?;
        Ok(self.t1.output(&x)?[0].min(self.t2.output(&x)?[0]))
    }

    /// Bootstrap targets `y = R + γ·(1−done)·min_j q̄_j(S', x')` with the
    /// next input produced lazily (only for non-terminal transitions).
    fn targets(
        &self,
        gamma: f64,
        batch: &[Transition],
        next_input: &mut dyn FnMut(&Transition) -> Result<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                let mut y = t.reward;
                if !t.done {
                    y += gamma * self.min_target(&t.next_state, &next_input(t)?)?;
                }
                if !y.is_finite() {
                    return Err(Error::Diverged(format!("non-finite critic target {y}")));
                }
                Ok(y)
            })
            .collect()
    }

    /// One Adam step per network on the halved batch-mean squared error at
    /// the given `(state ++ input, target)` pairs. Returns the summed loss.
    fn regress(&mut self, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::Contract("empty critic batch".into()));
        }
        let l1 = regress_scalar(&mut self.q1, &mut self.opt1, xs, ys)?;
        let l2 = regress_scalar(&mut self.q2, &mut self.opt2, xs, ys)?;
        Ok(l1 + l2)
    }

    /// Standard parameter-space update: regress both networks at the stored
    /// behavior parameters toward the actor-bootstrapped target.
    pub fn td_update_param(
        &mut self,
        actor: &PolicyHead,
        gamma: f64,
        batch: &[Transition],
    ) -> Result<f64> {
        let xs: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| {
                let u = t
                    .params
                    .as_ref()
                    .ok_or_else(|| Error::Contract("transition lacks parameter vector".into()))?;
                self.concat(&t.state, &u.0)
            })
            .collect::<Result<_>>()?;
        let ys = self.targets(gamma, batch, &mut |t| Ok(actor.params(&t.next_state)?.0))?;
        self.regress(&xs, &ys)
    }

    /// Interpolated update with caller-chosen weights, one per transition.
    pub fn icl_update_with(
        &mut self,
        actor: &PolicyHead,
        gamma: f64,
        batch: &[Transition],
        omegas: &[f64],
    ) -> Result<f64> {
        if omegas.len() != batch.len() {
            return Err(Error::Contract(format!(
                "{} interpolation weights for {} transitions",
                omegas.len(),
                batch.len()
            )));
        }
        let xs: Vec<Vec<f64>> = batch
            .iter()
            .zip(omegas)
            .map(|(t, &w)| {
                let u = t
                    .params
                    .as_ref()
                    .ok_or_else(|| Error::Contract("transition lacks parameter vector".into()))?;
                let u_a = actor.spec.dirac_params_for_action(&t.action)?;
                let sample = IclSample::new(u.clone(), u_a, w)?;
                self.concat(&t.state, &sample.interpolated().0)
            })
            .collect::<Result<_>>()?;
        let ys = self.targets(gamma, batch, &mut |t| Ok(actor.params(&t.next_state)?.0))?;
        self.regress(&xs, &ys)
    }

    /// Interpolated update with fresh `ω ~ U[0,1)` per transition. Both
    /// networks train on the same interpolated input per transition.
    pub fn icl_update(
        &mut self,
        actor: &PolicyHead,
        gamma: f64,
        batch: &[Transition],
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let omegas: Vec<f64> = (0..batch.len()).map(|_| rng.random::<f64>()).collect();
        self.icl_update_with(actor, gamma, batch, &omegas)
    }

    /// Action-space update: regress at the encoded realized action,
    /// bootstrap at the provider's next action (sampled from a target or
    /// current actor by the caller).
    pub fn td_update_action(
        &mut self,
        gamma: f64,
        batch: &[Transition],
        encode: &dyn Fn(&crate::envs::Action) -> Result<Vec<f64>>,
        next_encoded: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<f64> {
        let xs: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| self.concat(&t.state, &encode(&t.action)?))
            .collect::<Result<_>>()?;
        let ys = self.targets(gamma, batch, &mut |t| next_encoded(&t.next_state))?;
        self.regress(&xs, &ys)
    }

    /// `q̄ ← τ·q + (1−τ)·q̄` per parameter, both networks.
    pub fn polyak_update(&mut self) -> Result<()> {
        polyak_blend(&mut self.t1, &self.q1, self.tau)?;
        polyak_blend(&mut self.t2, &self.q2, self.tau)
    }
}

/// One Adam step of `net` (scalar output) toward `ys` at inputs `xs` under
/// the halved batch-mean squared error; returns that loss. Shared by the
/// twin critic and by learned state-value baselines.
pub(crate) fn regress_scalar(
    net: &mut Mlp,
    opt: &mut AdamState,
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<f64> {
    let m = xs.len() as f64;
    let mut grads = MlpGrads::zeros_like(net);
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (out, tape) = net.forward(x)?;
        let d = out[0] - y;
        loss += d * d;
        let (g, _) = net.backward(&tape, &[d / m])?;
        grads.add_scaled(&g, 1.0);
    }
    loss /= 2.0 * m;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite critic loss {loss}")));
    }
    opt.step(net, &grads)?;
    Ok(loss)
}

/// The fixed behavior parameters of the bandit policy-evaluation protocol:
/// the uniform distribution for a categorical head, mean 0 with
/// mid-parameter standard deviation for a Gaussian head.
pub fn policy_eval_params(spec: &PolicySpec) -> Result<DistParams> {
    match spec.dims() {
        [DimSpec::Categorical { arms }] => Ok(DistParams(vec![1.0 / *arms as f64; *arms])),
        [DimSpec::Gauss(_)] => Ok(DistParams(vec![0.0, 0.5])),
        _ => Err(Error::Contract(
            "policy evaluation covers single-dimension bandit heads".into(),
        )),
    }
}

/// A head whose output is the given parameter vector at every state, built
/// by zeroing the weights of a single linear layer and setting biases to
/// the logit preimages. Requires strictly positive probabilities and
/// box parameters strictly inside (−1, 1).
pub fn constant_head(spec: &PolicySpec, params: &DistParams) -> Result<PolicyHead> {
    spec.validate(params)?;
    let n = spec.param_dim();
    let mut net = Mlp::new(&[1, n], &mut rng_stream(0, 0))?;
    for i in 0..n {
        *net.param_mut(i) = 0.0;
    }
    let mut off = 0;
    for d in spec.dims() {
        for j in 0..d.param_len() {
            let v = params.0[off + j];
            let logit = match d {
                DimSpec::Categorical { .. } => {
                    if v <= 0.0 {
                        return Err(Error::Config(
                            "zero-probability entry has no finite logit".into(),
                        ));
                    }
                    v.ln()
                }
                DimSpec::Gauss(_) | DimSpec::Dirac { .. } => {
                    if v.abs() >= 1.0 {
                        return Err(Error::Config(
                            "box parameter at the boundary has no finite logit".into(),
                        ));
                    }
                    v.atanh()
                }
            };
            *net.param_mut(n + off + j) = logit;
        }
        off += d.param_len();
    }
    PolicyHead::new(net, spec.clone())
}

/// Policy-evaluation run settings; `standard` gives 2000 steps at batch 32
/// with the bandit network shape and optimizer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub icl: bool,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub tau: f64,
}

impl PeConfig {
    pub fn standard(icl: bool, seed: u64) -> Self {
        PeConfig { steps: 2000, batch_size: 32, icl, seed, hidden: vec![16, 16], lr: 0.01, tau: 0.005 }
    }
}

/// What the policy-evaluation protocol measured.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeOutcome {
    pub env: String,
    pub icl: bool,
    pub steps: usize,
    /// First-network values at the one-hot vertices (categorical heads).
    pub vertex_values: Option<Vec<f64>>,
    /// Strictly increasing vertex values, matching the arm-reward order.
    pub vertices_ordered: Option<bool>,
    /// First-network value at the behavior parameters.
    pub behavior_value: f64,
    /// Exact transformed reward at the behavior parameters.
    pub exact_behavior_value: f64,
    pub behavior_error: f64,
}

/// Trains a twin critic under the fixed behavior parameters of
/// [`policy_eval_params`] on a single-step environment: each step samples
/// one fresh transition, replays a batch uniformly, applies the configured
/// update, and Polyak-averages the targets.
pub fn run_pe_bandit(pm: &ParamMdp, cfg: &PeConfig) -> Result<(TwinCritic, PeOutcome)> {
    if pm.env.horizon() != 1 {
        return Err(Error::Contract(
            "policy evaluation covers single-step environments".into(),
        ));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("policy evaluation needs positive steps and batch".into()));
    }
    let u_pe = policy_eval_params(&pm.spec)?;
    let head = constant_head(&pm.spec, &u_pe)?;
    let mut critic_rng = rng_stream(cfg.seed, stream::CRITIC_INIT);
    let mut behavior_rng = rng_stream(cfg.seed, stream::BEHAVIOR);
    let mut replay_rng = rng_stream(cfg.seed, stream::REPLAY);
    let mut interp_rng = rng_stream(cfg.seed, stream::INTERP);
    let mut critic = TwinCritic::new(
        pm.env.state_dim(),
        pm.spec.param_dim(),
        &cfg.hidden,
        AdamConfig::with_lr(cfg.lr),
        cfg.tau,
        &mut critic_rng,
    )?;
    let gamma = pm.env.gamma();
    let mut buffer: Vec<Transition> = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let state = pm.env.reset(&mut behavior_rng);
        let (action, _) = pm.spec.sample_action(&u_pe, &mut behavior_rng)?;
        let (next_state, reward) = pm.env.transition(&state, &action)?;
        buffer.push(Transition {
            state,
            params: Some(u_pe.clone()),
            action,
            next_state,
            reward,
            done: true,
        });
        let batch: Vec<Transition> = (0..cfg.batch_size)
            .map(|_| buffer[replay_rng.random_range(0..buffer.len())].clone())
            .collect();
        if cfg.icl {
            critic.icl_update(&head, gamma, &batch, &mut interp_rng)?;
        } else {
            critic.td_update_param(&head, gamma, &batch)?;
        }
        critic.polyak_update()?;
    }

    let state = vec![1.0];
    let behavior_value = critic.q1_value(&state, &u_pe.0)?;
    let exact_behavior_value = pm.exact_param_reward(&state, &u_pe, &OracleConfig::default())?;
    let (vertex_values, vertices_ordered) = match pm.spec.dims() {
        [DimSpec::Categorical { arms }] => {
            let vals: Vec<f64> = (0..*arms)
                .map(|a| {
                    let onehot: Vec<f64> =
                        (0..*arms).map(|j| if j == a { 1.0 } else { 0.0 }).collect();
                    critic.q1_value(&state, &onehot)
                })
                .collect::<Result<_>>()?;
            let ordered = vals.windows(2).all(|w| w[0] < w[1]);
            (Some(vals), Some(ordered))
        }
        _ => (None, None),
    };
    let outcome = PeOutcome {
        env: pm.env.id(),
        icl: cfg.icl,
        steps: cfg.steps,
        vertex_values,
        vertices_ordered,
        behavior_value,
        exact_behavior_value,
        behavior_error: (behavior_value - exact_behavior_value).abs(),
    };
    Ok((critic, outcome))
}
