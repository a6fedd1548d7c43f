//! Policy heads that turn network logits into distribution parameters.
//!
//! Three kinds of head exist, chosen per action dimension but uniform within
//! one policy:
//! - `Categorical`: softmax over `arms` logits, parameters are the
//!   probabilities themselves;
//! - `Gauss`: two squashed logits per dimension, `u_mu` placing the mean on
//!   the action interval and `u_sigma` placing the log standard deviation on
//!   a configured range; actions sample as `clip(mu + sigma * eps)`;
//! - `Dirac`: one squashed logit mapped affinely onto the action interval,
//!   the action equals the parameter deterministically.
//!
//! Parameter vectors are flat `f64` vectors laid out dimension by dimension
//! (probabilities, `[u_mu, u_sigma]`, or `[u]` per dimension). Everything the
//! gradient estimators need flows through two backward entry points:
//! [`PolicyHead::backward_params`] (chain a gradient in parameter space back
//! to network weights) and [`PolicyHead::log_prob_backward`] (score-function
//! gradient for categorical heads).

use crate::envs::{Action, ActionSpace, Env};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads, Tape};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Squashed logits are clamped here before `tanh`, keeping derivatives
/// non-degenerate in float arithmetic.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Tolerance for validating simplex sums and box bounds of parameters.
pub const PARAM_TOL: f64 = 1e-9;

/// Gaussian head configuration for one action dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussSpec {
    pub a_min: f64,
    pub a_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl GaussSpec {
    fn center(&self) -> f64 {
        (self.a_min + self.a_max) / 2.0
    }

    fn half_width(&self) -> f64 {
        (self.a_max - self.a_min) / 2.0
    }

    fn log_sigma_center(&self) -> f64 {
        (self.sigma_min.ln() + self.sigma_max.ln()) / 2.0
    }

    fn log_sigma_half(&self) -> f64 {
        (self.sigma_max.ln() - self.sigma_min.ln()) / 2.0
    }

    /// `(mu, sigma)` for parameters `(u_mu, u_sigma)` in `[-1, 1]`: the mean
    /// interpolates the action interval linearly, the standard deviation
    /// interpolates `[sigma_min, sigma_max]` in log space.
    pub fn moments(&self, u_mu: f64, u_sigma: f64) -> (f64, f64) {
        let mu = self.center() + u_mu * self.half_width();
        let sigma = (self.log_sigma_center() + u_sigma * self.log_sigma_half()).exp();
        (mu, sigma)
    }

    /// d sigma / d u_sigma at the given parameter.
    pub fn sigma_grad(&self, u_sigma: f64) -> f64 {
        let (_, sigma) = self.moments(0.0, u_sigma);
        sigma * self.log_sigma_half()
    }
}

/// Head kind for one action dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum DimSpec {
    Categorical { arms: usize },
    Gauss(GaussSpec),
    Dirac { a_min: f64, a_max: f64 },
}

impl DimSpec {
    pub fn param_len(&self) -> usize {
        match self {
            DimSpec::Categorical { arms } => *arms,
            DimSpec::Gauss(_) => 2,
            DimSpec::Dirac { .. } => 1,
        }
    }
}

/// Full policy output specification: one [`DimSpec`] per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    dims: Vec<DimSpec>,
}

/// Flat distribution-parameter vector, laid out per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DistParams(pub Vec<f64>);

impl PolicySpec {
    pub fn new(dims: Vec<DimSpec>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("policy needs at least one action dimension".into()));
        }
        let discrete = dims.iter().filter(|d| matches!(d, DimSpec::Categorical { .. })).count();
        if discrete != 0 && discrete != dims.len() {
            return Err(Error::Config(
                "cannot mix categorical and continuous action dimensions".into(),
            ));
        }
        for d in &dims {
            match d {
                DimSpec::Categorical { arms } if *arms < 2 => {
                    return Err(Error::Config(format!("categorical head needs >= 2 arms, got {arms}")));
                }
                DimSpec::Gauss(g) => {
                    if g.a_min >= g.a_max || g.sigma_min <= 0.0 || g.sigma_min >= g.sigma_max {
                        return Err(Error::Config(format!("invalid gauss spec {g:?}")));
                    }
                }
                DimSpec::Dirac { a_min, a_max } if a_min >= a_max => {
                    return Err(Error::Config(format!("invalid dirac bounds [{a_min}, {a_max}]")));
                }
                _ => {}
            }
        }
        Ok(PolicySpec { dims })
    }

    /// Stochastic head matching an environment's action space. Discrete
    /// spaces get categorical heads; continuous ones get Gaussian heads with
    /// the provided standard-deviation range.
    pub fn stochastic_for_env(env: &Env, sigma_range: (f64, f64)) -> Result<Self> {
        let dims = match env.action_space() {
            ActionSpace::Discrete { arms } => arms
                .into_iter()
                .map(|n| DimSpec::Categorical { arms: n })
                .collect(),
            ActionSpace::Continuous { bounds } => bounds
                .into_iter()
                .map(|(lo, hi)| {
                    DimSpec::Gauss(GaussSpec {
                        a_min: lo,
                        a_max: hi,
                        sigma_min: sigma_range.0,
                        sigma_max: sigma_range.1,
                    })
                })
                .collect(),
        };
        PolicySpec::new(dims)
    }

    /// Deterministic (Dirac) head for a continuous action space.
    pub fn dirac_for_env(env: &Env) -> Result<Self> {
        match env.action_space() {
            ActionSpace::Continuous { bounds } => PolicySpec::new(
                bounds
                    .into_iter()
                    .map(|(lo, hi)| DimSpec::Dirac { a_min: lo, a_max: hi })
                    .collect(),
            ),
            ActionSpace::Discrete { .. } => Err(Error::Config(
                "dirac head requires a continuous action space".into(),
            )),
        }
    }

    pub fn dims(&self) -> &[DimSpec] {
        &self.dims
    }

    pub fn action_dims(&self) -> usize {
        self.dims.len()
    }

    /// Length of the flat parameter vector; also the number of logits.
    pub fn param_dim(&self) -> usize {
        self.dims.iter().map(DimSpec::param_len).sum()
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.dims[0], DimSpec::Categorical { .. })
    }

    pub fn is_dirac(&self) -> bool {
        self.dims.iter().all(|d| matches!(d, DimSpec::Dirac { .. }))
    }

    /// Checks simplex and box constraints of a parameter vector.
    pub fn validate(&self, params: &DistParams) -> Result<()> {
        if params.0.len() != self.param_dim() {
            return Err(Error::Contract(format!(
                "parameter vector has {} components, spec requires {}",
                params.0.len(),
                self.param_dim()
            )));
        }
        let mut off = 0;
        for d in &self.dims {
            let block = &params.0[off..off + d.param_len()];
            match d {
                DimSpec::Categorical { .. } => {
                    if block.iter().any(|&p| !(-PARAM_TOL..=1.0 + PARAM_TOL).contains(&p)) {
                        return Err(Error::Contract(format!("probabilities out of range: {block:?}")));
                    }
                    let sum: f64 = block.iter().sum();
                    if (sum - 1.0).abs() > PARAM_TOL {
                        return Err(Error::Contract(format!("probabilities sum to {sum}")));
                    }
                }
                DimSpec::Gauss(_) | DimSpec::Dirac { .. } => {
                    if block.iter().any(|&u| u.abs() > 1.0 + PARAM_TOL) {
                        return Err(Error::Contract(format!("squashed parameter out of [-1, 1]: {block:?}")));
                    }
                }
            }
            off += d.param_len();
        }
        Ok(())
    }

    /// Maps raw logits to parameters: per-block softmax for categorical
    /// dimensions, clamped `tanh` for the squashed ones.
    pub fn logits_to_params(&self, logits: &[f64]) -> Result<DistParams> {
        if logits.len() != self.param_dim() {
            return Err(Error::Contract(format!(
                "got {} logits, spec requires {}",
                logits.len(),
                self.param_dim()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged("non-finite logit".into()));
        }
        let mut out = Vec::with_capacity(logits.len());
        let mut off = 0;
        for d in &self.dims {
            let block = &logits[off..off + d.param_len()];
            match d {
                DimSpec::Categorical { .. } => {
                    let max = block.iter().cloned().fold(f64::MIN, f64::max);
                    let exps: Vec<f64> = block.iter().map(|l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    out.extend(exps.iter().map(|e| e / sum));
                }
                DimSpec::Gauss(_) | DimSpec::Dirac { .. } => {
                    out.extend(block.iter().map(|l| l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP).tanh()));
                }
            }
            off += d.param_len();
        }
        Ok(DistParams(out))
    }

    /// Samples an action. Returns the action together with the standard
    /// normal draws used (one per Gaussian dimension, empty otherwise) so
    /// reparameterized estimators can replay them.
    pub fn sample_action(
        &self,
        params: &DistParams,
        rng: &mut impl Rng,
    ) -> Result<(Action, Vec<f64>)> {
        self.validate(params)?;
        let mut off = 0;
        let mut eps = Vec::new();
        if self.is_categorical() {
            let mut arms = Vec::with_capacity(self.dims.len());
            for d in &self.dims {
                let block = &params.0[off..off + d.param_len()];
                let x: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut chosen = block.len() - 1;
                for (i, p) in block.iter().enumerate() {
                    acc += p;
                    if x < acc {
                        chosen = i;
                        break;
                    }
                }
                arms.push(chosen);
                off += d.param_len();
            }
            return Ok((Action::Discrete(arms), eps));
        }
        let mut vals = Vec::with_capacity(self.dims.len());
        for d in &self.dims {
            match d {
                DimSpec::Gauss(g) => {
                    let (mu, sigma) = g.moments(params.0[off], params.0[off + 1]);
                    let e: f64 = StandardNormal.sample(rng);
                    vals.push((mu + sigma * e).clamp(g.a_min, g.a_max));
                    eps.push(e);
                    off += 2;
                }
                DimSpec::Dirac { a_min, a_max } => {
                    let c = (a_min + a_max) / 2.0;
                    let h = (a_max - a_min) / 2.0;
                    vals.push(c + params.0[off] * h);
                    off += 1;
                }
                DimSpec::Categorical { .. } => unreachable!("uniform kind enforced"),
            }
        }
        Ok((Action::Continuous(vals), eps))
    }

    /// Deterministic action of a Dirac head.
    pub fn deterministic_action(&self, params: &DistParams) -> Result<Action> {
        if !self.is_dirac() {
            return Err(Error::Contract("deterministic action requires a dirac head".into()));
        }
        self.validate(params)?;
        let vals = self
            .dims
            .iter()
            .zip(&params.0)
            .map(|(d, &u)| {
                let DimSpec::Dirac { a_min, a_max } = d else { unreachable!() };
                (a_min + a_max) / 2.0 + u * (a_max - a_min) / 2.0
            })
            .collect();
        Ok(Action::Continuous(vals))
    }

    /// Replays a Gaussian sample with fixed noise. Returns the action values
    /// and the partial derivatives of each value with respect to its
    /// dimension's `(u_mu, u_sigma)`; the derivatives are zero wherever the
    /// clip is active.
    pub fn reparam_action(&self, params: &DistParams, eps: &[f64]) -> Result<ReparamSample> {
        self.validate(params)?;
        if self.is_categorical() || self.is_dirac() {
            return Err(Error::Contract("reparameterization requires a gaussian head".into()));
        }
        if eps.len() != self.dims.len() {
            return Err(Error::Contract(format!(
                "got {} noise values for {} gaussian dimensions",
                eps.len(),
                self.dims.len()
            )));
        }
        let mut sample = ReparamSample {
            action: Vec::with_capacity(self.dims.len()),
            d_mu: Vec::with_capacity(self.dims.len()),
            d_sigma: Vec::with_capacity(self.dims.len()),
        };
        let mut off = 0;
        for (d, &e) in self.dims.iter().zip(eps) {
            let DimSpec::Gauss(g) = d else { unreachable!() };
            let (mu, sigma) = g.moments(params.0[off], params.0[off + 1]);
            let raw = mu + sigma * e;
            let interior = raw > g.a_min && raw < g.a_max;
            sample.action.push(raw.clamp(g.a_min, g.a_max));
            if interior {
                sample.d_mu.push(g.half_width());
                sample.d_sigma.push(e * g.sigma_grad(params.0[off + 1]));
            } else {
                sample.d_mu.push(0.0);
                sample.d_sigma.push(0.0);
            }
            off += 2;
        }
        Ok(sample)
    }

    /// Log probability of a discrete action under categorical parameters.
    pub fn log_prob(&self, params: &DistParams, action: &Action) -> Result<f64> {
        self.validate(params)?;
        if !self.is_categorical() {
            return Err(Error::Contract(
                "log probability is only defined for categorical heads here".into(),
            ));
        }
        let Action::Discrete(arms) = action else {
            return Err(Error::Contract("categorical head expects a discrete action".into()));
        };
        if arms.len() != self.dims.len() {
            return Err(Error::Contract(format!(
                "action has {} dimensions, spec has {}",
                arms.len(),
                self.dims.len()
            )));
        }
        let mut lp = 0.0;
        let mut off = 0;
        for (d, &arm) in self.dims.iter().zip(arms) {
            let block = &params.0[off..off + d.param_len()];
            let p = *block.get(arm).ok_or_else(|| {
                Error::Contract(format!("arm {arm} out of range for {} arms", block.len()))
            })?;
            if p <= 0.0 {
                return Err(Error::Diverged(format!("zero-probability action (arm {arm})")));
            }
            lp += p.ln();
            off += d.param_len();
        }
        Ok(lp)
    }

    /// Parameters of the point mass at `action`: a one-hot vector for
    /// categorical dimensions; mean pinned to the action and the standard
    /// deviation at its minimum for Gaussian ones; the affine preimage for
    /// Dirac ones.
    pub fn dirac_params_for_action(&self, action: &Action) -> Result<DistParams> {
        let mut out = Vec::with_capacity(self.param_dim());
        match (&self.dims[0], action) {
            (DimSpec::Categorical { .. }, Action::Discrete(arms)) => {
                if arms.len() != self.dims.len() {
                    return Err(Error::Contract("action dimensionality mismatch".into()));
                }
                for (d, &arm) in self.dims.iter().zip(arms) {
                    let n = d.param_len();
                    if arm >= n {
                        return Err(Error::Contract(format!("arm {arm} out of range")));
                    }
                    out.extend((0..n).map(|i| if i == arm { 1.0 } else { 0.0 }));
                }
            }
            (_, Action::Continuous(vals)) => {
                if vals.len() != self.dims.len() {
                    return Err(Error::Contract("action dimensionality mismatch".into()));
                }
                for (d, &a) in self.dims.iter().zip(vals) {
                    match d {
                        DimSpec::Gauss(g) => {
                            if a < g.a_min || a > g.a_max {
                                return Err(Error::Contract(format!(
                                    "action {a} outside [{}, {}]",
                                    g.a_min, g.a_max
                                )));
                            }
                            out.push((a - g.center()) / g.half_width());
                            out.push(-1.0);
                        }
                        DimSpec::Dirac { a_min, a_max } => {
                            let c = (a_min + a_max) / 2.0;
                            let h = (a_max - a_min) / 2.0;
                            out.push((a - c) / h);
                        }
                        DimSpec::Categorical { .. } => unreachable!("uniform kind enforced"),
                    }
                }
            }
            _ => {
                return Err(Error::Contract(
                    "action kind does not match policy head".into(),
                ))
            }
        }
        Ok(DistParams(out))
    }
}

/// A replayed Gaussian sample with its parameter derivatives.
#[derive(Debug, Clone)]
pub struct ReparamSample {
    pub action: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub d_sigma: Vec<f64>,
}

/// Everything recorded by one policy forward pass.
#[derive(Debug)]
pub struct HeadEval {
    pub params: DistParams,
    pub logits: Vec<f64>,
    tape: Tape,
}

/// A network plus the interpretation of its outputs.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub net: Mlp,
    pub spec: PolicySpec,
}

impl PolicyHead {
    pub fn new(net: Mlp, spec: PolicySpec) -> Result<Self> {
        if net.output_dim() != spec.param_dim() {
            return Err(Error::Config(format!(
                "network emits {} logits, spec requires {}",
                net.output_dim(),
                spec.param_dim()
            )));
        }
        Ok(PolicyHead { net, spec })
    }

    pub fn forward(&self, state: &[f64]) -> Result<HeadEval> {
        let (logits, tape) = self.net.forward(state)?;
        let params = self.spec.logits_to_params(&logits)?;
        Ok(HeadEval { params, logits, tape })
    }

    /// Parameters only, without keeping the tape.
    pub fn params(&self, state: &[f64]) -> Result<DistParams> {
        self.spec.logits_to_params(&self.net.output(state)?)
    }

    /// Chains a gradient with respect to the distribution parameters through
    /// the squash/softmax and the network, returning weight gradients.
    pub fn backward_params(&self, eval: &HeadEval, d_params: &[f64]) -> Result<MlpGrads> {
        if d_params.len() != self.spec.param_dim() {
            return Err(Error::Contract(format!(
                "gradient has {} components, spec requires {}",
                d_params.len(),
                self.spec.param_dim()
            )));
        }
        let mut d_logits = vec![0.0; d_params.len()];
        let mut off = 0;
        for d in self.spec.dims() {
            let n = d.param_len();
            match d {
                DimSpec::Categorical { .. } => {
                    // softmax Jacobian: dp_i/dl_j = p_i (delta_ij - p_j)
                    let p = &eval.params.0[off..off + n];
                    let g = &d_params[off..off + n];
                    let dot: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
                    for j in 0..n {
                        d_logits[off + j] = p[j] * (g[j] - dot);
                    }
                }
                DimSpec::Gauss(_) | DimSpec::Dirac { .. } => {
                    for j in 0..n {
                        let l = eval.logits[off + j];
                        let u = eval.params.0[off + j];
                        let dt = if l.abs() >= LOGIT_CLAMP { 0.0 } else { 1.0 - u * u };
                        d_logits[off + j] = d_params[off + j] * dt;
                    }
                }
            }
            off += n;
        }
        self.backward_logits(eval, &d_logits)
    }

    /// Backward pass from a gradient in logit space.
    pub fn backward_logits(&self, eval: &HeadEval, d_logits: &[f64]) -> Result<MlpGrads> {
        let (grads, _) = self.net.backward(&eval.tape, d_logits)?;
        Ok(grads)
    }

    /// Gradient of `scale * log pi(action | state)` with respect to network
    /// weights, for categorical heads. Uses the closed softmax form
    /// `d log p_a / d l_j = 1[j == a] - p_j`, which stays finite for small
    /// probabilities.
    pub fn log_prob_backward(
        &self,
        eval: &HeadEval,
        action: &Action,
        scale: f64,
    ) -> Result<MlpGrads> {
        if !self.spec.is_categorical() {
            return Err(Error::Contract(
                "score-function gradient requires a categorical head".into(),
            ));
        }
        let Action::Discrete(arms) = action else {
            return Err(Error::Contract("categorical head expects a discrete action".into()));
        };
        let mut d_logits = vec![0.0; self.spec.param_dim()];
        let mut off = 0;
        for (d, &arm) in self.spec.dims().iter().zip(arms) {
            let n = d.param_len();
            if arm >= n {
                return Err(Error::Contract(format!("arm {arm} out of range")));
            }
            for j in 0..n {
                let ind = if j == arm { 1.0 } else { 0.0 };
                d_logits[off + j] = scale * (ind - eval.params.0[off + j]);
            }
            off += n;
        }
        self.backward_logits(eval, &d_logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::env_from_id;
    use crate::nn::{central_difference, max_rel_err};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cat3() -> PolicySpec {
        PolicySpec::new(vec![DimSpec::Categorical { arms: 3 }]).unwrap()
    }

    fn bandit_gauss() -> PolicySpec {
        PolicySpec::new(vec![DimSpec::Gauss(GaussSpec {
            a_min: -2.0,
            a_max: 2.0,
            sigma_min: (-3.0f64).exp(),
            sigma_max: 1.0f64.exp(),
        })])
        .unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = cat3().logits_to_params(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.0, vec![1.0 / 3.0; 3]);
    }

    /// Frozen values recomputed independently: softmax([1,2,3]).
    #[test]
    fn softmax_matches_reference_values() {
        let p = cat3().logits_to_params(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_7, 0.665_240_955_774_821_9];
        for (a, b) in p.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_moment_mapping_matches_closed_forms() {
        let PolicySpec { .. } = bandit_gauss();
        let DimSpec::Gauss(g) = bandit_gauss().dims()[0].clone() else { panic!() };
        // u = 0 lands on interval midpoints: mu 0, log sigma (-3 + 1)/2.
        let (mu, sigma) = g.moments(0.0, 0.0);
        assert_eq!(mu, 0.0);
        assert!((sigma - (-1.0f64).exp()).abs() < 1e-15);
        // u_mu = 0.5 on [-2, 2] puts the mean at 1.
        assert_eq!(g.moments(0.5, 0.0).0, 1.0);
        // u_sigma = 0.5 on [0.05, 0.2] gives sigma = sqrt(0.02).
        let g2 = GaussSpec { a_min: -1.0, a_max: 1.0, sigma_min: 0.05, sigma_max: 0.2 };
        assert!((g2.moments(0.0, 0.5).1 - 0.02f64.sqrt()).abs() < 1e-15);
        // Extremes hit the configured range ends.
        assert!((g.moments(0.0, -1.0).1 - g.sigma_min).abs() / g.sigma_min < 1e-14);
        assert!((g.moments(0.0, 1.0).1 - g.sigma_max).abs() / g.sigma_max < 1e-14);
    }

    #[test]
    fn huge_logits_stay_finite_and_valid() {
        let spec = bandit_gauss();
        let p = spec.logits_to_params(&[1e9, -1e9]).unwrap();
        assert!(p.0.iter().all(|u| u.is_finite() && u.abs() <= 1.0));
        spec.validate(&p).unwrap();
        assert!(matches!(
            spec.logits_to_params(&[f64::NAN, 0.0]),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn sampling_respects_clip_and_replays_noise() {
        let spec = bandit_gauss();
        let params = DistParams(vec![1.0, 1.0]); // mu = 2, sigma = e
        let mut r = rng(5);
        let mut clipped = 0;
        for _ in 0..1000 {
            let (a, eps) = spec.sample_action(&params, &mut r).unwrap();
            let Action::Continuous(v) = a else { panic!() };
            assert!((-2.0..=2.0).contains(&v[0]));
            if v[0] == 2.0 {
                clipped += 1;
            }
            let replay = spec.reparam_action(&params, &eps).unwrap();
            assert_eq!(replay.action[0], v[0]);
        }
        // mu sits on the upper bound, so about half of the draws clip.
        assert!((300..700).contains(&clipped), "clipped {clipped}");
    }

    #[test]
    fn reparam_grads_vanish_only_on_clip() {
        let spec = bandit_gauss();
        let params = DistParams(vec![0.25, 0.0]);
        let DimSpec::Gauss(g) = spec.dims()[0].clone() else { panic!() };
        let interior = spec.reparam_action(&params, &[0.5]).unwrap();
        assert_eq!(interior.d_mu[0], 2.0);
        assert!((interior.d_sigma[0] - 0.5 * g.sigma_grad(0.0)).abs() < 1e-15);
        let clipped = spec.reparam_action(&params, &[100.0]).unwrap();
        assert_eq!(clipped.action[0], 2.0);
        assert_eq!(clipped.d_mu[0], 0.0);
        assert_eq!(clipped.d_sigma[0], 0.0);
    }

    /// The clip event frequency agrees with the Gaussian tail mass:
    /// mu = 0, sigma = 1 on [-2, 2] clips high with probability
    /// 1 - Phi(2) = 0.02275 (frozen from the normal cdf).
    #[test]
    fn clip_frequency_matches_tail_mass() {
        let spec = PolicySpec::new(vec![DimSpec::Gauss(GaussSpec {
            a_min: -2.0,
            a_max: 2.0,
            sigma_min: 0.5,
            sigma_max: 2.0,
        })])
        .unwrap();
        let params = DistParams(vec![0.0, 0.0]); // sigma = exp(mean of logs) = 1
        let mut r = rng(7);
        let n = 100_000;
        let mut high = 0;
        for _ in 0..n {
            let (a, _) = spec.sample_action(&params, &mut r).unwrap();
            let Action::Continuous(v) = a else { panic!() };
            if v[0] == 2.0 {
                high += 1;
            }
        }
        let freq = high as f64 / n as f64;
        assert!((freq - 0.022_750_131_948_179_2).abs() < 3e-3, "freq {freq}");
    }

    #[test]
    fn log_prob_values_and_errors() {
        let spec = cat3();
        let uniform = DistParams(vec![1.0 / 3.0; 3]);
        let lp = spec.log_prob(&uniform, &Action::Discrete(vec![2])).unwrap();
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        let onehot = DistParams(vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            spec.log_prob(&onehot, &Action::Discrete(vec![0])),
            Err(Error::Diverged(_))
        ));
        assert!(matches!(
            bandit_gauss().log_prob(&DistParams(vec![0.0, 0.0]), &Action::Continuous(vec![0.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dirac_params_pin_the_action() {
        let spec = cat3();
        let p = spec.dirac_params_for_action(&Action::Discrete(vec![1])).unwrap();
        assert_eq!(p.0, vec![0.0, 1.0, 0.0]);

        let g = bandit_gauss();
        let p = g.dirac_params_for_action(&Action::Continuous(vec![1.0])).unwrap();
        assert_eq!(p.0, vec![0.5, -1.0]);
        let DimSpec::Gauss(gs) = g.dims()[0].clone() else { panic!() };
        // Round trip is exact for these half-width-2 bounds, and sigma lands
        // on its configured minimum.
        let mut r = rng(11);
        for _ in 0..200 {
            let behavior = DistParams(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
            let (a, _) = g.sample_action(&behavior, &mut r).unwrap();
            let Action::Continuous(v) = a.clone() else { panic!() };
            let pinned = g.dirac_params_for_action(&a).unwrap();
            let (mu, sigma) = gs.moments(pinned.0[0], pinned.0[1]);
            assert_eq!(mu.to_bits(), v[0].to_bits());
            assert!((sigma - gs.sigma_min).abs() / gs.sigma_min < 1e-14);
        }
    }

    #[test]
    fn deterministic_action_of_dirac_head() {
        let env = env_from_id("bimodal").unwrap();
        let spec = PolicySpec::dirac_for_env(&env).unwrap();
        let a = spec.deterministic_action(&DistParams(vec![0.25])).unwrap();
        assert_eq!(a, Action::Continuous(vec![0.5]));
        assert!(matches!(
            bandit_gauss().deterministic_action(&DistParams(vec![0.0, 0.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        for (case, spec) in [
            (0u64, cat3()),
            (1, bandit_gauss()),
            (2, PolicySpec::new(vec![DimSpec::Dirac { a_min: -1.0, a_max: 1.0 }]).unwrap()),
            (3, PolicySpec::new(vec![
                DimSpec::Gauss(GaussSpec { a_min: -1.0, a_max: 1.0, sigma_min: 0.05, sigma_max: 0.2 }),
                DimSpec::Gauss(GaussSpec { a_min: 0.0, a_max: 4.0, sigma_min: 0.1, sigma_max: 1.0 }),
            ]).unwrap()),
        ] {
            for seed in 0..8 {
                let mut r = rng(100 * case + seed);
                let net = Mlp::new(&[2, 8, 8, spec.param_dim()], &mut r).unwrap();
                let head = PolicyHead::new(net, spec.clone()).unwrap();
                let state: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
                let coeffs: Vec<f64> =
                    (0..spec.param_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
                let eval = head.forward(&state).unwrap();
                let analytic = head.backward_params(&eval, &coeffs).unwrap().flatten();
                let mut probe = head.clone();
                let n = probe.net.num_params();
                let mut fd = Vec::with_capacity(n);
                for i in 0..n {
                    let orig = probe.net.param(i);
                    let eval_at = |v: f64, probe: &mut PolicyHead| {
                        *probe.net.param_mut(i) = v;
                        let p = probe.params(&state).unwrap();
                        p.0.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>()
                    };
                    let fp = eval_at(orig + 1e-6, &mut probe);
                    let fm = eval_at(orig - 1e-6, &mut probe);
                    *probe.net.param_mut(i) = orig;
                    fd.push((fp - fm) / 2e-6);
                }
                let err = max_rel_err(&analytic, &fd, 1e-7);
                assert!(err < 1e-4, "case {case} seed {seed}: rel err {err}");
            }
        }
    }

    #[test]
    fn log_prob_backward_matches_finite_differences_in_logit_space() {
        let spec = cat3();
        let mut r = rng(42);
        let net = Mlp::new(&[1, 6, 3], &mut r).unwrap();
        let head = PolicyHead::new(net, spec.clone()).unwrap();
        let eval = head.forward(&[1.0]).unwrap();
        let action = Action::Discrete(vec![1]);
        let analytic = head.log_prob_backward(&eval, &action, 1.5).unwrap().flatten();
        let fd_logit = central_difference(
            |l| 1.5 * spec.logits_to_params(l).unwrap().0[1].ln(),
            &eval.logits,
            1e-6,
        );
        let via_chain = head.backward_logits(&eval, &fd_logit).unwrap().flatten();
        assert!(max_rel_err(&analytic, &via_chain, 1e-9) < 1e-6);
    }

    #[test]
    fn construction_rejects_bad_shapes_and_mixes() {
        assert!(matches!(
            PolicySpec::new(vec![
                DimSpec::Categorical { arms: 3 },
                DimSpec::Dirac { a_min: -1.0, a_max: 1.0 }
            ]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PolicySpec::new(vec![DimSpec::Categorical { arms: 1 }]),
            Err(Error::Config(_))
        ));
        let net = Mlp::new(&[1, 4, 2], &mut rng(1)).unwrap();
        assert!(matches!(PolicyHead::new(net, cat3()), Err(Error::Config(_))));
    }

    #[test]
    fn env_specs_match_action_spaces() {
        let karmed = env_from_id("karmed").unwrap();
        let spec = PolicySpec::stochastic_for_env(&karmed, (0.0, 0.0));
        assert!(spec.unwrap().is_categorical());
        let disc = env_from_id("pointmass-disc7").unwrap();
        let spec = PolicySpec::stochastic_for_env(&disc, (0.0, 0.0)).unwrap();
        assert_eq!(spec.param_dim(), 7);
        assert!(matches!(PolicySpec::dirac_for_env(&karmed), Err(Error::Config(_))));
    }

    proptest! {
        /// Whatever logits the network emits, the resulting parameters pass
        /// validation.
        #[test]
        fn logits_always_produce_valid_params(
            l in proptest::collection::vec(-1e6f64..1e6, 3),
            m in -1e6f64..1e6,
            s in -1e6f64..1e6,
        ) {
            let cp = cat3().logits_to_params(&l).unwrap();
            cat3().validate(&cp).unwrap();
            let gp = bandit_gauss().logits_to_params(&[m, s]).unwrap();
            bandit_gauss().validate(&gp).unwrap();
        }

        /// Sampled Gaussian actions always stay inside the action interval.
        #[test]
        fn gauss_samples_stay_in_bounds(um in -1.0f64..1.0, us in -1.0f64..1.0, seed in 0u64..1000) {
            let spec = bandit_gauss();
            let (a, _) = spec
                .sample_action(&DistParams(vec![um, us]), &mut rng(seed))
                .unwrap();
            let Action::Continuous(v) = a else { panic!() };
            prop_assert!((-2.0..=2.0).contains(&v[0]));
        }
    }
}
