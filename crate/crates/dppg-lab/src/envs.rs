//! Environments at desk scale: a three-armed bandit with deterministic
//! rewards, a continuous bandit whose reward is a bimodal bump function, a
//! point-mass regulation task, and a wrapper that discretizes a continuous
//! action space into uniformly spaced bins.
//!
//! All dynamics and rewards here are deterministic; randomness enters only
//! through `reset` (initial state) and through whatever policy samples the
//! actions. `step` still takes an rng so the interface does not change if a
//! stochastic environment is added.

use crate::error::{Error, Result};
use rand::Rng;

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True when the episode ends with this transition. The point-mass task
    /// reports `false` here; its fixed horizon is enforced by the rollout
    /// loop via [`Env::horizon`].
    pub done: bool,
}

/// An action: per-dimension arm indices for discrete spaces, per-dimension
/// values for continuous ones.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

/// Action space description, one entry per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete { arms: Vec<usize> },
    Continuous { bounds: Vec<(f64, f64)> },
}

impl ActionSpace {
    pub fn dims(&self) -> usize {
        match self {
            ActionSpace::Discrete { arms } => arms.len(),
            ActionSpace::Continuous { bounds } => bounds.len(),
        }
    }
}

/// Three-armed bandit; arm `i` pays `rewards[i]` deterministically.
#[derive(Debug, Clone)]
pub struct KArmedBandit {
    pub rewards: Vec<f64>,
}

impl KArmedBandit {
    /// The standard instance: rewards 0, 0.5, 1 so the last arm is optimal.
    pub fn standard() -> Self {
        KArmedBandit { rewards: vec![0.0, 0.5, 1.0] }
    }
}

/// Continuous bandit on `[-2, 2]` with reward
/// `exp(-(a+1)^2/0.5) + exp(-(a-1)^2/0.5)`: two bumps at -1 and 1, a low
/// valley at 0. The maximum expected reward is `1 + exp(-8)`.
#[derive(Debug, Clone)]
pub struct BimodalContinuousBandit {
    pub a_min: f64,
    pub a_max: f64,
}

impl BimodalContinuousBandit {
    pub fn standard() -> Self {
        BimodalContinuousBandit { a_min: -2.0, a_max: 2.0 }
    }

    pub fn reward(&self, a: f64) -> f64 {
        (-(a + 1.0).powi(2) / 0.5).exp() + (-(a - 1.0).powi(2) / 0.5).exp()
    }

    /// d reward / d action, used by oracle critics.
    pub fn reward_slope(&self, a: f64) -> f64 {
        -4.0 * (a + 1.0) * (-(a + 1.0).powi(2) / 0.5).exp()
            - 4.0 * (a - 1.0) * (-(a - 1.0).powi(2) / 0.5).exp()
    }

    /// Largest achievable expected reward, quoted as the peak height
    /// `1 + exp(-8)`.
    pub fn max_reward(&self) -> f64 {
        1.0 + (-8.0f64).exp()
    }
}

/// Point on a line nudged by the action: `s' = clip(s + 0.3 a, -1, 1)`,
/// reward `-s'^2`, start uniform on `[-1, 1]`, twenty steps per episode.
#[derive(Debug, Clone)]
pub struct PointMassMdp {
    pub horizon: usize,
    pub gamma: f64,
}

impl PointMassMdp {
    pub fn standard() -> Self {
        PointMassMdp { horizon: 20, gamma: 0.99 }
    }

    pub fn next_position(&self, s: f64, a: f64) -> f64 {
        (s + 0.3 * a).clamp(-1.0, 1.0)
    }
}

/// Wraps a continuous-action environment, exposing per dimension `bins`
/// uniformly spaced actions that include both interval endpoints.
#[derive(Debug, Clone)]
pub struct DiscretizedEnv {
    pub inner: Box<Env>,
    pub bins: usize,
}

impl DiscretizedEnv {
    pub fn new(inner: Env, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
        }
        match inner.action_space() {
            ActionSpace::Continuous { .. } => Ok(DiscretizedEnv { inner: Box::new(inner), bins }),
            ActionSpace::Discrete { .. } => Err(Error::Config(
                "cannot discretize an already discrete action space".to_string(),
            )),
        }
    }

    fn inner_bounds(&self) -> Vec<(f64, f64)> {
        match self.inner.action_space() {
            ActionSpace::Continuous { bounds } => bounds,
            ActionSpace::Discrete { .. } => unreachable!("checked at construction"),
        }
    }

    /// Continuous value of bin `index` in dimension `dim`.
    pub fn bin_value(&self, dim: usize, index: usize) -> Result<f64> {
        let bounds = self.inner_bounds();
        let (lo, hi) = *bounds.get(dim).ok_or_else(|| {
            Error::Contract(format!("action dimension {dim} out of range"))
        })?;
        if index >= self.bins {
            return Err(Error::Contract(format!(
                "bin index {index} out of range for {} bins",
                self.bins
            )));
        }
        Ok(lo + index as f64 * (hi - lo) / (self.bins - 1) as f64)
    }

    /// Maps per-dimension bin indices to the continuous action they stand for.
    pub fn continuous_action(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let bounds = self.inner_bounds();
        if indices.len() != bounds.len() {
            return Err(Error::Contract(format!(
                "got {} indices for {} action dimensions",
                indices.len(),
                bounds.len()
            )));
        }
        indices
            .iter()
            .enumerate()
            .map(|(d, &i)| self.bin_value(d, i))
            .collect()
    }

    /// Index of the bin whose value is closest to `a` in dimension `dim`.
    pub fn nearest_bin(&self, dim: usize, a: f64) -> Result<usize> {
        let bounds = self.inner_bounds();
        let (lo, hi) = *bounds.get(dim).ok_or_else(|| {
            Error::Contract(format!("action dimension {dim} out of range"))
        })?;
        let t = ((a - lo) / (hi - lo) * (self.bins - 1) as f64).round();
        Ok((t.max(0.0) as usize).min(self.bins - 1))
    }
}

/// Closed set of supported environments.
#[derive(Debug, Clone)]
pub enum Env {
    KArmed(KArmedBandit),
    Bimodal(BimodalContinuousBandit),
    PointMass(PointMassMdp),
    Discretized(DiscretizedEnv),
}

/// Builds an environment from its identifier: `karmed`, `bimodal`,
/// `pointmass`, or `pointmass-disc7`.
pub fn env_from_id(id: &str) -> Result<Env> {
    match id {
        "karmed" => Ok(Env::KArmed(KArmedBandit::standard())),
        "bimodal" => Ok(Env::Bimodal(BimodalContinuousBandit::standard())),
        "pointmass" => Ok(Env::PointMass(PointMassMdp::standard())),
        "pointmass-disc7" => Ok(Env::Discretized(DiscretizedEnv::new(
            Env::PointMass(PointMassMdp::standard()),
            7,
        )?)),
        other => Err(Error::Config(format!("unknown environment id '{other}'"))),
    }
}

impl Env {
    pub fn id(&self) -> String {
        match self {
            Env::KArmed(_) => "karmed".to_string(),
            Env::Bimodal(_) => "bimodal".to_string(),
            Env::PointMass(_) => "pointmass".to_string(),
            Env::Discretized(d) => format!("{}-disc{}", d.inner.id(), d.bins),
        }
    }

    pub fn state_dim(&self) -> usize {
        1
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::KArmed(b) => ActionSpace::Discrete { arms: vec![b.rewards.len()] },
            Env::Bimodal(b) => ActionSpace::Continuous { bounds: vec![(b.a_min, b.a_max)] },
            Env::PointMass(_) => ActionSpace::Continuous { bounds: vec![(-1.0, 1.0)] },
            Env::Discretized(d) => {
                let dims = d.inner.action_space().dims();
                ActionSpace::Discrete { arms: vec![d.bins; dims] }
            }
        }
    }

    /// Steps per episode: 1 for the bandits.
    pub fn horizon(&self) -> usize {
        match self {
            Env::KArmed(_) | Env::Bimodal(_) => 1,
            Env::PointMass(p) => p.horizon,
            Env::Discretized(d) => d.inner.horizon(),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Env::KArmed(_) | Env::Bimodal(_) => 1.0,
            Env::PointMass(p) => p.gamma,
            Env::Discretized(d) => d.inner.gamma(),
        }
    }

    /// Initial state: the bandits use the dummy state `[1]`, the point mass
    /// starts uniformly on `[-1, 1]`.
    pub fn reset(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Env::KArmed(_) | Env::Bimodal(_) => vec![1.0],
            Env::PointMass(_) => vec![rng.random_range(-1.0..=1.0)],
            Env::Discretized(d) => d.inner.reset(rng),
        }
    }

    pub fn step(&self, state: &[f64], action: &Action, _rng: &mut impl Rng) -> Result<StepResult> {
        let (next_state, reward) = self.transition(state, action)?;
        Ok(StepResult { next_state, reward, done: self.horizon() == 1 })
    }

    /// Deterministic core of `step`, usable by exact oracles without an rng.
    pub fn transition(&self, state: &[f64], action: &Action) -> Result<(Vec<f64>, f64)> {
        if state.len() != self.state_dim() {
            return Err(Error::Contract(format!(
                "state has {} components, environment expects {}",
                state.len(),
                self.state_dim()
            )));
        }
        match (self, action) {
            (Env::KArmed(b), Action::Discrete(idx)) => {
                let &[arm] = idx.as_slice() else {
                    return Err(Error::Contract(format!(
                        "expected 1 arm index, got {}",
                        idx.len()
                    )));
                };
                let r = *b.rewards.get(arm).ok_or_else(|| {
                    Error::Contract(format!(
                        "arm {arm} out of range for {} arms",
                        b.rewards.len()
                    ))
                })?;
                Ok((vec![1.0], r))
            }
            (Env::Bimodal(b), Action::Continuous(a)) => {
                let &[a0] = a.as_slice() else {
                    return Err(Error::Contract(format!(
                        "expected 1 action component, got {}",
                        a.len()
                    )));
                };
                if a0 < b.a_min || a0 > b.a_max {
                    return Err(Error::Contract(format!(
                        "action {a0} outside [{}, {}]",
                        b.a_min, b.a_max
                    )));
                }
                Ok((vec![1.0], b.reward(a0)))
            }
            (Env::PointMass(p), Action::Continuous(a)) => {
                let &[a0] = a.as_slice() else {
                    return Err(Error::Contract(format!(
                        "expected 1 action component, got {}",
                        a.len()
                    )));
                };
                if !(-1.0..=1.0).contains(&a0) {
                    return Err(Error::Contract(format!("action {a0} outside [-1, 1]")));
                }
                let s1 = p.next_position(state[0], a0);
                Ok((vec![s1], -s1 * s1))
            }
            (Env::Discretized(d), Action::Discrete(idx)) => {
                let a = d.continuous_action(idx)?;
                d.inner.transition(state, &Action::Continuous(a))
            }
            (_, action) => Err(Error::Contract(format!(
                "action kind {:?} does not match environment '{}'",
                action,
                self.id()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn karmed_pays_per_arm_and_terminates() {
        let env = env_from_id("karmed").unwrap();
        let s = env.reset(&mut rng());
        assert_eq!(s, vec![1.0]);
        for (arm, expected) in [(0usize, 0.0), (1, 0.5), (2, 1.0)] {
            let r = env.step(&s, &Action::Discrete(vec![arm]), &mut rng()).unwrap();
            assert_eq!(r.reward, expected);
            assert!(r.done);
        }
        assert!(matches!(
            env.step(&s, &Action::Discrete(vec![3]), &mut rng()),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            env.step(&s, &Action::Continuous(vec![0.0]), &mut rng()),
            Err(Error::Contract(_))
        ));
    }

    /// Peak and valley values recomputed from the closed form:
    /// r(1) = 1 + e^-8, r(0) = 2 e^-2.
    #[test]
    fn bimodal_reward_shape() {
        let b = BimodalContinuousBandit::standard();
        assert!((b.reward(1.0) - 1.000_335_462_627_902_5).abs() < 1e-15);
        assert!((b.reward(-1.0) - b.reward(1.0)).abs() < 1e-15);
        assert!((b.reward(0.0) - 0.270_670_566_473_225_4).abs() < 1e-15);
        let grid_max = (0..=4000)
            .map(|i| b.reward(-2.0 + i as f64 * 0.001))
            .fold(f64::MIN, f64::max);
        assert!((grid_max - b.max_reward()).abs() < 1e-5);

        let env = env_from_id("bimodal").unwrap();
        let s = env.reset(&mut rng());
        let r = env.step(&s, &Action::Continuous(vec![1.0]), &mut rng()).unwrap();
        assert!(r.done);
        assert_eq!(r.reward, b.reward(1.0));
        assert!(matches!(
            env.step(&s, &Action::Continuous(vec![2.5]), &mut rng()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bimodal_slope_matches_finite_differences() {
        let b = BimodalContinuousBandit::standard();
        for i in 0..40 {
            let a = -2.0 + i as f64 * 0.1;
            let fd = (b.reward(a + 1e-6) - b.reward(a - 1e-6)) / 2e-6;
            assert!((b.reward_slope(a) - fd).abs() < 1e-8, "a = {a}");
        }
    }

    #[test]
    fn pointmass_dynamics_clip_and_square() {
        let env = env_from_id("pointmass").unwrap();
        assert_eq!(env.horizon(), 20);
        assert_eq!(env.gamma(), 0.99);
        let r = env.step(&[0.5], &Action::Continuous(vec![-1.0]), &mut rng()).unwrap();
        assert_eq!(r.next_state, vec![0.2]);
        assert!((r.reward - -0.04).abs() < 1e-15);
        assert!(!r.done);
        let clipped = env.step(&[0.95], &Action::Continuous(vec![1.0]), &mut rng()).unwrap();
        assert_eq!(clipped.next_state, vec![1.0]);
        assert_eq!(clipped.reward, -1.0);
        let mut r = rng();
        for _ in 0..100 {
            let s = env.reset(&mut r);
            assert!((-1.0..=1.0).contains(&s[0]));
        }
    }

    #[test]
    fn discretized_bins_include_endpoints() {
        let env = env_from_id("pointmass-disc7").unwrap();
        assert_eq!(env.id(), "pointmass-disc7");
        let Env::Discretized(d) = &env else { panic!() };
        let centers: Vec<f64> = (0..7).map(|i| d.bin_value(0, i).unwrap()).collect();
        assert_eq!(centers[0], -1.0);
        assert_eq!(centers[3], 0.0);
        assert_eq!(centers[6], 1.0);

        let wide = DiscretizedEnv::new(Env::Bimodal(BimodalContinuousBandit::standard()), 7).unwrap();
        assert!((wide.bin_value(0, 5).unwrap() - 4.0 / 3.0).abs() < 1e-15);

        let r = env
            .step(&[0.0], &Action::Discrete(vec![6]), &mut rng())
            .unwrap();
        assert_eq!(r.next_state, vec![0.3]);
        assert!(matches!(
            env.step(&[0.0], &Action::Discrete(vec![7]), &mut rng()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn nearest_bin_inverts_bin_value() {
        let d = DiscretizedEnv::new(Env::Bimodal(BimodalContinuousBandit::standard()), 7).unwrap();
        for i in 0..7 {
            let a = d.bin_value(0, i).unwrap();
            assert_eq!(d.nearest_bin(0, a).unwrap(), i);
        }
        let spacing = 4.0 / 6.0;
        let mut r = rng();
        for _ in 0..200 {
            let a = r.random_range(-2.0..2.0);
            let i = d.nearest_bin(0, a).unwrap();
            assert!((a - d.bin_value(0, i).unwrap()).abs() <= spacing / 2.0 + 1e-12);
        }
    }

    #[test]
    fn ids_round_trip_and_unknown_rejected() {
        for id in ["karmed", "bimodal", "pointmass", "pointmass-disc7"] {
            assert_eq!(env_from_id(id).unwrap().id(), id);
        }
        assert!(matches!(env_from_id("cartpole"), Err(Error::Config(_))));
        assert!(matches!(
            DiscretizedEnv::new(Env::KArmed(KArmedBandit::standard()), 7),
            Err(Error::Config(_))
        ));
    }
}
