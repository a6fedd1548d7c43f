//! The parameter-space view of an environment.
//!
//! A stochastic policy that emits distribution parameters `u` induces a
//! transformed decision process whose action space is the parameter space:
//! sampling the concrete action from `f(. | u)` becomes part of the
//! environment. Its reward is the expected original reward
//! `r~(s, u) = E_{A ~ f(.|u)}[r(s, A)]`, and its transition kernel is the
//! corresponding mixture of original transitions.
//!
//! [`ParamMdp::param_step`] samples that transformed step. The `exact_*`
//! oracles evaluate the transformed reward and values without sampling:
//! discrete heads by enumeration, Gaussian heads by adaptive quadrature over
//! the action interval plus the two clip atoms, and the multi-step point-mass
//! task by backward induction on a state grid.
//!
//! [`check_prop1`] verifies that values computed in the transformed process
//! equal the original policy's values, evaluating both sides through
//! deliberately different numerical routes (parameter-space integrals with
//! explicit clip atoms versus noise-space integrals in the original process).

use crate::envs::{Action, ActionSpace, Env, StepResult};
use crate::error::{Error, Result};
use crate::policy::{DimSpec, DistParams, PolicyHead, PolicySpec};
use crate::quad::integrate_to_tol;
use rand::Rng;

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Accuracy knobs for the exact oracles.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Starting quadrature order per segment; at least 64.
    pub min_points: usize,
    /// Refinement cap.
    pub max_points: usize,
    /// Successive-refinement tolerance.
    pub tol: f64,
    /// State-grid resolution for multi-step backward induction.
    pub grid_points: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { min_points: 256, max_points: 16384, tol: 1e-8, grid_points: 401 }
    }
}

impl OracleConfig {
    /// Settings for multi-step backward induction, where every integrand is
    /// piecewise smooth between declared breaks (so low orders converge) and
    /// thousands of grid cells are swept per table.
    pub fn induction() -> Self {
        OracleConfig { min_points: 64, max_points: 2048, tol: 1e-7, grid_points: 201 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_points < 64 {
            return Err(Error::Config(format!(
                "oracle needs at least 64 quadrature points, got {}",
                self.min_points
            )));
        }
        if self.max_points < self.min_points || self.tol <= 0.0 || self.grid_points < 2 {
            return Err(Error::Config("invalid oracle configuration".into()));
        }
        Ok(())
    }
}

/// Anything that maps states to distribution parameters.
pub trait ParamPolicy {
    fn params_at(&self, state: &[f64]) -> Result<DistParams>;
}

impl ParamPolicy for PolicyHead {
    fn params_at(&self, state: &[f64]) -> Result<DistParams> {
        self.params(state)
    }
}

/// A state-independent parameter choice.
#[derive(Debug, Clone)]
pub struct FixedParams(pub DistParams);

impl ParamPolicy for FixedParams {
    fn params_at(&self, _state: &[f64]) -> Result<DistParams> {
        Ok(self.0.clone())
    }
}

impl<F: Fn(&[f64]) -> DistParams> ParamPolicy for F {
    fn params_at(&self, state: &[f64]) -> Result<DistParams> {
        Ok(self(state))
    }
}

/// Expectation of `f` under `clip(N(mu, sigma^2), lo, hi)`: the interior
/// integral against the Gaussian density plus the two boundary atoms. Extra
/// integrand kinks can be declared via `breaks`.
pub fn clipped_normal_expect(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    f: &mut impl FnMut(f64) -> f64,
    oracle: &OracleConfig,
) -> Result<f64> {
    oracle.validate()?;
    if !(sigma > 0.0) || !mu.is_finite() {
        return Err(Error::Contract(format!("invalid moments mu={mu}, sigma={sigma}")));
    }
    // Beyond twelve standard deviations the remaining interior mass is far
    // below the oracle tolerance.
    let a = lo.max(mu - 12.0 * sigma);
    let b = hi.min(mu + 12.0 * sigma);
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let interior = if a < b {
        integrate_to_tol(
            |x| {
                let z = (x - mu) / sigma;
                f(x) * norm * (-0.5 * z * z).exp()
            },
            a,
            b,
            breaks,
            oracle.min_points,
            oracle.max_points,
            oracle.tol,
        )?
    } else {
        0.0
    };
    let mass_lo = normal_cdf((lo - mu) / sigma);
    let mass_hi = 1.0 - normal_cdf((hi - mu) / sigma);
    Ok(interior + mass_lo * f(lo) + mass_hi * f(hi))
}

/// Expectation of `g(A)` where `A = clip(mu + sigma * eps, lo, hi)` and
/// `eps ~ N(0, 1)`, evaluated entirely in noise space with the clip plateaus
/// integrated explicitly. Shares no code with [`clipped_normal_expect`]'s
/// atom decomposition, which makes it a useful independent route. Kinks of
/// `g` can be declared in action space via `breaks_a`.
pub fn noise_space_expect(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    breaks_a: &[f64],
    g: &mut impl FnMut(f64) -> f64,
    oracle: &OracleConfig,
) -> Result<f64> {
    oracle.validate()?;
    let mut breaks = vec![
        ((lo - mu) / sigma).clamp(-12.0, 12.0),
        ((hi - mu) / sigma).clamp(-12.0, 12.0),
    ];
    breaks.extend(breaks_a.iter().map(|&a| ((a - mu) / sigma).clamp(-12.0, 12.0)));
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    integrate_to_tol(
        |e| {
            let a = (mu + sigma * e).clamp(lo, hi);
            g(a) * norm * (-0.5 * e * e).exp()
        },
        -12.0,
        12.0,
        &breaks,
        oracle.min_points,
        oracle.max_points,
        oracle.tol,
    )
}

/// Enumerates a discrete action space (up to `cap` joint actions) together
/// with the probability of each joint action under categorical parameters.
pub fn enumerate_discrete(
    spec: &PolicySpec,
    params: &DistParams,
    cap: usize,
) -> Result<Vec<(Action, f64)>> {
    spec.validate(params)?;
    if !spec.is_categorical() {
        return Err(Error::Contract("enumeration requires categorical parameters".into()));
    }
    let arm_counts: Vec<usize> = spec.dims().iter().map(|d| match d {
        DimSpec::Categorical { arms } => *arms,
        _ => unreachable!(),
    }).collect();
    let total: usize = arm_counts.iter().product();
    if total > cap {
        return Err(Error::Infeasible(format!(
            "action space has {total} joint actions, enumeration capped at {cap}"
        )));
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; arm_counts.len()];
    loop {
        let mut p = 1.0;
        let mut off = 0;
        for (d, &i) in arm_counts.iter().zip(&idx) {
            p *= params.0[off + i];
            off += d;
        }
        out.push((Action::Discrete(idx.clone()), p));
        let mut dim = 0;
        loop {
            if dim == idx.len() {
                return Ok(out);
            }
            idx[dim] += 1;
            if idx[dim] < arm_counts[dim] {
                break;
            }
            idx[dim] = 0;
            dim += 1;
        }
    }
}

/// An environment paired with the head that interprets parameter vectors.
#[derive(Debug, Clone)]
pub struct ParamMdp {
    pub env: Env,
    pub spec: PolicySpec,
}

impl ParamMdp {
    pub fn new(env: Env, spec: PolicySpec) -> Result<Self> {
        let compatible = match (&env.action_space(), spec.dims().first()) {
            (ActionSpace::Discrete { arms }, Some(DimSpec::Categorical { .. })) => {
                arms.len() == spec.action_dims()
                    && spec.dims().iter().zip(arms).all(|(d, &n)| match d {
                        DimSpec::Categorical { arms } => *arms == n,
                        _ => false,
                    })
            }
            (ActionSpace::Continuous { bounds }, Some(DimSpec::Gauss(_) | DimSpec::Dirac { .. })) => {
                bounds.len() == spec.action_dims()
                    && spec.dims().iter().zip(bounds).all(|(d, &(lo, hi))| match d {
                        DimSpec::Gauss(g) => g.a_min == lo && g.a_max == hi,
                        DimSpec::Dirac { a_min, a_max } => *a_min == lo && *a_max == hi,
                        _ => false,
                    })
            }
            _ => false,
        };
        if !compatible {
            return Err(Error::Config(format!(
                "policy spec does not match action space of '{}'",
                env.id()
            )));
        }
        Ok(ParamMdp { env, spec })
    }

    /// One transformed step: samples `A ~ f(.|u)` and applies it. Returns
    /// the environment result together with the realized action.
    pub fn param_step(
        &self,
        state: &[f64],
        params: &DistParams,
        rng: &mut impl Rng,
    ) -> Result<(StepResult, Action)> {
        let (action, _) = self.spec.sample_action(params, rng)?;
        let result = self.env.step(state, &action, rng)?;
        Ok((result, action))
    }

    /// Exact transformed reward `r~(s, u)`.
    pub fn exact_param_reward(
        &self,
        state: &[f64],
        params: &DistParams,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        let breaks = self.transition_breaks(state[0], &[]);
        self.expect_over_actions(state, params, oracle, &breaks, &mut |r, _s1| r)
    }

    /// Action-space points where the integrand composed with this
    /// environment's transition stops being smooth: the position-clip kinks,
    /// plus (when the integrand reads a value table) the actions that land
    /// the successor state exactly on an interpolation knot of `grid`.
    /// Splitting quadrature at these points keeps every segment smooth.
    fn transition_breaks(&self, s0: f64, grid: &[f64]) -> Vec<f64> {
        let mut breaks = Vec::new();
        if let Env::PointMass(_) = &self.env {
            breaks.push((-1.0 - s0) / 0.3);
            breaks.push((1.0 - s0) / 0.3);
            if grid.len() > 1 {
                for &g in grid {
                    let a = (g - s0) / 0.3;
                    if a.abs() < 1.0 {
                        breaks.push(a);
                    }
                }
            }
        }
        breaks
    }

    /// Expectation over `A ~ f(.|u)` of `h(reward, next_state)` for the
    /// deterministic-dynamics environments in this crate. `breaks` declares
    /// where the composite integrand has kinks (see `transition_breaks`).
    fn expect_over_actions(
        &self,
        state: &[f64],
        params: &DistParams,
        oracle: &OracleConfig,
        breaks: &[f64],
        h: &mut impl FnMut(f64, f64) -> f64,
    ) -> Result<f64> {
        oracle.validate()?;
        self.spec.validate(params)?;
        if self.spec.is_categorical() {
            let mut acc = 0.0;
            for (action, p) in enumerate_discrete(&self.spec, params, 1_000_000)? {
                if p == 0.0 {
                    continue;
                }
                let (s1, r) = self.env.transition(state, &action)?;
                acc += p * h(r, s1[0]);
            }
            return Ok(acc);
        }
        if self.spec.action_dims() != 1 {
            return Err(Error::Infeasible(
                "continuous oracles support one action dimension".into(),
            ));
        }
        match &self.spec.dims()[0] {
            DimSpec::Gauss(g) => {
                let (mu, sigma) = g.moments(params.0[0], params.0[1]);
                let env = &self.env;
                clipped_normal_expect(mu, sigma, g.a_min, g.a_max, breaks, &mut |a| {
                    let (s1, r) = env
                        .transition(state, &Action::Continuous(vec![a]))
                        .expect("in-range action");
                    h(r, s1[0])
                }, oracle)
            }
            DimSpec::Dirac { .. } => {
                let action = self.spec.deterministic_action(params)?;
                let (s1, r) = self.env.transition(state, &action)?;
                Ok(h(r, s1[0]))
            }
            DimSpec::Categorical { .. } => unreachable!(),
        }
    }

    /// Exact transformed state value `v~(s)` of a parameter policy, with the
    /// environment's full horizon remaining, by backward induction.
    pub fn exact_param_v(
        &self,
        state: &[f64],
        policy: &dyn ParamPolicy,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        let dp = self.param_route_dp(policy, oracle)?;
        Ok(dp.interp(0, state[0]))
    }

    /// Exact transformed action value `q~(s, u)`: the transformed reward
    /// plus the discounted transformed value of the successor, with the
    /// remaining horizon after one step.
    pub fn exact_param_q(
        &self,
        state: &[f64],
        params: &DistParams,
        policy: &dyn ParamPolicy,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        if self.env.horizon() == 1 {
            return self.exact_param_reward(state, params, oracle);
        }
        let dp = self.param_route_dp(policy, oracle)?;
        self.param_q_with_table(state, params, Some(&dp), oracle)
    }

    /// Transformed action value against a precomputed continuation table
    /// (`None` for single-step environments); lets a caller probe many
    /// parameter vectors without redoing the induction.
    fn param_q_with_table(
        &self,
        state: &[f64],
        params: &DistParams,
        dp: Option<&DpTable>,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        let Some(dp) = dp else {
            return self.exact_param_reward(state, params, oracle);
        };
        let gamma = self.env.gamma();
        let breaks = self.transition_breaks(state[0], &dp.grid);
        self.expect_over_actions(state, params, oracle, &breaks, &mut |r, s1| {
            r + gamma * dp.interp(1, s1)
        })
    }

    /// Backward induction in the transformed process: at each grid state,
    /// the transformed reward and the transformed transition expectation are
    /// evaluated as two separate integrals over the parameter distribution.
    pub fn param_route_dp(
        &self,
        policy: &dyn ParamPolicy,
        oracle: &OracleConfig,
    ) -> Result<DpTable> {
        let mut dp = DpTable::new(&self.env, oracle);
        let gamma = self.env.gamma();
        for h in (0..self.env.horizon()).rev() {
            for i in 0..dp.grid.len() {
                let s = vec![dp.grid[i]];
                let u = policy.params_at(&s)?;
                let reward = self.exact_param_reward(&s, &u, oracle)?;
                let cont = if h + 1 == self.env.horizon() {
                    0.0
                } else {
                    let next = &dp.v[h + 1];
                    let grid = &dp.grid;
                    let breaks = self.transition_breaks(s[0], grid);
                    self.expect_over_actions(&s, &u, oracle, &breaks, &mut |_r, s1| {
                        DpTable::interp_on(grid, next, s1)
                    })?
                };
                dp.v[h][i] = reward + gamma * cont;
            }
        }
        Ok(dp)
    }

    /// Backward induction in the original process: the action value
    /// `q(s, a) = r(s, a) + gamma v(s')` is formed first and the policy
    /// expectation is taken over the composite, integrating in noise space
    /// for Gaussian heads.
    pub fn action_route_dp(
        &self,
        policy: &dyn ParamPolicy,
        oracle: &OracleConfig,
    ) -> Result<DpTable> {
        let mut dp = DpTable::new(&self.env, oracle);
        let gamma = self.env.gamma();
        for h in (0..self.env.horizon()).rev() {
            for i in 0..dp.grid.len() {
                let s = vec![dp.grid[i]];
                let u = policy.params_at(&s)?;
                let last = h + 1 == self.env.horizon();
                let next = if last { None } else { Some(&dp.v[h + 1]) };
                let grid = &dp.grid;
                let env = &self.env;
                let q_of_action = |action: &Action| -> f64 {
                    let (s1, r) = env.transition(&s, action).expect("in-range action");
                    match next {
                        None => r,
                        Some(v) => r + gamma * DpTable::interp_on(grid, v, s1[0]),
                    }
                };
                dp.v[h][i] = match &self.spec.dims()[0] {
                    DimSpec::Categorical { .. } => {
                        let mut acc = 0.0;
                        for (action, p) in enumerate_discrete(&self.spec, &u, 1_000_000)? {
                            if p > 0.0 {
                                acc += p * q_of_action(&action);
                            }
                        }
                        acc
                    }
                    DimSpec::Gauss(g) => {
                        let (mu, sigma) = g.moments(u.0[0], u.0[1]);
                        let breaks =
                            self.transition_breaks(s[0], if last { &[] } else { grid });
                        noise_space_expect(mu, sigma, g.a_min, g.a_max, &breaks, &mut |a| {
                            q_of_action(&Action::Continuous(vec![a]))
                        }, oracle)?
                    }
                    DimSpec::Dirac { .. } => {
                        q_of_action(&self.spec.deterministic_action(&u)?)
                    }
                };
            }
        }
        Ok(dp)
    }

    /// `E_{A ~ f(.|u)}[q(s, A)]` where `q` comes from the original-process
    /// induction: the action-space side of the value-equivalence check.
    pub fn action_route_q(
        &self,
        state: &[f64],
        params: &DistParams,
        policy: &dyn ParamPolicy,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        let dp = if self.env.horizon() == 1 {
            None
        } else {
            Some(self.action_route_dp(policy, oracle)?)
        };
        self.action_q_with_table(state, params, dp.as_ref(), oracle)
    }

    /// Original-process action-value expectation against a precomputed
    /// continuation table (`None` for single-step environments).
    fn action_q_with_table(
        &self,
        state: &[f64],
        params: &DistParams,
        dp: Option<&DpTable>,
        oracle: &OracleConfig,
    ) -> Result<f64> {
        self.spec.validate(params)?;
        let gamma = self.env.gamma();
        let env = &self.env;
        let q_of_action = |action: &Action| -> f64 {
            let (s1, r) = env.transition(state, action).expect("in-range action");
            match dp {
                None => r,
                Some(t) => r + gamma * t.interp(1, s1[0]),
            }
        };
        match &self.spec.dims()[0] {
            DimSpec::Categorical { .. } => {
                let mut acc = 0.0;
                for (action, p) in enumerate_discrete(&self.spec, params, 1_000_000)? {
                    if p > 0.0 {
                        acc += p * q_of_action(&action);
                    }
                }
                Ok(acc)
            }
            DimSpec::Gauss(g) => {
                let (mu, sigma) = g.moments(params.0[0], params.0[1]);
                let breaks =
                    self.transition_breaks(state[0], dp.map_or(&[][..], |t| &t.grid));
                noise_space_expect(mu, sigma, g.a_min, g.a_max, &breaks, &mut |a| {
                    q_of_action(&Action::Continuous(vec![a]))
                }, oracle)
            }
            DimSpec::Dirac { .. } => Ok(q_of_action(&self.spec.deterministic_action(params)?)),
        }
    }
}

/// Time-indexed value table on a state grid. `v[h]` holds the value with
/// `horizon - h` steps remaining; single-state environments use the lone
/// grid point `1` (the dummy state).
#[derive(Debug, Clone)]
pub struct DpTable {
    pub grid: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl DpTable {
    fn new(env: &Env, oracle: &OracleConfig) -> Self {
        let grid = if env.horizon() == 1 {
            vec![1.0]
        } else {
            let n = oracle.grid_points;
            (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
        };
        let v = vec![vec![0.0; grid.len()]; env.horizon()];
        DpTable { grid, v }
    }

    fn interp_on(grid: &[f64], values: &[f64], x: f64) -> f64 {
        if grid.len() == 1 {
            return values[0];
        }
        let lo = grid[0];
        let hi = grid[grid.len() - 1];
        let t = ((x - lo) / (hi - lo) * (grid.len() - 1) as f64).clamp(0.0, (grid.len() - 1) as f64);
        let i = (t.floor() as usize).min(grid.len() - 2);
        let frac = t - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }

    /// Linear interpolation of `v[h]` at state `x`.
    pub fn interp(&self, h: usize, x: f64) -> f64 {
        Self::interp_on(&self.grid, &self.v[h], x)
    }
}

/// Result of the value-equivalence check, serialized by the CLI.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Prop1Report {
    pub env: String,
    pub max_abs_dev: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares state values and action values between the transformed process
/// and the original process across a family of policies, reporting the
/// largest absolute deviation against the per-environment tolerance.
pub fn check_prop1(env: &Env, oracle: &OracleConfig) -> Result<Prop1Report> {
    oracle.validate()?;
    let tolerance = match env {
        Env::KArmed(_) => 1e-12,
        Env::Bimodal(_) => 1e-6,
        Env::PointMass(_) | Env::Discretized(_) => 1e-3,
    };
    let sigma_range = match env {
        Env::Bimodal(_) => ((-3.0f64).exp(), 1.0f64.exp()),
        _ => (0.05, 0.2),
    };
    let spec = PolicySpec::stochastic_for_env(env, sigma_range)?;
    let pm = ParamMdp::new(env.clone(), spec.clone())?;

    let mut policies: Vec<Box<dyn ParamPolicy>> = Vec::new();
    let param_dim = spec.param_dim();
    // Quadrature-heavy case: each continuous multi-step table costs two
    // integrals per grid cell and level, so probe fewer fixed policies there.
    let fixed_count = if env.horizon() > 1 && !spec.is_categorical() { 4 } else { 12 };
    // A deterministic set of fixed parameter vectors spread over the space.
    for k in 0..fixed_count {
        let raw: Vec<f64> = (0..param_dim)
            .map(|j| ((k * param_dim + j) as f64 * 0.761 + 0.35).sin())
            .collect();
        let params = if spec.is_categorical() {
            let shifted: Vec<f64> = raw.iter().map(|x| x + 1.01).collect();
            let sum: f64 = shifted.iter().sum();
            DistParams(shifted.iter().map(|x| x / sum).collect())
        } else {
            DistParams(raw.iter().map(|x| 0.95 * x).collect())
        };
        policies.push(Box::new(FixedParams(params)));
    }
    if !spec.is_categorical() {
        // Boundary-heavy cases where the clip atoms carry real mass.
        let boundary: &[[f64; 2]] = if env.horizon() > 1 {
            &[[1.0, 1.0], [0.0, 0.5]]
        } else {
            &[[1.0, 1.0], [-1.0, 1.0], [0.9, -1.0], [0.0, 0.5]]
        };
        for u in boundary {
            policies.push(Box::new(FixedParams(DistParams(u.to_vec()))));
        }
        // A state-dependent policy (regulator-like mean).
        policies.push(Box::new(|s: &[f64]| {
            DistParams(vec![(-0.8 * s[0]).clamp(-1.0, 1.0), -0.3])
        }));
    } else {
        policies.push(Box::new(move |s: &[f64]| {
            let n = param_dim;
            let mut p: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j as f64 + s[0]).cos())).collect();
            let sum: f64 = p.iter().sum();
            for x in p.iter_mut() {
                *x /= sum;
            }
            DistParams(p)
        }));
    }

    let mut max_dev: f64 = 0.0;
    for policy in &policies {
        let param_dp = pm.param_route_dp(policy.as_ref(), oracle)?;
        let action_dp = pm.action_route_dp(policy.as_ref(), oracle)?;
        for (a, b) in param_dp.v[0].iter().zip(&action_dp.v[0]) {
            max_dev = max_dev.max((a - b).abs());
        }
        let (param_cont, action_cont) = if env.horizon() == 1 {
            (None, None)
        } else {
            (Some(&param_dp), Some(&action_dp))
        };
        // Action values at off-policy parameters, on a few probe states.
        let probes: Vec<f64> = if env.horizon() == 1 {
            vec![1.0]
        } else {
            vec![-0.9, -0.4, 0.0, 0.55, 1.0]
        };
        for (i, &s) in probes.iter().enumerate() {
            let u = policy.params_at(&[s])?;
            let q_param = pm.param_q_with_table(&[s], &u, param_cont, oracle)?;
            let q_action = pm.action_q_with_table(&[s], &u, action_cont, oracle)?;
            max_dev = max_dev.max((q_param - q_action).abs());
            // Also probe a parameter different from the policy's own.
            let off = policies[(i + 1) % policies.len()].params_at(&[s])?;
            let q_param = pm.param_q_with_table(&[s], &off, param_cont, oracle)?;
            let q_action = pm.action_q_with_table(&[s], &off, action_cont, oracle)?;
            max_dev = max_dev.max((q_param - q_action).abs());
        }
    }
    Ok(Prop1Report { env: env.id(), max_abs_dev: max_dev, tolerance, pass: max_dev < tolerance })
}
