//! Experiment orchestration: multi-seed sweeps with per-seed artifacts, a
//! percentile-bootstrap confidence interval, learning-curve and
//! critic-landscape emission, and summaries recomputed from the artifacts.
//!
//! All interchange formats are UTF-8 CSV and JSON. A sweep populates its
//! output directory with:
//! - `<agent>_<env>_seed<seed>.csv` — one run log per seed, columns
//!   `step,episodic_return,actor_loss,critic_loss`;
//! - `manifest.json` — the configuration echo, its SHA-256 hash, and one
//!   record per seed with wall time, status, and the diagnostic of any
//!   aborted run;
//! - `summary.json` — written by [`summarize_sweep`] from the CSVs.

use crate::agents::{
    run_ac_lr, run_ac_rp, run_ac_st, run_dpac, run_dppg_td_linear, run_td3, AgentConfig,
    DppgTdConfig, RunLog, RunRow,
};
use crate::critic::TwinCritic;
use crate::envs::env_from_id;
use crate::error::{Error, Result};
use crate::param_mdp::ParamMdp;
use crate::policy::{DimSpec, PolicySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Agent identifiers accepted by [`train_single`] and the command line.
pub const AGENT_IDS: [&str; 6] = ["dpac", "td3", "acrp", "aclr", "acst", "dppgtd"];

/// Resample count used for every reported confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Learning curves are aligned onto this many uniform grid points.
pub const CURVE_POINTS: usize = 100;

/// Standard smoothing window: 5% of the training steps.
pub fn default_window(steps: u64) -> u64 {
    (steps / 20).max(1)
}

/// One sweep: an agent, an environment, a step budget, and the seeds to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub agent: String,
    pub env: String,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub config: AgentConfig,
    /// Settings for the linear analysis agent; `None` falls back to its
    /// standard settings with `outer_steps` taken from `steps`.
    #[serde(default)]
    pub dppgtd: Option<DppgTdConfig>,
    /// Give the parameter-space agent a point-mass (Dirac) head instead of
    /// the stochastic one. Only meaningful for `dpac`.
    #[serde(default)]
    pub dirac: bool,
    pub out_dir: PathBuf,
    /// Concurrent runs; 0 means one worker per available core.
    #[serde(default)]
    pub workers: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("step budget must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("a sweep needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        if !AGENT_IDS.contains(&self.agent.as_str()) {
            return Err(Error::Config(format!(
                "unknown agent id '{}' (expected one of {AGENT_IDS:?})",
                self.agent
            )));
        }
        if self.dirac && self.agent != "dpac" {
            return Err(Error::Config(
                "the dirac head only applies to the parameter-space agent 'dpac'".into(),
            ));
        }
        env_from_id(&self.env)?;
        self.config.validate()?;
        if let Some(td) = &self.dppgtd {
            td.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; changes exactly when some
    /// field changes.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        Ok(h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }
}

/// Runs one seed of the configured job and returns its log.
pub fn train_single(rc: &RunConfig, seed: u64) -> Result<RunLog> {
    let env = env_from_id(&rc.env)?;
    match rc.agent.as_str() {
        "dpac" => {
            let spec = if rc.dirac {
                PolicySpec::dirac_for_env(&env)?
            } else {
                PolicySpec::stochastic_for_env(&env, (rc.config.sigma_min, rc.config.sigma_max))?
            };
            let pm = ParamMdp::new(env, spec)?;
            Ok(run_dpac(&pm, &rc.config, rc.steps, seed)?.log)
        }
        "td3" => Ok(run_td3(&env, &rc.config, rc.steps, seed)?.log),
        "acrp" => Ok(run_ac_rp(&env, &rc.config, rc.steps, seed)?.log),
        "aclr" => Ok(run_ac_lr(&env, &rc.config, rc.steps, seed)?.log),
        "acst" => Ok(run_ac_st(&env, &rc.config, rc.steps, seed)?.log),
        "dppgtd" => {
            let spec =
                PolicySpec::stochastic_for_env(&env, (rc.config.sigma_min, rc.config.sigma_max))?;
            let pm = ParamMdp::new(env, spec)?;
            let mut cfg = rc.dppgtd.clone().unwrap_or_else(DppgTdConfig::standard);
            cfg.outer_steps = rc.steps as usize;
            Ok(run_dppg_td_linear(&pm, &cfg, seed)?.log)
        }
        other => Err(Error::Config(format!(
            "unknown agent id '{other}' (expected one of {AGENT_IDS:?})"
        ))),
    }
}

/// Outcome of one seed inside a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// CSV file name inside the sweep directory; empty for aborted runs.
    pub csv: String,
    pub wall_seconds: f64,
    /// `"ok"`, or the diagnostic of an aborted run.
    pub status: String,
    pub final_performance: Option<f64>,
}

/// `manifest.json`: what was run, from which configuration, and how each
/// seed fared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config: RunConfig,
    pub config_hash: String,
    /// Interval method used by every downstream summary.
    pub ci_method: String,
    pub runs: Vec<RunRecord>,
}

/// Runs every seed (concurrently up to `workers`), writes one CSV per
/// completed seed plus `manifest.json`, and returns the manifest. An
/// aborted seed is recorded with its diagnostic; the sweep continues.
pub fn sweep(rc: &RunConfig) -> Result<SweepManifest> {
    rc.validate()?;
    std::fs::create_dir_all(&rc.out_dir)?;
    let job = |&seed: &u64| -> RunRecord {
        let t0 = Instant::now();
        let outcome = train_single(rc, seed).and_then(|log| {
            let name = format!("{}_{}_seed{}.csv", rc.agent, rc.env, seed);
            log.write_csv(&rc.out_dir.join(&name))?;
            Ok((name, log.final_performance()))
        });
        match outcome {
            Ok((name, fp)) => RunRecord {
                seed,
                csv: name,
                wall_seconds: t0.elapsed().as_secs_f64(),
                status: "ok".into(),
                final_performance: fp,
            },
            Err(e) => RunRecord {
                seed,
                csv: String::new(),
                wall_seconds: t0.elapsed().as_secs_f64(),
                status: e.to_string(),
                final_performance: None,
            },
        }
    };
    let runs: Vec<RunRecord> = if rc.workers == 0 {
        rc.seeds.par_iter().map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(rc.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| rc.seeds.par_iter().map(job).collect())
    };
    let manifest = SweepManifest {
        config: rc.clone(),
        config_hash: rc.hash()?,
        ci_method: format!("percentile bootstrap of the mean, {BOOTSTRAP_RESAMPLES} resamples"),
        runs,
    };
    std::fs::write(rc.out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A mean with percentile-bootstrap bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSummary {
    /// Mean of the input values.
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
    /// Set when fewer than two values were available, which makes the
    /// interval meaningless (it collapses onto the point).
    pub degenerate: bool,
}

/// Percentile bootstrap of the mean: `resamples` resampled means, bounds at
/// their 2.5th and 97.5th percentiles (linear interpolation between order
/// statistics). Resample `b` draws its `n` indices in order through
/// `rng.random_range(0..n)`, so a fixed generator makes the interval exactly
/// reproducible.
pub fn bootstrap_ci(values: &[f64], resamples: usize, rng: &mut impl Rng) -> Result<CiSummary> {
    if values.is_empty() {
        return Err(Error::Contract("confidence interval over an empty sample".into()));
    }
    if resamples == 0 {
        return Err(Error::Config("resample count must be positive".into()));
    }
    let n = values.len();
    let point = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(CiSummary { point, lo: point, hi: point, resamples, degenerate: true });
    }
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(f64::total_cmp);
    Ok(CiSummary {
        point,
        lo: percentile(&means, 0.025),
        hi: percentile(&means, 0.975),
        resamples,
        degenerate: false,
    })
}

/// Linear-interpolation quantile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = q * last as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One grid point of an aggregated learning curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Aligns episodic returns from several same-length runs onto a uniform
/// step grid of at most `points` entries. Per grid step `g`, each run
/// contributes the mean of its returns inside `(g - window, g]`, falling
/// back to its most recent return at or before `g` when that window is
/// empty; grid steps before a run's first completed episode skip that run,
/// and steps where no run has finished an episode yet are omitted. Bands
/// are percentile bootstraps across runs, with the per-point generator
/// seeded by the grid index so the curve is reproducible.
pub fn learning_curve(
    logs: &[RunLog],
    points: usize,
    window: u64,
    resamples: usize,
) -> Result<Vec<CurvePoint>> {
    if logs.is_empty() {
        return Err(Error::Contract("learning curve over zero runs".into()));
    }
    if points == 0 {
        return Err(Error::Config("curve needs at least one grid point".into()));
    }
    let steps = logs[0].steps;
    if logs.iter().any(|l| l.steps != steps) {
        return Err(Error::Contract("runs cover different step counts".into()));
    }
    let series: Vec<Vec<(u64, f64)>> = logs.iter().map(|l| l.returns().collect()).collect();
    let mut out = Vec::new();
    let mut prev_g = 0;
    for i in 1..=points as u64 {
        let g = steps * i / points as u64;
        if g == prev_g {
            continue;
        }
        prev_g = g;
        let lo_bound = g.saturating_sub(window);
        let mut vals = Vec::new();
        for s in &series {
            let in_window: Vec<f64> =
                s.iter().filter(|(st, _)| *st > lo_bound && *st <= g).map(|&(_, v)| v).collect();
            if !in_window.is_empty() {
                vals.push(in_window.iter().sum::<f64>() / in_window.len() as f64);
            } else if let Some(&(_, v)) = s.iter().take_while(|(st, _)| *st <= g).last() {
                vals.push(v);
            }
        }
        if vals.is_empty() {
            continue;
        }
        let ci = bootstrap_ci(&vals, resamples, &mut ChaCha8Rng::seed_from_u64(i))?;
        out.push(CurvePoint { step: g, mean: ci.point, ci_lo: ci.lo, ci_hi: ci.hi });
    }
    Ok(out)
}

/// CSV view of a curve, columns `step,mean,ci_lo,ci_hi`.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,mean,ci_lo,ci_hi\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.step, p.mean, p.ci_lo, p.ci_hi);
    }
    out
}

/// Dense parameter-grid evaluation of the first critic head at one state,
/// as CSV. Three-arm categorical heads get a sheared barycentric grid
/// (columns `u0,u1,u2,q`, every row on the simplex); single Gaussian heads
/// get the product grid over `[-1,1]^2` (columns `u_mu,u_sigma,q`). Exactly
/// `resolution^2` data rows either way, suitable for external contour
/// plotting.
pub fn critic_landscape(
    critic: &TwinCritic,
    spec: &PolicySpec,
    state: &[f64],
    resolution: usize,
) -> Result<String> {
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let denom = (resolution - 1) as f64;
    let mut out = String::new();
    match spec.dims() {
        [DimSpec::Categorical { arms: 3 }] => {
            out.push_str("u0,u1,u2,q\n");
            for i in 0..resolution {
                let p0 = i as f64 / denom;
                for j in 0..resolution {
                    let p1 = (1.0 - p0) * j as f64 / denom;
                    let p2 = (1.0 - p0 - p1).max(0.0);
                    let q = critic.q1_value(state, &[p0, p1, p2])?;
                    let _ = writeln!(out, "{p0},{p1},{p2},{q}");
                }
            }
        }
        [DimSpec::Gauss(_)] => {
            out.push_str("u_mu,u_sigma,q\n");
            for i in 0..resolution {
                let u_mu = -1.0 + 2.0 * i as f64 / denom;
                for j in 0..resolution {
                    let u_sigma = -1.0 + 2.0 * j as f64 / denom;
                    let q = critic.q1_value(state, &[u_mu, u_sigma])?;
                    let _ = writeln!(out, "{u_mu},{u_sigma},{q}");
                }
            }
        }
        _ => {
            return Err(Error::Contract(
                "landscape gridding needs a three-arm categorical or single Gaussian parameter space"
                    .into(),
            ))
        }
    }
    Ok(out)
}

/// Parses a run CSV back into rows. The uniform-phase marker is not part of
/// the CSV and comes back `false`.
pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("step,episodic_return,actor_loss,critic_loss") => {}
        other => {
            return Err(Error::Serde(format!(
                "{}: unexpected header {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let cell = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| {
                    Error::Serde(format!("{}:{}: bad {what}: {e}", path.display(), idx + 2))
                })
            }
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [step, ret, al, cl] = fields[..] else {
            return Err(Error::Serde(format!(
                "{}:{}: expected 4 columns, got {}",
                path.display(),
                idx + 2,
                fields.len()
            )));
        };
        rows.push(RunRow {
            step: step.parse().map_err(|e| {
                Error::Serde(format!("{}:{}: bad step: {e}", path.display(), idx + 2))
            })?,
            episodic_return: cell(ret, "episodic_return")?,
            actor_loss: cell(al, "actor_loss")?,
            critic_loss: cell(cl, "critic_loss")?,
            uniform: false,
        });
    }
    Ok(rows)
}

pub fn read_manifest(dir: &Path) -> Result<SweepManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Final performance of one seed inside a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub final_performance: Option<f64>,
    pub status: String,
}

/// `summary.json`: per-seed final performance recomputed from the CSVs plus
/// a bootstrap interval over the seeds that produced one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub agent: String,
    pub env: String,
    pub steps: u64,
    pub per_seed: Vec<SeedFinal>,
    pub final_ci: Option<CiSummary>,
}

/// Reads a sweep directory, recomputes every final performance from the
/// CSV artifacts (mean episodic return over the final 10% of steps), writes
/// `summary.json`, and returns the summary. The interval generator is fixed,
/// so summarizing twice gives identical output.
pub fn summarize_sweep(dir: &Path, resamples: usize) -> Result<SweepSummary> {
    let manifest = read_manifest(dir)?;
    let mut per_seed = Vec::new();
    let mut finals = Vec::new();
    for rec in &manifest.runs {
        let fp = if rec.csv.is_empty() {
            None
        } else {
            let rows = read_run_csv(&dir.join(&rec.csv))?;
            RunLog {
                agent: manifest.config.agent.clone(),
                env: manifest.config.env.clone(),
                steps: manifest.config.steps,
                seed: rec.seed,
                rows,
            }
            .final_performance()
        };
        if let Some(v) = fp {
            finals.push(v);
        }
        per_seed.push(SeedFinal {
            seed: rec.seed,
            final_performance: fp,
            status: rec.status.clone(),
        });
    }
    let final_ci = if finals.is_empty() {
        None
    } else {
        Some(bootstrap_ci(&finals, resamples, &mut ChaCha8Rng::seed_from_u64(0))?)
    };
    let summary = SweepSummary {
        agent: manifest.config.agent.clone(),
        env: manifest.config.env.clone(),
        steps: manifest.config.steps,
        per_seed,
        final_ci,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Output-root override: relative paths are joined under the
/// `DPPG_LAB_OUT` environment variable when it is set; absolute paths and
/// an unset variable pass through unchanged.
pub fn resolve_out(dir: &Path) -> PathBuf {
    join_root(std::env::var_os("DPPG_LAB_OUT").map(PathBuf::from).as_deref(), dir)
}

fn join_root(root: Option<&Path>, dir: &Path) -> PathBuf {
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir.to_path_buf(),
    }
}
