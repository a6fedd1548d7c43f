//! Command-line front end: training runs, multi-seed sweeps, bandit
//! policy-evaluation with critic landscapes, the estimator variance study,
//! exact consistency checks, and sweep summaries.
//!
//! Every artifact is UTF-8 CSV or JSON. Relative output directories are
//! joined under the `DPPG_LAB_OUT` environment variable when it is set.

use clap::{Args, Parser, Subcommand};
use dppg_lab::agents::{rng_stream, stream, AgentConfig, DppgTdConfig, RunLog};
use dppg_lab::critic::{run_pe_bandit, PeConfig};
use dppg_lab::envs::env_from_id;
use dppg_lab::error::{Error, Result};
use dppg_lab::estimators::variance_study;
use dppg_lab::harness::{
    critic_landscape, default_window, learning_curve, read_manifest, read_run_csv, resolve_out,
    sweep, summarize_sweep, train_single, RunConfig, BOOTSTRAP_RESAMPLES, CURVE_POINTS,
};
use dppg_lab::nn::Mlp;
use dppg_lab::param_mdp::{check_prop1, OracleConfig, ParamMdp};
use dppg_lab::policy::{PolicyHead, PolicySpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "dppg-lab",
    version,
    about = "Training and analysis runs for agents whose actions are distribution parameters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent on one seed and write its run CSV.
    Train(TrainArgs),
    /// Run every seed of a configuration and write per-seed CSVs plus
    /// manifest.json.
    Sweep(SweepArgs),
    /// Train critics under fixed behavior parameters on a bandit and write
    /// outcome JSONs plus critic-landscape CSVs for the interpolated and
    /// standard updates.
    PeBandit(PeArgs),
    /// Compare single-sample stochastic gradient estimates against the
    /// deterministic parameter-space gradient under exact critics.
    VarianceStudy(VarianceArgs),
    /// Exact consistency checks.
    Check {
        #[command(subcommand)]
        what: CheckCmd,
    },
    /// Aggregate a sweep directory into summary.json and curve.csv.
    Summarize(SummarizeArgs),
}

#[derive(Subcommand)]
enum CheckCmd {
    /// Consistency property #1: state and action values agree between the
    /// parameter-space view of each task and the raw process, across a
    /// family of probe policies, to the per-task tolerance.
    Prop1(Prop1Args),
}

/// Hyperparameter resolution: preset, then TOML file, then flags.
#[derive(Args)]
struct ConfigArgs {
    /// Base hyperparameter preset.
    #[arg(long, value_parser = ["bandit", "control"], default_value = "bandit")]
    preset: String,
    /// TOML file with hyperparameter fields, applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Actor and target updates run on steps that are multiples of this.
    #[arg(long)]
    policy_delay: Option<usize>,
    /// Steps acted uniformly at random before the actor takes over.
    #[arg(long)]
    uniform_steps: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    /// Comma-separated hidden layer widths, e.g. 16,16.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Behavior-noise scale of the deterministic action-space agent.
    #[arg(long)]
    explore_sigma: Option<f64>,
    #[arg(long)]
    target_noise_sigma: Option<f64>,
    #[arg(long)]
    target_noise_clip: Option<f64>,
    /// Bootstrap from a Polyak copy of the actor (true/false). Defaults to
    /// true for td3 and false elsewhere.
    #[arg(long)]
    actor_target: Option<bool>,
    /// Train the parameter-space critic at interpolated inputs (true/false).
    #[arg(long)]
    icl: Option<bool>,
    /// Give the parameter-space agent a point-mass (Dirac) head.
    #[arg(long, default_value_t = false)]
    dirac: bool,
    /// Critic step size of the linear analysis agent.
    #[arg(long)]
    alpha_w: Option<f64>,
    /// Actor step size of the linear analysis agent.
    #[arg(long)]
    alpha_theta: Option<f64>,
    /// Batch size of the linear analysis agent.
    #[arg(long)]
    batch_m: Option<usize>,
    /// Critic init scale of the linear analysis agent.
    #[arg(long)]
    w_init_scale: Option<f64>,
}

/// TOML view of the hyperparameters; unknown keys are rejected so typos
/// fail loudly.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    batch_size: Option<usize>,
    lr: Option<f64>,
    tau: Option<f64>,
    policy_delay: Option<usize>,
    uniform_steps: Option<usize>,
    buffer_capacity: Option<usize>,
    hidden: Option<Vec<usize>>,
    sigma_min: Option<f64>,
    sigma_max: Option<f64>,
    explore_sigma: Option<f64>,
    target_noise_sigma: Option<f64>,
    target_noise_clip: Option<f64>,
    actor_target: Option<bool>,
    icl: Option<bool>,
    dppgtd: Option<DppgTdFile>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DppgTdFile {
    alpha_w: Option<f64>,
    alpha_theta: Option<f64>,
    batch_m: Option<usize>,
    w_init_scale: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self, agent: &str) -> Result<(AgentConfig, Option<DppgTdConfig>)> {
        let mut cfg = match self.preset.as_str() {
            "control" => AgentConfig::control(),
            _ => AgentConfig::bandit(),
        };
        cfg.actor_target = agent == "td3";
        let mut td = DppgTdConfig::standard();

        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            let file: FileConfig = toml::from_str(&text)
                .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
            apply(&mut cfg, &file);
            if let Some(f) = &file.dppgtd {
                apply_td(&mut td, f);
            }
        }

        let flag_file = FileConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            tau: self.tau,
            policy_delay: self.policy_delay,
            uniform_steps: self.uniform_steps,
            buffer_capacity: self.buffer_capacity,
            hidden: self.hidden.clone(),
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            explore_sigma: self.explore_sigma,
            target_noise_sigma: self.target_noise_sigma,
            target_noise_clip: self.target_noise_clip,
            actor_target: self.actor_target,
            icl: self.icl,
            dppgtd: None,
        };
        apply(&mut cfg, &flag_file);
        apply_td(
            &mut td,
            &DppgTdFile {
                alpha_w: self.alpha_w,
                alpha_theta: self.alpha_theta,
                batch_m: self.batch_m,
                w_init_scale: self.w_init_scale,
            },
        );

        let td = (agent == "dppgtd").then_some(td);
        Ok((cfg, td))
    }
}

fn apply(cfg: &mut AgentConfig, f: &FileConfig) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = &f.$field { cfg.$field = v.clone(); })*
        };
    }
    set!(
        batch_size,
        lr,
        tau,
        policy_delay,
        uniform_steps,
        buffer_capacity,
        hidden,
        sigma_min,
        sigma_max,
        explore_sigma,
        target_noise_sigma,
        target_noise_clip,
        actor_target,
        icl
    );
}

fn apply_td(cfg: &mut DppgTdConfig, f: &DppgTdFile) {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = f.$field { cfg.$field = v; })*
        };
    }
    set!(alpha_w, alpha_theta, batch_m, w_init_scale);
}

#[derive(Args)]
struct TrainArgs {
    /// Agent id: dpac | td3 | acrp | aclr | acst | dppgtd.
    #[arg(long)]
    agent: String,
    /// Environment id: karmed | bimodal | pointmass | pointmass-disc7.
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Agent id: dpac | td3 | acrp | aclr | acst | dppgtd.
    #[arg(long)]
    agent: String,
    /// Environment id: karmed | bimodal | pointmass | pointmass-disc7.
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    seeds: Vec<u64>,
    /// Run seeds 0..N instead of --seeds.
    #[arg(long, conflicts_with = "seeds")]
    seed_count: Option<u64>,
    /// Concurrent runs; 0 means one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct PeArgs {
    /// Bandit environment id: karmed | bimodal.
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Landscape grid resolution per axis.
    #[arg(long, default_value_t = 41)]
    resolution: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VarianceArgs {
    /// Bandit environment id: karmed | bimodal.
    #[arg(long)]
    env: String,
    /// Single-sample estimates to draw.
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Prop1Args {
    /// Environment id, or "all" for every registered environment.
    #[arg(long, default_value = "all")]
    env: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Sweep directory holding manifest.json and per-seed CSVs.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
    resamples: usize,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::PeBandit(a) => cmd_pe(a),
        Cmd::VarianceStudy(a) => cmd_variance(a),
        Cmd::Check { what: CheckCmd::Prop1(a) } => cmd_prop1(a),
        Cmd::Summarize(a) => cmd_summarize(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let (config, dppgtd) = a.cfg.resolve(&a.agent)?;
    let out_dir = resolve_out(&a.out);
    let rc = RunConfig {
        agent: a.agent.clone(),
        env: a.env.clone(),
        steps: a.steps,
        seeds: vec![a.seed],
        config,
        dppgtd,
        dirac: a.cfg.dirac,
        out_dir: out_dir.clone(),
        workers: 1,
    };
    rc.validate()?;
    let log = train_single(&rc, a.seed)?;
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join(format!("{}_{}_seed{}.csv", a.agent, a.env, a.seed));
    log.write_csv(&path)?;
    println!("wrote {}", path.display());
    match log.final_performance() {
        Some(f) => println!("final performance (mean return over final 10% of steps): {f}"),
        None => println!("final performance: none (no episode ended in the final 10% of steps)"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let (config, dppgtd) = a.cfg.resolve(&a.agent)?;
    let seeds = match a.seed_count {
        Some(n) => (0..n).collect(),
        None => a.seeds.clone(),
    };
    let rc = RunConfig {
        agent: a.agent,
        env: a.env,
        steps: a.steps,
        seeds,
        config,
        dppgtd,
        dirac: a.cfg.dirac,
        out_dir: resolve_out(&a.out),
        workers: a.workers,
    };
    let manifest = sweep(&rc)?;
    let mut failed = 0;
    for rec in &manifest.runs {
        if rec.status == "ok" {
            match rec.final_performance {
                Some(f) => println!("seed {}: final {f} ({:.2}s)", rec.seed, rec.wall_seconds),
                None => println!("seed {}: no final-window episode", rec.seed),
            }
        } else {
            failed += 1;
            println!("seed {}: aborted — {}", rec.seed, rec.status);
        }
    }
    println!("manifest: {}", rc.out_dir.join("manifest.json").display());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_pe(a: PeArgs) -> Result<ExitCode> {
    let env = env_from_id(&a.env)?;
    let bandit = AgentConfig::bandit();
    let spec = PolicySpec::stochastic_for_env(&env, (bandit.sigma_min, bandit.sigma_max))?;
    let pm = ParamMdp::new(env, spec)?;
    let out_dir = resolve_out(&a.out);
    std::fs::create_dir_all(&out_dir)?;
    let state = pm.env.reset(&mut rng_stream(a.seed, stream::ENV));
    for icl in [true, false] {
        let label = if icl { "icl" } else { "standard" };
        let cfg = PeConfig { steps: a.steps, ..PeConfig::standard(icl, a.seed) };
        let (critic, outcome) = run_pe_bandit(&pm, &cfg)?;
        let json = out_dir.join(format!("pe_{}_{label}.json", a.env));
        std::fs::write(&json, serde_json::to_string_pretty(&outcome)?)?;
        let landscape = critic_landscape(&critic, &pm.spec, &state, a.resolution)?;
        let csv = out_dir.join(format!("landscape_{}_{label}.csv", a.env));
        std::fs::write(&csv, landscape)?;
        match &outcome.vertex_values {
            Some(v) => println!(
                "{label}: vertex values {v:?} ordered={:?} on-policy error {:.4}",
                outcome.vertices_ordered, outcome.behavior_error
            ),
            None => println!("{label}: on-policy error {:.4}", outcome.behavior_error),
        }
        println!("wrote {} and {}", json.display(), csv.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_variance(a: VarianceArgs) -> Result<ExitCode> {
    let env = env_from_id(&a.env)?;
    let bandit = AgentConfig::bandit();
    let spec = PolicySpec::stochastic_for_env(&env, (bandit.sigma_min, bandit.sigma_max))?;
    let pm = ParamMdp::new(env, spec)?;
    let mut sizes = vec![pm.env.state_dim()];
    sizes.extend_from_slice(&bandit.hidden);
    sizes.push(pm.spec.param_dim());
    let net = Mlp::new(&sizes, &mut rng_stream(a.seed, stream::ACTOR_INIT))?;
    let actor = PolicyHead::new(net, pm.spec.clone())?;
    let mut rng = rng_stream(a.seed, stream::BEHAVIOR);
    let report =
        variance_study(&pm, &actor, a.resamples, &OracleConfig::default(), &mut rng)?;
    let out_dir = resolve_out(&a.out);
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join(format!("variance_{}.json", a.env));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    for s in &report.stochastic {
        println!(
            "{}: trace variance {:.6e}, max |z| vs deterministic reference {:.3}",
            s.id, s.trace_variance, s.max_abs_z
        );
    }
    println!(
        "deterministic reference trace variance {:.1}, bit-stable: {}",
        report.reference.trace_variance, report.reference_bit_deterministic
    );
    println!("wrote {}", path.display());
    Ok(if report.hypothesis_met { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_prop1(a: Prop1Args) -> Result<ExitCode> {
    let ids: Vec<&str> = if a.env == "all" {
        vec!["karmed", "bimodal", "pointmass", "pointmass-disc7"]
    } else {
        vec![a.env.as_str()]
    };
    let out_dir = resolve_out(&a.out);
    std::fs::create_dir_all(&out_dir)?;
    let mut all_pass = true;
    for id in ids {
        let env = env_from_id(id)?;
        let oracle =
            if env.horizon() > 1 { OracleConfig::induction() } else { OracleConfig::default() };
        let report = check_prop1(&env, &oracle)?;
        all_pass &= report.pass;
        println!(
            "{id}: max deviation {:.3e} (tolerance {:.0e}) — {}",
            report.max_abs_dev,
            report.tolerance,
            if report.pass { "pass" } else { "FAIL" }
        );
        let path = out_dir.join(format!("prop1_{id}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        println!("wrote {}", path.display());
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_summarize(a: SummarizeArgs) -> Result<ExitCode> {
    let dir = resolve_out(&a.dir);
    let summary = summarize_sweep(&dir, a.resamples)?;
    let manifest = read_manifest(&dir)?;
    let logs: Vec<RunLog> = manifest
        .runs
        .iter()
        .filter(|r| !r.csv.is_empty())
        .map(|r| -> Result<RunLog> {
            Ok(RunLog {
                agent: manifest.config.agent.clone(),
                env: manifest.config.env.clone(),
                steps: manifest.config.steps,
                seed: r.seed,
                rows: read_run_csv(&dir.join(&r.csv))?,
            })
        })
        .collect::<Result<_>>()?;
    if !logs.is_empty() {
        let curve = learning_curve(
            &logs,
            CURVE_POINTS,
            default_window(manifest.config.steps),
            a.resamples,
        )?;
        let path = dir.join("curve.csv");
        std::fs::write(&path, dppg_lab::harness::curve_to_csv(&curve))?;
        println!("wrote {}", path.display());
    }
    for s in &summary.per_seed {
        match (s.status.as_str(), s.final_performance) {
            ("ok", Some(f)) => println!("seed {}: final {f}", s.seed),
            ("ok", None) => println!("seed {}: no final-window episode", s.seed),
            (status, _) => println!("seed {}: aborted — {status}", s.seed),
        }
    }
    match &summary.final_ci {
        Some(ci) if !ci.degenerate => println!(
            "final performance mean {:.4}, 95% CI [{:.4}, {:.4}] ({} resamples)",
            ci.point, ci.lo, ci.hi, ci.resamples
        ),
        Some(ci) => println!("final performance {:.4} (single seed, no interval)", ci.point),
        None => println!("no completed runs to summarize"),
    }
    println!("wrote {}", dir.join("summary.json").display());
    Ok(ExitCode::SUCCESS)
}
