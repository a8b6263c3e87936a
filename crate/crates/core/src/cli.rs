//! Command-line front end: `vertices`, `train`, `estimate-eps`, `verify` and
//! `simulate`.
//!
//! Every command writes its artifacts under the output directory together
//! with `manifest-<command>.json` (config hash, seed, versions and file
//! hashes). Wall-clock data goes to `metadata-<command>.json` only, so all
//! other files are byte-identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{estimate_eps, ApproxMeasure};
use crate::buffer::{fibonacci_vertex_count, vertices_csv, BufferSpec};
use crate::config::ExperimentConfig;
use crate::env::{rollout, trajectory_csv_header, Environment};
use crate::error::{Error, Result};
use crate::police::{PolicedPolicy, Policy};
use crate::train::{train, training_log_csv, Checkpoint, PolicyKind};
use crate::verify::{check_trajectory, verify_dissipation, violations_csv, TrajectoryReport};

/// Exit code of a malformed or invalid configuration.
pub const EXIT_CONFIG: u8 = 2;
/// Exit code of a checkpoint that does not fit the configured environment.
pub const EXIT_CHECKPOINT: u8 = 3;
/// Exit code of every other failure.
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "policed",
    version,
    about = "Buffers, training and certificates for POLICEd policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Experiment TOML file, or the name of a shipped preset.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct CheckpointArg {
    /// Training checkpoint or bare policy file; defaults to `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Baseline,
    Policed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerates the buffer vertices.
    Vertices {
        #[command(flatten)]
        common: Common,
    },
    /// Trains a policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the policy kind of the config.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Estimates the approximation measure of a trained policy.
    EstimateEps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        checkpoint: CheckpointArg,
    },
    /// Checks the dissipation condition at every buffer vertex.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Uses this approximation measure instead of estimating one.
        #[arg(long, conflicts_with = "eps_file")]
        eps: Option<f64>,
        /// Reads the approximation measure from an `estimate-eps` output.
        #[arg(long)]
        eps_file: Option<PathBuf>,
    },
    /// Rolls out the policy and monitors every buffer entry.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Overrides the number of rollouts of the config.
        #[arg(long)]
        rollouts: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Vertices { .. } => "vertices",
            Command::Train { .. } => "train",
            Command::EstimateEps { .. } => "estimate-eps",
            Command::Verify { .. } => "verify",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Vertices { common }
            | Command::Train { common, .. }
            | Command::EstimateEps { common, .. }
            | Command::Verify { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::IncompatibleCheckpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_FAILURE,
    }
}

/// Aggregate result of `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rollouts: usize,
    pub entered: usize,
    pub violating: usize,
    pub reports: Vec<TrajectoryReport>,
}

/// Hash and version information of one command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub package: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

struct Context {
    cfg: ExperimentConfig,
    config_hash: String,
    seed: u64,
    out: PathBuf,
    env: Box<dyn Environment>,
    spec: BufferSpec,
    written: Vec<(String, String)>,
}

impl Context {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.written
            .push((rel.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, &text)
    }

    fn checkpoint_path(&self, arg: &CheckpointArg) -> PathBuf {
        arg.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.json"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs one command. Failing certificates are a successful run.
pub fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let (cfg, text) = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.train.seed);
    let cfg = match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let (env, spec) = cfg.build().map_err(|e| Error::Config(e.to_string()))?;
    let mut ctx = Context {
        cfg,
        config_hash: sha256_hex(text.as_bytes()),
        seed,
        out,
        env,
        spec,
        written: Vec::new(),
    };
    fs::create_dir_all(&ctx.out)?;

    match &cli.command {
        Command::Vertices { .. } => cmd_vertices(&mut ctx)?,
        Command::Train { kind, .. } => cmd_train(&mut ctx, *kind)?,
        Command::EstimateEps { checkpoint, .. } => cmd_estimate_eps(&mut ctx, checkpoint)?,
        Command::Verify {
            checkpoint,
            eps,
            eps_file,
            ..
        } => cmd_verify(&mut ctx, checkpoint, *eps, eps_file.as_deref())?,
        Command::Simulate {
            checkpoint,
            rollouts,
            ..
        } => cmd_simulate(&mut ctx, checkpoint, *rollouts)?,
    }

    let name = cli.command.name();
    let mut files: Vec<ManifestFile> = ctx
        .written
        .iter()
        .map(|(path, sha256)| ManifestFile {
            path: path.clone(),
            sha256: sha256.clone(),
        })
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command: name.into(),
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: ctx.config_hash.clone(),
        seed: ctx.seed,
        files,
    };
    ctx.write_json(&format!("manifest-{name}.json"), &manifest)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let metadata = serde_json::json!({ "created_unix": created, "config": common.config });
    ctx.write_json(&format!("metadata-{name}.json"), &metadata)?;
    Ok(())
}

fn cmd_vertices(ctx: &mut Context) -> Result<()> {
    let vertices = ctx.spec.enumerate_vertices()?;
    let csv = vertices_csv(&vertices, ctx.spec.n);
    ctx.write("vertices.csv", &csv)?;
    let report = ctx.spec.validate_lower_bounds();
    ctx.write_json("lower_bounds.json", &report)?;
    println!("{} vertices", vertices.len());
    if ctx.spec.has_tight_lower_bounds() {
        let aux = ctx.spec.aux.vertices().len() as u64;
        let f = fibonacci_vertex_count(ctx.spec.r);
        println!("Fibonacci prediction: {f} x {aux} = {}", f * aux);
    }
    for c in report.violations() {
        log::warn!(
            "lower bound of s{} = {} exceeds {}",
            c.index,
            c.value,
            c.required_max
        );
    }
    Ok(())
}

fn cmd_train(ctx: &mut Context, kind: Option<KindArg>) -> Result<()> {
    let mut tc = ctx.cfg.train.clone();
    if let Some(k) = kind {
        tc.kind = match k {
            KindArg::Baseline => PolicyKind::Baseline,
            KindArg::Policed => PolicyKind::Policed,
        };
    }
    let mut pending = Vec::new();
    let result = train(ctx.env.as_ref(), &ctx.spec, &tc, &mut |ck| {
        pending.push((
            format!("checkpoints/iter_{:06}.json", ck.iteration),
            ck.to_json()? + "\n",
        ));
        Ok(())
    });
    for (path, text) in &pending {
        ctx.write(path, text)?;
    }
    let outcome = result?;
    ctx.write("training_log.csv", &training_log_csv(&outcome.log))?;
    let ck = outcome.checkpoint(ctx.env.as_ref(), tc.kind);
    ctx.write("checkpoint.json", &(ck.to_json()? + "\n"))?;
    ctx.write("policy.json", &(outcome.policy.to_json()? + "\n"))?;
    if let Some(m) = &outcome.eps {
        ctx.write_json("train_eps.json", m)?;
    }
    let last = outcome.log.last();
    println!(
        "trained {:?} policy: {} log rows, final min vertex margin {}",
        tc.kind,
        outcome.log.len(),
        last.map_or(f64::NAN, |r| r.min_vertex_margin)
    );
    Ok(())
}

/// Loads a training checkpoint or a bare policy file and checks that it fits `env`.
pub fn load_policy(path: &Path, env: &dyn Environment) -> Result<PolicedPolicy> {
    let text = fs::read_to_string(path)?;
    let policy = match Checkpoint::from_json(&text) {
        Ok(ck) => {
            ck.check_env(env)?;
            ck.policy
        }
        Err(_) => PolicedPolicy::from_json(&text)?,
    };
    if policy.state_dim() != env.state_dim() || policy.action_dim() != env.action_dim() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "policy maps {} -> {} but {} needs {} -> {}",
            policy.state_dim(),
            policy.action_dim(),
            env.id(),
            env.state_dim(),
            env.action_dim()
        )));
    }
    Ok(policy)
}

fn cmd_estimate_eps(ctx: &mut Context, arg: &CheckpointArg) -> Result<()> {
    let policy = load_policy(&ctx.checkpoint_path(arg), ctx.env.as_ref())?;
    let m = estimate_eps(ctx.env.as_ref(), &policy, &ctx.spec, &ctx.cfg.verify.eps)?;
    ctx.write_json("eps.json", &m)?;
    println!(
        "eps = {} (fit {}, {} samples)",
        m.eps, m.eps_fit, m.sample_count
    );
    Ok(())
}

fn cmd_verify(
    ctx: &mut Context,
    arg: &CheckpointArg,
    eps: Option<f64>,
    eps_file: Option<&Path>,
) -> Result<()> {
    let policy = load_policy(&ctx.checkpoint_path(arg), ctx.env.as_ref())?;
    let measure = match (eps, eps_file) {
        (Some(e), _) => ApproxMeasure::manual(e)?,
        (None, Some(path)) => serde_json::from_str(&fs::read_to_string(path)?)?,
        (None, None) => estimate_eps(ctx.env.as_ref(), &policy, &ctx.spec, &ctx.cfg.verify.eps)?,
    };
    let cert = verify_dissipation(ctx.env.as_ref(), &policy, &ctx.spec, &measure)?;
    ctx.write_json("certificate.json", &cert)?;
    println!(
        "verdict: {} (eps {}, min margin {})",
        cert.verdict,
        measure.eps,
        cert.min_margin().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_simulate(ctx: &mut Context, arg: &CheckpointArg, rollouts: Option<usize>) -> Result<()> {
    let policy = load_policy(&ctx.checkpoint_path(arg), ctx.env.as_ref())?;
    let count = rollouts.unwrap_or(ctx.cfg.verify.rollouts);
    let env = ctx.env.as_ref();
    let (n, m) = (env.state_dim(), env.action_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.verify.seed);
    let mut reports = Vec::with_capacity(count);
    let mut violations = Vec::new();
    let mut portrait = String::from("rollout,y,ydot\n");
    let mut files = Vec::with_capacity(count);
    for k in 0..count {
        let x0 = match &ctx.cfg.verify.initial {
            Some(b) => b.sample(&mut rng),
            None => env.sample_initial(&mut rng),
        };
        let traj = rollout(env, &policy, &x0)?;
        for s in &traj.states_s {
            let _ = writeln!(portrait, "{k},{},{}", s[0], s[1]);
        }
        let report = check_trajectory(&traj, &ctx.spec);
        violations.extend(report.violations.iter().cloned().map(|v| (k, v)));
        files.push((
            format!("trajectories/rollout_{k:04}.csv"),
            traj.to_csv(n, m),
        ));
        reports.push(report);
    }
    let summary = SimulationReport {
        rollouts: count,
        entered: reports.iter().filter(|r| r.entered).count(),
        violating: reports.iter().filter(|r| !r.is_safe()).count(),
        reports,
    };
    if count == 0 {
        ctx.write("trajectories/header.csv", &trajectory_csv_header(n, m))?;
    }
    for (path, csv) in files {
        ctx.write(&path, &csv)?;
    }
    ctx.write("phase_portrait.csv", &portrait)?;
    ctx.write("violations.csv", &violations_csv(&violations))?;
    ctx.write_json("report.json", &summary)?;
    println!(
        "{} rollouts, {} entered the buffer, {} with violations",
        summary.rollouts, summary.entered, summary.violating
    );
    Ok(())
}
