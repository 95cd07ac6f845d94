//! One seeded training run: metrics file, summary and abort diagnostics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fixpo_core::rng::{stream_rng, Stream};
use fixpo_core::{
    policy_improvement_step, EnvSet, Error as CoreError, FixPo, PolicyOptimizer, PolicyParams,
    PpoClip, StepReport, TrajectoryBatch,
};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ConfigError, RunConfig};

/// Slack on the exit check, for float rounding in the independent recomputation.
pub const EXIT_KL_TOLERANCE: f64 = 1e-9;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: usize,
    /// Cumulative environment steps including this step's batch.
    pub env_steps: usize,
    pub avg_return: f64,
    pub mean_kl: f64,
    pub max_kl_at_exit: f64,
    pub beta: Option<f64>,
    pub primary_grad_steps: usize,
    pub fixup_grad_steps: usize,
    pub fixup_passes: usize,
    pub entropy: f64,
    pub loss_pi: f64,
    pub loss_vf: f64,
    pub loss_kl: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    /// Numeric columns in file order, for aggregation.
    pub const NUMERIC_FIELDS: [&'static str; 14] = [
        "step",
        "env_steps",
        "avg_return",
        "mean_kl",
        "max_kl_at_exit",
        "beta",
        "primary_grad_steps",
        "fixup_grad_steps",
        "fixup_passes",
        "entropy",
        "loss_pi",
        "loss_vf",
        "loss_kl",
        "wall_ms",
    ];

    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "step" => self.step as f64,
            "env_steps" => self.env_steps as f64,
            "avg_return" => self.avg_return,
            "mean_kl" => self.mean_kl,
            "max_kl_at_exit" => self.max_kl_at_exit,
            "beta" => return self.beta,
            "primary_grad_steps" => self.primary_grad_steps as f64,
            "fixup_grad_steps" => self.fixup_grad_steps as f64,
            "fixup_passes" => self.fixup_passes as f64,
            "entropy" => self.entropy,
            "loss_pi" => self.loss_pi,
            "loss_vf" => self.loss_vf,
            "loss_kl" => self.loss_kl,
            "wall_ms" => self.wall_ms as f64,
            _ => return None,
        })
    }

    fn from_report(r: &StepReport, env_steps: usize, wall_ms: u64) -> Self {
        Self {
            step: r.step,
            env_steps,
            avg_return: r.avg_return,
            mean_kl: r.mean_kl,
            max_kl_at_exit: r.max_kl_at_exit,
            beta: r.beta,
            primary_grad_steps: r.primary_grad_steps,
            fixup_grad_steps: r.fixup_grad_steps,
            fixup_passes: r.fixup_passes,
            entropy: r.entropy,
            loss_pi: r.loss_pi,
            loss_vf: r.loss_vf,
            loss_kl: r.loss_kl,
            wall_ms,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub env: String,
    pub ablation: String,
    pub seed: u64,
    pub steps_completed: usize,
    pub env_steps: usize,
    pub final_avg_return: Option<f64>,
    pub best_avg_return: Option<f64>,
    pub max_kl_at_exit: Option<f64>,
    pub eps_kl: f64,
    /// Steps whose exit max-KL exceeded `eps_kl`.
    pub steps_over_eps: usize,
    pub total_primary_grad_steps: usize,
    pub total_fixup_grad_steps: usize,
    pub trust_region_enforced: bool,
}

/// Everything a finished run produced, including the per-step reports that
/// carry more detail than the metrics file.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub reports: Vec<StepReport>,
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    /// Training stopped on a violated invariant; details are in `diagnostics`.
    #[error("run aborted at improvement step {step}: {source} (diagnostics: {})", diagnostics.display())]
    Abort {
        step: usize,
        source: CoreError,
        diagnostics: PathBuf,
    },
}

impl RunError {
    /// Process exit code: 1 for config or I/O problems, 2 for invariant aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Abort { .. } => 2,
        }
    }
}

/// The training state of one run, advanced one improvement step at a time.
/// All randomness comes from named sub-streams of `cfg.seed`.
pub struct Session {
    cfg: RunConfig,
    params: PolicyParams<f64>,
    optimizer: Box<dyn PolicyOptimizer<f64>>,
    envs: EnvSet<f64>,
    sample_rng: ChaCha8Rng,
    steps: usize,
}

impl Session {
    pub fn new(cfg: &RunConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let envs = EnvSet::<f64>::new(cfg.env, cfg.num_envs, seed);
        let params = PolicyParams::init(
            envs.obs_dim(),
            envs.action_space(),
            &cfg.network,
            &mut stream_rng(seed, Stream::Init),
        )
        .map_err(|e| ConfigError::Invalid(vec![format!("network: {e}")]))?;
        let mb_rng = stream_rng(seed, Stream::Minibatch);
        let tr = cfg.trust_region.clone();
        let built: Result<Box<dyn PolicyOptimizer<f64>>, CoreError> = match cfg.algorithm {
            Algorithm::Fixpo => FixPo::new(tr, &params, mb_rng).map(|o| Box::new(o) as _),
            Algorithm::PpoClip => PpoClip::new(tr, &params, mb_rng).map(|o| Box::new(o) as _),
        };
        Ok(Self {
            optimizer: built.map_err(|e| ConfigError::Invalid(vec![e.to_string()]))?,
            cfg: cfg.clone(),
            params,
            envs,
            sample_rng: stream_rng(seed, Stream::Sampling),
            steps: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams<f64> {
        &self.params
    }

    pub fn enforces_trust_region(&self) -> bool {
        self.optimizer.enforces_trust_region()
    }

    /// Runs one improvement step and returns its report and batch.
    pub fn step(&mut self) -> Result<(StepReport, TrajectoryBatch<f64>), CoreError> {
        let (mut report, batch) = policy_improvement_step(
            &mut self.params,
            self.optimizer.as_mut(),
            &mut self.envs,
            &self.cfg.rollout,
            self.cfg.batch_timesteps,
            &mut self.sample_rng,
        )?;
        report.step = self.steps;
        self.steps += 1;
        Ok((report, batch))
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const CONFIG_FILE: &str = "config.json";

/// Trains per `cfg`, writing `config.json`, `metrics.jsonl` (one line per
/// completed improvement step, flushed as it goes) and `summary.json` into
/// `cfg.out_dir`. On an invariant abort `diagnostics.json` is written instead
/// of the summary.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_json() + "\n")?;
    let mut metrics = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);

    let mut session = Session::new(cfg)?;

    let eps = cfg.trust_region.eps_kl;
    let enforced = session.enforces_trust_region();
    let mut records = Vec::with_capacity(cfg.improvement_steps);
    let mut reports = Vec::with_capacity(cfg.improvement_steps);
    let mut env_steps = 0;
    let started = Instant::now();

    for step in 0..cfg.improvement_steps {
        let report = match session.step() {
            Ok((report, _)) => report,
            Err(source) => {
                metrics.flush()?;
                return Err(abort(&out_dir, cfg, step, &records, source)?);
            }
        };
        env_steps += report.batch_steps;
        let wall_ms = if cfg.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let rec = MetricsRecord::from_report(&report, env_steps, wall_ms);
        serde_json::to_writer(&mut metrics, &rec).map_err(std::io::Error::from)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        log::info!(
            "step {step}: return {:.3}, max KL {:.4}, fixup steps {}",
            rec.avg_return,
            rec.max_kl_at_exit,
            rec.fixup_grad_steps
        );

        // The fixup phase guarantees this; reaching it means a bug, so stop loudly.
        if enforced && report.max_kl_at_exit > eps + EXIT_KL_TOLERANCE {
            let source = CoreError::Numerical(format!(
                "trust region violated at exit: max KL {} > eps_kl {eps}",
                report.max_kl_at_exit
            ));
            records.push(rec);
            return Err(abort(&out_dir, cfg, step, &records, source)?);
        }
        records.push(rec);
        reports.push(report);
    }

    let summary = summarize(cfg, &records, enforced);
    fs::write(
        out_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)? + "\n",
    )?;
    Ok(RunOutcome {
        records,
        reports,
        summary,
        out_dir,
    })
}

fn summarize(cfg: &RunConfig, records: &[MetricsRecord], enforced: bool) -> RunSummary {
    let returns = records.iter().map(|r| r.avg_return);
    RunSummary {
        algorithm: cfg.algorithm,
        env: cfg.env.name().to_string(),
        ablation: cfg.trust_region.ablation.name().to_string(),
        seed: cfg.seed,
        steps_completed: records.len(),
        env_steps: records.last().map_or(0, |r| r.env_steps),
        final_avg_return: records.last().map(|r| r.avg_return),
        best_avg_return: returns.reduce(f64::max),
        max_kl_at_exit: records.iter().map(|r| r.max_kl_at_exit).reduce(f64::max),
        eps_kl: cfg.trust_region.eps_kl,
        steps_over_eps: records
            .iter()
            .filter(|r| r.max_kl_at_exit > cfg.trust_region.eps_kl)
            .count(),
        total_primary_grad_steps: records.iter().map(|r| r.primary_grad_steps).sum(),
        total_fixup_grad_steps: records.iter().map(|r| r.fixup_grad_steps).sum(),
        trust_region_enforced: enforced,
    }
}

fn abort(
    out_dir: &Path,
    cfg: &RunConfig,
    step: usize,
    records: &[MetricsRecord],
    source: CoreError,
) -> Result<RunError, RunError> {
    let mut diag = serde_json::json!({
        "step": step,
        "error": source.to_string(),
        "seed": cfg.seed,
        "steps_completed": records.len(),
        "last_record": records.last(),
    });
    if let CoreError::FixupCap {
        passes,
        max_kl,
        eps_kl,
        beta,
    } = &source
    {
        diag["fixup_cap"] = serde_json::json!({
            "passes": passes, "max_kl": max_kl, "eps_kl": eps_kl, "beta": beta,
        });
    }
    let path = out_dir.join(DIAGNOSTICS_FILE);
    fs::write(
        &path,
        serde_json::to_string_pretty(&diag).map_err(std::io::Error::from)? + "\n",
    )?;
    log::error!("aborting at step {step}: {source}");
    Ok(RunError::Abort {
        step,
        source,
        diagnostics: path,
    })
}

/// Reads a metrics file, failing on the first line that does not match the schema.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| format!("{} line {}: not a metrics record: {e}", path.display(), i + 1))
        })
        .collect()
}
