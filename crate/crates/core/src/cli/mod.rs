//! Pipeline orchestration behind the `sortrl` binary: run configuration,
//! one function per stage, CSV reports and the SVG robustness plot.

mod config;
mod plot;
mod report;
mod stages;
mod verdict;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{eps_grid, RunConfig};
pub use plot::render_svg;
pub use report::{
    read_episodes_csv, read_report_csv, read_sweep_csv, summarize_episodes, write_episodes_csv, write_report_csv,
    EpisodeRow, EvalRow, ReportMeta, SweepCsvRow, REPORT_HEADER,
};
pub use stages::{
    attack_eval_stage, baseline_eval_stage, build_dataset_stage, certify_stage, distill_stage, load_student,
    load_teacher, plot_stage, refresh_report, train_teacher_stage, Artifacts, METHODS,
};
pub use verdict::{robustness_verdict, RobustnessVerdict};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::teacher::default_target_return;

#[derive(Debug, Parser)]
#[command(name = "sortrl", version, about = "Sort-network policy distillation, attacks and certificates")]
pub struct Cli {
    /// JSON run configuration; values override the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// cartpole, acrobot or mountaincar.
    #[arg(long, global = true)]
    pub env: Option<String>,
    /// Use the reduced network and iteration budget as the base config.
    #[arg(long, global = true)]
    pub ci: bool,
    /// Override any config field: `--set distill.iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the expert (DQN or scripted) and save its checkpoint.
    TrainTeacher,
    /// Roll out the teacher and save (state, action) pairs.
    BuildDataset,
    /// Train the sort-network student on the dataset.
    Distill,
    /// Sweep the student over the ε grid under the configured attack.
    AttackEval,
    /// Same sweep against the teacher network.
    BaselineEval,
    /// Margin certificates and certification rates on clean rollouts.
    Certify,
    /// Redraw the SVG from report.csv.
    Plot,
    /// Every stage in order, then the robustness checks (exit code 3 on failure).
    Run,
    /// Print the resolved configuration.
    ShowConfig,
}

impl Cli {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut sets = Vec::new();
        if let Some(env) = &self.env {
            let kind: EnvKind = env.parse()?;
            sets.push(format!("env=\"{}\"", kind.name()));
        }
        if let Some(seed) = self.seed {
            sets.push(format!("seed={seed}"));
        }
        if let Some(out) = &self.out {
            sets.push(format!("out_dir={}", serde_json::to_string(out)?));
        }
        sets.extend(self.overrides.iter().cloned());
        if self.ci {
            RunConfig::resolve_over(RunConfig::ci(), self.config.as_deref(), &sets)
        } else {
            RunConfig::resolve(self.config.as_deref(), &sets)
        }
    }
}

/// Exit code for an error: 1 usage or config, 2 missing upstream
/// artifact, 3 acceptance threshold not met.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact(_) => 2,
        Error::TrainingFailed(_) | Error::Acceptance(_) => 3,
        _ => 1,
    }
}

/// Caps the worker pool when `SORTRL_THREADS` is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SORTRL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("SORTRL_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli, log: &mut dyn FnMut(&str)) -> Result<()> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::TrainTeacher => train_teacher_stage(&cfg, log).map(|_| ()),
        Command::BuildDataset => build_dataset_stage(&cfg, log).map(|_| ()),
        Command::Distill => distill_stage(&cfg, log).map(|_| ()),
        Command::AttackEval => attack_eval_stage(&cfg, log).map(|_| ()),
        Command::BaselineEval => baseline_eval_stage(&cfg, log).map(|_| ()),
        Command::Certify => certify_stage(&cfg, log).map(|_| ()),
        Command::Plot => plot_stage(&cfg, log),
        Command::ShowConfig => {
            log(&cfg.to_json()?);
            Ok(())
        }
        Command::Run => {
            let verdict = run_all(&cfg, log)?;
            for (name, ok) in &verdict.checks {
                log(&format!("[{}] {name}", if *ok { "pass" } else { "FAIL" }));
            }
            if verdict.passed() {
                Ok(())
            } else {
                Err(Error::Acceptance(verdict.failures().join("; ")))
            }
        }
    }
}

/// All stages in order, ending with the plot; returns the robustness checks on the final report.
pub fn run_all(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<RobustnessVerdict> {
    train_teacher_stage(cfg, log)?;
    build_dataset_stage(cfg, log)?;
    distill_stage(cfg, log)?;
    attack_eval_stage(cfg, log)?;
    baseline_eval_stage(cfg, log)?;
    let rows = certify_stage(cfg, log)?;
    plot_stage(cfg, log)?;
    let target = cfg.teacher.target_return.unwrap_or_else(|| default_target_return(cfg.env));
    Ok(robustness_verdict(&rows, target, cfg.distill.eps, 2.0 * cfg.distill.eps))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match execute(&cli, &mut |line| eprintln!("{line}")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
