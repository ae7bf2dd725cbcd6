use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crosskd::assess::Regime;
use crosskd::distill::DistillMode;
use crosskd::synth::CostModel;

#[derive(Debug, Parser)]
#[command(name = "crosskd", version, about = "Selective cross-task knowledge distillation experiments")]
pub struct Cli {
    /// Experiment config (JSON); explicit flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Default directory for outputs.
    #[arg(long, global = true, env = "CROSSKD_OUT")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a Gaussian class pool.
    GenPool(GenPoolArgs),
    /// Lay sliding windows over a pool and write teacher and target task specs.
    GenTasks(GenTasksArgs),
    /// Train one teacher per window and architecture into a repository.
    TrainTeachers(TrainTeachersArgs),
    /// Rank the repository's teachers for a target task.
    Assess(AssessArgs),
    /// Train a student on a target task, with or without a teacher.
    Distill(DistillArgs),
    /// Record Sinkhorn gradient convergence on random transport problems.
    TraceConvergence(TraceArgs),
    /// Assess every target task and compare with realized student accuracy.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timing {
    /// Record wall-clock seconds.
    Wall,
    /// Leave the seconds column empty so reruns are byte-identical.
    Omit,
}

#[derive(Debug, Args)]
pub struct GenPoolArgs {
    /// Required unless `--config` is given.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Required unless `--config` is given.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Standard deviation of the class prototypes.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Within-class variance.
    #[arg(long)]
    pub covariance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<out>/pool.json`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTasksArgs {
    /// Defaults to `<out>/pool.json`.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub teacher_train: Option<usize>,
    #[arg(long)]
    pub teacher_test: Option<usize>,
    #[arg(long)]
    pub target_train: Option<usize>,
    #[arg(long)]
    pub target_test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<out>/tasks.json`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RepoArgs {
    /// Defaults to `<out>/tasks.json`.
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Defaults to `<out>/repo`.
    #[arg(long)]
    pub repo: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainTeachersArgs {
    #[command(flatten)]
    pub repo: RepoArgs,
    /// Comma-separated architectures, e.g. `linear+norm,mlp32+norm`.
    #[arg(long, value_delimiter = ',')]
    pub architectures: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, value_parser = parse_regime)]
    pub regime: Option<Regime>,
    /// Metric temperature; by default the distillation temperature.
    #[arg(long)]
    pub metric_tau: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Timing::Wall)]
    pub timing: Timing,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[command(flatten)]
    pub repo: RepoArgs,
    /// Window index of the target task.
    #[arg(long)]
    pub target: usize,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// CSV with a `teacher_id` column and extra metric columns to merge.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Defaults to `<out>/assess_target<k>.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "teacher_choice", multiple = false)]
pub struct TeacherChoice {
    /// Teacher id from the manifest.
    #[arg(long)]
    pub teacher: Option<usize>,
    /// Assess the repository first and use the top-ranked teacher.
    #[arg(long)]
    pub auto: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub repo: RepoArgs,
    #[arg(long)]
    pub target: usize,
    #[command(flatten)]
    pub choice: TeacherChoice,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<DistillMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Defaults to `<out>/distill_target<k>`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 256)]
    pub problems: usize,
    /// Side length of each transport problem.
    #[arg(long, default_value_t = 100)]
    pub size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 3.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 5.0)]
    pub logit_scale: f64,
    /// `uniform` or `sphere<d>`.
    #[arg(long, default_value = "uniform")]
    pub cost: CostModel,
    /// Iteration whose gradient serves as the reference; defaults to `--iters`.
    #[arg(long)]
    pub reference: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<out>/convergence.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub repo: RepoArgs,
    /// Target windows; all by default.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<usize>>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Defaults to `<out>/report`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Cli {
    /// Checks that clap cannot express on its own; exits with status 2 like
    /// any other usage error.
    pub fn validate(self) -> Self {
        if let Command::GenPool(a) = &self.command {
            if self.config.is_none() {
                let missing: Vec<&str> = [("--classes", a.classes.is_none()), ("--dim", a.dim.is_none())]
                    .into_iter()
                    .filter_map(|(flag, absent)| absent.then_some(flag))
                    .collect();
                if !missing.is_empty() {
                    use clap::CommandFactory;
                    Cli::command()
                        .error(
                            clap::error::ErrorKind::MissingRequiredArgument,
                            format!("gen-pool needs {} when no --config is given", missing.join(" and ")),
                        )
                        .exit();
                }
            }
        }
        self
    }
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: crosskd::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<DistillMode, String> {
    s.parse().map_err(|e: crosskd::Error| e.to_string())
}
