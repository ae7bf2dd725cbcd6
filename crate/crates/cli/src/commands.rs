use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;

use crosskd::assess::{assess_repository, AssessmentConfig, AssessmentReport};
use crosskd::data::LabeledDataset;
use crosskd::distill::{run_baseline, run_distillation, DistillMode, DistillRun};
use crosskd::models::{empirical_centers, train_supervised, Classifier};
use crosskd::ot::convergence_trace_with_reference;
use crosskd::seed;
use crosskd::store::{
    self, attach_external_metrics, build_manifest, hash_file, load_pool, load_repository, load_tasks, model_file_name,
    read_external_metrics, read_manifest, relative_path, resolve, save_distill_run, save_model, save_pool,
    save_tasks, write_manifest, write_report_csv, FailedTeacher, FileRef, ModelMetadata, RepositoryLock, TaskEntry,
    TaskRole, TaskSet, MODELS_DIR,
};
use crosskd::synth::{make_pool, random_transport_problem, sample_dataset, sliding_windows, ClassPool, TaskSpec};

use crate::args::*;
use crate::config::ExperimentConfig;
use crate::table::{fixed, opt_fixed, Table};

/// Resolved global options.
pub struct Ctx {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}
impl Ctx {
    pub fn new(cli: &Cli) -> Result<Self> {
        let config = ExperimentConfig::load(cli.config.as_deref())?;
        let out = cli
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("crosskd-out"));
        Ok(Self { config, out })
    }

    fn path_or(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn tasks_path(&self, args: &RepoArgs) -> PathBuf {
        self.path_or(&args.tasks, "tasks.json")
    }

    fn repo_path(&self, args: &RepoArgs) -> PathBuf {
        self.path_or(&args.repo, "repo")
    }

    fn apply_metric_flags(&mut self, m: &MetricArgs) {
        if let Some(r) = m.regime {
            self.config.assessment.regime = r;
        }
        if m.metric_tau.is_some() {
            self.config.assessment.tau = m.metric_tau;
        }
        if m.epsilon.is_some() {
            self.config.assessment.epsilon = m.epsilon;
        }
        if let Some(s) = m.seed {
            self.config.seed = s;
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::new(&cli)?;
    match &cli.command {
        Command::GenPool(a) => gen_pool(&mut ctx, a),
        Command::GenTasks(a) => gen_tasks(&mut ctx, a),
        Command::TrainTeachers(a) => train_teachers(&mut ctx, a),
        Command::Assess(a) => assess(&mut ctx, a),
        Command::Distill(a) => distill(&mut ctx, a),
        Command::TraceConvergence(a) => trace_convergence(&mut ctx, a),
        Command::Report(a) => report(&mut ctx, a),
    }
}

fn gen_pool(ctx: &mut Ctx, a: &GenPoolArgs) -> Result<()> {
    let p = &mut ctx.config.pool;
    if let Some(v) = a.classes {
        p.classes = v;
    }
    if let Some(v) = a.dim {
        p.dim = v;
    }
    if let Some(v) = a.spread {
        p.spread = v;
    }
    if let Some(v) = a.covariance {
        p.covariance = v;
    }
    if let Some(v) = a.seed {
        ctx.config.seed = v;
    }
    let p = &ctx.config.pool;
    let pool = make_pool(p.classes, p.dim, p.spread, p.covariance, ctx.config.seed)?;
    let path = ctx.path_or(&a.output, "pool.json");
    let hash = save_pool(&path, &pool)?;
    println!(
        "pool: {} classes in R^{}, spread {}, covariance {}, seed {}",
        pool.num_classes(),
        pool.dim(),
        pool.spread,
        pool.covariance_scale,
        pool.seed
    );
    println!("wrote {} (sha256 {hash})", path.display());
    Ok(())
}

fn gen_tasks(ctx: &mut Ctx, a: &GenTasksArgs) -> Result<()> {
    let c = &mut ctx.config;
    if let Some(v) = a.window {
        c.windows.size = v;
    }
    if let Some(v) = a.step {
        c.windows.step = v;
    }
    if let Some(v) = a.teacher_train {
        c.teacher_task.train = v;
    }
    if let Some(v) = a.teacher_test {
        c.teacher_task.test = v;
    }
    if let Some(v) = a.target_train {
        c.target_task.train = v;
    }
    if let Some(v) = a.target_test {
        c.target_task.test = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    let pool_path = ctx.path_or(&a.pool, "pool.json");
    let pool = load_pool(&pool_path)?;
    let out = ctx.path_or(&a.output, "tasks.json");
    let c = &ctx.config;
    let tasks = build_task_set(&pool, c, &pool_path, &out)?;
    save_tasks(&out, &tasks)?;

    let mut table = Table::new(&["task_id", "role", "window", "classes", "train/class", "test/class"]);
    for t in &tasks.tasks {
        table.push(vec![
            t.task_id.to_string(),
            format!("{:?}", t.role).to_lowercase(),
            t.window.to_string(),
            t.spec.label_set.len().to_string(),
            t.spec.instances_per_class_train.to_string(),
            t.spec.instances_per_class_test.to_string(),
        ]);
    }
    print!("{}", table.render());
    println!("wrote {}", out.display());
    Ok(())
}

/// Teacher tasks get ids `0..W`, target tasks `W..2W`, one per window.
pub fn build_task_set(pool: &ClassPool, c: &ExperimentConfig, pool_path: &Path, out: &Path) -> Result<TaskSet> {
    let windows = sliding_windows(pool, c.windows.size, c.windows.step)?;
    let w = windows.len();
    let mut tasks = Vec::with_capacity(2 * w);
    for (role, sizes, offset) in [(TaskRole::Teacher, &c.teacher_task, 0), (TaskRole::Target, &c.target_task, w)] {
        for (window, labels) in windows.iter().enumerate() {
            tasks.push(TaskEntry {
                task_id: offset + window,
                role,
                window,
                spec: TaskSpec {
                    label_set: labels.clone(),
                    instances_per_class_train: sizes.train,
                    instances_per_class_test: sizes.test,
                    seed: seed::derive(c.seed, &[&"task", &format!("{role:?}"), &window]),
                },
            });
        }
    }
    let out_dir = parent_dir(out);
    std::fs::create_dir_all(&out_dir)?;
    Ok(TaskSet::new(
        FileRef {
            path: relative_path(&out_dir, pool_path)?,
            sha256: hash_file(pool_path)?,
        },
        c.windows.size,
        c.windows.step,
        tasks,
    ))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Task set together with the pool it references, hash-checked.
pub struct Tasks {
    pub set: TaskSet,
    pub pool: ClassPool,
    pub pool_path: PathBuf,
}

pub fn load_task_set(path: &Path) -> Result<Tasks> {
    let set = load_tasks(path).with_context(|| format!("loading tasks {}", path.display()))?;
    let pool_path = resolve(&parent_dir(path), &set.pool.path);
    if hash_file(&pool_path)? != set.pool.sha256 {
        return Err(crosskd::Error::HashMismatch { path: pool_path }.into());
    }
    let pool = load_pool(&pool_path)?;
    Ok(Tasks { set, pool, pool_path })
}

impl Tasks {
    pub fn data(&self, role: TaskRole, window: usize) -> Result<(LabeledDataset, LabeledDataset)> {
        let entry = self
            .set
            .find(role, window)
            .ok_or_else(|| anyhow!("no {role:?} task for window {window}"))?;
        Ok(sample_dataset(&self.pool, &entry.spec)?)
    }

    pub fn teacher_window(&self, task_id: Option<usize>) -> Option<usize> {
        let id = task_id?;
        self.set.tasks.iter().find(|t| t.task_id == id).map(|t| t.window)
    }
}

struct TrainedTeacher {
    id: usize,
    window: usize,
    architecture: String,
    outcome: std::result::Result<(f64, f64), String>,
}

fn train_teachers(ctx: &mut Ctx, a: &TrainTeachersArgs) -> Result<()> {
    if let Some(archs) = &a.architectures {
        ctx.config.teacher_architectures = archs.clone();
    }
    if let Some(e) = a.epochs {
        ctx.config.teacher_optimizer.epochs = e;
    }
    if let Some(s) = a.seed {
        ctx.config.seed = s;
    }
    let tasks_path = ctx.tasks_path(&a.repo);
    let repo = ctx.repo_path(&a.repo);
    let tasks = load_task_set(&tasks_path)?;
    let archs = ctx.config.teacher_architectures()?;
    if archs.is_empty() {
        bail!("no teacher architectures given");
    }
    let _lock = RepositoryLock::acquire(&repo)?;
    let models = repo.join(MODELS_DIR);
    if models.is_dir() {
        for entry in std::fs::read_dir(&models)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "json") {
                std::fs::remove_file(p)?;
            }
        }
    }
    let teacher_tasks: Vec<&TaskEntry> = tasks.set.with_role(TaskRole::Teacher).collect();
    let w = teacher_tasks.len();
    // Ids are architecture-major: id = arch_index * windows + window.
    let jobs: Vec<(usize, usize)> = (0..archs.len()).flat_map(|ai| (0..w).map(move |wi| (ai, wi))).collect();
    let config = &ctx.config;
    let results: Vec<TrainedTeacher> = jobs
        .par_iter()
        .map(|&(ai, wi)| {
            let id = ai * w + wi;
            let task = teacher_tasks[wi];
            let arch = &archs[ai];
            let outcome = (|| -> crosskd::Result<(f64, f64)> {
                let (train, test) = sample_dataset(&tasks.pool, &task.spec)?;
                let init = Classifier::init(
                    arch,
                    train.dim(),
                    train.label_set().to_vec(),
                    &mut seed::rng(seed::derive(config.seed, &[&"teacher-init", &id])),
                )?;
                let mut opt = config.teacher_optimizer.clone();
                opt.seed = seed::derive(config.seed, &[&"teacher-train", &id]);
                let (mut model, _) = train_supervised(&init, &train, &opt)?;
                model.class_centers = Some(empirical_centers(model.embedding(), &train)?);
                let train_acc = model.accuracy(&train);
                let test_acc = model.accuracy(&test);
                let meta = ModelMetadata {
                    teacher_id: Some(id),
                    task_id: Some(task.task_id),
                    seed: Some(config.seed),
                    train_accuracy: Some(train_acc),
                    test_accuracy: Some(test_acc),
                };
                save_model(&models.join(model_file_name(id)), &model, &meta)?;
                info!("teacher {id} ({arch}, window {}) trained", task.window);
                Ok((train_acc, test_acc))
            })();
            TrainedTeacher {
                id,
                window: task.window,
                architecture: arch.to_string(),
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect();

    let mut manifest = build_manifest(&repo, Some(&tasks.pool_path))?;
    let mut table = Table::new(&["teacher_id", "window", "architecture", "train_acc", "test_acc", "status"]);
    for r in &results {
        let (train, test, status) = match &r.outcome {
            Ok((tr, te)) => (fixed(*tr, 4), fixed(*te, 4), "ok".to_string()),
            Err(e) => {
                manifest.failed.push(FailedTeacher {
                    teacher_id: r.id,
                    reason: e.clone(),
                });
                ("-".into(), "-".into(), format!("failed: {e}"))
            }
        };
        table.push(vec![r.id.to_string(), r.window.to_string(), r.architecture.clone(), train, test, status]);
    }
    let hash = write_manifest(&repo, &manifest)?;
    print!("{}", table.render());
    table.write_csv(&repo.join("teachers.csv"))?;
    println!("wrote {} teachers to {} (manifest sha256 {hash})", manifest.entries.len(), repo.display());
    if manifest.is_partial() {
        bail!("{} teachers failed to train; the manifest is marked partial", manifest.failed.len());
    }
    Ok(())
}

/// Loads the repository and, when available, each teacher's training window.
pub fn load_teachers(repo: &Path, tasks: &Tasks) -> Result<(Vec<(usize, Classifier)>, BTreeMap<usize, usize>)> {
    let manifest = read_manifest(repo)?;
    let teachers = load_repository(repo)?;
    let windows = manifest
        .entries
        .iter()
        .filter_map(|e| Some((e.teacher_id, tasks.teacher_window(e.task_id)?)))
        .collect();
    Ok((teachers, windows))
}

pub fn run_assessment(
    config: &AssessmentConfig,
    teachers: &[(usize, Classifier)],
    student_data: &LabeledDataset,
) -> Result<AssessmentReport> {
    Ok(assess_repository(teachers, student_data, config)?)
}

fn print_report(report: &AssessmentReport, windows: &BTreeMap<usize, usize>) {
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by_key(|r| (r.rank.unwrap_or(usize::MAX), r.teacher_id));
    let mut table = Table::new(&["rank", "teacher_id", "window", "metric", "converged", "seconds", "ground_truth_acc"]);
    for r in rows {
        table.push(vec![
            r.rank.map_or("-".into(), |v| v.to_string()),
            r.teacher_id.to_string(),
            windows.get(&r.teacher_id).map_or("-".into(), |w| w.to_string()),
            r.metric.map_or_else(|| r.error.clone().unwrap_or_default(), |m| fixed(m, 6)),
            r.converged.to_string(),
            fixed(r.seconds, 3),
            opt_fixed(r.ground_truth_acc, 4),
        ]);
    }
    print!("{}", table.render());
}

fn assess(ctx: &mut Ctx, a: &AssessArgs) -> Result<()> {
    ctx.apply_metric_flags(&a.metric);
    let tasks = load_task_set(&ctx.tasks_path(&a.repo))?;
    let (teachers, windows) = load_teachers(&ctx.repo_path(&a.repo), &tasks)?;
    let (train, _) = tasks.data(TaskRole::Target, a.target)?;
    let config = ctx.config.assessment_config(a.target)?;
    let mut report = run_assessment(&config, &teachers, &train)?;
    if let Some(ext) = &a.external {
        attach_external_metrics(&mut report, &read_external_metrics(ext)?);
    }
    let out = ctx.path_or(&a.output, &format!("assess_target{}.csv", a.target));
    write_report_csv(&out, &report, a.metric.timing == Timing::Wall)?;
    println!(
        "target window {}, regime {}, tau {} ({})",
        a.target,
        report.regime,
        report.tau,
        if report.tau_coupled { "coupled to distillation" } else { "override" }
    );
    print_report(&report, &windows);
    match report.selected() {
        Some(h) => println!("selected teacher: {h}"),
        None => bail!("no teacher could be assessed"),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn distill(ctx: &mut Ctx, a: &DistillArgs) -> Result<()> {
    ctx.apply_metric_flags(&a.metric);
    let d = &mut ctx.config.distill;
    if let Some(m) = a.mode {
        d.mode = m;
    }
    if let Some(l) = a.lambda {
        d.lambda = l;
    }
    if let Some(t) = a.tau {
        d.tau = t;
    }
    if let Some(e) = a.epochs {
        d.optimizer.epochs = e;
    }
    let mode = ctx.config.distill.mode;
    let tasks = load_task_set(&ctx.tasks_path(&a.repo))?;
    let (train, test) = tasks.data(TaskRole::Target, a.target)?;
    let config = ctx.config.assessment_config(a.target)?;
    let student = config.init_student(&train)?;
    let distill_config = config.student_distill_config(mode);

    let needs_teacher = mode != DistillMode::None || a.choice.teacher.is_some() || a.choice.auto;
    let (run, teacher_id): (DistillRun, Option<usize>) = if needs_teacher {
        let (teachers, _) = load_teachers(&ctx.repo_path(&a.repo), &tasks)?;
        let id = if a.choice.auto {
            let report = run_assessment(&config, &teachers, &train)?;
            let h = report.selected().ok_or_else(|| anyhow!("no teacher could be assessed"))?;
            println!("assessment ({}) selected teacher {h}", report.regime);
            h
        } else {
            a.choice
                .teacher
                .ok_or_else(|| anyhow!("mode {mode} needs --teacher <id> or --auto"))?
        };
        let teacher = &teachers
            .iter()
            .find(|(t, _)| *t == id)
            .ok_or_else(|| anyhow!("teacher {id} is not in the repository"))?
            .1;
        (run_distillation(teacher, &student, &train, &test, &distill_config)?, Some(id))
    } else {
        (run_baseline(&student, &train, &test, &distill_config)?, None)
    };

    let out = ctx.path_or(&a.output, &format!("distill_target{}", a.target));
    std::fs::create_dir_all(&out)?;
    save_distill_run(&out.join("run.json"), &run, teacher_id)?;
    store::write_atomic(&out.join("trace.csv"), run.trace_csv().as_bytes())?;
    let mut table = Table::new(&["target", "teacher", "mode", "train_acc", "test_acc", "unconverged_solves"]);
    table.push(vec![
        a.target.to_string(),
        teacher_id.map_or("-".into(), |t| t.to_string()),
        mode.to_string(),
        fixed(run.train_accuracy, 4),
        fixed(run.test_accuracy, 4),
        run.unconverged_solves.to_string(),
    ]);
    print!("{}", table.render());
    table.write_csv(&out.join("summary.csv"))?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Mean trace over problems: `iteration, seminorm_error, bound, l2_error`.
pub fn convergence_table(a: &TraceArgs, master_seed: u64) -> Result<Table> {
    if a.problems == 0 {
        bail!("--problems must be positive");
    }
    let reference = a.reference.unwrap_or(a.iters);
    let traces: Vec<_> = (0..a.problems)
        .into_par_iter()
        .map(|k| {
            let p = random_transport_problem(a.size, a.cost, a.logit_scale, a.tau, seed::derive(master_seed, &[&"trace", &k]))?;
            convergence_trace_with_reference(&p.mu, &p.nu, &p.cost, a.epsilon, a.iters, reference)
        })
        .collect::<crosskd::Result<_>>()?;
    let n = a.problems as f64;
    let mut table = Table::new(&["iteration", "seminorm_error", "bound", "l2_error"]);
    for t in 1..=a.iters {
        let mean = |f: &dyn Fn(&crosskd::ot::TracePoint) -> f64| traces.iter().map(|tr| f(&tr.points[t])).sum::<f64>() / n;
        table.push(vec![
            t.to_string(),
            store::format_float(mean(&|p| p.seminorm_error)),
            store::format_float(mean(&|p| p.bound)),
            store::format_float(mean(&|p| p.l2_error)),
        ]);
    }
    Ok(table)
}

fn trace_convergence(ctx: &mut Ctx, a: &TraceArgs) -> Result<()> {
    if let Some(s) = a.seed {
        ctx.config.seed = s;
    }
    let table = convergence_table(a, ctx.config.seed)?;
    let out = ctx.path_or(&a.output, "convergence.csv");
    table.write_csv(&out)?;
    let mut shown = Table::new(&["iteration", "seminorm_error", "bound", "l2_error"]);
    for row in table.rows.iter().filter(|r| r[0] == "1" || r[0].parse::<usize>().unwrap() % 10 == 0) {
        shown.push(row.clone());
    }
    print!("{}", shown.render());
    println!("wrote {} ({} rows)", out.display(), table.rows.len());
    Ok(())
}

/// Per-target outcome of the full benchmark.
#[derive(Debug, Clone)]
pub struct TargetOutcome {
    pub target: usize,
    pub report: AssessmentReport,
    pub baseline_acc: f64,
    /// Teachers trained on the target's window.
    pub same_window: Vec<usize>,
}

impl TargetOutcome {
    pub fn same_window_top1(&self) -> bool {
        self.report.selected().is_some_and(|h| self.same_window.contains(&h))
    }
}

/// Assesses every teacher for `target` and measures the accuracy a student
/// reaches when distilled from each of them.
pub fn evaluate_target(
    ctx: &Ctx,
    tasks: &Tasks,
    teachers: &[(usize, Classifier)],
    windows: &BTreeMap<usize, usize>,
    target: usize,
) -> Result<TargetOutcome> {
    let (train, test) = tasks.data(TaskRole::Target, target)?;
    let config = ctx.config.assessment_config(target)?;
    let mut report = run_assessment(&config, teachers, &train)?;
    let student = config.init_student(&train)?;
    let distill_config = config.student_distill_config(DistillMode::Sinkhorn);
    let truth: BTreeMap<usize, f64> = teachers
        .iter()
        .map(|(id, teacher)| {
            info!("target {target}: distilling from teacher {id}");
            let run = run_distillation(teacher, &student, &train, &test, &distill_config)?;
            Ok((*id, run.test_accuracy))
        })
        .collect::<Result<_>>()?;
    report.set_ground_truth(&truth);
    let baseline = run_baseline(&student, &train, &test, &config.student_distill_config(DistillMode::None))?;
    Ok(TargetOutcome {
        target,
        report,
        baseline_acc: baseline.test_accuracy,
        same_window: windows.iter().filter(|(_, &w)| w == target).map(|(&id, _)| id).collect(),
    })
}

fn report(ctx: &mut Ctx, a: &ReportArgs) -> Result<()> {
    ctx.apply_metric_flags(&a.metric);
    let tasks = load_task_set(&ctx.tasks_path(&a.repo))?;
    let (teachers, windows) = load_teachers(&ctx.repo_path(&a.repo), &tasks)?;
    let targets: Vec<usize> = match &a.targets {
        Some(t) => t.clone(),
        None => tasks.set.with_role(TaskRole::Target).map(|t| t.window).collect(),
    };
    let out = ctx.path_or(&a.output, "report");
    std::fs::create_dir_all(&out)?;
    let mut summary = Table::new(&[
        "target",
        "selected",
        "same_window_top1",
        "pearson",
        "spearman",
        "selected_acc",
        "best_acc",
        "baseline_acc",
    ]);
    let mut pearsons = Vec::new();
    for &target in &targets {
        let outcome = evaluate_target(ctx, &tasks, &teachers, &windows, target)?;
        let r = &outcome.report;
        println!("target window {target}:");
        print_report(r, &windows);
        write_report_csv(&out.join(format!("report_target{target}.csv")), r, a.metric.timing == Timing::Wall)?;
        let selected = r.selected();
        let acc = |id: usize| r.row(id).and_then(|row| row.ground_truth_acc);
        let best = r.rows.iter().filter_map(|row| row.ground_truth_acc).fold(f64::NAN, f64::max);
        if let Some(p) = r.pearson {
            pearsons.push(p);
        }
        summary.push(vec![
            target.to_string(),
            selected.map_or("-".into(), |h| h.to_string()),
            outcome.same_window_top1().to_string(),
            opt_fixed(r.pearson, 4),
            opt_fixed(r.spearman, 4),
            opt_fixed(selected.and_then(acc), 4),
            fixed(best, 4),
            fixed(outcome.baseline_acc, 4),
        ]);
    }
    print!("{}", summary.render());
    summary.write_csv(&out.join("summary.csv"))?;
    if !pearsons.is_empty() {
        println!("mean pearson(-metric, accuracy): {:.4}", pearsons.iter().sum::<f64>() / pearsons.len() as f64);
    }
    println!("wrote {}", out.display());
    Ok(())
}
