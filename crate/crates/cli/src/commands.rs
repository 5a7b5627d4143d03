use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use fkan::layers::matched_baseline;
use fkan::{init_model, write_atomic, Checkpoint, Exec, Model, TrainReport, Trainer};
use serde_json::{json, Map, Value};

use crate::config::{usage, Experiment, ExperimentArgs, Task, EXPERIMENT_FILE};
use crate::task::{write_json, Loaded, Reconstruction};

pub const CHECKPOINT_FILE: &str = "checkpoint.fkan";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Continue from a checkpoint; its model configuration replaces the model
    /// flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment file describing the data; defaults to the `experiment.toml`
    /// next to the checkpoint.
    #[arg(long)]
    pub experiment: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the reconstruction into `--output-dir`.
    #[arg(long, requires = "output_dir")]
    pub render: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
}

struct RunResult {
    checkpoint: Checkpoint,
    report: TrainReport,
    metrics: Map<String, Value>,
    recon: Reconstruction,
}

fn fit(exp: &Experiment, loaded: &Loaded, resume: Option<Checkpoint>) -> Result<RunResult> {
    let started = Instant::now();
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(ck.state, &loaded.data, exp.train.clone())?,
        None => Trainer::new(init_model(&exp.model)?, &loaded.data, exp.train.clone())?,
    }
    .with_exec(Exec::default());
    let mut metric = loaded.metric(exp.threshold);
    let total = trainer.total_steps();
    trainer.run(total, &mut metric)?;
    let state = trainer.state();
    let wall = started.elapsed().as_secs_f64();

    let (mut metrics, recon) = loaded.evaluate(&state.model, exp.threshold)?;
    metrics.insert("param_count".into(), json!(state.model.num_params()));
    metrics.insert("steps".into(), json!(state.step));
    metrics.insert("wall_time_seconds".into(), json!(wall));
    let report = state.report.clone();
    Ok(RunResult {
        checkpoint: Checkpoint {
            train_config: Some(exp.train.clone()),
            state,
        },
        report,
        metrics,
        recon,
    })
}

fn write_run(dir: &Path, run: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    run.checkpoint
        .save(&dir.join(CHECKPOINT_FILE))
        .context("writing checkpoint")?;
    run.report
        .write_csv(&dir.join(CONVERGENCE_FILE))
        .context("writing convergence.csv")?;
    run.recon.save(dir)?;
    write_json(&dir.join(METRICS_FILE), &Value::Object(run.metrics.clone()))
}

fn write_experiment(dir: &Path, exp: &Experiment) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(EXPERIMENT_FILE);
    write_atomic(&path, exp.to_toml()?.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_compatible(model: &Model, loaded: &Loaded) -> Result<()> {
    let c = &model.config;
    if c.input_dim != loaded.data.input_dim() || c.output_dim != loaded.data.output_dim() {
        return Err(usage(format!(
            "checkpoint expects d_i={}, d_o={} but the data has d_i={}, d_o={}",
            c.input_dim,
            c.output_dim,
            loaded.data.input_dim(),
            loaded.data.output_dim()
        )));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut exp = Experiment::resolve(args.exp)?;
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let loaded = Loaded::load(&exp)?;
    loaded.adapt(&mut exp);
    if let Some(ck) = &resume {
        exp.model = ck.state.model.config.clone();
        check_compatible(&ck.state.model, &loaded)?;
    }
    exp.validate()?;

    // Nothing is written until training has succeeded.
    let run = fit(&exp, &loaded, resume)?;
    write_run(&args.output_dir, &run)?;
    write_experiment(&args.output_dir, &exp)?;
    println!("{}", serde_json::to_string(&run.metrics)?);
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let sibling = args
        .checkpoint
        .parent()
        .map(|d| d.join(EXPERIMENT_FILE))
        .filter(|p| p.is_file());
    let mut exp = match (args.experiment.as_deref(), args.task) {
        (Some(p), _) => Experiment::load(p)?,
        (None, Some(task)) => Experiment::resolve(ExperimentArgs {
            task: Some(task),
            input: args.input.clone(),
            ..ExperimentArgs::default()
        })?,
        (None, None) => match &sibling {
            Some(p) => Experiment::load(p)?,
            None => {
                return Err(usage(
                    "no experiment.toml next to the checkpoint; pass --task",
                ))
            }
        },
    };
    if let Some(t) = args.task {
        exp.task = t;
    }
    if args.input.is_some() {
        exp.input = args.input;
    }
    if exp.task == Task::Synthetic {
        exp.input = None;
    }
    if let Some(w) = args.width {
        exp.width = w;
    }
    if let Some(f) = args.freqs {
        exp.freqs = f;
    }
    if let Some(t) = args.threshold {
        exp.threshold = t;
    }
    exp.model = ck.state.model.config.clone();
    exp.validate()?;
    let loaded = Loaded::load(&exp)?;
    check_compatible(&ck.state.model, &loaded)?;

    let (mut metrics, recon) = loaded.evaluate(&ck.state.model, exp.threshold)?;
    metrics.insert("param_count".into(), json!(ck.state.model.num_params()));
    if args.render {
        let dir = args.output_dir.as_deref().expect("clap requires it");
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        recon.save(dir)?;
    }
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

/// Threads for `compare`: `FKAN_THREADS` if set, otherwise one per model.
fn compare_threads() -> Result<usize> {
    match std::env::var("FKAN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!(
                "FKAN_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(2),
    }
}

#[cfg(feature = "parallel")]
fn run_pair<A: Send, B: Send>(
    threads: usize,
    a: impl FnOnce() -> A + Send,
    b: impl FnOnce() -> B + Send,
) -> Result<(A, B)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting thread pool")?;
    Ok(pool.install(|| rayon::join(a, b)))
}

#[cfg(not(feature = "parallel"))]
fn run_pair<A, B>(_threads: usize, a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> Result<(A, B)> {
    Ok((a(), b()))
}

fn target_level(task: Task) -> (f64, &'static str) {
    match task {
        Task::Volume => (0.95, "IoU 0.95"),
        _ => (30.0, "30 dB"),
    }
}

fn fmt_metric(m: &Map<String, Value>, key: &str) -> String {
    match m.get(key) {
        Some(Value::Number(n)) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Some(Value::String(s)) => s.clone(),
        _ => "-".into(),
    }
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let mut exp = Experiment::resolve(args.exp)?;
    let loaded = Loaded::load(&exp)?;
    loaded.adapt(&mut exp);
    exp.validate()?;
    let fkan_params = fkan::count_params(&exp.model);
    let (base_model, base_params) = matched_baseline(&exp.model, fkan_params)
        .map_err(|e| usage(format!("cannot match the baseline parameter count: {e}")))?;
    let mut base_exp = exp.clone();
    base_exp.model = base_model;
    exp.baseline = crate::config::Baseline::TanhMlp;
    let threads = compare_threads()?;

    let (fkan_run, base_run) = run_pair(
        threads,
        || fit(&exp, &loaded, None),
        || fit(&base_exp, &loaded, None),
    )?;
    let (fkan_run, base_run) = (fkan_run?, base_run?);

    let out = &args.output_dir;
    write_run(&out.join("fkan"), &fkan_run)?;
    write_run(&out.join("tanh_mlp"), &base_run)?;
    write_experiment(out, &exp)?;

    let mut csv = String::from("step,fkan_loss,fkan_metric,tanh_mlp_loss,tanh_mlp_metric\n");
    for (a, b) in fkan_run.report.records.iter().zip(&base_run.report.records) {
        debug_assert_eq!(a.step, b.step);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            a.step, a.loss, a.metric, b.loss, b.metric
        );
    }
    write_atomic(&out.join(CONVERGENCE_FILE), csv.as_bytes()).context("writing convergence.csv")?;

    let (level, label) = target_level(exp.task);
    let keys: &[&str] = match exp.task {
        Task::Volume => &["iou"],
        _ => &["psnr", "ssim"],
    };
    let mut table = format!(
        "| model | params | {} | steps to {label} | wall s |\n",
        keys.join(" | ")
    );
    let _ = writeln!(table, "|---|---|{}---|---|", "---|".repeat(keys.len()));
    let mut summary = Map::new();
    for (name, run, params) in [
        ("fkan", &fkan_run, fkan_params),
        ("tanh_mlp", &base_run, base_params),
    ] {
        let reached = run.report.first_step_reaching(level);
        let cells: Vec<String> = keys.iter().map(|k| fmt_metric(&run.metrics, k)).collect();
        let _ = writeln!(
            table,
            "| {name} | {params} | {} | {} | {:.1} |",
            cells.join(" | "),
            reached.map_or("-".into(), |s| s.to_string()),
            run.metrics["wall_time_seconds"].as_f64().unwrap_or(0.0)
        );
        let mut entry = run.metrics.clone();
        entry.insert("steps_to_target".into(), json!(reached));
        summary.insert(name.into(), Value::Object(entry));
    }
    summary.insert("target".into(), json!(label));
    write_atomic(&out.join("comparison.md"), table.as_bytes()).context("writing comparison.md")?;
    write_json(&out.join("comparison.json"), &Value::Object(summary))?;
    print!("{table}");
    Ok(())
}
