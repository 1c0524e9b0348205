//! Command-line front end for task generation, training, rollouts, the
//! benchmark grid and field plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use casf::bench::arm::ArmScenarioConfig;
use casf::bench::csv_io::ingest_demo_csv;
use casf::bench::render::write_field_svg;
use casf::bench::run::{cell_rollouts, method_field, shaping_fields};
use casf::bench::{
    custom_task, emit_report, export_demo_csv, export_rollout_csv, generate_task, run_arm_scenario,
    run_bench, run_experiment, BenchConfig, Method, ModelCache, PlotLayers, ReportFormat, TaskSpec,
};
use casf::policy::{train_policy, StreamingPolicy};
use casf::sdf_learn::train_sdf;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "casf", version, about = "Constraint-aware streaming flow benchmark tools")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write task demonstrations (CSV) and task descriptions (JSON).
    GenData {
        /// Task families; defaults to the configured list.
        #[arg(long = "task")]
        tasks: Vec<String>,
    },
    /// Train a streaming flow policy on one task.
    TrainPolicy {
        #[command(flatten)]
        source: TaskArgs,
    },
    /// Fit neural distance fields to a task's obstacles.
    TrainSdf {
        #[command(flatten)]
        source: TaskArgs,
    },
    /// Roll out one method on one task and score it.
    Rollout {
        #[command(flatten)]
        source: TaskArgs,
        #[arg(long, default_value = "casf")]
        method: Method,
        /// Trained policy file; trained (or taken from the cache) otherwise.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run the full task x method grid and write JSON, CSV and markdown reports.
    Bench {
        /// Also run the planar arm scenario (config key `arm`).
        #[arg(long)]
        arm: bool,
    },
    /// Render a method's velocity field with obstacles and rollouts as SVG.
    FieldPlot {
        #[command(flatten)]
        source: TaskArgs,
        #[arg(long, default_value = "casf")]
        method: Method,
        /// Flow time at which the field is frozen.
        #[arg(long, default_value_t = 0.5)]
        time: f64,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct TaskArgs {
    /// Task family name.
    #[arg(long, default_value = "Line", conflicts_with = "demo_csv")]
    task: String,
    /// Demonstration CSV (`t,x0,x1`) used instead of a generated family.
    #[arg(long)]
    demo_csv: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<casf::Error> for Failure {
    fn from(e: casf::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

struct Settings {
    bench: BenchConfig,
    arm: ArmScenarioConfig,
    out: PathBuf,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let mut doc = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<Value>(&text).map_err(config_err)?
            }
            None => json!({}),
        };
        let Some(map) = doc.as_object_mut() else {
            return Err(config_err("config must be a JSON object"));
        };
        let arm = match map.remove("arm") {
            Some(v) => serde_json::from_value(v).map_err(|e| config_err(format!("arm: {e}")))?,
            None => ArmScenarioConfig::default(),
        };
        let mut bench: BenchConfig = serde_json::from_value(doc).map_err(config_err)?;
        let mut arm: ArmScenarioConfig = arm;
        if let Some(seed) = cli.seed {
            bench.seed = seed;
            arm.seed = seed;
        }
        if bench.cache_dir.is_none() {
            bench.cache_dir = Some(cli.out.join("cache"));
        }
        bench.validate().map_err(config_err)?;
        arm.validate().map_err(config_err)?;
        Ok(Self {
            bench,
            arm,
            out: cli.out.clone(),
        })
    }

    fn cache(&self) -> ModelCache {
        ModelCache::new(self.bench.cache_dir.clone())
    }

    fn task(&self, args: &TaskArgs) -> Result<TaskSpec, Failure> {
        match &args.demo_csv {
            Some(path) => {
                let ingested = ingest_demo_csv(path).map_err(config_err)?;
                custom_task("custom", ingested.demo, self.bench.seed).map_err(config_err)
            }
            None => generate_task(&args.task, self.bench.seed).map_err(config_err),
        }
    }

    fn policy(&self, task: &TaskSpec, path: Option<&Path>) -> Result<Arc<StreamingPolicy>, Failure> {
        match path {
            Some(p) => Ok(Arc::new(StreamingPolicy::load(p).map_err(config_err)?)),
            None => Ok(self.cache().policy(&task.demos, &self.bench.effective_policy())?),
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn gen_data(s: &Settings, tasks: &[String]) -> Result<(), Failure> {
    let names = if tasks.is_empty() { &s.bench.tasks } else { tasks };
    let specs = names
        .iter()
        .map(|n| generate_task(n, s.bench.seed))
        .collect::<Result<Vec<_>, _>>()
        .map_err(config_err)?;
    let dir = s.out.join("data");
    fs::create_dir_all(&dir)?;
    for task in specs {
        let stem = file_stem(&task.name);
        for (k, demo) in task.demos.iter().enumerate() {
            export_demo_csv(demo, None, &dir.join(format!("{stem}-demo{k}.csv")))?;
        }
        write_json(
            &dir.join(format!("{stem}.json")),
            &json!({
                "name": task.name,
                "seed": task.seed,
                "bounds": task.bounds,
                "obstacles": task.obstacles,
                "demos": task.demos.len(),
            }),
        )?;
        println!("{}: {} demo(s) written to {}", task.name, task.demos.len(), dir.display());
    }
    Ok(())
}

fn train_policy_cmd(s: &Settings, args: &TaskArgs) -> Result<(), Failure> {
    let task = s.task(args)?;
    let (policy, log) = train_policy(&task.demos, &s.bench.effective_policy())?;
    fs::create_dir_all(&s.out)?;
    let stem = file_stem(&task.name);
    let path = s.out.join(format!("policy-{stem}.json"));
    policy.save(&path)?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        losses.push_str(&format!("{i},{l:?}\n"));
    }
    fs::write(s.out.join(format!("policy-{stem}-loss.csv")), losses)?;
    println!(
        "{}: final loss {:.6}, saved {}",
        task.name,
        log.final_loss().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn train_sdf_cmd(s: &Settings, args: &TaskArgs) -> Result<(), Failure> {
    let task = s.task(args)?;
    fs::create_dir_all(&s.out)?;
    let stem = file_stem(&task.name);
    for (i, shape) in task.obstacles.iter().enumerate() {
        let field = train_sdf(shape, &s.bench.sdf)?;
        let path = s.out.join(format!("sdf-{stem}-{i}.json"));
        field.save(&path)?;
        println!(
            "{} obstacle {i}: final loss {:.6}, saved {}",
            task.name,
            field.final_loss().unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

fn rollout_cmd(s: &Settings, args: &TaskArgs, method: Method, policy: Option<&Path>) -> Result<(), Failure> {
    let task = s.task(args)?;
    let policy = s.policy(&task, policy)?;
    let cache = s.cache();
    let dir = s.out.join("rollouts");
    fs::create_dir_all(&dir)?;
    let stem = format!("{}-{}", file_stem(&task.name), file_stem(&method.to_string()));
    let cell = run_experiment(&task, method, &policy, &s.bench, &cache);
    write_json(&dir.join(format!("{stem}.json")), &cell)?;
    if let Some(e) = &cell.error {
        return Err(Failure::Run(format!("{} / {method}: {e}", task.name)));
    }
    let fields = shaping_fields(&task, &s.bench, &cache)?;
    let runs = cell_rollouts(&task, method, &policy, &fields, &s.bench)?;
    for (i, r) in runs.shaped.iter().enumerate() {
        export_rollout_csv(r, &dir.join(format!("{stem}-{i}.csv")))?;
    }
    println!("{}", serde_json::to_string(&cell.mean).unwrap_or_default());
    Ok(())
}

fn bench_cmd(s: &Settings, arm: bool) -> Result<(), Failure> {
    let cache = s.cache();
    let report = run_bench(&s.bench, &cache).map_err(config_err)?;
    fs::create_dir_all(&s.out)?;
    emit_report(
        &report,
        &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown],
        &s.out,
    )?;
    println!("{}", casf::bench::report::report_markdown(&report));
    if arm {
        let summary = run_arm_scenario(&s.arm, &cache, s.bench.exec_mode())?;
        write_json(&s.out.join("arm.json"), &summary)?;
        println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    }
    if report.has_errors() {
        return Err(Failure::Run(format!(
            "some cells failed; partial report in {}",
            s.out.display()
        )));
    }
    Ok(())
}

fn field_plot_cmd(
    s: &Settings,
    args: &TaskArgs,
    method: Method,
    time: f64,
    policy: Option<&Path>,
) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&time) {
        return Err(config_err("--time must lie in [0, 1]"));
    }
    let task = s.task(args)?;
    let policy = s.policy(&task, policy)?;
    let cache = s.cache();
    let fields = shaping_fields(&task, &s.bench, &cache)?;
    let runs = cell_rollouts(&task, method, &policy, &fields, &s.bench)?;
    let base = policy.conditioned(task.demos[0].start().clone());
    let field = method_field(method, base, &fields, &task.bounds, &s.bench)?;
    let influence = if method == Method::Casf {
        s.bench.shaping.specs(&fields, &task.bounds)?
    } else {
        Vec::new()
    };
    let layers = PlotLayers {
        obstacles: &task.obstacles,
        influence: &influence,
        rollouts: &runs.shaped,
        demo: task.demos.first(),
    };
    fs::create_dir_all(&s.out)?;
    let path = s.out.join(format!(
        "field-{}-{}.svg",
        file_stem(&task.name),
        file_stem(&method.to_string())
    ));
    write_field_svg(&*field, time, &layers, &task.bounds, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let s = Settings::load(cli)?;
    match &cli.command {
        Command::GenData { tasks } => gen_data(&s, tasks),
        Command::TrainPolicy { source } => train_policy_cmd(&s, source),
        Command::TrainSdf { source } => train_sdf_cmd(&s, source),
        Command::Rollout { source, method, policy } => rollout_cmd(&s, source, *method, policy.as_deref()),
        Command::Bench { arm } => bench_cmd(&s, *arm),
        Command::FieldPlot {
            source,
            method,
            time,
            policy,
        } => field_plot_cmd(&s, source, *method, *time, policy.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
