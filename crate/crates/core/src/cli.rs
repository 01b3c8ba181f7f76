//! Command-line driver. Exit codes: 0 success, 2 usage or configuration
//! error, 3 numeric failure during training.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::env::{
    generate_dataset, DatasetParams, DatasetSpec, Difficulty, DifficultyMix, ExecutorConfig,
};
use crate::error::{Error, Result};
use crate::policy::{encode_nodes, policy_probabilities, PolicyConfig};
use crate::sampling::infer_topology;
use crate::trainer::{
    ablate, evaluate_policy, read_metrics, MetricsWriter, StepMetrics, TrainConfig, TrainState,
    Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "graph-grpo",
    version,
    about = "Train and inspect multi-agent communication topologies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn float_list<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic difficulty-mixture dataset.
    GenData {
        #[arg(long, default_value_t = 5)]
        agents: usize,
        #[arg(long)]
        tasks: usize,
        /// Easy, solvable and hard proportions, e.g. 0.4,0.4,0.2
        #[arg(long, value_parser = float_list::<3>)]
        mix: [f64; 3],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make solvable tasks noisy: q_hi,q_lo
        #[arg(long, value_parser = float_list::<2>)]
        noise: Option<[f64; 2]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's thresholded topologies on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Compare the three estimators under matched seeds and budgets.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Run configuration supplying training and policy settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Groups used for the gradient-variance column.
        #[arg(long, default_value_t = 240)]
        variance_groups: usize,
        /// Write the table as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one task's inferred topology.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, value_enum, default_value_t = ExportFormat::Dot)]
        format: ExportFormat,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render training curves from a metrics log as SVG.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Dot,
}

/// Run configuration file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Save a checkpoint every this many steps (0: only at the end).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub executor: Option<ExecutorConfig>,
}

fn default_checkpoint_every() -> u64 {
    100
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.policy.validate()?;
        if let Some(ex) = &self.executor {
            ex.validate()?;
        }
        Ok(())
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            agents,
            tasks,
            mix,
            seed,
            noise,
            out,
        } => cmd_gen_data(agents, tasks, &mix, seed, noise, &out),
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref()),
        Command::Eval {
            ckpt,
            data,
            tau,
            json,
        } => cmd_eval(&ckpt, &data, tau, json),
        Command::Ablate {
            data,
            seeds,
            config,
            variance_groups,
            out,
        } => cmd_ablate(
            &data,
            &seeds,
            config.as_deref(),
            variance_groups,
            out.as_deref(),
        ),
        Command::Export {
            ckpt,
            data,
            task,
            format: ExportFormat::Dot,
            tau,
            out,
        } => cmd_export(&ckpt, &data, &task, tau, out.as_deref()),
        Command::Report { metrics, out } => cmd_report(&metrics, &out),
    }
}

fn cmd_gen_data(
    agents: usize,
    tasks: usize,
    mix: &[f64; 3],
    seed: u64,
    noise: Option<[f64; 2]>,
    out: &Path,
) -> Result<()> {
    let mix = DifficultyMix::new(mix[0], mix[1], mix[2])?;
    let noise = noise.map(|[hi, lo]| (hi, lo));
    let data = generate_dataset(&DatasetParams {
        mix,
        n_tasks: tasks,
        n_agents: agents,
        seed,
        noise,
    })?;
    data.save(out)?;
    println!(
        "wrote {} tasks to {}: easy={} solvable={} hard={}",
        data.tasks.len(),
        out.display(),
        data.count(Difficulty::Easy),
        data.count(Difficulty::Solvable),
        data.count(Difficulty::Hard)
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<DatasetSpec> {
    let data = DatasetSpec::load(path)?;
    if data.tasks.is_empty() {
        return Err(Error::Config(format!(
            "{} contains no tasks",
            path.display()
        )));
    }
    Ok(data)
}

fn cmd_train(config_path: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfigFile::load(config_path)?;
    let data = load_dataset(&cfg.dataset)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&resolved, serde_json::to_string_pretty(&cfg)? + "\n")
        .map_err(|e| Error::io(&resolved, e))?;

    let metrics_path = out.join(METRICS_FILE);
    let (mut trainer, mut writer) = match resume {
        None => (
            Trainer::new(&data, cfg.train.clone(), cfg.policy.clone())?,
            MetricsWriter::create(&metrics_path)?,
        ),
        Some(ckpt) => {
            let state = TrainState::load(ckpt)?;
            if state.params.config != cfg.policy {
                return Err(Error::Checkpoint(format!(
                    "checkpoint policy {:?} does not match config policy {:?}",
                    state.params.config, cfg.policy
                )));
            }
            // keep the log consistent with the restored step
            let kept: Vec<StepMetrics> = match metrics_path.exists() {
                true => read_metrics(&metrics_path)?
                    .0
                    .into_iter()
                    .filter(|m| m.step <= state.step)
                    .collect(),
                false => Vec::new(),
            };
            crate::trainer::write_metrics(&metrics_path, &kept)?;
            (
                Trainer::resume(&data, cfg.train.clone(), state)?,
                MetricsWriter::append(&metrics_path)?,
            )
        }
    };

    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut last: Option<StepMetrics> = None;
    let result = trainer.run(|m, state| {
        writer.write(m)?;
        last = Some(m.clone());
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            state.save(&ckpt_path)?;
        }
        Ok(())
    });
    if let Err(e) = result {
        if let Error::Numeric(_) = e {
            eprintln!(
                "last completed step: {}",
                last.map_or("none".into(), |m| serde_json::to_string(&m)
                    .unwrap_or_default())
            );
        }
        return Err(e);
    }
    let state = trainer.state();
    state.save(&ckpt_path)?;
    println!(
        "trained {} steps ({} applied, {} skipped); checkpoint {}",
        state.step,
        state.steps_applied,
        state.steps_skipped,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, tau: f64, json: bool) -> Result<()> {
    let state = TrainState::load(ckpt)?;
    let data = load_dataset(data)?;
    let report = evaluate_policy(&state.params, &data, tau)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("tau                 {:.4}", report.tau);
    println!("accuracy            {:.4}", report.accuracy);
    println!("mean edge count     {:.4}", report.mean_edge_count);
    println!("mean message cost   {:.4}", report.mean_message_cost);
    println!("planted recall      {:.4}", report.planted_recall);
    println!("planted precision   {:.4}", report.planted_precision);
    println!();
    println!(
        "{:<12} {:>8} {:>6} {:>6}  edges",
        "task", "reward", "edges", "cost"
    );
    for t in &report.tasks {
        println!(
            "{:<12} {:>8.3} {:>6} {:>6}  {}",
            t.task_id,
            t.expected_reward,
            t.edge_count,
            t.message_cost,
            t.edges.join(" ")
        );
    }
    Ok(())
}

fn cmd_ablate(
    data: &Path,
    seeds: &[u64],
    config: Option<&Path>,
    variance_groups: usize,
    out: Option<&Path>,
) -> Result<()> {
    let data = load_dataset(data)?;
    let (train, policy) = match config {
        Some(p) => {
            let c = RunConfigFile::load(p)?;
            (c.train, c.policy)
        }
        None => (TrainConfig::default(), PolicyConfig::default()),
    };
    train.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let report = ablate(&data, &train, &policy, seeds, variance_groups)?;
    println!(
        "{:<11} {:>9} {:>8} {:>9} {:>10} {:>12}",
        "estimator", "accuracy", "recall", "precision", "redundant", "grad-var"
    );
    for s in &report.summary {
        println!(
            "{:<11} {:>9.4} {:>8.4} {:>9.4} {:>10.3} {:>12.4e}",
            s.estimator.name(),
            s.accuracy,
            s.planted_recall,
            s.planted_precision,
            s.mean_redundant_edges,
            s.grad_variance
        );
    }
    if let Some(out) = out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn cmd_export(ckpt: &Path, data: &Path, task_id: &str, tau: f64, out: Option<&Path>) -> Result<()> {
    let state = TrainState::load(ckpt)?;
    let data = load_dataset(data)?;
    let task = data
        .tasks
        .iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| Error::Config(format!("no task '{task_id}' in dataset")))?;
    let x = encode_nodes(&task.team, state.params.embed_dim())?;
    let t = infer_topology(&policy_probabilities(&state.params, &x)?, tau)?;
    let dot = t.to_dot(Some(&task.team));
    match out {
        Some(p) => std::fs::write(p, dot).map_err(|e| Error::io(p, e)),
        None => {
            print!("{dot}");
            Ok(())
        }
    }
}

const SERIES: [(&str, &str); 4] = [
    ("loss", "#1f77b4"),
    ("reward_mean", "#2ca02c"),
    ("sigma_s", "#ff7f0e"),
    ("grad_norm", "#d62728"),
];

fn series_value(m: &StepMetrics, name: &str) -> Option<f64> {
    match name {
        "loss" => m.loss,
        "reward_mean" => Some(m.reward_mean),
        "sigma_s" => m.sigma_s,
        "grad_norm" => Some(m.grad_norm),
        _ => None,
    }
    .filter(|v| v.is_finite())
}

/// Four stacked panels, one polyline each, every panel scaled to its own range.
pub fn render_svg(records: &[StepMetrics]) -> String {
    let (w, panel_h, pad) = (720.0, 160.0, 40.0);
    let height = pad + SERIES.len() as f64 * (panel_h + pad);
    let max_step = records.iter().map(|m| m.step).max().unwrap_or(1).max(1) as f64;
    let min_step = records.iter().map(|m| m.step).min().unwrap_or(0) as f64;
    let span = (max_step - min_step).max(1.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let top = pad + k as f64 * (panel_h + pad);
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|m| series_value(m, name).map(|v| (m.step as f64, v)))
            .collect();
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let range = if pts.is_empty() || hi - lo < 1e-12 {
            1.0
        } else {
            hi - lo
        };
        let base = if pts.is_empty() { 0.0 } else { lo };
        let _ = writeln!(
            svg,
            r#"<rect x="{pad}" y="{top}" width="{}" height="{panel_h}" fill="none" stroke="gray"/>"#,
            w - 2.0 * pad
        );
        let _ = writeln!(
            svg,
            r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="12">{name} [{:.4e}, {:.4e}]</text>"#,
            top - 6.0,
            if pts.is_empty() { 0.0 } else { lo },
            if pts.is_empty() { 0.0 } else { hi }
        );
        let coords: Vec<String> = pts
            .iter()
            .map(|(s, v)| {
                let x = pad + (s - min_step) / span * (w - 2.0 * pad);
                let y = top + panel_h - (v - base) / range * panel_h;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn cmd_report(metrics: &Path, out: &Path) -> Result<()> {
    let (records, bad) = read_metrics(metrics)?;
    for (line, reason) in &bad {
        eprintln!("warning: skipping malformed metrics line {line}: {reason}");
    }
    std::fs::write(out, render_svg(&records)).map_err(|e| Error::io(out, e))?;
    println!("wrote {} ({} steps)", out.display(), records.len());
    Ok(())
}
