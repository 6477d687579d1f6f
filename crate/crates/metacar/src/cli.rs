//! Command-line front end: dataset generation, pre-training, closed-loop
//! runs, the symmetry diagnostic, and result aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ensemble::{load_ensemble, save_ensemble, Ensemble};
use crate::error::Result;
use crate::harness::{
    mean_lateral, prepare_inits, run_episode, symmetry_probe, Baseline, EpisodeMetrics,
    HarnessConfig, PreparedInits,
};
use crate::meta::{self, MetaConfig, PretrainOpts};
use crate::model::ModelWeights;
use crate::taskgen::{self, TaskDataset};

#[derive(Debug, Parser)]
#[command(name = "metacar", about = "Meta-learned vehicle models with uncertainty-aware MPPI")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a task dataset as JSON lines.
    GenData(GenDataArgs),
    /// Meta-train an ensemble and write checkpoints plus loss logs.
    Pretrain(PretrainArgs),
    /// Run closed-loop episodes for one baseline over several seeds.
    Run(RunArgs),
    /// Report the steering-symmetry score of a saved ensemble.
    DiagSymmetry(DiagArgs),
    /// Aggregate run directories into a per-baseline summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// JSON file overriding the default (reduced) experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<HarnessConfig> {
        match &self.config {
            Some(p) => Ok(serde_json::from_slice(&fs::read(p)?)?),
            None => Ok(HarnessConfig::scaled()),
        }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    /// Optional JSONL task dataset; tasks are batched in order instead of
    /// generated online.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Train the pooled (no inner loop) variant instead of the meta variant.
    #[arg(long, default_value_t = false)]
    pooled: bool,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    baseline: Baseline,
    /// Number of seeds; episodes run for seeds 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Directory holding pretrained `meta/` and `pooled/` ensembles (as
    /// written by `pretrain`); without it the learned baselines pre-train on
    /// the fly.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct DiagArgs {
    /// Ensemble checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory containing run output directories (searched one level deep
    /// for metrics.csv).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Pretrain(args) => pretrain_cmd(args),
        Command::Run(args) => run_cmd(args),
        Command::DiagSymmetry(args) => {
            let e = load_ensemble(&args.checkpoint)?;
            println!("symmetry {:.2}%", symmetry_probe(&e));
            Ok(())
        }
        Command::Report(args) => report_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut lines = String::new();
    for _ in 0..args.tasks {
        let task = taskgen::generate_task(
            &cfg.ranges,
            cfg.n_terms,
            cfg.t_h,
            cfg.model.history,
            cfg.model.dt,
            &mut rng,
        )?;
        lines.push_str(&serde_json::to_string(&task)?);
        lines.push('\n');
    }
    fs::write(&args.out, lines)?;
    eprintln!("wrote {} tasks to {}", args.tasks, args.out.display());
    Ok(())
}

fn load_tasks(path: &Path) -> Result<Vec<TaskDataset>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Pre-train one member on a fixed dataset, batching tasks in order and
/// cycling; mirrors the online-generation driver otherwise.
fn pretrain_from_tasks(
    opts: &PretrainOpts,
    tasks: &[TaskDataset],
) -> Result<(ModelWeights, Vec<(usize, f64)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.init_seed);
    let mut theta = ModelWeights::init(opts.model, &mut rng);
    let mut best = theta.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = Vec::new();
    let b = opts.meta.tasks_per_batch.min(tasks.len()).max(1);
    for episode in 0..opts.meta.episodes {
        let start = (episode * b) % tasks.len();
        let batch: Vec<TaskDataset> = (0..b)
            .map(|i| tasks[(start + i) % tasks.len()].clone())
            .collect();
        let (next, loss) = meta::meta_step(&theta, &batch, &opts.meta)?;
        theta = next;
        if loss < best_loss {
            best_loss = loss;
            best = theta.clone();
        }
        log.push((episode, loss));
    }
    Ok((best, log))
}

fn pretrain_cmd(args: PretrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let meta_cfg = if args.pooled {
        MetaConfig {
            k_inner: 0,
            ..cfg.meta
        }
    } else {
        cfg.meta
    };
    let tasks = match &args.data {
        Some(p) => Some(load_tasks(p)?),
        None => None,
    };
    fs::create_dir_all(&args.out)?;

    let mut members = Vec::with_capacity(cfg.ensemble_size);
    for i in 0..cfg.ensemble_size {
        let opts = PretrainOpts {
            meta: meta_cfg,
            model: cfg.model,
            ranges: cfg.ranges,
            n_terms: cfg.n_terms,
            t_h: cfg.t_h,
            init_seed: args.seed + i as u64,
            data_seed: cfg.pretrain_data_seed,
        };
        let start = Instant::now();
        let (weights, log) = match &tasks {
            Some(ts) => pretrain_from_tasks(&opts, ts)?,
            None => {
                let r = meta::pretrain(&opts)?;
                (r.best_weights, r.log)
            }
        };
        let wall_ms = start.elapsed().as_millis() as u64;
        let mut w = csv::Writer::from_path(args.out.join(format!("log_member_{i:03}.csv")))?;
        w.write_record(["episode", "meta_loss", "wall_ms"])?;
        for (ep, loss) in &log {
            // Wall time is attributed evenly; it is informational only and
            // excluded from determinism comparisons.
            let ms = wall_ms / log.len().max(1) as u64;
            w.write_record([ep.to_string(), format!("{loss:.9e}"), ms.to_string()])?;
        }
        w.flush().map_err(std::io::Error::from)?;
        members.push(weights);
        eprintln!("member {i}: {} episodes, {wall_ms} ms", log.len());
    }
    save_ensemble(&Ensemble::new(members), &args.out.join("ensemble"))?;
    let label = if args.pooled { "pooled" } else { "meta" };
    fs::write(
        args.out.join("variant.json"),
        serde_json::to_vec_pretty(&serde_json::json!({ "variant": label }))?,
    )?;
    eprintln!("saved {label} ensemble to {}", args.out.display());
    Ok(())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Serialize)]
struct ResolvedRun<'a> {
    baseline: Baseline,
    seeds: u64,
    git: String,
    config: &'a HarnessConfig,
}

fn load_inits(dir: &Path) -> Result<PreparedInits> {
    Ok(PreparedInits {
        meta: load_ensemble(&dir.join("meta").join("ensemble"))?,
        pooled: load_ensemble(&dir.join("pooled").join("ensemble"))?,
    })
}

fn write_metrics_csv(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "baseline",
        "seed",
        "mean_abs_lateral",
        "mean_speed",
        "laps",
        "crashed",
        "excursions",
    ])?;
    for m in rows {
        w.write_record([
            m.baseline.to_string(),
            m.seed.to_string(),
            format!("{:.9e}", m.mean_abs_lateral),
            format!("{:.9e}", m.mean_speed),
            format!("{:.9e}", m.laps),
            m.crashed.to_string(),
            m.excursions.to_string(),
        ])?;
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

fn run_cmd(args: RunArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let needs_inits = matches!(
        args.baseline,
        Baseline::D | Baseline::E | Baseline::F
    );
    let inits = if needs_inits {
        Some(match &args.checkpoint {
            Some(dir) => load_inits(dir)?,
            None => {
                eprintln!("no checkpoint given; pre-training initializations");
                prepare_inits(&cfg)?
            }
        })
    } else {
        None
    };
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_vec_pretty(&ResolvedRun {
            baseline: args.baseline,
            seeds: args.seeds,
            git: git_describe(),
            config: &cfg,
        })?,
    )?;

    let mut rows = Vec::new();
    for seed in 0..args.seeds {
        let out = run_episode(&cfg, args.baseline, seed, inits.as_ref())?;
        let mut w =
            csv::Writer::from_path(args.out.join(format!("trajectory_seed_{seed:03}.csv")))?;
        w.write_record(["t", "p_x", "p_y", "phi", "v_x", "v_y", "omega", "d", "delta_cmd"])?;
        for (t, s, u) in &out.trajectory {
            w.write_record([
                format!("{t:.6}"),
                format!("{:.9e}", s.p_x),
                format!("{:.9e}", s.p_y),
                format!("{:.9e}", s.phi),
                format!("{:.9e}", s.v_x),
                format!("{:.9e}", s.v_y),
                format!("{:.9e}", s.omega),
                format!("{:.9e}", u.d),
                format!("{:.9e}", u.delta_cmd),
            ])?;
        }
        w.flush().map_err(std::io::Error::from)?;
        eprintln!(
            "baseline {} seed {seed}: lateral {:.3} m, {:.2} laps{}",
            args.baseline,
            out.metrics.mean_abs_lateral,
            out.metrics.laps,
            if out.metrics.crashed { " (crashed)" } else { "" }
        );
        rows.push(out.metrics);
    }
    write_metrics_csv(&args.out.join("metrics.csv"), &rows)?;
    eprintln!(
        "baseline {}: mean lateral {:.3} m over {} seeds",
        args.baseline,
        mean_lateral(&rows),
        rows.len()
    );
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let mut files = Vec::new();
    let direct = args.input.join("metrics.csv");
    if direct.exists() {
        files.push(direct);
    }
    for entry in fs::read_dir(&args.input)? {
        let p = entry?.path().join("metrics.csv");
        if p.exists() {
            files.push(p);
        }
    }
    files.sort();

    // baseline -> (sum_lat, sum_speed, sum_laps, n)
    let mut agg: std::collections::BTreeMap<String, (f64, f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for f in &files {
        let mut rdr = csv::Reader::from_path(f)?;
        for record in rdr.records() {
            let r = record.map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let parse =
                |i: usize| -> f64 { r.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN) };
            let e = agg
                .entry(r.get(0).unwrap_or("?").to_string())
                .or_insert((0.0, 0.0, 0.0, 0));
            e.0 += parse(2);
            e.1 += parse(3);
            e.2 += parse(4);
            e.3 += 1;
        }
    }

    let mut out = String::from("baseline,mean_abs_lateral,mean_speed,mean_laps,episodes\n");
    for (b, (lat, sp, laps, n)) in &agg {
        let n_f = *n as f64;
        out.push_str(&format!(
            "{b},{:.6},{:.6},{:.6},{n}\n",
            lat / n_f,
            sp / n_f,
            laps / n_f
        ));
    }
    match &args.out {
        Some(p) => fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}
