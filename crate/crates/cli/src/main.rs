use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use synsel::baselines::SelectionMask;
use synsel::controller::Variant;
use synsel::featurestore::{compute_centroids, save_features};
use synsel::harness::{
    assemble_report, distance_histogram, generate_synthetic_task, run_experiment, run_seed, ExperimentConfig,
    ExperimentReport,
};
use synsel::policy::Algorithm;
use synsel::verify::{grad_check_suite, GRAD_TOLERANCE};

#[derive(Parser)]
#[command(name = "synsel", version, about = "Select synthetic training samples with a learned controller")]
struct Cli {
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent seeds.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark task as CSV feature files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a controller on one seed and write its greedy selection.
    Select {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Ppo)]
        algorithm: AlgorithmArg,
        #[arg(long, value_enum, default_value_t = ControllerArg::Transformer)]
        controller: ControllerArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every selection method over the configured seeds.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a saved comparison report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Check every analytic gradient against finite differences.
    GradCheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Ppo,
    Reinforce,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Transformer,
    Gru,
    GruAttn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
        cfg.task.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `dir/stem.suffix`, where `stem` is the file name of `path` without extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let task = generate_synthetic_task(&cfg.task, cfg.task.seed)?;
    save_features(&task.train, out.join("train.csv"))?;
    save_features(&task.val, out.join("val.csv"))?;
    save_features(&task.test, out.join("test.csv"))?;
    save_features(&task.pool.to_feature_set()?, out.join("pool.csv"))?;
    let meta = serde_json::json!({
        "seed": cfg.task.seed,
        "checksum": task.checksum(),
        "task": cfg.task,
        "truth": task.pool.truth(),
    });
    let mut w = create(&out.join("task.json"))?;
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    w.flush()?;
    println!("wrote task {} to {}", task.checksum(), out.display());
    Ok(())
}

fn select(mut cfg: ExperimentConfig, algorithm: AlgorithmArg, controller: ControllerArg, out: &Path) -> Result<()> {
    cfg.algorithm = match algorithm {
        AlgorithmArg::Ppo => Algorithm::Ppo,
        AlgorithmArg::Reinforce => Algorithm::Reinforce,
    };
    cfg.controller.variant = match controller {
        ControllerArg::Transformer => Variant::Transformer,
        ControllerArg::Gru => Variant::Gru,
        ControllerArg::GruAttn => Variant::GruAttn,
    };
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let task = generate_synthetic_task(&cfg.task, seed)?;
    let log_path = sibling(out, "log.jsonl");
    let mut log = create(&log_path)?;
    let result = run_experiment(&cfg, &task, seed, Some(&mut log))?;
    log.flush()?;

    write_mask(&result.mask, out)?;
    let centroids = compute_centroids(&task.train)?;
    let hist = distance_histogram(&result.mask, &task.pool, &centroids, cfg.histogram_bins)?;
    let mut w = create(&sibling(out, "hist.csv"))?;
    hist.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "seed {seed}: kept {} of {} candidates (keep rate {:.3})",
        result.mask.total(),
        task.pool.total(),
        result.keep_rate(task.pool.total())
    );
    Ok(())
}

fn write_mask(mask: &SelectionMask, out: &Path) -> Result<()> {
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, mask)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn compare(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let start = Instant::now();
    let runs: Vec<_> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let mut log = Vec::new();
                let outcome = run_seed(cfg, seed, Some(&mut log))?;
                Ok((outcome, log))
            })
            .collect::<synsel::Result<Vec<_>>>()
    })?;
    let mut outcomes = Vec::with_capacity(runs.len());
    for (outcome, log) in runs {
        let seed = outcome.seed;
        create(&sibling(out, &format!("seed{seed}.log.jsonl")))?.write_all(&log)?;
        let mut w = create(&sibling(out, &format!("seed{seed}.hist.csv")))?;
        outcome.rl_histogram.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&sibling(out, &format!("seed{seed}.pool-hist.csv")))?;
        outcome.pool_histogram.write_csv(&mut w)?;
        w.flush()?;
        outcomes.push(outcome);
    }
    let report = assemble_report(outcomes)?;
    let mut w = create(out)?;
    w.write_all(report.to_json()?.as_bytes())?;
    writeln!(w)?;
    w.flush()?;
    print!("{}", report.to_table());
    eprintln!("compared {} seeds in {:.1}s", cfg.seeds.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn report(input: &Path, format: Format) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: ExperimentReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    match format {
        Format::Table => print!("{}", report.to_table()),
        Format::Csv => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn grad_check() -> Result<bool> {
    let start = Instant::now();
    let outcomes = grad_check_suite()?;
    let mut ok = true;
    for o in &outcomes {
        let status = if o.passed() { "PASS" } else { "FAIL" };
        ok &= o.passed();
        println!("{status} {:<24} max rel err {:.3e} over {} entries", o.name, o.max_rel_error, o.checked);
    }
    let secs = start.elapsed().as_secs_f64();
    println!("tolerance {GRAD_TOLERANCE:e}; {secs:.2}s");
    if secs >= 30.0 {
        println!("FAIL suite exceeded 30s");
        ok = false;
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&load_config(config.as_deref(), cli.seed)?, &out)?,
        Command::Select { config, algorithm, controller, out } => {
            select(load_config(config.as_deref(), cli.seed)?, algorithm, controller, &out)?
        }
        Command::Compare { config, out } => compare(&load_config(config.as_deref(), cli.seed)?, cli.threads, &out)?,
        Command::Report { input, format } => report(&input, format)?,
        Command::GradCheck => return grad_check(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(src) = e.downcast_ref::<synsel::Error>() {
                if matches!(src, synsel::Error::Config(_)) {
                    return ExitCode::from(2);
                }
            }
            ExitCode::FAILURE
        }
    }
}
