mod job;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use progressive_oblique::experiments::{
    check_split_bound, fit_method, mean_rrs, r2_score, run_benchmark, write_report, BenchConfig, DataSpec, MethodSpec,
};
use progressive_oblique::progressive::{Checkpoint, Refiner};

use job::{load_inputs, prepare, Job, ModelFile};

#[derive(Parser)]
#[command(name = "oblique", version, about = "Progressive oblique regression trees and forest baselines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON benchmark or job config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark grid over synthetic XOR datasets.
    BenchXor,
    /// Run a benchmark grid over CSV datasets.
    BenchCsv,
    /// Run progressive refinement and write the tree, history and a checkpoint.
    Refine {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Random-search a forest method and write the search report.
    Tune,
    /// Fit a method on a whole CSV and save the model.
    Fit,
    /// Predict a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("starting the thread pool")?;
    }
    let common = &cli.common;
    match &cli.command {
        Command::BenchXor => bench(common, true),
        Command::BenchCsv => bench(common, false),
        Command::Refine { resume } => refine(common, resume.as_deref()),
        Command::Tune => tune(common),
        Command::Fit => fit(common),
        Command::Predict { model, data } => predict(common, model, data),
    }
}

fn config_path(common: &Common) -> Result<&Path> {
    common.config.as_deref().context("--config is required for this subcommand")
}

fn load_job(common: &Common) -> Result<Job> {
    let mut job = Job::from_file(config_path(common)?)?;
    if let Some(seed) = common.seed {
        job.seed = seed;
    }
    Ok(job)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn bench(common: &Common, xor: bool) -> Result<()> {
    let mut config = BenchConfig::from_file(config_path(common)?)?;
    for spec in &config.specs {
        if matches!(spec.data, DataSpec::Xor { .. }) != xor {
            let wanted = if xor { "bench-csv" } else { "bench-xor" };
            bail!("dataset {:?} belongs to {wanted}", spec.name);
        }
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    let report = run_benchmark(&config)?;
    write_report(&report, &config.output_dir)?;

    let failed = report.records.iter().filter(|r| r.error.is_some()).count();
    println!("{} trials, {failed} failed, results in {}", report.records.len(), config.output_dir.display());
    for row in &report.aggregates {
        println!("{:<20} {:<20} r2 {:>8.4} (sd {:.4})", row.method, row.spec, row.mean_r2, row.sd_r2);
    }
    for (method, score) in mean_rrs(&report) {
        println!("mean rrs {method:<20} {score:.4}");
    }
    Ok(())
}

fn refine(common: &Common, resume: Option<&Path>) -> Result<()> {
    let job = load_job(common)?;
    let MethodSpec::Progressive(method) = &job.method else {
        bail!("refine needs a method of kind \"progressive\"");
    };
    let (train, preprocess) = prepare(&job)?;
    let mut refiner = match resume {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let checkpoint: Checkpoint = serde_json::from_str(&text)?;
            Refiner::resume(&train, checkpoint)?
        }
        None => Refiner::new(&train, method.config(train.p(), job.seed))?,
    };
    let remaining = method.iterations.saturating_sub(refiner.iteration());
    refiner.run(remaining)?;

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("refine-out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("checkpoint.json"), &refiner.checkpoint())?;
    let result = refiner.into_result()?;
    let max_splits = check_split_bound(&result, method.depth)?;

    let mut history = Vec::new();
    for record in &result.history {
        serde_json::to_writer(&mut history, record)?;
        history.push(b'\n');
    }
    fs::write(out.join("history.jsonl"), history)?;
    write_json(&out.join("tree.json"), &result.final_tree.to_json())?;
    let model = progressive_oblique::experiments::FittedModel::Tree(result.final_tree.clone());
    let file = ModelFile { preprocess, method: job.method.clone(), seed: job.seed, model: model.to_json() };
    write_json(&out.join("model.json"), &file)?;

    let last = result.history.last().context("no iterations were run")?;
    println!(
        "{} iterations, {} splits (max {max_splits}), training sse {:.6}",
        last.iteration,
        result.split_set.len(),
        last.training_sse
    );
    Ok(())
}

fn tune(common: &Common) -> Result<()> {
    let job = load_job(common)?;
    if matches!(job.method, MethodSpec::Progressive(_) | MethodSpec::Breiman(_)) {
        bail!("tune needs a forest method (random_forest, rf_plus_s or forest_rc)");
    }
    let (train, _) = prepare(&job)?;
    let outcome = fit_method(&job.method, &train, job.seed)?;
    let report = outcome.tuning.context("method did not run a search")?;
    let doc = serde_json::json!({ "report": report, "details": outcome.details });
    match &common.out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    eprintln!("best validation r2 {:.4} with {}", report.best_val_score, serde_json::to_string(&report.best_params)?);
    Ok(())
}

fn fit(common: &Common) -> Result<()> {
    let job = load_job(common)?;
    let (train, preprocess) = prepare(&job)?;
    let outcome = fit_method(&job.method, &train, job.seed)?;
    let file = ModelFile { preprocess, method: job.method.clone(), seed: job.seed, model: outcome.model.to_json() };
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    write_json(&out, &file)?;
    let fitted = outcome.model.predict_dataset(&train)?;
    eprintln!("training r2 {:.4}, model written to {}", r2_score(&fitted, train.targets())?, out.display());
    Ok(())
}

fn predict(common: &Common, model_path: &Path, data: &Path) -> Result<()> {
    let (file, model) = ModelFile::load(model_path)?;
    let inputs = load_inputs(data, &file.preprocess)?;
    let predictions = model.predict_dataset(&inputs.dataset)?;

    let mut text = String::from("prediction\n");
    for v in &predictions {
        text.push_str(&format!("{v}\n"));
    }
    match &common.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if let Some(targets) = &inputs.targets {
        if targets.len() > 1 {
            eprintln!("r2 {:.4} on {} rows", r2_score(&predictions, targets)?, targets.len());
        }
    }
    Ok(())
}
