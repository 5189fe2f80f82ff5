use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stepscan::config::RunConfig;
use stepscan::eval::{
    amplitude_similarity_table, expected_coupon_trials, load_dataset3_items, n_way_validation,
    NWayConfig,
};
use stepscan::nn::{load_weights, model_checksum, save_weights, train_classifier};
use stepscan::siamese::scan_trace;
use stepscan::synth::{
    build_dataset1, build_dataset2, build_dataset3, DatasetManifest, DatasetOptions, Split,
};
use stepscan::trace::load_trace_csv;
use stepscan::viz::{render_confusion_png, render_nway_montage, render_scan_timeline};
use stepscan::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stepscan",
    version,
    about = "Step-trace anomaly detection pipeline"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for dataset generation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic anomaly-induction dataset to --out.
    Generate(GenerateArgs),
    /// Train the classifier on a rendered dataset.
    Train(TrainArgs),
    /// Run coupon-collector N-way validation of the similarity scorer.
    Nway(NwayArgs),
    /// Compare a query trace against a reference, window by window.
    Scan(ScanArgs),
    /// Score the amplitude-shift similarity table on Dataset-3.
    Table3(Table3Args),
}

#[derive(Args)]
struct GenerateArgs {
    /// Which dataset to build: 1, 2, or 3.
    #[arg(long)]
    dataset: u8,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding manifest.json and the rendered images.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct NwayArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Candidates per trial; defaults to the configured value.
    #[arg(long)]
    n: Option<usize>,
    /// Trial count; defaults to the coupon-collector estimate for the
    /// test-set size.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct ScanArgs {
    /// Reference trace CSV (time column plus one column per variable).
    #[arg(long)]
    reference: PathBuf,
    /// Query trace CSV on the same sampling grid.
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Restrict the scan to one variable; default scans all shared ones.
    #[arg(long)]
    variable: Option<String>,
    /// Similarity threshold; scores below it flag an anomaly.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct Table3Args {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(anomaly) => {
            if anomaly {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether an anomaly was detected (scan only; other commands
/// always report clean).
fn run(cli: &Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }

    match &cli.command {
        Command::Generate(args) => cmd_generate(cli, &config, args).map(|_| false),
        Command::Train(args) => cmd_train(cli, &config, args).map(|_| false),
        Command::Nway(args) => cmd_nway(cli, &config, args).map(|_| false),
        Command::Scan(args) => cmd_scan(cli, &config, args),
        Command::Table3(args) => cmd_table3(cli, args).map(|_| false),
    }
}

fn prepare_out_dir(cli: &Cli) -> Result<&Path> {
    let out = cli.out.as_path();
    if out.exists() {
        let occupied = out
            .read_dir()
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_some();
        if occupied && !cli.force {
            return Err(Error::Invalid(format!(
                "output directory '{}' is not empty (use --force to overwrite)",
                out.display()
            )));
        }
    } else {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_generate(cli: &Cli, config: &RunConfig, args: &GenerateArgs) -> Result<()> {
    let out = prepare_out_dir(cli)?;
    let opts = DatasetOptions {
        synth: config.synth.clone(),
        pipeline: config.pipeline.clone(),
        seed: config.seed,
    };
    let manifest = match args.dataset {
        1 => build_dataset1(out, &opts)?,
        2 => build_dataset2(out, &opts)?,
        3 => build_dataset3(out, &opts)?,
        other => {
            return Err(Error::Invalid(format!(
                "unknown dataset {other}, expected 1-3"
            )))
        }
    };
    println!(
        "generated dataset {} at {}: {} images, {} classes",
        args.dataset,
        out.display(),
        manifest.entries.len(),
        manifest.class_names.len()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, config: &RunConfig, args: &TrainArgs) -> Result<()> {
    let out = prepare_out_dir(cli)?;
    let manifest = DatasetManifest::load(args.data.join("manifest.json"))?;
    let dataset = manifest.load_images(&args.data)?;
    let mut train_cfg = config.train.clone();
    train_cfg.rng_seed = config.seed;
    let (model, cm) = train_classifier(&dataset, &train_cfg)?;

    let weights_path = out.join("weights.bin");
    save_weights(&model, &weights_path)?;
    render_confusion_png(&cm, out.join("confusion.png"))?;
    write_json(
        &out.join("metrics.json"),
        &serde_json::json!({
            "test_accuracy": cm.accuracy(),
            "confusion": cm,
            "model_checksum": model_checksum(&model),
        }),
    )?;
    println!(
        "trained on {} images; test accuracy {:.4}; weights at {}",
        dataset.split_indices(Split::Train).len(),
        cm.accuracy(),
        weights_path.display()
    );
    Ok(())
}

fn cmd_nway(cli: &Cli, config: &RunConfig, args: &NwayArgs) -> Result<()> {
    let out = prepare_out_dir(cli)?;
    let manifest = DatasetManifest::load(args.data.join("manifest.json"))?;
    let dataset = manifest.load_images(&args.data)?;
    let model = load_weights(&args.weights)?;

    let test_size = dataset.split_indices(Split::Test).len();
    let trials = match args.trials.or(config.eval.trials) {
        Some(k) => k,
        None => expected_coupon_trials(test_size)? as usize,
    };
    let cfg = NWayConfig {
        n_way: args.n.unwrap_or(config.eval.n_way),
        trials,
        rng_seed: config.seed,
    };
    let (accuracy, trial_log) = n_way_validation(&model, &dataset, &cfg)?;
    render_nway_montage(&dataset, &trial_log, 20, out.join("nway.png"))?;
    write_json(
        &out.join("nway.json"),
        &serde_json::json!({
            "n_way": cfg.n_way,
            "trials": cfg.trials,
            "test_images": test_size,
            "accuracy": accuracy,
        }),
    )?;
    println!(
        "{}-way validation: {} trials over {} test images, accuracy {:.4}",
        cfg.n_way, cfg.trials, test_size, accuracy
    );
    Ok(())
}

fn cmd_scan(cli: &Cli, config: &RunConfig, args: &ScanArgs) -> Result<bool> {
    let out = prepare_out_dir(cli)?;
    let model = load_weights(&args.weights)?;
    let reference = load_trace_csv(&args.reference)?;
    let query = load_trace_csv(&args.query)?;
    let threshold = args.threshold.unwrap_or(config.eval.threshold);

    let variables: Vec<String> = match &args.variable {
        Some(v) => vec![v.clone()],
        None => reference.signals.iter().map(|s| s.name.clone()).collect(),
    };

    // Validate the variable sets before any work, so a mismatch fails
    // without partial outputs.
    let pairs: Vec<(&stepscan::trace::Signal, &stepscan::trace::Signal)> = variables
        .iter()
        .map(|name| {
            let r = reference
                .signal(name)
                .ok_or_else(|| Error::Invalid(format!("reference has no variable '{name}'")))?;
            let q = query
                .signal(name)
                .ok_or_else(|| Error::Invalid(format!("query has no variable '{name}'")))?;
            Ok((r, q))
        })
        .collect::<Result<_>>()?;

    let mut any_anomaly = false;
    for (name, (r, q)) in variables.iter().zip(pairs) {
        let mut report = scan_trace(
            &model,
            &model.class_names,
            r,
            q,
            &config.pipeline,
            threshold,
        )?;
        report.model_checksum = Some(model_checksum(&model));
        write_json(&out.join(format!("scan_{name}.json")), &report)?;
        if !report.verdicts.is_empty() {
            render_scan_timeline(&report, out.join(format!("scan_{name}.png")))?;
        }
        let flagged: Vec<String> = report
            .verdicts
            .iter()
            .filter(|v| v.is_anomaly)
            .map(|v| format!("{:.1}s (score {:.3})", v.window_center_seconds, v.score))
            .collect();
        if flagged.is_empty() {
            println!("{name}: clean ({} windows)", report.verdicts.len());
        } else {
            any_anomaly = true;
            println!("{name}: ANOMALY at {}", flagged.join(", "));
        }
    }
    Ok(any_anomaly)
}

fn cmd_table3(cli: &Cli, args: &Table3Args) -> Result<()> {
    let out = prepare_out_dir(cli)?;
    let manifest = DatasetManifest::load(args.data.join("manifest.json"))?;
    let model = load_weights(&args.weights)?;
    let items = load_dataset3_items(&manifest, &args.data)?;
    let table = amplitude_similarity_table(&model, &items)?;
    write_json(&out.join("table3.json"), &table)?;
    println!("{:<8} {:>8} {:>10}", "group", "factor", "similarity");
    for row in &table {
        println!("{:<8} {:>8.2} {:>10.4}", row.group, row.factor, row.score);
    }
    Ok(())
}
