//! `xprint`: generate synthetic traffic, train, infer, evaluate and run the
//! canned experiments. Artifacts are JSON, JSON-lines or CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use xprint_core::features::{extract, feature_names};
use xprint_core::pipeline::{
    evaluate, infer_all, run_experiment, train, ExperimentConfig, ModelBundle, PipelineConfig, TracePrediction,
};
use xprint_core::synth::{generate_dataset, Manifest, ScenarioConfig};
use xprint_core::traffic::{load_traces, save_traces};

#[derive(Parser)]
#[command(name = "xprint", version, about = "Behavior fingerprinting of encrypted app traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test corpus.
    Generate {
        /// Scenario JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model bundle from labelled traces.
    Train {
        /// Pipeline JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        traces: PathBuf,
        /// Bundle path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Label behaviors in traces with a trained bundle.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Predictions, one JSON object per trace.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-segment scores and vote outcomes.
        #[arg(long)]
        stage1_report: Option<PathBuf>,
        /// Also write the predicted URI sequences.
        #[arg(long)]
        uri_report: Option<PathBuf>,
    },
    /// Score predictions against the ground truth in the traces.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Fraction of a true window a prediction must cover.
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named experiment and write `<name>.csv` and `<name>.summary.json`.
    Experiment {
        /// delta-sweep, map-vs-bag, lambda-beta-grid, unseen-platform,
        /// unseen-app, unseen-version, interleaved or dtw-consistency
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature utilities.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Write the feature vector of every flow as CSV.
    Dump {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(xprint_core::Error::from)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| xprint_core::Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn generate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_json::<ScenarioConfig>(p)?,
        None => ScenarioConfig::new(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate_dataset(&cfg)?;
    std::fs::create_dir_all(out)?;
    save_traces(out.join("train.jsonl"), &ds.train)?;
    save_traces(out.join("test.jsonl"), &ds.test)?;
    write_json(&out.join("manifest.json"), &Manifest::new(&cfg, &ds.specs))?;
    info!(
        "{} training and {} test traces in {}",
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(config: Option<&Path>, seed: Option<u64>, traces: &Path, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let traces = load_traces(traces)?;
    let bundle = train(&cfg, &traces)?;
    bundle.save(out)?;
    info!(
        "bundle with {} apps and {} CUMs written to {}",
        bundle.similarity.len(),
        bundle.cums.len(),
        out.display()
    );
    Ok(())
}

fn infer_cmd(model: &Path, traces: &Path, out: &Path, stage1: Option<&Path>, uri: Option<&Path>) -> Result<()> {
    let bundle = ModelBundle::load(model)?;
    let traces = load_traces(traces)?;
    let preds = infer_all(&bundle, &traces)?;
    if let Some(p) = stage1 {
        write_lines(
            p,
            preds
                .iter()
                .map(|t| serde_json::json!({ "trace_id": t.trace_id, "segments": t.segments })),
        )?;
    }
    if let Some(p) = uri {
        write_lines(
            p,
            preds
                .iter()
                .map(|t| serde_json::json!({ "trace_id": t.trace_id, "sequences": t.sequences })),
        )?;
    }
    write_lines(
        out,
        preds.iter().map(|t| TracePrediction {
            segments: Vec::new(),
            sequences: Vec::new(),
            ..t.clone()
        }),
    )?;
    Ok(())
}

fn evaluate_cmd(predictions: &Path, traces: &Path, overlap: f64, out: &Path) -> Result<()> {
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(xprint_core::Error::Config("overlap must lie in (0, 1]".into()).into());
    }
    let preds: Vec<TracePrediction> = read_lines(predictions)?;
    let truth = load_traces(traces)?;
    let report = evaluate(&preds, &truth, overlap)?;
    let m = report.behavior.macro_avg;
    println!(
        "behavior precision {:.3} recall {:.3} f1 {:.3} fnr {:.3} fpr {:.3}",
        m.precision, m.recall, m.f1, m.fnr, m.fpr
    );
    write_json(out, &report)
}

fn experiment_cmd(name: &str, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let output = run_experiment(name, &cfg)?;
    let (csv, summary) = output.write(out)?;
    println!("{}\n{}", csv.display(), summary.display());
    Ok(())
}

fn features_dump(traces: &Path, out: &Path) -> Result<()> {
    let traces = load_traces(traces)?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    let mut header = vec!["trace_id".to_string(), "flow_id".into(), "app".into()];
    header.extend(feature_names().iter().cloned());
    w.write_record(&header)?;
    for t in &traces {
        for f in &t.flows {
            let fv = extract(&f.packets)?;
            let mut row = vec![t.trace_id.clone(), f.flow_id.clone(), f.app.clone().unwrap_or_default()];
            row.extend(fv.values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => generate(config.as_deref(), seed, &out),
        Command::Train {
            config,
            seed,
            traces,
            out,
        } => train_cmd(config.as_deref(), seed, &traces, &out),
        Command::Infer {
            model,
            traces,
            out,
            stage1_report,
            uri_report,
        } => infer_cmd(&model, &traces, &out, stage1_report.as_deref(), uri_report.as_deref()),
        Command::Evaluate {
            predictions,
            traces,
            overlap,
            out,
        } => evaluate_cmd(&predictions, &traces, overlap, &out),
        Command::Experiment {
            name,
            config,
            seed,
            out,
        } => experiment_cmd(&name, config.as_deref(), seed, &out),
        Command::Features {
            command: FeaturesCommand::Dump { traces, out },
        } => features_dump(&traces, &out),
    }
}

/// Bad input of any kind exits with 2; I/O and other failures with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    use xprint_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Io(_)) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
