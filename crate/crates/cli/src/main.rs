//! bench-oracle: estimate ML technique performance on hardware it has never
//! been benchmarked on.
//!
//! One binary, subcommands for ingesting benchmark CSVs, handling intents,
//! running the add-technique/add-device workflows, querying predictions, and
//! reproducing the missing-fraction experiment. All randomness derives from
//! `--seed`.

mod error;
mod exit;

use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bench_oracle_core::cf::Hyperparams;
use bench_oracle_core::eval::{
    generate_synthetic, run_experiment, summary_csv, summary_path, ExperimentConfig,
    ExperimentResult,
};
use bench_oracle_core::intent::{configure_policies, parse_intent, to_structured_json, StructuredIntent};
use bench_oracle_core::matrix::BenchmarkMatrix;
use bench_oracle_core::recommend::{
    add_device, add_technique, default_k, RecommendationReport, TableSource,
};
use bench_oracle_core::store::{Provenance, StoreSnapshot};

use error::AppError;

#[derive(Parser)]
#[command(
    name = "bench-oracle",
    version,
    about = "Benchmark prediction for ML techniques on heterogeneous hardware"
)]
struct Cli {
    /// Store file (JSON)
    #[arg(long, global = true, env = "BENCH_ORACLE_STORE", default_value = "store.json")]
    store: PathBuf,

    /// Seed for every random decision (sampling, init, shuffling)
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Latent factor count override
    #[arg(long, global = true)]
    rank: Option<usize>,

    /// Learning rate override
    #[arg(long, global = true)]
    lr: Option<f64>,

    /// Regularization factor override
    #[arg(long, global = true)]
    reg: Option<f64>,

    /// Training epoch count override
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a benchmark CSV into a fresh store
    Ingest {
        /// CSV file: header `technique,<device-id>,...`, empty cells missing
        csv: PathBuf,
    },
    /// Handle an intent line; with no argument, read lines from stdin
    Intent {
        /// e.g. "add device edge_100 to domain warehouse_5"
        text: Option<String>,
        /// Benchmark sample size (default: 30% of counterparts, at least 3)
        #[arg(long)]
        k: Option<usize>,
        /// CSV of real measurements for the new subject: `counterpart,value`
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Print the stored benchmark for a technique/device pair
    Predict { technique: String, device: String },
    /// Register a technique, measure k devices, predict the rest
    AddTechnique {
        id: String,
        #[arg(long = "type")]
        technique_type: String,
        #[arg(long)]
        k: Option<usize>,
        /// CSV of real measurements: `counterpart,value`
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Register a device, measure k techniques, predict the rest
    AddDevice {
        id: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        k: Option<usize>,
        /// CSV of real measurements: `counterpart,value`
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Run the missing-fraction prediction experiment
    Experiment {
        /// Benchmark CSV to evaluate on
        #[arg(long, conflicts_with = "synthetic")]
        csv: Option<PathBuf>,
        /// Generate a synthetic dataset instead, e.g. 42x192
        #[arg(long)]
        synthetic: Option<String>,
        /// True rank of the synthetic dataset
        #[arg(long, default_value_t = 10)]
        true_rank: usize,
        /// Gaussian noise std for the synthetic dataset
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Missing fractions as start:end:step
        #[arg(long, default_value = "0.3:0.9:0.1")]
        fractions: String,
        /// Replications per fraction
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Detail CSV path (summary lands next to it with a _summary suffix)
        #[arg(long, default_value = "experiment.csv")]
        out: PathBuf,
    },
    /// Write a synthetic benchmark CSV
    Generate {
        /// Matrix shape, e.g. 42x192
        #[arg(long)]
        size: String,
        #[arg(long, default_value_t = 10)]
        true_rank: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Ingest { csv } => cmd_ingest(cli, csv),
        Command::Intent {
            text,
            k,
            measurements,
        } => match text {
            Some(line) => cmd_intent_line(cli, line, *k, measurements.as_deref()),
            None => cmd_intent_repl(cli, *k, measurements.as_deref()),
        },
        Command::Predict { technique, device } => cmd_predict(cli, technique, device),
        Command::AddTechnique {
            id,
            technique_type,
            k,
            measurements,
        } => cmd_add_technique(cli, id, technique_type, *k, measurements),
        Command::AddDevice {
            id,
            domain,
            k,
            measurements,
        } => cmd_add_device(cli, id, domain, *k, measurements),
        Command::Experiment {
            csv,
            synthetic,
            true_rank,
            noise_std,
            fractions,
            reps,
            out,
        } => cmd_experiment(
            cli, csv.as_deref(), synthetic.as_deref(), *true_rank, *noise_std, fractions, *reps,
            out,
        ),
        Command::Generate {
            size,
            true_rank,
            noise_std,
            out,
        } => cmd_generate(cli, size, *true_rank, *noise_std, out),
    }
}

fn hyperparams(cli: &Cli) -> Result<Hyperparams, AppError> {
    let defaults = Hyperparams::default();
    let params = Hyperparams {
        rank: cli.rank.unwrap_or(defaults.rank),
        learning_rate: cli.lr.unwrap_or(defaults.learning_rate),
        regularization: cli.reg.unwrap_or(defaults.regularization),
        epochs: cli.epochs.unwrap_or(defaults.epochs),
        seed: cli.seed,
        init_scale: defaults.init_scale,
    };
    params.validate()?;
    Ok(params)
}

fn load_store(path: &Path) -> Result<StoreSnapshot, AppError> {
    if !path.exists() {
        return Err(AppError::Io(format!(
            "store file `{}` not found; run `bench-oracle ingest` first or set --store",
            path.display()
        )));
    }
    Ok(StoreSnapshot::load(path)?)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

fn cmd_ingest(cli: &Cli, csv: &Path) -> Result<(), AppError> {
    let text = std::fs::read_to_string(csv)?;
    let matrix = BenchmarkMatrix::ingest_csv(&text)?;
    let store = StoreSnapshot::from_measured_matrix(matrix, "imported", "imported")?;
    store.save(&cli.store)?;
    println!(
        "ingested {} techniques x {} devices, {} observed",
        store.matrix().rows(),
        store.matrix().cols(),
        store.matrix().observed_len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// intent
// ---------------------------------------------------------------------------

fn cmd_intent_line(
    cli: &Cli,
    line: &str,
    k: Option<usize>,
    measurements: Option<&Path>,
) -> Result<(), AppError> {
    let intent = parse_intent(line)?;
    println!("{}", to_structured_json(&intent));

    let mut store = load_store(&cli.store)?;
    let outcome = configure_policies(&intent, &store);
    print_policy_outcome(cli.format, &outcome);
    if !outcome.triggered_recommender {
        for alert in outcome.alerts() {
            eprintln!("alert: {alert}");
        }
        return Err(AppError::PolicyFailed(
            outcome.alerts().iter().map(|s| s.to_string()).collect(),
        ));
    }

    let params = hyperparams(cli)?;
    let report = match &intent {
        StructuredIntent::AddDevice { device, domain } => {
            let counterparts = store.matrix().rows();
            let k = effective_k(k, counterparts)?;
            let source = measurement_source(measurements, device)?;
            add_device(&mut store, device, domain, k, &source, &params)?
        }
        StructuredIntent::AddTechnique {
            technique,
            technique_type,
        } => {
            let counterparts = store.matrix().cols();
            let k = effective_k(k, counterparts)?;
            let source = measurement_source(measurements, technique)?;
            add_technique(&mut store, technique, technique_type, k, &source, &params)?
        }
    };
    print_report(cli.format, &report);
    store.save(&cli.store)?;
    Ok(())
}

fn cmd_intent_repl(cli: &Cli, k: Option<usize>, measurements: Option<&Path>) -> Result<(), AppError> {
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    if interactive {
        eprintln!("reading intents line by line; Ctrl-D to finish");
    }
    loop {
        if interactive {
            eprint!("> ");
            let _ = std::io::stderr().flush();
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            return Ok(());
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Err(err) = cmd_intent_line(cli, line, k, measurements) {
            eprintln!("error: {err}");
        }
    }
}

fn effective_k(k: Option<usize>, counterparts: usize) -> Result<usize, AppError> {
    if counterparts == 0 {
        return Err(AppError::Validation(
            "store has no counterparts to benchmark against".to_string(),
        ));
    }
    Ok(k.unwrap_or_else(|| default_k(counterparts)))
}

fn measurement_source(path: Option<&Path>, subject: &str) -> Result<TableSource, AppError> {
    let path = path.ok_or_else(|| {
        AppError::Measurement(format!(
            "no measurement source for `{subject}`: pass --measurements <csv> with `counterpart,value` rows"
        ))
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Measurement(format!("cannot read measurements: {e}")))?;
    Ok(TableSource::from_csv(subject, &text)?)
}

fn print_policy_outcome(format: Format, outcome: &bench_oracle_core::intent::PolicyOutcome) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(outcome).expect("serializes")),
        _ => {
            for check in &outcome.checks {
                let verdict = if check.passed { "pass" } else { "FAIL" };
                println!("check {:<18} {:<4} {}", check.name, verdict, check.message);
            }
            println!(
                "recommender triggered: {}",
                if outcome.triggered_recommender { "yes" } else { "no" }
            );
        }
    }
}

fn print_report(format: Format, report: &RecommendationReport) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(report).expect("serializes")),
        Format::Csv => {
            println!("counterpart,value,source");
            for entry in report.measured.iter().chain(report.predicted.iter()) {
                println!("{},{},{}", entry.counterpart, entry.value, source_str(entry.source));
            }
        }
        Format::Table => {
            println!(
                "subject {}: {} measured, {} predicted",
                report.subject,
                report.measured.len(),
                report.predicted.len()
            );
            let d = &report.model_diagnostics;
            match d.final_objective {
                Some(obj) => println!("model: {} epochs, final objective {obj:.6e}", d.epochs),
                None => println!("model: training skipped (nothing to predict)"),
            }
            for w in &d.warnings {
                println!("warning: {w}");
            }
            println!("{:<28} {:>14}  {}", "counterpart", "value", "source");
            for entry in report.measured.iter().chain(report.predicted.iter()) {
                println!(
                    "{:<28} {:>14.6} {}",
                    entry.counterpart,
                    entry.value,
                    source_str(entry.source)
                );
            }
        }
    }
}

fn source_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Measured => "measured",
        Provenance::Predicted => "predicted",
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn cmd_predict(cli: &Cli, technique: &str, device: &str) -> Result<(), AppError> {
    let store = load_store(&cli.store)?;
    let (value, provenance) = store.lookup(technique, device)?;
    match cli.format {
        Format::Json => println!(
            "{}",
            serde_json::json!({
                "technique": technique,
                "device": device,
                "value": value,
                "source": source_str(provenance),
            })
        ),
        Format::Csv => {
            println!("technique,device,value,source");
            println!("{technique},{device},{value},{}", source_str(provenance));
        }
        Format::Table => println!("{value} ({})", source_str(provenance)),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// add-technique / add-device
// ---------------------------------------------------------------------------

fn cmd_add_technique(
    cli: &Cli,
    id: &str,
    technique_type: &str,
    k: Option<usize>,
    measurements: &Path,
) -> Result<(), AppError> {
    let mut store = load_store(&cli.store)?;
    let k = effective_k(k, store.matrix().cols())?;
    let source = measurement_source(Some(measurements), id)?;
    let params = hyperparams(cli)?;
    let report = add_technique(&mut store, id, technique_type, k, &source, &params)?;
    print_report(cli.format, &report);
    store.save(&cli.store)?;
    Ok(())
}

fn cmd_add_device(
    cli: &Cli,
    id: &str,
    domain: &str,
    k: Option<usize>,
    measurements: &Path,
) -> Result<(), AppError> {
    let mut store = load_store(&cli.store)?;
    let k = effective_k(k, store.matrix().rows())?;
    let source = measurement_source(Some(measurements), id)?;
    let params = hyperparams(cli)?;
    let report = add_device(&mut store, id, domain, k, &source, &params)?;
    print_report(cli.format, &report);
    store.save(&cli.store)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment / generate
// ---------------------------------------------------------------------------

fn parse_shape(text: &str) -> Result<(usize, usize), AppError> {
    let (m, n) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| AppError::Validation(format!("shape must look like 42x192, got `{text}`")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| AppError::Validation(format!("bad dimension `{s}` in shape `{text}`")))
    };
    Ok((parse(m)?, parse(n)?))
}

/// Parses `start:end:step` into a fraction list, rounding each value to nine
/// decimals so accumulated float steps print cleanly (0.7, not 0.7000...01).
fn parse_fractions(text: &str) -> Result<Vec<f64>, AppError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || AppError::Validation(format!("fractions must be start:end:step, got `{text}`"));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (start, end, step) = match parts.as_slice() {
        [single] => {
            let f = parse(single)?;
            (f, f, 0.1)
        }
        [start, end, step] => (parse(start)?, parse(end)?, parse(step)?),
        _ => return Err(bad()),
    };
    if !(step > 0.0) || !(start <= end) {
        return Err(bad());
    }
    let mut fractions = Vec::new();
    let mut i = 0usize;
    loop {
        let f = ((start + step * i as f64) * 1e9).round() / 1e9;
        if f > end + step / 2.0 {
            break;
        }
        fractions.push(f);
        i += 1;
    }
    if fractions.is_empty() {
        return Err(bad());
    }
    Ok(fractions)
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    cli: &Cli,
    csv: Option<&Path>,
    synthetic: Option<&str>,
    true_rank: usize,
    noise_std: f64,
    fractions: &str,
    reps: usize,
    out: &Path,
) -> Result<(), AppError> {
    let dataset = match (csv, synthetic) {
        (Some(path), None) => BenchmarkMatrix::ingest_csv(&std::fs::read_to_string(path)?)?,
        (None, Some(shape)) => {
            let (m, n) = parse_shape(shape)?;
            generate_synthetic(m, n, true_rank, noise_std, cli.seed)?
        }
        _ => {
            return Err(AppError::Validation(
                "pass exactly one of --csv <path> or --synthetic MxN".to_string(),
            ))
        }
    };
    let config = ExperimentConfig {
        missing_fractions: parse_fractions(fractions)?,
        replications: reps,
        hyperparams: hyperparams(cli)?,
        dataset,
        base_seed: cli.seed,
    };
    let result = run_experiment(&config)?;
    bench_oracle_core::eval::emit_results(&result, out)?;
    print_experiment(cli.format, &result, out);
    Ok(())
}

fn print_experiment(format: Format, result: &ExperimentResult, out: &Path) {
    match format {
        Format::Json => println!(
            "{}",
            serde_json::json!({
                "summary": result.summary,
                "failures": result.failures,
                "detail_csv": out.display().to_string(),
                "summary_csv": summary_path(out).display().to_string(),
            })
        ),
        Format::Csv => print!("{}", summary_csv(result)),
        Format::Table => {
            println!(
                "{:<18} {:>22} {:>12} {:>6}",
                "missing_fraction", "mean_normalized_rmse", "mean_rmse", "rows"
            );
            for s in &result.summary {
                println!(
                    "{:<18} {:>22.6} {:>12.6} {:>6}",
                    s.missing_fraction, s.mean_normalized_rmse, s.mean_rmse, s.rows
                );
            }
            for f in &result.failures {
                println!(
                    "warning: fraction {} replication {} skipped: {}",
                    f.missing_fraction, f.replication, f.message
                );
            }
            println!(
                "detail: {}  summary: {}",
                out.display(),
                summary_path(out).display()
            );
        }
    }
}

fn cmd_generate(cli: &Cli, size: &str, true_rank: usize, noise_std: f64, out: &Path) -> Result<(), AppError> {
    let (m, n) = parse_shape(size)?;
    let matrix = generate_synthetic(m, n, true_rank, noise_std, cli.seed)?;
    std::fs::write(out, matrix.to_csv())?;
    println!(
        "wrote {m}x{n} synthetic benchmark CSV (rank {true_rank}, noise {noise_std}) to {}",
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_parsing() {
        assert_eq!(parse_shape("42x192").unwrap(), (42, 192));
        assert_eq!(parse_shape("3X4").unwrap(), (3, 4));
        assert!(parse_shape("42").is_err());
        assert!(parse_shape("axb").is_err());
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!(
            parse_fractions("0.3:0.9:0.1").unwrap(),
            vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        );
        assert_eq!(parse_fractions("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_fractions("0.4:0.4:0.1").unwrap(), vec![0.4]);
        assert!(parse_fractions("0.9:0.3:0.1").is_err());
        assert!(parse_fractions("0.3:0.9:0").is_err());
        assert!(parse_fractions("nope").is_err());
    }
}
