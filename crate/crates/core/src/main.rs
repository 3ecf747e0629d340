use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepcluster::bench::{
    load_report, run_condition_protocol, run_finegrained, run_sweep, write_report_dir, ConditionReport,
    FinegrainedReport, Report, ReportFormat, SweepConfig, SweepReport,
};
use deepcluster::cluster::{run, AlgoConfig, Algorithm, AssignmentFile};
use deepcluster::dataset::{filter_single_label, load_manifest, DatasetManifest};
use deepcluster::extract::{extract_features, ModelSpec};
use deepcluster::metrics::score;
use deepcluster::{Error, ErrorKind, FeatureMatrix, Result};

#[derive(Parser)]
#[command(name = "deepcluster", version, about = "Cluster image sets with pretrained CNN features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one tap's activations for a dataset into a feature cache.
    Extract(ExtractArgs),
    /// Cluster a feature cache and write the assignment as JSON.
    Cluster(ClusterArgs),
    /// Score an assignment against a dataset's labels.
    Score(ScoreArgs),
    /// Run a model x layer x algorithm sweep.
    Sweep(ProtocolArgs),
    /// Cluster one picture per object under each acquisition condition.
    Conditions(ProtocolArgs),
    /// Cluster pictures of the same class by physical object.
    Finegrained(ProtocolArgs),
    /// Render a saved report.
    Report(ReportArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// Sidecar JSON path, or a model name looked up in --models-dir.
    #[arg(long)]
    model: String,
    /// Tap name, as listed in the sidecar.
    #[arg(long)]
    layer: String,
    /// Output feature cache.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value = "models")]
    models_dir: PathBuf,
    /// Drop multi-label records.
    #[arg(long)]
    single_label: bool,
}

#[derive(Args)]
struct ClusterArgs {
    /// Feature cache.
    #[arg(long)]
    features: PathBuf,
    /// KM, MBKM, AP, MS, AC, DBS or Bi.
    #[arg(long)]
    algo: Algorithm,
    /// Number of clusters, for KM, MBKM, AC and Bi only.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameter override, as name=value. Repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, f64)>,
    /// Output assignment JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    assignment: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ProtocolArgs {
    /// Sweep config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving report.json, report.csv and report.md.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report directory or report JSON file.
    #[arg(long = "in")]
    input: PathBuf,
    /// md, csv or json.
    #[arg(long, default_value = "md")]
    format: ReportFormat,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_override(s: &str) -> std::result::Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value = value.trim().parse::<f64>().map_err(|e| format!("{value}: {e}"))?;
    Ok((name.trim().to_string(), value))
}

/// Outcome of a command that completed but may carry failed cells.
enum Outcome {
    Done,
    Partial(ErrorKind),
}

fn sidecar_path(model: &str, models_dir: &Path) -> PathBuf {
    let p = PathBuf::from(model);
    if p.extension().is_some_and(|e| e == "json") || p.exists() {
        p
    } else {
        models_dir.join(format!("{model}.json"))
    }
}

fn manifest(data: &Path, single_label: bool) -> Result<DatasetManifest> {
    let m = load_manifest(data)?;
    if single_label {
        filter_single_label(&m)
    } else {
        Ok(m)
    }
}

fn extract(args: ExtractArgs) -> Result<Outcome> {
    let manifest = manifest(&args.data, args.single_label)?;
    let (spec, _) = ModelSpec::from_sidecar(sidecar_path(&args.model, &args.models_dir), &args.layer)?;
    let extraction = extract_features(&manifest.records, &spec, args.batch)?;
    extraction.features.save(&args.out)?;
    eprintln!(
        "wrote {} rows of dimension {} to {} ({} skipped)",
        extraction.features.n(),
        extraction.features.dim(),
        args.out.display(),
        extraction.skipped.len()
    );
    Ok(Outcome::Done)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cluster(args: ClusterArgs) -> Result<Outcome> {
    let config = AlgoConfig {
        algorithm: args.algo,
        k: args.k,
        overrides: args.overrides.into_iter().collect::<BTreeMap<_, _>>(),
    };
    let features = FeatureMatrix::load(&args.features, None)?;
    config.validate(features.n())?;
    let assignment = run(&features, &config, args.seed)?;
    let file = AssignmentFile::new(&config, &assignment, Some(features.ids().to_vec()));
    write_json(&args.out, &file)?;
    eprintln!(
        "{}: {} clusters, {} noise, {:.3}s",
        config.algorithm,
        assignment.n_clusters_found,
        assignment.n_noise(),
        assignment.wall_seconds
    );
    Ok(Outcome::Done)
}

fn score_cmd(args: ScoreArgs) -> Result<Outcome> {
    let path = &args.assignment;
    if !path.exists() {
        return Err(Error::NotFound(path.clone()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AssignmentFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let manifest = load_manifest(&args.data)?;
    let truth: Vec<usize> = match &file.ids {
        Some(ids) => {
            if ids.len() != file.labels.len() {
                return Err(Error::Shape(format!(
                    "{} labels for {} ids",
                    file.labels.len(),
                    ids.len()
                )));
            }
            ids.iter()
                .map(|id| {
                    manifest
                        .record(id)
                        .map(|r| r.primary_label())
                        .ok_or_else(|| Error::Shape(format!("record `{id}` is not in the dataset")))
                })
                .collect::<Result<_>>()?
        }
        None => DatasetManifest::ground_truth(&manifest.records),
    };
    let s = score(&file.labels, &truth)?;
    println!("nmi={:?} purity={:?}", s.nmi, s.purity);
    Ok(Outcome::Done)
}

fn protocol_config(args: &ProtocolArgs) -> Result<SweepConfig> {
    let mut config = SweepConfig::load(&args.config)?;
    if args.jobs.is_some() {
        config.jobs = args.jobs;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn finish<R: Report>(report: &R, out: &Path, failed: bool, kind: Option<ErrorKind>) -> Result<Outcome> {
    write_report_dir(report, out)?;
    eprintln!("{}", report.to_markdown());
    eprintln!("reports written to {}", out.display());
    Ok(if failed {
        Outcome::Partial(kind.unwrap_or(ErrorKind::Runtime))
    } else {
        Outcome::Done
    })
}

fn sweep(args: ProtocolArgs) -> Result<Outcome> {
    let report = run_sweep(&protocol_config(&args)?)?;
    finish(&report, &args.out, report.has_failures(), report.first_failure())
}

fn conditions(args: ProtocolArgs) -> Result<Outcome> {
    let report = run_condition_protocol(&protocol_config(&args)?)?;
    finish(&report, &args.out, report.has_failures(), report.first_failure())
}

fn finegrained(args: ProtocolArgs) -> Result<Outcome> {
    let report = run_finegrained(&protocol_config(&args)?)?;
    finish(&report, &args.out, report.has_failures(), report.first_failure())
}

fn report(args: ReportArgs) -> Result<Outcome> {
    let text = if let Ok(r) = load_report::<SweepReport>(&args.input) {
        r.render(args.format)?
    } else if let Ok(r) = load_report::<ConditionReport>(&args.input) {
        r.render(args.format)?
    } else {
        load_report::<FinegrainedReport>(&args.input)?.render(args.format)?
    };
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Cluster(a) => cluster(a),
        Command::Score(a) => score_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Conditions(a) => conditions(a),
        Command::Finegrained(a) => finegrained(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(kind)) => {
            eprintln!("error: some cells failed; see the status column");
            ExitCode::from(kind.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
