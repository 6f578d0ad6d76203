//! `alref`: generate synthetic pools, simulate coarse labels, run
//! label-refinement experiments and plot their results.
//!
//! Exit codes: 0 success, 1 usage or invalid configuration, 2 file or
//! format problems, 3 anything else.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alref::coarse::{noise_rate, simulate_coarse, ClassOrder, CoarseSimConfig, Enlargement};
use alref::dataset::DataManifest;
use alref::experiment::{read_records_csv, run_experiment, write_records_csv, CycleRecord, ExperimentConfig};
use alref::predictor::{BaselinePredictor, Predictor};
use alref::protocol::{serve, BaselineBackend, SidecarClient, UniformBackend};
use alref::report::{aggregate, render_svg, summarize, write_summary, Metric};
use alref::seed::{self, tag};
use alref::synth::{generate_pool, SceneSpec};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed used by every subcommand when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Parser, Debug)]
#[command(name = "alref", version, about = "Active label refinement experiments")]
struct Cli {
    /// Master seed for all randomness [default: 0; for `run --config`, the
    /// manifest's seed].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `run` (falls back to ALREF_JOBS, then all cores).
    #[arg(long, global = true, env = "ALREF_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic image pool and its manifest.
    GenData(GenData),
    /// Coarsen the fine labels of a pool.
    SimulateCoarse(SimCoarse),
    /// Run a leave-one-out refinement experiment.
    Run(Box<Run>),
    /// Plot and summarize result tables.
    Report(Report),
    /// Serve the predictor protocol on stdin/stdout.
    Serve(Serve),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    images: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 6)]
    blobs: usize,
    #[arg(long, default_value_t = 0.08)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.04)]
    small_object_rate: f64,
}

#[derive(Args, Debug)]
struct SimCoarse {
    /// Data manifest written by `gen-data`.
    #[arg(long, default_value = "data/manifest.json")]
    data: PathBuf,
    #[arg(long, default_value = "coarse")]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    min_filter: usize,
    #[arg(long, default_value_t = 32)]
    max_filter: usize,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Comma-separated class order; random per image when absent.
    #[arg(long, value_delimiter = ',')]
    class_order: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PredictorKind {
    Baseline,
    Sidecar,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Full-scale settings: N=128, K=16, 30 cycles, 128-pixel candidates.
    Full,
    /// Laptop settings for 256x256 pools: N=32, K=4, 15 cycles, 64-pixel candidates.
    Desk,
}

#[derive(Args, Debug)]
struct Run {
    #[arg(long, default_value = "data/manifest.json")]
    data: PathBuf,
    /// Result table; the run manifest goes next to it as `<out>.manifest.json`.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Previous run manifest whose settings become the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults when neither flags nor `--config` set a value.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    k_select: Option<usize>,
    #[arg(long)]
    candidate_size: Option<usize>,
    /// Stop a fold once this acquisition rate is reached.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    oracle_keep_prob: Option<f64>,
    #[arg(long)]
    min_filter: Option<usize>,
    #[arg(long)]
    max_filter: Option<usize>,
    #[arg(long)]
    chip_size: Option<usize>,
    #[arg(long)]
    chips_per_epoch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    warm_start: Option<bool>,
    /// Record wall time per cycle (makes tables non-reproducible).
    #[arg(long, conflicts_with = "no_timing")]
    timing: bool,
    #[arg(long)]
    no_timing: bool,
    #[arg(long, value_enum)]
    predictor: Option<PredictorKind>,
    /// Shell command starting a protocol server, for `--predictor sidecar`.
    #[arg(long)]
    sidecar_cmd: Option<String>,
}

#[derive(Args, Debug)]
struct Report {
    /// Result tables or glob patterns.
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendKind {
    Baseline,
    Uniform,
}

#[derive(Args, Debug)]
struct Serve {
    #[arg(long, value_enum, default_value = "baseline")]
    backend: BackendKind,
}

/// Everything needed to repeat a `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    config: ExperimentConfig,
    predictor: PredictorKind,
    sidecar_cmd: Option<String>,
    tool_version: String,
    data_manifest: PathBuf,
    data_manifest_hash: String,
    timestamp: String,
}

/// Error raised for invalid user input; exits with code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn classify(e: &alref::Error) -> u8 {
    use alref::Error as E;
    match e {
        E::Config { .. } | E::Bounds { .. } | E::Dimension(_) | E::Domain(_) => 1,
        E::Io { .. } | E::Format(_) | E::Csv(_) | E::Json(_) => 2,
        E::Cycle { source, .. } => classify(source),
        _ => 3,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<alref::Error>() {
            return classify(e);
        }
        if cause.is::<glob::PatternError>() {
            return 1;
        }
        if cause.is::<io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).map_err(|e| alref::Error::Io { path: path.into(), source: e })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| alref::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

fn gen_data(seed: u64, a: &GenData) -> anyhow::Result<()> {
    if a.images < 2 {
        return Err(usage("--images: pool needs at least 2 images for leave-one-out"));
    }
    let spec = SceneSpec {
        seed,
        width: a.width,
        height: a.height,
        bands: a.bands,
        num_classes: a.classes,
        blob_count: a.blobs,
        noise_sigma: a.noise_sigma,
        small_object_rate: a.small_object_rate,
    };
    let pool = generate_pool(seed, a.images, &spec)?;
    let path = a.out.join("manifest.json");
    DataManifest::write_pool(&path, &pool, Some(seed), Some(spec))?;
    eprintln!("wrote {} images to {}", pool.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CoarseLogEntry {
    image: usize,
    labels: String,
    noise_rate: f64,
    enlargements: Vec<Enlargement>,
}

fn simulate(seed: u64, a: &SimCoarse) -> anyhow::Result<()> {
    let manifest = DataManifest::load(&a.data)?;
    let pool = manifest.load_pool(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| alref::Error::Io { path: a.out.clone(), source: e })?;
    let mut log = Vec::with_capacity(pool.len());
    for (i, (_, fine)) in pool.iter().enumerate() {
        let cfg = CoarseSimConfig {
            min_filter: a.min_filter,
            max_filter: a.max_filter,
            rounds: a.rounds,
            seed: seed::derive(seed, &[tag::COARSE, i as u64]),
            class_order: a.class_order.clone().map_or(ClassOrder::RandomPermutation, ClassOrder::FixedList),
        };
        let out = simulate_coarse(fine, &cfg)?;
        let name = format!("coarse_{i:03}.bras");
        alref::bras::write(&a.out.join(&name), &alref::bras::encode_labels(&out.labels))?;
        log.push(CoarseLogEntry {
            image: i,
            labels: name,
            noise_rate: noise_rate(&out.labels, fine)?,
            enlargements: out.log,
        });
    }
    write_json(&a.out.join("coarse_log.json"), &log)?;
    eprintln!("coarsened {} label maps into {}", log.len(), a.out.display());
    Ok(())
}

fn resolve_run(seed: Option<u64>, a: &Run) -> anyhow::Result<(ExperimentConfig, PredictorKind, Option<String>)> {
    let base = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| alref::Error::Io { path: path.clone(), source: e })?;
            let m: RunManifest =
                serde_json::from_str(&text).with_context(|| format!("{}: not a run manifest", path.display()))?;
            Some(m)
        }
        None => None,
    };
    let mut cfg = match (&base, a.preset) {
        (Some(m), _) => m.config.clone(),
        (None, Preset::Desk) => ExperimentConfig { timing: false, ..ExperimentConfig::desk() },
        (None, Preset::Full) => ExperimentConfig { timing: false, ..ExperimentConfig::default() },
    };
    match (seed, &base) {
        (Some(s), _) => cfg.seed = s,
        (None, None) => cfg.seed = DEFAULT_SEED,
        (None, Some(_)) => {}
    }
    if let Some(s) = &a.strategy {
        cfg.strategy = s.parse().map_err(|e: alref::Error| usage(format!("--strategy: {e}")))?;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    set!(
        cycles => cycles,
        repeats => repeats,
        n_candidates => n_candidates,
        k_select => k_select,
        candidate_size => candidate_size,
        oracle_keep_prob => oracle_keep_prob,
        min_filter => coarse.min_filter,
        max_filter => coarse.max_filter,
        chip_size => predictor.chip_size,
        chips_per_epoch => predictor.chips_per_epoch,
        epochs => predictor.epochs,
        learning_rate => predictor.learning_rate,
        window => predictor.window,
        warm_start => predictor.warm_start,
    );
    if a.budget.is_some() {
        cfg.budget = a.budget;
    }
    if a.timing {
        cfg.timing = true;
    }
    if a.no_timing {
        cfg.timing = false;
    }
    let predictor = a
        .predictor
        .or(base.as_ref().map(|m| m.predictor))
        .unwrap_or(PredictorKind::Baseline);
    let sidecar_cmd = a.sidecar_cmd.clone().or(base.and_then(|m| m.sidecar_cmd));
    if predictor == PredictorKind::Sidecar && sidecar_cmd.is_none() {
        return Err(usage("--sidecar-cmd is required with --predictor sidecar"));
    }
    cfg.validate().map_err(|e| match e {
        alref::Error::Config { field, message } => usage(format!("--{}: {message}", field.replace('_', "-"))),
        other => other.into(),
    })?;
    Ok((cfg, predictor, sidecar_cmd))
}

fn run(seed: Option<u64>, jobs: Option<usize>, a: &Run) -> anyhow::Result<()> {
    let (config, predictor, sidecar_cmd) = resolve_run(seed, a)?;
    let data = DataManifest::load(&a.data)?;
    let hash = sha256_file(&a.data)?;
    if let Some(path) = &a.config {
        let old: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if old.data_manifest_hash != hash {
            eprintln!("warning: {} differs from the data the manifest was recorded with", a.data.display());
        }
    }
    let pool = data.load_pool(&a.data)?;
    let manifest = RunManifest {
        config: config.clone(),
        predictor,
        sidecar_cmd: sidecar_cmd.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data_manifest: a.data.clone(),
        data_manifest_hash: hash,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let threads = match jobs {
        Some(0) => return Err(usage("--jobs: must be at least 1")),
        Some(n) => n,
        None => 0,
    };
    let workers = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let factory = |cmd: &Option<String>| -> alref::Result<Box<dyn Predictor>> {
        match predictor {
            PredictorKind::Baseline => Ok(Box::new(BaselinePredictor::new())),
            PredictorKind::Sidecar => Ok(Box::new(SidecarClient::spawn(cmd.as_deref().unwrap_or_default())?)),
        }
    };
    let records: Vec<CycleRecord> =
        workers.install(|| run_experiment(&config, &pool, &|| factory(&sidecar_cmd)))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| alref::Error::Io { path: dir.into(), source: e })?;
    }
    write_records_csv(&a.out, &records)?;
    let mut mpath = a.out.clone().into_os_string();
    mpath.push(".manifest.json");
    write_json(Path::new(&mpath), &manifest)?;
    eprintln!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn report(a: &Report) -> anyhow::Result<()> {
    let mut files = Vec::new();
    for pattern in &a.inputs {
        for entry in glob::glob(pattern)? {
            files.push(entry.map_err(|e| alref::Error::Io {
                path: e.path().to_path_buf(),
                source: e.into(),
            })?);
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(alref::Error::Io {
            path: a.inputs.join(" ").into(),
            source: io::Error::new(io::ErrorKind::NotFound, "no result tables match"),
        }
        .into());
    }
    let mut records = Vec::new();
    for f in &files {
        records.extend(read_records_csv(f)?);
    }
    fs::create_dir_all(&a.out).map_err(|e| alref::Error::Io { path: a.out.clone(), source: e })?;
    for (metric, name, title) in [
        (Metric::Accuracy, "accuracy.svg", "Held-out accuracy per cycle"),
        (Metric::AcquisitionRate, "acquisition.svg", "Acquisition rate per cycle"),
    ] {
        let series = aggregate(&records, metric)?;
        let svg = render_svg(&series, title, metric)?;
        let path = a.out.join(name);
        fs::write(&path, svg).map_err(|e| alref::Error::Io { path, source: e })?;
    }
    let rows = summarize(&records)?;
    let path = a.out.join("summary.csv");
    let file = fs::File::create(&path).map_err(|e| alref::Error::Io { path: path.clone(), source: e })?;
    write_summary(io::BufWriter::new(file), &rows)?;
    for r in &rows {
        println!(
            "{:<3} mean accuracy {:.4}  final accuracy {:.4}  final acquisition {:.4}",
            r.strategy.to_string(),
            r.legend_mean_accuracy,
            r.final_accuracy,
            r.final_acquisition_rate
        );
    }
    Ok(())
}

fn serve_cmd(a: &Serve) -> anyhow::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    match a.backend {
        BackendKind::Baseline => serve(stdin.lock(), stdout.lock(), &mut BaselineBackend::default())?,
        BackendKind::Uniform => serve(stdin.lock(), stdout.lock(), &mut UniformBackend::default())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(cli.seed.unwrap_or(DEFAULT_SEED), a),
        Command::SimulateCoarse(a) => simulate(cli.seed.unwrap_or(DEFAULT_SEED), a),
        Command::Run(a) => run(cli.seed, cli.jobs, a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alref: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("alref").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn strategy_flag_is_validated() {
        let cli = parse(&["run", "--strategy", "xx"]);
        let Command::Run(a) = &cli.command else { unreachable!() };
        let err = resolve_run(None, a).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        assert!(err.to_string().contains("--strategy"));
    }

    #[test]
    fn invalid_config_names_the_flag() {
        let cli = parse(&["run", "--k-select", "99"]);
        let Command::Run(a) = &cli.command else { unreachable!() };
        let err = resolve_run(None, a).unwrap_err();
        assert_eq!(exit_code(&err), 1);
        assert!(err.to_string().contains("--k-select"), "{err}");
    }

    #[test]
    fn flags_override_preset() {
        let cli = parse(&["run", "--cycles", "3", "--preset", "full", "--no-timing"]);
        let Command::Run(a) = &cli.command else { unreachable!() };
        let (cfg, kind, _) = resolve_run(Some(5), a).unwrap();
        assert_eq!((cfg.cycles, cfg.n_candidates, cfg.seed, cfg.timing), (3, 128, 5, false));
        assert_eq!(kind, PredictorKind::Baseline);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        let io: anyhow::Error = alref::Error::Io { path: "x".into(), source: io::Error::other("y") }.into();
        assert_eq!(exit_code(&io), 2);
        let nested: anyhow::Error = alref::Error::Cycle {
            repeat: 0,
            fold: 0,
            cycle: 1,
            source: Box::new(alref::Error::Transport("gone".into())),
        }
        .into();
        assert_eq!(exit_code(&nested), 3);
        assert_eq!(exit_code(&usage("bad")), 1);
    }
}
