//! `cgsense` command-line driver: simulate, recon, dcf, compare.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 data error,
//! 4 numeric failure. Pipeline stages are logged to stderr as one JSON
//! object per line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use cgsense::config::{read_config, RunConfig};
use cgsense::container::{self, GroundTruth};
use cgsense::data::{GridGeometry, Image, Undersampling};
use cgsense::export::{self, ExportFormats};
use cgsense::metrics::{self, DEFAULT_QUANTILE};
use cgsense::sense::{PreparedRecon, StageRecord};
use cgsense::Error;

#[derive(Parser, Debug)]
#[command(name = "cgsense", version, about = "Iterative CG-SENSE reconstruction")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs (created if needed).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Seed for simulated noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the coil-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a multi-coil radial acquisition of a Shepp-Logan phantom.
    Simulate(SimulateArgs),
    /// Reconstruct a container over the configured undersampling series.
    Recon(ReconArgs),
    /// Compute density compensation weights for a container's trajectory.
    Dcf(DcfArgs),
    /// Compare two images after symmetric cropping and quantile normalization.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output container (default: <output-dir>/simulated.h5). Ground truth
    /// goes next to it as `<stem>_truth.h5`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Image matrix size (even).
    #[arg(long)]
    matrix_size: Option<usize>,
    /// Receive coils.
    #[arg(long)]
    coils: Option<usize>,
    /// Radial spokes over the half circle.
    #[arg(long)]
    spokes: Option<usize>,
    /// Samples per spoke.
    #[arg(long)]
    read: Option<usize>,
    /// Adds complex Gaussian noise at this signal-to-noise ratio.
    #[arg(long)]
    snr: Option<f64>,
}

#[derive(Args, Debug)]
struct ReconArgs {
    input: PathBuf,
    /// CG iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Tikhonov weight λ (0 disables regularization).
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated skip factors, e.g. `1,2,3,4`; replaces the config series.
    #[arg(long, value_delimiter = ',')]
    skip: Option<Vec<usize>>,
    /// Comma-separated spoke counts, e.g. `55,33,22,11`; replaces the config series.
    #[arg(long, value_delimiter = ',', conflicts_with = "skip")]
    first_spokes: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct DcfArgs {
    input: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    image: PathBuf,
    reference: PathBuf,
    /// Container with a `mask` entry. Without it, the reference's own mask
    /// is used when it has one.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Compare every pixel even if the reference carries a mask.
    #[arg(long, conflicts_with = "mask")]
    no_mask: bool,
    /// Both images are divided by their magnitude at this quantile.
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
}

/// Failure tagged with the pipeline stage it came from.
struct Failure {
    stage: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    fn usage(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            stage,
            code: 2,
            message: message.into(),
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for cgsense::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| failure(stage, e))
    }
}

fn failure(stage: &'static str, e: Error) -> Failure {
    Failure {
        stage,
        code: if e.is_numeric() { 4 } else { 3 },
        message: e.to_string(),
    }
}

fn log(value: serde_json::Value) {
    eprintln!("{value}");
}

fn log_stage(record: &StageRecord, scheme: Option<Undersampling>) {
    let mut v = json!({ "stage": record.stage, "seconds": record.seconds, "detail": record.detail });
    if let Some(s) = scheme {
        v["undersampling"] = json!(s.label());
    }
    log(v);
}

fn timed<T>(stage: &'static str, f: impl FnOnce() -> cgsense::Result<T>) -> Result<T, Failure> {
    let start = Instant::now();
    let out = f().stage(stage)?;
    log(json!({ "stage": stage, "seconds": start.elapsed().as_secs_f64() }));
    Ok(out)
}

struct Context {
    config: RunConfig,
    output_dir: PathBuf,
    formats: ExportFormats,
    seed: u64,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let config = match &cli.config {
            Some(path) => {
                let (config, warnings) = read_config(path).map_err(|e| match e {
                    Error::Container { .. } => Failure {
                        stage: "config",
                        code: 3,
                        message: e.to_string(),
                    },
                    e => Failure::usage("config", e.to_string()),
                })?;
                for w in warnings {
                    log(json!({ "level": "warning", "stage": "config", "message": w }));
                }
                config
            }
            None => RunConfig::default(),
        };
        let output_dir = cli
            .output_dir
            .clone()
            .or_else(|| config.output.directory.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("output"));
        fs::create_dir_all(&output_dir).map_err(|e| Failure {
            stage: "output",
            code: 3,
            message: format!("{}: {e}", output_dir.display()),
        })?;
        let formats = ExportFormats {
            png: config.output.write_png,
            pgm: config.output.write_pgm,
        };
        Ok(Self {
            config,
            output_dir,
            formats,
            seed: cli.seed,
        })
    }

    fn validated(&self) -> Result<(), Failure> {
        self.config
            .validate()
            .map_err(|e| Failure::usage("config", e.to_string()))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, text + "\n").map_err(|e| Failure {
        stage: "output",
        code: 3,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_simulate(ctx: &mut Context, args: &SimulateArgs) -> Result<(), Failure> {
    let spec = &mut ctx.config.simulation;
    if let Some(v) = args.matrix_size {
        spec.matrix_size = v;
    }
    if let Some(v) = args.coils {
        spec.n_coils = v;
    }
    if let Some(v) = args.spokes {
        spec.n_spokes = v;
    }
    if let Some(v) = args.read {
        spec.n_read = v;
    }
    if args.snr.is_some() {
        spec.snr = args.snr;
    }
    ctx.validated()?;
    let spec = ctx.config.simulation.clone();
    let sim = timed("simulate", || spec.run(ctx.seed))?;
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| ctx.output_dir.join("simulated.h5"));
    let truth_path = container::sibling(&out, "_truth.h5");
    let phantom = sim.phantom.magnitude();
    let truth = GroundTruth {
        mask: phantom.mapv(|v| v > 0.0),
        phantom,
        sensitivities: sim.maps.clone(),
    };
    timed("write", || {
        container::write_dataset(&out, &sim.dataset, &ctx.config.dataset_names)?;
        container::write_ground_truth(&truth_path, &truth)
    })?;
    log(json!({
        "stage": "summary",
        "dataset": out,
        "ground_truth": truth_path,
        "coils": sim.dataset.n_coils(),
        "spokes": sim.dataset.n_spokes(),
        "read": sim.dataset.n_read(),
        "noise_sigma": sim.noise_sigma,
    }));
    Ok(())
}

#[derive(Serialize)]
struct SchemeSummary {
    residual_history: Vec<f64>,
    iterations_run: usize,
    dropped_sample_count: usize,
    spokes: usize,
    initial_image: PathBuf,
    final_image: PathBuf,
}

#[derive(Serialize)]
struct ReconSummary {
    geometry: GridGeometry,
    max_iterations: usize,
    tikhonov_lambda: f64,
    series: BTreeMap<String, SchemeSummary>,
}

fn cmd_recon(ctx: &mut Context, args: &ReconArgs) -> Result<(), Failure> {
    if let Some(v) = args.iterations {
        ctx.config.max_iterations = v;
    }
    if let Some(v) = args.lambda {
        ctx.config.tikhonov_lambda = v;
    }
    if let Some(v) = &args.skip {
        ctx.config.undersampling = v.iter().map(|&r| Undersampling::SkipEvery(r)).collect();
    }
    if let Some(v) = &args.first_spokes {
        ctx.config.undersampling = v.iter().map(|&p| Undersampling::FirstSpokes(p)).collect();
    }
    ctx.validated()?;
    let config = &ctx.config;
    let dataset = timed("read", || container::read_dataset(&args.input, &config.dataset_names))?;
    log(json!({
        "stage": "dataset",
        "coils": dataset.n_coils(),
        "spokes": dataset.n_spokes(),
        "read": dataset.n_read(),
    }));
    let prepared = PreparedRecon::new(&dataset, config).stage("prepare")?;
    for record in &prepared.stages {
        log_stage(record, None);
    }
    let shared = prepared.stages.len();

    let mut series = BTreeMap::new();
    let mut initials = Vec::new();
    let mut finals = Vec::new();
    for &scheme in &config.undersampling {
        let result = prepared.run(scheme).stage("reconstruct")?;
        for record in &result.stages[shared..] {
            log_stage(record, Some(scheme));
        }
        let label = scheme.label();
        let write = |kind: &str, image: &Image| {
            export::write_image_files(image, &ctx.output_dir.join(format!("{label}_{kind}")), ctx.formats)
                .map(|paths| PathBuf::from(paths[0].file_name().expect("file name")))
        };
        let initial_path = timed("write", || write("initial", &result.initial_image))?;
        let final_path = timed("write", || write("final", &result.final_image))?;
        series.insert(
            label,
            SchemeSummary {
                residual_history: result.residual_history.clone(),
                iterations_run: result.iterations_run,
                dropped_sample_count: result.dropped_sample_count,
                spokes: scheme.spoke_indices(dataset.n_spokes()).map(|s| s.len()).unwrap_or(0),
                initial_image: initial_path,
                final_image: final_path,
            },
        );
        initials.push(result.initial_image.magnitude());
        finals.push(result.final_image.magnitude());
    }

    write_json(
        &ctx.output_dir.join("residuals.json"),
        &ReconSummary {
            geometry: prepared.geometry,
            max_iterations: config.max_iterations,
            tikhonov_lambda: config.tikhonov_lambda,
            series,
        },
    )?;
    let tiles: Vec<_> = initials.iter().chain(&finals).map(Array2::view).collect();
    let grid = export::montage(&tiles, initials.len()).stage("montage")?;
    if ctx.formats.png {
        export::write_png(&ctx.output_dir.join("montage.png"), grid.view()).stage("montage")?;
    }
    if ctx.formats.pgm {
        export::write_pgm(&ctx.output_dir.join("montage.pgm"), grid.view()).stage("montage")?;
    }
    Ok(())
}

fn cmd_dcf(ctx: &mut Context, args: &DcfArgs) -> Result<(), Failure> {
    ctx.validated()?;
    let config = &ctx.config;
    let dataset = timed("read", || container::read_dataset(&args.input, &config.dataset_names))?;
    let weights = timed("dcf", || {
        let geometry =
            GridGeometry::from_trajectory(dataset.trajectory.view(), config.oversampling_ratio_override)?;
        let kernel = config.kernel(geometry.oversampling_ratio)?;
        let (kx, ky) = dataset.kx_ky();
        config.dcf.compute(kx, ky, &kernel, &geometry)
    })?;
    let out = ctx.output_dir.join("dcf.h5");
    timed("write", || container::write_weights(&out, &weights.weights))?;
    let w = &weights.weights;
    let summary = json!({
        "method": config.dcf,
        "shape": w.dim(),
        "min": w.iter().cloned().fold(f64::INFINITY, f64::min),
        "max": w.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "mean": w.mean().unwrap_or(0.0),
        "output": out,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_compare(ctx: &mut Context, args: &CompareArgs) -> Result<(), Failure> {
    let image = timed("read", || container::read_image(&args.image))?;
    let reference = timed("read", || container::read_image(&args.reference))?;
    let mask = match (&args.mask, args.no_mask) {
        (Some(path), _) => Some(container::read_mask(path).stage("read")?),
        (None, true) => None,
        (None, false) => match container::read_mask(&args.reference) {
            Ok(m) => Some(m),
            Err(Error::MissingEntry { .. }) => None,
            Err(e) => return Err(failure("read", e)),
        },
    };
    let report = timed("compare", || {
        metrics::compare(&image, &reference, mask.as_ref().map(|m| m.view()), args.quantile)
    })?;
    write_json(&ctx.output_dir.join("comparison.json"), &report)?;
    let diff = Image::from_real(report.diff_map.view());
    timed("write", || {
        export::write_image_files(&diff, &ctx.output_dir.join("difference"), ctx.formats)
    })?;
    println!("{}", serde_json::to_string(&report).expect("serializable report"));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::usage("threads", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage("threads", e.to_string()))?;
    }
    let mut ctx = Context::load(&cli)?;
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(&mut ctx, args),
        Command::Recon(args) => cmd_recon(&mut ctx, args),
        Command::Dcf(args) => cmd_dcf(&mut ctx, args),
        Command::Compare(args) => cmd_compare(&mut ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log(json!({ "level": "error", "stage": f.stage, "message": f.message }));
            eprintln!("cgsense: {} failed: {}", f.stage, f.message);
            ExitCode::from(f.code)
        }
    }
}
