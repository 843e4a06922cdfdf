//! Command-line front end: one subcommand per stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tcnn::autoencoder::AEHyper;
use tcnn::convnet::{block1, load_model, pretrain_depth, save_model, PipelineConfig};
use tcnn::dataset::{generate_synthetic, load_dataset, sample_windows, save_dataset, test_exclusion_columns, SynthConfig};
use tcnn::decode::{cnn_features, Metric};
use tcnn::harness::{
    curve_to_csv, curve_to_svg, design_for, emit_report, learning_curve, run_on_dataset, seeded_pipeline, EvalReport,
    ExperimentSpec, Method, ReportFormat,
};
use tcnn::hyperopt::{grid_search_with, DistanceMode, HyperGrid};
use tcnn::rng::derive_seed;
use tcnn::{Error, Result};

#[derive(Parser)]
#[command(name = "tcnn", version, about = "Temporal convolutional features for fMRI decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Train the filter banks and save the model.
    Pretrain(PretrainArgs),
    /// Score an autoencoder hyperparameter grid by filter decorrelation.
    Hyperparam(HyperparamArgs),
    /// Export the labelled columns of the learned representation as CSV.
    Transform(TransformArgs),
    /// Decode retrieve-phase labels with one method.
    Decode(DecodeArgs),
    /// Train/test error as the training set grows.
    LearningCurve(CurveArgs),
    /// Decode with several methods and write one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, default_value_t = 1200)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Samples per class in each phase.
    #[arg(long, default_value_t = 12)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 6)]
    voxels_per_class: usize,
    #[arg(long, default_value_t = 2.0)]
    tr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ArchArgs {
    #[arg(long, default_value_t = 6)]
    tau1: usize,
    #[arg(long, default_value_t = 9)]
    tau2: usize,
    #[arg(long, default_value_t = 2)]
    delta1: usize,
    #[arg(long, default_value_t = 2)]
    delta2: usize,
    #[arg(long, default_value_t = 16)]
    k1: usize,
    #[arg(long, default_value_t = 4)]
    k2: usize,
    #[arg(long, default_value_t = 0.03)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 400)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    /// Training windows per autoencoder.
    #[arg(long, default_value_t = 10_000)]
    windows: usize,
    /// Number of convolutional blocks (1 or 2).
    #[arg(long, default_value_t = 2)]
    depth: usize,
}

impl ArchArgs {
    fn pipeline(&self) -> PipelineConfig {
        let hyper = |k| AEHyper {
            k,
            rho: self.rho,
            beta: self.beta,
            lambda: self.lambda,
            max_iters: self.max_iters,
            step_size: self.step_size,
            seed: 0,
        };
        PipelineConfig {
            tau1: self.tau1,
            tau2: self.tau2,
            delta1: self.delta1,
            delta2: self.delta2,
            layer1_hyper: hyper(self.k1),
            layer2_hyper: hyper(self.k2),
            windows: self.windows,
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HyperparamArgs {
    #[arg(long)]
    data: PathBuf,
    /// Which block's autoencoder to tune.
    #[arg(long, default_value_t = 1)]
    layer: usize,
    /// Trained model whose first block feeds the layer-2 search.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    rho_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    beta_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 6)]
    tau1: usize,
    #[arg(long, default_value_t = 9)]
    tau2: usize,
    #[arg(long, default_value_t = 10_000)]
    windows: usize,
    #[arg(long, default_value_t = 400)]
    max_iters: usize,
    /// Divide each distance by its number of filters.
    #[arg(long)]
    normalized: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; the JSON summary goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DecodeOptions {
    #[arg(long, default_value_t = 1)]
    knn_k: usize,
    #[arg(long, default_value_t = Metric::Euclidean)]
    metric: Metric,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Saved model for the cnn method; pretrains when absent.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cnn")]
    method: String,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    opts: DecodeOptions,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "cnn")]
    method: String,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    opts: DecodeOptions,
    #[arg(long, default_value_t = 20)]
    step: usize,
    #[arg(long)]
    out: PathBuf,
    /// SVG plot of both error series.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "raw,hrf,tmvpa,cnn")]
    methods: Vec<String>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    opts: DecodeOptions,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn spec_for(method: &str, arch: &ArchArgs, opts: &DecodeOptions) -> Result<ExperimentSpec> {
    Ok(ExperimentSpec {
        method: method.parse()?,
        depth: arch.depth,
        pipeline: arch.pipeline(),
        knn_k: opts.knn_k,
        metric: opts.metric,
        seed: opts.seed,
        model_path: opts.model.clone(),
        ..ExperimentSpec::default()
    })
}

fn json_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        m: args.m,
        n: args.n,
        num_classes: args.classes,
        samples_per_class_per_phase: args.samples,
        noise_sigma: args.noise,
        voxels_per_class: args.voxels_per_class,
        hrf_amplitude: args.amplitude,
        tr_seconds: args.tr,
        seed: args.seed,
    };
    let d = generate_synthetic(&cfg)?;
    save_dataset(&d, &args.out)?;
    eprintln!("wrote {}x{} dataset with {} labels to {}", d.m(), d.n(), d.labels().len(), args.out.display());
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let cfg = seeded_pipeline(&args.arch.pipeline(), args.seed);
    let model = pretrain_depth(&d, &cfg, args.arch.depth)?;
    save_model(&model, &args.out)?;
    eprintln!(
        "trained {} block(s), layer-1 cost {:.6}; model written to {}",
        model.depth(),
        model.layer1.final_cost,
        args.out.display()
    );
    Ok(())
}

fn hyperparam(args: HyperparamArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let excluded = test_exclusion_columns(&d, args.tau1, args.tau2);
    let window_seed = derive_seed(args.seed, "hyperparam/windows");
    let (windows, defaults) = match args.layer {
        1 => (
            sample_windows(d.values().view(), args.tau1, args.windows, &excluded, window_seed)?,
            HyperGrid::layer1(),
        ),
        2 => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| Error::Usage("--layer 2 needs --model".into()))?;
            let model = load_model(path)?;
            let pooled = block1(&d, &model)?;
            (
                sample_windows(pooled.matrices[0].view(), args.tau2, args.windows, &excluded, window_seed)?,
                HyperGrid::layer2(),
            )
        }
        other => return Err(Error::Usage(format!("--layer must be 1 or 2, got {other}"))),
    };
    let grid = HyperGrid {
        k_values: args.k_values.unwrap_or(defaults.k_values),
        rho_values: args.rho_values.unwrap_or(defaults.rho_values),
        beta_values: args.beta_values.unwrap_or(defaults.beta_values),
        lambda_value: args.lambda,
    };
    let base = AEHyper {
        max_iters: args.max_iters,
        seed: derive_seed(args.seed, "hyperparam"),
        ..AEHyper::default()
    };
    let mode = if args.normalized { DistanceMode::PerFilter } else { DistanceMode::Raw };
    let result = grid_search_with(&windows, &grid, &base, mode)?;

    let mut csv = String::from("k,rho,beta,distance,final_cost\n");
    for e in &result.entries {
        let cost = e.bank.as_ref().map_or(f64::NAN, |b| b.final_cost);
        csv.push_str(&format!("{},{},{},{},{}\n", e.hyper.k, e.hyper.rho, e.hyper.beta, e.distance, cost));
    }
    std::fs::write(&args.out, csv)?;
    let best = result.best_entry();
    let summary = json!({
        "layer": args.layer,
        "normalized": args.normalized,
        "grid_points": result.entries.len(),
        "best": {
            "k": best.hyper.k,
            "rho": best.hyper.rho,
            "beta": best.hyper.beta,
            "lambda": best.hyper.lambda,
            "distance": best.distance,
        },
    });
    std::fs::write(json_path(&args.out), serde_json::to_string_pretty(&summary)?)?;
    eprintln!(
        "best of {}: k={} rho={} beta={} distance={:.6}",
        result.entries.len(),
        best.hyper.k,
        best.hyper.rho,
        best.hyper.beta,
        best.distance
    );
    Ok(())
}

fn transform_cmd(args: TransformArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let model = load_model(&args.model)?;
    let dm = cnn_features(&d, &model, args.depth)?;
    std::fs::write(&args.out, dm.to_csv())?;
    eprintln!("wrote {} samples x {} features to {}", dm.len(), dm.feature_dim(), args.out.display());
    Ok(())
}

fn write_reports(reports: &[EvalReport], format: &str, out: &Path) -> Result<()> {
    let format: ReportFormat = format.parse()?;
    emit_report(reports, format, out, None)?;
    if format == ReportFormat::Csv {
        emit_report(reports, ReportFormat::Json, json_path(out), None)?;
    }
    for r in reports {
        eprintln!(
            "{:<6} dim {:>6}  accuracy {:.3}  p = {:.3e}",
            r.method_label(),
            r.feature_dim,
            r.accuracy,
            r.p_value
        );
    }
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let report = run_on_dataset(&d, &spec_for(&args.method, &args.arch, &args.opts)?)?;
    write_reports(&[report], &args.format, &args.out)
}

fn report(args: ReportArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let reports = args
        .methods
        .iter()
        .map(|m| run_on_dataset(&d, &spec_for(m, &args.arch, &args.opts)?))
        .collect::<Result<Vec<_>>>()?;
    write_reports(&reports, &args.format, &args.out)
}

fn curve(args: CurveArgs) -> Result<()> {
    let d = load_dataset(&args.data)?;
    let spec = spec_for(&args.method, &args.arch, &args.opts)?;
    let method: Method = spec.method;
    let (pool, _) = design_for(&d, &spec)?;
    let curve = learning_curve(&pool, args.step, spec.knn_k, spec.metric, derive_seed(spec.seed, "curve"))?;
    std::fs::write(&args.out, curve_to_csv(&curve))?;
    if let Some(plot) = &args.plot {
        std::fs::write(plot, curve_to_svg(&curve))?;
    }
    eprintln!("{method}: {} curve points written to {}", curve.points.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Hyperparam(a) => hyperparam(a),
        Command::Transform(a) => transform_cmd(a),
        Command::Decode(a) => decode(a),
        Command::LearningCurve(a) => curve(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
