use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use multialign::io;
use multialign::procrustes::{gpa_iterative_mean, gpa_reference, gpa_sync_with, solve_aop};
use multialign::simulate::{
    add_gaussian_noise, gen_ground_truth_with, gen_shapes, run_experiment, trial_rng,
    ExperimentConfig, TranslationRange, DEFAULT_SEED,
};
use multialign::{
    consistency_residual, reconstruct_pairwise, synchronise, Error, GpaMethod,
    IterativeMeanOptions, ScaleMode, TransformClass,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "multialign", version, about = "Transform synchronisation and multi-shape alignment")]
struct Cli {
    /// Print extra diagnostics.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synchronise a pairwise transform set.
    Sync(SyncArgs),
    /// Align a directory of shapes.
    Gpa(GpaArgs),
    /// Run an experiment described by a JSON config.
    Experiment(ExperimentArgs),
    /// Generate fixture data.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args)]
struct SyncArgs {
    /// Pairwise transform set (JSON).
    input: PathBuf,
    /// Target class; defaults to the class recorded in the input.
    #[arg(long)]
    class: Option<TransformClass>,
    #[arg(long, default_value = "geometric")]
    scale: ScaleMode,
    /// Synchronisation result (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Reconstructed consistent pairwise set; defaults to `<out>.consistent.json`.
    #[arg(long)]
    consistent_out: Option<PathBuf>,
}

#[derive(Args)]
struct GpaArgs {
    /// Shape-set directory with a manifest.
    dir: PathBuf,
    #[arg(long, default_value = "sync")]
    method: GpaMethod,
    #[arg(long, default_value = "similarity")]
    class: TransformClass,
    #[arg(long, default_value = "geometric")]
    scale: ScaleMode,
    /// Reference shape for the reference method.
    #[arg(long = "ref", default_value_t = 0)]
    reference: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory for aligned shapes and transforms.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Result table (CSV); run metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the ground-truth count (noise) or draw count (GPA experiments).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured methods; repeatable.
    #[arg(long = "method")]
    methods: Vec<GpaMethod>,
}

#[derive(Subcommand)]
enum GenCommand {
    /// Random consistent (optionally noisy) pairwise transform set.
    Transforms {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value = "similarity")]
        class: TransformClass,
        /// Standard deviation of additive noise on off-diagonal entries.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value = "wide")]
        translation_range: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic shape set directory.
    Shapes {
        #[arg(long = "count", short = 'K', default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 98)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3.0)]
        deform_level: f64,
        #[arg(long, default_value_t = 0.03)]
        noise_level: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Input(String),
    Degenerate(String),
    Infeasible(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Singular { .. } | Error::Degenerate(_) => Failure::Degenerate(msg),
            Error::UnderDetermined { .. }
            | Error::DegenerateCloud(_)
            | Error::InfeasibleEta { .. }
            | Error::UncoveredLandmark(_) => Failure::Infeasible(msg),
            Error::Contract(_)
            | Error::IncompleteSet { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Parse(_) => Failure::Input(msg),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Fails before any work if `path` cannot be created.
fn check_output(path: &Path) -> CmdResult {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(Failure::Input(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_sync(args: SyncArgs, verbose: bool) -> CmdResult {
    let consistent_out = args
        .consistent_out
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".consistent.json"));
    check_output(&args.out)?;
    check_output(&consistent_out)?;
    let set = io::read_transform_set(&args.input)?;
    let class = args.class.unwrap_or(set.class());
    let before = consistency_residual(&set)?;
    let result = synchronise(&set, class, args.scale)?;
    let consistent = reconstruct_pairwise(&result)?;
    let after = consistency_residual(&consistent)?;

    let sync_json = serde_json::to_string_pretty(&result).map_err(Error::from)? + "\n";
    let set_json = serde_json::to_string_pretty(&consistent).map_err(Error::from)? + "\n";
    io::write_atomic(&args.out, sync_json.as_bytes())?;
    io::write_atomic(&consistent_out, set_json.as_bytes())?;

    println!("residual_before {}", io::format_f64(before));
    println!("residual_after {}", io::format_f64(after));
    let tail: Vec<String> = result.tail_singular_values.iter().map(|v| io::format_f64(*v)).collect();
    println!("smallest_singular_values {}", tail.join(" "));
    if verbose {
        println!("gauge_block {}", result.gauge_block);
        println!("spectral_norm {}", io::format_f64(result.spectral_norm));
    }
    if result.degenerate {
        eprintln!("warning: null space is not separated from the rest of the spectrum");
    }
    Ok(())
}

fn cmd_gpa(args: GpaArgs, verbose: bool) -> CmdResult {
    check_output(&args.out)?;
    let shapes = io::read_shape_set(&args.dir)?;
    let class = args.class;
    let outcome = match args.method {
        GpaMethod::Reference => gpa_reference(&shapes, args.reference, class)?,
        GpaMethod::IterativeMean => {
            let mut rng = trial_rng(args.seed, &[]);
            gpa_iterative_mean(&shapes, class, IterativeMeanOptions::default(), &mut rng)?
        }
        GpaMethod::Sync => gpa_sync_with(&shapes, class, args.scale, |i, j| {
            solve_aop(&shapes[i], &shapes[j], class)
        })?,
    };
    let transforms = &outcome.transforms;
    io::write_shape_set_with(&args.out, &outcome.aligned, |dir| {
        io::write_transforms(&dir.join("transforms.json"), transforms)
    })?;
    match outcome.error {
        Some(e) => println!("shape_error {}", io::format_f64(e)),
        None => println!("shape_error n/a (shapes have missing points)"),
    }
    if verbose {
        println!("method {} iterations {} converged {}", outcome.method, outcome.iterations, outcome.converged);
    }
    Ok(())
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    experiment: &'a str,
    seed: u64,
    config_sha256: String,
    wall_time_seconds: f64,
    rows: usize,
}

fn cmd_experiment(args: ExperimentArgs) -> CmdResult {
    check_output(&args.out)?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.trials {
        if t == 0 {
            return Err(Failure::Input("--trials must be positive".into()));
        }
        cfg.trials.ground_truths = t;
        cfg.trials.draws = t;
    }
    if !args.methods.is_empty() {
        cfg.methods = Some(args.methods.clone());
    }
    cfg.validate()?;

    let start = Instant::now();
    let rows = run_experiment(&cfg)?;
    let wall = start.elapsed().as_secs_f64();

    let experiment = serde_json::to_value(cfg.experiment).map_err(Error::from)?;
    let meta = RunMetadata {
        experiment: experiment.as_str().unwrap_or_default(),
        seed: cfg.seed,
        config_sha256: format!("{:x}", Sha256::digest(text.as_bytes())),
        wall_time_seconds: wall,
        rows: rows.len(),
    };
    io::write_results(&args.out, &rows)?;
    io::write_json(&with_suffix(&args.out, ".meta.json"), &meta)?;
    println!("{} rows written to {} in {wall:.2}s", rows.len(), args.out.display());
    Ok(())
}

fn cmd_gen(cmd: GenCommand) -> CmdResult {
    match cmd {
        GenCommand::Transforms {
            k,
            d,
            class,
            sigma,
            translation_range,
            seed,
            out,
        } => {
            check_output(&out)?;
            let range = match translation_range.as_str() {
                "wide" => TranslationRange::Wide,
                "narrow" => TranslationRange::Narrow,
                other => {
                    return Err(Failure::Input(format!(
                        "--translation-range: expected wide or narrow, got {other}"
                    )))
                }
            };
            let mut rng = trial_rng(seed, &[]);
            let truth = gen_ground_truth_with(k, d, class, range, &mut rng)?;
            let set = if sigma > 0.0 {
                add_gaussian_noise(&truth.pairwise, sigma, &mut rng)?
            } else if sigma == 0.0 {
                truth.pairwise
            } else {
                return Err(Failure::Input(format!("--sigma must be >= 0, got {sigma}")));
            };
            io::write_transform_set(&out, &set)?;
        }
        GenCommand::Shapes {
            count,
            n,
            d,
            deform_level,
            noise_level,
            seed,
            out,
        } => {
            check_output(&out)?;
            let mut rng = trial_rng(seed, &[]);
            let shapes = gen_shapes(count, n, d, deform_level, noise_level, &mut rng)?;
            io::write_shape_set(&out, &shapes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Sync(a) => cmd_sync(a, verbose),
        Command::Gpa(a) => cmd_gpa(a, verbose),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Gen(g) => cmd_gen(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Degenerate(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Infeasible(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}
