//! Command-line interface: train models, run single attacks, sweep
//! influence attacks, compare saliency maps, run geometric analyses, drive
//! full campaigns, and regenerate reports.

use crate::analysis::{
    attack_angle, dimension_scaling_experiment, lipschitz_interpretation_bound,
};
use crate::attacks::{iterative_attack, AttackConfig};
use crate::engine::{argmax, load_model, save_model, train, ActivationMode};
use crate::error::NnError;
use crate::harness::binary::{
    build_binary_task, run_influence_sweep, select_binary_images, write_influence_artifacts,
};
use crate::harness::campaign::{materialize_attack, resolve_model, resolve_splits, run_campaign};
use crate::harness::config::{AttackChoice, DatasetKind, ExperimentSpec};
use crate::harness::csvutil::{fmt_float, write_csv};
use crate::harness::pgm::write_pgm;
use crate::harness::presets::{accuracy, Preset};
use crate::harness::report::emit_report;
use crate::interpret::{saliency, ReferencePoint, SaliencyMap, SaliencyMethod};
use crate::metrics::report as metric_report;
use crate::tensor::Tensor;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, NnError>;

#[derive(Parser)]
#[command(
    name = "nnfrag",
    version,
    about = "Probe how fragile neural-network interpretations are under small input perturbations",
    long_about = "Saliency methods, influence functions, perturbation attacks on both, and the \
                  campaign harness that aggregates them. All epsilon/alpha budgets on this CLI \
                  are in 1/255 pixel units (e.g. --eps 8 means 8/255)."
)]
struct Cli {
    /// Base RNG seed for anything stochastic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for campaigns (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path (checkpoint, directory, or CSV depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset: synthetic | mnist | cifar10.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Dataset root (else $NNFRAG_DATA, else the current directory).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a preset model and save a checkpoint (--out, default model.ckpt).
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Model preset: mlp_small | cnn_mnist | cnn_cifar_deep.
        #[arg(long, default_value = "mlp_small")]
        preset: String,
        /// Override the preset's default epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Attack one test image's saliency map and write the artifacts.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        /// Model checkpoint to attack.
        #[arg(long)]
        model: PathBuf,
        /// Test image index.
        #[arg(long, default_value_t = 0)]
        image: usize,
        /// Attack kind: rand | topk | topk:K | center | target:R0:C0:R1:C1.
        #[arg(long, default_value = "topk")]
        kind: String,
        /// Saliency method under attack: sg | ig | dl.
        #[arg(long, default_value = "sg")]
        method: String,
        /// L∞ budget in 1/255 units.
        #[arg(long, default_value_t = 8.0)]
        eps: f64,
        /// Step size in 1/255 units.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Iteration count.
        #[arg(long, default_value_t = 300)]
        iters: usize,
        /// Path steps for integrated gradients.
        #[arg(long, default_value_t = 100)]
        ig_steps: usize,
        /// Softplus sharpness of the attack surrogate.
        #[arg(long, default_value_t = 10.0)]
        beta: f64,
        /// k for the reported top-k intersection.
        #[arg(long, default_value_t = 100)]
        metric_k: usize,
    },
    /// Sweep gradient-sign vs random-sign influence attacks on the
    /// frozen-feature binary task.
    InfluenceAttack {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint for the feature trunk (else a fresh trunk is trained).
        #[arg(long)]
        model: Option<PathBuf>,
        /// The two ten-class labels forming the binary task.
        #[arg(long, default_value = "0,5", value_delimiter = ',')]
        classes: Vec<usize>,
        /// Number of correctly classified test images to sweep.
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Budgets in 1/255 units.
        #[arg(long, default_value = "2,4,8", value_delimiter = ',')]
        epsilons: Vec<f64>,
        /// How many top influences the attack objective sums.
        #[arg(long, default_value_t = 3)]
        top_m: usize,
        /// Hessian damping.
        #[arg(long, default_value_t = 1e-3)]
        damping: f64,
        /// Head-only training epochs.
        #[arg(long, default_value_t = 8)]
        head_epochs: usize,
    },
    /// Compare two saliency maps stored as CSV float grids.
    Metrics {
        /// Baseline map (CSV of rows of floats).
        #[arg(long)]
        before: PathBuf,
        /// Perturbed map (same shape).
        #[arg(long)]
        after: PathBuf,
        /// k for the top-k intersection.
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Geometric analyses of interpretation fragility.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Run a full attack campaign from a key=value config file (CLI flags
    /// override file keys).
    Campaign {
        /// Flat key=value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        preset: Option<String>,
        /// Comma-separated attack tokens.
        #[arg(long)]
        attacks: Option<String>,
        /// Comma-separated budgets in 1/255 units.
        #[arg(long)]
        epsilons: Option<String>,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        ig_steps: Option<usize>,
        #[arg(long)]
        metric_k: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train_epochs: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Regenerate summary tables and the report from a run directory.
    Report {
        /// Directory containing rows.csv.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Per-image angle between the top curvature direction and the
    /// prediction gradient; writes angles.csv.
    Angles {
        #[command(flatten)]
        data: DataArgs,
        /// Model checkpoint (else a fresh preset is trained).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "mlp_small")]
        preset: String,
        /// Number of test images.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Softplus sharpness of the smooth surrogate.
        #[arg(long, default_value_t = 10.0)]
        beta: f64,
    },
    /// Conservative ceiling on the gradient map's Lipschitz constant.
    Lipschitz {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Softplus sharpness applied before computing the bound.
        #[arg(long, default_value_t = 10.0)]
        beta: f64,
    },
    /// How the achievable saliency change grows with input dimension.
    Scaling {
        /// Comma-separated dimensions.
        #[arg(long, default_value = "10,100,1000,10000", value_delimiter = ',')]
        dims: Vec<usize>,
        /// Trials per dimension.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Budget in 1/255 units.
        #[arg(long, default_value_t = 8.0)]
        eps: f64,
    },
}

fn parse_dataset_spec(data: &DataArgs, seed: u64) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    spec.dataset = DatasetKind::parse(&data.dataset)?;
    spec.seed = seed;
    spec.data_dir = data.data.clone();
    Ok(spec)
}

fn read_float_grid(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)
        .map_err(NnError::io(format!("reading {}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| NnError::config(format!("bad float '{s}' in {}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(NnError::TruncatedFile {
            path: path.display().to_string(),
        });
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(NnError::config("ragged rows in float grid"));
    }
    let h = rows.len();
    Ok(Tensor {
        shape: vec![h, w],
        data: rows.into_iter().flatten().collect(),
    })
}

fn cmd_train(
    data: &DataArgs,
    preset: &str,
    epochs: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut spec = parse_dataset_spec(data, seed)?;
    spec.model_preset = Preset::parse(preset)?;
    spec.train_epochs = epochs;
    let splits = resolve_splits(&spec)?;
    let mut cfg = spec.model_preset.train_config(seed);
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let init = crate::harness::presets::build(spec.model_preset, seed)?;
    let (model, losses) = train(&init, &splits.train, &cfg)?;
    let path = out.unwrap_or_else(|| PathBuf::from("model.ckpt"));
    save_model(&model, seed, &path)?;
    let train_acc = accuracy(&model, &splits.train)?;
    let test_acc = accuracy(&model, &splits.test)?;
    println!(
        "trained {} on {}: final loss {:.4}, train acc {:.3}, test acc {:.3}",
        spec.model_preset.name(),
        spec.dataset.name(),
        losses.last().copied().unwrap_or(f64::NAN),
        train_acc,
        test_acc
    );
    println!("checkpoint written to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    data: &DataArgs,
    model_path: &Path,
    image: usize,
    kind: &str,
    method: &str,
    eps: f64,
    alpha: f64,
    iters: usize,
    ig_steps: usize,
    beta: f64,
    metric_k: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let spec = parse_dataset_spec(data, seed)?;
    let splits = resolve_splits(&spec)?;
    let (model, _) = load_model(model_path)?;
    if image >= splits.test.len() {
        return Err(NnError::config(format!(
            "image index {image} out of range (test split has {})",
            splits.test.len()
        )));
    }
    let x = &splits.test.images[image];
    let choice = AttackChoice::parse(kind)?;
    let attack_kind = materialize_attack(&choice, &x.shape)?;
    let mut cfg = AttackConfig::new(attack_kind, eps / 255.0, alpha / 255.0, iters);
    cfg.method = SaliencyMethod::parse(method)?;
    cfg.ig_steps = ig_steps;
    cfg.beta = beta;
    cfg.metric_k = metric_k.min(x.len());
    cfg.seed = seed;
    let result = iterative_attack(&model, x, &cfg)?;
    println!(
        "attack={} method={} eps={}/255: rank_corr={:.4} top_k={:.4} center_shift={:.3}",
        choice.label(),
        cfg.method.name(),
        eps,
        result.metrics.rank_correlation,
        result.metrics.topk_intersection,
        result.metrics.center_shift
    );
    println!(
        "prediction preserved: {} (confidence {:.4} -> {:.4}, iterate {})",
        result.prediction_preserved,
        result.confidence_before,
        result.confidence_after,
        result.selected_iteration
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)
            .map_err(NnError::io(format!("creating {}", dir.display())))?;
        let reference = ReferencePoint::zeros(&x.shape);
        let probs = model.probabilities(x)?;
        let class = argmax(&probs);
        let before = saliency(&model, x, cfg.method, &reference, ig_steps, class)?;
        let after = saliency(&model, &result.x_adv, cfg.method, &reference, ig_steps, class)?;
        write_pgm(&dir.join("saliency_before.pgm"), &before.values)?;
        write_pgm(&dir.join("saliency_after.pgm"), &after.values)?;
        write_pgm(&dir.join("image_before.pgm"), x)?;
        write_pgm(&dir.join("image_after.pgm"), &result.x_adv)?;
        let trace_rows: Vec<Vec<String>> = result
            .dissimilarity_trace
            .iter()
            .enumerate()
            .map(|(i, d)| vec![(i + 1).to_string(), fmt_float(*d)])
            .collect();
        write_csv(&dir.join("trace.csv"), &["iteration", "dissimilarity"], &trace_rows)?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_influence_attack(
    data: &DataArgs,
    model: Option<PathBuf>,
    classes: &[usize],
    n: usize,
    epsilons: &[f64],
    top_m: usize,
    damping: f64,
    head_epochs: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    if classes.len() != 2 || classes[0] == classes[1] {
        return Err(NnError::config("--classes needs two distinct labels"));
    }
    let spec = parse_dataset_spec(data, seed)?;
    let splits = resolve_splits(&spec)?;
    let trunk = match model {
        Some(path) => load_model(&path)?.0,
        None => {
            let mut s = spec.clone();
            s.train_epochs = Some(4);
            resolve_model(&s, &splits.train)?
        }
    };
    let task = build_binary_task(&splits, &trunk, (classes[0], classes[1]), head_epochs, seed)?;
    let acc = accuracy(&task.model, &task.test)?;
    let picked = select_binary_images(&task, n, seed)?;
    let rows = run_influence_sweep(&task, &picked, epsilons, seed, top_m, damping)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("influence_out"));
    std::fs::create_dir_all(&dir).map_err(NnError::io(format!("creating {}", dir.display())))?;
    write_influence_artifacts(&dir, &rows)?;
    println!(
        "binary task ({} vs {}) head accuracy {:.3}; {} rows written to {}",
        classes[0],
        classes[1],
        acc,
        rows.len(),
        dir.display()
    );
    for &eps in epsilons {
        let of = |variant: &str| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.epsilon == eps && r.variant == variant && r.pred_preserved)
                .map(|r| r.rank_corr)
                .collect();
            crate::harness::csvutil::mean_std(&vals).0
        };
        println!(
            "  eps={:>5.1}/255: rank_corr grad={:.4} rand={:.4}",
            eps,
            of("grad"),
            of("rand")
        );
    }
    Ok(())
}

fn cmd_metrics(before: &Path, after: &Path, k: usize) -> Result<()> {
    let a = SaliencyMap {
        values: read_float_grid(before)?,
        method: SaliencyMethod::SimpleGradient,
    };
    let b = SaliencyMap {
        values: read_float_grid(after)?,
        method: SaliencyMethod::SimpleGradient,
    };
    let r = metric_report(&a, &b, k.min(a.values.len()))?;
    println!(
        "rank_corr={:.6} top_{}={:.6} center_shift={:.6}",
        r.rank_correlation, r.k, r.topk_intersection
    );
    Ok(())
}

fn cmd_analyze(what: &AnalyzeCmd, seed: u64, out: Option<PathBuf>) -> Result<()> {
    match what {
        AnalyzeCmd::Angles {
            data,
            model,
            preset,
            n,
            beta,
        } => {
            let mut spec = parse_dataset_spec(data, seed)?;
            spec.model_preset = Preset::parse(preset)?;
            let splits = resolve_splits(&spec)?;
            let exact = match model {
                Some(path) => load_model(path)?.0,
                None => {
                    let mut s = spec.clone();
                    s.train_epochs = Some(4);
                    resolve_model(&s, &splits.train)?
                }
            };
            let smooth = exact.with_mode(ActivationMode::Softplus { beta: *beta });
            let mut rows = Vec::new();
            let mut skipped = 0usize;
            for (i, (x, _)) in splits.test.examples().take(*n).enumerate() {
                let probs = smooth.probabilities(x)?;
                match attack_angle(&smooth, x, argmax(&probs)) {
                    Ok(pair) => rows.push(vec![i.to_string(), fmt_float(pair.angle_deg)]),
                    Err(NnError::NoConvergence { .. }) | Err(NnError::DegenerateDirection) => {
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            let path = out.unwrap_or_else(|| PathBuf::from("angles.csv"));
            write_csv(&path, &["image_id", "angle_deg"], &rows)?;
            println!(
                "{} angles written to {} ({} skipped)",
                rows.len(),
                path.display(),
                skipped
            );
        }
        AnalyzeCmd::Lipschitz { model, beta } => {
            let (exact, _) = load_model(model)?;
            let smooth = exact.with_mode(ActivationMode::Softplus { beta: *beta });
            let bound = lipschitz_interpretation_bound(&smooth)?;
            println!("lipschitz_ceiling={}", fmt_float(bound));
        }
        AnalyzeCmd::Scaling { dims, trials, eps } => {
            let table = dimension_scaling_experiment(dims, *trials, eps / 255.0, seed)?;
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.dim.to_string(),
                        fmt_float(r.mean_feature()),
                        fmt_float(r.mean_influence()),
                    ]
                })
                .collect();
            let path = out.unwrap_or_else(|| PathBuf::from("scaling.csv"));
            write_csv(
                &path,
                &["dim", "mean_feature_change", "mean_influence_change"],
                &rows,
            )?;
            println!(
                "log-log slope {:.4}; table written to {}",
                table.log_log_slope,
                path.display()
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_campaign(
    config: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut spec = match config {
        Some(path) => ExperimentSpec::from_file(&path)?,
        None => ExperimentSpec::default(),
    };
    for (key, value) in overrides {
        spec.set(key, &value)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(dir) = out {
        spec.output_dir = dir;
    }
    let manifest = run_campaign(&spec)?;
    println!(
        "campaign complete: {} images, test accuracy {:.3}, artifacts in {}",
        manifest.completed.len(),
        manifest.test_accuracy,
        spec.output_dir.display()
    );
    println!("spec hash {}", manifest.spec_hash);
    Ok(())
}

/// Parses arguments and dispatches; returns a process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let seed = cli.seed.unwrap_or(0);
    let result = match &cli.cmd {
        Cmd::Train {
            data,
            preset,
            epochs,
        } => cmd_train(data, preset, *epochs, seed, cli.out.clone()),
        Cmd::Attack {
            data,
            model,
            image,
            kind,
            method,
            eps,
            alpha,
            iters,
            ig_steps,
            beta,
            metric_k,
        } => cmd_attack(
            data,
            model,
            *image,
            kind,
            method,
            *eps,
            *alpha,
            *iters,
            *ig_steps,
            *beta,
            *metric_k,
            seed,
            cli.out.clone(),
        ),
        Cmd::InfluenceAttack {
            data,
            model,
            classes,
            n,
            epsilons,
            top_m,
            damping,
            head_epochs,
        } => cmd_influence_attack(
            data,
            model.clone(),
            classes,
            *n,
            epsilons,
            *top_m,
            *damping,
            *head_epochs,
            seed,
            cli.out.clone(),
        ),
        Cmd::Metrics { before, after, k } => cmd_metrics(before, after, *k),
        Cmd::Analyze { what } => cmd_analyze(what, seed, cli.out.clone()),
        Cmd::Campaign {
            config,
            dataset,
            preset,
            attacks,
            epsilons,
            n_images,
            iters,
            alpha,
            ig_steps,
            metric_k,
            checkpoint,
            train_epochs,
            data,
        } => {
            let mut overrides: Vec<(&'static str, String)> = Vec::new();
            let mut push = |key: &'static str, value: Option<String>| {
                if let Some(v) = value {
                    overrides.push((key, v));
                }
            };
            push("dataset", dataset.clone());
            push("model_preset", preset.clone());
            push("attacks", attacks.clone());
            push("epsilons", epsilons.clone());
            push("n_images", n_images.map(|v| v.to_string()));
            push("iters", iters.map(|v| v.to_string()));
            push("alpha", alpha.map(|v| v.to_string()));
            push("ig_steps", ig_steps.map(|v| v.to_string()));
            push("metric_k", metric_k.map(|v| v.to_string()));
            push(
                "checkpoint",
                checkpoint.as_ref().map(|p| p.display().to_string()),
            );
            push("train_epochs", train_epochs.map(|v| v.to_string()));
            push("data_dir", data.as_ref().map(|p| p.display().to_string()));
            cmd_campaign(config.clone(), overrides, cli.seed, cli.out.clone())
        }
        Cmd::Report { dir } => emit_report(dir).map(|()| {
            println!("report regenerated in {}", dir.display());
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
