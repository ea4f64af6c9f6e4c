//! Command-line front end. Every command resolves its configuration from
//! flags (optionally backed by a key=value --config file; flags win), writes
//! its outputs under --out-dir, and drops a RunManifest next to them. A
//! manifest is itself a valid --config file, so any run can be reproduced
//! bit-for-bit from its manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use scaleface::embeddings::{
    generate_synthetic, normalize, read_embeddings, sample_centroids, write_embeddings,
    SyntheticSpec,
};
use scaleface::evaluation::{
    default_rejection_grid, reject_verification, tar_at_far, write_curve, write_curve_summary,
    Provenance,
};
use scaleface::experiments::{
    exp_crossview_retrieval, exp_heteroscedastic_verification, exp_mu_improvement, run_all,
    write_report, ExperimentReport,
};
use scaleface::gaussian::{analytic_error_prob, simulate_error_prob, GaussianModelSpec};
use scaleface::gradnet::{finite_diff_check, net_backward, net_forward, DenseNet};
use scaleface::losses::{angular_margin_loss_free, DEFAULT_COSINE_CLAMP};
use scaleface::scale_head::{
    predict_scales, read_head, train_head, write_head, ActivationFamily, ScaleHeadConfig,
    TrainConfig,
};
use scaleface::similarity::{calibrate_mu, read_scores};
use scaleface::Matrix;

const EXIT_USAGE: i32 = 2;
const EXIT_FORMAT: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

struct CliError {
    message: String,
    code: i32,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { message: format!("usage error: {}", message.into()), code: EXIT_USAGE }
    }

    fn format(message: impl Into<String>) -> Self {
        CliError { message: format!("format error: {}", message.into()), code: EXIT_FORMAT }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError { message: format!("numeric error: {}", message.into()), code: EXIT_NUMERIC }
    }
}

impl From<scaleface::Error> for CliError {
    fn from(e: scaleface::Error) -> Self {
        use scaleface::Error::*;
        match e {
            Format(_) | Io(_) => CliError::format(e.to_string()),
            InvalidConfig(_) | DimensionMismatch { .. } | LabelOutOfRange { .. }
            | IndexOutOfRange { .. } => CliError::usage(e.to_string()),
            NonFinite(_) | DegenerateInput(_) | Infeasible(_) | Diverged { .. } => {
                CliError::numeric(e.to_string())
            }
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "scaleface-cli", version, about = "Scale-based uncertainty toolkit")]
struct Cli {
    /// RNG seed (default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count; accepted for symmetry, outputs never depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs and the run manifest (default ".")
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// key=value config file; command-line flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding set with per-sample quality scales
    Synth {
        /// Embedding dimension (default 32)
        #[arg(long)]
        d: Option<usize>,
        /// Number of classes (default 10)
        #[arg(long)]
        classes: Option<u32>,
        /// Samples per class (default 200)
        #[arg(long)]
        per_class: Option<usize>,
        /// Noise standard deviation (default 1.0)
        #[arg(long)]
        sigma: Option<f64>,
        /// Smallest per-sample scale (default 1.0)
        #[arg(long)]
        smin: Option<f64>,
        /// Largest per-sample scale (default 10.0)
        #[arg(long)]
        smax: Option<f64>,
    },
    /// Train a per-sample scale head on an embedding file
    TrainHead {
        /// Input embedding file
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Training epochs (default 30)
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size (default 64)
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate (default 1e-3)
        #[arg(long)]
        lr: Option<f64>,
        /// Additive angle margin in radians (default 0.5)
        #[arg(long)]
        margin: Option<f64>,
        /// Hidden layer count, 1..=4 (default 2)
        #[arg(long)]
        hidden_layers: Option<usize>,
        /// Hidden layer width (default 128)
        #[arg(long)]
        hidden_width: Option<usize>,
        /// Positivity activation: exp | sigm:<c> | shifted_sigm:<lo>:<hi> | relu:<c>
        #[arg(long)]
        activation: Option<String>,
        /// Keep class centroids fixed during training (default false)
        #[arg(long)]
        freeze_centroids: Option<bool>,
    },
    /// Predict per-sample scales with a trained head
    PredictScale {
        /// Input embedding file
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Trained head checkpoint
        #[arg(long)]
        head: Option<PathBuf>,
    },
    /// Calibrate the similarity shift from a validation scores file
    CalibrateMu {
        /// Pair scores file (index_a,index_b,label,score)
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// TAR at a FAR budget from a scores file
    Verify {
        /// Pair scores file (index_a,index_b,label,score)
        #[arg(long)]
        scores: Option<PathBuf>,
        /// False-acceptance budget (default 0.05)
        #[arg(long)]
        far: Option<f64>,
    },
    /// Reject-verification curve from scores plus per-pair uncertainties
    RejectCurve {
        /// Pair scores file (index_a,index_b,label,score)
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Uncertainty file, one non-negative value per pair line
        #[arg(long)]
        uncertainties: Option<PathBuf>,
        /// False-acceptance budget (default 0.05)
        #[arg(long)]
        far: Option<f64>,
        /// Where the uncertainty values come from: scale | norm | random | oracle (default scale)
        #[arg(long)]
        provenance: Option<String>,
    },
    /// Analytic vs Monte-Carlo error probability of the Gaussian scale model
    SimulateGaussian {
        /// Embedding dimension (default 128)
        #[arg(long)]
        d: Option<usize>,
        /// Signal scale (default 10.0)
        #[arg(long)]
        scale: Option<f64>,
        /// Decision threshold on the linearized cosine (default 0.6)
        #[arg(long)]
        a: Option<f64>,
        /// Noise standard deviation (default 1.0)
        #[arg(long)]
        sigma: Option<f64>,
        /// Monte-Carlo sample count (default 1000000)
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Finite-difference check of all analytic gradients
    Gradcheck,
    /// Scripted end-to-end scenarios
    Experiments {
        /// heteroscedastic | mu-improvement | crossview | all (default all)
        #[arg(long)]
        scenario: Option<String>,
    },
}

/// Collects every resolved key=value so the manifest records the full
/// configuration, defaults included.
struct Resolver {
    config: BTreeMap<String, String>,
    entries: Vec<(String, String)>,
}

impl Resolver {
    fn load(config_path: Option<&Path>) -> CliResult<Self> {
        let mut config = BTreeMap::new();
        if let Some(path) = config_path {
            let reader = BufReader::new(
                File::open(path).map_err(|e| {
                    CliError::usage(format!("cannot open config {}: {}", path.display(), e))
                })?,
            );
            for (lineno, line) in reader.lines().enumerate() {
                let line =
                    line.map_err(|e| CliError::format(format!("config read: {}", e)))?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                    CliError::format(format!("config line {}: expected key=value", lineno + 1))
                })?;
                config.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Resolver { config, entries: Vec::new() })
    }

    /// Flag value if given, else config entry, else default.
    fn get<T: FromStr + Display>(&mut self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        let value = match flag {
            Some(v) => v,
            None => match self.config.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|_| {
                    CliError::usage(format!("config key {}: cannot parse \"{}\"", key, raw))
                })?,
                None => default,
            },
        };
        self.entries.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Like `get` but the value is mandatory.
    fn require_path(&mut self, flag: Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        let value = match flag {
            Some(v) => v,
            None => match self.config.get(key) {
                Some(raw) => PathBuf::from(raw),
                None => return Err(CliError::usage(format!("--{} is required", key))),
            },
        };
        self.entries.push((key.to_string(), value.display().to_string()));
        Ok(value)
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn write_manifest(&self, out_dir: &Path, command: &str) -> CliResult<()> {
        let path = out_dir.join(format!("{}.manifest", command));
        let mut w = BufWriter::new(File::create(&path).map_err(scaleface::Error::Io)?);
        let emit = |w: &mut BufWriter<File>, k: &str, v: &str| {
            writeln!(w, "{}={}", k, v).map_err(scaleface::Error::Io)
        };
        emit(&mut w, "command", command)?;
        emit(&mut w, "version", env!("CARGO_PKG_VERSION"))?;
        for (k, v) in &self.entries {
            emit(&mut w, k, v)?;
        }
        w.flush().map_err(scaleface::Error::Io)?;
        Ok(())
    }
}

fn parse_provenance(s: &str) -> CliResult<Provenance> {
    match s {
        "scale" => Ok(Provenance::Scale),
        "norm" => Ok(Provenance::Norm),
        "random" => Ok(Provenance::Random),
        "oracle" => Ok(Provenance::Oracle),
        other => Err(CliError::usage(format!(
            "unknown provenance \"{}\" (expected scale | norm | random | oracle)",
            other
        ))),
    }
}

fn read_uncertainty_file(path: &Path) -> CliResult<Vec<f64>> {
    let reader = BufReader::new(File::open(path).map_err(scaleface::Error::Io)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(scaleface::Error::Io)?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| {
            CliError::format(format!("uncertainty line {}: bad value \"{}\"", lineno + 1, trimmed))
        })?;
        out.push(v);
    }
    Ok(out)
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.message);
            std::process::exit(e.code);
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut resolver = Resolver::load(cli.config.as_deref())?;
    let seed = resolver.get(cli.seed, "seed", 0u64)?;
    let threads = resolver.get(cli.threads, "threads", 1usize)?;
    let out_dir = match cli.out_dir {
        Some(p) => p,
        None => PathBuf::from(
            resolver.config.get("out-dir").cloned().unwrap_or_else(|| ".".to_string()),
        ),
    };
    resolver.record("out-dir", out_dir.display());
    if threads == 0 {
        return Err(CliError::usage("--threads must be >= 1"));
    }
    std::fs::create_dir_all(&out_dir).map_err(scaleface::Error::Io)?;

    match cli.command {
        Command::Synth { d, classes, per_class, sigma, smin, smax } => {
            cmd_synth(&mut resolver, &out_dir, seed, d, classes, per_class, sigma, smin, smax)
        }
        Command::TrainHead {
            embeddings,
            epochs,
            batch_size,
            lr,
            margin,
            hidden_layers,
            hidden_width,
            activation,
            freeze_centroids,
        } => cmd_train_head(
            &mut resolver,
            &out_dir,
            seed,
            embeddings,
            epochs,
            batch_size,
            lr,
            margin,
            hidden_layers,
            hidden_width,
            activation,
            freeze_centroids,
        ),
        Command::PredictScale { embeddings, head } => {
            cmd_predict_scale(&mut resolver, &out_dir, embeddings, head)
        }
        Command::CalibrateMu { scores } => cmd_calibrate_mu(&mut resolver, &out_dir, scores),
        Command::Verify { scores, far } => cmd_verify(&mut resolver, &out_dir, scores, far),
        Command::RejectCurve { scores, uncertainties, far, provenance } => {
            cmd_reject_curve(&mut resolver, &out_dir, scores, uncertainties, far, provenance)
        }
        Command::SimulateGaussian { d, scale, a, sigma, samples } => {
            cmd_simulate_gaussian(&mut resolver, &out_dir, seed, d, scale, a, sigma, samples)
        }
        Command::Gradcheck => cmd_gradcheck(&mut resolver, &out_dir, seed),
        Command::Experiments { scenario } => {
            cmd_experiments(&mut resolver, &out_dir, seed, scenario)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    resolver: &mut Resolver,
    out_dir: &Path,
    seed: u64,
    d: Option<usize>,
    classes: Option<u32>,
    per_class: Option<usize>,
    sigma: Option<f64>,
    smin: Option<f64>,
    smax: Option<f64>,
) -> CliResult<()> {
    let spec = SyntheticSpec {
        dim: resolver.get(d, "d", 32)?,
        num_classes: resolver.get(classes, "classes", 10)?,
        samples_per_class: resolver.get(per_class, "per-class", 200)?,
        noise_sigma: resolver.get(sigma, "sigma", 1.0)?,
        scale_min: resolver.get(smin, "smin", 1.0)?,
        scale_max: resolver.get(smax, "smax", 10.0)?,
        seed,
    };
    let data = generate_synthetic(&spec)?;

    let emb_path = out_dir.join("synthetic.emb");
    write_embeddings(&emb_path, &data.set)?;
    resolver.record("output-embeddings", emb_path.display());

    let truth_path = out_dir.join("synthetic_truth.csv");
    let mut w = BufWriter::new(File::create(&truth_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "index,true_scale,label").map_err(scaleface::Error::Io)?;
    for (i, (&s, &label)) in data.true_scales.iter().zip(data.set.labels()).enumerate() {
        writeln!(w, "{},{:.17e},{}", i, s, label).map_err(scaleface::Error::Io)?;
    }
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-truth", truth_path.display());

    resolver.write_manifest(out_dir, "synth")?;
    println!("wrote {} rows to {}", data.set.len(), emb_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train_head(
    resolver: &mut Resolver,
    out_dir: &Path,
    seed: u64,
    embeddings: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    margin: Option<f64>,
    hidden_layers: Option<usize>,
    hidden_width: Option<usize>,
    activation: Option<String>,
    freeze_centroids: Option<bool>,
) -> CliResult<()> {
    let emb_path = resolver.require_path(embeddings, "embeddings")?;
    let defaults = ScaleHeadConfig::default();
    let head_config = ScaleHeadConfig {
        hidden_layers: resolver.get(hidden_layers, "hidden-layers", defaults.hidden_layers)?,
        hidden_width: resolver.get(hidden_width, "hidden-width", defaults.hidden_width)?,
        activation: ActivationFamily::parse(&resolver.get(
            activation,
            "activation",
            defaults.activation.to_string(),
        )?)?,
    };
    let train_defaults = TrainConfig::default();
    let train_config = TrainConfig {
        epochs: resolver.get(epochs, "epochs", train_defaults.epochs)?,
        batch_size: resolver.get(batch_size, "batch-size", train_defaults.batch_size)?,
        learning_rate: resolver.get(lr, "lr", train_defaults.learning_rate)?,
        seed,
        freeze_centroids: resolver.get(
            freeze_centroids,
            "freeze-centroids",
            train_defaults.freeze_centroids,
        )?,
        shuffle: true,
    };
    let margin = resolver.get(margin, "margin", 0.5)?;

    let set = read_embeddings(&emb_path)?;
    let unit = normalize(&set)?;
    let report = train_head(&unit, head_config, margin, &train_config)?;

    let head_path = out_dir.join("head.sfh");
    write_head(&head_path, &report.head)?;
    resolver.record("output-head", head_path.display());

    let report_path = out_dir.join("train_report.txt");
    let mut w = BufWriter::new(File::create(&report_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "epochs={}", report.epoch_losses.len()).map_err(scaleface::Error::Io)?;
    writeln!(w, "first_loss={:.17e}", report.epoch_losses[0]).map_err(scaleface::Error::Io)?;
    writeln!(w, "final_loss={:.17e}", report.epoch_losses[report.epoch_losses.len() - 1])
        .map_err(scaleface::Error::Io)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(w, "epoch_loss_{}={:.17e}", i, loss).map_err(scaleface::Error::Io)?;
    }
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-report", report_path.display());

    resolver.write_manifest(out_dir, "train-head")?;
    println!(
        "trained head: first loss {:.6}, final loss {:.6}",
        report.epoch_losses[0],
        report.epoch_losses[report.epoch_losses.len() - 1]
    );
    Ok(())
}

fn cmd_predict_scale(
    resolver: &mut Resolver,
    out_dir: &Path,
    embeddings: Option<PathBuf>,
    head: Option<PathBuf>,
) -> CliResult<()> {
    let emb_path = resolver.require_path(embeddings, "embeddings")?;
    let head_path = resolver.require_path(head, "head")?;
    let set = read_embeddings(&emb_path)?;
    let unit = normalize(&set)?;
    let head = read_head(&head_path)?;
    let prediction = predict_scales(&head, unit.unit_vectors())?;

    let scales_path = out_dir.join("scales.csv");
    let mut w = BufWriter::new(File::create(&scales_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "index,scale").map_err(scaleface::Error::Io)?;
    for (i, s) in prediction.scales.iter().enumerate() {
        writeln!(w, "{},{:.17e}", i, s).map_err(scaleface::Error::Io)?;
    }
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-scales", scales_path.display());

    resolver.write_manifest(out_dir, "predict-scale")?;
    println!("wrote {} scales to {}", prediction.scales.len(), scales_path.display());
    Ok(())
}

fn cmd_calibrate_mu(
    resolver: &mut Resolver,
    out_dir: &Path,
    scores: Option<PathBuf>,
) -> CliResult<()> {
    let scores_path = resolver.require_path(scores, "scores")?;
    let (_, pair_scores) = read_scores(&scores_path)?;
    let mu = calibrate_mu(&pair_scores)?;

    let mu_path = out_dir.join("mu.txt");
    let mut w = BufWriter::new(File::create(&mu_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "mu={:.17e}", mu).map_err(scaleface::Error::Io)?;
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-mu", mu_path.display());

    resolver.write_manifest(out_dir, "calibrate-mu")?;
    println!("mu={}", mu);
    Ok(())
}

fn cmd_verify(
    resolver: &mut Resolver,
    out_dir: &Path,
    scores: Option<PathBuf>,
    far: Option<f64>,
) -> CliResult<()> {
    let scores_path = resolver.require_path(scores, "scores")?;
    let far = resolver.get(far, "far", 0.05)?;
    let (_, pair_scores) = read_scores(&scores_path)?;
    let (tar, threshold) = tar_at_far(&pair_scores.scores, &pair_scores.labels, far)?;

    let verify_path = out_dir.join("verify.txt");
    let mut w = BufWriter::new(File::create(&verify_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "far={}", far).map_err(scaleface::Error::Io)?;
    writeln!(w, "tar={:.17e}", tar).map_err(scaleface::Error::Io)?;
    writeln!(w, "threshold={:.17e}", threshold).map_err(scaleface::Error::Io)?;
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-verify", verify_path.display());

    resolver.write_manifest(out_dir, "verify")?;
    println!("tar={} threshold={}", tar, threshold);
    Ok(())
}

fn cmd_reject_curve(
    resolver: &mut Resolver,
    out_dir: &Path,
    scores: Option<PathBuf>,
    uncertainties: Option<PathBuf>,
    far: Option<f64>,
    provenance: Option<String>,
) -> CliResult<()> {
    let scores_path = resolver.require_path(scores, "scores")?;
    let unc_path = resolver.require_path(uncertainties, "uncertainties")?;
    let far = resolver.get(far, "far", 0.05)?;
    let provenance =
        parse_provenance(&resolver.get(provenance, "provenance", "scale".to_string())?)?;

    let (_, pair_scores) = read_scores(&scores_path)?;
    let unc = read_uncertainty_file(&unc_path)?;
    let curve = reject_verification(
        &pair_scores.scores,
        &pair_scores.labels,
        &unc,
        far,
        &default_rejection_grid(),
    )?;

    let curve_path = out_dir.join("curve.csv");
    write_curve(&curve_path, &curve)?;
    resolver.record("output-curve", curve_path.display());

    let summary_path = out_dir.join("curve_summary.txt");
    write_curve_summary(&summary_path, &curve, provenance)?;
    resolver.record("output-summary", summary_path.display());

    resolver.write_manifest(out_dir, "reject-curve")?;
    println!("auc_raw={} auc_normalized={}", curve.auc_raw, curve.auc_normalized);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate_gaussian(
    resolver: &mut Resolver,
    out_dir: &Path,
    seed: u64,
    d: Option<usize>,
    scale: Option<f64>,
    a: Option<f64>,
    sigma: Option<f64>,
    samples: Option<usize>,
) -> CliResult<()> {
    let d = resolver.get(d, "d", 128)?;
    let scale = resolver.get(scale, "scale", 10.0)?;
    let a = resolver.get(a, "a", 0.6)?;
    let sigma = resolver.get(sigma, "sigma", 1.0)?;
    let samples = resolver.get(samples, "samples", 1_000_000)?;

    let spec = GaussianModelSpec::new(d, scale, sigma, a, seed)?;
    let analytic = analytic_error_prob(scale, sigma, a)?;
    let sim = simulate_error_prob(&spec, samples, seed.wrapping_add(1))?;

    let out_path = out_dir.join("gaussian.txt");
    let mut w = BufWriter::new(File::create(&out_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "d={}", d).map_err(scaleface::Error::Io)?;
    writeln!(w, "scale={}", scale).map_err(scaleface::Error::Io)?;
    writeln!(w, "a={}", a).map_err(scaleface::Error::Io)?;
    writeln!(w, "sigma={}", sigma).map_err(scaleface::Error::Io)?;
    writeln!(w, "samples={}", samples).map_err(scaleface::Error::Io)?;
    writeln!(w, "analytic={:.17e}", analytic).map_err(scaleface::Error::Io)?;
    writeln!(w, "estimate={:.17e}", sim.estimate).map_err(scaleface::Error::Io)?;
    writeln!(w, "std_err={:.17e}", sim.std_err).map_err(scaleface::Error::Io)?;
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-result", out_path.display());

    resolver.write_manifest(out_dir, "simulate-gaussian")?;
    println!("analytic={} estimate={} std_err={}", analytic, sim.estimate, sim.std_err);
    Ok(())
}

/// Compact finite-difference sweep: per-sample loss gradients (embeddings,
/// centroids, scales) over three seeded fixtures plus one full head chain.
fn cmd_gradcheck(resolver: &mut Resolver, out_dir: &Path, seed: u64) -> CliResult<()> {
    const STEP: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    let mut max_rel: f64 = 0.0;

    for offset in 0..3u64 {
        let s = seed.wrapping_add(offset);
        let (n, d, c) = (5usize, 8usize, 3usize);
        let embeddings = sample_centroids(d, n as u32, s.wrapping_add(1));
        let centroids = sample_centroids(d, c as u32, s.wrapping_add(2));
        let labels: Vec<u32> = (0..n as u32).map(|i| i % c as u32).collect();
        let scales: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1.7).collect();
        let margin = 0.3;
        let base = angular_margin_loss_free(
            &embeddings,
            &centroids,
            &labels,
            &scales,
            margin,
            DEFAULT_COSINE_CLAMP,
        )?;

        let emb = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(n, d, p.to_vec())?;
                Ok(angular_margin_loss_free(
                    &m,
                    &centroids,
                    &labels,
                    &scales,
                    margin,
                    DEFAULT_COSINE_CLAMP,
                )?
                .loss)
            },
            base.grad_embeddings.data(),
            embeddings.data(),
            TOL,
            STEP,
        )?;
        let cent = finite_diff_check(
            |p| {
                let m = Matrix::from_vec(c, d, p.to_vec())?;
                Ok(angular_margin_loss_free(
                    &embeddings,
                    &m,
                    &labels,
                    &scales,
                    margin,
                    DEFAULT_COSINE_CLAMP,
                )?
                .loss)
            },
            base.grad_centroids.data(),
            centroids.data(),
            TOL,
            STEP,
        )?;
        let sc = finite_diff_check(
            |p| {
                Ok(angular_margin_loss_free(
                    &embeddings,
                    &centroids,
                    &labels,
                    p,
                    margin,
                    DEFAULT_COSINE_CLAMP,
                )?
                .loss)
            },
            base.grad_scales.as_ref().expect("per-sample mode"),
            &scales,
            TOL,
            STEP,
        )?;
        max_rel = max_rel.max(emb.max_rel_error).max(cent.max_rel_error).max(sc.max_rel_error);

        // head chain: net parameters through the positivity activation
        let act = ActivationFamily::SigmC(64.0);
        let net = DenseNet::mlp(d, &[8, 8], 1, s)?;
        let (pre, cache) = net_forward(&net, &embeddings)?;
        let head_scales: Vec<f64> = pre.data().iter().map(|&v| act.apply(v)).collect();
        let head_base = angular_margin_loss_free(
            &embeddings,
            &centroids,
            &labels,
            &head_scales,
            margin,
            DEFAULT_COSINE_CLAMP,
        )?;
        let gs = head_base.grad_scales.as_ref().expect("per-sample mode");
        let mut out_grad = Matrix::zeros(n, 1);
        for i in 0..n {
            out_grad[(i, 0)] = gs[i] * act.derivative(pre[(i, 0)]);
        }
        let (param_grads, _) = net_backward(&net, &cache, &out_grad)?;
        let head_report = finite_diff_check(
            |p| {
                let mut probe = net.clone();
                probe.set_params_flat(p)?;
                let (pre, _) = net_forward(&probe, &embeddings)?;
                let sc: Vec<f64> = pre.data().iter().map(|&v| act.apply(v)).collect();
                Ok(angular_margin_loss_free(
                    &embeddings,
                    &centroids,
                    &labels,
                    &sc,
                    margin,
                    DEFAULT_COSINE_CLAMP,
                )?
                .loss)
            },
            &param_grads.flat(),
            &net.params_flat(),
            TOL,
            STEP,
        )?;
        max_rel = max_rel.max(head_report.max_rel_error);
    }

    let pass = max_rel <= TOL;
    let out_path = out_dir.join("gradcheck.txt");
    let mut w = BufWriter::new(File::create(&out_path).map_err(scaleface::Error::Io)?);
    writeln!(w, "pass={}", pass).map_err(scaleface::Error::Io)?;
    writeln!(w, "max_rel_error={:.17e}", max_rel).map_err(scaleface::Error::Io)?;
    writeln!(w, "tolerance={}", TOL).map_err(scaleface::Error::Io)?;
    writeln!(w, "step={}", STEP).map_err(scaleface::Error::Io)?;
    w.flush().map_err(scaleface::Error::Io)?;
    resolver.record("output-result", out_path.display());
    resolver.write_manifest(out_dir, "gradcheck")?;

    if pass {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::numeric(format!("gradient check failed: max rel error {}", max_rel)))
    }
}

fn cmd_experiments(
    resolver: &mut Resolver,
    out_dir: &Path,
    seed: u64,
    scenario: Option<String>,
) -> CliResult<()> {
    let scenario = resolver.get(scenario, "scenario", "all".to_string())?;
    let reports: Vec<ExperimentReport> = match scenario.as_str() {
        "heteroscedastic" => vec![exp_heteroscedastic_verification(seed)?],
        "mu-improvement" => vec![exp_mu_improvement(seed)?],
        "crossview" => vec![exp_crossview_retrieval(seed)?],
        "all" => run_all(seed)?,
        other => {
            return Err(CliError::usage(format!(
                "unknown scenario \"{}\" (expected heteroscedastic | mu-improvement | crossview | all)",
                other
            )))
        }
    };
    for report in &reports {
        let path = out_dir.join(format!("report_{}_seed{}.txt", report.scenario, seed));
        write_report(&path, report)?;
        resolver.record(&format!("output-report-{}", report.scenario), path.display());
        println!("{}: {} metrics in {:.1}s", report.scenario, report.metrics.len(), report.wall_clock_secs);
    }
    resolver.write_manifest(out_dir, "experiments")?;
    Ok(())
}
