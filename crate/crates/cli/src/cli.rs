use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hdpo_core::evalkit::{validate_grid, Metric};
use hdpo_core::model::DEFAULT_BETA;
use hdpo_core::valuation::xi_hat_raw;
use hdpo_core::{
    clean, contaminate, detect, fit, generate_clean, gradient_check, if_curve, run_cell, Backend, BatchSize,
    ContaminationSpec, ExperimentSpec, GeneratorSpec, HolderPhi, LossSpec, PolicyModel, PreferenceDataset,
    SweepResult, TrainConfig,
};
use rayon::prelude::*;

use crate::config::{build_loss, parse_batch, LossParams, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{self, num, write_atomic};

#[derive(Debug, Parser)]
#[command(name = "hdpo", version, about = "Robust preference optimization: train, estimate contamination, detect and clean mislabels")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset, optionally contaminated
    Gen(GenArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Tabulate an objective's influence weight over a margin grid
    Ifcurve(CurveArgs),
    /// Estimate the clean proportion and contamination ratio
    Estimate(EstimateArgs),
    /// Rank pairs by likelihood and flag suspected mislabels
    Detect(DetectArgs),
    /// Remove flagged pairs from a dataset
    Clean(CleanArgs),
    /// Run a (variant, epsilon, seed) experiment grid
    Sweep(SweepArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// RunConfig TOML file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct LossArgs {
    /// dpo, ipo, cdpo, rdpo, drdpo or holder
    #[arg(long)]
    variant: Option<String>,
    /// Label-noise constant for cdpo and rdpo
    #[arg(long)]
    c: Option<f64>,
    /// Temperature for drdpo
    #[arg(long)]
    beta_prime: Option<f64>,
    /// Hölder exponent
    #[arg(long)]
    gamma: Option<f64>,
    /// Hölder score: dp or ps
    #[arg(long, value_parser = parse_phi)]
    phi: Option<HolderPhi>,
}

fn parse_phi(s: &str) -> Result<HolderPhi, String> {
    match s {
        "dp" => Ok(HolderPhi::Dp),
        "ps" => Ok(HolderPhi::Ps),
        _ => Err(format!("expected dp or ps, got {s:?}")),
    }
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    match s {
        "tabular" => Ok(Backend::Tabular),
        "linear" => Ok(Backend::Linear),
        _ => Err(format!("expected tabular or linear, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    prompts: Option<usize>,
    /// Responses per prompt
    #[arg(long)]
    responses: Option<usize>,
    /// Feature dimension
    #[arg(long)]
    dim: Option<usize>,
    /// Drop pairs whose true reward gap is below this
    #[arg(long)]
    margin_floor: Option<f64>,
    /// Fraction of labels to flip
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// tabular or linear (default: linear when the dataset has features)
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// "full" or a positive integer
    #[arg(long, value_parser = parse_batch)]
    batch_size: Option<BatchSize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Abort if a full-batch epoch increases the loss
    #[arg(long)]
    enforce_descent: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Model checkpoint to write
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch loss trace to write
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = -30.0, allow_negative_numbers = true)]
    gmin: f64,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    gmax: f64,
    #[arg(long, default_value_t = 601)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Exponent used by the estimator
    #[arg(long)]
    gamma: Option<f64>,
    /// Also print the unnormalized ratio (diagnostic)
    #[arg(long)]
    raw: bool,
    /// Write here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Comma-separated variant names
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated contamination ratios
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', conflicts_with = "n_seeds")]
    seeds: Option<Vec<u64>>,
    /// Use seeds 1..=N
    #[arg(long)]
    n_seeds: Option<u64>,
    #[command(flatten)]
    loss: SweepLossArgs,
    #[arg(long)]
    prompts: Option<usize>,
    #[arg(long)]
    responses: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    margin_floor: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_batch)]
    batch_size: Option<BatchSize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// γ used for estimation and detection in every cell
    #[arg(long)]
    detect_gamma: Option<f64>,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct SweepLossArgs {
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    beta_prime: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset to check on (default: a small generated one)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model to check at (default: a jittered initial model)
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    backend: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Fail with exit code 3 above this error
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(arg: &ConfigArg) -> CliResult<RunConfig> {
    match &arg.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Explicit path, else `<output_dir>/<default_name>`, else a usage error.
fn output_path(explicit: Option<PathBuf>, cfg: &RunConfig, default_name: &str, flag: &str) -> CliResult<PathBuf> {
    explicit
        .or_else(|| cfg.output_dir.as_ref().map(|d| d.join(default_name)))
        .ok_or_else(|| usage(format!("{flag} is required (or set output_dir in --config)")))
}

fn resolve_loss(args: &LossArgs, cfg: &RunConfig) -> CliResult<LossSpec> {
    let flags = LossParams {
        c: args.c,
        beta_prime: args.beta_prime,
        gamma: args.gamma,
        phi: args.phi,
    };
    match (&args.variant, &cfg.loss) {
        (Some(v), file) => {
            // A file section for a different variant contributes nothing.
            let file_params = file
                .as_ref()
                .filter(|l| &l.variant == v)
                .map(|l| l.params())
                .unwrap_or_default();
            build_loss(v, flags.or(file_params), true).map_err(usage)
        }
        (None, Some(file)) => build_loss(&file.variant, flags.or(file.params()), true).map_err(usage),
        (None, None) => Err(usage("--variant is required (or a [loss] section in --config)")),
    }
}

fn resolve_backend(flag: Option<Backend>, cfg: &RunConfig, data: &PreferenceDataset) -> Backend {
    flag.or(cfg.backend).unwrap_or(if data.feature_dim() > 0 {
        Backend::Linear
    } else {
        Backend::Tabular
    })
}

fn resolve_generator(cfg: &RunConfig, prompts: Option<usize>, responses: Option<usize>, dim: Option<usize>, floor: Option<f64>, seed: Option<u64>) -> GeneratorSpec {
    let g = &cfg.generator;
    let d = GeneratorSpec::default();
    GeneratorSpec {
        n_prompts: prompts.or(g.n_prompts).unwrap_or(d.n_prompts),
        n_responses_per_prompt: responses.or(g.n_responses_per_prompt).unwrap_or(d.n_responses_per_prompt),
        feature_dim: dim.or(g.feature_dim).unwrap_or(d.feature_dim),
        true_theta: g.true_theta.clone(),
        margin_floor: floor.or(g.margin_floor).unwrap_or(d.margin_floor),
        seed: seed.or(g.seed).unwrap_or(d.seed),
    }
}

struct TrainFlags {
    epochs: Option<usize>,
    batch_size: Option<BatchSize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    grad_tol: Option<f64>,
    enforce_descent: bool,
    seed: Option<u64>,
}

fn resolve_train(flags: TrainFlags, cfg: &RunConfig, backend: Backend) -> CliResult<TrainConfig> {
    let t = &cfg.train;
    let d = TrainConfig::for_backend(backend);
    let file_batch = match &t.batch_size {
        Some(b) => Some(b.resolve().map_err(|message| CliError::Config {
            path: PathBuf::from("--config"),
            message,
        })?),
        None => None,
    };
    Ok(TrainConfig {
        max_epochs: flags.epochs.or(t.max_epochs).unwrap_or(d.max_epochs),
        batch_size: flags.batch_size.or(file_batch).unwrap_or(d.batch_size),
        learning_rate: flags.lr.or(t.learning_rate).unwrap_or(d.learning_rate),
        momentum: flags.momentum.or(t.momentum).unwrap_or(d.momentum),
        grad_tol: flags.grad_tol.or(t.grad_tol).unwrap_or(d.grad_tol),
        seed: flags.seed.or(t.seed).unwrap_or(d.seed),
        enforce_descent: flags.enforce_descent || t.enforce_descent.unwrap_or(false),
    })
}

/// `--gamma`, else the config's detection γ, else a Hölder loss γ, else 2.
fn resolve_gamma(flag: Option<f64>, cfg: &RunConfig) -> f64 {
    flag.or(cfg.sweep.detect_gamma)
        .or_else(|| cfg.loss.as_ref().filter(|l| l.variant == "holder").and_then(|l| l.gamma))
        .unwrap_or(hdpo_core::objectives::DEFAULT_GAMMA)
}

fn load_pair(data: &Path, model: &Path) -> CliResult<(PreferenceDataset, PolicyModel)> {
    let data = formats::read_dataset(data)?;
    let model = formats::read_model(model)?;
    model.check_compatible(&data)?;
    Ok((data, model))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Ifcurve(a) => ifcurve(a),
        Command::Estimate(a) => estimate(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Clean(a) => clean_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen(a: GenArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let spec = resolve_generator(&cfg, a.prompts, a.responses, a.dim, a.margin_floor, a.seed);
    let epsilon = a.eps.or(cfg.contamination.epsilon).unwrap_or(0.0);
    let contamination_seed = a.seed.or(cfg.contamination.seed).unwrap_or(spec.seed);
    let out = output_path(a.out, &cfg, "dataset.jsonl", "--out")?;
    let clean_data = generate_clean(&spec)?;
    let data = contaminate(&clean_data, &ContaminationSpec::new(epsilon, contamination_seed)?)?;
    write_atomic(&out, formats::dataset_to_string(&data).as_bytes())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let spec = resolve_loss(&a.loss, &cfg)?;
    let data = formats::read_dataset(&a.data)?;
    let backend = resolve_backend(a.model.backend, &cfg, &data);
    let beta = a.model.beta.or(cfg.model.beta).unwrap_or(DEFAULT_BETA);
    let config = resolve_train(
        TrainFlags {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            momentum: a.momentum,
            grad_tol: a.grad_tol,
            enforce_descent: a.enforce_descent,
            seed: a.seed,
        },
        &cfg,
        backend,
    )?;
    let out = output_path(a.out, &cfg, "model.json", "--out")?;
    let initial = PolicyModel::initial(backend, &data, beta)?;
    let (model, trace) = fit(&initial, &data, &spec, &config)?;
    write_atomic(&out, formats::model_to_string(&model).as_bytes())?;
    if let Some(path) = a.trace {
        write_atomic(&path, formats::trace_to_string(&trace).as_bytes())?;
    }
    eprintln!(
        "{}: {} epochs, loss {} -> {}, grad norm {}",
        spec.name(),
        trace.epochs_run,
        num(trace.initial_loss),
        num(trace.final_loss()),
        num(trace.final_grad_norm()),
    );
    Ok(())
}

fn ifcurve(a: CurveArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let spec = resolve_loss(&a.loss, &cfg)?;
    let beta = a.beta.or(cfg.model.beta).unwrap_or(DEFAULT_BETA);
    let curve = if_curve(&spec, beta, a.gmin, a.gmax, a.points)?;
    let out = output_path(a.out, &cfg, "curve.tsv", "--out")?;
    write_atomic(&out, formats::curve_to_string(&curve).as_bytes())
}

fn estimate(a: EstimateArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let (data, model) = load_pair(&a.data, &a.model)?;
    let gamma = resolve_gamma(a.gamma, &cfg);
    let report = detect(&model, &data, gamma)?;
    let mut text = format!(
        "xi_hat\t{}\nepsilon_hat\t{}\ngamma\t{}\nn\t{}\n",
        num(report.xi_hat),
        num(report.epsilon_hat),
        num(gamma),
        report.n()
    );
    if a.raw {
        let raw = xi_hat_raw(&report.likelihoods, gamma)?;
        text.push_str(&format!("xi_hat_raw\t{}\n", num(raw)));
    }
    emit(a.out.as_deref(), &text)
}

fn detect_cmd(a: DetectArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let (data, model) = load_pair(&a.data, &a.model)?;
    let report = detect(&model, &data, resolve_gamma(a.gamma, &cfg))?;
    let out = output_path(a.out, &cfg, "report.tsv", "--out")?;
    write_atomic(&out, formats::report_to_string(&report).as_bytes())
}

fn clean_cmd(a: CleanArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let data = formats::read_dataset(&a.data)?;
    let report = formats::read_report(&a.report)?;
    let cleaned = clean(&data, &report)?;
    let out = output_path(a.out, &cfg, "cleaned.jsonl", "--out")?;
    write_atomic(&out, formats::dataset_to_string(&cleaned).as_bytes())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let names: Vec<String> = match (&a.variants, &cfg.sweep.variants) {
        (Some(list), _) => list.split(',').map(|s| s.trim().to_string()).collect(),
        (None, Some(list)) => list.clone(),
        (None, None) => vec!["dpo".into(), "holder".into()],
    };
    let file_params = cfg.loss.as_ref().map(|l| l.params()).unwrap_or_default();
    let flag_params = LossParams {
        c: a.loss.c,
        beta_prime: a.loss.beta_prime,
        gamma: a.loss.gamma,
        phi: None,
    };
    let variants = names
        .iter()
        .map(|n| build_loss(n, flag_params.or(file_params), false).map_err(usage))
        .collect::<CliResult<Vec<_>>>()?;
    let labels: Vec<String> = variants.iter().map(|v| v.name().to_string()).collect();
    let mut distinct = labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() != labels.len() {
        return Err(usage("sweep variants must be distinct"));
    }
    let eps = a.eps.or_else(|| cfg.sweep.eps.clone()).unwrap_or_else(|| vec![0.0, 0.2, 0.4]);
    let seeds = match (a.seeds, a.n_seeds) {
        (Some(s), _) => s,
        (None, Some(n)) => (1..=n).collect(),
        (None, None) => cfg.sweep.seeds.clone().unwrap_or_else(|| (1..=10).collect()),
    };
    validate_grid(&variants, &eps, &seeds)?;
    if a.jobs == 0 {
        return Err(usage("--jobs must be positive"));
    }

    let backend = a.model.backend.or(cfg.backend).unwrap_or(Backend::Linear);
    let base = ExperimentSpec {
        generator: resolve_generator(&cfg, a.prompts, a.responses, a.dim, a.margin_floor, None),
        backend,
        beta: a.model.beta.or(cfg.model.beta).unwrap_or(DEFAULT_BETA),
        train: resolve_train(
            TrainFlags {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                momentum: a.momentum,
                grad_tol: None,
                enforce_descent: false,
                seed: None,
            },
            &cfg,
            backend,
        )?,
        detect_gamma: a.detect_gamma.or(cfg.sweep.detect_gamma).unwrap_or(hdpo_core::objectives::DEFAULT_GAMMA),
    };
    base.generator.validate()?;
    base.train.validate()?;
    let out_dir = a
        .out_dir
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| usage("--out-dir is required (or set output_dir in --config)"))?;

    let coords = SweepResult::coordinates(variants.len(), eps.len(), seeds.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| usage(format!("cannot start {} workers: {e}", a.jobs)))?;
    let metrics = pool.install(|| {
        coords
            .par_iter()
            .map(|&(v, e, s)| run_cell(&variants[v], eps[e], seeds[s], &base))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let result = SweepResult::from_metrics(variants, eps, seeds, metrics)?;

    for metric in Metric::ALL {
        let path = out_dir.join(format!("{}.tsv", metric.name()));
        write_atomic(&path, formats::sweep_metric_table(&result, metric, &labels).as_bytes())?;
    }
    write_atomic(&out_dir.join("records.tsv"), formats::sweep_records(&result, &labels).as_bytes())
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let spec = resolve_loss(&a.loss, &cfg)?;
    let data = match &a.data {
        Some(path) => formats::read_dataset(path)?,
        None => generate_clean(&GeneratorSpec {
            n_prompts: 6,
            n_responses_per_prompt: 3,
            feature_dim: 4,
            true_theta: None,
            margin_floor: 0.0,
            seed: a.seed,
        })?,
    };
    let model = match &a.model {
        Some(path) => {
            let m = formats::read_model(path)?;
            m.check_compatible(&data)?;
            m
        }
        None => {
            let backend = resolve_backend(a.backend.backend, &cfg, &data);
            let beta = a.backend.beta.or(cfg.model.beta).unwrap_or(DEFAULT_BETA);
            let mut m = PolicyModel::initial(backend, &data, beta)?;
            m.jitter(a.seed, 1.0);
            m
        }
    };
    let error = gradient_check(&model, &data, &spec, a.step)?;
    let text = format!("variant\t{}\nstep\t{}\nmax_rel_error\t{}\n", spec.name(), num(a.step), num(error));
    emit(a.out.as_deref(), &text)?;
    match a.tol {
        Some(tol) if !(error < tol) => Err(CliError::GradientCheck { error, tol }),
        _ => Ok(()),
    }
}
