//! Command-line front end: `train`, `evaluate`, `predict`, `bounds`,
//! `synth-tv` and `gradcheck`.
//!
//! Output layout under `--out`:
//!
//! ```text
//! config-<command>.txt      full configuration echo (replay with --config)
//! splits.tsv                every triple with its train/validation/test tag
//! history.tsv               per-epoch training loss and stopping metric
//! checkpoints/block-NNN.ckpt
//! reports/                  metrics.json, lambda_density.tsv, prediction.json,
//!                           bounds.json, tv.tsv, gradcheck.json, train.json
//! ```

pub mod config;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use conv4rec::dataset::{
    load_ratings, read_manifest, split, write_manifest, ObservedDataset, RatingScale, Splits,
    Triple,
};
use conv4rec::evaluation::{
    explain, metric_report, serendipity_report, tune_lambda_per_user, Exclusions, MetricReport,
    PredictionRecord, Predictions,
};
use conv4rec::model::{
    init_params, load_checkpoint, save_checkpoint, Architecture, Checkpoint, ModelParams, ModelSpec,
};
use conv4rec::numerics::Rng;
use conv4rec::theory::{
    bound_norm_based, bound_param_count, distance_to_init, mean_tv_by_size, measured_bound_inputs,
    tv_bound_report, tv_recovery_experiment, tv_table, BoundInputs, InitDistance, TvBoundReport,
};
use conv4rec::training::{
    gradient_check, train_with_progress, GradCheckReport, TrainingSet, Validation,
};

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{ctx}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{ctx}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{ctx}: {m}")),
        }
    }
}

impl From<conv4rec::Error> for CliError {
    fn from(e: conv4rec::Error) -> Self {
        match e {
            conv4rec::Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "conv4rec",
    version,
    about = "Convolutional autoencoder recommender"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train on a ratings file; writes checkpoints and history.
    Train,
    /// RMSE and Recall@K on the test split from saved checkpoints.
    Evaluate,
    /// Distributional prediction for a user (and optionally one item).
    Predict {
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        item: Option<String>,
    },
    /// Generalization bounds for the last checkpoint (or a fresh init).
    Bounds,
    /// Total-variation recovery on synthetic data.
    SynthTv,
    /// Finite-difference check of the analytic gradients.
    Gradcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Predict { .. } => "predict",
            Command::Bounds => "bounds",
            Command::SynthTv => "synth-tv",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration: defaults, then `--config`, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Command::Predict { user, item } = &cli.command {
        if let Some(u) = user {
            cfg.set("predict.user", u)?;
        }
        if let Some(i) = item {
            cfg.set("predict.item", i)?;
        }
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?;
    let out = cli.out.as_path();
    let name = cli.command.name();
    pool.install(|| {
        prepare(out)?;
        let echo = out.join(format!("config-{name}.txt"));
        fs::write(&echo, cfg.echo()).map_err(|e| io_err(&echo, e))?;
        match &cli.command {
            Command::Train => cmd_train(&cfg, out),
            Command::Evaluate => cmd_evaluate(&cfg, out).map(|_| ()),
            Command::Predict { .. } => cmd_predict(&cfg, out),
            Command::Bounds => cmd_bounds(&cfg, out).map(|_| ()),
            Command::SynthTv => cmd_synth_tv(&cfg, out),
            Command::Gradcheck => cmd_gradcheck(&cfg, out).map(|_| ()),
        }
        .map_err(|e| e.context(name))
    })
}

/// Creates `out/reports`; every command calls this first so the commands
/// also work when driven as library functions.
fn prepare(out: &Path) -> Result<(), CliError> {
    let reports = out.join("reports");
    fs::create_dir_all(&reports).map_err(|e| io_err(&reports, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Splits from `out/splits.tsv` when present, otherwise from the data file.
fn load_splits(cfg: &RunConfig, out: &Path) -> Result<Splits, CliError> {
    let manifest = out.join("splits.tsv");
    if manifest.exists() {
        return Ok(read_manifest(&manifest)?);
    }
    let data = load_ratings(&cfg.data_path()?, cfg.scale()?)?;
    Ok(split(&data, &cfg.split_spec()?)?)
}

fn checkpoint_paths(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join("checkpoints");
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(&dir, e)),
    };
    paths.sort();
    Ok(paths)
}

fn load_checkpoints(
    out: &Path,
    n: usize,
    scale: &RatingScale,
) -> Result<Vec<ModelParams>, CliError> {
    let paths = checkpoint_paths(out)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "no checkpoints in {}; run `train` first",
            out.join("checkpoints").display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let ck = load_checkpoint(p)?;
            if ck.params.spec.n() != n || &ck.scale != scale {
                return Err(CliError::Data(format!(
                    "{}: checkpoint is for n = {} and scale {{{}}}, data has n = {n} and scale {{{scale}}}",
                    p.display(),
                    ck.params.spec.n(),
                    ck.scale
                )));
            }
            Ok(ck.params)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    epochs: usize,
    blocks: usize,
    stop_metric: String,
    block_metrics: Vec<f64>,
    stopped_early: bool,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let tc = cfg.train_config()?;
    tc.validate()?;
    let data = load_ratings(&cfg.data_path()?, cfg.scale()?)?;
    let splits = split(&data, &cfg.split_spec()?)?;
    write_manifest(&out.join("splits.tsv"), &splits)?;
    let inputs = TrainingSet::from_dataset(&splits.train)?;
    let validation = (!splits.validation.is_empty()).then_some(Validation {
        data: &splits.validation,
    });
    eprintln!(
        "training on {} users × {} items, {} train / {} validation entries",
        data.m,
        data.n,
        splits.train.len(),
        splits.validation.len()
    );
    let state = train_with_progress(&tc, &inputs, &data.scale, validation, |r| {
        match r.validation {
            Some(v) => eprintln!(
                "epoch {:>4}  loss {:.6}  {} {:.6}",
                r.epoch, r.train_loss, tc.stop_metric, v
            ),
            None => eprintln!("epoch {:>4}  loss {:.6}", r.epoch, r.train_loss),
        }
    })?;
    let dir = out.join("checkpoints");
    for old in checkpoint_paths(out)? {
        fs::remove_file(&old).map_err(|e| io_err(&old, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (b, params) in state.checkpoints.iter().enumerate() {
        let ck = Checkpoint {
            params: params.clone(),
            scale: data.scale.clone(),
            epoch: (b + 1) * tc.epoch_block,
        };
        save_checkpoint(&dir.join(format!("block-{:03}.ckpt", b + 1)), &ck)?;
    }
    state.write_history(&out.join("history.tsv"))?;
    write_json(
        &out.join("reports/train.json"),
        &TrainSummary {
            epochs: state.epoch,
            blocks: state.checkpoints.len(),
            stop_metric: tc.stop_metric.to_string(),
            block_metrics: state.block_metrics.clone(),
            stopped_early: state.stopped_early,
        },
    )?;
    eprintln!(
        "wrote {} checkpoints to {}",
        state.checkpoints.len(),
        dir.display()
    );
    Ok(())
}

fn predictions(
    cfg: &RunConfig,
    out: &Path,
) -> Result<(Splits, TrainingSet, Predictions), CliError> {
    let splits = load_splits(cfg, out)?;
    let scale = splits.train.scale.clone();
    let checkpoints = load_checkpoints(out, splits.train.n, &scale)?;
    let inputs = TrainingSet::from_dataset(&splits.train)?;
    let refs: Vec<&ModelParams> = checkpoints.iter().collect();
    let preds = Predictions::from_checkpoints(&refs, &inputs, &scale)?;
    Ok((splits, inputs, preds))
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<MetricReport, CliError> {
    prepare(out)?;
    let ks: Vec<usize> = cfg.list("eval.recall_k")?;
    let (splits, _, preds) = predictions(cfg, out)?;
    let mut excl = Exclusions::new(&splits.train);
    if cfg.get::<bool>("eval.exclude_validation")? {
        excl = excl.with(&splits.validation);
    }
    let report = metric_report(
        &preds,
        &excl,
        &splits.test,
        &ks,
        cfg.get("eval.skip_cold_users")?,
    )?;
    write_json(&out.join("reports/metrics.json"), &report)?;
    if cfg.get::<bool>("eval.lambda_density")? {
        let lr = tune_lambda_per_user(&preds, &Exclusions::new(&splits.train), &splits.validation)?;
        let mut text = String::from("lambda\tusers\n");
        for (lambda, count) in &lr.density {
            text.push_str(&format!("{lambda:.6e}\t{count}\n"));
        }
        let path = out.join("reports/lambda_density.tsv");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    say!("rmse\t{:.6}", report.rmse);
    for (k, v) in &report.recall {
        say!("recall@{k}\t{v:.6}");
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
struct ItemPrediction {
    user_id: String,
    item_id: String,
    #[serde(flatten)]
    record: PredictionRecord,
}

#[derive(Debug, Serialize)]
struct SerendipityItem {
    item_id: String,
    interaction: f64,
    prediction: f64,
}

#[derive(Debug, Serialize)]
struct UserPrediction {
    user_id: String,
    percentile: f64,
    threshold: f64,
    serendipitous_items: Vec<SerendipityItem>,
}

fn lookup(data: &ObservedDataset, raw: &str, user: bool) -> Result<usize, CliError> {
    let found = if user {
        data.user_index(raw)
    } else {
        data.item_index(raw)
    };
    found.ok_or_else(|| {
        CliError::Data(format!(
            "unknown {} id '{raw}'",
            if user { "user" } else { "item" }
        ))
    })
}

pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let user_raw = cfg.raw("predict.user").to_string();
    if user_raw.is_empty() {
        return Err(CliError::Usage(
            "predict needs --user (or predict.user)".into(),
        ));
    }
    let (splits, _, preds) = predictions(cfg, out)?;
    let user = lookup(&splits.train, &user_raw, true)?;
    let path = out.join("reports/prediction.json");
    let item_raw = cfg.raw("predict.item");
    let text = if item_raw.is_empty() {
        let report = serendipity_report(
            &preds,
            &Exclusions::new(&splits.train),
            user,
            cfg.get("predict.percentile")?,
        )?;
        let value = UserPrediction {
            user_id: user_raw,
            percentile: report.percentile,
            threshold: report.threshold,
            serendipitous_items: report
                .items
                .iter()
                .map(|&(j, interaction, prediction)| SerendipityItem {
                    item_id: splits.train.item_ids[j].clone(),
                    interaction,
                    prediction,
                })
                .collect(),
        };
        write_json(&path, &value)?;
        serde_json::to_string_pretty(&value)
    } else {
        let item = lookup(&splits.train, item_raw, false)?;
        let value = ItemPrediction {
            user_id: user_raw,
            item_id: item_raw.to_string(),
            record: explain(&preds, user, item)?,
        };
        write_json(&path, &value)?;
        serde_json::to_string_pretty(&value)
    };
    say!("{}", text.map_err(|e| CliError::Data(e.to_string()))?);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    /// `true` when no checkpoint existed and a fresh initialization was used.
    pub fresh_init: bool,
    pub inputs: BoundInputs,
    pub distance: InitDistance,
    pub param_count: f64,
    pub norm_based: f64,
    /// `𝒬` and the TV forms, up to the theorem's unstated constants.
    pub tv: TvBoundReport,
}

pub fn cmd_bounds(cfg: &RunConfig, out: &Path) -> Result<BoundsReport, CliError> {
    prepare(out)?;
    let splits = load_splits(cfg, out)?;
    let scale = splits.train.scale.clone();
    let inputs = TrainingSet::from_dataset(&splits.train)?;
    let fresh_init = checkpoint_paths(out)?.is_empty();
    let params = if fresh_init {
        let tc = cfg.train_config()?;
        init_params(
            &ModelSpec::standard(&tc.architecture(inputs.n, inputs.k))?,
            tc.seed,
        )
    } else {
        load_checkpoints(out, inputs.n, &scale)?
            .pop()
            .expect("non-empty")
    };
    let x = measured_bound_inputs(
        &params,
        &inputs,
        inputs.total_count(),
        cfg.get("bounds.delta")?,
        &scale,
    )?;
    let report = BoundsReport {
        fresh_init,
        distance: distance_to_init(&params)?,
        param_count: bound_param_count(&x)?,
        norm_based: bound_norm_based(&x)?,
        tv: tv_bound_report(&x)?,
        inputs: x,
    };
    write_json(&out.join("reports/bounds.json"), &report)?;
    say!("param_count\t{:.6e}", report.param_count);
    say!("norm_based\t{:.6e}", report.norm_based);
    say!("q\t{:.6e}", report.tv.q);
    Ok(report)
}

pub fn cmd_synth_tv(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    prepare(out)?;
    let exp = cfg.tv_experiment()?;
    let rows = tv_recovery_experiment(&exp)?;
    let path = out.join("reports/tv.tsv");
    fs::write(&path, tv_table(&exp, &rows)).map_err(|e| io_err(&path, e))?;
    for (n, tv) in mean_tv_by_size(&rows) {
        say!("N={n}\tmean_tv={tv:.6}");
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub threshold: f64,
    pub passed: bool,
}

/// Random toy data and model; fails with a numerical error above threshold.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradCheckOutcome, CliError> {
    prepare(out)?;
    let (m, n, k): (usize, usize, usize) = (
        cfg.get("gradcheck.m")?,
        cfg.get("gradcheck.n")?,
        cfg.get("gradcheck.k")?,
    );
    let density: f64 = cfg.get("gradcheck.density")?;
    let bias: bool = cfg.get("gradcheck.bias")?;
    let h: f64 = cfg.get("gradcheck.h")?;
    let threshold: f64 = cfg.get("gradcheck.threshold")?;
    let seed: u64 = cfg.get("seed")?;
    if m == 0 || n == 0 || k == 0 || !(h > 0.0) {
        return Err(CliError::Usage(
            "gradcheck needs positive m, n, k and h".into(),
        ));
    }
    let mut rng = Rng::derive(seed, 7);
    let mut triples = Vec::new();
    for user in 0..m {
        for item in 0..n {
            if rng.uniform() < density {
                triples.push(Triple {
                    user,
                    item,
                    rating: 1 + rng.index(k),
                });
            }
        }
    }
    let data = ObservedDataset::from_triples(m, n, RatingScale::integer(k)?, triples)?;
    let inputs = TrainingSet::from_dataset(&data)?;
    let spec = ModelSpec::standard(&Architecture {
        n,
        k,
        r: cfg.get("gradcheck.r")?,
        depth: cfg.get("gradcheck.depth")?,
        width: cfg.get("gradcheck.width")?,
        bias,
    })?;
    let mut params = init_params(&spec, seed);
    // zero biases can pin pre-activations exactly on the ReLU kink
    for layer in params.encoder.iter_mut().chain(params.decoder.iter_mut()) {
        if let Some(b) = &mut layer.bias {
            b.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v += rng.uniform_range(0.05, 0.1));
        }
    }
    let users: Vec<usize> = (0..m).collect();
    let report = gradient_check(&params, &inputs, &users, h)?;
    let outcome = GradCheckOutcome {
        passed: report.max_relative_error <= threshold,
        report,
        threshold,
    };
    write_json(&out.join("reports/gradcheck.json"), &outcome)?;
    say!(
        "{} parameters checked, max relative error {:.3e} (threshold {threshold:.0e}): {}",
        outcome.report.checked,
        outcome.report.max_relative_error,
        if outcome.passed { "PASS" } else { "FAIL" }
    );
    if !outcome.passed {
        return Err(CliError::Numerical(format!(
            "max relative error {:.3e} exceeds {threshold:.0e}",
            outcome.report.max_relative_error
        )));
    }
    Ok(outcome)
}
