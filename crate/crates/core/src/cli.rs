//! Command-line driver behind the `pdl` binary.
//!
//! Every stage reads and writes one model file. Exit codes: 0 success,
//! 1 usage error, 2 environment or data error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    self, emit_report, evaluate_pipeline, load_train, stage_seed, DatasetKind, ExperimentConfig,
    ExperimentResult, Method, RunOutcome, StageTimings,
};
use crate::classifier::LinearModel;
use crate::dictionary::{self, Dictionary};
use crate::encoder::{FeatureExtractor, PoolGrid, PoolOp};
use crate::error::PdlError;
use crate::model::{
    DataSource, EncoderSettings, ModelFile, TAG_DICT, TAG_EXEMPLARS, TAG_NYSTROM, TAG_PCA, TAG_SVM,
};
use crate::nystrom::{self, pca_from_covariance};
use crate::patches::ZcaWhitener;
use crate::selection::{select_k_exemplars_report, ExemplarSet};
use crate::viz;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ENV: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<PdlError> for CliError {
    fn from(e: PdlError) -> Self {
        let code = match e {
            PdlError::InvalidArgument(_) | PdlError::Config(_) => EXIT_USAGE,
            _ => EXIT_ENV,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "pdl", version, about = "Pooling-invariant dictionary learning")]
pub struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the whitener and a patch dictionary of size M.
    LearnDict(StageArgs),
    /// Choose K codes by pooled-covariance exemplar selection (or PCA).
    Select(StageArgs),
    /// Train and test a linear classifier on the model's features.
    Evaluate(StageArgs),
    /// Write filter images for the model's dictionary.
    Visualize(StageArgs),
    /// Run complete seeded experiments and write a report directory.
    Experiment(StageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Fast,
    Full,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StageArgs {
    /// JSON experiment config; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to read (and update, for `select`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub patch_side: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pooling grid as RxC, e.g. 2x2.
    #[arg(long)]
    pub pool_grid: Option<PoolGrid>,
    #[arg(long)]
    pub pool_op: Option<PoolOp>,
    /// Starting dictionary size (comma-separated list for `experiment`).
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    /// Final dictionary size.
    #[arg(long)]
    pub k: Option<usize>,
    /// kmeans, pdl, pca or random (comma-separated list for `experiment`).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,
    /// Patch samples for `learn-dict`, pooled-region samples otherwise.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long, value_enum)]
    pub rescale: Option<Switch>,
    /// Output path: model file, CSV file or report directory by subcommand.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// K-means iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Starting point for `experiment` before the config file and flags.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Record spectrum and correlation series in `experiment`.
    #[arg(long)]
    pub diagnostics: bool,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

impl StageArgs {
    /// Profile defaults, then the config file, then explicit flags.
    fn resolve(&self) -> CliResult<(ExperimentConfig, serde_json::Map<String, serde_json::Value>)> {
        let mut base = match self.profile {
            Some(Profile::Fast) => ExperimentConfig::fast(Method::Pdl),
            _ => ExperimentConfig::default(),
        };
        let mut keys = serde_json::Map::new();
        if let Some(path) = &self.config {
            let text =
                fs::read_to_string(path).map_err(|e| CliError::from(PdlError::io(path, e)))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            let obj = value.as_object().ok_or_else(|| {
                CliError::usage(format!("{}: expected a JSON object", path.display()))
            })?;
            let mut merged = serde_json::to_value(&base).expect("config serializes");
            for (k, v) in obj {
                merged[k] = v.clone();
            }
            base = serde_json::from_value(merged)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            keys = obj.clone();
        }
        let c = &mut base;
        if let Some(v) = self.dataset {
            c.dataset = v;
        }
        if let Some(v) = &self.data_dir {
            c.data_dir = Some(v.clone());
        }
        if let Some(v) = self.patch_side {
            c.patch_side = v;
        }
        if let Some(v) = self.stride {
            c.stride = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.pool_grid {
            c.pool_grid = v;
        }
        if let Some(v) = self.pool_op {
            c.pool_op = v;
        }
        if let Some(&v) = self.m.first() {
            c.m_start = v;
        }
        if let Some(v) = self.k {
            c.k_final = v;
        }
        if let Some(&v) = self.method.first() {
            c.method = v;
        }
        if let Some(v) = self.runs {
            c.n_runs = v;
        }
        if let Some(v) = self.seed {
            c.seeds = (0..c.n_runs as u64).map(|i| v + i).collect();
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.bias {
            c.bias = v;
        }
        if let Some(v) = self.rescale {
            c.rescale = v == Switch::On;
        }
        if let Some(v) = self.train_limit {
            c.train_limit = Some(v);
        }
        if let Some(v) = self.test_limit {
            c.test_limit = Some(v);
        }
        if let Some(v) = self.iters {
            c.kmeans_iters = v;
        }
        if self.diagnostics {
            c.diagnostics = true;
        }
        Ok((base, keys))
    }

    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed
            .or_else(|| cfg.seeds.first().copied())
            .unwrap_or(0)
    }

    fn model_path(&self) -> CliResult<&Path> {
        self.model
            .as_deref()
            .ok_or_else(|| CliError::usage("--model is required"))
    }

    fn single<'a, T>(&self, values: &'a [T], flag: &str) -> CliResult<Option<&'a T>> {
        if values.len() > 1 {
            return Err(CliError::usage(format!(
                "--{flag} takes a single value here"
            )));
        }
        Ok(values.first())
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::LearnDict(a) => learn_dict(a),
        Command::Select(a) => select(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Visualize(a) => visualize(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn learn_dict(args: &StageArgs) -> CliResult<()> {
    let (mut cfg, keys) = args.resolve()?;
    if args.single(&args.m, "m")?.is_none() && !keys.contains_key("m_start") {
        return Err(CliError::usage(
            "--m (starting dictionary size) is required",
        ));
    }
    let method = args
        .single(&args.method, "method")?
        .copied()
        .unwrap_or(Method::Kmeans);
    if !matches!(method, Method::Kmeans | Method::Random) {
        return Err(CliError::usage(
            "learn-dict supports --method kmeans or random",
        ));
    }
    if let Some(n) = args.samples {
        cfg.patch_samples = n;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("model.bin"));
    let m = cfg.m_start;
    if m == 0 || cfg.patch_side == 0 {
        return Err(CliError::usage("--m and --patch-side must be >= 1"));
    }
    if cfg.patch_samples < m {
        return Err(CliError::usage(format!(
            "{} patch samples cannot train {m} codes",
            cfg.patch_samples
        )));
    }
    let seed = args.seed(&cfg);
    let train = load_train(&cfg)?;
    let (white, whitener) = bench::prepare_patches(
        &train,
        cfg.patch_side,
        cfg.patch_samples,
        cfg.epsilon,
        cfg.bias,
        stage_seed(seed, 1),
    )?;
    let dict_seed = stage_seed(seed, 2);
    let dict = match method {
        Method::Random => dictionary::random_dictionary(&white, m, dict_seed)?,
        _ => dictionary::kmeans_spherical(&white, m, cfg.kmeans_iters, dict_seed)?,
    };
    let mut file = ModelFile::new();
    file.put(&DataSource {
        dataset: cfg.dataset,
        data_dir: cfg.data_dir.clone().unwrap_or_default(),
        resize: cfg.resize,
    });
    file.put(&whitener);
    file.put(&dict);
    file.put(&EncoderSettings {
        encoder: cfg.encoder(),
        bias: cfg.bias,
    });
    file.save(&out)?;
    println!(
        "wrote {} ({} codes of dimension {})",
        out.display(),
        dict.size(),
        dict.dim()
    );
    Ok(())
}

fn load_model(args: &StageArgs) -> CliResult<(PathBuf, ModelFile)> {
    let path = args.model_path()?.to_path_buf();
    let file = ModelFile::load(&path)?;
    Ok((path, file))
}

/// Dataset settings for a stage that follows `learn-dict`: explicit flags
/// first, then the model's recorded source.
fn data_config(args: &StageArgs, cfg: &mut ExperimentConfig, file: &ModelFile) -> CliResult<()> {
    if let Some(src) = file.get_opt::<DataSource>()? {
        if args.dataset.is_none() && args.config.is_none() {
            cfg.dataset = src.dataset;
            cfg.resize = src.resize;
        }
        if cfg.data_dir.is_none() && !src.data_dir.as_os_str().is_empty() {
            cfg.data_dir = Some(src.data_dir);
        }
    }
    if cfg.data_dir.is_none() {
        return Err(CliError::usage("--data-dir is required"));
    }
    Ok(())
}

fn select(args: &StageArgs) -> CliResult<()> {
    let (mut cfg, keys) = args.resolve()?;
    let (path, mut file) = load_model(args)?;
    if args.k.is_none() && !keys.contains_key("k_final") {
        return Err(CliError::usage("--k (final dictionary size) is required"));
    }
    let method = args
        .single(&args.method, "method")?
        .copied()
        .unwrap_or(Method::Pdl);
    if !matches!(method, Method::Pdl | Method::Pca) {
        return Err(CliError::usage("select supports --method pdl or pca"));
    }
    if !file.contains(TAG_DICT) {
        return Err(PdlError::MissingSection("DICT".into()).into());
    }
    let dict: Dictionary = file.get()?;
    let whitener: ZcaWhitener = file.get()?;
    let k = cfg.k_final;
    if k == 0 || k > dict.size() {
        return Err(CliError::usage(format!(
            "--k {k} must lie in 1..={} (the dictionary size)",
            dict.size()
        )));
    }
    if let Some(n) = args.samples {
        cfg.covariance_samples = n;
    }
    if cfg.covariance_samples < 2 {
        return Err(CliError::usage("--samples must be >= 2"));
    }
    if let Some(prev) = file.get_opt::<EncoderSettings>()? {
        if args.bias.is_none() && !keys.contains_key("bias") {
            cfg.bias = prev.bias;
        }
    }
    let encoder = cfg.encoder();
    encoder.validate()?;
    data_config(args, &mut cfg, &file)?;
    let train = load_train(&cfg)?;
    let seed = args.seed(&cfg);

    let fx = FeatureExtractor::new(&dict, &whitener, encoder, cfg.bias)?;
    let cov = bench::pooled_covariance(&fx, &train, cfg.covariance_samples, stage_seed(seed, 3))?;
    for tag in [TAG_EXEMPLARS, TAG_NYSTROM, TAG_PCA, TAG_SVM] {
        file.remove(tag);
    }
    match method {
        Method::Pca => {
            let pca = pca_from_covariance(&cov.c, &cov.means, k)?;
            file.put(&pca);
            println!("PCA to {k} components");
        }
        _ => {
            let (selection, report) =
                select_k_exemplars_report(&cov, k, &cfg.ap_params(), cfg.search_budget)?;
            let transform = nystrom::fit_transform_matrix(&cov.c, &selection)?;
            file.put(&selection);
            file.put(&transform);
            println!(
                "selected {} exemplars of {} codes (preference {:.6}, {} probes{})",
                selection.len(),
                dict.size(),
                selection.preference_used,
                report.probes.len(),
                if report.adjusted { ", adjusted" } else { "" }
            );
        }
    }
    file.put(&EncoderSettings {
        encoder,
        bias: cfg.bias,
    });
    let out = args.out.clone().unwrap_or(path);
    file.save(&out)?;
    Ok(())
}

fn evaluate(args: &StageArgs) -> CliResult<()> {
    let (mut cfg, _) = args.resolve()?;
    let (path, mut file) = load_model(args)?;
    let (pipeline, method, m) = bench::pipeline_from_model(&file, cfg.rescale)?;
    data_config(args, &mut cfg, &file)?;
    let seed = args.seed(&cfg);
    let (train, test) = bench::load_splits(&cfg)?;
    cfg.method = method;
    cfg.m_start = m;
    cfg.k_final = pipeline.output_codes();
    cfg.n_runs = 1;
    cfg.seeds = vec![seed];
    let ev = evaluate_pipeline(&cfg, &pipeline, &train, &test, seed)?;
    println!("accuracy {:.4}", ev.accuracy);
    let result = ExperimentResult::from_runs(
        cfg,
        vec![RunOutcome {
            seed,
            accuracy: ev.accuracy,
            lambda: ev.lambda,
            timings: StageTimings {
                encoding: ev.encoding,
                classifier: ev.classifier,
                ..Default::default()
            },
            pipeline,
            model: ev.model.clone(),
            diagnostics: None,
        }],
    );
    let csv = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    fs::write(&csv, bench::results_csv(&[result]))
        .map_err(|e| CliError::from(PdlError::io(&csv, e)))?;
    file.put::<LinearModel>(&ev.model);
    file.save(&path)?;
    Ok(())
}

fn visualize(args: &StageArgs) -> CliResult<()> {
    let (_, file) = load_model(args)?;
    let dict: Dictionary = file.get()?;
    let whitener = file.get_opt::<ZcaWhitener>()?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("filters"));
    fs::create_dir_all(&out).map_err(|e| CliError::from(PdlError::io(&out, e)))?;
    let mut written = Vec::new();
    let mut save = |name: &str, img: viz::RgbImage| -> CliResult<()> {
        let p = out.join(name);
        img.save_ppm(&p)?;
        written.push(p);
        Ok(())
    };
    save(
        "dictionary.ppm",
        viz::filter_grid(&dict, whitener.as_ref())?,
    )?;
    if let Some(sel) = file.get_opt::<ExemplarSet>()? {
        let selected = dict.subset(&sel.indices)?;
        save(
            "selected.ppm",
            viz::filter_grid(&selected, whitener.as_ref())?,
        )?;
        save(
            "clusters.ppm",
            viz::cluster_strips(&dict, whitener.as_ref(), &sel)?,
        )?;
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn experiment(args: &StageArgs) -> CliResult<()> {
    let (cfg, _) = args.resolve()?;
    let methods = if args.method.is_empty() {
        vec![cfg.method]
    } else {
        args.method.clone()
    };
    let ms = if args.m.is_empty() {
        vec![cfg.m_start]
    } else {
        args.m.clone()
    };
    let mut configs: Vec<ExperimentConfig> = Vec::new();
    for &method in &methods {
        let sizes: &[usize] = if method.uses_starting_dictionary() {
            &ms
        } else {
            &ms[..1]
        };
        for &m in sizes {
            let c = ExperimentConfig {
                method,
                m_start: if method.uses_starting_dictionary() {
                    m
                } else {
                    cfg.k_final
                },
                ..cfg.clone()
            };
            c.validate()?;
            configs.push(c);
        }
    }
    let (train, test) = bench::load_splits(&cfg)?;
    log::info!("{} train / {} test images", train.len(), test.len());
    let mut results = Vec::new();
    for c in &configs {
        let r = bench::run_experiment_on(c, &train, &test)?;
        println!(
            "{} | {} | {:.2} ± {:.2}",
            c.task_label(),
            c.method_label(),
            100.0 * r.mean,
            100.0 * r.std
        );
        results.push(r);
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    for p in emit_report(&results, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
