//! End-to-end experiments: baseline K-means, PDL, PCA and random
//! dictionaries, averaged over seeded runs, plus report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::classifier::{self, LinearModel, CV_FOLDS, DEFAULT_EPOCHS, DEFAULT_LAMBDA_GRID};
use crate::datasets::{self, LabeledDataset, RawImage, Split};
use crate::dictionary::{self, Dictionary, Provenance, DEFAULT_KMEANS_ITERS};
use crate::encoder::{
    encode_patches, EncoderConfig, FeatureExtractor, PoolGrid, PoolOp, DEFAULT_ALPHA,
    DEFAULT_REGION_SAMPLES,
};
use crate::error::{PdlError, Result};
use crate::linalg::RowMatrix;
use crate::model::{EncoderSettings, ModelFile};
use crate::nystrom::{
    self, correlation_stats, pca_features, pca_from_covariance, rescale_features,
    spectrum_comparison, CorrelationStats, NystromTransform, PcaTransform, SpectrumComparison,
};
use crate::patches::{
    self, PatchMatrix, ZcaWhitener, DEFAULT_BIAS, DEFAULT_EPSILON, DEFAULT_PATCH_SAMPLES,
};
use crate::selection::{
    select_k_exemplars, ApParams, CovarianceAccumulator, CovarianceMatrix, ExemplarSet,
    DEFAULT_DAMPING, DEFAULT_MAX_ITERS, DEFAULT_SEARCH_BUDGET, DEFAULT_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Stl10,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cifar10" | "cifar" => Ok(DatasetKind::Cifar10),
            "stl10" | "stl" => Ok(DatasetKind::Stl10),
            _ => Err(format!("unknown dataset `{s}` (expected cifar10 or stl10)")),
        }
    }
}

impl DatasetKind {
    pub fn label(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "CIFAR-10",
            DatasetKind::Stl10 => "STL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Pdl,
    Pca,
    Random,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kmeans" => Ok(Method::Kmeans),
            "pdl" => Ok(Method::Pdl),
            "pca" => Ok(Method::Pca),
            "random" => Ok(Method::Random),
            _ => Err(format!(
                "unknown method `{s}` (expected kmeans, pdl, pca or random)"
            )),
        }
    }
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Pdl => "pdl",
            Method::Pca => "pca",
            Method::Random => "random",
        }
    }

    /// Whether the method learns a starting dictionary larger than `K`.
    pub fn uses_starting_dictionary(self) -> bool {
        matches!(self, Method::Pdl | Method::Pca)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub patch_side: usize,
    pub stride: usize,
    pub alpha: f64,
    pub pool_grid: PoolGrid,
    pub pool_op: PoolOp,
    pub m_start: usize,
    pub k_final: usize,
    pub method: Method,
    pub n_runs: usize,
    /// One seed per run; empty means `0..n_runs`.
    pub seeds: Vec<u64>,
    pub patch_samples: usize,
    pub kmeans_iters: usize,
    pub covariance_samples: usize,
    pub rescale: bool,
    pub epsilon: f64,
    pub bias: f64,
    pub lambda_grid: Vec<f64>,
    pub svm_epochs: usize,
    pub cv_folds: usize,
    /// Images kept from each split (deterministic subsample); `None` keeps all.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// STL images are resized to this square side.
    pub resize: usize,
    pub damping: f64,
    pub ap_max_iters: usize,
    pub ap_window: usize,
    pub search_budget: usize,
    /// Collect spectrum and correlation diagnostics on the first PDL run.
    pub diagnostics: bool,
    pub diagnostic_pairs: usize,
    pub diagnostic_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            patch_side: 6,
            stride: 1,
            alpha: DEFAULT_ALPHA,
            pool_grid: PoolGrid::new(2, 2),
            pool_op: PoolOp::Avg,
            m_start: 1600,
            k_final: 200,
            method: Method::Pdl,
            n_runs: 5,
            seeds: Vec::new(),
            patch_samples: DEFAULT_PATCH_SAMPLES,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            covariance_samples: DEFAULT_REGION_SAMPLES,
            rescale: true,
            epsilon: DEFAULT_EPSILON,
            bias: DEFAULT_BIAS,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            svm_epochs: DEFAULT_EPOCHS,
            cv_folds: CV_FOLDS,
            train_limit: None,
            test_limit: None,
            resize: 32,
            damping: DEFAULT_DAMPING,
            ap_max_iters: DEFAULT_MAX_ITERS,
            ap_window: DEFAULT_WINDOW,
            search_budget: DEFAULT_SEARCH_BUDGET,
            diagnostics: false,
            diagnostic_pairs: 1000,
            diagnostic_samples: 10_000,
        }
    }
}

impl ExperimentConfig {
    /// CI-scale profile: 10k/2k CIFAR subsample, `K = 100`, `M = 400`, 3 runs.
    pub fn fast(method: Method) -> Self {
        ExperimentConfig {
            method,
            m_start: 400,
            k_final: 100,
            n_runs: 3,
            train_limit: Some(10_000),
            test_limit: Some(2_000),
            patch_samples: 100_000,
            covariance_samples: 20_000,
            ..Default::default()
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            alpha: self.alpha,
            pool_grid: self.pool_grid,
            pool_op: self.pool_op,
            stride: self.stride,
        }
    }

    pub fn ap_params(&self) -> ApParams {
        ApParams {
            damping: self.damping,
            max_iters: self.ap_max_iters,
            convergence_window: self.ap_window,
        }
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.n_runs as u64).collect()
        } else {
            self.seeds.iter().take(self.n_runs).copied().collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(PdlError::Config(m));
        if self.n_runs == 0 {
            return err("n_runs must be >= 1".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() < self.n_runs {
            return err(format!(
                "{} seeds for {} runs",
                self.seeds.len(),
                self.n_runs
            ));
        }
        if self.k_final == 0 {
            return err("k_final must be >= 1".into());
        }
        if self.method.uses_starting_dictionary() && self.k_final > self.m_start {
            return err(format!(
                "k_final {} exceeds m_start {}",
                self.k_final, self.m_start
            ));
        }
        if self.patch_side == 0 || self.stride == 0 {
            return err("patch side and stride must be >= 1".into());
        }
        let dict_size = self.dictionary_size();
        if self.patch_samples < dict_size {
            return err(format!(
                "{} patch samples cannot train {dict_size} codes",
                self.patch_samples
            ));
        }
        if self.method.uses_starting_dictionary() && self.covariance_samples < 2 {
            return err("covariance_samples must be >= 2".into());
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return err("lambda grid must be non-empty and non-negative".into());
        }
        if !(self.epsilon > 0.0) || !(self.bias > 0.0) {
            return err("epsilon and bias must be > 0".into());
        }
        if !(0.5..1.0).contains(&self.damping) {
            return err("damping must lie in [0.5, 1)".into());
        }
        self.encoder()
            .validate()
            .map_err(|e| PdlError::Config(e.to_string()))
    }

    /// Size of the patch-level dictionary this method learns.
    pub fn dictionary_size(&self) -> usize {
        if self.method.uses_starting_dictionary() {
            self.m_start
        } else {
            self.k_final
        }
    }

    pub fn task_label(&self) -> String {
        format!("{} {} codes", self.dataset.label(), self.k_final)
    }

    pub fn method_label(&self) -> String {
        let ratio = self.m_start as f64 / self.k_final as f64;
        let ratio = if ratio.fract() == 0.0 {
            format!("{}", ratio as usize)
        } else {
            format!("{ratio:.2}")
        };
        match self.method {
            Method::Kmeans => "K-means".into(),
            Method::Random => "Random".into(),
            Method::Pdl => format!("{ratio}x PDL"),
            Method::Pca => format!("{ratio}x PCA"),
        }
    }
}

pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stage)
}

/// Load both splits for `cfg`, applying the STL resize and any subsampling.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| PdlError::Config("data_dir is required".into()))?;
    let (train, test) = load_dataset_dir(cfg.dataset, dir, cfg.resize)?;
    let train = limit(train, cfg.train_limit, TRAIN_SUBSAMPLE_SEED);
    let test = limit(test, cfg.test_limit, TEST_SUBSAMPLE_SEED);
    Ok((train, test))
}

fn limit(ds: LabeledDataset, n: Option<usize>, seed: u64) -> LabeledDataset {
    match n {
        Some(n) => ds.subsample(n, seed),
        None => ds,
    }
}

const TRAIN_SUBSAMPLE_SEED: u64 = 0x7472_6169_6e;
const TEST_SUBSAMPLE_SEED: u64 = 0x7465_7374;

/// Training split only, with the same subsampling as [`load_splits`].
pub fn load_train(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| PdlError::Config("data_dir is required".into()))?;
    let train = load_split(cfg.dataset, dir, Split::Train, cfg.resize)?;
    Ok(limit(train, cfg.train_limit, TRAIN_SUBSAMPLE_SEED))
}

pub fn load_dataset_dir(
    kind: DatasetKind,
    dir: &Path,
    resize: usize,
) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((
        load_split(kind, dir, Split::Train, resize)?,
        load_split(kind, dir, Split::Test, resize)?,
    ))
}

/// One split from a dataset directory; STL images are resized to
/// `resize × resize`.
pub fn load_split(
    kind: DatasetKind,
    dir: &Path,
    split: Split,
    resize: usize,
) -> Result<LabeledDataset> {
    match kind {
        DatasetKind::Cifar10 => {
            let files = datasets::cifar10_files(dir);
            let paths = match split {
                Split::Train => &files.train,
                Split::Test => &files.test,
            };
            datasets::load_cifar10(paths, split)
        }
        DatasetKind::Stl10 => {
            let files = datasets::stl10_files(dir);
            let f = match split {
                Split::Train => &files.train,
                Split::Test => &files.test,
            };
            let ds = datasets::load_stl10(&f[0], &f[1], split)?;
            let resized: Result<Vec<_>> = ds
                .images
                .iter()
                .map(|im| datasets::resize_bilinear(im, resize, resize))
                .collect();
            LabeledDataset::new(resized?, ds.labels, ds.num_classes, split)
        }
    }
}

/// How selected pooled features are post-processed before classification.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    Identity,
    Rescale(NystromTransform),
    Pca(PcaTransform),
}

/// Everything fitted in one run that is needed to featurize images.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub whitener: ZcaWhitener,
    pub dictionary: Dictionary,
    pub encoder: EncoderConfig,
    pub bias: f64,
    pub map: FeatureMap,
}

impl Pipeline {
    /// Number of features per pooling cell after the feature map.
    pub fn output_codes(&self) -> usize {
        match &self.map {
            FeatureMap::Pca(t) => t.k(),
            _ => self.dictionary.size(),
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_codes() * self.encoder.pool_grid.cells()
    }

    pub fn featurize_image(&self, img: &RawImage) -> Result<Vec<f64>> {
        let fx = FeatureExtractor::new(&self.dictionary, &self.whitener, self.encoder, self.bias)?;
        let pooled = fx.encode_and_pool(img)?;
        let row = RowMatrix::from_vec(1, pooled.values.len(), pooled.values)?;
        let mapped = match &self.map {
            FeatureMap::Identity => row,
            FeatureMap::Rescale(t) => rescale_features(t, &row)?,
            FeatureMap::Pca(t) => pca_features(t, &row)?,
        };
        Ok(mapped.into_vec())
    }

    pub fn featurize(&self, dataset: &LabeledDataset) -> Result<RowMatrix> {
        let fx = FeatureExtractor::new(&self.dictionary, &self.whitener, self.encoder, self.bias)?;
        let pooled = fx.encode_dataset(dataset)?;
        match &self.map {
            FeatureMap::Identity => Ok(pooled),
            FeatureMap::Rescale(t) => rescale_features(t, &pooled),
            FeatureMap::Pca(t) => pca_features(t, &pooled),
        }
    }
}

/// The feature pipeline stored in a model file, the method it amounts to and
/// the starting dictionary size. Without `rescale` selected codes are used raw.
pub fn pipeline_from_model(file: &ModelFile, rescale: bool) -> Result<(Pipeline, Method, usize)> {
    let dict: Dictionary = file.get()?;
    let whitener: ZcaWhitener = file.get()?;
    let settings: EncoderSettings = file.get()?;
    let m = dict.size();
    let (dictionary, map, method) = if let Some(sel) = file.get_opt::<ExemplarSet>()? {
        let map = match (rescale, file.get_opt::<NystromTransform>()?) {
            (true, Some(t)) => FeatureMap::Rescale(t),
            (true, None) => return Err(PdlError::MissingSection("NYST".into())),
            (false, _) => FeatureMap::Identity,
        };
        (dict.subset(&sel.indices)?, map, Method::Pdl)
    } else if let Some(pca) = file.get_opt::<PcaTransform>()? {
        (dict, FeatureMap::Pca(pca), Method::Pca)
    } else {
        let method = if dict.provenance == Provenance::Random {
            Method::Random
        } else {
            Method::Kmeans
        };
        (dict, FeatureMap::Identity, method)
    };
    Ok((
        Pipeline {
            whitener,
            dictionary,
            encoder: settings.encoder,
            bias: settings.bias,
            map,
        },
        method,
        m,
    ))
}

/// Whitened training patches plus the whitener fitted on them.
pub fn prepare_patches(
    train: &LabeledDataset,
    side: usize,
    count: usize,
    epsilon: f64,
    bias: f64,
    seed: u64,
) -> Result<(PatchMatrix, ZcaWhitener)> {
    let mut raw = patches::sample_random(train, side, count, seed)?;
    patches::contrast_normalize_in_place(&mut raw, bias)?;
    let whitener = patches::fit_zca(&raw, epsilon)?;
    whitener.apply_rows(raw.data.as_mut_slice())?;
    Ok((raw, whitener))
}

/// Covariance of `count` random pooling-region responses.
pub fn pooled_covariance(
    fx: &FeatureExtractor,
    train: &LabeledDataset,
    count: usize,
    seed: u64,
) -> Result<CovarianceMatrix> {
    let mut acc = CovarianceAccumulator::new(fx.dict_size());
    fx.for_each_region_batch(train, count, seed, |batch| acc.push_batch(batch))?;
    acc.finish()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub patches: Duration,
    pub dictionary: Duration,
    pub selection: Duration,
    pub encoding: Duration,
    pub classifier: Duration,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub spectrum: SpectrumComparison,
    pub correlations: CorrelationStats,
    pub selection: ExemplarSet,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub accuracy: f64,
    pub lambda: f64,
    pub timings: StageTimings,
    pub pipeline: Pipeline,
    pub model: LinearModel,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutcome>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ExperimentResult {
    pub fn from_runs(config: ExperimentConfig, runs: Vec<RunOutcome>) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        ExperimentResult {
            config,
            runs,
            accuracies,
            mean,
            std,
        }
    }

    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        self.runs.iter().find_map(|r| r.diagnostics.as_ref())
    }
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Fit the feature pipeline for one run on `train`.
pub fn fit_pipeline(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    seed: u64,
    timings: &mut StageTimings,
    want_diagnostics: bool,
) -> Result<(Pipeline, Option<Diagnostics>)> {
    let t = Instant::now();
    let (white, whitener) = prepare_patches(
        train,
        cfg.patch_side,
        cfg.patch_samples,
        cfg.epsilon,
        cfg.bias,
        stage_seed(seed, 1),
    )?;
    timings.patches = t.elapsed();

    let t = Instant::now();
    let dict_seed = stage_seed(seed, 2);
    let size = cfg.dictionary_size();
    let dict = match cfg.method {
        Method::Random => dictionary::random_dictionary(&white, size, dict_seed)?,
        _ => dictionary::kmeans_spherical(&white, size, cfg.kmeans_iters, dict_seed)?,
    };
    timings.dictionary = t.elapsed();

    let encoder = cfg.encoder();
    let mut diagnostics = None;
    let t = Instant::now();
    let pipeline = match cfg.method {
        Method::Kmeans | Method::Random => Pipeline {
            whitener,
            dictionary: dict,
            encoder,
            bias: cfg.bias,
            map: FeatureMap::Identity,
        },
        Method::Pdl | Method::Pca => {
            let fx = FeatureExtractor::new(&dict, &whitener, encoder, cfg.bias)?;
            let cov = pooled_covariance(&fx, train, cfg.covariance_samples, stage_seed(seed, 3))?;
            if cfg.method == Method::Pca {
                let pca = pca_from_covariance(&cov.c, &cov.means, cfg.k_final)?;
                Pipeline {
                    whitener,
                    dictionary: dict,
                    encoder,
                    bias: cfg.bias,
                    map: FeatureMap::Pca(pca),
                }
            } else {
                let selection =
                    select_k_exemplars(&cov, cfg.k_final, &cfg.ap_params(), cfg.search_budget)?;
                let map = if cfg.rescale {
                    FeatureMap::Rescale(nystrom::fit_transform_matrix(&cov.c, &selection)?)
                } else {
                    FeatureMap::Identity
                };
                if want_diagnostics {
                    diagnostics = Some(collect_diagnostics(
                        cfg, train, &fx, &dict, &white, &cov, &selection, seed,
                    )?);
                }
                Pipeline {
                    whitener,
                    dictionary: dict.subset(&selection.indices)?,
                    encoder,
                    bias: cfg.bias,
                    map,
                }
            }
        }
    };
    timings.selection = t.elapsed();
    Ok((pipeline, diagnostics))
}

#[allow(clippy::too_many_arguments)]
fn collect_diagnostics(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    fx: &FeatureExtractor,
    dict: &Dictionary,
    white: &PatchMatrix,
    cov: &CovarianceMatrix,
    selection: &ExemplarSet,
    seed: u64,
) -> Result<Diagnostics> {
    let spectrum = spectrum_comparison(&cov.c, &selection.indices)?;
    let mut pooled = RowMatrix::zeros(0, 0);
    fx.for_each_region_batch(
        train,
        cfg.diagnostic_samples.max(2),
        stage_seed(seed, 5),
        |b| {
            for r in b.iter_rows() {
                pooled.push_row(r)?;
            }
            Ok(())
        },
    )?;
    let n_patch = cfg.diagnostic_samples.min(white.len()).max(2);
    let rows: Vec<usize> = (0..n_patch).collect();
    let patch_subset = PatchMatrix::new(white.data.select_rows(&rows), white.side, white.channels)?;
    let acts = encode_patches(dict, &patch_subset, cfg.alpha)?;
    let correlations = correlation_stats(
        &pooled,
        &acts,
        selection,
        cfg.diagnostic_pairs.max(1),
        stage_seed(seed, 6),
    )?;
    Ok(Diagnostics {
        spectrum,
        correlations,
        selection: selection.clone(),
    })
}

/// Classifier stage of a run: featurize both splits, pick λ by CV, train and
/// score on the test split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub lambda: f64,
    pub model: LinearModel,
    pub encoding: Duration,
    pub classifier: Duration,
}

pub fn evaluate_pipeline(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    train: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
) -> Result<Evaluation> {
    let t = Instant::now();
    let train_x = pipeline.featurize(train)?;
    let test_x = pipeline.featurize(test)?;
    let encoding = t.elapsed();

    let t = Instant::now();
    let svm_seed = stage_seed(seed, 4);
    let lambda = classifier::select_lambda_cv(
        &train_x,
        &train.labels,
        &cfg.lambda_grid,
        cfg.cv_folds,
        cfg.svm_epochs,
        svm_seed,
    )?;
    let model =
        classifier::train_ovr_svm(&train_x, &train.labels, lambda, cfg.svm_epochs, svm_seed)?;
    let accuracy = classifier::evaluate(&model, &test_x, &test.labels)?;
    Ok(Evaluation {
        accuracy,
        lambda,
        model,
        encoding,
        classifier: t.elapsed(),
    })
}

pub fn run_single(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    seed: u64,
    want_diagnostics: bool,
) -> Result<RunOutcome> {
    let mut timings = StageTimings::default();
    let (pipeline, diagnostics) = fit_pipeline(cfg, train, seed, &mut timings, want_diagnostics)?;
    let ev = evaluate_pipeline(cfg, &pipeline, train, test, seed)?;
    timings.encoding = ev.encoding;
    timings.classifier = ev.classifier;
    log::info!(
        "{} seed {seed}: accuracy {:.4} (lambda {:e})",
        cfg.method_label(),
        ev.accuracy,
        ev.lambda
    );
    Ok(RunOutcome {
        seed,
        accuracy: ev.accuracy,
        lambda: ev.lambda,
        timings,
        pipeline,
        model: ev.model,
        diagnostics,
    })
}

/// Run every seeded repetition of `cfg` on in-memory splits.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for (i, seed) in cfg.run_seeds().into_iter().enumerate() {
        let diag = cfg.diagnostics && i == 0 && cfg.method == Method::Pdl;
        runs.push(run_single(cfg, train, test, seed, diag)?);
    }
    Ok(ExperimentResult::from_runs(cfg.clone(), runs))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (train, test) = load_splits(cfg)?;
    run_experiment_on(cfg, &train, &test)
}

fn baseline_for<'a>(
    results: &'a [ExperimentResult],
    r: &ExperimentResult,
) -> Option<&'a ExperimentResult> {
    results.iter().find(|b| {
        b.config.method == Method::Kmeans
            && b.config.dataset == r.config.dataset
            && b.config.k_final == r.config.k_final
    })
}

/// CSV rows of `task,method,m_start,k_final,runs,mean,std,delta,accuracies`.
/// Accuracies are percentages; `delta` is empty for the baseline itself or
/// when no matching K-means result is present.
pub fn results_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("task,method,m_start,k_final,runs,mean,std,delta,accuracies\n");
    for r in results {
        let delta = baseline_for(results, r)
            .filter(|b| b.config.method != r.config.method)
            .map(|b| format!("{:.4}", 100.0 * (r.mean - b.mean)))
            .unwrap_or_default();
        let accs: Vec<String> = r
            .accuracies
            .iter()
            .map(|a| format!("{:.4}", 100.0 * a))
            .collect();
        let m_start = if r.config.method.uses_starting_dictionary() {
            r.config.m_start
        } else {
            r.config.k_final
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{},{}",
            r.config.task_label(),
            r.config.method_label(),
            m_start,
            r.config.k_final,
            r.accuracies.len(),
            100.0 * r.mean,
            100.0 * r.std,
            delta,
            accs.join(";")
        );
    }
    out
}

/// Plain-text table in the layout `Task | Learning Method | Accuracy`, gains
/// over the matching K-means baseline in parentheses.
pub fn results_table(results: &[ExperimentResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} | {:<16} | Accuracy", "Task", "Learning Method");
    let _ = writeln!(out, "{}", "-".repeat(60));
    let mut last_task = String::new();
    for r in results {
        let task = r.config.task_label();
        let shown = if task == last_task {
            String::new()
        } else {
            task.clone()
        };
        last_task = task;
        let gain = baseline_for(results, r)
            .filter(|b| b.config.method != r.config.method)
            .map(|b| format!(" ({:+.2})", 100.0 * (r.mean - b.mean)))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{:<24} | {:<16} | {:.2}{}",
            shown,
            r.config.method_label(),
            100.0 * r.mean,
            gain
        );
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| PdlError::io(path, e))
}

fn file_stem(r: &ExperimentResult) -> String {
    format!(
        "{}_{}_m{}_k{}",
        match r.config.dataset {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Stl10 => "stl10",
        },
        r.config.method.as_str(),
        r.config.m_start,
        r.config.k_final
    )
}

/// Write `results.csv`, `table.txt`, `manifest.txt`, `timings.txt` and, for
/// results carrying diagnostics, spectrum and correlation series into `dir`.
/// Returns the written paths.
pub fn emit_report(results: &[ExperimentResult], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(PdlError::arg("no results to report"));
    }
    fs::create_dir_all(dir).map_err(|e| PdlError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, contents: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &contents)?;
        written.push(p);
        Ok(())
    };
    emit("results.csv".into(), results_csv(results))?;
    emit("table.txt".into(), results_table(results))?;

    let mut manifest = String::new();
    let mut timings = String::from(
        "task,method,seed,patches_s,dictionary_s,selection_s,encoding_s,classifier_s\n",
    );
    for r in results {
        let json = serde_json::to_string_pretty(&r.config).expect("config serializes");
        let seeds: Vec<String> = r.runs.iter().map(|x| x.seed.to_string()).collect();
        let lambdas: Vec<String> = r.runs.iter().map(|x| format!("{:e}", x.lambda)).collect();
        let _ = writeln!(
            manifest,
            "# {} / {}\nseeds: {}\nlambdas: {}\n{json}\n",
            r.config.task_label(),
            r.config.method_label(),
            seeds.join(","),
            lambdas.join(",")
        );
        for run in &r.runs {
            let t = &run.timings;
            let _ = writeln!(
                timings,
                "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
                r.config.task_label(),
                r.config.method_label(),
                run.seed,
                t.patches.as_secs_f64(),
                t.dictionary.as_secs_f64(),
                t.selection.as_secs_f64(),
                t.encoding.as_secs_f64(),
                t.classifier.as_secs_f64()
            );
        }
    }
    emit("manifest.txt".into(), manifest)?;
    emit("timings.txt".into(), timings)?;

    for r in results {
        if let Some(d) = r.diagnostics() {
            let mut s = String::from("index,original,approximation\n");
            for (i, o) in d.spectrum.original.iter().enumerate() {
                let a = d.spectrum.approximation.get(i).copied().unwrap_or(0.0);
                let _ = writeln!(s, "{i},{o:.10e},{a:.10e}");
            }
            emit(format!("spectrum_{}.csv", file_stem(r)), s)?;
            let mut c = String::from("kind,correlation\n");
            for (kind, values) in [
                ("within_patch", &d.correlations.within_patch),
                ("within_pooled", &d.correlations.within_pooled),
                ("between_exemplars", &d.correlations.between_exemplars),
            ] {
                for v in values {
                    let _ = writeln!(c, "{kind},{v:.6}");
                }
            }
            emit(format!("correlations_{}.csv", file_stem(r)), c)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(method: Method, m: usize, accs: &[f64]) -> ExperimentResult {
        let cfg = ExperimentConfig {
            method,
            m_start: m,
            k_final: 200,
            ..Default::default()
        };
        let (mean, std) = mean_std(accs);
        ExperimentResult {
            config: cfg,
            runs: Vec::new(),
            accuracies: accs.to_vec(),
            mean,
            std,
        }
    }

    #[test]
    fn mean_is_arithmetic() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.6]);
        assert!((m - 0.6).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.3]).1, 0.0);
    }

    #[test]
    fn single_result_is_one_row() {
        let csv = results_csv(&[result(Method::Kmeans, 200, &[0.69])]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn delta_against_baseline() {
        let rs = [
            result(Method::Kmeans, 200, &[0.6902]),
            result(Method::Pdl, 1600, &[0.7149]),
        ];
        let csv = results_csv(&rs);
        let row = csv.lines().nth(2).unwrap();
        assert!(row.starts_with("CIFAR-10 200 codes,8x PDL,1600,200,1,71.4900,0.0000,2.4700,"));
        let table = results_table(&rs);
        assert!(table.contains("8x PDL"));
        assert!(table.contains("71.49 (+2.47)"));
        assert!(table.contains("K-means"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.k_final = 2000;
        assert!(matches!(cfg.validate(), Err(PdlError::Config(_))));
        cfg = ExperimentConfig {
            n_runs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig {
            seeds: vec![1],
            n_runs: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::fast(Method::Pdl);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"pool_grid\":\"2x2\""));
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"k_final": 50, "method": "kmeans"}"#).unwrap();
        assert_eq!(partial.k_final, 50);
        assert_eq!(partial.patch_side, 6);
    }

    #[test]
    fn report_needs_results() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], dir.path()).is_err());
        let files = emit_report(&[result(Method::Kmeans, 200, &[0.5])], dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("results.csv")));
    }
}
