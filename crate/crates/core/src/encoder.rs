//! Threshold encoding and spatial pooling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, RawImage};
use crate::dictionary::Dictionary;
use crate::error::{check_dim, PdlError, Result};
use crate::linalg::{dot, RowMatrix};
use crate::patches::{
    contrast_normalize_row, dense_patches_into, positions, PatchMatrix, ZcaWhitener,
};

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_REGION_SAMPLES: usize = 100_000;

const REGION_BATCH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolOp {
    #[serde(alias = "average")]
    Avg,
    Max,
}

impl PoolOp {
    pub fn code(self) -> u8 {
        match self {
            PoolOp::Avg => 0,
            PoolOp::Max => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PoolOp::Avg),
            1 => Some(PoolOp::Max),
            _ => None,
        }
    }
}

impl FromStr for PoolOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "avg" | "average" => Ok(PoolOp::Avg),
            "max" => Ok(PoolOp::Max),
            _ => Err(format!(
                "unknown pooling operator `{s}` (expected avg or max)"
            )),
        }
    }
}

impl fmt::Display for PoolOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolOp::Avg => "avg",
            PoolOp::Max => "max",
        })
    }
}

/// Pooling grid as `rows × cols` cells, written `RxC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PoolGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PoolGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        PoolGrid { rows, cols }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl FromStr for PoolGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("pooling grid `{s}` must look like 2x2"))?;
        let rows = r
            .trim()
            .parse()
            .map_err(|_| format!("bad grid rows in `{s}`"))?;
        let cols = c
            .trim()
            .parse()
            .map_err(|_| format!("bad grid cols in `{s}`"))?;
        Ok(PoolGrid { rows, cols })
    }
}

impl TryFrom<String> for PoolGrid {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<PoolGrid> for String {
    fn from(g: PoolGrid) -> String {
        g.to_string()
    }
}

impl fmt::Display for PoolGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub alpha: f64,
    pub pool_grid: PoolGrid,
    pub pool_op: PoolOp,
    pub stride: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            alpha: DEFAULT_ALPHA,
            pool_grid: PoolGrid::new(2, 2),
            pool_op: PoolOp::Avg,
            stride: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(PdlError::arg("alpha must be >= 0"));
        }
        if self.pool_grid.rows == 0 || self.pool_grid.cols == 0 {
            return Err(PdlError::arg("pooling grid dimensions must be >= 1"));
        }
        if self.stride == 0 {
            return Err(PdlError::arg("stride must be >= 1"));
        }
        Ok(())
    }
}

/// Pooled activations, cell-major: `values[cell * dict_size + code]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub values: Vec<f64>,
    pub dict_size: usize,
}

impl PooledFeature {
    pub fn cells(&self) -> usize {
        self.values.len() / self.dict_size.max(1)
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.values[c * self.dict_size..(c + 1) * self.dict_size]
    }
}

pub fn encode_patch(dict: &Dictionary, patch: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dim(dict.dim(), patch.len())?;
    Ok(dict
        .codes
        .iter_rows()
        .map(|code| (dot(code, patch) - alpha).max(0.0))
        .collect())
}

/// Threshold activations of already whitened patches, `N × M`.
pub fn encode_patches(dict: &Dictionary, whitened: &PatchMatrix, alpha: f64) -> Result<RowMatrix> {
    check_dim(dict.dim(), whitened.dim())?;
    let d = dict.dim();
    let codes = dict.to_dmatrix();
    let m = dict.size();
    let mut out = Vec::with_capacity(whitened.len() * m);
    for chunk in whitened.data.as_slice().chunks(REGION_BATCH * d) {
        let n = chunk.len() / d;
        let acts = &codes * DMatrixView::from_slice(chunk, d, n);
        out.extend(acts.iter().map(|v| (v - alpha).max(0.0)));
    }
    RowMatrix::from_vec(whitened.len(), m, out)
}

/// A dictionary folded together with the whitener so that one product per
/// image gives every code's response: `resp = (D T) p - D T mean`.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    filters: DMatrix<f64>,
    offsets: Vec<f64>,
    side: usize,
    channels: usize,
    bias: f64,
    pub cfg: EncoderConfig,
}

impl FeatureExtractor {
    pub fn new(
        dict: &Dictionary,
        whitener: &ZcaWhitener,
        cfg: EncoderConfig,
        bias: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        check_dim(whitener.dim(), dict.dim())?;
        if !(bias > 0.0) {
            return Err(PdlError::arg("contrast normalization bias must be > 0"));
        }
        let filters = dict.to_dmatrix() * &whitener.transform;
        let mean = nalgebra::DVector::from_column_slice(&whitener.mean);
        let offsets = (&filters * mean).iter().map(|v| v + cfg.alpha).collect();
        Ok(FeatureExtractor {
            filters,
            offsets,
            side: dict.patch_side,
            channels: dict.channels,
            bias,
            cfg,
        })
    }

    pub fn dict_size(&self) -> usize {
        self.filters.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.dict_size() * self.cfg.pool_grid.cells()
    }

    /// Activations of every dense patch, `M × n` with patches as columns, plus
    /// the number of patch positions per row and column.
    fn activations(&self, img: &RawImage) -> Result<(DMatrix<f64>, usize, usize)> {
        if img.channels != self.channels {
            return Err(PdlError::DimensionMismatch {
                expected: self.channels,
                actual: img.channels,
            });
        }
        if img.width < self.side || img.height < self.side {
            return Err(PdlError::arg(format!(
                "image {}x{} smaller than patch side {}",
                img.height, img.width, self.side
            )));
        }
        let d = self.filters.ncols();
        let mut buf = Vec::new();
        dense_patches_into(img, self.side, self.cfg.stride, &mut buf);
        for row in buf.chunks_exact_mut(d) {
            contrast_normalize_row(row, self.bias);
        }
        let n = buf.len() / d;
        let mut acts = &self.filters * DMatrixView::from_slice(&buf, d, n);
        for mut col in acts.column_iter_mut() {
            for (v, o) in col.iter_mut().zip(&self.offsets) {
                *v = (*v - o).max(0.0);
            }
        }
        let ny = positions(img.height, self.side, self.cfg.stride);
        let nx = positions(img.width, self.side, self.cfg.stride);
        Ok((acts, ny, nx))
    }

    pub fn encode_and_pool(&self, img: &RawImage) -> Result<PooledFeature> {
        self.pool_with(img, self.cfg.pool_grid)
    }

    fn pool_with(&self, img: &RawImage, grid: PoolGrid) -> Result<PooledFeature> {
        let cell_h = img.height / grid.rows;
        let cell_w = img.width / grid.cols;
        if cell_h == 0 || cell_w == 0 {
            return Err(PdlError::arg(format!(
                "{}x{} image cannot be split into a {grid} pooling grid",
                img.height, img.width
            )));
        }
        let (acts, ny, nx) = self.activations(img)?;
        let m = self.dict_size();
        let cells = grid.cells();
        let mut values = vec![0.0; m * cells];
        let mut counts = vec![0usize; cells];
        let half = self.side / 2;
        for py in 0..ny {
            let cy = ((py * self.cfg.stride + half) / cell_h).min(grid.rows - 1);
            for px in 0..nx {
                let cx = ((px * self.cfg.stride + half) / cell_w).min(grid.cols - 1);
                let cell = cy * grid.cols + cx;
                counts[cell] += 1;
                let col = acts.column(py * nx + px);
                let dst = &mut values[cell * m..(cell + 1) * m];
                match self.cfg.pool_op {
                    PoolOp::Avg => dst.iter_mut().zip(col.iter()).for_each(|(a, v)| *a += v),
                    PoolOp::Max => dst
                        .iter_mut()
                        .zip(col.iter())
                        .for_each(|(a, v)| *a = a.max(*v)),
                }
            }
        }
        if self.cfg.pool_op == PoolOp::Avg {
            for (cell, &count) in counts.iter().enumerate() {
                if count > 0 {
                    let inv = 1.0 / count as f64;
                    values[cell * m..(cell + 1) * m]
                        .iter_mut()
                        .for_each(|v| *v *= inv);
                }
            }
        }
        Ok(PooledFeature {
            values,
            dict_size: m,
        })
    }

    /// Pool a whole image (or region) into a single cell.
    pub fn pool_region(&self, img: &RawImage) -> Result<Vec<f64>> {
        Ok(self.pool_with(img, PoolGrid::new(1, 1))?.values)
    }

    /// Pooled features for every image, one row per image.
    pub fn encode_dataset(&self, dataset: &LabeledDataset) -> Result<RowMatrix> {
        let rows: Vec<Vec<f64>> = dataset
            .images
            .par_iter()
            .map(|img| self.encode_and_pool(img).map(|p| p.values))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(RowMatrix::zeros(0, self.output_len()));
        }
        RowMatrix::from_rows(&rows)
    }

    /// Random pooling-cell-sized regions, delivered to `sink` in batches of
    /// `M`-dimensional pooled rows. The draw sequence depends only on `seed`.
    pub fn for_each_region_batch(
        &self,
        dataset: &LabeledDataset,
        count: usize,
        seed: u64,
        mut sink: impl FnMut(&RowMatrix) -> Result<()>,
    ) -> Result<()> {
        if dataset.is_empty() {
            return Err(PdlError::arg("cannot sample regions from an empty dataset"));
        }
        let grid = self.cfg.pool_grid;
        let region = |img: &RawImage| (img.height / grid.rows, img.width / grid.cols);
        for img in &dataset.images {
            let (h, w) = region(img);
            if h < self.side || w < self.side {
                return Err(PdlError::arg(format!(
                    "pooling region {h}x{w} smaller than patch side {}",
                    self.side
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<(usize, usize, usize)> = (0..count)
            .map(|_| {
                let i = rng.gen_range(0..dataset.len());
                let img = &dataset.images[i];
                let (h, w) = region(img);
                (
                    i,
                    rng.gen_range(0..=img.height - h),
                    rng.gen_range(0..=img.width - w),
                )
            })
            .collect();
        for batch in draws.chunks(REGION_BATCH) {
            let rows: Vec<Vec<f64>> = batch
                .par_iter()
                .map(|&(i, r, c)| {
                    let img = &dataset.images[i];
                    let (h, w) = region(img);
                    self.pool_region(&img.crop(r, c, h, w)?)
                })
                .collect::<Result<_>>()?;
            sink(&RowMatrix::from_rows(&rows)?)?;
        }
        Ok(())
    }
}

pub fn encode_and_pool(
    dict: &Dictionary,
    img: &RawImage,
    cfg: &EncoderConfig,
    whitener: &ZcaWhitener,
    bias: f64,
) -> Result<PooledFeature> {
    FeatureExtractor::new(dict, whitener, *cfg, bias)?.encode_and_pool(img)
}

pub fn sample_pooled_regions(
    dict: &Dictionary,
    dataset: &LabeledDataset,
    cfg: &EncoderConfig,
    whitener: &ZcaWhitener,
    bias: f64,
    count: usize,
    seed: u64,
) -> Result<RowMatrix> {
    if count < 2 {
        return Err(PdlError::arg("need at least 2 pooled regions"));
    }
    let fx = FeatureExtractor::new(dict, whitener, *cfg, bias)?;
    let mut out = RowMatrix::zeros(0, 0);
    fx.for_each_region_batch(dataset, count, seed, |batch| {
        for r in batch.iter_rows() {
            out.push_row(r)?;
        }
        Ok(())
    })?;
    Ok(out)
}
