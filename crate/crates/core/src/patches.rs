//! Patch extraction, per-patch contrast normalization and ZCA whitening.
//!
//! A patch vector is laid out channel-planar, row-major within each channel,
//! i.e. `v[c * side * side + r * side + col]`.

use nalgebra::{DMatrix, DMatrixView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datasets::{LabeledDataset, RawImage};
use crate::error::{check_dim, PdlError, Result};
use crate::linalg::{symmetric_eigen_desc, RowMatrix};

pub const DEFAULT_BIAS: f64 = 10.0;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_PATCH_SAMPLES: usize = 400_000;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub data: RowMatrix,
    pub side: usize,
    pub channels: usize,
}

impl PatchMatrix {
    pub fn new(data: RowMatrix, side: usize, channels: usize) -> Result<Self> {
        check_dim(side * side * channels, data.cols())?;
        Ok(PatchMatrix {
            data,
            side,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }
}

/// Number of patch positions along one axis.
pub fn positions(extent: usize, side: usize, stride: usize) -> usize {
    if side > extent {
        0
    } else {
        (extent - side) / stride + 1
    }
}

/// Append the patch at top-left (`row`, `col`) to `out`.
#[inline]
pub(crate) fn push_patch(img: &RawImage, side: usize, row: usize, col: usize, out: &mut Vec<f64>) {
    for c in 0..img.channels {
        let plane = img.plane(c);
        for r in row..row + side {
            let start = r * img.width + col;
            out.extend(plane[start..start + side].iter().map(|&p| p as f64));
        }
    }
}

/// All patches on a `stride` grid in row-major scan order, flattened into `out`.
pub(crate) fn dense_patches_into(img: &RawImage, side: usize, stride: usize, out: &mut Vec<f64>) {
    let ny = positions(img.height, side, stride);
    let nx = positions(img.width, side, stride);
    out.reserve(ny * nx * side * side * img.channels);
    for py in 0..ny {
        for px in 0..nx {
            push_patch(img, side, py * stride, px * stride, out);
        }
    }
}

pub fn extract_dense(img: &RawImage, side: usize, stride: usize) -> Result<PatchMatrix> {
    if side == 0 || stride == 0 {
        return Err(PdlError::arg("patch side and stride must be >= 1"));
    }
    if side > img.width || side > img.height {
        return Err(PdlError::arg(format!(
            "patch side {side} exceeds image {}x{}",
            img.height, img.width
        )));
    }
    let mut buf = Vec::new();
    dense_patches_into(img, side, stride, &mut buf);
    let dim = side * side * img.channels;
    let rows = buf.len() / dim;
    PatchMatrix::new(RowMatrix::from_vec(rows, dim, buf)?, side, img.channels)
}

/// Uniform (image, row, col) draws with replacement.
pub fn sample_random(
    dataset: &LabeledDataset,
    side: usize,
    count: usize,
    seed: u64,
) -> Result<PatchMatrix> {
    if dataset.is_empty() {
        return Err(PdlError::arg("cannot sample patches from an empty dataset"));
    }
    if count == 0 || side == 0 {
        return Err(PdlError::arg("patch count and side must be >= 1"));
    }
    let channels = dataset.images[0].channels;
    if let Some(img) = dataset
        .images
        .iter()
        .find(|im| im.width < side || im.height < side || im.channels != channels)
    {
        return Err(PdlError::arg(format!(
            "image {}x{}x{} cannot supply {side}x{side}x{channels} patches",
            img.height, img.width, img.channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = side * side * channels;
    let mut buf = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let img = &dataset.images[rng.gen_range(0..dataset.len())];
        let r = rng.gen_range(0..=img.height - side);
        let c = rng.gen_range(0..=img.width - side);
        push_patch(img, side, r, c, &mut buf);
    }
    PatchMatrix::new(RowMatrix::from_vec(count, dim, buf)?, side, channels)
}

/// `p <- (p - mean(p)) / sqrt(var(p) + bias)` with population variance.
#[inline]
pub fn contrast_normalize_row(row: &mut [f64], bias: f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var + bias).sqrt();
    row.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

pub fn contrast_normalize(patches: &PatchMatrix, bias: f64) -> Result<PatchMatrix> {
    let mut out = patches.clone();
    contrast_normalize_in_place(&mut out, bias)?;
    Ok(out)
}

pub fn contrast_normalize_in_place(patches: &mut PatchMatrix, bias: f64) -> Result<()> {
    if !(bias > 0.0) {
        return Err(PdlError::arg("contrast normalization bias must be > 0"));
    }
    let dim = patches.dim();
    if dim == 0 {
        return Ok(());
    }
    patches
        .data
        .as_mut_slice()
        .par_chunks_mut(dim)
        .for_each(|row| contrast_normalize_row(row, bias));
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZcaWhitener {
    pub mean: Vec<f64>,
    /// Symmetric `d × d` map `V (D + eps I)^(-1/2) V^T`.
    pub transform: DMatrix<f64>,
    pub epsilon: f64,
}

impl ZcaWhitener {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        ZcaWhitener {
            mean: vec![0.0; dim],
            transform: DMatrix::identity(dim, dim),
            epsilon: 0.0,
        }
    }

    /// Map back from whitened space to (centered) patch space.
    pub fn inverse_transform(&self) -> DMatrix<f64> {
        crate::linalg::pinv_symmetric(&self.transform, 1e-12).0
    }

    /// Whiten `rows` (row-major, `n × d`) in place.
    pub fn apply_rows(&self, rows: &mut [f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || rows.len() % d != 0 {
            return Err(PdlError::arg(
                "patch buffer is not a multiple of the whitener dimension",
            ));
        }
        rows.par_chunks_mut(CHUNK * d).for_each(|chunk| {
            let n = chunk.len() / d;
            for row in chunk.chunks_exact_mut(d) {
                row.iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
            }
            let out = &self.transform * DMatrixView::from_slice(chunk, d, n);
            chunk.copy_from_slice(out.as_slice());
        });
        Ok(())
    }
}

/// Covariance `(1/N) sum (x - mean)(x - mean)^T` of the rows of `m`.
pub(crate) fn centered_scatter(m: &RowMatrix, mean: &[f64]) -> DMatrix<f64> {
    let d = m.cols();
    let mut acc = DMatrix::zeros(d, d);
    let mut buf = Vec::with_capacity(CHUNK * d);
    for chunk in m.as_slice().chunks(CHUNK * d) {
        buf.clear();
        buf.extend_from_slice(chunk);
        for row in buf.chunks_exact_mut(d) {
            row.iter_mut().zip(mean).for_each(|(v, mu)| *v -= mu);
        }
        let n = buf.len() / d;
        let view = DMatrixView::from_slice(&buf, d, n);
        acc += view * view.transpose();
    }
    acc
}

pub fn fit_zca(patches: &PatchMatrix, epsilon: f64) -> Result<ZcaWhitener> {
    if !(epsilon > 0.0) {
        return Err(PdlError::arg("ZCA epsilon must be > 0"));
    }
    let (n, d) = (patches.len(), patches.dim());
    if n < d {
        return Err(PdlError::InsufficientData(format!(
            "{n} patches cannot estimate a {d}-dimensional covariance"
        )));
    }
    let mean = patches.data.column_means();
    let cov = centered_scatter(&patches.data, &mean) / n as f64;
    let (values, vectors) = symmetric_eigen_desc(&cov);
    let largest = values[0].max(0.0);
    // Contrast-normalized patches always lose the constant direction.
    let null = values.iter().filter(|&&v| v <= 1e-12 * largest).count();
    if null > 1 {
        log::warn!("patch covariance has {null} null directions; relying on epsilon {epsilon}");
    }
    let mut scaled = vectors.clone();
    for j in 0..d {
        let s = 1.0 / (values[j].max(0.0) + epsilon).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    let mut transform = scaled * vectors.transpose();
    let sym = (&transform + transform.transpose()) * 0.5;
    transform = sym;
    Ok(ZcaWhitener {
        mean,
        transform,
        epsilon,
    })
}

pub fn apply_zca(whitener: &ZcaWhitener, patches: &PatchMatrix) -> Result<PatchMatrix> {
    check_dim(whitener.dim(), patches.dim())?;
    let mut out = patches.clone();
    whitener.apply_rows(out.data.as_mut_slice())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Split;

    fn ramp(width: usize, height: usize, channels: usize) -> RawImage {
        let pixels = (0..width * height * channels)
            .map(|i| (i % 251) as u8)
            .collect();
        RawImage::new(width, height, channels, pixels).unwrap()
    }

    #[test]
    fn dense_counts() {
        assert_eq!(extract_dense(&ramp(32, 32, 3), 6, 1).unwrap().len(), 729);
        assert_eq!(extract_dense(&ramp(32, 32, 3), 5, 1).unwrap().len(), 784);
        assert_eq!(
            extract_dense(&ramp(32, 32, 3), 6, 2).unwrap().len(),
            14 * 14
        );
        assert!(extract_dense(&ramp(4, 8, 1), 5, 1).is_err());
    }

    #[test]
    fn dense_single_patch_is_image() {
        let img = ramp(6, 6, 3);
        let p = extract_dense(&img, 6, 1).unwrap();
        assert_eq!(p.len(), 1);
        let expected: Vec<f64> = img.pixels.iter().map(|&v| v as f64).collect();
        assert_eq!(p.row(0), expected.as_slice());
    }

    #[test]
    fn dense_scan_order_and_layout() {
        let img = ramp(5, 4, 2);
        let p = extract_dense(&img, 2, 1).unwrap();
        // third patch in row-major scan: top-left (0, 2)
        let row = p.row(2);
        assert_eq!(row[0], img.at(0, 0, 2) as f64);
        assert_eq!(row[3], img.at(0, 1, 3) as f64);
        assert_eq!(row[4], img.at(1, 0, 2) as f64);
        // first patch of second scan line: (1, 0)
        assert_eq!(p.row(4)[0], img.at(0, 1, 0) as f64);
    }

    #[test]
    fn constant_image_gives_identical_patches() {
        let p = extract_dense(&RawImage::filled(10, 10, 3, 77), 3, 1).unwrap();
        assert!(p.data.iter_rows().all(|r| r == p.row(0)));
    }

    #[test]
    fn random_sampling_is_seeded() {
        let ds = LabeledDataset::new(
            vec![ramp(12, 12, 3), ramp(12, 12, 3)],
            vec![0, 1],
            10,
            Split::Train,
        )
        .unwrap();
        let a = sample_random(&ds, 4, 1, 5).unwrap();
        let b = sample_random(&ds, 4, 1, 5).unwrap();
        assert_eq!(a, b);
        let many = sample_random(&ds, 4, 50, 5).unwrap();
        assert_eq!((many.len(), many.dim()), (50, 48));
        let empty = LabeledDataset::new(vec![], vec![], 10, Split::Train).unwrap();
        assert!(sample_random(&empty, 4, 1, 0).is_err());
    }

    #[test]
    fn contrast_normalization_formula() {
        let p = PatchMatrix::new(RowMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap(), 1, 2).unwrap();
        let out = contrast_normalize(&p, 1.0).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((out.row(0)[0] + h).abs() < 1e-15 && (out.row(0)[1] - h).abs() < 1e-15);

        let flat = PatchMatrix::new(RowMatrix::from_rows(&[vec![5.0; 4]]).unwrap(), 2, 1).unwrap();
        assert!(contrast_normalize(&flat, 10.0)
            .unwrap()
            .row(0)
            .iter()
            .all(|&v| v == 0.0));
        assert!(contrast_normalize(&flat, 0.0).is_err());
    }

    #[test]
    fn zca_scalar_case() {
        // values with mean 0 and population variance 3
        let v = 3f64.sqrt();
        let data = RowMatrix::from_rows(&[vec![v], vec![-v]]).unwrap();
        let w = fit_zca(&PatchMatrix::new(data, 1, 1).unwrap(), 1.0).unwrap();
        assert!((w.transform[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zca_needs_enough_rows() {
        let data = RowMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = PatchMatrix::new(data, 2, 1).unwrap();
        assert!(matches!(
            fit_zca(&p, 0.1),
            Err(PdlError::InsufficientData(_))
        ));
    }

    #[test]
    fn zca_of_mean_is_zero_and_identity_is_noop() {
        let data = RowMatrix::from_rows(&[
            vec![1.0, 2.0],
            vec![3.0, 1.0],
            vec![0.0, 5.0],
            vec![2.0, 2.0],
        ])
        .unwrap();
        let p = PatchMatrix::new(data.clone(), 1, 2).unwrap();
        let w = fit_zca(&p, 0.1).unwrap();
        let mean =
            PatchMatrix::new(RowMatrix::from_rows(&[w.mean.clone()]).unwrap(), 1, 2).unwrap();
        assert!(apply_zca(&w, &mean)
            .unwrap()
            .row(0)
            .iter()
            .all(|v| v.abs() < 1e-12));
        let id = ZcaWhitener::identity(2);
        assert_eq!(apply_zca(&id, &p).unwrap(), p);
        let wrong = PatchMatrix::new(RowMatrix::from_rows(&[vec![1.0]]).unwrap(), 1, 1).unwrap();
        assert!(apply_zca(&w, &wrong).is_err());
    }
}
