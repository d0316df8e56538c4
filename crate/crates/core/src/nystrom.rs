//! Nyström reconstruction of the pooled covariance from a column subset, the
//! `ΛV` rescaling of selected features, the PCA bound, and the correlation /
//! spectrum diagnostics used to inspect a selection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, PdlError, Result};
use crate::linalg::{
    fix_column_signs, largest_magnitude, pinv_symmetric, symmetric_eigen_desc, RowMatrix,
};
use crate::selection::{estimate_covariance, ExemplarSet};

/// Relative cutoff for the pseudo-inverse of `C_SS`.
pub const PINV_RTOL: f64 = 1e-10;

fn validate_subset(m: usize, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(PdlError::arg("subset must be non-empty"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= m) {
        return Err(PdlError::arg(format!(
            "index {bad} out of range for {m} codes"
        )));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(PdlError::arg("subset contains repeated indices"));
    }
    Ok(())
}

/// `W` (all rows, subset columns) and `C_SS`.
fn blocks(c: &DMatrix<f64>, subset: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = c.nrows();
    let k = subset.len();
    let w = DMatrix::from_fn(m, k, |i, j| c[(i, subset[j])]);
    let css = DMatrix::from_fn(k, k, |i, j| c[(subset[i], subset[j])]);
    (w, css)
}

/// `W C_SS^+ W^T`.
pub fn nystrom_reconstruct(c: &DMatrix<f64>, subset: &[usize]) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return Err(PdlError::arg("covariance must be square"));
    }
    validate_subset(c.nrows(), subset)?;
    let (w, css) = blocks(c, subset);
    let (pinv, _) = pinv_symmetric(&css, PINV_RTOL);
    let approx = &w * pinv * w.transpose();
    Ok((&approx + approx.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NystromTransform {
    pub selected: Vec<usize>,
    /// `M × K` map `W C_SS^+` from selected to full pooled features.
    pub a: DMatrix<f64>,
    /// `K × K` rescaling `diag(Λ) V`.
    pub lambda_v: DMatrix<f64>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
}

impl NystromTransform {
    pub fn k(&self) -> usize {
        self.selected.len()
    }

    /// Left singular vectors `U = A V^T Λ^-1` for the non-zero singular values.
    pub fn left_singular_vectors(&self) -> DMatrix<f64> {
        let k = self.k();
        let v = DMatrix::from_fn(k, k, |i, j| {
            let s = self.singular_values[i];
            if s > 0.0 {
                self.lambda_v[(i, j)] / s
            } else {
                0.0
            }
        });
        let mut u = &self.a * v.transpose();
        for (j, &s) in self.singular_values.iter().enumerate() {
            if s > 0.0 {
                u.column_mut(j).scale_mut(1.0 / s);
            }
        }
        u
    }
}

pub fn fit_transform_matrix(c: &DMatrix<f64>, selection: &ExemplarSet) -> Result<NystromTransform> {
    fit_transform_subset(c, &selection.indices)
}

pub fn fit_transform_subset(c: &DMatrix<f64>, subset: &[usize]) -> Result<NystromTransform> {
    if !c.is_square() {
        return Err(PdlError::arg("covariance must be square"));
    }
    validate_subset(c.nrows(), subset)?;
    let k = subset.len();
    let (w, css) = blocks(c, subset);
    let (pinv, rank) = pinv_symmetric(&css, PINV_RTOL);
    if rank == 0 {
        return Err(PdlError::Degenerate(
            "selected covariance block has rank 0".into(),
        ));
    }
    if rank < k {
        log::info!("selected covariance block is rank {rank} of {k}");
    }
    let a = w * pinv;
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let scale_floor = PINV_RTOL * svd.singular_values.max();
    let mut singular_values = Vec::with_capacity(k);
    let mut lambda_v = DMatrix::zeros(k, k);
    for (dst, &src) in order.iter().enumerate() {
        let mut row = v_t.row(src).clone_owned();
        if largest_magnitude(row.iter().copied()) < 0.0 {
            row.neg_mut();
        }
        let mut s = svd.singular_values[src];
        if s <= scale_floor {
            s = 0.0;
        }
        singular_values.push(s);
        lambda_v.set_row(dst, &(row * s));
    }
    Ok(NystromTransform {
        selected: subset.to_vec(),
        a,
        lambda_v,
        singular_values,
        effective_rank: rank,
    })
}

pub fn apply_rescale(t: &NystromTransform, x_s: &[f64]) -> Result<Vec<f64>> {
    check_dim(t.k(), x_s.len())?;
    let x = DVector::from_column_slice(x_s);
    Ok((&t.lambda_v * x).iter().copied().collect())
}

/// Apply a per-cell `K × K` map to rows laid out cell-major in blocks of `K`.
fn map_cells(
    features: &RowMatrix,
    k_in: usize,
    map: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<RowMatrix> {
    if k_in == 0 || features.cols() % k_in != 0 {
        return Err(PdlError::DimensionMismatch {
            expected: k_in,
            actual: features.cols(),
        });
    }
    let mut out = RowMatrix::zeros(0, 0);
    for row in features.iter_rows() {
        let mut mapped = Vec::new();
        for cell in row.chunks_exact(k_in) {
            mapped.extend(map(cell));
        }
        out.push_row(&mapped)?;
    }
    if features.rows() == 0 {
        return Ok(RowMatrix::zeros(0, 0));
    }
    Ok(out)
}

/// Rescale every pooling cell of every feature row.
pub fn rescale_features(t: &NystromTransform, features: &RowMatrix) -> Result<RowMatrix> {
    let k = t.k();
    let lv = t.lambda_v.clone();
    map_cells(features, k, move |cell| {
        (&lv * DVector::from_column_slice(cell))
            .iter()
            .copied()
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    /// `M × K`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaTransform {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn dim(&self) -> usize {
        self.components.nrows()
    }
}

/// Top-`k` principal directions of a covariance with the given mean.
pub fn pca_from_covariance(c: &DMatrix<f64>, mean: &[f64], k: usize) -> Result<PcaTransform> {
    let m = c.nrows();
    check_dim(m, mean.len())?;
    if k == 0 || k > m {
        return Err(PdlError::arg(format!("cannot keep {k} of {m} components")));
    }
    let (values, vectors) = symmetric_eigen_desc(c);
    let mut components = vectors.columns(0, k).clone_owned();
    fix_column_signs(&mut components);
    Ok(PcaTransform {
        components,
        eigenvalues: values.iter().take(k).copied().collect(),
        mean: mean.to_vec(),
    })
}

pub fn fit_pca(pooled: &RowMatrix, k: usize) -> Result<PcaTransform> {
    let (n, m) = (pooled.rows(), pooled.cols());
    if k == 0 || n < 2 || k > (n - 1).min(m) {
        return Err(PdlError::arg(format!(
            "cannot keep {k} components from {n} samples of dimension {m}"
        )));
    }
    let cov = estimate_covariance(pooled)?;
    pca_from_covariance(&cov.c, &cov.means, k)
}

pub fn apply_pca(t: &PcaTransform, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(t.dim(), x.len())?;
    let centered = DVector::from_iterator(x.len(), x.iter().zip(&t.mean).map(|(v, m)| v - m));
    Ok(t.components.tr_mul(&centered).iter().copied().collect())
}

/// Project every pooling cell of every feature row onto the components.
pub fn pca_features(t: &PcaTransform, features: &RowMatrix) -> Result<RowMatrix> {
    map_cells(features, t.dim(), |cell| {
        apply_pca(t, cell).expect("cell length checked by map_cells")
    })
}

/// `U_K Λ_K U_K^T`.
pub fn pca_reconstruct(t: &PcaTransform) -> DMatrix<f64> {
    let mut scaled = t.components.clone();
    for (j, &l) in t.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
    }
    scaled * t.components.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    /// Eigenvalues of `C`, non-increasing.
    pub original: Vec<f64>,
    /// Eigenvalues of the Nyström reconstruction, non-increasing.
    pub approximation: Vec<f64>,
}

impl SpectrumComparison {
    /// Eigenvalues of the reconstruction above `rel_tol` times the largest
    /// eigenvalue of `C`.
    pub fn nonzero_count(&self, rel_tol: f64) -> usize {
        let top = self.original.first().copied().unwrap_or(0.0).abs();
        self.approximation
            .iter()
            .filter(|v| v.abs() > rel_tol * top)
            .count()
    }
}

pub fn spectrum_comparison(c: &DMatrix<f64>, subset: &[usize]) -> Result<SpectrumComparison> {
    let approx = nystrom_reconstruct(c, subset)?;
    Ok(SpectrumComparison {
        original: symmetric_eigen_desc(c).0.iter().copied().collect(),
        approximation: symmetric_eigen_desc(&approx).0.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationStats {
    /// Patch-level responses, pairs within one cluster.
    pub within_patch: Vec<f64>,
    /// Pooled responses, the same within-cluster pairs.
    pub within_pooled: Vec<f64>,
    /// Pooled responses, pairs of distinct exemplars.
    pub between_exemplars: Vec<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation of columns `i` and `j`; `None` when either is constant.
pub fn pearson_columns(x: &RowMatrix, i: usize, j: usize) -> Option<f64> {
    let n = x.rows() as f64;
    if x.rows() < 2 {
        return None;
    }
    let (mut si, mut sj) = (0.0, 0.0);
    for r in x.iter_rows() {
        si += r[i];
        sj += r[j];
    }
    let (mi, mj) = (si / n, sj / n);
    let (mut cov, mut vi, mut vj) = (0.0, 0.0, 0.0);
    for r in x.iter_rows() {
        let (a, b) = (r[i] - mi, r[j] - mj);
        cov += a * b;
        vi += a * a;
        vj += b * b;
    }
    (vi > 0.0 && vj > 0.0).then(|| (cov / (vi * vj).sqrt()).clamp(-1.0, 1.0))
}

pub fn correlation_stats(
    pooled: &RowMatrix,
    patch_acts: &RowMatrix,
    selection: &ExemplarSet,
    sample_pairs: usize,
    seed: u64,
) -> Result<CorrelationStats> {
    if sample_pairs == 0 {
        return Err(PdlError::arg("sample_pairs must be >= 1"));
    }
    let m = selection.assignment.len();
    check_dim(m, pooled.cols())?;
    check_dim(m, patch_acts.cols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = CorrelationStats::default();

    let clusters: Vec<Vec<usize>> = selection
        .clusters()
        .into_iter()
        .filter(|c| c.len() >= 2)
        .collect();
    let weights: Vec<usize> = clusters
        .iter()
        .map(|c| c.len() * (c.len() - 1) / 2)
        .collect();
    let total: usize = weights.iter().sum();
    if total == 0 {
        log::warn!("no cluster has more than one member; within-cluster samples are empty");
    } else {
        for _ in 0..sample_pairs {
            let mut pick = rng.gen_range(0..total);
            let cluster = weights
                .iter()
                .position(|&w| {
                    if pick < w {
                        true
                    } else {
                        pick -= w;
                        false
                    }
                })
                .expect("pick < total");
            let members = &clusters[cluster];
            let a = rng.gen_range(0..members.len());
            let mut b = rng.gen_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            let (i, j) = (members[a], members[b]);
            if let Some(r) = pearson_columns(patch_acts, i, j) {
                stats.within_patch.push(r);
            }
            if let Some(r) = pearson_columns(pooled, i, j) {
                stats.within_pooled.push(r);
            }
        }
    }

    let ex = &selection.indices;
    if ex.len() >= 2 {
        for _ in 0..sample_pairs {
            let a = rng.gen_range(0..ex.len());
            let mut b = rng.gen_range(0..ex.len() - 1);
            if b >= a {
                b += 1;
            }
            if let Some(r) = pearson_columns(pooled, ex[a], ex[b]) {
                stats.between_exemplars.push(r);
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_covariance_gives_selector_matrix() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0, 7.0]));
        let t = fit_transform_subset(&c, &[1, 3]).unwrap();
        assert_eq!(t.a.shape(), (4, 2));
        for j in 0..2 {
            let nonzero: Vec<usize> = (0..4).filter(|&i| t.a[(i, j)].abs() > 1e-12).collect();
            assert_eq!(nonzero, vec![[1, 3][j]]);
            assert!((t.a[([1, 3][j], j)] - 1.0).abs() < 1e-12);
        }
        assert!(t.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rescale_identity_and_zero() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0]));
        let t = fit_transform_subset(&c, &[0, 1]).unwrap();
        let v = apply_rescale(&t, &[0.0, 0.0]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        let x = apply_rescale(&t, &[0.3, -0.2]).unwrap();
        assert!((x[0].abs() + x[1].abs() - 0.5).abs() < 1e-12);
        assert!(apply_rescale(&t, &[1.0]).is_err());
    }

    #[test]
    fn subset_validation() {
        let c = DMatrix::identity(3, 3);
        assert!(nystrom_reconstruct(&c, &[]).is_err());
        assert!(nystrom_reconstruct(&c, &[3]).is_err());
        assert!(nystrom_reconstruct(&c, &[1, 1]).is_err());
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(
            fit_transform_subset(&zero, &[0]),
            Err(PdlError::Degenerate(_))
        ));
    }

    #[test]
    fn pca_apply_cases() {
        let pooled = RowMatrix::from_rows(&[
            vec![1.0, 0.0, 2.0],
            vec![3.0, 1.0, 0.0],
            vec![0.0, 4.0, 1.0],
            vec![2.0, 2.0, 2.0],
            vec![1.0, 1.0, 5.0],
        ])
        .unwrap();
        let t = fit_pca(&pooled, 2).unwrap();
        assert!(apply_pca(&t, &t.mean)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
        let x: Vec<f64> = t
            .mean
            .iter()
            .zip(t.components.column(0).iter())
            .map(|(m, u)| m + u)
            .collect();
        let y = apply_pca(&t, &x).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12);
        assert!(fit_pca(&pooled, 5).is_err());
        assert!(apply_pca(&t, &[1.0]).is_err());
    }

    #[test]
    fn identical_codes_correlate_perfectly() {
        let pooled = RowMatrix::from_rows(&[
            vec![1.0, 1.0, 1.0],
            vec![2.0, 2.0, 2.0],
            vec![0.5, 0.5, 0.5],
        ])
        .unwrap();
        let sel = ExemplarSet {
            indices: vec![0, 2],
            assignment: vec![0, 0, 2],
            preference_used: -1.0,
        };
        let s = correlation_stats(&pooled, &pooled, &sel, 20, 1).unwrap();
        for sample in [&s.within_patch, &s.within_pooled, &s.between_exemplars] {
            assert!(!sample.is_empty());
            assert!((mean(sample) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_clusters_give_empty_within_samples() {
        let pooled =
            RowMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 5.0]]).unwrap();
        let sel = ExemplarSet {
            indices: vec![0, 1],
            assignment: vec![0, 1],
            preference_used: -1.0,
        };
        let s = correlation_stats(&pooled, &pooled, &sel, 5, 1).unwrap();
        assert!(s.within_pooled.is_empty() && s.within_patch.is_empty());
        assert_eq!(s.between_exemplars.len(), 5);
    }
}
