//! One-vs-rest linear SVM with squared hinge loss.
//!
//! Each binary problem minimizes
//! `(λ/2)||w||² + (1/N) Σ max(0, 1 - y(wᵀx + b))²`
//! by dual coordinate descent. The bias enters as an extra constant feature of
//! value [`BIAS_FEATURE`]; its implied penalty `λ b² / (2 B²)` is negligible
//! at that scale.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, PdlError, Result};
use crate::linalg::{dot, RowMatrix};

pub const BIAS_FEATURE: f64 = 10.0;
pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1];
pub const CV_FOLDS: usize = 5;

/// Stop once the projected-gradient spread falls below this.
const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `num_classes × D`, acting on standardized features.
    pub weights: RowMatrix,
    pub biases: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let z = standardize_row(x, &self.feature_means, &self.feature_scales);
        Ok(self
            .weights
            .iter_rows()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, &z) + b)
            .collect())
    }

    /// Arg-max class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

/// Per-column mean and population standard deviation; constant columns get
/// scale 1.
pub fn standardize_fit(features: &RowMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = features.rows().max(1) as f64;
    let means = features.column_means();
    let mut var = vec![0.0; features.cols()];
    for r in features.iter_rows() {
        for ((v, x), m) in var.iter_mut().zip(r).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let scales = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (means, scales)
}

pub fn standardize_row(x: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(means)
        .zip(scales)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

pub fn standardize(features: &RowMatrix, means: &[f64], scales: &[f64]) -> RowMatrix {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let z = standardize_row(features.row(i), means, scales);
        out.row_mut(i).copy_from_slice(&z);
    }
    out
}

/// Binary squared-hinge SVM on standardized rows; returns `(w, b)`.
fn train_binary(
    x: &RowMatrix,
    y: &[f64],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    // (λ/2)||w||² + (1/N)Σξ²  ==  λ [ ½||w||² + C Σξ² ],  C = 1/(λN)
    let diag = if lambda > 0.0 {
        0.5 * lambda * n as f64
    } else {
        0.0
    };
    let b2 = BIAS_FEATURE * BIAS_FEATURE;
    let qii: Vec<f64> = x.iter_rows().map(|r| dot(r, r) + b2 + diag).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut wb = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = x.row(i);
            let g = y[i] * (dot(&w, xi) + wb * BIAS_FEATURE) - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 { g.min(0.0) } else { g };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).max(0.0);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    w.iter_mut().zip(xi).for_each(|(wj, xj)| *wj += delta * xj);
                    wb += delta * BIAS_FEATURE;
                }
            }
        }
        if pg_max - pg_min < TOLERANCE {
            break;
        }
    }
    (w, wb * BIAS_FEATURE)
}

/// Value of the one-vs-rest objective for class `class` at `(w, b)` on
/// standardized features.
pub fn binary_objective(
    x: &RowMatrix,
    labels: &[usize],
    class: usize,
    w: &[f64],
    b: f64,
    lambda: f64,
) -> f64 {
    let n = x.rows() as f64;
    let loss: f64 = x
        .iter_rows()
        .zip(labels)
        .map(|(r, &l)| {
            let y = if l == class { 1.0 } else { -1.0 };
            let m = (1.0 - y * (dot(w, r) + b)).max(0.0);
            m * m
        })
        .sum();
    0.5 * lambda * dot(w, w) + loss / n
}

pub fn train_ovr_svm(
    features: &RowMatrix,
    labels: &[usize],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel> {
    check_dim(features.rows(), labels.len())?;
    if !(lambda >= 0.0) {
        return Err(PdlError::arg("lambda must be >= 0"));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; num_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(PdlError::arg(
            "training data must contain at least 2 classes",
        ));
    }
    let (means, scales) = standardize_fit(features);
    let z = standardize(features, &means, &scales);
    let per_class: Vec<(Vec<f64>, f64)> = (0..num_classes)
        .into_par_iter()
        .map(|c| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == c { 1.0 } else { -1.0 })
                .collect();
            train_binary(&z, &y, lambda, epochs, seed.wrapping_add(c as u64))
        })
        .collect();
    let mut weights = RowMatrix::zeros(num_classes, features.cols());
    let mut biases = Vec::with_capacity(num_classes);
    for (c, (w, b)) in per_class.into_iter().enumerate() {
        weights.row_mut(c).copy_from_slice(&w);
        biases.push(b);
    }
    Ok(LinearModel {
        weights,
        biases,
        feature_means: means,
        feature_scales: scales,
        lambda,
    })
}

pub fn predict_all(model: &LinearModel, features: &RowMatrix) -> Result<Vec<usize>> {
    check_dim(model.dim(), features.cols())?;
    (0..features.rows())
        .into_par_iter()
        .map(|i| model.predict(features.row(i)))
        .collect()
}

pub fn evaluate(model: &LinearModel, features: &RowMatrix, labels: &[usize]) -> Result<f64> {
    check_dim(features.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(PdlError::arg("cannot evaluate on an empty set"));
    }
    let predictions = predict_all(model, features)?;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Pick λ from `grid` by `folds`-fold cross-validated accuracy (first best
/// on ties). Folds are a seeded permutation split.
pub fn select_lambda_cv(
    features: &RowMatrix,
    labels: &[usize],
    grid: &[f64],
    folds: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(PdlError::arg("empty lambda grid"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let n = features.rows();
    if folds < 2 || n < folds {
        return Err(PdlError::arg(format!(
            "cannot run {folds}-fold CV on {n} examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &lambda in grid {
        let mut correct = 0.0;
        for f in 0..folds {
            let mut test_idx = Vec::new();
            let mut train_idx = Vec::new();
            for (pos, &i) in order.iter().enumerate() {
                if pos % folds == f {
                    test_idx.push(i);
                } else {
                    train_idx.push(i);
                }
            }
            let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
            let test_labels: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
            let model = train_ovr_svm(
                &features.select_rows(&train_idx),
                &train_labels,
                lambda,
                epochs,
                seed,
            )?;
            correct += evaluate(&model, &features.select_rows(&test_idx), &test_labels)?
                * test_idx.len() as f64;
        }
        let acc = correct / n as f64;
        log::debug!("lambda {lambda:e}: cv accuracy {acc:.4}");
        if acc > best.1 {
            best = (lambda, acc);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_conventions() {
        let x = RowMatrix::from_rows(&[vec![5.0, 0.0], vec![5.0, 2.0]]).unwrap();
        let (m, s) = standardize_fit(&x);
        assert_eq!(m, vec![5.0, 1.0]);
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn single_class_rejected() {
        let x = RowMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(train_ovr_svm(&x, &[0, 0], 0.1, 10, 0).is_err());
        assert!(train_ovr_svm(&x, &[0], 0.1, 10, 0).is_err());
    }

    #[test]
    fn evaluate_bounds() {
        let x = RowMatrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]).unwrap();
        let y = [0, 0, 1, 1];
        let model = train_ovr_svm(&x, &y, 1e-3, 100, 1).unwrap();
        assert_eq!(evaluate(&model, &x, &y).unwrap(), 1.0);
        assert_eq!(evaluate(&model, &x, &[1, 1, 0, 0]).unwrap(), 0.0);
        assert!(evaluate(&model, &x, &[0, 1]).is_err());
        let wide = RowMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(evaluate(&model, &wide, &[0]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let model = LinearModel {
            weights: RowMatrix::zeros(3, 1),
            biases: vec![0.5, 0.5, 0.1],
            feature_means: vec![0.0],
            feature_scales: vec![1.0],
            lambda: 1.0,
        };
        assert_eq!(model.predict(&[3.0]).unwrap(), 0);
    }
}
