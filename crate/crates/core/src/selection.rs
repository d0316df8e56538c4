//! Exemplar selection over pooled-feature covariance.
//!
//! The similarity between two codes is `2 rho_ij - 2`, i.e. the negative mean
//! squared difference between their standardized pooled responses. Affinity
//! propagation picks exemplars from that matrix, and a bisection over the shared
//! preference steers it to exactly `K` of them.

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;

use crate::error::{PdlError, Result};
use crate::linalg::RowMatrix;

pub const DEFAULT_DAMPING: f64 = 0.9;
pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_SEARCH_BUDGET: usize = 40;

/// Finite stand-in for the `-inf` self-similarity of dead codes inside the
/// message passing, so that damping and sums stay free of NaN.
const DEAD_SENTINEL: f64 = -1e100;
const TIE_BREAK_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub c: DMatrix<f64>,
    pub sample_count: usize,
    pub means: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// `C_ij / sqrt(C_ii C_jj)`, clamped to [-1, 1]; zero when either
    /// variance vanishes.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let denom = (self.c[(i, i)] * self.c[(j, j)]).sqrt();
        if denom > 0.0 {
            (self.c[(i, j)] / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Streaming sample covariance. Rows are shifted by the first observation
/// before accumulation to limit cancellation.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    shift: Vec<f64>,
    sum: Vec<f64>,
    scatter: DMatrix<f64>,
    n: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        CovarianceAccumulator {
            shift: Vec::new(),
            sum: vec![0.0; dim],
            scatter: DMatrix::zeros(dim, dim),
            n: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push_batch(&mut self, rows: &RowMatrix) -> Result<()> {
        let d = self.sum.len();
        crate::error::check_dim(d, rows.cols())?;
        if rows.rows() == 0 {
            return Ok(());
        }
        if self.shift.is_empty() {
            self.shift = rows.row(0).to_vec();
        }
        let mut buf = rows.as_slice().to_vec();
        for row in buf.chunks_exact_mut(d) {
            for ((v, s), acc) in row.iter_mut().zip(&self.shift).zip(self.sum.iter_mut()) {
                *v -= s;
                *acc += *v;
            }
        }
        let view = DMatrixView::from_slice(&buf, d, rows.rows());
        self.scatter += view * view.transpose();
        self.n += rows.rows();
        Ok(())
    }

    pub fn finish(self) -> Result<CovarianceMatrix> {
        if self.n < 2 {
            return Err(PdlError::arg(format!(
                "covariance needs at least 2 samples, got {}",
                self.n
            )));
        }
        let n = self.n as f64;
        let centered_mean =
            nalgebra::DVector::from_iterator(self.sum.len(), self.sum.iter().map(|s| s / n));
        let mut c = (self.scatter - &centered_mean * centered_mean.transpose() * n) / (n - 1.0);
        c = (&c + c.transpose()) * 0.5;
        let means = self
            .shift
            .iter()
            .zip(centered_mean.iter())
            .map(|(s, m)| s + m)
            .collect();
        Ok(CovarianceMatrix {
            c,
            sample_count: self.n,
            means,
        })
    }
}

/// `C = 1/(N-1) sum (x - mean)(x - mean)^T` over the rows of `pooled`.
pub fn estimate_covariance(pooled: &RowMatrix) -> Result<CovarianceMatrix> {
    if pooled.rows() < 2 {
        return Err(PdlError::arg(format!(
            "covariance needs at least 2 samples, got {}",
            pooled.rows()
        )));
    }
    let mut acc = CovarianceAccumulator::new(pooled.cols());
    acc.push_batch(pooled)?;
    acc.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// Off-diagonal similarities; the diagonal holds the preference, or
    /// `-inf` for dead codes.
    pub s: DMatrix<f64>,
    pub dead: Vec<bool>,
}

impl SimilarityMatrix {
    /// Plain similarity matrix with every code live.
    pub fn from_matrix(s: DMatrix<f64>) -> Result<Self> {
        if !s.is_square() {
            return Err(PdlError::arg("similarity matrix must be square"));
        }
        let dead = vec![false; s.nrows()];
        Ok(SimilarityMatrix { s, dead })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn live_count(&self) -> usize {
        self.dead.iter().filter(|d| !**d).count()
    }

    pub fn set_preference(&mut self, preference: f64) {
        for k in 0..self.dim() {
            self.s[(k, k)] = if self.dead[k] {
                f64::NEG_INFINITY
            } else {
                preference
            };
        }
    }

    /// Extremes of the off-diagonal similarities among live codes.
    pub fn offdiag_range(&self) -> Option<(f64, f64)> {
        let m = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in (0..m).filter(|&i| !self.dead[i]) {
            for j in (0..m).filter(|&j| j != i && !self.dead[j]) {
                lo = lo.min(self.s[(i, j)]);
                hi = hi.max(self.s[(i, j)]);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

pub fn default_variance_floor(c: &CovarianceMatrix) -> f64 {
    let max_diag = c.c.diagonal().iter().fold(0.0f64, |a, &v| a.max(v));
    (1e-12 * max_diag).max(f64::MIN_POSITIVE)
}

pub fn build_similarity(
    c: &CovarianceMatrix,
    preference: f64,
    variance_floor: f64,
) -> Result<SimilarityMatrix> {
    if !(variance_floor > 0.0) {
        return Err(PdlError::arg("variance floor must be > 0"));
    }
    let m = c.dim();
    let dead: Vec<bool> = (0..m).map(|i| !(c.c[(i, i)] >= variance_floor)).collect();
    if dead.iter().all(|&d| d) {
        return Err(PdlError::Degenerate(
            "every code has (near) zero pooled variance".into(),
        ));
    }
    let mut s = DMatrix::zeros(m, m);
    let mut live_min = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            if i != j && !dead[i] && !dead[j] {
                let v = 2.0 * c.correlation(i, j) - 2.0;
                s[(i, j)] = v;
                live_min = live_min.min(v);
            }
        }
    }
    if !live_min.is_finite() {
        live_min = -4.0;
    }
    for i in 0..m {
        for j in 0..m {
            if i != j && (dead[i] || dead[j]) {
                s[(i, j)] = live_min;
            }
        }
    }
    let mut sim = SimilarityMatrix { s, dead };
    sim.set_preference(preference);
    Ok(sim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApParams {
    pub damping: f64,
    pub max_iters: usize,
    pub convergence_window: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams {
            damping: DEFAULT_DAMPING,
            max_iters: DEFAULT_MAX_ITERS,
            convergence_window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    /// Sorted exemplar code indices.
    pub indices: Vec<usize>,
    /// Exemplar index representing each code.
    pub assignment: Vec<usize>,
    pub preference_used: f64,
}

impl ExemplarSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Members of each cluster, exemplar first, in exemplar order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        self.indices
            .iter()
            .map(|&k| {
                let mut members = vec![k];
                members.extend(
                    self.assignment
                        .iter()
                        .enumerate()
                        .filter(|&(i, &a)| a == k && i != k)
                        .map(|(i, _)| i),
                );
                members
            })
            .collect()
    }

    /// Exemplars assigned to themselves and every target is an exemplar.
    pub fn is_consistent(&self) -> bool {
        let sorted = self.indices.windows(2).all(|w| w[0] < w[1]);
        sorted
            && self
                .indices
                .iter()
                .all(|&k| self.assignment.get(k) == Some(&k))
            && self
                .assignment
                .iter()
                .all(|a| self.indices.binary_search(a).is_ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApStats {
    pub iterations: usize,
    pub converged: bool,
    pub fallback: bool,
}

#[inline]
fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

pub fn affinity_propagation(sim: &SimilarityMatrix, params: &ApParams) -> Result<ExemplarSet> {
    affinity_propagation_stats(sim, params).map(|(e, _)| e)
}

pub fn affinity_propagation_stats(
    sim: &SimilarityMatrix,
    params: &ApParams,
) -> Result<(ExemplarSet, ApStats)> {
    if !(0.5..1.0).contains(&params.damping) {
        return Err(PdlError::arg("damping must lie in [0.5, 1)"));
    }
    if params.convergence_window == 0 {
        return Err(PdlError::arg("convergence window must be >= 1"));
    }
    let m = sim.dim();
    if m == 0 {
        return Err(PdlError::arg("empty similarity matrix"));
    }
    if sim.live_count() == 0 {
        return Err(PdlError::Degenerate("no live codes".into()));
    }
    let preference_used = (0..m)
        .find(|&k| !sim.dead[k])
        .map(|k| sim.s[(k, k)])
        .unwrap_or(f64::NEG_INFINITY);

    // Row-major copy for the message sweeps. Candidate columns are biased by
    // a vanishing amount in index order, so exact ties (duplicate codes)
    // resolve toward the lowest index in every row at once.
    let scale = sim.offdiag_range().map_or(1.0, |(lo, hi)| {
        lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
    });
    let step = TIE_BREAK_SCALE * scale / m as f64;
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let v = sim.s[(i, k)];
            s[i * m + k] = if v.is_finite() {
                v - step * k as f64
            } else {
                DEAD_SENTINEL
            };
        }
    }
    let mut r = vec![0.0; m * m];
    let mut a = vec![0.0; m * m];
    let lam = params.damping;
    let mut colsum = vec![0.0; m];
    let mut choice = vec![0usize; m];
    let mut last_set: Vec<usize> = Vec::new();
    let mut last_diag: Vec<bool> = Vec::new();
    let mut stable = 0usize;
    let mut stats = ApStats {
        iterations: 0,
        converged: false,
        fallback: false,
    };

    for _ in 0..params.max_iters {
        stats.iterations += 1;
        r.par_chunks_mut(m)
            .zip(a.par_chunks(m))
            .zip(s.par_chunks(m))
            .for_each(|((r_row, a_row), s_row)| {
                let (mut first, mut second, mut idx) =
                    (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize);
                for k in 0..m {
                    let v = a_row[k] + s_row[k];
                    if v > first {
                        second = first;
                        first = v;
                        idx = k;
                    } else if v > second {
                        second = v;
                    }
                }
                for k in 0..m {
                    let competitor = if k == idx { second } else { first };
                    let fresh = s_row[k] - competitor;
                    r_row[k] = lam * r_row[k] + (1.0 - lam) * fresh;
                }
            });

        colsum.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..m {
            let row = &r[i * m..(i + 1) * m];
            for (k, (c, &v)) in colsum.iter_mut().zip(row).enumerate() {
                *c += if k == i { v } else { v.max(0.0) };
            }
        }
        a.par_chunks_mut(m)
            .zip(r.par_chunks(m))
            .enumerate()
            .for_each(|(i, (a_row, r_row))| {
                for k in 0..m {
                    let fresh = if k == i {
                        colsum[k] - r_row[k]
                    } else {
                        (colsum[k] - r_row[k].max(0.0)).min(0.0)
                    };
                    a_row[k] = lam * a_row[k] + (1.0 - lam) * fresh;
                }
            });

        choice.par_iter_mut().enumerate().for_each(|(i, c)| {
            let (ar, rr) = (&a[i * m..(i + 1) * m], &r[i * m..(i + 1) * m]);
            *c = argmax_lowest(ar.iter().zip(rr).map(|(x, y)| x + y));
        });
        let mut set = choice.clone();
        set.sort_unstable();
        set.dedup();
        // The argmax set can sit still while messages are still separating
        // near-tied candidates; the diagonal evidence must settle too.
        let diag: Vec<bool> = (0..m).map(|k| a[k * m + k] + r[k * m + k] > 0.0).collect();
        if set == last_set && diag == last_diag {
            stable += 1;
            if stable >= params.convergence_window {
                stats.converged = true;
                break;
            }
        } else {
            stable = 1;
            last_set = set;
            last_diag = diag;
        }
    }

    // Exemplars must choose themselves; candidates named only by others are
    // dropped and their followers re-attached by similarity.
    let mut indices: Vec<usize> = last_set
        .iter()
        .copied()
        .filter(|&k| choice[k] == k && !sim.dead[k])
        .collect();
    if indices.is_empty() {
        stats.fallback = true;
        let best = (0..m)
            .filter(|&k| !sim.dead[k])
            .map(|k| {
                let support: f64 = (0..m)
                    .filter(|&i| i != k)
                    .map(|i| r[i * m + k].max(0.0))
                    .sum();
                (k, s[k * m + k] + support)
            })
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (k, v)| {
                if v > acc.1 || acc.0 == usize::MAX {
                    (k, v)
                } else {
                    acc
                }
            })
            .0;
        indices.push(best);
    }
    let assignment = assign_to_exemplars(&s, m, &indices, |i| {
        let c = choice[i];
        indices.binary_search(&c).is_ok().then_some(c)
    });
    Ok((
        ExemplarSet {
            indices,
            assignment,
            preference_used,
        },
        stats,
    ))
}

/// Exemplars map to themselves; every other code takes `preferred(i)` when
/// given, otherwise its most similar exemplar (lowest index on ties).
fn assign_to_exemplars(
    s: &[f64],
    m: usize,
    exemplars: &[usize],
    preferred: impl Fn(usize) -> Option<usize>,
) -> Vec<usize> {
    (0..m)
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                return i;
            }
            if let Some(k) = preferred(i) {
                return k;
            }
            exemplars[argmax_lowest(exemplars.iter().map(|&k| s[i * m + k]))]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// `(preference, exemplar count)` for every affinity propagation run.
    pub probes: Vec<(f64, usize)>,
    /// Whether the final set was trimmed or grown to reach `K`.
    pub adjusted: bool,
}

pub fn select_k_exemplars(
    c: &CovarianceMatrix,
    k: usize,
    params: &ApParams,
    search_budget: usize,
) -> Result<ExemplarSet> {
    select_k_exemplars_report(c, k, params, search_budget).map(|(e, _)| e)
}

pub fn select_k_exemplars_report(
    c: &CovarianceMatrix,
    k: usize,
    params: &ApParams,
    search_budget: usize,
) -> Result<(ExemplarSet, SelectionReport)> {
    let base = build_similarity(c, 0.0, default_variance_floor(c))?;
    select_k_from_similarity(base, k, params, search_budget)
}

/// Preference bisection on a prepared similarity matrix (diagonal ignored).
pub fn select_k_from_similarity(
    mut sim: SimilarityMatrix,
    k: usize,
    params: &ApParams,
    search_budget: usize,
) -> Result<(ExemplarSet, SelectionReport)> {
    let m = sim.dim();
    let live = sim.live_count();
    if k == 0 || k > live {
        return Err(PdlError::arg(format!(
            "cannot select {k} exemplars from {live} live codes"
        )));
    }
    let mut report = SelectionReport {
        probes: Vec::new(),
        adjusted: false,
    };
    let (lo_off, hi_off) = sim.offdiag_range().unwrap_or((-4.0, 0.0));
    let flat = |sim: &SimilarityMatrix| -> Vec<f64> {
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let v = sim.s[(i, j)];
                s[i * m + j] = if v.is_finite() { v } else { DEAD_SENTINEL };
            }
        }
        s
    };

    if k == live {
        sim.set_preference(hi_off);
        let indices: Vec<usize> = (0..m).filter(|&i| !sim.dead[i]).collect();
        let assignment = assign_to_exemplars(&flat(&sim), m, &indices, |_| None);
        return Ok((
            ExemplarSet {
                indices,
                assignment,
                preference_used: hi_off,
            },
            report,
        ));
    }

    let mut lo = lo_off * m as f64;
    let mut hi = hi_off;
    if lo >= hi {
        lo = hi - 1.0;
    }
    let mut runs: Vec<ExemplarSet> = Vec::new();
    for _ in 0..search_budget.max(1) {
        let mid = 0.5 * (lo + hi);
        sim.set_preference(mid);
        let found = affinity_propagation(&sim, params)?;
        let count = found.len();
        report.probes.push((mid, count));
        log::debug!("preference {mid:.6} -> {count} exemplars");
        if count == k {
            return Ok((found, report));
        }
        if count < k {
            lo = mid;
        } else {
            hi = mid;
        }
        runs.push(found);
    }

    report.adjusted = true;
    let above = runs
        .iter()
        .filter(|r| r.len() > k)
        .min_by_key(|r| r.len())
        .cloned();
    let adjusted = match above {
        Some(run) => {
            sim.set_preference(run.preference_used);
            trim_to_k(&flat(&sim), m, run, k)
        }
        None => {
            let run = runs
                .into_iter()
                .max_by_key(|r| r.len())
                .expect("at least one probe ran");
            sim.set_preference(run.preference_used);
            grow_to_k(&flat(&sim), &sim.dead, m, run, k)
        }
    };
    Ok((adjusted, report))
}

/// Keep the `k` exemplars whose clusters have the largest total similarity
/// and re-attach everything else to its best surviving exemplar.
fn trim_to_k(s: &[f64], m: usize, run: ExemplarSet, k: usize) -> ExemplarSet {
    let mut scored: Vec<(usize, f64)> = run
        .indices
        .iter()
        .map(|&e| {
            let total: f64 = (0..m)
                .filter(|&i| run.assignment[i] == e)
                .map(|i| s[i * m + e])
                .sum();
            (e, total)
        })
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut indices: Vec<usize> = scored.iter().take(k).map(|&(e, _)| e).collect();
    indices.sort_unstable();
    let assignment = assign_to_exemplars(s, m, &indices, |i| {
        let a = run.assignment[i];
        indices.binary_search(&a).is_ok().then_some(a)
    });
    ExemplarSet {
        indices,
        assignment,
        preference_used: run.preference_used,
    }
}

/// Promote the worst-represented live code until there are `k` exemplars.
fn grow_to_k(s: &[f64], dead: &[bool], m: usize, run: ExemplarSet, k: usize) -> ExemplarSet {
    let mut indices = run.indices.clone();
    let mut assignment = run.assignment.clone();
    while indices.len() < k {
        let candidate = (0..m)
            .filter(|&i| !dead[i] && indices.binary_search(&i).is_err())
            .min_by(|&x, &y| {
                s[x * m + assignment[x]]
                    .total_cmp(&s[y * m + assignment[y]])
                    .then(x.cmp(&y))
            });
        let Some(c) = candidate else { break };
        let pos = indices.binary_search(&c).unwrap_err();
        indices.insert(pos, c);
        assignment[c] = c;
        for i in 0..m {
            if indices.binary_search(&i).is_err() && s[i * m + c] > s[i * m + assignment[i]] {
                assignment[i] = c;
            }
        }
    }
    ExemplarSet {
        indices,
        assignment,
        preference_used: run.preference_used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov(c: &[f64], m: usize) -> CovarianceMatrix {
        CovarianceMatrix {
            c: DMatrix::from_row_slice(m, m, c),
            sample_count: 10,
            means: vec![0.0; m],
        }
    }

    #[test]
    fn covariance_two_samples() {
        let x = RowMatrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let c = estimate_covariance(&x).unwrap();
        assert!((c.c[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(c.means, vec![1.0]);
        assert!(estimate_covariance(&RowMatrix::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn covariance_identical_rows_is_zero() {
        let x = RowMatrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        assert!(estimate_covariance(&x).unwrap().c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_accumulation_matches_single_pass() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1, (i % 3) as f64])
            .collect();
        let whole = estimate_covariance(&RowMatrix::from_rows(&rows).unwrap()).unwrap();
        let mut acc = CovarianceAccumulator::new(3);
        acc.push_batch(&RowMatrix::from_rows(&rows[..4]).unwrap())
            .unwrap();
        acc.push_batch(&RowMatrix::from_rows(&rows[4..]).unwrap())
            .unwrap();
        let split = acc.finish().unwrap();
        assert!((whole.c - split.c).abs().max() < 1e-12);
    }

    #[test]
    fn similarity_formula_cases() {
        let c = cov(&[4.0, 6.0, 0.0, 6.0, 9.0, -6.0, 0.0, -6.0, 4.0], 3);
        let s = build_similarity(&c, -1.5, 1e-12).unwrap();
        assert!((s.s[(0, 1)] - 0.0).abs() < 1e-12);
        assert!((s.s[(0, 2)] + 2.0).abs() < 1e-12);
        assert!((s.s[(1, 2)] + 4.0).abs() < 1e-12);
        assert_eq!(s.s[(2, 2)], -1.5);
    }

    #[test]
    fn dead_codes_are_excluded() {
        let c = cov(&[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0], 3);
        let s = build_similarity(&c, -1.0, 1e-12).unwrap();
        assert!(s.dead[2]);
        assert_eq!(s.s[(2, 2)], f64::NEG_INFINITY);
        assert_eq!(s.s[(0, 2)], s.s[(0, 1)].min(s.s[(1, 0)]));
        let ex = affinity_propagation(&s, &ApParams::default()).unwrap();
        assert!(!ex.indices.contains(&2));
        assert!(ex.is_consistent());

        let all_dead = cov(&[0.0; 4], 2);
        assert!(matches!(
            build_similarity(&all_dead, -1.0, 1e-12),
            Err(PdlError::Degenerate(_))
        ));
    }

    #[test]
    fn single_code() {
        let s = SimilarityMatrix::from_matrix(DMatrix::from_element(1, 1, -3.0)).unwrap();
        let ex = affinity_propagation(&s, &ApParams::default()).unwrap();
        assert_eq!(ex.indices, vec![0]);
        assert_eq!(ex.assignment, vec![0]);
    }

    #[test]
    fn bad_damping_rejected() {
        let s = SimilarityMatrix::from_matrix(DMatrix::from_element(2, 2, -1.0)).unwrap();
        let p = ApParams {
            damping: 0.3,
            ..Default::default()
        };
        assert!(affinity_propagation(&s, &p).is_err());
    }

    #[test]
    fn k_larger_than_live_rejected() {
        let c = cov(&[1.0, 0.0, 0.0, 0.0], 2);
        assert!(select_k_exemplars(&c, 2, &ApParams::default(), 10).is_err());
        let ex = select_k_exemplars(&c, 1, &ApParams::default(), 10).unwrap();
        assert_eq!(ex.indices, vec![0]);
        assert_eq!(ex.assignment, vec![0, 0]);
    }
}
