//! Starting dictionaries: spherical K-means over whitened patches and a
//! random-patch baseline.

use nalgebra::{DMatrix, DMatrixView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, PdlError, Result};
use crate::linalg::{dot, norm, RowMatrix};
use crate::patches::PatchMatrix;

pub const DEFAULT_KMEANS_ITERS: usize = 50;

const DUPLICATE_DOT: f64 = 1.0 - 1e-9;
const ASSIGN_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    KMeans,
    Random,
    Subset,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::KMeans => 0,
            Provenance::Random => 1,
            Provenance::Subset => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Provenance::KMeans),
            1 => Some(Provenance::Random),
            2 => Some(Provenance::Subset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `M × d`, unit-norm rows.
    pub codes: RowMatrix,
    pub patch_side: usize,
    pub channels: usize,
    pub provenance: Provenance,
}

impl Dictionary {
    pub fn new(
        codes: RowMatrix,
        patch_side: usize,
        channels: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        check_dim(patch_side * patch_side * channels, codes.cols())?;
        Ok(Dictionary {
            codes,
            patch_side,
            channels,
            provenance,
        })
    }

    pub fn size(&self) -> usize {
        self.codes.rows()
    }

    pub fn dim(&self) -> usize {
        self.codes.cols()
    }

    pub fn code(&self, k: usize) -> &[f64] {
        self.codes.row(k)
    }

    /// Sub-dictionary made of the given code indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dictionary> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.size()) {
            return Err(PdlError::arg(format!(
                "code index {bad} out of range for dictionary of {}",
                self.size()
            )));
        }
        Ok(Dictionary {
            codes: self.codes.select_rows(indices),
            patch_side: self.patch_side,
            channels: self.channels,
            provenance: Provenance::Subset,
        })
    }

    /// Column-major `M × d` copy for matrix products.
    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        self.codes.to_dmatrix()
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

fn is_duplicate(candidate: &[f64], chosen: &[Vec<f64>]) -> bool {
    chosen.iter().any(|c| dot(c, candidate) > DUPLICATE_DOT)
}

/// `m` normalized patches drawn without replacement, skipping zero-norm
/// patches and exact duplicates of already chosen ones.
fn distinct_normalized_rows(
    patches: &PatchMatrix,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in order {
        if chosen.len() == m {
            break;
        }
        if let Some(u) = normalized(patches.row(i)) {
            if !is_duplicate(&u, &chosen) {
                chosen.push(u);
            }
        }
    }
    if chosen.len() < m {
        log::warn!(
            "only {} distinct non-zero patches for {m} codes; filling with random directions",
            chosen.len()
        );
        while chosen.len() < m {
            let u = random_unit(patches.dim(), rng);
            if !is_duplicate(&u, &chosen) {
                chosen.push(u);
            }
        }
    }
    chosen
}

pub fn random_dictionary(patches: &PatchMatrix, m: usize, seed: u64) -> Result<Dictionary> {
    if m == 0 || patches.len() < m {
        return Err(PdlError::arg(format!(
            "cannot pick {m} codes from {} patches",
            patches.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = distinct_normalized_rows(patches, m, &mut rng);
    Dictionary::new(
        RowMatrix::from_rows(&rows)?,
        patches.side,
        patches.channels,
        Provenance::Random,
    )
}

#[derive(Debug, Clone, Default)]
pub struct KMeansTrace {
    /// `sum_i min_j ||p_i - d_j||^2` measured at every assignment step,
    /// including one final evaluation after the last update.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub reseeds: usize,
    pub converged: bool,
}

/// Assign every patch to its best code (max dot product, lowest index on
/// ties). Returns the assignments and the K-means objective.
pub fn assign(patches: &PatchMatrix, codes: &RowMatrix) -> (Vec<u32>, f64) {
    let d = patches.dim();
    let code_mat = codes.to_dmatrix();
    let m = codes.rows();
    let parts: Vec<(Vec<u32>, f64)> = patches
        .data
        .as_slice()
        .par_chunks(ASSIGN_CHUNK * d)
        .map(|chunk| {
            let n = chunk.len() / d;
            let view = DMatrixView::from_slice(chunk, d, n);
            let scores = &code_mat * view;
            let mut labels = Vec::with_capacity(n);
            let mut obj = 0.0;
            for (j, col) in scores.column_iter().enumerate() {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (k, &v) in col.iter().enumerate().take(m) {
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                let p = &chunk[j * d..(j + 1) * d];
                obj += dot(p, p) - 2.0 * best_v + 1.0;
                labels.push(best as u32);
            }
            (labels, obj)
        })
        .collect();
    let mut labels = Vec::with_capacity(patches.len());
    let mut objective = 0.0;
    for (l, o) in parts {
        labels.extend(l);
        objective += o;
    }
    (labels, objective)
}

fn reseed_row(patches: &PatchMatrix, rng: &mut ChaCha8Rng) -> Vec<f64> {
    for _ in 0..64 {
        let i = rng.gen_range(0..patches.len());
        if let Some(u) = normalized(patches.row(i)) {
            return u;
        }
    }
    random_unit(patches.dim(), rng)
}

/// Spherical K-means from explicit initial codes.
pub fn kmeans_spherical_from(
    patches: &PatchMatrix,
    init: RowMatrix,
    iters: usize,
    seed: u64,
) -> Result<(Dictionary, KMeansTrace)> {
    let m = init.rows();
    check_dim(patches.dim(), init.cols())?;
    if m == 0 || patches.len() < m {
        return Err(PdlError::arg(format!(
            "cannot learn {m} codes from {} patches",
            patches.len()
        )));
    }
    let d = patches.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b6d_6561_6e73);
    let mut codes = init;
    let mut trace = KMeansTrace::default();
    let mut previous: Option<Vec<u32>> = None;

    for _ in 0..iters {
        let (labels, objective) = assign(patches, &codes);
        trace.objectives.push(objective);
        if previous.as_ref() == Some(&labels) {
            trace.converged = true;
            break;
        }
        trace.iterations += 1;

        let mut sums = vec![0.0; m * d];
        for (i, &k) in labels.iter().enumerate() {
            let k = k as usize;
            sums[k * d..(k + 1) * d]
                .iter_mut()
                .zip(patches.row(i))
                .for_each(|(s, p)| *s += p);
        }
        for k in 0..m {
            let row = match normalized(&sums[k * d..(k + 1) * d]) {
                Some(u) => u,
                None => {
                    trace.reseeds += 1;
                    reseed_row(patches, &mut rng)
                }
            };
            codes.row_mut(k).copy_from_slice(&row);
        }
        previous = Some(labels);
    }
    if !trace.converged {
        trace.objectives.push(assign(patches, &codes).1);
    }

    // Duplicate codes can only survive as empty clusters (ties go to the
    // lower index), so replacing them never raises the objective.
    for k in 1..m {
        let dup = (0..k).any(|j| dot(codes.row(j), codes.row(k)) > DUPLICATE_DOT);
        if dup {
            let existing: Vec<Vec<f64>> = (0..m).map(|j| codes.row(j).to_vec()).collect();
            let mut fresh = reseed_row(patches, &mut rng);
            let mut tries = 0;
            while is_duplicate(&fresh, &existing) {
                tries += 1;
                fresh = if tries < 64 {
                    reseed_row(patches, &mut rng)
                } else {
                    random_unit(d, &mut rng)
                };
            }
            codes.row_mut(k).copy_from_slice(&fresh);
            trace.reseeds += 1;
        }
    }

    let dict = Dictionary::new(codes, patches.side, patches.channels, Provenance::KMeans)?;
    Ok((dict, trace))
}

pub fn kmeans_spherical_traced(
    patches: &PatchMatrix,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<(Dictionary, KMeansTrace)> {
    if m == 0 || patches.len() < m {
        return Err(PdlError::arg(format!(
            "cannot learn {m} codes from {} patches",
            patches.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = RowMatrix::from_rows(&distinct_normalized_rows(patches, m, &mut rng))?;
    kmeans_spherical_from(patches, init, iters, seed)
}

pub fn kmeans_spherical(
    patches: &PatchMatrix,
    m: usize,
    iters: usize,
    seed: u64,
) -> Result<Dictionary> {
    kmeans_spherical_traced(patches, m, iters, seed).map(|(d, _)| d)
}
