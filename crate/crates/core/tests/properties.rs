use nalgebra::DMatrix;
use pdl::datasets::{
    parse_cifar10, resize_bilinear, write_cifar10, LabeledDataset, RawImage, Split,
};
use pdl::dictionary::{kmeans_spherical_from, kmeans_spherical_traced, random_dictionary};
use pdl::encoder::{EncoderConfig, FeatureExtractor, PoolGrid, PoolOp};
use pdl::linalg::RowMatrix;
use pdl::model::ModelFile;
use pdl::nystrom::{apply_rescale, fit_transform_subset, nystrom_reconstruct};
use pdl::patches::{contrast_normalize, PatchMatrix, ZcaWhitener};
use pdl::selection::{
    affinity_propagation, build_similarity, estimate_covariance, select_k_exemplars, ApParams,
    SimilarityMatrix,
};
use proptest::prelude::*;
use std::path::Path;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn psd(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_n, 1..=max_n)
        .prop_flat_map(|(n, r)| matrix(n, r))
        .prop_map(|g| {
            let c = &g * g.transpose();
            (&c + c.transpose()) * 0.5
        })
}

fn image(max_side: usize) -> impl Strategy<Value = RawImage> {
    (
        2..=max_side,
        2..=max_side,
        prop::sample::select(vec![1usize, 3]),
    )
        .prop_flat_map(|(w, h, c)| {
            prop::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |px| RawImage::new(w, h, c, px).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resize_stays_within_source_range(img in image(12), w in 1usize..20, h in 1usize..20) {
        let out = resize_bilinear(&img, w, h).unwrap();
        prop_assert_eq!((out.width, out.height, out.channels), (w, h, img.channels));
        for ch in 0..img.channels {
            let plane = img.plane(ch);
            let (lo, hi) = (*plane.iter().min().unwrap(), *plane.iter().max().unwrap());
            prop_assert!(out.plane(ch).iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn resize_keeps_constant_images(v in any::<u8>(), w in 1usize..16, h in 1usize..16) {
        let img = RawImage::filled(7, 5, 3, v);
        prop_assert!(resize_bilinear(&img, w, h).unwrap().pixels.iter().all(|&p| p == v));
    }

    #[test]
    fn cifar_records_round_trip(seed in any::<u64>(), n in 1usize..6) {
        let images: Vec<RawImage> = (0..n)
            .map(|i| {
                let px = (0..32 * 32 * 3).map(|j| (seed as usize + i * 31 + j * 7) as u8).collect();
                RawImage::new(32, 32, 3, px).unwrap()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| (seed as usize + i) % 10).collect();
        let ds = LabeledDataset::new(images, labels, 10, Split::Train).unwrap();
        let bytes = write_cifar10(&ds).unwrap();
        let (imgs, labs) = parse_cifar10(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(labs, ds.labels.clone());
        prop_assert_eq!(imgs, ds.images.clone());
        prop_assert!(parse_cifar10(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }

    #[test]
    fn contrast_normalized_rows_are_centered(m in matrix(6, 12), bias in 0.0f64..20.0) {
        let p = PatchMatrix::new(RowMatrix::from_dmatrix(&m), 2, 3).unwrap();
        let n = contrast_normalize(&p, bias + 1e-3).unwrap();
        for r in 0..n.len() {
            let mean: f64 = n.row(r).iter().sum::<f64>() / 12.0;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_objective_never_increases(m in matrix(60, 12), k in 1usize..8, seed in any::<u64>()) {
        let p = PatchMatrix::new(RowMatrix::from_dmatrix(&m), 2, 3).unwrap();
        let (dict, trace) = kmeans_spherical_traced(&p, k, 15, seed).unwrap();
        for w in trace.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9, "{:?}", trace.objectives);
        }
        for c in 0..dict.size() {
            let norm: f64 = dict.code(c).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_features_follow_code_permutation(img in image(14), seed in any::<u64>(), alpha in 0.0f64..1.0) {
        prop_assume!(img.width >= 6 && img.height >= 6);
        let d = 4 * img.channels;
        let rows = DMatrix::from_fn(40, d, |r, c| ((r * 13 + c * 7 + seed as usize % 97) % 11) as f64 - 5.0);
        let p = PatchMatrix::new(RowMatrix::from_dmatrix(&rows), 2, img.channels).unwrap();
        let dict = random_dictionary(&p, 5, seed).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let shuffled = dict.subset(&perm).unwrap();
        let w = ZcaWhitener::identity(d);
        let cfg = EncoderConfig { alpha, pool_grid: PoolGrid::new(2, 2), pool_op: PoolOp::Avg, stride: 1 };
        let a = FeatureExtractor::new(&dict, &w, cfg, 10.0).unwrap().encode_and_pool(&img).unwrap();
        let b = FeatureExtractor::new(&shuffled, &w, cfg, 10.0).unwrap().encode_and_pool(&img).unwrap();
        for cell in 0..4 {
            for (j, &k) in perm.iter().enumerate() {
                prop_assert!((a.cell(cell)[k] - b.cell(cell)[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(x in matrix(40, 8), pref in -4.0f64..0.0) {
        let cov = estimate_covariance(&RowMatrix::from_dmatrix(&x)).unwrap();
        let sim = build_similarity(&cov, pref, 1e-12).unwrap();
        for i in 0..8 {
            prop_assert_eq!(sim.s[(i, i)], pref);
            for j in 0..8 {
                prop_assert!((sim.s[(i, j)] - sim.s[(j, i)]).abs() < 1e-12);
                if i != j {
                    prop_assert!(sim.s[(i, j)] >= -4.0 - 1e-12 && sim.s[(i, j)] <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn dead_codes_are_never_exemplars(x in matrix(50, 6), dead in 0usize..6, k in 1usize..5) {
        let mut x = x;
        x.column_mut(dead).fill(0.25);
        let cov = estimate_covariance(&RowMatrix::from_dmatrix(&x)).unwrap();
        let sel = select_k_exemplars(&cov, k, &ApParams::default(), 30).unwrap();
        prop_assert!(sel.is_consistent());
        prop_assert!(!sel.indices.contains(&dead));
        prop_assert_eq!(sel.len(), k);
    }

    #[test]
    fn ap_output_is_closed(pts in prop::collection::vec(-5.0f64..5.0, 2..40), pref in -30.0f64..-0.01) {
        let n = pts.len();
        let mut s = DMatrix::from_fn(n, n, |i, j| -(pts[i] - pts[j]).powi(2));
        s.fill_diagonal(pref);
        let sel = affinity_propagation(&SimilarityMatrix::from_matrix(s).unwrap(), &ApParams::default()).unwrap();
        prop_assert!(sel.is_consistent());
        prop_assert!(!sel.is_empty());
    }

    #[test]
    fn nystrom_residual_is_psd(c in psd(12), pick in prop::collection::vec(any::<bool>(), 12)) {
        let n = c.nrows();
        let mut subset: Vec<usize> = (0..n).filter(|&i| pick[i]).collect();
        if subset.is_empty() {
            subset.push(0);
        }
        let r = nystrom_reconstruct(&c, &subset).unwrap();
        let top = c.symmetric_eigenvalues().max().max(1e-12);
        let min = (&c - &r).symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8 * top, "min eigenvalue {min}");
        for &i in &subset {
            for j in 0..n {
                prop_assert!((r[(i, j)] - c[(i, j)]).abs() <= 1e-8 * top);
            }
        }
    }

    #[test]
    fn rescale_preserves_reconstruction_geometry(c in psd(10), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let n = c.nrows();
        prop_assume!(n >= 3);
        let t = fit_transform_subset(&c, &[0, 1, 2]).unwrap();
        let y = apply_rescale(&t, &x).unwrap();
        let ax = &t.a * DMatrix::from_column_slice(3, 1, &x);
        let lhs: f64 = y.iter().map(|v| v * v).sum();
        prop_assert!((lhs - ax.norm_squared()).abs() <= 1e-8 * (1.0 + ax.norm_squared()));
        for w in t.singular_values.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn truncated_model_files_are_rejected(cut in 0usize..200) {
        let mut f = ModelFile::new();
        f.put(&ZcaWhitener::identity(4));
        let bytes = f.to_bytes();
        prop_assume!(cut < bytes.len());
        prop_assert!(ModelFile::from_bytes(&bytes[..cut]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kmeans_ignores_patch_order(m in matrix(80, 12), shift in 1usize..80, k in 1usize..6) {
        let p = PatchMatrix::new(RowMatrix::from_dmatrix(&m), 2, 3).unwrap();
        let rows: Vec<usize> = (0..80).map(|i| (i + shift) % 80).collect();
        let q = PatchMatrix::new(p.data.select_rows(&rows), 2, 3).unwrap();
        let init = RowMatrix::from_rows(&(0..k).map(|i| p.row(i * 7).to_vec()).collect::<Vec<_>>()).unwrap();
        let (a, ta) = kmeans_spherical_from(&p, init.clone(), 20, 0).unwrap();
        let (b, tb) = kmeans_spherical_from(&q, init, 20, 0).unwrap();
        prop_assume!(ta.reseeds == 0 && tb.reseeds == 0);
        let mut used = vec![false; k];
        for i in 0..k {
            let j = (0..k).filter(|&j| !used[j]).min_by(|&x, &y| {
                let d = |j: usize| a.code(i).iter().zip(b.code(j)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                d(x).total_cmp(&d(y))
            }).unwrap();
            used[j] = true;
            let gap = a.code(i).iter().zip(b.code(j)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            prop_assert!(gap <= 1e-6, "code {i}: {gap}");
        }
    }
}
