mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::*;
use psmt::embedding::{
    build_derivative_operator, compute_covariance, default_ridge, embedding_objective, solve_embedding,
    whitening_residual,
};
use psmt::predictor::{log_mse, recover_sparse_code, LogBase, RecoveryConfig};
use psmt::sparse::{encode, lasso_kkt_residual, CodingConfig, SparseCodeMatrix};
use psmt::stats::{median_iqr, trimmed_mean_std};
use psmt::topology::{build_graph, component_trace, cosine_similarity_columns, SimilarityMatrix};
use psmt::embedding::EmbeddingMatrix;

#[test]
fn encode_matches_support_enumeration() {
    let mut r = rng(11);
    let mut certified = 0;
    for _ in 0..40 {
        let dict = random_dictionary(&mut r, 8, 16);
        // a sparse non-negative combination of two atoms plus a little noise
        let mut a = DVector::zeros(16);
        a[r.gen_range(0..16)] = r.gen_range(0.5..2.0);
        a[r.gen_range(0..16)] += r.gen_range(0.5..2.0);
        let noise = DVector::from_fn(8, |_, _| 0.01 * gaussian(&mut r));
        let x = dict.atoms() * &a + noise;
        let lambda = 0.1;
        let Some(want) = lasso_by_enumeration(dict.atoms(), &x, lambda, 3) else { continue };
        certified += 1;
        let cfg = CodingConfig {
            lambda_sc: lambda,
            tolerance: 1e-10,
            ..CodingConfig::default()
        };
        let got = encode(&dict, x.as_slice(), &cfg).unwrap();
        let diff = (&got.code - &want).amax();
        assert!(diff < 1e-6, "code differs from enumeration by {diff}");
    }
    assert!(certified >= 30, "only {certified} instances had a certified small support");
}

#[test]
fn embedding_matches_rayleigh_grid() {
    let mut r = rng(12);
    for case in 0..12 {
        let m = 2 + case % 4;
        let w = r.gen_range(m + 3..=20);
        let a = DMatrix::from_fn(m, w, |_, _| r.gen_range(0.0..1.0));
        let codes = SparseCodeMatrix::with_start(a.clone(), 0).unwrap();
        let d = build_derivative_operator(w).unwrap();
        let ridge = default_ridge(&codes, false);
        let emb = solve_embedding(&codes, &d, 1, ridge).unwrap();
        let got = embedding_objective(&emb, &codes, &d).unwrap();

        let ad = &a * d.matrix();
        let b = &ad * ad.transpose();
        let v = &a * a.transpose() / w as f64 + DMatrix::identity(m, m) * ridge;
        let want = rayleigh_grid_min(&b, &v);
        assert!(got <= want * (1.0 + 1e-9) + 1e-12, "solver {got} above grid {want}");
        assert!(want <= got * (1.0 + 1e-3) + 1e-12, "grid {want} far above solver {got}");

        let cov = compute_covariance(&codes, ridge, false).unwrap();
        assert!(whitening_residual(&emb, &cov) < 1e-6);
    }
}

#[test]
fn embedding_rows_are_generalized_eigenvectors() {
    let mut r = rng(13);
    let (m, w, f) = (10, 40, 3);
    let a = DMatrix::from_fn(m, w, |_, _| r.gen_range(0.0..1.0));
    let codes = SparseCodeMatrix::with_start(a.clone(), 0).unwrap();
    let d = build_derivative_operator(w).unwrap();
    let ridge = default_ridge(&codes, false);
    let emb = solve_embedding(&codes, &d, f, ridge).unwrap();
    let ad = &a * d.matrix();
    let b = &ad * ad.transpose();
    let v = &a * a.transpose() / w as f64 + DMatrix::identity(m, m) * ridge;
    for i in 0..f {
        let p = emb.p.row(i).transpose();
        let lam = emb.eigenvalues[i];
        // B p = lambda V p
        let res = (&b * &p - (&v * &p) * lam).amax();
        assert!(res < 1e-8 * b.amax().max(1.0), "row {i} residual {res}");
    }
    assert!(emb.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn recover_one_dimensional_grid() {
    // (a - 1)^2 + a on a dense grid
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=200_000 {
        let a = i as f64 * 1e-5;
        let v = (a - 1.0) * (a - 1.0) + a;
        if v < best.0 {
            best = (v, a);
        }
    }
    let p = EmbeddingMatrix::from_matrix(DMatrix::from_element(1, 1, 1.0));
    let cfg = RecoveryConfig {
        tolerance: 1e-12,
        ..RecoveryConfig::default()
    };
    let rec = recover_sparse_code(&p, &DVector::from_element(1, 1.0), 1.0, &cfg).unwrap();
    assert!((rec.code[0] - best.1).abs() < 1e-5);
    assert!((rec.code[0] - 0.5).abs() < 1e-10);
}

#[test]
fn log_mse_naive_loop() {
    let mut r = rng(14);
    for _ in 0..50 {
        let n = r.gen_range(1..40);
        let a: Vec<f64> = (0..n).map(|_| gaussian(&mut r)).collect();
        let b: Vec<f64> = (0..n).map(|_| gaussian(&mut r)).collect();
        let mut s = 0.0;
        for i in 0..n {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let want = (s / n as f64).ln();
        let got = log_mse(&a, &b, LogBase::Natural).unwrap();
        assert!((got - want).abs() < 1e-12);
        let got10 = log_mse(&a, &b, LogBase::Ten).unwrap();
        assert!((got10 - want / std::f64::consts::LN_10).abs() < 1e-12);
    }
}

#[test]
fn trimmed_and_quantiles_naive() {
    let mut r = rng(15);
    for _ in 0..100 {
        let n = r.gen_range(1..60);
        let v: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
        let p = [0.0, 0.1, 0.25, 0.4][r.gen_range(0..4)];
        let (m, s) = trimmed_mean_std(&v, p).unwrap();
        let (wm, ws) = naive_trimmed(&v, p);
        assert!((m - wm).abs() < 1e-12 && (s - ws).abs() < 1e-12);
        let (med, q1, q3) = median_iqr(&v).unwrap();
        assert!((med - naive_quantile(&v, 0.5)).abs() < 1e-12);
        assert!((q1 - naive_quantile(&v, 0.25)).abs() < 1e-12);
        assert!((q3 - naive_quantile(&v, 0.75)).abs() < 1e-12);
    }
}

#[test]
fn cosine_similarity_naive() {
    let mut r = rng(16);
    let mut p = gaussian_matrix(&mut r, 4, 9);
    p.column_mut(3).fill(0.0);
    let s = cosine_similarity_columns(&EmbeddingMatrix::from_matrix(p.clone()));
    for i in 0..9 {
        for j in 0..9 {
            let (a, b) = (p.column(i), p.column(j));
            let want = if a.norm() == 0.0 || b.norm() == 0.0 {
                0.0
            } else {
                a.dot(&b) / (a.norm() * b.norm())
            };
            assert!((s.values[(i, j)] - want).abs() < 1e-12, "({i},{j})");
        }
    }
}

#[test]
fn components_match_union_find() {
    let mut r = rng(17);
    for _ in 0..20 {
        let n = r.gen_range(2..120);
        let s = random_similarity(&mut r, n);
        let threshold = r.gen_range(0.3..0.99);
        let g = build_graph(&SimilarityMatrix { values: s.clone(), zero_columns: vec![] }, threshold, 0).unwrap();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if s[(i, j)] > threshold {
                    edges.push((i, j));
                }
            }
        }
        let items: Vec<usize> = (0..n.min(5)).collect();
        let trace = component_trace(&[g], &items).unwrap();
        assert_eq!(trace.sizes[0], union_find_sizes(n, &edges, &items));
    }
}

#[test]
fn encode_kkt_matches_direct_formula() {
    let mut r = rng(18);
    let dict = random_dictionary(&mut r, 12, 24);
    let x: Vec<f64> = (0..12).map(|_| gaussian(&mut r)).collect();
    let cfg = CodingConfig {
        lambda_sc: 0.2,
        ..CodingConfig::default()
    };
    let out = encode(&dict, &x, &cfg).unwrap();
    let direct = lasso_kkt_residual(&dict, &x, &out.code, 0.2);
    assert!((direct - out.kkt_residual).abs() < 1e-9);
    assert!(direct <= cfg.tolerance);
}
