mod common;

use txanom::forest::best_split;
use txanom::graphbuild::{chunked_graph, knn_corr_graph, normalize_adjacency, pearson};
use txanom::numcore::{Prng, Tensor};

#[test]
fn pearson_matches_two_pass_formula() {
    let mut rng = Prng::new(11);
    for _ in 0..200 {
        let n = 2 + rng.below(10);
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let got = pearson(&x, &y).unwrap();
        assert!((got - common::pearson_naive(&x, &y)).abs() < 1e-12);
    }
}

#[test]
fn knn_graph_matches_brute_force() {
    let mut rng = Prng::new(12);
    for case in 0..60 {
        let n = 2 + rng.below(40);
        let f = 3 + rng.below(4);
        let k = 1 + rng.below(6);
        let tau = [0.0, 0.2, 0.5, 0.9][case % 4];
        let x = common::random_matrix(n, f, &mut rng);
        let a = knn_corr_graph(&x, k, tau).unwrap();
        let want = common::knn_dense(&x, k, tau);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.weight(i, j).is_some(), want[i][j] == 1, "case {case} edge ({i},{j})");
            }
        }
    }
}

#[test]
fn knn_graph_breaks_ties_toward_lower_index() {
    // Rows 1..4 are row 0 scaled by ±2^k, so every pair has the same |corr|.
    let x = Tensor::from_rows(&[
        vec![1.0, 2.0, 3.0],
        vec![2.0, 4.0, 6.0],
        vec![4.0, 8.0, 12.0],
        vec![-1.0, -2.0, -3.0],
        vec![0.5, 1.0, 1.5],
    ])
    .unwrap();
    let a = knn_corr_graph(&x, 1, 0.0).unwrap();
    let want = common::knn_dense(&x, 1, 0.0);
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(a.weight(i, j).is_some(), want[i][j] == 1);
        }
    }
    assert!(a.weight(0, 1).is_some());
    assert!(a.weight(4, 0).is_some());
}

#[test]
fn normalization_matches_dense_formula() {
    let mut rng = Prng::new(13);
    for _ in 0..40 {
        let n = 2 + rng.below(30);
        let x = common::random_matrix(n, 4, &mut rng);
        let k = 1 + rng.below(4);
        let g = normalize_adjacency(&knn_corr_graph(&x, k, 0.2).unwrap()).unwrap();
        let want = common::normalize_dense(&common::knn_dense(&x, k, 0.2));
        for i in 0..n {
            for j in 0..n {
                assert!((g.get(i, j) - want[i][j]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn chunked_graph_is_block_diagonal_union_of_block_graphs() {
    let mut rng = Prng::new(14);
    let n = 53;
    let x = common::random_matrix(n, 4, &mut rng);
    let block = 16;
    let g = chunked_graph(&x, block, 3, 0.2).unwrap();
    let mut expected_nnz = 0;
    for start in (0..n).step_by(block) {
        let end = (start + block).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let sub = x.gather_rows(&rows).unwrap();
        let want = if end - start >= 2 {
            common::normalize_dense(&common::knn_dense(&sub, 3, 0.2))
        } else {
            vec![vec![1.0]]
        };
        for (bi, row) in want.iter().enumerate() {
            let outside: f64 = g
                .row(start + bi)
                .filter(|&(j, _)| j < start || j >= end)
                .map(|(_, v)| v)
                .sum();
            assert_eq!(outside, 0.0, "edge leaves block at row {}", start + bi);
            for (bj, &w) in row.iter().enumerate() {
                assert!((g.get(start + bi, start + bj) - w).abs() < 1e-15);
                expected_nnz += (w != 0.0) as usize;
            }
        }
    }
    assert_eq!(g.nnz(), expected_nnz);
}

#[test]
fn best_split_matches_exhaustive_search() {
    let mut rng = Prng::new(15);
    for case in 0..300 {
        let n = 2 + rng.below(30);
        let f = 1 + rng.below(4);
        let data: Vec<f64> = (0..n * f)
            .map(|_| if rng.bernoulli(0.5) { rng.below(3) as f64 } else { rng.uniform_in(-1.0, 1.0) })
            .collect();
        let x = Tensor::new(vec![n, f], data).unwrap();
        let y: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.4) as u8).collect();
        let rows: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
        let features: Vec<usize> = (0..f).collect();
        let got = best_split(&x, &y, &rows, &features);
        let want = common::best_split_brute(&x, &y, &rows, &features);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some((feature, threshold, decrease))) => {
                assert_eq!((s.feature, s.threshold), (feature, threshold), "case {case}");
                assert!((s.decrease - decrease).abs() < 1e-12);
            }
            (g, w) => panic!("case {case}: got {:?}, brute force {w:?}", g.map(|s| (s.feature, s.threshold))),
        }
    }
}
