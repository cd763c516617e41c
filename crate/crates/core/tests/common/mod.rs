//! Brute-force reference implementations used by the integration tests.
#![allow(dead_code)]

use txanom::numcore::{Prng, Tensor};

/// Textbook two-pass sample Pearson correlation; 0 for a constant vector.
pub fn pearson_naive(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

/// All-pairs k-NN correlation graph as a dense 0/1 matrix: top-k by |corr|
/// (ties to the smaller index), kept when |corr| >= tau, union-symmetrised.
pub fn knn_dense(x: &Tensor<f64>, k: usize, tau: f64) -> Vec<Vec<u8>> {
    let n = x.rows();
    let mut a = vec![vec![0u8; n]; n];
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (pearson_naive(x.row(i), x.row(j)).abs(), j))
            .collect();
        cand.sort_by(|p, q| q.0.partial_cmp(&p.0).unwrap().then(p.1.cmp(&q.1)));
        for &(c, j) in cand.iter().take(k) {
            if c >= tau {
                a[i][j] = 1;
                a[j][i] = 1;
            }
        }
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` computed densely.
pub fn normalize_dense(a: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + a[i].iter().map(|&v| v as f64).sum::<f64>())
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let w = if i == j { 1.0 } else { a[i][j] as f64 };
                    w / (deg[i] * deg[j]).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
pub fn spectral_radius(m: &[Vec<f64>], iters: usize) -> f64 {
    let n = m.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin() * 0.5).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// ROC AUC by sweeping every distinct score as a threshold (descending) and
/// integrating TPR over FPR with the trapezoid rule.
pub fn auc_sweep(labels: &[u8], scores: &[f64]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    for t in thresholds {
        let tp = labels.iter().zip(scores).filter(|(&l, &s)| l == 1 && s >= t).count() as f64;
        let fp = labels.iter().zip(scores).filter(|(&l, &s)| l == 0 && s >= t).count() as f64;
        let (tpr, fpr) = (tp / p, fp / n);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

fn gini(c0: usize, c1: usize) -> f64 {
    let n = (c0 + c1) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (c0 as f64 / n, c1 as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Exhaustive best split: every feature, every midpoint between consecutive
/// distinct values, scored by weighted Gini decrease. Returns
/// `(feature, threshold, decrease)`; ties keep the first candidate found in
/// (feature, threshold) ascending order. `None` when nothing decreases the
/// impurity.
pub fn best_split_brute(x: &Tensor<f64>, y: &[u8], rows: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    let c1 = rows.iter().filter(|&&r| y[r] == 1).count();
    let parent = gini(n - c1, c1);
    let mut feats = features.to_vec();
    feats.sort_unstable();
    feats.dedup();
    let mut best: Option<(usize, f64, f64)> = None;
    for &f in &feats {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x.at(r, f)).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let mut thr = w[0] + (w[1] - w[0]) / 2.0;
            if thr >= w[1] {
                thr = w[0];
            }
            let (mut l, mut r) = ([0usize; 2], [0usize; 2]);
            for &row in rows {
                let side = if x.at(row, f) <= thr { &mut l } else { &mut r };
                side[y[row] as usize] += 1;
            }
            let nl = (l[0] + l[1]) as f64;
            let nr = (r[0] + r[1]) as f64;
            let dec = parent - nl / n as f64 * gini(l[0], l[1]) - nr / n as f64 * gini(r[0], r[1]);
            if dec <= 1e-12 {
                continue;
            }
            if best.map_or(true, |(_, _, d)| dec > d + 1e-12) {
                best = Some((f, thr, dec));
            }
        }
    }
    best
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Prng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}
