mod common;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use txanom::dataio::{apply_scaler, chrono_split, fit_scaler, make_windows, FeatureTable};
use txanom::forest::{fit_forest, forest_predict_proba};
use txanom::graphbuild::{knn_corr_graph, normalize_adjacency};
use txanom::metrics::{auc_roc, auc_roc_trapezoid, scalar_metrics, Averaging, ConfusionMatrix};
use txanom::numcore::Tensor;
use txanom::runner::{parse_reports, Counts, MetricsBlock, Report};

fn matrix(max_rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    (3..max_rows).prop_flat_map(move |n| {
        prop::collection::vec(-10.0f64..10.0, n * cols).prop_map(move |d| Tensor::new(vec![n, cols], d).unwrap())
    })
}

fn scored_labels() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..80)
        .prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..6, n)))
        .prop_map(|(mut l, s)| {
            l[0] = 0;
            l[1] = 1;
            (l, s.into_iter().map(|v| v as f64 / 5.0).collect())
        })
}

fn table(x: Tensor<f64>, labels: Vec<u8>) -> FeatureTable {
    let n = x.rows();
    let cols = x.cols();
    let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    FeatureTable {
        matrix: x,
        columns: (0..cols).map(|c| format!("c{c}")).collect(),
        labels,
        timestamps: (0..n).map(|i| t0 + Duration::hours(i as i64)).collect(),
        hashes: (0..n).map(|i| format!("{i:08}")).collect(),
        missing: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_graph_follows_row_permutation(x in matrix(25, 5), k in 1usize..5, shift in 1usize..24) {
        let n = x.rows();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted = x.gather_rows(&perm).unwrap();
        let a = knn_corr_graph(&x, k, 0.2).unwrap();
        let b = knn_corr_graph(&permuted, k, 0.2).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(b.weight(i, j).is_some(), a.weight(perm[i], perm[j]).is_some());
            }
        }
    }

    #[test]
    fn knn_graph_is_symmetric_without_self_loops(x in matrix(30, 4), k in 1usize..6, tau in 0.0f64..0.9) {
        let a = knn_corr_graph(&x, k, tau).unwrap();
        for (i, j, w) in a.edges() {
            prop_assert!(i != j);
            prop_assert_eq!(w, 1.0);
            prop_assert_eq!(a.weight(j, i), Some(1.0));
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric_and_bounded(x in matrix(30, 4), k in 1usize..6) {
        let a = knn_corr_graph(&x, k, 0.2).unwrap();
        let g = normalize_adjacency(&a).unwrap();
        for i in 0..g.n() {
            let deg = 1 + a.neighbors(i).count();
            prop_assert_eq!(g.get(i, i), 1.0 / deg as f64);
            for (j, v) in g.row(i) {
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert_eq!(v.to_bits(), g.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn scaled_training_columns_lie_in_unit_interval(x in matrix(40, 3)) {
        let n = x.rows();
        let t = table(x, vec![0; n]);
        let names: Vec<&str> = t.columns.iter().map(String::as_str).collect();
        let scaled = apply_scaler(&t, &fit_scaler(&t, &names).unwrap()).unwrap();
        prop_assert!(scaled.matrix.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn chrono_split_is_strict(x in matrix(40, 2), cut in 0usize..40) {
        let n = x.rows();
        let t = table(x, vec![0; n]);
        let boundary = t.timestamps[cut.min(n - 1)];
        let (train, test) = chrono_split(&t, boundary);
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(train.timestamps.iter().all(|ts| *ts < boundary));
        prop_assert!(test.timestamps.iter().all(|ts| *ts >= boundary));
    }

    #[test]
    fn windows_take_final_step_labels(x in matrix(40, 3), t in 1usize..12, seed in any::<u64>()) {
        let n = x.rows();
        let labels: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let w = make_windows(&x, &labels, t, 1);
        prop_assert_eq!(w.len(), (n + 1).saturating_sub(t));
        for (idx, &s) in w.starts.iter().enumerate() {
            prop_assert_eq!(w.window_labels[idx], labels[s + t - 1]);
            prop_assert_eq!(w.windows[idx].data(), &x.data()[s * 3..(s + t) * 3]);
        }
    }

    #[test]
    fn auc_forms_agree((labels, scores) in scored_labels()) {
        let rank = auc_roc(&labels, &scores).unwrap();
        prop_assert!((rank - auc_roc_trapezoid(&labels, &scores).unwrap()).abs() <= 1e-12);
        prop_assert!((rank - common::auc_sweep(&labels, &scores)).abs() <= 1e-12);
    }

    #[test]
    fn auc_respects_monotone_maps_and_reversal((labels, scores) in scored_labels()) {
        let rank = auc_roc(&labels, &scores).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert_eq!(auc_roc(&labels, &squashed).unwrap(), rank);
        let reversed: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc_roc(&labels, &reversed).unwrap() - (1.0 - rank)).abs() <= 1e-12);
    }

    #[test]
    fn metric_identities(tp in 0u64..300, fp in 0u64..300, tn in 0u64..300, fn_ in 0u64..300) {
        let cm = ConfusionMatrix { tp, fp, tn, fn_ };
        prop_assume!(cm.total() > 0);
        let w = scalar_metrics(&cm, Averaging::Weighted).unwrap();
        let b = scalar_metrics(&cm, Averaging::Binary).unwrap();
        prop_assert_eq!(w.recall, w.accuracy);
        prop_assert_eq!(b.accuracy, w.accuracy);
        for m in [&w, &b] {
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        if b.precision + b.recall > 0.0 {
            let harmonic = 2.0 * b.precision * b.recall / (b.precision + b.recall);
            prop_assert!((b.f1 - harmonic).abs() <= 1e-12);
        }
    }

    #[test]
    fn forest_is_deterministic_per_seed(x in matrix(30, 3), seed in any::<u64>()) {
        let n = x.rows();
        let y: Vec<u8> = (0..n).map(|i| (x.at(i, 0) > 0.0) as u8).collect();
        let a = forest_predict_proba(&fit_forest(&x, &y, 7, seed).unwrap(), &x).unwrap();
        let b = forest_predict_proba(&fit_forest(&x, &y, 7, seed).unwrap(), &x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn report_json_round_trips_exactly(m in prop::array::uniform8(any::<f64>()), n in 0usize..100_000) {
        let fin = |v: f64| if v.is_finite() { v } else { 0.5 };
        let report = Report {
            model: "gcn_gru".into(),
            config_digest: "abc".into(),
            counts: Counts { train: n, test: n / 2, pos: n / 3, neg: n / 2 - n / 3 },
            metrics: MetricsBlock {
                accuracy: fin(m[0]),
                precision_binary: fin(m[1]),
                recall_binary: fin(m[2]),
                f1_binary: fin(m[3]),
                precision_weighted: fin(m[4]),
                recall_weighted: fin(m[5]),
                f1_weighted: fin(m[6]),
                auc_roc: m[7].is_finite().then_some(m[7]),
            },
            history: m.iter().copied().map(fin).collect(),
            settings: Default::default(),
        };
        let back = parse_reports(&report.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &report);
    }
}
