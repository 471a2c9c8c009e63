mod common;

use common::*;
use kalm::contexts::{ContextBundle, ContextMask};
use kalm::insight::*;
use kalm::layers::FusionKind;
use kalm::model::*;
use kalm::KalmError;
use proptest::prelude::*;

fn tiny_model(cfg: &TrainConfig) -> KalmModel {
    KalmModel::new(&ModelSpec::from_config(cfg, cfg.n_classes), cfg.seed).unwrap()
}

fn tiny_setup() -> (TrainConfig, Vec<ContextBundle>) {
    let mut cfg = small_config();
    cfg.n_docs = 24;
    cfg.max_epochs = 2;
    let bundles = synthetic_bundles(&cfg);
    (cfg, bundles)
}

#[test]
fn position_labels_follow_the_active_contexts() {
    assert_eq!(position_labels(ContextMask::ALL), ["t_L", "g_L", "k_L", "t_G", "g_G", "k_G"]);
    let no_doc = ContextMask { doc: false, ..ContextMask::ALL };
    assert_eq!(position_labels(no_doc), ["t_L", "k_L", "t_G", "k_G"]);
}

#[test]
fn attention_report_rows_are_distributions_and_averaging_order_is_irrelevant() {
    let (cfg, bundles) = tiny_setup();
    let model = tiny_model(&cfg);
    let idx: Vec<usize> = (0..bundles.len()).collect();
    let eval = evaluate(&model, &bundles, &idx, true).unwrap();
    let report = attention_report_from(&eval.docs, ContextMask::ALL).unwrap();
    assert_eq!(report.layers.len(), cfg.n_layers);
    assert_eq!(report.n_docs, bundles.len());
    for m in &report.layers {
        assert_eq!(m.shape(), [6, 6]);
        for r in 0..6 {
            assert!((m.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let other = attention_report_docs_first(&eval.docs, ContextMask::ALL).unwrap();
    for (a, b) in report.layers.iter().zip(&other.layers) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
    assert_eq!(attention_report(&model, &bundles, &idx).unwrap(), report);
    let csv = report.to_csv();
    assert!(csv.starts_with("layer,row,t_L,g_L,k_L,t_G,g_G,k_G\n"));
    assert_eq!(csv.lines().count(), 1 + 6 * cfg.n_layers);
}

#[test]
fn attention_report_without_capture_is_a_config_error() {
    let (cfg, bundles) = tiny_setup();
    let model = tiny_model(&cfg);
    let eval = evaluate(&model, &bundles, &[0, 1], false).unwrap();
    let err = attention_report_from(&eval.docs, ContextMask::ALL).unwrap_err();
    assert!(matches!(err, KalmError::Config(_)), "{err}");
    let err = attention_report_from(&[], ContextMask::ALL).unwrap_err();
    assert!(matches!(err, KalmError::Config(_)), "{err}");

    let mut sum_cfg = cfg.clone();
    sum_cfg.fusion = FusionKind::Sum;
    let sum_model = tiny_model(&sum_cfg);
    let err = attention_report(&sum_model, &bundles, &[0]).unwrap_err();
    assert!(matches!(err, KalmError::Config(_)), "{err}");
}

#[test]
fn bins_examples() {
    let b = Bins::new(vec![3, 6]).unwrap();
    assert_eq!(b.len(), 3);
    assert_eq!([0, 2, 3, 5, 6, 100].map(|v| b.index(v)), [0, 0, 1, 1, 2, 2]);
    assert_eq!(b.label(0), "[-inf;3)");
    assert_eq!(b.label(1), "[3;6)");
    assert_eq!(b.label(2), "[6;inf)");
    assert!(matches!(Bins::new(vec![4, 4]), Err(KalmError::Config(_))));
    assert!(matches!(Bins::new(vec![5, 2]), Err(KalmError::Config(_))));
    assert_eq!(Bins::new(vec![]).unwrap().len(), 1);
}

#[test]
fn error_grid_partitions_the_evaluated_documents() {
    let (cfg, bundles) = tiny_setup();
    let model = tiny_model(&cfg);
    let idx: Vec<usize> = (0..bundles.len()).step_by(2).collect();
    let eval = evaluate(&model, &bundles, &idx, false).unwrap();
    let grid = error_grid(&eval.docs, &bundles, Bins::new(vec![4, 6]).unwrap(), Bins::new(vec![5, 10]).unwrap()).unwrap();
    assert_eq!(grid.total_support(), idx.len());
    assert!((grid.overall_accuracy().unwrap() - eval.metrics.acc).abs() < 1e-12);
    // Independent count of one cell.
    let want = eval
        .docs
        .iter()
        .filter(|d| bundles[d.index].n_paragraphs < 4 && bundles[d.index].n_mentioned < 5)
        .count();
    assert_eq!(grid.cells[0][0].support, want);
    let csv = grid.to_csv();
    assert!(csv.starts_with("length_bin,entity_bin,support,accuracy\n"));
    assert_eq!(csv.lines().count(), 1 + 9);
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2] == "0", fields[3].is_empty(), "{line}");
    }
}

fn labelled(labels: &[usize]) -> Vec<ContextBundle> {
    let cfg = small_config();
    let (b, _) = toy_bundle(&cfg);
    labels.iter().map(|&y| ContextBundle { label: y, ..b.clone() }).collect()
}

#[test]
fn majority_baseline_predicts_the_most_frequent_training_label() {
    let bundles = labelled(&[1, 1, 1, 0, 0, 1, 0]);
    let split = Split {
        train: vec![0, 1, 2, 3, 4],
        val: vec![],
        test: vec![5, 6],
    };
    let m = majority_baseline(&bundles, &split, 2).unwrap();
    assert_eq!(m.acc, 0.5);
    assert_eq!(m.confusion, vec![vec![0, 1], vec![0, 1]]);
}

#[test]
fn subsample_rejects_bad_fractions_and_empty_classes() {
    let bundles = labelled(&[0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
    let train: Vec<usize> = (0..10).collect();
    for f in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(matches!(subsample_train(&bundles, &train, f, 0), Err(KalmError::Config(_))), "{f}");
    }
    assert!(matches!(subsample_train(&bundles, &train, 0.2, 0), Err(KalmError::Config(_))));
    assert_eq!(subsample_train(&bundles, &train, 1.0, 0).unwrap(), train);
    let half = subsample_train(&bundles, &train, 0.5, 0).unwrap();
    assert_eq!(half.iter().filter(|&&i| bundles[i].label == 0).count(), 2);
    assert_eq!(half.iter().filter(|&&i| bundles[i].label == 1).count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subsamples_are_nested_and_deterministic(
        labels in proptest::collection::vec(0usize..3, 30..80),
        a in 0.35f64..1.0,
        b in 0.35f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut labels = labels;
        // Every class needs at least three documents for 0.35 to keep one.
        for c in 0..3 {
            labels.extend([c; 3]);
        }
        let bundles = labelled(&labels);
        let train: Vec<usize> = (0..labels.len()).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = subsample_train(&bundles, &train, lo, seed).unwrap();
        let large = subsample_train(&bundles, &train, hi, seed).unwrap();
        prop_assert!(small.iter().all(|i| large.contains(i)));
        prop_assert!(small.len() <= large.len());
        prop_assert_eq!(&small, &subsample_train(&bundles, &train, lo, seed).unwrap());
        prop_assert!(small.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn sweep_trains_once_per_fraction_in_ascending_order() {
    let (cfg, bundles) = tiny_setup();
    let labels: Vec<usize> = bundles.iter().map(|b| b.label).collect();
    let split = stratified_split(&labels, cfg.seed).unwrap();
    let rows = efficiency_sweep(&bundles, &split, &cfg, 2, &[1.0, 0.5, 1.0]).unwrap();
    assert_eq!(rows.iter().map(|r| r.fraction).collect::<Vec<_>>(), [0.5, 1.0]);
    assert!(rows[0].n_train < rows[1].n_train);
    assert_eq!(rows[1].n_train, split.train.len());
    let again = efficiency_sweep(&bundles, &split, &cfg, 2, &[0.5, 1.0]).unwrap();
    assert_eq!(sweep_csv(&rows), sweep_csv(&again));
    assert!(sweep_csv(&rows).starts_with("fraction,n_train,acc,bacc,maf,mif,map,mar\n"));
    assert!(matches!(efficiency_sweep(&bundles, &split, &cfg, 2, &[]), Err(KalmError::Config(_))));
}

#[test]
fn ablation_builds_only_the_kept_contexts() {
    let mut cfg = small_config();
    cfg.n_docs = 24;
    cfg.max_epochs = 1;
    let data = prepare_synthetic(&cfg).unwrap();
    let variants: Vec<Variant> = standard_variants()
        .into_iter()
        .filter(|v| v.name == "full" || v.name == "w/o global")
        .collect();
    let rows = ablation_suite(&data.kg, &data.docs, &data.table, &cfg, 2, &variants, kalm::contexts::EmbeddingSource::Hashed).unwrap();
    assert_eq!(rows[0].global_built, 24);
    assert_eq!(rows[1].global_built, 0);
    let csv = ablation_csv(&rows);
    assert!(csv.starts_with("variant,acc,bacc,maf,mif,map,mar\nfull,"));
    assert!(csv.contains("\nw/o global,"));
}

#[test]
fn standard_variants_cover_each_context_and_fusion() {
    let v = standard_variants();
    assert_eq!(v.len(), 7);
    assert_eq!(v.iter().filter(|v| v.contexts.count() == 2).count(), 3);
    assert_eq!(v.iter().filter(|v| v.contexts == ContextMask::ALL).count(), 4);
}
