mod common;

use common::*;
use proptest::prelude::*;
use sur::ncc::predict_queries;
use sur::selector::optimize_selection;
use sur::{compute_centroids, support_nll, Episode, FeatureBank, Labeled, NormalizedView, SelectionVector, SelectorConfig};

/// Random instance whose queries are a held-out half of the items.
fn split_instance(seed: u64, max_k: usize) -> (FeatureBank, Episode) {
    let inst = random_instance(&mut rng(seed), max_k, 6, 4, 12);
    let mut support: Vec<Labeled> = Vec::new();
    let mut query = Vec::new();
    for (n, item) in inst.episode.support.iter().enumerate() {
        if n % 2 == 1 && support.iter().any(|s| s.label == item.label) {
            query.push(*item);
        } else {
            support.push(*item);
        }
    }
    if query.is_empty() {
        query.push(support[0]);
    }
    (inst.bank, Episode::new(support, query))
}

fn lambda_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..1.0, k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centroids_are_linear_in_lambda(seed in any::<u64>(), raw in lambda_strategy(4)) {
        let (bank, ep) = split_instance(seed, 4);
        let view = NormalizedView::new(&bank);
        let k = bank.n_extractors();
        let lam = SelectionVector::new(raw[..k].to_vec()).unwrap();
        let scaled = compute_centroids(&view, &ep, &lam).unwrap();
        let unit = compute_centroids(&view, &ep, &SelectionVector::ones(k)).unwrap();
        for j in 0..scaled.class_ids().len() {
            for kk in 0..k {
                for (a, b) in scaled.segment(j, kk).iter().zip(unit.segment(j, kk)) {
                    prop_assert!((a - lam.as_slice()[kk] * b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn predictions_invariant_to_global_lambda_scale(seed in any::<u64>(), raw in lambda_strategy(4), c in 0.01f64..=1.0) {
        let (bank, ep) = split_instance(seed, 4);
        let view = NormalizedView::new(&bank);
        let k = bank.n_extractors();
        let lam = SelectionVector::new(raw[..k].to_vec()).unwrap();
        let scaled = SelectionVector::new(raw[..k].iter().map(|l| c * l).collect()).unwrap();
        prop_assert_eq!(predict_queries(&view, &ep, &lam).unwrap(), predict_queries(&view, &ep, &scaled).unwrap());
    }

    #[test]
    fn single_block_predictions_ignore_lambda(seed in any::<u64>(), l in 0.001f64..=1.0) {
        let (bank, ep) = split_instance(seed, 1);
        let view = NormalizedView::new(&bank);
        prop_assert_eq!(
            predict_queries(&view, &ep, &SelectionVector::ones(1)).unwrap(),
            predict_queries(&view, &ep, &SelectionVector::new(vec![l]).unwrap()).unwrap()
        );
    }

    #[test]
    fn loss_invariant_to_global_lambda_scale(seed in any::<u64>(), raw in lambda_strategy(4), c in 0.01f64..=1.0) {
        let (bank, ep) = split_instance(seed, 4);
        let view = NormalizedView::new(&bank);
        let k = bank.n_extractors();
        let cfg = SelectorConfig::default();
        let a = support_nll(&view, &ep, &SelectionVector::new(raw[..k].to_vec()).unwrap(), &cfg).unwrap();
        let b = support_nll(&view, &ep, &SelectionVector::new(raw[..k].iter().map(|l| c * l).collect()).unwrap(), &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn raw_block_scaling_changes_no_prediction(seed in any::<u64>(), raw in lambda_strategy(4), exp in -20i32..20, item_mask in any::<u64>(), block in 0usize..4) {
        let (bank, ep) = split_instance(seed, 4);
        let k = bank.n_extractors();
        let block = block % k;
        let c = 2f32.powi(exp);
        let mut scaled = bank.clone();
        for i in 0..bank.n_items() {
            if item_mask >> (i % 64) & 1 == 1 {
                scaled.row_mut(block, i).iter_mut().for_each(|x| *x *= c);
            }
        }
        let lam = SelectionVector::new(raw[..k].to_vec()).unwrap();
        prop_assert_eq!(
            predict_queries(&NormalizedView::new(&bank), &ep, &lam).unwrap(),
            predict_queries(&NormalizedView::new(&scaled), &ep, &lam).unwrap()
        );
    }

    #[test]
    fn block_permutation_equivariance(seed in any::<u64>(), raw in lambda_strategy(4), rot in 0usize..4) {
        let (bank, ep) = split_instance(seed, 4);
        let k = bank.n_extractors();
        let names = bank.extractor_names();
        let order: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let permuted = bank.subset_extractors(&order.iter().map(|&i| names[i].clone()).collect::<Vec<_>>()).unwrap();
        let lam = SelectionVector::new(raw[..k].to_vec()).unwrap();
        let plam = SelectionVector::new(order.iter().map(|&i| raw[i]).collect()).unwrap();
        prop_assert_eq!(
            predict_queries(&NormalizedView::new(&bank), &ep, &lam).unwrap(),
            predict_queries(&NormalizedView::new(&permuted), &ep, &plam).unwrap()
        );

        let cfg = SelectorConfig { iterations: 15, ..Default::default() };
        let a = optimize_selection(&NormalizedView::new(&bank), &ep, &cfg).unwrap();
        let b = optimize_selection(&NormalizedView::new(&permuted), &ep, &cfg).unwrap();
        for (x, y) in a.loss_trace.iter().zip(&b.loss_trace) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (pos, &i) in order.iter().enumerate() {
            prop_assert!((b.lambda.as_slice()[pos] - a.lambda.as_slice()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn optimized_lambda_stays_open_unit_interval(seed in any::<u64>(), iterations in 0usize..80) {
        let (bank, ep) = split_instance(seed, 4);
        let cfg = SelectorConfig { iterations, ..Default::default() };
        let view = NormalizedView::new(&bank);
        let res = optimize_selection(&view, &ep, &cfg).unwrap();
        prop_assert_eq!(res.loss_trace.len(), iterations + 1);
        prop_assert!(res.lambda.as_slice().iter().all(|&l| l > 0.0 && l < 1.0));
        prop_assert!(res.loss_trace.iter().all(|l| l.is_finite()));
        let again = optimize_selection(&view, &ep, &cfg).unwrap();
        prop_assert_eq!(res, again);
    }
}
