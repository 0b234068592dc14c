mod common;

use common::*;
use rand::Rng;
use sur::ncc::predict_queries;
use sur::selector::{class_probabilities, optimize_selection};
use sur::{
    compute_centroids, nll_gradient, support_nll, Episode, FeatureBank, FeatureBlock, Labeled, NormalizedView,
    SelectionVector, SelectorConfig,
};

#[test]
fn orthogonal_two_class_loss() {
    let bank =
        FeatureBank::from_blocks("o", vec![0, 1], vec![FeatureBlock::from_rows("a", &[[1.0, 0.0], [0.0, 1.0]])]).unwrap();
    let view = NormalizedView::new(&bank);
    let items = vec![Labeled { index: 0, label: 0 }, Labeled { index: 1, label: 1 }];
    let ep = Episode::new(items.clone(), items);
    let expected = (std::f64::consts::E + 1.0).ln() - 1.0;
    assert!((expected - 0.3132617).abs() < 1e-7);
    for l in [1.0, 0.5, 0.01] {
        let loss = support_nll(&view, &ep, &SelectionVector::new(vec![l]).unwrap(), &SelectorConfig::default()).unwrap();
        assert!((loss - expected).abs() < 1e-9, "λ={l}: {loss}");
    }
}

#[test]
fn loss_matches_brute_force() {
    let mut r = rng(1);
    for case in 0..60 {
        let inst = random_instance(&mut r, 2.max(case % 4 + 1), 8, 3, 12);
        let view = NormalizedView::new(&inst.bank);
        let k = inst.bank.n_extractors();
        let lambda: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let (tau, l1) = if case % 3 == 0 { (1.0, 0.0) } else { (r.random_range(0.5..10.0), r.random_range(0.0..0.2)) };
        let cfg = SelectorConfig { temperature: tau, l1_penalty: l1, ..Default::default() };
        let got = support_nll(&view, &inst.episode, &SelectionVector::new(lambda.clone()).unwrap(), &cfg).unwrap();
        let want = brute_nll(&inst.bank, &inst.episode, &lambda, tau, l1);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for case in 0..150 {
        let inst = random_instance(&mut r, 4, 8, 4, 12);
        let view = NormalizedView::new(&inst.bank);
        let k = inst.bank.n_extractors();
        let alpha: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        let (tau, l1) = if case % 2 == 0 { (1.0, 0.0) } else { (r.random_range(0.5..5.0), r.random_range(0.0..0.1)) };
        let cfg = SelectorConfig { temperature: tau, l1_penalty: l1, ..Default::default() };
        let g = nll_gradient(&view, &inst.episode, &alpha, &cfg).unwrap();
        let fd = fd_gradient(&inst.bank, &inst.episode, &alpha, tau, l1, 1e-5);
        let err = relative_error(&g, &fd);
        worst = worst.max(err);
        assert!(err < 1e-4, "case {case}: analytic {g:?} vs fd {fd:?}");
    }
    println!("worst relative error {worst:e}");
}

#[test]
fn single_block_gradient_is_exactly_zero() {
    let mut r = rng(3);
    for _ in 0..50 {
        let inst = random_instance(&mut r, 1, 8, 4, 12);
        let view = NormalizedView::new(&inst.bank);
        let a = r.random_range(-5.0..5.0);
        let g = nll_gradient(&view, &inst.episode, &[a], &SelectorConfig::default()).unwrap();
        assert_eq!(g, vec![0.0]);
    }
}

#[test]
fn identical_blocks_get_identical_gradients() {
    let mut r = rng(4);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 1, 6, 4, 10);
        let block = inst.bank.blocks()[0].clone();
        let copies = (0..3).map(|i| FeatureBlock::new(format!("copy{i}"), block.meta.dim, block.values.clone())).collect();
        let bank = FeatureBank::from_blocks("sym", inst.bank.labels().to_vec(), copies).unwrap();
        let view = NormalizedView::new(&bank);
        let g = nll_gradient(&view, &inst.episode, &[0.4, 0.4, 0.4], &SelectorConfig::default()).unwrap();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[1], g[2]);
    }
}

#[test]
fn probabilities_normalized() {
    let mut r = rng(5);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 3, 5, 4, 12);
        let view = NormalizedView::new(&inst.bank);
        let lam = SelectionVector::new((0..inst.bank.n_extractors()).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let model = compute_centroids(&view, &inst.episode, &lam).unwrap();
        for s in &inst.episode.support {
            let p = class_probabilities(&view, s.index, &model, &lam, 3.0).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn ncc_predictions_match_brute_force() {
    let mut r = rng(6);
    for _ in 0..100 {
        let inst = random_instance(&mut r, 3, 6, 3, 12);
        // hold out half of the items as queries, keeping one support item per class
        let mut support = Vec::new();
        let mut query = Vec::new();
        for item in &inst.episode.support {
            if support.iter().any(|s: &Labeled| s.label == item.label) && r.random_bool(0.5) {
                query.push(*item);
            } else {
                support.push(*item);
            }
        }
        if query.is_empty() {
            continue;
        }
        let ep = Episode::new(support, query);
        let view = NormalizedView::new(&inst.bank);
        let lambda: Vec<f64> = (0..inst.bank.n_extractors()).map(|_| r.random_range(0.05..1.0)).collect();
        let got = predict_queries(&view, &ep, &SelectionVector::new(lambda.clone()).unwrap()).unwrap();
        assert_eq!(got, brute_predictions(&inst.bank, &ep, &lambda));
        let acc = sur::accuracy(&view, &ep, &SelectionVector::new(lambda.clone()).unwrap()).unwrap();
        let hits = got.iter().zip(&ep.query).filter(|(p, q)| **p == q.label).count();
        assert_eq!(acc, hits as f64 / ep.query.len() as f64);
    }
}

#[test]
fn optimizer_reaches_grid_minimum_on_separable_episode() {
    let inst = separable_episode(4, 5, 7);
    let view = NormalizedView::new(&inst.bank);
    let res = optimize_selection(&view, &inst.episode, &SelectorConfig::default()).unwrap();
    let (grid, at) = grid_min(&inst);
    let lam = res.lambda.as_slice();
    println!("final λ {lam:?}, loss {} vs grid {grid} at {at:?}", res.converged_loss);
    assert!(lam[0] > lam[1]);
    assert!(res.converged_loss <= grid + 1e-3);
    assert_eq!(res.loss_trace.len(), 41);
    let monotone = res.loss_trace.windows(2).all(|w| w[1] <= w[0]);
    if !monotone {
        assert!(res.converged_loss < res.loss_trace[0]);
    }
}

#[test]
fn single_block_optimization_keeps_half() {
    let inst = random_instance(&mut rng(8), 1, 5, 4, 12);
    let view = NormalizedView::new(&inst.bank);
    let res = optimize_selection(&view, &inst.episode, &SelectorConfig::default()).unwrap();
    assert_eq!(res.lambda.as_slice(), &[0.5]);
    assert!(res.loss_trace.iter().all(|&l| l == res.loss_trace[0]));
}
