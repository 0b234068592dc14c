//! Independent reference computations and instance generators shared by the
//! integration tests. Nothing here goes through the selector's cached
//! inner-product path: representations are materialized explicitly.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sur::{Episode, FeatureBank, FeatureBlock, Labeled};

const EPS: f64 = 1e-12;

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
    v.iter().map(|x| x / n).collect()
}

fn cos(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// f_λ(x) built by hand from the raw bank rows.
pub fn represent(bank: &FeatureBank, item: usize, lambda: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, &l) in lambda.iter().enumerate() {
        let raw: Vec<f64> = bank.row(k, item).iter().map(|&x| x as f64).collect();
        out.extend(unit(&raw).into_iter().map(|x| l * x));
    }
    out
}

/// Sorted class ids and explicit centroids of the support set.
pub fn centroids(bank: &FeatureBank, ep: &Episode, lambda: &[f64]) -> (Vec<u32>, Vec<Vec<f64>>) {
    let mut classes: Vec<u32> = ep.support.iter().map(|s| s.label).collect();
    classes.sort();
    classes.dedup();
    let cents = classes
        .iter()
        .map(|&c| {
            let members: Vec<Vec<f64>> =
                ep.support.iter().filter(|s| s.label == c).map(|s| represent(bank, s.index, lambda)).collect();
            let mut m = vec![0.0; members[0].len()];
            for v in &members {
                for (a, b) in m.iter_mut().zip(v) {
                    *a += b;
                }
            }
            m.iter().map(|a| a / members.len() as f64).collect()
        })
        .collect();
    (classes, cents)
}

/// Term-by-term support NLL: mean of log Σ_j exp(τ cos_ij) − τ cos_iy, plus l1·Σλ.
pub fn brute_nll(bank: &FeatureBank, ep: &Episode, lambda: &[f64], tau: f64, l1: f64) -> f64 {
    let (classes, cents) = centroids(bank, ep, lambda);
    let mut total = 0.0;
    for s in &ep.support {
        let f = represent(bank, s.index, lambda);
        let cs: Vec<f64> = cents.iter().map(|c| cos(&f, c)).collect();
        let y = classes.iter().position(|&c| c == s.label).unwrap();
        let denom: f64 = cs.iter().map(|c| (tau * c).exp()).sum();
        total += denom.ln() - tau * cs[y];
    }
    total / ep.support.len() as f64 + l1 * lambda.iter().sum::<f64>()
}

/// Explicit nearest-centroid predictions, smallest class id on ties.
pub fn brute_predictions(bank: &FeatureBank, ep: &Episode, lambda: &[f64]) -> Vec<u32> {
    let (classes, cents) = centroids(bank, ep, lambda);
    ep.query
        .iter()
        .map(|q| {
            let f = represent(bank, q.index, lambda);
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (j, c) in cents.iter().enumerate() {
                let v = cos(&f, c);
                if v > best_cos {
                    best_cos = v;
                    best = j;
                }
            }
            classes[best]
        })
        .collect()
}

/// Central finite differences of the brute-force loss with respect to α.
pub fn fd_gradient(bank: &FeatureBank, ep: &Episode, alpha: &[f64], tau: f64, l1: f64, h: f64) -> Vec<f64> {
    (0..alpha.len())
        .map(|k| {
            let eval = |delta: f64| {
                let lam: Vec<f64> =
                    alpha.iter().enumerate().map(|(i, &a)| sigmoid(if i == k { a + delta } else { a })).collect();
                brute_nll(bank, ep, &lam, tau, l1)
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect()
}

/// max_k |a_k − b_k| / max(max_k |b_k|, 1e-6).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-6);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// A random support/query instance: every item is a support item and every
/// item is also queried.
pub struct Instance {
    pub bank: FeatureBank,
    pub episode: Episode,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_k: usize, max_d: usize, max_c: usize, max_n: usize) -> Instance {
    let k = rng.random_range(1..=max_k);
    let c = rng.random_range(2..=max_c);
    let n = rng.random_range(c..=max_n);
    let mut labels: Vec<u32> = (0..c as u32).collect();
    while labels.len() < n {
        labels.push(rng.random_range(0..c as u32));
    }
    let blocks = (0..k)
        .map(|b| {
            let d = rng.random_range(1..=max_d);
            let values = (0..n * d).map(|_| StandardNormal.sample(rng)).map(|x: f64| x as f32).collect();
            FeatureBlock::new(format!("b{b}"), d, values)
        })
        .collect();
    let bank = FeatureBank::from_blocks("random", labels.clone(), blocks).unwrap();
    let items: Vec<Labeled> = labels.iter().enumerate().map(|(index, &label)| Labeled { index, label }).collect();
    Instance { bank, episode: Episode::new(items.clone(), items) }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two blocks over `classes × shots` items: block 0 is a one-hot class code
/// with small jitter (perfectly separable), block 1 is i.i.d. noise.
pub fn separable_episode(classes: u32, shots: usize, seed: u64) -> Instance {
    let mut r = rng(seed);
    let dim = classes as usize;
    let labels: Vec<u32> = (0..classes).flat_map(|c| std::iter::repeat_n(c, shots)).collect();
    let mut signal = Vec::new();
    let mut noise = Vec::new();
    for &c in &labels {
        for j in 0..dim {
            let jitter: f64 = StandardNormal.sample(&mut r);
            signal.push((if j == c as usize { 1.0 } else { 0.0 } + 0.05 * jitter) as f32);
        }
        for _ in 0..dim {
            let x: f64 = StandardNormal.sample(&mut r);
            noise.push(x as f32);
        }
    }
    let bank = FeatureBank::from_blocks(
        "separable",
        labels.clone(),
        vec![FeatureBlock::new("signal", dim, signal), FeatureBlock::new("noise", dim, noise)],
    )
    .unwrap();
    let items: Vec<Labeled> = labels.iter().enumerate().map(|(index, &label)| Labeled { index, label }).collect();
    Instance { bank, episode: Episode::new(items.clone(), items) }
}

/// Minimum of the brute-force loss over a 21 × 21 grid of λ ∈ [0.025, 0.975]².
pub fn grid_min(inst: &Instance) -> (f64, [f64; 2]) {
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for a in 0..21 {
        for b in 0..21 {
            let lam = [0.025 + 0.0475 * a as f64, 0.025 + 0.0475 * b as f64];
            let loss = brute_nll(&inst.bank, &inst.episode, &lam, 1.0, 0.0);
            if loss < best.0 {
                best = (loss, lam);
            }
        }
    }
    best
}
