//! Per-episode optimization of the block weights λ.
//!
//! λ is parametrized as `sigmoid(α)` with α starting at zero. Each step
//! rebuilds the centroids from the whole support set, evaluates the
//! support-set negative log-likelihood of the cosine-softmax NCC model and
//! applies an Adadelta update to α.
//!
//! Because centroids are linear in λ, every cosine reduces to per-block
//! inner products that do not depend on λ:
//!
//! ```text
//! cos(f_λ(x_i), c_j) = Σ_k w_k a_ijk / ( sqrt(Σ_k w_k b_ik) · sqrt(Σ_k w_k g_jk) ),   w_k = λ_k²
//! ```
//!
//! with `a_ijk = ⟨f̂_k(x_i), m_jk⟩`, `b_ik = ‖f̂_k(x_i)‖²`, `g_jk = ‖m_jk‖²` and
//! `m_jk` the class-`j` mean of block `k`. [`SupportStats`] caches those, so
//! an evaluation costs `O(n_S · C · K)` regardless of feature width, and the
//! gradient is exact through centroids, norms and the sigmoid.

use serde::{Deserialize, Serialize};

use crate::bank::{NormalizedView, EPS_NORM};
use crate::error::Error;
use crate::ncc::{select_features, CentroidModel, Episode, NccError, SelectionVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    /// Multiplier on cosine logits; 1.0 is the plain objective.
    pub temperature: f64,
    pub l1_penalty: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            iterations: 40,
            learning_rate: 100.0,
            adadelta_rho: 0.9,
            adadelta_eps: 1e-6,
            temperature: 1.0,
            l1_penalty: 0.0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be a positive number, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("adadelta_eps", self.adadelta_eps)?;
        positive("temperature", self.temperature)?;
        if !(self.adadelta_rho > 0.0 && self.adadelta_rho < 1.0) {
            return Err(Error::config(format!("adadelta_rho must lie in (0, 1), got {}", self.adadelta_rho)));
        }
        if !(self.l1_penalty.is_finite() && self.l1_penalty >= 0.0) {
            return Err(Error::config(format!("l1_penalty must be non-negative, got {}", self.l1_penalty)));
        }
        Ok(())
    }
}

/// Logistic function, saturating strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Optimizer state: raw parameters α, derived λ and Adadelta accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub grad_sq_avg: Vec<f64>,
    pub delta_sq_avg: Vec<f64>,
    pub iteration: usize,
}

impl SelectionState {
    /// α = 0, so λ = 0.5 for every block.
    pub fn zeros(k: usize) -> Self {
        SelectionState::from_alpha(vec![0.0; k])
    }

    pub fn from_alpha(alpha: Vec<f64>) -> Self {
        let k = alpha.len();
        SelectionState {
            lambda: alpha.iter().map(|&a| sigmoid(a)).collect(),
            alpha,
            grad_sq_avg: vec![0.0; k],
            delta_sq_avg: vec![0.0; k],
            iteration: 0,
        }
    }

    pub fn selection(&self) -> SelectionVector {
        SelectionVector::new(self.lambda.clone()).expect("sigmoid output lies in (0, 1)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub lambda: SelectionVector,
    /// Loss before the first step followed by the loss after every step.
    pub loss_trace: Vec<f64>,
    pub converged_loss: f64,
}

/// Numerically stable `log Σ exp(z)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `temperature · cosines`.
pub fn softmax(cosines: &[f64], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = cosines.iter().map(|c| temperature * c).collect();
    let lse = log_sum_exp(&z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// `p(y = l | x)` over the model's classes, in class-id order.
pub fn class_probabilities(
    view: &NormalizedView,
    item: usize,
    model: &CentroidModel,
    lambda: &SelectionVector,
    temperature: f64,
) -> Result<Vec<f64>, NccError> {
    let f = select_features(&view.item_blocks(item), lambda)?;
    Ok(softmax(&model.similarities(&f)?, temperature))
}

/// λ-independent inner products of a support set.
#[derive(Debug, Clone)]
pub struct SupportStats {
    n: usize,
    classes: usize,
    k: usize,
    /// Position of each support item's class among the sorted class ids.
    targets: Vec<usize>,
    /// `[i][j][k]`: ⟨f̂_k(x_i), m_jk⟩.
    dots: Vec<f64>,
    /// `[i][k]`: ‖f̂_k(x_i)‖².
    item_sq: Vec<f64>,
    /// `[j][k]`: ‖m_jk‖².
    centroid_sq: Vec<f64>,
}

impl SupportStats {
    pub fn new(view: &NormalizedView, episode: &Episode) -> Result<Self, NccError> {
        if episode.support.is_empty() {
            return Err(NccError::EmptySupport);
        }
        let n_items = view.n_items();
        if let Some(bad) = episode.support.iter().find(|s| s.index >= n_items) {
            return Err(NccError::ItemOutOfRange { index: bad.index, n_items });
        }
        let class_ids = episode.classes();
        let classes = class_ids.len();
        let k = view.n_extractors();
        let n = episode.support.len();
        let targets: Vec<usize> =
            episode.support.iter().map(|s| class_ids.binary_search(&s.label).unwrap()).collect();

        // Per-class, per-block means of the normalized features.
        let dims = view.block_dims();
        let mut means: Vec<Vec<Vec<f64>>> = (0..classes).map(|_| dims.iter().map(|&d| vec![0.0; d]).collect()).collect();
        let mut counts = vec![0usize; classes];
        for (s, &j) in episode.support.iter().zip(&targets) {
            counts[j] += 1;
            for (kk, mean) in means[j].iter_mut().enumerate() {
                for (m, x) in mean.iter_mut().zip(view.row(kk, s.index)) {
                    *m += x;
                }
            }
        }
        for (class_means, &count) in means.iter_mut().zip(&counts) {
            for mean in class_means.iter_mut() {
                mean.iter_mut().for_each(|m| *m /= count as f64);
            }
        }

        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut dots = Vec::with_capacity(n * classes * k);
        let mut item_sq = Vec::with_capacity(n * k);
        for s in &episode.support {
            for class_means in &means {
                for (kk, mean) in class_means.iter().enumerate() {
                    dots.push(dot(view.row(kk, s.index), mean));
                }
            }
            for kk in 0..k {
                let r = view.row(kk, s.index);
                item_sq.push(dot(r, r));
            }
        }
        let centroid_sq = means.iter().flat_map(|cm| cm.iter().map(|m| dot(m, m))).collect();
        Ok(SupportStats { n, classes, k, targets, dots, item_sq, centroid_sq })
    }

    pub fn n_extractors(&self) -> usize {
        self.k
    }

    /// Loss at λ and, if requested, its gradient with respect to α where λ = sigmoid(α).
    fn evaluate(&self, lambda: &[f64], config: &SelectorConfig, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let (n, c, k) = (self.n, self.classes, self.k);
        let tau = config.temperature;
        let w: Vec<f64> = lambda.iter().map(|l| l * l).collect();

        let mut grad_w = vec![0.0; k]; // Σ_ij dL/dcos_ij · w_k ∂cos_ij/∂w_k
        let mut loss = 0.0;
        let mut t = vec![0.0; k];
        let mut cos = vec![0.0; c];
        let mut shares = vec![0.0; c * k]; // w_k ∂cos_ij/∂w_k for the current i

        // Class-side norms do not depend on i.
        let centroid: Vec<(f64, f64)> = (0..c)
            .map(|j| {
                let g = &self.centroid_sq[j * k..(j + 1) * k];
                let gsum: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
                (gsum, gsum.sqrt())
            })
            .collect();

        for i in 0..n {
            let b = &self.item_sq[i * k..(i + 1) * k];
            let bsum: f64 = w.iter().zip(b).map(|(a, b)| a * b).sum();
            let item_norm = bsum.sqrt();
            for j in 0..c {
                let a = &self.dots[(i * c + j) * k..(i * c + j + 1) * k];
                let mut dot = 0.0;
                for kk in 0..k {
                    t[kk] = w[kk] * a[kk];
                    dot += t[kk];
                }
                let (gsum, class_norm) = centroid[j];
                let denom = item_norm.max(EPS_NORM) * class_norm.max(EPS_NORM);
                let raw = dot / denom;
                cos[j] = raw.clamp(-1.0, 1.0);
                if want_grad {
                    let share = &mut shares[j * k..(j + 1) * k];
                    if raw.abs() > 1.0 {
                        share.fill(0.0);
                        continue;
                    }
                    let g = &self.centroid_sq[j * k..(j + 1) * k];
                    for kk in 0..k {
                        let item_part = if item_norm > EPS_NORM { w[kk] * b[kk] / bsum } else { 0.0 };
                        let class_part = if class_norm > EPS_NORM { w[kk] * g[kk] / gsum } else { 0.0 };
                        share[kk] = (t[kk] - dot / 2.0 * (item_part + class_part)) / denom;
                    }
                }
            }
            let z: Vec<f64> = cos.iter().map(|x| tau * x).collect();
            let lse = log_sum_exp(&z);
            let y = self.targets[i];
            loss += lse - z[y];
            if want_grad {
                for j in 0..c {
                    let p = (z[j] - lse).exp();
                    let dcos = tau * (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
                    for kk in 0..k {
                        grad_w[kk] += dcos * shares[j * k + kk];
                    }
                }
            }
        }
        loss /= n as f64;
        loss += config.l1_penalty * lambda.iter().sum::<f64>();

        let grad = want_grad.then(|| {
            (0..k)
                .map(|kk| {
                    let l = lambda[kk];
                    // dw/dα = 2 w (1 − λ); dλ/dα = λ (1 − λ)
                    grad_w[kk] * 2.0 * (1.0 - l) + config.l1_penalty * l * (1.0 - l)
                })
                .collect()
        });
        (loss, grad)
    }

    pub fn loss(&self, lambda: &[f64], config: &SelectorConfig) -> f64 {
        self.evaluate(lambda, config, false).0
    }

    pub fn loss_and_gradient(&self, alpha: &[f64], config: &SelectorConfig) -> (f64, Vec<f64>) {
        let lambda: Vec<f64> = alpha.iter().map(|&a| sigmoid(a)).collect();
        let (loss, grad) = self.evaluate(&lambda, config, true);
        (loss, grad.expect("gradient requested"))
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), NccError> {
    if expected != found {
        return Err(NccError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Mean support-set negative log-likelihood at λ, plus `l1_penalty · Σλ`.
pub fn support_nll(
    view: &NormalizedView,
    episode: &Episode,
    lambda: &SelectionVector,
    config: &SelectorConfig,
) -> Result<f64, NccError> {
    check_len(view.n_extractors(), lambda.len())?;
    Ok(SupportStats::new(view, episode)?.loss(lambda.as_slice(), config))
}

/// Exact gradient of [`support_nll`] at `λ = sigmoid(alpha)` with respect to α.
pub fn nll_gradient(
    view: &NormalizedView,
    episode: &Episode,
    alpha: &[f64],
    config: &SelectorConfig,
) -> Result<Vec<f64>, NccError> {
    check_len(view.n_extractors(), alpha.len())?;
    Ok(SupportStats::new(view, episode)?.loss_and_gradient(alpha, config).1)
}

/// One Adadelta update of α (learning rate applied to the Adadelta delta).
pub fn adadelta_step(state: SelectionState, grad: &[f64], config: &SelectorConfig) -> SelectionState {
    assert_eq!(state.alpha.len(), grad.len(), "gradient length must match the number of blocks");
    let SelectionState { mut alpha, mut lambda, mut grad_sq_avg, mut delta_sq_avg, iteration } = state;
    let (rho, eps, lr) = (config.adadelta_rho, config.adadelta_eps, config.learning_rate);
    for k in 0..alpha.len() {
        let g = grad[k];
        grad_sq_avg[k] = rho * grad_sq_avg[k] + (1.0 - rho) * g * g;
        let delta = -((delta_sq_avg[k] + eps).sqrt() / (grad_sq_avg[k] + eps).sqrt()) * g;
        delta_sq_avg[k] = rho * delta_sq_avg[k] + (1.0 - rho) * delta * delta;
        alpha[k] += lr * delta;
        lambda[k] = sigmoid(alpha[k]);
    }
    SelectionState { alpha, lambda, grad_sq_avg, delta_sq_avg, iteration: iteration + 1 }
}

/// Runs `config.iterations` full-batch Adadelta steps from α = 0.
pub fn optimize_selection(
    view: &NormalizedView,
    episode: &Episode,
    config: &SelectorConfig,
) -> Result<SelectionResult, NccError> {
    let stats = SupportStats::new(view, episode)?;
    Ok(optimize_with_stats(&stats, config))
}

pub fn optimize_with_stats(stats: &SupportStats, config: &SelectorConfig) -> SelectionResult {
    let mut state = SelectionState::zeros(stats.n_extractors());
    let mut loss_trace = Vec::with_capacity(config.iterations + 1);
    loop {
        let (loss, grad) = stats.loss_and_gradient(&state.alpha, config);
        loss_trace.push(loss);
        if state.iteration == config.iterations {
            break;
        }
        state = adadelta_step(state, &grad, config);
    }
    SelectionResult {
        lambda: state.selection(),
        converged_loss: *loss_trace.last().unwrap(),
        loss_trace,
    }
}

/// Fraction of weights saturated below `low` or above `high`.
pub fn saturation_fraction(lambda: &SelectionVector, low: f64, high: f64) -> f64 {
    if lambda.is_empty() {
        return 0.0;
    }
    let hits = lambda.as_slice().iter().filter(|&&l| l < low || l > high).count();
    hits as f64 / lambda.len() as f64
}
