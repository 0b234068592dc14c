//! Nearest-centroid classification with cosine similarity over
//! λ-weighted concatenations of normalized feature blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{NormalizedView, EPS_NORM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NccError {
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("EmptyClass: class {class} has no support items")]
    EmptyClass { class: u32 },
    #[error("EmptySupport: episode has no support items")]
    EmptySupport,
    #[error("EmptyQuery: episode has no query items")]
    EmptyQuery,
    #[error("ItemOutOfRange: item {index} but the bank holds {n_items} items")]
    ItemOutOfRange { index: usize, n_items: usize },
    #[error("LambdaOutOfRange: λ[{index}] = {value} is outside [0, 1]")]
    LambdaOutOfRange { index: usize, value: f64 },
}

/// An item index into a bank, paired with its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub index: usize,
    pub label: u32,
}

/// A few-shot task: support and query items drawn from one bank.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Episode {
    pub support: Vec<Labeled>,
    pub query: Vec<Labeled>,
}

impl Episode {
    pub fn new(support: Vec<Labeled>, query: Vec<Labeled>) -> Self {
        Episode { support, query }
    }

    /// Support classes, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.support.iter().map(|s| s.label).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn validate(&self, n_items: usize) -> Result<(), NccError> {
        if self.support.is_empty() {
            return Err(NccError::EmptySupport);
        }
        if self.query.is_empty() {
            return Err(NccError::EmptyQuery);
        }
        if let Some(bad) = self.support.iter().chain(&self.query).find(|s| s.index >= n_items) {
            return Err(NccError::ItemOutOfRange { index: bad.index, n_items });
        }
        let classes = self.classes();
        if let Some(q) = self.query.iter().find(|q| classes.binary_search(&q.label).is_err()) {
            return Err(NccError::EmptyClass { class: q.label });
        }
        Ok(())
    }
}

/// Per-block weights λ ∈ [0, 1]^K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionVector(Vec<f64>);

impl SelectionVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self, NccError> {
        if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(NccError::LambdaOutOfRange { index, value });
        }
        Ok(SelectionVector(lambda))
    }

    pub fn ones(k: usize) -> Self {
        SelectionVector(vec![1.0; k])
    }

    pub fn filled(k: usize, value: f64) -> Result<Self, NccError> {
        SelectionVector::new(vec![value; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_k(view_k: usize, lambda: &SelectionVector) -> Result<(), NccError> {
    if lambda.len() != view_k {
        return Err(NccError::DimensionMismatch { expected: view_k, found: lambda.len() });
    }
    Ok(())
}

/// Concatenates `λ_k · f̂_k(x)` over all blocks.
pub fn select_features(blocks: &[&[f64]], lambda: &SelectionVector) -> Result<Vec<f64>, NccError> {
    check_k(blocks.len(), lambda)?;
    let total = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(total);
    for (b, &l) in blocks.iter().zip(lambda.as_slice()) {
        out.extend(b.iter().map(|x| l * x));
    }
    Ok(out)
}

/// Cosine similarity with both norms floored at [`EPS_NORM`], clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NccError> {
    if u.len() != v.len() {
        return Err(NccError::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    let c = dot / (uu.sqrt().max(EPS_NORM) * vv.sqrt().max(EPS_NORM));
    Ok(c.clamp(-1.0, 1.0))
}

/// Class centroids in the selected representation space.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    class_ids: Vec<u32>,
    centroids: Vec<Vec<f64>>,
    block_dims: Vec<usize>,
}

impl CentroidModel {
    /// Class ids, ascending; `centroids()[j]` belongs to `class_ids()[j]`.
    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Segment of centroid `j` belonging to block `k`.
    pub fn segment(&self, j: usize, k: usize) -> &[f64] {
        let start: usize = self.block_dims[..k].iter().sum();
        &self.centroids[j][start..start + self.block_dims[k]]
    }

    /// Cosine of `features` against every centroid, in class order.
    pub fn similarities(&self, features: &[f64]) -> Result<Vec<f64>, NccError> {
        self.centroids.iter().map(|c| cosine_similarity(features, c)).collect()
    }

    /// Class with the highest cosine; ties go to the smallest class id.
    pub fn predict_features(&self, features: &[f64]) -> Result<u32, NccError> {
        let sims = self.similarities(features)?;
        let mut best = 0;
        for (j, &s) in sims.iter().enumerate().skip(1) {
            if s > sims[best] {
                best = j;
            }
        }
        Ok(self.class_ids[best])
    }
}

/// Averages the selected support representations of each class.
pub fn compute_centroids(
    view: &NormalizedView,
    episode: &Episode,
    lambda: &SelectionVector,
) -> Result<CentroidModel, NccError> {
    check_k(view.n_extractors(), lambda)?;
    episode.validate(view.n_items())?;
    let block_dims = view.block_dims();
    let total: usize = block_dims.iter().sum();
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for s in &episode.support {
        let f = select_features(&view.item_blocks(s.index), lambda)?;
        let (acc, count) = sums.entry(s.label).or_insert_with(|| (vec![0.0; total], 0));
        for (a, x) in acc.iter_mut().zip(&f) {
            *a += x;
        }
        *count += 1;
    }
    let (class_ids, centroids) = sums
        .into_iter()
        .map(|(c, (acc, count))| (c, acc.into_iter().map(|a| a / count as f64).collect()))
        .unzip();
    Ok(CentroidModel { class_ids, centroids, block_dims })
}

pub fn predict(
    view: &NormalizedView,
    item: usize,
    model: &CentroidModel,
    lambda: &SelectionVector,
) -> Result<u32, NccError> {
    if item >= view.n_items() {
        return Err(NccError::ItemOutOfRange { index: item, n_items: view.n_items() });
    }
    let f = select_features(&view.item_blocks(item), lambda)?;
    model.predict_features(&f)
}

/// Predicted class for every query item, in query order.
pub fn predict_queries(
    view: &NormalizedView,
    episode: &Episode,
    lambda: &SelectionVector,
) -> Result<Vec<u32>, NccError> {
    let model = compute_centroids(view, episode, lambda)?;
    episode.query.iter().map(|q| predict(view, q.index, &model, lambda)).collect()
}

/// Fraction of query items classified correctly.
pub fn accuracy(view: &NormalizedView, episode: &Episode, lambda: &SelectionVector) -> Result<f64, NccError> {
    let preds = predict_queries(view, episode, lambda)?;
    let correct = preds.iter().zip(&episode.query).filter(|(p, q)| **p == q.label).count();
    Ok(correct as f64 / episode.query.len() as f64)
}
