//! Selection of relevant feature blocks from multi-domain representations
//! for few-shot classification.
//!
//! A [`FeatureBank`](bank::FeatureBank) holds, for every labelled item, one
//! feature block per extractor. Few-shot episodes are classified with a
//! nearest-centroid rule on the cosine of λ-weighted concatenations of the
//! L2-normalized blocks ([`ncc`]). [`selector`] fits λ per episode by
//! minimizing the support-set negative log-likelihood, and [`harness`]
//! compares that against single-extractor and concatenation baselines.

pub mod bank;
pub mod cli;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod ncc;
pub mod selector;

pub use bank::{load_bank, normalize_block, save_bank, ExtractorMeta, FeatureBank, FeatureBlock, NormalizedView};
pub use episodes::{make_synthetic_bank, sample_episode, Count, SamplerConfig, SyntheticSpec};
pub use error::{Error, Result};
pub use harness::{aggregate_ci, lambda_heatmap, run_method, EvalReport, MethodKind, MethodSpec};
pub use ncc::{accuracy, compute_centroids, cosine_similarity, predict, select_features, CentroidModel, Episode, Labeled, SelectionVector};
pub use selector::{nll_gradient, optimize_selection, support_nll, SelectionResult, SelectorConfig};
