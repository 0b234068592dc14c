//! Episode sampling and synthetic multi-domain banks.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, FeatureBank, FeatureBlock};
use crate::error::Error;
use crate::ncc::{Episode, Labeled};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("InsufficientClasses: episode needs {requested} classes, bank has {available}")]
    InsufficientClasses { requested: u32, available: usize },
    #[error("InsufficientItems: class {class} has {available} items, episode needs {needed}")]
    InsufficientItems { class: u32, needed: usize, available: usize },
}

/// A per-episode count: fixed, or drawn uniformly from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Count {
    Fixed(u32),
    Range { min: u32, max: u32 },
}

impl Count {
    pub fn min(&self) -> u32 {
        match *self {
            Count::Fixed(v) => v,
            Count::Range { min, .. } => min,
        }
    }

    pub fn max(&self) -> u32 {
        match *self {
            Count::Fixed(v) => v,
            Count::Range { max, .. } => max,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, cap: u32, rng: &mut R) -> u32 {
        match *self {
            Count::Fixed(v) => v,
            Count::Range { min, max } => rng.random_range(min..=max.min(cap).max(min)),
        }
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Count::Fixed(v) => write!(f, "{v}"),
            Count::Range { min, max } => write!(f, "{min}..{max}"),
        }
    }
}

impl FromStr for Count {
    type Err = String;

    /// `N` or `MIN..MAX`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("`{s}` is not INT or MIN..MAX"));
        match s.split_once("..") {
            Some((a, b)) => {
                let (min, max) = (parse(a)?, parse(b)?);
                if min > max {
                    return Err(format!("empty range `{s}`"));
                }
                Ok(if min == max { Count::Fixed(min) } else { Count::Range { min, max } })
            }
            None => Ok(Count::Fixed(parse(s)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub way: Count,
    /// Support items per class.
    pub shots: Count,
    pub queries_per_class: u32,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { way: Count::Fixed(5), shots: Count::Fixed(5), queries_per_class: 15, episodes: 1000, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.way.min() < 2 {
            return Err(Error::config(format!("way must be at least 2, got {}", self.way)));
        }
        if self.shots.min() < 1 {
            return Err(Error::config(format!("shots must be at least 1, got {}", self.shots)));
        }
        for (name, c) in [("way", self.way), ("shots", self.shots)] {
            if c.min() > c.max() {
                return Err(Error::config(format!("{name} range {c} is empty")));
            }
        }
        if self.queries_per_class < 1 {
            return Err(Error::config("queries per class must be at least 1"));
        }
        if self.episodes < 1 {
            return Err(Error::config("episode count must be at least 1"));
        }
        Ok(())
    }

    /// Checks that every episode this config can produce fits in `bank`.
    pub fn check_bank(&self, bank: &FeatureBank) -> Result<(), SamplingError> {
        let by_class = bank.items_by_class();
        let available = by_class.len();
        if self.way.min() as usize > available {
            return Err(SamplingError::InsufficientClasses { requested: self.way.min(), available });
        }
        if let Count::Fixed(w) = self.way {
            if w as usize > available {
                return Err(SamplingError::InsufficientClasses { requested: w, available });
            }
        }
        let needed = (self.shots.max() + self.queries_per_class) as usize;
        if let Some((&class, items)) = by_class.iter().find(|(_, v)| v.len() < needed) {
            return Err(SamplingError::InsufficientItems { class, needed, available: items.len() });
        }
        Ok(())
    }
}

/// RNG for episode `index` of a stream; episodes are independent of each other.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

/// Draws one episode: classes uniformly without replacement, then per class
/// `shots` support and `queries_per_class` disjoint query items.
///
/// For a way range the upper bound is capped at the number of classes in
/// the bank; a fixed way larger than that is an error.
pub fn sample_episode<R: Rng + ?Sized>(
    bank: &FeatureBank,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Episode, SamplingError> {
    let by_class: Vec<(u32, Vec<usize>)> = bank.items_by_class().into_iter().collect();
    let available = by_class.len();
    let way = config.way.sample(available as u32, rng);
    if way as usize > available {
        return Err(SamplingError::InsufficientClasses { requested: way, available });
    }
    let shots = config.shots.sample(u32::MAX, rng) as usize;
    let queries = config.queries_per_class as usize;

    let mut picked = index::sample(rng, available, way as usize).into_vec();
    picked.sort_unstable();
    let mut support = Vec::with_capacity(way as usize * shots);
    let mut query = Vec::with_capacity(way as usize * queries);
    for c in picked {
        let (label, items) = &by_class[c];
        let needed = shots + queries;
        if items.len() < needed {
            return Err(SamplingError::InsufficientItems { class: *label, needed, available: items.len() });
        }
        let chosen = index::sample(rng, items.len(), needed);
        for (n, pos) in chosen.into_iter().enumerate() {
            let item = Labeled { index: items[pos], label: *label };
            if n < shots {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Ok(Episode { support, query })
}

/// The full episode stream of a sampler config, episode `i` drawn from [`episode_rng`]`(seed, i)`.
pub fn sample_episodes(bank: &FeatureBank, config: &SamplerConfig) -> Result<Vec<Episode>, SamplingError> {
    (0..config.episodes).map(|i| sample_episode(bank, config, &mut episode_rng(config.seed, i))).collect()
}

/// Parameters of a synthetic multi-domain suite.
///
/// Domain `t` gets its own bank. Extractor `t` carries class signal only on
/// domain `t` (`signal_strength · μ_tc` plus isotropic noise); every other
/// extractor is pure noise there. Optional generalist extractors carry
/// weaker signal (`generalist_signal`) on every domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    pub classes_per_domain: usize,
    pub items_per_class: usize,
    pub dim: usize,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub generalists: usize,
    pub generalist_signal: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_domains: 3,
            classes_per_domain: 10,
            items_per_class: 20,
            dim: 32,
            signal_strength: 1.0,
            noise_sigma: 0.2,
            seed: 0,
            generalists: 0,
            generalist_signal: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), Error> {
        let counts = [
            ("n_domains", self.n_domains),
            ("items_per_class", self.items_per_class),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.classes_per_domain < 2 {
            return Err(Error::config("classes_per_domain must be at least 2"));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength > 0.0) {
            return Err(Error::config(format!("signal_strength must be positive, got {}", self.signal_strength)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::config(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if !(self.generalist_signal.is_finite() && self.generalist_signal >= 0.0) {
            return Err(Error::config("generalist_signal must be non-negative"));
        }
        Ok(())
    }

    pub fn extractor_name(k: usize) -> String {
        format!("extractor_{k}")
    }

    pub fn domain_name(t: usize) -> String {
        format!("domain_{t}")
    }
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates one bank per synthetic domain, each carrying every extractor block.
pub fn make_synthetic_bank(spec: &SyntheticSpec) -> Result<Vec<FeatureBank>, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (domains, classes, dim) = (spec.n_domains, spec.classes_per_domain, spec.dim);
    // prototypes[t][c]: domain extractor t on its own domain
    let prototypes: Vec<Vec<Vec<f64>>> =
        (0..domains).map(|_| (0..classes).map(|_| unit_gaussian(dim, &mut rng)).collect()).collect();
    // generalist[g][t][c]
    let generalist: Vec<Vec<Vec<Vec<f64>>>> = (0..spec.generalists)
        .map(|_| (0..domains).map(|_| (0..classes).map(|_| unit_gaussian(dim, &mut rng)).collect()).collect())
        .collect();

    let n = classes * spec.items_per_class;
    let labels: Vec<u32> = (0..classes as u32).flat_map(|c| std::iter::repeat_n(c, spec.items_per_class)).collect();
    let mut banks = Vec::with_capacity(domains);
    for t in 0..domains {
        let n_blocks = domains + spec.generalists;
        let mut values: Vec<Vec<f32>> = vec![Vec::with_capacity(n * dim); n_blocks];
        for &c in &labels {
            let c = c as usize;
            for (b, block) in values.iter_mut().enumerate() {
                let mean: Option<(f64, &[f64])> = if b < domains {
                    (b == t).then(|| (spec.signal_strength, prototypes[t][c].as_slice()))
                } else {
                    Some((spec.generalist_signal, generalist[b - domains][t][c].as_slice()))
                };
                for j in 0..dim {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let centre = mean.map_or(0.0, |(s, mu)| s * mu[j]);
                    block.push((centre + spec.noise_sigma * noise) as f32);
                }
            }
        }
        let names = (0..domains)
            .map(SyntheticSpec::extractor_name)
            .chain((0..spec.generalists).map(|g| format!("generalist_{g}")));
        let blocks = names.zip(values).map(|(name, v)| FeatureBlock::new(name, dim, v)).collect();
        let class_names = (0..classes as u32).map(|c| (c, format!("d{t}_class{c}"))).collect();
        let bank = FeatureBank::from_blocks(SyntheticSpec::domain_name(t), labels.clone(), blocks)?
            .with_class_names(class_names);
        banks.push(bank);
    }
    Ok(banks)
}

/// Restricts a bank whose blocks are layers of one network to the named layers.
pub fn split_intermediate_layers<S: AsRef<str>>(bank: &FeatureBank, layer_names: &[S]) -> Result<FeatureBank, BankError> {
    bank.subset_extractors(layer_names)
}
