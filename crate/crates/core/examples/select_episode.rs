//! Learns λ on the support set of one synthetic episode and prints the loss
//! trace, the final weights and query accuracy before and after selection.
//!
//! cargo run --example select_episode [seed]

use sur::episodes::{episode_rng, Count};
use sur::{
    accuracy, make_synthetic_bank, optimize_selection, sample_episode, NormalizedView, SamplerConfig,
    SelectionVector, SelectorConfig, SyntheticSpec,
};

fn main() -> sur::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let banks = make_synthetic_bank(&SyntheticSpec { n_domains: 4, generalists: 1, ..Default::default() })?;
    let bank = &banks[2];
    let view = NormalizedView::new(bank);

    let sampler = SamplerConfig { way: Count::Fixed(5), shots: Count::Fixed(3), queries_per_class: 10, episodes: 1, seed };
    let episode = sample_episode(bank, &sampler, &mut episode_rng(seed, 0))?;
    println!("dataset {}, classes {:?}", bank.dataset_name(), episode.classes());

    let config = SelectorConfig::default();
    let result = optimize_selection(&view, &episode, &config)?;
    for (i, loss) in result.loss_trace.iter().enumerate().step_by(5) {
        println!("  step {i:>3}  support loss {loss:.4}");
    }
    println!("  final     support loss {:.4}", result.converged_loss);

    for (name, l) in bank.extractor_names().iter().zip(result.lambda.as_slice()) {
        println!("  λ[{name}] = {l:.3}");
    }
    let k = bank.n_extractors();
    println!("query accuracy, all blocks equal: {:.3}", accuracy(&view, &episode, &SelectionVector::ones(k))?);
    println!("query accuracy, learned λ:        {:.3}", accuracy(&view, &episode, &result.lambda)?);
    Ok(())
}
