//! SUR against single-extractor and concatenation baselines on a synthetic
//! multi-domain suite, followed by the λ heatmap.
//!
//! cargo run --release --example synthetic_benchmark [episodes]

use sur::episodes::Count;
use sur::harness::{evaluate, lambda_heatmap, LambdaDump};
use sur::{make_synthetic_bank, EvalReport, MethodKind, MethodSpec, SamplerConfig, SyntheticSpec};

fn main() -> sur::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(600);
    let spec = SyntheticSpec { n_domains: 4, ..Default::default() };
    let banks = make_synthetic_bank(&spec)?;

    let mut methods = vec![MethodSpec::new(MethodKind::Sur), MethodSpec::new(MethodKind::Concat)];
    for name in banks[0].extractor_names() {
        methods.push(MethodSpec::new(MethodKind::Single { name }));
    }
    let sampler = SamplerConfig {
        way: Count::Range { min: 5, max: 10 },
        // one-shot centroids coincide with their support item, so the support
        // loss cannot tell blocks apart; start at two shots
        shots: Count::Range { min: 2, max: 5 },
        queries_per_class: 10,
        episodes,
        seed: 0,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = evaluate(&banks, &methods, &sampler, workers)?;
    print!("{}", EvalReport::from_runs(&runs)?.summary_table());

    let heatmap = lambda_heatmap(&LambdaDump::from_runs(&runs).traces)?;
    println!("\nmean λ (rows: extractors, columns: test domains)");
    print!("{}", heatmap.to_csv());
    Ok(())
}
