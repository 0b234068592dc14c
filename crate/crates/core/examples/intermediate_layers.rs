//! Treats the layers of one backbone as separate blocks and lets SUR weight
//! them. Here the "layers" are synthetic blocks of varying quality; the
//! same call works on any bank whose blocks are layer activations.

use sur::episodes::{split_intermediate_layers, Count};
use sur::{make_synthetic_bank, run_method, EvalReport, MethodKind, MethodSpec, SamplerConfig, SyntheticSpec};

fn main() -> sur::Result<()> {
    let spec = SyntheticSpec { n_domains: 3, generalists: 2, generalist_signal: 0.4, ..Default::default() };
    let full = make_synthetic_bank(&spec)?.remove(1);
    let layers = ["extractor_0", "extractor_1", "generalist_0", "generalist_1"];
    let bank = split_intermediate_layers(&full, &layers)?;
    println!("layers: {:?}", bank.extractor_names());

    let sampler = SamplerConfig {
        way: Count::Range { min: 5, max: 10 },
        shots: Count::Range { min: 2, max: 5 },
        queries_per_class: 10,
        episodes: 200,
        seed: 1,
    };
    let mut runs = Vec::new();
    for kind in [MethodKind::Sur, MethodKind::Concat, MethodKind::Single { name: "generalist_0".into() }] {
        runs.push(run_method(&bank, &MethodSpec::new(kind), &sampler, 2)?);
    }
    let report = EvalReport::from_runs(&runs)?;
    print!("{}", report.summary_table());
    print!("{}", report.lambdas_csv());
    Ok(())
}
