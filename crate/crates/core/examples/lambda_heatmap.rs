//! Runs SUR on every domain of a synthetic suite, dumps per-episode λ and
//! renders the extractor × dataset matrix as CSV and SVG.
//!
//! cargo run --release --example lambda_heatmap [out_dir]

use std::path::PathBuf;

use sur::episodes::Count;
use sur::harness::{evaluate, lambda_heatmap, LambdaDump};
use sur::{make_synthetic_bank, MethodKind, MethodSpec, SamplerConfig, SyntheticSpec};

fn main() -> sur::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let banks = make_synthetic_bank(&SyntheticSpec { n_domains: 5, generalists: 1, ..Default::default() })?;
    let sampler = SamplerConfig {
        way: Count::Fixed(5),
        shots: Count::Range { min: 2, max: 5 },
        queries_per_class: 5,
        episodes: 100,
        seed: 0,
    };
    let runs = evaluate(&banks, &[MethodSpec::new(MethodKind::Sur)], &sampler, 4)?;

    let dump = LambdaDump::from_runs(&runs);
    let dump_path = out.join("sur_lambdas.json");
    dump.write(&dump_path)?;
    let heatmap = lambda_heatmap(&LambdaDump::read(&dump_path)?.traces)?;
    print!("{}", heatmap.to_csv());

    let svg = out.join("sur_lambdas.svg");
    std::fs::write(&svg, heatmap.to_svg()).map_err(|e| sur::Error::Format(e.to_string()))?;
    println!("wrote {} and {}", dump_path.display(), svg.display());
    Ok(())
}
