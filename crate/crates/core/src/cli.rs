//! Command-line front end: `inspect`, `synth`, `eval`, `lambda-stats`, `convert`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bank::{load_bank, save_bank, FeatureBank};
use crate::episodes::{make_synthetic_bank, Count, SamplerConfig, SyntheticSpec};
use crate::error::Error;
use crate::harness::{
    check_experiment, evaluate, lambda_heatmap, write_report, EvalReport, Experiment, LambdaDump, MethodKind,
    MethodSpec, ReportFormat,
};
use crate::selector::SelectorConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sur", version, about = "Select relevant feature blocks for few-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a summary of a bank (SURB or CSV).
    Inspect { bank: PathBuf },
    /// Generate synthetic multi-domain banks, one per domain.
    Synth(SynthArgs),
    /// Evaluate methods over sampled episodes.
    Eval(Box<EvalArgs>),
    /// Build the extractor × dataset λ matrix from an eval λ dump.
    LambdaStats(LambdaStatsArgs),
    /// Convert between CSV and SURB banks (by file extension).
    Convert { input: PathBuf, output: PathBuf },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub domains: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub generalists: usize,
    #[arg(long, default_value_t = 0.5)]
    pub generalist_signal: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON experiment file: {banks, methods, sampler}.
    #[arg(long, conflicts_with_all = ["bank", "method"])]
    pub experiment: Option<PathBuf>,
    /// Bank file; `synth` evaluates the default synthetic suite. Repeatable.
    #[arg(long)]
    pub bank: Vec<String>,
    /// single:NAME | concat | sur | sur-subset:NAME,... Repeatable; default sur.
    #[arg(long)]
    pub method: Vec<MethodKind>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// INT or MIN..MAX.
    #[arg(long)]
    pub way: Option<Count>,
    /// INT or MIN..MAX (support items per class).
    #[arg(long)]
    pub shots: Option<Count>,
    #[arg(long)]
    pub queries: Option<u32>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub l1: Option<f64>,
    /// Episode seed; 0 when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Report path. CSV also writes `<stem>_lambdas.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: ReportFormat,
    /// Write per-episode λ of SUR runs as JSON.
    #[arg(long)]
    pub dump_lambdas: Option<PathBuf>,
    /// Record wall-clock runtimes in the report files (otherwise 0).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct LambdaStatsArgs {
    pub dump: PathBuf,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_USAGE, message: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Inspect { bank } => cmd_inspect(&bank),
        Command::Synth(args) => cmd_synth(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::LambdaStats(args) => cmd_lambda_stats(&args),
        Command::Convert { input, output } => cmd_convert(&input, &output),
    }
}

pub fn bank_summary(bank: &FeatureBank) -> String {
    let mut s = format!(
        "dataset: {}\nitems: {}\nextractors: {}\n",
        bank.dataset_name(),
        bank.n_items(),
        bank.n_extractors()
    );
    for m in bank.extractors() {
        s.push_str(&format!("  {:<24} dim {}\n", m.name, m.dim));
    }
    let by_class = bank.items_by_class();
    s.push_str(&format!("classes: {} (label cardinality {})\nlabel histogram:\n", by_class.len(), bank.label_cardinality()));
    for (label, items) in &by_class {
        match bank.class_names().get(label) {
            Some(name) => s.push_str(&format!("  {label:>6} {name:<20} {}\n", items.len())),
            None => s.push_str(&format!("  {label:>6} {}\n", items.len())),
        }
    }
    s
}

fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let bank = load_bank(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    print!("bank: {}\n{}", path.display(), bank_summary(&bank));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        n_domains: args.domains,
        classes_per_domain: args.classes,
        items_per_class: args.items,
        dim: args.dim,
        signal_strength: args.signal,
        noise_sigma: args.noise,
        seed: args.seed,
        generalists: args.generalists,
        generalist_signal: args.generalist_signal,
    };
    let banks = make_synthetic_bank(&spec).map_err(Failure::usage)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::runtime(format!("{}: {e}", args.out.display())))?;
    for bank in &banks {
        let path = args.out.join(format!("{}.surb", bank.dataset_name()));
        save_bank(bank, &path).map_err(Failure::runtime)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn load_eval_banks(specs: &[String]) -> Result<Vec<FeatureBank>, Failure> {
    let mut banks = Vec::new();
    for spec in specs {
        if spec == "synth" {
            banks.extend(make_synthetic_bank(&SyntheticSpec::default()).map_err(Failure::usage)?);
        } else {
            banks.push(load_bank(spec).map_err(|e| Failure::usage(format!("{spec}: {e}")))?);
        }
    }
    Ok(banks)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let (banks, mut methods, mut sampler) = match &args.experiment {
        Some(path) => {
            let exp = Experiment::read(path).map_err(Failure::usage)?;
            let base = path.parent().unwrap_or(Path::new(""));
            let specs: Vec<String> = exp
                .banks
                .iter()
                .map(|b| if b.as_os_str() == "synth" || b.is_absolute() { b.clone() } else { base.join(b) })
                .map(|b| b.to_string_lossy().into_owned())
                .collect();
            (load_eval_banks(&specs)?, exp.methods, exp.sampler)
        }
        None => {
            if args.bank.is_empty() {
                return Err(Failure::usage("eval needs --bank PATH (repeatable) or --experiment FILE"));
            }
            let kinds = if args.method.is_empty() { vec![MethodKind::Sur] } else { args.method.clone() };
            (load_eval_banks(&args.bank)?, kinds.into_iter().map(MethodSpec::new).collect(), SamplerConfig::default())
        }
    };
    if methods.is_empty() {
        return Err(Failure::usage("no methods to evaluate"));
    }

    if let Some(v) = args.episodes {
        sampler.episodes = v;
    }
    if let Some(v) = args.way {
        sampler.way = v;
    }
    if let Some(v) = args.shots {
        sampler.shots = v;
    }
    if let Some(v) = args.queries {
        sampler.queries_per_class = v;
    }
    if let Some(v) = args.seed {
        sampler.seed = v;
    }
    for m in &mut methods {
        apply_selector_flags(&mut m.selector, args);
    }
    if args.workers == 0 {
        return Err(Failure::usage("--workers must be at least 1"));
    }

    check_experiment(&banks, &methods, &sampler).map_err(Failure::usage)?;
    let runs = evaluate(&banks, &methods, &sampler, args.workers).map_err(Failure::runtime)?;
    let report = EvalReport::from_runs(&runs).map_err(Failure::runtime)?;
    print!("{}", report.summary_table());

    if let Some(out) = &args.out {
        let file_report = if args.timing { report.clone() } else { report.clone().without_timing() };
        for p in write_report(&file_report, out, args.format).map_err(Failure::runtime)? {
            println!("wrote {}", p.display());
        }
    }
    if let Some(path) = &args.dump_lambdas {
        LambdaDump::from_runs(&runs).write(path).map_err(Failure::runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn apply_selector_flags(cfg: &mut SelectorConfig, args: &EvalArgs) {
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.rho {
        cfg.adadelta_rho = v;
    }
    if let Some(v) = args.eps {
        cfg.adadelta_eps = v;
    }
    if let Some(v) = args.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = args.l1 {
        cfg.l1_penalty = v;
    }
}

fn cmd_lambda_stats(args: &LambdaStatsArgs) -> Result<(), Failure> {
    let dump = LambdaDump::read(&args.dump).map_err(Failure::usage)?;
    let heatmap = lambda_heatmap(&dump.traces).map_err(Failure::usage)?;
    let csv = heatmap.to_csv();
    match &args.out {
        Some(out) => {
            fs::write(out, csv).map_err(|e| Failure::runtime(Error::io(out, e)))?;
            println!("wrote {}", out.display());
        }
        None => print!("{csv}"),
    }
    if let Some(svg) = &args.svg {
        fs::write(svg, heatmap.to_svg()).map_err(|e| Failure::runtime(Error::io(svg, e)))?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}

fn cmd_convert(input: &Path, output: &Path) -> Result<(), Failure> {
    let bank = load_bank(input).map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
    save_bank(&bank, output).map_err(Failure::runtime)?;
    println!("wrote {}", output.display());
    Ok(())
}
