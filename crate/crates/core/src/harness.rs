//! End-to-end episodic evaluation of baselines and SUR, with 95% confidence
//! intervals and per-extractor λ statistics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{BankError, FeatureBank, NormalizedView};
use crate::episodes::{episode_rng, sample_episode, SamplerConfig};
use crate::error::{Error, Result};
use crate::ncc::{accuracy, SelectionVector};
use crate::selector::{optimize_with_stats, SelectorConfig, SupportStats};

/// How the block weights of an episode are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    /// One extractor on its own.
    Single { name: String },
    /// All blocks with λ = 1.
    Concat,
    /// λ optimized on the support set.
    Sur,
    /// SUR over a truncated set of extractors.
    SurSubset { names: Vec<String> },
}

impl MethodKind {
    pub fn is_sur(&self) -> bool {
        matches!(self, MethodKind::Sur | MethodKind::SurSubset { .. })
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodKind::Single { name } => write!(f, "single:{name}"),
            MethodKind::Concat => f.write_str("concat"),
            MethodKind::Sur => f.write_str("sur"),
            MethodKind::SurSubset { names } => write!(f, "sur-subset:{}", names.join(",")),
        }
    }
}

impl FromStr for MethodKind {
    type Err = String;

    /// `single:NAME`, `concat`, `sur` or `sur-subset:A,B,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        match (head, rest) {
            ("concat", None) => Ok(MethodKind::Concat),
            ("sur", None) => Ok(MethodKind::Sur),
            ("single", Some(name)) if !name.is_empty() => Ok(MethodKind::Single { name: name.to_string() }),
            ("sur-subset", Some(names)) if !names.is_empty() => {
                Ok(MethodKind::SurSubset { names: names.split(',').map(str::to_string).collect() })
            }
            _ => Err(format!("unknown method `{s}` (expected single:NAME, concat, sur or sur-subset:NAME,...)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(flatten)]
    pub kind: MethodKind,
    #[serde(default)]
    pub selector: SelectorConfig,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec { kind, selector: SelectorConfig::default() }
    }

    pub fn with_selector(mut self, selector: SelectorConfig) -> Self {
        self.selector = selector;
        self
    }

    /// The bank this method actually sees.
    pub fn resolve(&self, bank: &FeatureBank) -> Result<FeatureBank, BankError> {
        match &self.kind {
            MethodKind::Single { name } => bank.subset_extractors(&[name]),
            MethodKind::SurSubset { names } => bank.subset_extractors(names),
            MethodKind::Concat | MethodKind::Sur => Ok(bank.clone()),
        }
    }
}

/// Mean and 95% half-width `1.96 · sd / √T` (sample sd); T = 1 gives 0.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    Ok((mean, 1.96 * var.sqrt() / t.sqrt()))
}

/// [`mean_ci95`] of per-episode accuracies in [0, 1], reported in percent.
pub fn aggregate_ci(accuracies: &[f64]) -> Result<(f64, f64)> {
    let (m, ci) = mean_ci95(accuracies)?;
    Ok((100.0 * m, 100.0 * ci))
}

/// Per-episode outcome of one method on one bank.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub dataset: String,
    pub method: String,
    pub accuracies: Vec<f64>,
    /// Extractor names the λ columns refer to (SUR variants only).
    pub extractors: Vec<String>,
    /// Final λ of every episode (SUR variants only).
    pub lambdas: Option<Vec<Vec<f64>>>,
    pub runtime_seconds: f64,
}

impl MethodRun {
    pub fn trace(&self) -> Option<LambdaTrace> {
        self.lambdas.as_ref().map(|l| LambdaTrace {
            dataset: self.dataset.clone(),
            method: self.method.clone(),
            extractors: self.extractors.clone(),
            lambdas: l.clone(),
        })
    }
}

struct EpisodeOutcome {
    accuracy: f64,
    lambda: Option<Vec<f64>>,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))
}

/// Runs one method over the sampler's episode stream on one bank.
///
/// Episode `i` is drawn from its own RNG and results are collected in
/// episode order, so the outcome does not depend on `workers`.
pub fn run_method(bank: &FeatureBank, method: &MethodSpec, sampler: &SamplerConfig, workers: usize) -> Result<MethodRun> {
    sampler.validate()?;
    method.selector.validate()?;
    let resolved = method.resolve(bank)?;
    sampler.check_bank(&resolved)?;
    let view = NormalizedView::new(&resolved);
    let k = view.n_extractors();

    let start = Instant::now();
    let run_episode = |i: usize| -> Result<EpisodeOutcome> {
        let episode = sample_episode(&resolved, sampler, &mut episode_rng(sampler.seed, i))?;
        if method.kind.is_sur() {
            let stats = SupportStats::new(&view, &episode)?;
            let result = optimize_with_stats(&stats, &method.selector);
            let accuracy = accuracy(&view, &episode, &result.lambda)?;
            Ok(EpisodeOutcome { accuracy, lambda: Some(result.lambda.into_inner()) })
        } else {
            let accuracy = accuracy(&view, &episode, &SelectionVector::ones(k))?;
            Ok(EpisodeOutcome { accuracy, lambda: None })
        }
    };
    let outcomes: Vec<EpisodeOutcome> =
        thread_pool(workers)?.install(|| (0..sampler.episodes).into_par_iter().map(run_episode).collect::<Result<_>>())?;
    let runtime_seconds = start.elapsed().as_secs_f64();

    let accuracies = outcomes.iter().map(|o| o.accuracy).collect();
    let lambdas: Option<Vec<Vec<f64>>> = method.kind.is_sur().then(|| outcomes.into_iter().filter_map(|o| o.lambda).collect());
    Ok(MethodRun {
        dataset: bank.dataset_name().to_string(),
        method: method.kind.to_string(),
        accuracies,
        extractors: if lambdas.is_some() { resolved.extractor_names() } else { Vec::new() },
        lambdas,
        runtime_seconds,
    })
}

/// Checks that every method can run on every bank before anything is evaluated.
pub fn check_experiment(banks: &[FeatureBank], methods: &[MethodSpec], sampler: &SamplerConfig) -> Result<()> {
    sampler.validate()?;
    for m in methods {
        m.selector.validate()?;
        for b in banks {
            let resolved = m.resolve(b)?;
            sampler.check_bank(&resolved)?;
        }
    }
    Ok(())
}

/// Every method on every bank, bank-major.
pub fn evaluate(banks: &[FeatureBank], methods: &[MethodSpec], sampler: &SamplerConfig, workers: usize) -> Result<Vec<MethodRun>> {
    check_experiment(banks, methods, sampler)?;
    let mut runs = Vec::with_capacity(banks.len() * methods.len());
    for bank in banks {
        for m in methods {
            runs.push(run_method(bank, m, sampler, workers)?);
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub episodes: usize,
    pub mean_acc: f64,
    pub ci95: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub dataset: String,
    pub extractor: String,
    pub lambda_mean: f64,
    pub lambda_ci95: f64,
}

/// Aggregated results: accuracy in percent per (dataset, method) and λ
/// statistics per (dataset, extractor) for SUR variants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub results: Vec<ResultRow>,
    pub lambdas: Vec<LambdaRow>,
}

pub const RESULTS_HEADER: &str = "dataset,method,episodes,mean_acc,ci95,runtime_s";
pub const LAMBDAS_HEADER: &str = "dataset,extractor,lambda_mean,lambda_ci95";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

impl EvalReport {
    pub fn from_runs(runs: &[MethodRun]) -> Result<Self> {
        let mut report = EvalReport::default();
        for run in runs {
            let (mean_acc, ci95) = aggregate_ci(&run.accuracies)?;
            report.results.push(ResultRow {
                dataset: run.dataset.clone(),
                method: run.method.clone(),
                episodes: run.accuracies.len(),
                mean_acc,
                ci95,
                runtime_s: run.runtime_seconds,
            });
            if let Some(lambdas) = &run.lambdas {
                for (k, extractor) in run.extractors.iter().enumerate() {
                    let column: Vec<f64> = lambdas.iter().map(|l| l[k]).collect();
                    let (lambda_mean, lambda_ci95) = mean_ci95(&column)?;
                    report.lambdas.push(LambdaRow {
                        dataset: run.dataset.clone(),
                        extractor: extractor.clone(),
                        lambda_mean,
                        lambda_ci95,
                    });
                }
            }
        }
        Ok(report)
    }

    /// Zeroes runtimes so that reports of identical runs are byte-identical.
    pub fn without_timing(mut self) -> Self {
        self.results.iter_mut().for_each(|r| r.runtime_s = 0.0);
        self
    }

    pub fn row(&self, dataset: &str, method: &str) -> Option<&ResultRow> {
        self.results.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn results_csv(&self) -> String {
        let mut out = format!("{RESULTS_HEADER}\n");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in &self.results {
            w.serialize(r).expect("in-memory csv");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory csv")).unwrap());
        out
    }

    pub fn lambdas_csv(&self) -> String {
        let mut out = format!("{LAMBDAS_HEADER}\n");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in &self.lambdas {
            w.serialize(r).expect("in-memory csv");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory csv")).unwrap());
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report JSON: {e}")))
    }

    /// Plain-text table; `*` marks the best mean per dataset and `~` methods
    /// whose interval overlaps the best one.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<20} {:<28} {:>8} {:>16} {:>10}\n", "dataset", "method", "episodes", "accuracy (%)", "time (s)");
        let mut datasets: Vec<&str> = Vec::new();
        for r in &self.results {
            if !datasets.contains(&r.dataset.as_str()) {
                datasets.push(&r.dataset);
            }
        }
        for ds in datasets {
            let rows: Vec<&ResultRow> = self.results.iter().filter(|r| r.dataset == ds).collect();
            let best = rows.iter().copied().max_by(|a, b| a.mean_acc.total_cmp(&b.mean_acc)).unwrap();
            for r in rows {
                let flag = if std::ptr::eq(r, best) {
                    "*"
                } else if r.mean_acc + r.ci95 >= best.mean_acc - best.ci95 {
                    "~"
                } else {
                    " "
                };
                let acc = format!("{:.2} ± {:.2}", r.mean_acc, r.ci95);
                out.push_str(&format!(
                    "{:<20} {:<28} {:>8} {:>16}{} {:>9.2}\n",
                    r.dataset, r.method, r.episodes, acc, flag, r.runtime_s
                ));
            }
        }
        out
    }
}

/// Where the λ rows of a CSV report go: `<stem>_lambdas.csv` next to it.
pub fn lambda_report_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_lambdas.csv"))
}

/// Writes the report. CSV produces two files (results and λ rows); JSON one.
pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let write = |p: &Path, text: String| fs::write(p, text).map_err(|e| Error::io(p, e));
    match format {
        ReportFormat::Csv => {
            let lp = lambda_report_path(path);
            write(path, report.results_csv())?;
            write(&lp, report.lambdas_csv())?;
            Ok(vec![path.to_path_buf(), lp])
        }
        ReportFormat::Json => {
            write(path, report.to_json())?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

/// Final λ of every episode of one SUR run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrace {
    pub dataset: String,
    pub method: String,
    pub extractors: Vec<String>,
    pub lambdas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LambdaDump {
    pub traces: Vec<LambdaTrace>,
}

impl LambdaDump {
    pub fn from_runs(runs: &[MethodRun]) -> Self {
        LambdaDump { traces: runs.iter().filter_map(MethodRun::trace).collect() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("dump serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dump: LambdaDump =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for t in &dump.traces {
            if let Some(bad) = t.lambdas.iter().find(|l| l.len() != t.extractors.len()) {
                return Err(Error::Format(format!(
                    "{}: trace for {} has a λ row of length {} but {} extractors",
                    path.display(),
                    t.dataset,
                    bad.len(),
                    t.extractors.len()
                )));
            }
        }
        Ok(dump)
    }
}

/// Mean final λ (and its 95% half-width) per extractor and dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaHeatmap {
    pub extractors: Vec<String>,
    pub datasets: Vec<String>,
    /// `cells[i][j]` for extractor `i` on dataset `j`; `None` when the
    /// extractor was not part of that run.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

/// Builds the extractor × dataset λ matrix. Columns follow trace order; when
/// traces come from more than one method, columns are labelled `dataset [method]`.
pub fn lambda_heatmap(traces: &[LambdaTrace]) -> Result<LambdaHeatmap> {
    if traces.is_empty() {
        return Err(Error::MissingLambdaTrace("no SUR runs with stored λ".into()));
    }
    let multi_method = traces.iter().any(|t| t.method != traces[0].method);
    let mut extractors: Vec<String> = Vec::new();
    for t in traces {
        if t.lambdas.is_empty() {
            return Err(Error::MissingLambdaTrace(format!("{} [{}] has no episodes", t.dataset, t.method)));
        }
        for e in &t.extractors {
            if !extractors.contains(e) {
                extractors.push(e.clone());
            }
        }
    }
    let datasets = traces
        .iter()
        .map(|t| if multi_method { format!("{} [{}]", t.dataset, t.method) } else { t.dataset.clone() })
        .collect();
    let mut cells = vec![vec![None; traces.len()]; extractors.len()];
    for (j, t) in traces.iter().enumerate() {
        for (k, e) in t.extractors.iter().enumerate() {
            let i = extractors.iter().position(|x| x == e).unwrap();
            let column: Vec<f64> = t.lambdas.iter().map(|l| l[k]).collect();
            cells[i][j] = Some(mean_ci95(&column)?);
        }
    }
    Ok(LambdaHeatmap { extractors, datasets, cells })
}

impl LambdaHeatmap {
    pub fn cell(&self, extractor: &str, dataset: &str) -> Option<(f64, f64)> {
        let i = self.extractors.iter().position(|e| e == extractor)?;
        let j = self.datasets.iter().position(|d| d == dataset)?;
        self.cells[i][j]
    }

    /// `extractor,<dataset>:mean,<dataset>:ci95,...`; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["extractor".to_string()];
        for d in &self.datasets {
            header.push(format!("{d}:mean"));
            header.push(format!("{d}:ci95"));
        }
        w.write_record(&header).expect("in-memory csv");
        for (e, row) in self.extractors.iter().zip(&self.cells) {
            let mut rec = vec![e.clone()];
            for cell in row {
                match cell {
                    Some((m, c)) => {
                        rec.push(m.to_string());
                        rec.push(c.to_string());
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).unwrap()
    }

    /// Grey-scale heatmap, darker for larger mean λ.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 56;
        const LEFT: usize = 140;
        const TOP: usize = 110;
        let width = LEFT + CELL * self.datasets.len() + 10;
        let height = TOP + CELL * self.extractors.len() + 10;
        let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        for (j, d) in self.datasets.iter().enumerate() {
            let x = LEFT + j * CELL + CELL / 2;
            s.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-45 {x} {})\">{}</text>\n",
                TOP - 6,
                TOP - 6,
                esc(d)
            ));
        }
        for (i, e) in self.extractors.iter().enumerate() {
            let y = TOP + i * CELL;
            s.push_str(&format!("<text x=\"4\" y=\"{}\">{}</text>\n", y + CELL / 2 + 4, esc(e)));
            for (j, cell) in self.cells[i].iter().enumerate() {
                let x = LEFT + j * CELL;
                let (fill, label) = match cell {
                    Some((m, _)) => {
                        let shade = (255.0 * (1.0 - m.clamp(0.0, 1.0))).round() as u8;
                        (format!("rgb({shade},{shade},{shade})"), format!("{m:.2}"))
                    }
                    None => ("none".to_string(), String::new()),
                };
                let text_fill = if cell.is_some_and(|(m, _)| m > 0.5) { "white" } else { "black" };
                s.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\" stroke=\"#999\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{text_fill}\">{label}</text>\n",
                    x + CELL / 2,
                    y + CELL / 2 + 4
                ));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// An evaluation described in JSON: `{banks, methods, sampler}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub banks: Vec<PathBuf>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl Experiment {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
