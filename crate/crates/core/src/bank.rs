//! Multi-domain feature banks: data model, per-block normalization and the
//! SURB-v1 / CSV on-disk formats.
//!
//! A bank stores, for `n` labelled items, one feature block per extractor.
//! Raw features are kept as `f32` (the on-disk precision); everything
//! downstream of [`NormalizedView`] computes in `f64`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm floor used by block normalization and cosine similarity.
pub const EPS_NORM: f64 = 1e-12;

pub const SURB_MAGIC: &[u8; 4] = b"SURB";
pub const SURB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("BadMagic: expected \"SURB\" at byte 0, found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("UnsupportedVersion: version {version} at byte 4 (only 1 is supported)")]
    UnsupportedVersion { version: u32 },
    #[error("TruncatedFile: needed {needed} more byte(s) at byte offset {offset}")]
    TruncatedFile { offset: usize, needed: usize },
    #[error("TrailingBytes: {count} unexpected byte(s) after the last record at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("InvalidName: extractor record {record} at byte {offset} is not valid UTF-8")]
    InvalidName { record: usize, offset: usize },
    #[error("NameTooLong: extractor name `{name}` exceeds 65535 bytes")]
    NameTooLong { name: String },
    #[error("DuplicateExtractorName: `{name}` repeated at extractor record {record}")]
    DuplicateExtractorName { name: String, record: usize },
    #[error("EmptyExtractorName: extractor record {record} has an empty name")]
    EmptyExtractorName { record: usize },
    #[error("ZeroDim: extractor `{name}` has dimension 0")]
    ZeroDim { name: String },
    #[error("LabelOutOfRange: item {index} has label {label} but label cardinality is {cardinality}")]
    LabelOutOfRange { index: usize, label: u32, cardinality: u32 },
    #[error("RowCountMismatch: extractor `{name}` holds {found} values, expected {expected}")]
    RowCountMismatch { name: String, expected: usize, found: usize },
    #[error("EmptyBank: a bank needs at least one item")]
    EmptyBank,
    #[error("NoExtractors: a bank needs at least one extractor")]
    NoExtractors,
    #[error("TooFewClasses: a bank needs at least 2 distinct labels, found {found}")]
    TooFewClasses { found: usize },
    #[error("UnknownExtractor: `{name}` (available: {available})")]
    UnknownExtractor { name: String, available: String },
    #[error("Csv: record {record}: {message}")]
    Csv { record: usize, message: String },
    #[error("Manifest: {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl BankError {
    fn io(path: &Path, source: io::Error) -> Self {
        BankError::Io { path: path.to_path_buf(), source }
    }
}

/// Name and dimensionality of one feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractorMeta {
    pub name: String,
    pub dim: usize,
}

/// Raw features of one extractor over all items, `n × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub meta: ExtractorMeta,
    pub values: Vec<f32>,
}

impl FeatureBlock {
    pub fn new(name: impl Into<String>, dim: usize, values: Vec<f32>) -> Self {
        FeatureBlock { meta: ExtractorMeta { name: name.into(), dim }, values }
    }

    /// Builds a block from per-item rows. Every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(name: impl Into<String>, rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let values = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.as_ref().len(), dim, "ragged rows");
                r.as_ref().iter().map(|&v| v as f32)
            })
            .collect();
        FeatureBlock::new(name, dim, values)
    }
}

/// Per-item feature blocks from `K` extractors plus dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dataset_name: String,
    class_names: BTreeMap<u32, String>,
    label_cardinality: u32,
    labels: Vec<u32>,
    blocks: Vec<FeatureBlock>,
}

impl FeatureBank {
    /// Builds and validates a bank. `label_cardinality` bounds every label.
    pub fn new(
        dataset_name: impl Into<String>,
        labels: Vec<u32>,
        label_cardinality: u32,
        blocks: Vec<FeatureBlock>,
    ) -> Result<Self, BankError> {
        let bank = FeatureBank {
            dataset_name: dataset_name.into(),
            class_names: BTreeMap::new(),
            label_cardinality,
            labels,
            blocks,
        };
        bank.validate()?;
        Ok(bank)
    }

    /// Like [`FeatureBank::new`], with the cardinality inferred as `max(label) + 1`.
    pub fn from_blocks(
        dataset_name: impl Into<String>,
        labels: Vec<u32>,
        blocks: Vec<FeatureBlock>,
    ) -> Result<Self, BankError> {
        let cardinality = labels.iter().max().map_or(0, |&m| m + 1);
        FeatureBank::new(dataset_name, labels, cardinality, blocks)
    }

    pub fn with_class_names(mut self, class_names: BTreeMap<u32, String>) -> Self {
        self.class_names = class_names;
        self
    }

    pub fn validate(&self) -> Result<(), BankError> {
        if self.labels.is_empty() {
            return Err(BankError::EmptyBank);
        }
        if self.blocks.is_empty() {
            return Err(BankError::NoExtractors);
        }
        let mut seen = HashSet::new();
        for (record, block) in self.blocks.iter().enumerate() {
            let meta = &block.meta;
            if meta.name.is_empty() {
                return Err(BankError::EmptyExtractorName { record });
            }
            if meta.name.len() > u16::MAX as usize {
                return Err(BankError::NameTooLong { name: meta.name.clone() });
            }
            if !seen.insert(meta.name.as_str()) {
                return Err(BankError::DuplicateExtractorName { name: meta.name.clone(), record });
            }
            if meta.dim == 0 {
                return Err(BankError::ZeroDim { name: meta.name.clone() });
            }
            let expected = self.labels.len() * meta.dim;
            if block.values.len() != expected {
                return Err(BankError::RowCountMismatch {
                    name: meta.name.clone(),
                    expected,
                    found: block.values.len(),
                });
            }
        }
        for (index, &label) in self.labels.iter().enumerate() {
            if label >= self.label_cardinality {
                return Err(BankError::LabelOutOfRange {
                    index,
                    label,
                    cardinality: self.label_cardinality,
                });
            }
        }
        let distinct = self.classes().len();
        if distinct < 2 {
            return Err(BankError::TooFewClasses { found: distinct });
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn set_dataset_name(&mut self, name: impl Into<String>) {
        self.dataset_name = name.into();
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn label_cardinality(&self) -> u32 {
        self.label_cardinality
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_extractors(&self) -> usize {
        self.blocks.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn blocks(&self) -> &[FeatureBlock] {
        &self.blocks
    }

    pub fn extractors(&self) -> impl Iterator<Item = &ExtractorMeta> + '_ {
        self.blocks.iter().map(|b| &b.meta)
    }

    pub fn extractor_names(&self) -> Vec<String> {
        self.extractors().map(|m| m.name.clone()).collect()
    }

    pub fn extractor_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.meta.name == name)
    }

    /// Raw features of item `item` in block `block`.
    pub fn row(&self, block: usize, item: usize) -> &[f32] {
        let b = &self.blocks[block];
        &b.values[item * b.meta.dim..(item + 1) * b.meta.dim]
    }

    /// Mutable raw row; used to build perturbed copies in tests and tools.
    pub fn row_mut(&mut self, block: usize, item: usize) -> &mut [f32] {
        let b = &mut self.blocks[block];
        let d = b.meta.dim;
        &mut b.values[item * d..(item + 1) * d]
    }

    /// Distinct labels present in the bank, ascending.
    pub fn classes(&self) -> Vec<u32> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Item indices grouped by label, ascending in both keys and indices.
    pub fn items_by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    /// Restricts the bank to the named blocks, in the order given.
    pub fn subset_extractors<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureBank, BankError> {
        if names.is_empty() {
            return Err(BankError::NoExtractors);
        }
        let mut blocks = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let idx = self.extractor_index(name).ok_or_else(|| BankError::UnknownExtractor {
                name: name.to_string(),
                available: self.extractor_names().join(", "),
            })?;
            blocks.push(self.blocks[idx].clone());
        }
        let bank = FeatureBank {
            dataset_name: self.dataset_name.clone(),
            class_names: self.class_names.clone(),
            label_cardinality: self.label_cardinality,
            labels: self.labels.clone(),
            blocks,
        };
        bank.validate()?;
        Ok(bank)
    }
}

/// Scales `v` to unit L2 norm; vectors with norm below [`EPS_NORM`] are
/// divided by the floor instead, so zero maps to zero.
pub fn normalize_block(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS_NORM);
    v.iter().map(|x| x / norm).collect()
}

/// Per-row, per-block L2-normalized copy of a bank in `f64`.
#[derive(Debug, Clone)]
pub struct NormalizedView {
    extractors: Vec<ExtractorMeta>,
    labels: Vec<u32>,
    blocks: Vec<Vec<f64>>,
}

impl NormalizedView {
    pub fn new(bank: &FeatureBank) -> Self {
        let blocks = bank
            .blocks()
            .iter()
            .map(|b| {
                let mut out = Vec::with_capacity(b.values.len());
                for row in b.values.chunks(b.meta.dim) {
                    let row: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                    out.extend(normalize_block(&row));
                }
                out
            })
            .collect();
        NormalizedView {
            extractors: bank.extractors().cloned().collect(),
            labels: bank.labels().to_vec(),
            blocks,
        }
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn n_extractors(&self) -> usize {
        self.extractors.len()
    }

    pub fn extractors(&self) -> &[ExtractorMeta] {
        &self.extractors
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.extractors.iter().map(|m| m.dim).collect()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, block: usize, item: usize) -> &[f64] {
        let d = self.extractors[block].dim;
        &self.blocks[block][item * d..(item + 1) * d]
    }

    /// All normalized blocks of one item, in extractor order.
    pub fn item_blocks(&self, item: usize) -> Vec<&[f64]> {
        (0..self.n_extractors()).map(|k| self.row(k, item)).collect()
    }
}

// ---------------------------------------------------------------------------
// SURB-v1

/// Serializes a bank to SURB-v1 bytes.
pub fn encode_surb(bank: &FeatureBank) -> Result<Vec<u8>, BankError> {
    bank.validate()?;
    let n = bank.n_items();
    let payload: usize = bank.blocks().iter().map(|b| 6 + b.meta.name.len() + 4 * b.values.len()).sum();
    let mut out = Vec::with_capacity(24 + 4 * n + payload);
    out.extend_from_slice(SURB_MAGIC);
    out.extend_from_slice(&SURB_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(bank.n_extractors() as u32).to_le_bytes());
    out.extend_from_slice(&bank.label_cardinality().to_le_bytes());
    for &l in bank.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for block in bank.blocks() {
        out.extend_from_slice(&(block.meta.name.len() as u16).to_le_bytes());
        out.extend_from_slice(block.meta.name.as_bytes());
        out.extend_from_slice(&(block.meta.dim as u32).to_le_bytes());
        for v in &block.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], BankError> {
        let remaining = self.buf.len() - self.pos;
        if len > remaining {
            return Err(BankError::TruncatedFile { offset: self.pos, needed: len - remaining });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, BankError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, BankError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BankError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Fails fast when `count * width` bytes cannot possibly be present.
    fn require(&self, count: u64, width: u64) -> Result<usize, BankError> {
        let remaining = (self.buf.len() - self.pos) as u64;
        match count.checked_mul(width) {
            Some(bytes) if bytes <= remaining => Ok(bytes as usize),
            Some(bytes) => Err(BankError::TruncatedFile {
                offset: self.pos,
                needed: (bytes - remaining).min(usize::MAX as u64) as usize,
            }),
            None => Err(BankError::TruncatedFile { offset: self.pos, needed: usize::MAX }),
        }
    }
}

/// Parses SURB-v1 bytes. The dataset name is left empty; [`load_bank`]
/// fills it from the manifest or the file name.
pub fn decode_surb(bytes: &[u8]) -> Result<FeatureBank, BankError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != SURB_MAGIC {
        return Err(BankError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() });
    }
    cur.pos = 4;
    let version = cur.u32()?;
    if version != SURB_VERSION {
        return Err(BankError::UnsupportedVersion { version });
    }
    let n = cur.u64()?;
    let k = cur.u32()? as usize;
    let cardinality = cur.u32()?;

    cur.require(n, 4)?;
    let n = n as usize;
    let labels: Vec<u32> = cur
        .take(4 * n)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= cardinality) {
        return Err(BankError::LabelOutOfRange { index, label, cardinality });
    }

    let mut seen = HashSet::new();
    let mut blocks = Vec::with_capacity(k.min(1024));
    for record in 0..k {
        let name_len = cur.u16()? as usize;
        let name_offset = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| BankError::InvalidName { record, offset: name_offset })?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(BankError::DuplicateExtractorName { name, record });
        }
        let dim = cur.u32()? as usize;
        let bytes = cur.require(n as u64 * dim as u64, 4)?;
        let values = cur
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(FeatureBlock::new(name, dim, values));
    }
    if cur.pos != bytes.len() {
        return Err(BankError::TrailingBytes { offset: cur.pos, count: bytes.len() - cur.pos });
    }
    FeatureBank::new(String::new(), labels, cardinality, blocks)
}

// ---------------------------------------------------------------------------
// CSV

/// Writes the CSV form: `label,<name>:0,...,<name>:d-1,...`, one row per item.
pub fn encode_csv(bank: &FeatureBank) -> Result<Vec<u8>, BankError> {
    bank.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| BankError::Csv { record: 0, message: e.to_string() };
    let mut header = vec!["label".to_string()];
    for m in bank.extractors() {
        header.extend((0..m.dim).map(|j| format!("{}:{j}", m.name)));
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..bank.n_items() {
        let mut rec = vec![bank.labels()[i].to_string()];
        for k in 0..bank.n_extractors() {
            rec.extend(bank.row(k, i).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| BankError::Csv { record: 0, message: e.to_string() })
}

/// Parses the CSV form. Label cardinality is `max(label) + 1`.
pub fn decode_csv(bytes: &[u8]) -> Result<FeatureBank, BankError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| BankError::Csv { record: 0, message: e.to_string() })?
        .clone();
    if header.get(0) != Some("label") {
        return Err(BankError::Csv { record: 0, message: "first column must be `label`".into() });
    }
    // Group columns into blocks: `<name>:<j>` with j counting up from 0.
    let mut metas: Vec<ExtractorMeta> = Vec::new();
    for (col, field) in header.iter().enumerate().skip(1) {
        let (name, idx) = field.rsplit_once(':').ok_or_else(|| BankError::Csv {
            record: 0,
            message: format!("column {col} `{field}` is not of the form <name>:<index>"),
        })?;
        let idx: usize = idx.parse().map_err(|_| BankError::Csv {
            record: 0,
            message: format!("column {col} `{field}` has a non-integer index"),
        })?;
        match metas.last_mut() {
            Some(m) if m.name == name && idx == m.dim => m.dim += 1,
            _ if idx == 0 => {
                if metas.iter().any(|m| m.name == name) {
                    return Err(BankError::DuplicateExtractorName { name: name.into(), record: metas.len() });
                }
                metas.push(ExtractorMeta { name: name.into(), dim: 1 });
            }
            _ => {
                return Err(BankError::Csv {
                    record: 0,
                    message: format!("column {col} `{field}` breaks the 0..d index sequence"),
                })
            }
        }
    }
    let mut labels = Vec::new();
    let mut values: Vec<Vec<f32>> = vec![Vec::new(); metas.len()];
    for (r, rec) in rdr.records().enumerate() {
        let record = r + 1;
        let rec = rec.map_err(|e| BankError::Csv { record, message: e.to_string() })?;
        let label: u32 = rec[0].trim().parse().map_err(|_| BankError::Csv {
            record,
            message: format!("label `{}` is not a non-negative integer", &rec[0]),
        })?;
        labels.push(label);
        let mut fields = rec.iter().skip(1);
        for (k, m) in metas.iter().enumerate() {
            for _ in 0..m.dim {
                let f = fields.next().ok_or_else(|| BankError::Csv { record, message: "too few fields".into() })?;
                let v: f32 = f.trim().parse().map_err(|_| BankError::Csv {
                    record,
                    message: format!("`{f}` is not a number"),
                })?;
                values[k].push(v);
            }
        }
    }
    let blocks = metas.into_iter().zip(values).map(|(meta, values)| FeatureBlock { meta, values }).collect();
    FeatureBank::from_blocks(String::new(), labels, blocks)
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    dataset_name: String,
    #[serde(default)]
    class_names: BTreeMap<u32, String>,
}

/// Location of the JSON manifest that accompanies a bank file.
pub fn manifest_path(bank_path: &Path) -> PathBuf {
    bank_path.with_extension("json")
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a SURB-v1 bank (or a CSV bank when the extension is `.csv`),
/// applying the sidecar manifest when one exists. Without a manifest the
/// dataset name is the file stem.
pub fn load_bank(path: impl AsRef<Path>) -> Result<FeatureBank, BankError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| BankError::io(path, e))?;
    let mut bank = if is_csv(path) { decode_csv(&bytes)? } else { decode_surb(&bytes)? };
    let mpath = manifest_path(path);
    if mpath.is_file() {
        let text = fs::read_to_string(&mpath).map_err(|e| BankError::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| BankError::Manifest { path: mpath.clone(), message: e.to_string() })?;
        bank.dataset_name = manifest.dataset_name;
        bank.class_names = manifest.class_names;
    } else {
        bank.dataset_name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(bank)
}

/// Writes the bank (SURB-v1, or CSV for a `.csv` path) and its manifest.
pub fn save_bank(bank: &FeatureBank, path: impl AsRef<Path>) -> Result<(), BankError> {
    let path = path.as_ref();
    let bytes = if is_csv(path) { encode_csv(bank)? } else { encode_surb(bank)? };
    fs::write(path, bytes).map_err(|e| BankError::io(path, e))?;
    let manifest = Manifest { dataset_name: bank.dataset_name.clone(), class_names: bank.class_names.clone() };
    let mpath = manifest_path(path);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&mpath, text).map_err(|e| BankError::io(&mpath, e))
}
