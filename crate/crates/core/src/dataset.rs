//! Labeled embedding datasets and their on-disk formats.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | u32 version=1 | u32 n | u32 d | u32 L
//! L x { u16 name_len | name (UTF-8) | u32 K | n x u32 label }
//! n*d x f32 embeddings, row-major
//! ```
//!
//! CSV layout: a header row, feature columns named `x0..x{d-1}` first, then
//! one integer column per labeling (the header is the labeling name).

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("label out of range: labeling '{labeling}' sample {index} has label {label} but K = {classes}")]
    LabelOutOfRange {
        labeling: String,
        index: usize,
        label: u32,
        classes: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("empty dataset")]
    Empty,
    #[error("unknown labeling '{name}'; available labelings: {}", available.join(", "))]
    UnknownLabeling { name: String, available: Vec<String> },
    #[error("duplicate labeling name '{0}'")]
    DuplicateLabeling(String),
    #[error("unknown class {class} in labeling '{labeling}' (K = {classes})")]
    UnknownClass {
        labeling: String,
        class: u32,
        classes: usize,
    },
    #[error("dataset failed validation: {0}")]
    Invalid(String),
}

/// On-disk format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Emb1,
    Csv,
}

impl Format {
    /// Guess from a file extension, defaulting to EMB1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Emb1,
        }
    }
}

/// One named labeling: a class id in `0..num_classes` per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub name: String,
    pub num_classes: usize,
    pub labels: Vec<u32>,
}

impl Labeling {
    pub fn new(name: impl Into<String>, num_classes: usize, labels: Vec<u32>) -> Self {
        Labeling {
            name: name.into(),
            num_classes,
            labels,
        }
    }

    /// Builds a labeling with `K = max label + 1`.
    pub fn from_labels(name: impl Into<String>, labels: Vec<u32>) -> Self {
        let k = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Labeling::new(name, k, labels)
    }

    /// Row indices of each class, in ascending order.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            if let Some(r) = rows.get_mut(y as usize) {
                r.push(i);
            }
        }
        rows
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            if let Some(c) = counts.get_mut(y as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// `n` labeled `d`-dimensional embeddings, stored row-major in 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    n: usize,
    d: usize,
    data: Vec<f64>,
    labelings: Vec<Labeling>,
    pub source: String,
}

impl EmbeddingDataset {
    /// Builds a dataset after shape checks (matrix size, label vector
    /// lengths, unique labeling names). Value-level invariants are left to
    /// [`validate_dataset`].
    pub fn new(
        d: usize,
        data: Vec<f64>,
        labelings: Vec<Labeling>,
        source: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        if d == 0 && !data.is_empty() {
            return Err(DatasetError::DimensionMismatch("d = 0 with nonempty data".into()));
        }
        let n = if d == 0 { 0 } else { data.len() / d };
        if n * d != data.len() {
            return Err(DatasetError::DimensionMismatch(format!(
                "{} values is not a multiple of d = {d}",
                data.len()
            )));
        }
        for (k, l) in labelings.iter().enumerate() {
            if l.labels.len() != n {
                return Err(DatasetError::DimensionMismatch(format!(
                    "labeling '{}' has {} labels for {n} samples",
                    l.name,
                    l.labels.len()
                )));
            }
            if labelings[..k].iter().any(|o| o.name == l.name) {
                return Err(DatasetError::DuplicateLabeling(l.name.clone()));
            }
        }
        Ok(EmbeddingDataset {
            n,
            d,
            data,
            labelings,
            source: source.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn labelings(&self) -> &[Labeling] {
        &self.labelings
    }

    pub fn labeling_names(&self) -> Vec<String> {
        self.labelings.iter().map(|l| l.name.clone()).collect()
    }

    pub fn labeling(&self, name: &str) -> Result<&Labeling, DatasetError> {
        self.labelings
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| DatasetError::UnknownLabeling {
                name: name.to_string(),
                available: self.labeling_names(),
            })
    }

    pub fn push_labeling(&mut self, labeling: Labeling) -> Result<(), DatasetError> {
        if labeling.labels.len() != self.n {
            return Err(DatasetError::DimensionMismatch(format!(
                "labeling '{}' has {} labels for {} samples",
                labeling.name,
                labeling.labels.len(),
                self.n
            )));
        }
        if self.labelings.iter().any(|l| l.name == labeling.name) {
            return Err(DatasetError::DuplicateLabeling(labeling.name));
        }
        self.labelings.push(labeling);
        Ok(())
    }

    /// Applies `f` to every row in place (used for rotation/scale checks).
    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> EmbeddingDataset {
        let mut out = Vec::with_capacity(self.data.len());
        let mut d = self.d;
        for i in 0..self.n {
            let r = f(self.row(i));
            d = r.len();
            out.extend(r);
        }
        EmbeddingDataset {
            n: self.n,
            d,
            data: out,
            labelings: self.labelings.clone(),
            source: self.source.clone(),
        }
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Breaks a dataset invariant; geometry operations must not run.
    Error,
    /// Restricts which operations are available.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyDataset,
    NonFinite { row: usize, col: usize },
    LabelLength { labeling: String, len: usize, n: usize },
    LabelOutOfRange { labeling: String, index: usize, label: u32, classes: usize },
    EmptyClass { labeling: String, class: u32 },
    SingletonClass { labeling: String, class: u32 },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::SingletonClass { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDataset => write!(f, "empty dataset"),
            Violation::NonFinite { row, col } => {
                write!(f, "non-finite value at row {row}, column {col}")
            }
            Violation::LabelLength { labeling, len, n } => {
                write!(f, "labeling '{labeling}' has {len} labels for {n} samples")
            }
            Violation::LabelOutOfRange { labeling, index, label, classes } => write!(
                f,
                "label out of range: labeling '{labeling}' sample {index} has label {label} (K = {classes})"
            ),
            Violation::EmptyClass { labeling, class } => {
                write!(f, "labeling '{labeling}': class {class} has no samples")
            }
            Violation::SingletonClass { labeling, class } => write!(
                f,
                "labeling '{labeling}': class {class} has 1 sample: second-moment ops unavailable"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelingSummary {
    pub name: String,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub min_samples_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub d: usize,
    pub labelings: Vec<LabelingSummary>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// True when no error-severity violation was found.
    pub fn passed(&self) -> bool {
        self.violations.iter().all(|v| v.severity() != Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity() == Severity::Error)
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.to_string()).collect()
    }
}

/// Checks every dataset invariant and reports what fails. Never errors.
pub fn validate_dataset(ds: &EmbeddingDataset) -> ValidationReport {
    let mut violations = Vec::new();
    if ds.n == 0 {
        violations.push(Violation::EmptyDataset);
    }
    for (idx, x) in ds.data.iter().enumerate() {
        if !x.is_finite() {
            violations.push(Violation::NonFinite {
                row: idx / ds.d,
                col: idx % ds.d,
            });
        }
    }
    let mut summaries = Vec::with_capacity(ds.labelings.len());
    for l in &ds.labelings {
        if l.labels.len() != ds.n {
            violations.push(Violation::LabelLength {
                labeling: l.name.clone(),
                len: l.labels.len(),
                n: ds.n,
            });
        }
        for (index, &label) in l.labels.iter().enumerate() {
            if label as usize >= l.num_classes {
                violations.push(Violation::LabelOutOfRange {
                    labeling: l.name.clone(),
                    index,
                    label,
                    classes: l.num_classes,
                });
            }
        }
        let counts = l.class_counts();
        for (c, &count) in counts.iter().enumerate() {
            match count {
                0 => violations.push(Violation::EmptyClass {
                    labeling: l.name.clone(),
                    class: c as u32,
                }),
                1 => violations.push(Violation::SingletonClass {
                    labeling: l.name.clone(),
                    class: c as u32,
                }),
                _ => {}
            }
        }
        summaries.push(LabelingSummary {
            name: l.name.clone(),
            num_classes: l.num_classes,
            min_samples_per_class: counts.iter().copied().min().unwrap_or(0),
            class_counts: counts,
        });
    }
    ValidationReport {
        n: ds.n,
        d: ds.d,
        labelings: summaries,
        violations,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads and validates a dataset. Error-severity violations become errors.
pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingDataset, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let source = path.display().to_string();
    let ds = match format {
        Format::Emb1 => read_emb1(&mut reader, &source)?,
        Format::Csv => read_csv(reader, &source)?,
    };
    ensure_valid(&ds)?;
    Ok(ds)
}

/// Maps the first error-severity violation to a typed error.
pub fn ensure_valid(ds: &EmbeddingDataset) -> Result<(), DatasetError> {
    let report = validate_dataset(ds);
    let first = report.errors().next().cloned();
    match first.as_ref() {
        None => Ok(()),
        Some(Violation::EmptyDataset) => Err(DatasetError::Empty),
        Some(Violation::NonFinite { row, col }) => Err(DatasetError::NonFinite {
            row: *row,
            col: *col,
        }),
        Some(Violation::LabelOutOfRange { labeling, index, label, classes }) => {
            Err(DatasetError::LabelOutOfRange {
                labeling: labeling.clone(),
                index: *index,
                label: *label,
                classes: *classes,
            })
        }
        Some(v) => Err(DatasetError::Invalid(v.to_string())),
    }
}

/// Writes a dataset in the given format.
pub fn write_embeddings(
    ds: &EmbeddingDataset,
    path: &Path,
    format: Format,
) -> Result<(), DatasetError> {
    if ds.n == 0 {
        return Err(DatasetError::Empty);
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Emb1 => write_emb1(ds, &mut w).map_err(io_err(path))?,
        Format::Csv => write_csv(ds, &mut w)?,
    }
    w.flush().map_err(io_err(path))
}

/// Serialises to EMB1 bytes.
pub fn write_emb1<W: Write>(ds: &EmbeddingDataset, w: &mut W) -> std::io::Result<()> {
    let to_u32 = |x: usize| {
        u32::try_from(x).map_err(|_| std::io::Error::other(format!("{x} does not fit in u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&to_u32(ds.n)?.to_le_bytes())?;
    w.write_all(&to_u32(ds.d)?.to_le_bytes())?;
    w.write_all(&to_u32(ds.labelings.len())?.to_le_bytes())?;
    for l in &ds.labelings {
        let name = l.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| std::io::Error::other("labeling name longer than 65535 bytes"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&to_u32(l.num_classes)?.to_le_bytes())?;
        for &y in &l.labels {
            w.write_all(&y.to_le_bytes())?;
        }
    }
    let mut buf = Vec::with_capacity(ds.data.len() * 4);
    for &x in &ds.data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

struct ByteReader<'a, R: Read> {
    inner: &'a mut R,
}

impl<R: Read> ByteReader<'_, R> {
    fn exact<const N: usize>(&mut self, what: &str) -> Result<[u8; N], DatasetError> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| DatasetError::Malformed(format!("truncated file while reading {what}")))?;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatasetError> {
        self.exact::<4>(what).map(u32::from_le_bytes)
    }
}

/// Parses EMB1 bytes. Does not run value validation.
pub fn read_emb1<R: Read>(r: &mut R, source: &str) -> Result<EmbeddingDataset, DatasetError> {
    let mut br = ByteReader { inner: r };
    let magic = br.exact::<4>("magic")?;
    if &magic != MAGIC {
        return Err(DatasetError::Malformed(format!(
            "bad magic {:?}, expected \"EMB1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = br.u32("version")?;
    if version != VERSION {
        return Err(DatasetError::Malformed(format!("unsupported version {version}")));
    }
    let n = br.u32("n")? as usize;
    let d = br.u32("d")? as usize;
    let count = br.u32("labeling count")? as usize;
    let mut labelings = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(br.exact::<2>("labeling name length")?) as usize;
        let mut name = vec![0u8; len];
        br.inner
            .read_exact(&mut name)
            .map_err(|_| DatasetError::Malformed("truncated labeling name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| DatasetError::Malformed("labeling name is not UTF-8".into()))?;
        let k = br.u32("class count")? as usize;
        let mut raw = vec![0u8; n * 4];
        br.inner
            .read_exact(&mut raw)
            .map_err(|_| DatasetError::Malformed(format!("truncated labels for '{name}'")))?;
        let labels = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        labelings.push(Labeling::new(name, k, labels));
    }
    let mut raw = vec![0u8; n * d * 4];
    br.inner.read_exact(&mut raw).map_err(|_| {
        DatasetError::DimensionMismatch(format!("payload shorter than n*d = {} floats", n * d))
    })?;
    let mut rest = [0u8; 1];
    if br.inner.read(&mut rest).unwrap_or(0) != 0 {
        return Err(DatasetError::DimensionMismatch(format!(
            "trailing bytes after n*d = {} floats",
            n * d
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    EmbeddingDataset::new(d, data, labelings, source)
}

fn csv_err(e: csv::Error) -> DatasetError {
    DatasetError::Malformed(format!("csv: {e}"))
}

fn is_feature_column(name: &str, idx: usize) -> bool {
    name.strip_prefix('x')
        .and_then(|s| s.parse::<usize>().ok())
        .is_some_and(|k| k == idx)
}

/// Parses the CSV layout. Labeling K is `max label + 1`.
pub fn read_csv<R: Read>(r: R, source: &str) -> Result<EmbeddingDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let d = header
        .iter()
        .enumerate()
        .take_while(|(i, h)| is_feature_column(h, *i))
        .count();
    let names: Vec<String> = header.iter().skip(d).map(str::to_string).collect();
    if d == 0 {
        return Err(DatasetError::Malformed(
            "csv needs feature columns named x0, x1, ... before the labeling columns".into(),
        ));
    }
    let mut data = Vec::new();
    let mut labels: Vec<Vec<u32>> = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != d + names.len() {
            return Err(DatasetError::DimensionMismatch(format!(
                "csv row {row} has {} fields, expected {}",
                rec.len(),
                d + names.len()
            )));
        }
        for (col, field) in rec.iter().take(d).enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                DatasetError::Malformed(format!("row {row} column {col}: '{field}' is not a number"))
            })?;
            data.push(x);
        }
        for (k, field) in rec.iter().skip(d).enumerate() {
            let y: u32 = field.parse().map_err(|_| {
                DatasetError::Malformed(format!(
                    "row {row} labeling '{}': '{field}' is not a class id",
                    names[k]
                ))
            })?;
            labels[k].push(y);
        }
    }
    let labelings = names
        .into_iter()
        .zip(labels)
        .map(|(name, l)| Labeling::from_labels(name, l))
        .collect();
    EmbeddingDataset::new(d, data, labelings, source)
}

pub fn write_csv<W: Write>(ds: &EmbeddingDataset, w: W) -> Result<(), DatasetError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..ds.d).map(|k| format!("x{k}")).collect();
    header.extend(ds.labelings.iter().map(|l| l.name.clone()));
    wr.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.n {
        let mut rec: Vec<String> = ds.row(i).iter().map(|x| x.to_string()).collect();
        rec.extend(ds.labelings.iter().map(|l| l.labels[i].to_string()));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush().map_err(|e| DatasetError::Io {
        path: "<csv>".into(),
        source: e,
    })
}
