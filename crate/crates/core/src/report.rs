//! Command-line subcommands and their JSON/CSV output.
//!
//! Every JSON document has the shape
//! `{"schema_version", "manifest", "payload"}`. The manifest records the
//! subcommand, the resolved parameters, the master seed, SHA-256 digests of
//! every input file, the tool version and a Unix timestamp. The worker count
//! is deliberately not part of the manifest: it never changes the payload.
//!
//! `SOURCE_DATE_EPOCH`, when set, replaces the wall-clock timestamp.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::certificates::{self, BoundValue, BoundVariant, Lambdas, PairInputs};
use crate::dataset::{self, EmbeddingDataset, Format};
use crate::error::{Error, Result};
use crate::fewshot::{self, ClassSampler, DatasetSource, FewShotSource, GeneratorSource, SweepReport};
use crate::geometry::{self, CdnvAverages, ClassStats, DecompositionReport, LabelingGeometry, PairGeometry};
use crate::multitask::{self, OrthoReport, VerifyConfig};
use crate::par;
use crate::synthetic::{self, FactorAnalytic, SyntheticSpec, TwoPointLaw};

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Parser)]
#[command(name = "collapse-cert", version, about = "Directional-collapse geometry and few-shot NCC certificates")]
pub struct Cli {
    /// Worker threads; results are identical for every value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-class moments, per-pair geometry and CDNV averages.
    Stats(StatsArgs),
    /// Multiclass and per-pair error certificates.
    Certify(CertifyArgs),
    /// Monte Carlo few-shot error next to every certificate.
    Fewshot(FewshotArgs),
    /// Sample a synthetic dataset and write its analytic sidecar.
    Synth(SynthArgs),
    /// Cross-task decision-axis alignment against its bound.
    Ortho(OrthoArgs),
    /// Decision-axis versus orthogonal variance split.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// JSON report path (stdout when absent).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// CSV table path.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub labeling: String,
    /// Class subset, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,
    /// Class pair `i,j`; repeatable. Both orientations are reported.
    #[arg(long = "pairs", value_parser = parse_pair)]
    pub pairs: Vec<(u32, u32)>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SourceArgs {
    /// Dataset file (EMB1 or CSV).
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub input: Option<PathBuf>,
    /// Synthetic spec JSON used as an exact generator.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Labeling of the dataset, or `taskN` for a factor-model spec.
    #[arg(long)]
    pub labeling: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Generic,
    Equal,
    Optimized,
    Prior,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Shot counts, comma separated.
    #[arg(long = "m", value_delimiter = ',', required = true)]
    pub m: Vec<u64>,
    #[arg(long = "variant", value_enum, value_delimiter = ',', default_value = "optimized")]
    pub variants: Vec<VariantArg>,
    /// Weights `t,s,q` of the generic bound.
    #[arg(long, value_parser = parse_lambdas, default_value = "1,1,1")]
    pub lambdas: LambdaArg,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaArg(pub f64, pub f64, pub f64);

#[derive(Debug, Clone, Args, Serialize)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long = "m", value_delimiter = ',', required = true)]
    pub m: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out fraction per class for dataset sources.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Test draws per class per trial for generator sources.
    #[arg(long, default_value_t = 25)]
    pub test_per_class: usize,
    /// Run one sweep per seeded random class pair instead of one over all classes.
    #[arg(long)]
    pub random_pairs: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Samples per class (Gaussian pair, two-point) or in total (factor model).
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset path; the sidecar goes to --out-json or `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OrthoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub labeling_a: String,
    #[arg(long)]
    pub labeling_b: String,
    #[arg(long, default_value_t = multitask::DEFAULT_BALANCE_TOLERANCE)]
    pub balance_tolerance: f64,
    #[arg(long, default_value_t = multitask::DEFAULT_INDEPENDENCE_ALPHA)]
    pub independence_alpha: f64,
    /// `c` in ε_stat = c/√(min class size).
    #[arg(long, default_value_t = multitask::DEFAULT_SLACK_CONSTANT)]
    pub slack_constant: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub labeling: String,
    #[arg(long = "pairs", value_parser = parse_pair)]
    pub pairs: Vec<(u32, u32)>,
    /// Number of seeded random unordered pairs.
    #[arg(long, conflicts_with = "pairs")]
    pub random_pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cumulative orthogonal ranks; defaults to those of 1, 10, 100 below d.
    #[arg(long = "k", value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutputArgs,
}

fn parse_pair(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `i,j`, got `{s}`"))?;
    let a = a.trim().parse::<u32>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<u32>().map_err(|e| e.to_string())?;
    if a == b {
        return Err(format!("pair `{s}` needs two distinct classes"));
    }
    Ok((a, b))
}

fn parse_lambdas(s: &str) -> std::result::Result<LambdaArg, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        &[t, s, q] if t > 0.0 && s > 0.0 && q > 0.0 => Ok(LambdaArg(t, s, q)),
        &[_, _, _] => Err("lambda weights must be positive".into()),
        _ => Err(format!("expected three weights `t,s,q`, got `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub schema_version: &'static str,
    pub manifest: RunManifest,
    pub payload: T,
}

pub fn file_digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(subcommand: &str, params: &impl Serialize, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        Ok(RunManifest {
            subcommand: subcommand.to_string(),
            params: serde_json::to_value(params)?,
            seed,
            inputs: inputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: timestamp(),
        })
    }
}

/// Rendered outputs of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub json: String,
    pub csv: Option<String>,
}

fn render<T: Serialize>(manifest: RunManifest, payload: &T, csv: Option<String>) -> Result<Rendered> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        manifest,
        payload,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    Ok(Rendered { json, csv })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(r: &Rendered, out: &OutputArgs) -> Result<()> {
    match &out.out_json {
        Some(p) => write_file(p, &r.json)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(r.json.as_bytes()).map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            })?;
        }
    }
    if let (Some(p), Some(csv)) = (&out.out_csv, &r.csv) {
        write_file(p, csv)?;
    }
    Ok(())
}

fn load(input: &Path, format: Option<Format>) -> Result<EmbeddingDataset> {
    Ok(dataset::load_embeddings(input, format.unwrap_or_else(|| Format::from_path(input)))?)
}

fn require_seed(seed: Option<u64>, cmd: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Usage(format!("--seed is required for `{cmd}`")))
}

fn check_shots(m: &[u64]) -> Result<()> {
    if m.is_empty() || m.contains(&0) {
        return Err(Error::Usage("m must be ≥ 1".into()));
    }
    Ok(())
}

fn f(x: f64) -> String {
    format!("{x:.17e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), f)
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Clone, Serialize)]
pub struct StatsPayload {
    pub labeling: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub classes: Vec<ClassStats>,
    pub pairs: Vec<PairGeometry>,
    pub averages: CdnvAverages,
    pub warnings: Vec<String>,
}

pub const STATS_CSV_HEADER: &str = "i,j,gap,v_i,v_j,cdnv,dir_cdnv,theta";

pub fn cmd_stats(args: &StatsArgs) -> Result<Rendered> {
    let ds = load(&args.input, args.format)?;
    let geo = LabelingGeometry::new(&ds, &args.labeling)?;
    let pairs = if args.pairs.is_empty() {
        let subset = args.classes.clone().unwrap_or_else(|| geo.all_classes());
        if subset.len() < 2 {
            return Err(geometry::GeometryError::TooFewClasses(subset.len()).into());
        }
        geo.ordered_pairs(&subset)?
    } else {
        let idx: Vec<(u32, u32)> = args.pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        par::map_slice(&idx, |&(i, j)| geo.pair(i, j)).into_iter().collect::<std::result::Result<Vec<_>, _>>()?
    };
    let mut involved: Vec<u32> = pairs.iter().flat_map(|p| [p.i, p.j]).collect();
    involved.sort_unstable();
    involved.dedup();
    let classes = involved.iter().map(|&c| geo.class(c).cloned()).collect::<std::result::Result<Vec<_>, _>>()?;
    let averages = geometry::averages_of(&pairs, involved.len());
    let warnings = dataset::validate_dataset(&ds).messages();
    let mut csv = String::from(STATS_CSV_HEADER);
    csv.push('\n');
    for p in &pairs {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.i,
            p.j,
            f(p.gap),
            f(p.v_i),
            f(p.v_j),
            f(p.cdnv),
            f(p.dir_cdnv),
            f(p.theta)
        ));
    }
    let payload = StatsPayload {
        labeling: args.labeling.clone(),
        n: ds.n(),
        d: ds.d(),
        num_classes: geo.num_classes(),
        classes,
        pairs,
        averages,
        warnings,
    };
    let manifest = RunManifest::new("stats", args, None, &[&args.input])?;
    render(manifest, &payload, Some(csv))
}

// ------------------------------------------------------- shared sources

fn read_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid spec {}: {e}", path.display())))
}

/// Index of a factor-model task from a `taskN` labeling name.
fn task_index(labeling: Option<&str>, tasks: usize) -> Result<usize> {
    let name = labeling.unwrap_or("task1");
    let idx = name
        .strip_prefix("task")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&k| k >= 1 && k <= tasks);
    idx.map(|k| k - 1).ok_or_else(|| {
        let avail: Vec<String> = (0..tasks).map(synthetic::task_name).collect();
        Error::Usage(format!("unknown labeling '{name}'; available labelings: {}", avail.join(", ")))
    })
}

/// Runs `f` with the class sampler described by a spec.
fn with_sampler<R>(spec: &SyntheticSpec, labeling: Option<&str>, f: impl FnOnce(&dyn ClassSampler) -> Result<R>) -> Result<R> {
    match spec {
        SyntheticSpec::GaussianPair(g) => f(&g.build()?),
        SyntheticSpec::TwoPoint { dim, gap, sigma2 } => f(&synthetic::TwoPointPair::new(*dim, *gap, *sigma2)?),
        SyntheticSpec::FactorModel(fm) => {
            let model = fm.build()?;
            let task = task_index(labeling, fm.tasks)?;
            f(&model.task(task))
        }
    }
}

fn require_labeling<'a>(src: &'a SourceArgs) -> Result<&'a str> {
    src.labeling
        .as_deref()
        .ok_or_else(|| Error::Usage("--labeling is required with --input".into()))
}

fn source_inputs(src: &SourceArgs) -> Vec<&Path> {
    src.input.iter().chain(src.spec.iter()).map(PathBuf::as_path).collect()
}

// -------------------------------------------------------------- certify

#[derive(Debug, Clone, Serialize)]
pub struct PairOutcome {
    pub i: u32,
    pub j: u32,
    pub bound: Option<BoundValue>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyRow {
    pub m: u64,
    pub variant: String,
    /// Undefined when any pair fails.
    pub total: Option<f64>,
    pub vacuous: Option<bool>,
    pub pairs: Vec<PairOutcome>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyPayload {
    pub source: String,
    pub labeling: Option<String>,
    pub classes: Vec<u32>,
    pub pair_inputs: Vec<PairInputs>,
    pub averages: CdnvAverages,
    pub rows: Vec<CertifyRow>,
}

fn expand_variants(v: &[VariantArg]) -> Vec<VariantArg> {
    use VariantArg::*;
    let order = [Generic, Equal, Optimized, Prior];
    if v.contains(&All) {
        return order.to_vec();
    }
    order.into_iter().filter(|x| v.contains(x)).collect()
}

fn variant_name(v: VariantArg) -> &'static str {
    match v {
        VariantArg::Generic => "generic",
        VariantArg::Equal => "equal",
        VariantArg::Optimized => "optimized",
        VariantArg::Prior => "prior",
        VariantArg::All => "all",
    }
}

fn dataset_pairs(ds: &EmbeddingDataset, labeling: &str, classes: Option<&[u32]>) -> Result<(Vec<u32>, Vec<PairInputs>)> {
    let geo = LabelingGeometry::new(ds, labeling)?;
    let subset = classes.map(<[u32]>::to_vec).unwrap_or_else(|| geo.all_classes());
    if subset.len() < 2 {
        return Err(geometry::GeometryError::TooFewClasses(subset.len()).into());
    }
    let pairs = geo.ordered_pairs(&subset)?;
    Ok((subset, pairs.iter().map(PairInputs::from).collect()))
}

fn sampler_pairs(s: &dyn ClassSampler, classes: Option<&[u32]>) -> Result<(Vec<u32>, Vec<PairInputs>)> {
    let all: Vec<u32> = (0..s.num_classes() as u32).collect();
    let subset = classes.map(<[u32]>::to_vec).unwrap_or(all);
    if let Some(&c) = subset.iter().find(|&&c| c as usize >= s.num_classes()) {
        return Err(fewshot::FewShotError::UnknownClass(c).into());
    }
    if subset.len() < 2 {
        return Err(geometry::GeometryError::TooFewClasses(subset.len()).into());
    }
    let pairs = subset
        .iter()
        .flat_map(|&i| subset.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
        .map(|(i, j)| s.pair_inputs(i as usize, j as usize).with_classes(i, j))
        .collect();
    Ok((subset, pairs))
}

fn certify_row(pairs: &[PairInputs], classes: usize, m: u64, variant: BoundVariant, name: &str) -> CertifyRow {
    let outcomes: Vec<PairOutcome> = par::map_slice(pairs, |p| match certificates::pairwise_bound(p, m, variant) {
        Ok(b) => PairOutcome {
            i: p.i,
            j: p.j,
            bound: Some(b),
            error: None,
        },
        Err(e) => PairOutcome {
            i: p.i,
            j: p.j,
            bound: None,
            error: Some(e.to_string()),
        },
    });
    let mut warnings: Vec<String> = outcomes.iter().filter_map(|o| o.error.clone()).collect();
    if let Some(w) = outcomes.iter().filter_map(|o| o.bound.as_ref()?.warning.clone()).next() {
        warnings.push(w);
    }
    let total = outcomes
        .iter()
        .map(|o| o.bound.as_ref().map(|b| b.total))
        .collect::<Option<Vec<f64>>>()
        .map(|t| crate::sum::pairwise_sum(&t) / classes as f64);
    CertifyRow {
        m,
        variant: name.to_string(),
        total,
        vacuous: total.map(|t| t >= 1.0 - 1.0 / classes as f64),
        pairs: outcomes,
        warnings,
    }
}

pub fn cmd_certify(args: &CertifyArgs) -> Result<Rendered> {
    check_shots(&args.m)?;
    let variants = expand_variants(&args.variants);
    let src = &args.source;
    let (source, labeling, (classes, pairs)) = match (&src.input, &src.spec) {
        (Some(input), _) => {
            let labeling = require_labeling(src)?;
            let ds = load(input, src.format)?;
            (input.display().to_string(), Some(labeling.to_string()), dataset_pairs(&ds, labeling, src.classes.as_deref())?)
        }
        (None, Some(spec_path)) => {
            let spec = read_spec(spec_path)?;
            let cp = with_sampler(&spec, src.labeling.as_deref(), |s| sampler_pairs(s, src.classes.as_deref()))?;
            (spec_path.display().to_string(), src.labeling.clone(), cp)
        }
        (None, None) => return Err(Error::Usage("one of --input or --spec is required".into())),
    };
    let averages = certificates::averages_from_inputs(&pairs)?;
    let c = classes.len();
    let LambdaArg(t, s, q) = args.lambdas;
    let mut rows = Vec::new();
    for &m in &args.m {
        for &v in &variants {
            let row = match v {
                VariantArg::Generic => certify_row(&pairs, c, m, BoundVariant::Generic { lambdas: Lambdas::new(t, s, q) }, "generic"),
                VariantArg::Equal => certify_row(&pairs, c, m, BoundVariant::Equal, "equal"),
                VariantArg::Optimized => certify_row(&pairs, c, m, BoundVariant::Optimized, "optimized"),
                VariantArg::Prior => {
                    let total = certificates::baseline_from_averages(&averages, m);
                    CertifyRow {
                        m,
                        variant: "prior".into(),
                        total: Some(total),
                        vacuous: Some(total >= 1.0 - 1.0 / c as f64),
                        pairs: Vec::new(),
                        warnings: Vec::new(),
                    }
                }
                VariantArg::All => unreachable!("expanded above"),
            };
            rows.push(row);
        }
    }
    let mut csv = String::from("m");
    for &v in &variants {
        csv.push(',');
        csv.push_str(variant_name(v));
    }
    csv.push('\n');
    for (k, &m) in args.m.iter().enumerate() {
        csv.push_str(&m.to_string());
        for row in &rows[k * variants.len()..(k + 1) * variants.len()] {
            csv.push(',');
            csv.push_str(&opt(row.total));
        }
        csv.push('\n');
    }
    let payload = CertifyPayload {
        source,
        labeling,
        classes,
        pair_inputs: pairs,
        averages,
        rows,
    };
    let manifest = RunManifest::new("certify", args, None, &source_inputs(src))?;
    render(manifest, &payload, Some(csv))
}

// -------------------------------------------------------------- fewshot

#[derive(Debug, Clone, Serialize)]
pub struct FewshotPayload {
    pub source: String,
    pub labeling: Option<String>,
    pub test_split: String,
    pub sweeps: Vec<SweepReport>,
}

fn run_sweeps(
    source: &dyn FewShotSource,
    classes: Option<&[u32]>,
    random_pairs: Option<usize>,
    m: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepReport>> {
    match random_pairs {
        None => Ok(vec![fewshot::bound_vs_error_sweep(source, classes, m, trials, seed)?]),
        Some(count) => {
            let pool: Vec<u32> = classes.map(<[u32]>::to_vec).unwrap_or_else(|| (0..source.num_classes() as u32).collect());
            let picks = geometry::random_pairs(pool.len(), count, seed)?;
            picks
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| {
                    let pair = [pool[a as usize], pool[b as usize]];
                    let s = crate::rng::derive_seed(seed, k as u64 + 1);
                    Ok(fewshot::bound_vs_error_sweep(source, Some(&pair), m, trials, s)?)
                })
                .collect()
        }
    }
}

pub fn cmd_fewshot(args: &FewshotArgs) -> Result<Rendered> {
    check_shots(&args.m)?;
    let seed = require_seed(args.seed, "fewshot")?;
    if args.trials == 0 {
        return Err(Error::Usage("trials must be ≥ 1".into()));
    }
    let m: Vec<usize> = args.m.iter().map(|&x| x as usize).collect();
    let src = &args.source;
    let classes = src.classes.as_deref();
    let (source_name, split, sweeps) = match (&src.input, &src.spec) {
        (Some(input), _) => {
            let labeling = require_labeling(src)?;
            let ds = load(input, src.format)?;
            let source = DatasetSource::new(&ds, labeling, args.test_fraction, seed)?;
            let sweeps = run_sweeps(&source, classes, args.random_pairs, &m, args.trials, seed)?;
            (input.display().to_string(), format!("fixed per-class holdout, fraction {}", args.test_fraction), sweeps)
        }
        (None, Some(spec_path)) => {
            let spec = read_spec(spec_path)?;
            let sweeps = with_sampler(&spec, src.labeling.as_deref(), |s| {
                let source = GeneratorSource::new(s, args.test_per_class);
                run_sweeps(&source, classes, args.random_pairs, &m, args.trials, seed)
            })?;
            (spec_path.display().to_string(), format!("{} fresh draws per class per trial", args.test_per_class), sweeps)
        }
        (None, None) => return Err(Error::Usage("one of --input or --spec is required".into())),
    };
    let csv = if args.random_pairs.is_none() {
        sweeps[0].to_csv()
    } else {
        let mut out = format!("pair,{}\n", fewshot::SWEEP_CSV_HEADER);
        for s in &sweeps {
            let tag = format!("{}-{}", s.classes[0], s.classes[1]);
            for line in s.to_csv().lines().skip(1) {
                out.push_str(&format!("{tag},{line}\n"));
            }
        }
        out
    };
    let payload = FewshotPayload {
        source: source_name,
        labeling: src.labeling.clone(),
        test_split: split,
        sweeps,
    };
    let manifest = RunManifest::new("fewshot", args, Some(seed), &source_inputs(src))?;
    render(manifest, &payload, Some(csv))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthAnalytic {
    GaussianPair { pairs: Vec<PairInputs> },
    FactorModel(FactorAnalytic),
    TwoPoint { law: TwoPointLaw, pairs: Vec<PairInputs> },
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthPayload {
    pub spec: SyntheticSpec,
    pub n: usize,
    pub d: usize,
    pub labelings: Vec<String>,
    pub dataset: String,
    pub dataset_sha256: String,
    pub analytic: SynthAnalytic,
}

/// Samples the spec; returns the dataset and its analytic record.
pub fn synthesize(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<(EmbeddingDataset, SynthAnalytic)> {
    if n == 0 {
        return Err(Error::Usage("--n must be ≥ 1".into()));
    }
    Ok(match spec {
        SyntheticSpec::GaussianPair(g) => {
            let mix = g.build()?;
            let pairs = synthetic::analytic_pairs(&mix);
            (mix.sample(n, seed, "synthetic:gaussian_pair"), SynthAnalytic::GaussianPair { pairs })
        }
        SyntheticSpec::FactorModel(fm) => {
            let (ds, analytic) = synthetic::sample_factor_model(fm, n, seed)?;
            (ds, SynthAnalytic::FactorModel(analytic))
        }
        SyntheticSpec::TwoPoint { dim, gap, sigma2 } => {
            let tp = synthetic::TwoPointPair::new(*dim, *gap, *sigma2)?;
            let pairs = synthetic::analytic_pairs(&tp);
            (
                synthetic::sample_classes(&tp, n, seed, "synthetic:two_point"),
                SynthAnalytic::TwoPoint { law: tp.law, pairs },
            )
        }
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Rendered> {
    let seed = require_seed(args.seed, "synth")?;
    let spec = read_spec(&args.spec)?;
    let (ds, analytic) = synthesize(&spec, args.n, seed)?;
    let format = args.format.unwrap_or_else(|| Format::from_path(&args.out));
    dataset::write_embeddings(&ds, &args.out, format)?;
    let digest = file_digest(&args.out)?;
    let payload = SynthPayload {
        spec,
        n: ds.n(),
        d: ds.d(),
        labelings: ds.labeling_names(),
        dataset: digest.path,
        dataset_sha256: digest.sha256,
        analytic,
    };
    let manifest = RunManifest::new("synth", args, Some(seed), &[&args.spec])?;
    render(manifest, &payload, None)
}

fn sidecar_path(args: &SynthArgs) -> PathBuf {
    args.out_json.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    })
}

// ---------------------------------------------------------------- ortho

pub fn cmd_ortho(args: &OrthoArgs) -> Result<Rendered> {
    if args.labeling_a == args.labeling_b {
        return Err(Error::Usage("distinct labelings required".into()));
    }
    let ds = load(&args.input, args.format)?;
    let cfg = VerifyConfig {
        balance_tolerance: args.balance_tolerance,
        independence_alpha: args.independence_alpha,
        slack_constant: args.slack_constant,
    };
    let report: OrthoReport = multitask::verify_proposition(&ds, &args.labeling_a, &args.labeling_b, &cfg)?;
    let csv = report.to_csv();
    let manifest = RunManifest::new("ortho", args, None, &[&args.input])?;
    render(manifest, &report, Some(csv))
}

// ------------------------------------------------------------ decompose

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeAverage {
    pub axis_variance: f64,
    pub ortho_cumulative: Vec<(usize, f64)>,
    pub ortho_total: f64,
    pub trace: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecomposePayload {
    pub labeling: String,
    pub d: usize,
    pub k: Vec<usize>,
    pub rows: Vec<DecompositionReport>,
    pub average: DecomposeAverage,
}

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<Rendered> {
    let ds = load(&args.input, args.format)?;
    let geo = LabelingGeometry::new(&ds, &args.labeling)?;
    let d = ds.d();
    let ks = match &args.k {
        Some(k) => k.clone(),
        None => [1, 10, 100].into_iter().filter(|&k| k < d).collect(),
    };
    if let Some(&k) = ks.iter().find(|&&k| k >= d) {
        return Err(geometry::GeometryError::RankTooLarge { k, max: d.saturating_sub(1) }.into());
    }
    let k_count = geo.num_classes();
    let (pairs, seed) = if let Some(count) = args.random_pairs {
        let seed = require_seed(args.seed, "decompose --random-pairs")?;
        (geometry::random_pairs(k_count, count, seed)?, Some(seed))
    } else if !args.pairs.is_empty() {
        (args.pairs.clone(), args.seed)
    } else {
        let all = (0..k_count as u32).flat_map(|i| (i + 1..k_count as u32).map(move |j| (i, j))).collect();
        (all, args.seed)
    };
    if pairs.is_empty() {
        return Err(Error::Usage("no class pairs selected".into()));
    }
    let rows = par::map_slice(&pairs, |&(i, j)| geometry::variance_decomposition_cached(&geo, i, j, &ks))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = rows.len() as f64;
    let mean_of = |g: &dyn Fn(&DecompositionReport) -> f64| {
        let v: Vec<f64> = rows.iter().map(g).collect();
        crate::sum::pairwise_sum(&v) / n
    };
    let average = DecomposeAverage {
        axis_variance: mean_of(&|r| r.axis_variance),
        ortho_cumulative: ks.iter().enumerate().map(|(x, &k)| (k, mean_of(&|r| r.ortho_cumulative[x].1))).collect(),
        ortho_total: mean_of(&|r| r.ortho_total),
        trace: mean_of(&|r| r.trace),
    };
    let mut csv = String::from("i,j,axis_variance,ortho_total,trace,conservation");
    for k in &ks {
        csv.push_str(&format!(",ortho_top{k}"));
    }
    csv.push('\n');
    let line = |i: &str, j: &str, axis: f64, total: f64, trace: f64, cum: &[(usize, f64)]| {
        let mut s = format!("{i},{j},{},{},{},{}", f(axis), f(total), f(trace), f(axis + total - trace));
        for (_, v) in cum {
            s.push(',');
            s.push_str(&f(*v));
        }
        s.push('\n');
        s
    };
    for r in &rows {
        csv.push_str(&line(&r.i.to_string(), &r.j.to_string(), r.axis_variance, r.ortho_total, r.trace, &r.ortho_cumulative));
    }
    csv.push_str(&line("avg", "avg", average.axis_variance, average.ortho_total, average.trace, &average.ortho_cumulative));
    let payload = DecomposePayload {
        labeling: args.labeling.clone(),
        d,
        k: ks,
        rows,
        average,
    };
    let manifest = RunManifest::new("decompose", args, seed, &[&args.input])?;
    render(manifest, &payload, Some(csv))
}

// ----------------------------------------------------------------- entry

pub fn execute(cli: &Cli) -> Result<()> {
    par::with_threads(cli.threads, || match &cli.command {
        Command::Stats(a) => emit(&cmd_stats(a)?, &a.out),
        Command::Certify(a) => emit(&cmd_certify(a)?, &a.out),
        Command::Fewshot(a) => emit(&cmd_fewshot(a)?, &a.out),
        Command::Ortho(a) => emit(&cmd_ortho(a)?, &a.out),
        Command::Decompose(a) => emit(&cmd_decompose(a)?, &a.out),
        Command::Synth(a) => {
            let r = cmd_synth(a)?;
            write_file(&sidecar_path(a), &r.json)
        }
    })
}

/// Parses `args` and runs; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
