//! Run specifications and the commands behind the `csmc` binary.
//!
//! Output formats:
//!
//! - `run`: JSON lines, one [`RunRecord`] per (method, seed)
//! - `quality`: `estimates.csv` with columns `method,instance,seed,estimate`
//!   and `summary.json` holding a [`QualitySummary`]
//! - `enumerate`: one JSON [`Enumeration`](crate::instances::Enumeration)
//! - `bench`: one JSON [`BenchReport`]
//!
//! Every record carries `schema`, `config_hash` and `seed`.

mod spec;

pub use spec::{LmSource, MethodSpec, Overrides, PotentialEntry, RunSpec, Seeds};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{compare_methods, run_quality, Comparison, EstimatorError, QualityEstimate, RejectionQuality};
use crate::inference::{run, Method, MethodConfig, ParticleRecord, ProposalKind, QualityTarget, RunError, RunOutput, StepDiagnostics};
use crate::instances::{self, Enumeration, EnumerationError, Instance, DEFAULT_ENUMERATION_CAP};
use crate::lm::{NgramError, NgramTrainer};

/// Version of every JSON and CSV layout written here.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Enumeration(#[from] EnumerationError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, ExperimentError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build().map_err(|e| ExperimentError::Pool(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, ExperimentError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ExperimentError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub out: PathBuf,
    pub vocab_size: usize,
    pub train_documents: usize,
    pub heldout_documents: usize,
    /// `inf` when a held-out token has zero probability.
    pub heldout_perplexity: f64,
}

/// Trains an n-gram model on all but every tenth document, reports
/// perplexity on the held-out tenth and writes the model to `out`.
pub fn cmd_train(
    corpus: &Path,
    order: usize,
    smoothing: f64,
    delimiter: u8,
    out: &Path,
) -> Result<TrainReport, ExperimentError> {
    let text = fs::read(corpus).map_err(|e| ExperimentError::io(corpus, e))?;
    let docs: Vec<&[u8]> = text.split(|&b| b == delimiter).filter(|d| !d.is_empty()).collect();
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (i, d) in docs.iter().enumerate() {
        let dst = if i % 10 == 9 { &mut heldout } else { &mut train };
        dst.extend_from_slice(d);
        dst.push(delimiter);
    }
    let model = NgramTrainer::new(order, smoothing)
        .with_alphabet(&text)
        .with_delimiter(delimiter)
        .train(&train)?;
    let heldout_perplexity = if heldout.is_empty() {
        f64::NAN
    } else {
        model.perplexity(&heldout).unwrap_or(f64::INFINITY)
    };
    model.save(out)?;
    Ok(TrainReport {
        out: out.to_path_buf(),
        vocab_size: crate::lm::LanguageModel::vocabulary(&model).len(),
        train_documents: docs.len() - docs.len() / 10,
        heldout_documents: docs.len() / 10,
        heldout_perplexity,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorItem {
    pub text: String,
    pub weight: f64,
}

/// One line of `csmc run` output.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema: u32,
    pub config_hash: String,
    pub instance: String,
    pub method: Method,
    pub seed: u64,
    pub config: MethodConfig,
    pub log_evidence: f64,
    pub resamples: usize,
    pub truncated: usize,
    pub dead_ends: usize,
    pub faults: usize,
    pub all_dead: bool,
    /// Posterior-weighted instance metric; absent when all weight is zero.
    pub metric: Option<f64>,
    pub posterior: Vec<PosteriorItem>,
    pub particles: Vec<ParticleRecord>,
    pub steps: Vec<StepDiagnostics>,
}

impl RunRecord {
    fn new(hash: &str, inst: &Instance, config: &MethodConfig, out: RunOutput) -> Self {
        let post = out.posterior();
        let mut grouped: BTreeMap<String, f64> = BTreeMap::new();
        for e in &post.entries {
            *grouped.entry(e.text.clone()).or_insert(0.0) += e.weight;
        }
        let metric = (!post.is_empty()).then(|| {
            post.entries
                .iter()
                .map(|e| e.weight * (inst.metric)(e.text.as_bytes()))
                .sum()
        });
        Self {
            schema: SCHEMA_VERSION,
            config_hash: hash.to_string(),
            instance: inst.name.to_string(),
            method: out.method,
            seed: out.seed,
            config: config.clone(),
            log_evidence: out.log_evidence,
            resamples: out.resamples,
            truncated: out.truncated,
            dead_ends: out.dead_ends,
            faults: out.faults,
            all_dead: out.all_dead,
            metric,
            posterior: grouped
                .into_iter()
                .map(|(text, weight)| PosteriorItem { text, weight })
                .collect(),
            particles: out.particles,
            steps: out.steps,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub records: usize,
    pub all_dead: usize,
    pub out: Option<PathBuf>,
}

/// Runs every method for every seed, returning records ordered by method
/// then seed.
pub fn execute(spec: &RunSpec, workers: Option<usize>) -> Result<(Instance, Vec<RunRecord>), ExperimentError> {
    let (inst, outputs) = execute_outputs(spec, workers)?;
    let hash = spec.config_hash();
    let records = outputs
        .into_iter()
        .flat_map(|(config, outs)| {
            outs.into_iter()
                .map(|o| RunRecord::new(&hash, &inst, &config, o))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok((inst, records))
}

/// Writes JSON lines to `spec.out` (or stdout when unset).
pub fn cmd_run(spec: &RunSpec, workers: Option<usize>) -> Result<RunSummary, ExperimentError> {
    let (_, records) = execute(spec, workers)?;
    let mut sink: Box<dyn Write> = match &spec.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let at = spec.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(sink, "{line}").map_err(|e| ExperimentError::io(&at, e))?;
    }
    sink.flush().map_err(|e| ExperimentError::io(&at, e))?;
    Ok(RunSummary {
        config_hash: spec.config_hash(),
        records: records.len(),
        all_dead: records.iter().filter(|r| r.all_dead).count(),
        out: spec.out.clone(),
    })
}

/// Enumerates a bundled instance and writes the oracle JSON to `out`.
pub fn cmd_enumerate(name: &str, cap: Option<usize>, out: Option<&Path>) -> Result<Enumeration, ExperimentError> {
    let inst = instances::by_name(name).map_err(|e| ExperimentError::Invalid {
        path: "instance".into(),
        message: e.to_string(),
    })?;
    let e = inst.enumerate(cap.unwrap_or(DEFAULT_ENUMERATION_CAP))?;
    if let Some(path) = out {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &e).expect("oracle serializes");
        w.flush().map_err(|err| ExperimentError::io(path, err))?;
    }
    Ok(e)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimateRow {
    pub method: String,
    pub instance: String,
    pub seed: u64,
    /// Empty when the attempt was rejected.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodQuality {
    pub method: String,
    pub target: QualityTarget,
    pub estimate: QualityEstimate,
    pub acceptance_rate: f64,
    pub attempted: usize,
    pub accepted: usize,
    /// Oracle `log Z` of this method's target, when enumerable.
    pub oracle_log_z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: Option<Comparison>,
    /// Why no test was run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QualitySummary {
    pub schema: u32,
    pub config_hash: String,
    pub instance: String,
    pub seeds: Seeds,
    /// Oracle `log Z` of the global target, when enumerable.
    pub oracle_log_z: Option<f64>,
    pub methods: Vec<MethodQuality>,
    pub comparisons: Vec<PairwiseComparison>,
}

fn label(config: &MethodConfig) -> String {
    match config.proposal {
        ProposalKind::Exact => config.method.name().to_string(),
        ProposalKind::CharacterTrie => format!("{}+trie", config.method.name()),
    }
}

/// Pairwise Welch tests over per-method samples.
pub fn pairwise(samples: &[(String, Vec<f64>)]) -> Vec<PairwiseComparison> {
    let mut out = Vec::new();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (a, xs) = &samples[i];
            let (b, ys) = &samples[j];
            let (result, skipped) = match compare_methods(xs, ys) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(PairwiseComparison {
                a: a.clone(),
                b: b.clone(),
                result,
                skipped,
            });
        }
    }
    out
}

/// Quality estimates for two or more methods. Writes `estimates.csv` and
/// `summary.json` under `spec.out` when set.
pub fn cmd_quality(spec: &RunSpec, workers: Option<usize>) -> Result<(QualitySummary, Vec<EstimateRow>), ExperimentError> {
    if spec.methods.len() < 2 {
        return Err(ExperimentError::Usage("quality needs at least two methods".into()));
    }
    let (inst, records) = execute_outputs(spec, workers)?;
    let oracle = if inst.enumerable {
        Some(inst.enumerate(DEFAULT_ENUMERATION_CAP)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    let mut samples = Vec::new();
    for (config, outs) in &records {
        let name = label(config);
        let mut attempts = Vec::with_capacity(outs.len());
        for o in outs {
            let q = run_quality(o)?;
            rows.push(EstimateRow {
                method: name.clone(),
                instance: inst.name.to_string(),
                seed: o.seed,
                estimate: q,
            });
            attempts.push(q);
        }
        let rq = RejectionQuality::from_attempts(attempts);
        let target = config.method.quality_target();
        methods.push(MethodQuality {
            method: name.clone(),
            target,
            estimate: rq.estimate(&name, target),
            acceptance_rate: rq.acceptance_rate,
            attempted: rq.attempted,
            accepted: rq.accepted,
            oracle_log_z: oracle.as_ref().map(|e| e.log_z(target)),
        });
        samples.push((name, rq.corrected_samples.clone()));
    }
    let summary = QualitySummary {
        schema: SCHEMA_VERSION,
        config_hash: spec.config_hash(),
        instance: inst.name.to_string(),
        seeds: spec.seeds.clone(),
        oracle_log_z: oracle.as_ref().map(|e| e.log_z_global),
        methods,
        comparisons: pairwise(&samples),
    };
    if let Some(dir) = &spec.out {
        write_csv(&dir.join("estimates.csv"), &rows)?;
        let path = dir.join("summary.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &summary).expect("summary serializes");
        w.flush().map_err(|e| ExperimentError::io(&path, e))?;
    }
    Ok((summary, rows))
}

type MethodOutputs = Vec<(MethodConfig, Vec<RunOutput>)>;

fn execute_outputs(spec: &RunSpec, workers: Option<usize>) -> Result<(Instance, MethodOutputs), ExperimentError> {
    let inst = spec.build_instance()?;
    let configs = spec.resolve_methods(&inst)?;
    let pool = pool(workers)?;
    let seeds: Vec<u64> = spec.seeds.iter().collect();
    let mut all = Vec::with_capacity(configs.len());
    for config in configs {
        let outs: Result<Vec<RunOutput>, RunError> =
            pool.install(|| seeds.par_iter().map(|&s| run(&config, &inst.model, s)).collect());
        all.push((config, outs?));
    }
    Ok((inst, all))
}

fn fmt_estimate(e: Option<f64>) -> String {
    e.map(|v| format!("{v:.17e}")).unwrap_or_default()
}

pub fn write_csv(path: &Path, rows: &[EstimateRow]) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "method,instance,seed,estimate")?;
        for r in rows {
            writeln!(w, "{},{},{},{}", r.method, r.instance, r.seed, fmt_estimate(r.estimate))?;
        }
        w.flush()
    };
    emit().map_err(|e| ExperimentError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<EstimateRow>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "method,instance,seed,estimate")) => {}
        _ => {
            return Err(ExperimentError::Invalid {
                path: format!("{}:1", path.display()),
                message: "expected header `method,instance,seed,estimate`".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| ExperimentError::Invalid {
            path: format!("{}:{}", path.display(), i + 1),
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let seed = f[2].parse().map_err(|_| bad("seed is not an integer"))?;
        let estimate = if f[3].is_empty() {
            None
        } else {
            Some(f[3].parse().map_err(|_| bad("estimate is not a number"))?)
        };
        rows.push(EstimateRow {
            method: f[0].to_string(),
            instance: f[1].to_string(),
            seed,
            estimate,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub methods: Vec<(String, RejectionSummary)>,
    pub comparisons: Vec<PairwiseComparison>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectionSummary {
    pub point: f64,
    pub std_error: f64,
    pub acceptance_rate: f64,
    pub attempted: usize,
}

/// Pairwise comparison of the methods in an estimates CSV.
pub fn cmd_compare(csv: &Path) -> Result<CompareReport, ExperimentError> {
    let rows = read_csv(csv)?;
    let mut by_method: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for r in rows {
        match by_method.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, v)) => v.push(r.estimate),
            None => by_method.push((r.method, vec![r.estimate])),
        }
    }
    if by_method.len() < 2 {
        return Err(ExperimentError::Usage("compare needs estimates for at least two methods".into()));
    }
    let mut methods = Vec::new();
    let mut samples = Vec::new();
    for (m, attempts) in by_method {
        let rq = RejectionQuality::from_attempts(attempts);
        methods.push((
            m.clone(),
            RejectionSummary {
                point: rq.point,
                std_error: rq.std_error,
                acceptance_rate: rq.acceptance_rate,
                attempted: rq.attempted,
            },
        ));
        samples.push((m, rq.corrected_samples));
    }
    Ok(CompareReport {
        methods,
        comparisons: pairwise(&samples),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub schema: u32,
    pub instance: String,
    pub vocab_size: usize,
    pub grammar_rules: usize,
    pub method: Method,
    pub proposal: ProposalKind,
    pub particles: usize,
    pub seed: u64,
    pub runs: usize,
    pub steps: usize,
    pub median_step_ms: f64,
    pub p90_step_ms: f64,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
}

/// Times FullSMC steps with the character proposal on the `perf`
/// instance.
pub fn cmd_bench(
    particles: usize,
    seed: u64,
    runs: usize,
    max_steps: usize,
    workers: Option<usize>,
) -> Result<BenchReport, ExperimentError> {
    let inst = instances::perf().map_err(|e| ExperimentError::Invalid {
        path: "instance".into(),
        message: e.to_string(),
    })?;
    let config = inst
        .config(Method::FullSMC, particles)
        .with_proposal(ProposalKind::CharacterTrie)
        .with_max_steps(max_steps);
    config.validate().map_err(|e| ExperimentError::Usage(e.to_string()))?;
    let pool = pool(workers)?;
    let mut times = Vec::new();
    for r in 0..runs.max(1) as u64 {
        let out = pool.install(|| run(&config, &inst.model, seed + r))?;
        times.extend(out.steps.iter().map(|s| s.wall_ms));
    }
    times.sort_by(f64::total_cmp);
    let at = |q: f64| times[((times.len() - 1) as f64 * q).round() as usize];
    let grammar_rules = crate::grammar::Grammar::parse(inst.grammar_source)
        .map(|g| g.rules().len())
        .unwrap_or(0);
    Ok(BenchReport {
        schema: SCHEMA_VERSION,
        instance: inst.name.to_string(),
        vocab_size: inst.vocabulary().len(),
        grammar_rules,
        method: Method::FullSMC,
        proposal: ProposalKind::CharacterTrie,
        particles,
        seed,
        runs: runs.max(1),
        steps: times.len(),
        median_step_ms: at(0.5),
        p90_step_ms: at(0.9),
        mean_step_ms: times.iter().sum::<f64>() / times.len() as f64,
        max_step_ms: at(1.0),
    })
}
