//! Desk-scale experiment harnesses.
//!
//! * Injection: plant extraneous words into prompts, score every unit with
//!   each method, and compare the mean/std importance of real vs. injected
//!   units.
//! * Convergence: compare sampled attributions against the exhaustive one
//!   across sampling ratios, with and without first-order forcing.
//!
//! Reports are written as a CSV of per-sample rows, a JSON summary and a JSON
//! description of the CSV columns.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::baselines::{prompt_engineer_importance, random_importance, PromptTemplate};
use crate::model_backend::Client;
use crate::shapley_engine::{attribute_any_plan, attribute_exact, attribute_with, Normalization, TfidfValue};
use crate::subset_sampler::build_plan;
use crate::text_units::{split, Splitter};

pub const SAMPLE_CORPUS: &str = include_str!("../assets/sample_corpus.jsonl");
pub const WORD_POOL: &str = include_str!("../assets/word_pool.txt");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}:{line}: {reason}")]
    CorpusParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("corpus {0} contains no prompts")]
    EmptyCorpus(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
}

fn io_err(path: &Path, source: io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Non-comment lines of a word list.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn default_word_pool() -> Vec<String> {
    parse_word_list(WORD_POOL)
}

/// Parses a corpus: JSON Lines (`prompt` or `instruction` field) when the
/// first non-blank line starts with `{`, otherwise one prompt per line.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Vec<String>, ExperimentError> {
    let jsonl = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .is_some_and(|l| l.starts_with('{'));
    let mut prompts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !jsonl {
            prompts.push(line.to_string());
            continue;
        }
        let parse_error = |reason: String| ExperimentError::CorpusParse {
            path: origin.to_string(),
            line: i + 1,
            reason,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| parse_error(e.to_string()))?;
        let prompt = ["prompt", "instruction"]
            .iter()
            .find_map(|k| value.get(*k).and_then(Value::as_str))
            .ok_or_else(|| parse_error("expected a string \"prompt\" or \"instruction\" field".into()))?;
        if prompt.trim().is_empty() {
            return Err(parse_error("empty prompt".into()));
        }
        prompts.push(prompt.to_string());
    }
    if prompts.is_empty() {
        return Err(ExperimentError::EmptyCorpus(origin.to_string()));
    }
    Ok(prompts)
}

/// Loads a corpus file; the name `sample` selects the bundled corpus.
pub fn load_corpus(path: &str) -> Result<Vec<String>, ExperimentError> {
    if path == "sample" {
        return parse_corpus(SAMPLE_CORPUS, "sample");
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(Path::new(path), e))?;
    parse_corpus(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionCase {
    pub original_prompt: String,
    pub injected_prompt: String,
    /// Zero-based unit indices in the injected prompt, ascending.
    pub injected_positions: Vec<usize>,
    /// Word at each entry of `injected_positions`.
    pub injected_words: Vec<String>,
    pub seed: u64,
}

/// Inserts `k` pool words (drawn with replacement) one at a time, each into
/// a uniformly chosen gap of the current unit list.
pub fn inject_words(prompt: &str, word_pool: &[String], k: usize, seed: u64) -> InjectionCase {
    assert!(k >= 1, "inject at least one word");
    assert!(!word_pool.is_empty(), "word pool is empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units: Vec<(String, bool)> = prompt
        .split_whitespace()
        .map(|u| (u.to_string(), false))
        .collect();
    for _ in 0..k {
        let word = word_pool[rng.random_range(0..word_pool.len())].clone();
        let gap = rng.random_range(0..=units.len());
        units.insert(gap, (word, true));
    }
    let (injected_positions, injected_words) = units
        .iter()
        .enumerate()
        .filter(|(_, (_, injected))| *injected)
        .map(|(i, (w, _))| (i, w.clone()))
        .unzip();
    InjectionCase {
        original_prompt: prompt.to_string(),
        injected_prompt: units
            .iter()
            .map(|(w, _)| w.as_str())
            .collect::<Vec<_>>()
            .join(" "),
        injected_positions,
        injected_words,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    PromptEngineer,
    #[serde(rename = "tokenshap")]
    TokenShap,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Random => "random",
            Method::PromptEngineer => "prompt-engineer",
            Method::TokenShap => "tokenshap",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Method::Random),
            "prompt-engineer" => Ok(Method::PromptEngineer),
            "tokenshap" => Ok(Method::TokenShap),
            _ => Err(format!(
                "unknown method {s:?} (expected random, prompt-engineer or tokenshap)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Real,
    Injected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub method: Method,
    pub prompt_index: usize,
    pub seed: u64,
    pub group: Group,
    pub unit_index: usize,
    pub unit: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_real: usize,
    pub n_injected: usize,
    pub mean_real: f64,
    pub mean_injected: f64,
    pub std_real: f64,
    pub std_injected: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseDelta {
    pub method: Method,
    pub prompt_index: usize,
    pub seed: u64,
    pub delta_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipNote {
    pub prompt_index: usize,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<SampleRow>,
    pub summary: Vec<MethodSummary>,
    pub cases: Vec<CaseDelta>,
    pub skipped: Vec<SkipNote>,
    pub config: Value,
}

#[derive(Debug, Clone)]
pub struct InjectionConfig {
    pub k: usize,
    pub ratio: f64,
    pub seeds: Vec<u64>,
    pub normalization: Normalization,
    pub word_pool: Vec<String>,
    pub template: PromptTemplate,
    /// Cases run concurrently; 1 keeps logs in case order.
    pub case_parallelism: usize,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            k: 2,
            ratio: 0.0,
            seeds: vec![1],
            normalization: Normalization::L1,
            word_pool: default_word_pool(),
            template: PromptTemplate::default(),
            case_parallelism: 1,
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-method summary recomputed from rows.
pub fn summarize(rows: &[SampleRow], method: Method) -> MethodSummary {
    let pick = |g: Group| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == method && r.group == g)
            .map(|r| r.score)
            .collect()
    };
    let (real, injected) = (pick(Group::Real), pick(Group::Injected));
    let (mean_real, std_real) = mean_std(&real);
    let (mean_injected, std_injected) = mean_std(&injected);
    MethodSummary {
        method,
        n_real: real.len(),
        n_injected: injected.len(),
        mean_real,
        mean_injected,
        std_real,
        std_injected,
        delta_mean: mean_real - mean_injected,
        delta_std: std_real - std_injected,
    }
}

/// Runs `job(i)` for every index with up to `parallelism` workers; output is
/// in index order.
fn run_indexed<T: Send>(count: usize, parallelism: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if parallelism <= 1 || count <= 1 {
        return (0..count).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = job(i);
                slots.lock().expect("slot lock poisoned")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock poisoned")
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect()
}

fn baseline_seed(case_seed: u64, prompt_index: usize) -> u64 {
    case_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(prompt_index as u64)
}

fn score_case(
    method: Method,
    case: &InjectionCase,
    prompt_index: usize,
    client: &Client,
    config: &InjectionConfig,
) -> Result<Vec<f64>, String> {
    let units = split(&case.injected_prompt, &Splitter::Whitespace).map_err(|e| e.to_string())?;
    match method {
        Method::Random => Ok(random_importance(&units, baseline_seed(case.seed, prompt_index)).scores),
        Method::PromptEngineer => prompt_engineer_importance(&units, client, &config.template)
            .map(|s| s.scores)
            .map_err(|e| e.to_string()),
        Method::TokenShap => {
            let plan = build_plan(units.len(), config.ratio, case.seed, true).map_err(|e| e.to_string())?;
            attribute_with(&units, &plan, client, config.normalization, &TfidfValue)
                .map(|r| r.phi_norm)
                .map_err(|e| e.to_string())
        }
    }
}

pub fn run_injection_experiment(
    corpus: &[String],
    methods: &[Method],
    client: &Client,
    config: &InjectionConfig,
) -> Result<ExperimentReport, ExperimentError> {
    if corpus.is_empty() {
        return Err(ExperimentError::EmptyCorpus("<in-memory>".into()));
    }
    if config.k == 0 || config.word_pool.is_empty() || config.seeds.is_empty() || methods.is_empty() {
        return Err(ExperimentError::Config(
            "need k >= 1, a non-empty word pool, at least one seed and one method".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.ratio) {
        return Err(ExperimentError::Config(format!(
            "ratio {} outside [0, 1]",
            config.ratio
        )));
    }

    let cases: Vec<(usize, u64)> = (0..corpus.len())
        .flat_map(|p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();

    type CaseOutcome = (Vec<SampleRow>, Vec<CaseDelta>, Vec<SkipNote>);
    let outcomes: Vec<CaseOutcome> = run_indexed(cases.len(), config.case_parallelism, |i| {
        let (prompt_index, seed) = cases[i];
        let case = inject_words(&corpus[prompt_index], &config.word_pool, config.k, seed);
        let mut rows = Vec::new();
        let mut deltas = Vec::new();
        let mut skips = Vec::new();
        for &method in methods {
            match score_case(method, &case, prompt_index, client, config) {
                Ok(scores) => {
                    let unit_rows: Vec<SampleRow> = case
                        .injected_prompt
                        .split_whitespace()
                        .zip(scores)
                        .enumerate()
                        .map(|(unit_index, (unit, score))| SampleRow {
                            method,
                            prompt_index,
                            seed,
                            group: if case.injected_positions.contains(&unit_index) {
                                Group::Injected
                            } else {
                                Group::Real
                            },
                            unit_index,
                            unit: unit.to_string(),
                            score,
                        })
                        .collect();
                    deltas.push(CaseDelta {
                        method,
                        prompt_index,
                        seed,
                        delta_mean: summarize(&unit_rows, method).delta_mean,
                    });
                    rows.extend(unit_rows);
                }
                Err(reason) => {
                    log::warn!("skipping prompt {prompt_index} seed {seed} method {method}: {reason}");
                    skips.push(SkipNote {
                        prompt_index,
                        seed: Some(seed),
                        method: Some(method.to_string()),
                        reason,
                    });
                }
            }
        }
        (rows, deltas, skips)
    });

    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    let mut skipped = Vec::new();
    for (r, d, s) in outcomes {
        rows.extend(r);
        deltas.extend(d);
        skipped.extend(s);
    }
    let summary = methods.iter().map(|&m| summarize(&rows, m)).collect();

    Ok(ExperimentReport {
        summary,
        cases: deltas,
        skipped,
        config: json!({
            "experiment": "inject",
            "prompts": corpus.len(),
            "methods": methods,
            "k": config.k,
            "ratio": config.ratio,
            "seeds": config.seeds,
            "normalization": config.normalization,
            "word_pool_size": config.word_pool.len(),
            "template": config.template.id,
            "backend": client.config().id(),
            "std": "population",
        }),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    WithFirstOrder,
    WithoutFirstOrder,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::WithFirstOrder => "with-first-order",
            Condition::WithoutFirstOrder => "without-first-order",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cap: usize,
    pub conditions: Vec<Condition>,
    pub case_parallelism: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            seeds: vec![1],
            cap: 10,
            conditions: vec![Condition::WithFirstOrder],
            case_parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub prompt_index: usize,
    pub n: usize,
    pub ratio: f64,
    pub condition: Condition,
    pub seed: u64,
    pub plan_size: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceAggregate {
    pub ratio: f64,
    pub condition: Condition,
    pub mean_similarity: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub aggregates: Vec<ConvergenceAggregate>,
    pub skipped: Vec<SkipNote>,
    pub config: Value,
}

impl ConvergenceReport {
    pub fn mean_at(&self, ratio: f64, condition: Condition) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.ratio == ratio && a.condition == condition)
            .map(|a| a.mean_similarity)
    }
}

/// Cosine of two dense vectors; 0 when either is all zeros.
pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn run_convergence_experiment(
    corpus: &[String],
    client: &Client,
    config: &ConvergenceConfig,
) -> Result<ConvergenceReport, ExperimentError> {
    if corpus.is_empty() {
        return Err(ExperimentError::EmptyCorpus("<in-memory>".into()));
    }
    if config.ratios.is_empty() || config.seeds.is_empty() || config.conditions.is_empty() {
        return Err(ExperimentError::Config(
            "need ratios, seeds and conditions".into(),
        ));
    }
    if let Some(r) = config.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(ExperimentError::Config(format!("ratio {r} outside [0, 1]")));
    }

    let per_prompt: Vec<(Vec<ConvergenceRow>, Vec<SkipNote>)> =
        run_indexed(corpus.len(), config.case_parallelism, |prompt_index| {
            let mut rows = Vec::new();
            let mut skips = Vec::new();
            let skip = |reason: String, seed: Option<u64>| SkipNote {
                prompt_index,
                seed,
                method: None,
                reason,
            };
            let units = match split(&corpus[prompt_index], &Splitter::Whitespace) {
                Ok(u) => u,
                Err(e) => return (rows, vec![skip(e.to_string(), None)]),
            };
            let exact = match attribute_exact(&units, client, Normalization::None, config.cap) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("skipping prompt {prompt_index}: {e}");
                    return (rows, vec![skip(e.to_string(), None)]);
                }
            };
            for &ratio in &config.ratios {
                for &condition in &config.conditions {
                    for &seed in &config.seeds {
                        let force = condition == Condition::WithFirstOrder;
                        let estimate = build_plan(units.len(), ratio, seed, force)
                            .map_err(|e| e.to_string())
                            .and_then(|plan| {
                                attribute_any_plan(&units, &plan, client, Normalization::None, &TfidfValue)
                                    .map_err(|e| e.to_string())
                            });
                        match estimate {
                            Ok(est) => rows.push(ConvergenceRow {
                                prompt_index,
                                n: units.len(),
                                ratio,
                                condition,
                                seed,
                                plan_size: est.meta.plan_size,
                                similarity: dense_cosine(&est.phi_raw, &exact.phi_raw),
                            }),
                            Err(reason) => skips.push(skip(reason, Some(seed))),
                        }
                    }
                }
            }
            (rows, skips)
        });

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in per_prompt {
        rows.extend(r);
        skipped.extend(s);
    }

    let mut aggregates = Vec::new();
    for &ratio in &config.ratios {
        for &condition in &config.conditions {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.ratio == ratio && r.condition == condition)
                .map(|r| r.similarity)
                .collect();
            aggregates.push(ConvergenceAggregate {
                ratio,
                condition,
                mean_similarity: mean_std(&values).0,
                count: values.len(),
            });
        }
    }

    Ok(ConvergenceReport {
        rows,
        aggregates,
        skipped,
        config: json!({
            "experiment": "converge",
            "prompts": corpus.len(),
            "ratios": config.ratios,
            "seeds": config.seeds,
            "cap": config.cap,
            "conditions": config.conditions,
            "backend": client.config().id(),
            "compared": "phi_raw",
        }),
    })
}

/// Files produced by one report write.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub schema: PathBuf,
}

/// `<experiment>-<timestamp>-<seed>`.
pub fn report_stem(experiment: &str, timestamp: &str, seed: u64) -> String {
    format!("{experiment}-{timestamp}-{seed}")
}

fn write_files<R: Serialize>(
    dir: &Path,
    stem: &str,
    rows: &[R],
    summary: &Value,
    columns: &[(&str, &str, &str)],
) -> Result<ReportFiles, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let files = ReportFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}.json")),
        schema: dir.join(format!("{stem}.schema.json")),
    };
    let mut writer =
        csv::Writer::from_path(&files.csv).map_err(|e| io_err(&files.csv, io::Error::other(e)))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| io_err(&files.csv, io::Error::other(e)))?;
    }
    writer.flush().map_err(|e| io_err(&files.csv, e))?;

    let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("JSON values serialize");
    fs::write(&files.json, pretty(summary) + "\n").map_err(|e| io_err(&files.json, e))?;
    let schema = json!({
        "csv": files.csv.file_name().map(|n| n.to_string_lossy().into_owned()),
        "columns": columns
            .iter()
            .map(|(name, ty, doc)| json!({"name": name, "type": ty, "description": doc}))
            .collect::<Vec<_>>(),
    });
    fs::write(&files.schema, pretty(&schema) + "\n").map_err(|e| io_err(&files.schema, e))?;
    Ok(files)
}

pub const INJECTION_COLUMNS: &[(&str, &str, &str)] = &[
    ("method", "string", "random | prompt-engineer | tokenshap"),
    ("prompt_index", "integer", "zero-based index into the corpus"),
    ("seed", "integer", "case seed (injection and sampling)"),
    ("group", "string", "real | injected"),
    (
        "unit_index",
        "integer",
        "zero-based unit position in the injected prompt",
    ),
    ("unit", "string", "unit text"),
    ("score", "number", "importance assigned by the method"),
];

pub const CONVERGENCE_COLUMNS: &[(&str, &str, &str)] = &[
    ("prompt_index", "integer", "zero-based index into the corpus"),
    ("n", "integer", "unit count of the prompt"),
    ("ratio", "number", "sampling ratio"),
    ("condition", "string", "with-first-order | without-first-order"),
    ("seed", "integer", "plan seed"),
    (
        "plan_size",
        "integer",
        "combinations evaluated besides the baseline",
    ),
    (
        "similarity",
        "number",
        "cosine between estimated and exact raw attributions",
    ),
];

impl ExperimentReport {
    pub fn write(&self, dir: &Path, stem: &str) -> Result<ReportFiles, ExperimentError> {
        let summary = json!({
            "config": self.config,
            "summary": self.summary,
            "cases": self.cases,
            "skipped": self.skipped,
        });
        write_files(dir, stem, &self.rows, &summary, INJECTION_COLUMNS)
    }
}

impl ConvergenceReport {
    pub fn write(&self, dir: &Path, stem: &str) -> Result<ReportFiles, ExperimentError> {
        let summary = json!({
            "config": self.config,
            "aggregates": self.aggregates,
            "skipped": self.skipped,
        });
        write_files(dir, stem, &self.rows, &summary, CONVERGENCE_COLUMNS)
    }
}
