use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use tokenshap::baselines::PromptTemplate;
use tokenshap::experiments::{
    default_word_pool, load_corpus, parse_word_list, report_stem, run_convergence_experiment,
    run_injection_experiment, Condition, ConvergenceConfig, InjectionConfig, Method, SkipNote,
};
use tokenshap::model_backend::{Client, ResponseCache};
use tokenshap::shapley_engine::{attribute, attribute_exact, AttributionResult};
use tokenshap::subset_sampler::build_plan;
use tokenshap::text_units::{split, PromptUnits};
use tokenshap::visualization::{render_ansi_with, write_html, AnsiOptions};

use crate::args::{
    AnalyzeArgs, BackendArgs, CacheAction, CacheArgs, Cli, ConvergeArgs, ExactArgs, ExperimentCommon,
    InjectArgs, OutputArgs, PromptArgs,
};
use crate::config::{resolve_backend, resolve_cache_dir, Layer, RunConfig};
use crate::error::CliError;

/// Fixed timestamp used in file names under `--deterministic`.
const FIXED_TIMESTAMP: &str = "19700101T000000Z";

/// Environment, then the settings file, then `flags`.
fn layered(cli: &Cli, flags: Layer) -> Result<Layer, CliError> {
    Ok(Layer::from_env()
        .merged(&Layer::from_file(cli.config.as_deref())?)
        .merged(&flags))
}

fn open_cache(dir: Option<&Path>) -> Result<ResponseCache, CliError> {
    match dir {
        Some(dir) => ResponseCache::disk(dir)
            .map_err(|e| CliError::Input(format!("cache directory {}: {e}", dir.display()))),
        None => Ok(ResponseCache::memory()),
    }
}

fn read_prompt(args: &PromptArgs) -> Result<String, CliError> {
    match (&args.prompt, &args.prompt_file) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(path)) => {
            fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
        (None, None) => Err(CliError::Usage(
            "one of --prompt or --prompt-file is required".into(),
        )),
    }
}

fn output_layer(output: &OutputArgs, backend: &BackendArgs, ratio: Option<f64>) -> Layer {
    let mut layer = backend.layer().merged(&output.layer());
    layer.ratio = ratio;
    layer
}

struct Prepared {
    run: RunConfig,
    units: PromptUnits,
    client: Client,
}

fn prepare(cli: &Cli, prompt: &PromptArgs, flags: Layer) -> Result<Prepared, CliError> {
    let run = RunConfig::resolve(&layered(cli, flags)?)?;
    let units = split(&read_prompt(prompt)?, &run.splitter())?;
    let client = Client::new(run.backend.clone(), open_cache(run.cache_dir.as_deref())?)?;
    log::info!(
        "{} units, backend {}, seed {}",
        units.len(),
        client.config().id(),
        run.seed
    );
    Ok(Prepared { run, units, client })
}

pub fn analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<(), CliError> {
    let p = prepare(
        cli,
        &args.prompt,
        output_layer(&args.output, &args.backend, args.ratio),
    )?;
    let plan = build_plan(p.units.len(), p.run.ratio, p.run.seed, true)?;
    let result = attribute(&p.units, &plan, &p.client, p.run.normalization)?;
    emit("sampled", &p, &result, &args.output)
}

pub fn exact(cli: &Cli, args: &ExactArgs) -> Result<(), CliError> {
    let mut flags = output_layer(&args.output, &args.backend, Some(1.0));
    // Nothing is sampled; pin the echoed seed so output stays reproducible.
    flags.seed = flags.seed.or(Some(0));
    let p = prepare(cli, &args.prompt, flags)?;
    let result = attribute_exact(&p.units, &p.client, p.run.normalization, args.cap)?;
    emit("exact", &p, &result, &args.output)
}

/// The published result document: the attribution plus everything needed to
/// rerun it.
pub fn result_document(
    mode: &str,
    run: &RunConfig,
    result: &AttributionResult,
    deterministic: bool,
) -> Value {
    let mut doc = result.to_json();
    let obj = doc.as_object_mut().expect("result is an object");
    obj.insert("mode".into(), json!(mode));
    obj.insert(
        "config".into(),
        serde_json::to_value(run).expect("config serializes"),
    );
    obj.insert(
        "tool".into(),
        json!({"name": "tokenshap", "version": env!("CARGO_PKG_VERSION")}),
    );
    if !deterministic {
        obj.insert("created_at".into(), json!(chrono::Utc::now().to_rfc3339()));
    }
    doc
}

fn emit(mode: &str, p: &Prepared, result: &AttributionResult, output: &OutputArgs) -> Result<(), CliError> {
    log::info!(
        "{} upstream calls, {} cache hits",
        p.client.upstream_calls(),
        p.client.cache_hits()
    );
    let doc = result_document(mode, &p.run, result, output.deterministic);
    let text = serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n";

    if let Some(path) = &output.html {
        write_html(result, path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let heatmap = output.ansi.then(|| {
        let color = !output.no_color && std::env::var_os("NO_COLOR").is_none();
        render_ansi_with(
            result,
            &AnsiOptions {
                color,
                ..AnsiOptions::default()
            },
        )
    });

    match &output.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if let Some(h) = heatmap {
                print!("{h}");
            }
        }
        None => {
            if let Some(h) = heatmap {
                eprint!("{h}");
            }
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(())
}

/// Parses `1..50` (inclusive), `3`, or comma lists of either.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid seed list {spec:?} (try 1..50 or 1,2,3)"));
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if b < a {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn parse_list<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|e| CliError::Usage(format!("invalid {what} {p:?}: {e}")))
        })
        .collect()
}

fn experiment_client(cli: &Cli, backend: &BackendArgs) -> Result<Client, CliError> {
    let layer = layered(cli, backend.layer())?;
    let config = resolve_backend(&layer)?;
    Ok(Client::new(
        config,
        open_cache(resolve_cache_dir(&layer).as_deref())?,
    )?)
}

fn stem(name: &str, common: &ExperimentCommon, first_seed: u64) -> String {
    let ts = if common.deterministic {
        FIXED_TIMESTAMP.to_string()
    } else {
        chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
    };
    report_stem(name, &ts, first_seed)
}

fn warn_skips(skipped: &[SkipNote]) {
    for s in skipped {
        log::warn!(
            "skipped prompt {} (seed {:?}): {}",
            s.prompt_index,
            s.seed,
            s.reason
        );
    }
}

/// When nothing completed, the skips are the error.
fn nothing_completed(skipped: &[SkipNote]) -> CliError {
    match skipped.first() {
        Some(s) => CliError::Backend(format!(
            "no case completed ({} skipped); first failure: {}",
            skipped.len(),
            s.reason
        )),
        None => CliError::Input("no case completed".into()),
    }
}

pub fn inject(cli: &Cli, args: &InjectArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.common.corpus)?;
    let methods: Vec<Method> = parse_list(&args.methods, "method")?;
    let seeds = parse_seeds(&args.common.seeds)?;
    let settings = layered(
        cli,
        Layer {
            ratio: args.ratio,
            normalization: args.normalization.clone(),
            ..Layer::default()
        },
    )?;
    let mut config = InjectionConfig {
        k: args.k,
        seeds: seeds.clone(),
        ..InjectionConfig::default()
    };
    if let Some(r) = settings.ratio {
        config.ratio = r;
    }
    if let Some(n) = &settings.normalization {
        config.normalization = n.parse().map_err(CliError::Usage)?;
    }
    config.word_pool = match &args.word_pool {
        Some(path) => parse_word_list(
            &fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        ),
        None => default_word_pool(),
    };
    if let Some(path) = &args.template {
        config.template = PromptTemplate::from_file(path)?;
    }
    let client = experiment_client(cli, &args.backend)?;

    let report = run_injection_experiment(&corpus, &methods, &client, &config)?;
    warn_skips(&report.skipped);
    if report.rows.is_empty() {
        return Err(nothing_completed(&report.skipped));
    }
    let files = report.write(&args.common.out_dir, &stem("inject", &args.common, seeds[0]))?;
    log::info!(
        "wrote {}, {}, {}",
        files.csv.display(),
        files.json.display(),
        files.schema.display()
    );

    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>7} {:>9} {:>10} {:>13} {:>11} {:>10}\n",
        "method", "n_real", "n_inject", "mean_real", "mean_injected", "delta_mean", "delta_std"
    ));
    for s in &report.summary {
        out.push_str(&format!(
            "{:<16} {:>7} {:>9} {:>10.4} {:>13.4} {:>11.4} {:>10.4}\n",
            s.method.to_string(),
            s.n_real,
            s.n_injected,
            s.mean_real,
            s.mean_injected,
            s.delta_mean,
            s.delta_std
        ));
    }
    out.push_str(&format!("report: {}\n", files.json.display()));
    print!("{out}");
    Ok(())
}

pub fn converge(cli: &Cli, args: &ConvergeArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.common.corpus)?;
    let seeds = parse_seeds(&args.common.seeds)?;
    let ratios: Vec<f64> = parse_list(&args.ratios, "ratio")?;
    let mut conditions = vec![Condition::WithFirstOrder];
    if args.with_and_without_first_order {
        conditions.push(Condition::WithoutFirstOrder);
    }
    let config = ConvergenceConfig {
        ratios,
        seeds: seeds.clone(),
        cap: args.cap,
        conditions,
        ..ConvergenceConfig::default()
    };
    let client = experiment_client(cli, &args.backend)?;

    let report = run_convergence_experiment(&corpus, &client, &config)?;
    warn_skips(&report.skipped);
    if report.rows.is_empty() {
        return Err(nothing_completed(&report.skipped));
    }
    let files = report.write(&args.common.out_dir, &stem("converge", &args.common, seeds[0]))?;
    log::info!(
        "wrote {}, {}, {}",
        files.csv.display(),
        files.json.display(),
        files.schema.display()
    );

    let mut out = format!(
        "{:>6} {:<20} {:>15} {:>6}\n",
        "ratio", "condition", "mean_similarity", "count"
    );
    for a in &report.aggregates {
        out.push_str(&format!(
            "{:>6.2} {:<20} {:>15.6} {:>6}\n",
            a.ratio,
            a.condition.to_string(),
            a.mean_similarity,
            a.count
        ));
    }
    out.push_str(&format!("report: {}\n", files.json.display()));
    print!("{out}");
    Ok(())
}

pub fn cache(cli: &Cli, args: &CacheArgs) -> Result<(), CliError> {
    let layer = layered(
        cli,
        Layer {
            cache_dir: args.cache_dir.clone(),
            ..Layer::default()
        },
    )?;
    let dir = layer
        .cache_dir
        .clone()
        .or_else(crate::config::default_cache_dir)
        .ok_or_else(|| CliError::Usage("no cache directory; pass --cache-dir".into()))?;
    let cache = open_cache(Some(&dir))?;
    let io = |e: std::io::Error| CliError::Input(format!("cache directory {}: {e}", dir.display()));
    match args.action {
        CacheAction::Stats => {
            let stats = cache.stats().map_err(io)?;
            println!(
                "dir: {}\nentries: {}\nbytes: {}",
                dir.display(),
                stats.entries,
                stats.bytes
            );
        }
        CacheAction::Clear => {
            let removed = cache.clear().map_err(io)?;
            println!("removed {removed} entries from {}", dir.display());
        }
    }
    Ok(())
}
