//! Settings layering: environment, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokenshap::model_backend::{BackendConfig, BackendKind};
use tokenshap::shapley_engine::Normalization;
use tokenshap::text_units::Splitter;

use crate::error::CliError;

pub const ENV_BACKEND: &str = "TOKSHAP_BACKEND";
pub const ENV_BASE_URL: &str = "TOKSHAP_BASE_URL";
pub const ENV_MODEL: &str = "TOKSHAP_MODEL";
pub const ENV_CACHE_DIR: &str = "TOKSHAP_CACHE_DIR";

const DEFAULT_BACKEND: &str = "ollama";
const OLLAMA_URL: &str = "http://127.0.0.1:11434";
const OLLAMA_MODEL: &str = "llama3";

/// One layer of settings. Every field is optional so layers can be merged.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub backend: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub max_concurrency: Option<usize>,
    pub splitter: Option<String>,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub normalization: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub no_cache: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl Layer {
    pub fn from_env() -> Layer {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Layer {
            backend: var(ENV_BACKEND),
            base_url: var(ENV_BASE_URL),
            model: var(ENV_MODEL),
            cache_dir: var(ENV_CACHE_DIR).map(PathBuf::from),
            ..Layer::default()
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Layer, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("{}: {e}", origin.display())))
    }

    /// Reads `explicit` (must exist) or the default path (may be absent).
    pub fn from_file(explicit: Option<&Path>) -> Result<Layer, CliError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => match default_config_path() {
                Some(p) if p.is_file() => p,
                _ => return Ok(Layer::default()),
            },
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        log::debug!("loaded config from {}", path.display());
        Layer::from_toml(&text, &path)
    }

    /// `self` with every field that `top` sets replaced.
    pub fn merged(mut self, top: &Layer) -> Layer {
        overlay!(
            self,
            top,
            backend,
            base_url,
            model,
            api_key,
            temperature,
            timeout_ms,
            max_retries,
            max_concurrency,
            splitter,
            ratio,
            seed,
            normalization,
            cache_dir,
            no_cache
        );
        self
    }
}

pub fn default_config_path() -> Option<PathBuf> {
    xdg_dir("XDG_CONFIG_HOME", ".config").map(|d| d.join("tokenshap").join("config.toml"))
}

pub fn default_cache_dir() -> Option<PathBuf> {
    xdg_dir("XDG_CACHE_HOME", ".cache").map(|d| d.join("tokenshap"))
}

fn xdg_dir(var: &str, fallback: &str) -> Option<PathBuf> {
    match std::env::var_os(var).filter(|v| !v.is_empty()) {
        Some(dir) => Some(PathBuf::from(dir)),
        None => std::env::var_os("HOME").map(|h| PathBuf::from(h).join(fallback)),
    }
}

/// Fully resolved settings; serialized into every result document.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub backend: BackendConfig,
    pub splitter: String,
    pub ratio: f64,
    pub seed: u64,
    pub normalization: Normalization,
    /// `None` when caching is disabled.
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(layer: &Layer) -> Result<RunConfig, CliError> {
        let backend = resolve_backend(layer)?;
        let splitter = layer.splitter.clone().unwrap_or_else(|| "whitespace".into());
        splitter
            .parse::<Splitter>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let ratio = layer.ratio.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&ratio) {
            return Err(CliError::Usage(format!("ratio must be in [0, 1], got {ratio}")));
        }
        let normalization = match &layer.normalization {
            Some(s) => s.parse().map_err(CliError::Usage)?,
            None => Normalization::default(),
        };
        Ok(RunConfig {
            backend,
            splitter,
            ratio,
            // Kept below 2^53 so the echoed seed survives JSON readers that
            // parse numbers as doubles.
            seed: layer.seed.unwrap_or_else(|| rand::random::<u64>() >> 11),
            normalization,
            cache_dir: resolve_cache_dir(layer),
        })
    }

    pub fn splitter(&self) -> Splitter {
        self.splitter.parse().expect("validated in resolve")
    }
}

pub fn resolve_backend(layer: &Layer) -> Result<BackendConfig, CliError> {
    let kind: BackendKind = layer
        .backend
        .as_deref()
        .unwrap_or(DEFAULT_BACKEND)
        .parse()
        .map_err(|e: tokenshap::model_backend::BackendError| CliError::Usage(e.to_string()))?;
    let mut config = BackendConfig::new(kind);
    if config.kind == BackendKind::Ollama {
        config.base_url = Some(OLLAMA_URL.into());
        config.model_name = OLLAMA_MODEL.into();
    }
    if let Some(url) = &layer.base_url {
        config.base_url = Some(url.clone());
    }
    if let Some(model) = &layer.model {
        config.model_name = model.clone();
    }
    config.api_key = layer.api_key.clone();
    if let Some(t) = layer.temperature {
        config.temperature = t;
    }
    if let Some(t) = layer.timeout_ms {
        config.timeout_ms = t;
    }
    if let Some(r) = layer.max_retries {
        config.max_retries = r;
    }
    if let Some(c) = layer.max_concurrency {
        config.max_concurrency = c;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

pub fn resolve_cache_dir(layer: &Layer) -> Option<PathBuf> {
    if layer.no_cache == Some(true) {
        return None;
    }
    layer.cache_dir.clone().or_else(default_cache_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_env() {
        let env = Layer {
            backend: Some("mock:echo".into()),
            model: Some("env-model".into()),
            cache_dir: Some("/env".into()),
            ..Layer::default()
        };
        let file = Layer::from_toml("model = \"file-model\"\nratio = 0.5\n", Path::new("x.toml")).unwrap();
        let flags = Layer {
            ratio: Some(0.25),
            seed: Some(3),
            ..Layer::default()
        };
        let merged = env.merged(&file).merged(&flags);
        let run = RunConfig::resolve(&merged).unwrap();
        assert_eq!(run.backend.model_name, "file-model");
        assert_eq!(run.ratio, 0.25);
        assert_eq!(run.seed, 3);
        assert_eq!(run.cache_dir, Some(PathBuf::from("/env")));
        assert_eq!(run.backend.kind.to_string(), "mock:echo");
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(Layer::from_toml("ratoi = 1.0", Path::new("x.toml")).is_err());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let bad_ratio = Layer {
            ratio: Some(1.5),
            backend: Some("mock:echo".into()),
            ..Layer::default()
        };
        assert!(matches!(RunConfig::resolve(&bad_ratio), Err(CliError::Usage(_))));
        let openai = Layer {
            backend: Some("openai".into()),
            ..Layer::default()
        };
        assert!(matches!(RunConfig::resolve(&openai), Err(CliError::Usage(_))));
    }

    #[test]
    fn generated_seed_fits_a_double() {
        let run = RunConfig::resolve(&Layer {
            backend: Some("mock:echo".into()),
            ..Layer::default()
        })
        .unwrap();
        assert!(run.seed < 1 << 53);
    }

    #[test]
    fn no_cache_wins() {
        let layer = Layer {
            cache_dir: Some("/x".into()),
            no_cache: Some(true),
            ..Layer::default()
        };
        assert_eq!(resolve_cache_dir(&layer), None);
    }
}
