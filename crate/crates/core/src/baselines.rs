//! Competing importance scores: uniform random draws, and ratings elicited
//! from a model with a few-shot prompt.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::model_backend::{BackendError, Client};
use crate::text_units::PromptUnits;

/// Bundled few-shot template. `{prompt}` and `{units}` are substituted.
pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/prompt_engineer_v1.txt");
pub const DEFAULT_TEMPLATE_ID: &str = "prompt_engineer_v1";

const STRICT_SUFFIX: &str = "\nAnswer with ONLY {n} comma-separated integers between 0 and 100, one per listed word, and no other text.\nRatings:";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("could not parse {expected} ratings from model reply {reply:?}")]
    Unparseable { expected: usize, reply: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("reading template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Random,
    PromptEngineer,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Random => "random",
            BaselineMethod::PromptEngineer => "prompt-engineer",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(BaselineMethod::Random),
            "prompt-engineer" => Ok(BaselineMethod::PromptEngineer),
            _ => Err(format!("unknown baseline {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineScores {
    pub method: BaselineMethod,
    pub scores: Vec<f64>,
}

pub fn random_importance(units: &PromptUnits, seed: u64) -> BaselineScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BaselineScores {
        method: BaselineMethod::Random,
        scores: (0..units.len()).map(|_| rng.random::<f64>()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: String,
    pub text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            id: DEFAULT_TEMPLATE_ID.to_string(),
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn from_file(path: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Template {
            path: path.display().to_string(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        Ok(Self { id, text })
    }

    pub fn render(&self, units: &PromptUnits) -> String {
        let listing: Vec<String> = units
            .units()
            .iter()
            .enumerate()
            .map(|(i, u)| format!("{}. {u}", i + 1))
            .collect();
        self.text
            .replace("{prompt}", &units.canonical())
            .replace("{units}", &listing.join("\n"))
    }

    fn render_strict(&self, units: &PromptUnits) -> String {
        let base = self.render(units);
        let base = base
            .trim_end()
            .strip_suffix("Ratings:")
            .unwrap_or(base.trim_end());
        format!(
            "{}{}",
            base.trim_end(),
            STRICT_SUFFIX.replace("{n}", &units.len().to_string())
        )
    }
}

/// Pulls one rating per comma/newline/semicolon-separated field. Each field
/// contributes its last number, so "3. sky: 80" reads as 80. Ratings are
/// clamped to [0, 100] and scaled to [0, 1].
pub fn parse_ratings(reply: &str, expected: usize) -> Option<Vec<f64>> {
    static NUMBER: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let number = NUMBER.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));
    let mut out = Vec::new();
    for field in reply.split([',', '\n', ';']) {
        let field = field.trim();
        if field.is_empty() {
            continue;
        }
        let last = number.find_iter(field).last()?;
        let value: f64 = last.as_str().parse().ok()?;
        out.push(value.clamp(0.0, 100.0) / 100.0);
    }
    (out.len() == expected).then_some(out)
}

/// Asks the model to rate each unit; one stricter retry on a bad reply.
pub fn prompt_engineer_importance(
    units: &PromptUnits,
    client: &Client,
    template: &PromptTemplate,
) -> Result<BaselineScores, BaselineError> {
    let n = units.len();
    let first = client.complete(&template.render(units))?;
    let reply = match parse_ratings(&first.text, n) {
        Some(scores) => {
            return Ok(BaselineScores {
                method: BaselineMethod::PromptEngineer,
                scores,
            })
        }
        None => client.complete(&template.render_strict(units))?.text,
    };
    parse_ratings(&reply, n)
        .map(|scores| BaselineScores {
            method: BaselineMethod::PromptEngineer,
            scores,
        })
        .ok_or(BaselineError::Unparseable { expected: n, reply })
}
