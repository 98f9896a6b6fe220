//! Error classes and their exit codes.

use serde_json::json;
use tokenshap::baselines::BaselineError;
use tokenshap::experiments::ExperimentError;
use tokenshap::model_backend::BackendError;
use tokenshap::shapley_engine::EngineError;
use tokenshap::subset_sampler::SamplerError;
use tokenshap::text_units::TextError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or settings (exit 1).
    Usage(String),
    /// The model backend failed (exit 2).
    Backend(String),
    /// Unusable input data or files (exit 3).
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Input(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Backend(_) => "backend",
            CliError::Input(_) => "input",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Backend(m) | CliError::Input(m) => m,
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind(), "code": self.exit_code(), "message": self.message()}})
            .to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) | BackendError::InvalidRequest(_) => CliError::Usage(e.to_string()),
            BackendError::Cache(_) => CliError::Input(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidRatio(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        match e {
            TextError::InvalidSplitter { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Baseline(source) | EngineError::Backend { source, .. }
                if matches!(source, BackendError::Cache(_)) =>
            {
                CliError::Input(source.to_string())
            }
            EngineError::Baseline(_) | EngineError::Backend { .. } => CliError::Backend(e.to_string()),
            EngineError::Sampler(s) => s.into(),
            EngineError::Text(t) => t.into(),
            EngineError::PlanMismatch(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Backend(b) => b.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}
