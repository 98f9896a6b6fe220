//! Model-agnostic token attribution for language-model prompts.
//!
//! A prompt is split into units, subsets of those units are sent to a model,
//! and each unit is scored by how much the responses to subsets containing it
//! resemble the full-prompt response, compared with subsets that leave it
//! out. Similarity is TF-IDF cosine between response texts.
//!
//! ```
//! use tokenshap::model_backend::{BackendConfig, Client, MockSpec, ResponseCache};
//! use tokenshap::shapley_engine::{attribute, Normalization};
//! use tokenshap::subset_sampler::build_plan;
//! use tokenshap::text_units::{split, Splitter};
//!
//! let units = split("why is the sky blue", &Splitter::Whitespace)?;
//! let plan = build_plan(units.len(), 0.0, 7, true)?;
//! let client = Client::new(BackendConfig::mock(MockSpec::Echo), ResponseCache::memory())?;
//! let result = attribute(&units, &plan, &client, Normalization::L1)?;
//! assert_eq!(result.phi_norm.len(), 5);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod baselines;
pub mod experiments;
pub mod model_backend;
pub mod shapley_engine;
pub mod similarity;
pub mod subset_sampler;
pub mod text_units;
pub mod visualization;
