//! The attribution pipeline: baseline call, evaluation of every planned
//! subset, and the difference-of-averages estimate
//!
//! ```text
//! phi_i = mean(v(S) : i ∈ S) - mean(v(S) : i ∉ S)
//! ```
//!
//! over the planned subsets `S`, where `v(S)` scores the response to `S`
//! against the full-prompt response. The baseline itself is not part of
//! either average.
//!
//! This is not the permutation-weighted Shapley value; every planned subset
//! carries equal weight.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::model_backend::{BackendError, Client};
use crate::similarity::value_of_subsets;
use crate::subset_sampler::{exhaustive_plan, SamplerError, SamplingPlan, SubsetCombination, RNG_ALGORITHM};
use crate::text_units::{reconstruct, reconstruct_indices, PromptUnits, TextError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("baseline request failed: {0}")]
    Baseline(#[source] BackendError),
    #[error("combination {index} failed after {completed} of {total} records completed: {source}")]
    Backend {
        index: usize,
        completed: usize,
        total: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// `phi_i / Σ|phi_j|`, sign preserved.
    #[default]
    L1,
    /// Affine map onto `[0, 1]`.
    MinMax,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::L1 => "l1",
            Normalization::MinMax => "minmax",
        })
    }
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "l1" => Ok(Normalization::L1),
            "minmax" => Ok(Normalization::MinMax),
            _ => Err(format!(
                "unknown normalization {s:?} (expected none, l1 or minmax)"
            )),
        }
    }
}

pub fn normalize(phi_raw: &[f64], mode: Normalization) -> Vec<f64> {
    match mode {
        Normalization::None => phi_raw.to_vec(),
        Normalization::L1 => {
            let total: f64 = phi_raw.iter().map(|v| v.abs()).sum();
            if total == 0.0 {
                vec![0.0; phi_raw.len()]
            } else {
                phi_raw.iter().map(|v| v / total).collect()
            }
        }
        Normalization::MinMax => {
            let lo = phi_raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = phi_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                phi_raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; phi_raw.len()]
            }
        }
    }
}

/// Scores subset responses against the baseline response.
pub trait ValueFunction {
    fn score(&self, baseline_text: &str, subset_texts: &[String]) -> Vec<f64>;
}

/// TF-IDF cosine, fitted per run on the baseline plus all subset responses.
#[derive(Debug, Clone, Copy, Default)]
pub struct TfidfValue;

impl ValueFunction for TfidfValue {
    fn score(&self, baseline_text: &str, subset_texts: &[String]) -> Vec<f64> {
        value_of_subsets(baseline_text, subset_texts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub combination: SubsetCombination,
    pub prompt_text: String,
    pub response_text: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub ratio: f64,
    pub seed: u64,
    pub backend: String,
    pub rng: &'static str,
    pub plan_size: usize,
    /// Plan combinations plus the baseline.
    pub model_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionResult {
    pub units: PromptUnits,
    pub phi_raw: Vec<f64>,
    pub phi_norm: Vec<f64>,
    pub normalization: Normalization,
    pub baseline_text: String,
    pub records: Vec<EvaluationRecord>,
    pub meta: RunMeta,
}

impl AttributionResult {
    /// The published result document (records are left out).
    pub fn to_json(&self) -> Value {
        json!({
            "prompt": self.units.source(),
            "units": self.units.units(),
            "spans": self.units.spans(),
            "splitter": self.units.splitter_id(),
            "phi_raw": self.phi_raw,
            "phi_norm": self.phi_norm,
            "normalization": self.normalization,
            "ratio": self.meta.ratio,
            "seed": self.meta.seed,
            "backend": self.meta.backend,
            "rng": self.meta.rng,
            "plan_size": self.meta.plan_size,
            "model_calls": self.meta.model_calls,
            "baseline_text": self.baseline_text,
        })
    }
}

/// Difference-of-averages estimate from `(combination, similarity)` pairs.
///
/// Pairs are summed in binary-counting order of the combinations, so the
/// same set of pairs gives bit-identical output regardless of plan order.
/// A unit with no including (or no excluding) combination gets 0 for that
/// average.
pub fn estimate_phi(n: usize, scored: &[(&SubsetCombination, f64)]) -> Vec<f64> {
    let mut ordered: Vec<(Vec<u64>, &SubsetCombination, f64)> =
        scored.iter().map(|&(c, s)| (c.counting_key(), c, s)).collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));

    // Averages are taken over deviations from one pivot similarity. The
    // pivot cancels in the difference, and a constant value function gives
    // exactly zero.
    let pivot = ordered.first().map_or(0.0, |o| o.2);
    let mut with_sum = vec![0.0; n];
    let mut with_count = vec![0usize; n];
    let mut without_sum = vec![0.0; n];
    let mut without_count = vec![0usize; n];
    for (_, combination, similarity) in &ordered {
        let deviation = similarity - pivot;
        for i in 0..n {
            if combination.contains(i) {
                with_sum[i] += deviation;
                with_count[i] += 1;
            } else {
                without_sum[i] += deviation;
                without_count[i] += 1;
            }
        }
    }
    let mean = |sum: f64, count: usize| if count == 0 { -pivot } else { sum / count as f64 };
    (0..n)
        .map(|i| mean(with_sum[i], with_count[i]) - mean(without_sum[i], without_count[i]))
        .collect()
}

/// Runs a plan built with first-order forcing.
pub fn attribute(
    units: &PromptUnits,
    plan: &SamplingPlan,
    client: &Client,
    normalization: Normalization,
) -> Result<AttributionResult, EngineError> {
    attribute_with(units, plan, client, normalization, &TfidfValue)
}

pub fn attribute_with(
    units: &PromptUnits,
    plan: &SamplingPlan,
    client: &Client,
    normalization: Normalization,
    value: &dyn ValueFunction,
) -> Result<AttributionResult, EngineError> {
    if !plan.force_first_order {
        return Err(EngineError::PlanMismatch(
            "plan was built without first-order combinations".into(),
        ));
    }
    attribute_any_plan(units, plan, client, normalization, value)
}

/// Like [`attribute_with`] but accepts plans without first-order forcing, as
/// used by the convergence experiment.
pub fn attribute_any_plan(
    units: &PromptUnits,
    plan: &SamplingPlan,
    client: &Client,
    normalization: Normalization,
    value: &dyn ValueFunction,
) -> Result<AttributionResult, EngineError> {
    let n = units.len();
    if plan.n != n {
        return Err(EngineError::PlanMismatch(format!(
            "plan covers {} units, prompt has {n}",
            plan.n
        )));
    }
    if let Some(bad) = plan.combinations.iter().find(|c| c.is_empty() || c.len() >= n) {
        return Err(EngineError::PlanMismatch(format!(
            "combination {:?} is not a proper non-empty subset",
            bad.included()
        )));
    }

    let full: Vec<usize> = (0..n).collect();
    let baseline = client
        .complete(&reconstruct_indices(units, &full)?)
        .map_err(EngineError::Baseline)?;

    let prompts = plan
        .combinations
        .iter()
        .map(|c| reconstruct(units, c))
        .collect::<Result<Vec<_>, _>>()?;
    let responses = client.complete_batch(&prompts);
    let total = responses.len();
    let completed = responses.iter().filter(|r| r.is_ok()).count();
    let mut texts = Vec::with_capacity(total);
    for (index, response) in responses.into_iter().enumerate() {
        match response {
            Ok(r) => texts.push(r.text),
            Err(source) => {
                return Err(EngineError::Backend {
                    index,
                    completed,
                    total,
                    source,
                })
            }
        }
    }

    let similarities = value.score(&baseline.text, &texts);
    let records: Vec<EvaluationRecord> = plan
        .combinations
        .iter()
        .zip(prompts)
        .zip(texts)
        .zip(similarities)
        .map(
            |(((combination, prompt_text), response_text), similarity)| EvaluationRecord {
                combination: combination.clone(),
                prompt_text,
                response_text,
                similarity,
            },
        )
        .collect();

    let scored: Vec<_> = records.iter().map(|r| (&r.combination, r.similarity)).collect();
    let phi_raw = estimate_phi(n, &scored);
    let phi_norm = normalize(&phi_raw, normalization);

    Ok(AttributionResult {
        units: units.clone(),
        phi_raw,
        phi_norm,
        normalization,
        baseline_text: baseline.text,
        meta: RunMeta {
            ratio: plan.ratio,
            seed: plan.seed,
            backend: client.config().id(),
            rng: RNG_ALGORITHM,
            plan_size: plan.len(),
            model_calls: plan.len() + 1,
        },
        records,
    })
}

/// Attribution over every proper non-empty subset.
pub fn attribute_exact(
    units: &PromptUnits,
    client: &Client,
    normalization: Normalization,
    cap: usize,
) -> Result<AttributionResult, EngineError> {
    attribute_exact_with(units, client, normalization, cap, &TfidfValue)
}

pub fn attribute_exact_with(
    units: &PromptUnits,
    client: &Client,
    normalization: Normalization,
    cap: usize,
    value: &dyn ValueFunction,
) -> Result<AttributionResult, EngineError> {
    let plan = exhaustive_plan(units.len(), cap)?;
    attribute_with(units, &plan, client, normalization, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subset_sampler::{build_plan, enumerate_all, Origin};
    use proptest::prelude::*;

    fn combo(ix: &[usize]) -> SubsetCombination {
        SubsetCombination::new(ix.to_vec(), Origin::Sampled)
    }

    #[test]
    fn hand_enumerated_three_units() {
        // sim(S) = |S| / 3 over the six proper subsets of three units.
        let all = enumerate_all(3, 16).unwrap();
        let scored: Vec<_> = all.iter().map(|c| (c, c.len() as f64 / 3.0)).collect();
        let phi = estimate_phi(3, &scored);
        for p in &phi {
            assert!((p - 1.0 / 9.0).abs() < 1e-12);
        }
        let norm = normalize(&phi, Normalization::L1);
        for p in norm {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_side_counts_as_zero() {
        let a = combo(&[0]);
        let phi = estimate_phi(3, &[(&a, 0.6)]);
        assert_eq!(phi, [0.6, -0.6, -0.6]);
    }

    #[test]
    fn estimate_ignores_pair_order() {
        let cs: Vec<_> = enumerate_all(4, 16).unwrap();
        let scored: Vec<_> = cs
            .iter()
            .enumerate()
            .map(|(i, c)| (c, (i as f64 * 0.37).sin()))
            .collect();
        let mut reversed = scored.clone();
        reversed.reverse();
        assert_eq!(estimate_phi(4, &scored), estimate_phi(4, &reversed));
    }

    #[test]
    fn normalization_guards_and_signs() {
        assert_eq!(normalize(&[0.0, 0.0], Normalization::L1), [0.0, 0.0]);
        assert_eq!(normalize(&[0.0, 0.0], Normalization::MinMax), [0.5, 0.5]);
        assert_eq!(normalize(&[-2.0, 2.0], Normalization::L1), [-0.5, 0.5]);
        assert_eq!(
            normalize(&[1.0, 3.0, 2.0], Normalization::MinMax),
            [0.0, 1.0, 0.5]
        );
        assert_eq!(normalize(&[1.0, -3.0], Normalization::None), [1.0, -3.0]);
        assert_eq!("minmax".parse::<Normalization>().unwrap(), Normalization::MinMax);
        assert!("l2".parse::<Normalization>().is_err());
    }

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x > v[best] {
                best = i;
            }
        }
        best
    }

    fn argmin(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x < v[best] {
                best = i;
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn normalization_invariants(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            let constant = v.iter().all(|x| *x == v[0]);
            let l1 = normalize(&v, Normalization::L1);
            let mm = normalize(&v, Normalization::MinMax);
            prop_assert_eq!(l1.len(), v.len());
            if v.iter().any(|x| *x != 0.0) {
                let s: f64 = l1.iter().map(|x| x.abs()).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            prop_assert!(mm.iter().all(|x| (0.0..=1.0).contains(x)));
            if !constant {
                prop_assert!(mm.contains(&0.0) && mm.contains(&1.0));
                prop_assert_eq!(argmax(&l1), argmax(&v));
                prop_assert_eq!(argmax(&mm), argmax(&v));
                prop_assert_eq!(argmin(&l1), argmin(&v));
                prop_assert_eq!(argmin(&mm), argmin(&v));
            }
        }

        #[test]
        fn first_order_plans_have_both_sides(n in 2usize..9, ratio in 0.0f64..=1.0, seed: u64) {
            let plan = build_plan(n, ratio, seed, true).unwrap();
            for i in 0..n {
                prop_assert!(plan.combinations.iter().any(|c| c.contains(i)));
                prop_assert!(plan.combinations.iter().any(|c| !c.contains(i)));
            }
        }
    }
}
