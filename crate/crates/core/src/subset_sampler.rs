//! Choosing which unit subsets (coalitions) get sent to the model.
//!
//! The universe is every subset with at least one unit and at least one unit
//! missing: `2^n - 2` members. The empty prompt cannot be sent and the full
//! prompt is the baseline, evaluated separately.
//!
//! A plan always starts with the `n` essential subsets (each omitting exactly
//! one unit) when first-order forcing is on, then adds distinct subsets drawn
//! uniformly without replacement until the ratio-derived budget is met.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Identifier of the generator used for plans and baselines, echoed in run
/// metadata.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64";

/// Default upper bound on `n` for full enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Largest plan `build_plan` will draw. Budgets past this are almost always
/// the result of a large prompt with a non-trivial ratio.
pub const MAX_PLAN_SIZE: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("need at least 2 units to form proper subsets, got {0}")]
    TooFewUnits(usize),
    #[error("sampling ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("{n} units exceeds the enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("sampling budget of {budget} combinations for {n} units exceeds the limit of {limit}")]
    PlanTooLarge { n: usize, budget: f64, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Essential,
    Sampled,
}

/// A proper, non-empty subset of unit indices (zero-based, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SubsetCombination {
    included: Vec<usize>,
    origin: Origin,
}

impl SubsetCombination {
    /// Builds a combination from arbitrary indices; they are sorted and
    /// deduplicated. Range and properness are checked by the consumers.
    pub fn new(mut included: Vec<usize>, origin: Origin) -> Self {
        included.sort_unstable();
        included.dedup();
        Self { included, origin }
    }

    fn from_mask(mask: &[u64], n: usize, origin: Origin) -> Self {
        let included = (0..n).filter(|&i| mask[i / 64] >> (i % 64) & 1 == 1).collect();
        Self { included, origin }
    }

    pub fn included(&self) -> &[usize] {
        &self.included
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.included.binary_search(&index).is_ok()
    }

    /// Key whose lexicographic order equals binary-counting order of the
    /// subset bitmask (bit `i` set when unit `i` is included).
    pub fn counting_key(&self) -> Vec<u64> {
        let words = self.included.last().map_or(1, |&i| i / 64 + 1);
        let mut mask = vec![0u64; words];
        for &i in &self.included {
            mask[i / 64] |= 1 << (i % 64);
        }
        mask.reverse();
        // The top word is never zero, so word count orders first.
        let mut key = vec![mask.len() as u64];
        key.extend(mask);
        key
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingPlan {
    pub n: usize,
    pub ratio: f64,
    pub seed: u64,
    pub force_first_order: bool,
    pub combinations: Vec<SubsetCombination>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.combinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combinations.is_empty()
    }
}

/// `|U| = 2^n - 2` as a float (exact for n ≤ 53).
fn universe_size(n: usize) -> f64 {
    2f64.powi(n as i32) - 2.0
}

/// Ratio-derived budget: `floor((2^n - 1) * ratio)` clamped to `|U|`.
pub fn budget(n: usize, ratio: f64) -> f64 {
    ((2f64.powi(n as i32) - 1.0) * ratio)
        .floor()
        .min(universe_size(n))
}

/// The essential combination omitting unit `omit`.
pub fn essential(n: usize, omit: usize) -> SubsetCombination {
    SubsetCombination {
        included: (0..n).filter(|&i| i != omit).collect(),
        origin: Origin::Essential,
    }
}

pub fn build_plan(
    n: usize,
    ratio: f64,
    seed: u64,
    force_first_order: bool,
) -> Result<SamplingPlan, SamplerError> {
    if n < 2 {
        return Err(SamplerError::TooFewUnits(n));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(SamplerError::InvalidRatio(ratio));
    }
    let budget = budget(n, ratio);
    let target = if force_first_order {
        budget.max(n as f64)
    } else {
        budget.max(1.0)
    };
    if target > MAX_PLAN_SIZE as f64 {
        return Err(SamplerError::PlanTooLarge {
            n,
            budget: target,
            limit: MAX_PLAN_SIZE,
        });
    }
    let target = target as usize;

    let mut combinations = Vec::with_capacity(target);
    if force_first_order {
        combinations.extend((0..n).map(|omit| essential(n, omit)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = n.div_ceil(64);
    let last_bits = n - (words - 1) * 64;
    let last_mask = if last_bits == 64 {
        u64::MAX
    } else {
        (1u64 << last_bits) - 1
    };
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(target);
    let mut draw = vec![0u64; words];

    while combinations.len() < target {
        for w in draw.iter_mut() {
            *w = rng.random();
        }
        draw[words - 1] &= last_mask;
        let size: u32 = draw.iter().map(|w| w.count_ones()).sum();
        let size = size as usize;
        if size == 0 || size == n {
            continue;
        }
        if force_first_order && size == n - 1 {
            continue;
        }
        if seen.insert(draw.clone()) {
            combinations.push(SubsetCombination::from_mask(&draw, n, Origin::Sampled));
        }
    }

    Ok(SamplingPlan {
        n,
        ratio,
        seed,
        force_first_order,
        combinations,
    })
}

/// Every proper non-empty subset, in binary-counting order of the bitmask.
pub fn enumerate_all(n: usize, cap: usize) -> Result<Vec<SubsetCombination>, SamplerError> {
    if n < 2 {
        return Err(SamplerError::TooFewUnits(n));
    }
    if n > cap || n > 63 {
        return Err(SamplerError::CapExceeded { n, cap });
    }
    let full = (1u64 << n) - 1;
    Ok((1..full)
        .map(|mask| {
            let origin = if mask.count_ones() as usize == n - 1 {
                Origin::Essential
            } else {
                Origin::Sampled
            };
            SubsetCombination::from_mask(&[mask], n, origin)
        })
        .collect())
}

/// A plan covering the whole universe, for exact attribution.
pub fn exhaustive_plan(n: usize, cap: usize) -> Result<SamplingPlan, SamplerError> {
    Ok(SamplingPlan {
        n,
        ratio: 1.0,
        seed: 0,
        force_first_order: true,
        combinations: enumerate_all(n, cap)?,
    })
}
