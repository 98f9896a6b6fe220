//! Splitting prompts into attribution units and rebuilding prompts from
//! subsets of those units.
//!
//! Units are addressed by zero-based index throughout the crate.

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::subset_sampler::SubsetCombination;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("prompt has no units after splitting")]
    EmptyPrompt,
    #[error("unit index {index} out of range for {n} units")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid splitter spec {spec:?}: {reason}")]
    InvalidSplitter { spec: String, reason: String },
}

/// How a prompt is cut into units.
///
/// String forms: `whitespace` or `pattern:<regex>`. For a pattern splitter
/// every regex match is a delimiter; the pieces between matches are trimmed
/// and empty pieces are dropped.
#[derive(Debug, Clone, Default)]
pub enum Splitter {
    #[default]
    Whitespace,
    Pattern(Regex),
}

impl Splitter {
    pub fn id(&self) -> String {
        match self {
            Splitter::Whitespace => "whitespace".to_string(),
            Splitter::Pattern(re) => format!("pattern:{}", re.as_str()),
        }
    }
}

impl fmt::Display for Splitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Splitter {
    type Err = TextError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        if spec == "whitespace" {
            return Ok(Splitter::Whitespace);
        }
        match spec.strip_prefix("pattern:") {
            Some("") => Err(TextError::InvalidSplitter {
                spec: spec.to_string(),
                reason: "empty pattern".to_string(),
            }),
            Some(source) => {
                Regex::new(source)
                    .map(Splitter::Pattern)
                    .map_err(|e| TextError::InvalidSplitter {
                        spec: spec.to_string(),
                        reason: e.to_string(),
                    })
            }
            None => Err(TextError::InvalidSplitter {
                spec: spec.to_string(),
                reason: "expected `whitespace` or `pattern:<regex>`".to_string(),
            }),
        }
    }
}

/// A prompt split into units, with byte spans back into the source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptUnits {
    source: String,
    units: Vec<String>,
    spans: Vec<(usize, usize)>,
    splitter_id: String,
    /// Joins units in reconstructions.
    #[serde(skip)]
    separator: String,
}

impl PromptUnits {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn splitter_id(&self) -> &str {
        &self.splitter_id
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    /// Always false for a successfully split prompt; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// The whole prompt in canonical (separator-joined) form.
    pub fn canonical(&self) -> String {
        self.units.join(&self.separator)
    }
}

/// Splits `prompt` into units.
pub fn split(prompt: &str, splitter: &Splitter) -> Result<PromptUnits, TextError> {
    let (pieces, separator) = match splitter {
        Splitter::Whitespace => (whitespace_pieces(prompt), " ".to_string()),
        Splitter::Pattern(re) => pattern_pieces(prompt, re),
    };
    if pieces.is_empty() {
        return Err(TextError::EmptyPrompt);
    }
    let (spans, units) = pieces
        .into_iter()
        .map(|(start, end)| ((start, end), prompt[start..end].to_string()))
        .unzip();
    Ok(PromptUnits {
        source: prompt.to_string(),
        units,
        spans,
        splitter_id: splitter.id(),
        separator,
    })
}

fn whitespace_pieces(prompt: &str) -> Vec<(usize, usize)> {
    let mut pieces = Vec::new();
    let mut start = None;
    for (at, ch) in prompt.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                pieces.push((s, at));
                start = None;
            }
            (false, None) => start = Some(at),
            _ => {}
        }
    }
    if let Some(s) = start {
        pieces.push((s, prompt.len()));
    }
    pieces
}

/// Pieces between pattern matches, trimmed, empties dropped. The separator
/// is the first delimiter match that sits between two kept units, so that
/// joining re-splits to the same list; a lone unit falls back to a space.
fn pattern_pieces(prompt: &str, re: &Regex) -> (Vec<(usize, usize)>, String) {
    let mut pieces = Vec::new();
    let mut delimiters = Vec::new();
    let mut cursor = 0;
    for m in re.find_iter(prompt) {
        if m.start() == m.end() {
            continue;
        }
        push_trimmed(prompt, cursor, m.start(), &mut pieces);
        delimiters.push((pieces.len(), m.as_str()));
        cursor = m.end();
    }
    push_trimmed(prompt, cursor, prompt.len(), &mut pieces);

    let separator = delimiters
        .iter()
        .find(|(kept_before, _)| *kept_before >= 1 && *kept_before < pieces.len())
        .map(|(_, d)| d.to_string())
        .unwrap_or_else(|| " ".to_string());
    (pieces, separator)
}

fn push_trimmed(prompt: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let piece = &prompt[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        let s = start + lead;
        out.push((s, s + trimmed.len()));
    }
}

/// Rebuilds a prompt from the units in `subset`, in original order.
pub fn reconstruct(units: &PromptUnits, subset: &SubsetCombination) -> Result<String, TextError> {
    reconstruct_indices(units, subset.included())
}

/// Same as [`reconstruct`] over a raw index list. Indices may be given in any
/// order; output always follows unit order.
pub fn reconstruct_indices(units: &PromptUnits, indices: &[usize]) -> Result<String, TextError> {
    let n = units.len();
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&i| i >= n) {
        return Err(TextError::IndexOutOfRange { index: bad, n });
    }
    let parts: Vec<&str> = sorted.iter().map(|&i| units.units[i].as_str()).collect();
    Ok(parts.join(&units.separator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ws(prompt: &str) -> PromptUnits {
        split(prompt, &Splitter::Whitespace).unwrap()
    }

    #[test]
    fn splits_on_whitespace() {
        let u = ws("Why is the sky blue");
        assert_eq!(u.units(), ["Why", "is", "the", "sky", "blue"]);
        assert_eq!(u.len(), 5);
    }

    #[test]
    fn single_unit() {
        assert_eq!(ws("a").units(), ["a"]);
    }

    #[test]
    fn spans_index_into_source() {
        let u = ws("a  b\tc");
        assert_eq!(u.units(), ["a", "b", "c"]);
        assert_eq!(u.spans(), [(0, 1), (3, 4), (5, 6)]);
        for (unit, &(s, e)) in u.units().iter().zip(u.spans()) {
            assert_eq!(&u.source()[s..e], unit);
        }
    }

    #[test]
    fn unicode_whitespace_and_multibyte_units() {
        let u = ws("\u{3000}héllo\u{00a0}wörld ");
        assert_eq!(u.units(), ["héllo", "wörld"]);
        let (s, e) = u.spans()[1];
        assert_eq!(&u.source()[s..e], "wörld");
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(
            split("", &Splitter::Whitespace),
            Err(TextError::EmptyPrompt)
        ));
        assert!(matches!(
            split(" \t\n", &Splitter::Whitespace),
            Err(TextError::EmptyPrompt)
        ));
        let comma: Splitter = "pattern:,".parse().unwrap();
        assert!(matches!(split(" , ,", &comma), Err(TextError::EmptyPrompt)));
    }

    #[test]
    fn reconstructs_in_unit_order() {
        let u = ws("Why is the sky blue");
        assert_eq!(reconstruct_indices(&u, &[0, 1, 3, 4]).unwrap(), "Why is sky blue");
        assert_eq!(reconstruct_indices(&u, &[4, 0, 3, 1]).unwrap(), "Why is sky blue");
        assert_eq!(reconstruct_indices(&u, &[0, 1, 2, 3, 4]).unwrap(), u.canonical());
    }

    #[test]
    fn reconstruct_normalizes_separator() {
        let u = ws("a  b\tc");
        assert_eq!(reconstruct_indices(&u, &[0, 2]).unwrap(), "a c");
    }

    #[test]
    fn reconstruct_rejects_out_of_range() {
        let u = ws("a b");
        assert!(matches!(
            reconstruct_indices(&u, &[0, 2]),
            Err(TextError::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn pattern_splitter_keeps_phrases() {
        let s: Splitter = "pattern:[,;]\\s*".parse().unwrap();
        let u = split("first clause, second one;third", &s).unwrap();
        assert_eq!(u.units(), ["first clause", "second one", "third"]);
        assert_eq!(u.separator(), ", ");
        assert_eq!(reconstruct_indices(&u, &[0, 2]).unwrap(), "first clause, third");
        assert_eq!(s.id(), "pattern:[,;]\\s*");
    }

    #[test]
    fn splitter_spec_parsing() {
        assert!(matches!(
            "whitespace".parse::<Splitter>(),
            Ok(Splitter::Whitespace)
        ));
        assert!("pattern:(".parse::<Splitter>().is_err());
        assert!("pattern:".parse::<Splitter>().is_err());
        assert!("bpe".parse::<Splitter>().is_err());
    }

    fn round_trip(prompt: &str, splitter: &Splitter) {
        if let Ok(first) = split(prompt, splitter) {
            let all: Vec<usize> = (0..first.len()).collect();
            let rebuilt = reconstruct_indices(&first, &all).unwrap();
            let again = split(&rebuilt, splitter).unwrap();
            assert_eq!(first.units(), again.units());
        }
    }

    proptest! {
        #[test]
        fn whitespace_round_trip(prompt in "[a-zé \\t\\n\u{3000}]{0,40}") {
            round_trip(&prompt, &Splitter::Whitespace);
        }

        #[test]
        fn pattern_round_trip(prompt in "[a-c ,.]{0,40}") {
            round_trip(&prompt, &"pattern:[,.]".parse().unwrap());
        }

        #[test]
        fn spans_increasing_and_non_empty(prompt in "\\PC{0,40}") {
            if let Ok(u) = split(&prompt, &Splitter::Whitespace) {
                for w in u.spans().windows(2) {
                    prop_assert!(w[0].1 <= w[1].0);
                }
                for unit in u.units() {
                    prop_assert!(!unit.is_empty());
                }
            }
        }
    }
}
