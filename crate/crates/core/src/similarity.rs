//! TF-IDF vectors and cosine similarity, used as the value function: how much
//! a subset's response resembles the full-prompt response.
//!
//! Terms are lowercased runs of two or more alphanumeric/underscore chars.
//! Idf is smoothed: `ln((1 + D) / (1 + df)) + 1`. Vectors are L2-normalized.

use std::collections::BTreeMap;

/// Lowercased terms of `doc`, in order of appearance.
pub fn terms(doc: &str) -> Vec<String> {
    let lower = doc.to_lowercase();
    lower
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| t.chars().nth(1).is_some())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    doc_count: usize,
}

impl TfidfModel {
    /// Fits vocabulary and idf weights. Columns follow sorted term order, so
    /// the model does not depend on document order.
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            let mut seen = terms(doc.as_ref());
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let d = corpus.len() as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (col, (term, count)) in df.into_iter().enumerate() {
            idf.push(((1.0 + d) / (1.0 + count as f64)).ln() + 1.0);
            vocabulary.insert(term, col);
        }
        Self {
            vocabulary,
            idf,
            doc_count: corpus.len(),
        }
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&c| self.idf[c])
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn transform(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms(doc) {
            if let Some(&col) = self.vocabulary.get(&t) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(col, tf)| (col, tf * self.idf[col]))
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in entries.iter_mut() {
                *w /= norm;
            }
        }
        SparseVector { entries }
    }
}

/// Column-sorted sparse vector; empty or unit length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, col: usize) -> f64 {
        self.entries
            .binary_search_by_key(&col, |&(c, _)| c)
            .map_or(0.0, |i| self.entries[i].1)
    }
}

/// Dot product of two normalized vectors; 0 when either is empty.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    let (a, b) = (&a.entries, &b.entries);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// Fits on the baseline plus every subset response, then scores each subset
/// response against the baseline.
pub fn value_of_subsets<S: AsRef<str>>(baseline_text: &str, subset_texts: &[S]) -> Vec<f64> {
    let mut corpus: Vec<&str> = Vec::with_capacity(subset_texts.len() + 1);
    corpus.push(baseline_text);
    corpus.extend(subset_texts.iter().map(AsRef::as_ref));
    let model = TfidfModel::fit(&corpus);
    let base = model.transform(baseline_text);
    subset_texts
        .iter()
        .map(|t| cosine(&model.transform(t.as_ref()), &base))
        .collect()
}
