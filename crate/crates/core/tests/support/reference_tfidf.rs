//! Reference TF-IDF built straight from the smoothed-idf formula, kept
//! separate from the library path: regex tokenization, dense term maps, and
//! cosine over unnormalized vectors.

use std::collections::HashMap;

use regex::Regex;

pub struct Reference {
    pub idf: HashMap<String, f64>,
}

pub fn tokens(doc: &str) -> Vec<String> {
    let re = Regex::new(r"(?u)\b\w\w+\b").unwrap();
    re.find_iter(&doc.to_lowercase())
        .map(|m| m.as_str().to_string())
        .collect()
}

impl Reference {
    pub fn fit(corpus: &[&str]) -> Self {
        let d = corpus.len() as f64;
        let mut df: HashMap<String, f64> = HashMap::new();
        for doc in corpus {
            let mut uniq = tokens(doc);
            uniq.sort();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_insert(0.0) += 1.0;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, n)| (t, ((1.0 + d) / (1.0 + n)).ln() + 1.0))
            .collect();
        Reference { idf }
    }

    /// Raw tf * idf weights, not normalized.
    pub fn weights(&self, doc: &str) -> HashMap<String, f64> {
        let mut w = HashMap::new();
        for t in tokens(doc) {
            if let Some(idf) = self.idf.get(&t) {
                *w.entry(t).or_insert(0.0) += idf;
            }
        }
        w
    }

    /// Unit-normalized weights.
    pub fn vector(&self, doc: &str) -> HashMap<String, f64> {
        let w = self.weights(doc);
        let norm: f64 = w.values().map(|x| x * x).sum::<f64>().sqrt();
        w.into_iter()
            .map(|(t, x)| (t, if norm > 0.0 { x / norm } else { 0.0 }))
            .collect()
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (wa, wb) = (self.weights(a), self.weights(b));
        let dot: f64 = wa
            .iter()
            .map(|(t, x)| x * wb.get(t).copied().unwrap_or(0.0))
            .sum();
        let na: f64 = wa.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = wb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}
