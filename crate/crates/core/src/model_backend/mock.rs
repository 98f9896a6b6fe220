use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Backend, BackendError};
use crate::experiments::default_word_pool;

/// Deterministic offline backends.
///
/// * `echo`: the prompt itself.
/// * `drop-stoplist[(w1,w2,..)]`: the prompt with stoplist words removed.
///   Without a list the bundled injection word pool is used.
/// * `sorted-signature`: sorted unique whitespace units, space-joined.
/// * `constant[(text)]`: the same text for every prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockSpec {
    Echo,
    DropStoplist(Option<Vec<String>>),
    SortedSignature,
    Constant(String),
}

const DEFAULT_CONSTANT: &str = "constant response";

impl fmt::Display for MockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockSpec::Echo => f.write_str("echo"),
            MockSpec::DropStoplist(None) => f.write_str("drop-stoplist"),
            MockSpec::DropStoplist(Some(words)) => write!(f, "drop-stoplist({})", words.join(",")),
            MockSpec::SortedSignature => f.write_str("sorted-signature"),
            MockSpec::Constant(text) if text == DEFAULT_CONSTANT => f.write_str("constant"),
            MockSpec::Constant(text) => write!(f, "constant({text})"),
        }
    }
}

impl FromStr for MockSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => match rest.strip_suffix(')') {
                Some(arg) => (name, Some(arg)),
                None => return Err(BackendError::Config(format!("unclosed argument in mock:{s}"))),
            },
            None => (s, None),
        };
        match (name, arg) {
            ("echo", None) => Ok(MockSpec::Echo),
            ("sorted-signature", None) => Ok(MockSpec::SortedSignature),
            ("constant", None) => Ok(MockSpec::Constant(DEFAULT_CONSTANT.to_string())),
            ("constant", Some(text)) => Ok(MockSpec::Constant(text.to_string())),
            ("drop-stoplist", None) => Ok(MockSpec::DropStoplist(None)),
            ("drop-stoplist", Some(list)) => {
                let words: BTreeSet<String> = list
                    .split(',')
                    .map(str::trim)
                    .filter(|w| !w.is_empty())
                    .map(str::to_string)
                    .collect();
                if words.is_empty() {
                    return Err(BackendError::Config(
                        "drop-stoplist needs at least one word".into(),
                    ));
                }
                Ok(MockSpec::DropStoplist(Some(words.into_iter().collect())))
            }
            _ => Err(BackendError::Config(format!(
                "unknown mock {s:?} (expected echo, drop-stoplist, sorted-signature or constant)"
            ))),
        }
    }
}

#[derive(Debug)]
pub struct MockBackend {
    spec: MockSpec,
    stoplist: HashSet<String>,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        let stoplist = match &spec {
            MockSpec::DropStoplist(Some(words)) => words.iter().cloned().collect(),
            MockSpec::DropStoplist(None) => default_word_pool().into_iter().collect(),
            _ => HashSet::new(),
        };
        Self { spec, stoplist }
    }
}

impl Backend for MockBackend {
    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(match &self.spec {
            MockSpec::Echo => prompt.to_string(),
            MockSpec::DropStoplist(_) => prompt
                .split_whitespace()
                .filter(|w| !self.stoplist.contains(*w))
                .collect::<Vec<_>>()
                .join(" "),
            MockSpec::SortedSignature => prompt
                .split_whitespace()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
                .join(" "),
            MockSpec::Constant(text) => text.clone(),
        })
    }
}

/// Wraps a closure as a backend; handy for scripted replies in tests.
pub struct FnBackend<F>(F);

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        FnBackend(f)
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        (self.0)(prompt)
    }
}

/// Counts and records every prompt that reaches the inner backend.
pub struct RecordingBackend<B> {
    inner: B,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("recorder lock poisoned").clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("recorder lock poisoned")
            .push(prompt.to_string());
        self.inner.generate(prompt)
    }
}
