//! TF-IDF document retrieval over the shipped manuals and datasheets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("document store is empty")]
    EmptyStore,
    #[error("reading corpus: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub doc_id: String,
    /// Byte range of the best-matching paragraph within the body.
    pub span: (usize, usize),
    pub score: f64,
}

const SHIPPED: [(&str, &str); 4] = [
    ("amplifier-datasheet", include_str!("../../corpus/amplifier-datasheet.txt")),
    ("failure-playbook", include_str!("../../corpus/failure-playbook.txt")),
    ("fiber-datasheet", include_str!("../../corpus/fiber-datasheet.txt")),
    ("operation-manual", include_str!("../../corpus/operation-manual.txt")),
];

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: Vec<Document>,
    idf: BTreeMap<String, f64>,
}

impl DocumentStore {
    pub fn new(mut docs: Vec<Document>) -> Self {
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let n = docs.len() as f64;
        let mut df: BTreeMap<String, f64> = BTreeMap::new();
        for d in &docs {
            let toks = tokenize(&d.body);
            for t in counts(&toks).keys() {
                *df.entry(t.to_string()).or_insert(0.0) += 1.0;
            }
        }
        // Smoothed inverse document frequency.
        let idf = df
            .into_iter()
            .map(|(t, f)| (t, ((1.0 + n) / (1.0 + f)).ln() + 1.0))
            .collect();
        Self { docs, idf }
    }

    /// The four documents compiled into the binary.
    pub fn shipped() -> Self {
        Self::new(SHIPPED.iter().map(|(id, text)| document(id, text)).collect())
    }

    /// Every `*.txt` file in `dir`; the id is the file stem.
    pub fn load_dir(dir: &Path) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                docs.push(document(&id, &std::fs::read_to_string(&path)?));
            }
        }
        Ok(Self::new(docs))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let toks = tokenize(text);
        counts(&toks)
            .into_iter()
            .filter_map(|(t, c)| self.idf.get(t).map(|idf| (t.to_string(), c * idf)))
            .collect()
    }

    /// Top-`k` documents by cosine similarity; zero-score documents are omitted.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedChunk>, RetrievalError> {
        if self.docs.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let q = self.vector(query);
        let mut hits: Vec<RetrievedChunk> = self
            .docs
            .iter()
            .filter_map(|d| {
                let score = cosine(&q, &self.vector(&d.body));
                (score > 0.0).then(|| RetrievedChunk {
                    doc_id: d.id.clone(),
                    span: self.best_paragraph(&q, &d.body),
                    score,
                })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        hits.truncate(k);
        Ok(hits)
    }

    fn best_paragraph(&self, q: &BTreeMap<String, f64>, body: &str) -> (usize, usize) {
        let mut best = (0, body.len());
        let mut best_score = f64::NEG_INFINITY;
        let mut start = 0;
        for para in body.split("\n\n") {
            let end = start + para.len();
            let score = cosine(q, &self.vector(para));
            if score > best_score {
                best_score = score;
                best = (start, end);
            }
            start = end + 2;
        }
        best
    }

    /// The text a chunk points at.
    pub fn excerpt(&self, chunk: &RetrievedChunk) -> &str {
        self.get(&chunk.doc_id)
            .and_then(|d| d.body.get(chunk.span.0..chunk.span.1))
            .unwrap_or("")
            .trim()
    }
}

fn document(id: &str, text: &str) -> Document {
    Document {
        id: id.to_string(),
        title: text.lines().next().unwrap_or("").trim().to_string(),
        body: text.to_string(),
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    if dot == 0.0 {
        return 0.0;
    }
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
