use std::collections::{BTreeMap, BTreeSet};

use super::{Corpus, EnvError};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Okapi BM25 over `title + text` of each document.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    /// term → (document index, term frequency), ascending by document.
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    doc_ids: Vec<String>,
    avg_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub id: String,
    pub score: f64,
}

pub fn build_index(corpus: &Corpus) -> Result<RetrievalIndex, EnvError> {
    if corpus.is_empty() {
        return Err(EnvError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
    let mut doc_len = Vec::with_capacity(corpus.len());
    for (i, d) in corpus.docs().iter().enumerate() {
        let terms = tokenize(&format!("{}\n{}", d.title, d.text));
        doc_len.push(terms.len());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in terms {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            postings.entry(t).or_default().push((i, n));
        }
    }
    let avg_len = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
    Ok(RetrievalIndex {
        postings,
        doc_len,
        doc_ids: corpus.docs().iter().map(|d| d.id.clone()).collect(),
        avg_len,
    })
}

impl RetrievalIndex {
    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, index: usize) -> usize {
        self.doc_len[index]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[(usize, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

/// Top `k` documents sharing at least one term with `query`, by descending
/// score then ascending document id. Repeated query terms count once.
pub fn retrieve(index: &RetrievalIndex, query: &str, k: usize) -> Vec<Hit> {
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for t in &terms {
        let idf = index.idf(t);
        for &(doc, tf) in index.postings(t) {
            let tf = tf as f64;
            let norm = 1.0 - BM25_B + BM25_B * index.doc_len[doc] as f64 / index.avg_len;
            *scores.entry(doc).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
        }
    }
    let mut hits: Vec<Hit> = scores
        .into_iter()
        .map(|(index_, score)| Hit {
            index: index_,
            id: index.doc_ids[index_].clone(),
            score,
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    hits.truncate(k);
    hits
}
