//! Okapi BM25 over an in-memory inverted index, with an on-disk layout.
//!
//! Scoring uses the non-negative IDF `ln(1 + (N - df + 0.5) / (df + 0.5))`.
//! Each document is indexed as `title + " " + text`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, QueryKind, RetrievalError, RetrievedDoc, RetrievedSet, Retriever};
use crate::corpus::{checksum_documents, Corpus};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const INDEX_FORMAT: &str = "blendfilter-bm25";
const MANIFEST_FILE: &str = "manifest.json";
const POSTINGS_FILE: &str = "postings.json";
const DOCS_FILE: &str = "docs.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::InvalidParams(format!(
                "k1 must be > 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::InvalidParams(format!(
                "b must lie in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: String,
    pub version: u32,
    pub params: Bm25Params,
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub corpus_checksum: String,
}

#[derive(Serialize, Deserialize)]
struct PostingsFile {
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    corpus: Corpus,
}

fn io_err(path: &Path, source: std::io::Error) -> RetrievalError {
    RetrievalError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self, RetrievalError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (id, doc) in corpus.documents().iter().enumerate() {
            let tokens = tokenize(&format!("{} {}", doc.title, doc.text));
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                // ids are visited in ascending order, so lists stay sorted
                postings.entry(term).or_default().push(Posting {
                    doc: id as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            params,
            postings,
            doc_lengths,
            avg_doc_length,
            corpus: corpus.clone(),
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc: usize) -> Option<u32> {
        self.doc_lengths.get(doc).copied()
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_freq(&self, term: &str, doc: usize) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&(doc as u32), |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let dl = self.doc_lengths[doc] as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_doc_length))
    }

    /// BM25 score of one document against a list of query terms. Repeated
    /// query terms count once.
    pub fn score(&self, query_terms: &[String], doc: usize) -> Result<f64, RetrievalError> {
        if doc >= self.doc_count() {
            return Err(RetrievalError::UnknownDoc(doc));
        }
        let mut total = 0.0;
        for term in unique_terms(query_terms) {
            let tf = self.term_freq(term, doc);
            if tf > 0 {
                total += self.term_weight(self.idf(term), tf, doc);
            }
        }
        Ok(total)
    }

    /// Top-`k` internal ids with positive score, ties by ascending id.
    pub fn top_k(&self, query_terms: &[String], k: usize) -> Vec<(usize, f64)> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in unique_terms(query_terms) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                *scores.entry(p.doc as usize).or_insert(0.0) += self.term_weight(idf, p.tf, p.doc as usize);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_FORMAT_VERSION,
            params: self.params,
            doc_count: self.doc_count(),
            avg_doc_length: self.avg_doc_length,
            corpus_checksum: self.corpus.checksum(),
        }
    }

    /// Writes manifest, postings and doc table into `dir`. Output bytes
    /// depend only on the corpus and parameters.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest + "\n").map_err(|e| io_err(&path, e))?;

        let file = PostingsFile {
            doc_lengths: self.doc_lengths.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, list)| (t.clone(), list.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        let path = dir.join(POSTINGS_FILE);
        fs::write(&path, serde_json::to_string(&file).expect("postings serialize")).map_err(|e| io_err(&path, e))?;

        let path = dir.join(DOCS_FILE);
        fs::write(&path, self.corpus.to_jsonl()).map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    /// Loads an index directory. When `corpus` is given its checksum must
    /// match the manifest.
    pub fn load(dir: impl AsRef<Path>, corpus: Option<&Corpus>) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: IndexManifest =
            serde_json::from_str(&raw).map_err(|e| RetrievalError::IndexFormat(format!("manifest: {e}")))?;
        if manifest.format != INDEX_FORMAT || manifest.version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::IndexFormat(format!(
                "unsupported index {} v{}",
                manifest.format, manifest.version
            )));
        }
        manifest.params.validate()?;

        if let Some(c) = corpus {
            let found = c.checksum();
            if found != manifest.corpus_checksum {
                return Err(RetrievalError::StaleIndex {
                    expected: manifest.corpus_checksum,
                    found,
                });
            }
        }

        let path = dir.join(DOCS_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let table =
            crate::corpus::parse_corpus(&raw).map_err(|e| RetrievalError::IndexFormat(format!("doc table: {e}")))?;
        let found = checksum_documents(table.documents());
        if found != manifest.corpus_checksum {
            return Err(RetrievalError::StaleIndex {
                expected: manifest.corpus_checksum,
                found,
            });
        }

        let path = dir.join(POSTINGS_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let file: PostingsFile =
            serde_json::from_str(&raw).map_err(|e| RetrievalError::IndexFormat(format!("postings: {e}")))?;
        let doc_count = file.doc_lengths.len();
        if doc_count != manifest.doc_count || doc_count != table.len() {
            return Err(RetrievalError::IndexFormat("doc_count mismatch".into()));
        }
        let mut postings = HashMap::with_capacity(file.postings.len());
        for (term, list) in file.postings {
            let sorted = list.windows(2).all(|w| w[0].0 < w[1].0);
            if !sorted || list.iter().any(|&(d, _)| d as usize >= doc_count) {
                return Err(RetrievalError::IndexFormat(format!("bad posting list for {term:?}")));
            }
            postings.insert(term, list.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect());
        }
        Ok(Self {
            params: manifest.params,
            postings,
            avg_doc_length: mean_length(&file.doc_lengths),
            doc_lengths: file.doc_lengths,
            corpus: table,
        })
    }

    fn retrieved(&self, ranked: Vec<(usize, f64)>) -> Vec<RetrievedDoc> {
        ranked
            .into_iter()
            .enumerate()
            .map(|(rank, (id, score))| RetrievedDoc {
                document: self.corpus.documents()[id].clone(),
                score,
                rank,
            })
            .collect()
    }
}

impl Retriever for InvertedIndex {
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let terms = tokenize(query_text);
        if terms.is_empty() {
            let mut set = RetrievedSet::new(QueryKind::Baseline, query_text, Vec::new());
            set.empty_query = true;
            return Ok(set);
        }
        let docs = self.retrieved(self.top_k(&terms, k));
        Ok(RetrievedSet::new(QueryKind::Baseline, query_text, docs))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "bm25",
            "k1": self.params.k1,
            "b": self.params.b,
            "corpus_checksum": self.corpus.checksum(),
        })
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

fn unique_terms(terms: &[String]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    terms.iter().map(String::as_str).filter(move |t| seen.insert(*t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(docs: &[(&str, &str, &str)]) -> Corpus {
        Corpus::from_documents(docs.iter().map(|(i, t, x)| Document::new(*i, *t, *x)).collect()).unwrap()
    }

    fn terms(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn doc_count_and_avg_length() {
        let idx = InvertedIndex::build(
            &corpus(&[("1", "a", "b c"), ("2", "d", "e f g h")]),
            Bm25Params::default(),
        )
        .unwrap();
        assert_eq!(idx.doc_count(), 2);
        assert_eq!(idx.avg_doc_length(), (3.0 + 5.0) / 2.0);
    }

    #[test]
    fn absent_term_scores_zero() {
        let idx = InvertedIndex::build(
            &corpus(&[("1", "x1", "cat sat"), ("2", "x2", "dog sat")]),
            Bm25Params::default(),
        )
        .unwrap();
        for d in 0..2 {
            assert_eq!(idx.score(&terms("zebra"), d).unwrap(), 0.0);
        }
        assert!(idx.retrieve("zebra", 5).unwrap().is_empty());
    }

    #[test]
    fn cat_sat_exact_value() {
        // "x1 cat sat" / "x2 dog sat": N=2, df(cat)=1, dl=avgdl=3, tf=1, so
        // the tf factor is 2.2 / 2.2 = 1 and the score is ln(2).
        let idx = InvertedIndex::build(
            &corpus(&[("1", "x1", "cat sat"), ("2", "x2", "dog sat")]),
            Bm25Params::default(),
        )
        .unwrap();
        let s1 = idx.score(&terms("cat"), 0).unwrap();
        assert!((s1 - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(idx.score(&terms("cat"), 1).unwrap(), 0.0);
        assert!(matches!(
            idx.score(&terms("cat"), 2),
            Err(RetrievalError::UnknownDoc(2))
        ));
    }

    #[test]
    fn duplicates_score_identically_and_tie_by_id() {
        let idx = InvertedIndex::build(
            &corpus(&[("1", "t", "red fox"), ("2", "t", "red fox"), ("3", "u", "blue")]),
            Bm25Params::default(),
        )
        .unwrap();
        let q = terms("red");
        assert_eq!(idx.score(&q, 0).unwrap(), idx.score(&q, 1).unwrap());
        for _ in 0..3 {
            let set = idx.retrieve("red", 5).unwrap();
            assert_eq!(
                set.docs.iter().map(|d| d.document.doc_id.as_str()).collect::<Vec<_>>(),
                ["1", "2"]
            );
        }
    }

    #[test]
    fn k_caps_and_matches_cap() {
        let idx = InvertedIndex::build(
            &corpus(&[
                ("1", "a", "apple one"),
                ("2", "b", "apple two"),
                ("3", "c", "apple three"),
            ]),
            Bm25Params::default(),
        )
        .unwrap();
        let set = idx.retrieve("apple", 5).unwrap();
        assert_eq!(set.len(), 3);
        set.check_invariants(5).unwrap();
        assert_eq!(idx.retrieve("apple", 2).unwrap().len(), 2);
        assert!(matches!(idx.retrieve("apple", 0), Err(RetrievalError::InvalidK)));
    }

    #[test]
    fn empty_query_flagged_not_error() {
        let idx = InvertedIndex::build(&corpus(&[("1", "a", "b")]), Bm25Params::default()).unwrap();
        let set = idx.retrieve("?!", 5).unwrap();
        assert!(set.is_empty());
        assert!(set.empty_query);
    }

    #[test]
    fn params_validated() {
        let c = corpus(&[("1", "a", "b")]);
        assert!(InvertedIndex::build(&c, Bm25Params { k1: 0.0, b: 0.5 }).is_err());
        assert!(InvertedIndex::build(&c, Bm25Params { k1: 1.0, b: 1.5 }).is_err());
    }

    #[test]
    fn persist_is_deterministic_and_checked() {
        let c = corpus(&[
            ("1", "Alpha", "the quick fox"),
            ("2", "Beta", "lazy dog jumps"),
            ("3", "Gamma", "fox and dog"),
        ]);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        InvertedIndex::build(&c, Bm25Params::default())
            .unwrap()
            .save(a.path())
            .unwrap();
        InvertedIndex::build(&c, Bm25Params::default())
            .unwrap()
            .save(b.path())
            .unwrap();
        for f in [MANIFEST_FILE, POSTINGS_FILE, DOCS_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }

        let loaded = InvertedIndex::load(a.path(), Some(&c)).unwrap();
        let fresh = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        assert_eq!(
            loaded.retrieve("fox dog", 3).unwrap(),
            fresh.retrieve("fox dog", 3).unwrap()
        );
        assert!(InvertedIndex::load(a.path(), None).is_ok());

        let other = corpus(&[("1", "Alpha", "changed text")]);
        assert!(matches!(
            InvertedIndex::load(a.path(), Some(&other)),
            Err(RetrievalError::StaleIndex { .. })
        ));
    }
}
