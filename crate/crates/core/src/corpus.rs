//! Document ingestion, preprocessing and document-term representations.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::hypspace::TermSimilarityMatrix;

const ENGLISH_STOPWORDS: &str = include_str!("stopwords/english.txt");
const SMART_STOPWORDS: &str = include_str!("stopwords/smart.txt");

const CORPUS_MAGIC: &str = "hyptopic-corpus";
const CORPUS_VERSION: u32 = 1;

/// Sorted, duplicate-free list of terms with a reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from arbitrary terms; they are deduplicated and
    /// sorted lexicographically.
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        if terms.iter().any(|t| t.is_empty()) {
            return Err(Error::Contract("vocabulary terms must be non-empty".into()));
        }
        terms.sort();
        terms.dedup();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Hex SHA-256 over the ordered term list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Vocabulary indices in document order.
    pub tokens: Vec<u32>,
}

impl Document {
    /// Documents left without tokens after filtering stay in the corpus
    /// (stable row indices) but never reach a factorization.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    magic: String,
    version: u32,
    terms: Vec<String>,
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>, vocab: Vocabulary) -> Result<Self> {
        let m = vocab.len();
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Contract(format!("duplicate document id {:?}", d.id)));
            }
            if let Some(&t) = d.tokens.iter().find(|&&t| t as usize >= m) {
                return Err(Error::Contract(format!(
                    "document {:?} references term {t} outside a vocabulary of {m}",
                    d.id
                )));
            }
        }
        Ok(Corpus { docs, vocab })
    }

    /// Builds a corpus from already-tokenized documents without any
    /// filtering. The vocabulary is every distinct token.
    pub fn from_tokens<I, S>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: AsRef<str>,
    {
        let docs: Vec<(String, Vec<String>)> = docs
            .into_iter()
            .map(|(id, toks)| {
                (
                    id.as_ref().to_string(),
                    toks.iter().map(|t| t.as_ref().to_string()).collect(),
                )
            })
            .collect();
        let vocab = Vocabulary::new(docs.iter().flat_map(|(_, t)| t.iter().cloned()))?;
        let docs = docs
            .into_iter()
            .map(|(id, toks)| Document {
                id,
                tokens: toks.iter().map(|t| vocab.get(t).unwrap() as u32).collect(),
            })
            .collect();
        Corpus::new(docs, vocab)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.id.clone()).collect()
    }

    pub fn empty_documents(&self) -> usize {
        self.docs.iter().filter(|d| d.is_empty()).count()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }

    pub fn mean_doc_len(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_tokens() as f64 / self.docs.len() as f64
        }
    }

    /// Hex SHA-256 of the serialized corpus.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let file = CorpusFile {
            magic: CORPUS_MAGIC.to_string(),
            version: CORPUS_VERSION,
            terms: self.vocab.terms.clone(),
            docs: self.docs.clone(),
        };
        bincode::serialize(&file).map_err(|e| Error::Codec(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file: CorpusFile = bincode::deserialize(bytes)
            .map_err(|e| Error::Codec(format!("corpus artifact: {e}")))?;
        if file.magic != CORPUS_MAGIC || file.version != CORPUS_VERSION {
            return Err(Error::Codec("not a corpus artifact".into()));
        }
        let vocab = Vocabulary::new(file.terms.clone())?;
        if vocab.terms != file.terms {
            return Err(Error::Codec(
                "corpus artifact vocabulary is not sorted".into(),
            ));
        }
        Corpus::new(file.docs, vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Corpus::from_bytes(&bytes)
    }

    /// Writes the vocabulary one term per line.
    pub fn write_vocab(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in self.vocab.terms() {
            writeln!(out, "{t}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Re-renders each document as space-separated tokens.
    pub fn document_texts(&self) -> Vec<RawDocument> {
        self.docs
            .iter()
            .map(|d| RawDocument {
                id: d.id.clone(),
                text: d
                    .tokens
                    .iter()
                    .map(|&t| self.vocab.term(t as usize))
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        RawDocument {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Reads a corpus file: JSONL (`{"id": .., "text": ..}` per line) when the
/// extension is `.jsonl`/`.json` or the first non-blank line opens an
/// object, otherwise plain text with one document per line.
pub fn read_raw_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let name = path.display().to_string();
    let by_ext = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json")
    );
    let sniffed = {
        let buf = reader.fill_buf().map_err(|e| Error::io(path, e))?;
        let head = String::from_utf8_lossy(&buf[..buf.len().min(4096)]).into_owned();
        head.lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.trim_start().starts_with('{'))
            .unwrap_or(false)
    };
    if by_ext || sniffed {
        parse_jsonl(reader, &name)
    } else {
        parse_plain_text(reader, &name)
    }
}

pub fn parse_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RawDocument>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        out.push(doc);
    }
    Ok(out)
}

pub fn parse_plain_text<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RawDocument>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(RawDocument::new(format!("doc-{lineno}"), line));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Use the bundled general-English and SMART stopword lists.
    pub bundled_stopwords: bool,
    /// Extra stopword files: UTF-8, one token per line, `#` comments.
    pub stopword_lists: Vec<PathBuf>,
    pub min_doc_freq: usize,
    pub min_token_length: usize,
    /// Drop terms whose total count divided by document frequency is below
    /// `ratio_threshold`. Since that ratio is never below 1 this is inert
    /// for thresholds <= 1; kept for parity with older pipelines.
    pub ratio_filter_enabled: bool,
    pub ratio_threshold: f64,
    /// Light suffix stripping (Snowball English) after stopword removal.
    pub stem: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bundled_stopwords: true,
            stopword_lists: Vec::new(),
            min_doc_freq: 5,
            min_token_length: 2,
            ratio_filter_enabled: false,
            ratio_threshold: 0.8,
            stem: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_doc_freq < 1 {
            return Err(Error::Config("min_doc_freq must be at least 1".into()));
        }
        if !(self.ratio_threshold > 0.0) {
            return Err(Error::Config("ratio_threshold must be positive".into()));
        }
        Ok(())
    }
}

fn parse_stopwords(text: &str, into: &mut HashSet<String>) {
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            into.insert(line.to_lowercase());
        }
    }
}

pub fn load_stopwords(config: &PreprocessConfig) -> Result<HashSet<String>> {
    let mut words = HashSet::new();
    if config.bundled_stopwords {
        parse_stopwords(ENGLISH_STOPWORDS, &mut words);
        parse_stopwords(SMART_STOPWORDS, &mut words);
    }
    for path in &config.stopword_lists {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read stopword list {}: {e}", path.display()))
        })?;
        parse_stopwords(&text, &mut words);
    }
    Ok(words)
}

/// Lowercased ASCII word tokens. Any character that is not alphanumeric
/// separates tokens; pieces containing non-ASCII characters and purely
/// numeric pieces are discarded.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .filter(|piece| piece.is_ascii())
        .filter(|piece| !piece.bytes().all(|b| b.is_ascii_digit()))
        .map(|piece| piece.to_ascii_lowercase())
        .collect()
}

/// Tokenizes, filters and indexes raw documents.
pub fn preprocess(raw: &[RawDocument], config: &PreprocessConfig) -> Result<Corpus> {
    config.validate()?;
    if raw.is_empty() {
        return Err(Error::Corpus("no documents".into()));
    }
    let stopwords = load_stopwords(config)?;
    let stem = config.stem;
    let min_len = config.min_token_length;

    let tokenized: Vec<Vec<String>> = raw
        .par_iter()
        .map(|doc| {
            let stemmer =
                stem.then(|| rust_stemmers::Stemmer::create(rust_stemmers::Algorithm::English));
            tokenize(&doc.text)
                .into_iter()
                .filter(|t| t.len() >= min_len && !stopwords.contains(t))
                .map(|t| match &stemmer {
                    Some(s) => s.stem(&t).into_owned(),
                    None => t,
                })
                .filter(|t| t.len() >= min_len)
                .collect()
        })
        .collect();

    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    let mut total: HashMap<&str, usize> = HashMap::new();
    for toks in &tokenized {
        let mut seen = HashSet::new();
        for t in toks {
            *total.entry(t).or_default() += 1;
            if seen.insert(t.as_str()) {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
    }
    let kept = doc_freq.iter().filter(|(term, &df)| {
        df >= config.min_doc_freq
            && (!config.ratio_filter_enabled
                || total[*term] as f64 / df as f64 >= config.ratio_threshold)
    });
    let vocab = Vocabulary::new(kept.map(|(t, _)| t.to_string()))?;

    let docs: Vec<Document> = raw
        .iter()
        .zip(&tokenized)
        .map(|(doc, toks)| Document {
            id: doc.id.clone(),
            tokens: toks
                .iter()
                .filter_map(|t| vocab.get(t).map(|i| i as u32))
                .collect(),
        })
        .collect();

    let empty = docs.iter().filter(|d| d.is_empty()).count();
    if empty == docs.len() {
        return Err(Error::Corpus(
            "every document is empty after filtering".into(),
        ));
    }
    if empty > 0 {
        log::info!(
            "{empty} of {} documents are empty after filtering",
            docs.len()
        );
    }
    Corpus::new(docs, vocab)
}

/// Raw term counts, one row per document in ingestion order.
#[derive(Debug, Clone, PartialEq)]
pub struct TermFrequencyMatrix {
    counts: CsMat<u32>,
}

impl TermFrequencyMatrix {
    pub fn from_counts(counts: CsMat<u32>) -> Self {
        TermFrequencyMatrix {
            counts: if counts.is_csr() {
                counts
            } else {
                counts.to_csr()
            },
        }
    }

    pub fn counts(&self) -> &CsMat<u32> {
        &self.counts
    }

    pub fn n_docs(&self) -> usize {
        self.counts.rows()
    }

    pub fn n_terms(&self) -> usize {
        self.counts.cols()
    }

    pub fn get(&self, doc: usize, term: usize) -> u32 {
        self.counts.get(doc, term).copied().unwrap_or(0)
    }

    pub fn to_f64(&self) -> CsMat<f64> {
        self.counts.map(|&c| c as f64)
    }

    /// Total occurrences of each term across the corpus.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_terms()];
        for row in self.counts.outer_iterator() {
            for (j, &c) in row.iter() {
                sums[j] += c as f64;
            }
        }
        sums
    }
}

pub fn build_tf(corpus: &Corpus) -> TermFrequencyMatrix {
    let m = corpus.vocab().len();
    let mut indptr = Vec::with_capacity(corpus.len() + 1);
    let mut indices = Vec::new();
    let mut data = Vec::new();
    indptr.push(0);
    for doc in corpus.docs() {
        let mut row: Vec<u32> = doc.tokens.clone();
        row.sort_unstable();
        let mut i = 0;
        while i < row.len() {
            let mut j = i;
            while j < row.len() && row[j] == row[i] {
                j += 1;
            }
            indices.push(row[i] as usize);
            data.push((j - i) as u32);
            i = j;
        }
        indptr.push(indices.len());
    }
    TermFrequencyMatrix {
        counts: CsMat::new((corpus.len(), m), indptr, indices, data),
    }
}

const IDF_CHUNK: usize = 256;

/// Similarity-smoothed inverse document frequency:
/// `idf(i) = ln(|D| / sum_d mu(i, d))`, where `mu(i, d)` averages the
/// nonzero similarities between term `i` and the distinct terms of `d`.
/// Terms with a zero denominator get 0.
pub fn compute_idf(tf: &TermFrequencyMatrix, ms: &TermSimilarityMatrix) -> Result<Vec<f64>> {
    let m = tf.n_terms();
    if ms.dim() != m {
        return Err(Error::Shape(format!(
            "similarity matrix is {0}x{0} but the vocabulary has {m} terms",
            ms.dim()
        )));
    }
    let n_docs = tf.n_docs();
    let by_column = ms.entries().to_csc();

    // Fixed-size chunks summed in order keep the result independent of the
    // thread count.
    let rows: Vec<usize> = (0..n_docs).collect();
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(IDF_CHUNK)
        .map(|chunk| {
            let mut total = vec![0.0; m];
            let mut sum = vec![0.0; m];
            let mut count = vec![0usize; m];
            let mut touched = Vec::new();
            for &d in chunk {
                let row = tf.counts.outer_view(d).unwrap();
                for (w, _) in row.iter() {
                    let col = by_column.outer_view(w).unwrap();
                    for (i, &s) in col.iter() {
                        if s != 0.0 {
                            if count[i] == 0 {
                                touched.push(i);
                            }
                            sum[i] += s;
                            count[i] += 1;
                        }
                    }
                }
                touched.sort_unstable();
                for &i in &touched {
                    total[i] += sum[i] / count[i] as f64;
                    sum[i] = 0.0;
                    count[i] = 0;
                }
                touched.clear();
            }
            total
        })
        .collect();

    let mut denom = vec![0.0; m];
    for part in &partials {
        for (acc, v) in denom.iter_mut().zip(part) {
            *acc += v;
        }
    }
    let mut zero = 0usize;
    let idf = denom
        .iter()
        .map(|&s| {
            if s > 0.0 {
                (n_docs as f64 / s).ln().max(0.0)
            } else {
                zero += 1;
                0.0
            }
        })
        .collect();
    if zero > 0 {
        log::debug!("{zero} terms have no similarity mass in any document; idf set to 0");
    }
    Ok(idf)
}

/// Nonnegative document-term weights with row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTermRepresentation {
    values: CsMat<f64>,
    doc_ids: Vec<String>,
}

impl DocTermRepresentation {
    pub fn new(values: CsMat<f64>, doc_ids: Vec<String>) -> Result<Self> {
        if values.rows() != doc_ids.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} document ids",
                values.rows(),
                doc_ids.len()
            )));
        }
        if let Some(v) = values.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Contract(format!(
                "document-term entries must be nonnegative, found {v}"
            )));
        }
        let values = if values.is_csr() {
            values
        } else {
            values.to_csr()
        };
        Ok(DocTermRepresentation { values, doc_ids })
    }

    pub fn values(&self) -> &CsMat<f64> {
        &self.values
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn n_docs(&self) -> usize {
        self.values.rows()
    }

    pub fn n_terms(&self) -> usize {
        self.values.cols()
    }

    pub fn row_is_zero(&self, i: usize) -> bool {
        self.values
            .outer_view(i)
            .map(|r| r.iter().all(|(_, &v)| v == 0.0))
            .unwrap_or(true)
    }

    /// Indices of rows with at least one nonzero entry.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.n_docs())
            .filter(|&i| !self.row_is_zero(i))
            .collect()
    }

    /// Keeps the given rows (in the given order), multiplying column `j` by
    /// `column_scale[j]` when a scale is supplied. Explicit zeros are dropped.
    pub fn select_rows(&self, rows: &[usize], column_scale: Option<&[f64]>) -> Result<Self> {
        let m = self.n_terms();
        if let Some(s) = column_scale {
            if s.len() != m {
                return Err(Error::Shape(format!(
                    "column scale has length {} but the representation has {m} columns",
                    s.len()
                )));
            }
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut ids = Vec::with_capacity(rows.len());
        indptr.push(0);
        for &r in rows {
            let row = self
                .values
                .outer_view(r)
                .ok_or_else(|| Error::Shape(format!("row {r} out of range")))?;
            for (j, &v) in row.iter() {
                let v = match column_scale {
                    Some(s) => v * s[j],
                    None => v,
                };
                if v != 0.0 {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
            ids.push(self.doc_ids[r].clone());
        }
        DocTermRepresentation::new(CsMat::new((rows.len(), m), indptr, indices, data), ids)
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        self.values.to_dense()
    }
}

/// `A = (TF x M_S) ⊙ (1 x idf^T)`: each document's counts are spread over
/// similar terms, then every column is scaled by its idf.
pub fn build_document_representation(
    tf: &TermFrequencyMatrix,
    ms: &TermSimilarityMatrix,
    idf: &[f64],
) -> Result<DocTermRepresentation> {
    let m = tf.n_terms();
    if ms.dim() != m || idf.len() != m {
        return Err(Error::Shape(format!(
            "tf has {m} columns, similarity matrix is {0}x{0}, idf has length {1}",
            ms.dim(),
            idf.len()
        )));
    }
    let spread = &tf.to_f64() * ms.entries();
    let n = spread.rows();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(spread.nnz());
    let mut data = Vec::with_capacity(spread.nnz());
    indptr.push(0);
    for row in spread.outer_iterator() {
        let mut entries: Vec<(usize, f64)> = row.iter().map(|(j, &v)| (j, v * idf[j])).collect();
        entries.sort_unstable_by_key(|&(j, _)| j);
        for (j, v) in entries {
            if v < 0.0 || v.is_nan() {
                return Err(Error::Invariant(format!(
                    "document representation entry {v} in column {j} is negative"
                )));
            }
            if v != 0.0 {
                indices.push(j);
                data.push(v);
            }
        }
        indptr.push(indices.len());
    }
    let ids = (0..n).map(|i| format!("{i}")).collect();
    DocTermRepresentation::new(CsMat::new((n, m), indptr, indices, data), ids)
}

/// Same as [`build_document_representation`] but labels rows with the
/// corpus document ids.
pub fn build_corpus_representation(
    corpus: &Corpus,
    tf: &TermFrequencyMatrix,
    ms: &TermSimilarityMatrix,
    idf: &[f64],
) -> Result<DocTermRepresentation> {
    let a = build_document_representation(tf, ms, idf)?;
    DocTermRepresentation::new(a.values, corpus.doc_ids())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, text: &str) -> RawDocument {
        RawDocument::new(id, text)
    }

    fn lenient() -> PreprocessConfig {
        PreprocessConfig {
            min_doc_freq: 1,
            ..PreprocessConfig::default()
        }
    }

    fn tokens_of(corpus: &Corpus, i: usize) -> Vec<&str> {
        corpus.docs()[i]
            .tokens
            .iter()
            .map(|&t| corpus.vocab().term(t as usize))
            .collect()
    }

    #[test]
    fn strips_numbers_punctuation_and_stopwords() {
        let c = preprocess(&[raw("d1", "The CPU runs at 3 GHz!")], &lenient()).unwrap();
        assert_eq!(tokens_of(&c, 0), vec!["cpu", "runs", "ghz"]);
    }

    #[test]
    fn empty_document_is_kept_and_flagged() {
        let c = preprocess(&[raw("d0", "cpu"), raw("d1", "")], &lenient()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.docs()[1].is_empty());
        assert_eq!(c.docs()[1].id, "d1");
        assert_eq!(c.empty_documents(), 1);
    }

    #[test]
    fn min_doc_freq_drops_rare_terms() {
        let docs = [
            raw("1", "apple zebra"),
            raw("2", "apple banana"),
            raw("3", "banana apple"),
        ];
        let cfg = PreprocessConfig {
            min_doc_freq: 2,
            ..PreprocessConfig::default()
        };
        let c = preprocess(&docs, &cfg).unwrap();
        assert!(c.vocab().get("zebra").is_none());
        assert_eq!(c.vocab().terms(), &["apple", "banana"]);
    }

    #[test]
    fn all_empty_is_a_corpus_error() {
        let err = preprocess(&[raw("1", "the a 42")], &lenient()).unwrap_err();
        assert!(matches!(err, Error::Corpus(_)));
        assert!(matches!(
            preprocess(&[], &lenient()).unwrap_err(),
            Error::Corpus(_)
        ));
    }

    #[test]
    fn unreadable_stopword_file_is_a_config_error() {
        let cfg = PreprocessConfig {
            stopword_lists: vec![PathBuf::from("/definitely/not/here.txt")],
            ..lenient()
        };
        assert!(matches!(
            preprocess(&[raw("1", "cpu")], &cfg).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn custom_stopword_file_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stop.txt");
        std::fs::write(&path, "# local list\nghz\n\ncpu # trailing\n").unwrap();
        let cfg = PreprocessConfig {
            stopword_lists: vec![path],
            ..lenient()
        };
        let c = preprocess(&[raw("1", "The CPU runs at 3 GHz!")], &cfg).unwrap();
        assert_eq!(tokens_of(&c, 0), vec!["runs"]);
    }

    #[test]
    fn non_ascii_tokens_are_dropped_but_unicode_punctuation_splits() {
        assert_eq!(
            tokenize("caf\u{e9} \u{201c}quoted\u{201d} x86 2024 3.5"),
            vec!["quoted", "x86"]
        );
    }

    #[test]
    fn ratio_filter_verbatim_rule() {
        let docs = [raw("1", "apple apple banana"), raw("2", "banana cherry")];
        let cfg = PreprocessConfig {
            ratio_filter_enabled: true,
            ratio_threshold: 1.5,
            ..lenient()
        };
        // apple: 2 occurrences / 1 doc = 2.0, banana: 2/2 = 1.0, cherry 1/1
        let c = preprocess(&docs, &cfg).unwrap();
        assert_eq!(c.vocab().terms(), &["apple"]);
        // at the 0.8 default nothing can be removed
        let cfg = PreprocessConfig {
            ratio_filter_enabled: true,
            ..lenient()
        };
        assert_eq!(preprocess(&docs, &cfg).unwrap().vocab().len(), 3);
    }

    #[test]
    fn stemming_is_opt_in() {
        let docs = [raw("1", "running runs")];
        let plain = preprocess(&docs, &lenient()).unwrap();
        assert_eq!(plain.vocab().terms(), &["running", "runs"]);
        let stemmed = preprocess(
            &docs,
            &PreprocessConfig {
                stem: true,
                ..lenient()
            },
        )
        .unwrap();
        assert_eq!(stemmed.vocab().terms(), &["run"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = preprocess(&[raw("x", "apple"), raw("x", "banana")], &lenient()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn jsonl_and_plain_text_readers() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("c.jsonl");
        std::fs::write(
            &jsonl,
            "{\"id\":\"a\",\"text\":\"x y\"}\n\n{\"id\":\"b\",\"text\":\"z\"}\n",
        )
        .unwrap();
        let docs = read_raw_documents(&jsonl).unwrap();
        assert_eq!(docs, vec![raw("a", "x y"), raw("b", "z")]);

        let txt = dir.path().join("c.txt");
        std::fs::write(&txt, "first line\n\nthird line\n").unwrap();
        let docs = read_raw_documents(&txt).unwrap();
        assert_eq!(
            docs,
            vec![raw("doc-1", "first line"), raw("doc-3", "third line")]
        );
    }

    #[test]
    fn jsonl_error_names_the_line() {
        let err = parse_jsonl(
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\": 3}\n".as_bytes(),
            "c.jsonl",
        )
        .unwrap_err();
        match err {
            Error::Parse {
                source_name, line, ..
            } => {
                assert_eq!(source_name, "c.jsonl");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tf_counts() {
        let c = Corpus::from_tokens(vec![("d0", vec!["a", "a", "b"]), ("d1", vec![])]).unwrap();
        let tf = build_tf(&c);
        assert_eq!((tf.get(0, 0), tf.get(0, 1)), (2, 1));
        assert_eq!((tf.get(1, 0), tf.get(1, 1)), (0, 0));

        let c = Corpus::from_tokens(vec![("d0", vec!["a"]), ("d1", vec!["b"])]).unwrap();
        let dense = build_tf(&c).counts().to_dense();
        assert_eq!(dense, ndarray::arr2(&[[1u32, 0], [0, 1]]));
    }

    #[test]
    fn corpus_bytes_round_trip() {
        let c = preprocess(
            &[raw("a", "apple banana"), raw("b", "cherry"), raw("c", "")],
            &lenient(),
        )
        .unwrap();
        let back = Corpus::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(Corpus::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn vocabulary_is_sorted_and_rejects_empty_terms() {
        let v = Vocabulary::new(["pear", "apple", "pear"]).unwrap();
        assert_eq!(v.terms(), &["apple", "pear"]);
        assert_eq!(v.get("pear"), Some(1));
        assert!(Vocabulary::new(["", "x"]).is_err());
    }
    fn ms(dense: ndarray::Array2<f64>) -> TermSimilarityMatrix {
        TermSimilarityMatrix::from_entries(CsMat::csr_from_dense(dense.view(), 0.0), 0.0, 2)
            .unwrap()
    }

    fn tf_of(dense: ndarray::Array2<u32>) -> TermFrequencyMatrix {
        let mut tri = sprs::TriMat::new(dense.dim());
        for ((i, j), &v) in dense.indexed_iter() {
            if v != 0 {
                tri.add_triplet(i, j, v);
            }
        }
        TermFrequencyMatrix::from_counts(tri.to_csr())
    }

    #[test]
    fn identity_similarity_gives_classic_idf() {
        let tf = tf_of(ndarray::arr2(&[[2, 0, 1], [0, 1, 1], [1, 0, 1], [0, 0, 1]]));
        let idf = compute_idf(&tf, &TermSimilarityMatrix::identity(3)).unwrap();
        let expected = [(4.0f64 / 2.0).ln(), 4.0f64.ln(), 0.0];
        for (a, b) in idf.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn idf_averages_similarities_within_a_document() {
        // d0 = {0, 1}: mu(0) = (1 + 0.5) / 2, mu(1) = (0.5 + 1) / 2
        // d1 = {1}:    mu(0) = 0.5, mu(1) = 1
        let tf = tf_of(ndarray::arr2(&[[1, 1], [0, 3]]));
        let s = ms(ndarray::arr2(&[[1.0, 0.5], [0.5, 1.0]]));
        let idf = compute_idf(&tf, &s).unwrap();
        assert!((idf[0] - (2.0f64 / 1.25).ln()).abs() < 1e-12);
        assert!((idf[1] - (2.0f64 / 1.75).ln()).abs() < 1e-12);
    }

    #[test]
    fn idf_edge_cases() {
        // term present everywhere
        let tf = tf_of(ndarray::arr2(&[[1, 0], [1, 0]]));
        let idf = compute_idf(&tf, &TermSimilarityMatrix::identity(2)).unwrap();
        assert_eq!(idf[0], 0.0);
        // term 1 never reached: zero denominator
        assert_eq!(idf[1], 0.0);
        // one document in two
        let tf = tf_of(ndarray::arr2(&[[1, 0], [0, 1]]));
        let idf = compute_idf(&tf, &TermSimilarityMatrix::identity(2)).unwrap();
        assert!((idf[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            compute_idf(&tf, &TermSimilarityMatrix::identity(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn representation_examples() {
        let tf = tf_of(ndarray::arr2(&[[1, 0]]));
        let s = ms(ndarray::arr2(&[[1.0, 0.5], [0.0, 1.0]]));
        let a = build_document_representation(&tf, &s, &[1.0, 1.0]).unwrap();
        assert_eq!(a.to_dense(), ndarray::arr2(&[[1.0, 0.5]]));

        let tf = tf_of(ndarray::arr2(&[[2, 1], [0, 3]]));
        let idf = [0.7, 0.0];
        let a =
            build_document_representation(&tf, &TermSimilarityMatrix::identity(2), &idf).unwrap();
        assert_eq!(a.to_dense(), ndarray::arr2(&[[1.4, 0.0], [0.0, 0.0]]));
        assert!(a.row_is_zero(1));
        assert_eq!(a.nonzero_rows(), vec![0]);
        assert!(
            build_document_representation(&tf, &TermSimilarityMatrix::identity(2), &[1.0]).is_err()
        );
    }

    #[test]
    fn corpus_representation_keeps_ids() {
        let c = Corpus::from_tokens(vec![("x", vec!["a"]), ("y", vec!["b", "a"])]).unwrap();
        let tf = build_tf(&c);
        let id = TermSimilarityMatrix::identity(2);
        let idf = compute_idf(&tf, &id).unwrap();
        let a = build_corpus_representation(&c, &tf, &id, &idf).unwrap();
        assert_eq!(a.doc_ids(), &["x", "y"]);
        let sub = a.select_rows(&[1], Some(&[2.0, 1.0])).unwrap();
        assert_eq!(sub.doc_ids(), &["y"]);
        assert_eq!(
            sub.to_dense(),
            ndarray::arr2(&[[0.0, std::f64::consts::LN_2]])
        );
    }
}
