//! Word-embedding geometry: Poincaré-ball distances, exact k-nearest
//! neighbours, and the sparse term-term similarity and hierarchy matrices
//! derived from them.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sprs::CsMat;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Vectors whose norm reaches 1 are pulled back to this radius.
pub const MAX_BALL_NORM: f64 = 1.0 - 1e-5;

const LOW_COVERAGE: f64 = 0.10;

/// Geometry the embeddings live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Poincaré ball: hyperbolic distance, neighbourhood-normalized similarity.
    #[default]
    Hyperbolic,
    /// Plain vectors: cosine distance, clamped cosine similarity.
    Euclidean,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Hyperbolic => "hyperbolic",
            Space::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(Space::Hyperbolic),
            "euclidean" => Ok(Space::Euclidean),
            other => Err(Error::Config(format!("unknown embedding space {other:?}"))),
        }
    }
}

/// Hyperbolic distance between two points of the open unit ball.
pub fn poincare_distance(u: &[f64], v: &[f64]) -> f64 {
    let nu: f64 = u.iter().map(|x| x * x).sum();
    let nv: f64 = v.iter().map(|x| x * x).sum();
    poincare_distance_with(u, v, 1.0 - nu, 1.0 - nv)
}

/// `arcosh(1 + x)` evaluated as `ln_1p(x + sqrt(x (x + 2)))`, which keeps
/// full relative precision for nearby points.
fn poincare_distance_with(u: &[f64], v: &[f64], gap_u: f64, gap_v: f64) -> f64 {
    let diff: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    let x = 2.0 * diff / (gap_u * gap_v);
    if !(x > 0.0) {
        // rounding can push the arcosh argument below 1
        return 0.0;
    }
    (x + (x * (x + 2.0)).sqrt()).ln_1p()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn euclidean_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Embeddings for the covered subset of a vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    space: Space,
    vectors: Vec<Option<Vec<f64>>>,
    /// `1 - |v|^2` per covered term (hyperbolic) or `|v|` (euclidean).
    aux: Vec<f64>,
    covered: Vec<usize>,
    projected: usize,
}

impl EmbeddingTable {
    /// Builds a table over a vocabulary of `vocab_len` terms from
    /// `(term index, vector)` pairs. In hyperbolic mode vectors with norm
    /// >= 1 are rescaled radially to [`MAX_BALL_NORM`].
    pub fn from_vectors(
        vocab_len: usize,
        space: Space,
        entries: impl IntoIterator<Item = (usize, Vec<f64>)>,
    ) -> Result<Self> {
        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; vocab_len];
        let mut dim = None;
        let mut projected = 0;
        for (i, mut v) in entries {
            if i >= vocab_len {
                return Err(Error::Shape(format!(
                    "term index {i} outside a vocabulary of {vocab_len}"
                )));
            }
            match dim {
                None => {
                    if v.is_empty() {
                        return Err(Error::Shape("embedding vectors must be non-empty".into()));
                    }
                    dim = Some(v.len());
                }
                Some(d) if d != v.len() => {
                    return Err(Error::Shape(format!(
                        "embedding for term {i} has dimension {} instead of {d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract(format!(
                    "embedding for term {i} is not finite"
                )));
            }
            if space == Space::Hyperbolic {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm >= 1.0 {
                    let scale = MAX_BALL_NORM / norm;
                    v.iter_mut().for_each(|x| *x *= scale);
                    projected += 1;
                }
            }
            vectors[i] = Some(v);
        }
        let covered: Vec<usize> = (0..vocab_len).filter(|&i| vectors[i].is_some()).collect();
        let aux = vectors
            .iter()
            .map(|v| match v {
                None => 0.0,
                Some(v) => {
                    let sq: f64 = v.iter().map(|x| x * x).sum();
                    match space {
                        Space::Hyperbolic => 1.0 - sq,
                        Space::Euclidean => sq.sqrt(),
                    }
                }
            })
            .collect();
        Ok(EmbeddingTable {
            dim: dim.unwrap_or(0),
            space,
            vectors,
            aux,
            covered,
            projected,
        })
    }

    /// Hash of the space and every covered vector, for cache keys.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.space.as_str().as_bytes());
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.vectors.len() as u64).to_le_bytes());
        for &i in &self.covered {
            h.update((i as u64).to_le_bytes());
            for x in self.vectors[i].as_ref().unwrap() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..16])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn vocab_len(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, term: usize) -> Option<&[f64]> {
        self.vectors.get(term).and_then(|v| v.as_deref())
    }

    pub fn is_covered(&self, term: usize) -> bool {
        self.vector(term).is_some()
    }

    /// Covered term indices, ascending.
    pub fn covered(&self) -> &[usize] {
        &self.covered
    }

    /// Fraction of the vocabulary with an embedding.
    pub fn coverage(&self) -> f64 {
        if self.vectors.is_empty() {
            0.0
        } else {
            self.covered.len() as f64 / self.vectors.len() as f64
        }
    }

    /// Number of vectors rescaled back inside the ball at load time.
    pub fn projected(&self) -> usize {
        self.projected
    }

    /// Distance used for neighbour ranking: hyperbolic distance, or cosine
    /// distance `1 - cos` in euclidean mode. Both terms must be covered.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (u, v) = (self.vector(a).unwrap(), self.vector(b).unwrap());
        match self.space {
            Space::Hyperbolic => poincare_distance_with(u, v, self.aux[a], self.aux[b]),
            Space::Euclidean => 1.0 - self.cosine(a, b),
        }
    }

    fn cosine(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.aux[a], self.aux[b]);
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let (u, v) = (self.vector(a).unwrap(), self.vector(b).unwrap());
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Loads a word-vector text file for the terms of `vocab`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, space: Space) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(
        BufReader::new(file),
        &path.display().to_string(),
        vocab,
        space,
    )
}

/// Parses `term v_1 .. v_dim` lines with an optional `<count> <dim>` header.
/// Every line is validated; only vocabulary terms are kept.
pub fn parse_embeddings<R: BufRead>(
    reader: R,
    source_name: &str,
    vocab: &Vocabulary,
    space: Space,
) -> Result<EmbeddingTable> {
    let mut dim: Option<usize> = None;
    let mut entries: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut seen = vec![false; vocab.len()];
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(term) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if first {
            first = false;
            if rest.len() == 1 {
                if let (Ok(_count), Ok(d)) = (term.parse::<usize>(), rest[0].parse::<usize>()) {
                    if d == 0 {
                        return Err(Error::parse(
                            source_name,
                            lineno,
                            "header declares dimension 0",
                        ));
                    }
                    dim = Some(d);
                    continue;
                }
            }
        }
        if rest.is_empty() {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("no vector for {term:?}"),
            ));
        }
        let expected = *dim.get_or_insert(rest.len());
        if rest.len() != expected {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected {expected} components, found {}", rest.len()),
            ));
        }
        let mut v = Vec::with_capacity(expected);
        for f in rest {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::parse(source_name, lineno, format!("bad number {f:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("non-finite {f:?}"),
                ));
            }
            v.push(x);
        }
        if let Some(idx) = vocab.get(term) {
            if seen[idx] {
                log::debug!("{source_name}:{lineno}: duplicate vector for {term:?} ignored");
                continue;
            }
            seen[idx] = true;
            entries.push((idx, v));
        }
    }
    let table = EmbeddingTable::from_vectors(vocab.len(), space, entries)?;
    let table = EmbeddingTable {
        dim: dim.unwrap_or(table.dim),
        ..table
    };
    let coverage = table.coverage();
    if coverage < LOW_COVERAGE {
        log::warn!(
            "embeddings cover only {:.1}% of the vocabulary ({} of {})",
            coverage * 100.0,
            table.covered.len(),
            vocab.len()
        );
    } else {
        log::info!(
            "embeddings cover {:.1}% of the vocabulary ({} of {})",
            coverage * 100.0,
            table.covered.len(),
            vocab.len()
        );
    }
    if table.projected > 0 {
        log::info!(
            "{} vectors projected back inside the unit ball",
            table.projected
        );
    }
    Ok(table)
}

/// The `k` nearest covered terms to a center, the center first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: usize,
    /// `(term, distance to center)`, nondecreasing in distance.
    pub members: Vec<(usize, f64)>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, term: usize) -> bool {
        self.members.iter().any(|&(t, _)| t == term)
    }
}

/// Exact brute-force neighbourhood. Ties are broken by ascending term
/// index, except that the center always ranks first.
pub fn knn(table: &EmbeddingTable, w: usize, k: usize) -> Result<Neighborhood> {
    if !table.is_covered(w) {
        return Err(Error::Contract(format!("term {w} has no embedding")));
    }
    if k == 0 {
        return Err(Error::Config(
            "neighbourhood size must be at least 1".into(),
        ));
    }
    let mut ranked: Vec<(usize, f64)> = table
        .covered()
        .iter()
        .filter(|&&t| t != w)
        .map(|&t| (t, table.distance(w, t)))
        .collect();
    let keep = (k - 1).min(ranked.len());
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if keep < ranked.len() {
        ranked.select_nth_unstable_by(keep, by_distance);
        ranked.truncate(keep);
    }
    ranked.sort_unstable_by(by_distance);
    let mut members = Vec::with_capacity(keep + 1);
    members.push((w, 0.0));
    members.extend(ranked);
    Ok(Neighborhood { center: w, members })
}

/// Denominator used to normalize hyperbolic neighbourhood distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Largest distance over all member pairs.
    #[default]
    PairwiseMax,
    /// Largest distance from the center; O(k) instead of O(k²).
    CenterMax,
}

/// Similarity of the center to every member: `1 - d(w, w') / D`, with `D`
/// the largest pairwise distance inside the neighbourhood. In euclidean
/// mode the clamped cosine similarity is returned instead.
pub fn neighborhood_similarity(nbhd: &Neighborhood, table: &EmbeddingTable) -> Vec<(usize, f64)> {
    neighborhood_similarity_with(nbhd, table, Normalization::PairwiseMax)
}

pub fn neighborhood_similarity_with(
    nbhd: &Neighborhood,
    table: &EmbeddingTable,
    normalization: Normalization,
) -> Vec<(usize, f64)> {
    match table.space() {
        Space::Euclidean => nbhd
            .members
            .iter()
            .map(|&(t, _)| {
                let s = if t == nbhd.center {
                    1.0
                } else {
                    table.cosine(nbhd.center, t).max(0.0)
                };
                (t, s)
            })
            .collect(),
        Space::Hyperbolic => {
            let max = match normalization {
                Normalization::PairwiseMax => {
                    let mut max = 0.0f64;
                    for (a, &(ta, _)) in nbhd.members.iter().enumerate() {
                        for &(tb, _) in &nbhd.members[a + 1..] {
                            max = max.max(table.distance(ta, tb));
                        }
                    }
                    max
                }
                Normalization::CenterMax => {
                    nbhd.members.iter().map(|&(_, d)| d).fold(0.0, f64::max)
                }
            };
            nbhd.members
                .iter()
                .map(|&(t, d)| {
                    let s = if max > 0.0 { 1.0 - d / max } else { 1.0 };
                    (t, s.clamp(0.0, 1.0))
                })
                .collect()
        }
    }
}

/// Sparse term-term similarity `M_S`, entries in [0, 1], unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSimilarityMatrix {
    entries: CsMat<f64>,
    alpha: f64,
    k_s: usize,
}

impl TermSimilarityMatrix {
    pub fn from_entries(entries: CsMat<f64>, alpha: f64, k_s: usize) -> Result<Self> {
        check_square(&entries)?;
        if let Some(v) = entries.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("similarity {v} outside [0, 1]")));
        }
        Ok(TermSimilarityMatrix {
            entries: to_csr(entries),
            alpha,
            k_s,
        })
    }

    pub fn identity(m: usize) -> Self {
        TermSimilarityMatrix {
            entries: CsMat::eye(m),
            alpha: 1.0,
            k_s: 1,
        }
    }

    pub fn entries(&self) -> &CsMat<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> CsMat<f64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries.get(row, col).copied().unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.nnz()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k_s(&self) -> usize {
        self.k_s
    }
}

/// Binary k-NN adjacency `M_H`, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TermHierarchyMatrix {
    entries: CsMat<f64>,
    k_h: usize,
}

impl TermHierarchyMatrix {
    pub fn from_entries(entries: CsMat<f64>, k_h: usize) -> Result<Self> {
        check_square(&entries)?;
        if let Some(v) = entries.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract(format!(
                "hierarchy entry {v} is not binary"
            )));
        }
        Ok(TermHierarchyMatrix {
            entries: to_csr(entries),
            k_h,
        })
    }

    pub fn identity(m: usize) -> Self {
        TermHierarchyMatrix {
            entries: CsMat::eye(m),
            k_h: 1,
        }
    }

    pub fn entries(&self) -> &CsMat<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> CsMat<f64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries.get(row, col).copied().unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.nnz()
    }

    pub fn k_h(&self) -> usize {
        self.k_h
    }
}

fn check_square(m: &CsMat<f64>) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(Error::Shape(format!(
            "term-term matrix must be square, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn to_csr(m: CsMat<f64>) -> CsMat<f64> {
    if m.is_csr() {
        m
    } else {
        m.to_csr()
    }
}

/// One sparse row per vocabulary term. Covered terms get `row_of(term)`,
/// uncovered terms only their unit diagonal.
fn rows_to_matrix<F>(table: &EmbeddingTable, row_of: F) -> Result<CsMat<f64>>
where
    F: Fn(usize) -> Result<Vec<(usize, f64)>> + Sync,
{
    let m = table.vocab_len();
    let rows: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|w| {
            if !table.is_covered(w) {
                return Ok(vec![(w, 1.0)]);
            }
            let mut row = row_of(w)?;
            row.sort_unstable_by_key(|&(j, _)| j);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut indptr = Vec::with_capacity(m + 1);
    let mut indices = Vec::new();
    let mut data = Vec::new();
    indptr.push(0);
    for row in rows {
        for (j, v) in row {
            indices.push(j);
            data.push(v);
        }
        indptr.push(indices.len());
    }
    Ok(CsMat::new((m, m), indptr, indices, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    pub k_s: usize,
    pub alpha: f64,
    pub normalization: Normalization,
}

impl SimilarityOptions {
    pub fn new(k_s: usize, alpha: f64) -> Self {
        SimilarityOptions {
            k_s,
            alpha,
            normalization: Normalization::PairwiseMax,
        }
    }
}

/// `M_S(w, w') = s(w, w')` for `w'` among the `k_s` nearest terms of `w`
/// when `s >= alpha`, else 0. Rows are normalized independently, so the
/// matrix is generally asymmetric.
pub fn build_similarity_matrix(
    table: &EmbeddingTable,
    k_s: usize,
    alpha: f64,
) -> Result<TermSimilarityMatrix> {
    build_similarity_matrix_with(table, &SimilarityOptions::new(k_s, alpha))
}

pub fn build_similarity_matrix_with(
    table: &EmbeddingTable,
    opts: &SimilarityOptions,
) -> Result<TermSimilarityMatrix> {
    if !(0.0..=1.0).contains(&opts.alpha) {
        return Err(Error::Config(format!(
            "alpha {} outside [0, 1]",
            opts.alpha
        )));
    }
    if opts.k_s == 0 {
        return Err(Error::Config("k_s must be at least 1".into()));
    }
    let entries = rows_to_matrix(table, |w| {
        let nbhd = knn(table, w, opts.k_s)?;
        Ok(
            neighborhood_similarity_with(&nbhd, table, opts.normalization)
                .into_iter()
                .filter(|&(t, s)| t == w || (s >= opts.alpha && s > 0.0))
                .map(|(t, s)| if t == w { (t, 1.0) } else { (t, s) })
                .collect(),
        )
    })?;
    Ok(TermSimilarityMatrix {
        entries,
        alpha: opts.alpha,
        k_s: opts.k_s,
    })
}

/// `M_H(w, w') = 1` iff `w'` is among the `k_h` nearest terms of `w`.
pub fn build_hierarchy_matrix(table: &EmbeddingTable, k_h: usize) -> Result<TermHierarchyMatrix> {
    if k_h == 0 {
        return Err(Error::Config("k_h must be at least 1".into()));
    }
    let entries = rows_to_matrix(table, |w| {
        Ok(knn(table, w, k_h)?
            .members
            .into_iter()
            .map(|(t, _)| (t, 1.0))
            .collect())
    })?;
    Ok(TermHierarchyMatrix { entries, k_h })
}
