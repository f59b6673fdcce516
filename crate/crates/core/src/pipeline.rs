//! End-to-end training: term counts, similarity and hierarchy matrices,
//! the enriched representation, then the topic tree. Matrices can be
//! cached on disk between runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_corpus_representation, build_tf, compute_idf, Corpus, DocTermRepresentation,
    TermFrequencyMatrix,
};
use crate::error::Result;
use crate::hierarchy::{build_hierarchy, ReweightMode, TopicTree, TrainConfig};
use crate::hypspace::{
    build_hierarchy_matrix, build_similarity_matrix, EmbeddingTable, TermHierarchyMatrix,
    TermSimilarityMatrix,
};
use crate::sparse::{CacheKey, MatrixCache};

/// Wall time of each stage, in seconds, and whether it came from cache.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub cached: bool,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub tf: TermFrequencyMatrix,
    pub ms: TermSimilarityMatrix,
    pub mh: TermHierarchyMatrix,
    pub idf: Vec<f64>,
    pub a0: DocTermRepresentation,
    pub timings: Vec<StageTiming>,
}

fn timed<T>(
    timings: &mut Vec<StageTiming>,
    stage: &str,
    f: impl FnOnce() -> Result<(T, bool)>,
) -> Result<T> {
    let start = Instant::now();
    let (value, cached) = f()?;
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: start.elapsed().as_secs_f64(),
        cached,
    });
    Ok(value)
}

fn cached_or_build(
    cache: Option<&MatrixCache>,
    kind: &str,
    key: &str,
    build: impl FnOnce() -> Result<sprs::CsMat<f64>>,
) -> Result<(sprs::CsMat<f64>, bool)> {
    match cache {
        Some(c) => c.get_or_build(kind, key, build),
        None => Ok((build()?, false)),
    }
}

/// Builds every matrix the tree construction needs.
pub fn prepare(
    corpus: &Corpus,
    table: &EmbeddingTable,
    config: &TrainConfig,
    cache: Option<&MatrixCache>,
) -> Result<Prepared> {
    config.validate()?;
    let mut timings = Vec::new();
    let tf = timed(&mut timings, "term_counts", || {
        Ok((build_tf(corpus), false))
    })?;

    let ms_key = CacheKey::new("ms")
        .str(&corpus.vocab().fingerprint())
        .str(&table.fingerprint())
        .f64(config.alpha)
        .usize(config.k_s)
        .finish();
    let ms = timed(&mut timings, "similarity_matrix", || {
        let (m, hit) = cached_or_build(cache, "ms", &ms_key, || {
            Ok(build_similarity_matrix(table, config.k_s, config.alpha)?.into_entries())
        })?;
        Ok((
            TermSimilarityMatrix::from_entries(m, config.alpha, config.k_s)?,
            hit,
        ))
    })?;

    let mh = timed(&mut timings, "hierarchy_matrix", || {
        if config.reweight != ReweightMode::Hierarchy {
            return Ok((TermHierarchyMatrix::identity(corpus.vocab().len()), false));
        }
        let key = CacheKey::new("mh")
            .str(&corpus.vocab().fingerprint())
            .str(&table.fingerprint())
            .usize(config.k_h)
            .finish();
        let (m, hit) = cached_or_build(cache, "mh", &key, || {
            Ok(build_hierarchy_matrix(table, config.k_h)?.into_entries())
        })?;
        Ok((TermHierarchyMatrix::from_entries(m, config.k_h)?, hit))
    })?;

    let idf = timed(&mut timings, "idf", || Ok((compute_idf(&tf, &ms)?, false)))?;

    let a0 = timed(&mut timings, "representation", || {
        let key = CacheKey::new("a0")
            .str(&corpus.fingerprint()?)
            .str(&ms_key)
            .finish();
        let (m, hit) = cached_or_build(cache, "a0", &key, || {
            Ok(build_corpus_representation(corpus, &tf, &ms, &idf)?
                .values()
                .clone())
        })?;
        Ok((DocTermRepresentation::new(m, corpus.doc_ids())?, hit))
    })?;

    Ok(Prepared {
        tf,
        ms,
        mh,
        idf,
        a0,
        timings,
    })
}

/// [`prepare`] followed by tree construction.
pub fn train(
    corpus: &Corpus,
    table: &EmbeddingTable,
    config: &TrainConfig,
    cache: Option<&MatrixCache>,
) -> Result<(Prepared, TopicTree)> {
    let mut prepared = prepare(corpus, table, config, cache)?;
    let tree = timed(&mut prepared.timings, "hierarchy", || {
        Ok((build_hierarchy(&prepared.a0, &prepared.mh, config)?, false))
    })?;
    Ok((prepared, tree))
}
