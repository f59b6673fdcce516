use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use hyptopic::corpus::{build_tf, preprocess, read_raw_documents, Corpus, PreprocessConfig};
use hyptopic::hypspace::load_embeddings;
use hyptopic::metrics::evaluate;
use hyptopic::model::{apply_factor_dumps, to_dot, truncate_terms, write_factor_dumps, TreeFile};
use hyptopic::pipeline;
use hyptopic::sparse::{matrix_digest, CsMat, MatrixCache};

use crate::config::RunConfig;
use crate::failure::{Failure, EXIT_DEGENERATE};

pub const CORPUS_FILE: &str = "corpus.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TREE_FILE: &str = "tree.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const FACTORS_DIR: &str = "factors";

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, &e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, &e))
}

fn file_sha256(path: &Path) -> Result<String, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(path, &e))?;
    let mut hasher = Sha256::new();
    io::copy(&mut BufReader::new(file), &mut hasher).map_err(|e| Failure::io(path, &e))?;
    Ok(hex::encode(hasher.finalize()))
}

fn sha256_str(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Where a corpus came from and the file it was read from.
struct LoadedCorpus {
    corpus: Corpus,
    file: PathBuf,
    preprocessed_here: Option<PreprocessConfig>,
}

/// Accepts a corpus.bin, a directory holding one, or a raw corpus that is
/// preprocessed on the spot.
fn load_corpus(path: &Path, cfg: &RunConfig) -> Result<LoadedCorpus, Failure> {
    let file = if path.is_dir() {
        path.join(CORPUS_FILE)
    } else {
        path.to_path_buf()
    };
    if file.extension().is_some_and(|e| e == "bin") {
        let corpus = Corpus::load(&file).map_err(Failure::from)?;
        return Ok(LoadedCorpus {
            corpus,
            file,
            preprocessed_here: None,
        });
    }
    let prep = cfg.preprocess_config()?;
    let raw = read_raw_documents(&file)?;
    let corpus = preprocess(&raw, &prep)?;
    Ok(LoadedCorpus {
        corpus,
        file,
        preprocessed_here: Some(prep),
    })
}

fn summary_line(corpus: &Corpus) -> String {
    format!(
        "docs={} vocab={} avg_len={:.2}",
        corpus.len(),
        corpus.vocab().len(),
        corpus.mean_doc_len()
    )
}

pub fn preprocess_cmd(cfg: &RunConfig) -> Result<String, Failure> {
    let input = cfg.require_corpus()?;
    let output = cfg.require_output()?;
    let prep = cfg.preprocess_config()?;
    let raw = read_raw_documents(input)?;
    let corpus = preprocess(&raw, &prep)?;
    create_dir(output)?;
    corpus.save(&output.join(CORPUS_FILE))?;
    corpus.write_vocab(&output.join(VOCAB_FILE))?;
    if corpus.empty_documents() > 0 {
        log::warn!(
            "{} documents have no tokens left after preprocessing",
            corpus.empty_documents()
        );
    }
    Ok(summary_line(&corpus))
}

pub fn train_cmd(cfg: &RunConfig, flags: &RunConfig) -> Result<String, Failure> {
    let train = cfg.train_config()?;
    let corpus_path = cfg.require_corpus()?;
    let output = cfg.require_output()?;
    let emb_path = cfg
        .embeddings
        .as_deref()
        .ok_or_else(|| Failure::input("--embeddings is required"))?;

    let loaded = load_corpus(corpus_path, cfg)?;
    let corpus = &loaded.corpus;
    let table =
        load_embeddings(emb_path, corpus.vocab(), train.space).map_err(Failure::as_contract)?;
    if table.covered().is_empty() {
        return Err(Failure::contract(format!(
            "{}: no vector for any of the {} vocabulary terms",
            emb_path.display(),
            corpus.vocab().len()
        )));
    }

    create_dir(output)?;
    let cache_dir = cfg.cache_location(flags, output);
    let cache = MatrixCache::new(&cache_dir);
    let (prepared, tree) = pipeline::train(corpus, &table, &train, Some(&cache))?;

    if tree.is_empty() {
        let usable = prepared.a0.nonzero_rows().len();
        return Err(Failure::new(
            EXIT_DEGENERATE,
            format!(
                "only {usable} documents have a nonzero representation, fewer than min_docs = {}",
                train.min_docs
            ),
        ));
    }

    let tree_json = TreeFile::from_tree(&tree, corpus.vocab(), None)?.to_json()?;
    write_file(&output.join(TREE_FILE), &tree_json)?;
    let factors = output.join(FACTORS_DIR);
    if factors.exists() {
        fs::remove_dir_all(&factors).map_err(|e| Failure::io(&factors, &e))?;
    }
    write_factor_dumps(&tree, &factors)?;

    let cached = |stage: &str| {
        prepared
            .timings
            .iter()
            .find(|t| t.stage == stage)
            .is_some_and(|t| t.cached)
    };
    let matrix = |name: &str, stage: &str, m: &CsMat<f64>| {
        json!({
            "name": name,
            "rows": m.rows(),
            "cols": m.cols(),
            "nnz": m.nnz(),
            "sha256": matrix_digest(m),
            "cached": cached(stage),
        })
    };
    let leaves = tree.nodes().iter().filter(|n| n.is_leaf()).count();
    let provenance = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "space": train.space,
        "reweight": train.reweight,
        "config": train,
        "preprocessing": loaded.preprocessed_here,
        "inputs": {
            "corpus": { "path": loaded.file, "sha256": file_sha256(&loaded.file)? },
            "embeddings": { "path": emb_path, "sha256": file_sha256(emb_path)? },
        },
        "corpus": {
            "documents": corpus.len(),
            "empty_documents": corpus.empty_documents(),
            "vocabulary": corpus.vocab().len(),
            "vocabulary_sha256": corpus.vocab().fingerprint(),
            "sha256": corpus.fingerprint()?,
        },
        "embeddings": {
            "dim": table.dim(),
            "covered": table.covered().len(),
            "coverage": table.coverage(),
            "projected": table.projected(),
        },
        "cache_dir": cache_dir,
        "matrices": [
            matrix("similarity", "similarity_matrix", prepared.ms.entries()),
            matrix("hierarchy", "hierarchy_matrix", prepared.mh.entries()),
            matrix("representation", "representation", prepared.a0.values()),
        ],
        "tree": {
            "sha256": sha256_str(&tree_json),
            "topics": tree.len(),
            "depth": tree.depth(),
            "leaves": leaves,
        },
        "build": tree.stats,
        "timings": prepared.timings,
    });
    let text = serde_json::to_string_pretty(&provenance).expect("provenance serializes") + "\n";
    write_file(&output.join(PROVENANCE_FILE), &text)?;

    Ok(format!(
        "topics={} depth={} leaves={} tree_sha256={}",
        tree.len(),
        tree.depth(),
        leaves,
        sha256_str(&tree_json)
    ))
}

pub fn evaluate_cmd(model: &Path, cfg: &RunConfig) -> Result<String, Failure> {
    let tree_file = TreeFile::load(&model.join(TREE_FILE))?;
    let loaded = load_corpus(cfg.require_corpus()?, cfg)?;
    let vocab = loaded.corpus.vocab();
    let mut tree = tree_file.to_tree(vocab)?;
    let full_weights = apply_factor_dumps(&mut tree, &model.join(FACTORS_DIR))?;
    if !full_weights {
        log::info!("no factor files found; using the term weights stored in {TREE_FILE}");
    }
    let tf = build_tf(&loaded.corpus);
    let report = evaluate(&tree, &tf, vocab)?;

    let output = cfg.output.as_deref().unwrap_or(model);
    create_dir(output)?;
    write_file(&output.join("report.json"), &report.to_json()?)?;
    write_file(&output.join("report.csv"), &report.to_csv()?)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    Ok(format!(
        "topics={} coherence={} hierarchical_coherence={} specialization={}",
        report.summary.topics,
        fmt(report.summary.mean_coherence),
        fmt(report.summary.mean_hierarchical_coherence),
        fmt(report.summary.mean_specialization)
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Json,
    Dot,
}

pub fn export_cmd(
    model: &Path,
    format: ExportFormat,
    top_k: Option<usize>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let tree = TreeFile::load(&model.join(TREE_FILE))?;
    let text = match format {
        ExportFormat::Json => match top_k {
            Some(k) => truncate_terms(&tree, k).to_json()?,
            None => tree.to_json()?,
        },
        ExportFormat::Dot => to_dot(&tree, top_k.unwrap_or(10)),
    };
    match output {
        Some(path) => write_file(path, &text),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::input(format!("stdout: {e}"))),
    }
}
