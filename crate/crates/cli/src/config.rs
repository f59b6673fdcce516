//! Run configuration: a flat JSON file whose keys can each be overridden by
//! the command-line flag of the same name.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hyptopic::corpus::PreprocessConfig;
use hyptopic::hierarchy::{ReweightMode, TrainConfig};
use hyptopic::hypspace::Space;
use hyptopic::nmf::NmfInit;

use crate::failure::Failure;

/// Environment variable that overrides the configured cache directory.
pub const CACHE_ENV: &str = "HYHTM_CACHE_DIR";

fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unrecognized value {s:?}"))
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Raw corpus (JSONL or one document per line), or a preprocessed
    /// corpus.bin / the directory holding it.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Word vectors in text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// hyperbolic or euclidean.
    #[arg(long, value_parser = enum_arg::<Space>)]
    pub space: Option<Space>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "k-s", visible_alias = "k_s")]
    pub k_s: Option<usize>,
    #[arg(long = "k-h", visible_alias = "k_h")]
    pub k_h: Option<usize>,
    #[arg(long = "n-topics", visible_alias = "n_topics")]
    pub n_topics: Option<usize>,
    #[arg(long = "max-depth", visible_alias = "max_depth")]
    pub max_depth: Option<usize>,
    #[arg(long = "min-docs", visible_alias = "min_docs")]
    pub min_docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long = "cache-dir", visible_alias = "cache_dir")]
    pub cache_dir: Option<PathBuf>,

    #[arg(long = "max-iter", visible_alias = "max_iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// random-uniform or nndsvd.
    #[arg(long = "nmf-init", visible_alias = "nmf_init", value_parser = enum_arg::<NmfInit>)]
    pub nmf_init: Option<NmfInit>,
    /// Ranked terms stored per topic.
    #[arg(long = "top-terms", visible_alias = "top_terms")]
    pub top_terms: Option<usize>,
    /// hierarchy, topic-only or disabled.
    #[arg(long, value_parser = enum_arg::<ReweightMode>)]
    pub reweight: Option<ReweightMode>,
    #[arg(long = "parallel-siblings", visible_alias = "parallel_siblings", num_args = 0..=1, default_missing_value = "true")]
    pub parallel_siblings: Option<bool>,

    #[arg(long = "min-doc-freq", visible_alias = "min_doc_freq")]
    pub min_doc_freq: Option<usize>,
    #[arg(long = "min-token-length", visible_alias = "min_token_length")]
    pub min_token_length: Option<usize>,
    /// Extra stopword files, one word per line.
    #[arg(long = "stopwords", num_args = 1..)]
    pub stopwords: Option<Vec<PathBuf>>,
    #[arg(long = "bundled-stopwords", visible_alias = "bundled_stopwords", num_args = 0..=1, default_missing_value = "true")]
    pub bundled_stopwords: Option<bool>,
    #[arg(long = "ratio-filter", visible_alias = "ratio_filter", num_args = 0..=1, default_missing_value = "true")]
    pub ratio_filter: Option<bool>,
    #[arg(long = "ratio-threshold", visible_alias = "ratio_threshold")]
    pub ratio_threshold: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stem: Option<bool>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, &e))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(&mut self, top: &RunConfig) {
        overlay!(self, top;
            corpus, embeddings, space, alpha, k_s, k_h, n_topics, max_depth, min_docs, seed,
            output, cache_dir, max_iter, tol, nmf_init, top_terms, reweight, parallel_siblings,
            min_doc_freq, min_token_length, stopwords, bundled_stopwords, ratio_filter,
            ratio_threshold, stem,
        );
    }

    /// File values under flag values.
    pub fn resolve(file: Option<&Path>, flags: &RunConfig) -> Result<Self, Failure> {
        let mut cfg = match file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.overlay(flags);
        Ok(cfg)
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig, Failure> {
        let d = PreprocessConfig::default();
        let cfg = PreprocessConfig {
            bundled_stopwords: self.bundled_stopwords.unwrap_or(d.bundled_stopwords),
            stopword_lists: self.stopwords.clone().unwrap_or(d.stopword_lists),
            min_doc_freq: self.min_doc_freq.unwrap_or(d.min_doc_freq),
            min_token_length: self.min_token_length.unwrap_or(d.min_token_length),
            ratio_filter_enabled: self.ratio_filter.unwrap_or(d.ratio_filter_enabled),
            ratio_threshold: self.ratio_threshold.unwrap_or(d.ratio_threshold),
            stem: self.stem.unwrap_or(d.stem),
        };
        cfg.validate().map_err(Failure::from)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            n_topics: self.n_topics.unwrap_or(d.n_topics),
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            min_docs: self.min_docs.unwrap_or(d.min_docs),
            alpha: self.alpha.unwrap_or(d.alpha),
            k_s: self.k_s.unwrap_or(d.k_s),
            k_h: self.k_h.unwrap_or(d.k_h),
            seed: self.seed.unwrap_or(d.seed),
            space: self.space.unwrap_or(d.space),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
            init: self.nmf_init.unwrap_or(d.init),
            top_terms: self.top_terms.unwrap_or(d.top_terms),
            reweight: self.reweight.unwrap_or(d.reweight),
            parallel_siblings: self.parallel_siblings.unwrap_or(d.parallel_siblings),
        };
        cfg.validate().map_err(Failure::from)?;
        Ok(cfg)
    }

    pub fn require_corpus(&self) -> Result<&Path, Failure> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Failure::input("--corpus is required"))
    }

    pub fn require_output(&self) -> Result<&Path, Failure> {
        self.output
            .as_deref()
            .ok_or_else(|| Failure::input("--output is required"))
    }

    /// Explicit flag, then the environment, then the config file, then
    /// `<output>/cache`.
    pub fn cache_location(&self, flags: &RunConfig, output: &Path) -> PathBuf {
        if let Some(dir) = &flags.cache_dir {
            return dir.clone();
        }
        if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(dir);
        }
        self.cache_dir
            .clone()
            .unwrap_or_else(|| output.join("cache"))
    }
}
