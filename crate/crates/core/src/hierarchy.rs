//! Topic-tree construction by recursive factorization.
//!
//! Every node factorizes its document representation into `N` topics and
//! sends each document to its strongest topic. A child's representation is
//! rebuilt from the root rows of its documents, with every column scaled by
//! the parent topic's weights spread through the term hierarchy matrix:
//!
//! ```text
//! m_t   = h_t x M_H               (1 x m)
//! A_t   = A_0[docs(t)] ⊙ m_t      (row-wise broadcast)
//! ```
//!
//! Recursion stops below `min_docs` documents or past `max_depth` levels.
//! Traversal is depth-first, so at most one representation per level is
//! alive at a time.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DocTermRepresentation;
use crate::error::{Error, Result};
use crate::hypspace::{Space, TermHierarchyMatrix};
use crate::nmf::{self, NmfConfig, NmfInit};

/// How a parent topic reweights its children's representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReweightMode {
    /// `m_t = h_t x M_H`.
    #[default]
    Hierarchy,
    /// `m_t = h_t`, as if `M_H` were the identity.
    TopicOnly,
    /// `m_t = 1`: plain recursive NMF on root rows.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Topics per factorization.
    pub n_topics: usize,
    pub max_depth: usize,
    /// Nodes with fewer documents are not expanded.
    pub min_docs: usize,
    pub alpha: f64,
    pub k_s: usize,
    pub k_h: usize,
    pub seed: u64,
    pub space: Space,
    pub max_iter: usize,
    pub tol: f64,
    pub init: NmfInit,
    /// Ranked terms kept per node.
    pub top_terms: usize,
    pub reweight: ReweightMode,
    /// Build sibling subtrees concurrently. Gives the same tree, but more
    /// representations are alive at once. Not written to tree files.
    #[serde(skip_serializing)]
    pub parallel_siblings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_topics: 10,
            max_depth: 3,
            min_docs: 50,
            alpha: 0.1,
            k_s: 500,
            k_h: 500,
            seed: 42,
            space: Space::Hyperbolic,
            max_iter: 300,
            tol: 1e-5,
            init: NmfInit::RandomUniform,
            top_terms: 20,
            reweight: ReweightMode::Hierarchy,
            parallel_siblings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 2 {
            return Err(Error::Config("n_topics must be at least 2".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.min_docs < self.n_topics {
            return Err(Error::Config(format!(
                "min_docs ({}) must be at least n_topics ({})",
                self.min_docs, self.n_topics
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.k_s < 1 || self.k_h < 1 {
            return Err(Error::Config("k_s and k_h must be at least 1".into()));
        }
        if self.top_terms < 1 {
            return Err(Error::Config("top_terms must be at least 1".into()));
        }
        self.nmf_config(self.seed).validate()
    }

    fn nmf_config(&self, seed: u64) -> NmfConfig {
        NmfConfig {
            n_topics: self.n_topics,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicNode {
    /// Topic indices from the top level down to this node.
    pub path: Vec<usize>,
    pub level: usize,
    pub topic_index: usize,
    /// The node's row of its factorization's topic-term matrix.
    pub term_weights: Vec<f64>,
    /// Term indices by descending weight, index tie-break.
    pub top_terms: Vec<usize>,
    pub doc_ids: Vec<String>,
    pub children: Vec<TopicNode>,
}

impl TopicNode {
    /// Dotted path such as `0.3.1`.
    pub fn id(&self) -> String {
        path_id(&self.path)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// This node and all descendants, depth first.
    pub fn walk(&self) -> Vec<&TopicNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }
}

pub fn path_id(path: &[usize]) -> String {
    path.iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(".")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Highest number of document representations alive at once,
    /// the root representation included.
    pub peak_live_representations: usize,
    pub factorizations: usize,
    /// Root rows that were all zero and never entered the tree.
    pub empty_root_rows: usize,
    /// Documents dropped because their row of `W` was all zero.
    pub unassigned_documents: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicTree {
    pub roots: Vec<TopicNode>,
    pub config: TrainConfig,
    pub stats: BuildStats,
}

impl TopicTree {
    /// All nodes, depth first.
    pub fn nodes(&self) -> Vec<&TopicNode> {
        self.roots.iter().flat_map(|r| r.walk()).collect()
    }

    pub fn nodes_at_level(&self, level: usize) -> Vec<&TopicNode> {
        self.nodes()
            .into_iter()
            .filter(|n| n.level == level)
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes().iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.nodes().len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Row partition produced by [`assign_documents`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Row indices per topic, ascending.
    pub cells: Vec<Vec<usize>>,
    /// Rows of `W` that are entirely zero.
    pub unassigned: Vec<usize>,
}

/// Hard assignment of each row to its argmax topic, lowest index on ties.
pub fn assign_documents(w: &Array2<f64>) -> Assignment {
    let mut cells = vec![Vec::new(); w.ncols()];
    let mut unassigned = Vec::new();
    for (i, row) in w.outer_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (t, &v) in row.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        match best {
            Some((t, _)) => cells[t].push(i),
            None => unassigned.push(i),
        }
    }
    if !unassigned.is_empty() {
        log::debug!("{} documents have an all-zero topic row", unassigned.len());
    }
    Assignment { cells, unassigned }
}

/// `m_t[j] = sum_w H[i][w] * M_H[w][j]`.
pub fn parent_child_reweight(
    h: &Array2<f64>,
    topic: usize,
    mh: &TermHierarchyMatrix,
) -> Result<Vec<f64>> {
    if topic >= h.nrows() {
        return Err(Error::Shape(format!(
            "topic {topic} out of range for {} topics",
            h.nrows()
        )));
    }
    if h.ncols() != mh.dim() {
        return Err(Error::Shape(format!(
            "topic-term matrix has {} columns, hierarchy matrix is {1}x{1}",
            h.ncols(),
            mh.dim()
        )));
    }
    let mut out = vec![0.0; mh.dim()];
    for (w, &hw) in h.row(topic).iter().enumerate() {
        if hw == 0.0 {
            continue;
        }
        for (j, &v) in mh.entries().outer_view(w).unwrap().iter() {
            out[j] += hw * v;
        }
    }
    Ok(out)
}

/// Scales every column of `a_parent` by `m_t`.
pub fn next_level_representation(
    a_parent: &DocTermRepresentation,
    m_t: &[f64],
) -> Result<DocTermRepresentation> {
    let rows: Vec<usize> = (0..a_parent.n_docs()).collect();
    a_parent.select_rows(&rows, Some(m_t))
}

/// Indices of the `n` largest positive weights, descending, lower index
/// first on ties.
pub fn top_terms(weights: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let by_weight = |a: &usize, b: &usize| weights[*b].total_cmp(&weights[*a]).then(a.cmp(b));
    let n = n.min(idx.len());
    if n == 0 {
        return Vec::new();
    }
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, by_weight);
        idx.truncate(n);
    }
    idx.sort_unstable_by(by_weight);
    idx
}

/// Top `n` terms of topic `i` of a topic-term matrix.
pub fn top_words(h: &Array2<f64>, i: usize, n: usize) -> Vec<usize> {
    top_terms(h.row(i).as_slice().expect("standard layout"), n)
}

/// Counts representations currently alive and the peak.
#[derive(Debug, Default)]
pub struct LiveCounter {
    current: AtomicUsize,
    peak: AtomicUsize,
}

pub struct LiveGuard<'a>(&'a LiveCounter);

impl LiveCounter {
    pub fn enter(&self) -> LiveGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        LiveGuard(self)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }
}

impl Drop for LiveGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the factorization run at `path`; depends only on the base seed
/// and the path, never on traversal order.
pub fn node_seed(base: u64, path: &[usize]) -> u64 {
    path.iter()
        .fold(base, |s, &p| splitmix64(s ^ (p as u64).wrapping_add(1)))
}

struct Builder<'a> {
    a0: &'a DocTermRepresentation,
    mh: &'a TermHierarchyMatrix,
    config: &'a TrainConfig,
    live: LiveCounter,
    factorizations: AtomicUsize,
    unassigned: AtomicUsize,
    diagnostics: Mutex<Vec<String>>,
}

impl Builder<'_> {
    fn note(&self, msg: String) {
        log::debug!("{msg}");
        self.diagnostics.lock().unwrap().push(msg);
    }

    /// Factorizes `a` (rows are `doc_rows` of A_0) into the topics at
    /// `level`, then expands every topic with enough documents.
    fn grow(
        &self,
        a: &DocTermRepresentation,
        doc_rows: &[usize],
        level: usize,
        path: &[usize],
    ) -> Result<Vec<TopicNode>> {
        let cfg = self.config;
        let nmf_cfg = cfg.nmf_config(node_seed(cfg.seed, path));
        let (factors, trace) = nmf::factorize_traced(a.values(), &nmf_cfg)?;
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        if !trace.converged {
            self.note(format!(
                "factorization at {:?} stopped after {} iterations without converging",
                path_id(path),
                trace.iterations
            ));
        }
        let assignment = assign_documents(&factors.w);
        if !assignment.unassigned.is_empty() {
            self.unassigned
                .fetch_add(assignment.unassigned.len(), Ordering::Relaxed);
        }

        let mut nodes = Vec::with_capacity(cfg.n_topics);
        let mut pending = Vec::new();
        for (i, cell) in assignment.cells.iter().enumerate() {
            let weights = factors.h.row(i).to_vec();
            let docs: Vec<usize> = cell.iter().map(|&r| doc_rows[r]).collect();
            let mut node_path = path.to_vec();
            node_path.push(i);
            let node = TopicNode {
                top_terms: top_terms(&weights, cfg.top_terms),
                path: node_path,
                level,
                topic_index: i,
                term_weights: weights,
                doc_ids: docs.iter().map(|&d| self.a0.doc_ids()[d].clone()).collect(),
                children: Vec::new(),
            };
            if level < cfg.max_depth && docs.len() >= cfg.min_docs {
                pending.push((nodes.len(), docs));
            }
            nodes.push(node);
        }

        let expand = |(slot, docs): (usize, Vec<usize>)| -> Result<(usize, Vec<TopicNode>)> {
            let id = path_id(&nodes[slot].path);
            let m_t = match cfg.reweight {
                ReweightMode::Hierarchy => parent_child_reweight(&factors.h, slot, self.mh)?,
                ReweightMode::TopicOnly => factors.h.row(slot).to_vec(),
                ReweightMode::Disabled => vec![1.0; self.a0.n_terms()],
            };
            if m_t.iter().all(|&x| x == 0.0) {
                self.note(format!(
                    "topic {id} has an all-zero reweighting; kept as a leaf"
                ));
                return Ok((slot, Vec::new()));
            }
            let _alive = self.live.enter();
            let child = self.a0.select_rows(&docs, Some(&m_t))?;
            let usable = child.nonzero_rows().len();
            if usable < cfg.min_docs {
                self.note(format!(
                    "topic {id}: {usable} of {} documents keep nonzero weight, below min_docs",
                    docs.len()
                ));
                return Ok((slot, Vec::new()));
            }
            let children = self.grow(&child, &docs, level + 1, &nodes[slot].path)?;
            Ok((slot, children))
        };

        let built: Vec<(usize, Vec<TopicNode>)> = if cfg.parallel_siblings {
            pending.into_par_iter().map(expand).collect::<Result<_>>()?
        } else {
            pending.into_iter().map(expand).collect::<Result<_>>()?
        };
        for (slot, children) in built {
            nodes[slot].children = children;
        }
        Ok(nodes)
    }
}

/// Builds the topic tree rooted at the full representation `a0`.
pub fn build_hierarchy(
    a0: &DocTermRepresentation,
    mh: &TermHierarchyMatrix,
    config: &TrainConfig,
) -> Result<TopicTree> {
    config.validate()?;
    if mh.dim() != a0.n_terms() {
        return Err(Error::Shape(format!(
            "representation has {} terms but the hierarchy matrix is {1}x{1}",
            a0.n_terms(),
            mh.dim()
        )));
    }
    let builder = Builder {
        a0,
        mh,
        config,
        live: LiveCounter::default(),
        factorizations: AtomicUsize::new(0),
        unassigned: AtomicUsize::new(0),
        diagnostics: Mutex::new(Vec::new()),
    };
    let _root = builder.live.enter();

    let all_rows: Vec<usize> = (0..a0.n_docs()).collect();
    let usable = a0.nonzero_rows().len();
    let empty_root_rows = a0.n_docs() - usable;
    let roots = if usable < config.min_docs {
        builder.note(format!(
            "only {usable} documents have a nonzero representation; min_docs is {}",
            config.min_docs
        ));
        Vec::new()
    } else {
        builder.grow(a0, &all_rows, 1, &[])?
    };

    let mut diagnostics = builder.diagnostics.into_inner().unwrap();
    diagnostics.sort();
    // zero root rows never reach a W row with mass, so they show up as
    // unassigned at the top level too
    let unassigned = builder.unassigned.load(Ordering::Relaxed);
    Ok(TopicTree {
        roots,
        config: config.clone(),
        stats: BuildStats {
            peak_live_representations: builder.live.peak(),
            factorizations: builder.factorizations.load(Ordering::Relaxed),
            empty_root_rows,
            unassigned_documents: unassigned,
            diagnostics,
        },
    })
}
