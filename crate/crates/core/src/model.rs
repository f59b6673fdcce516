//! On-disk form of a trained tree.
//!
//! `tree.json` lists nodes in depth-first preorder with their ranked terms
//! and documents. Full topic-term rows are kept separately, one file per
//! factorization, as `factors/level<k>-node<parent>.bin`: a `u32` row count,
//! a `u32` column count, then the row-major `f64` matrix, all little endian.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::hierarchy::{path_id, top_terms, BuildStats, TopicNode, TopicTree, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub level: usize,
    pub top_terms: Vec<TermWeight>,
    pub doc_ids: Vec<String>,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(default)]
    pub config: TrainConfig,
    pub nodes: Vec<NodeRecord>,
}

impl TreeFile {
    /// Flattens `tree`, keeping at most `top_k` terms per node (all ranked
    /// terms when `None`).
    pub fn from_tree(tree: &TopicTree, vocab: &Vocabulary, top_k: Option<usize>) -> Result<Self> {
        let mut nodes = Vec::new();
        for node in tree.nodes() {
            if node.term_weights.len() != vocab.len() {
                return Err(Error::Contract(format!(
                    "node {} has {} term weights for a vocabulary of {}",
                    node.id(),
                    node.term_weights.len(),
                    vocab.len()
                )));
            }
            let keep = top_k
                .unwrap_or(node.top_terms.len())
                .min(node.top_terms.len());
            nodes.push(NodeRecord {
                id: node.id(),
                level: node.level,
                top_terms: node.top_terms[..keep]
                    .iter()
                    .map(|&t| TermWeight {
                        term: vocab.term(t).to_string(),
                        weight: node.term_weights[t],
                    })
                    .collect(),
                doc_ids: node.doc_ids.clone(),
                children: node.children.iter().map(|c| c.id()).collect(),
            });
        }
        Ok(TreeFile {
            config: tree.config.clone(),
            nodes,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Codec(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Codec(format!("tree file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the tree against `vocab`. Term weights outside the stored
    /// top terms are zero until factor dumps are applied.
    pub fn to_tree(&self, vocab: &Vocabulary) -> Result<TopicTree> {
        let by_id: HashMap<&str, &NodeRecord> =
            self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        if by_id.len() != self.nodes.len() {
            return Err(Error::Codec("tree file repeats a node id".into()));
        }
        let roots: Vec<&NodeRecord> = self.nodes.iter().filter(|n| n.level == 1).collect();
        let mut seen = 0usize;
        let roots = roots
            .into_iter()
            .map(|r| build_node(r, &by_id, vocab, 1, &mut seen))
            .collect::<Result<Vec<_>>>()?;
        if seen != self.nodes.len() {
            return Err(Error::Codec(format!(
                "tree file has {} nodes but only {seen} are reachable from level 1",
                self.nodes.len()
            )));
        }
        Ok(TopicTree {
            roots,
            config: self.config.clone(),
            stats: BuildStats::default(),
        })
    }
}

fn parse_path(id: &str) -> Result<Vec<usize>> {
    id.split('.')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Codec(format!("malformed node id {id:?}")))
        })
        .collect()
}

fn build_node(
    rec: &NodeRecord,
    by_id: &HashMap<&str, &NodeRecord>,
    vocab: &Vocabulary,
    level: usize,
    seen: &mut usize,
) -> Result<TopicNode> {
    let path = parse_path(&rec.id)?;
    if rec.level != level || path.len() != level {
        return Err(Error::Codec(format!(
            "node {} claims level {} at depth {level}",
            rec.id, rec.level
        )));
    }
    *seen += 1;
    let mut weights = vec![0.0; vocab.len()];
    let mut ranked = Vec::with_capacity(rec.top_terms.len());
    for tw in &rec.top_terms {
        let t = vocab.get(&tw.term).ok_or_else(|| {
            Error::Contract(format!(
                "term {:?} of node {} is not in the vocabulary",
                tw.term, rec.id
            ))
        })?;
        weights[t] = tw.weight;
        ranked.push(t);
    }
    let children = rec
        .children
        .iter()
        .map(|c| {
            let child = by_id
                .get(c.as_str())
                .ok_or_else(|| Error::Codec(format!("node {} lists unknown child {c}", rec.id)))?;
            if !c.starts_with(&format!("{}.", rec.id)) {
                return Err(Error::Codec(format!(
                    "node {c} is not a child of {}",
                    rec.id
                )));
            }
            build_node(child, by_id, vocab, level + 1, seen)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TopicNode {
        topic_index: *path.last().unwrap(),
        path,
        level,
        term_weights: weights,
        top_terms: ranked,
        doc_ids: rec.doc_ids.clone(),
        children,
    })
}

/// `level<k>-node<parent>.bin`, with `root` for the top factorization.
pub fn factor_file_name(level: usize, parent: &[usize]) -> String {
    let parent = if parent.is_empty() {
        "root".to_string()
    } else {
        path_id(parent)
    };
    format!("level{level}-node{parent}.bin")
}

pub fn write_dense<W: Write>(mut out: W, m: &Array2<f64>) -> std::io::Result<()> {
    out.write_u32::<LittleEndian>(m.nrows() as u32)?;
    out.write_u32::<LittleEndian>(m.ncols() as u32)?;
    for &v in m.iter() {
        out.write_f64::<LittleEndian>(v)?;
    }
    out.flush()
}

pub fn read_dense<R: Read>(mut input: R) -> Result<Array2<f64>> {
    let codec = |e: std::io::Error| Error::Codec(format!("factor file: {e}"));
    let rows = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
    let cols = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
    let mut data = vec![0.0; rows * cols];
    input
        .read_f64_into::<LittleEndian>(&mut data)
        .map_err(codec)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(codec)? != 0 {
        return Err(Error::Codec("factor file has trailing bytes".into()));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
}

/// Groups sibling nodes back into the topic-term matrix they came from.
fn factorizations(tree: &TopicTree) -> Vec<(usize, Vec<usize>, Vec<&TopicNode>)> {
    let mut out = Vec::new();
    if !tree.roots.is_empty() {
        out.push((1, Vec::new(), tree.roots.iter().collect()));
    }
    for node in tree.nodes() {
        if !node.children.is_empty() {
            out.push((
                node.level + 1,
                node.path.clone(),
                node.children.iter().collect(),
            ));
        }
    }
    out
}

/// Writes one topic-term matrix per factorization into `dir`.
pub fn write_factor_dumps(tree: &TopicTree, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (level, parent, siblings) in factorizations(tree) {
        let cols = siblings[0].term_weights.len();
        let mut h = Array2::zeros((siblings.len(), cols));
        for (i, s) in siblings.iter().enumerate() {
            h.row_mut(i)
                .assign(&ndarray::ArrayView1::from(&s.term_weights));
        }
        let path = dir.join(factor_file_name(level, &parent));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_dense(BufWriter::new(file), &h).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Restores full term weights (and top terms ranked from them) from the
/// dumps in `dir`. Returns false, leaving the tree untouched, when any
/// dump is missing.
pub fn apply_factor_dumps(tree: &mut TopicTree, dir: &Path) -> Result<bool> {
    let mut loaded = Vec::new();
    for (level, parent, siblings) in factorizations(tree) {
        let path = dir.join(factor_file_name(level, &parent));
        if !path.exists() {
            return Ok(false);
        }
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let h = read_dense(BufReader::new(file))?;
        let cols = siblings[0].term_weights.len();
        if h.ncols() != cols || h.nrows() <= siblings.iter().map(|s| s.topic_index).max().unwrap() {
            return Err(Error::Contract(format!(
                "{} is {}x{}, which does not fit the tree",
                path.display(),
                h.nrows(),
                h.ncols()
            )));
        }
        let ids: Vec<Vec<usize>> = siblings.iter().map(|s| s.path.clone()).collect();
        loaded.push((ids, h));
    }
    let keep = tree.config.top_terms;
    let mut rows: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    for (ids, h) in loaded {
        for id in ids {
            rows.insert(id.clone(), h.row(*id.last().unwrap()).to_vec());
        }
    }
    fn fill(node: &mut TopicNode, rows: &mut HashMap<Vec<usize>, Vec<f64>>, keep: usize) {
        if let Some(w) = rows.remove(&node.path) {
            node.top_terms = top_terms(&w, keep.max(node.top_terms.len()));
            node.term_weights = w;
        }
        for c in &mut node.children {
            fill(c, rows, keep);
        }
    }
    for r in &mut tree.roots {
        fill(r, &mut rows, keep);
    }
    Ok(true)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering with the first `top_k` terms of each node.
pub fn to_dot(tree: &TreeFile, top_k: usize) -> String {
    let mut out = String::from("digraph topics {\n  node [shape=box];\n");
    for n in &tree.nodes {
        let terms: Vec<&str> = n
            .top_terms
            .iter()
            .take(top_k)
            .map(|t| t.term.as_str())
            .collect();
        let label = format!(
            "{}\\n{}\\n{} docs",
            dot_escape(&n.id),
            dot_escape(&terms.join(" ")),
            n.doc_ids.len()
        );
        let _ = writeln!(out, "  \"{}\" [label=\"{label}\"];", dot_escape(&n.id));
    }
    for n in &tree.nodes {
        for c in &n.children {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", n.id, c);
        }
    }
    out.push_str("}\n");
    out
}

/// `tree` with every node's term list cut to `top_k`.
pub fn truncate_terms(tree: &TreeFile, top_k: usize) -> TreeFile {
    let mut t = tree.clone();
    for n in &mut t.nodes {
        n.top_terms.truncate(top_k);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (TopicTree, Vocabulary) {
        let vocab = Vocabulary::new(["apple", "banana", "cherry"]).unwrap();
        let leaf = |path: Vec<usize>, w: Vec<f64>, docs: &[&str]| TopicNode {
            top_terms: top_terms(&w, 2),
            level: path.len(),
            topic_index: *path.last().unwrap(),
            path,
            term_weights: w,
            doc_ids: docs.iter().map(|s| s.to_string()).collect(),
            children: vec![],
        };
        let mut root0 = leaf(vec![0], vec![0.9, 0.1, 0.0], &["a", "b"]);
        root0.children = vec![
            leaf(vec![0, 0], vec![0.5, 0.0, 0.2], &["a"]),
            leaf(vec![0, 1], vec![0.0, 0.7, 0.3], &["b"]),
        ];
        let root1 = leaf(vec![1], vec![0.0, 0.2, 0.8], &["c"]);
        let config = TrainConfig {
            n_topics: 2,
            min_docs: 2,
            top_terms: 2,
            ..TrainConfig::default()
        };
        (
            TopicTree {
                roots: vec![root0, root1],
                config,
                stats: BuildStats::default(),
            },
            vocab,
        )
    }

    #[test]
    fn json_round_trip() {
        let (tree, vocab) = sample();
        let file = TreeFile::from_tree(&tree, &vocab, None).unwrap();
        let ids: Vec<_> = file.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["0", "0.0", "0.1", "1"]);
        assert_eq!(file.nodes[0].children, ["0.0", "0.1"]);
        assert_eq!(file.nodes[0].top_terms[0].term, "apple");

        let text = file.to_json().unwrap();
        let back = TreeFile::from_json(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_json().unwrap(), text);

        let rebuilt = back.to_tree(&vocab).unwrap();
        assert_eq!(rebuilt.len(), 4);
        assert_eq!(rebuilt.roots[0].children[1].top_terms, vec![1, 2]);
        assert_eq!(rebuilt.roots[0].term_weights, vec![0.9, 0.1, 0.0]);
    }

    #[test]
    fn unknown_terms_and_bad_files_are_rejected() {
        let (tree, vocab) = sample();
        let file = TreeFile::from_tree(&tree, &vocab, None).unwrap();
        let other = Vocabulary::new(["apple", "banana"]).unwrap();
        assert!(matches!(file.to_tree(&other), Err(Error::Contract(_))));
        assert!(matches!(
            TreeFile::from_json("{not json"),
            Err(Error::Codec(_))
        ));
        let mut broken = file.clone();
        broken.nodes[0].children.push("0.7".into());
        assert!(matches!(broken.to_tree(&vocab), Err(Error::Codec(_))));
        assert!(TreeFile::from_tree(&tree, &other, None).is_err());
    }

    #[test]
    fn factor_dumps_restore_weights() {
        let (tree, vocab) = sample();
        let dir = tempfile::tempdir().unwrap();
        let written = write_factor_dumps(&tree, dir.path()).unwrap();
        let names: Vec<_> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["level1-noderoot.bin", "level2-node0.bin"]);

        let bytes = fs::read(&written[1]).unwrap();
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 8 + 6 * 8);

        let file = TreeFile::from_tree(&tree, &vocab, Some(1)).unwrap();
        let mut rebuilt = file.to_tree(&vocab).unwrap();
        assert_eq!(rebuilt.roots[1].term_weights, vec![0.0, 0.0, 0.8]);
        assert!(apply_factor_dumps(&mut rebuilt, dir.path()).unwrap());
        assert_eq!(rebuilt.roots[1].term_weights, vec![0.0, 0.2, 0.8]);
        assert_eq!(rebuilt.roots[0].children[0].top_terms, vec![0, 2]);

        let empty = tempfile::tempdir().unwrap();
        let mut again = file.to_tree(&vocab).unwrap();
        assert!(!apply_factor_dumps(&mut again, empty.path()).unwrap());
    }

    #[test]
    fn dense_codec_rejects_truncation() {
        let m = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut buf = Vec::new();
        write_dense(&mut buf, &m).unwrap();
        assert_eq!(read_dense(&buf[..]).unwrap(), m);
        assert!(read_dense(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_dense(&long[..]).is_err());
    }

    #[test]
    fn dot_output() {
        let (tree, vocab) = sample();
        let file = TreeFile::from_tree(&tree, &vocab, None).unwrap();
        let dot = to_dot(&file, 1);
        assert!(dot.starts_with("digraph topics {"));
        assert!(dot.contains("\"0\" -> \"0.1\";"));
        assert!(dot.contains("label=\"0.1\\nbanana\\n1 docs\""));
        assert_eq!(truncate_terms(&file, 1).nodes[0].top_terms.len(), 1);
    }
}
